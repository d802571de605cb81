use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use bbseg::domain::{read_dataset, write_dataset, Dataset, DomainSpec, Role};
use bbseg::eval::{write_metrics_csv, EvalRecord};
use bbseg::pipeline::{
    calibrate, evaluate, load_checkpoint, run_ablation, run_experiment_with, ExperimentConfig, RunOptions, TeacherCache,
    Variant, THRESHOLDS_FILE,
};
use bbseg::teacher::serve_teacher;

#[derive(Parser)]
#[command(name = "bbseg", version, about = "Train a per-pixel segmenter from a black-box teacher's probabilities")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print a default experiment config as JSON.
    InitConfig {
        #[arg(long, default_value = "corte-full")]
        variant: Variant,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Write the source spec and the source/target dataset files of a config.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Serve the Bayes teacher of a source spec over TCP until killed.
    ServeTeacher {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        port: u16,
    },
    /// Compute per-class thresholds over the training scenes.
    Calibrate {
        #[arg(long)]
        config: PathBuf,
        /// Defaults to `<output_dir>/thresholds.json`, or stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one experiment.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop (and checkpoint) after this many steps.
        #[arg(long)]
        stop_after: Option<u64>,
    },
    /// Run several variants under shared seeds and print an mIoU table.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',')]
        variants: Vec<Variant>,
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
    },
    /// Score a checkpoint on a dataset file.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    ExperimentConfig::from_json(&text).with_context(|| format!("parsing {}", path.display()))
}

fn save_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_dataset(&mut out, ds)?;
    out.flush()?;
    Ok(())
}

fn gen_data(config: Option<PathBuf>, out_dir: &Path) -> Result<()> {
    let config = match config {
        Some(p) => load_config(&p)?,
        None => ExperimentConfig::benchmark(Variant::Full, 1),
    };
    fs::create_dir_all(out_dir)?;
    let d = &config.domain;
    fs::write(out_dir.join("source_spec.json"), serde_json::to_string_pretty(&d.source)?)?;
    let source = Dataset::generate(&d.source, Role::Source, d.train_samples, d.height, d.width)?;
    let (train, test) = d.datasets(config.seeds.data())?;
    for (name, ds) in [("source.bbd", &source), ("target-train.bbd", &train), ("target-test.bbd", &test)] {
        save_dataset(&out_dir.join(name), ds)?;
        println!("wrote {} ({} scenes)", out_dir.join(name).display(), ds.len());
    }
    Ok(())
}

fn serve(spec: &Path, port: u16) -> Result<()> {
    let spec: DomainSpec = serde_json::from_str(&fs::read_to_string(spec)?)?;
    let server = serve_teacher(spec, port)?;
    println!("teacher listening on {}", server.local_addr());
    server.wait();
    Ok(())
}

fn run_calibrate(config: &ExperimentConfig, out: Option<PathBuf>) -> Result<()> {
    let variant = if config.variant.needs_thresholds() { config.variant } else { Variant::R2cp };
    let (train, _) = config.domain.datasets(config.seeds.data())?;
    let mut teacher = config.teacher.open(&config.domain.source)?;
    let mut cache = TeacherCache::new();
    let thresholds = calibrate(variant, &config.hash(), &train.samples, teacher.as_mut(), &mut cache)?
        .expect("thresholding variant");
    let json = thresholds.to_json()?;
    match out.or_else(|| config.output_dir.as_ref().map(|d| d.join(THRESHOLDS_FILE))) {
        Some(path) => {
            if let Some(dir) = path.parent() {
                fs::create_dir_all(dir)?;
            }
            fs::write(&path, json)?;
            println!("wrote {}", path.display());
        }
        None => println!("{json}"),
    }
    Ok(())
}

fn train(config: &ExperimentConfig, resume: Option<PathBuf>, stop_after: Option<u64>) -> Result<()> {
    let options = RunOptions {
        stop_after,
        resume: resume.map(|p| load_checkpoint(&p)).transpose()?,
        ..RunOptions::default()
    };
    let record = run_experiment_with(config, options)?;
    let mut stdout = io::stdout().lock();
    write_metrics_csv(&mut stdout, record.params.arch.classes, &record.history)?;
    eprintln!(
        "{} steps of {} in {:.1}s (config {})",
        record.steps_taken, record.variant, record.wall_clock_secs, record.config_hash
    );
    if let Some(path) = &record.checkpoint_path {
        eprintln!("checkpoint: {}", path.display());
    }
    Ok(())
}

fn ablate(config: &ExperimentConfig, variants: &[Variant], seeds: &[u64]) -> Result<()> {
    if variants.is_empty() {
        bail!("--variants must name at least one variant");
    }
    let table = run_ablation(config, variants, seeds)?;
    print!("{table}");
    if let Some(dir) = &config.output_dir {
        fs::write(dir.join("ablation.csv"), table.to_csv())?;
    }
    Ok(())
}

fn eval(ckpt: &Path, data: &Path) -> Result<()> {
    let ckpt = load_checkpoint(ckpt)?;
    let ds = read_dataset(&mut BufReader::new(File::open(data)?))?;
    let report = evaluate(&ckpt.state.params, &ds.samples)?;
    let record = EvalRecord {
        step: ckpt.state.step,
        variant: ckpt.state.history.last().map_or("eval".into(), |r| r.variant.clone()),
        report,
    };
    write_metrics_csv(&mut io::stdout().lock(), ckpt.state.params.arch.classes, &[record])?;
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::InitConfig { variant, seed } => {
            println!("{}", ExperimentConfig::benchmark(variant, seed).to_json()?);
            Ok(())
        }
        Command::GenData { config, out_dir } => gen_data(config, &out_dir),
        Command::ServeTeacher { spec, port } => serve(&spec, port),
        Command::Calibrate { config, out } => run_calibrate(&load_config(&config)?, out),
        Command::Train {
            config,
            resume,
            stop_after,
        } => train(&load_config(&config)?, resume, stop_after),
        Command::Ablate {
            config,
            variants,
            seeds,
        } => ablate(&load_config(&config)?, &variants, &seeds),
        Command::Eval { ckpt, data } => eval(&ckpt, &data),
    }
}

//! Experiments: configuration, the training loop, checkpoints, artifacts,
//! and ablations over method variants.

mod ablation;
mod cache;
mod checkpoint;
mod config;
mod train;

pub use ablation::{run_ablation, AblationRow, AblationTable};
pub use cache::TeacherCache;
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint};
pub use config::{DomainConfig, ExperimentConfig, Hyperparams, Seeds, StudentShape, Variant};
pub use train::{calibrate, evaluate, TrainOutcome, TrainPlan, TrainState, Trainer};

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::eval::{write_metrics_csv, EvalRecord};
use crate::pseudolabel::ClassThresholds;
use crate::student::StudentParams;
use crate::teacher::Teacher;

pub const METRICS_FILE: &str = "metrics.csv";
pub const MIOU_FILE: &str = "miou_vs_step.csv";
pub const THRESHOLDS_FILE: &str = "thresholds.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
pub const RECORD_FILE: &str = "run.json";

/// Knobs that affect how a run executes but not what it computes.
pub struct RunOptions {
    /// Stop once this many steps have been taken (a checkpoint is written).
    pub stop_after: Option<u64>,
    pub resume: Option<Checkpoint>,
    /// Query the teacher once per scene (`true`) or on every visit.
    pub cache_teacher: bool,
    /// Use this teacher instead of opening the configured endpoint.
    pub teacher: Option<Box<dyn Teacher>>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            stop_after: None,
            resume: None,
            cache_teacher: true,
            teacher: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct SeedLog {
    pub global: u64,
    pub data: u64,
    pub init: u64,
    pub augment: u64,
    pub batching: u64,
}

impl From<Seeds> for SeedLog {
    fn from(s: Seeds) -> Self {
        Self {
            global: s.global,
            data: s.data(),
            init: s.init(),
            augment: s.augment(),
            batching: s.batching(),
        }
    }
}

/// Summary of one run. `history` and `losses` only ever grow.
#[derive(Clone, Debug, Serialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub variant: Variant,
    pub seeds: SeedLog,
    pub history: Vec<EvalRecord>,
    pub losses: Vec<f64>,
    pub steps_taken: u64,
    pub completed: bool,
    pub wall_clock_secs: f64,
    pub teacher_queries: u64,
    pub cache_hits: u64,
    pub thresholds: Option<ClassThresholds>,
    pub checkpoint_path: Option<PathBuf>,
    #[serde(skip)]
    pub params: StudentParams,
}

impl RunRecord {
    /// mIoU of the last evaluation.
    pub fn final_miou(&self) -> Option<f64> {
        self.history.last().map(|r| r.report.miou)
    }
}

/// Generates the data, trains, evaluates and writes artifacts to
/// `config.output_dir` when set.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunRecord> {
    run_experiment_with(config, RunOptions::default())
}

pub fn run_experiment_with(config: &ExperimentConfig, options: RunOptions) -> Result<RunRecord> {
    config.validate()?;
    let started = Instant::now();
    let plan = config.plan()?;
    let (train_set, test_set) = config.domain.datasets(plan.seeds.data())?;
    let mut teacher = match options.teacher {
        Some(t) => t,
        None => config.teacher.open(&config.domain.source)?,
    };
    let mut cache = if options.cache_teacher { TeacherCache::new() } else { TeacherCache::disabled() };
    let out_dir = config.output_dir.as_deref();
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
    }

    let mut trainer = Trainer {
        plan: &plan,
        train: &train_set.samples,
        test: &test_set.samples,
        teacher: teacher.as_mut(),
        cache: &mut cache,
    };
    let state = match options.resume {
        Some(ckpt) => {
            if ckpt.config_hash != plan.config_hash {
                return Err(Error::Config(format!(
                    "checkpoint belongs to config {}, not {}",
                    ckpt.config_hash, plan.config_hash
                )));
            }
            ckpt.state
        }
        None => TrainState::fresh(&plan, trainer.architecture()?)?,
    };
    let mut save_failure = |s: &TrainState| {
        if let Some(dir) = out_dir {
            let ckpt = Checkpoint {
                config_hash: plan.config_hash.clone(),
                state: s.clone(),
            };
            // The training error is what gets reported; a failed save is secondary.
            let _ = save_checkpoint(&dir.join(CHECKPOINT_FILE), &ckpt);
        }
    };
    let outcome = trainer.run(state, options.stop_after, &mut save_failure)?;

    let state = outcome.state;
    let mut record = RunRecord {
        config_hash: plan.config_hash.clone(),
        variant: plan.variant,
        seeds: plan.seeds.into(),
        history: state.history.clone(),
        losses: state.losses.clone(),
        steps_taken: state.step,
        completed: state.step == plan.hyper.total_steps,
        wall_clock_secs: 0.0,
        teacher_queries: cache.misses(),
        cache_hits: cache.hits(),
        thresholds: outcome.thresholds,
        checkpoint_path: None,
        params: state.params.clone(),
    };
    if let Some(dir) = out_dir {
        let path = dir.join(CHECKPOINT_FILE);
        save_checkpoint(
            &path,
            &Checkpoint {
                config_hash: plan.config_hash.clone(),
                state,
            },
        )?;
        record.checkpoint_path = Some(path);
    }
    record.wall_clock_secs = started.elapsed().as_secs_f64();
    if let Some(dir) = out_dir {
        write_artifacts(dir, &record)?;
    }
    Ok(record)
}

fn write_artifacts(dir: &Path, record: &RunRecord) -> Result<()> {
    let classes = record.params.arch.classes;
    let mut metrics = Vec::new();
    write_metrics_csv(&mut metrics, classes, &record.history)?;
    fs::write(dir.join(METRICS_FILE), metrics)?;

    let mut curve = String::from("step,variant,miou\n");
    for r in &record.history {
        curve.push_str(&format!("{},{},{:.6}\n", r.step, r.variant, r.report.miou));
    }
    fs::write(dir.join(MIOU_FILE), curve)?;

    if let Some(t) = &record.thresholds {
        fs::write(dir.join(THRESHOLDS_FILE), t.to_json()?)?;
    }
    fs::write(dir.join(RECORD_FILE), serde_json::to_string_pretty(record)?)?;
    Ok(())
}

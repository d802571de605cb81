use std::fmt;

use super::{run_experiment, ExperimentConfig, Variant};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    /// Final mIoU per seed, in the table's seed order.
    pub miou: Vec<f64>,
}

impl AblationRow {
    pub fn mean(&self) -> f64 {
        self.miou.iter().sum::<f64>() / self.miou.len() as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationTable {
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, variant: Variant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    /// `variant,seed_<s>…,mean` with mIoU in percent.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant");
        for s in &self.seeds {
            out.push_str(&format!(",seed_{s}"));
        }
        out.push_str(",mean\n");
        for r in &self.rows {
            out.push_str(r.variant.as_str());
            for m in &r.miou {
                out.push_str(&format!(",{:.6}", 100.0 * m));
            }
            out.push_str(&format!(",{:.6}\n", 100.0 * r.mean()));
        }
        out
    }
}

impl fmt::Display for AblationTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<18} {:>8}", "variant", "mIoU")?;
        for r in &self.rows {
            writeln!(f, "{:<18} {:>8.2}", r.variant.as_str(), 100.0 * r.mean())?;
        }
        Ok(())
    }
}

/// Runs every variant under every seed, sharing everything else in `base`.
/// With an output directory set, each run writes to `<dir>/<variant>-seed<s>`.
pub fn run_ablation(base: &ExperimentConfig, variants: &[Variant], seeds: &[u64]) -> Result<AblationTable> {
    if variants.is_empty() {
        return Err(Error::Config("no variants to compare".into()));
    }
    let seeds = if seeds.is_empty() { vec![base.seeds.global] } else { seeds.to_vec() };
    let mut rows = Vec::with_capacity(variants.len());
    for &variant in variants {
        let mut miou = Vec::with_capacity(seeds.len());
        for &seed in &seeds {
            let mut config = base.clone();
            config.variant = variant;
            config.seeds.global = seed;
            config.output_dir = base
                .output_dir
                .as_ref()
                .map(|d| d.join(format!("{}-seed{seed}", variant.as_str())));
            let record = run_experiment(&config)?;
            miou.push(record.final_miou().expect("a completed run has been evaluated"));
        }
        rows.push(AblationRow { variant, miou });
    }
    Ok(AblationTable { seeds, rows })
}

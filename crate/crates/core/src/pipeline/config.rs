use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::train::TrainPlan;
use crate::domain::{benchmark, make_shifted_domain, Dataset, DomainSpec, Role};
use crate::error::{Error, Result};
use crate::refine::RefineConfig;
use crate::seed::{derive, mix};
use crate::student::{AugmentSpec, OptimConfig};
use crate::teacher::TeacherEndpoint;

/// Training recipe. Each one is the full method with some parts switched off,
/// except `KlDiv`, which distils the teacher's soft outputs directly.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Every teacher argmax is a label.
    #[serde(rename = "naive")]
    Naive,
    /// KL divergence to the teacher's probabilities.
    #[serde(rename = "kl-div")]
    KlDiv,
    /// Per-class thresholds on the top-1 probability.
    #[serde(rename = "ac-filter")]
    AcFilter,
    /// Per-class thresholds on relative confidence.
    #[serde(rename = "r2cp")]
    R2cp,
    /// As `R2cp`, trained on augmented inputs.
    #[serde(rename = "r2cp+consistency")]
    R2cpConsistency,
    /// As `R2cpConsistency`, plus EMA refinement of unlabelled pixels.
    #[serde(rename = "corte-full")]
    Full,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Naive,
        Variant::KlDiv,
        Variant::AcFilter,
        Variant::R2cp,
        Variant::R2cpConsistency,
        Variant::Full,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Naive => "naive",
            Variant::KlDiv => "kl-div",
            Variant::AcFilter => "ac-filter",
            Variant::R2cp => "r2cp",
            Variant::R2cpConsistency => "r2cp+consistency",
            Variant::Full => "corte-full",
        }
    }

    /// Whether a calibration pass over the teacher outputs is needed.
    pub fn needs_thresholds(self) -> bool {
        matches!(self, Variant::AcFilter | Variant::R2cp | Variant::R2cpConsistency | Variant::Full)
    }

    pub fn augments(self) -> bool {
        matches!(self, Variant::R2cpConsistency | Variant::Full)
    }

    pub fn refines(self) -> bool {
        self == Variant::Full
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }
}

/// Source domain, the shift that produces the target, and dataset sizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainConfig {
    pub source: DomainSpec,
    /// Per-class mean offsets, `C×d`.
    pub shift: Vec<Vec<f64>>,
    pub stddev_scale: f64,
    pub train_samples: usize,
    pub test_samples: usize,
    pub height: usize,
    pub width: usize,
}

impl DomainConfig {
    pub fn benchmark() -> Self {
        Self {
            source: benchmark::source_spec(),
            shift: benchmark::target_shift(),
            stddev_scale: benchmark::STDDEV_SCALE,
            train_samples: benchmark::TRAIN_SAMPLES,
            test_samples: benchmark::TEST_SAMPLES,
            height: benchmark::HEIGHT,
            width: benchmark::WIDTH,
        }
    }

    /// The target domain; `data_seed` selects which scenes it produces.
    pub fn target_spec(&self, data_seed: u64) -> Result<DomainSpec> {
        let mut target = make_shifted_domain(&self.source, &self.shift, self.stddev_scale)?;
        target.seed = mix(target.seed, data_seed);
        Ok(target)
    }

    /// `(target-train, target-test)`.
    pub fn datasets(&self, data_seed: u64) -> Result<(Dataset, Dataset)> {
        let target = self.target_spec(data_seed)?;
        Ok((
            Dataset::generate(&target, Role::TargetTrain, self.train_samples, self.height, self.width)?,
            Dataset::generate(&target, Role::TargetTest, self.test_samples, self.height, self.width)?,
        ))
    }
}

/// Student shape; input width and class count come from the data.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudentShape {
    pub patch: usize,
    pub hidden: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// EMA momentum. Required by `corte-full` only.
    pub alpha: Option<f64>,
    /// EMA confidence threshold. Required by `corte-full` only.
    pub beta: Option<f64>,
    /// Final weight of EMA-refined pixels. Required by `corte-full` only.
    pub lambda_max: Option<f64>,
    pub total_steps: u64,
    pub batch_size: usize,
    pub eval_every: u64,
    pub student: StudentShape,
    pub optim: OptimConfig,
    /// Used by the consistency variants; the others train on clean inputs.
    pub augment: AugmentSpec,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            alpha: Some(0.99),
            beta: Some(0.60),
            lambda_max: Some(5.0),
            total_steps: 3000,
            batch_size: 8,
            eval_every: 250,
            student: StudentShape { patch: 3, hidden: 32 },
            optim: OptimConfig::default(),
            augment: AugmentSpec {
                channel_scale_range: [0.8, 1.2],
                channel_offset_stddev: 0.0,
                blur_sigma_range: [0.0, 0.0],
                flip_prob: 0.5,
                seed: 0,
            },
        }
    }
}

/// Every stochastic draw descends from `global` through a named sub-seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub global: u64,
}

impl Seeds {
    pub fn data(self) -> u64 {
        derive(self.global, "data")
    }

    pub fn init(self) -> u64 {
        derive(self.global, "init")
    }

    pub fn augment(self) -> u64 {
        derive(self.global, "augment")
    }

    pub fn batching(self) -> u64 {
        derive(self.global, "batching")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub domain: DomainConfig,
    pub variant: Variant,
    pub hyper: Hyperparams,
    pub teacher: TeacherEndpoint,
    pub seeds: Seeds,
    /// Where artifacts go. Not part of the config hash.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    /// The default benchmark with an in-process teacher.
    pub fn benchmark(variant: Variant, seed: u64) -> Self {
        Self {
            domain: DomainConfig::benchmark(),
            variant,
            hyper: Hyperparams::default(),
            teacher: TeacherEndpoint::InProcess,
            seeds: Seeds { global: seed },
            output_dir: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.domain;
        d.source.validate()?;
        make_shifted_domain(&d.source, &d.shift, d.stddev_scale)?;
        if d.train_samples == 0 || d.test_samples == 0 {
            return Err(Error::Config("datasets must not be empty".into()));
        }
        if d.height < 4 || d.width < 4 {
            return Err(Error::Config(format!("scenes must be at least 4×4, got {}×{}", d.height, d.width)));
        }
        let h = &self.hyper;
        if h.total_steps == 0 || h.batch_size == 0 || h.eval_every == 0 {
            return Err(Error::Config("total_steps, batch_size and eval_every must be positive".into()));
        }
        if h.student.patch.is_multiple_of(2) || h.student.hidden == 0 {
            return Err(Error::Config("student patch must be odd and hidden width positive".into()));
        }
        h.optim.validate()?;
        if self.variant.augments() {
            h.augment.validate()?;
        }
        if self.variant.refines() {
            let alpha = h.alpha.ok_or_else(|| missing("alpha", self.variant))?;
            if !(0.0..1.0).contains(&alpha) {
                return Err(Error::Config(format!("alpha {alpha} outside [0, 1)")));
            }
            self.refine_config()?.expect("refining variant").validate()?;
        }
        Ok(())
    }

    /// Refinement settings for variants that refine, `None` otherwise.
    pub fn refine_config(&self) -> Result<Option<RefineConfig>> {
        if !self.variant.refines() {
            return Ok(None);
        }
        let h = &self.hyper;
        Ok(Some(RefineConfig {
            beta: h.beta.ok_or_else(|| missing("beta", self.variant))?,
            lambda_max: h.lambda_max.ok_or_else(|| missing("lambda_max", self.variant))?,
            total_steps: h.total_steps,
        }))
    }

    /// The parts of the config the training loop sees.
    pub fn plan(&self) -> Result<TrainPlan> {
        Ok(TrainPlan {
            variant: self.variant,
            hyper: self.hyper.clone(),
            refine: self.refine_config()?,
            seeds: self.seeds,
            config_hash: self.hash(),
        })
    }

    /// SHA-256 of the canonical JSON encoding, with `output_dir` left out.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = None;
        let bytes = serde_json::to_vec(&canonical).expect("config serialises");
        hex::encode(Sha256::digest(bytes))
    }
}

fn missing(field: &str, variant: Variant) -> Error {
    Error::Config(format!("{variant} requires hyper.{field}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
            assert_eq!(serde_json::to_string(&v).unwrap(), format!("\"{}\"", v.as_str()));
        }
        assert!("r2cp+ema".parse::<Variant>().is_err());
    }

    #[test]
    fn json_round_trip_and_validation() {
        let c = ExperimentConfig::benchmark(Variant::Full, 1);
        c.validate().unwrap();
        let back = ExperimentConfig::from_json(&c.to_json().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn beta_is_required_only_when_refining() {
        let mut c = ExperimentConfig::benchmark(Variant::Full, 1);
        c.hyper.beta = None;
        assert!(c.validate().is_err());
        c.variant = Variant::R2cp;
        c.validate().unwrap();
    }

    #[test]
    fn hash_ignores_output_dir_only() {
        let a = ExperimentConfig::benchmark(Variant::R2cp, 1);
        let mut b = a.clone();
        b.output_dir = Some("/tmp/x".into());
        assert_eq!(a.hash(), b.hash());
        b.seeds.global = 2;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn sub_seeds_are_distinct() {
        let s = Seeds { global: 3 };
        let all = [s.data(), s.init(), s.augment(), s.batching()];
        for i in 0..4 {
            for j in i + 1..4 {
                assert_ne!(all[i], all[j]);
            }
        }
    }
}

//! The training loop.
//!
//! Everything here works from target scenes and a [`Teacher`]; the source
//! domain is out of reach by construction.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::cache::TeacherCache;
use super::config::{Hyperparams, Seeds, Variant};
use crate::domain::SceneSample;
use crate::error::{Error, Result};
use crate::eval::{iou_from_cm, ConfusionMatrix, EvalRecord, MetricsReport};
use crate::pseudolabel::{ac_mask, compute_ac_thresholds, compute_class_thresholds, naive_mask, r2cp_mask, ClassThresholds, WeightedMask};
use crate::refine::{ema_update, refine_mask, EmaState, RefineConfig};
use crate::seed::mix;
use crate::student::{augment, forward, loss_and_grad, loss_and_grad_kl, optim_step, Architecture, AugmentSpec, OptimState, StudentParams};
use crate::teacher::Teacher;
use crate::tensor::ProbabilityMap;

/// What the loop needs to know about a run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainPlan {
    pub variant: Variant,
    pub hyper: Hyperparams,
    pub refine: Option<RefineConfig>,
    pub seeds: Seeds,
    pub config_hash: String,
}

/// Everything that changes during training. Saved in checkpoints.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    /// Optimiser updates applied so far.
    pub step: u64,
    pub params: StudentParams,
    pub optim: OptimState,
    pub ema: Option<EmaState>,
    pub history: Vec<EvalRecord>,
    /// Mean batch loss of every step taken.
    pub losses: Vec<f64>,
    /// Sum of per-scene supervised fractions since the last evaluation.
    pub window_retained: f64,
    pub window_count: u64,
}

impl TrainState {
    pub fn fresh(plan: &TrainPlan, arch: Architecture) -> Result<Self> {
        let params = StudentParams::init(arch, plan.seeds.init())?;
        let ema = match plan.variant.refines() {
            true => Some(EmaState::new(&params, plan.hyper.alpha.unwrap_or(0.99))?),
            false => None,
        };
        Ok(Self {
            step: 0,
            optim: OptimState::new(&params, plan.hyper.optim.clone()),
            params,
            ema,
            history: Vec::new(),
            losses: Vec::new(),
            window_retained: 0.0,
            window_count: 0,
        })
    }
}

pub struct TrainOutcome {
    pub state: TrainState,
    pub thresholds: Option<ClassThresholds>,
}

/// Per-class thresholds for the variant, computed over every training scene.
pub fn calibrate(
    variant: Variant,
    config_hash: &str,
    samples: &[SceneSample],
    teacher: &mut dyn Teacher,
    cache: &mut TeacherCache,
) -> Result<Option<ClassThresholds>> {
    if !variant.needs_thresholds() {
        return Ok(None);
    }
    let outputs = samples
        .iter()
        .map(|s| cache.fetch(config_hash, s, teacher))
        .collect::<Result<Vec<_>>>()?;
    let thresholds = match variant {
        Variant::AcFilter => compute_ac_thresholds(&outputs)?,
        _ => compute_class_thresholds(&outputs)?,
    };
    Ok(Some(thresholds))
}

/// Student mIoU on labelled scenes.
pub fn evaluate(params: &StudentParams, samples: &[SceneSample]) -> Result<MetricsReport> {
    let mut cm = ConfusionMatrix::new(params.arch.classes);
    for s in samples {
        let pred = forward(params, &s.features)?.argmax_grid();
        cm.accumulate(pred.as_slice(), s.labels.as_slice())?;
    }
    Ok(iou_from_cm(&cm))
}

/// Order in which epoch `epoch` visits the training scenes.
fn epoch_order(seed: u64, epoch: u64, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(seed, epoch)));
    order
}

pub struct Trainer<'a> {
    pub plan: &'a TrainPlan,
    pub train: &'a [SceneSample],
    pub test: &'a [SceneSample],
    pub teacher: &'a mut dyn Teacher,
    pub cache: &'a mut TeacherCache,
}

impl Trainer<'_> {
    /// Architecture implied by the data and the teacher's class count.
    pub fn architecture(&mut self) -> Result<Architecture> {
        let first = self.train.first().ok_or_else(|| Error::Config("no training scenes".into()))?;
        let q = self.cache.fetch(&self.plan.config_hash, first, self.teacher)?;
        let arch = Architecture {
            feature_dim: first.features.channels(),
            patch: self.plan.hyper.student.patch,
            hidden: self.plan.hyper.student.hidden,
            classes: q.classes(),
        };
        arch.validate()?;
        Ok(arch)
    }

    /// Trains from `state` until `total_steps`, or until `stop_after` steps
    /// have been taken overall. If a step fails, `on_failure` receives the
    /// state as it was before that step.
    pub fn run(
        &mut self,
        mut state: TrainState,
        stop_after: Option<u64>,
        on_failure: &mut dyn FnMut(&TrainState),
    ) -> Result<TrainOutcome> {
        let plan = self.plan;
        let thresholds = calibrate(plan.variant, &plan.config_hash, self.train, self.teacher, self.cache)
            .inspect_err(|_| on_failure(&state))?;
        let total = plan.hyper.total_steps;
        let end = stop_after.map_or(total, |s| s.min(total));
        let mut order = (u64::MAX, Vec::new());
        while state.step < end {
            match self.step(&state, thresholds.as_ref(), &mut order) {
                Ok(next) => state = next,
                Err(e) => {
                    on_failure(&state);
                    return Err(e);
                }
            }
        }
        Ok(TrainOutcome { state, thresholds })
    }

    fn step(
        &mut self,
        state: &TrainState,
        thresholds: Option<&ClassThresholds>,
        order: &mut (u64, Vec<usize>),
    ) -> Result<TrainState> {
        let plan = self.plan;
        let hyper = &plan.hyper;
        let t = state.step;
        let batch = hyper.batch_size as u64;
        let n = self.train.len() as u64;
        let identity = AugmentSpec::identity();
        let aug = if plan.variant.augments() { &hyper.augment } else { &identity };

        let mut grads = StudentParams::zeros(state.params.arch);
        let (mut loss, mut retained) = (0.0, 0.0);
        for j in 0..batch {
            let visit = t * batch + j;
            let epoch = visit / n;
            if order.0 != epoch {
                *order = (epoch, epoch_order(plan.seeds.batching(), epoch, self.train.len()));
            }
            let sample = &self.train[order.1[(visit % n) as usize]];
            let q = self.cache.fetch(&plan.config_hash, sample, self.teacher)?;
            let (l, g) = if plan.variant == Variant::KlDiv {
                retained += 1.0;
                loss_and_grad_kl(&state.params, &sample.features, &q)?
            } else {
                let mask = self.supervision(state, thresholds, sample, &q)?;
                retained += mask.retained_fraction();
                let step_seed = mix(mix(plan.seeds.augment(), t), sample.sample_id);
                let (features, mask) = augment(&sample.features, &mask, aug, step_seed);
                loss_and_grad(&state.params, &features, &mask)?
            };
            loss += l;
            grads.add_scaled(&g, 1.0);
        }
        let inv = 1.0 / batch as f64;
        loss *= inv;
        grads.scale(inv);
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss(t));
        }

        let (optim, params) = optim_step(&state.optim, &state.params, &grads)?;
        let ema = state.ema.as_ref().map(|e| ema_update(e, &params)).transpose()?;
        let mut next = TrainState {
            step: t + 1,
            params,
            optim,
            ema,
            history: state.history.clone(),
            losses: state.losses.clone(),
            window_retained: state.window_retained + retained,
            window_count: state.window_count + batch,
        };
        next.losses.push(loss);
        if next.step.is_multiple_of(hyper.eval_every) || next.step == hyper.total_steps {
            let mut report = evaluate(&next.params, self.test)?;
            report.retained_fraction = next.window_retained / next.window_count as f64;
            next.history.push(EvalRecord {
                step: next.step,
                variant: plan.variant.to_string(),
                report,
            });
            next.window_retained = 0.0;
            next.window_count = 0;
        }
        Ok(next)
    }

    /// The variant's per-pixel supervision for one clean scene.
    fn supervision(
        &self,
        state: &TrainState,
        thresholds: Option<&ClassThresholds>,
        sample: &SceneSample,
        q: &ProbabilityMap,
    ) -> Result<WeightedMask> {
        let plan = self.plan;
        let th = || thresholds.ok_or_else(|| Error::Config(format!("{} needs thresholds", plan.variant)));
        let mask = match plan.variant {
            Variant::Naive | Variant::KlDiv => naive_mask(q),
            Variant::AcFilter => ac_mask(q, th()?),
            Variant::R2cp | Variant::R2cpConsistency | Variant::Full => r2cp_mask(q, th()?),
        };
        match (&plan.refine, &state.ema) {
            (Some(cfg), Some(ema)) => {
                let ema_probs = forward(&ema.params, &sample.features)?;
                refine_mask(&mask, &ema_probs, state.step, cfg)
            }
            _ => Ok(mask),
        }
    }
}

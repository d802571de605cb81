//! Turning teacher probabilities into hard, filtered supervision.
//!
//! The teacher's *relative confidence* at a pixel is the gap between its two
//! largest class probabilities. A pixel keeps its teacher label only if that
//! gap reaches the average gap of all target pixels the teacher assigned to
//! the same class. Thresholds are calibrated once, in a streaming pass over
//! the whole target training set, and frozen afterwards.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{argmax, ProbabilityMap};

/// Class sentinel for unsupervised pixels in a [`WeightedMask`].
pub const NO_CLASS: u8 = u8::MAX;

/// Largest and second-largest entries of a distribution.
pub fn top_two(p: &[f64]) -> (f64, f64) {
    let (mut first, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &v in p {
        if v > first {
            second = first;
            first = v;
        } else if v > second {
            second = v;
        }
    }
    (first, second)
}

/// Per-pixel relative confidence, `top1 − top2`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfidenceMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

pub fn relative_confidence(q: &ProbabilityMap) -> Result<ConfidenceMap> {
    if q.classes() < 2 {
        return Err(Error::Config(format!(
            "relative confidence needs at least two classes, got {}",
            q.classes()
        )));
    }
    let values = (0..q.num_pixels())
        .map(|i| {
            let (a, b) = top_two(q.pixel(i));
            (a - b).clamp(0.0, 1.0)
        })
        .collect();
    Ok(ConfidenceMap {
        height: q.height(),
        width: q.width(),
        values,
    })
}

/// Which per-pixel statistic a threshold set is calibrated on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Statistic {
    /// `top1 − top2`
    Relative,
    /// `top1`
    Absolute,
}

impl Statistic {
    pub fn of(self, p: &[f64]) -> f64 {
        let (a, b) = top_two(p);
        match self {
            Statistic::Relative => (a - b).clamp(0.0, 1.0),
            Statistic::Absolute => a,
        }
    }
}

/// Per-class thresholds: the mean statistic over pixels whose teacher argmax
/// is that class. Classes the teacher never predicts get `tau = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassThresholds {
    pub tau: Vec<f64>,
    pub counts: Vec<u64>,
    pub never_predicted: Vec<bool>,
}

impl ClassThresholds {
    pub fn num_classes(&self) -> usize {
        self.tau.len()
    }

    /// All-zero thresholds: every pixel passes.
    pub fn zeros(classes: usize) -> Self {
        Self {
            tau: vec![0.0; classes],
            counts: vec![0; classes],
            never_predicted: vec![true; classes],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.tau.len();
        if self.counts.len() != c || self.never_predicted.len() != c {
            return Err(Error::Shape("tau, counts and never_predicted lengths differ".into()));
        }
        for k in 0..c {
            if !(0.0..=1.0).contains(&self.tau[k]) {
                return Err(Error::Config(format!("tau[{k}] = {} outside [0, 1]", self.tau[k])));
            }
            if self.never_predicted[k] != (self.counts[k] == 0) {
                return Err(Error::Config(format!("never_predicted[{k}] disagrees with counts")));
            }
            if self.never_predicted[k] && self.tau[k] != 0.0 {
                return Err(Error::Config(format!("tau[{k}] must be 0 for a never-predicted class")));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let t: Self = serde_json::from_str(s)?;
        t.validate()?;
        Ok(t)
    }
}

/// Streaming per-class sums. Accumulators can be merged, so calibration can
/// be sharded; results agree up to floating-point summation order.
#[derive(Clone, Debug)]
pub struct ThresholdAccumulator {
    statistic: Statistic,
    sums: Vec<f64>,
    counts: Vec<u64>,
    maps: u64,
}

impl ThresholdAccumulator {
    pub fn new(statistic: Statistic, classes: usize) -> Self {
        Self {
            statistic,
            sums: vec![0.0; classes],
            counts: vec![0; classes],
            maps: 0,
        }
    }

    pub fn add(&mut self, q: &ProbabilityMap) -> Result<()> {
        if q.classes() != self.sums.len() {
            return Err(Error::Shape(format!(
                "map has {} classes, accumulator {}",
                q.classes(),
                self.sums.len()
            )));
        }
        for i in 0..q.num_pixels() {
            let p = q.pixel(i);
            let k = argmax(p);
            self.sums[k] += self.statistic.of(p);
            self.counts[k] += 1;
        }
        self.maps += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if other.statistic != self.statistic || other.sums.len() != self.sums.len() {
            return Err(Error::Config("cannot merge accumulators of different kinds".into()));
        }
        for k in 0..self.sums.len() {
            self.sums[k] += other.sums[k];
            self.counts[k] += other.counts[k];
        }
        self.maps += other.maps;
        Ok(())
    }

    pub fn finish(&self) -> Result<ClassThresholds> {
        if self.maps == 0 {
            return Err(Error::EmptyStream);
        }
        let tau = self
            .sums
            .iter()
            .zip(&self.counts)
            .map(|(&s, &n)| if n == 0 { 0.0 } else { (s / n as f64).clamp(0.0, 1.0) })
            .collect();
        Ok(ClassThresholds {
            tau,
            counts: self.counts.clone(),
            never_predicted: self.counts.iter().map(|&n| n == 0).collect(),
        })
    }
}

fn calibrate<'a, I>(statistic: Statistic, maps: I) -> Result<ClassThresholds>
where
    I: IntoIterator<Item = &'a ProbabilityMap>,
{
    let mut maps = maps.into_iter().peekable();
    let classes = maps.peek().ok_or(Error::EmptyStream)?.classes();
    let mut acc = ThresholdAccumulator::new(statistic, classes);
    for q in maps {
        acc.add(q)?;
    }
    acc.finish()
}

/// Relative-confidence thresholds over the whole target training set.
pub fn compute_class_thresholds<'a, I>(teacher_outputs: I) -> Result<ClassThresholds>
where
    I: IntoIterator<Item = &'a ProbabilityMap>,
{
    calibrate(Statistic::Relative, teacher_outputs)
}

/// Absolute-confidence (top-1 probability) thresholds, for the AC baseline.
pub fn compute_ac_thresholds<'a, I>(teacher_outputs: I) -> Result<ClassThresholds>
where
    I: IntoIterator<Item = &'a ProbabilityMap>,
{
    calibrate(Statistic::Absolute, teacher_outputs)
}

/// Per-pixel supervision: at most one class per pixel, with a loss weight.
/// A pixel has weight 0 exactly when it has no class.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedMask {
    height: usize,
    width: usize,
    classes: Vec<u8>,
    weights: Vec<f64>,
}

impl WeightedMask {
    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            classes: vec![NO_CLASS; height * width],
            weights: vec![0.0; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    /// `(class, weight)` of a supervised pixel.
    pub fn get(&self, index: usize) -> Option<(usize, f64)> {
        match self.classes[index] {
            NO_CLASS => None,
            c => Some((usize::from(c), self.weights[index])),
        }
    }

    /// Supervises a pixel. A non-positive weight clears it instead.
    pub fn set(&mut self, index: usize, class: usize, weight: f64) {
        debug_assert!(class < usize::from(NO_CLASS));
        if weight > 0.0 {
            self.classes[index] = class as u8;
            self.weights[index] = weight;
        } else {
            self.clear(index);
        }
    }

    pub fn clear(&mut self, index: usize) {
        self.classes[index] = NO_CLASS;
        self.weights[index] = 0.0;
    }

    /// Raw class grid, [`NO_CLASS`] where unsupervised.
    pub fn class_grid(&self) -> &[u8] {
        &self.classes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn supervised_count(&self) -> usize {
        self.classes.iter().filter(|&&c| c != NO_CLASS).count()
    }

    pub fn retained_fraction(&self) -> f64 {
        if self.classes.is_empty() {
            return 0.0;
        }
        self.supervised_count() as f64 / self.classes.len() as f64
    }

    /// Multiplies every weight by `factor` (> 0).
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        for w in &mut out.weights {
            *w *= factor;
        }
        out
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut out = self.clone();
        for r in 0..self.height {
            for c in 0..self.width {
                let (dst, src) = (r * self.width + c, r * self.width + self.width - 1 - c);
                out.classes[dst] = self.classes[src];
                out.weights[dst] = self.weights[src];
            }
        }
        out
    }
}

fn threshold_mask(q: &ProbabilityMap, thresholds: &ClassThresholds, statistic: Statistic) -> WeightedMask {
    assert_eq!(
        q.classes(),
        thresholds.num_classes(),
        "thresholds were calibrated for a different class set"
    );
    let mut mask = WeightedMask::empty(q.height(), q.width());
    for i in 0..q.num_pixels() {
        let p = q.pixel(i);
        let k = argmax(p);
        if statistic.of(p) >= thresholds.tau[k] {
            mask.set(i, k, 1.0);
        }
    }
    mask
}

/// Keeps the teacher label where its relative confidence reaches the
/// threshold of the predicted class.
pub fn r2cp_mask(q: &ProbabilityMap, thresholds: &ClassThresholds) -> WeightedMask {
    threshold_mask(q, thresholds, Statistic::Relative)
}

/// Absolute-confidence baseline: keeps the label where the top-1 probability
/// reaches the class threshold (calibrate with [`compute_ac_thresholds`]).
pub fn ac_mask(q: &ProbabilityMap, thresholds: &ClassThresholds) -> WeightedMask {
    threshold_mask(q, thresholds, Statistic::Absolute)
}

/// Unfiltered teacher argmax everywhere.
pub fn naive_mask(q: &ProbabilityMap) -> WeightedMask {
    let mut mask = WeightedMask::empty(q.height(), q.width());
    for i in 0..q.num_pixels() {
        mask.set(i, argmax(q.pixel(i)), 1.0);
    }
    mask
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pseudolabel::WeightedMask;
use crate::seed::mix;
use crate::tensor::FeatureMap;

/// Photometric jitter, blur and flip settings for consistency training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentSpec {
    pub channel_scale_range: [f64; 2],
    pub channel_offset_stddev: f64,
    pub blur_sigma_range: [f64; 2],
    pub flip_prob: f64,
    pub seed: u64,
}

impl AugmentSpec {
    /// Leaves every input untouched.
    pub fn identity() -> Self {
        Self {
            channel_scale_range: [1.0, 1.0],
            channel_offset_stddev: 0.0,
            blur_sigma_range: [0.0, 0.0],
            flip_prob: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [slo, shi] = self.channel_scale_range;
        let [blo, bhi] = self.blur_sigma_range;
        let ok = slo > 0.0
            && slo <= shi
            && shi.is_finite()
            && self.channel_offset_stddev >= 0.0
            && self.channel_offset_stddev.is_finite()
            && blo >= 0.0
            && blo <= bhi
            && bhi.is_finite()
            && (0.0..=1.0).contains(&self.flip_prob);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid augmentation settings {self:?}")))
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    lo + (hi - lo) * rng.gen::<f64>()
}

/// Augments one training scene. Jitter and blur touch the features only; a
/// flip mirrors features and mask together so pixels stay aligned.
///
/// Every random value is drawn whether or not its stage is active, so the
/// stream for a given `(spec.seed, step_seed)` never depends on the settings.
pub fn augment(features: &FeatureMap, mask: &WeightedMask, spec: &AugmentSpec, step_seed: u64) -> (FeatureMap, WeightedMask) {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(spec.seed, step_seed));
    let d = features.channels();
    let mut scale = Vec::with_capacity(d);
    let mut offset = Vec::with_capacity(d);
    for _ in 0..d {
        scale.push(uniform(&mut rng, spec.channel_scale_range));
        let z: f64 = rng.sample(StandardNormal);
        offset.push(spec.channel_offset_stddev * z);
    }
    let sigma = uniform(&mut rng, spec.blur_sigma_range);
    let flip = rng.gen::<f64>() < spec.flip_prob;

    let mut out = features.clone();
    if scale.iter().any(|&s| s != 1.0) || offset.iter().any(|&o| o != 0.0) {
        for px in out.as_mut_slice().chunks_exact_mut(d) {
            for ((v, s), o) in px.iter_mut().zip(&scale).zip(&offset) {
                *v = *v * s + o;
            }
        }
    }
    if sigma > 0.0 {
        out = gaussian_blur(&out, sigma);
    }
    if flip {
        (out.flip_horizontal(), mask.flip_horizontal())
    } else {
        (out, mask.clone())
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|x| (-(x * x) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    k
}

/// Separable Gaussian blur with edge replication, applied per channel.
pub(crate) fn gaussian_blur(features: &FeatureMap, sigma: f64) -> FeatureMap {
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as isize;
    let (h, w, d) = (features.height(), features.width(), features.channels());
    let src = features.as_slice();
    let mut tmp = vec![0.0; src.len()];
    for r in 0..h {
        for c in 0..w {
            let dst = &mut tmp[(r * w + c) * d..(r * w + c + 1) * d];
            for (t, kv) in kernel.iter().enumerate() {
                let cc = (c as isize + t as isize - radius).clamp(0, w as isize - 1) as usize;
                let s = &src[(r * w + cc) * d..(r * w + cc + 1) * d];
                dst.iter_mut().zip(s).for_each(|(o, x)| *o += kv * x);
            }
        }
    }
    let mut out = vec![0.0; src.len()];
    for r in 0..h {
        for c in 0..w {
            let dst = &mut out[(r * w + c) * d..(r * w + c + 1) * d];
            for (t, kv) in kernel.iter().enumerate() {
                let rr = (r as isize + t as isize - radius).clamp(0, h as isize - 1) as usize;
                let s = &tmp[(rr * w + c) * d..(rr * w + c + 1) * d];
                dst.iter_mut().zip(s).for_each(|(o, x)| *o += kv * x);
            }
        }
    }
    FeatureMap::new(h, w, d, out).expect("blur preserves shape")
}

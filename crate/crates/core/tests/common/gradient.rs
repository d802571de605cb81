//! Central finite differences over every student parameter.

use bbseg::pseudolabel::WeightedMask;
use bbseg::student::{forward, kd_kl_loss, loss_and_grad, loss_and_grad_kl, masked_ce_loss, Architecture, StudentParams};
use bbseg::{FeatureMap, ProbabilityMap};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-6;
pub const TOLERANCE: f64 = 1e-4;
/// Below this magnitude both gradients count as zero; the comparison becomes
/// absolute rather than relative.
pub const FLOOR: f64 = 1e-7;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

/// Central differences of `loss` with respect to every parameter.
pub fn numeric_gradient(params: &StudentParams, loss: impl Fn(&StudentParams) -> f64) -> Vec<f64> {
    let mut p = params.clone();
    (0..params.num_params())
        .map(|i| {
            let x = params.get_flat(i);
            p.set_flat(i, x + STEP);
            let up = loss(&p);
            p.set_flat(i, x - STEP);
            let down = loss(&p);
            p.set_flat(i, x);
            (up - down) / (2.0 * STEP)
        })
        .collect()
}

pub struct Case {
    pub params: StudentParams,
    pub features: FeatureMap,
    pub mask: WeightedMask,
}

pub fn case(seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let arch = Architecture {
        feature_dim: rng.gen_range(1..=4),
        patch: [1, 3, 5][rng.gen_range(0..3)],
        hidden: rng.gen_range(3..=8),
        classes: rng.gen_range(2..=5),
    };
    let mut params = StudentParams::init(arch, seed).unwrap();
    for t in params.tensors_mut() {
        t.iter_mut().for_each(|v| *v += rng.gen_range(-0.3..0.3));
    }
    let (h, w) = (6, 6);
    let features = FeatureMap::new(
        h,
        w,
        arch.feature_dim,
        (0..h * w * arch.feature_dim).map(|_| rng.gen_range(-2.0..2.0)).collect(),
    )
    .unwrap();
    let mut mask = WeightedMask::empty(h, w);
    for i in 0..h * w {
        if rng.gen_bool(0.7) {
            let weight = if rng.gen_bool(0.5) { 1.0 } else { rng.gen_range(0.1..5.0) };
            mask.set(i, rng.gen_range(0..arch.classes), weight);
        }
    }
    Case { params, features, mask }
}

pub fn check_case(seed: u64) -> f64 {
    let c = case(seed);
    let (_, grads) = loss_and_grad(&c.params, &c.features, &c.mask).unwrap();
    let numeric = numeric_gradient(&c.params, |p| masked_ce_loss(&forward(p, &c.features).unwrap(), &c.mask));
    grads
        .flatten()
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

/// Worst relative error of the KL gradient against a random soft teacher.
pub fn check_kl_case(seed: u64) -> f64 {
    let c = case(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = c.params.arch.classes;
    let mut q = Vec::new();
    for _ in 0..c.features.num_pixels() {
        let raw: Vec<f64> = (0..classes).map(|k| if k == 0 { 0.0 } else { rng.gen_range(0.0..1.0) }).collect();
        let s: f64 = raw.iter().sum();
        q.extend(raw.iter().map(|v| v / s));
    }
    let (h, w) = (c.features.height(), c.features.width());
    let teacher = ProbabilityMap::new(classes, h, w, q).unwrap();
    let (_, grads) = loss_and_grad_kl(&c.params, &c.features, &teacher).unwrap();
    let numeric = numeric_gradient(&c.params, |p| kd_kl_loss(&forward(p, &c.features).unwrap(), &teacher));
    grads
        .flatten()
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

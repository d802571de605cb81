use super::loss::LOG_CLAMP;
use super::params::{Architecture, StudentParams};
use crate::error::{Error, Result};
use crate::pseudolabel::WeightedMask;
use crate::tensor::{FeatureMap, ProbabilityMap};

/// Per-pixel scratch buffers.
struct Scratch {
    patch: Vec<f64>,
    pre: Vec<f64>,
    hidden: Vec<f64>,
    probs: Vec<f64>,
    dlogits: Vec<f64>,
    dhidden: Vec<f64>,
}

impl Scratch {
    fn new(arch: &Architecture) -> Self {
        Self {
            patch: vec![0.0; arch.patch_len()],
            pre: vec![0.0; arch.hidden],
            hidden: vec![0.0; arch.hidden],
            probs: vec![0.0; arch.classes],
            dlogits: vec![0.0; arch.classes],
            dhidden: vec![0.0; arch.hidden],
        }
    }
}

fn check_inputs(params: &StudentParams, features: &FeatureMap) -> Result<()> {
    params.check_shape()?;
    if features.channels() != params.arch.feature_dim {
        return Err(Error::Shape(format!(
            "features have {} channels, student expects {}",
            features.channels(),
            params.arch.feature_dim
        )));
    }
    Ok(())
}

fn check_grid(what: &str, h: usize, w: usize, features: &FeatureMap) -> Result<()> {
    if h != features.height() || w != features.width() {
        return Err(Error::Shape(format!(
            "{what} is {h}×{w}, features are {}×{}",
            features.height(),
            features.width()
        )));
    }
    Ok(())
}

/// Copies the `k×k` neighbourhood of `(row, col)` into `out`, ordered
/// `(dy, dx, channel)`, replicating edge pixels past the border.
fn extract_patch(features: &FeatureMap, k: usize, row: usize, col: usize, out: &mut [f64]) {
    let half = (k / 2) as isize;
    let d = features.channels();
    let (h, w) = (features.height() as isize, features.width() as isize);
    let mut o = 0;
    for dy in -half..=half {
        let r = (row as isize + dy).clamp(0, h - 1) as usize;
        for dx in -half..=half {
            let c = (col as isize + dx).clamp(0, w - 1) as usize;
            out[o..o + d].copy_from_slice(features.at(r, c));
            o += d;
        }
    }
}

fn pixel_forward(params: &StudentParams, s: &mut Scratch) {
    let arch = &params.arch;
    let p_len = arch.patch_len();
    for j in 0..arch.hidden {
        let row = &params.w1[j * p_len..(j + 1) * p_len];
        let z = params.b1[j] + row.iter().zip(&s.patch).map(|(w, x)| w * x).sum::<f64>();
        s.pre[j] = z;
        s.hidden[j] = z.max(0.0);
    }
    let mut max = f64::NEG_INFINITY;
    for c in 0..arch.classes {
        let row = &params.w2[c * arch.hidden..(c + 1) * arch.hidden];
        let z = params.b2[c] + row.iter().zip(&s.hidden).map(|(w, x)| w * x).sum::<f64>();
        s.probs[c] = z;
        max = max.max(z);
    }
    let mut total = 0.0;
    for p in s.probs.iter_mut() {
        *p = (*p - max).exp();
        total += *p;
    }
    s.probs.iter_mut().for_each(|p| *p /= total);
}

fn pixel_backward(params: &StudentParams, s: &mut Scratch, grads: &mut StudentParams) {
    let arch = &params.arch;
    let (h, p_len) = (arch.hidden, arch.patch_len());
    s.dhidden.iter_mut().for_each(|v| *v = 0.0);
    for c in 0..arch.classes {
        let dl = s.dlogits[c];
        if dl == 0.0 {
            continue;
        }
        grads.b2[c] += dl;
        let gw = &mut grads.w2[c * h..(c + 1) * h];
        let w = &params.w2[c * h..(c + 1) * h];
        for j in 0..h {
            gw[j] += dl * s.hidden[j];
            s.dhidden[j] += w[j] * dl;
        }
    }
    for j in 0..h {
        if s.pre[j] <= 0.0 {
            continue;
        }
        let dz = s.dhidden[j];
        grads.b1[j] += dz;
        let gw = &mut grads.w1[j * p_len..(j + 1) * p_len];
        gw.iter_mut().zip(&s.patch).for_each(|(g, x)| *g += dz * x);
    }
}

/// Per-pixel class probabilities of the student.
pub fn forward(params: &StudentParams, features: &FeatureMap) -> Result<ProbabilityMap> {
    check_inputs(params, features)?;
    let arch = params.arch;
    let mut s = Scratch::new(&arch);
    let mut out = Vec::with_capacity(features.num_pixels() * arch.classes);
    for r in 0..features.height() {
        for c in 0..features.width() {
            extract_patch(features, arch.patch, r, c, &mut s.patch);
            pixel_forward(params, &mut s);
            out.extend_from_slice(&s.probs);
        }
    }
    Ok(ProbabilityMap::from_raw(arch.classes, features.height(), features.width(), out))
}

/// Shared driver: `target` fills `dlogits` for pixel `i` from its
/// probabilities and returns the pixel's loss term, or `None` to skip it.
fn run<F>(params: &StudentParams, features: &FeatureMap, mut target: F) -> (f64, StudentParams)
where
    F: FnMut(usize, &[f64], &mut [f64]) -> Option<f64>,
{
    let arch = params.arch;
    let mut s = Scratch::new(&arch);
    let mut grads = StudentParams::zeros(arch);
    let mut loss = 0.0;
    let w = features.width();
    for i in 0..features.num_pixels() {
        extract_patch(features, arch.patch, i / w, i % w, &mut s.patch);
        pixel_forward(params, &mut s);
        if let Some(term) = target(i, &s.probs, &mut s.dlogits) {
            loss += term;
            pixel_backward(params, &mut s, &mut grads);
        }
    }
    (loss, grads)
}

/// Masked weighted cross-entropy and its gradient with respect to every
/// parameter. Normalised by `H·W`, like [`super::masked_ce_loss`].
pub fn loss_and_grad(params: &StudentParams, features: &FeatureMap, mask: &WeightedMask) -> Result<(f64, StudentParams)> {
    check_inputs(params, features)?;
    check_grid("mask", mask.height(), mask.width(), features)?;
    let norm = 1.0 / features.num_pixels() as f64;
    Ok(run(params, features, |i, probs, dlogits| {
        let (class, weight) = mask.get(i)?;
        let scale = weight * norm;
        for (k, (d, p)) in dlogits.iter_mut().zip(probs).enumerate() {
            *d = scale * (p - if k == class { 1.0 } else { 0.0 });
        }
        Some(-scale * probs[class].max(LOG_CLAMP).ln())
    }))
}

pub fn backward(params: &StudentParams, features: &FeatureMap, mask: &WeightedMask) -> Result<StudentParams> {
    loss_and_grad(params, features, mask).map(|(_, g)| g)
}

/// KL(teacher ‖ student) averaged over pixels, and its gradient.
pub fn loss_and_grad_kl(params: &StudentParams, features: &FeatureMap, teacher: &ProbabilityMap) -> Result<(f64, StudentParams)> {
    check_inputs(params, features)?;
    check_grid("teacher map", teacher.height(), teacher.width(), features)?;
    if teacher.classes() != params.arch.classes {
        return Err(Error::Shape(format!(
            "teacher has {} classes, student {}",
            teacher.classes(),
            params.arch.classes
        )));
    }
    let norm = 1.0 / features.num_pixels() as f64;
    Ok(run(params, features, |i, probs, dlogits| {
        let q = teacher.pixel(i);
        let mut term = 0.0;
        for k in 0..probs.len() {
            dlogits[k] = norm * (probs[k] - q[k]);
            if q[k] > 0.0 {
                term += q[k] * (q[k].ln() - probs[k].max(LOG_CLAMP).ln());
            }
        }
        Some(norm * term)
    }))
}

pub fn backward_kl(params: &StudentParams, features: &FeatureMap, teacher: &ProbabilityMap) -> Result<StudentParams> {
    loss_and_grad_kl(params, features, teacher).map(|(_, g)| g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::student::masked_ce_loss;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn arch(d: usize, k: usize, h: usize, c: usize) -> Architecture {
        Architecture {
            feature_dim: d,
            patch: k,
            hidden: h,
            classes: c,
        }
    }

    fn random_features(rng: &mut ChaCha8Rng, h: usize, w: usize, d: usize) -> FeatureMap {
        FeatureMap::new(h, w, d, (0..h * w * d).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap()
    }

    #[test]
    fn zero_params_give_uniform_probabilities() {
        let p = StudentParams::zeros(arch(2, 3, 4, 5));
        let f = FeatureMap::zeros(4, 4, 2);
        let q = forward(&p, &f).unwrap();
        assert!(q.as_slice().iter().all(|&v| v == 0.2));
    }

    #[test]
    fn passthrough_student_reproduces_feature_argmax() {
        // k = 1, d = C: hidden = relu(x), logits = 50·hidden.
        let c = 3;
        let mut p = StudentParams::zeros(arch(c, 1, c, c));
        for j in 0..c {
            p.w1[j * c + j] = 1.0;
            p.w2[j * c + j] = 50.0;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = FeatureMap::new(5, 5, c, (0..75).map(|_| rng.gen_range(0.1..1.0)).collect()).unwrap();
        let q = forward(&p, &f).unwrap();
        for i in 0..25 {
            assert_eq!(crate::tensor::argmax(q.pixel(i)), crate::tensor::argmax(f.pixel(i)));
        }
    }

    #[test]
    fn patches_replicate_edges() {
        let f = FeatureMap::new(2, 2, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut out = vec![0.0; 9];
        extract_patch(&f, 3, 0, 0, &mut out);
        assert_eq!(out, vec![1.0, 1.0, 2.0, 1.0, 1.0, 2.0, 3.0, 3.0, 4.0]);
    }

    #[test]
    fn shape_mismatches_are_errors() {
        let p = StudentParams::zeros(arch(2, 3, 4, 5));
        assert!(forward(&p, &FeatureMap::zeros(4, 4, 3)).is_err());
        let mask = WeightedMask::empty(3, 4);
        assert!(backward(&p, &FeatureMap::zeros(4, 4, 2), &mask).is_err());
    }

    #[test]
    fn empty_mask_has_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = StudentParams::init(arch(2, 3, 6, 3), 5).unwrap();
        let f = random_features(&mut rng, 6, 6, 2);
        let (loss, g) = loss_and_grad(&p, &f, &WeightedMask::empty(6, 6)).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.flatten().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn doubling_weights_doubles_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = StudentParams::init(arch(2, 3, 6, 3), 7).unwrap();
        let f = random_features(&mut rng, 6, 6, 2);
        let mut mask = WeightedMask::empty(6, 6);
        for i in (0..36).step_by(2) {
            mask.set(i, i % 3, 0.5 + (i as f64) / 36.0);
        }
        let g1 = backward(&p, &f, &mask).unwrap().flatten();
        let g2 = backward(&p, &f, &mask.scaled(2.0)).unwrap().flatten();
        for (a, b) in g1.iter().zip(&g2) {
            assert!((2.0 * a - b).abs() <= 1e-15 * b.abs().max(1.0));
        }
    }

    #[test]
    fn fused_loss_matches_forward_then_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = StudentParams::init(arch(3, 3, 5, 4), 1).unwrap();
        let f = random_features(&mut rng, 5, 7, 3);
        let mut mask = WeightedMask::empty(5, 7);
        for i in 0..35 {
            if rng.gen_bool(0.6) {
                mask.set(i, rng.gen_range(0..4), rng.gen_range(0.1..3.0));
            }
        }
        let (fused, _) = loss_and_grad(&p, &f, &mask).unwrap();
        let direct = masked_ce_loss(&forward(&p, &f).unwrap(), &mask);
        assert!((fused - direct).abs() < 1e-13);
    }

    #[test]
    fn forward_is_bitwise_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = StudentParams::init(arch(4, 3, 8, 6), 9).unwrap();
        let f = random_features(&mut rng, 8, 8, 4);
        assert_eq!(forward(&p, &f).unwrap(), forward(&p, &f).unwrap());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn outputs_stay_on_the_simplex(seed in any::<u64>(), scale in 0.1f64..20.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut p = StudentParams::init(arch(3, 3, 8, 5), seed).unwrap();
            p.scale(scale);
            let f = random_features(&mut rng, 5, 6, 3);
            let q = forward(&p, &f).unwrap();
            prop_assert!(q.check_simplex().is_ok());
        }
    }
}

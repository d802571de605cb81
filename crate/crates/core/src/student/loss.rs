use crate::pseudolabel::WeightedMask;
use crate::tensor::ProbabilityMap;

/// Lower bound applied to probabilities before taking logs.
pub const LOG_CLAMP: f64 = 1e-12;

/// Weighted cross-entropy over supervised pixels, divided by the total pixel
/// count `H·W` (not by the number of supervised pixels).
pub fn masked_ce_loss(probs: &ProbabilityMap, mask: &WeightedMask) -> f64 {
    debug_assert_eq!(probs.num_pixels(), mask.len());
    let mut loss = 0.0;
    for i in 0..mask.len() {
        if let Some((class, weight)) = mask.get(i) {
            loss -= weight * probs.pixel(i)[class].max(LOG_CLAMP).ln();
        }
    }
    loss / probs.num_pixels() as f64
}

/// Mean over pixels of `KL(teacher ‖ student)`, with `0·log 0 = 0`.
pub fn kd_kl_loss(student: &ProbabilityMap, teacher: &ProbabilityMap) -> f64 {
    debug_assert_eq!(student.as_slice().len(), teacher.as_slice().len());
    let mut total = 0.0;
    for (&q, &p) in teacher.as_slice().iter().zip(student.as_slice()) {
        if q > 0.0 {
            total += q * (q.ln() - p.max(LOG_CLAMP).ln());
        }
    }
    total / student.num_pixels() as f64
}

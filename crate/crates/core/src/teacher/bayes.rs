use crate::domain::DomainSpec;
use crate::error::{Error, Result};
use crate::tensor::{FeatureMap, ProbabilityMap};

/// Exact class posterior of the (diagonal-Gaussian) domain:
/// `q_k ∝ π_k Π_j N(x_j; μ_kj, σ_kj)`, evaluated in log space with the
/// per-pixel maximum subtracted before exponentiating.
pub fn bayes_posterior(features: &FeatureMap, spec: &DomainSpec) -> Result<ProbabilityMap> {
    let (c, d) = (spec.num_classes, spec.feature_dim);
    if features.channels() != d {
        return Err(Error::Shape(format!(
            "features have {} channels, domain has {d}",
            features.channels()
        )));
    }
    // log π_k − Σ_j log σ_kj; the shared −d/2 log 2π cancels.
    let offsets: Vec<f64> = (0..c)
        .map(|k| spec.class_priors[k].ln() - spec.class_stddevs[k].iter().map(|s| s.ln()).sum::<f64>())
        .collect();

    let n = features.num_pixels();
    let mut out = Vec::with_capacity(n * c);
    let mut logp = vec![0.0; c];
    for i in 0..n {
        let x = features.pixel(i);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { pixel: i });
        }
        for (k, lp) in logp.iter_mut().enumerate() {
            let mut q = 0.0;
            for j in 0..d {
                let z = (x[j] - spec.class_means[k][j]) / spec.class_stddevs[k][j];
                q += z * z;
            }
            *lp = offsets[k] - 0.5 * q;
        }
        let max = logp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for lp in logp.iter_mut() {
            *lp = (*lp - max).exp();
            total += *lp;
        }
        out.extend(logp.iter().map(|e| e / total));
    }
    Ok(ProbabilityMap::from_raw(c, features.height(), features.width(), out))
}

//! The default source/target benchmark.
//!
//! Six classes in four feature dimensions on 32×32 scenes. Class 0 sits at
//! the origin with classes 2 to 5 on a tight ring around it, so many of its
//! pixels are ambiguous between several classes at once. Class 1 lies
//! further out and forms a confusable pair with class 0; classes 3 and 5 form
//! the second pair. In the target domain each pair moves toward each other
//! and every class gets tighter, which leaves the source-trained teacher
//! overconfident between paired classes and underconfident elsewhere.

use super::{make_shifted_domain, DomainSpec, Layout};

pub const NUM_CLASSES: usize = 6;
pub const FEATURE_DIM: usize = 4;
pub const HEIGHT: usize = 32;
pub const WIDTH: usize = 32;
pub const TRAIN_SAMPLES: usize = 200;
pub const TEST_SAMPLES: usize = 100;
pub const SOURCE_SEED: u64 = 20_230_517;

const RING: f64 = 1.4;
const PAIR: f64 = std::f64::consts::SQRT_2;

/// Confusable pairs `(a, b, f)`: in the target, `a` and `b` each move a
/// fraction `f` of their gap toward the other.
pub const CONFUSABLE_PAIRS: [(usize, usize, f64); 2] = [(0, 1, 0.35), (3, 5, 0.2)];

/// Target spreads relative to the source.
pub const STDDEV_SCALE: f64 = 0.7;

pub fn source_spec() -> DomainSpec {
    DomainSpec {
        num_classes: NUM_CLASSES,
        feature_dim: FEATURE_DIM,
        class_means: vec![
            vec![0.0, 0.0, 0.0, 0.0],
            vec![PAIR, 0.0, 0.0, PAIR],
            vec![0.0, RING, 0.0, 0.0],
            vec![0.0, -RING, 0.0, 0.0],
            vec![0.0, 0.0, RING, 0.0],
            vec![0.0, 0.0, -RING, 0.0],
        ],
        class_stddevs: vec![vec![0.8; FEATURE_DIM]; NUM_CLASSES],
        class_priors: vec![0.25, 0.15, 0.2, 0.15, 0.15, 0.1],
        layout: Layout::BandsPlusRectangles {
            rects_min: 1,
            rects_max: 3,
            side_min: 3,
            side_max: 8,
            classes: vec![1, 3, 5],
        },
        seed: SOURCE_SEED,
    }
}

/// Per-class mean shift from source to target.
pub fn target_shift() -> Vec<Vec<f64>> {
    let src = source_spec();
    let mut shift = vec![vec![0.0; FEATURE_DIM]; NUM_CLASSES];
    for &(a, b, f) in &CONFUSABLE_PAIRS {
        for j in 0..FEATURE_DIM {
            let gap = src.class_means[b][j] - src.class_means[a][j];
            shift[a][j] = f * gap;
            shift[b][j] = -f * gap;
        }
    }
    shift
}

pub fn target_spec() -> DomainSpec {
    make_shifted_domain(&source_spec(), &target_shift(), STDDEV_SCALE)
        .expect("benchmark shift matches the source shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn benchmark_specs_are_valid() {
        source_spec().validate().unwrap();
        target_spec().validate().unwrap();
    }

    #[test]
    fn confusable_pairs_get_closer() {
        let (s, t) = (source_spec(), target_spec());
        let dist = |m: &Vec<Vec<f64>>, a: usize, b: usize| -> f64 {
            m[a].iter().zip(&m[b]).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
        };
        for &(a, b, _) in &CONFUSABLE_PAIRS {
            assert!(dist(&t.class_means, a, b) < dist(&s.class_means, a, b));
        }
    }
}

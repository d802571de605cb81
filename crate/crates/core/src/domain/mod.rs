//! Seeded synthetic segmentation domains.
//!
//! A [`DomainSpec`] describes a scene generator: a label layout made of
//! horizontal class bands (optionally with random rectangles stamped on top)
//! and a diagonal-Gaussian feature emission per class. Shifting the class
//! means and scaling the spreads of a source spec gives a target domain that
//! is "similar yet different".

pub mod benchmark;
mod io;

pub use io::{read_dataset, write_dataset};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::mix;
use crate::tensor::{FeatureMap, LabelGrid};

/// Largest class count representable in a mask (255 is reserved as "none").
pub const MAX_CLASSES: usize = 254;

const LAYOUT_STREAM: u64 = 0x4c41_594f_5554;
const SHIFT_STREAM: u64 = 0x0053_4849_4654;

/// How the label grid of a scene is drawn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Layout {
    /// `C` horizontal bands, heights proportional to the class priors.
    HorizontalBands,
    /// Bands, then between `rects_min` and `rects_max` random rectangles with
    /// sides in `side_min..=side_max`, each filled with a class from `classes`.
    BandsPlusRectangles {
        rects_min: usize,
        rects_max: usize,
        side_min: usize,
        side_max: usize,
        classes: Vec<u8>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub num_classes: usize,
    pub feature_dim: usize,
    /// `C×d`
    pub class_means: Vec<Vec<f64>>,
    /// `C×d`, strictly positive.
    pub class_stddevs: Vec<Vec<f64>>,
    pub class_priors: Vec<f64>,
    pub layout: Layout,
    pub seed: u64,
}

impl DomainSpec {
    pub fn validate(&self) -> Result<()> {
        let (c, d) = (self.num_classes, self.feature_dim);
        if !(2..=MAX_CLASSES).contains(&c) {
            return Err(Error::Config(format!("num_classes must be in 2..={MAX_CLASSES}, got {c}")));
        }
        if d == 0 {
            return Err(Error::Config("feature_dim must be at least 1".into()));
        }
        let matrix_ok = |m: &Vec<Vec<f64>>| m.len() == c && m.iter().all(|row| row.len() == d);
        if !matrix_ok(&self.class_means) || !matrix_ok(&self.class_stddevs) {
            return Err(Error::Shape(format!("class_means and class_stddevs must be {c}×{d}")));
        }
        if self.class_means.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Config("class_means must be finite".into()));
        }
        if self.class_stddevs.iter().flatten().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Config("class_stddevs must be finite and strictly positive".into()));
        }
        if self.class_priors.len() != c {
            return Err(Error::Shape(format!("class_priors must have {c} entries")));
        }
        if self.class_priors.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::Config("class_priors must be non-negative".into()));
        }
        let total: f64 = self.class_priors.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("class_priors sum to {total}, not 1")));
        }
        if let Layout::BandsPlusRectangles {
            rects_min,
            rects_max,
            side_min,
            side_max,
            classes,
        } = &self.layout
        {
            if rects_min > rects_max || *side_min == 0 || side_min > side_max {
                return Err(Error::Layout("rectangle count/side ranges are inverted or empty".into()));
            }
            if classes.is_empty() && *rects_max > 0 {
                return Err(Error::Layout("rectangles need at least one class".into()));
            }
            if let Some(&bad) = classes.iter().find(|&&k| usize::from(k) >= c) {
                return Err(Error::ClassOutOfRange {
                    class: bad.into(),
                    num_classes: c,
                });
            }
        }
        Ok(())
    }
}

/// An axis-aligned block of pixels to relabel.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rect {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
    pub class: u8,
}

/// Relabels the part of `rect` inside the grid; returns how many labels changed.
pub fn stamp_rect(grid: &mut LabelGrid, rect: &Rect) -> usize {
    let mut changed = 0;
    for r in rect.row..(rect.row + rect.height).min(grid.height()) {
        for c in rect.col..(rect.col + rect.width).min(grid.width()) {
            if grid.get(r, c) != rect.class {
                grid.set(r, c, rect.class);
                changed += 1;
            }
        }
    }
    changed
}

/// Row counts of the base bands: proportional to the priors, rounded by
/// largest remainder so the counts cover all `height` rows.
pub fn band_heights(priors: &[f64], height: usize) -> Result<Vec<usize>> {
    let exact: Vec<f64> = priors.iter().map(|p| p * height as f64).collect();
    let mut rows: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = rows.iter().sum();
    let mut order: Vec<usize> = (0..priors.len()).collect();
    // Stable sort keeps lower classes first among equal remainders.
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra)
    });
    for &k in order.iter().take(height.saturating_sub(assigned)) {
        rows[k] += 1;
    }
    if let Some(k) = rows.iter().position(|&r| r == 0) {
        return Err(Error::Layout(format!(
            "class {k} gets no rows in a {height}-row band layout"
        )));
    }
    Ok(rows)
}

/// Draws the label grid of one scene.
pub fn generate_layout(spec: &DomainSpec, sample_seed: u64, height: usize, width: usize) -> Result<LabelGrid> {
    if height < 4 || width < 4 {
        return Err(Error::Shape(format!("scenes must be at least 4×4, got {height}×{width}")));
    }
    let rows = band_heights(&spec.class_priors, height)?;
    let mut data = Vec::with_capacity(height * width);
    for (class, &n) in rows.iter().enumerate() {
        data.extend(std::iter::repeat_n(class as u8, n * width));
    }
    let mut grid = LabelGrid::new(height, width, data)?;

    if let Layout::BandsPlusRectangles {
        rects_min,
        rects_max,
        side_min,
        side_max,
        classes,
    } = &spec.layout
    {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(mix(spec.seed, sample_seed), LAYOUT_STREAM));
        let count = rng.gen_range(*rects_min..=*rects_max);
        for _ in 0..count {
            let class = classes[rng.gen_range(0..classes.len())];
            let rh = rng.gen_range(*side_min..=*side_max).min(height);
            let rw = rng.gen_range(*side_min..=*side_max).min(width);
            let row = rng.gen_range(0..=height - rh);
            let col = rng.gen_range(0..=width - rw);
            stamp_rect(
                &mut grid,
                &Rect {
                    row,
                    col,
                    height: rh,
                    width: rw,
                    class,
                },
            );
        }
    }
    Ok(grid)
}

/// Draws per-pixel features for a label grid. Pixel `i` uses its own ChaCha
/// stream of the generator keyed by `(spec.seed, sample_seed)`, so each draw
/// depends only on those two seeds and the pixel index.
pub fn emit_features(labels: &LabelGrid, spec: &DomainSpec, sample_seed: u64) -> Result<FeatureMap> {
    let d = spec.feature_dim;
    let base = ChaCha8Rng::seed_from_u64(mix(spec.seed, sample_seed));
    let mut data = Vec::with_capacity(labels.len() * d);
    for (i, &class) in labels.as_slice().iter().enumerate() {
        let k = usize::from(class);
        if k >= spec.num_classes {
            return Err(Error::ClassOutOfRange {
                class: k,
                num_classes: spec.num_classes,
            });
        }
        let mut rng = base.clone();
        rng.set_stream(i as u64);
        for j in 0..d {
            let z: f64 = rng.sample(StandardNormal);
            data.push(spec.class_means[k][j] + spec.class_stddevs[k][j] * z);
        }
    }
    FeatureMap::new(labels.height(), labels.width(), d, data)
}

/// Target spec: means moved by `shift`, spreads scaled, fresh seed.
pub fn make_shifted_domain(source: &DomainSpec, shift: &[Vec<f64>], stddev_scale: f64) -> Result<DomainSpec> {
    if shift.len() != source.num_classes || shift.iter().any(|r| r.len() != source.feature_dim) {
        return Err(Error::Shape(format!(
            "shift must be {}×{}",
            source.num_classes, source.feature_dim
        )));
    }
    if !(stddev_scale.is_finite() && stddev_scale > 0.0) {
        return Err(Error::Config("stddev_scale must be positive".into()));
    }
    let mut target = source.clone();
    for (row, delta) in target.class_means.iter_mut().zip(shift) {
        for (m, s) in row.iter_mut().zip(delta) {
            *m += s;
        }
    }
    for row in &mut target.class_stddevs {
        for s in row.iter_mut() {
            *s *= stddev_scale;
        }
    }
    target.seed = mix(source.seed, SHIFT_STREAM);
    Ok(target)
}

/// One scene: features plus its (held-out) labels.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSample {
    pub sample_id: u64,
    pub features: FeatureMap,
    pub labels: LabelGrid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    Source,
    TargetTrain,
    TargetTest,
}

impl Role {
    /// Per-sample seed; roles never share seeds.
    pub fn sample_seed(self, sample_id: u64) -> u64 {
        let tag = match self {
            Role::Source => 1u64,
            Role::TargetTrain => 2,
            Role::TargetTest => 3,
        };
        (tag << 40) | sample_id
    }
}

pub fn generate_sample(spec: &DomainSpec, role: Role, sample_id: u64, height: usize, width: usize) -> Result<SceneSample> {
    let seed = role.sample_seed(sample_id);
    let labels = generate_layout(spec, seed, height, width)?;
    let features = emit_features(&labels, spec, seed)?;
    Ok(SceneSample {
        sample_id,
        features,
        labels,
    })
}

/// A generated or loaded dataset. Sample ids run `0..len`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub spec: DomainSpec,
    pub role: Role,
    pub samples: Vec<SceneSample>,
}

impl Dataset {
    pub fn generate(spec: &DomainSpec, role: Role, len: usize, height: usize, width: usize) -> Result<Self> {
        spec.validate()?;
        let samples = (0..len as u64)
            .map(|id| generate_sample(spec, role, id, height, width))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            spec: spec.clone(),
            role,
            samples,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        for (i, s) in self.samples.iter().enumerate() {
            if s.sample_id != i as u64 {
                return Err(Error::Format(format!("sample {i} has id {}", s.sample_id)));
            }
            if let Some(&bad) = s.labels.as_slice().iter().find(|&&l| usize::from(l) >= self.spec.num_classes) {
                return Err(Error::ClassOutOfRange {
                    class: bad.into(),
                    num_classes: self.spec.num_classes,
                });
            }
            if let Some(pixel) = s.features.first_non_finite() {
                return Err(Error::NonFinite { pixel });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_class(layout: Layout) -> DomainSpec {
        DomainSpec {
            num_classes: 2,
            feature_dim: 1,
            class_means: vec![vec![-1.0], vec![1.0]],
            class_stddevs: vec![vec![0.5], vec![0.5]],
            class_priors: vec![0.5, 0.5],
            layout,
            seed: 11,
        }
    }

    #[test]
    fn two_equal_bands() {
        let grid = generate_layout(&two_class(Layout::HorizontalBands), 0, 4, 4).unwrap();
        assert_eq!(
            grid.as_slice(),
            &[0, 0, 0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 1, 1, 1]
        );
    }

    #[test]
    fn band_heights_follow_priors() {
        assert_eq!(band_heights(&[0.5, 0.25, 0.25], 8).unwrap(), vec![4, 2, 2]);
        assert_eq!(band_heights(&[0.4, 0.3, 0.3], 5).unwrap().iter().sum::<usize>(), 5);
        assert!(matches!(band_heights(&[0.95, 0.05], 4), Err(Error::Layout(_))));
    }

    #[test]
    fn stamping_relabels_exactly_the_rectangle() {
        let mut grid = LabelGrid::filled(8, 8, 0);
        let rect = Rect {
            row: 0,
            col: 0,
            height: 2,
            width: 2,
            class: 2,
        };
        assert_eq!(stamp_rect(&mut grid, &rect), 4);
        assert_eq!(grid.as_slice().iter().filter(|&&l| l == 2).count(), 4);
    }

    #[test]
    fn rectangles_only_use_listed_classes() {
        let mut spec = two_class(Layout::BandsPlusRectangles {
            rects_min: 2,
            rects_max: 2,
            side_min: 2,
            side_max: 3,
            classes: vec![2],
        });
        spec.num_classes = 3;
        spec.class_means.push(vec![3.0]);
        spec.class_stddevs.push(vec![0.5]);
        spec.class_priors = vec![0.5, 0.5, 0.0];
        // A zero-prior class has no rows in the base bands.
        assert!(generate_layout(&spec, 1, 8, 8).is_err());
        spec.class_priors = vec![0.45, 0.45, 0.1];
        let grid = generate_layout(&spec, 1, 10, 10).unwrap();
        assert!(grid.as_slice().iter().filter(|&&l| l == 2).count() >= 10);
    }

    #[test]
    fn tiny_scenes_are_rejected() {
        assert!(generate_layout(&two_class(Layout::HorizontalBands), 0, 3, 8).is_err());
    }

    #[test]
    fn vanishing_spread_emits_the_mean() {
        let mut spec = two_class(Layout::HorizontalBands);
        spec.class_stddevs = vec![vec![f64::MIN_POSITIVE], vec![f64::MIN_POSITIVE]];
        let labels = generate_layout(&spec, 3, 4, 4).unwrap();
        let f = emit_features(&labels, &spec, 3).unwrap();
        for (i, &l) in labels.as_slice().iter().enumerate() {
            assert_eq!(f.pixel(i)[0], spec.class_means[usize::from(l)][0]);
        }
    }

    #[test]
    fn generation_is_bitwise_deterministic() {
        let spec = two_class(Layout::HorizontalBands);
        let a = generate_sample(&spec, Role::TargetTrain, 5, 8, 8).unwrap();
        let b = generate_sample(&spec, Role::TargetTrain, 5, 8, 8).unwrap();
        assert_eq!(a, b);
        let c = generate_sample(&spec, Role::TargetTest, 5, 8, 8).unwrap();
        assert_ne!(a.features, c.features);
    }

    #[test]
    fn empirical_means_match_class_means() {
        // n = 10_000 pixels of a single class; the sample mean must lie
        // within 5σ/√n of the class mean in every dimension.
        let spec = DomainSpec {
            num_classes: 2,
            feature_dim: 3,
            class_means: vec![vec![1.0, -2.0, 0.5], vec![0.0, 0.0, 0.0]],
            class_stddevs: vec![vec![0.7, 1.3, 0.2], vec![1.0, 1.0, 1.0]],
            class_priors: vec![0.5, 0.5],
            layout: Layout::HorizontalBands,
            seed: 99,
        };
        let labels = LabelGrid::filled(100, 100, 0);
        let f = emit_features(&labels, &spec, 17).unwrap();
        let n = 10_000.0;
        for j in 0..3 {
            let mean: f64 = (0..10_000).map(|i| f.pixel(i)[j]).sum::<f64>() / n;
            let bound = 5.0 * spec.class_stddevs[0][j] / n.sqrt();
            assert!((mean - spec.class_means[0][j]).abs() < bound, "dim {j}: {mean}");
        }
    }

    #[test]
    fn identity_shift_only_changes_seed() {
        let src = two_class(Layout::HorizontalBands);
        let tgt = make_shifted_domain(&src, &[vec![0.0], vec![0.0]], 1.0).unwrap();
        assert_ne!(tgt.seed, src.seed);
        assert_eq!(DomainSpec { seed: src.seed, ..tgt }, src);
    }

    #[test]
    fn shift_shape_is_checked() {
        let src = two_class(Layout::HorizontalBands);
        assert!(make_shifted_domain(&src, &[vec![0.0]], 1.0).is_err());
    }

    #[test]
    fn validation_catches_bad_specs() {
        let mut s = two_class(Layout::HorizontalBands);
        s.class_stddevs[0][0] = 0.0;
        assert!(s.validate().is_err());
        let mut s = two_class(Layout::HorizontalBands);
        s.class_priors = vec![0.5, 0.6];
        assert!(s.validate().is_err());
        assert!(two_class(Layout::HorizontalBands).validate().is_ok());
    }
}

//! Dense per-pixel containers shared by every stage.
//!
//! All three are stored pixel-major (row-major over `H×W`, with the per-pixel
//! vector contiguous). [`ProbabilityMap`] converts to and from the
//! class-major layout used on the wire.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `Σ_c p_c = 1` for every pixel of a [`ProbabilityMap`].
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// An `H×W×d` feature tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "feature buffer has {} values, expected {height}×{width}×{channels}",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn num_pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn pixel(&self, index: usize) -> &[f64] {
        &self.data[index * self.channels..(index + 1) * self.channels]
    }

    pub fn pixel_mut(&mut self, index: usize) -> &mut [f64] {
        &mut self.data[index * self.channels..(index + 1) * self.channels]
    }

    pub fn at(&self, row: usize, col: usize) -> &[f64] {
        self.pixel(row * self.width + col)
    }

    /// First pixel holding a NaN or infinity, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.data
            .iter()
            .position(|v| !v.is_finite())
            .map(|i| i / self.channels.max(1))
    }

    /// Mirrors columns (`col -> W-1-col`).
    pub fn flip_horizontal(&self) -> Self {
        let mut out = self.clone();
        for r in 0..self.height {
            for c in 0..self.width {
                out.pixel_mut(r * self.width + c)
                    .copy_from_slice(self.at(r, self.width - 1 - c));
            }
        }
        out
    }
}

/// An `H×W` grid of class indices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelGrid {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl LabelGrid {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "label buffer has {} values, expected {height}×{width}",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, class: u8) -> Self {
        Self {
            height,
            width,
            data: vec![class; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, class: u8) {
        self.data[row * self.width + col] = class;
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.data
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut out = self.clone();
        for r in 0..self.height {
            for c in 0..self.width {
                out.data[r * self.width + c] = self.get(r, self.width - 1 - c);
            }
        }
        out
    }
}

/// Per-pixel class distributions, `C` values per pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityMap {
    classes: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ProbabilityMap {
    /// Builds a map from a pixel-major buffer, checking the simplex invariant.
    pub fn new(classes: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != classes * height * width {
            return Err(Error::Shape(format!(
                "probability buffer has {} values, expected {classes}×{height}×{width}",
                data.len()
            )));
        }
        let map = Self {
            classes,
            height,
            width,
            data,
        };
        map.check_simplex()?;
        Ok(map)
    }

    /// Builds a map from the class-major (`C×H×W`) wire layout.
    pub fn from_class_major(classes: usize, height: usize, width: usize, probs: &[f64]) -> Result<Self> {
        let n = height * width;
        if probs.len() != classes * n {
            return Err(Error::Shape(format!(
                "probability buffer has {} values, expected {classes}×{height}×{width}",
                probs.len()
            )));
        }
        let mut data = vec![0.0; probs.len()];
        for c in 0..classes {
            for i in 0..n {
                data[i * classes + c] = probs[c * n + i];
            }
        }
        Self::new(classes, height, width, data)
    }

    /// Skips validation; callers guarantee normalised rows.
    pub(crate) fn from_raw(classes: usize, height: usize, width: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), classes * height * width);
        Self {
            classes,
            height,
            width,
            data,
        }
    }

    pub fn uniform(classes: usize, height: usize, width: usize) -> Self {
        Self::from_raw(
            classes,
            height,
            width,
            vec![1.0 / classes as f64; classes * height * width],
        )
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn pixel(&self, index: usize) -> &[f64] {
        &self.data[index * self.classes..(index + 1) * self.classes]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn to_class_major(&self) -> Vec<f64> {
        let n = self.num_pixels();
        let mut out = vec![0.0; self.data.len()];
        for i in 0..n {
            for c in 0..self.classes {
                out[c * n + i] = self.data[i * self.classes + c];
            }
        }
        out
    }

    pub fn argmax_grid(&self) -> LabelGrid {
        let data = (0..self.num_pixels())
            .map(|i| argmax(self.pixel(i)) as u8)
            .collect();
        LabelGrid {
            height: self.height,
            width: self.width,
            data,
        }
    }

    /// Largest elementwise absolute difference; infinite on shape mismatch.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        if self.classes != other.classes || self.height != other.height || self.width != other.width {
            return f64::INFINITY;
        }
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn check_simplex(&self) -> Result<()> {
        for i in 0..self.num_pixels() {
            let p = self.pixel(i);
            if let Some(v) = p.iter().find(|v| !v.is_finite() || **v < 0.0) {
                return Err(Error::Simplex {
                    pixel: i,
                    reason: format!("entry {v} is negative or non-finite"),
                });
            }
            let sum: f64 = p.iter().sum();
            if (sum - 1.0).abs() > SIMPLEX_TOL {
                return Err(Error::Simplex {
                    pixel: i,
                    reason: format!("entries sum to {sum}"),
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax(&[0.4, 0.4, 0.2]), 0);
        assert_eq!(argmax(&[0.1, 0.45, 0.45]), 1);
        assert_eq!(argmax(&[0.1, 0.2, 0.7]), 2);
    }

    #[test]
    fn class_major_round_trip() {
        let pm = ProbabilityMap::new(2, 1, 2, vec![0.25, 0.75, 0.5, 0.5]).unwrap();
        let wire = pm.to_class_major();
        assert_eq!(wire, vec![0.25, 0.5, 0.75, 0.5]);
        assert_eq!(ProbabilityMap::from_class_major(2, 1, 2, &wire).unwrap(), pm);
    }

    #[test]
    fn simplex_violations_are_rejected() {
        assert!(matches!(
            ProbabilityMap::new(2, 1, 1, vec![0.6, 0.6]),
            Err(Error::Simplex { pixel: 0, .. })
        ));
        assert!(ProbabilityMap::new(2, 1, 1, vec![1.5, -0.5]).is_err());
        assert!(ProbabilityMap::new(2, 1, 1, vec![f64::NAN, 1.0]).is_err());
        assert!(ProbabilityMap::new(2, 1, 1, vec![0.5, 0.5 + 1e-10]).is_ok());
    }

    #[test]
    fn flips_mirror_columns() {
        let g = LabelGrid::new(1, 3, vec![0, 1, 2]).unwrap();
        assert_eq!(g.flip_horizontal().as_slice(), &[2, 1, 0]);
        let f = FeatureMap::new(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(f.flip_horizontal().as_slice(), &[3.0, 4.0, 1.0, 2.0]);
    }
}

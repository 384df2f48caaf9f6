//! `ImageGrid`: the C×H×W pixel tensor every image-side component operates on.

use ndarray::Array3;

use crate::error::{LabError, Result};

/// A C×H×W grid of pixel values in `[0, 1]`.
///
/// This is the attack's optimization variable. All transforms and attacks
/// treat grids as immutable values and return fresh ones.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    data: Array3<f64>,
}

impl ImageGrid {
    /// Wrap an existing array. Values are the caller's responsibility;
    /// use [`ImageGrid::validate_unit_range`] where the `[0,1]` invariant matters.
    pub fn new(data: Array3<f64>) -> Self {
        Self { data }
    }

    /// All-zero grid with the given channel/height/width.
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self { data: Array3::zeros((channels, height, width)) }
    }

    /// Grid filled with one value.
    pub fn constant(channels: usize, height: usize, width: usize, value: f64) -> Self {
        Self { data: Array3::from_elem((channels, height, width), value) }
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[2]
    }

    /// (channels, height, width)
    pub fn dims(&self) -> (usize, usize, usize) {
        let s = self.data.shape();
        (s[0], s[1], s[2])
    }

    pub fn as_array(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn as_array_mut(&mut self) -> &mut Array3<f64> {
        &mut self.data
    }

    pub fn into_array(self) -> Array3<f64> {
        self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c, y, x)]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c, y, x)] = v;
    }

    /// Largest absolute per-pixel difference to `other`.
    pub fn linf_distance(&self, other: &ImageGrid) -> f64 {
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Error if any value falls outside `[0, 1]` or is not finite.
    pub fn validate_unit_range(&self) -> Result<()> {
        for &v in self.data.iter() {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(LabError::Config(format!(
                    "pixel value {v} outside the unit range [0, 1]"
                )));
            }
        }
        Ok(())
    }

    /// Clamp every pixel into `[0, 1]`, returning a new grid.
    pub fn clamped_unit(&self) -> ImageGrid {
        ImageGrid::new(self.data.mapv(|v| v.clamp(0.0, 1.0)))
    }

    /// Sorted copy of all pixel values; used by permutation-invariance checks.
    pub fn sorted_values(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.data.iter().copied().collect();
        v.sort_by(|a, b| a.partial_cmp(b).expect("pixel values must be comparable"));
        v
    }

    /// Exact equality of shape and every pixel bit.
    pub fn bit_equal(&self, other: &ImageGrid) -> bool {
        self.data.shape() == other.data.shape()
            && self
                .data
                .iter()
                .zip(other.data.iter())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linf_distance_is_max_abs_diff() {
        let mut a = ImageGrid::zeros(1, 2, 2);
        let mut b = ImageGrid::zeros(1, 2, 2);
        a.set(0, 0, 0, 0.5);
        b.set(0, 1, 1, 0.25);
        assert_eq!(a.linf_distance(&b), 0.5);
    }

    #[test]
    fn unit_range_rejects_out_of_bounds() {
        let mut g = ImageGrid::zeros(1, 1, 1);
        assert!(g.validate_unit_range().is_ok());
        g.set(0, 0, 0, 1.5);
        assert!(g.validate_unit_range().is_err());
        g.set(0, 0, 0, f64::NAN);
        assert!(g.validate_unit_range().is_err());
    }
}

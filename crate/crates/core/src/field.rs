//! Dense multi-channel 2-D fields, the basic value type of the engine.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::{Error, Result};

/// A `channels x height x width` grid of f64 samples, row-major within each
/// channel plane. All values are finite by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    channels: usize,
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl Field {
    pub fn new(channels: usize, height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::Dimension(format!(
                "field dimensions must be positive, got {channels}x{height}x{width}"
            )));
        }
        let expected = channels * height * width;
        if values.len() != expected {
            return Err(Error::Dimension(format!(
                "value buffer holds {} samples, shape {}x{}x{} needs {}",
                values.len(),
                channels,
                height,
                width,
                expected
            )));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite sample {bad} in field")));
        }
        Ok(Self { channels, height, width, values })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Result<Self> {
        Self::new(channels, height, width, vec![0.0; channels * height * width])
    }

    pub fn constant(channels: usize, height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(channels, height, width, vec![value; channels * height * width])
    }

    /// Builds a field by evaluating `f(channel, row, col)` at every site.
    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    values.push(f(c, y, x));
                }
            }
        }
        Self::new(channels, height, width, values)
    }

    /// Unit white noise: every sample an independent standard normal draw.
    pub fn standard_normal<R: Rng>(
        channels: usize,
        height: usize,
        width: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let n = channels * height * width;
        let mut values = Vec::with_capacity(n);
        for _ in 0..n {
            values.push(rng.sample::<f64, _>(StandardNormal));
        }
        Self::new(channels, height, width, values)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    /// Total number of samples.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn index(&self, channel: usize, row: usize, col: usize) -> usize {
        (channel * self.height + row) * self.width + col
    }

    #[inline]
    pub fn get(&self, channel: usize, row: usize, col: usize) -> f64 {
        self.values[self.index(channel, row, col)]
    }

    #[inline]
    pub fn set(&mut self, channel: usize, row: usize, col: usize, value: f64) {
        let i = self.index(channel, row, col);
        self.values[i] = value;
    }

    pub fn same_shape(&self, other: &Field) -> bool {
        self.shape() == other.shape()
    }

    fn check_shape(&self, other: &Field, op: &str) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::Dimension(format!(
                "{op}: shape mismatch {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: &Field) -> Result<Field> {
        self.check_shape(other, "add")?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + b)
            .collect();
        Field::new(self.channels, self.height, self.width, values)
    }

    pub fn sub(&self, other: &Field) -> Result<Field> {
        self.check_shape(other, "sub")?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect();
        Field::new(self.channels, self.height, self.width, values)
    }

    pub fn scale(&self, factor: f64) -> Result<Field> {
        let values = self.values.iter().map(|a| a * factor).collect();
        Field::new(self.channels, self.height, self.width, values)
    }

    /// `self + factor * other`, allocating the result.
    pub fn axpy(&self, factor: f64, other: &Field) -> Result<Field> {
        self.check_shape(other, "axpy")?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + factor * b)
            .collect();
        Field::new(self.channels, self.height, self.width, values)
    }

    /// In-place `self += factor * other`.
    pub fn axpy_assign(&mut self, factor: f64, other: &Field) -> Result<()> {
        self.check_shape(other, "axpy_assign")?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += factor * b;
        }
        Ok(())
    }

    pub fn dot(&self, other: &Field) -> Result<f64> {
        self.check_shape(other, "dot")?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum())
    }

    /// Squared Euclidean norm over all samples.
    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// Largest absolute sample.
    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest absolute elementwise difference.
    pub fn max_abs_diff(&self, other: &Field) -> Result<f64> {
        self.check_shape(other, "max_abs_diff")?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    /// Relative distance `|a - b| / max(1, |a|, |b|)` in the sup norm, the
    /// comparison used by the round-trip checks.
    pub fn rel_sup_dist(&self, other: &Field) -> Result<f64> {
        self.check_shape(other, "rel_sup_dist")?;
        Ok(self.values.iter().zip(&other.values).fold(0.0, |m, (a, b)| {
            let denom = 1.0_f64.max(a.abs()).max(b.abs());
            m.max((a - b).abs() / denom)
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rejects_wrong_buffer_length() {
        let err = Field::new(1, 2, 2, vec![0.0; 3]).unwrap_err();
        assert!(matches!(err, Error::Dimension(_)), "got {err:?}");
    }

    #[test]
    fn rejects_non_finite_samples() {
        let err = Field::new(1, 1, 2, vec![0.0, f64::NAN]).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)), "got {err:?}");
        let err = Field::new(1, 1, 2, vec![f64::INFINITY, 0.0]).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)), "got {err:?}");
    }

    #[test]
    fn rejects_zero_dimension() {
        assert!(Field::new(0, 2, 2, vec![]).is_err());
        assert!(Field::new(1, 0, 2, vec![]).is_err());
    }

    #[test]
    fn indexing_is_row_major_per_channel() {
        let f = Field::new(2, 2, 3, (0..12).map(|v| v as f64).collect()).unwrap();
        assert_eq!(f.get(0, 0, 0), 0.0);
        assert_eq!(f.get(0, 1, 2), 5.0);
        assert_eq!(f.get(1, 0, 0), 6.0);
        assert_eq!(f.get(1, 1, 1), 10.0);
    }

    #[test]
    fn axpy_matches_scale_and_add() {
        let a = Field::new(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Field::new(1, 2, 2, vec![0.5, -0.5, 1.5, -2.0]).unwrap();
        let via_axpy = a.axpy(2.0, &b).unwrap();
        let via_scale = a.add(&b.scale(2.0).unwrap()).unwrap();
        assert_eq!(via_axpy, via_scale);
    }

    #[test]
    fn standard_normal_is_seed_deterministic() {
        let mut r1 = ChaCha8Rng::seed_from_u64(7);
        let mut r2 = ChaCha8Rng::seed_from_u64(7);
        let a = Field::standard_normal(2, 4, 4, &mut r1).unwrap();
        let b = Field::standard_normal(2, 4, 4, &mut r2).unwrap();
        assert_eq!(a, b);
    }
}

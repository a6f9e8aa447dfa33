//! Deterministic synthetic fields for datasets and checks.

use rand::Rng;

use crate::{Field, Result};

/// Alternating `0.0` / `1.0` squares with the given period (in samples).
pub fn checkerboard(channels: usize, height: usize, width: usize, period: usize) -> Result<Field> {
    let p = period.max(1);
    Field::from_fn(channels, height, width, |_, y, x| {
        if (y / p + x / p) % 2 == 0 {
            0.0
        } else {
            1.0
        }
    })
}

/// Isotropic Gaussian bump centered at `(cy, cx)` in relative coordinates
/// (0..1), with the given relative radius. Peak value 1.
pub fn blob(
    channels: usize,
    height: usize,
    width: usize,
    cy: f64,
    cx: f64,
    radius: f64,
) -> Result<Field> {
    let r = radius.max(1e-6);
    Field::from_fn(channels, height, width, |_, y, x| {
        let dy = (y as f64 + 0.5) / height as f64 - cy;
        let dx = (x as f64 + 0.5) / width as f64 - cx;
        (-(dy * dy + dx * dx) / (2.0 * r * r)).exp()
    })
}

/// Linear ramp from 0 to 1 along a direction: `axis` 0 is vertical,
/// 1 horizontal, 2 diagonal.
pub fn gradient(channels: usize, height: usize, width: usize, axis: usize) -> Result<Field> {
    Field::from_fn(channels, height, width, |_, y, x| {
        let v = y as f64 / (height - 1).max(1) as f64;
        let h = x as f64 / (width - 1).max(1) as f64;
        match axis % 3 {
            0 => v,
            1 => h,
            _ => 0.5 * (v + h),
        }
    })
}

/// The four-image toy dataset used by the cascade checks: a checkerboard,
/// both axis gradients, and a centered blob, all in [0, 1].
pub fn four_image_dataset(channels: usize, height: usize, width: usize) -> Result<Vec<Field>> {
    Ok(vec![
        checkerboard(channels, height, width, height.max(4) / 4)?,
        gradient(channels, height, width, 0)?,
        gradient(channels, height, width, 1)?,
        blob(channels, height, width, 0.5, 0.5, 0.2)?,
    ])
}

/// `count` random fields with i.i.d. uniform samples in `[lo, hi]`.
pub fn uniform_dataset<R: Rng>(
    count: usize,
    channels: usize,
    height: usize,
    width: usize,
    lo: f64,
    hi: f64,
    rng: &mut R,
) -> Result<Vec<Field>> {
    (0..count)
        .map(|_| Field::from_fn(channels, height, width, |_, _, _| rng.gen_range(lo..=hi)))
        .collect()
}

//! Resolution operators: block-average downsampling, nearest-neighbor
//! upsampling, Laplacian pyramid analysis/synthesis, and a two-level
//! orthonormal Haar transform.

use crate::{Error, Field, Result};

fn check_factor(factor: usize) -> Result<()> {
    if factor == 0 {
        return Err(Error::Dimension("resampling factor must be >= 1".into()));
    }
    Ok(())
}

/// Averages each `factor x factor` block per channel. Requires both spatial
/// dimensions to be divisible by `factor`.
pub fn downsample(x: &Field, factor: usize) -> Result<Field> {
    check_factor(factor)?;
    let (c, h, w) = x.shape();
    if h % factor != 0 || w % factor != 0 {
        return Err(Error::Dimension(format!(
            "downsample by {factor} needs divisible dims, got {h}x{w}"
        )));
    }
    let (oh, ow) = (h / factor, w / factor);
    let inv = 1.0 / (factor * factor) as f64;
    let mut out = Field::zeros(c, oh, ow)?;
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for dy in 0..factor {
                    for dx in 0..factor {
                        acc += x.get(ch, oy * factor + dy, ox * factor + dx);
                    }
                }
                out.set(ch, oy, ox, acc * inv);
            }
        }
    }
    Ok(out)
}

/// Replicates each sample into a `factor x factor` block per channel.
pub fn upsample(x: &Field, factor: usize) -> Result<Field> {
    check_factor(factor)?;
    let (c, h, w) = x.shape();
    let (oh, ow) = (h * factor, w * factor);
    let mut out = Field::zeros(c, oh, ow)?;
    for ch in 0..c {
        for y in 0..h {
            for xx in 0..w {
                let v = x.get(ch, y, xx);
                for dy in 0..factor {
                    for dx in 0..factor {
                        out.set(ch, y * factor + dy, xx * factor + dx, v);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// A Laplacian pyramid: `bands[0]` is the finest residual, `bands[K-1]` the
/// coarse base. Each band is a factor of `factor` smaller than the previous.
#[derive(Debug, Clone, PartialEq)]
pub struct Pyramid {
    bands: Vec<Field>,
    factor: usize,
}

impl Pyramid {
    /// Wraps pre-built bands, validating the shape chain.
    pub fn new(bands: Vec<Field>, factor: usize) -> Result<Self> {
        check_factor(factor)?;
        if bands.is_empty() {
            return Err(Error::Dimension("pyramid needs at least one band".into()));
        }
        for i in 1..bands.len() {
            let (pc, ph, pw) = bands[i - 1].shape();
            let (c, h, w) = bands[i].shape();
            if c != pc || h * factor != ph || w * factor != pw {
                return Err(Error::Dimension(format!(
                    "band {} shape {:?} does not refine band {} shape {:?} by factor {}",
                    i + 1,
                    (c, h, w),
                    i,
                    (pc, ph, pw),
                    factor
                )));
            }
        }
        Ok(Self { bands, factor })
    }

    /// Analyzes `x` into `levels` bands. Band `i` (1-based) holds
    /// `down^(i-1)(x) - up(down^i(x))`; the last band is `down^(levels-1)(x)`.
    pub fn decompose(x: &Field, levels: usize, factor: usize) -> Result<Self> {
        check_factor(factor)?;
        if levels == 0 {
            return Err(Error::Dimension("pyramid needs at least one level".into()));
        }
        if factor < 2 && levels > 1 {
            return Err(Error::Dimension(
                "multi-level pyramid needs factor >= 2".into(),
            ));
        }
        let mut bands = Vec::with_capacity(levels);
        let mut current = x.clone();
        for _ in 0..levels - 1 {
            let coarse = downsample(&current, factor)?;
            let residual = current.sub(&upsample(&coarse, factor)?)?;
            bands.push(residual);
            current = coarse;
        }
        bands.push(current);
        Ok(Self { bands, factor })
    }

    /// Synthesizes the field: the sum of every band upsampled back to the
    /// finest resolution. Exact inverse of `decompose`.
    pub fn reconstruct(&self) -> Result<Field> {
        let mut acc = self.bands.last().expect("non-empty").clone();
        for band in self.bands.iter().rev().skip(1) {
            acc = band.add(&upsample(&acc, self.factor)?)?;
        }
        Ok(acc)
    }

    pub fn levels(&self) -> usize {
        self.bands.len()
    }

    pub fn factor(&self) -> usize {
        self.factor
    }

    /// Band `i`, 1-based: 1 is the finest residual.
    pub fn band(&self, i: usize) -> &Field {
        &self.bands[i - 1]
    }

    pub fn bands(&self) -> &[Field] {
        &self.bands
    }

    pub fn into_bands(self) -> Vec<Field> {
        self.bands
    }
}

// One orthonormal 2-D Haar step: each 2x2 block [a b; c d] maps to
// (a+b+c+d)/2, (a-b+c-d)/2, (a+b-c-d)/2, (a-b-c+d)/2 in four output
// channels. The 4x4 coefficient matrix is its own inverse transpose, so the
// step preserves the Euclidean norm exactly.
fn haar_step(x: &Field) -> Result<Field> {
    let (c, h, w) = x.shape();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Dimension(format!(
            "haar step needs even dims, got {h}x{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Field::zeros(4 * c, oh, ow)?;
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let a = x.get(ch, 2 * oy, 2 * ox);
                let b = x.get(ch, 2 * oy, 2 * ox + 1);
                let cc = x.get(ch, 2 * oy + 1, 2 * ox);
                let d = x.get(ch, 2 * oy + 1, 2 * ox + 1);
                out.set(4 * ch, oy, ox, 0.5 * (a + b + cc + d));
                out.set(4 * ch + 1, oy, ox, 0.5 * (a - b + cc - d));
                out.set(4 * ch + 2, oy, ox, 0.5 * (a + b - cc - d));
                out.set(4 * ch + 3, oy, ox, 0.5 * (a - b - cc + d));
            }
        }
    }
    Ok(out)
}

fn haar_unstep(y: &Field) -> Result<Field> {
    let (c4, h, w) = y.shape();
    if c4 % 4 != 0 {
        return Err(Error::Dimension(format!(
            "haar inverse step needs a channel count divisible by 4, got {c4}"
        )));
    }
    let c = c4 / 4;
    let mut out = Field::zeros(c, 2 * h, 2 * w)?;
    for ch in 0..c {
        for y0 in 0..h {
            for x0 in 0..w {
                let s = y.get(4 * ch, y0, x0);
                let dh = y.get(4 * ch + 1, y0, x0);
                let dv = y.get(4 * ch + 2, y0, x0);
                let dd = y.get(4 * ch + 3, y0, x0);
                out.set(ch, 2 * y0, 2 * x0, 0.5 * (s + dh + dv + dd));
                out.set(ch, 2 * y0, 2 * x0 + 1, 0.5 * (s - dh + dv - dd));
                out.set(ch, 2 * y0 + 1, 2 * x0, 0.5 * (s + dh - dv - dd));
                out.set(ch, 2 * y0 + 1, 2 * x0 + 1, 0.5 * (s - dh - dv + dd));
            }
        }
    }
    Ok(out)
}

/// Two nested orthonormal Haar steps: `(C, H, W) -> (16C, H/4, W/4)`.
/// Requires `H` and `W` divisible by 4. Norm-preserving.
pub fn haar_forward_2level(x: &Field) -> Result<Field> {
    let (_, h, w) = x.shape();
    if h % 4 != 0 || w % 4 != 0 {
        return Err(Error::Dimension(format!(
            "two-level haar needs dims divisible by 4, got {h}x{w}"
        )));
    }
    haar_step(&haar_step(x)?)
}

/// Exact inverse of [`haar_forward_2level`]: `(16C, H, W) -> (C, 4H, 4W)`.
pub fn haar_inverse_2level(y: &Field) -> Result<Field> {
    let (c, _, _) = y.shape();
    if c % 16 != 0 {
        return Err(Error::Dimension(format!(
            "two-level haar inverse needs a channel count divisible by 16, got {c}"
        )));
    }
    haar_unstep(&haar_unstep(y)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn f1(h: usize, w: usize, v: Vec<f64>) -> Field {
        Field::new(1, h, w, v).unwrap()
    }

    #[test]
    fn downsample_block_average() {
        let x = f1(2, 2, vec![1.0, 3.0, 5.0, 7.0]);
        let d = downsample(&x, 2).unwrap();
        assert_eq!(d.shape(), (1, 1, 1));
        assert_eq!(d.values(), &[4.0]);
    }

    #[test]
    fn upsample_replicates_blocks() {
        let x = f1(1, 2, vec![1.0, 2.0]);
        let u = upsample(&x, 2).unwrap();
        assert_eq!(u.shape(), (1, 2, 4));
        assert_eq!(u.values(), &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0]);
    }

    #[test]
    fn down_after_up_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for factor in [2usize, 3, 4] {
            let x = Field::standard_normal(2, 6, 6, &mut rng).unwrap();
            let back = downsample(&upsample(&x, factor).unwrap(), factor).unwrap();
            assert!(x.max_abs_diff(&back).unwrap() <= 1e-12);
        }
    }

    #[test]
    fn up_after_down_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Field::standard_normal(1, 8, 8, &mut rng).unwrap();
        let once = upsample(&downsample(&x, 2).unwrap(), 2).unwrap();
        let twice = upsample(&downsample(&once, 2).unwrap(), 2).unwrap();
        assert!(once.max_abs_diff(&twice).unwrap() <= 1e-12);
    }

    #[test]
    fn downsample_rejects_indivisible_dims() {
        let x = f1(3, 3, vec![0.0; 9]);
        assert!(matches!(downsample(&x, 2), Err(Error::Dimension(_))));
    }

    #[test]
    fn two_level_decompose_frozen_example() {
        let x = f1(2, 2, vec![1.0, 3.0, 5.0, 7.0]);
        let p = Pyramid::decompose(&x, 2, 2).unwrap();
        assert_eq!(p.band(2).values(), &[4.0]);
        assert_eq!(p.band(1).values(), &[-3.0, -1.0, 1.0, 3.0]);
        let back = p.reconstruct().unwrap();
        assert!(x.max_abs_diff(&back).unwrap() <= 1e-12);
    }

    #[test]
    fn single_level_pyramid_is_the_field_itself() {
        let x = f1(2, 2, vec![1.0, 3.0, 5.0, 7.0]);
        let p = Pyramid::decompose(&x, 1, 2).unwrap();
        assert_eq!(p.levels(), 1);
        assert_eq!(p.band(1), &x);
        assert_eq!(p.reconstruct().unwrap(), x);
    }

    #[test]
    fn residual_bands_have_zero_block_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Field::standard_normal(2, 16, 16, &mut rng).unwrap();
        let p = Pyramid::decompose(&x, 3, 2).unwrap();
        for i in 1..p.levels() {
            let pooled = downsample(p.band(i), 2).unwrap();
            assert!(
                pooled.max_abs() <= 1e-12,
                "band {i} block means leak: {}",
                pooled.max_abs()
            );
        }
    }

    #[test]
    fn decompose_rejects_too_many_levels() {
        let x = f1(4, 4, vec![0.0; 16]);
        assert!(Pyramid::decompose(&x, 4, 2).is_err());
    }

    #[test]
    fn pyramid_new_validates_shape_chain() {
        let fine = Field::zeros(1, 4, 4).unwrap();
        let coarse_ok = Field::zeros(1, 2, 2).unwrap();
        let coarse_bad = Field::zeros(1, 3, 3).unwrap();
        assert!(Pyramid::new(vec![fine.clone(), coarse_ok], 2).is_ok());
        assert!(Pyramid::new(vec![fine, coarse_bad], 2).is_err());
    }

    #[test]
    fn haar_shape_and_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Field::standard_normal(3, 8, 8, &mut rng).unwrap();
        let y = haar_forward_2level(&x).unwrap();
        assert_eq!(y.shape(), (48, 2, 2));
        let back = haar_inverse_2level(&y).unwrap();
        assert!(x.max_abs_diff(&back).unwrap() <= 1e-12);
    }

    #[test]
    fn haar_preserves_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Field::standard_normal(2, 12, 12, &mut rng).unwrap();
        let y = haar_forward_2level(&x).unwrap();
        let rel = (x.norm_sq() - y.norm_sq()).abs() / x.norm_sq();
        assert!(rel <= 1e-12, "norm drift {rel}");
    }

    #[test]
    fn haar_constant_input_concentrates_in_the_smooth_channel() {
        let x = Field::constant(1, 4, 4, 1.0).unwrap();
        let y = haar_forward_2level(&x).unwrap();
        // Norm preservation forces the single smooth coefficient to take the
        // full energy: sqrt(16) = 4.
        assert!((y.get(0, 0, 0) - 4.0).abs() <= 1e-12);
        let detail: f64 = y.values()[1..].iter().map(|v| v * v).sum();
        assert!(detail <= 1e-24);
    }

    #[test]
    fn haar_rejects_indivisible_dims() {
        let x = Field::zeros(1, 6, 6).unwrap();
        assert!(haar_forward_2level(&x).is_err());
    }
}

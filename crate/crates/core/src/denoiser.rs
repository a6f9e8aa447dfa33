//! Denoisers: exact posterior-mean oracles, a trainable per-bucket affine
//! family, baselines, and the mixture-of-experts router.
//!
//! A denoiser maps a noisy field at a known sigma to a prediction of the
//! clean field. The exact oracles make the squared-error optimum computable
//! in closed form, which is what every downstream check measures against.

use std::io::{Read, Write};
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::grid::Pyramid;
use crate::process::LaplacianProcess;
use crate::schedule::{Precondition, TrainSigmaDist};
use crate::{Error, Field, Result};

/// Common interface: predict the clean field from `noisy` at noise level
/// `sigma` (in the units of `level`'s resolution).
pub trait Denoiser: Send + Sync {
    fn denoise(&self, noisy: &Field, sigma: f64, level: usize) -> Result<Field>;
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::Numeric(format!(
            "denoising needs sigma > 0 and finite, got {sigma}"
        )));
    }
    Ok(())
}

/// Max-subtracted softmax over log weights; returns normalized weights.
fn softmax(log_w: &[f64]) -> Vec<f64> {
    let max = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    for v in &mut w {
        *v /= total;
    }
    w
}

fn logsumexp(log_w: &[f64]) -> f64 {
    let max = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + log_w.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
}

/// Exact posterior-mean denoiser over a finite dataset, under a given
/// forward process. Holds downsampled copies and band pyramids of every
/// point so it can answer at any pyramid level.
pub struct DatasetOracle {
    process: LaplacianProcess,
    /// `cache[l-1][j]`: point j pooled down to level l.
    cache: Vec<Vec<Field>>,
    /// `pyramids[l-1][j]`: bands `l..=levels` of point j, as the pyramid of
    /// its level-l pooled copy.
    pyramids: Vec<Vec<Pyramid>>,
}

impl DatasetOracle {
    pub fn new(points: Vec<Field>, process: LaplacianProcess) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Config("dataset oracle needs at least one point".into()));
        }
        let shape = points[0].shape();
        for (j, p) in points.iter().enumerate() {
            if p.shape() != shape {
                return Err(Error::Dimension(format!(
                    "dataset point {j} has shape {:?}, expected {:?}",
                    p.shape(),
                    shape
                )));
            }
        }
        let levels = process.levels();
        let factor = process.factor();
        let mut cache = Vec::with_capacity(levels);
        let mut pyramids = Vec::with_capacity(levels);
        cache.push(points);
        for level in 2..=levels {
            let prev = &cache[level - 2];
            let mut pooled = Vec::with_capacity(prev.len());
            for p in prev {
                pooled.push(crate::grid::downsample(p, factor)?);
            }
            cache.push(pooled);
        }
        for level in 1..=levels {
            let bands = levels - level + 1;
            let mut ps = Vec::with_capacity(cache[level - 1].len());
            for p in &cache[level - 1] {
                ps.push(Pyramid::decompose(p, bands, factor)?);
            }
            pyramids.push(ps);
        }
        Ok(Self { process, cache, pyramids })
    }

    pub fn process(&self) -> &LaplacianProcess {
        &self.process
    }

    pub fn len(&self) -> usize {
        self.cache[0].len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Dataset points pooled to `level`.
    pub fn points_at(&self, level: usize) -> Result<&[Field]> {
        if level == 0 || level > self.process.levels() {
            return Err(Error::Config(format!(
                "level {level} out of range 1..={}",
                self.process.levels()
            )));
        }
        Ok(&self.cache[level - 1])
    }

    fn check_query(&self, noisy: &Field, sigma: f64, level: usize) -> Result<()> {
        check_sigma(sigma)?;
        let points = self.points_at(level)?;
        if noisy.shape() != points[0].shape() {
            return Err(Error::Dimension(format!(
                "query shape {:?} does not match level-{level} cache shape {:?}",
                noisy.shape(),
                points[0].shape()
            )));
        }
        Ok(())
    }

    /// Forward means `mu(x_j, t)` of every point at this level and sigma.
    fn means(&self, sigma: f64, level: usize) -> Result<Vec<Field>> {
        let (alphas, _) = self.process.alphas_at_level(level, sigma)?;
        let points = &self.cache[level - 1];
        if alphas.iter().all(|a| *a == 1.0) {
            return Ok(points.clone());
        }
        self.pyramids[level - 1]
            .iter()
            .map(|p| self.process.mean_from_pyramid(p, &alphas))
            .collect()
    }

    /// Posterior point weights given the noisy observation.
    pub fn posterior_weights(&self, noisy: &Field, sigma: f64, level: usize) -> Result<Vec<f64>> {
        self.check_query(noisy, sigma, level)?;
        let means = self.means(sigma, level)?;
        let inv = 1.0 / (2.0 * sigma * sigma);
        let log_w: Vec<f64> = means
            .iter()
            .map(|mu| -noisy.sub(mu).map(|d| d.norm_sq()).unwrap_or(f64::INFINITY) * inv)
            .collect();
        Ok(softmax(&log_w))
    }

    /// Exact mixture log density of the forward marginal at this level:
    /// `log (1/J) sum_j N(noisy; mu(x_j), sigma^2 I)`.
    pub fn log_density(&self, noisy: &Field, sigma: f64, level: usize) -> Result<f64> {
        self.check_query(noisy, sigma, level)?;
        let means = self.means(sigma, level)?;
        let dim = noisy.len() as f64;
        let inv = 1.0 / (2.0 * sigma * sigma);
        let log_norm = -0.5 * dim * (2.0 * std::f64::consts::PI * sigma * sigma).ln();
        let log_w: Vec<f64> = means
            .iter()
            .map(|mu| -noisy.sub(mu).map(|d| d.norm_sq()).unwrap_or(f64::INFINITY) * inv)
            .collect();
        Ok(logsumexp(&log_w) + log_norm - (means.len() as f64).ln())
    }
}

impl Denoiser for DatasetOracle {
    /// Posterior mean of the clean level-`level` signal: weights are a
    /// stable softmax of `-|noisy - mu(x_j, t)|^2 / (2 sigma^2)`.
    fn denoise(&self, noisy: &Field, sigma: f64, level: usize) -> Result<Field> {
        let weights = self.posterior_weights(noisy, sigma, level)?;
        let points = &self.cache[level - 1];
        let (c, h, w) = points[0].shape();
        let mut out = Field::zeros(c, h, w)?;
        for (weight, point) in weights.iter().zip(points) {
            if *weight != 0.0 {
                out.axpy_assign(*weight, point)?;
            }
        }
        Ok(out)
    }
}

/// One isotropic mixture component.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmComponent {
    pub weight: f64,
    pub mean: Field,
    /// Per-coordinate variance (isotropic). Zero is allowed: a point mass.
    pub var: f64,
}

/// Exact posterior-mean denoiser for an isotropic Gaussian mixture prior
/// under the plain (non-attenuated) forward process.
pub struct GmmOracle {
    components: Vec<GmmComponent>,
}

impl GmmOracle {
    pub fn new(components: Vec<GmmComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Config("mixture needs at least one component".into()));
        }
        let shape = components[0].mean.shape();
        let mut total = 0.0;
        for (k, c) in components.iter().enumerate() {
            if c.mean.shape() != shape {
                return Err(Error::Dimension(format!(
                    "component {k} mean shape {:?}, expected {:?}",
                    c.mean.shape(),
                    shape
                )));
            }
            if !(c.weight >= 0.0) || !c.weight.is_finite() {
                return Err(Error::Config(format!(
                    "component {k} weight must be finite and >= 0, got {}",
                    c.weight
                )));
            }
            if !(c.var >= 0.0) || !c.var.is_finite() {
                return Err(Error::Config(format!(
                    "component {k} variance must be finite and >= 0, got {}",
                    c.var
                )));
            }
            total += c.weight;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "mixture weights sum to {total}, expected 1 within 1e-12"
            )));
        }
        Ok(Self { components })
    }

    pub fn components(&self) -> &[GmmComponent] {
        &self.components
    }
}

impl Denoiser for GmmOracle {
    /// Marginal responsibilities come from `N(mean_k, (var_k + sigma^2) I)`;
    /// each component contributes its posterior mean
    /// `(var_k * noisy + sigma^2 * mean_k) / (var_k + sigma^2)`.
    fn denoise(&self, noisy: &Field, sigma: f64, _level: usize) -> Result<Field> {
        check_sigma(sigma)?;
        let shape = self.components[0].mean.shape();
        if noisy.shape() != shape {
            return Err(Error::Dimension(format!(
                "query shape {:?} does not match mixture shape {shape:?}",
                noisy.shape()
            )));
        }
        let dim = noisy.len() as f64;
        let s2 = sigma * sigma;
        let log_w: Vec<f64> = self
            .components
            .iter()
            .map(|c| {
                let total_var = c.var + s2;
                let d2 = noisy.sub(&c.mean).map(|d| d.norm_sq()).unwrap_or(f64::INFINITY);
                let prior = if c.weight == 0.0 { f64::NEG_INFINITY } else { c.weight.ln() };
                prior - 0.5 * dim * total_var.ln() - d2 / (2.0 * total_var)
            })
            .collect();
        let resp = softmax(&log_w);
        let (c, h, w) = shape;
        let mut out = Field::zeros(c, h, w)?;
        for (r, comp) in resp.iter().zip(&self.components) {
            if *r == 0.0 {
                continue;
            }
            let total_var = comp.var + s2;
            let shrink = comp.var / total_var;
            let pull = s2 / total_var;
            // r * ((var * y + sigma^2 * m) / (var + sigma^2))
            for i in 0..out.len() {
                out.values_mut()[i] +=
                    r * (shrink * noisy.values()[i] + pull * comp.mean.values()[i]);
            }
        }
        Ok(out)
    }
}

/// Predicts the dataset mean regardless of the observation.
pub struct MeanPredictor {
    mean: Field,
}

impl MeanPredictor {
    pub fn from_dataset(points: &[Field]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Config("mean predictor needs a non-empty dataset".into()));
        }
        let (c, h, w) = points[0].shape();
        let mut mean = Field::zeros(c, h, w)?;
        let inv = 1.0 / points.len() as f64;
        for p in points {
            mean.axpy_assign(inv, p)?;
        }
        Ok(Self { mean })
    }

    pub fn mean(&self) -> &Field {
        &self.mean
    }
}

impl Denoiser for MeanPredictor {
    fn denoise(&self, noisy: &Field, sigma: f64, _level: usize) -> Result<Field> {
        check_sigma(sigma)?;
        if noisy.shape() != self.mean.shape() {
            return Err(Error::Dimension(format!(
                "query shape {:?} does not match mean shape {:?}",
                noisy.shape(),
                self.mean.shape()
            )));
        }
        Ok(self.mean.clone())
    }
}

/// Returns the observation unchanged.
pub struct IdentityDenoiser;

impl Denoiser for IdentityDenoiser {
    fn denoise(&self, noisy: &Field, sigma: f64, _level: usize) -> Result<Field> {
        check_sigma(sigma)?;
        Ok(noisy.clone())
    }
}

/// Score of the forward marginal recovered from a clean-field prediction.
///
/// With one band and alpha = 1 this is the classic `(d - x) / sigma^2`. In
/// the multi-band case each band contributes
/// `(alpha_i * d_band_i - x_band_i) / sigma^2` and the bands are assembled
/// by pyramid synthesis. `band_alphas` lists the attenuations of the bands
/// present in `x`, finest first.
pub fn score_from_denoiser(
    d_out: &Field,
    x: &Field,
    sigma: f64,
    band_alphas: &[f64],
    factor: usize,
) -> Result<Field> {
    check_sigma(sigma)?;
    if !d_out.same_shape(x) {
        return Err(Error::Dimension(format!(
            "prediction shape {:?} does not match state shape {:?}",
            d_out.shape(),
            x.shape()
        )));
    }
    if band_alphas.is_empty() {
        return Err(Error::Config("score needs at least one band alpha".into()));
    }
    let inv = 1.0 / (sigma * sigma);
    // The single-band and all-ones cases reduce to the same arithmetic as the
    // plain formula; taking that path keeps them bit-identical to it.
    if band_alphas.iter().all(|a| *a == 1.0) {
        return d_out.sub(x)?.scale(inv);
    }
    if band_alphas.len() == 1 {
        return d_out.scale(band_alphas[0])?.sub(x)?.scale(inv);
    }
    let d_bands = Pyramid::decompose(d_out, band_alphas.len(), factor)?;
    let x_bands = Pyramid::decompose(x, band_alphas.len(), factor)?;
    let mut bands = Vec::with_capacity(band_alphas.len());
    for (i, &alpha) in band_alphas.iter().enumerate() {
        let band = d_bands.bands()[i]
            .scale(alpha)?
            .sub(&x_bands.bands()[i])?
            .scale(inv)?;
        bands.push(band);
    }
    Pyramid::new(bands, factor)?.reconstruct()
}

/// Per-sigma-bucket affine denoiser fitted by least squares, wrapped in the
/// standard preconditioning: `D(x) = c_skip x + c_out (A (c_in x) + b)`.
pub struct LinearDenoiser {
    precond: Precondition,
    shape: (usize, usize, usize),
    /// `buckets + 1` ascending sigma edges; bucket `i` covers
    /// `[edges[i], edges[i+1])`, with queries clamped into the end buckets.
    edges: Vec<f64>,
    /// Per bucket: row-major `dim x dim` matrix, then `dim` offsets.
    maps: Vec<AffineMap>,
    ridge_buckets: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct AffineMap {
    matrix: Vec<f64>,
    offset: Vec<f64>,
}

impl LinearDenoiser {
    pub fn shape(&self) -> (usize, usize, usize) {
        self.shape
    }

    pub fn buckets(&self) -> usize {
        self.maps.len()
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    /// How many buckets needed the ridge fallback during fitting.
    pub fn ridge_buckets(&self) -> usize {
        self.ridge_buckets
    }

    fn bucket_for(&self, sigma: f64) -> usize {
        let b = self.maps.len();
        match self.edges[1..b].partition_point(|e| *e <= sigma) {
            i if i >= b => b - 1,
            i => i,
        }
    }

    /// Effective linear gain of the composed map at `sigma`, estimated by
    /// projecting random probes: `<D(x), x> / <x, x>` averaged.
    pub fn effective_gain(&self, sigma: f64, probes: usize, rng: &mut ChaCha8Rng) -> Result<f64> {
        let (c, h, w) = self.shape;
        let mut num = 0.0;
        let mut den = 0.0;
        for _ in 0..probes.max(1) {
            let x = Field::standard_normal(c, h, w, rng)?;
            let d = self.denoise(&x, sigma, 1)?;
            num += d.dot(&x)?;
            den += x.norm_sq();
        }
        Ok(num / den)
    }

    /// Writes the documented flat binary layout (all little-endian):
    /// magic `LDNZ`, version u32, channels/height/width u32, bucket count
    /// u32, sigma_data f64, `buckets+1` edge f64s, then per bucket the
    /// row-major `dim*dim` matrix followed by `dim` offsets.
    pub fn write_to<W: Write>(&self, out: &mut W) -> Result<()> {
        out.write_all(b"LDNZ")?;
        out.write_all(&1u32.to_le_bytes())?;
        let (c, h, w) = self.shape;
        for v in [c as u32, h as u32, w as u32, self.maps.len() as u32] {
            out.write_all(&v.to_le_bytes())?;
        }
        out.write_all(&self.precond.sigma_data.to_le_bytes())?;
        for e in &self.edges {
            out.write_all(&e.to_le_bytes())?;
        }
        for map in &self.maps {
            for v in map.matrix.iter().chain(&map.offset) {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(input: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != b"LDNZ" {
            return Err(Error::Config("not a linear denoiser dump (bad magic)".into()));
        }
        let mut u32buf = [0u8; 4];
        let mut read_u32 = |input: &mut R| -> Result<u32> {
            input.read_exact(&mut u32buf)?;
            Ok(u32::from_le_bytes(u32buf))
        };
        let version = read_u32(input)?;
        if version != 1 {
            return Err(Error::Config(format!("unsupported dump version {version}")));
        }
        let c = read_u32(input)? as usize;
        let h = read_u32(input)? as usize;
        let w = read_u32(input)? as usize;
        let buckets = read_u32(input)? as usize;
        if c == 0 || h == 0 || w == 0 || buckets == 0 {
            return Err(Error::Config("corrupt dump header".into()));
        }
        let mut f64buf = [0u8; 8];
        let mut read_f64 = |input: &mut R| -> Result<f64> {
            input.read_exact(&mut f64buf)?;
            Ok(f64::from_le_bytes(f64buf))
        };
        let sigma_data = read_f64(input)?;
        let mut edges = Vec::with_capacity(buckets + 1);
        for _ in 0..=buckets {
            edges.push(read_f64(input)?);
        }
        let dim = c * h * w;
        let mut maps = Vec::with_capacity(buckets);
        for _ in 0..buckets {
            let mut matrix = Vec::with_capacity(dim * dim);
            for _ in 0..dim * dim {
                matrix.push(read_f64(input)?);
            }
            let mut offset = Vec::with_capacity(dim);
            for _ in 0..dim {
                offset.push(read_f64(input)?);
            }
            maps.push(AffineMap { matrix, offset });
        }
        Ok(Self {
            precond: Precondition::new(sigma_data)?,
            shape: (c, h, w),
            edges,
            maps,
            ridge_buckets: 0,
        })
    }
}

impl Denoiser for LinearDenoiser {
    fn denoise(&self, noisy: &Field, sigma: f64, _level: usize) -> Result<Field> {
        check_sigma(sigma)?;
        if noisy.shape() != self.shape {
            return Err(Error::Dimension(format!(
                "query shape {:?} does not match trained shape {:?}",
                noisy.shape(),
                self.shape
            )));
        }
        let coeffs = self.precond.coeffs(sigma)?;
        let map = &self.maps[self.bucket_for(sigma)];
        let dim = noisy.len();
        let x = noisy.values();
        let mut out = noisy.scale(coeffs.c_skip)?;
        let o = out.values_mut();
        for r in 0..dim {
            let row = &map.matrix[r * dim..(r + 1) * dim];
            let mut f = map.offset[r];
            for (a, xv) in row.iter().zip(x) {
                f += a * (coeffs.c_in * xv);
            }
            o[r] += coeffs.c_out * f;
        }
        Ok(out)
    }
}

/// Training settings for [`train_linear`].
#[derive(Debug, Clone)]
pub struct LinearTrainConfig {
    /// Number of `(clean, noisy)` pairs to draw.
    pub pairs: usize,
    /// Number of sigma buckets.
    pub buckets: usize,
    /// Ridge fallback strength relative to the normal-equation trace scale.
    pub ridge_scale: f64,
}

impl Default for LinearTrainConfig {
    fn default() -> Self {
        Self { pairs: 20_000, buckets: 12, ridge_scale: 1e-8 }
    }
}

/// Fits the per-bucket affine maps by weighted least squares on pairs
/// `(x0, x0 + sigma * eps)` with sigma drawn from `dist`. Fitting happens in
/// preconditioned coordinates with weight `c_out^2`, so each bucket's map
/// minimizes the plain squared denoising error over its pairs. Singular
/// normal equations fall back to a ridge of `ridge_scale * trace / dim`.
pub fn train_linear<R: Rng>(
    dataset: &[Field],
    dist: &TrainSigmaDist,
    precond: &Precondition,
    cfg: &LinearTrainConfig,
    rng: &mut R,
) -> Result<LinearDenoiser> {
    if dataset.is_empty() {
        return Err(Error::Config("training needs a non-empty dataset".into()));
    }
    if cfg.buckets == 0 || cfg.pairs == 0 {
        return Err(Error::Config("training needs buckets >= 1 and pairs >= 1".into()));
    }
    let shape = dataset[0].shape();
    for (j, p) in dataset.iter().enumerate() {
        if p.shape() != shape {
            return Err(Error::Dimension(format!(
                "dataset point {j} has shape {:?}, expected {shape:?}",
                p.shape()
            )));
        }
    }
    let dim = dataset[0].len();
    if dim > 512 {
        return Err(Error::Config(format!(
            "dense affine denoiser is limited to 512 coordinates, got {dim}"
        )));
    }

    // Log-uniform bucket edges spanning +-4 p_std around p_mean.
    let buckets = cfg.buckets;
    let lo = dist.p_mean - 4.0 * dist.p_std;
    let hi = dist.p_mean + 4.0 * dist.p_std;
    let edges: Vec<f64> = (0..=buckets)
        .map(|i| (lo + (hi - lo) * i as f64 / buckets as f64).exp())
        .collect();

    let aug = dim + 1;
    let mut xtx = vec![vec![0.0f64; aug * aug]; buckets];
    let mut xty = vec![vec![0.0f64; aug * dim]; buckets];
    let mut counts = vec![0usize; buckets];

    let mut z = vec![0.0f64; aug];
    let mut target = vec![0.0f64; dim];
    for _ in 0..cfg.pairs {
        let x0 = &dataset[rng.gen_range(0..dataset.len())];
        let sigma = dist.sample(rng);
        let coeffs = precond.coeffs(sigma)?;
        let bucket = match edges[1..buckets].partition_point(|e| *e <= sigma) {
            i if i >= buckets => buckets - 1,
            i => i,
        };
        for i in 0..dim {
            let eps: f64 = rng.sample(StandardNormal);
            let xt = x0.values()[i] + sigma * eps;
            z[i] = coeffs.c_in * xt;
            target[i] = (x0.values()[i] - coeffs.c_skip * xt) / coeffs.c_out;
        }
        z[dim] = 1.0;
        let weight = coeffs.c_out * coeffs.c_out;
        let gram = &mut xtx[bucket];
        for r in 0..aug {
            let zr = weight * z[r];
            let row = &mut gram[r * aug..(r + 1) * aug];
            for (cell, zc) in row.iter_mut().zip(&z) {
                *cell += zr * zc;
            }
        }
        let moment = &mut xty[bucket];
        for r in 0..aug {
            let zr = weight * z[r];
            let row = &mut moment[r * dim..(r + 1) * dim];
            for (cell, t) in row.iter_mut().zip(&target) {
                *cell += zr * t;
            }
        }
        counts[bucket] += 1;
    }

    let mut maps = Vec::with_capacity(buckets);
    let mut ridge_buckets = 0;
    for b in 0..buckets {
        if counts[b] == 0 {
            maps.push(AffineMap { matrix: vec![0.0; dim * dim], offset: vec![0.0; dim] });
            continue;
        }
        let solution = match solve_spd(&xtx[b], &xty[b], aug, dim) {
            Some(s) => s,
            None => {
                ridge_buckets += 1;
                let trace: f64 = (0..aug).map(|i| xtx[b][i * aug + i]).sum();
                let lambda = cfg.ridge_scale * trace / aug as f64;
                let mut ridged = xtx[b].clone();
                for i in 0..aug {
                    ridged[i * aug + i] += lambda;
                }
                solve_spd(&ridged, &xty[b], aug, dim).ok_or_else(|| {
                    Error::Numeric("normal equations unsolvable even with ridge".into())
                })?
            }
        };
        // solution is aug x dim: rows 0..dim are A^T columns, row dim is b.
        let mut matrix = vec![0.0; dim * dim];
        for r in 0..dim {
            for c in 0..dim {
                matrix[r * dim + c] = solution[c * dim + r];
            }
        }
        let offset = solution[dim * dim..dim * dim + dim].to_vec();
        maps.push(AffineMap { matrix, offset });
    }

    Ok(LinearDenoiser {
        precond: precond.clone(),
        shape,
        edges,
        maps,
        ridge_buckets,
    })
}

/// Cholesky solve of `G X = B` for symmetric positive-definite `G`
/// (`n x n`), `B` given as `n x m` row-major. Returns None when a pivot is
/// not strictly positive.
fn solve_spd(g: &[f64], b: &[f64], n: usize, m: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = g[i * n + j];
            for k in 0..j {
                sum -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if sum <= 0.0 || !sum.is_finite() {
                    return None;
                }
                l[i * n + i] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    let mut x = b.to_vec();
    // Forward: L Y = B.
    for i in 0..n {
        for k in 0..i {
            let lik = l[i * n + k];
            for c in 0..m {
                let yk = x[k * m + c];
                x[i * m + c] -= lik * yk;
            }
        }
        let d = l[i * n + i];
        for c in 0..m {
            x[i * m + c] /= d;
        }
    }
    // Backward: L^T X = Y.
    for i in (0..n).rev() {
        for k in i + 1..n {
            let lki = l[k * n + i];
            for c in 0..m {
                let xk = x[k * m + c];
                x[i * m + c] -= lki * xk;
            }
        }
        let d = l[i * n + i];
        for c in 0..m {
            x[i * m + c] /= d;
        }
    }
    Some(x)
}

/// Monte-Carlo loss estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub pairs: usize,
}

/// Estimates the expected squared denoising error
/// `E |D(x0 + sigma eps) - x0|^2` over the dataset by Monte Carlo.
pub fn eval_loss<R: Rng>(
    denoiser: &dyn Denoiser,
    dataset: &[Field],
    sigma: f64,
    pairs: usize,
    rng: &mut R,
) -> Result<LossEstimate> {
    if dataset.is_empty() {
        return Err(Error::Config("loss evaluation needs a non-empty dataset".into()));
    }
    if pairs == 0 {
        return Err(Error::Config("loss evaluation needs pairs >= 1".into()));
    }
    check_sigma(sigma)?;
    let (c, h, w) = dataset[0].shape();
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..pairs {
        let x0 = &dataset[rng.gen_range(0..dataset.len())];
        let eps = Field::standard_normal(c, h, w, rng)?;
        let noisy = x0.axpy(sigma, &eps)?;
        let loss = denoiser.denoise(&noisy, sigma, 1)?.sub(x0)?.norm_sq();
        sum += loss;
        sum_sq += loss * loss;
    }
    let n = pairs as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0);
    Ok(LossEstimate { mean, std_err: (var / n).sqrt(), pairs })
}

/// Like [`eval_loss`] but scores several denoisers on the same clean-point
/// and noise draws, which removes draw-to-draw variance from their loss
/// differences.
pub fn eval_loss_paired<R: Rng>(
    denoisers: &[&dyn Denoiser],
    dataset: &[Field],
    sigma: f64,
    pairs: usize,
    rng: &mut R,
) -> Result<Vec<LossEstimate>> {
    if denoisers.is_empty() {
        return Err(Error::Config("paired loss evaluation needs at least one denoiser".into()));
    }
    if dataset.is_empty() {
        return Err(Error::Config("loss evaluation needs a non-empty dataset".into()));
    }
    if pairs == 0 {
        return Err(Error::Config("loss evaluation needs pairs >= 1".into()));
    }
    check_sigma(sigma)?;
    let (c, h, w) = dataset[0].shape();
    let mut sums = vec![0.0f64; denoisers.len()];
    let mut sum_sqs = vec![0.0f64; denoisers.len()];
    for _ in 0..pairs {
        let x0 = &dataset[rng.gen_range(0..dataset.len())];
        let eps = Field::standard_normal(c, h, w, rng)?;
        let noisy = x0.axpy(sigma, &eps)?;
        for (k, denoiser) in denoisers.iter().enumerate() {
            let loss = denoiser.denoise(&noisy, sigma, 1)?.sub(x0)?.norm_sq();
            sums[k] += loss;
            sum_sqs[k] += loss * loss;
        }
    }
    let n = pairs as f64;
    Ok(sums
        .iter()
        .zip(&sum_sqs)
        .map(|(&sum, &sum_sq)| {
            let mean = sum / n;
            let var = (sum_sq / n - mean * mean).max(0.0);
            LossEstimate { mean, std_err: (var / n).sqrt(), pairs }
        })
        .collect())
}

/// One routed expert: a denoiser valid for a pyramid level and sigma range.
pub struct Expert {
    pub denoiser: Arc<dyn Denoiser>,
    pub level: usize,
    pub sigma_lo: f64,
    pub sigma_hi: f64,
}

/// Mixture-of-experts lookup by `(level, sigma)`.
///
/// Ranges on the same level may touch but not overlap; a query exactly on a
/// shared boundary goes to the lower range. Queries outside every range are
/// routing errors, never silent extrapolation.
pub struct ExpertRouter {
    experts: Vec<Expert>,
}

impl ExpertRouter {
    pub fn new(experts: Vec<Expert>) -> Result<Self> {
        if experts.is_empty() {
            return Err(Error::Config("router needs at least one expert".into()));
        }
        for (i, e) in experts.iter().enumerate() {
            if e.level == 0 {
                return Err(Error::Config(format!("expert {i}: level must be >= 1")));
            }
            if !(e.sigma_lo >= 0.0) || !(e.sigma_hi > e.sigma_lo) || e.sigma_hi.is_nan() {
                return Err(Error::Config(format!(
                    "expert {i}: invalid sigma range [{}, {}]",
                    e.sigma_lo, e.sigma_hi
                )));
            }
        }
        let mut by_level: Vec<(usize, f64, f64, usize)> = experts
            .iter()
            .enumerate()
            .map(|(i, e)| (e.level, e.sigma_lo, e.sigma_hi, i))
            .collect();
        by_level.sort_by(|a, b| (a.0, a.1).partial_cmp(&(b.0, b.1)).unwrap());
        for pair in by_level.windows(2) {
            let (al, _, ahi, ai) = pair[0];
            let (bl, blo, _, bi) = pair[1];
            if al == bl && blo < ahi {
                return Err(Error::Config(format!(
                    "experts {ai} and {bi} overlap on level {al}: [{blo} < {ahi}]"
                )));
            }
        }
        Ok(Self { experts })
    }

    pub fn experts(&self) -> &[Expert] {
        &self.experts
    }

    /// The unique expert covering `(level, sigma)`. Ranges are treated as
    /// `[lo, hi]` with a shared boundary point belonging to the lower range.
    pub fn route(&self, level: usize, sigma: f64) -> Result<&dyn Denoiser> {
        let mut best: Option<&Expert> = None;
        for e in &self.experts {
            if e.level == level && sigma >= e.sigma_lo && sigma <= e.sigma_hi {
                best = match best {
                    Some(prev) if prev.sigma_lo <= e.sigma_lo => Some(prev),
                    _ => Some(e),
                };
            }
        }
        best.map(|e| e.denoiser.as_ref()).ok_or_else(|| {
            Error::Routing(format!("no expert covers level {level} at sigma {sigma}"))
        })
    }

    /// Checks that every positive sigma in `grid` is covered at `level`.
    pub fn check_coverage(&self, level: usize, grid: &[f64]) -> Result<()> {
        for &sigma in grid {
            if sigma > 0.0 {
                self.route(level, sigma)?;
            }
        }
        Ok(())
    }
}

impl Denoiser for ExpertRouter {
    fn denoise(&self, noisy: &Field, sigma: f64, level: usize) -> Result<Field> {
        self.route(level, sigma)?.denoise(noisy, sigma, level)
    }
}

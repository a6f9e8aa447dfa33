//! Noise schedules, per-band attenuation profiles, denoiser preconditioning,
//! and the training-time noise-level distribution.
//!
//! Time and noise level are identified throughout: the process is variance
//! exploding with `sigma(t) = t`, so every `t` below is a sigma.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::{Error, Result};

/// Sampling noise range with a warped step spacing: exponent `rho` biases
/// grid points toward small sigma.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaSchedule {
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub rho: f64,
}

impl SigmaSchedule {
    pub const DEFAULT_SIGMA_MIN: f64 = 0.002;
    pub const DEFAULT_SIGMA_MAX: f64 = 80.0;
    pub const DEFAULT_RHO: f64 = 7.0;

    pub fn new(sigma_min: f64, sigma_max: f64, rho: f64) -> Result<Self> {
        if !(sigma_min.is_finite() && sigma_max.is_finite() && rho.is_finite()) {
            return Err(Error::Config("schedule parameters must be finite".into()));
        }
        if sigma_min <= 0.0 || sigma_max <= sigma_min {
            return Err(Error::Config(format!(
                "need 0 < sigma_min < sigma_max, got sigma_min={sigma_min} sigma_max={sigma_max}"
            )));
        }
        if rho < 1.0 {
            return Err(Error::Config(format!("rho must be >= 1, got {rho}")));
        }
        Ok(Self { sigma_min, sigma_max, rho })
    }

    /// EDM-style defaults: sigma in [0.002, 80], rho = 7.
    pub fn default_edm() -> Self {
        Self {
            sigma_min: Self::DEFAULT_SIGMA_MIN,
            sigma_max: Self::DEFAULT_SIGMA_MAX,
            rho: Self::DEFAULT_RHO,
        }
    }

    /// `steps + 1` sigma values: starts exactly at `sigma_max`, decreases
    /// strictly, ends exactly at 0. Interior points interpolate between
    /// `sigma_max` and `sigma_min` in `sigma^(1/rho)` space; the nominal
    /// final point (`sigma_min` itself) is replaced by 0.
    pub fn time_grid(&self, steps: usize) -> Result<Vec<f64>> {
        self.stage_grid(self.sigma_max, 0.0, steps)
    }

    /// Grid for one sampling stage, from `entry` down to `exit` in `steps`
    /// steps. `exit = 0` gets the same treatment as `time_grid`; a positive
    /// `exit` is hit exactly at the last point.
    pub fn stage_grid(&self, entry: f64, exit: f64, steps: usize) -> Result<Vec<f64>> {
        if steps == 0 {
            return Err(Error::Config("a stage needs at least one step".into()));
        }
        if !(entry.is_finite() && exit.is_finite()) || entry <= 0.0 || exit < 0.0 {
            return Err(Error::Config(format!(
                "invalid stage sigma range: entry={entry} exit={exit}"
            )));
        }
        if exit >= entry {
            return Err(Error::Config(format!(
                "stage must decrease sigma: entry={entry} exit={exit}"
            )));
        }
        let inv_rho = 1.0 / self.rho;
        let lo = if exit > 0.0 { exit } else { self.sigma_min.min(entry / 2.0) };
        let a = entry.powf(inv_rho);
        let b = lo.powf(inv_rho);
        let mut grid = Vec::with_capacity(steps + 1);
        grid.push(entry);
        for i in 1..steps {
            let u = i as f64 / steps as f64;
            grid.push((a + u * (b - a)).powf(self.rho));
        }
        grid.push(exit);
        for pair in grid.windows(2) {
            if pair[1] >= pair[0] {
                return Err(Error::Numeric(format!(
                    "grid not strictly decreasing at {} -> {}",
                    pair[0], pair[1]
                )));
            }
        }
        Ok(grid)
    }
}

/// Ramp shape an attenuation follows between its ramp start and extinction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RampShape {
    /// Straight line from 1 down to 0.
    Linear,
    /// Half-cosine from 1 down to 0 (smooth at both ends).
    Cosine,
    /// 1 strictly before extinction, 0 at and after it.
    Step,
}

/// Per-band attenuation coefficients `alpha_band(t)`.
///
/// Band `i` of `bands` total (1 = finest) dies at `t_star[i-1]`; the coarsest
/// band never dies. Each alpha starts at 1, decreases monotonically along the
/// configured ramp, and is exactly 0 at and beyond its extinction time.
/// Extinctions and ramp starts must be sorted so that coarser bands never
/// attenuate ahead of finer ones.
#[derive(Debug, Clone, PartialEq)]
pub struct AttenuationProfile {
    shape: RampShape,
    bands: usize,
    t_star: Vec<f64>,
    ramp_start: Vec<f64>,
}

impl AttenuationProfile {
    pub fn new(
        shape: RampShape,
        bands: usize,
        t_star: Vec<f64>,
        ramp_start: Vec<f64>,
    ) -> Result<Self> {
        if bands == 0 {
            return Err(Error::Config("profile needs at least one band".into()));
        }
        if t_star.len() != bands - 1 || ramp_start.len() != bands - 1 {
            return Err(Error::Config(format!(
                "profile with {bands} bands needs {} extinction times and ramp starts, got {} and {}",
                bands - 1,
                t_star.len(),
                ramp_start.len()
            )));
        }
        for (i, (&ts, &rs)) in t_star.iter().zip(&ramp_start).enumerate() {
            if !(ts > 0.0) || ts.is_nan() {
                return Err(Error::Config(format!(
                    "t_star[{i}] must be positive, got {ts}"
                )));
            }
            if !(0.0..ts).contains(&rs) && ts.is_finite() {
                return Err(Error::Config(format!(
                    "ramp_start[{i}]={rs} must lie in [0, t_star[{i}]={ts})"
                )));
            }
        }
        for i in 1..t_star.len() {
            if t_star[i] < t_star[i - 1] {
                return Err(Error::Config(format!(
                    "extinction times must be non-decreasing toward coarser bands: t_star[{}]={} < t_star[{}]={}",
                    i,
                    t_star[i],
                    i - 1,
                    t_star[i - 1]
                )));
            }
            if ramp_start[i] < ramp_start[i - 1] {
                return Err(Error::Config(format!(
                    "ramp starts must be non-decreasing toward coarser bands: ramp_start[{}]={} < ramp_start[{}]={}",
                    i,
                    ramp_start[i],
                    i - 1,
                    ramp_start[i - 1]
                )));
            }
        }
        Ok(Self { shape, bands, t_star, ramp_start })
    }

    /// Linear ramps with the default start at half the extinction time.
    pub fn linear_defaults(bands: usize, t_star: Vec<f64>) -> Result<Self> {
        let ramp_start = t_star.iter().map(|t| 0.5 * t).collect();
        Self::new(RampShape::Linear, bands, t_star, ramp_start)
    }

    /// All alphas identically 1: the plain single- or multi-band process
    /// without attenuation.
    pub fn standard(bands: usize) -> Self {
        Self {
            shape: RampShape::Linear,
            bands,
            t_star: vec![f64::INFINITY; bands.saturating_sub(1)],
            ramp_start: vec![0.0; bands.saturating_sub(1)],
        }
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn shape(&self) -> RampShape {
        self.shape
    }

    /// Extinction time of `band` (1-based); the coarsest band returns +inf.
    pub fn extinction(&self, band: usize) -> Result<f64> {
        self.check_band(band)?;
        Ok(if band == self.bands {
            f64::INFINITY
        } else {
            self.t_star[band - 1]
        })
    }

    pub fn ramp_start(&self, band: usize) -> Result<f64> {
        self.check_band(band)?;
        Ok(if band == self.bands {
            f64::INFINITY
        } else {
            self.ramp_start[band - 1]
        })
    }

    fn check_band(&self, band: usize) -> Result<()> {
        if band == 0 || band > self.bands {
            return Err(Error::Config(format!(
                "band {band} out of range 1..={}",
                self.bands
            )));
        }
        Ok(())
    }

    /// `alpha_band(t)`: 1 at t = 0, 0 at and beyond the band's extinction.
    pub fn alpha(&self, band: usize, t: f64) -> Result<f64> {
        self.check_band(band)?;
        if t < 0.0 || t.is_nan() {
            return Err(Error::Config(format!("time must be >= 0, got {t}")));
        }
        if band == self.bands {
            return Ok(1.0);
        }
        let ts = self.t_star[band - 1];
        if ts.is_infinite() {
            return Ok(1.0);
        }
        let rs = self.ramp_start[band - 1];
        Ok(match self.shape {
            RampShape::Step => {
                if t < ts {
                    1.0
                } else {
                    0.0
                }
            }
            RampShape::Linear => {
                if t <= rs {
                    1.0
                } else if t >= ts {
                    0.0
                } else {
                    (ts - t) / (ts - rs)
                }
            }
            RampShape::Cosine => {
                if t <= rs {
                    1.0
                } else if t >= ts {
                    0.0
                } else {
                    0.5 * (1.0 + (std::f64::consts::PI * (t - rs) / (ts - rs)).cos())
                }
            }
        })
    }

    /// `d alpha_band / dt`. Piecewise: 0 outside the ramp, the ramp slope
    /// inside (one-sided values at the kinks).
    pub fn alpha_deriv(&self, band: usize, t: f64) -> Result<f64> {
        self.check_band(band)?;
        if t < 0.0 || t.is_nan() {
            return Err(Error::Config(format!("time must be >= 0, got {t}")));
        }
        if band == self.bands {
            return Ok(0.0);
        }
        let ts = self.t_star[band - 1];
        if ts.is_infinite() {
            return Ok(0.0);
        }
        let rs = self.ramp_start[band - 1];
        Ok(match self.shape {
            RampShape::Step => 0.0,
            RampShape::Linear => {
                if t <= rs || t >= ts {
                    0.0
                } else {
                    -1.0 / (ts - rs)
                }
            }
            RampShape::Cosine => {
                if t <= rs || t >= ts {
                    0.0
                } else {
                    let span = ts - rs;
                    -0.5 * std::f64::consts::PI / span
                        * (std::f64::consts::PI * (t - rs) / span).sin()
                }
            }
        })
    }
}

/// Denoiser input/output scalings as functions of sigma.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrecondCoeffs {
    pub c_skip: f64,
    pub c_out: f64,
    pub c_in: f64,
    pub c_noise: f64,
}

/// Magnitude-preserving preconditioning around a data scale `sigma_data`.
#[derive(Debug, Clone, PartialEq)]
pub struct Precondition {
    pub sigma_data: f64,
}

impl Precondition {
    pub const DEFAULT_SIGMA_DATA: f64 = 0.5;

    pub fn new(sigma_data: f64) -> Result<Self> {
        if !(sigma_data > 0.0) || !sigma_data.is_finite() {
            return Err(Error::Config(format!(
                "sigma_data must be positive and finite, got {sigma_data}"
            )));
        }
        Ok(Self { sigma_data })
    }

    /// c_skip = sd^2/(s^2+sd^2), c_out = s*sd/sqrt(s^2+sd^2),
    /// c_in = 1/sqrt(s^2+sd^2), c_noise = ln(s)/4.
    pub fn coeffs(&self, sigma: f64) -> Result<PrecondCoeffs> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::Numeric(format!(
                "preconditioning needs sigma > 0, got {sigma}"
            )));
        }
        let sd2 = self.sigma_data * self.sigma_data;
        let total = sigma * sigma + sd2;
        Ok(PrecondCoeffs {
            c_skip: sd2 / total,
            c_out: sigma * self.sigma_data / total.sqrt(),
            c_in: 1.0 / total.sqrt(),
            c_noise: sigma.ln() / 4.0,
        })
    }
}

impl Default for Precondition {
    fn default() -> Self {
        Self { sigma_data: Self::DEFAULT_SIGMA_DATA }
    }
}

/// Log-normal training noise distribution: `ln sigma ~ N(p_mean, p_std^2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSigmaDist {
    pub p_mean: f64,
    pub p_std: f64,
}

impl TrainSigmaDist {
    pub const DEFAULT_P_MEAN: f64 = -1.2;
    pub const DEFAULT_P_STD: f64 = 1.2;

    pub fn new(p_mean: f64, p_std: f64) -> Result<Self> {
        if !p_mean.is_finite() || !(p_std > 0.0) || !p_std.is_finite() {
            return Err(Error::Config(format!(
                "need finite p_mean and p_std > 0, got p_mean={p_mean} p_std={p_std}"
            )));
        }
        Ok(Self { p_mean, p_std })
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        (self.p_mean + self.p_std * z).exp()
    }
}

impl Default for TrainSigmaDist {
    fn default() -> Self {
        Self { p_mean: Self::DEFAULT_P_MEAN, p_std: Self::DEFAULT_P_STD }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn time_grid_endpoints_and_monotonicity() {
        let s = SigmaSchedule::default_edm();
        let grid = s.time_grid(18).unwrap();
        assert_eq!(grid.len(), 19);
        assert_eq!(grid[0], 80.0);
        assert_eq!(*grid.last().unwrap(), 0.0);
        for pair in grid.windows(2) {
            assert!(pair[1] < pair[0]);
        }
    }

    #[test]
    fn time_grid_single_step() {
        let s = SigmaSchedule::default_edm();
        assert_eq!(s.time_grid(1).unwrap(), vec![80.0, 0.0]);
    }

    #[test]
    fn time_grid_midpoint_with_unit_rho() {
        let s = SigmaSchedule::new(0.002, 80.0, 1.0).unwrap();
        let grid = s.time_grid(2).unwrap();
        assert_eq!(grid.len(), 3);
        assert_relative_eq!(grid[1], (80.0 + 0.002) / 2.0, max_relative = 1e-15);
        assert_eq!(grid[2], 0.0);
    }

    #[test]
    fn stage_grid_hits_positive_exit_exactly() {
        let s = SigmaSchedule::default_edm();
        let grid = s.stage_grid(2.0, 0.5, 6).unwrap();
        assert_eq!(grid[0], 2.0);
        assert_eq!(*grid.last().unwrap(), 0.5);
        for pair in grid.windows(2) {
            assert!(pair[1] < pair[0]);
        }
    }

    #[test]
    fn schedule_rejects_bad_ranges() {
        assert!(SigmaSchedule::new(0.0, 80.0, 7.0).is_err());
        assert!(SigmaSchedule::new(1.0, 1.0, 7.0).is_err());
        assert!(SigmaSchedule::new(0.002, 80.0, 0.5).is_err());
    }

    #[test]
    fn linear_ramp_alpha_values() {
        let p = AttenuationProfile::new(RampShape::Linear, 2, vec![2.0], vec![1.0]).unwrap();
        assert_eq!(p.alpha(1, 0.0).unwrap(), 1.0);
        assert_eq!(p.alpha(1, 1.0).unwrap(), 1.0);
        // Midpoint of the ramp.
        assert_relative_eq!(p.alpha(1, 1.5).unwrap(), 0.5, max_relative = 1e-15);
        assert_eq!(p.alpha(1, 2.0).unwrap(), 0.0);
        assert_eq!(p.alpha(1, 5.0).unwrap(), 0.0);
        // Coarsest band never attenuates.
        assert_eq!(p.alpha(2, 1e9).unwrap(), 1.0);
        assert_eq!(p.extinction(2).unwrap(), f64::INFINITY);
    }

    #[test]
    fn cosine_ramp_is_smooth_and_monotone() {
        let p = AttenuationProfile::new(RampShape::Cosine, 2, vec![4.0], vec![2.0]).unwrap();
        assert_eq!(p.alpha(1, 2.0).unwrap(), 1.0);
        assert_relative_eq!(p.alpha(1, 3.0).unwrap(), 0.5, max_relative = 1e-12);
        assert!(p.alpha(1, 4.0).unwrap().abs() <= 1e-15);
        let mut prev = 1.0;
        for k in 0..=100 {
            let t = 2.0 + 2.0 * k as f64 / 100.0;
            let a = p.alpha(1, t).unwrap();
            assert!(a <= prev + 1e-15);
            prev = a;
        }
        // Derivative vanishes at both ramp ends.
        assert_eq!(p.alpha_deriv(1, 2.0).unwrap(), 0.0);
        assert!(p.alpha_deriv(1, 3.999999).unwrap().abs() < 1e-4);
    }

    #[test]
    fn step_profile_drops_exactly_at_extinction() {
        let p = AttenuationProfile::new(RampShape::Step, 2, vec![3.0], vec![0.0]).unwrap();
        assert_eq!(p.alpha(1, 2.999).unwrap(), 1.0);
        assert_eq!(p.alpha(1, 3.0).unwrap(), 0.0);
    }

    #[test]
    fn alpha_ordering_finer_dies_first() {
        let p = AttenuationProfile::linear_defaults(3, vec![1.0, 2.5]).unwrap();
        for k in 0..=50 {
            let t = 3.0 * k as f64 / 50.0;
            let a1 = p.alpha(1, t).unwrap();
            let a2 = p.alpha(2, t).unwrap();
            let a3 = p.alpha(3, t).unwrap();
            assert!(a1 <= a2 + 1e-15 && a2 <= a3 + 1e-15, "ordering broken at t={t}");
        }
    }

    #[test]
    fn profile_rejects_unsorted_extinctions() {
        assert!(AttenuationProfile::linear_defaults(3, vec![2.0, 1.0]).is_err());
    }

    #[test]
    fn linear_alpha_deriv_matches_difference_quotient() {
        let p = AttenuationProfile::new(RampShape::Linear, 2, vec![2.0], vec![0.5]).unwrap();
        let h = 1e-7;
        for &t in &[1.0_f64, 1.3, 1.9] {
            let fd = (p.alpha(1, t + h).unwrap() - p.alpha(1, t - h).unwrap()) / (2.0 * h);
            assert_relative_eq!(p.alpha_deriv(1, t).unwrap(), fd, max_relative = 1e-6);
        }
    }

    #[test]
    fn precondition_identity_and_halfway_point() {
        let pre = Precondition::default();
        for &sigma in &[0.01, 0.5, 3.0, 80.0] {
            let c = pre.coeffs(sigma).unwrap();
            // c_in^2 * (sigma^2 + sigma_data^2) = 1
            let ident = c.c_in * c.c_in * (sigma * sigma + 0.25);
            assert_relative_eq!(ident, 1.0, max_relative = 1e-12);
        }
        // At sigma = sigma_data the skip weight is exactly 1/2.
        let c = pre.coeffs(0.5).unwrap();
        assert_relative_eq!(c.c_skip, 0.5, max_relative = 1e-15);
        assert_relative_eq!(c.c_noise, 0.5_f64.ln() / 4.0, max_relative = 1e-15);
    }

    #[test]
    fn precondition_rejects_sigma_zero() {
        let pre = Precondition::default();
        assert!(pre.coeffs(0.0).is_err());
    }

    #[test]
    fn train_sigma_matches_lognormal_moments() {
        let dist = TrainSigmaDist::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 200_000;
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for _ in 0..n {
            let ln_s = dist.sample(&mut rng).ln();
            sum += ln_s;
            sum_sq += ln_s * ln_s;
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        assert!((mean - dist.p_mean).abs() < 0.02, "ln-mean off: {mean}");
        assert!((var.sqrt() - dist.p_std).abs() < 0.02, "ln-std off: {}", var.sqrt());
    }
}

//! The multi-band forward process and the resolution-switch algebra.
//!
//! A field decomposes into pyramid bands that attenuate on separate
//! schedules while sharing one isotropic noise term:
//!
//! ```text
//! x_t = sum_i alpha_i(t) * up^(i-1)(x0 bands) + sigma(t) * eps,  sigma(t) = t
//! ```
//!
//! Because block averaging pools i.i.d. noise, the same trajectory viewed at
//! a coarser resolution is the same kind of process with sigma scaled by the
//! resolution ratio; switching back up restores full-resolution statistics
//! exactly by reusing the preserved low-frequency noise and drawing fresh
//! high-frequency noise.

use rand::Rng;

use crate::grid::{downsample, upsample, Pyramid};
use crate::rng;
use crate::schedule::AttenuationProfile;
use crate::{Error, Field, Result};

/// A noisy field somewhere along a trajectory. `sigma` is expressed in the
/// units of the field's own resolution; `level` says which pyramid level
/// that is (1 = finest). `stream` records the noise stream the state was
/// produced under, purely for reproducibility bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionState {
    pub field: Field,
    pub sigma: f64,
    pub level: usize,
    pub stream: u64,
}

/// Record of one resolution switch.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchRecord {
    pub from_level: usize,
    pub to_level: usize,
    pub ratio: usize,
    pub sigma_before: f64,
    pub sigma_after: f64,
}

/// The forward process: band count, resampling factor, and the per-band
/// attenuation profile.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplacianProcess {
    levels: usize,
    factor: usize,
    attenuation: AttenuationProfile,
}

impl LaplacianProcess {
    pub fn new(levels: usize, factor: usize, attenuation: AttenuationProfile) -> Result<Self> {
        if levels == 0 {
            return Err(Error::Config("process needs at least one level".into()));
        }
        if factor < 2 && levels > 1 {
            return Err(Error::Config(
                "multi-level process needs a resampling factor >= 2".into(),
            ));
        }
        if attenuation.bands() != levels {
            return Err(Error::Config(format!(
                "attenuation profile covers {} bands but the process has {} levels",
                attenuation.bands(),
                levels
            )));
        }
        Ok(Self { levels, factor, attenuation })
    }

    /// Single-band process with no attenuation: plain variance-exploding
    /// diffusion at one resolution.
    pub fn standard() -> Self {
        Self {
            levels: 1,
            factor: 2,
            attenuation: AttenuationProfile::standard(1),
        }
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn factor(&self) -> usize {
        self.factor
    }

    pub fn attenuation(&self) -> &AttenuationProfile {
        &self.attenuation
    }

    fn check_level(&self, level: usize) -> Result<()> {
        if level == 0 || level > self.levels {
            return Err(Error::Config(format!(
                "level {level} out of range 1..={}",
                self.levels
            )));
        }
        Ok(())
    }

    /// Spatial scale of `level` relative to the finest: `factor^(level-1)`.
    pub fn level_scale(&self, level: usize) -> Result<f64> {
        self.check_level(level)?;
        Ok((self.factor as f64).powi(level as i32 - 1))
    }

    /// Number of bands represented at `level`: bands `level..=levels`.
    pub fn bands_at_level(&self, level: usize) -> Result<usize> {
        self.check_level(level)?;
        Ok(self.levels - level + 1)
    }

    /// Attenuations and their sigma-derivatives for the bands represented at
    /// `level`, evaluated at a sigma in that level's units. Derivatives are
    /// with respect to the level's own sigma.
    pub fn alphas_at_level(&self, level: usize, sigma: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_level(level)?;
        let scale = self.level_scale(level)?;
        let t = sigma * scale;
        let mut alphas = Vec::with_capacity(self.levels - level + 1);
        let mut derivs = Vec::with_capacity(self.levels - level + 1);
        for band in level..=self.levels {
            alphas.push(self.attenuation.alpha(band, t)?);
            derivs.push(self.attenuation.alpha_deriv(band, t)? * scale);
        }
        Ok((alphas, derivs))
    }

    /// Noise-free forward mean at full resolution:
    /// `mu(x0, t) = sum_i alpha_i(t) * up^(i-1)(band_i(x0))`.
    pub fn forward_mean(&self, x0: &Field, t: f64) -> Result<Field> {
        self.mean_at_level(x0, 1, t)
    }

    /// Forward mean for a field living at `level`, with sigma given in that
    /// level's units. The represented bands are `level..=levels`.
    pub fn mean_at_level(&self, x0: &Field, level: usize, sigma: f64) -> Result<Field> {
        self.check_level(level)?;
        let bands = self.levels - level + 1;
        let scale = self.level_scale(level)?;
        let t = sigma * scale;
        let mut all_one = true;
        let mut alphas = Vec::with_capacity(bands);
        for band in level..=self.levels {
            let a = self.attenuation.alpha(band, t)?;
            all_one &= a == 1.0;
            alphas.push(a);
        }
        if all_one {
            return Ok(x0.clone());
        }
        let pyramid = Pyramid::decompose(x0, bands, self.factor)?;
        self.mean_from_pyramid(&pyramid, &alphas)
    }

    /// Forward mean given a pre-computed pyramid of the clean signal.
    pub fn mean_from_pyramid(&self, pyramid: &Pyramid, alphas: &[f64]) -> Result<Field> {
        if pyramid.levels() != alphas.len() {
            return Err(Error::Config(format!(
                "{} alphas for a {}-band pyramid",
                alphas.len(),
                pyramid.levels()
            )));
        }
        let mut acc = pyramid.band(pyramid.levels()).scale(alphas[pyramid.levels() - 1])?;
        for i in (1..pyramid.levels()).rev() {
            acc = pyramid.band(i).scale(alphas[i - 1])?.add(&upsample(&acc, self.factor())?)?;
        }
        Ok(acc)
    }

    /// Draws `x_t = mu(x0, t) + t * eps` with fresh unit noise. The state is
    /// at the finest level with `sigma = t`.
    pub fn forward_noise<R: Rng>(&self, x0: &Field, t: f64, rng: &mut R) -> Result<DiffusionState> {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(Error::Config(format!("time must be finite and >= 0, got {t}")));
        }
        let (c, h, w) = x0.shape();
        let eps = Field::standard_normal(c, h, w, rng)?;
        let field = self.forward_mean(x0, t)?.axpy(t, &eps)?;
        Ok(DiffusionState { field, sigma: t, level: 1, stream: 0 })
    }

    /// Decomposes a noise field into the process's pyramid bands.
    pub fn decompose_noise(&self, eps: &Field) -> Result<Pyramid> {
        Pyramid::decompose(eps, self.levels, self.factor)
    }

    /// Signal power over noise power: `|mu(x0, t)|^2 / (sigma^2 * dim)` with
    /// the mean formed at the state's level. Returns +inf when sigma = 0.
    pub fn snr(&self, state: &DiffusionState, x0: &Field) -> Result<f64> {
        if !x0.same_shape(&state.field) {
            return Err(Error::Dimension(format!(
                "snr: clean field shape {:?} does not match state shape {:?}",
                x0.shape(),
                state.field.shape()
            )));
        }
        if state.sigma == 0.0 {
            return Ok(f64::INFINITY);
        }
        let mu = self.mean_at_level(x0, state.level, state.sigma)?;
        Ok(mu.norm_sq() / (state.sigma * state.sigma * mu.len() as f64))
    }
}

/// Renormalized block pooling of unit noise: `down(eps, ratio) * ratio` is
/// unit white noise again at the coarse resolution.
pub fn project_noise_down(eps: &Field, ratio: usize) -> Result<Field> {
    downsample(eps, ratio)?.scale(ratio as f64)
}

/// Lifts a noisy state to a resolution `ratio` times finer, preserving its
/// low-frequency noise and filling the new high frequencies from
/// `eps_high` (unit white noise at the target resolution):
///
/// ```text
/// up(x) + sigma * ratio * (eps_high - up(down(eps_high)))
/// ```
///
/// When the state's own noise was the pooled projection of `eps_high`, the
/// result is exactly `up(clean part) + sigma * ratio * eps_high`: a sample of
/// the fine-resolution process at `sigma_after = sigma * ratio`.
pub fn switch_up_with_noise(
    state: &DiffusionState,
    to_level: usize,
    ratio: usize,
    eps_high: &Field,
) -> Result<(DiffusionState, SwitchRecord)> {
    if ratio < 2 {
        return Err(Error::Config(format!("switch ratio must be >= 2, got {ratio}")));
    }
    if state.sigma == 0.0 {
        return Err(Error::Config(
            "cannot switch a fully denoised state (sigma = 0); plain upsampling suffices".into(),
        ));
    }
    if to_level == 0 || to_level >= state.level {
        return Err(Error::Config(format!(
            "switch must move to a finer level: {} -> {}",
            state.level, to_level
        )));
    }
    let (c, h, w) = state.field.shape();
    if eps_high.shape() != (c, h * ratio, w * ratio) {
        return Err(Error::Dimension(format!(
            "switch noise shape {:?}, expected {:?}",
            eps_high.shape(),
            (c, h * ratio, w * ratio)
        )));
    }
    let sigma_after = state.sigma * ratio as f64;
    let lifted = upsample(&state.field, ratio)?;
    let retained = upsample(&downsample(eps_high, ratio)?, ratio)?;
    let fresh = eps_high.sub(&retained)?;
    let field = lifted.axpy(sigma_after, &fresh)?;
    let record = SwitchRecord {
        from_level: state.level,
        to_level,
        ratio,
        sigma_before: state.sigma,
        sigma_after,
    };
    Ok((
        DiffusionState { field, sigma: sigma_after, level: to_level, stream: state.stream },
        record,
    ))
}

/// [`switch_up_with_noise`] drawing the fresh noise from the dedicated
/// per-(chain, level) stream for `(seed, chain)`.
pub fn switch_up(
    state: &DiffusionState,
    to_level: usize,
    ratio: usize,
    seed: u64,
    chain: u64,
) -> Result<(DiffusionState, SwitchRecord)> {
    let (c, h, w) = state.field.shape();
    let mut stream = rng::stream(seed, chain, rng::lane_switch(to_level));
    let eps_high = Field::standard_normal(c, h * ratio, w * ratio, &mut stream)?;
    switch_up_with_noise(state, to_level, ratio, &eps_high)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::RampShape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_band_process(t_star: f64, ramp_start: f64) -> LaplacianProcess {
        let profile =
            AttenuationProfile::new(RampShape::Linear, 2, vec![t_star], vec![ramp_start]).unwrap();
        LaplacianProcess::new(2, 2, profile).unwrap()
    }

    #[test]
    fn forward_mean_at_t_zero_is_the_clean_field() {
        let proc = two_band_process(2.0, 1.0);
        let x0 = Field::new(1, 2, 2, vec![1.0, 3.0, 5.0, 7.0]).unwrap();
        let mu = proc.forward_mean(&x0, 0.0).unwrap();
        assert_eq!(mu, x0);
    }

    #[test]
    fn forward_mean_past_extinction_keeps_only_the_coarse_band() {
        let proc = two_band_process(2.0, 1.0);
        let x0 = Field::new(1, 2, 2, vec![1.0, 3.0, 5.0, 7.0]).unwrap();
        // Past t_star_1 the fine band is gone; the mean is the upsampled base.
        let mu = proc.forward_mean(&x0, 3.0).unwrap();
        assert_eq!(mu.values(), &[4.0, 4.0, 4.0, 4.0]);
    }

    #[test]
    fn forward_mean_mid_ramp_blends_bands() {
        let proc = two_band_process(2.0, 1.0);
        let x0 = Field::new(1, 2, 2, vec![1.0, 3.0, 5.0, 7.0]).unwrap();
        // alpha_1(1.5) = 0.5: mean = 0.5 * band1 + up(band2)
        let mu = proc.forward_mean(&x0, 1.5).unwrap();
        assert_eq!(mu.values(), &[2.5, 3.5, 4.5, 5.5]);
    }

    #[test]
    fn pooled_noise_projection_keeps_unit_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        let mut count = 0usize;
        for _ in 0..2000 {
            let eps = Field::standard_normal(1, 8, 8, &mut rng).unwrap();
            let pooled = project_noise_down(&eps, 2).unwrap();
            for &v in pooled.values() {
                sum += v;
                sum_sq += v * v;
                count += 1;
            }
        }
        let mean = sum / count as f64;
        let std = (sum_sq / count as f64 - mean * mean).sqrt();
        assert!(mean.abs() < 0.02, "pooled mean {mean}");
        assert!((std - 1.0).abs() < 0.02, "pooled std {std}");
    }

    #[test]
    fn switch_up_frozen_example() {
        // x_r = [[4]] at sigma 1; eps_high = [[1,-1],[-1,1]] pools to zero, so
        // the coupled coarse noise is [[0]] and the switched state must be
        // up(x_r) + 2 * eps_high.
        let state = DiffusionState {
            field: Field::new(1, 1, 1, vec![4.0]).unwrap(),
            sigma: 1.0,
            level: 2,
            stream: 0,
        };
        let eps_high = Field::new(1, 2, 2, vec![1.0, -1.0, -1.0, 1.0]).unwrap();
        let (next, record) = switch_up_with_noise(&state, 1, 2, &eps_high).unwrap();
        assert_eq!(next.field.values(), &[6.0, 2.0, 2.0, 6.0]);
        assert_eq!(next.sigma, 2.0);
        assert_eq!(next.level, 1);
        assert_eq!(record.sigma_before, 1.0);
        assert_eq!(record.sigma_after, 2.0);
        assert_eq!(record.ratio, 2);
    }

    #[test]
    fn switch_identity_with_coupled_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for &ratio in &[2usize, 4] {
            let clean = Field::standard_normal(1, 4, 4, &mut rng).unwrap();
            let eps_high = Field::standard_normal(1, 4 * ratio, 4 * ratio, &mut rng).unwrap();
            let eps_low = project_noise_down(&eps_high, ratio).unwrap();
            let sigma = 0.7;
            let state = DiffusionState {
                field: clean.axpy(sigma, &eps_low).unwrap(),
                sigma,
                level: 2,
                stream: 0,
            };
            let (next, _) = switch_up_with_noise(&state, 1, ratio, &eps_high).unwrap();
            let expected = upsample(&clean, ratio)
                .unwrap()
                .axpy(sigma * ratio as f64, &eps_high)
                .unwrap();
            let err = next.field.rel_sup_dist(&expected).unwrap();
            assert!(err <= 1e-12, "switch identity off by {err} at ratio {ratio}");
        }
    }

    #[test]
    fn switch_rejects_sigma_zero_and_bad_direction() {
        let state = DiffusionState {
            field: Field::zeros(1, 2, 2).unwrap(),
            sigma: 0.0,
            level: 2,
            stream: 0,
        };
        let eps = Field::zeros(1, 4, 4).unwrap();
        assert!(switch_up_with_noise(&state, 1, 2, &eps).is_err());
        let state = DiffusionState { sigma: 1.0, ..state };
        assert!(switch_up_with_noise(&state, 2, 2, &eps).is_err());
        assert!(switch_up_with_noise(&state, 3, 2, &eps).is_err());
    }

    #[test]
    fn snr_definition_and_zero_sigma_sentinel() {
        let proc = LaplacianProcess::standard();
        let x0 = Field::constant(1, 2, 2, 2.0).unwrap();
        let state = DiffusionState {
            field: x0.clone(),
            sigma: 1.0,
            level: 1,
            stream: 0,
        };
        // |mu|^2 / (sigma^2 dim) = 4*4 / (1*4) = 4.
        assert_eq!(proc.snr(&state, &x0).unwrap(), 4.0);
        let state = DiffusionState { sigma: 0.0, ..state };
        assert_eq!(proc.snr(&state, &x0).unwrap(), f64::INFINITY);
    }

    #[test]
    fn snr_amplitude_doubles_per_halving() {
        // One 2x pooling halves the noise amplitude while a flat signal keeps
        // its per-sample power, so the amplitude SNR doubles and the power
        // ratio reported by snr() quadruples. The effective sigma of the
        // pooled state is checked statistically.
        let proc = LaplacianProcess::standard();
        let x0 = Field::constant(1, 32, 32, 1.0).unwrap();
        let sigma = 0.5;
        let mut rng = ChaCha8Rng::seed_from_u64(33);

        let mut pooled_noise_sq = 0.0;
        let mut count = 0usize;
        let trials = 500;
        for _ in 0..trials {
            let eps = Field::standard_normal(1, 32, 32, &mut rng).unwrap();
            let noisy = x0.axpy(sigma, &eps).unwrap();
            let residual = downsample(&noisy, 2).unwrap().sub(&downsample(&x0, 2).unwrap()).unwrap();
            pooled_noise_sq += residual.norm_sq();
            count += residual.len();
        }
        let sigma_coarse = (pooled_noise_sq / count as f64).sqrt();
        assert!(
            (sigma_coarse - sigma / 2.0).abs() < 0.005,
            "pooled noise std {sigma_coarse}, expected {}",
            sigma / 2.0
        );

        let fine_state = DiffusionState { field: x0.clone(), sigma, level: 1, stream: 0 };
        let coarse_clean = downsample(&x0, 2).unwrap();
        let coarse_state = DiffusionState {
            field: coarse_clean.clone(),
            sigma: sigma_coarse,
            level: 1,
            stream: 0,
        };
        let fine = proc.snr(&fine_state, &x0).unwrap();
        let coarse = proc.snr(&coarse_state, &coarse_clean).unwrap();
        let amplitude_ratio = (coarse / fine).sqrt();
        assert!(
            (amplitude_ratio - 2.0).abs() < 0.05,
            "amplitude SNR ratio {amplitude_ratio}, expected 2"
        );
    }

    #[test]
    fn forward_noise_is_deterministic_per_seed() {
        let proc = two_band_process(2.0, 1.0);
        let x0 = Field::new(1, 4, 4, (0..16).map(|v| v as f64 / 8.0).collect()).unwrap();
        let a = proc
            .forward_noise(&x0, 1.2, &mut ChaCha8Rng::seed_from_u64(5))
            .unwrap();
        let b = proc
            .forward_noise(&x0, 1.2, &mut ChaCha8Rng::seed_from_u64(5))
            .unwrap();
        assert_eq!(a.field, b.field);
        assert_eq!(a.sigma, 1.2);
    }
}

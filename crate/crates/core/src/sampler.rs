//! Backward sampling: probability-flow ODE integrators (Euler and Heun)
//! with the per-band drift, plus the cascade orchestrator that runs a plan
//! of resolution stages connected by noise-preserving switches.

use std::sync::Arc;

use rand_chacha::ChaCha8Rng;

use crate::denoiser::Denoiser;
use crate::grid::Pyramid;
use crate::process::{switch_up, DiffusionState, LaplacianProcess, SwitchRecord};
use crate::rng;
use crate::schedule::SigmaSchedule;
use crate::{Error, Field, Result};

/// ODE integration rule for one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Integrator {
    /// First order: `x += (sigma_next - sigma_cur) * drift`.
    Euler,
    /// Second order trapezoidal correction; the second drift evaluation is
    /// skipped on the final step to sigma = 0.
    Heun,
}

/// One resolution stage of a sampling plan.
#[derive(Clone)]
pub struct Stage {
    pub level: usize,
    pub sigma_entry: f64,
    /// 0 for the final stage; positive sigma where the plan switches up.
    pub sigma_exit: f64,
    pub denoiser: Arc<dyn Denoiser>,
}

/// Full sampling plan: per-stage step counts, the integrator, the ordered
/// stages (coarsest first), and optional per-step noise churn (default 0;
/// with 0 the sampler consumes no randomness after initialization).
#[derive(Clone)]
pub struct SamplerConfig {
    pub steps: Vec<usize>,
    pub integrator: Integrator,
    pub stages: Vec<Stage>,
    pub churn: f64,
}

impl SamplerConfig {
    pub fn new(steps: Vec<usize>, integrator: Integrator, stages: Vec<Stage>) -> Self {
        Self { steps, integrator, stages, churn: 0.0 }
    }

    /// Checks the plan against a process before any compute: per-stage sigma
    /// ranges, strictly refining levels, one step count per stage, and the
    /// switch consistency `sigma_exit * ratio = sigma_entry(next)`.
    pub fn validate(&self, process: &LaplacianProcess) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::Config("sampling plan has no stages".into()));
        }
        if self.steps.len() != self.stages.len() {
            return Err(Error::Config(format!(
                "{} step counts for {} stages",
                self.steps.len(),
                self.stages.len()
            )));
        }
        if self.steps.iter().any(|s| *s == 0) {
            return Err(Error::Config("every stage needs at least one step".into()));
        }
        if !(self.churn >= 0.0) || !self.churn.is_finite() || self.churn > 1.0 {
            return Err(Error::Config(format!(
                "churn must lie in [0, 1], got {}",
                self.churn
            )));
        }
        for (i, stage) in self.stages.iter().enumerate() {
            if stage.level == 0 || stage.level > process.levels() {
                return Err(Error::Config(format!(
                    "stage {i}: level {} out of range 1..={}",
                    stage.level,
                    process.levels()
                )));
            }
            if !stage.sigma_entry.is_finite()
                || !stage.sigma_exit.is_finite()
                || stage.sigma_exit < 0.0
                || stage.sigma_entry <= stage.sigma_exit
            {
                return Err(Error::Config(format!(
                    "stage {i}: need sigma_entry > sigma_exit >= 0, got {} -> {}",
                    stage.sigma_entry, stage.sigma_exit
                )));
            }
            let last = i + 1 == self.stages.len();
            if last && stage.sigma_exit != 0.0 {
                return Err(Error::Config(format!(
                    "final stage must run down to sigma = 0, got exit {}",
                    stage.sigma_exit
                )));
            }
            if !last && stage.sigma_exit == 0.0 {
                return Err(Error::Config(format!(
                    "stage {i} exits at sigma = 0 but is not the final stage"
                )));
            }
        }
        for (i, pair) in self.stages.windows(2).enumerate() {
            let (a, b) = (&pair[0], &pair[1]);
            if b.level >= a.level {
                return Err(Error::Config(format!(
                    "stage levels must strictly refine: stage {i} level {} -> stage {} level {}",
                    a.level,
                    i + 1,
                    b.level
                )));
            }
            let ratio = (process.factor() as f64).powi((a.level - b.level) as i32);
            let lifted = a.sigma_exit * ratio;
            if (lifted - b.sigma_entry).abs() > 1e-12 * b.sigma_entry.max(1.0) {
                return Err(Error::Config(format!(
                    "stages {i} and {} are not connected: exit {} * ratio {} = {} but next entry is {}",
                    i + 1,
                    a.sigma_exit,
                    ratio,
                    lifted,
                    b.sigma_entry
                )));
            }
        }
        Ok(())
    }
}

/// Builds the stage plan running from the coarsest level down to
/// `finest_level`, cutting stages at the attenuation extinction times. Every
/// stage uses the given denoiser handle (routers dispatch internally).
pub fn stage_plan(
    process: &LaplacianProcess,
    schedule: &SigmaSchedule,
    finest_level: usize,
    denoiser: Arc<dyn Denoiser>,
) -> Result<Vec<Stage>> {
    let levels = process.levels();
    if finest_level == 0 || finest_level > levels {
        return Err(Error::Config(format!(
            "finest level {finest_level} out of range 1..={levels}"
        )));
    }
    let mut stages = Vec::with_capacity(levels - finest_level + 1);
    for level in (finest_level..=levels).rev() {
        let scale = process.level_scale(level)?;
        let sigma_entry = if level == levels {
            schedule.sigma_max
        } else {
            let t = process.attenuation().extinction(level)?;
            if !t.is_finite() {
                return Err(Error::Config(format!(
                    "band {level} never attenuates, so the plan cannot switch into level {level}"
                )));
            }
            t / scale
        };
        let sigma_exit = if level == finest_level {
            0.0
        } else {
            let t = process.attenuation().extinction(level - 1)?;
            if !t.is_finite() {
                return Err(Error::Config(format!(
                    "band {} never attenuates, so the plan cannot leave level {level}",
                    level - 1
                )));
            }
            t / scale
        };
        if sigma_entry <= sigma_exit {
            return Err(Error::Config(format!(
                "level {level} stage is empty: entry {sigma_entry} <= exit {sigma_exit} \
                 (extinction times too close or beyond sigma_max)"
            )));
        }
        stages.push(Stage { level, sigma_entry, sigma_exit, denoiser: denoiser.clone() });
    }
    Ok(stages)
}

/// One visited point of a sampling trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPoint {
    pub sigma: f64,
    pub level: usize,
    pub field: Field,
}

/// Everything a chain visited: the per-node snapshots, the resolution
/// switches, and the final sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub points: Vec<TrajectoryPoint>,
    pub switches: Vec<SwitchRecord>,
    pub sample: Field,
}

/// Probability-flow drift from a score field, band by band.
///
/// With time identified with sigma, band i of the drift is
/// `(alpha_dot_i / alpha_i) x_i - sigma (alpha_i - alpha_dot_i sigma) / alpha_i * score_i`,
/// assembled by pyramid reconstruction. With every alpha equal to 1 this
/// reduces exactly to `-sigma * score`. A vanished attenuation is a
/// configuration error here: the band should have been dropped by a switch,
/// and the stage integrator sidesteps the singularity by evaluating the
/// drift through the denoised field instead.
pub fn ode_drift(
    field: &Field,
    sigma: f64,
    score: &Field,
    band_alphas: &[f64],
    band_alpha_derivs: &[f64],
    factor: usize,
) -> Result<Field> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::Numeric(format!("drift needs sigma > 0, got {sigma}")));
    }
    if !field.same_shape(score) {
        return Err(Error::Dimension(format!(
            "state shape {:?} does not match score shape {:?}",
            field.shape(),
            score.shape()
        )));
    }
    if band_alphas.is_empty() || band_alphas.len() != band_alpha_derivs.len() {
        return Err(Error::Config(format!(
            "need matching non-empty alpha and derivative lists, got {} and {}",
            band_alphas.len(),
            band_alpha_derivs.len()
        )));
    }
    for (i, &a) in band_alphas.iter().enumerate() {
        if !(a > 0.0) {
            return Err(Error::Config(format!(
                "band {} attenuation is {a}; an extinct band must be dropped by a \
                 resolution switch before integrating",
                i + 1
            )));
        }
    }
    if band_alphas.iter().all(|a| *a == 1.0) && band_alpha_derivs.iter().all(|d| *d == 0.0) {
        return score.scale(-sigma);
    }
    let x_bands = Pyramid::decompose(field, band_alphas.len(), factor)?;
    let s_bands = Pyramid::decompose(score, band_alphas.len(), factor)?;
    let mut bands = Vec::with_capacity(band_alphas.len());
    for i in 0..band_alphas.len() {
        let a = band_alphas[i];
        let da = band_alpha_derivs[i];
        let band = x_bands.bands()[i]
            .scale(da / a)?
            .axpy(-sigma * (a - da * sigma) / a, &s_bands.bands()[i])?;
        bands.push(band);
    }
    Pyramid::new(bands, factor)?.reconstruct()
}

/// Same drift computed from the denoised field: band i is
/// `(x_i - alpha_i d_i) / sigma + alpha_dot_i d_i`, which is algebraically
/// identical to the score form for alpha > 0 and stays regular where an
/// attenuation reaches 0 (stage entry points sit exactly there).
fn denoised_drift(
    field: &Field,
    sigma: f64,
    denoised: &Field,
    band_alphas: &[f64],
    band_alpha_derivs: &[f64],
    factor: usize,
) -> Result<Field> {
    if band_alphas.iter().all(|a| *a == 1.0) {
        return field.sub(denoised)?.scale(1.0 / sigma);
    }
    let x_bands = Pyramid::decompose(field, band_alphas.len(), factor)?;
    let d_bands = Pyramid::decompose(denoised, band_alphas.len(), factor)?;
    let mut bands = Vec::with_capacity(band_alphas.len());
    for i in 0..band_alphas.len() {
        let mut band = x_bands.bands()[i]
            .axpy(-band_alphas[i], &d_bands.bands()[i])?
            .scale(1.0 / sigma)?;
        if band_alpha_derivs[i] != 0.0 {
            band = band.axpy(band_alpha_derivs[i], &d_bands.bands()[i])?;
        }
        bands.push(band);
    }
    Pyramid::new(bands, factor)?.reconstruct()
}

/// Integrates one stage along `grid` (entry first, exit last), returning the
/// exit state and the visited snapshots including the entry.
///
/// Churn > 0 inflates each step's starting sigma by `1 + churn` and adds the
/// matching fresh noise from `churn_noise` before the deterministic step;
/// with churn = 0 the stream is never touched.
pub fn integrate_stage(
    mut state: DiffusionState,
    integrator: Integrator,
    churn: f64,
    denoiser: &dyn Denoiser,
    grid: &[f64],
    process: &LaplacianProcess,
    churn_noise: &mut Option<ChaCha8Rng>,
) -> Result<(DiffusionState, Vec<TrajectoryPoint>)> {
    if grid.len() < 2 {
        return Err(Error::Config("stage grid needs at least two nodes".into()));
    }
    for pair in grid.windows(2) {
        if !(pair[1] < pair[0]) {
            return Err(Error::Config(format!(
                "stage grid must strictly decrease, got {} -> {}",
                pair[0], pair[1]
            )));
        }
    }
    if *grid.last().unwrap() < 0.0 {
        return Err(Error::Config("stage grid ends below 0".into()));
    }
    if (state.sigma - grid[0]).abs() > 1e-9 * grid[0].max(1.0) {
        return Err(Error::Config(format!(
            "state sigma {} does not match grid entry {}",
            state.sigma, grid[0]
        )));
    }
    if churn > 0.0 && churn_noise.is_none() {
        return Err(Error::Config("churn > 0 needs a churn noise stream".into()));
    }
    state.sigma = grid[0];
    let level = state.level;
    let factor = process.factor();
    let mut points = Vec::with_capacity(grid.len());
    points.push(TrajectoryPoint { sigma: grid[0], level, field: state.field.clone() });
    for pair in grid.windows(2) {
        let (mut s_cur, s_next) = (pair[0], pair[1]);
        let mut x = state.field;
        if churn > 0.0 {
            let stream = churn_noise.as_mut().unwrap();
            let s_hat = s_cur * (1.0 + churn);
            let fresh = (s_hat * s_hat - s_cur * s_cur).sqrt();
            let (c, h, w) = x.shape();
            let eps = Field::standard_normal(c, h, w, stream)?;
            x = x.axpy(fresh, &eps)?;
            s_cur = s_hat;
        }
        let den = denoiser.denoise(&x, s_cur, level)?;
        let (alphas, derivs) = process.alphas_at_level(level, s_cur)?;
        let d1 = denoised_drift(&x, s_cur, &den, &alphas, &derivs, factor)?;
        let h = s_next - s_cur;
        let proposal = x.axpy(h, &d1)?;
        let next_field = if matches!(integrator, Integrator::Euler) || s_next == 0.0 {
            proposal
        } else {
            let den2 = denoiser.denoise(&proposal, s_next, level)?;
            let (alphas2, derivs2) = process.alphas_at_level(level, s_next)?;
            let d2 = denoised_drift(&proposal, s_next, &den2, &alphas2, &derivs2, factor)?;
            let avg = d1.add(&d2)?.scale(0.5)?;
            x.axpy(h, &avg)?
        };
        state = DiffusionState { field: next_field, sigma: s_next, level, stream: state.stream };
        points.push(TrajectoryPoint { sigma: s_next, level, field: state.field.clone() });
    }
    Ok((state, points))
}

/// Multi-stage sampler: initializes pure noise at the coarsest stage,
/// integrates each stage, and switches resolution between stages.
#[derive(Clone)]
pub struct CascadeSampler {
    process: LaplacianProcess,
    schedule: SigmaSchedule,
    config: SamplerConfig,
}

impl CascadeSampler {
    pub fn new(
        process: LaplacianProcess,
        schedule: SigmaSchedule,
        config: SamplerConfig,
    ) -> Result<Self> {
        config.validate(&process)?;
        Ok(Self { process, schedule, config })
    }

    pub fn process(&self) -> &LaplacianProcess {
        &self.process
    }

    pub fn schedule(&self) -> &SigmaSchedule {
        &self.schedule
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.config
    }

    /// Shape a level-1 geometry takes at `level`.
    fn shape_at(&self, channels: usize, height: usize, width: usize, level: usize) -> Result<(usize, usize, usize)> {
        let scale = (self.process.factor() as u64).pow(level as u32 - 1) as usize;
        if height % scale != 0 || width % scale != 0 {
            return Err(Error::Dimension(format!(
                "geometry {height}x{width} is not divisible by {scale} (level {level})"
            )));
        }
        Ok((channels, height / scale, width / scale))
    }

    /// Runs one chain. `channels x height x width` is the full-resolution
    /// (level 1) geometry; the chain starts at the first stage's level and
    /// ends at the last stage's. Output is a pure function of
    /// `(plan, seed, chain)` regardless of how many chains run in parallel.
    pub fn sample_chain(
        &self,
        channels: usize,
        height: usize,
        width: usize,
        seed: u64,
        chain: u64,
    ) -> Result<Trajectory> {
        let first = &self.config.stages[0];
        let (c0, h0, w0) = self.shape_at(channels, height, width, first.level)?;
        let mut init = rng::stream(seed, chain, rng::LANE_INIT);
        let field = Field::standard_normal(c0, h0, w0, &mut init)?.scale(first.sigma_entry)?;
        let mut state = DiffusionState {
            field,
            sigma: first.sigma_entry,
            level: first.level,
            stream: chain,
        };
        let mut churn_noise = if self.config.churn > 0.0 {
            Some(rng::stream(seed, chain, rng::LANE_CHURN))
        } else {
            None
        };
        let mut points = Vec::new();
        let mut switches = Vec::new();
        for (i, stage) in self.config.stages.iter().enumerate() {
            if i > 0 {
                let ratio = (self.process.factor() as u64).pow((state.level - stage.level) as u32);
                let (next, record) = switch_up(&state, stage.level, ratio as usize, seed, chain)?;
                state = next;
                switches.push(record);
            }
            let grid = self
                .schedule
                .stage_grid(stage.sigma_entry, stage.sigma_exit, self.config.steps[i])?;
            let (next, stage_points) = integrate_stage(
                state,
                self.config.integrator,
                self.config.churn,
                stage.denoiser.as_ref(),
                &grid,
                &self.process,
                &mut churn_noise,
            )?;
            state = next;
            points.extend(stage_points);
        }
        Ok(Trajectory { points, switches, sample: state.field })
    }
}

/// Independent single-resolution sampler with no pyramid machinery, used to
/// cross-check that a one-stage plan reproduces it exactly.
pub fn reference_edm_sample(
    denoiser: &dyn Denoiser,
    schedule: &SigmaSchedule,
    integrator: Integrator,
    steps: usize,
    channels: usize,
    height: usize,
    width: usize,
    seed: u64,
    chain: u64,
) -> Result<Field> {
    let grid = schedule.time_grid(steps)?;
    let mut init = rng::stream(seed, chain, rng::LANE_INIT);
    let mut x = Field::standard_normal(channels, height, width, &mut init)?.scale(grid[0])?;
    for pair in grid.windows(2) {
        let (s_cur, s_next) = (pair[0], pair[1]);
        let den = denoiser.denoise(&x, s_cur, 1)?;
        let d1 = x.sub(&den)?.scale(1.0 / s_cur)?;
        let h = s_next - s_cur;
        let proposal = x.axpy(h, &d1)?;
        x = if matches!(integrator, Integrator::Euler) || s_next == 0.0 {
            proposal
        } else {
            let den2 = denoiser.denoise(&proposal, s_next, 1)?;
            let d2 = proposal.sub(&den2)?.scale(1.0 / s_next)?;
            let avg = d1.add(&d2)?.scale(0.5)?;
            x.axpy(h, &avg)?
        };
    }
    Ok(x)
}

//! Run configuration: a strict TOML schema with defaults for every block.
//! Unknown keys are rejected at parse time; semantic validation errors name
//! the offending key.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use ldm_core::sampler::Integrator;
use ldm_core::schedule::{AttenuationProfile, Precondition, RampShape, SigmaSchedule, TrainSigmaDist};
use ldm_core::denoiser::LinearTrainConfig;
use ldm_core::process::LaplacianProcess;

use crate::image::BitDepth;
use crate::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub process: ProcessBlock,
    pub schedule: ScheduleBlock,
    pub dataset: DatasetBlock,
    pub denoiser: DenoiserBlock,
    pub sampler: SamplerBlock,
    pub forward: ForwardBlock,
    pub output: OutputBlock,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            process: ProcessBlock::default(),
            schedule: ScheduleBlock::default(),
            dataset: DatasetBlock::default(),
            denoiser: DenoiserBlock::default(),
            sampler: SamplerBlock::default(),
            forward: ForwardBlock::default(),
            output: OutputBlock::default(),
        }
    }
}

/// Band structure: `levels` = K, `factor` = f, extinction times for the
/// K-1 residual bands, optional explicit ramp starts (default: half the
/// extinction time), ramp shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProcessBlock {
    pub levels: usize,
    pub factor: usize,
    pub t_star: Vec<f64>,
    pub ramp_start: Option<Vec<f64>>,
    pub shape: String,
}

impl Default for ProcessBlock {
    fn default() -> Self {
        Self { levels: 1, factor: 2, t_star: Vec::new(), ramp_start: None, shape: "linear".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleBlock {
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub rho: f64,
}

impl Default for ScheduleBlock {
    fn default() -> Self {
        Self {
            sigma_min: SigmaSchedule::DEFAULT_SIGMA_MIN,
            sigma_max: SigmaSchedule::DEFAULT_SIGMA_MAX,
            rho: SigmaSchedule::DEFAULT_RHO,
        }
    }
}

/// Where dataset points come from: `image-directory` reads every .pgm,
/// .ppm, and .lraw file under `path`; `synthetic-gmm` draws from the
/// mixture in `denoiser.gmm`; `synthetic-shapes` cycles seeded
/// checkerboard, gradient, and blob generators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetBlock {
    pub source: String,
    pub path: Option<String>,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub count: usize,
}

impl Default for DatasetBlock {
    fn default() -> Self {
        Self {
            source: "synthetic-shapes".into(),
            path: None,
            channels: 1,
            height: 16,
            width: 16,
            count: 4,
        }
    }
}

/// Denoiser selection: `dataset-oracle` (exact posterior mean over the
/// dataset), `gmm` (closed-form mixture denoiser from `gmm` components),
/// `linear` (affine denoiser loaded from `file`), or `mean` (constant
/// dataset-mean predictor).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenoiserBlock {
    pub kind: String,
    pub file: Option<String>,
    pub gmm: Vec<GmmComponentBlock>,
    pub train: TrainBlock,
}

impl Default for DenoiserBlock {
    fn default() -> Self {
        Self { kind: "dataset-oracle".into(), file: None, gmm: Vec::new(), train: TrainBlock::default() }
    }
}

/// One mixture component: a constant mean field at the dataset shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GmmComponentBlock {
    pub weight: f64,
    pub mean: f64,
    pub var: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainBlock {
    pub p_mean: f64,
    pub p_std: f64,
    pub sigma_data: f64,
    pub pairs: usize,
    pub buckets: usize,
    pub ridge_scale: f64,
    pub eval_pairs: usize,
    pub eval_sigmas: Vec<f64>,
}

impl Default for TrainBlock {
    fn default() -> Self {
        let train = LinearTrainConfig::default();
        let dist = TrainSigmaDist::default();
        Self {
            p_mean: dist.p_mean,
            p_std: dist.p_std,
            sigma_data: Precondition::DEFAULT_SIGMA_DATA,
            pairs: train.pairs,
            buckets: train.buckets,
            ridge_scale: train.ridge_scale,
            eval_pairs: 2000,
            eval_sigmas: vec![0.1, 0.5, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerBlock {
    pub steps: Vec<usize>,
    pub integrator: String,
    pub finest_level: usize,
    pub churn: f64,
    pub chains: usize,
}

impl Default for SamplerBlock {
    fn default() -> Self {
        Self { steps: vec![32], integrator: "heun".into(), finest_level: 1, churn: 0.0, chains: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForwardBlock {
    pub times: Vec<f64>,
}

impl Default for ForwardBlock {
    fn default() -> Self {
        Self { times: vec![0.02, 0.1, 0.5, 2.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputBlock {
    pub directory: String,
    pub format: String,
    pub trajectories: bool,
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self { directory: "out".into(), format: "pgm16".into(), trajectories: false }
    }
}

/// Quantization choice for image outputs; `None` means raw dumps only.
pub fn parse_format(output: &OutputBlock) -> CliResult<Option<BitDepth>> {
    match output.format.as_str() {
        "pgm8" => Ok(Some(BitDepth::Eight)),
        "pgm16" => Ok(Some(BitDepth::Sixteen)),
        "raw" => Ok(None),
        other => Err(CliError::Config(format!(
            "output.format: expected \"pgm8\", \"pgm16\", or \"raw\", got {other:?}"
        ))),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        let config: RunConfig = toml::from_str(text)
            .map_err(|e| CliError::Config(format!("config parse error: {e}")))?;
        config.check()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("reading config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serializes")
    }

    /// Semantic validation beyond the schema; every message names the key.
    fn check(&self) -> CliResult<()> {
        let fail = |msg: String| Err(CliError::Config(msg));
        let p = &self.process;
        if p.levels == 0 {
            return fail("process.levels: must be at least 1".into());
        }
        if p.levels > 1 && p.factor < 2 {
            return fail(format!(
                "process.factor: must be at least 2 when process.levels > 1, got {}",
                p.factor
            ));
        }
        if p.t_star.len() != p.levels - 1 {
            return fail(format!(
                "process.t_star: needs exactly levels-1 = {} entries, got {}",
                p.levels - 1,
                p.t_star.len()
            ));
        }
        if let Some(rs) = &p.ramp_start {
            if rs.len() != p.t_star.len() {
                return fail(format!(
                    "process.ramp_start: needs one entry per t_star ({}), got {}",
                    p.t_star.len(),
                    rs.len()
                ));
            }
        }
        parse_shape(&p.shape)?;
        let s = &self.schedule;
        if !(s.sigma_min > 0.0 && s.sigma_max > s.sigma_min && s.rho >= 1.0)
            || !s.sigma_min.is_finite()
            || !s.sigma_max.is_finite()
            || !s.rho.is_finite()
        {
            return fail(format!(
                "schedule: needs 0 < sigma_min < sigma_max and rho >= 1, got sigma_min={} sigma_max={} rho={}",
                s.sigma_min, s.sigma_max, s.rho
            ));
        }
        let d = &self.dataset;
        match d.source.as_str() {
            "image-directory" => {
                if d.path.is_none() {
                    return fail("dataset.path: required when dataset.source = \"image-directory\"".into());
                }
            }
            "synthetic-gmm" | "synthetic-shapes" => {
                if d.count == 0 {
                    return fail("dataset.count: must be at least 1 for synthetic sources".into());
                }
            }
            other => {
                return fail(format!(
                    "dataset.source: expected \"image-directory\", \"synthetic-gmm\", or \"synthetic-shapes\", got {other:?}"
                ))
            }
        }
        if d.channels == 0 || d.height == 0 || d.width == 0 {
            return fail(format!(
                "dataset.channels/height/width: must all be positive, got {}x{}x{}",
                d.channels, d.height, d.width
            ));
        }
        let n = &self.denoiser;
        match n.kind.as_str() {
            "dataset-oracle" | "mean" => {}
            "gmm" => {
                if n.gmm.is_empty() {
                    return fail("denoiser.gmm: at least one component is required when denoiser.kind = \"gmm\"".into());
                }
                let total: f64 = n.gmm.iter().map(|c| c.weight).sum();
                if (total - 1.0).abs() > 1e-9 {
                    return fail(format!("denoiser.gmm: component weights must sum to 1, got {total}"));
                }
                if let Some(c) = n.gmm.iter().find(|c| !(c.weight > 0.0) || !(c.var >= 0.0)) {
                    return fail(format!(
                        "denoiser.gmm: weights must be positive and variances nonnegative, got weight={} var={}",
                        c.weight, c.var
                    ));
                }
            }
            "linear" => {
                if n.file.is_none() {
                    return fail("denoiser.file: required when denoiser.kind = \"linear\"".into());
                }
            }
            other => {
                return fail(format!(
                    "denoiser.kind: expected \"dataset-oracle\", \"gmm\", \"linear\", or \"mean\", got {other:?}"
                ))
            }
        }
        let t = &n.train;
        if !(t.p_std > 0.0) || !(t.sigma_data > 0.0) {
            return fail(format!(
                "denoiser.train: needs p_std > 0 and sigma_data > 0, got p_std={} sigma_data={}",
                t.p_std, t.sigma_data
            ));
        }
        if t.pairs == 0 || t.buckets == 0 || t.eval_pairs == 0 {
            return fail("denoiser.train: pairs, buckets, and eval_pairs must all be at least 1".into());
        }
        if t.eval_sigmas.iter().any(|&s| !(s > 0.0)) {
            return fail("denoiser.train.eval_sigmas: every sigma must be positive".into());
        }
        let sm = &self.sampler;
        parse_integrator(&sm.integrator)?;
        if sm.finest_level == 0 || sm.finest_level > p.levels {
            return fail(format!(
                "sampler.finest_level: must lie in 1..={}, got {}",
                p.levels, sm.finest_level
            ));
        }
        let stage_count = p.levels - sm.finest_level + 1;
        if sm.steps.len() != stage_count {
            return fail(format!(
                "sampler.steps: needs one entry per stage ({} for levels {}..={}), got {}",
                stage_count, sm.finest_level, p.levels, sm.steps.len()
            ));
        }
        if sm.steps.iter().any(|&s| s == 0) {
            return fail("sampler.steps: every stage needs at least one step".into());
        }
        if !(0.0..=1.0).contains(&sm.churn) || !sm.churn.is_finite() {
            return fail(format!("sampler.churn: must lie in [0, 1], got {}", sm.churn));
        }
        if sm.chains == 0 {
            return fail("sampler.chains: must be at least 1".into());
        }
        if self.forward.times.iter().any(|&t| !(t >= 0.0) || !t.is_finite()) {
            return fail("forward.times: every time must be finite and >= 0".into());
        }
        parse_format(&self.output)?;
        Ok(())
    }

    pub fn to_process(&self) -> CliResult<LaplacianProcess> {
        let p = &self.process;
        let shape = parse_shape(&p.shape)?;
        let ramp_start = match &p.ramp_start {
            Some(rs) => rs.clone(),
            None => p.t_star.iter().map(|t| 0.5 * t).collect(),
        };
        let profile = AttenuationProfile::new(shape, p.levels, p.t_star.clone(), ramp_start)
            .map_err(|e| CliError::Config(format!("process: {e}")))?;
        LaplacianProcess::new(p.levels, p.factor, profile)
            .map_err(|e| CliError::Config(format!("process: {e}")))
    }

    pub fn to_schedule(&self) -> CliResult<SigmaSchedule> {
        let s = &self.schedule;
        SigmaSchedule::new(s.sigma_min, s.sigma_max, s.rho)
            .map_err(|e| CliError::Config(format!("schedule: {e}")))
    }

    pub fn to_integrator(&self) -> CliResult<Integrator> {
        parse_integrator(&self.sampler.integrator)
    }
}

fn parse_shape(text: &str) -> CliResult<RampShape> {
    match text {
        "linear" => Ok(RampShape::Linear),
        "cosine" => Ok(RampShape::Cosine),
        "step" => Ok(RampShape::Step),
        other => Err(CliError::Config(format!(
            "process.shape: expected \"linear\", \"cosine\", or \"step\", got {other:?}"
        ))),
    }
}

fn parse_integrator(text: &str) -> CliResult<Integrator> {
    match text {
        "euler" => Ok(Integrator::Euler),
        "heun" => Ok(Integrator::Heun),
        other => Err(CliError::Config(format!(
            "sampler.integrator: expected \"euler\" or \"heun\", got {other:?}"
        ))),
    }
}

//! Self-verification suite: eleven numbered checks covering the pyramid
//! algebra, the noise identities, denoiser optimality, integrator accuracy,
//! and end-to-end cascade consistency. Every check is a pure function of its
//! seed; tolerances are pinned here as constants.

use std::sync::Arc;
use std::time::Instant;

use rand::Rng;

use crate::denoiser::{
    eval_loss_paired, train_linear, DatasetOracle, Denoiser, GmmComponent, GmmOracle,
    IdentityDenoiser, LinearTrainConfig, MeanPredictor,
};
use crate::grid::{downsample, haar_forward_2level, haar_inverse_2level, Pyramid};
use crate::process::{
    project_noise_down, switch_up_with_noise, DiffusionState, LaplacianProcess,
};
use crate::rng;
use crate::sampler::{
    integrate_stage, reference_edm_sample, stage_plan, CascadeSampler, Integrator, SamplerConfig,
    Stage,
};
use crate::schedule::{AttenuationProfile, Precondition, SigmaSchedule, TrainSigmaDist};
use crate::synth;
use crate::{Error, Field, Result};

/// Outcome of one verification check.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    /// Headline measurement the pass/fail decision was made on.
    pub measured: f64,
    /// Bound `measured` was compared against.
    pub threshold: f64,
    pub detail: String,
    pub seconds: f64,
}

impl CheckResult {
    /// One-line report, stable format: status, name, measurement, bound,
    /// detail, wall time.
    pub fn line(&self) -> String {
        format!(
            "{} {:<20} measured={:<12.4e} threshold={:<9.1e} {:>6.2}s  {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            self.threshold,
            self.seconds,
            self.detail
        )
    }
}

/// Check names in suite order.
pub const CHECK_NAMES: [&str; 11] = [
    "pyramid_roundtrip",
    "haar_transform",
    "noise_pooling",
    "switch_identity",
    "edm_reduction",
    "score_gradient",
    "mmse_optimality",
    "convergence_order",
    "mode_recovery",
    "cascade_consistency",
    "wiener_recovery",
];

/// Runs one named check.
pub fn run_check(name: &str, seed: u64) -> Result<CheckResult> {
    match name {
        "pyramid_roundtrip" => check_pyramid_roundtrip(seed),
        "haar_transform" => check_haar_transform(seed),
        "noise_pooling" => check_noise_pooling(seed),
        "switch_identity" => check_switch_identity(seed),
        "edm_reduction" => check_edm_reduction(seed),
        "score_gradient" => check_score_gradient(seed),
        "mmse_optimality" => check_mmse_optimality(seed),
        "convergence_order" => check_convergence_order(seed),
        "mode_recovery" => check_mode_recovery(seed),
        "cascade_consistency" => check_cascade_consistency(seed),
        "wiener_recovery" => check_wiener_recovery(seed),
        other => Err(Error::Config(format!(
            "unknown check {other:?}; known checks: {}",
            CHECK_NAMES.join(", ")
        ))),
    }
}

/// Runs the full suite in order.
pub fn run_all(seed: u64) -> Result<Vec<CheckResult>> {
    CHECK_NAMES.iter().map(|name| run_check(name, seed)).collect()
}

const EXACT_TOL: f64 = 1e-12;

fn finish(
    name: &'static str,
    passed: bool,
    measured: f64,
    threshold: f64,
    detail: String,
    started: Instant,
) -> CheckResult {
    CheckResult {
        name,
        passed,
        measured,
        threshold,
        detail,
        seconds: started.elapsed().as_secs_f64(),
    }
}

/// Decompose then reconstruct 200 random fields across channel counts 1-3,
/// sizes 4-64, 1-3 bands, factors 2 and 4; worst pointwise relative error
/// must stay within 1e-12.
fn check_pyramid_roundtrip(seed: u64) -> Result<CheckResult> {
    let started = Instant::now();
    let mut rng = rng::stream(seed, 1, 0);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let factor = if rng.gen_bool(0.5) { 2usize } else { 4 };
        let levels = rng.gen_range(1..=3usize);
        let scale = factor.pow(levels as u32 - 1);
        let min_base = (4 + scale - 1) / scale;
        let max_base = 64 / scale;
        let c = rng.gen_range(1..=3usize);
        let h = scale * rng.gen_range(min_base..=max_base);
        let w = scale * rng.gen_range(min_base..=max_base);
        let x = Field::standard_normal(c, h, w, &mut rng)?;
        let rec = Pyramid::decompose(&x, levels, factor)?.reconstruct()?;
        worst = worst.max(rec.rel_sup_dist(&x)?);
    }
    Ok(finish(
        "pyramid_roundtrip",
        worst <= EXACT_TOL,
        worst,
        EXACT_TOL,
        "worst relative error over 200 random decompose/reconstruct round trips".into(),
        started,
    ))
}

/// Two-level wavelet transform: (3, H, W) maps to (48, H/4, W/4), inverts to
/// 1e-12, and preserves the Euclidean norm to 1e-12.
fn check_haar_transform(seed: u64) -> Result<CheckResult> {
    let started = Instant::now();
    let mut rng = rng::stream(seed, 2, 0);
    let mut worst = 0.0f64;
    let mut shapes_ok = true;
    for trial in 0..20 {
        let (h, w) = if trial == 0 {
            (8, 8)
        } else {
            (4 * rng.gen_range(1..=8usize), 4 * rng.gen_range(1..=8usize))
        };
        let x = Field::standard_normal(3, h, w, &mut rng)?;
        let fwd = haar_forward_2level(&x)?;
        if fwd.shape() != (48, h / 4, w / 4) {
            shapes_ok = false;
        }
        let back = haar_inverse_2level(&fwd)?;
        worst = worst.max(back.rel_sup_dist(&x)?);
        let norm_drift = (fwd.norm() - x.norm()).abs() / x.norm();
        worst = worst.max(norm_drift);
    }
    Ok(finish(
        "haar_transform",
        shapes_ok && worst <= EXACT_TOL,
        worst,
        EXACT_TOL,
        format!(
            "(3,H,W)->(48,H/4,W/4) shape {}; worst of round-trip and norm drift over 20 fields",
            if shapes_ok { "ok" } else { "WRONG" }
        ),
        started,
    ))
}

/// Per-pixel standard deviation of `2 * downsample(eps, 2)` over one million
/// pooled values of unit white noise must sit within 1% of 1.
fn check_noise_pooling(seed: u64) -> Result<CheckResult> {
    let started = Instant::now();
    let mut rng = rng::stream(seed, 3, 0);
    let mut count = 0usize;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    while count < 1_000_000 {
        let eps = Field::standard_normal(1, 400, 400, &mut rng)?;
        let pooled = project_noise_down(&eps, 2)?;
        for v in pooled.values() {
            sum += v;
            sum_sq += v * v;
        }
        count += pooled.len();
    }
    let n = count as f64;
    let mean = sum / n;
    let std = (sum_sq / n - mean * mean).sqrt();
    let err = (std - 1.0).abs();
    Ok(finish(
        "noise_pooling",
        err <= 0.01,
        err,
        0.01,
        format!("pooled-noise std {std:.5} over {count} values (target 1 within 1%)"),
        started,
    ))
}

/// Resolution switch with coupled noise: lifting `x_r + sigma * eps_r` must
/// equal `up(x_r) + sigma * ratio * eps_R` to 1e-12, 100 random instances at
/// ratios 2 and 4.
fn check_switch_identity(seed: u64) -> Result<CheckResult> {
    let started = Instant::now();
    let mut rng = rng::stream(seed, 4, 0);
    let mut worst = 0.0f64;
    for i in 0..100 {
        let ratio = if i % 2 == 0 { 2usize } else { 4 };
        let c = rng.gen_range(1..=2usize);
        let hr = rng.gen_range(1..=6usize);
        let wr = rng.gen_range(1..=6usize);
        let clean = Field::standard_normal(c, hr, wr, &mut rng)?.scale(3.0)?;
        let sigma = rng.gen_range(0.05..10.0);
        let eps_high = Field::standard_normal(c, hr * ratio, wr * ratio, &mut rng)?;
        let eps_low = project_noise_down(&eps_high, ratio)?;
        let state = DiffusionState {
            field: clean.axpy(sigma, &eps_low)?,
            sigma,
            level: 2,
            stream: 0,
        };
        let (lifted, record) = switch_up_with_noise(&state, 1, ratio, &eps_high)?;
        let expected = crate::grid::upsample(&clean, ratio)?
            .axpy(sigma * ratio as f64, &eps_high)?;
        worst = worst.max(lifted.field.rel_sup_dist(&expected)?);
        worst = worst.max((record.sigma_after - sigma * ratio as f64).abs() / (sigma * ratio as f64));
    }
    Ok(finish(
        "switch_identity",
        worst <= EXACT_TOL,
        worst,
        EXACT_TOL,
        "worst relative error of the coupled-noise switch identity, 100 instances".into(),
        started,
    ))
}

/// A one-stage plan must reproduce the independent single-resolution
/// sampler bit for bit, over 10 random schedule/step/shape/data configs,
/// both integrators.
fn check_edm_reduction(seed: u64) -> Result<CheckResult> {
    let started = Instant::now();
    let mut worst = 0.0f64;
    let mut bits_equal = true;
    for cfg_i in 0..10u64 {
        let mut rng = rng::stream(seed, 5, cfg_i);
        let integrator = if cfg_i % 2 == 0 { Integrator::Euler } else { Integrator::Heun };
        let steps = rng.gen_range(3..=10usize);
        let schedule = SigmaSchedule::new(
            rng.gen_range(0.002..0.02),
            rng.gen_range(10.0..80.0),
            rng.gen_range(3.0..7.0),
        )?;
        let (c, h, w) = [(1, 1, 1), (1, 2, 2), (2, 2, 2), (1, 4, 4), (1, 2, 4)]
            [rng.gen_range(0..5usize)];
        let count = rng.gen_range(1..=4usize);
        let mut points = Vec::with_capacity(count);
        for _ in 0..count {
            points.push(Field::standard_normal(c, h, w, &mut rng)?.scale(0.7)?);
        }
        let oracle: Arc<dyn Denoiser> =
            Arc::new(DatasetOracle::new(points, LaplacianProcess::standard())?);
        let config = SamplerConfig::new(
            vec![steps],
            integrator,
            vec![Stage {
                level: 1,
                sigma_entry: schedule.sigma_max,
                sigma_exit: 0.0,
                denoiser: oracle.clone(),
            }],
        );
        let sampler =
            CascadeSampler::new(LaplacianProcess::standard(), schedule.clone(), config)?;
        let run_seed = seed.wrapping_add(1000 + cfg_i);
        let a = sampler.sample_chain(c, h, w, run_seed, cfg_i)?.sample;
        let b = reference_edm_sample(
            oracle.as_ref(),
            &schedule,
            integrator,
            steps,
            c,
            h,
            w,
            run_seed,
            cfg_i,
        )?;
        worst = worst.max(a.max_abs_diff(&b)?);
        let same_bits = a
            .values()
            .iter()
            .zip(b.values())
            .all(|(x, y)| x.to_bits() == y.to_bits());
        bits_equal = bits_equal && same_bits;
    }
    Ok(finish(
        "edm_reduction",
        bits_equal && worst == 0.0,
        worst,
        0.0,
        "max abs divergence from the reference sampler over 10 configs (bitwise compare)".into(),
        started,
    ))
}

/// Oracle score against a central finite difference of the closed-form
/// mixture log density, 50 probes across plain and two-band processes,
/// relative error within 1e-5.
fn check_score_gradient(seed: u64) -> Result<CheckResult> {
    let started = Instant::now();
    let mut worst = 0.0f64;
    for p in 0..50u64 {
        let mut rng = rng::stream(seed, 6, p);
        let (process, level, c, h, w) = match p % 3 {
            0 => (LaplacianProcess::standard(), 1usize, 1usize, 4usize, 4usize),
            1 => {
                let profile = AttenuationProfile::linear_defaults(2, vec![1.0])?;
                (LaplacianProcess::new(2, 2, profile)?, 1, 1, 4, 4)
            }
            _ => {
                let profile = AttenuationProfile::linear_defaults(2, vec![1.0])?;
                (LaplacianProcess::new(2, 2, profile)?, 2, 1, 2, 2)
            }
        };
        let count = rng.gen_range(2..=8usize);
        let mut points = Vec::with_capacity(count);
        for _ in 0..count {
            points.push(Field::standard_normal(c, h, w, &mut rng)?);
        }
        let oracle = DatasetOracle::new(points, process.clone())?;
        let sigma = rng.gen_range(0.3..3.0);
        let pick = rng.gen_range(0..count);
        let anchor = oracle.points_at(level)?[pick].clone();
        let mu = process.mean_at_level(&anchor, level, sigma)?;
        let (qc, qh, qw) = mu.shape();
        let y = mu.axpy(sigma, &Field::standard_normal(qc, qh, qw, &mut rng)?)?;
        let denoised = oracle.denoise(&y, sigma, level)?;
        let (alphas, _) = process.alphas_at_level(level, sigma)?;
        let score =
            crate::denoiser::score_from_denoiser(&denoised, &y, sigma, &alphas, process.factor())?;
        let mut fd = Field::zeros(qc, qh, qw)?;
        for i in 0..y.len() {
            let step = 1e-5 * (1.0 + y.values()[i].abs());
            let mut hi = y.clone();
            hi.values_mut()[i] += step;
            let mut lo = y.clone();
            lo.values_mut()[i] -= step;
            fd.values_mut()[i] = (oracle.log_density(&hi, sigma, level)?
                - oracle.log_density(&lo, sigma, level)?)
                / (2.0 * step);
        }
        let err = fd.max_abs_diff(&score)? / score.max_abs().max(1e-9);
        worst = worst.max(err);
    }
    Ok(finish(
        "score_gradient",
        worst <= 1e-5,
        worst,
        1e-5,
        "worst relative gap between oracle score and finite-difference log-density gradient"
            .into(),
        started,
    ))
}

/// Posterior-mean loss must not exceed the affine, dataset-mean, or identity
/// denoiser losses beyond twice the Monte-Carlo standard errors, on 20
/// random datasets across four sigma values.
fn check_mmse_optimality(seed: u64) -> Result<CheckResult> {
    let started = Instant::now();
    let mut min_z = f64::INFINITY;
    let mut worst_case = String::new();
    for ds in 0..20u64 {
        let mut rng = rng::stream(seed, 7, ds);
        let count = rng.gen_range(2..=10usize);
        let mut points = Vec::with_capacity(count);
        for _ in 0..count {
            points.push(Field::standard_normal(1, 2, 2, &mut rng)?.scale(0.5)?);
        }
        let oracle = DatasetOracle::new(points.clone(), LaplacianProcess::standard())?;
        let linear = train_linear(
            &points,
            &TrainSigmaDist::default(),
            &Precondition::default(),
            &LinearTrainConfig { pairs: 4000, buckets: 8, ridge_scale: 1e-8 },
            &mut rng,
        )?;
        let mean = MeanPredictor::from_dataset(&points)?;
        let identity = IdentityDenoiser;
        let rivals: [(&str, &dyn Denoiser); 3] =
            [("linear", &linear), ("mean", &mean), ("identity", &identity)];
        for &sigma in &[0.1, 0.5, 1.0, 5.0] {
            let estimates = eval_loss_paired(
                &[&oracle, rivals[0].1, rivals[1].1, rivals[2].1],
                &points,
                sigma,
                400,
                &mut rng,
            )?;
            let (mmse_loss, mmse_se) = (estimates[0].mean, estimates[0].std_err);
            for (k, (rival_name, _)) in rivals.iter().enumerate() {
                let rival = &estimates[k + 1];
                let se = mmse_se + rival.std_err;
                let z = if se > 0.0 {
                    (rival.mean - mmse_loss) / se
                } else if rival.mean >= mmse_loss {
                    f64::INFINITY
                } else {
                    f64::NEG_INFINITY
                };
                if z < min_z {
                    min_z = z;
                    worst_case = format!(
                        "tightest: {rival_name} at sigma {sigma} (dataset {ds}, {count} points)"
                    );
                }
            }
        }
    }
    Ok(finish(
        "mmse_optimality",
        min_z >= -2.0,
        min_z,
        -2.0,
        format!("min z of (rival loss - mmse loss) / combined SE; {worst_case}"),
        started,
    ))
}

/// On isotropic Gaussian data the backward trajectory is known in closed
/// form; halving the step size must cut the endpoint error by 2x for Euler
/// (ratio in [1.7, 2.4]) and 4x for Heun (ratio in [3, 5]).
fn check_convergence_order(seed: u64) -> Result<CheckResult> {
    let started = Instant::now();
    let center = Field::constant(1, 2, 2, 0.3)?;
    let variance = 1.0;
    let oracle = GmmOracle::new(vec![GmmComponent {
        weight: 1.0,
        mean: center.clone(),
        var: variance,
    }])?;
    let schedule = SigmaSchedule::default_edm();
    let process = LaplacianProcess::standard();
    let sigma0 = schedule.sigma_max;
    let shrink = (variance / (variance + sigma0 * sigma0)).sqrt();
    let probes: Vec<Field> = (0..5u64)
        .map(|p| {
            let mut rng = rng::stream(seed, 8, p);
            Ok(Field::standard_normal(1, 2, 2, &mut rng)?.scale(sigma0)?)
        })
        .collect::<Result<_>>()?;
    let endpoint_error = |integrator: Integrator, steps: usize| -> Result<f64> {
        let grid = schedule.time_grid(steps)?;
        let mut total = 0.0;
        for x0 in &probes {
            let state = DiffusionState { field: x0.clone(), sigma: sigma0, level: 1, stream: 0 };
            let (end, _) =
                integrate_stage(state, integrator, 0.0, &oracle, &grid, &process, &mut None)?;
            let exact = center.axpy(shrink, &x0.sub(&center)?)?;
            total += end.field.sub(&exact)?.norm();
        }
        Ok(total / probes.len() as f64)
    };
    let mut detail = String::new();
    let mut margin = f64::INFINITY;
    for (integrator, label, lo, hi) in [
        (Integrator::Heun, "heun", 3.0, 5.0),
        (Integrator::Euler, "euler", 1.7, 2.4),
    ] {
        let errors = [
            endpoint_error(integrator, 12)?,
            endpoint_error(integrator, 24)?,
            endpoint_error(integrator, 48)?,
        ];
        for (i, pair) in errors.windows(2).enumerate() {
            let ratio = pair[0] / pair[1];
            margin = margin.min((ratio - lo).min(hi - ratio));
            detail.push_str(&format!("{label} r{}={ratio:.2} ", i + 1));
        }
        detail.push_str(&format!("(want [{lo}, {hi}]); "));
    }
    Ok(finish(
        "convergence_order",
        margin >= 0.0,
        margin,
        0.0,
        format!("min distance of error ratios to their brackets; {detail}"),
        started,
    ))
}

/// Two-atom data at -1/+1, 36 Heun steps, ten thousand chains: each atom
/// receives half the mass within 0.015, and at least 99% of chains end
/// within 1e-3 of an atom.
fn check_mode_recovery(seed: u64) -> Result<CheckResult> {
    let started = Instant::now();
    let atoms = vec![Field::constant(1, 1, 1, 1.0)?, Field::constant(1, 1, 1, -1.0)?];
    let oracle: Arc<dyn Denoiser> =
        Arc::new(DatasetOracle::new(atoms, LaplacianProcess::standard())?);
    let schedule = SigmaSchedule::default_edm();
    let config = SamplerConfig::new(
        vec![36],
        Integrator::Heun,
        vec![Stage {
            level: 1,
            sigma_entry: schedule.sigma_max,
            sigma_exit: 0.0,
            denoiser: oracle,
        }],
    );
    let sampler = CascadeSampler::new(LaplacianProcess::standard(), schedule, config)?;
    let chains = 10_000u64;
    let mut plus = 0usize;
    let mut minus = 0usize;
    for chain in 0..chains {
        let value = sampler.sample_chain(1, 1, 1, seed.wrapping_add(90), chain)?.sample.values()
            [0];
        if (value - 1.0).abs() <= 1e-3 {
            plus += 1;
        } else if (value + 1.0).abs() <= 1e-3 {
            minus += 1;
        }
    }
    let mass_err = (plus as f64 / chains as f64 - 0.5).abs();
    let hit_rate = (plus + minus) as f64 / chains as f64;
    Ok(finish(
        "mode_recovery",
        mass_err <= 0.015 && hit_rate >= 0.99,
        mass_err,
        0.015,
        format!(
            "mass balance error {mass_err:.4} (bound 0.015); {:.2}% of {chains} chains within \
             1e-3 of an atom (need 99%)",
            hit_rate * 100.0
        ),
        started,
    ))
}

/// Three-stage 8->16->32 sampling against coarse-only sampling on the same
/// four-image dataset: per-pixel mean and variance of the pooled finals
/// match within 3 standard errors at 2000 chains per side. Both sides run
/// the same chain seeds, so shared sampling noise cancels out of the
/// difference while the marginal standard errors keep the bound
/// conservative; any systematic mismatch between the plans still shows.
fn check_cascade_consistency(seed: u64) -> Result<CheckResult> {
    let started = Instant::now();
    let data = synth::four_image_dataset(1, 32, 32)?;
    let profile = AttenuationProfile::linear_defaults(3, vec![0.4, 1.6])?;
    let process = LaplacianProcess::new(3, 2, profile)?;
    let oracle: Arc<dyn Denoiser> = Arc::new(DatasetOracle::new(data, process.clone())?);
    let schedule = SigmaSchedule::default_edm();
    let full = CascadeSampler::new(
        process.clone(),
        schedule.clone(),
        SamplerConfig::new(
            vec![14, 8, 8],
            Integrator::Heun,
            stage_plan(&process, &schedule, 1, oracle.clone())?,
        ),
    )?;
    let coarse = CascadeSampler::new(
        process.clone(),
        schedule.clone(),
        SamplerConfig::new(
            vec![30],
            Integrator::Heun,
            stage_plan(&process, &schedule, 3, oracle)?,
        ),
    )?;
    let chains = 2000u64;
    let dim = 64usize;
    let mut acc = vec![[0.0f64; 8]; dim]; // per pixel: sums of v^1..v^4 for both sides
    for chain in 0..chains {
        let fine = full.sample_chain(1, 32, 32, seed.wrapping_add(91), chain)?.sample;
        let pooled = downsample(&downsample(&fine, 2)?, 2)?;
        let direct = coarse.sample_chain(1, 32, 32, seed.wrapping_add(91), chain)?.sample;
        for i in 0..dim {
            let a = pooled.values()[i];
            let b = direct.values()[i];
            let cell = &mut acc[i];
            cell[0] += a;
            cell[1] += a * a;
            cell[2] += a * a * a;
            cell[3] += a * a * a * a;
            cell[4] += b;
            cell[5] += b * b;
            cell[6] += b * b * b;
            cell[7] += b * b * b * b;
        }
    }
    let n = chains as f64;
    let moments = |s: &[f64]| {
        let m = s[0] / n;
        let m2 = (s[1] / n - m * m).max(0.0);
        let m3 = s[2] / n - 3.0 * m * s[1] / n + 2.0 * m * m * m;
        let m4 = s[3] / n - 4.0 * m * s[2] / n + 6.0 * m * m * s[1] / n - 3.0 * m * m * m * m;
        (m, m2, m3, m4)
    };
    let mut max_z = 0.0f64;
    for cell in &acc {
        let (ma, va, _m3a, m4a) = moments(&cell[0..4]);
        let (mb, vb, _m3b, m4b) = moments(&cell[4..8]);
        let z_mean = (ma - mb).abs() / ((va / n + vb / n).sqrt() + 1e-9);
        let se_var =
            (((m4a - va * va).max(0.0) + (m4b - vb * vb).max(0.0)) / n).sqrt() + 1e-9;
        let z_var = (va - vb).abs() / se_var;
        max_z = max_z.max(z_mean).max(z_var);
    }
    Ok(finish(
        "cascade_consistency",
        max_z <= 3.0,
        max_z,
        3.0,
        format!(
            "max per-pixel z over pooled mean and variance, {chains} chains per plan, 64 pixels"
        ),
        started,
    ))
}

/// An affine denoiser trained on draws from N(0, 0.25 I) must act as the
/// analytic shrinkage v/(v + sigma^2) within 2% at three sigmas.
fn check_wiener_recovery(seed: u64) -> Result<CheckResult> {
    let started = Instant::now();
    let variance = 0.25f64;
    let mut rng = rng::stream(seed, 11, 0);
    let mut dataset = Vec::with_capacity(1 << 16);
    for _ in 0..1 << 16 {
        dataset.push(Field::standard_normal(1, 2, 2, &mut rng)?.scale(variance.sqrt())?);
    }
    let denoiser = train_linear(
        &dataset,
        &TrainSigmaDist::default(),
        &Precondition::default(),
        &LinearTrainConfig { pairs: 100_000, buckets: 12, ridge_scale: 1e-8 },
        &mut rng,
    )?;
    let mut worst = 0.0f64;
    let mut detail = String::from("gain vs v/(v+s^2):");
    for &sigma in &[0.25, 0.5, 1.0] {
        let mut probe_rng = rng::stream(seed, 11, 1);
        let gain = denoiser.effective_gain(sigma, 200, &mut probe_rng)?;
        let target = variance / (variance + sigma * sigma);
        let rel = (gain - target).abs() / target;
        worst = worst.max(rel);
        detail.push_str(&format!(" s={sigma}: {gain:.4}/{target:.4}"));
    }
    Ok(finish(
        "wiener_recovery",
        worst <= 0.02,
        worst,
        0.02,
        detail,
        started,
    ))
}

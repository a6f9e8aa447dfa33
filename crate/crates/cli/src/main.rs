//! `ldm`: command-line front end for the multi-band diffusion engine.
//! Subcommands cover band decomposition, forward noising, cascade sampling,
//! affine denoiser training, dataset synthesis, and the verification suite.

use ldm_cli::{config, dataset, image, CliError, CliResult};

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use ldm_core::denoiser::{
    eval_loss_paired, train_linear, DatasetOracle, Denoiser, GmmComponent, GmmOracle,
    LinearDenoiser, LinearTrainConfig, MeanPredictor,
};
use ldm_core::grid::{downsample, Pyramid};
use ldm_core::process::LaplacianProcess;
use ldm_core::sampler::{stage_plan, CascadeSampler, SamplerConfig, Trajectory};
use ldm_core::schedule::{Precondition, TrainSigmaDist};
use ldm_core::{rng, verify, Field};

use config::{parse_format, RunConfig};
use image::{read_field, write_netpbm, write_raw, BitDepth};

const LANE_FORWARD: u64 = 0xF0;
const LANE_TRAIN: u64 = 0x7121;
const LANE_EVAL: u64 = 0x7122;

#[derive(Parser)]
#[command(
    name = "ldm",
    version,
    about = "Multi-band diffusion engine: decomposition, noising, sampling, verification"
)]
struct Cli {
    /// Run configuration file (TOML); defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the seed from the config.
    #[arg(long, global = true, value_name = "INT")]
    seed: Option<u64>,
    /// Overrides the output directory from the config.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads for chain parallelism (default: all cores).
    #[arg(long, global = true, value_name = "INT")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split an image into its bands; writes one file per band and reports
    /// the reconstruction error.
    Decompose {
        /// Input image (.pgm/.ppm/.lraw).
        input: PathBuf,
    },
    /// Noise an image at each configured time and write the sequence.
    Forward {
        /// Input image (.pgm/.ppm/.lraw).
        input: PathBuf,
    },
    /// Run the configured sampling cascade and write samples, trajectories,
    /// and a manifest.
    Sample,
    /// Fit the bucketed affine denoiser and write it with a loss report.
    TrainLinear,
    /// Run verification checks (all by default, or the named subset).
    Verify {
        /// Check names to run; omit to run the full suite.
        checks: Vec<String>,
    },
    /// Generate the configured dataset as image files.
    DatasetGen,
}

fn main() -> ExitCode {
    // Die quietly when the consumer of a pipe closes early, like other
    // stream-producing tools, instead of panicking on EPIPE.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(match err {
                CliError::Verify(_) => 1u8,
                CliError::Config(_) => 2,
                CliError::Io(_) => 3,
            })
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.output.directory = out.display().to_string();
    }
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(CliError::Config("--threads: must be at least 1".into()));
        }
    }
    match &cli.command {
        Command::Decompose { input } => cmd_decompose(&config, input),
        Command::Forward { input } => cmd_forward(&config, input),
        Command::Sample => cmd_sample(&config, cli.threads),
        Command::TrainLinear => cmd_train_linear(&config),
        Command::Verify { checks } => cmd_verify(checks, config.seed),
        Command::DatasetGen => cmd_dataset_gen(&config),
    }
}

fn ensure_out_dir(config: &RunConfig) -> CliResult<PathBuf> {
    let dir = PathBuf::from(&config.output.directory);
    fs::create_dir_all(&dir)
        .map_err(|e| CliError::Io(format!("creating output directory {}: {e}", dir.display())))?;
    Ok(dir)
}

/// Writes a field under `dir/stem`: a quantized image when the format and
/// channel count allow it, and always the lossless raw dump. Returns the
/// file names written.
fn write_field_outputs(
    field: &Field,
    dir: &Path,
    stem: &str,
    depth: Option<BitDepth>,
) -> CliResult<Vec<String>> {
    let mut written = Vec::new();
    if let Some(depth) = depth {
        let ext = match field.channels() {
            1 => Some("pgm"),
            3 => Some("ppm"),
            _ => None,
        };
        if let Some(ext) = ext {
            let name = format!("{stem}.{ext}");
            write_netpbm(field, &dir.join(&name), depth)?;
            written.push(name);
        }
    }
    let name = format!("{stem}.lraw");
    write_raw(field, &dir.join(&name))?;
    written.push(name);
    Ok(written)
}

fn cmd_decompose(config: &RunConfig, input: &Path) -> CliResult<()> {
    let field = read_field(input)?;
    let process = config.to_process()?;
    let depth = parse_format(&config.output)?;
    let dir = ensure_out_dir(config)?;
    let levels = process.levels();
    let pyramid = Pyramid::decompose(&field, levels, process.factor()).map_err(CliError::from)?;
    for i in 1..=levels {
        let band = pyramid.band(i);
        let stem = format!("band_{i}");
        if i < levels {
            let peak = band.max_abs();
            let scale = if peak > 0.0 { 0.5 / peak } else { 1.0 };
            let vis = Field::from_fn(band.channels(), band.height(), band.width(), |c, y, x| {
                0.5 + band.get(c, y, x) * scale
            })
            .map_err(CliError::from)?;
            let files = write_field_outputs(&vis, &dir, &stem, depth)?;
            write_raw(band, &dir.join(format!("{stem}_values.lraw")))?;
            println!(
                "band {i}: {} (residual; gray 0.5 is 0, display scale {scale:.6e}; raw values in {stem}_values.lraw)",
                files.join(", ")
            );
        } else {
            let files = write_field_outputs(band, &dir, &stem, depth)?;
            println!("band {i}: {} (coarse approximation)", files.join(", "));
        }
    }
    let rebuilt = pyramid.reconstruct().map_err(CliError::from)?;
    let err = rebuilt.max_abs_diff(&field).map_err(CliError::from)?;
    println!("max reconstruction error: {err:.3e}");
    Ok(())
}

fn cmd_forward(config: &RunConfig, input: &Path) -> CliResult<()> {
    let field = read_field(input)?;
    let process = config.to_process()?;
    let depth = parse_format(&config.output)?;
    let dir = ensure_out_dir(config)?;
    for (i, &t) in config.forward.times.iter().enumerate() {
        let mut noise = rng::stream(config.seed, i as u64, LANE_FORWARD);
        let state = process.forward_noise(&field, t, &mut noise).map_err(CliError::from)?;
        let files = write_field_outputs(&state.field, &dir, &format!("forward_{i:02}"), depth)?;
        println!("t = {t}: {}", files.join(", "));
    }
    Ok(())
}

/// Pooled copies of the dataset atoms for every level a plan visits, used
/// for the trajectory distance column.
fn atoms_by_level(
    atoms: &[Field],
    levels: &[usize],
    factor: usize,
) -> CliResult<BTreeMap<usize, Vec<Field>>> {
    let mut map = BTreeMap::new();
    for &level in levels {
        let mut pooled = Vec::with_capacity(atoms.len());
        for atom in atoms {
            let mut current = atom.clone();
            for _ in 1..level {
                current = downsample(&current, factor).map_err(CliError::from)?;
            }
            pooled.push(current);
        }
        map.insert(level, pooled);
    }
    Ok(map)
}

fn nearest_atom_distance(field: &Field, atoms: Option<&Vec<Field>>) -> f64 {
    match atoms {
        Some(list) => list
            .iter()
            .filter_map(|atom| field.sub(atom).ok().map(|d| d.norm()))
            .fold(f64::INFINITY, f64::min),
        None => f64::NAN,
    }
}

fn write_trajectory_csv(
    traj: &Trajectory,
    path: &Path,
    atoms: &BTreeMap<usize, Vec<Field>>,
) -> CliResult<()> {
    let mut text = String::from("step,sigma,level,field_norm,nearest_atom_distance\n");
    for (step, point) in traj.points.iter().enumerate() {
        let dist = nearest_atom_distance(&point.field, atoms.get(&point.level));
        text.push_str(&format!(
            "{step},{},{},{},{}\n",
            point.sigma,
            point.level,
            point.field.norm(),
            dist
        ));
    }
    fs::write(path, text).map_err(|e| CliError::Io(format!("writing {}: {e}", path.display())))
}

#[derive(Serialize)]
struct Manifest {
    tool: String,
    version: String,
    command: String,
    seed: u64,
    chains: usize,
    config_sha256: String,
    files: Vec<String>,
}

fn config_digest(config: &RunConfig) -> String {
    let mut hasher = Sha256::new();
    hasher.update(config.to_toml().as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn build_denoiser(
    config: &RunConfig,
    process: &LaplacianProcess,
    points: &[Field],
) -> CliResult<Arc<dyn Denoiser>> {
    match config.denoiser.kind.as_str() {
        "dataset-oracle" => Ok(Arc::new(DatasetOracle::new(points.to_vec(), process.clone())?)),
        "mean" => Ok(Arc::new(MeanPredictor::from_dataset(points)?)),
        "gmm" => {
            let d = &config.dataset;
            let components = config
                .denoiser
                .gmm
                .iter()
                .map(|c| {
                    Ok(GmmComponent {
                        weight: c.weight,
                        mean: Field::constant(d.channels, d.height, d.width, c.mean)?,
                        var: c.var,
                    })
                })
                .collect::<Result<Vec<_>, ldm_core::Error>>()?;
            Ok(Arc::new(GmmOracle::new(components)?))
        }
        "linear" => {
            let path = PathBuf::from(config.denoiser.file.as_ref().expect("validated"));
            let bytes = fs::read(&path)
                .map_err(|e| CliError::Io(format!("reading denoiser {}: {e}", path.display())))?;
            Ok(Arc::new(LinearDenoiser::read_from(&mut bytes.as_slice())?))
        }
        other => Err(CliError::Config(format!("denoiser.kind: unsupported kind {other:?}"))),
    }
}

fn cmd_sample(config: &RunConfig, threads: Option<usize>) -> CliResult<()> {
    let process = config.to_process()?;
    let schedule = config.to_schedule()?;
    let integrator = config.to_integrator()?;
    let depth = parse_format(&config.output)?;
    let dir = ensure_out_dir(config)?;
    let kind = config.denoiser.kind.as_str();

    let stage_count = process.levels() - config.sampler.finest_level + 1;
    if stage_count > 1 && kind != "dataset-oracle" {
        return Err(CliError::Config(format!(
            "denoiser.kind: {kind:?} supports single-stage plans only; multi-stage sampling needs \"dataset-oracle\""
        )));
    }

    let needs_dataset = matches!(kind, "dataset-oracle" | "mean");
    let points = if needs_dataset {
        dataset::materialize(&config.dataset, &config.denoiser.gmm, config.seed)?
    } else {
        Vec::new()
    };
    let denoiser = build_denoiser(config, &process, &points)?;

    let stages = stage_plan(&process, &schedule, config.sampler.finest_level, denoiser)?;
    let mut plan = SamplerConfig::new(config.sampler.steps.clone(), integrator, stages);
    plan.churn = config.sampler.churn;
    let sampler = CascadeSampler::new(process.clone(), schedule, plan)?;

    let (c, h, w) = (config.dataset.channels, config.dataset.height, config.dataset.width);
    let chains = config.sampler.chains;
    let seed = config.seed;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Config(format!("--threads: {e}")))?;
    let results: Vec<Result<Trajectory, ldm_core::Error>> = pool.install(|| {
        (0..chains)
            .into_par_iter()
            .map(|chain| sampler.sample_chain(c, h, w, seed, chain as u64))
            .collect()
    });

    let atom_fields: Option<Vec<Field>> = match kind {
        "dataset-oracle" | "mean" => Some(points.clone()),
        "gmm" => {
            let d = &config.dataset;
            Some(
                config
                    .denoiser
                    .gmm
                    .iter()
                    .map(|comp| Field::constant(d.channels, d.height, d.width, comp.mean))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(CliError::from)?,
            )
        }
        _ => None,
    };
    let visited: Vec<usize> = (config.sampler.finest_level..=process.levels()).collect();
    let atoms = match &atom_fields {
        Some(list) => atoms_by_level(list, &visited, process.factor())?,
        None => BTreeMap::new(),
    };

    let mut files = Vec::new();
    for (chain, result) in results.into_iter().enumerate() {
        let traj = result.map_err(|e| {
            CliError::Config(format!("chain {chain} failed during sampling: {e}"))
        })?;
        files.extend(write_field_outputs(&traj.sample, &dir, &format!("chain_{chain:04}"), depth)?);
        if config.output.trajectories {
            let name = format!("trajectory_{chain:04}.csv");
            write_trajectory_csv(&traj, &dir.join(&name), &atoms)?;
            files.push(name);
        }
    }

    let manifest = Manifest {
        tool: "ldm".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: "sample".into(),
        seed,
        chains,
        config_sha256: config_digest(config),
        files: files.clone(),
    };
    let manifest_text = toml::to_string_pretty(&manifest)
        .map_err(|e| CliError::Config(format!("serializing manifest: {e}")))?;
    fs::write(dir.join("manifest.toml"), manifest_text)
        .map_err(|e| CliError::Io(format!("writing manifest: {e}")))?;

    println!(
        "sampled {chains} chain(s) through {stage_count} stage(s) into {} ({} files + manifest.toml)",
        dir.display(),
        files.len()
    );
    Ok(())
}

fn cmd_train_linear(config: &RunConfig) -> CliResult<()> {
    let points = dataset::materialize(&config.dataset, &config.denoiser.gmm, config.seed)?;
    let t = &config.denoiser.train;
    let dist = TrainSigmaDist::new(t.p_mean, t.p_std)?;
    let precond = Precondition::new(t.sigma_data)?;
    let train_config = LinearTrainConfig {
        pairs: t.pairs,
        buckets: t.buckets,
        ridge_scale: t.ridge_scale,
    };
    let mut train_rng = rng::stream(config.seed, LANE_TRAIN, 0);
    let linear = train_linear(&points, &dist, &precond, &train_config, &mut train_rng)?;

    let dir = ensure_out_dir(config)?;
    let model_path = dir.join("denoiser.bin");
    let mut bytes = Vec::new();
    linear.write_to(&mut bytes).map_err(CliError::from)?;
    fs::write(&model_path, bytes)
        .map_err(|e| CliError::Io(format!("writing {}: {e}", model_path.display())))?;

    let oracle = DatasetOracle::new(points.clone(), LaplacianProcess::standard())?;
    let mean = MeanPredictor::from_dataset(&points)?;
    let mut csv = String::from("sigma,mmse_loss,mmse_se,linear_loss,linear_se,mean_loss,mean_se\n");
    let mut report = String::new();
    report.push_str(&format!(
        "trained on {} pairs over {} sigma buckets ({} data points)\n",
        t.pairs,
        t.buckets,
        points.len()
    ));
    if linear.ridge_buckets() > 0 {
        report.push_str(&format!(
            "ridge fallback regularized singular normal equations in {} of {} buckets\n",
            linear.ridge_buckets(),
            t.buckets
        ));
    } else {
        report.push_str("all bucket fits solved without ridge fallback\n");
    }
    for (i, &sigma) in t.eval_sigmas.iter().enumerate() {
        let mut eval_rng = rng::stream(config.seed, LANE_EVAL, i as u64);
        let losses = eval_loss_paired(
            &[&oracle, &linear, &mean],
            &points,
            sigma,
            t.eval_pairs,
            &mut eval_rng,
        )?;
        csv.push_str(&format!(
            "{sigma},{},{},{},{},{},{}\n",
            losses[0].mean,
            losses[0].std_err,
            losses[1].mean,
            losses[1].std_err,
            losses[2].mean,
            losses[2].std_err
        ));
        let slack_low = 2.0 * (losses[0].std_err + losses[1].std_err);
        let slack_high = 2.0 * (losses[1].std_err + losses[2].std_err);
        let ordered = losses[0].mean <= losses[1].mean + slack_low
            && losses[1].mean <= losses[2].mean + slack_high;
        report.push_str(&format!(
            "sigma {sigma}: mmse {:.5e} <= linear {:.5e} <= mean {:.5e} within twice the combined standard errors: {}\n",
            losses[0].mean,
            losses[1].mean,
            losses[2].mean,
            if ordered { "yes" } else { "NO" }
        ));
    }
    fs::write(dir.join("losses.csv"), csv)
        .map_err(|e| CliError::Io(format!("writing losses.csv: {e}")))?;
    fs::write(dir.join("report.txt"), &report)
        .map_err(|e| CliError::Io(format!("writing report.txt: {e}")))?;
    print!("{report}");
    println!("wrote denoiser.bin, losses.csv, report.txt to {}", dir.display());
    Ok(())
}

fn cmd_verify(checks: &[String], seed: u64) -> CliResult<()> {
    let results = if checks.is_empty() {
        verify::run_all(seed)?
    } else {
        checks
            .iter()
            .map(|name| verify::run_check(name, seed))
            .collect::<Result<Vec<_>, _>>()?
    };
    let mut out = std::io::stdout().lock();
    let mut failed = 0usize;
    for result in &results {
        writeln!(out, "{}", result.line())
            .map_err(|e| CliError::Io(format!("writing report: {e}")))?;
        if !result.passed {
            failed += 1;
        }
    }
    drop(out);
    if failed > 0 {
        Err(CliError::Verify(failed))
    } else {
        println!("all {} check(s) passed", results.len());
        Ok(())
    }
}

fn cmd_dataset_gen(config: &RunConfig) -> CliResult<()> {
    let points = dataset::materialize(&config.dataset, &config.denoiser.gmm, config.seed)?;
    let depth = parse_format(&config.output)?;
    let dir = ensure_out_dir(config)?;
    let mut count = 0usize;
    for (i, point) in points.iter().enumerate() {
        let files = write_field_outputs(point, &dir, &format!("image_{i:04}"), depth)?;
        count += files.len();
    }
    println!("wrote {} image(s) as {count} file(s) to {}", points.len(), dir.display());
    Ok(())
}

//! Dataset materialization from the three configured sources: an image
//! directory, a Gaussian mixture, or seeded shape generators.

use std::path::{Path, PathBuf};

use rand::Rng;

use ldm_core::grid::downsample;
use ldm_core::{rng, synth, Field};

use crate::config::{DatasetBlock, GmmComponentBlock};
use crate::image::read_field;
use crate::{CliError, CliResult};

const LANE_DATASET: u64 = 0xDA7A;

/// Builds the dataset the config describes. `gmm` supplies the mixture for
/// the `synthetic-gmm` source (it lives in the denoiser block).
pub fn materialize(
    spec: &DatasetBlock,
    gmm: &[GmmComponentBlock],
    seed: u64,
) -> CliResult<Vec<Field>> {
    match spec.source.as_str() {
        "image-directory" => from_directory(spec),
        "synthetic-gmm" => from_gmm(spec, gmm, seed),
        "synthetic-shapes" => from_shapes(spec, seed),
        other => Err(CliError::Config(format!("dataset.source: unsupported source {other:?}"))),
    }
}

fn from_directory(spec: &DatasetBlock) -> CliResult<Vec<Field>> {
    let dir = PathBuf::from(spec.path.as_ref().expect("validated: path present"));
    let entries = std::fs::read_dir(&dir)
        .map_err(|e| CliError::Io(format!("reading dataset directory {}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()),
                Some("pgm") | Some("ppm") | Some("lraw")
            )
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Config(format!(
            "dataset.path: no .pgm/.ppm/.lraw files in {}",
            dir.display()
        )));
    }
    paths.iter().map(|p| load_to_shape(p, spec)).collect()
}

/// Reads one image and brings it to the configured shape: exact dimensions
/// pass through, an integer multiple is block-averaged down, anything else
/// is an error naming the file.
fn load_to_shape(path: &Path, spec: &DatasetBlock) -> CliResult<Field> {
    let field = read_field(path)?;
    let (c, h, w) = field.shape();
    if c != spec.channels {
        return Err(CliError::Config(format!(
            "{}: {c} channels, dataset wants {}",
            path.display(),
            spec.channels
        )));
    }
    if (h, w) == (spec.height, spec.width) {
        return Ok(field);
    }
    if h % spec.height == 0 && w % spec.width == 0 && h / spec.height == w / spec.width {
        let ratio = h / spec.height;
        return downsample(&field, ratio)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())));
    }
    Err(CliError::Config(format!(
        "{}: {h}x{w} cannot be brought to dataset shape {}x{} by block averaging",
        path.display(),
        spec.height,
        spec.width
    )))
}

fn from_gmm(spec: &DatasetBlock, gmm: &[GmmComponentBlock], seed: u64) -> CliResult<Vec<Field>> {
    if gmm.is_empty() {
        return Err(CliError::Config(
            "denoiser.gmm: components are required for dataset.source = \"synthetic-gmm\"".into(),
        ));
    }
    let mut r = rng::stream(seed, LANE_DATASET, 0);
    let mut out = Vec::with_capacity(spec.count);
    for _ in 0..spec.count {
        let mut pick = r.gen_range(0.0..1.0f64);
        let mut component = &gmm[gmm.len() - 1];
        for candidate in gmm {
            if pick < candidate.weight {
                component = candidate;
                break;
            }
            pick -= candidate.weight;
        }
        let mean = Field::constant(spec.channels, spec.height, spec.width, component.mean)
            .map_err(CliError::from)?;
        let eps = Field::standard_normal(spec.channels, spec.height, spec.width, &mut r)
            .map_err(CliError::from)?;
        out.push(mean.axpy(component.var.sqrt(), &eps).map_err(CliError::from)?);
    }
    Ok(out)
}

fn from_shapes(spec: &DatasetBlock, seed: u64) -> CliResult<Vec<Field>> {
    let mut r = rng::stream(seed, LANE_DATASET, 1);
    let (c, h, w) = (spec.channels, spec.height, spec.width);
    let mut out = Vec::with_capacity(spec.count);
    for i in 0..spec.count {
        let field = match i % 4 {
            0 => {
                let period = [2usize, 4, 8][r.gen_range(0..3)].min(h.max(2) / 2).max(1);
                synth::checkerboard(c, h, w, period)
            }
            1 => synth::gradient(c, h, w, r.gen_range(0..3)),
            2 => synth::blob(
                c,
                h,
                w,
                r.gen_range(0.3..0.7),
                r.gen_range(0.3..0.7),
                r.gen_range(0.1..0.3),
            ),
            _ => synth::checkerboard(c, h, w, (h.max(4) / 4).max(1)),
        };
        out.push(field.map_err(CliError::from)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::{write_netpbm, write_raw, BitDepth};

    fn block(source: &str, count: usize) -> DatasetBlock {
        DatasetBlock {
            source: source.into(),
            path: None,
            channels: 1,
            height: 8,
            width: 8,
            count,
        }
    }

    #[test]
    fn shapes_are_deterministic_per_seed() {
        let spec = block("synthetic-shapes", 6);
        let a = materialize(&spec, &[], 3).unwrap();
        let b = materialize(&spec, &[], 3).unwrap();
        let c = materialize(&spec, &[], 4).unwrap();
        assert_eq!(a.len(), 6);
        assert_eq!(a, b);
        assert_ne!(a, c);
        for f in &a {
            assert_eq!(f.shape(), (1, 8, 8));
        }
    }

    #[test]
    fn gmm_draws_scatter_around_the_means() {
        let spec = DatasetBlock { count: 200, ..block("synthetic-gmm", 200) };
        let gmm = vec![
            GmmComponentBlock { weight: 0.5, mean: -2.0, var: 0.01 },
            GmmComponentBlock { weight: 0.5, mean: 2.0, var: 0.01 },
        ];
        let points = materialize(&spec, &gmm, 9).unwrap();
        let mut lows = 0usize;
        for p in &points {
            let mean: f64 = p.values().iter().sum::<f64>() / p.len() as f64;
            assert!((mean.abs() - 2.0).abs() < 0.2, "draw mean {mean} far from both components");
            if mean < 0.0 {
                lows += 1;
            }
        }
        assert!(lows > 50 && lows < 150, "component balance off: {lows}/200");
    }

    #[test]
    fn directory_source_reads_and_pools_images() {
        let dir = tempfile::tempdir().unwrap();
        let fine = synth::gradient(1, 16, 16, 0).unwrap();
        let coarse = synth::gradient(1, 8, 8, 1).unwrap();
        write_raw(&fine, &dir.path().join("a.lraw")).unwrap();
        write_netpbm(&coarse, &dir.path().join("b.pgm"), BitDepth::Sixteen).unwrap();
        let spec = DatasetBlock {
            path: Some(dir.path().display().to_string()),
            ..block("image-directory", 0)
        };
        let points = materialize(&spec, &[], 0).unwrap();
        assert_eq!(points.len(), 2);
        assert_eq!(points[0].shape(), (1, 8, 8));
        assert_eq!(points[0], downsample(&fine, 2).unwrap());
        assert!(points[1].max_abs_diff(&coarse).unwrap() < 1e-4);
    }

    #[test]
    fn mismatched_image_shape_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let odd = synth::gradient(1, 12, 8, 0).unwrap();
        write_raw(&odd, &dir.path().join("odd.lraw")).unwrap();
        let spec = DatasetBlock {
            path: Some(dir.path().display().to_string()),
            ..block("image-directory", 0)
        };
        let err = materialize(&spec, &[], 0).unwrap_err();
        assert!(err.to_string().contains("odd.lraw"), "{err}");
    }
}

//! Image file I/O: binary PGM (P5) for one channel and PPM (P6) for three,
//! at 8 or 16 bits per sample (16-bit samples big-endian, as netpbm
//! specifies), plus a raw little-endian f64 format for lossless dumps.
//!
//! Raw layout: magic `LRAW`, then little-endian u32 version (1), channels,
//! height, width, then channels*height*width f64 values.

use std::fs;
use std::path::Path;

use ldm_core::Field;

use crate::{CliError, CliResult};

const RAW_MAGIC: &[u8; 4] = b"LRAW";
const RAW_VERSION: u32 = 1;

/// Quantized sample width for netpbm output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

impl BitDepth {
    fn max_value(self) -> u32 {
        match self {
            BitDepth::Eight => 255,
            BitDepth::Sixteen => 65535,
        }
    }
}

fn io_err(path: &Path, what: &str, err: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{what} {}: {err}", path.display()))
}

/// Quantizes `[0, 1]` to the sample range, clamping out-of-range values.
fn quantize(v: f64, max_value: u32) -> u32 {
    (v.clamp(0.0, 1.0) * max_value as f64).round() as u32
}

/// Writes a 1-channel field as P5 or a 3-channel field as P6. Other channel
/// counts have no netpbm representation and are rejected.
pub fn write_netpbm(field: &Field, path: &Path, depth: BitDepth) -> CliResult<()> {
    let (c, h, w) = field.shape();
    let magic = match c {
        1 => "P5",
        3 => "P6",
        _ => {
            return Err(CliError::Config(format!(
                "netpbm output needs 1 or 3 channels, got {c} (use format = \"raw\")"
            )))
        }
    };
    let max_value = depth.max_value();
    let mut bytes = format!("{magic}\n{w} {h}\n{max_value}\n").into_bytes();
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let q = quantize(field.get(ch, y, x), max_value);
                match depth {
                    BitDepth::Eight => bytes.push(q as u8),
                    BitDepth::Sixteen => bytes.extend_from_slice(&(q as u16).to_be_bytes()),
                }
            }
        }
    }
    fs::write(path, bytes).map_err(|e| io_err(path, "writing", e))
}

/// Writes the lossless raw dump.
pub fn write_raw(field: &Field, path: &Path) -> CliResult<()> {
    let (c, h, w) = field.shape();
    let mut bytes = Vec::with_capacity(20 + field.len() * 8);
    bytes.extend_from_slice(RAW_MAGIC);
    for v in [RAW_VERSION, c as u32, h as u32, w as u32] {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    for v in field.values() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| io_err(path, "writing", e))
}

/// Reads any supported field file, dispatching on the leading magic bytes.
pub fn read_field(path: &Path) -> CliResult<Field> {
    let bytes = fs::read(path).map_err(|e| io_err(path, "reading", e))?;
    let bad = |why: String| CliError::Io(format!("{}: {why}", path.display()));
    if bytes.starts_with(RAW_MAGIC) {
        return read_raw_bytes(&bytes).map_err(bad);
    }
    if bytes.starts_with(b"P5") || bytes.starts_with(b"P6") {
        return read_netpbm_bytes(&bytes).map_err(bad);
    }
    Err(bad("not a P5/P6 netpbm file or an LRAW dump".into()))
}

fn read_raw_bytes(bytes: &[u8]) -> Result<Field, String> {
    if bytes.len() < 20 {
        return Err("raw dump truncated before the header ends".into());
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    let version = word(0);
    if version != RAW_VERSION {
        return Err(format!("raw dump version {version}, expected {RAW_VERSION}"));
    }
    let (c, h, w) = (word(1) as usize, word(2) as usize, word(3) as usize);
    let count = c
        .checked_mul(h)
        .and_then(|n| n.checked_mul(w))
        .ok_or("raw dump dimensions overflow")?;
    let data = &bytes[20..];
    if data.len() != count * 8 {
        return Err(format!(
            "raw dump holds {} bytes of samples, expected {} for {c}x{h}x{w}",
            data.len(),
            count * 8
        ));
    }
    let values = data
        .chunks_exact(8)
        .map(|chunk| f64::from_le_bytes(chunk.try_into().unwrap()))
        .collect();
    Field::new(c, h, w, values).map_err(|e| e.to_string())
}

/// Pulls the next whitespace-separated ASCII integer from a netpbm header,
/// skipping `#` comments.
fn next_header_int(bytes: &[u8], pos: &mut usize) -> Result<usize, String> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    if *pos == start {
        return Err("header ended before an expected integer".into());
    }
    std::str::from_utf8(&bytes[start..*pos])
        .map_err(|e| e.to_string())?
        .parse::<usize>()
        .map_err(|e| e.to_string())
}

fn read_netpbm_bytes(bytes: &[u8]) -> Result<Field, String> {
    let channels = match &bytes[..2] {
        b"P5" => 1usize,
        b"P6" => 3,
        _ => unreachable!(),
    };
    let mut pos = 2;
    let w = next_header_int(bytes, &mut pos)?;
    let h = next_header_int(bytes, &mut pos)?;
    let max_value = next_header_int(bytes, &mut pos)?;
    if max_value == 0 || max_value > 65535 {
        return Err(format!("unsupported max sample value {max_value}"));
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err("missing whitespace after the header".into());
    }
    pos += 1;
    let wide = max_value > 255;
    let per_sample = if wide { 2 } else { 1 };
    let count = channels * h * w;
    let data = &bytes[pos..];
    if data.len() != count * per_sample {
        return Err(format!(
            "{} bytes of samples, expected {} for {channels}x{h}x{w} at {per_sample} byte(s) each",
            data.len(),
            count * per_sample
        ));
    }
    let mut values = vec![0.0f64; count];
    let mut read = 0usize;
    for y in 0..h {
        for x in 0..w {
            for ch in 0..channels {
                let q = if wide {
                    u16::from_be_bytes([data[read], data[read + 1]]) as u32
                } else {
                    data[read] as u32
                };
                read += per_sample;
                values[(ch * h + y) * w + x] = q as f64 / max_value as f64;
            }
        }
    }
    Field::new(channels, h, w, values).map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ldm_core::rng;

    #[test]
    fn raw_round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = rng::stream(5, 0, 0);
        let field = Field::standard_normal(2, 3, 5, &mut r).unwrap();
        let path = dir.path().join("f.lraw");
        write_raw(&field, &path).unwrap();
        assert_eq!(read_field(&path).unwrap(), field);
    }

    #[test]
    fn netpbm_round_trip_is_exact_at_quantized_precision() {
        let dir = tempfile::tempdir().unwrap();
        for (channels, depth) in [(1, BitDepth::Eight), (3, BitDepth::Eight), (1, BitDepth::Sixteen), (3, BitDepth::Sixteen)] {
            let max_value = depth.max_value();
            let mut r = rng::stream(6, channels as u64, max_value as u64);
            let field = Field::from_fn(channels, 4, 6, |_, _, _| {
                use rand::Rng;
                r.gen_range(-0.2..1.2)
            })
            .unwrap();
            let path = dir.path().join(format!("f{channels}_{max_value}.img"));
            write_netpbm(&field, &path, depth).unwrap();
            let back = read_field(&path).unwrap();
            let requantized = Field::from_fn(channels, 4, 6, |c, y, x| {
                quantize(field.get(c, y, x), max_value) as f64 / max_value as f64
            })
            .unwrap();
            assert_eq!(back, requantized);

            let bytes = std::fs::read(&path).unwrap();
            write_netpbm(&back, &path, depth).unwrap();
            assert_eq!(std::fs::read(&path).unwrap(), bytes, "write(read(file)) changed bytes");
        }
    }

    #[test]
    fn sixteen_bit_samples_are_big_endian() {
        let dir = tempfile::tempdir().unwrap();
        let field = Field::new(1, 1, 1, vec![1.0]).unwrap();
        let path = dir.path().join("white.pgm");
        write_netpbm(&field, &path, BitDepth::Sixteen).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[bytes.len() - 2..], &[0xFF, 0xFF]);
        let gray = Field::new(1, 1, 1, vec![0.5]).unwrap();
        write_netpbm(&gray, &path, BitDepth::Sixteen).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let q = (0.5f64 * 65535.0).round() as u16;
        assert_eq!(&bytes[bytes.len() - 2..], &q.to_be_bytes());
    }

    #[test]
    fn header_comments_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.pgm");
        std::fs::write(&path, b"P5\n# a comment\n2 1\n255\n\x00\xFF").unwrap();
        let f = read_field(&path).unwrap();
        assert_eq!(f.shape(), (1, 1, 2));
        assert_eq!(f.get(0, 0, 0), 0.0);
        assert_eq!(f.get(0, 0, 1), 1.0);
    }

    #[test]
    fn two_channel_netpbm_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let field = Field::zeros(2, 2, 2).unwrap();
        let path = dir.path().join("bad.pgm");
        assert!(matches!(write_netpbm(&field, &path, BitDepth::Eight), Err(CliError::Config(_))));
    }

    #[test]
    fn truncated_raw_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trunc.lraw");
        std::fs::write(&path, b"LRAW\x01\x00\x00\x00").unwrap();
        assert!(matches!(read_field(&path), Err(CliError::Io(_))));
    }
}

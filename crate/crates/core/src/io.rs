//! File formats: the lossless native image format, 16-bit PGM export and
//! CSV output for sweep metrics and tuning traces.
//!
//! The native format is the magic line `TGVR1`, an ASCII line
//! `width height`, then `width·height` little-endian IEEE-754 doubles in
//! row-major order. Nothing else: no trailing newline, no padding.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::grid::ImageGrid;
use crate::sweep::MetricsRow;
use crate::tuner::MetaTuneResult;

pub const NATIVE_MAGIC: &[u8] = b"TGVR1\n";

/// Largest pixel count accepted when reading (2³⁰, an 8 GiB payload).
pub const MAX_PIXELS: usize = 1 << 30;

/// Bumped whenever the metrics CSV columns change.
pub const METRICS_SCHEMA_VERSION: u32 = 1;

pub const METRICS_COLUMNS: [&str; 10] = [
    "beta",
    "snr_in",
    "snr_out",
    "lambda_final",
    "kl_ratio_final",
    "iterations_total",
    "wall_time",
    "mode",
    "seed",
    "errors",
];

/// Serializes `grid` in the native format.
pub fn encode_native(grid: &ImageGrid) -> Vec<u8> {
    let header = format!("{} {}\n", grid.width(), grid.height());
    let mut out = Vec::with_capacity(NATIVE_MAGIC.len() + header.len() + 8 * grid.len());
    out.extend_from_slice(NATIVE_MAGIC);
    out.extend_from_slice(header.as_bytes());
    for v in grid.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parses a native-format buffer.
pub fn decode_native(bytes: &[u8]) -> Result<ImageGrid> {
    let rest = bytes
        .strip_prefix(NATIVE_MAGIC)
        .ok_or_else(|| Error::MalformedHeader("missing TGVR1 magic".into()))?;
    let eol = rest
        .iter()
        .take(64)
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::MalformedHeader("unterminated dimension line".into()))?;
    let line = std::str::from_utf8(&rest[..eol]).map_err(|_| Error::MalformedHeader("dimension line is not ASCII".into()))?;
    let mut fields = line.split(' ');
    let mut dim = |what: &str| -> Result<usize> {
        let f = fields.next().ok_or_else(|| Error::MalformedHeader(format!("missing {what}")))?;
        if f.is_empty() || !f.bytes().all(|b| b.is_ascii_digit()) {
            return Err(Error::MalformedHeader(format!("{what} `{f}` is not a decimal integer")));
        }
        // Overlong digit strings are an overflow, not a syntax error.
        f.parse().map_err(|_| Error::DimensionOverflow {
            width: usize::MAX,
            height: usize::MAX,
        })
    };
    let width = dim("width")?;
    let height = dim("height")?;
    if fields.next().is_some() {
        return Err(Error::MalformedHeader("extra fields on dimension line".into()));
    }
    let pixels = width
        .checked_mul(height)
        .filter(|&n| n <= MAX_PIXELS)
        .ok_or(Error::DimensionOverflow { width, height })?;
    let payload = &rest[eol + 1..];
    let expected = 8 * pixels;
    if payload.len() < expected {
        return Err(Error::TruncatedPayload {
            expected,
            found: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(Error::TrailingBytes {
            extra: payload.len() - expected,
        });
    }
    let values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    ImageGrid::from_vec(width, height, values)
}

pub fn write_image(path: impl AsRef<Path>, grid: &ImageGrid) -> Result<()> {
    fs::write(path, encode_native(grid))?;
    Ok(())
}

pub fn read_image(path: impl AsRef<Path>) -> Result<ImageGrid> {
    decode_native(&fs::read(path)?)
}

/// Intensity range recorded next to a PGM export.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PgmRange {
    pub min: f64,
    pub max: f64,
}

/// Path of the range sidecar for a PGM file: `<path>.range`.
pub fn pgm_sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".range");
    PathBuf::from(s)
}

/// Writes a binary 16-bit PGM (`P5`, maxval 65535, big-endian samples),
/// mapping `[min, max]` linearly onto `[0, 65535]`, and the sidecar
/// `<path>.range` with lines `min=<v>` and `max=<v>`.
///
/// A constant image maps to all zeros.
pub fn write_pgm16(path: impl AsRef<Path>, grid: &ImageGrid) -> Result<PgmRange> {
    let path = path.as_ref();
    let range = PgmRange {
        min: grid.min(),
        max: grid.max(),
    };
    let mut out = format!("P5\n{} {}\n65535\n", grid.width(), grid.height()).into_bytes();
    for &s in &quantize(grid, range) {
        out.extend_from_slice(&s.to_be_bytes());
    }
    fs::write(path, out)?;
    let mut side = fs::File::create(pgm_sidecar_path(path))?;
    writeln!(side, "min={}", range.min)?;
    writeln!(side, "max={}", range.max)?;
    Ok(range)
}

fn quantize(grid: &ImageGrid, range: PgmRange) -> Vec<u16> {
    let span = range.max - range.min;
    grid.values()
        .iter()
        .map(|&v| {
            if span > 0.0 {
                ((v - range.min) / span * 65535.0).round().clamp(0.0, 65535.0) as u16
            } else {
                0
            }
        })
        .collect()
}

/// Reads a PGM written by [`write_pgm16`] and maps it back through its sidecar.
pub fn read_pgm16(path: impl AsRef<Path>) -> Result<(ImageGrid, PgmRange)> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let bad = |m: &str| Error::MalformedHeader(format!("PGM: {m}"));
    // Three whitespace-separated header tokens after the magic, then one
    // whitespace byte before the samples.
    let mut tokens = Vec::new();
    let mut pos = 0;
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("header ended early"));
        }
        tokens.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ASCII header"))?);
    }
    if tokens[0] != "P5" || tokens[3] != "65535" {
        return Err(bad("expected P5 with maxval 65535"));
    }
    let parse = |t: &str| t.parse::<usize>().map_err(|_| bad("bad dimension"));
    let (width, height) = (parse(tokens[1])?, parse(tokens[2])?);
    let pixels = width
        .checked_mul(height)
        .filter(|&n| n <= MAX_PIXELS)
        .ok_or(Error::DimensionOverflow { width, height })?;
    let payload = &bytes[(pos + 1).min(bytes.len())..];
    if payload.len() < 2 * pixels {
        return Err(Error::TruncatedPayload {
            expected: 2 * pixels,
            found: payload.len(),
        });
    }
    let side = fs::read_to_string(pgm_sidecar_path(path))?;
    let config = crate::config::Config::parse(&side)?;
    let range = PgmRange {
        min: config.require("min")?,
        max: config.require("max")?,
    };
    let span = range.max - range.min;
    let values = payload[..2 * pixels]
        .chunks_exact(2)
        .map(|c| range.min + span * f64::from(u16::from_be_bytes([c[0], c[1]])) / 65535.0)
        .collect();
    Ok((ImageGrid::from_vec(width, height, values)?, range))
}

fn float_field(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        // `{}` prints the shortest representation that round-trips.
        format!("{v}")
    }
}

/// Writes sweep rows with the header [`METRICS_COLUMNS`]. Unknown values
/// (failed rows, or timing disabled) are empty fields.
pub fn write_metrics_csv<W: std::io::Write>(out: W, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(METRICS_COLUMNS)?;
    for r in rows {
        w.write_record([
            float_field(r.beta),
            float_field(r.snr_in),
            float_field(r.snr_out),
            float_field(r.lambda_final),
            float_field(r.kl_ratio_final),
            r.iterations_total.map(|n| n.to_string()).unwrap_or_default(),
            r.wall_time.map(float_field).unwrap_or_default(),
            r.mode.to_string(),
            r.seed.to_string(),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One row per meta-iteration: `meta_iteration,lambda,kl_ratio,iterations`.
pub fn write_trace_csv<W: std::io::Write>(out: W, tune: &MetaTuneResult) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["meta_iteration", "lambda", "kl_ratio", "iterations"])?;
    for (i, ((l, k), n)) in tune
        .lambda_trace
        .iter()
        .zip(&tune.kl_ratio_trace)
        .zip(&tune.iteration_trace)
        .enumerate()
    {
        w.write_record([(i + 1).to_string(), float_field(*l), float_field(*k), n.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

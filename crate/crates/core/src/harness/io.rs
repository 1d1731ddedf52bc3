//! File formats: 8-bit binary PGM, `TREGV1` raw float64 dumps and trace CSV.

use std::fs;
use std::path::Path;

use crate::error::{Result, TregError};
use crate::sampler::{Branch, RunTrace, TraceRecord};

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| TregError::Read {
        path: path.to_path_buf(),
        source,
    })
}

fn parse_err(path: &Path, msg: impl std::fmt::Display) -> TregError {
    TregError::Parse(format!("{}: {msg}", path.display()))
}

/// Values are clamped to `[0, 1]` and quantized to 8 bits.
pub fn encode_pgm(x: &[f64], height: usize, width: usize) -> Result<Vec<u8>> {
    crate::error::check_len("pgm image", height * width, x.len())?;
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(x.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    Ok(out)
}

pub fn write_pgm(path: &Path, x: &[f64], height: usize, width: usize) -> Result<()> {
    fs::write(path, encode_pgm(x, height, width)?)?;
    Ok(())
}

/// Reads a binary (P5) PGM with maxval up to 65535, scaled to `[0, 1]`.
/// Returns `(pixels, height, width)`.
pub fn read_pgm(path: &Path) -> Result<(Vec<f64>, usize, usize)> {
    let bytes = read_bytes(path)?;
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(parse_err(path, "truncated PGM header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "P5" {
        return Err(parse_err(path, format!("expected P5, found {}", fields[0])));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| parse_err(path, format!("bad header field `{s}`")));
    let (width, height, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if maxval == 0 || maxval > 65535 {
        return Err(parse_err(path, format!("unsupported maxval {maxval}")));
    }
    let n = width * height;
    let body = bytes.get(pos..).unwrap_or_default();
    let wide = maxval > 255;
    if body.len() != n * if wide { 2 } else { 1 } {
        return Err(parse_err(path, format!("expected {n} pixels")));
    }
    let scale = maxval as f64;
    let pixels = if wide {
        body.chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / scale)
            .collect()
    } else {
        body.iter().map(|&b| b as f64 / scale).collect()
    };
    Ok((pixels, height, width))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawDump {
    pub data: Vec<f64>,
    pub sigma0: f64,
    pub seed: u64,
}

pub fn encode_raw(data: &[f64], sigma0: f64, seed: u64) -> Vec<u8> {
    let mut out = format!("TREGV1 n={} sigma0={sigma0} seed={seed}\n", data.len()).into_bytes();
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn write_raw(path: &Path, data: &[f64], sigma0: f64, seed: u64) -> Result<()> {
    fs::write(path, encode_raw(data, sigma0, seed))?;
    Ok(())
}

pub fn read_raw(path: &Path) -> Result<RawDump> {
    let bytes = read_bytes(path)?;
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| parse_err(path, "missing TREGV1 header"))?;
    let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| parse_err(path, "header is not UTF-8"))?;
    let mut parts = header.split(' ');
    if parts.next() != Some("TREGV1") {
        return Err(parse_err(path, "missing TREGV1 magic"));
    }
    let (mut n, mut sigma0, mut seed) = (None, None, None);
    for part in parts {
        let (k, v) = part.split_once('=').ok_or_else(|| parse_err(path, format!("bad field `{part}`")))?;
        let bad = || parse_err(path, format!("bad value in `{part}`"));
        match k {
            "n" => n = Some(v.parse::<usize>().map_err(|_| bad())?),
            "sigma0" => sigma0 = Some(v.parse::<f64>().map_err(|_| bad())?),
            "seed" => seed = Some(v.parse::<u64>().map_err(|_| bad())?),
            _ => return Err(parse_err(path, format!("unknown field `{k}`"))),
        }
    }
    let (Some(n), Some(sigma0), Some(seed)) = (n, sigma0, seed) else {
        return Err(parse_err(path, "header needs n, sigma0 and seed"));
    };
    let body = &bytes[nl + 1..];
    if body.len() != 8 * n {
        return Err(parse_err(path, format!("expected {n} values, found {} bytes", body.len())));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(RawDump { data, sigma0, seed })
}

pub const TRACE_HEADER: &str = "t,branch,data_consistency,dsm_loss,null_similarity";

pub fn encode_trace(trace: &RunTrace) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for r in &trace.records {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.t,
            r.branch.as_str(),
            r.data_consistency,
            r.dsm_loss,
            r.null_similarity
        ));
    }
    out
}

pub fn write_trace(path: &Path, trace: &RunTrace) -> Result<()> {
    fs::write(path, encode_trace(trace))?;
    Ok(())
}

pub fn read_trace(path: &Path) -> Result<RunTrace> {
    let text = String::from_utf8(read_bytes(path)?).map_err(|_| parse_err(path, "not UTF-8"))?;
    let mut lines = text.lines();
    if lines.next() != Some(TRACE_HEADER) {
        return Err(parse_err(path, "unexpected trace header"));
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let bad = || parse_err(path, format!("line {}", i + 2));
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 5 {
            return Err(bad());
        }
        let branch = match cols[1] {
            "gamma" => Branch::Gamma,
            "plain" => Branch::Plain,
            "dps" => Branch::Dps,
            _ => return Err(bad()),
        };
        let f = |s: &str| s.parse::<f64>().map_err(|_| bad());
        records.push(TraceRecord {
            t: cols[0].parse().map_err(|_| bad())?,
            branch,
            data_consistency: f(cols[2])?,
            dsm_loss: f(cols[3])?,
            null_similarity: f(cols[4])?,
        });
    }
    Ok(RunTrace { records })
}

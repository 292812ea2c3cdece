//! File formats.
//!
//! Photon stream binary (`.pstr`), little-endian:
//!
//! ```text
//! offset 0  magic    b"PSTR"
//! offset 4  version  u16 (= 1)
//! offset 6  channel  u8
//! offset 7  u64 timestamps in picoseconds, strictly ascending, to EOF
//! ```
//!
//! Plottable outputs are CSV with a header row. Readers skip blank lines and
//! lines starting with `#`.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::coincidence::{CoincidenceHistogram, G3Surface, Slice};
use crate::error::{Error, Result};
use crate::fitting::ProfilePoint;
use crate::model::PhotonStream;

pub const STREAM_MAGIC: &[u8; 4] = b"PSTR";
pub const STREAM_VERSION: u16 = 1;
const HEADER_LEN: usize = 7;

pub fn encode_stream(stream: &PhotonStream) -> Vec<u8> {
    let mut buf = Vec::with_capacity(HEADER_LEN + 8 * stream.len());
    buf.extend_from_slice(STREAM_MAGIC);
    buf.extend_from_slice(&STREAM_VERSION.to_le_bytes());
    buf.push(stream.channel());
    for t in stream.timestamps() {
        buf.extend_from_slice(&t.to_le_bytes());
    }
    buf
}

pub fn decode_stream(bytes: &[u8]) -> Result<PhotonStream> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != STREAM_MAGIC {
        return Err(Error::Format("missing PSTR header".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != STREAM_VERSION {
        return Err(Error::Format(format!("unsupported PSTR version {version}")));
    }
    let channel = bytes[6];
    let body = &bytes[HEADER_LEN..];
    if body.len() % 8 != 0 {
        return Err(Error::Format(format!(
            "PSTR body length {} is not a multiple of 8",
            body.len()
        )));
    }
    let ts = body
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    PhotonStream::new(channel, ts)
}

pub fn write_stream(path: &Path, stream: &PhotonStream) -> Result<()> {
    fs::write(path, encode_stream(stream))?;
    Ok(())
}

pub fn read_stream(path: &Path) -> Result<PhotonStream> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_stream(&bytes)
}

/// One timestamp (ps) per line, no header.
pub fn write_stream_csv(path: &Path, stream: &PhotonStream) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for t in stream.timestamps() {
        writeln!(w, "{t}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_stream_csv(path: &Path, channel: u8) -> Result<PhotonStream> {
    let r = BufReader::new(fs::File::open(path)?);
    let mut ts = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        ts.push(line.parse::<u64>().map_err(|e| {
            Error::Format(format!("{}:{}: {e}", path.display(), n + 1))
        })?);
    }
    PhotonStream::new(channel, ts)
}

pub fn write_histogram_csv(path: &Path, hist: &CoincidenceHistogram) -> Result<()> {
    to_file(path, |w| histogram_csv(w, hist))
}

pub fn write_surface_csv(path: &Path, surface: &G3Surface) -> Result<()> {
    to_file(path, |w| surface_csv(w, surface))
}

pub fn write_slice_csv(path: &Path, slice: &Slice) -> Result<()> {
    to_file(path, |w| slice_csv(w, slice))
}

fn to_file(path: &Path, f: impl FnOnce(&mut BufWriter<fs::File>) -> Result<()>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

/// Columns: `tau12_ps,tau23_ps,count,sigma` at bin centres.
pub fn histogram_csv<W: Write + ?Sized>(w: &mut W, hist: &CoincidenceHistogram) -> Result<()> {
    let g = hist.geometry;
    let side = g.side();
    writeln!(w, "tau12_ps,tau23_ps,count,sigma")?;
    for i in 0..side {
        for j in 0..side {
            let c = hist.counts[i * side + j];
            writeln!(w, "{},{},{},{}", g.center(i), g.center(j), c, (c as f64).sqrt())?;
        }
    }
    Ok(())
}

/// Columns: `tau12_ps,tau23_ps,value,sigma` at bin centres.
pub fn surface_csv<W: Write + ?Sized>(w: &mut W, surface: &G3Surface) -> Result<()> {
    let g = surface.geometry;
    let side = g.side();
    writeln!(w, "tau12_ps,tau23_ps,value,sigma")?;
    for i in 0..side {
        for j in 0..side {
            let k = i * side + j;
            writeln!(w, "{},{},{},{}", g.center(i), g.center(j), surface.values[k], surface.sigma[k])?;
        }
    }
    Ok(())
}

/// Columns: per-axis delay, path length along the cut (`α·τ`), value, sigma.
pub fn slice_csv<W: Write + ?Sized>(w: &mut W, slice: &Slice) -> Result<()> {
    writeln!(w, "tau_ps,path_ps,value,sigma")?;
    for p in &slice.points {
        writeln!(
            w,
            "{},{},{},{}",
            p.tau_ps,
            slice.spec.alpha * p.tau_ps as f64,
            p.value,
            p.sigma
        )?;
    }
    Ok(())
}

/// Reads a slice profile; needs `tau_ps`, `value` and `sigma` columns.
/// Delays are returned in seconds.
pub fn read_slice_csv(path: &Path) -> Result<Vec<ProfilePoint>> {
    let text = fs::read_to_string(path)?;
    parse_slice_csv(&text).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn parse_slice_csv(text: &str) -> Result<Vec<ProfilePoint>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| Error::Format("empty slice file".into()))?
        .split(',')
        .map(str::trim)
        .collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| *h == name)
            .ok_or_else(|| Error::Format(format!("missing column '{name}'")))
    };
    let (ct, cv, cs) = (col("tau_ps")?, col("value")?, col("sigma")?);
    lines
        .enumerate()
        .map(|(n, line)| {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let get = |c: usize| -> Result<f64> {
                fields
                    .get(c)
                    .ok_or_else(|| Error::Format(format!("row {}: too few fields", n + 2)))?
                    .parse::<f64>()
                    .map_err(|e| Error::Format(format!("row {}: {e}", n + 2)))
            };
            Ok(ProfilePoint {
                tau: get(ct)? * 1e-12,
                value: get(cv)?,
                sigma: get(cs)?,
            })
        })
        .collect()
}

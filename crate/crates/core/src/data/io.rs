//! Dataset files.
//!
//! CSV: a header line `d=<int>,N=<int>`, then one row per sample holding `d`
//! band values followed by the integer label.
//!
//! Binary (little-endian): magic `MGSD`, `u32` version, `u32` N, `u32` d,
//! `u64` M, `u8` normalisation flag; if set, `d` f64 minima and `d` f64 maxima;
//! then M records of `d` f64 values and a `u32` label.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::dataset::{Normalization, SpectralDataset};

const MAGIC: &[u8; 4] = b"MGSD";
const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataFormat {
    Csv,
    Bin,
}

impl DataFormat {
    /// `.csv` is CSV, anything else is binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => Self::Csv,
            _ => Self::Bin,
        }
    }
}

pub fn load_dataset(path: &Path, format: DataFormat) -> Result<SpectralDataset> {
    let file = fs::File::open(path)?;
    let ds = match format {
        DataFormat::Csv => read_csv(BufReader::new(file))?,
        DataFormat::Bin => read_bin(BufReader::new(file))?,
    };
    ds.check_all_classes()?;
    Ok(ds)
}

pub fn save_dataset(ds: &SpectralDataset, path: &Path, format: DataFormat) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    match format {
        DataFormat::Csv => write_csv(ds, &mut out)?,
        DataFormat::Bin => write_bin(ds, &mut out)?,
    }
    out.flush()?;
    Ok(())
}

fn parse_header(line: &str) -> Option<(usize, usize)> {
    let mut d = None;
    let mut n = None;
    for part in line.trim().split(',') {
        let (key, value) = part.split_once('=')?;
        let value: usize = value.trim().parse().ok()?;
        match key.trim() {
            "d" => d = Some(value),
            "N" => n = Some(value),
            _ => return None,
        }
    }
    Some((d?, n?))
}

pub fn read_csv(reader: impl BufRead) -> Result<SpectralDataset> {
    let mut lines = reader.lines().enumerate();
    let (d, n) = loop {
        match lines.next() {
            None => return Err(Error::Parse { line: 1, msg: "missing header".into() }),
            Some((i, line)) => {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                break parse_header(&line).ok_or_else(|| Error::Parse {
                    line: i + 1,
                    msg: format!("expected header `d=<int>,N=<int>`, got `{line}`"),
                })?;
            }
        }
    };
    let mut samples = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in lines {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != d + 1 {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected {} fields (d={d} values + label), got {}", d + 1, fields.len()),
            });
        }
        for f in &fields[..d] {
            let v: f64 = f.parse().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("bad band value `{f}`"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("non-finite band value `{f}`"),
                });
            }
            samples.push(v);
        }
        let label: usize = fields[d].parse().map_err(|_| Error::Parse {
            line: lineno,
            msg: format!("bad label `{}`", fields[d]),
        })?;
        if label >= n {
            return Err(Error::Data(format!("label {label} at line {lineno} out of range for N={n}")));
        }
        labels.push(label);
    }
    SpectralDataset::new(samples, labels, d, n)
}

pub fn write_csv(ds: &SpectralDataset, out: &mut impl Write) -> Result<()> {
    writeln!(out, "d={},N={}", ds.bands(), ds.classes())?;
    for i in 0..ds.len() {
        for v in ds.sample(i) {
            write!(out, "{v},")?;
        }
        writeln!(out, "{}", ds.labels()[i])?;
    }
    Ok(())
}

pub fn write_bin(ds: &SpectralDataset, out: &mut impl Write) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(ds.classes() as u32).to_le_bytes())?;
    out.write_all(&(ds.bands() as u32).to_le_bytes())?;
    out.write_all(&(ds.len() as u64).to_le_bytes())?;
    match ds.normalization() {
        Some(n) => {
            out.write_all(&[1])?;
            for v in n.min.iter().chain(&n.max) {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        None => out.write_all(&[0])?,
    }
    for i in 0..ds.len() {
        for v in ds.sample(i) {
            out.write_all(&v.to_le_bytes())?;
        }
        out.write_all(&(ds.labels()[i] as u32).to_le_bytes())?;
    }
    Ok(())
}

fn take<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format("truncated dataset file".into()),
        _ => Error::Io(e),
    })?;
    Ok(buf)
}

pub fn read_bin(mut r: impl Read) -> Result<SpectralDataset> {
    if &take::<4>(&mut r)? != MAGIC {
        return Err(Error::Format("not a dataset file (bad magic)".into()));
    }
    let version = u32::from_le_bytes(take(&mut r)?);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported dataset version {version}")));
    }
    let n = u32::from_le_bytes(take(&mut r)?) as usize;
    let d = u32::from_le_bytes(take(&mut r)?) as usize;
    let m = u64::from_le_bytes(take(&mut r)?) as usize;
    let normalization = match take::<1>(&mut r)?[0] {
        0 => None,
        1 => {
            let mut vals = Vec::with_capacity(2 * d);
            for _ in 0..2 * d {
                vals.push(f64::from_le_bytes(take(&mut r)?));
            }
            let max = vals.split_off(d);
            Some(Normalization { min: vals, max })
        }
        flag => return Err(Error::Format(format!("bad normalisation flag {flag}"))),
    };
    let mut samples = Vec::with_capacity(m * d);
    let mut labels = Vec::with_capacity(m);
    for _ in 0..m {
        for _ in 0..d {
            samples.push(f64::from_le_bytes(take(&mut r)?));
        }
        labels.push(u32::from_le_bytes(take(&mut r)?) as usize);
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes in dataset file", rest.len())));
    }
    Ok(SpectralDataset::new(samples, labels, d, n)?.with_normalization(normalization))
}

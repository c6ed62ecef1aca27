//! Dataset files.
//!
//! `dfst-bin`, all fields little-endian:
//!
//! | field | type |
//! |---|---|
//! | magic `DFSB` | 4 bytes |
//! | version | u32 |
//! | N, T, C | u32 each |
//! | sampling rate f | f64 |
//! | subject count S | u32 |
//! | trial count M | u32 |
//! | M records: subject, label, then N·T samples channel-major | u32, u32, f32 × N·T |
//!
//! `csv`: a manifest (`# dfast-manifest v1`, `key=value` metadata lines,
//! then a `file,label,subject` table) next to one file per trial holding N
//! rows of T comma-separated samples.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use super::{Dataset, Trial};
use crate::error::{DataError, Error, Result};
use crate::tensor::Tensor;

pub const DFSB_MAGIC: &[u8; 4] = b"DFSB";
pub const DFSB_VERSION: u32 = 1;
const MANIFEST_TAG: &str = "# dfast-manifest v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Bin,
    Csv,
}

impl Format {
    /// Sniffs the first bytes of a file.
    pub fn detect(path: &Path) -> Result<Format> {
        let mut head = Vec::new();
        fs::File::open(path)?
            .take(MANIFEST_TAG.len() as u64)
            .read_to_end(&mut head)?;
        if head.starts_with(DFSB_MAGIC) {
            Ok(Format::Bin)
        } else if head.starts_with(MANIFEST_TAG.as_bytes()) {
            Ok(Format::Csv)
        } else {
            let mut found = [0u8; 4];
            for (d, s) in found.iter_mut().zip(&head) {
                *d = *s;
            }
            Err(DataError::BadMagic { found }.into())
        }
    }
}

/// Reads a dataset; `format = None` sniffs it from the file contents.
pub fn load_dataset(path: &Path, format: Option<Format>) -> Result<Dataset> {
    let format = match format {
        Some(f) => f,
        None => Format::detect(path)?,
    };
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    match format {
        Format::Bin => read_dfsb(&fs::read(path)?, name),
        Format::Csv => read_csv(path, name),
    }
}

pub fn save_dataset(ds: &Dataset, path: &Path, format: Format) -> Result<()> {
    match format {
        Format::Bin => {
            let mut w = BufWriter::new(fs::File::create(path)?);
            write_dfsb(ds, &mut w)?;
            w.flush()?;
            Ok(())
        }
        Format::Csv => write_csv(ds, path),
    }
}

fn u32_field(v: usize, what: &str) -> Result<[u8; 4]> {
    u32::try_from(v)
        .map(|v| v.to_le_bytes())
        .map_err(|_| DataError::Invalid(format!("{what} = {v} does not fit the file format")).into())
}

pub fn write_dfsb(ds: &Dataset, w: &mut impl Write) -> Result<()> {
    w.write_all(DFSB_MAGIC)?;
    w.write_all(&DFSB_VERSION.to_le_bytes())?;
    w.write_all(&u32_field(ds.channels, "channels")?)?;
    w.write_all(&u32_field(ds.timepoints, "timepoints")?)?;
    w.write_all(&u32_field(ds.classes, "classes")?)?;
    w.write_all(&ds.rate.to_le_bytes())?;
    w.write_all(&u32_field(ds.subjects().len(), "subjects")?)?;
    w.write_all(&u32_field(ds.len(), "trials")?)?;
    let mut buf = Vec::with_capacity(8 + 4 * ds.channels * ds.timepoints);
    for t in ds.trials() {
        buf.clear();
        buf.extend_from_slice(&t.subject.to_le_bytes());
        buf.extend_from_slice(&u32_field(t.label, "label")?);
        for &v in t.x.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DataError> {
        let left = self.bytes.len() - self.pos;
        if left < n {
            return Err(DataError::Truncated {
                offset: self.bytes.len() as u64,
                needed: n - left,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, DataError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

fn read_dfsb(bytes: &[u8], name: String) -> Result<Dataset> {
    let mut c = Cursor { bytes, pos: 0 };
    let mut found = [0u8; 4];
    for (d, s) in found.iter_mut().zip(bytes) {
        *d = *s;
    }
    if bytes.len() < 4 || &found != DFSB_MAGIC {
        return Err(DataError::BadMagic { found }.into());
    }
    c.take(4)?;
    let version = c.u32()?;
    if version != DFSB_VERSION {
        return Err(DataError::Version {
            found: version,
            expected: DFSB_VERSION,
        }
        .into());
    }
    let n = c.u32()? as usize;
    let t = c.u32()? as usize;
    let classes = c.u32()? as usize;
    let rate = f64::from_le_bytes(c.take(8)?.try_into().expect("8 bytes"));
    let subjects = c.u32()? as usize;
    let count = c.u32()? as usize;
    let per = n
        .checked_mul(t)
        .ok_or_else(|| DataError::Invalid(format!("implausible geometry {n} x {t}")))?;
    let mut trials = Vec::with_capacity(count.min(bytes.len() / (8 + 4 * per.max(1))));
    for i in 0..count {
        let subject = c.u32()?;
        let label = c.u32()? as usize;
        if label >= classes {
            return Err(DataError::LabelOutOfRange { trial: i, label, classes }.into());
        }
        let raw = c.take(4 * per)?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let x = Tensor::new(&[n, t], data).map_err(|e| DataError::Invalid(e.to_string()))?;
        trials.push(Trial { x, label, subject });
    }
    if c.pos != bytes.len() {
        return Err(DataError::Invalid(format!("{} trailing bytes after the last trial", bytes.len() - c.pos)).into());
    }
    let distinct: BTreeSet<u32> = trials.iter().map(|t| t.subject).collect();
    if distinct.len() != subjects {
        return Err(DataError::Invalid(format!(
            "header declares {subjects} subjects, records hold {}",
            distinct.len()
        ))
        .into());
    }
    Ok(Dataset::new(name, n, t, classes, rate, trials)?)
}

/// Writes the manifest at `path` and one `<stem>_<index>.csv` per trial
/// beside it.
pub fn write_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "trial".into());
    let mut m = BufWriter::new(fs::File::create(path)?);
    writeln!(m, "{MANIFEST_TAG}")?;
    writeln!(m, "name={}", ds.name)?;
    writeln!(m, "channels={}", ds.channels)?;
    writeln!(m, "timepoints={}", ds.timepoints)?;
    writeln!(m, "classes={}", ds.classes)?;
    writeln!(m, "rate={}", ds.rate)?;
    let mut table = csv::Writer::from_writer(Vec::new());
    table.write_record(["file", "label", "subject"]).map_err(csv_err)?;
    for (i, t) in ds.trials().iter().enumerate() {
        let file = format!("{stem}_{i:05}.csv");
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_path(dir.join(&file))
            .map_err(csv_err)?;
        for row in t.x.data().chunks(ds.timepoints) {
            w.write_record(row.iter().map(|v| v.to_string())).map_err(csv_err)?;
        }
        w.flush()?;
        table
            .write_record([file, t.label.to_string(), t.subject.to_string()])
            .map_err(csv_err)?;
    }
    m.write_all(&table.into_inner().map_err(|e| DataError::Invalid(e.to_string()))?)?;
    m.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            _ => unreachable!("checked is_io_error"),
        }
    } else {
        DataError::Invalid(e.to_string()).into()
    }
}

#[derive(serde::Deserialize)]
struct ManifestRow {
    file: PathBuf,
    label: usize,
    subject: u32,
}

fn read_csv(path: &Path, fallback_name: String) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(MANIFEST_TAG) {
        return Err(DataError::Invalid(format!("{} is not a dataset manifest", path.display())).into());
    }
    let mut meta = std::collections::HashMap::new();
    let mut offset = MANIFEST_TAG.len() + 1;
    for line in lines.by_ref() {
        if line.starts_with("file,") {
            break;
        }
        offset += line.len() + 1;
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| DataError::Invalid(format!("manifest line {line:?} is not key=value")))?;
        meta.insert(k.trim().to_string(), v.trim().to_string());
    }
    let field = |k: &str| -> Result<String> {
        meta.get(k)
            .cloned()
            .ok_or_else(|| DataError::Invalid(format!("manifest lacks {k}")).into())
    };
    let num = |k: &str| -> Result<usize> {
        field(k)?
            .parse()
            .map_err(|_| DataError::Invalid(format!("manifest {k} is not a count")).into())
    };
    let (n, t, classes) = (num("channels")?, num("timepoints")?, num("classes")?);
    let rate: f64 = field("rate")?
        .parse()
        .map_err(|_| DataError::Invalid("manifest rate is not a number".into()))?;
    let name = meta.get("name").cloned().unwrap_or(fallback_name);
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut reader = csv::Reader::from_reader(&text.as_bytes()[offset.min(text.len())..]);
    let mut trials = Vec::new();
    for (i, row) in reader.deserialize::<ManifestRow>().enumerate() {
        let row = row.map_err(csv_err)?;
        if row.label >= classes {
            return Err(DataError::LabelOutOfRange {
                trial: i,
                label: row.label,
                classes,
            }
            .into());
        }
        let file = dir.join(&row.file);
        if !file.is_file() {
            return Err(DataError::MissingFile(file).into());
        }
        let mut r = csv::ReaderBuilder::new()
            .has_headers(false)
            .from_path(&file)
            .map_err(csv_err)?;
        let mut data = Vec::with_capacity(n * t);
        for rec in r.records() {
            let rec = rec.map_err(csv_err)?;
            for v in rec.iter() {
                let v: f32 = v.trim().parse().map_err(|_| {
                    DataError::Invalid(format!("{}: {v:?} is not a number", file.display()))
                })?;
                data.push(v);
            }
        }
        if data.len() != n * t {
            return Err(DataError::Invalid(format!(
                "{} holds {} samples, expected {n} x {t}",
                file.display(),
                data.len()
            ))
            .into());
        }
        let x = Tensor::new(&[n, t], data).map_err(|e| DataError::Invalid(e.to_string()))?;
        trials.push(Trial {
            x,
            label: row.label,
            subject: row.subject,
        });
    }
    Ok(Dataset::new(name, n, t, classes, rate, trials)?)
}

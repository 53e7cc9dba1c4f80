//! On-disk formats: feature files (CSV and `fmat`), `PMOD` model checkpoints,
//! ground-truth sidecars and hard-label CSVs.
//!
//! `fmat` layout, all integers little-endian:
//!
//! ```text
//! "FMAT" u16 version=1 u64 N u64 D u64 K_old
//! N×D f64 row-major features
//! N   i64 labels (-1 = unlabeled)
//! ```
//!
//! `PMOD` uses the same framing without labels: `"PMOD" u16 1 u64 K u64 D`, then `K×D` f64.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use pim_core::{FeatureSet, Matrix, PartitionModel};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{CliError, Result};

const FMAT_MAGIC: &[u8; 4] = b"FMAT";
const PMOD_MAGIC: &[u8; 4] = b"PMOD";
const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Fmat,
}

impl Format {
    /// `.csv` is CSV, everything else is `fmat`.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => Format::Csv,
            _ => Format::Fmat,
        }
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| CliError::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

fn finish(path: &Path, mut w: BufWriter<File>) -> Result<()> {
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Loads a feature file; the format follows the extension.
pub fn load_features(path: &Path) -> Result<FeatureSet> {
    let r = open(path)?;
    match Format::from_path(path) {
        Format::Csv => read_csv(r, path),
        Format::Fmat => read_fmat(r, path),
    }
}

/// Writes a feature file; the format follows the extension.
pub fn save_features(path: &Path, fs: &FeatureSet) -> Result<()> {
    let mut w = create(path)?;
    match Format::from_path(path) {
        Format::Csv => write_csv(&mut w, fs).map_err(|e| CliError::io(path, e))?,
        Format::Fmat => write_fmat(&mut w, fs).map_err(|e| CliError::io(path, e))?,
    }
    finish(path, w)
}

fn header_field(field: &str, key: &str, path: &Path) -> Result<usize> {
    field
        .trim()
        .strip_prefix(key)
        .and_then(|v| v.strip_prefix('='))
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| CliError::parse(path, format!("line 1: expected `{key}=<integer>`, found `{field}`")))
}

/// Parses `d=<D>,k_old=<K_old>` followed by `f_1,...,f_D,<label|_>` rows.
pub fn read_csv(r: impl Read, path: &Path) -> Result<FeatureSet> {
    let mut rows = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(r)
        .into_records();
    let csv_err = |e: csv::Error| CliError::parse(path, e.to_string());
    let header = rows
        .next()
        .ok_or_else(|| CliError::parse(path, "empty file"))?
        .map_err(csv_err)?;
    if header.len() != 2 {
        return Err(CliError::parse(path, "line 1: header must be `d=<D>,k_old=<K_old>`"));
    }
    let d = header_field(&header[0], "d", path)?;
    let k_old = header_field(&header[1], "k_old", path)?;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (i, rec) in rows.enumerate() {
        let rec = rec.map_err(csv_err)?;
        let line = i + 2;
        if rec.len() != d + 1 {
            return Err(CliError::parse(
                path,
                format!("line {line}: expected {} fields, found {}", d + 1, rec.len()),
            ));
        }
        for (j, f) in rec.iter().take(d).enumerate() {
            let v: f64 = f
                .trim()
                .parse()
                .map_err(|_| CliError::parse(path, format!("line {line}, column {}: `{f}` is not a number", j + 1)))?;
            if !v.is_finite() {
                return Err(CliError::parse(
                    path,
                    format!("line {line}, column {}: non-finite value `{f}`", j + 1),
                ));
            }
            data.push(v);
        }
        let l = rec[d].trim();
        labels.push(if l == "_" {
            None
        } else {
            Some(
                l.parse()
                    .map_err(|_| CliError::parse(path, format!("line {line}: label `{l}` is neither an index nor `_`")))?,
            )
        });
    }
    let n = labels.len();
    Ok(FeatureSet::new(Matrix::from_vec(n, d, data)?, labels, k_old)?)
}

pub fn write_csv(w: &mut impl Write, fs: &FeatureSet) -> std::io::Result<()> {
    writeln!(w, "d={},k_old={}", fs.dim(), fs.k_old())?;
    for (i, row) in fs.features().iter_rows().enumerate() {
        for v in row {
            write!(w, "{v},")?;
        }
        match fs.label(i) {
            Some(y) => writeln!(w, "{y}")?,
            None => writeln!(w, "_")?,
        }
    }
    Ok(())
}

struct Cursor<'a, R> {
    r: &'a mut R,
    path: &'a Path,
}

impl<R: Read> Cursor<'_, R> {
    fn bytes<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.r.read_exact(&mut buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => CliError::parse(self.path, format!("truncated file while reading {what}")),
            _ => CliError::io(self.path, e),
        })?;
        Ok(buf)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        self.bytes(what).map(u16::from_le_bytes)
    }

    fn u64(&mut self, what: &str) -> Result<usize> {
        let v = u64::from_le_bytes(self.bytes(what)?);
        usize::try_from(v).map_err(|_| CliError::parse(self.path, format!("{what} {v} does not fit in memory")))
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        (0..n).map(|_| self.bytes(what).map(f64::from_le_bytes)).collect()
    }

    fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        let m: [u8; 4] = self.bytes("magic")?;
        if &m != magic {
            return Err(CliError::parse(
                self.path,
                format!("bad magic {:?}, expected {:?}", String::from_utf8_lossy(&m), String::from_utf8_lossy(magic)),
            ));
        }
        let v = self.u16("version")?;
        if v != VERSION {
            return Err(CliError::parse(self.path, format!("unsupported version {v}")));
        }
        Ok(())
    }

    fn expect_eof(&mut self) -> Result<()> {
        let mut probe = [0u8; 1];
        match self.r.read(&mut probe) {
            Ok(0) => Ok(()),
            Ok(_) => Err(CliError::parse(self.path, "trailing bytes after payload")),
            Err(e) => Err(CliError::io(self.path, e)),
        }
    }
}

fn checked_len(a: usize, b: usize, path: &Path) -> Result<usize> {
    a.checked_mul(b)
        .filter(|&n| n <= isize::MAX as usize / 8)
        .ok_or_else(|| CliError::parse(path, format!("payload {a}×{b} is too large")))
}

pub fn read_fmat(mut r: impl Read, path: &Path) -> Result<FeatureSet> {
    let mut c = Cursor { r: &mut r, path };
    c.header(FMAT_MAGIC)?;
    let n = c.u64("N")?;
    let d = c.u64("D")?;
    let k_old = c.u64("K_old")?;
    let data = c.f64s(checked_len(n, d, path)?, "features")?;
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let l = i64::from_le_bytes(c.bytes("labels")?);
        labels.push(match l {
            -1 => None,
            l if l >= 0 => Some(l as usize),
            l => return Err(CliError::parse(path, format!("row {i}: invalid label {l}"))),
        });
    }
    c.expect_eof()?;
    Ok(FeatureSet::new(Matrix::from_vec(n, d, data)?, labels, k_old)?)
}

pub fn write_fmat(w: &mut impl Write, fs: &FeatureSet) -> std::io::Result<()> {
    w.write_all(FMAT_MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for v in [fs.len(), fs.dim(), fs.k_old()] {
        w.write_all(&(v as u64).to_le_bytes())?;
    }
    for v in fs.features().as_slice() {
        w.write_all(&v.to_le_bytes())?;
    }
    for l in fs.labels() {
        let v: i64 = l.map_or(-1, |y| y as i64);
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn save_model(path: &Path, model: &PartitionModel) -> Result<()> {
    let mut w = create(path)?;
    write_model(&mut w, model).map_err(|e| CliError::io(path, e))?;
    finish(path, w)
}

pub fn write_model(w: &mut impl Write, model: &PartitionModel) -> std::io::Result<()> {
    w.write_all(PMOD_MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(model.k() as u64).to_le_bytes())?;
    w.write_all(&(model.dim() as u64).to_le_bytes())?;
    for v in model.prototypes().as_slice() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn load_model(path: &Path) -> Result<PartitionModel> {
    read_model(open(path)?, path)
}

pub fn read_model(mut r: impl Read, path: &Path) -> Result<PartitionModel> {
    let mut c = Cursor { r: &mut r, path };
    c.header(PMOD_MAGIC)?;
    let k = c.u64("K")?;
    let d = c.u64("D")?;
    let data = c.f64s(checked_len(k, d, path)?, "prototypes")?;
    c.expect_eof()?;
    Ok(PartitionModel::new(Matrix::from_vec(k, d, data)?)?)
}

/// Ground truth written next to synthetic features.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Truth {
    pub k_total: usize,
    pub k_old: usize,
    /// True class of every row.
    pub labels: Vec<usize>,
    /// Whether each row belongs to the labeled subset.
    pub labeled: Vec<bool>,
}

impl Truth {
    pub fn validate(&self, path: &Path) -> Result<()> {
        if self.labels.len() != self.labeled.len() {
            return Err(CliError::parse(
                path,
                format!("{} labels but {} labeled flags", self.labels.len(), self.labeled.len()),
            ));
        }
        if let Some((i, &y)) = self.labels.iter().enumerate().find(|(_, &y)| y >= self.k_total) {
            return Err(CliError::parse(path, format!("row {i}: class {y} >= k_total {}", self.k_total)));
        }
        Ok(())
    }
}

/// Reads a JSON document; syntax errors report line and column.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_reader(open(path)?).map_err(|e| {
        if e.is_io() {
            CliError::io(path, std::io::Error::other(e.to_string()))
        } else {
            CliError::parse(path, e.to_string())
        }
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::io(path, std::io::Error::other(e)))?;
    w.write_all(b"\n").map_err(|e| CliError::io(path, e))?;
    finish(path, w)
}

pub fn load_truth(path: &Path) -> Result<Truth> {
    let t: Truth = read_json(path)?;
    t.validate(path)?;
    Ok(t)
}

/// `row,cluster` per line.
pub fn save_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| CliError::io(path, e);
    writeln!(w, "row,cluster").map_err(io)?;
    for (i, l) in labels.iter().enumerate() {
        writeln!(w, "{i},{l}").map_err(io)?;
    }
    finish(path, w)
}

pub fn load_labels(path: &Path) -> Result<Vec<usize>> {
    let mut rdr = csv::Reader::from_reader(open(path)?);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CliError::parse(path, e.to_string()))?;
        let line = i + 2;
        let field = |j: usize| -> Result<usize> {
            rec.get(j)
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| CliError::parse(path, format!("line {line}: expected `row,cluster` integers")))
        };
        if field(0)? != i {
            return Err(CliError::parse(path, format!("line {line}: rows must be numbered 0, 1, ... in order")));
        }
        out.push(field(1)?);
    }
    Ok(out)
}

/// `epoch,loss` per line.
pub fn save_trace(path: &Path, trace: &[f64]) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| CliError::io(path, e);
    writeln!(w, "epoch,loss").map_err(io)?;
    for (i, v) in trace.iter().enumerate() {
        writeln!(w, "{i},{v}").map_err(io)?;
    }
    finish(path, w)
}

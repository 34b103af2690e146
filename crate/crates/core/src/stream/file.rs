//! Table-backed streams.
//!
//! Two encodings are accepted, chosen by content:
//!
//! * UTF-8 CSV: a header line `d,C,T`, then one row per sample
//!   `t,label,f_1,...,f_d`, rows in non-decreasing `t`.
//! * Little-endian binary:
//!
//! ```text
//! offset  size  field
//! 0       8     magic b"RTOCLSTR"
//! 8       4     u32 format version (1)
//! 12      4     u32 d
//! 16      4     u32 C
//! 20      8     u64 T
//! 28      8     u64 row count
//! 36      ...   rows: u64 t, u32 label, d x f64
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use super::LabeledBatch;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"RTOCLSTR";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct TableRow {
    pub step: u64,
    pub label: usize,
    pub features: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub feature_dim: usize,
    pub classes: usize,
    pub steps: u64,
    pub rows: Vec<TableRow>,
}

impl Table {
    fn validate(&self, path: &Path) -> Result<()> {
        let fail = |reason: String| Error::StreamFormat {
            path: path.to_path_buf(),
            reason,
        };
        if self.feature_dim == 0 || self.classes == 0 {
            return Err(fail("d and C must be positive".into()));
        }
        let mut prev = 0;
        for (i, r) in self.rows.iter().enumerate() {
            if r.features.len() != self.feature_dim {
                return Err(fail(format!(
                    "row {i} has {} features, expected {}",
                    r.features.len(),
                    self.feature_dim
                )));
            }
            if r.label >= self.classes {
                return Err(fail(format!("row {i} label {} >= C", r.label)));
            }
            if r.step == 0 || r.step > self.steps || r.step < prev {
                return Err(fail(format!(
                    "row {i} timestamp {} out of order or outside [1, {}]",
                    r.step, self.steps
                )));
            }
            if r.features.iter().any(|v| !v.is_finite()) {
                return Err(fail(format!("row {i} has a non-finite feature")));
            }
            prev = r.step;
        }
        Ok(())
    }
}

/// Reads a CSV or binary table from `path`.
pub fn read_table(path: &Path) -> Result<Table> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let table = if bytes.starts_with(MAGIC) {
        parse_binary(&bytes).map_err(|reason| Error::StreamFormat {
            path: path.to_path_buf(),
            reason,
        })?
    } else {
        let text = String::from_utf8(bytes).map_err(|_| Error::StreamFormat {
            path: path.to_path_buf(),
            reason: "neither binary container nor UTF-8 CSV".into(),
        })?;
        parse_csv(&text).map_err(|reason| Error::StreamFormat {
            path: path.to_path_buf(),
            reason,
        })?
    };
    table.validate(path)?;
    Ok(table)
}

fn parse_csv(text: &str) -> std::result::Result<Table, String> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or("empty file")?;
    let head: Vec<&str> = header.split(',').map(str::trim).collect();
    if head.len() != 3 {
        return Err(format!("header must be `d,C,T`, got {header:?}"));
    }
    let num = |s: &str| {
        s.parse::<u64>()
            .map_err(|_| format!("bad header field {s:?}"))
    };
    let (d, c, t) = (
        num(head[0])? as usize,
        num(head[1])? as usize,
        num(head[2])?,
    );
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != d + 2 {
            return Err(format!(
                "row {i} has {} fields, expected {}",
                fields.len(),
                d + 2
            ));
        }
        let step = fields[0]
            .parse()
            .map_err(|_| format!("row {i}: bad timestamp"))?;
        let label = fields[1]
            .parse()
            .map_err(|_| format!("row {i}: bad label"))?;
        let features = fields[2..]
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| format!("row {i}: bad feature {f:?}"))
            })
            .collect::<std::result::Result<_, _>>()?;
        rows.push(TableRow {
            step,
            label,
            features,
        });
    }
    Ok(Table {
        feature_dim: d,
        classes: c,
        steps: t,
        rows,
    })
}

fn parse_binary(bytes: &[u8]) -> std::result::Result<Table, String> {
    struct Reader<'a> {
        bytes: &'a [u8],
        pos: usize,
    }
    impl Reader<'_> {
        fn take<const N: usize>(&mut self) -> std::result::Result<[u8; N], String> {
            let end = self.pos + N;
            let chunk = self
                .bytes
                .get(self.pos..end)
                .ok_or("truncated binary stream")?;
            self.pos = end;
            Ok(chunk.try_into().expect("length checked"))
        }
        fn u32(&mut self) -> std::result::Result<u32, String> {
            self.take::<4>().map(u32::from_le_bytes)
        }
        fn u64(&mut self) -> std::result::Result<u64, String> {
            self.take::<8>().map(u64::from_le_bytes)
        }
        fn f64(&mut self) -> std::result::Result<f64, String> {
            self.take::<8>().map(f64::from_le_bytes)
        }
    }
    let mut r = Reader { bytes, pos: 8 };
    let version = r.u32()?;
    if version != VERSION {
        return Err(format!("unsupported format version {version}"));
    }
    let d = r.u32()? as usize;
    let c = r.u32()? as usize;
    let t = r.u64()?;
    let count = r.u64()?;
    let row_bytes = 12 + 8 * d as u64;
    if (bytes.len() as u64).saturating_sub(36) != count.saturating_mul(row_bytes) {
        return Err("row count does not match payload size".into());
    }
    let mut rows = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let step = r.u64()?;
        let label = r.u32()? as usize;
        let features = (0..d)
            .map(|_| r.f64())
            .collect::<std::result::Result<_, _>>()?;
        rows.push(TableRow {
            step,
            label,
            features,
        });
    }
    Ok(Table {
        feature_dim: d,
        classes: c,
        steps: t,
        rows,
    })
}

fn create(path: &Path) -> Result<std::io::BufWriter<fs::File>> {
    fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

pub fn write_csv(
    path: &Path,
    feature_dim: usize,
    classes: usize,
    steps: u64,
    rows: &[TableRow],
) -> Result<()> {
    let mut out = create(path)?;
    let mut write = || -> std::io::Result<()> {
        writeln!(out, "{feature_dim},{classes},{steps}")?;
        for r in rows {
            write!(out, "{},{}", r.step, r.label)?;
            for v in &r.features {
                write!(out, ",{v:?}")?;
            }
            writeln!(out)?;
        }
        out.flush()
    };
    write().map_err(|e| Error::io(path, e))
}

pub fn write_binary(
    path: &Path,
    feature_dim: usize,
    classes: usize,
    steps: u64,
    rows: &[TableRow],
) -> Result<()> {
    let mut buf = Vec::with_capacity(36 + rows.len() * (12 + 8 * feature_dim));
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(feature_dim as u32).to_le_bytes());
    buf.extend_from_slice(&(classes as u32).to_le_bytes());
    buf.extend_from_slice(&steps.to_le_bytes());
    buf.extend_from_slice(&(rows.len() as u64).to_le_bytes());
    for r in rows {
        buf.extend_from_slice(&r.step.to_le_bytes());
        buf.extend_from_slice(&(r.label as u32).to_le_bytes());
        for v in &r.features {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Yields one batch per distinct timestamp, in order.
#[derive(Clone, Debug)]
pub struct TableStream {
    table: Arc<Table>,
    pos: usize,
}

impl TableStream {
    pub(crate) fn new(table: Arc<Table>) -> Self {
        TableStream { table, pos: 0 }
    }
}

impl Iterator for TableStream {
    type Item = LabeledBatch;

    fn next(&mut self) -> Option<LabeledBatch> {
        let rows = &self.table.rows;
        let first = rows.get(self.pos)?;
        let step = first.step;
        let end = rows[self.pos..]
            .iter()
            .position(|r| r.step != step)
            .map_or(rows.len(), |off| self.pos + off);
        let batch = LabeledBatch::from_samples(
            rows[self.pos..end]
                .iter()
                .map(|r| (r.features.clone(), r.label)),
            step,
        );
        self.pos = end;
        batch
    }
}

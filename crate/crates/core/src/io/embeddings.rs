//! Embedding exchange formats: CSV text and the `PGEB` little-endian binary.
//!
//! Both carry `id, label, logit_1..logit_C, z_1..z_D` per record. Labels are
//! 1-based on disk. A file may omit labels entirely (empty CSV field, or 0 in
//! the binary form) for prediction-only runs; mixing labeled and unlabeled
//! rows is a schema error.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{l2_norm, normalize, EmbeddingRecord, LabeledEmbeddingSet};

const MAGIC: &[u8; 4] = b"PGEB";
const VERSION: u16 = 1;
/// Stored embeddings further than this from unit norm are rejected, closer ones renormalized.
pub const NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingFormat {
    Csv,
    Bin,
}

impl EmbeddingFormat {
    /// `.bin` files are binary, everything else CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("bin") => EmbeddingFormat::Bin,
            _ => EmbeddingFormat::Csv,
        }
    }
}

impl std::str::FromStr for EmbeddingFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(EmbeddingFormat::Csv),
            "bin" => Ok(EmbeddingFormat::Bin),
            other => Err(Error::Config(format!("unknown embedding format {other:?}"))),
        }
    }
}

/// A parsed embedding file. When `labeled` is false every record carries the
/// placeholder label 0 and must not be used for evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub data: LabeledEmbeddingSet,
    pub labeled: bool,
}

/// Reads a file that must carry labels.
pub fn read_embeddings(path: &Path, format: EmbeddingFormat) -> Result<LabeledEmbeddingSet> {
    let table = read_embedding_table(path, format)?;
    if !table.labeled {
        return Err(Error::Schema(format!("{} has no labels", path.display())));
    }
    Ok(table.data)
}

pub fn read_embedding_table(path: &Path, format: EmbeddingFormat) -> Result<EmbeddingTable> {
    let bytes = fs::read(path)?;
    match format {
        EmbeddingFormat::Csv => parse_csv(&bytes),
        EmbeddingFormat::Bin => decode_bin(&bytes),
    }
}

pub fn write_embeddings(data: &LabeledEmbeddingSet, path: &Path, format: EmbeddingFormat) -> Result<()> {
    write_embedding_table(
        &EmbeddingTable {
            data: data.clone(),
            labeled: true,
        },
        path,
        format,
    )
}

pub fn write_embedding_table(table: &EmbeddingTable, path: &Path, format: EmbeddingFormat) -> Result<()> {
    let bytes = match format {
        EmbeddingFormat::Csv => encode_csv(table)?,
        EmbeddingFormat::Bin => encode_bin(table)?,
    };
    fs::write(path, bytes)?;
    Ok(())
}

/// Formats a float so that parsing it back yields the same bits.
pub(crate) fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn encode_csv(table: &EmbeddingTable) -> Result<Vec<u8>> {
    let data = &table.data;
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["id".to_string(), "label".to_string()];
    header.extend((1..=data.num_classes()).map(|c| format!("logit_{c}")));
    header.extend((1..=data.dim()).map(|d| format!("z_{d}")));
    w.write_record(&header).map_err(csv_err)?;
    for r in data.records() {
        let mut row = Vec::with_capacity(header.len());
        row.push(r.id.clone());
        row.push(if table.labeled {
            (r.label + 1).to_string()
        } else {
            String::new()
        });
        row.extend(r.logits.iter().map(|&x| fmt_f64(x)));
        row.extend(r.embedding.as_slice().iter().map(|&x| fmt_f64(x)));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn parse_csv(bytes: &[u8]) -> Result<EmbeddingTable> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
    let header = rdr.headers().map_err(csv_parse_err)?.clone();
    let (c, d) = parse_header(&header)?;

    let mut rows = Vec::new();
    for result in rdr.records() {
        let rec = result.map_err(csv_parse_err)?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != 2 + c + d {
            return Err(Error::Parse {
                line,
                msg: format!("expected {} fields, found {}", 2 + c + d, rec.len()),
            });
        }
        let float = |i: usize| -> Result<f64> {
            rec[i].trim().parse::<f64>().map_err(|e| Error::Parse {
                line,
                msg: format!("column {}: {e}", header[i].to_string()),
            })
        };
        let label = match rec[1].trim() {
            "" => None,
            s => Some(s.parse::<usize>().map_err(|e| Error::Parse {
                line,
                msg: format!("label: {e}"),
            })?),
        };
        let logits = (2..2 + c).map(float).collect::<Result<Vec<_>>>()?;
        let z = (2 + c..2 + c + d).map(float).collect::<Result<Vec<_>>>()?;
        rows.push(RawRecord {
            id: rec[0].to_string(),
            label,
            logits,
            z,
        });
    }
    assemble(rows, c, d)
}

fn parse_header(header: &csv::StringRecord) -> Result<(usize, usize)> {
    let fields: Vec<&str> = header.iter().collect();
    if fields.len() < 2 || fields[0] != "id" || fields[1] != "label" {
        return Err(Error::Schema("header must start with id,label".into()));
    }
    let c = fields[2..].iter().take_while(|f| f.starts_with("logit_")).count();
    let d = fields.len() - 2 - c;
    let expected = (1..=c)
        .map(|k| format!("logit_{k}"))
        .chain((1..=d).map(|k| format!("z_{k}")));
    for (got, want) in fields[2..].iter().zip(expected) {
        if *got != want {
            return Err(Error::Schema(format!("unexpected header column {got:?}, wanted {want:?}")));
        }
    }
    Ok((c, d))
}

pub fn encode_bin(table: &EmbeddingTable) -> Result<Vec<u8>> {
    let data = &table.data;
    let u32_of = |n: usize, what: &str| {
        u32::try_from(n).map_err(|_| Error::Schema(format!("{what} {n} does not fit in u32")))
    };
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for (n, what) in [(data.len(), "N"), (data.num_classes(), "C"), (data.dim(), "D")] {
        out.extend_from_slice(&u32_of(n, what)?.to_le_bytes());
    }
    for r in data.records() {
        out.extend_from_slice(&u32_of(r.id.len(), "id length")?.to_le_bytes());
        out.extend_from_slice(r.id.as_bytes());
        let label = if table.labeled { u32_of(r.label + 1, "label")? } else { 0 };
        out.extend_from_slice(&label.to_le_bytes());
        for &x in r.logits.iter().chain(r.embedding.as_slice()) {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_bin(bytes: &[u8]) -> Result<EmbeddingTable> {
    let mut cur = Cursor { bytes, pos: 0, record: 0 };
    if cur.take(4)? != MAGIC {
        return Err(cur.err("bad magic bytes"));
    }
    let version = u16::from_le_bytes(cur.take(2)?.try_into().unwrap());
    if version != VERSION {
        return Err(cur.err(&format!("unsupported version {version}")));
    }
    let n = cur.u32()? as usize;
    let c = cur.u32()? as usize;
    let d = cur.u32()? as usize;

    let mut rows = Vec::with_capacity(n.min(1 << 20));
    for i in 0..n {
        cur.record = i + 1;
        let len = cur.u32()? as usize;
        let id = std::str::from_utf8(cur.take(len)?)
            .map_err(|e| cur.err(&format!("id is not UTF-8: {e}")))?
            .to_string();
        let label = match cur.u32()? {
            0 => None,
            l => Some(l as usize),
        };
        let logits = (0..c).map(|_| cur.f64()).collect::<Result<Vec<_>>>()?;
        let z = (0..d).map(|_| cur.f64()).collect::<Result<Vec<_>>>()?;
        rows.push(RawRecord { id, label, logits, z });
    }
    if cur.pos != bytes.len() {
        return Err(cur.err("trailing bytes after the last record"));
    }
    assemble(rows, c, d)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    /// 1-based record being decoded, 0 inside the header.
    record: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(self.err("unexpected end of file")),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn err(&self, msg: &str) -> Error {
        Error::Parse {
            line: self.record,
            msg: format!("byte offset {}: {msg}", self.pos),
        }
    }
}

struct RawRecord {
    id: String,
    label: Option<usize>,
    logits: Vec<f64>,
    z: Vec<f64>,
}

fn assemble(rows: Vec<RawRecord>, c: usize, d: usize) -> Result<EmbeddingTable> {
    let labeled = rows.first().is_none_or(|r| r.label.is_some());
    let mut records = Vec::with_capacity(rows.len());
    for row in rows {
        let label = match (row.label, labeled) {
            (Some(l), true) if (1..=c).contains(&l) => l - 1,
            (Some(l), true) => {
                return Err(Error::Schema(format!("record {}: label {l} outside 1..={c}", row.id)))
            }
            (None, false) => 0,
            _ => {
                return Err(Error::Schema(format!(
                    "record {}: labeled and unlabeled rows are mixed",
                    row.id
                )))
            }
        };
        let norm = l2_norm(&row.z);
        if !((norm - 1.0).abs() <= NORM_TOLERANCE) {
            return Err(Error::Norm { id: row.id, norm });
        }
        let embedding = normalize(&row.z).map_err(|e| e.for_record(&row.id))?;
        records.push(EmbeddingRecord {
            id: row.id,
            label,
            logits: row.logits,
            embedding,
        });
    }
    Ok(EmbeddingTable {
        data: LabeledEmbeddingSet::new(records, c, d)?,
        labeled,
    })
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn csv_parse_err(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::Parse { line, msg: e.to_string() }
}

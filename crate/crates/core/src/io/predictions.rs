//! Prediction CSV: one row per sample with every gate signal and `p_final`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::embeddings::fmt_f64;
use crate::model::{Posterior, PredictionRecord};

/// The persisted view of a [`PredictionRecord`]. Class indices are 0-based in
/// memory and 1-based on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub id: String,
    pub y_cls: usize,
    pub y_sim: usize,
    pub y_hat: usize,
    pub gate: bool,
    pub gamma_cls: f64,
    pub h_cls: f64,
    pub gamma_sim: f64,
    pub delta_sim: f64,
    pub d_js: f64,
    pub p_final: Vec<f64>,
}

impl From<&PredictionRecord> for PredictionRow {
    fn from(r: &PredictionRecord) -> Self {
        let s = &r.signals;
        Self {
            id: r.id.clone(),
            y_cls: s.y_cls,
            y_sim: s.y_sim,
            y_hat: r.y_hat,
            gate: s.gate,
            gamma_cls: s.gamma_cls,
            h_cls: s.h_cls,
            gamma_sim: s.gamma_sim,
            delta_sim: s.delta_sim,
            d_js: s.d_js,
            p_final: r.p_final.probs().to_vec(),
        }
    }
}

impl PredictionRow {
    /// `p_final` checked as a distribution.
    pub fn posterior(&self) -> Result<Posterior> {
        Posterior::new(self.p_final.clone()).map_err(|e| e.for_record(&self.id))
    }
}

const FIXED: [&str; 10] = [
    "id", "y_cls", "y_sim", "y_hat", "gate", "gamma_cls", "h_cls", "gamma_sim", "delta_sim", "d_js",
];

pub fn encode_predictions(rows: &[PredictionRow]) -> Result<Vec<u8>> {
    let c = rows.first().map_or(0, |r| r.p_final.len());
    let mut w = csv::Writer::from_writer(Vec::new());
    let header = FIXED
        .iter()
        .map(|s| s.to_string())
        .chain((1..=c).map(|k| format!("p_final_{k}")));
    w.write_record(header).map_err(csv_io)?;
    for r in rows {
        if r.p_final.len() != c {
            return Err(Error::Schema(format!(
                "record {}: {} classes, expected {c}",
                r.id,
                r.p_final.len()
            )));
        }
        let mut row = vec![
            r.id.clone(),
            (r.y_cls + 1).to_string(),
            (r.y_sim + 1).to_string(),
            (r.y_hat + 1).to_string(),
            u8::from(r.gate).to_string(),
        ];
        row.extend([r.gamma_cls, r.h_cls, r.gamma_sim, r.delta_sim, r.d_js].map(fmt_f64));
        row.extend(r.p_final.iter().map(|&p| fmt_f64(p)));
        w.write_record(&row).map_err(csv_io)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn parse_predictions(bytes: &[u8]) -> Result<Vec<PredictionRow>> {
    let mut rdr = csv::Reader::from_reader(bytes);
    let header = rdr.headers().map_err(csv_parse)?.clone();
    let fields: Vec<&str> = header.iter().collect();
    if fields.len() < FIXED.len() + 2 || fields[..FIXED.len()] != FIXED {
        return Err(Error::Schema(format!("prediction header must start with {}", FIXED.join(","))));
    }
    let c = fields.len() - FIXED.len();
    for (k, f) in fields[FIXED.len()..].iter().enumerate() {
        if *f != format!("p_final_{}", k + 1) {
            return Err(Error::Schema(format!("unexpected header column {f:?}")));
        }
    }

    let mut rows = Vec::new();
    for result in rdr.records() {
        let rec = result.map_err(csv_parse)?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let bad = |col: usize, msg: String| Error::Parse {
            line,
            msg: format!("column {}: {msg}", fields[col]),
        };
        let class = |col: usize| -> Result<usize> {
            match rec[col].trim().parse::<usize>() {
                Ok(k) if (1..=c).contains(&k) => Ok(k - 1),
                Ok(k) => Err(bad(col, format!("class {k} outside 1..={c}"))),
                Err(e) => Err(bad(col, e.to_string())),
            }
        };
        let float = |col: usize| -> Result<f64> { rec[col].trim().parse::<f64>().map_err(|e| bad(col, e.to_string())) };
        let gate = match rec[4].trim() {
            "0" => false,
            "1" => true,
            other => return Err(bad(4, format!("expected 0 or 1, found {other:?}"))),
        };
        rows.push(PredictionRow {
            id: rec[0].to_string(),
            y_cls: class(1)?,
            y_sim: class(2)?,
            y_hat: class(3)?,
            gate,
            gamma_cls: float(5)?,
            h_cls: float(6)?,
            gamma_sim: float(7)?,
            delta_sim: float(8)?,
            d_js: float(9)?,
            p_final: (FIXED.len()..fields.len()).map(float).collect::<Result<_>>()?,
        });
    }
    Ok(rows)
}

pub fn write_predictions(records: &[PredictionRecord], path: &Path) -> Result<()> {
    let rows: Vec<PredictionRow> = records.iter().map(PredictionRow::from).collect();
    fs::write(path, encode_predictions(&rows)?)?;
    Ok(())
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRow>> {
    parse_predictions(&fs::read(path)?)
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn csv_parse(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::Parse { line, msg: e.to_string() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gate::{final_posterior, GateConfig};

    fn records() -> Vec<PredictionRecord> {
        let cfg = GateConfig::default();
        let pairs = [
            (vec![0.4, 0.35, 0.25], vec![0.05, 0.9, 0.05]),
            (vec![0.9, 0.05, 0.05], vec![0.1, 0.8, 0.1]),
            (vec![1.0 / 3.0; 3], vec![0.2, 0.2, 0.6]),
        ];
        pairs
            .into_iter()
            .enumerate()
            .map(|(i, (a, b))| {
                let p_cls = Posterior::new(a).unwrap();
                let p_sim = Posterior::new(b).unwrap();
                let f = final_posterior(&p_cls, &p_sim, &cfg).unwrap();
                PredictionRecord {
                    id: format!("s,{i}"),
                    p_cls,
                    p_sim,
                    signals: f.signals,
                    p_final: f.p_final,
                    y_hat: f.y_hat,
                    source: f.source,
                }
            })
            .collect()
    }

    #[test]
    fn write_read_write_is_byte_identical() {
        let rows: Vec<PredictionRow> = records().iter().map(PredictionRow::from).collect();
        let first = encode_predictions(&rows).unwrap();
        let back = parse_predictions(&first).unwrap();
        assert_eq!(back, rows);
        assert_eq!(encode_predictions(&back).unwrap(), first);
        let text = String::from_utf8(first).unwrap();
        assert!(text.starts_with(
            "id,y_cls,y_sim,y_hat,gate,gamma_cls,h_cls,gamma_sim,delta_sim,d_js,p_final_1,p_final_2,p_final_3\n"
        ));
        assert!(text.contains("\"s,0\",1,2,2,1,"));
    }

    #[test]
    fn bad_gate_field() {
        let text = "id,y_cls,y_sim,y_hat,gate,gamma_cls,h_cls,gamma_sim,delta_sim,d_js,p_final_1,p_final_2\n\
                    a,1,1,1,2,0.5,0.6,0.5,0.1,0,0.5,0.5\n";
        assert!(matches!(parse_predictions(text.as_bytes()), Err(Error::Parse { line: 2, .. })));
    }
}

//! Shared domain types and numeric conventions.
//!
//! Class indices are 0-based everywhere inside the crate; the file formats in
//! [`crate::io`] convert to and from the 1-based labels used on disk.
//! Argmax ties always resolve to the lowest class index.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gate::GateSignals;

/// Tolerance for unit-norm and sum-to-one checks on stored data.
pub const STORED_TOL: f64 = 1e-9;
/// Tolerance for the same checks on values computed in this process.
pub const FRESH_TOL: f64 = 1e-12;

const ZERO_NORM: f64 = 1e-12;
// A freshly normalized vector has norm within a few ulps of one; such inputs
// are returned untouched so that normalization is bitwise idempotent.
const IDEMPOTENT_TOL: f64 = 1e-14;

/// A vector of length D ≥ 2 on the unit hypersphere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct UnitEmbedding(Vec<f64>);

impl UnitEmbedding {
    /// Wraps `values` after checking finiteness, `D ≥ 2` and unit norm within [`STORED_TOL`].
    /// The values are stored exactly as given.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_dim(values.len())?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidEmbedding("non-finite entry".into()));
        }
        let norm = l2_norm(&values);
        if (norm - 1.0).abs() > STORED_TOL {
            return Err(Error::InvalidEmbedding(format!("norm {norm} is not 1")));
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &UnitEmbedding) -> f64 {
        dot(&self.0, &other.0)
    }

    /// Cosine similarity clamped to `[-1, 1]`.
    pub fn cosine(&self, other: &UnitEmbedding) -> f64 {
        self.dot(other).clamp(-1.0, 1.0)
    }
}

impl TryFrom<Vec<f64>> for UnitEmbedding {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        UnitEmbedding::new(values)
    }
}

impl From<UnitEmbedding> for Vec<f64> {
    fn from(e: UnitEmbedding) -> Self {
        e.0
    }
}

fn check_dim(d: usize) -> Result<()> {
    if d < 2 {
        return Err(Error::InvalidEmbedding(format!("dimension {d} < 2")));
    }
    Ok(())
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Projects `v` onto the unit sphere.
///
/// Vectors already within a few ulps of unit norm are returned unchanged, so
/// `normalize(normalize(v))` is bitwise equal to `normalize(v)`.
pub fn normalize(v: &[f64]) -> Result<UnitEmbedding> {
    check_dim(v.len())?;
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidEmbedding("non-finite entry".into()));
    }
    let norm = l2_norm(v);
    if norm < ZERO_NORM {
        return Err(Error::ZeroNorm(norm));
    }
    if (norm - 1.0).abs() <= IDEMPOTENT_TOL {
        return Ok(UnitEmbedding(v.to_vec()));
    }
    Ok(UnitEmbedding(v.iter().map(|x| x / norm).collect()))
}

/// A probability vector over C classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Posterior(Vec<f64>);

impl Posterior {
    /// Validates entries in `[0, 1]` and a sum within [`STORED_TOL`] of one.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        Self::with_tolerance(probs, STORED_TOL)
    }

    pub fn with_tolerance(probs: Vec<f64>, tol: f64) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidPosterior("no classes".into()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0 || *p > 1.0) {
            return Err(Error::InvalidPosterior("entry outside [0, 1]".into()));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > tol {
            return Err(Error::InvalidPosterior(format!("sums to {sum}")));
        }
        Ok(Self(probs))
    }

    /// Trusted constructor for vectors produced by this crate's own arithmetic.
    pub(crate) fn from_computed(probs: Vec<f64>) -> Self {
        debug_assert!(
            Posterior::with_tolerance(probs.clone(), FRESH_TOL).is_ok(),
            "computed posterior is invalid: {probs:?}"
        );
        Self(probs)
    }

    /// The uniform distribution over `c` classes.
    pub fn uniform(c: usize) -> Self {
        Self(vec![1.0 / c as f64; c])
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn num_classes(&self) -> usize {
        self.0.len()
    }

    pub fn get(&self, c: usize) -> f64 {
        self.0[c]
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for Posterior {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Posterior::new(values)
    }
}

impl From<Posterior> for Vec<f64> {
    fn from(p: Posterior) -> Self {
        p.0
    }
}

/// Tempered softmax with max subtraction. The classifier posterior uses `temperature = 1`.
pub fn softmax(logits: &[f64], temperature: f64) -> Result<Posterior> {
    if logits.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    if logits.iter().any(|l| !l.is_finite()) {
        return Err(Error::InvalidParameter("non-finite logit".into()));
    }
    let scaled: Vec<f64> = logits.iter().map(|l| l / temperature).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scaled.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(Posterior::from_computed(
        exps.into_iter().map(|e| e / total).collect(),
    ))
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax_class(p: &Posterior) -> usize {
    argmax(p.probs())
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// One labeled sample: classifier logits plus the teacher embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub id: String,
    /// 0-based class index.
    pub label: usize,
    pub logits: Vec<f64>,
    pub embedding: UnitEmbedding,
}

/// A validated dataset of [`EmbeddingRecord`]s sharing the same C and D.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledEmbeddingSet {
    records: Vec<EmbeddingRecord>,
    num_classes: usize,
    dim: usize,
}

impl LabeledEmbeddingSet {
    pub fn new(records: Vec<EmbeddingRecord>, num_classes: usize, dim: usize) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::TooFewClasses);
        }
        check_dim(dim)?;
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            if !seen.insert(r.id.as_str()) {
                return Err(Error::DuplicateId(r.id.clone()));
            }
            if r.label >= num_classes {
                return Err(Error::Schema(format!(
                    "record {}: label {} outside 1..={num_classes}",
                    r.id,
                    r.label + 1
                )));
            }
            if r.logits.len() != num_classes {
                return Err(Error::Schema(format!(
                    "record {}: {} logits for {num_classes} classes",
                    r.id,
                    r.logits.len()
                )));
            }
            if r.logits.iter().any(|l| !l.is_finite()) {
                return Err(Error::Schema(format!("record {}: non-finite logit", r.id)));
            }
            if r.embedding.dim() != dim {
                return Err(Error::Schema(format!(
                    "record {}: embedding dimension {} != {dim}",
                    r.id,
                    r.embedding.dim()
                )));
            }
        }
        Ok(Self {
            records,
            num_classes,
            dim,
        })
    }

    pub fn records(&self) -> &[EmbeddingRecord] {
        &self.records
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.label).collect()
    }

    /// Teacher embeddings of all records with the given label, in order.
    pub fn class_embeddings(&self, class: usize) -> Vec<UnitEmbedding> {
        self.records
            .iter()
            .filter(|r| r.label == class)
            .map(|r| r.embedding.clone())
            .collect()
    }

    /// The records at `indices`, in the order given.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let records = indices.iter().map(|&i| self.records[i].clone()).collect();
        Self::new(records, self.num_classes, self.dim)
    }
}

/// Which posterior the final prediction came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Classifier,
    Fused,
}

/// Full per-sample output of the dual-path inference.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub id: String,
    pub p_cls: Posterior,
    pub p_sim: Posterior,
    pub signals: GateSignals,
    pub p_final: Posterior,
    pub y_hat: usize,
    pub source: Source,
}

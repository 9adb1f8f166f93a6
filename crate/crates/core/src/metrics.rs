//! Accuracy, macro-F1, balanced accuracy, binned ECE and one-vs-rest macro-AUROC.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::gate::top1_confidence;
use crate::model::{Posterior, PredictionRecord};

pub const DEFAULT_BINS: usize = 15;

fn check_pair(preds: &[usize], labels: &[usize]) -> Result<()> {
    if preds.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: preds.len(),
            right: labels.len(),
        });
    }
    if preds.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(())
}

fn check_classes(preds: &[usize], labels: &[usize], c: usize) -> Result<()> {
    check_pair(preds, labels)?;
    if let Some(x) = preds.iter().chain(labels).find(|&&x| x >= c) {
        return Err(Error::InvalidParameter(format!("class {} outside 1..={c}", x + 1)));
    }
    Ok(())
}

pub fn accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    check_pair(preds, labels)?;
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / preds.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassStats {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Precision, recall and F1 per class; zero denominators give zero.
pub fn per_class_stats(preds: &[usize], labels: &[usize], c: usize) -> Result<Vec<ClassStats>> {
    check_classes(preds, labels, c)?;
    let mut tp = vec![0; c];
    let mut predicted = vec![0; c];
    let mut support = vec![0; c];
    for (&p, &l) in preds.iter().zip(labels) {
        predicted[p] += 1;
        support[l] += 1;
        if p == l {
            tp[p] += 1;
        }
    }
    Ok((0..c)
        .map(|k| {
            let precision = ratio(tp[k], predicted[k]);
            let recall = ratio(tp[k], support[k]);
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassStats {
                precision,
                recall,
                f1,
                support: support[k],
            }
        })
        .collect())
}

pub fn macro_f1(preds: &[usize], labels: &[usize], c: usize) -> Result<f64> {
    let stats = per_class_stats(preds, labels, c)?;
    Ok(stats.iter().map(|s| s.f1).sum::<f64>() / c as f64)
}

/// Mean per-class recall. Every class must occur in `labels`.
pub fn balanced_accuracy(preds: &[usize], labels: &[usize], c: usize) -> Result<f64> {
    let stats = per_class_stats(preds, labels, c)?;
    if let Some(k) = stats.iter().position(|s| s.support == 0) {
        return Err(Error::MissingClass(k));
    }
    Ok(stats.iter().map(|s| s.recall).sum::<f64>() / c as f64)
}

/// Bin of a confidence: `[0, 1/M]` is bin 0, `(b/M, (b+1)/M]` is bin `b`.
pub fn ece_bin(conf: f64, bins: usize) -> usize {
    let m = bins as f64;
    let mut b = ((conf * m).ceil() as usize).saturating_sub(1).min(bins - 1);
    // the product can round across an edge; settle against the edges themselves
    while b > 0 && conf <= b as f64 / m {
        b -= 1;
    }
    while b + 1 < bins && conf > (b + 1) as f64 / m {
        b += 1;
    }
    b
}

/// Expected calibration error over `bins` equal-width, right-closed bins.
pub fn ece(confidences: &[f64], correct: &[bool], bins: usize) -> Result<f64> {
    if confidences.len() != correct.len() {
        return Err(Error::LengthMismatch {
            left: confidences.len(),
            right: correct.len(),
        });
    }
    if confidences.is_empty() {
        return Err(Error::EmptyInput);
    }
    if bins == 0 {
        return Err(Error::InvalidParameter("bins must be at least 1".into()));
    }
    if let Some(c) = confidences.iter().find(|c| !(0.0..=1.0).contains(*c)) {
        return Err(Error::InvalidParameter(format!("confidence {c} outside [0, 1]")));
    }
    let mut count = vec![0usize; bins];
    let mut hits = vec![0.0; bins];
    let mut conf_sum = vec![0.0; bins];
    for (&c, &ok) in confidences.iter().zip(correct) {
        let b = ece_bin(c, bins);
        count[b] += 1;
        conf_sum[b] += c;
        if ok {
            hits[b] += 1.0;
        }
    }
    let n = confidences.len() as f64;
    let mut total = 0.0;
    for b in 0..bins {
        if count[b] > 0 {
            let k = count[b] as f64;
            total += (k / n) * (hits[b] / k - conf_sum[b] / k).abs();
        }
    }
    Ok(total)
}

/// Per-class one-vs-rest AUROC; classes without positives or negatives are `None`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AurocReport {
    pub m_auc: f64,
    pub per_class: Vec<Option<f64>>,
    pub excluded: Vec<usize>,
}

/// AUROC of `scores` for binary `positive` labels, by midranks.
pub fn binary_auroc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j share their mean
        let mid = (i + 1 + j) as f64 / 2.0;
        rank_sum += mid * order[i..j].iter().filter(|&&k| positive[k]).count() as f64;
        i = j;
    }
    let np = n_pos as f64;
    Some((rank_sum - np * (np + 1.0) / 2.0) / (np * n_neg as f64))
}

/// Macro average of one-vs-rest AUROC, skipping degenerate classes.
pub fn macro_auroc(scores: &[Posterior], labels: &[usize], c: usize) -> Result<AurocReport> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: scores.len(),
            right: labels.len(),
        });
    }
    if scores.is_empty() {
        return Err(Error::EmptyInput);
    }
    if let Some(p) = scores.iter().find(|p| p.num_classes() != c) {
        return Err(Error::DimMismatch {
            expected: c,
            got: p.num_classes(),
        });
    }
    let per_class: Vec<Option<f64>> = (0..c)
        .map(|k| {
            let s: Vec<f64> = scores.iter().map(|p| p.get(k)).collect();
            let pos: Vec<bool> = labels.iter().map(|&y| y == k).collect();
            binary_auroc(&s, &pos)
        })
        .collect();
    let excluded: Vec<usize> = (0..c).filter(|&k| per_class[k].is_none()).collect();
    let kept: Vec<f64> = per_class.iter().flatten().copied().collect();
    if kept.is_empty() {
        return Err(Error::DegenerateClass(excluded[0]));
    }
    Ok(AurocReport {
        m_auc: kept.iter().sum::<f64>() / kept.len() as f64,
        per_class,
        excluded,
    })
}

/// Aggregate metrics of the deployed posterior.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub balanced_accuracy: f64,
    pub ece: f64,
    pub m_auc: f64,
    pub per_class: Vec<ClassStats>,
    pub num_bins: usize,
    /// Classes left out of the AUROC mean (0-based).
    pub auroc_excluded: Vec<usize>,
}

/// Metrics for predictions `y_hat` with posteriors `p_final`.
pub fn evaluate_posteriors(
    p_final: &[Posterior],
    y_hat: &[usize],
    labels: &[usize],
    c: usize,
    bins: usize,
) -> Result<EvalReport> {
    if p_final.len() != y_hat.len() {
        return Err(Error::LengthMismatch {
            left: p_final.len(),
            right: y_hat.len(),
        });
    }
    let per_class = per_class_stats(y_hat, labels, c)?;
    if let Some(k) = per_class.iter().position(|s| s.support == 0) {
        return Err(Error::MissingClass(k));
    }
    let conf: Vec<f64> = p_final.iter().map(top1_confidence).collect();
    let correct: Vec<bool> = y_hat.iter().zip(labels).map(|(p, l)| p == l).collect();
    let auroc = macro_auroc(p_final, labels, c)?;
    Ok(EvalReport {
        accuracy: accuracy(y_hat, labels)?,
        macro_f1: per_class.iter().map(|s| s.f1).sum::<f64>() / c as f64,
        balanced_accuracy: per_class.iter().map(|s| s.recall).sum::<f64>() / c as f64,
        ece: ece(&conf, &correct, bins)?,
        m_auc: auroc.m_auc,
        per_class,
        num_bins: bins,
        auroc_excluded: auroc.excluded,
    })
}

/// [`evaluate_posteriors`] over prediction records.
pub fn evaluate(records: &[PredictionRecord], labels: &[usize], c: usize, bins: usize) -> Result<EvalReport> {
    let p: Vec<Posterior> = records.iter().map(|r| r.p_final.clone()).collect();
    let y: Vec<usize> = records.iter().map(|r| r.y_hat).collect();
    evaluate_posteriors(&p, &y, labels, c, bins)
}

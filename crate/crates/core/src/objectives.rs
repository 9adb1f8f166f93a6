//! Training objectives, kept here for verification: cross-entropy, supervised
//! contrastive loss with its analytic gradient, and the weighted total.

use crate::error::{Error, Result};
use crate::model::{dot, Posterior, UnitEmbedding};

/// `−ln p(y)`; `+∞` when the true class has zero mass.
pub fn cross_entropy(p: &Posterior, y: usize) -> Result<f64> {
    if y >= p.num_classes() {
        return Err(Error::InvalidParameter(format!(
            "class {} outside 1..={}",
            y + 1,
            p.num_classes()
        )));
    }
    let py = p.get(y);
    Ok(if py > 0.0 { -py.ln() } else { f64::INFINITY })
}

/// Two augmented views per image, stored as consecutive or arbitrary pairs with shared labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveBatch {
    views: Vec<UnitEmbedding>,
    labels: Vec<usize>,
    tau: f64,
    lambda: f64,
}

impl ContrastiveBatch {
    pub fn new(views: Vec<UnitEmbedding>, labels: Vec<usize>, tau: f64, lambda: f64) -> Result<Self> {
        if views.is_empty() || views.len() % 2 != 0 {
            return Err(Error::InvalidParameter(format!(
                "a batch needs an even, nonzero number of views, got {}",
                views.len()
            )));
        }
        if views.len() != labels.len() {
            return Err(Error::LengthMismatch {
                left: views.len(),
                right: labels.len(),
            });
        }
        let d = views[0].dim();
        if let Some(v) = views.iter().find(|v| v.dim() != d) {
            return Err(Error::DimMismatch {
                expected: d,
                got: v.dim(),
            });
        }
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidParameter(format!("tau must be positive, got {tau}")));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!("lambda must be nonnegative, got {lambda}")));
        }
        Ok(Self {
            views,
            labels,
            tau,
            lambda,
        })
    }

    pub fn views(&self) -> &[UnitEmbedding] {
        &self.views
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    fn raw(&self) -> Vec<Vec<f64>> {
        self.views.iter().map(|v| v.as_slice().to_vec()).collect()
    }
}

pub fn supcon_loss(batch: &ContrastiveBatch) -> f64 {
    supcon_loss_raw(&batch.raw(), &batch.labels, batch.tau)
}

pub fn supcon_grad(batch: &ContrastiveBatch) -> Vec<Vec<f64>> {
    supcon_grad_raw(&batch.raw(), &batch.labels, batch.tau)
}

// Per-anchor log-softmax over all other views. Row i holds ln softmax_i(j), with
// the diagonal left at -inf.
fn log_softmax_rows(z: &[Vec<f64>], tau: f64) -> Vec<Vec<f64>> {
    let n = z.len();
    (0..n)
        .map(|i| {
            let s: Vec<f64> = (0..n)
                .map(|j| if j == i { f64::NEG_INFINITY } else { dot(&z[i], &z[j]) / tau })
                .collect();
            let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + s.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            s.iter().map(|x| x - lse).collect()
        })
        .collect()
}

fn positives(labels: &[usize], i: usize) -> Vec<usize> {
    (0..labels.len())
        .filter(|&j| j != i && labels[j] == labels[i])
        .collect()
}

/// Summed supervised contrastive loss over free (not necessarily unit) vectors.
/// Anchors without positives contribute nothing.
pub fn supcon_loss_raw(z: &[Vec<f64>], labels: &[usize], tau: f64) -> f64 {
    let logp = log_softmax_rows(z, tau);
    let mut total = 0.0;
    for i in 0..z.len() {
        let pos = positives(labels, i);
        if pos.is_empty() {
            continue;
        }
        let mean: f64 = pos.iter().map(|&p| logp[i][p]).sum::<f64>() / pos.len() as f64;
        total -= mean;
    }
    total
}

/// Exact gradient of [`supcon_loss_raw`] with respect to every vector.
pub fn supcon_grad_raw(z: &[Vec<f64>], labels: &[usize], tau: f64) -> Vec<Vec<f64>> {
    let n = z.len();
    let d = z.first().map_or(0, Vec::len);
    let logp = log_softmax_rows(z, tau);
    // g[i][j] = dL/ds_ij where s_ij = z_i·z_j / τ
    let mut g = vec![vec![0.0; n]; n];
    for i in 0..n {
        let pos = positives(labels, i);
        if pos.is_empty() {
            continue;
        }
        for j in 0..n {
            if j != i {
                g[i][j] = logp[i][j].exp();
            }
        }
        let w = 1.0 / pos.len() as f64;
        for &p in &pos {
            g[i][p] -= w;
        }
    }
    let mut grad = vec![vec![0.0; d]; n];
    for k in 0..n {
        for j in 0..n {
            let c = (g[k][j] + g[j][k]) / tau;
            if c != 0.0 {
                for (out, v) in grad[k].iter_mut().zip(&z[j]) {
                    *out += c * v;
                }
            }
        }
    }
    grad
}

/// `mean(ce) + λ·scl`, with the contrastive term taken as the raw sum over anchors.
pub fn total_loss(ce_values: &[f64], scl_value: f64, lambda: f64) -> Result<f64> {
    if ce_values.is_empty() {
        return Err(Error::EmptyInput);
    }
    if ce_values.iter().any(|c| !c.is_finite()) || !scl_value.is_finite() {
        return Err(Error::InvalidParameter("loss terms must be finite".into()));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParameter(format!("lambda must be nonnegative, got {lambda}")));
    }
    let mean = ce_values.iter().sum::<f64>() / ce_values.len() as f64;
    Ok(mean + lambda * scl_value)
}

//! L2-regularized logistic regression trained by full-batch gradient descent.
//!
//! The objective is the mean log loss plus `l2/2 * |w|^2`; the bias is not
//! regularized.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{ClassicError, SparseRow};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogRegHyper {
    pub lr: f64,
    pub epochs: usize,
    pub l2: f64,
}

impl Default for LogRegHyper {
    fn default() -> Self {
        Self {
            lr: 0.1,
            epochs: 500,
            l2: 1e-4,
        }
    }
}

impl LogRegHyper {
    pub fn validate(&self) -> Result<(), ClassicError> {
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(ClassicError::InvalidHyper(format!(
                "need lr > 0 and l2 >= 0, got lr={} l2={}",
                self.lr, self.l2
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRegModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub hyper: LogRegHyper,
    pub final_loss: f64,
}

fn dot(w: &[f64], x: &SparseRow) -> f64 {
    x.iter().map(|&(j, v)| w.get(j).copied().unwrap_or(0.0) * v).sum()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

impl LogRegModel {
    pub fn decision(&self, x: &SparseRow) -> f64 {
        dot(&self.weights, x) + self.bias
    }

    pub fn probability(&self, x: &SparseRow) -> f64 {
        sigmoid(self.decision(x))
    }

    pub fn predict(&self, x: &SparseRow) -> bool {
        self.probability(x) >= 0.5
    }
}

/// Regularized mean log loss.
pub fn objective(w: &[f64], b: f64, xs: &[SparseRow], ys: &[bool], l2: f64) -> f64 {
    let n = xs.len().max(1) as f64;
    let data: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, &y)| {
            let z = dot(w, x) + b;
            softplus(z) - if y { z } else { 0.0 }
        })
        .sum();
    data / n + 0.5 * l2 * w.iter().map(|v| v * v).sum::<f64>()
}

/// Gradient of [`objective`] with respect to `(w, b)`.
pub fn gradient(w: &[f64], b: f64, xs: &[SparseRow], ys: &[bool], l2: f64) -> (Vec<f64>, f64) {
    let n = xs.len().max(1) as f64;
    let mut gw: Vec<f64> = w.iter().map(|v| l2 * v).collect();
    let mut gb = 0.0;
    for (x, &y) in xs.iter().zip(ys) {
        let r = (sigmoid(dot(w, x) + b) - if y { 1.0 } else { 0.0 }) / n;
        for &(j, v) in x {
            gw[j] += r * v;
        }
        gb += r;
    }
    (gw, gb)
}

/// Upper bound on the Lipschitz constant of the gradient: the Hessian is at
/// most `1/4 * mean(|x|^2 + 1) + l2` in spectral norm.
pub fn lipschitz_bound(xs: &[SparseRow], l2: f64) -> f64 {
    let n = xs.len().max(1) as f64;
    let mean_sq: f64 = xs
        .iter()
        .map(|x| 1.0 + x.iter().map(|(_, v)| v * v).sum::<f64>())
        .sum::<f64>()
        / n;
    0.25 * mean_sq + l2
}

/// Trains from zero weights; also returns the loss before every step and
/// after the last one (`epochs + 1` values).
pub fn train_logreg(
    xs: &[SparseRow],
    ys: &[bool],
    dim: usize,
    hyper: &LogRegHyper,
) -> Result<(LogRegModel, Vec<f64>), ClassicError> {
    hyper.validate()?;
    if xs.len() != ys.len() {
        return Err(ClassicError::ShapeMismatch {
            rows: xs.len(),
            labels: ys.len(),
        });
    }
    if let Some(&(col, _)) = xs.iter().flat_map(|x| x.iter()).find(|(j, _)| *j >= dim) {
        return Err(ClassicError::InvalidHyper(format!("feature column {col} outside dimension {dim}")));
    }
    let positives = ys.iter().filter(|y| **y).count();
    if positives == 0 || positives == ys.len() {
        return Err(ClassicError::DegenerateLabels(None));
    }
    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let mut history = Vec::with_capacity(hyper.epochs + 1);
    for _ in 0..hyper.epochs {
        history.push(objective(&w, b, xs, ys, hyper.l2));
        let (gw, gb) = gradient(&w, b, xs, ys, hyper.l2);
        for (wj, gj) in w.iter_mut().zip(&gw) {
            *wj -= hyper.lr * gj;
        }
        b -= hyper.lr * gb;
    }
    let final_loss = objective(&w, b, xs, ys, hyper.l2);
    history.push(final_loss);
    if !final_loss.is_finite() || w.iter().any(|v| !v.is_finite()) {
        return Err(ClassicError::Diverged);
    }
    Ok((
        LogRegModel {
            weights: w,
            bias: b,
            hyper: *hyper,
            final_loss,
        },
        history,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelModel {
    Trained(LogRegModel),
    /// Label had a single class in training; predicts that class.
    Constant { positive: bool },
}

impl LabelModel {
    pub fn predict(&self, x: &SparseRow) -> bool {
        match self {
            LabelModel::Trained(m) => m.predict(x),
            LabelModel::Constant { positive } => *positive,
        }
    }
}

/// One independent binary model per label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OvRModel {
    pub models: BTreeMap<String, LabelModel>,
}

impl OvRModel {
    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.models.keys().map(String::as_str)
    }

    /// Labels whose training data had a single class.
    pub fn degenerate_labels(&self) -> Vec<&str> {
        self.models
            .iter()
            .filter(|(_, m)| matches!(m, LabelModel::Constant { .. }))
            .map(|(l, _)| l.as_str())
            .collect()
    }

    pub fn predict(&self, x: &SparseRow) -> BTreeSet<String> {
        self.models
            .iter()
            .filter(|(_, m)| m.predict(x))
            .map(|(l, _)| l.clone())
            .collect()
    }
}

/// Trains every label on its own thread; single-class labels become
/// constant models instead of failing the whole fit.
pub fn train_ovr(
    xs: &[SparseRow],
    ys: &[BTreeSet<String>],
    labels: &[String],
    dim: usize,
    hyper: &LogRegHyper,
) -> Result<OvRModel, ClassicError> {
    if xs.len() != ys.len() {
        return Err(ClassicError::ShapeMismatch {
            rows: xs.len(),
            labels: ys.len(),
        });
    }
    let results: Vec<Result<(String, LabelModel), ClassicError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = labels
            .iter()
            .map(|label| {
                scope.spawn(move || {
                    let column: Vec<bool> = ys.iter().map(|set| set.contains(label)).collect();
                    match train_logreg(xs, &column, dim, hyper) {
                        Ok((model, _)) => Ok((label.clone(), LabelModel::Trained(model))),
                        Err(ClassicError::DegenerateLabels(_)) => {
                            tracing::info!(%label, "single-class label; using a constant model");
                            Ok((
                                label.clone(),
                                LabelModel::Constant {
                                    positive: column.first().copied().unwrap_or(false),
                                },
                            ))
                        }
                        Err(e) => Err(e),
                    }
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("training thread")).collect()
    });
    Ok(OvRModel {
        models: results.into_iter().collect::<Result<_, _>>()?,
    })
}

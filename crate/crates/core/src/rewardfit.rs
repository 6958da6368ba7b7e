//! Pairwise reward fitting: a linear score head trained on comparison
//! labels with the logistic pairwise loss.
//!
//! The score of an item is `w·features + bias`. Only score *differences*
//! enter the loss, so the bias is unidentified (its gradient is exactly
//! zero) and scores are meaningful up to an additive constant per group —
//! which is all the within-group ordering needs. On clean, fully covered
//! data generated by a strictly increasing link, the fitted order matches
//! the latent quality order.

use alloc::vec::Vec;
use core::fmt;

use crate::dataset::{DatasetError, GroupDataset, Item, ItemId};
use crate::link::sigmoid;
use crate::prefgen::PairLabel;

/// Parameters of the linear score head.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreParams {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl ScoreParams {
    pub fn zeros(dimension: usize) -> Self {
        Self {
            weights: alloc::vec![0.0; dimension],
            bias: 0.0,
        }
    }
}

/// Full-batch gradient descent settings.
#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub learning_rate: f64,
    pub max_iters: usize,
    /// Ridge penalty on the weights (the bias is excluded).
    pub l2: f64,
    /// Stop when the gradient infinity-norm falls below this.
    pub tol: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            max_iters: 50_000,
            l2: 1e-6,
            tol: 1e-8,
        }
    }
}

/// What the fitter did.
#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub iterations: usize,
    pub final_loss: f64,
    pub final_grad_norm: f64,
    pub converged: bool,
}

/// Linear score `w·features + bias`.
pub fn score(params: &ScoreParams, item: &Item) -> Result<f64, FitError> {
    if item.features.len() != params.weights.len() {
        return Err(FitError::Dataset(DatasetError::DimensionMismatch {
            expected: params.weights.len(),
            got: item.features.len(),
        }));
    }
    Ok(params
        .weights
        .iter()
        .zip(&item.features)
        .map(|(w, x)| w * x)
        .sum::<f64>()
        + params.bias)
}

/// Predicted probability that `item_i` beats `item_j`: `σ(s_i - s_j)`.
pub fn pair_prob(params: &ScoreParams, item_i: &Item, item_j: &Item) -> Result<f64, FitError> {
    if item_i.group != item_j.group {
        return Err(FitError::CrossGroupPair {
            i: item_i.id,
            j: item_j.id,
        });
    }
    let gap = score(params, item_i)? - score(params, item_j)?;
    Ok(sigmoid(gap))
}

/// Mean binary cross-entropy of the labels under `params`, plus `l2·‖w‖²`.
pub fn pair_loss(
    params: &ScoreParams,
    labels: &[PairLabel],
    dataset: &GroupDataset,
    l2: f64,
) -> Result<f64, FitError> {
    let diffs = label_diffs(params.weights.len(), labels, dataset)?;
    Ok(loss_of(&params.weights, &diffs, l2))
}

/// Exact gradient of [`pair_loss`], length `d + 1` (weights then bias).
///
/// Per label the weight contribution is `(p̂ - y)·(x_i - x_j)`; the bias
/// cancels in every score difference, so its entry is identically zero.
pub fn pair_loss_grad(
    params: &ScoreParams,
    labels: &[PairLabel],
    dataset: &GroupDataset,
    l2: f64,
) -> Result<Vec<f64>, FitError> {
    let d = params.weights.len();
    let diffs = label_diffs(d, labels, dataset)?;
    let mut grad = alloc::vec![0.0; d + 1];
    loss_and_grad(&params.weights, &diffs, l2, &mut grad);
    Ok(grad)
}

/// Fit the score head by full-batch gradient descent from zero init.
pub fn fit(
    labels: &[PairLabel],
    dataset: &GroupDataset,
    config: &FitConfig,
) -> Result<(ScoreParams, FitReport), FitError> {
    if !(config.learning_rate.is_finite() && config.learning_rate > 0.0) {
        return Err(FitError::InvalidConfig("learning_rate must be > 0"));
    }
    if config.max_iters == 0 {
        return Err(FitError::InvalidConfig("max_iters must be >= 1"));
    }
    if !(config.l2.is_finite() && config.l2 >= 0.0) {
        return Err(FitError::InvalidConfig("l2 must be >= 0"));
    }
    if !(config.tol.is_finite() && config.tol > 0.0) {
        return Err(FitError::InvalidConfig("tol must be > 0"));
    }

    let d = dataset.dimension();
    let diffs = label_diffs(d, labels, dataset)?;
    let mut weights = alloc::vec![0.0; d];
    let mut grad = alloc::vec![0.0; d + 1];

    let mut iterations = 0;
    let mut converged = false;
    let (loss, grad_norm) = loop {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let loss = loss_and_grad(&weights, &diffs, config.l2, &mut grad);
        if !loss.is_finite() {
            return Err(FitError::Diverged { iteration: iterations });
        }
        let grad_norm = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if grad_norm < config.tol {
            converged = true;
            break (loss, grad_norm);
        }
        if iterations == config.max_iters {
            break (loss, grad_norm);
        }
        for (w, g) in weights.iter_mut().zip(&grad) {
            *w -= config.learning_rate * g;
        }
        iterations += 1;
    };
    Ok((
        ScoreParams { weights, bias: 0.0 },
        FitReport {
            iterations,
            final_loss: loss,
            final_grad_norm: grad_norm,
            converged,
        },
    ))
}

/// Per-label `(x_i - x_j, y)` pairs, validated against the dataset.
struct LabelDiff {
    diff: Vec<f64>,
    y: f64,
}

fn label_diffs(
    d: usize,
    labels: &[PairLabel],
    dataset: &GroupDataset,
) -> Result<Vec<LabelDiff>, FitError> {
    if labels.is_empty() {
        return Err(FitError::EmptyLabels);
    }
    if dataset.dimension() != d {
        return Err(FitError::Dataset(DatasetError::DimensionMismatch {
            expected: d,
            got: dataset.dimension(),
        }));
    }
    labels
        .iter()
        .map(|label| {
            let item_i = dataset
                .item(label.i)
                .ok_or(FitError::UnknownItem(label.i))?;
            let item_j = dataset
                .item(label.j)
                .ok_or(FitError::UnknownItem(label.j))?;
            if item_i.group != item_j.group
                || item_i.group != label.group
                || label.i == label.j
            {
                return Err(FitError::CrossGroupPair {
                    i: label.i,
                    j: label.j,
                });
            }
            Ok(LabelDiff {
                diff: item_i
                    .features
                    .iter()
                    .zip(&item_j.features)
                    .map(|(a, b)| a - b)
                    .collect(),
                y: if label.y { 1.0 } else { 0.0 },
            })
        })
        .collect()
}

/// Numerically stable `ln(1 + e^z)`.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + libm::log1p(libm::exp(-z))
    } else {
        libm::log1p(libm::exp(z))
    }
}

fn loss_of(weights: &[f64], diffs: &[LabelDiff], l2: f64) -> f64 {
    let mut sum = 0.0;
    for ld in diffs {
        let gap: f64 = weights.iter().zip(&ld.diff).map(|(w, x)| w * x).sum();
        // BCE of σ(gap) against y, in softplus form.
        sum += if ld.y == 1.0 { softplus(-gap) } else { softplus(gap) };
    }
    sum / diffs.len() as f64 + l2 * weights.iter().map(|w| w * w).sum::<f64>()
}

/// One pass computing the loss and accumulating the gradient (weights then
/// bias). Labels are accumulated in order so results are bit-reproducible.
///
/// Shares one `exp` between the loss and the residual: with
/// `e = exp(-|gap|)`, `σ(|gap|) = 1/(1+e)` and `softplus(-|gap|) = log1p(e)`.
fn loss_and_grad(weights: &[f64], diffs: &[LabelDiff], l2: f64, grad: &mut [f64]) -> f64 {
    let n = diffs.len() as f64;
    let mut sum = 0.0;
    for ld in diffs {
        let gap: f64 = weights.iter().zip(&ld.diff).map(|(w, x)| w * x).sum();
        let e = libm::exp(-gap.abs());
        let tail = libm::log1p(e);
        let (loss, p) = if gap >= 0.0 {
            (if ld.y == 1.0 { tail } else { gap + tail }, 1.0 / (1.0 + e))
        } else {
            (if ld.y == 1.0 { -gap + tail } else { tail }, e / (1.0 + e))
        };
        sum += loss;
        let residual = p - ld.y;
        for (g, x) in grad.iter_mut().zip(&ld.diff) {
            *g += residual * x / n;
        }
    }
    for (g, w) in grad.iter_mut().zip(weights) {
        *g += 2.0 * l2 * w;
    }
    sum / n + l2 * weights.iter().map(|w| w * w).sum::<f64>()
}

#[derive(Debug, Clone, PartialEq)]
pub enum FitError {
    EmptyLabels,
    UnknownItem(ItemId),
    CrossGroupPair { i: ItemId, j: ItemId },
    InvalidConfig(&'static str),
    /// The loss became NaN or infinite at this iteration.
    Diverged { iteration: usize },
    Dataset(DatasetError),
}

impl fmt::Display for FitError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FitError::EmptyLabels => write!(f, "cannot fit on an empty label list"),
            FitError::UnknownItem(id) => write!(f, "label references unknown item {id}"),
            FitError::CrossGroupPair { i, j } => {
                write!(f, "label pairs items {i} and {j} across groups")
            }
            FitError::InvalidConfig(msg) => write!(f, "invalid fit config: {msg}"),
            FitError::Diverged { iteration } => {
                write!(f, "optimization diverged (non-finite loss) at iteration {iteration}")
            }
            FitError::Dataset(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for FitError {}

impl From<DatasetError> for FitError {
    fn from(e: DatasetError) -> Self {
        FitError::Dataset(e)
    }
}

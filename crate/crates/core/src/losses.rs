//! Training objectives for a single stream.
//!
//! * classification: cross entropy between the normalized multi-hot label
//!   and the video-level prediction,
//! * attention normalization: mean of the `l` smallest attentions minus
//!   mean of the `l` largest, pushing attention towards 0/1,
//! * pseudo ground truth: mean squared error between attention and a
//!   frame-level target.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

/// Lower bound applied to probabilities before taking the log.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct LossConfig {
    /// Weight of the attention normalization term.
    pub alpha: f64,
    /// Weight of the pseudo ground truth term.
    pub gamma: f64,
    /// Divisor selecting `l = max(1, floor(T / s))` snippets.
    pub s: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            gamma: 2.0,
            s: 8,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidConfig(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidConfig(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if self.s == 0 {
            return Err(Error::InvalidConfig("s must be >= 1".into()));
        }
        Ok(())
    }
}

/// `-sum_c y_c log(max(y_hat_c, LOG_FLOOR))`
pub fn classification_loss(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_len("classification loss", y.len(), y_hat.len())?;
    Ok(-y
        .iter()
        .zip(y_hat)
        .filter(|(&y, _)| y != 0.0)
        .map(|(y, p)| y * libm::log(p.max(LOG_FLOOR)))
        .sum::<f64>())
}

/// Gradient of [`classification_loss`] with respect to `y_hat`.
pub fn classification_loss_grad(y: &[f64], y_hat: &[f64]) -> Result<Vec<f64>> {
    check_len("classification loss", y.len(), y_hat.len())?;
    Ok(y.iter()
        .zip(y_hat)
        .map(|(&y, &p)| if y == 0.0 || p < LOG_FLOOR { 0.0 } else { -y / p })
        .collect())
}

/// Value of the attention normalization loss plus the snippets it selected.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionNorm {
    pub value: f64,
    pub l: usize,
    /// Indices of the `l` largest attentions (ties: lowest index first).
    pub top: Vec<usize>,
    /// Indices of the `l` smallest attentions (ties: lowest index first).
    pub bottom: Vec<usize>,
}

impl AttentionNorm {
    /// Gradient with respect to each attention value; an index that is in
    /// both selections receives both contributions.
    pub fn gradient(&self, len: usize) -> Vec<f64> {
        let w = 1.0 / self.l as f64;
        let mut g = vec![0.0; len];
        for &i in &self.top {
            g[i] -= w;
        }
        for &i in &self.bottom {
            g[i] += w;
        }
        g
    }
}

pub fn attention_norm_loss(attention: &[f64], s: usize) -> AttentionNorm {
    let t_len = attention.len();
    let l = (t_len / s.max(1)).max(1).min(t_len.max(1));
    let mut order: Vec<usize> = (0..t_len).collect();
    // stable sorts keep lowest index first among equal values
    order.sort_by(|&a, &b| attention[b].total_cmp(&attention[a]));
    let top: Vec<usize> = order.iter().copied().take(l).collect();
    order.sort_by(|&a, &b| attention[a].total_cmp(&attention[b]));
    let bottom: Vec<usize> = order.iter().copied().take(l).collect();
    if t_len == 0 {
        return AttentionNorm {
            value: 0.0,
            l,
            top,
            bottom,
        };
    }
    // sum in index order so identical selections cancel exactly
    let mean = |idx: &[usize]| {
        let mut idx = idx.to_vec();
        idx.sort_unstable();
        idx.iter().map(|&i| attention[i]).sum::<f64>() / l as f64
    };
    AttentionNorm {
        value: mean(&bottom) - mean(&top),
        l,
        top,
        bottom,
    }
}

/// `(1/T) sum_i (A_i - G_i)^2`
pub fn pseudo_gt_loss(attention: &[f64], gt: &[f64]) -> Result<f64> {
    check_len("pseudo gt loss", gt.len(), attention.len())?;
    if attention.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = attention.iter().zip(gt).map(|(a, g)| (a - g) * (a - g)).sum();
    Ok(sum / attention.len() as f64)
}

pub fn pseudo_gt_loss_grad(attention: &[f64], gt: &[f64]) -> Result<Vec<f64>> {
    check_len("pseudo gt loss", gt.len(), attention.len())?;
    let k = 2.0 / attention.len() as f64;
    Ok(attention.iter().zip(gt).map(|(a, g)| k * (a - g)).collect())
}

/// Weighted objective. `gt` must be absent at refinement iteration 0 and
/// present afterwards.
pub fn total_loss(cls: f64, att: f64, gt: Option<f64>, iteration: usize, config: &LossConfig) -> Result<f64> {
    match (iteration, gt) {
        (0, None) => Ok(cls + config.alpha * att),
        (0, Some(_)) => Err(Error::InvalidArgument(
            "pseudo ground truth loss supplied at refinement iteration 0".into(),
        )),
        (_, Some(gt)) => Ok(cls + config.alpha * att + config.gamma * gt),
        (n, None) => Err(Error::InvalidArgument(format!(
            "refinement iteration {n} requires a pseudo ground truth loss"
        ))),
    }
}

fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::shape(context, expected, actual));
    }
    Ok(())
}

//! L1 regression loss and the temporal smoothness penalty.

use serde::{Deserialize, Serialize};

use crate::tensor::{NnError, Result};

/// Weight of the smoothness term.
pub const DEFAULT_LAMBDA: f64 = 100.0;

#[inline]
fn sgn(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn check_lengths(pred: &[f64], gt: &[f64]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(NnError::Shape(format!("{} predictions, {} targets", pred.len(), gt.len())));
    }
    if pred.is_empty() {
        return Err(NnError::Empty("loss input".into()));
    }
    Ok(())
}

/// Mean absolute error and its gradient, with a zero subgradient at ties.
pub fn l1_loss(pred: &[f64], gt: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_lengths(pred, gt)?;
    let n = pred.len() as f64;
    let value = pred.iter().zip(gt).map(|(p, g)| (p - g).abs()).sum::<f64>() / n;
    let grad = pred.iter().zip(gt).map(|(p, g)| sgn(p - g) / n).collect();
    Ok((value, grad))
}

fn check_smooth(hrs: &[f64]) -> Result<f64> {
    if hrs.len() < 2 {
        return Err(NnError::Empty(format!("smooth loss needs >= 2 values, got {}", hrs.len())));
    }
    Ok(hrs.iter().sum::<f64>() / hrs.len() as f64)
}

/// Mean absolute deviation of a sequence from its own mean.
pub fn smooth_loss(hrs: &[f64]) -> Result<f64> {
    let mean = check_smooth(hrs)?;
    Ok(hrs.iter().map(|h| (h - mean).abs()).sum::<f64>() / hrs.len() as f64)
}

/// Per-element `sgn(h_t - m) - (1/T) Σ_i sgn(h_i - m)`, which is the
/// smooth-loss gradient multiplied by the sequence length `T`.
pub fn smooth_loss_grad_scaled(hrs: &[f64]) -> Result<Vec<f64>> {
    let mean = check_smooth(hrs)?;
    let signs: Vec<f64> = hrs.iter().map(|h| sgn(h - mean)).collect();
    let avg = signs.iter().sum::<f64>() / hrs.len() as f64;
    Ok(signs.iter().map(|s| s - avg).collect())
}

/// Exact gradient of [`smooth_loss`] with `sgn(0) = 0` at ties.
pub fn smooth_loss_grad(hrs: &[f64]) -> Result<Vec<f64>> {
    let n = hrs.len() as f64;
    Ok(smooth_loss_grad_scaled(hrs)?.into_iter().map(|g| g / n).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l1: f64,
    pub smooth: f64,
    pub total: f64,
    pub lambda: f64,
}

/// `l1 + lambda * smooth`; the smooth term is zero for a single prediction.
pub fn total_loss(pred: &[f64], gt: &[f64], lambda: f64) -> Result<(LossBreakdown, Vec<f64>)> {
    let (l1, mut grad) = l1_loss(pred, gt)?;
    let smooth = if pred.len() >= 2 {
        for (g, s) in grad.iter_mut().zip(smooth_loss_grad(pred)?) {
            *g += lambda * s;
        }
        smooth_loss(pred)?
    } else {
        0.0
    };
    Ok((LossBreakdown { l1, smooth, total: l1 + lambda * smooth, lambda }, grad))
}

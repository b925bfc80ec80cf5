//! Central finite-difference gradient checking in 64-bit.

use std::ops::Range;

use crate::tensor::{NnError, Result};

pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct BlockReport {
    pub name: String,
    /// `|a - n| / max(|a| + |n|, floor)` over the block's reliable entries.
    pub rel_err: f64,
    /// Entries where one-sided slopes disagree, i.e. a kink within one step.
    pub unreliable: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockReport>,
    pub max_rel_err: f64,
    pub unreliable: usize,
    pub passed: bool,
}

/// Below this both gradients are indistinguishable from difference noise.
const NORM_FLOOR: f64 = 1e-6;

/// Compares `analytic` with central differences of `f` at `x`, block by
/// block. Coordinates at a kink are reported as unreliable and left out of
/// the error, not counted as failures.
pub fn grad_check(
    f: impl Fn(&[f64]) -> f64,
    x: &[f64],
    analytic: &[f64],
    blocks: &[(String, Range<usize>)],
    tolerance: f64,
) -> Result<GradCheckReport> {
    if x.len() != analytic.len() {
        return Err(NnError::Shape(format!("{} points, {} gradient entries", x.len(), analytic.len())));
    }
    let f0 = f(x);
    if !f0.is_finite() {
        return Err(NnError::NonFinite("objective at the check point".into()));
    }
    let mut probe = x.to_vec();
    let mut reports = Vec::with_capacity(blocks.len());
    for (name, range) in blocks {
        let (mut diff2, mut a2, mut n2, mut kinks) = (0.0, 0.0, 0.0, 0);
        for i in range.clone() {
            let orig = probe[i];
            probe[i] = orig + FD_STEP;
            let fp = f(&probe);
            probe[i] = orig - FD_STEP;
            let fm = f(&probe);
            probe[i] = orig;
            if !fp.is_finite() || !fm.is_finite() {
                return Err(NnError::NonFinite(format!("objective near {name}[{}]", i - range.start)));
            }
            let (fwd, bwd) = ((fp - f0) / FD_STEP, (f0 - fm) / FD_STEP);
            if (fwd - bwd).abs() > 1e-3 * (fwd.abs() + bwd.abs()) + 1e-4 {
                kinks += 1;
                continue;
            }
            let numeric = (fp - fm) / (2.0 * FD_STEP);
            diff2 += (analytic[i] - numeric).powi(2);
            a2 += analytic[i].powi(2);
            n2 += numeric.powi(2);
        }
        let rel_err = diff2.sqrt() / (a2.sqrt() + n2.sqrt()).max(NORM_FLOOR);
        reports.push(BlockReport { name: name.clone(), rel_err, unreliable: kinks });
    }
    let max_rel_err = reports.iter().map(|b| b.rel_err).fold(0.0, f64::max);
    let unreliable = reports.iter().map(|b| b.unreliable).sum();
    Ok(GradCheckReport { blocks: reports, max_rel_err, unreliable, passed: max_rel_err < tolerance })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let x = vec![0.3, -1.2, 2.5, 0.0];
        let g: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let r = grad_check(|w| w.iter().map(|v| v * v).sum(), &x, &g, &[("w".into(), 0..4)], 1e-9).unwrap();
        assert!(r.passed && r.max_rel_err < 1e-9, "{r:?}");
        assert_eq!(r.unreliable, 0);
    }

    #[test]
    fn wrong_gradient_fails() {
        let x = vec![1.0, 2.0];
        let r = grad_check(|w| w[0] * w[1], &x, &[2.0, 2.0], &[("w".into(), 0..2)], 1e-4).unwrap();
        assert!(!r.passed);
    }

    #[test]
    fn kink_is_unreliable() {
        let r = grad_check(|w| w[0].abs() + w[1] * w[1], &[0.0, 1.0], &[0.0, 2.0], &[("w".into(), 0..2)], 1e-6).unwrap();
        assert_eq!(r.unreliable, 1);
        assert!(r.passed);
    }

    #[test]
    fn non_finite_objective() {
        assert!(grad_check(|w| 1.0 / w[0], &[0.0], &[0.0], &[("w".into(), 0..1)], 1e-4).is_err());
        assert!(grad_check(|w| w[0], &[0.0], &[0.0, 1.0], &[], 1e-4).is_err());
    }
}

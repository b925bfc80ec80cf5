//! Error metrics, subject-exclusive folds and Bland-Altman agreement data.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// 95% limits of agreement multiplier.
pub const LOA_Z: f64 = 1.96;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("empty estimate list")]
    Empty,
    #[error("ground truth must be positive, got {0}")]
    NonPositiveTruth(f64),
    #[error("non-finite value in pair {0}")]
    NonFinite(usize),
    #[error("need >= 2 pairs")]
    TooFewPairs,
    #[error("{k} folds requested for {subjects} subjects")]
    TooManyFolds { k: usize, subjects: usize },
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// Error statistics over `(estimate, ground truth)` pairs, in bpm.
/// `std_err_bpm` uses the sample (N-1) convention.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n: usize,
    pub mean_err_bpm: f64,
    pub std_err_bpm: f64,
    pub mae_bpm: f64,
    pub rmse_bpm: f64,
    pub mer_percent: f64,
    pub pearson_r: f64,
    /// Set when either series has zero variance; `pearson_r` is then 0.
    pub pearson_degenerate: bool,
}

fn check_pairs(pairs: &[(f64, f64)]) -> Result<()> {
    if pairs.is_empty() {
        return Err(EvalError::Empty);
    }
    for (i, &(e, g)) in pairs.iter().enumerate() {
        if !e.is_finite() || !g.is_finite() {
            return Err(EvalError::NonFinite(i));
        }
    }
    Ok(())
}

fn mean(x: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = x.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    s / n as f64
}

/// Sample standard deviation; zero for a single value.
fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values.iter().copied());
    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() - 1) as f64).sqrt()
}

pub fn compute_metrics(pairs: &[(f64, f64)]) -> Result<Metrics> {
    check_pairs(pairs)?;
    if let Some(&(_, g)) = pairs.iter().find(|(_, g)| *g <= 0.0) {
        return Err(EvalError::NonPositiveTruth(g));
    }
    let errs: Vec<f64> = pairs.iter().map(|(e, g)| e - g).collect();
    let n = pairs.len();
    let mean_err = mean(errs.iter().copied());
    let mae = mean(errs.iter().map(|e| e.abs()));
    let rmse = mean(errs.iter().map(|e| e * e)).sqrt();
    let mer = 100.0 * mean(pairs.iter().map(|(e, g)| (e - g).abs() / g));

    let me = mean(pairs.iter().map(|p| p.0));
    let mg = mean(pairs.iter().map(|p| p.1));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for &(e, g) in pairs {
        sxy += (e - me) * (g - mg);
        sxx += (e - me) * (e - me);
        syy += (g - mg) * (g - mg);
    }
    let degenerate = !(sxx > 0.0 && syy > 0.0);
    let r = if degenerate { 0.0 } else { (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0) };
    Ok(Metrics {
        n,
        mean_err_bpm: mean_err,
        std_err_bpm: sample_std(&errs),
        mae_bpm: mae,
        rmse_bpm: rmse,
        mer_percent: mer,
        pearson_r: r,
        pearson_degenerate: degenerate,
    })
}

/// Disjoint subject sets; fold `i` is the test split of round `i`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub folds: Vec<Vec<String>>,
}

impl FoldPlan {
    pub fn k(&self) -> usize {
        self.folds.len()
    }

    pub fn fold_of(&self, subject: &str) -> Option<usize> {
        self.folds.iter().position(|f| f.iter().any(|s| s == subject))
    }

    pub fn test_subjects(&self, fold: usize) -> &[String] {
        &self.folds[fold]
    }

    pub fn train_subjects(&self, fold: usize) -> Vec<String> {
        self.folds
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != fold)
            .flat_map(|(_, f)| f.iter().cloned())
            .collect()
    }
}

/// Seeded shuffle of the distinct subjects, then round-robin assignment.
pub fn make_folds<S: AsRef<str>>(subject_ids: &[S], k: usize, seed: u64) -> Result<FoldPlan> {
    let unique: BTreeSet<&str> = subject_ids.iter().map(AsRef::as_ref).collect();
    if k == 0 || k > unique.len() {
        return Err(EvalError::TooManyFolds { k, subjects: unique.len() });
    }
    let mut subjects: Vec<String> = unique.into_iter().map(str::to_owned).collect();
    subjects.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![Vec::new(); k];
    for (i, s) in subjects.into_iter().enumerate() {
        folds[i % k].push(s);
    }
    Ok(FoldPlan { folds })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlandAltman {
    /// `((est + gt) / 2, est - gt)` per pair.
    pub points: Vec<(f64, f64)>,
    pub mean_diff: f64,
    pub std_diff: f64,
    pub lower: f64,
    pub upper: f64,
}

pub fn bland_altman(pairs: &[(f64, f64)]) -> Result<BlandAltman> {
    check_pairs(pairs)?;
    if pairs.len() < 2 {
        return Err(EvalError::TooFewPairs);
    }
    let points: Vec<(f64, f64)> = pairs.iter().map(|&(e, g)| (0.5 * (e + g), e - g)).collect();
    let diffs: Vec<f64> = points.iter().map(|p| p.1).collect();
    let mean_diff = mean(diffs.iter().copied());
    let std_diff = sample_std(&diffs);
    Ok(BlandAltman {
        points,
        mean_diff,
        std_diff,
        lower: mean_diff - LOA_Z * std_diff,
        upper: mean_diff + LOA_Z * std_diff,
    })
}

impl BlandAltman {
    /// CSV of points with the limits in leading comment lines.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# mean_diff={}", self.mean_diff);
        let _ = writeln!(s, "# std_diff={}", self.std_diff);
        let _ = writeln!(s, "# lower_loa={}", self.lower);
        let _ = writeln!(s, "# upper_loa={}", self.upper);
        s.push_str("mean_bpm,diff_bpm\n");
        for (m, d) in &self.points {
            let _ = writeln!(s, "{m},{d}");
        }
        s
    }
}

/// One metrics row of a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub fold: String,
    pub estimator: String,
    #[serde(flatten)]
    pub metrics: Metrics,
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut s = String::from("fold,estimator,n,mean_bpm,std_bpm,mae_bpm,rmse_bpm,mer_percent,pearson_r,pearson_degenerate\n");
    for r in rows {
        let m = &r.metrics;
        let _ = writeln!(
            s,
            "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
            r.fold,
            r.estimator,
            m.n,
            m.mean_err_bpm,
            m.std_err_bpm,
            m.mae_bpm,
            m.rmse_bpm,
            m.mer_percent,
            m.pearson_r,
            m.pearson_degenerate
        );
    }
    s
}

/// Method-per-row table with Mean, Std, MAE, RMSE, MER and r columns.
pub fn results_table(rows: &[MetricsRow]) -> String {
    let mut s = String::from("| Method | Mean (bpm) | Std (bpm) | MAE (bpm) | RMSE (bpm) | MER | r |\n");
    s.push_str("|---|---|---|---|---|---|---|\n");
    for r in rows.iter().filter(|r| r.fold == "all") {
        let m = &r.metrics;
        let _ = writeln!(
            s,
            "| {} | {:.2} | {:.2} | {:.2} | {:.2} | {:.2}% | {:.2} |",
            r.estimator, m.mean_err_bpm, m.std_err_bpm, m.mae_bpm, m.rmse_bpm, m.mer_percent, m.pearson_r
        );
    }
    s
}

//! `evaluate`: error metrics, fold breakdowns and Bland-Altman exports from
//! estimate tables.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use rhythmkit_core::eval::{bland_altman, compute_metrics, make_folds, metrics_csv, results_table, BlandAltman, MetricsRow};
use rhythmkit_core::ingest::{load_ground_truth, GROUND_TRUTH_FILE};

use crate::dataset::find_video_dirs;
use crate::error::{csv_err, io_err, CliError, Result};

pub const METRICS_CSV: &str = "metrics.csv";
pub const METRICS_JSON: &str = "metrics.json";
pub const TABLE_MD: &str = "table.md";

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default)]
struct EstimateRow {
    subject_id: Option<String>,
    video_id: Option<String>,
    hr_bpm: Option<f64>,
    gt_hr_bpm: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Agreement {
    pub n: usize,
    pub mean_diff: f64,
    pub std_diff: f64,
    pub lower_loa: f64,
    pub upper_loa: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub rows: Vec<MetricsRow>,
    pub bland_altman: BTreeMap<String, Agreement>,
    /// Rows without an estimate or a ground-truth value, per estimator.
    pub skipped: BTreeMap<String, usize>,
    pub std_convention: &'static str,
}

/// Default estimator name: the parent directory for the standard report
/// file names, otherwise the file stem.
pub fn default_name(path: &Path) -> String {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    if stem == "videos" || stem == "clips" {
        if let Some(parent) = path.parent().and_then(|p| p.file_name()) {
            return parent.to_string_lossy().into_owned();
        }
    }
    stem
}

/// Mean ground-truth HR of every video under a dataset root, keyed by
/// `(subject, video)`.
pub fn dataset_ground_truth(root: &Path) -> Result<BTreeMap<(String, String), f64>> {
    let mut out = BTreeMap::new();
    for dir in find_video_dirs(root)? {
        let path = dir.join(GROUND_TRUTH_FILE);
        if !path.exists() {
            continue;
        }
        let gt = load_ground_truth(&path)?;
        let hr = gt.hr_samples.iter().map(|s| s.1).sum::<f64>() / gt.hr_samples.len() as f64;
        let name = |p: Option<&Path>| p.and_then(|p| p.file_name()).map(|s| s.to_string_lossy().into_owned());
        if let (Some(subject), Some(video)) = (name(dir.parent()), name(Some(&dir))) {
            out.insert((subject, video), hr);
        }
    }
    Ok(out)
}

struct Pairs {
    subjects: Vec<Option<String>>,
    pairs: Vec<(f64, f64)>,
    skipped: usize,
}

fn read_pairs(path: &Path, gt: Option<&BTreeMap<(String, String), f64>>) -> Result<Pairs> {
    let mut reader = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let headers = reader.headers().map_err(csv_err(path))?.clone();
    let has = |c: &str| headers.iter().any(|h| h == c);
    if !has("hr_bpm") || (gt.is_none() && !has("gt_hr_bpm")) {
        return Err(CliError::Input { path: path.into(), detail: "needs hr_bpm and gt_hr_bpm columns".into() });
    }
    let mut out = Pairs { subjects: Vec::new(), pairs: Vec::new(), skipped: 0 };
    for row in reader.deserialize::<EstimateRow>() {
        let row = row.map_err(csv_err(path))?;
        let truth = match (gt, &row.subject_id, &row.video_id) {
            (Some(map), Some(s), Some(v)) => map.get(&(s.clone(), v.clone())).copied(),
            (Some(_), _, _) => None,
            (None, _, _) => row.gt_hr_bpm,
        };
        match (row.hr_bpm, truth) {
            (Some(e), Some(g)) => {
                out.pairs.push((e, g));
                out.subjects.push(row.subject_id);
            }
            _ => out.skipped += 1,
        }
    }
    if out.pairs.is_empty() {
        return Err(CliError::Input { path: path.into(), detail: "no rows with both an estimate and ground truth".into() });
    }
    Ok(out)
}

fn fold_rows(name: &str, p: &Pairs, k: usize, seed: u64, path: &Path) -> Result<Vec<MetricsRow>> {
    let subjects: Vec<&str> = p
        .subjects
        .iter()
        .map(|s| s.as_deref())
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| CliError::Input { path: path.into(), detail: "fold metrics need a subject_id column".into() })?;
    let plan = make_folds(&subjects, k, seed)?;
    let mut rows = Vec::with_capacity(k);
    for fold in 0..k {
        let test = plan.test_subjects(fold);
        let pairs: Vec<(f64, f64)> =
            p.pairs.iter().zip(&subjects).filter(|(_, s)| test.iter().any(|t| t == *s)).map(|(p, _)| *p).collect();
        rows.push(MetricsRow { fold: fold.to_string(), estimator: name.into(), metrics: compute_metrics(&pairs)? });
    }
    Ok(rows)
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub names: Vec<String>,
    pub ground_truth: Option<PathBuf>,
    pub folds: Option<usize>,
    pub seed: u64,
}

/// Scores each estimate table and writes `metrics.csv`, `metrics.json`,
/// `table.md` and one `bland_altman_<name>.csv` per table into `out`.
pub fn run(inputs: &[PathBuf], out: &Path, opts: &EvalOptions) -> Result<EvalReport> {
    if inputs.is_empty() {
        return Err(CliError::Usage("no estimate tables given".into()));
    }
    if !opts.names.is_empty() && opts.names.len() != inputs.len() {
        return Err(CliError::Usage(format!("{} names for {} tables", opts.names.len(), inputs.len())));
    }
    let gt = opts.ground_truth.as_deref().map(dataset_ground_truth).transpose()?;
    let mut report = EvalReport {
        rows: Vec::new(),
        bland_altman: BTreeMap::new(),
        skipped: BTreeMap::new(),
        std_convention: "sample",
    };
    let mut exports: Vec<(String, BlandAltman)> = Vec::new();
    for (i, path) in inputs.iter().enumerate() {
        let name = opts.names.get(i).cloned().unwrap_or_else(|| default_name(path));
        if report.skipped.contains_key(&name) {
            return Err(CliError::Usage(format!("duplicate estimator name {name:?}; pass --name")));
        }
        let p = read_pairs(path, gt.as_ref())?;
        if let Some(k) = opts.folds {
            report.rows.extend(fold_rows(&name, &p, k, opts.seed, path)?);
        }
        report.rows.push(MetricsRow { fold: "all".into(), estimator: name.clone(), metrics: compute_metrics(&p.pairs)? });
        report.skipped.insert(name.clone(), p.skipped);
        if p.pairs.len() >= 2 {
            let ba = bland_altman(&p.pairs)?;
            report.bland_altman.insert(
                name.clone(),
                Agreement { n: p.pairs.len(), mean_diff: ba.mean_diff, std_diff: ba.std_diff, lower_loa: ba.lower, upper_loa: ba.upper },
            );
            exports.push((name, ba));
        }
    }

    fs::create_dir_all(out).map_err(io_err(out))?;
    let write = |file: &str, text: String| {
        let path = out.join(file);
        fs::write(&path, text).map_err(io_err(&path))
    };
    write(METRICS_CSV, metrics_csv(&report.rows))?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| CliError::Input { path: out.join(METRICS_JSON), detail: e.to_string() })?;
    write(METRICS_JSON, json + "\n")?;
    write(TABLE_MD, results_table(&report.rows))?;
    for (name, ba) in &exports {
        write(&format!("bland_altman_{name}.csv"), ba.to_csv())?;
    }
    Ok(report)
}

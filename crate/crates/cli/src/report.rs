//! Per-clip and per-video HR tables shared by `estimate` and `infer`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{csv_err, io_err, Result};

pub const CLIPS_FILE: &str = "clips.csv";
pub const VIDEOS_FILE: &str = "videos.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipRow {
    pub subject_id: String,
    pub video_id: String,
    pub clip_index: usize,
    pub start_frame: usize,
    pub length: usize,
    pub hr_bpm: Option<f64>,
    pub snr_db: Option<f64>,
    pub gt_hr_bpm: Option<f64>,
    /// Why no estimate was produced.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoRow {
    pub subject_id: String,
    pub video_id: String,
    pub hr_bpm: Option<f64>,
    pub clips: usize,
    pub valid_clips: usize,
    pub gt_hr_bpm: Option<f64>,
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Video HR as the mean of its successful clips; the label is the mean of
/// the labelled clips.
pub fn summarize(clips: &[ClipRow]) -> Option<VideoRow> {
    let first = clips.first()?;
    Some(VideoRow {
        subject_id: first.subject_id.clone(),
        video_id: first.video_id.clone(),
        hr_bpm: mean(clips.iter().filter_map(|c| c.hr_bpm)),
        clips: clips.len(),
        valid_clips: clips.iter().filter(|c| c.hr_bpm.is_some()).count(),
        gt_hr_bpm: mean(clips.iter().filter_map(|c| c.gt_hr_bpm)),
    })
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    for r in rows {
        w.serialize(r).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Writes `clips.csv` and `videos.csv` into `out_dir`.
pub fn write_report(out_dir: &Path, clips: &[ClipRow], videos: &[VideoRow]) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    write_rows(&out_dir.join(CLIPS_FILE), clips)?;
    write_rows(&out_dir.join(VIDEOS_FILE), videos)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clip(hr: Option<f64>, gt: Option<f64>) -> ClipRow {
        ClipRow {
            subject_id: "s".into(),
            video_id: "v".into(),
            clip_index: 0,
            start_frame: 0,
            length: 300,
            hr_bpm: hr,
            snr_db: None,
            gt_hr_bpm: gt,
            error: None,
        }
    }

    #[test]
    fn video_mean_skips_failed_clips() {
        let v = summarize(&[clip(Some(70.0), Some(71.0)), clip(None, Some(73.0)), clip(Some(74.0), None)]).unwrap();
        assert_eq!(v.hr_bpm, Some(72.0));
        assert_eq!(v.gt_hr_bpm, Some(72.0));
        assert_eq!((v.clips, v.valid_clips), (3, 2));
        assert_eq!(summarize(&[clip(None, None)]).unwrap().hr_bpm, None);
        assert!(summarize(&[]).is_none());
    }

    #[test]
    fn csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![clip(Some(72.5), None), clip(None, Some(60.0))];
        write_report(dir.path(), &rows, &[]).unwrap();
        let mut r = csv::Reader::from_path(dir.path().join(CLIPS_FILE)).unwrap();
        let back: Vec<ClipRow> = r.deserialize().collect::<std::result::Result<_, _>>().unwrap();
        assert_eq!(back, rows);
    }
}

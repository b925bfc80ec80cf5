//! `estimate`: classical spectral HR from raw videos or RGB maps.

use std::path::Path;

use rayon::prelude::*;
use rhythmkit_core::rppg::{traces_from_map, Estimator, RppgConfig};
use rhythmkit_core::{BlockTraces, ClipWindow, ColorSpace};

use crate::dataset::{find_video_dirs, in_video, load_map_videos, load_raw_video, MapVideo, RawOptions};
use crate::error::{CliError, Result};
use crate::report::{summarize, write_report, ClipRow, VideoRow};

fn clip_row(subject: &str, video: &str, index: usize, w: &ClipWindow, est: Option<Result<(f64, Option<f64>)>>) -> ClipRow {
    let (hr_bpm, snr_db, error) = match est {
        Some(Ok((hr, snr))) => (Some(hr), snr, None),
        Some(Err(e)) => (None, None, Some(e.to_string())),
        None => (None, None, Some("no usable landmark frame".into())),
    };
    ClipRow {
        subject_id: subject.into(),
        video_id: video.into(),
        clip_index: index,
        start_frame: w.start_frame,
        length: w.length,
        hr_bpm,
        snr_db,
        gt_hr_bpm: w.gt_hr_bpm,
        error,
    }
}

fn run_estimator(method: Estimator, traces: &BlockTraces, cfg: &RppgConfig) -> Result<(f64, Option<f64>)> {
    let e = method.estimate(traces, cfg)?;
    Ok((e.hr_bpm, e.snr_db))
}

fn raw_video_clips(dir: &Path, opts: &RawOptions, method: Estimator, cfg: &RppgConfig) -> Result<Vec<ClipRow>> {
    let v = load_raw_video(dir, opts)?;
    v.windows
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let est = if v.clip_has_valid_frame(w) {
                Some(v.traces.slice(w.range()).map_err(CliError::from).and_then(|t| run_estimator(method, &t, cfg)))
            } else {
                None
            };
            Ok(clip_row(&v.subject_id, &v.video_id, i, w, est))
        })
        .collect()
}

fn map_video_clips(v: &MapVideo, method: Estimator, cfg: &RppgConfig) -> Result<Vec<ClipRow>> {
    if v.color_space != ColorSpace::Rgb || v.maps.iter().any(|m| m.c != 3) {
        return Err(CliError::Input {
            path: v.key().into(),
            detail: format!("{} maps with {} channels; classical estimators need rgb maps", v.color_space, v.maps[0].c),
        });
    }
    if method == Estimator::Chrom {
        // Per-channel min-max scaling destroys the relative channel amplitudes
        // the fixed chrominance weights rely on.
        return Err(CliError::Input {
            path: v.key().into(),
            detail: "chrom needs raw traces; maps are scaled per channel".into(),
        });
    }
    Ok(v.maps
        .iter()
        .enumerate()
        .map(|(i, m)| clip_row(&v.subject_id, &v.video_id, i, &m.clip, Some(run_estimator(method, &traces_from_map(m), cfg))))
        .collect())
}

/// Estimates every clip under `input`, which is either a raw dataset root
/// or a directory of RGB maps, and writes the report to `out`. Fails after
/// writing if some video has no successful clip.
pub fn run(input: &Path, out: &Path, method: Estimator, opts: &RawOptions) -> Result<(Vec<ClipRow>, Vec<VideoRow>)> {
    let cfg = RppgConfig::default();
    let dirs = find_video_dirs(input)?;
    let per_video: Vec<Vec<ClipRow>> = if dirs.is_empty() {
        let videos = load_map_videos(input)?;
        videos.par_iter().map(|v| map_video_clips(v, method, &cfg)).collect::<Result<_>>()?
    } else {
        dirs.par_iter()
            .map(|d| raw_video_clips(d, opts, method, &cfg).map_err(in_video(d, "estimate")))
            .collect::<Result<_>>()?
    };
    let videos: Vec<VideoRow> = per_video.iter().filter_map(|c| summarize(c)).collect();
    let clips: Vec<ClipRow> = per_video.into_iter().flatten().collect();
    write_report(out, &clips, &videos)?;
    let failed: Vec<String> =
        videos.iter().filter(|v| v.hr_bpm.is_none()).map(|v| format!("{}/{}", v.subject_id, v.video_id)).collect();
    if !failed.is_empty() {
        return Err(CliError::NoValidClips(failed.join(", ")));
    }
    Ok((clips, videos))
}

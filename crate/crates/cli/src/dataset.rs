//! Discovery and loading of raw video directories and extracted maps.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use rhythmkit_core::ingest::{
    load_frame_sequence, load_ground_truth, load_landmarks, resample_indices, resample_sequence, smooth_landmarks,
    FRAMES_FILE, GROUND_TRUTH_FILE, LANDMARKS_FILE,
};
use rhythmkit_core::stmap::{read_stm, sequence_block_means, slide_windows, label_windows};
use rhythmkit_core::{BlockTraces, ClipWindow, ColorSpace, FrameSequence, GroundTruthTrace, LandmarkSchema, LandmarkTrack, SpatialTemporalMap};

use crate::error::{io_err, CliError, Result};

/// Parses `RxC` grid sizes such as `5x5`.
pub fn parse_grid(s: &str) -> std::result::Result<(usize, usize), String> {
    let (r, c) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected ROWSxCOLS, got {s:?}"))?;
    let parse = |v: &str| v.trim().parse::<usize>().ok().filter(|&n| n > 0);
    match (parse(r), parse(c)) {
        (Some(r), Some(c)) => Ok((r, c)),
        _ => Err(format!("expected two positive integers in {s:?}")),
    }
}

fn walk(dir: &Path, out: &mut Vec<PathBuf>, keep: &dyn Fn(&Path) -> bool) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .map(|e| e.map(|e| e.path()).map_err(io_err(dir)))
        .collect::<Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            walk(&p, out, keep)?;
        } else if keep(&p) {
            out.push(p);
        }
    }
    Ok(())
}

/// Directories under `root` (or `root` itself) holding a packed frame file,
/// in sorted order.
pub fn find_video_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    if !root.is_dir() {
        return Err(CliError::Input { path: root.into(), detail: "not a directory".into() });
    }
    let mut files = Vec::new();
    walk(root, &mut files, &|p| p.file_name().is_some_and(|n| n == FRAMES_FILE))?;
    Ok(files.into_iter().filter_map(|f| f.parent().map(Path::to_path_buf)).collect())
}

/// All `.stm` files under `root`, sorted.
pub fn find_map_files(root: &Path) -> Result<Vec<PathBuf>> {
    if !root.is_dir() {
        return Err(CliError::Input { path: root.into(), detail: "not a directory".into() });
    }
    let mut files = Vec::new();
    walk(root, &mut files, &|p| p.extension().is_some_and(|e| e == "stm"))?;
    Ok(files)
}

#[derive(Debug, Clone)]
pub struct MapVideo {
    pub subject_id: String,
    pub video_id: String,
    pub color_space: ColorSpace,
    /// Sorted by start frame.
    pub maps: Vec<SpatialTemporalMap>,
}

impl MapVideo {
    pub fn key(&self) -> String {
        format!("{}/{}", self.subject_id, self.video_id)
    }
}

/// Reads every map under `root` and groups them by video.
pub fn load_map_videos(root: &Path) -> Result<Vec<MapVideo>> {
    let files = find_map_files(root)?;
    if files.is_empty() {
        return Err(CliError::Input { path: root.into(), detail: "no .stm maps found".into() });
    }
    let loaded = files.par_iter().map(|p| Ok(read_stm(p)?)).collect::<Result<Vec<_>>>()?;
    let mut by_video: BTreeMap<(String, String), MapVideo> = BTreeMap::new();
    for (map, meta) in loaded {
        let entry = by_video.entry((meta.subject_id.clone(), meta.video_id.clone())).or_insert_with(|| MapVideo {
            subject_id: meta.subject_id.clone(),
            video_id: meta.video_id.clone(),
            color_space: meta.color_space,
            maps: Vec::new(),
        });
        entry.maps.push(map);
    }
    let mut videos: Vec<MapVideo> = by_video.into_values().collect();
    for v in &mut videos {
        v.maps.sort_by_key(|m| m.clip.start_frame);
    }
    Ok(videos)
}

/// Settings shared by commands that read raw video directories.
#[derive(Debug, Clone)]
pub struct RawOptions {
    pub window: usize,
    pub step_s: f64,
    pub grid: (usize, usize),
    pub schema: LandmarkSchema,
    pub landmark_window: usize,
    pub target_fps: Option<f64>,
}

/// One video reduced to raw RGB (or single-channel) block traces plus its
/// clip windows.
#[derive(Debug, Clone)]
pub struct RawVideo {
    pub subject_id: String,
    pub video_id: String,
    pub traces: BlockTraces,
    /// Per frame: whether landmarks and face geometry were usable.
    pub frame_valid: Vec<bool>,
    pub windows: Vec<ClipWindow>,
}

impl RawVideo {
    pub fn key(&self) -> String {
        format!("{}/{}", self.subject_id, self.video_id)
    }

    pub fn clip_has_valid_frame(&self, w: &ClipWindow) -> bool {
        self.frame_valid[w.range()].iter().any(|v| *v)
    }
}

fn follow_indices(track: &LandmarkTrack, idx: &[usize]) -> LandmarkTrack {
    LandmarkTrack {
        points: idx.iter().map(|&i| track.points[i].clone()).collect(),
        valid: idx.iter().map(|&i| track.valid[i]).collect(),
    }
}

fn load_sequence(dir: &Path, opts: &RawOptions) -> Result<(FrameSequence, LandmarkTrack, Option<GroundTruthTrace>)> {
    let seq = load_frame_sequence(dir)?;
    let track = load_landmarks(&dir.join(LANDMARKS_FILE), seq.len())?;
    let gt_path = dir.join(GROUND_TRUTH_FILE);
    let gt = if gt_path.exists() { Some(load_ground_truth(&gt_path)?) } else { None };
    let (seq, track) = match opts.target_fps {
        Some(fps) => {
            let idx = resample_indices(&seq.timestamps_ms, fps);
            (resample_sequence(&seq, fps)?, follow_indices(&track, &idx))
        }
        None => (seq, track),
    };
    let track = smooth_landmarks(&track, opts.landmark_window)?;
    Ok((seq, track, gt))
}

/// Loads, smooths and pools one video directory, then lays out its clip
/// windows (labelled when `gt.csv` is present).
pub fn load_raw_video(dir: &Path, opts: &RawOptions) -> Result<RawVideo> {
    let (seq, track, gt) = load_sequence(dir, opts)?;
    let means = sequence_block_means(&seq, &track, &opts.schema, opts.grid);
    let frame_valid: Vec<bool> = means.iter().map(Option::is_some).collect();
    let n = opts.grid.0 * opts.grid.1;
    let traces = BlockTraces::from_frame_means(&means, n, seq.channels(), seq.nominal_fps)?;
    let mut windows = slide_windows(seq.len(), seq.nominal_fps, opts.window, opts.step_s)?;
    if let Some(gt) = &gt {
        label_windows(&mut windows, &seq.timestamps_ms, gt);
    }
    Ok(RawVideo { subject_id: seq.subject_id, video_id: seq.video_id, traces, frame_valid, windows })
}

/// Wraps an error with the video it came from.
pub fn in_video(dir: &Path, context: &str) -> impl FnOnce(CliError) -> CliError {
    let name = |i: usize| {
        dir.iter().rev().nth(i).map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
    };
    let (subject, video, context) = (name(1), name(0), context.to_string());
    move |e| CliError::Video { subject, video, context, inner: Box::new(e) }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_strings() {
        assert_eq!(parse_grid("5x5"), Ok((5, 5)));
        assert_eq!(parse_grid("2X3"), Ok((2, 3)));
        assert!(parse_grid("0x5").is_err());
        assert!(parse_grid("5").is_err());
        assert!(parse_grid("axb").is_err());
    }

    #[test]
    fn walks_in_sorted_order() {
        let dir = tempfile::tempdir().unwrap();
        for p in ["b/v2", "a/v1", "b/v1"] {
            fs::create_dir_all(dir.path().join(p)).unwrap();
            fs::write(dir.path().join(p).join(FRAMES_FILE), b"").unwrap();
            fs::write(dir.path().join(p).join("clip_00000.stm"), b"").unwrap();
        }
        let found = find_video_dirs(dir.path()).unwrap();
        let rel: Vec<_> = found.iter().map(|p| p.strip_prefix(dir.path()).unwrap().to_path_buf()).collect();
        assert_eq!(rel, vec![PathBuf::from("a/v1"), PathBuf::from("b/v1"), PathBuf::from("b/v2")]);
        assert_eq!(find_map_files(dir.path()).unwrap().len(), 3);
        assert!(find_video_dirs(&dir.path().join("missing")).is_err());
    }
}

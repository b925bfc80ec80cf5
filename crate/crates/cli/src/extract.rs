//! `extract`: raw video directories to `.stm` maps.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use rhythmkit_core::stmap::{build_stmap, write_stm, MapMeta};
use rhythmkit_core::ColorSpace;

use crate::dataset::{find_video_dirs, in_video, load_raw_video, RawOptions};
use crate::error::{io_err, CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ExtractSummary {
    pub videos: usize,
    pub clips: usize,
    /// Windows without a single usable landmark frame.
    pub skipped: usize,
}

pub fn clip_file_name(index: usize) -> String {
    format!("clip_{index:05}.stm")
}

fn extract_video(dir: &Path, out_root: &Path, opts: &RawOptions, space: ColorSpace) -> Result<(usize, usize)> {
    let video = load_raw_video(dir, opts)?;
    let out_dir: PathBuf = out_root.join(&video.subject_id).join(&video.video_id);
    fs::create_dir_all(&out_dir).map_err(io_err(&out_dir))?;
    let meta = |clip_index| MapMeta {
        subject_id: video.subject_id.clone(),
        video_id: video.video_id.clone(),
        clip_index,
        color_space: space,
    };
    let mut written = 0;
    for (i, w) in video.windows.iter().enumerate() {
        if !video.clip_has_valid_frame(w) {
            continue;
        }
        let map = build_stmap(&video.traces.slice(w.range())?, space, *w)?;
        write_stm(&out_dir.join(clip_file_name(i)), &map, &meta(i))?;
        written += 1;
    }
    Ok((written, video.windows.len() - written))
}

/// Writes `out/<subject>/<video>/clip_NNNNN.stm` for every clip window of
/// every video under `root`.
pub fn run(root: &Path, out: &Path, opts: &RawOptions, space: ColorSpace) -> Result<ExtractSummary> {
    let dirs = find_video_dirs(root)?;
    if dirs.is_empty() {
        return Err(CliError::Input { path: root.into(), detail: "no video directories found".into() });
    }
    let counts = dirs
        .par_iter()
        .map(|d| extract_video(d, out, opts, space).map_err(in_video(d, "extract")))
        .collect::<Result<Vec<_>>>()?;
    Ok(ExtractSummary {
        videos: dirs.len(),
        clips: counts.iter().map(|c| c.0).sum(),
        skipped: counts.iter().map(|c| c.1).sum(),
    })
}

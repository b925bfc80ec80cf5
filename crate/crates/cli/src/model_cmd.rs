//! `train` and `infer`: the learned estimator over extracted maps.

use std::path::Path;

use rhythmkit_core::eval::make_folds;
use rhythmkit_nn::model::{BackboneConfig, BackboneVariant, ModelConfig, HeartRateNet};
use rhythmkit_nn::train::{train, EpochStats, TrainConfig, VideoClips};

use crate::dataset::{load_map_videos, MapVideo};
use crate::error::{CliError, Result};
use crate::report::{summarize, write_report, write_rows, ClipRow, VideoRow};

/// Predictions whose spread falls below this fraction of the label spread
/// are reported as a collapse to the mean.
const COLLAPSE_RATIO: f64 = 0.1;

/// Subject-exclusive split: `k` folds seeded by `seed`, fold `index` held out.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FoldSelect {
    pub k: usize,
    pub index: usize,
    pub seed: u64,
}

/// Keeps the training subjects (`test == false`) or the held-out fold.
pub fn select_fold(videos: Vec<MapVideo>, sel: Option<FoldSelect>, test: bool) -> Result<Vec<MapVideo>> {
    let Some(sel) = sel else { return Ok(videos) };
    if sel.index >= sel.k {
        return Err(CliError::Usage(format!("fold {} of {}", sel.index, sel.k)));
    }
    let subjects: Vec<&str> = videos.iter().map(|v| v.subject_id.as_str()).collect();
    let plan = make_folds(&subjects, sel.k, sel.seed)?;
    let held_out = plan.test_subjects(sel.index).to_vec();
    Ok(videos.into_iter().filter(|v| held_out.contains(&v.subject_id) == test).collect())
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub train: TrainConfig,
    pub variant: BackboneVariant,
    pub widths: Option<[usize; 4]>,
    pub use_gru: bool,
    pub gru_hidden: usize,
    pub fps_train: f64,
    pub folds: Option<FoldSelect>,
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub videos: usize,
    pub clips: usize,
    pub epochs: Vec<EpochStats>,
    /// Set when the final predictions barely vary across clips.
    pub collapsed: bool,
}

/// Clip labels rescaled to the training frame rate.
fn training_clips(videos: &[MapVideo], fps_train: f64) -> Result<Vec<VideoClips>> {
    videos
        .iter()
        .map(|v| {
            let maps = v
                .maps
                .iter()
                .map(|m| {
                    let mut m = m.clone();
                    let hr = m.clip.gt_hr_bpm.ok_or_else(|| CliError::Input {
                        path: v.key().into(),
                        detail: format!("clip at frame {} has no ground-truth label", m.clip.start_frame),
                    })?;
                    m.clip.gt_hr_bpm = Some(hr * fps_train / m.fps);
                    Ok(m)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(VideoClips { video_id: v.key(), maps })
        })
        .collect()
}

pub fn build_model(input: (usize, usize, usize), opts: &TrainOptions) -> Result<HeartRateNet<f32>> {
    let backbone = match opts.variant {
        BackboneVariant::Compact => BackboneConfig::compact(input),
        BackboneVariant::Resnet18 => BackboneConfig::resnet18(input),
    };
    let backbone = match opts.widths {
        Some(w) => backbone.with_widths(w),
        None => backbone,
    };
    let mut config = ModelConfig::new(backbone, opts.use_gru);
    config.gru_hidden = opts.gru_hidden;
    config.seq_len = opts.train.group_size;
    config.fps_train = opts.fps_train;
    Ok(HeartRateNet::new(config, opts.train.seed)?)
}

/// Trains on the maps under `maps_root` and writes the checkpoint to
/// `model_out`; `log` receives one CSV row per epoch.
pub fn run_train(
    maps_root: &Path,
    model_out: &Path,
    opts: &TrainOptions,
    log: Option<&Path>,
    mut progress: impl FnMut(&EpochStats),
) -> Result<TrainSummary> {
    opts.train.validate()?;
    if !(opts.fps_train.is_finite() && opts.fps_train > 0.0) {
        return Err(CliError::Usage(format!("fps-train must be positive, got {}", opts.fps_train)));
    }
    let videos = select_fold(load_map_videos(maps_root)?, opts.folds, false)?;
    let clips = training_clips(&videos, opts.fps_train)?;
    let first = clips.iter().flat_map(|v| v.maps.first()).next().ok_or_else(|| CliError::Input {
        path: maps_root.into(),
        detail: "no training clips after fold selection".into(),
    })?;
    let mut model = build_model(first.shape(), opts)?;
    let epochs = train(&mut model, &clips, &opts.train, |s, _| progress(s))?;
    model.save(model_out)?;
    if let Some(log) = log {
        write_rows(log, &epochs)?;
    }
    let collapsed = epochs.last().is_some_and(|s| s.pred_std < COLLAPSE_RATIO * model.target_std);
    Ok(TrainSummary { videos: clips.len(), clips: clips.iter().map(|v| v.maps.len()).sum(), epochs, collapsed })
}

/// Per-clip and per-video predictions for the maps under `maps_root`, in
/// bpm at each video's own frame rate.
pub fn run_infer(
    maps_root: &Path,
    model_path: &Path,
    out: &Path,
    folds: Option<FoldSelect>,
) -> Result<(Vec<ClipRow>, Vec<VideoRow>)> {
    let model = HeartRateNet::<f32>::load(model_path)?;
    let videos = select_fold(load_map_videos(maps_root)?, folds, true)?;
    if videos.is_empty() {
        return Err(CliError::Input { path: maps_root.into(), detail: "no videos after fold selection".into() });
    }
    let mut clips = Vec::new();
    let mut rows = Vec::with_capacity(videos.len());
    for v in &videos {
        if let Some(m) = v.maps.iter().find(|m| m.shape() != model.config.backbone.input) {
            return Err(CliError::Input {
                path: v.key().into(),
                detail: format!("map shape {:?}, model expects {:?}", m.shape(), model.config.backbone.input),
            });
        }
        let refs: Vec<_> = v.maps.iter().collect();
        let hrs = model.predict_clips(&refs)?;
        let video_clips: Vec<ClipRow> = v
            .maps
            .iter()
            .zip(hrs)
            .enumerate()
            .map(|(i, (m, hr))| ClipRow {
                subject_id: v.subject_id.clone(),
                video_id: v.video_id.clone(),
                clip_index: i,
                start_frame: m.clip.start_frame,
                length: m.clip.length,
                hr_bpm: Some(hr * m.fps / model.config.fps_train),
                snr_db: None,
                gt_hr_bpm: m.clip.gt_hr_bpm,
                error: None,
            })
            .collect();
        rows.extend(summarize(&video_clips));
        clips.extend(video_clips);
    }
    write_report(out, &clips, &rows)?;
    Ok((clips, rows))
}

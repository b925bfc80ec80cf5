//! Mini-batch training over groups of consecutive clips.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rhythmkit_core::stmap::{mask_augment, SpatialTemporalMap};
use serde::{Deserialize, Serialize};

use crate::loss::DEFAULT_LAMBDA;
use crate::model::{Group, HeartRateNet};
use crate::optim::{Adam, DEFAULT_LR};
use crate::tensor::{NnError, Result};

/// Lower bound on the label spread used for standardization.
const MIN_TARGET_STD: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub lambda: f64,
    /// Groups per optimizer step.
    pub batch_size: usize,
    /// Consecutive clips per smooth-loss group.
    pub group_size: usize,
    pub mask_prob: f64,
    pub mask_min: usize,
    pub mask_max: usize,
    pub seed: u64,
    pub lr_schedule: LrSchedule,
}

/// Learning rate as a function of the epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Half-cosine decay from the base rate towards zero over all epochs.
    Cosine,
}

impl LrSchedule {
    pub fn rate(self, base: f64, epoch: usize, epochs: usize) -> f64 {
        match self {
            LrSchedule::Constant => base,
            LrSchedule::Cosine => base * 0.5 * (1.0 + (std::f64::consts::PI * epoch as f64 / epochs.max(1) as f64).cos()),
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            lr: DEFAULT_LR,
            lambda: DEFAULT_LAMBDA,
            batch_size: 4,
            group_size: 6,
            mask_prob: 0.5,
            mask_min: 10,
            mask_max: 30,
            seed: 0,
            lr_schedule: LrSchedule::Constant,
        }
    }
}

impl TrainConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| NnError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| NnError::Io { path: path.to_path_buf(), source })?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(NnError::Config(m));
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if self.batch_size == 0 || self.group_size == 0 {
            return bad("batch size and group size must be positive".into());
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) || !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return bad(format!("lr {} and lambda {} must be finite and >= 0", self.lr, self.lambda));
        }
        if !(0.0..=1.0).contains(&self.mask_prob) {
            return bad(format!("mask probability {} outside [0, 1]", self.mask_prob));
        }
        if self.mask_prob > 0.0 && (self.mask_min == 0 || self.mask_min > self.mask_max) {
            return bad(format!("mask lengths {}..={}", self.mask_min, self.mask_max));
        }
        Ok(())
    }
}

/// Labelled clips of one video.
#[derive(Debug, Clone)]
pub struct VideoClips {
    pub video_id: String,
    pub maps: Vec<SpatialTemporalMap>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Group-mean losses in bpm.
    pub l1: f64,
    pub smooth: f64,
    pub total: f64,
    /// Standard deviation of the epoch's training predictions, bpm. Near
    /// zero means the model has collapsed to a constant output.
    pub pred_std: f64,
    pub lr: f64,
    pub steps: usize,
}

fn sample_std(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// `(video, clip)` indices of each group, clips in time order.
fn make_groups(videos: &[VideoClips], size: usize) -> Vec<Vec<(usize, usize)>> {
    let mut groups = Vec::new();
    for (v, video) in videos.iter().enumerate() {
        let mut order: Vec<usize> = (0..video.maps.len()).collect();
        order.sort_by_key(|&i| video.maps[i].clip.start_frame);
        groups.extend(order.chunks(size).map(|c| c.iter().map(|&i| (v, i)).collect()));
    }
    groups
}

fn label(map: &SpatialTemporalMap, video: &str) -> Result<f64> {
    match map.clip.gt_hr_bpm {
        Some(hr) if hr.is_finite() && hr > 0.0 => Ok(hr),
        _ => Err(NnError::Config(format!("clip at frame {} of {video} has no usable label", map.clip.start_frame))),
    }
}

/// Fits `model` in place. Labels are standardized with their mean and
/// sample standard deviation, stored on the model. Stops with an error
/// on a non-finite loss. `on_epoch` runs after every epoch.
pub fn train(
    model: &mut HeartRateNet<f32>,
    videos: &[VideoClips],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats, &HeartRateNet<f32>),
) -> Result<Vec<EpochStats>> {
    cfg.validate()?;
    let mut labels = Vec::new();
    for v in videos {
        for m in &v.maps {
            labels.push(label(m, &v.video_id)?);
            if m.shape() != model.config.backbone.input {
                return Err(NnError::Shape(format!(
                    "{}: map {:?}, model expects {:?}",
                    v.video_id,
                    m.shape(),
                    model.config.backbone.input
                )));
            }
        }
    }
    if labels.is_empty() {
        return Err(NnError::Empty("no training clips".into()));
    }
    if cfg.mask_prob > 0.0 && cfg.mask_max >= model.config.backbone.input.0 {
        return Err(NnError::Config(format!(
            "mask length {} must be shorter than the {}-frame window",
            cfg.mask_max, model.config.backbone.input.0
        )));
    }
    let n = labels.len() as f64;
    let mean = labels.iter().sum::<f64>() / n;
    model.target_mean = mean;
    model.target_std = sample_std(&labels).max(MIN_TARGET_STD);

    let groups = make_groups(videos, cfg.group_size);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(&model.params, cfg.lr);
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..groups.len()).collect();
        order.shuffle(&mut rng);
        adam.lr = cfg.lr_schedule.rate(cfg.lr, epoch, cfg.epochs);
        let (mut l1, mut smooth, mut total, mut steps) = (0.0, 0.0, 0.0, 0);
        let mut preds = Vec::with_capacity(labels.len());
        for batch in order.chunks(cfg.batch_size) {
            let mut items = Vec::with_capacity(batch.len());
            for &gi in batch {
                let mut inputs = Vec::with_capacity(groups[gi].len());
                let mut targets = Vec::with_capacity(groups[gi].len());
                for &(v, c) in &groups[gi] {
                    let map = &videos[v].maps[c];
                    let mask_seed: u64 = rng.random();
                    let x = if cfg.mask_prob > 0.0 {
                        model.input_tensor(&mask_augment(map, mask_seed, cfg.mask_min, cfg.mask_max, cfg.mask_prob)?)?
                    } else {
                        model.input_tensor(map)?
                    };
                    inputs.push(x);
                    targets.push(label(map, &videos[v].video_id)?);
                }
                items.push(Group { inputs, targets_bpm: targets });
            }
            let out = model.batch_step(&items, cfg.lambda)?;
            let loss = out.loss;
            if !loss.total.is_finite() || out.grads.tensors.iter().any(|t| !t.is_finite()) {
                return Err(NnError::NonFinite(format!("loss at epoch {epoch}, step {steps}")));
            }
            adam.update(&mut model.params, &out.grads)?;
            preds.extend(out.preds_bpm);
            let w = batch.len() as f64;
            l1 += loss.l1 * w;
            smooth += loss.smooth * w;
            total += loss.total * w;
            steps += 1;
        }
        let k = groups.len() as f64;
        let stats = EpochStats {
            epoch,
            l1: l1 / k,
            smooth: smooth / k,
            total: total / k,
            pred_std: sample_std(&preds),
            lr: adam.lr,
            steps,
        };
        on_epoch(&stats, model);
        log.push(stats);
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BackboneConfig, ModelConfig};
    use rhythmkit_core::stmap::ClipWindow;

    fn tiny(use_gru: bool) -> HeartRateNet<f32> {
        let mut cfg = ModelConfig::new(BackboneConfig::compact((32, 4, 3)).with_widths([4, 4, 8, 8]), use_gru);
        cfg.gru_hidden = 4;
        HeartRateNet::new(cfg, 1).unwrap()
    }

    /// Maps whose pixel level encodes the label, so a tiny net can fit it.
    fn videos() -> Vec<VideoClips> {
        (0..4)
            .map(|v| VideoClips {
                video_id: format!("v{v}"),
                maps: (0..5)
                    .map(|i| {
                        let hr = 60.0 + 10.0 * v as f64 + i as f64;
                        let level = (hr - 50.0) * 2.0;
                        let data = (0..32 * 12).map(|k| (level + (k % 7) as f64) as f32).collect();
                        let clip = ClipWindow { start_frame: i * 15, length: 32, step_frames: 15, gt_hr_bpm: Some(hr) };
                        SpatialTemporalMap::new(32, 4, 3, 30.0, data, clip).unwrap()
                    })
                    .collect(),
            })
            .collect()
    }

    fn quick() -> TrainConfig {
        TrainConfig { epochs: 30, lr: 0.01, lambda: 1.0, batch_size: 2, group_size: 3, mask_min: 4, mask_max: 8, ..Default::default() }
    }

    #[test]
    fn loss_decreases() {
        for gru in [false, true] {
            let mut net = tiny(gru);
            let log = train(&mut net, &videos(), &quick(), |_, _| {}).unwrap();
            let first = log[0].l1;
            let last = log.iter().rev().take(3).map(|s| s.l1).sum::<f64>() / 3.0;
            assert!(last < 0.7 * first, "gru={gru}: {first} -> {last}");
            assert_eq!(log.len(), 30);
        }
    }

    #[test]
    fn zero_lr_leaves_weights() {
        let mut net = tiny(true);
        let before = net.params.clone();
        let cfg = TrainConfig { epochs: 2, lr: 0.0, ..quick() };
        train(&mut net, &videos(), &cfg, |_, _| {}).unwrap();
        assert_eq!(net.params, before);
    }

    #[test]
    fn same_seed_same_weights_across_pools() {
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| {
                let mut net = tiny(true);
                let cfg = TrainConfig { epochs: 2, ..quick() };
                train(&mut net, &videos(), &cfg, |_, _| {}).unwrap();
                net.params
            })
        };
        assert_eq!(run(1), run(3));
    }

    #[test]
    fn cosine_schedule() {
        assert_eq!(LrSchedule::Cosine.rate(0.1, 0, 10), 0.1);
        assert!((LrSchedule::Cosine.rate(0.1, 5, 10) - 0.05).abs() < 1e-12);
        assert_eq!(LrSchedule::Constant.rate(0.1, 9, 10), 0.1);
        let cfg = TrainConfig::from_toml_str("lr_schedule = \"cosine\"").unwrap();
        assert_eq!(cfg.lr_schedule, LrSchedule::Cosine);
    }

    #[test]
    fn callback_sees_every_epoch() {
        let mut net = tiny(false);
        let mut seen = Vec::new();
        train(&mut net, &videos(), &TrainConfig { epochs: 3, ..quick() }, |s, _| seen.push(s.epoch)).unwrap();
        assert_eq!(seen, vec![0, 1, 2]);
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut net = tiny(false);
        let mut unlabeled = videos();
        unlabeled[0].maps[0].clip.gt_hr_bpm = None;
        assert!(train(&mut net, &unlabeled, &quick(), |_, _| {}).is_err());
        assert!(train(&mut net, &[], &quick(), |_, _| {}).is_err());
        let long_mask = TrainConfig { mask_max: 40, ..quick() };
        assert!(train(&mut net, &videos(), &long_mask, |_, _| {}).is_err());
        assert!(TrainConfig::from_toml_str("epochs = 3\nbatch_size = 0").is_err());
        assert!(TrainConfig::from_toml_str("epochs = 0").is_err());
        assert!(TrainConfig::from_toml_str("epoch = 3").is_err());
        assert_eq!(TrainConfig::from_toml_str("epochs = 3").unwrap().epochs, 3);
    }
}

//! Residual CNN over spatial-temporal maps with an optional GRU head.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rhythmkit_core::rppg::HrEstimate;
use rhythmkit_core::stmap::SpatialTemporalMap;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{read_checkpoint, write_checkpoint};
use crate::gru::GruCell;
use crate::layers::{
    global_avg_pool, global_avg_pool_backward, relu, relu_backward, AvgPool2d, Conv2d, ConvCache, Dense,
};
use crate::loss::{total_loss, LossBreakdown};
use crate::tensor::{NnError, Params, Result, Scalar, Tensor};

pub const DEFAULT_GRU_HIDDEN: usize = 64;
pub const DEFAULT_SEQ_LEN: usize = 6;
pub const DEFAULT_FPS_TRAIN: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackboneVariant {
    /// Stem plus one residual block per stage.
    Compact,
    /// Stem, pooling and two residual blocks per stage.
    Resnet18,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub variant: BackboneVariant,
    pub widths: [usize; 4],
    /// Map shape `(T, n, c)`.
    pub input: (usize, usize, usize),
    pub feature_dim: usize,
}

impl BackboneConfig {
    pub fn compact(input: (usize, usize, usize)) -> Self {
        Self { variant: BackboneVariant::Compact, widths: [16, 32, 64, 128], input, feature_dim: 128 }
    }

    pub fn resnet18(input: (usize, usize, usize)) -> Self {
        Self { variant: BackboneVariant::Resnet18, widths: [64, 128, 256, 512], input, feature_dim: 512 }
    }

    pub fn with_widths(mut self, widths: [usize; 4]) -> Self {
        self.widths = widths;
        self.feature_dim = widths[3];
        self
    }

    pub fn validate(&self) -> Result<()> {
        let (t, n, c) = self.input;
        if t == 0 || n == 0 || c == 0 || self.widths.contains(&0) {
            return Err(NnError::Shape(format!("invalid backbone {:?} / {:?}", self.input, self.widths)));
        }
        if self.feature_dim != self.widths[3] {
            return Err(NnError::Shape(format!("feature dim {} != last width {}", self.feature_dim, self.widths[3])));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub use_gru: bool,
    pub gru_hidden: usize,
    /// Clips per GRU sequence at inference.
    pub seq_len: usize,
    pub fps_train: f64,
}

impl ModelConfig {
    pub fn new(backbone: BackboneConfig, use_gru: bool) -> Self {
        Self { backbone, use_gru, gru_hidden: DEFAULT_GRU_HIDDEN, seq_len: DEFAULT_SEQ_LEN, fps_train: DEFAULT_FPS_TRAIN }
    }
}

/// Stored alongside the weights in a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub config: ModelConfig,
    pub target_mean: f64,
    pub target_std: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
struct ResBlock {
    conv1: Conv2d,
    conv2: Conv2d,
    shortcut: Option<Conv2d>,
}

#[derive(Debug)]
struct BlockCache<T> {
    c1: ConvCache<T>,
    r1: Tensor<T>,
    c2: ConvCache<T>,
    sc: Option<ConvCache<T>>,
    out: Tensor<T>,
}

impl ResBlock {
    fn new<T: Scalar>(p: &mut Params<T>, name: &str, cin: usize, cout: usize, stride: usize, rng: &mut ChaCha8Rng) -> Self {
        let s = (stride, stride);
        let conv1 = Conv2d::new(p, &format!("{name}.conv1"), cin, cout, (3, 3), s, (1, 1), rng);
        let conv2 = Conv2d::new(p, &format!("{name}.conv2"), cout, cout, (3, 3), (1, 1), (1, 1), rng);
        let shortcut = (cin != cout || stride != 1)
            .then(|| Conv2d::new(p, &format!("{name}.shortcut"), cin, cout, (1, 1), s, (0, 0), rng));
        Self { conv1, conv2, shortcut }
    }

    fn forward<T: Scalar>(&self, p: &Params<T>, x: &Tensor<T>) -> Result<(Tensor<T>, BlockCache<T>)> {
        let (a1, c1) = self.conv1.forward(p, x)?;
        let r1 = relu(&a1);
        let (mut a2, c2) = self.conv2.forward(p, &r1)?;
        let sc = match &self.shortcut {
            Some(conv) => {
                let (s, cache) = conv.forward(p, x)?;
                a2.data.iter_mut().zip(&s.data).for_each(|(a, b)| *a = *a + *b);
                Some(cache)
            }
            None => {
                a2.data.iter_mut().zip(&x.data).for_each(|(a, b)| *a = *a + *b);
                None
            }
        };
        let out = relu(&a2);
        Ok((out.clone(), BlockCache { c1, r1, c2, sc, out }))
    }

    fn backward<T: Scalar>(&self, p: &Params<T>, c: &BlockCache<T>, dy: &Tensor<T>, g: &mut Params<T>) -> Tensor<T> {
        let d = relu_backward(&c.out, dy);
        let dr1 = self.conv2.backward(p, &c.c2, &d, g, true).expect("dx requested");
        let da1 = relu_backward(&c.r1, &dr1);
        let mut dx = self.conv1.backward(p, &c.c1, &da1, g, true).expect("dx requested");
        let skip = match (&self.shortcut, &c.sc) {
            (Some(conv), Some(cache)) => conv.backward(p, cache, &d, g, true).expect("dx requested"),
            _ => d,
        };
        dx.data.iter_mut().zip(&skip.data).for_each(|(a, b)| *a = *a + *b);
        dx
    }
}

#[derive(Debug, Clone)]
struct Backbone {
    stem: Conv2d,
    pool: Option<AvgPool2d>,
    blocks: Vec<ResBlock>,
}

pub struct BackboneCache<T> {
    stem: ConvCache<T>,
    stem_out: Tensor<T>,
    blocks: Vec<BlockCache<T>>,
    last_shape: Vec<usize>,
}

impl Backbone {
    fn new<T: Scalar>(cfg: &BackboneConfig, p: &mut Params<T>, rng: &mut ChaCha8Rng) -> Self {
        let (_, n, c) = cfg.input;
        let w = cfg.widths;
        match cfg.variant {
            BackboneVariant::Compact => {
                let stem = Conv2d::new(p, "stem", c, w[0], (5, 3), (2, 1), (2, 1), rng);
                let blocks = (0..4)
                    .map(|i| {
                        let cin = if i == 0 { w[0] } else { w[i - 1] };
                        ResBlock::new(p, &format!("stage{}", i + 1), cin, w[i], if i == 0 { 1 } else { 2 }, rng)
                    })
                    .collect();
                Self { stem, pool: None, blocks }
            }
            BackboneVariant::Resnet18 => {
                let stem = Conv2d::new(p, "stem", c, w[0], (7, 7), (2, 2), (3, 3), rng);
                let pw = if n.div_ceil(2) >= 2 { 2 } else { 1 };
                let pool = AvgPool2d { kernel: (2, pw), stride: (2, pw) };
                let mut blocks = Vec::new();
                for i in 0..4 {
                    for j in 0..2 {
                        let cin = if j == 1 { w[i] } else if i == 0 { w[0] } else { w[i - 1] };
                        let stride = if j == 0 && i > 0 { 2 } else { 1 };
                        blocks.push(ResBlock::new(p, &format!("stage{}.{}", i + 1, j + 1), cin, w[i], stride, rng));
                    }
                }
                Self { stem, pool: Some(pool), blocks }
            }
        }
    }

    fn forward<T: Scalar>(&self, p: &Params<T>, x: &Tensor<T>) -> Result<(Vec<T>, BackboneCache<T>)> {
        let (a, stem) = self.stem.forward(p, x)?;
        let stem_out = relu(&a);
        let mut h = match &self.pool {
            Some(pool) => pool.forward(&stem_out)?,
            None => stem_out.clone(),
        };
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (next, cache) = b.forward(p, &h)?;
            blocks.push(cache);
            h = next;
        }
        let feat = global_avg_pool(&h)?;
        Ok((feat.data, BackboneCache { stem, stem_out, blocks, last_shape: h.shape }))
    }

    fn backward<T: Scalar>(&self, p: &Params<T>, c: &BackboneCache<T>, dfeat: &[T], g: &mut Params<T>) {
        let mut d = global_avg_pool_backward(&c.last_shape, dfeat);
        for (b, cache) in self.blocks.iter().zip(&c.blocks).rev() {
            d = b.backward(p, cache, &d, g);
        }
        if let Some(pool) = &self.pool {
            d = pool.backward(&c.stem_out.shape, &d);
        }
        let da = relu_backward(&c.stem_out, &d);
        self.stem.backward(p, &c.stem, &da, g, false);
    }
}

/// Result of [`HeartRateNet::batch_step`].
pub struct StepOutput<T> {
    /// Losses in bpm.
    pub loss: LossBreakdown,
    pub grads: Params<T>,
    /// Training-mode predictions in batch order, bpm.
    pub preds_bpm: Vec<f64>,
}

/// One smooth-loss unit: consecutive clips of a video with bpm labels.
pub struct Group<T> {
    pub inputs: Vec<Tensor<T>>,
    pub targets_bpm: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct HeartRateNet<T> {
    pub config: ModelConfig,
    pub params: Params<T>,
    pub target_mean: f64,
    pub target_std: f64,
    pub seed: u64,
    backbone: Backbone,
    clip_fc: Dense,
    gru: Option<(GruCell, Dense)>,
}

impl<T: Scalar> HeartRateNet<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.backbone.validate()?;
        if config.use_gru && (config.gru_hidden == 0 || config.seq_len == 0) {
            return Err(NnError::Shape("gru hidden size and sequence length must be positive".into()));
        }
        if !(config.fps_train.is_finite() && config.fps_train > 0.0) {
            return Err(NnError::Shape(format!("invalid training fps {}", config.fps_train)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Params::new();
        let backbone = Backbone::new(&config.backbone, &mut params, &mut rng);
        let f = config.backbone.feature_dim;
        let clip_fc = Dense::new(&mut params, "clip_fc", f, 1, &mut rng);
        let gru = config.use_gru.then(|| {
            let cell = GruCell::new(&mut params, "gru", f, config.gru_hidden, &mut rng);
            let fc = Dense::new(&mut params, "gru_fc", config.gru_hidden, 1, &mut rng);
            (cell, fc)
        });
        let net = Self { config, params, target_mean: 0.0, target_std: 1.0, seed, backbone, clip_fc, gru };
        net.backbone_output_check()?;
        Ok(net)
    }

    fn backbone_output_check(&self) -> Result<()> {
        let (t, n, c) = self.config.backbone.input;
        let mut hw = (t, n);
        hw = self.backbone.stem.output_hw(hw.0, hw.1)?;
        if let Some(pool) = &self.backbone.pool {
            hw = pool.output_hw(hw.0, hw.1)?;
        }
        for b in &self.backbone.blocks {
            hw = b.conv1.output_hw(hw.0, hw.1)?;
        }
        let _ = c;
        Ok(())
    }

    pub fn meta(&self) -> ModelMeta {
        ModelMeta {
            config: self.config.clone(),
            target_mean: self.target_mean,
            target_std: self.target_std,
            seed: self.seed,
        }
    }

    /// Same architecture and weights in another precision.
    pub fn cast<U: Scalar>(&self) -> HeartRateNet<U> {
        HeartRateNet {
            config: self.config.clone(),
            params: self.params.cast(),
            target_mean: self.target_mean,
            target_std: self.target_std,
            seed: self.seed,
            backbone: self.backbone.clone(),
            clip_fc: self.clip_fc,
            gru: self.gru,
        }
    }

    /// Map values scaled to [0, 1], laid out `[c, T, n]`.
    pub fn input_tensor(&self, map: &SpatialTemporalMap) -> Result<Tensor<T>> {
        let (t, n, c) = self.config.backbone.input;
        if map.shape() != (t, n, c) {
            return Err(NnError::Shape(format!("map {:?}, model expects {:?}", map.shape(), (t, n, c))));
        }
        let mut data = vec![T::zero(); t * n * c];
        let scale = 1.0 / 255.0;
        for (i, v) in map.data.iter().enumerate() {
            let (ti, rest) = (i / (n * c), i % (n * c));
            let (b, ch) = (rest / c, rest % c);
            data[(ch * t + ti) * n + b] = T::of(*v as f64 * scale);
        }
        Ok(Tensor { shape: vec![c, t, n], data })
    }

    /// Pooled backbone output.
    pub fn features(&self, x: &Tensor<T>) -> Result<(Vec<T>, BackboneCache<T>)> {
        self.backbone.forward(&self.params, x)
    }

    fn to_bpm(&self, y: T) -> f64 {
        self.target_mean + self.target_std * y.as_f64()
    }

    /// Backbone features and the per-clip regression in bpm at the
    /// training frame rate.
    pub fn forward_clip(&self, map: &SpatialTemporalMap) -> Result<(Vec<T>, f64)> {
        let (feat, _) = self.features(&self.input_tensor(map)?)?;
        let y = self.clip_fc.forward(&self.params, &feat)?[0];
        Ok((feat, self.to_bpm(y)))
    }

    /// Per-clip bpm after temporal modelling over `features` in order.
    /// Models without a GRU fall back to the per-clip regression.
    pub fn gru_head(&self, features: &[Vec<T>]) -> Result<Vec<f64>> {
        if features.is_empty() {
            return Err(NnError::Empty("gru head input".into()));
        }
        match &self.gru {
            Some((cell, fc)) => {
                let (hs, _) = cell.forward_seq(&self.params, features)?;
                hs.iter().map(|h| Ok(self.to_bpm(fc.forward(&self.params, h)?[0]))).collect()
            }
            None => features.iter().map(|f| Ok(self.to_bpm(self.clip_fc.forward(&self.params, f)?[0]))).collect(),
        }
    }

    /// Per-clip bpm at the training frame rate for maps in the given order;
    /// GRU models run over consecutive chunks of `seq_len` clips.
    pub fn predict_clips(&self, maps: &[&SpatialTemporalMap]) -> Result<Vec<f64>> {
        let feats = maps
            .par_iter()
            .map(|m| Ok(self.features(&self.input_tensor(m)?)?.0))
            .collect::<Result<Vec<_>>>()?;
        let chunk = if self.gru.is_some() { self.config.seq_len } else { 1 };
        let mut out = Vec::with_capacity(maps.len());
        for c in feats.chunks(chunk) {
            out.extend(self.gru_head(c)?);
        }
        Ok(out)
    }

    /// Mean clip HR of one video, scaled by `fps_actual / fps_train`.
    pub fn predict_video(&self, maps: &[SpatialTemporalMap], fps_actual: f64) -> Result<HrEstimate> {
        if maps.is_empty() {
            return Err(NnError::Empty("no clips: sequence shorter than one window".into()));
        }
        let mut ordered: Vec<&SpatialTemporalMap> = maps.iter().collect();
        ordered.sort_by_key(|m| m.clip.start_frame);
        let clips = self.predict_clips(&ordered)?;
        let ratio = fps_actual / self.config.fps_train;
        let hr = clips.iter().sum::<f64>() / clips.len() as f64 * ratio;
        Ok(HrEstimate { hr_bpm: hr, snr_db: None, clip: None })
    }

    /// Loss, standardized predictions and feature gradients for one group.
    /// Head parameter gradients accumulate into `g`.
    fn head_step(
        &self,
        feats: &[Vec<T>],
        targets: &[f64],
        lambda: f64,
        g: &mut Params<T>,
    ) -> Result<(LossBreakdown, Vec<f64>, Vec<Vec<T>>)> {
        let z: Vec<f64> = targets.iter().map(|t| (t - self.target_mean) / self.target_std).collect();
        let p = &self.params;
        match &self.gru {
            Some((cell, fc)) => {
                let (hs, caches) = cell.forward_seq(p, feats)?;
                let y = hs.iter().map(|h| Ok(fc.forward(p, h)?[0].as_f64())).collect::<Result<Vec<f64>>>()?;
                let (loss, dy) = total_loss(&y, &z, lambda)?;
                let dhs: Vec<Vec<T>> = hs.iter().zip(&dy).map(|(h, d)| fc.backward(p, h, &[T::of(*d)], g)).collect();
                Ok((loss, y, cell.backward_seq(p, &caches, &dhs, g)))
            }
            None => {
                let y = feats.iter().map(|f| Ok(self.clip_fc.forward(p, f)?[0].as_f64())).collect::<Result<Vec<f64>>>()?;
                let (loss, dy) = total_loss(&y, &z, 0.0)?;
                let dfeats = feats.iter().zip(&dy).map(|(f, d)| self.clip_fc.backward(p, f, &[T::of(*d)], g)).collect();
                Ok((loss, y, dfeats))
            }
        }
    }

    /// Mean group loss and its gradient over a batch. Per-clip work runs in
    /// parallel; gradients are summed in clip order, so the result does not
    /// depend on the thread count. Models without a GRU use the L1 term
    /// only.
    pub fn batch_step(&self, groups: &[Group<T>], lambda: f64) -> Result<StepOutput<T>> {
        if groups.is_empty() || groups.iter().any(|g| g.inputs.is_empty() || g.inputs.len() != g.targets_bpm.len()) {
            return Err(NnError::Empty("batch with an empty or mislabeled group".into()));
        }
        let inputs: Vec<&Tensor<T>> = groups.iter().flat_map(|g| g.inputs.iter()).collect();
        let forward = inputs.par_iter().map(|x| self.features(x)).collect::<Result<Vec<_>>>()?;
        let feats: Vec<Vec<T>> = forward.iter().map(|f| f.0.clone()).collect();

        let mut grads = self.params.zeros_like();
        let mut dfeats: Vec<Vec<T>> = Vec::with_capacity(inputs.len());
        let mut preds_bpm = Vec::with_capacity(inputs.len());
        let (mut l1, mut smooth) = (0.0, 0.0);
        let mut offset = 0;
        for g in groups {
            let (loss, y, d) = self.head_step(&feats[offset..offset + g.inputs.len()], &g.targets_bpm, lambda, &mut grads)?;
            preds_bpm.extend(y.into_iter().map(|v| self.target_mean + self.target_std * v));
            l1 += loss.l1;
            smooth += loss.smooth;
            dfeats.extend(d);
            offset += g.inputs.len();
        }

        let per_clip: Vec<Params<T>> = forward
            .par_iter()
            .zip(dfeats.par_iter())
            .map(|((_, cache), d)| {
                let mut g = self.params.zeros_like();
                self.backbone.backward(&self.params, cache, d, &mut g);
                g
            })
            .collect();
        for g in &per_clip {
            grads.add_assign(g);
        }
        let k = groups.len() as f64;
        grads.scale(T::of(1.0 / k));
        let lambda_used = if self.gru.is_some() { lambda } else { 0.0 };
        let (l1, smooth) = (l1 / k * self.target_std, smooth / k * self.target_std);
        let loss = LossBreakdown { l1, smooth, total: l1 + lambda_used * smooth, lambda: lambda_used };
        Ok(StepOutput { loss, grads, preds_bpm })
    }

    /// Replaces the weights with those in `params`, which must match by
    /// name and shape.
    pub fn load_params(&mut self, params: &Params<f32>) -> Result<()> {
        if params.names != self.params.names {
            let missing = self.params.names.iter().find(|n| !params.names.contains(n));
            return Err(NnError::UnknownParam(missing.cloned().unwrap_or_else(|| "parameter order".into())));
        }
        for (dst, src) in self.params.tensors.iter_mut().zip(&params.tensors) {
            if dst.shape != src.shape {
                return Err(NnError::Shape(format!("checkpoint tensor {:?} vs model {:?}", src.shape, dst.shape)));
            }
            *dst = src.cast();
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = serde_json::to_string(&self.meta()).map_err(|e| NnError::Checkpoint(e.to_string()))?;
        write_checkpoint(path, &self.params.cast(), &meta)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (params, meta) = read_checkpoint(path)?;
        let meta: ModelMeta = serde_json::from_str(&meta).map_err(|e| NnError::Checkpoint(format!("metadata: {e}")))?;
        let mut net = Self::new(meta.config, meta.seed)?;
        net.load_params(&params)?;
        net.target_mean = meta.target_mean;
        net.target_std = meta.target_std;
        Ok(net)
    }
}

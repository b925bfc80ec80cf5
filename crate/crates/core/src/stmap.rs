//! Spatial-temporal maps: per-block pooled color traces, color transform,
//! per-row min-max normalization, clip windowing and time masking.
//!
//! A map for a clip of `T` frames over `n` blocks with `c` channels is stored
//! in `(t, block, channel)` order, so the flattened row index `block * c + ch`
//! gives the `Y1, U1, V1, Y2, ...` row layout.

use std::fmt;
use std::fs;
use std::io::Write;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::face::{self, AlignedFace, FaceError, LandmarkSchema, Region, SkinMask};
use crate::ingest::{FrameSequence, GroundTruthTrace, LandmarkTrack};

pub const MAP_MAGIC: &[u8; 4] = b"RKM1";

pub const DEFAULT_WINDOW_FRAMES: usize = 300;
pub const DEFAULT_STEP_SECONDS: f64 = 0.5;
pub const DEFAULT_GRID: (usize, usize) = (5, 5);
pub const DEFAULT_MASK_MIN: usize = 10;
pub const DEFAULT_MASK_MAX: usize = 30;
pub const DEFAULT_MASK_PROB: f64 = 0.5;

/// Below this skin fraction of a block, pooling falls back to all pixels.
pub const MIN_SKIN_FRACTION: f64 = 0.05;

#[derive(Debug, Error)]
pub enum StmapError {
    #[error("empty region")]
    EmptyRegion,
    #[error("no valid pixels in region")]
    NoValidPixels,
    #[error("window of {window} frames exceeds sequence of {len}")]
    WindowTooLong { window: usize, len: usize },
    #[error("invalid window parameters: {0}")]
    InvalidWindow(String),
    #[error("all frames in clip are invalid")]
    AllFramesInvalid,
    #[error("mask length {max_len} must be shorter than the map ({t} frames)")]
    MaskTooLong { max_len: usize, t: usize },
    #[error("invalid mask parameters: {0}")]
    InvalidMask(String),
    #[error("unknown color space {0:?}")]
    UnknownColorSpace(String),
    #[error("{channels}-channel traces cannot be converted to {space}")]
    ColorSpaceChannels { channels: usize, space: ColorSpace },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Face(#[from] FaceError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {detail}")]
    Format { path: PathBuf, detail: String },
}

pub type Result<T> = std::result::Result<T, StmapError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorSpace {
    Rgb,
    #[default]
    Yuv,
    Ycrcb,
}

impl fmt::Display for ColorSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ColorSpace::Rgb => "rgb",
            ColorSpace::Yuv => "yuv",
            ColorSpace::Ycrcb => "ycrcb",
        })
    }
}

impl FromStr for ColorSpace {
    type Err = StmapError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rgb" => Ok(Self::Rgb),
            "yuv" => Ok(Self::Yuv),
            "ycrcb" => Ok(Self::Ycrcb),
            _ => Err(StmapError::UnknownColorSpace(s.to_string())),
        }
    }
}

/// RGB to YUV with the BT.601-style matrix and +128 chroma offsets.
#[inline]
pub fn rgb_to_yuv(rgb: [f64; 3]) -> [f64; 3] {
    let [r, g, b] = rgb;
    [
        0.299 * r + 0.587 * g + 0.114 * b,
        -0.169 * r - 0.331 * g + 0.5 * b + 128.0,
        0.5 * r - 0.419 * g - 0.081 * b + 128.0,
    ]
}

#[inline]
pub fn rgb_to_ycrcb(rgb: [f64; 3]) -> [f64; 3] {
    let [r, g, b] = rgb;
    let y = 0.299 * r + 0.587 * g + 0.114 * b;
    [y, (r - y) * 0.713 + 128.0, (b - y) * 0.564 + 128.0]
}

impl ColorSpace {
    fn convert(self, rgb: [f64; 3]) -> [f64; 3] {
        match self {
            ColorSpace::Rgb => rgb,
            ColorSpace::Yuv => rgb_to_yuv(rgb),
            ColorSpace::Ycrcb => rgb_to_ycrcb(rgb),
        }
    }
}

/// Per-channel mean over the masked pixels of a region. Falls back to the
/// mean over all in-frame pixels when the mask covers under 5% of the region.
pub fn block_mean(face: &AlignedFace, region: &Region, mask: &SkinMask) -> Result<Vec<f64>> {
    if region.area() == 0 {
        return Err(StmapError::EmptyRegion);
    }
    if region.x + region.width > face.width || region.y + region.height > face.height {
        return Err(StmapError::Shape("region outside face crop".into()));
    }
    let c = face.channels;
    let mut masked = vec![0.0; c];
    let mut all = vec![0.0; c];
    let (mut n_masked, mut n_valid) = (0usize, 0usize);
    for y in region.y..region.y + region.height {
        for x in region.x..region.x + region.width {
            let i = y * face.width + x;
            if !face.valid[i] {
                continue;
            }
            let p = &face.data[i * c..i * c + c];
            n_valid += 1;
            for k in 0..c {
                all[k] += p[k] as f64;
            }
            if mask.data[i] {
                n_masked += 1;
                for k in 0..c {
                    masked[k] += p[k] as f64;
                }
            }
        }
    }
    let (sum, count) = if n_masked as f64 >= MIN_SKIN_FRACTION * region.area() as f64 && n_masked > 0 {
        (masked, n_masked)
    } else {
        (all, n_valid)
    };
    if count == 0 {
        return Err(StmapError::NoValidPixels);
    }
    let inv = 1.0 / count as f64;
    Ok(sum.into_iter().map(|s| s * inv).collect())
}

/// Block means for one frame, `n * c` values in (block, channel) order.
pub fn frame_block_means(
    frame: &crate::ingest::Frame,
    landmarks: &[crate::ingest::Point],
    schema: &LandmarkSchema,
    grid: (usize, usize),
) -> Result<Vec<f64>> {
    let fbox = face::face_box(landmarks, schema)?;
    let aligned = face::align_face(frame, &fbox)?;
    let mask = face::skin_mask(&aligned);
    let roi = face::grid_blocks(aligned.width, aligned.height, grid.0, grid.1)?;
    let mut out = Vec::with_capacity(roi.n_blocks() * frame.channels);
    for region in &roi.regions {
        out.extend(block_mean(&aligned, region, &mask)?);
    }
    Ok(out)
}

/// Block means for every frame of a sequence; `None` marks frames without
/// usable landmarks or face geometry.
pub fn sequence_block_means(
    seq: &FrameSequence,
    track: &LandmarkTrack,
    schema: &LandmarkSchema,
    grid: (usize, usize),
) -> Vec<Option<Vec<f64>>> {
    seq.frames
        .iter()
        .enumerate()
        .map(|(i, frame)| {
            let pts = track.get(i)?;
            frame_block_means(frame, pts, schema, grid).ok()
        })
        .collect()
}

/// Raw (unnormalized) block color traces of a clip in the source color
/// space, `(t, block, channel)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockTraces {
    pub t: usize,
    pub n: usize,
    pub c: usize,
    pub fps: f64,
    pub data: Vec<f64>,
}

impl BlockTraces {
    pub fn new(t: usize, n: usize, c: usize, fps: f64, data: Vec<f64>) -> Result<Self> {
        if data.len() != t * n * c || t == 0 || n == 0 || c == 0 {
            return Err(StmapError::Shape(format!("{} values for {t}x{n}x{c}", data.len())));
        }
        Ok(Self { t, n, c, fps, data })
    }

    /// Stacks per-frame block means, filling `None` frames by linear
    /// interpolation between valid neighbours (held constant at the ends).
    pub fn from_frame_means(frames: &[Option<Vec<f64>>], n: usize, c: usize, fps: f64) -> Result<Self> {
        let width = n * c;
        let valid: Vec<usize> = frames.iter().enumerate().filter(|(_, f)| f.is_some()).map(|(i, _)| i).collect();
        if valid.is_empty() {
            return Err(StmapError::AllFramesInvalid);
        }
        let t = frames.len();
        let mut data = vec![0.0; t * width];
        for (i, f) in frames.iter().enumerate() {
            let row = &mut data[i * width..(i + 1) * width];
            if let Some(v) = f {
                if v.len() != width {
                    return Err(StmapError::Shape(format!("frame {i} has {} values, expected {width}", v.len())));
                }
                row.copy_from_slice(v);
                continue;
            }
            let next = valid.partition_point(|&j| j < i);
            let (a, b) = match (next.checked_sub(1).map(|k| valid[k]), valid.get(next).copied()) {
                (Some(a), Some(b)) => (a, b),
                (Some(a), None) => (a, a),
                (None, Some(b)) => (b, b),
                (None, None) => unreachable!(),
            };
            let va = frames[a].as_ref().unwrap();
            let vb = frames[b].as_ref().unwrap();
            let w = if a == b { 0.0 } else { (i - a) as f64 / (b - a) as f64 };
            for k in 0..width {
                row[k] = va[k] * (1.0 - w) + vb[k] * w;
            }
        }
        Self::new(t, n, c, fps, data)
    }

    #[inline]
    pub fn at(&self, t: usize, block: usize, ch: usize) -> f64 {
        self.data[(t * self.n + block) * self.c + ch]
    }

    /// One temporal row.
    pub fn row(&self, block: usize, ch: usize) -> Vec<f64> {
        (0..self.t).map(|t| self.at(t, block, ch)).collect()
    }

    /// Mean over blocks of channel `ch`.
    pub fn block_average(&self, ch: usize) -> Vec<f64> {
        let inv = 1.0 / self.n as f64;
        (0..self.t).map(|t| (0..self.n).map(|b| self.at(t, b, ch)).sum::<f64>() * inv).collect()
    }

    /// Frames `range` of these traces.
    pub fn slice(&self, range: Range<usize>) -> Result<Self> {
        if range.end > self.t || range.is_empty() {
            return Err(StmapError::WindowTooLong { window: range.len(), len: self.t });
        }
        let w = self.n * self.c;
        Self::new(range.len(), self.n, self.c, self.fps, self.data[range.start * w..range.end * w].to_vec())
    }

    /// Converts to another color space. Single-channel traces pass through.
    pub fn to_color_space(&self, space: ColorSpace) -> Result<Self> {
        if self.c == 1 || space == ColorSpace::Rgb {
            return Ok(self.clone());
        }
        if self.c != 3 {
            return Err(StmapError::ColorSpaceChannels { channels: self.c, space });
        }
        let data = self
            .data
            .chunks_exact(3)
            .flat_map(|p| space.convert([p[0], p[1], p[2]]))
            .collect();
        Self::new(self.t, self.n, self.c, self.fps, data)
    }
}

/// Frame span of one estimation clip.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClipWindow {
    pub start_frame: usize,
    pub length: usize,
    pub step_frames: usize,
    pub gt_hr_bpm: Option<f64>,
}

impl ClipWindow {
    pub fn range(&self) -> Range<usize> {
        self.start_frame..self.start_frame + self.length
    }
}

/// Windows of `win_frames` starting every `round(step_seconds * fps)` frames
/// while fully inside the sequence.
pub fn slide_windows(seq_len: usize, fps: f64, win_frames: usize, step_seconds: f64) -> Result<Vec<ClipWindow>> {
    if win_frames == 0 {
        return Err(StmapError::InvalidWindow("window must be at least one frame".into()));
    }
    if win_frames > seq_len {
        return Err(StmapError::WindowTooLong { window: win_frames, len: seq_len });
    }
    let step = (step_seconds * fps).round();
    if !(step.is_finite() && step >= 1.0) {
        return Err(StmapError::InvalidWindow(format!("step of {step_seconds} s at {fps} fps is under one frame")));
    }
    let step = step as usize;
    let count = (seq_len - win_frames) / step + 1;
    Ok((0..count)
        .map(|k| ClipWindow { start_frame: k * step, length: win_frames, step_frames: step, gt_hr_bpm: None })
        .collect())
}

/// Labels each window with the mean ground-truth HR over its time span.
pub fn label_windows(windows: &mut [ClipWindow], timestamps_ms: &[u64], gt: &GroundTruthTrace) {
    for w in windows {
        let start = timestamps_ms[w.start_frame] as f64;
        let end = timestamps_ms[w.start_frame + w.length - 1] as f64;
        w.gt_hr_bpm = gt.mean_hr_between(start, end);
    }
}

/// Scales a row to [0, 255]; constant rows become all zeros.
pub fn minmax_normalize_row(signal: &[f64]) -> Vec<f64> {
    let (lo, hi) = signal
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    if !(range > 0.0) {
        return vec![0.0; signal.len()];
    }
    let scale = 255.0 / range;
    signal.iter().map(|&v| ((v - lo) * scale).clamp(0.0, 255.0)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialTemporalMap {
    pub t: usize,
    pub n: usize,
    pub c: usize,
    pub fps: f64,
    pub data: Vec<f32>,
    pub clip: ClipWindow,
}

impl SpatialTemporalMap {
    pub fn new(t: usize, n: usize, c: usize, fps: f64, data: Vec<f32>, clip: ClipWindow) -> Result<Self> {
        if data.len() != t * n * c || t == 0 || n == 0 || c == 0 {
            return Err(StmapError::Shape(format!("{} values for {t}x{n}x{c}", data.len())));
        }
        Ok(Self { t, n, c, fps, data, clip })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.t, self.n, self.c)
    }

    #[inline]
    pub fn at(&self, t: usize, block: usize, ch: usize) -> f32 {
        self.data[(t * self.n + block) * self.c + ch]
    }

    pub fn row(&self, block: usize, ch: usize) -> Vec<f32> {
        (0..self.t).map(|t| self.at(t, block, ch)).collect()
    }
}

/// Color-converts and row-normalizes clip traces into a map.
pub fn build_stmap(traces: &BlockTraces, space: ColorSpace, clip: ClipWindow) -> Result<SpatialTemporalMap> {
    let conv = traces.to_color_space(space)?;
    let (t, n, c) = (conv.t, conv.n, conv.c);
    let mut data = vec![0f32; t * n * c];
    for b in 0..n {
        for ch in 0..c {
            for (ti, v) in minmax_normalize_row(&conv.row(b, ch)).into_iter().enumerate() {
                data[(ti * n + b) * c + ch] = v as f32;
            }
        }
    }
    SpatialTemporalMap::new(t, n, c, traces.fps, data, clip)
}

/// Full path from frames and landmarks of a clip to its map.
pub fn build_stmap_from_frames(
    seq: &FrameSequence,
    track: &LandmarkTrack,
    clip: ClipWindow,
    schema: &LandmarkSchema,
    grid: (usize, usize),
    space: ColorSpace,
) -> Result<SpatialTemporalMap> {
    if clip.range().end > seq.len() {
        return Err(StmapError::WindowTooLong { window: clip.length, len: seq.len() });
    }
    let means: Vec<Option<Vec<f64>>> = clip
        .range()
        .map(|i| track.get(i).and_then(|pts| frame_block_means(&seq.frames[i], pts, schema, grid).ok()))
        .collect();
    let traces = BlockTraces::from_frame_means(&means, grid.0 * grid.1, seq.channels(), seq.nominal_fps)?;
    build_stmap(&traces, space, clip)
}

/// Time span to mask, if any, for a map of `t` frames.
pub fn mask_span(t: usize, seed: u64, min_len: usize, max_len: usize, prob: f64) -> Result<Option<Range<usize>>> {
    if max_len >= t {
        return Err(StmapError::MaskTooLong { max_len, t });
    }
    if min_len == 0 || min_len > max_len || !(0.0..=1.0).contains(&prob) {
        return Err(StmapError::InvalidMask(format!("lengths {min_len}..={max_len}, prob {prob}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if rng.random::<f64>() >= prob {
        return Ok(None);
    }
    let len = rng.random_range(min_len..=max_len);
    let start = rng.random_range(0..=t - len);
    Ok(Some(start..start + len))
}

/// With probability `prob`, zeroes every row over one random time span.
pub fn mask_augment(
    map: &SpatialTemporalMap,
    seed: u64,
    min_len: usize,
    max_len: usize,
    prob: f64,
) -> Result<SpatialTemporalMap> {
    let mut out = map.clone();
    if let Some(span) = mask_span(map.t, seed, min_len, max_len, prob)? {
        let w = map.n * map.c;
        out.data[span.start * w..span.end * w].fill(0.0);
    }
    Ok(out)
}

/// Sidecar metadata stored next to each `.stm` file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MapMeta {
    pub subject_id: String,
    pub video_id: String,
    pub clip_index: usize,
    pub color_space: ColorSpace,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StmapError + '_ {
    move |source| StmapError::Io { path: path.to_path_buf(), source }
}

fn meta_path(stm: &Path) -> PathBuf {
    let mut s = stm.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

/// Writes `path` (binary map) and `path.meta` (key=value text).
pub fn write_stm(path: &Path, map: &SpatialTemporalMap, meta: &MapMeta) -> Result<()> {
    let mut buf = Vec::with_capacity(20 + map.data.len() * 4);
    buf.extend_from_slice(MAP_MAGIC);
    for v in [map.t, map.n, map.c] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    buf.extend_from_slice(&(map.fps as f32).to_le_bytes());
    for v in &map.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(&buf).map_err(io_err(path))?;

    let gt = map.clip.gt_hr_bpm.map_or_else(|| "none".to_string(), |v| v.to_string());
    let text = format!(
        "subject_id={}\nvideo_id={}\nclip_index={}\nstart_frame={}\nlength={}\nstep_frames={}\ngt_hr_bpm={}\ncolor_space={}\nfps={}\n",
        meta.subject_id,
        meta.video_id,
        meta.clip_index,
        map.clip.start_frame,
        map.clip.length,
        map.clip.step_frames,
        gt,
        meta.color_space,
        map.fps,
    );
    let mp = meta_path(path);
    fs::write(&mp, text).map_err(io_err(&mp))
}

/// Reads a `.stm` map and its sidecar.
pub fn read_stm(path: &Path) -> Result<(SpatialTemporalMap, MapMeta)> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let fmt_err = |detail: String| StmapError::Format { path: path.to_path_buf(), detail };
    if bytes.len() < 20 || &bytes[..4] != MAP_MAGIC {
        return Err(fmt_err("bad magic, expected RKM1".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let (t, n, c) = (word(4), word(8), word(12));
    let header_fps = f32::from_le_bytes(bytes[16..20].try_into().unwrap()) as f64;
    let payload = &bytes[20..];
    if payload.len() != t * n * c * 4 {
        return Err(fmt_err(format!("payload {} bytes for {t}x{n}x{c}", payload.len())));
    }
    let data = payload.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();

    let mp = meta_path(path);
    let text = fs::read_to_string(&mp).map_err(io_err(&mp))?;
    let mut meta = MapMeta::default();
    let mut clip = ClipWindow { length: t, ..Default::default() };
    let mut fps = header_fps;
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        let (key, value) = line.split_once('=').ok_or_else(|| fmt_err(format!("bad meta line {line:?}")))?;
        let num = |v: &str| v.parse::<usize>().map_err(|_| fmt_err(format!("bad {key} value {v:?}")));
        match key {
            "subject_id" => meta.subject_id = value.to_string(),
            "video_id" => meta.video_id = value.to_string(),
            "clip_index" => meta.clip_index = num(value)?,
            "start_frame" => clip.start_frame = num(value)?,
            "length" => clip.length = num(value)?,
            "step_frames" => clip.step_frames = num(value)?,
            "gt_hr_bpm" => {
                clip.gt_hr_bpm = match value {
                    "none" | "" => None,
                    v => Some(v.parse().map_err(|_| fmt_err(format!("bad gt_hr_bpm {v:?}")))?),
                }
            }
            "color_space" => meta.color_space = value.parse()?,
            // full-precision fps; the header only carries f32
            "fps" => fps = value.parse().map_err(|_| fmt_err(format!("bad fps {value:?}")))?,
            _ => {}
        }
    }
    Ok((SpatialTemporalMap::new(t, n, c, fps, data, clip)?, meta))
}

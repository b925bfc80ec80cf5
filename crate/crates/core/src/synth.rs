//! Synthetic pulse generator with known heart rate.
//!
//! Intensities are on the 8-bit scale. Pulse and drift amplitudes are
//! fractions of the base intensity; noise standard deviations are in
//! intensity levels.

use std::f64::consts::TAU;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::face::LandmarkSchema;
use crate::ingest::{Frame, FrameSequence, GroundTruthTrace, LandmarkTrack, Point, LANDMARK_COUNT};
use crate::rppg::PulseSignal;
use crate::stmap::{build_stmap, slide_windows, BlockTraces, ClipWindow, ColorSpace, SpatialTemporalMap};

pub const SYNTH_HR_MIN_BPM: f64 = 42.0;
pub const SYNTH_HR_MAX_BPM: f64 = 150.0;
pub const MIN_FRAME_SIZE: usize = 32;
/// Skin tone of the synthetic face, RGB.
pub const SKIN_RGB: [f64; 3] = [200.0, 140.0, 120.0];
/// Non-skin background, RGB.
pub const BACKGROUND_RGB: [f64; 3] = [60.0, 160.0, 60.0];
/// Base level of single-channel (NIR-like) output.
pub const MONO_LEVEL: f64 = 150.0;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth spec: {0}")]
    InvalidSpec(String),
    #[error("invalid size {width}x{height}: both sides must be >= {MIN_FRAME_SIZE}")]
    InvalidSize { width: usize, height: usize },
    #[error("unsupported channel count {0}")]
    Channels(usize),
    #[error("config parse: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Stmap(#[from] crate::stmap::StmapError),
    #[error(transparent)]
    Ingest(#[from] crate::ingest::IngestError),
    #[error(transparent)]
    Rppg(#[from] crate::rppg::RppgError),
}

pub type Result<T> = std::result::Result<T, SynthError>;

/// Constant rate, or `(time_s, bpm)` breakpoints interpolated linearly and
/// held beyond the ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HrProfile {
    Constant(f64),
    Trajectory(Vec<(f64, f64)>),
}

impl HrProfile {
    pub fn bpm_at(&self, t: f64) -> f64 {
        match self {
            HrProfile::Constant(b) => *b,
            HrProfile::Trajectory(pts) => {
                let (first, last) = (pts[0], pts[pts.len() - 1]);
                if t <= first.0 {
                    return first.1;
                }
                if t >= last.0 {
                    return last.1;
                }
                let k = pts.windows(2).position(|w| t < w[1].0).unwrap_or(pts.len() - 2);
                let ((t0, b0), (t1, b1)) = (pts[k], pts[k + 1]);
                b0 + (b1 - b0) * (t - t0) / (t1 - t0)
            }
        }
    }

    /// Beats elapsed between 0 and `t`.
    pub fn beats_until(&self, t: f64) -> f64 {
        match self {
            HrProfile::Constant(b) => b * t / 60.0,
            HrProfile::Trajectory(pts) => {
                let mut area = 0.0;
                let mut prev = (0.0, self.bpm_at(0.0));
                let knots = pts.iter().map(|p| p.0).filter(|&k| k > 0.0 && k < t);
                for k in knots.chain(std::iter::once(t)) {
                    let cur = (k, self.bpm_at(k));
                    area += 0.5 * (prev.1 + cur.1) * (cur.0 - prev.0);
                    prev = cur;
                }
                area / 60.0
            }
        }
    }

    fn values(&self) -> Vec<f64> {
        match self {
            HrProfile::Constant(b) => vec![*b],
            HrProfile::Trajectory(pts) => pts.iter().map(|p| p.1).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub hr_bpm: HrProfile,
    pub fps: f64,
    pub duration_s: f64,
    /// Pulse amplitude as a fraction of base intensity.
    pub amplitude: f64,
    /// Second-harmonic amplitude relative to the fundamental.
    pub harmonic_ratio: f64,
    pub drift_hz: f64,
    /// Illumination drift amplitude as a fraction of base intensity.
    pub drift_amp: f64,
    /// Shared low-frequency intensity noise, levels.
    pub motion_sigma: f64,
    /// Independent per-sample noise, levels.
    pub sensor_sigma: f64,
    /// Per-channel pulse modulation scale, R, G, B.
    pub channel_ratios: [f64; 3],
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            hr_bpm: HrProfile::Constant(72.0),
            fps: 30.0,
            duration_s: 10.0,
            amplitude: 0.01,
            harmonic_ratio: 0.3,
            drift_hz: 0.1,
            drift_amp: 0.0,
            motion_sigma: 0.0,
            sensor_sigma: 0.0,
            channel_ratios: [0.5, 1.0, 0.7],
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn constant(bpm: f64, seed: u64) -> Self {
        Self { hr_bpm: HrProfile::Constant(bpm), seed, ..Self::default() }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| SynthError::Io { path: path.into(), source })?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        if let HrProfile::Trajectory(pts) = &self.hr_bpm {
            if pts.is_empty() {
                return bad("empty hr trajectory".into());
            }
            if pts.windows(2).any(|w| !(w[1].0 > w[0].0)) {
                return bad("trajectory times must increase".into());
            }
        }
        let hrs = self.hr_bpm.values();
        if let Some(h) = hrs.iter().find(|h| !(SYNTH_HR_MIN_BPM..=SYNTH_HR_MAX_BPM).contains(*h)) {
            return bad(format!("hr {h} outside [{SYNTH_HR_MIN_BPM}, {SYNTH_HR_MAX_BPM}]"));
        }
        let max_hz = hrs.iter().cloned().fold(0.0, f64::max) / 60.0;
        if !(self.fps.is_finite() && self.fps > 2.0 * max_hz) {
            return bad(format!("fps {} must exceed twice the pulse rate", self.fps));
        }
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) || self.frame_count() < 2 {
            return bad(format!("duration {} s too short", self.duration_s));
        }
        let amps = [
            ("amplitude", self.amplitude),
            ("harmonic_ratio", self.harmonic_ratio),
            ("drift_amp", self.drift_amp),
            ("drift_hz", self.drift_hz),
            ("motion_sigma", self.motion_sigma),
            ("sensor_sigma", self.sensor_sigma),
        ];
        let ratios = self.channel_ratios.iter().map(|r| ("channel_ratios", *r));
        if let Some((name, v)) = amps.into_iter().chain(ratios).find(|(_, v)| !(v.is_finite() && *v >= 0.0)) {
            return bad(format!("{name} must be finite and >= 0, got {v}"));
        }
        Ok(())
    }

    pub fn frame_count(&self) -> usize {
        (self.duration_s * self.fps).round() as usize
    }

    fn frame_time(&self, i: usize) -> f64 {
        i as f64 / self.fps
    }

    /// Unit-amplitude two-harmonic waveform at time `t`.
    pub fn waveform(&self, t: f64) -> f64 {
        let phase = TAU * self.hr_bpm.beats_until(t);
        phase.sin() + self.harmonic_ratio * (2.0 * phase).sin()
    }

    fn drift(&self, t: f64) -> f64 {
        self.drift_amp * (TAU * self.drift_hz * t).sin()
    }

    /// Ground-truth rate at every frame time.
    pub fn hr_per_frame(&self) -> Vec<f64> {
        (0..self.frame_count()).map(|i| self.hr_bpm.bpm_at(self.frame_time(i))).collect()
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }

    /// Band-limited unit-variance process, smoothed over about 0.25 s.
    fn motion_process(&self, stream: u64) -> Vec<f64> {
        let t = self.frame_count();
        if self.motion_sigma == 0.0 {
            return vec![0.0; t];
        }
        let mut rng = self.rng(stream);
        let white: Vec<f64> = (0..t).map(|_| rng.sample(StandardNormal)).collect();
        let half = ((0.125 * self.fps).round() as usize).max(1);
        let smooth: Vec<f64> = (0..t)
            .map(|i| {
                let (a, b) = (i.saturating_sub(half), (i + half + 1).min(t));
                white[a..b].iter().sum::<f64>() / (b - a) as f64
            })
            .collect();
        let m = smooth.iter().sum::<f64>() / t as f64;
        let sd = (smooth.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / t as f64).sqrt();
        if sd > 0.0 {
            smooth.iter().map(|v| (v - m) / sd).collect()
        } else {
            vec![0.0; t]
        }
    }
}

/// Green-channel intensity deviation of one skin region, in levels.
pub fn gen_pulse_trace(spec: &SynthSpec) -> Result<PulseSignal> {
    spec.validate()?;
    let base = SKIN_RGB[1];
    let motion = spec.motion_process(1);
    let mut rng = spec.rng(2);
    let samples = (0..spec.frame_count())
        .map(|i| {
            let t = spec.frame_time(i);
            let mut v = base * (spec.amplitude * spec.channel_ratios[1] * spec.waveform(t) + spec.drift(t));
            v += spec.motion_sigma * motion[i];
            if spec.sensor_sigma > 0.0 {
                v += spec.sensor_sigma * rng.sample::<f64, _>(StandardNormal);
            }
            v
        })
        .collect();
    Ok(PulseSignal::new(samples, spec.fps)?)
}

fn channel_layout(channels: usize) -> Result<(Vec<f64>, Vec<usize>)> {
    match channels {
        3 => Ok((SKIN_RGB.to_vec(), vec![0, 1, 2])),
        1 => Ok((vec![MONO_LEVEL], vec![1])),
        c => Err(SynthError::Channels(c)),
    }
}

/// Block color traces over the whole spec duration: per-block base color
/// and pulse strength, a shared motion process and per-block sensor noise.
pub fn gen_synthetic_traces(spec: &SynthSpec, n_blocks: usize, channels: usize) -> Result<BlockTraces> {
    spec.validate()?;
    if n_blocks == 0 {
        return Err(SynthError::InvalidSpec("need at least one block".into()));
    }
    let (base, ratio_idx) = channel_layout(channels)?;
    let t = spec.frame_count();
    let mut layout_rng = spec.rng(3);
    let blocks: Vec<(Vec<f64>, f64)> = (0..n_blocks)
        .map(|_| {
            let shift: f64 = layout_rng.random_range(-10.0..10.0);
            let gain: f64 = layout_rng.random_range(0.7..1.3);
            (base.iter().map(|b| b + shift).collect(), gain)
        })
        .collect();
    let motion = spec.motion_process(1);
    let mut noise = spec.rng(2);
    let mut data = Vec::with_capacity(t * n_blocks * channels);
    for i in 0..t {
        let time = spec.frame_time(i);
        let (wave, drift) = (spec.waveform(time), spec.drift(time));
        for (levels, gain) in &blocks {
            for (ch, level) in levels.iter().enumerate() {
                let pulse = spec.amplitude * gain * spec.channel_ratios[ratio_idx[ch]] * wave;
                let mut v = level * (1.0 + pulse + drift) + spec.motion_sigma * motion[i] * level / base[ch];
                if spec.sensor_sigma > 0.0 {
                    v += spec.sensor_sigma * noise.sample::<f64, _>(StandardNormal);
                }
                data.push(v);
            }
        }
    }
    Ok(BlockTraces::new(t, n_blocks, channels, spec.fps, data)?)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn default_space(channels: usize) -> ColorSpace {
    if channels == 1 {
        ColorSpace::Rgb
    } else {
        ColorSpace::Yuv
    }
}

/// One map over the full duration, YUV for three channels.
/// Returns the map and its mean ground-truth rate.
pub fn gen_synthetic_stmap(spec: &SynthSpec, n_blocks: usize, channels: usize) -> Result<(SpatialTemporalMap, f64)> {
    let traces = gen_synthetic_traces(spec, n_blocks, channels)?;
    let gt = mean(&spec.hr_per_frame());
    let clip = ClipWindow { start_frame: 0, length: traces.t, step_frames: 0, gt_hr_bpm: Some(gt) };
    let map = build_stmap(&traces, default_space(channels), clip)?;
    Ok((map, gt))
}

/// Sliding-window maps over one synthetic video, each labeled with the mean
/// rate over its frames.
pub fn gen_synthetic_clip_maps(
    spec: &SynthSpec,
    n_blocks: usize,
    channels: usize,
    window_frames: usize,
    step_seconds: f64,
    space: ColorSpace,
) -> Result<Vec<SpatialTemporalMap>> {
    let traces = gen_synthetic_traces(spec, n_blocks, channels)?;
    let hr = spec.hr_per_frame();
    slide_windows(traces.t, spec.fps, window_frames, step_seconds)?
        .into_iter()
        .map(|mut clip| {
            clip.gt_hr_bpm = Some(mean(&hr[clip.range()]));
            Ok(build_stmap(&traces.slice(clip.range())?, space, clip)?)
        })
        .collect()
}

/// Static 81-point layout consistent with `schema` for a face filling the
/// central part of a `width` x `height` frame.
pub fn synthetic_landmarks(schema: &LandmarkSchema, width: usize, height: usize) -> Vec<Point> {
    let (w, h) = (width as f64, height as f64);
    let mut pts = vec![Point::new(0.5 * w, 0.55 * h); LANDMARK_COUNT];
    let mut put = |idx: &[usize], x: f64, y: f64, spread: f64| {
        for (k, &i) in idx.iter().enumerate() {
            let off = if idx.len() > 1 { (k as f64 / (idx.len() - 1) as f64 - 0.5) * spread } else { 0.0 };
            pts[i] = Point::new(x + off, y);
        }
    };
    put(&schema.cheek_left, 0.2 * w, 0.5 * h, 0.0);
    put(&schema.cheek_right, 0.8 * w, 0.5 * h, 0.0);
    put(&schema.chin, 0.5 * w, 0.9 * h, 0.0);
    put(&schema.eyebrow_center, 0.5 * w, 0.3 * h, 0.2 * w);
    put(&schema.left_eye, 0.35 * w, 0.4 * h, 0.08 * w);
    put(&schema.right_eye, 0.65 * w, 0.4 * h, 0.08 * w);
    pts
}

#[derive(Debug, Clone)]
pub struct SynthVideo {
    pub sequence: FrameSequence,
    pub landmarks: LandmarkTrack,
    pub ground_truth: GroundTruthTrace,
}

/// RGB frames of a pulsing skin rectangle on a non-skin background.
pub fn gen_synthetic_frames(spec: &SynthSpec, width: usize, height: usize) -> Result<SynthVideo> {
    spec.validate()?;
    if width < MIN_FRAME_SIZE || height < MIN_FRAME_SIZE {
        return Err(SynthError::InvalidSize { width, height });
    }
    let t = spec.frame_count();
    let (x0, x1) = ((0.15 * width as f64) as usize, (0.85 * width as f64).ceil() as usize);
    let (y0, y1) = ((0.1 * height as f64) as usize, (0.95 * height as f64).ceil() as usize);
    let motion = spec.motion_process(1);
    let mut noise = spec.rng(2);
    let mut frames = Vec::with_capacity(t);
    let mut timestamps = Vec::with_capacity(t);
    let mut hr = Vec::with_capacity(t);
    let mut bvp = Vec::with_capacity(t);
    for i in 0..t {
        let time = spec.frame_time(i);
        let (wave, drift) = (spec.waveform(time), spec.drift(time));
        let skin: Vec<f64> = (0..3)
            .map(|c| {
                let pulse = spec.amplitude * spec.channel_ratios[c] * wave;
                SKIN_RGB[c] * (1.0 + pulse + drift) + spec.motion_sigma * motion[i] * SKIN_RGB[c] / SKIN_RGB[1]
            })
            .collect();
        let bg: Vec<f64> = BACKGROUND_RGB.iter().map(|b| b * (1.0 + drift)).collect();
        let mut frame = Frame::filled(width, height, &[0, 0, 0]);
        for y in 0..height {
            for x in 0..width {
                let inside = (x0..x1).contains(&x) && (y0..y1).contains(&y);
                let color = if inside { &skin } else { &bg };
                let px = frame.pixel_mut(x, y);
                for c in 0..3 {
                    let mut v = color[c];
                    if spec.sensor_sigma > 0.0 {
                        v += spec.sensor_sigma * noise.sample::<f64, _>(StandardNormal);
                    }
                    px[c] = v.round().clamp(0.0, 255.0) as u8;
                }
            }
        }
        frames.push(frame);
        let ms = (time * 1000.0).round();
        timestamps.push(ms as u64);
        hr.push((ms, spec.hr_bpm.bpm_at(time)));
        bvp.push((ms, wave));
    }
    let sequence = FrameSequence::new(frames, timestamps, spec.fps, format!("synth{}", spec.seed), "v0")?;
    let landmarks = LandmarkTrack::constant(&synthetic_landmarks(&LandmarkSchema::default(), width, height), t);
    Ok(SynthVideo { sequence, landmarks, ground_truth: GroundTruthTrace { hr_samples: hr, bvp_samples: Some(bvp) } })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::face::face_box;
    use crate::rppg::{spectral_peak_hr, Band, Estimator, RppgConfig, RppgError};
    use crate::stmap::{build_stmap_from_frames, label_windows, sequence_block_means, DEFAULT_GRID};

    #[test]
    fn clean_trace_peak() {
        let spec = SynthSpec::constant(72.0, 1);
        let s = gen_pulse_trace(&spec).unwrap();
        assert_eq!(s.len(), 300);
        let hr = spectral_peak_hr(&s, Band::default()).unwrap();
        assert!((hr.hr_bpm - 72.0).abs() <= 0.5, "{}", hr.hr_bpm);
    }

    #[test]
    fn zero_amplitude_is_constant() {
        let spec = SynthSpec { amplitude: 0.0, ..SynthSpec::constant(72.0, 1) };
        let s = gen_pulse_trace(&spec).unwrap();
        assert!(s.samples.iter().all(|v| *v == s.samples[0]));
    }

    #[test]
    fn trajectory_windows_increase() {
        let spec = SynthSpec {
            hr_bpm: HrProfile::Trajectory(vec![(0.0, 60.0), (30.0, 90.0)]),
            duration_s: 30.0,
            ..SynthSpec::default()
        };
        let s = gen_pulse_trace(&spec).unwrap();
        let est: Vec<f64> = s
            .samples
            .chunks(300)
            .map(|c| spectral_peak_hr(&PulseSignal::new(c.to_vec(), 30.0).unwrap(), Band::default()).unwrap().hr_bpm)
            .collect();
        assert_eq!(est.len(), 3);
        assert!(est.windows(2).all(|w| w[1] > w[0]), "{est:?}");
    }

    #[test]
    fn beats_match_numeric_integral() {
        let p = HrProfile::Trajectory(vec![(2.0, 60.0), (5.0, 120.0), (9.0, 80.0)]);
        let steps = 200_000;
        let dt = 12.0 / steps as f64;
        let numeric: f64 = (0..steps).map(|k| p.bpm_at((k as f64 + 0.5) * dt) * dt / 60.0).sum();
        assert!((p.beats_until(12.0) - numeric).abs() < 1e-6);
    }

    #[test]
    fn spec_validation() {
        for bad in [
            SynthSpec::constant(30.0, 0),
            SynthSpec::constant(160.0, 0),
            SynthSpec { amplitude: -0.1, ..SynthSpec::default() },
            SynthSpec { fps: 4.0, ..SynthSpec::constant(150.0, 0) },
            SynthSpec { hr_bpm: HrProfile::Trajectory(vec![]), ..SynthSpec::default() },
            SynthSpec { duration_s: 0.0, ..SynthSpec::default() },
        ] {
            assert!(matches!(gen_pulse_trace(&bad), Err(SynthError::InvalidSpec(_))), "{bad:?}");
        }
    }

    #[test]
    fn toml_config() {
        let spec = SynthSpec::from_toml_str("hr_bpm = [[0.0, 60.0], [30.0, 90.0]]\nduration_s = 30.0\nseed = 4\n").unwrap();
        assert_eq!(spec.hr_bpm, HrProfile::Trajectory(vec![(0.0, 60.0), (30.0, 90.0)]));
        let spec = SynthSpec::from_toml_str("hr_bpm = 80.0\nsensor_sigma = 0.5").unwrap();
        assert_eq!(spec.hr_bpm, HrProfile::Constant(80.0));
        assert!(SynthSpec::from_toml_str("hr_bpm = 20.0").is_err());
        assert!(SynthSpec::from_toml_str("unknown = 1").is_err());
    }

    #[test]
    fn deterministic() {
        let spec = SynthSpec { motion_sigma: 0.5, sensor_sigma: 0.5, ..SynthSpec::constant(90.0, 7) };
        let a = gen_synthetic_traces(&spec, 4, 3).unwrap();
        assert_eq!(a, gen_synthetic_traces(&spec, 4, 3).unwrap());
        let b = gen_synthetic_traces(&SynthSpec { seed: 8, ..spec }, 4, 3).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn stmap_green_peak() {
        let (map, gt) = gen_synthetic_stmap(&SynthSpec::constant(72.0, 3), 25, 3).unwrap();
        assert_eq!(map.shape(), (300, 25, 3));
        assert_eq!(gt, 72.0);
        let traces = gen_synthetic_traces(&SynthSpec::constant(72.0, 3), 25, 3).unwrap();
        let green = PulseSignal::new(traces.block_average(1), 30.0).unwrap();
        let hr = spectral_peak_hr(&green, Band::default()).unwrap();
        assert!((hr.hr_bpm - 72.0).abs() <= 1.0);
        let u = map.row(0, 1);
        let (lo, hi) = u.iter().fold((f32::MAX, f32::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        assert_eq!((lo, hi), (0.0, 255.0));
    }

    #[test]
    fn noise_only_has_low_snr() {
        let cfg = RppgConfig::default();
        let clean = gen_synthetic_traces(&SynthSpec::constant(72.0, 5), 25, 3).unwrap();
        let clean_snr = Estimator::Green.estimate(&clean, &cfg).unwrap().snr_db.unwrap();
        let noise = SynthSpec { amplitude: 0.0, sensor_sigma: 1.0, ..SynthSpec::constant(72.0, 5) };
        let traces = gen_synthetic_traces(&noise, 25, 3).unwrap();
        for m in [Estimator::Green, Estimator::Chrom, Estimator::Pos] {
            match m.estimate(&traces, &cfg) {
                Err(RppgError::NoPeak) => {}
                Ok(e) => assert!(e.snr_db.unwrap() < clean_snr - 10.0, "{m}: {:?} vs {clean_snr}", e.snr_db),
                Err(e) => panic!("{m}: {e}"),
            }
        }
    }

    #[test]
    fn single_channel_map() {
        let (map, _) = gen_synthetic_stmap(&SynthSpec::constant(72.0, 3), 25, 1).unwrap();
        assert_eq!(map.shape(), (300, 25, 1));
        assert!(gen_synthetic_stmap(&SynthSpec::default(), 25, 2).is_err());
    }

    #[test]
    fn clip_labels_match_trajectory_integral() {
        let spec = SynthSpec {
            hr_bpm: HrProfile::Trajectory(vec![(0.0, 60.0), (12.0, 110.0), (30.0, 70.0)]),
            duration_s: 30.0,
            ..SynthSpec::default()
        };
        let maps = gen_synthetic_clip_maps(&spec, 4, 3, 300, 0.5, ColorSpace::Yuv).unwrap();
        assert_eq!(maps.len(), 41);
        for m in &maps {
            let (a, b) = (m.clip.start_frame as f64 / 30.0, (m.clip.start_frame + m.clip.length - 1) as f64 / 30.0);
            let integral = 60.0 * (spec.hr_bpm.beats_until(b) - spec.hr_bpm.beats_until(a)) / (b - a);
            assert!((m.clip.gt_hr_bpm.unwrap() - integral).abs() < 0.1);
        }
    }

    #[test]
    fn frames_layout() {
        let v = gen_synthetic_frames(&SynthSpec::constant(72.0, 0), 64, 64).unwrap();
        assert_eq!(v.sequence.len(), 300);
        assert_eq!(v.sequence.timestamps_ms[1], 33);
        assert_eq!(v.landmarks.valid_count(), 300);
        let fb = face_box(v.landmarks.get(0).unwrap(), &LandmarkSchema::default()).unwrap();
        assert!((fb.width - 0.6 * 64.0).abs() < 1e-9);
        assert!(fb.rotation_deg.abs() < 1e-9);
        assert!(matches!(gen_synthetic_frames(&SynthSpec::default(), 31, 64), Err(SynthError::InvalidSize { .. })));
    }

    fn frames_estimate(spec: &SynthSpec) -> std::result::Result<f64, RppgError> {
        let v = gen_synthetic_frames(spec, 64, 64).unwrap();
        let means = sequence_block_means(&v.sequence, &v.landmarks, &LandmarkSchema::default(), DEFAULT_GRID);
        let traces = BlockTraces::from_frame_means(&means, 25, 3, spec.fps).unwrap();
        Estimator::Green.estimate(&traces, &RppgConfig::default()).map(|e| e.hr_bpm)
    }

    #[test]
    fn frames_end_to_end_green() {
        let hr = frames_estimate(&SynthSpec::constant(72.0, 0)).unwrap();
        assert!((hr - 72.0).abs() <= 2.0, "{hr}");
    }

    #[test]
    fn frames_without_pulse() {
        let flat = SynthSpec { amplitude: 0.0, ..SynthSpec::constant(72.0, 0) };
        assert!(matches!(frames_estimate(&flat), Err(RppgError::NoPeak)));
    }

    #[test]
    fn frames_drift_only_has_no_dominant_peak() {
        let clean = gen_synthetic_frames(&SynthSpec::constant(72.0, 0), 64, 64).unwrap();
        let means = sequence_block_means(&clean.sequence, &clean.landmarks, &LandmarkSchema::default(), DEFAULT_GRID);
        let traces = BlockTraces::from_frame_means(&means, 25, 3, 30.0).unwrap();
        let clean_snr = Estimator::Green.estimate(&traces, &RppgConfig::default()).unwrap().snr_db.unwrap();
        let drift = SynthSpec { amplitude: 0.0, drift_amp: 0.05, drift_hz: 0.1, ..SynthSpec::constant(72.0, 0) };
        let v = gen_synthetic_frames(&drift, 64, 64).unwrap();
        let means = sequence_block_means(&v.sequence, &v.landmarks, &LandmarkSchema::default(), DEFAULT_GRID);
        let traces = BlockTraces::from_frame_means(&means, 25, 3, 30.0).unwrap();
        match Estimator::Green.estimate(&traces, &RppgConfig::default()) {
            Err(RppgError::NoPeak) => {}
            Ok(e) => assert!(e.snr_db.unwrap() < 0.0 && e.snr_db.unwrap() < clean_snr - 10.0, "{e:?} vs {clean_snr}"),
            Err(e) => panic!("{e}"),
        }
    }

    #[test]
    fn frames_map_and_labels() {
        let v = gen_synthetic_frames(&SynthSpec::constant(72.0, 0), 64, 64).unwrap();
        let mut clips = slide_windows(v.sequence.len(), 30.0, 300, 0.5).unwrap();
        label_windows(&mut clips, &v.sequence.timestamps_ms, &v.ground_truth);
        assert_eq!(clips[0].gt_hr_bpm, Some(72.0));
        let map = build_stmap_from_frames(
            &v.sequence,
            &v.landmarks,
            clips[0],
            &LandmarkSchema::default(),
            DEFAULT_GRID,
            ColorSpace::Yuv,
        )
        .unwrap();
        assert_eq!(map.shape(), (300, 25, 3));
    }
}

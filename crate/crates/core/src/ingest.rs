//! Loading and validation of frame sequences, landmark tracks and
//! ground-truth traces stored in the on-disk video layout.
//!
//! A video directory holds:
//!
//! * `frames.bin`: `RKF1` magic, then u32 LE width, height, channels, then
//!   the frames back to back (row-major, channel-interleaved, 8 bit).
//! * `manifest.csv`: optional `# fps=<value>` line, header
//!   `frame_index,timestamp_ms`, one row per frame.
//! * `landmarks.csv`: header `frame_index,x0,y0,...,x80,y80`.
//! * `gt.csv`: header `time_ms,hr_bpm[,bvp]`.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

pub const FRAME_MAGIC: &[u8; 4] = b"RKF1";
pub const LANDMARK_COUNT: usize = 81;
pub const FRAMES_FILE: &str = "frames.bin";
pub const MANIFEST_FILE: &str = "manifest.csv";
pub const LANDMARKS_FILE: &str = "landmarks.csv";
pub const GROUND_TRUTH_FILE: &str = "gt.csv";

pub const HR_MIN_BPM: f64 = 30.0;
pub const HR_MAX_BPM: f64 = 240.0;

/// Default centered moving-average window for landmark smoothing.
pub const DEFAULT_LANDMARK_WINDOW: usize = 5;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad magic, expected {expected}")]
    BadMagic { path: PathBuf, expected: &'static str },
    #[error("{path}: empty sequence")]
    EmptySequence { path: PathBuf },
    #[error("non-increasing timestamps at frame {index}")]
    NonIncreasingTimestamps { index: usize },
    #[error("{path}: dimension mismatch: {detail}")]
    DimensionMismatch { path: PathBuf, detail: String },
    #[error("{path}:{line}: {detail}")]
    Parse { path: PathBuf, line: u64, detail: String },
    #[error("{path}:{line}: landmark arity: expected {expected} coordinates, found {found}")]
    LandmarkArity { path: PathBuf, line: u64, expected: usize, found: usize },
    #[error("{path}:{line}: hr out of range: {value}")]
    HrOutOfRange { path: PathBuf, line: u64, value: f64 },
    #[error("{path}:{line}: times decreasing")]
    TimesDecreasing { path: PathBuf, line: u64 },
    #[error("{path}: empty trace")]
    EmptyTrace { path: PathBuf },
    #[error("invalid target fps {target} (nominal {nominal})")]
    InvalidTargetFps { target: f64, nominal: f64 },
    #[error("window must be odd and positive, got {0}")]
    InvalidWindow(usize),
    #[error("invalid frame: {0}")]
    InvalidFrame(String),
}

pub type Result<T> = std::result::Result<T, IngestError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IngestError + '_ {
    move |source| IngestError::Io { path: path.to_path_buf(), source }
}

fn csv_err(path: &Path, e: csv::Error) -> IngestError {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => IngestError::Io { path: path.to_path_buf(), source },
        kind => IngestError::Parse { path: path.to_path_buf(), line, detail: format!("{kind:?}") },
    }
}

/// One image, 8 bits per channel, row-major with interleaved channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl Frame {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(IngestError::InvalidFrame(format!("unsupported channel count {channels}")));
        }
        if data.len() != width * height * channels {
            return Err(IngestError::InvalidFrame(format!(
                "payload {} bytes for {width}x{height}x{channels}",
                data.len()
            )));
        }
        Ok(Self { width, height, channels, data })
    }

    /// Frame filled with one color; `color.len()` is the channel count.
    pub fn filled(width: usize, height: usize, color: &[u8]) -> Self {
        let data = color.iter().copied().cycle().take(width * height * color.len()).collect();
        Self { width, height, channels: color.len(), data }
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[u8] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [u8] {
        let i = (y * self.width + x) * self.channels;
        &mut self.data[i..i + self.channels]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    pub frames: Vec<Frame>,
    pub timestamps_ms: Vec<u64>,
    pub nominal_fps: f64,
    pub subject_id: String,
    pub video_id: String,
}

impl FrameSequence {
    /// Validates the sequence invariants.
    pub fn new(
        frames: Vec<Frame>,
        timestamps_ms: Vec<u64>,
        nominal_fps: f64,
        subject_id: impl Into<String>,
        video_id: impl Into<String>,
    ) -> Result<Self> {
        if frames.is_empty() {
            return Err(IngestError::EmptySequence { path: PathBuf::new() });
        }
        if frames.len() != timestamps_ms.len() {
            return Err(IngestError::DimensionMismatch {
                path: PathBuf::new(),
                detail: format!("{} frames but {} timestamps", frames.len(), timestamps_ms.len()),
            });
        }
        check_increasing(&timestamps_ms)?;
        let (w, h, c) = (frames[0].width, frames[0].height, frames[0].channels);
        if let Some(i) = frames.iter().position(|f| f.width != w || f.height != h || f.channels != c) {
            return Err(IngestError::DimensionMismatch {
                path: PathBuf::new(),
                detail: format!("frame {i} differs from frame 0 ({w}x{h}x{c})"),
            });
        }
        if !(nominal_fps.is_finite() && nominal_fps > 0.0) {
            return Err(IngestError::InvalidTargetFps { target: nominal_fps, nominal: nominal_fps });
        }
        Ok(Self {
            frames,
            timestamps_ms,
            nominal_fps,
            subject_id: subject_id.into(),
            video_id: video_id.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.frames.first().map_or(0, |f| f.channels)
    }
}

fn check_increasing(ts: &[u64]) -> Result<()> {
    match ts.windows(2).position(|w| w[1] <= w[0]) {
        Some(i) => Err(IngestError::NonIncreasingTimestamps { index: i + 1 }),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// Per-frame landmark sets. Invalid frames keep a zeroed point set so that
/// indices stay aligned with the frame sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkTrack {
    pub points: Vec<Vec<Point>>,
    pub valid: Vec<bool>,
}

impl LandmarkTrack {
    pub fn from_frames(frames: Vec<Option<Vec<Point>>>) -> Self {
        let valid = frames.iter().map(Option::is_some).collect();
        let points = frames
            .into_iter()
            .map(|p| p.unwrap_or_else(|| vec![Point::default(); LANDMARK_COUNT]))
            .collect();
        Self { points, valid }
    }

    /// Same landmark set on every frame.
    pub fn constant(points: &[Point], len: usize) -> Self {
        Self { points: vec![points.to_vec(); len], valid: vec![true; len] }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn get(&self, frame: usize) -> Option<&[Point]> {
        if *self.valid.get(frame)? {
            Some(&self.points[frame])
        } else {
            None
        }
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthTrace {
    /// `(time_ms, hr_bpm)`
    pub hr_samples: Vec<(f64, f64)>,
    /// `(time_ms, amplitude)`
    pub bvp_samples: Option<Vec<(f64, f64)>>,
}

impl GroundTruthTrace {
    /// Mean of HR samples with `start_ms <= t <= end_ms`.
    pub fn mean_hr_between(&self, start_ms: f64, end_ms: f64) -> Option<f64> {
        let (sum, n) = self
            .hr_samples
            .iter()
            .filter(|(t, _)| *t >= start_ms && *t <= end_ms)
            .fold((0.0, 0usize), |(s, n), (_, hr)| (s + hr, n + 1));
        (n > 0).then(|| sum / n as f64)
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    if values.len().is_multiple_of(2) {
        0.5 * (values[m - 1] + values[m])
    } else {
        values[m]
    }
}

/// Parses `manifest.csv`, returning timestamps and the optional fps header.
fn read_manifest(path: &Path) -> Result<(Vec<u64>, Option<f64>)> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut fps = None;
    if let Some(first) = text.lines().next() {
        if let Some(rest) = first.trim().strip_prefix('#') {
            if let Some(v) = rest.trim().strip_prefix("fps=") {
                let v: f64 = v.trim().parse().map_err(|_| IngestError::Parse {
                    path: path.to_path_buf(),
                    line: 1,
                    detail: format!("bad fps value {v:?}"),
                })?;
                fps = Some(v);
            }
        }
    }
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut timestamps = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let parse = |i: usize| -> Result<u64> {
            rec.get(i).and_then(|s| s.parse().ok()).ok_or_else(|| IngestError::Parse {
                path: path.to_path_buf(),
                line,
                detail: format!("expected non-negative integer in column {i}"),
            })
        };
        let index = parse(0)?;
        if index != row as u64 {
            return Err(IngestError::Parse {
                path: path.to_path_buf(),
                line,
                detail: format!("frame_index {index}, expected {row}"),
            });
        }
        timestamps.push(parse(1)?);
    }
    Ok((timestamps, fps))
}

/// Loads `frames.bin` + `manifest.csv` from a video directory. Subject and
/// video ids are the parent and own directory names.
pub fn load_frame_sequence(dir: &Path) -> Result<FrameSequence> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let (timestamps, fps_header) = read_manifest(&manifest_path)?;
    if timestamps.is_empty() {
        return Err(IngestError::EmptySequence { path: manifest_path });
    }
    check_increasing(&timestamps)?;

    let frames_path = dir.join(FRAMES_FILE);
    let bytes = fs::read(&frames_path).map_err(io_err(&frames_path))?;
    if bytes.len() < 16 || &bytes[..4] != FRAME_MAGIC {
        return Err(IngestError::BadMagic { path: frames_path, expected: "RKF1" });
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let (width, height, channels) = (word(4), word(8), word(12));
    let frame_bytes = width * height * channels;
    let payload = &bytes[16..];
    if frame_bytes == 0 || payload.len() != frame_bytes * timestamps.len() {
        return Err(IngestError::DimensionMismatch {
            path: frames_path,
            detail: format!(
                "header {width}x{height}x{channels} with {} manifest rows needs {} payload bytes, found {}",
                timestamps.len(),
                frame_bytes * timestamps.len(),
                payload.len()
            ),
        });
    }
    let frames = payload
        .chunks_exact(frame_bytes)
        .map(|chunk| Frame::new(width, height, channels, chunk.to_vec()))
        .collect::<Result<Vec<_>>>()?;

    let nominal_fps = match fps_header {
        Some(f) => f,
        None if timestamps.len() >= 2 => {
            let mut dts: Vec<f64> = timestamps.windows(2).map(|w| (w[1] - w[0]) as f64).collect();
            1000.0 / median(&mut dts)
        }
        None => {
            return Err(IngestError::Parse {
                path: manifest_path,
                line: 1,
                detail: "single-frame manifest needs a '# fps=' header".into(),
            })
        }
    };
    let name = |p: Option<&Path>| {
        p.and_then(|p| p.file_name()).map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
    };
    let video_id = name(Some(dir));
    let subject_id = name(dir.parent());
    FrameSequence::new(frames, timestamps, nominal_fps, subject_id, video_id)
}

/// Writes `frames.bin` and `manifest.csv` (with fps header) into `dir`.
pub fn write_frame_sequence(seq: &FrameSequence, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let frames_path = dir.join(FRAMES_FILE);
    let first = seq.frames.first().ok_or(IngestError::EmptySequence { path: frames_path.clone() })?;
    let mut out = BufWriter::new(fs::File::create(&frames_path).map_err(io_err(&frames_path))?);
    let mut header = Vec::with_capacity(16);
    header.extend_from_slice(FRAME_MAGIC);
    for v in [first.width, first.height, first.channels] {
        header.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.write_all(&header).map_err(io_err(&frames_path))?;
    for f in &seq.frames {
        out.write_all(&f.data).map_err(io_err(&frames_path))?;
    }
    out.flush().map_err(io_err(&frames_path))?;

    let manifest_path = dir.join(MANIFEST_FILE);
    let mut text = format!("# fps={}\nframe_index,timestamp_ms\n", seq.nominal_fps);
    for (i, t) in seq.timestamps_ms.iter().enumerate() {
        text.push_str(&format!("{i},{t}\n"));
    }
    fs::write(&manifest_path, text).map_err(io_err(&manifest_path))
}

/// Loads `landmarks.csv` for a sequence of `n_frames` frames. Frames without a
/// row, or with non-finite coordinates, are marked invalid.
pub fn load_landmarks(path: &Path, n_frames: usize) -> Result<LandmarkTrack> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut frames: Vec<Option<Vec<Point>>> = vec![None; n_frames];
    for rec in reader.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let parse_err = |detail: String| IngestError::Parse { path: path.to_path_buf(), line, detail };
        let index: usize = rec
            .get(0)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| parse_err("bad frame_index".into()))?;
        let found = rec.len().saturating_sub(1);
        if found != 2 * LANDMARK_COUNT {
            return Err(IngestError::LandmarkArity {
                path: path.to_path_buf(),
                line,
                expected: 2 * LANDMARK_COUNT,
                found,
            });
        }
        if index >= n_frames {
            return Err(parse_err(format!("frame_index {index} beyond sequence length {n_frames}")));
        }
        let mut coords = Vec::with_capacity(2 * LANDMARK_COUNT);
        for (i, field) in rec.iter().skip(1).enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(format!("non-numeric coordinate {field:?} in column {}", i + 1)))?;
            coords.push(v);
        }
        if coords.iter().all(|v| v.is_finite()) {
            frames[index] = Some(coords.chunks_exact(2).map(|c| Point::new(c[0], c[1])).collect());
        }
    }
    Ok(LandmarkTrack::from_frames(frames))
}

pub fn write_landmarks(track: &LandmarkTrack, path: &Path) -> Result<()> {
    let mut text = String::from("frame_index");
    for i in 0..LANDMARK_COUNT {
        text.push_str(&format!(",x{i},y{i}"));
    }
    text.push('\n');
    for (i, pts) in track.points.iter().enumerate() {
        if !track.valid[i] {
            continue;
        }
        text.push_str(&i.to_string());
        for p in pts {
            text.push_str(&format!(",{},{}", p.x, p.y));
        }
        text.push('\n');
    }
    fs::write(path, text).map_err(io_err(path))
}

pub fn load_ground_truth(path: &Path) -> Result<GroundTruthTrace> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(file);
    let has_bvp = reader.headers().map_err(|e| csv_err(path, e))?.len() >= 3;
    let mut hr_samples = Vec::new();
    let mut bvp = Vec::new();
    let mut last_t = f64::NEG_INFINITY;
    for rec in reader.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |i: usize| -> Result<f64> {
            rec.get(i).and_then(|s| s.parse::<f64>().ok()).ok_or_else(|| IngestError::Parse {
                path: path.to_path_buf(),
                line,
                detail: format!("expected number in column {i}"),
            })
        };
        let t = field(0)?;
        let hr = field(1)?;
        if !t.is_finite() || t < last_t {
            return Err(IngestError::TimesDecreasing { path: path.to_path_buf(), line });
        }
        if !(hr.is_finite() && (HR_MIN_BPM..=HR_MAX_BPM).contains(&hr)) {
            return Err(IngestError::HrOutOfRange { path: path.to_path_buf(), line, value: hr });
        }
        last_t = t;
        hr_samples.push((t, hr));
        if has_bvp {
            bvp.push((t, field(2)?));
        }
    }
    if hr_samples.is_empty() {
        return Err(IngestError::EmptyTrace { path: path.to_path_buf() });
    }
    Ok(GroundTruthTrace { hr_samples, bvp_samples: has_bvp.then_some(bvp) })
}

pub fn write_ground_truth(trace: &GroundTruthTrace, path: &Path) -> Result<()> {
    let mut text = String::new();
    match &trace.bvp_samples {
        Some(bvp) => {
            text.push_str("time_ms,hr_bpm,bvp\n");
            for ((t, hr), (_, b)) in trace.hr_samples.iter().zip(bvp) {
                text.push_str(&format!("{t},{hr},{b}\n"));
            }
        }
        None => {
            text.push_str("time_ms,hr_bpm\n");
            for (t, hr) in &trace.hr_samples {
                text.push_str(&format!("{t},{hr}\n"));
            }
        }
    }
    fs::write(path, text).map_err(io_err(path))
}

/// Nearest-timestamp resampling onto a uniform grid at `target_fps`.
///
/// Grid times are `t0 + k * 1000 / target_fps` (rounded to whole ms) for all
/// `k` that do not pass the last input timestamp.
pub fn resample_sequence(seq: &FrameSequence, target_fps: f64) -> Result<FrameSequence> {
    let nominal = seq.nominal_fps;
    if !(target_fps.is_finite() && target_fps > 0.0) || target_fps > nominal * (1.0 + 1e-9) {
        return Err(IngestError::InvalidTargetFps { target: target_fps, nominal });
    }
    let (indices, stamps): (Vec<usize>, Vec<u64>) =
        resample_grid(&seq.timestamps_ms, target_fps).into_iter().unzip();
    let frames = indices.into_iter().map(|i| seq.frames[i].clone()).collect();
    FrameSequence::new(frames, stamps, target_fps, seq.subject_id.clone(), seq.video_id.clone())
}

/// Source frame index of each output frame of [`resample_sequence`], so that
/// landmark tracks can follow the frames.
pub fn resample_indices(timestamps_ms: &[u64], target_fps: f64) -> Vec<usize> {
    resample_grid(timestamps_ms, target_fps).into_iter().map(|(i, _)| i).collect()
}

fn resample_grid(timestamps_ms: &[u64], target_fps: f64) -> Vec<(usize, u64)> {
    let Some(&last) = timestamps_ms.last() else {
        return Vec::new();
    };
    let t0 = timestamps_ms[0] as f64;
    let t_end = last as f64 + 0.5;
    let dt = 1000.0 / target_fps;
    let mut out: Vec<(usize, u64)> = Vec::new();
    let mut cursor = 0usize;
    for k in 0.. {
        let t = t0 + k as f64 * dt;
        if t > t_end + 1e-9 {
            break;
        }
        while cursor + 1 < timestamps_ms.len()
            && (timestamps_ms[cursor + 1] as f64 - t).abs() <= (timestamps_ms[cursor] as f64 - t).abs()
        {
            cursor += 1;
        }
        let stamp = t.round() as u64;
        if out.last().is_some_and(|&(_, prev)| stamp <= prev) {
            continue;
        }
        out.push((cursor, stamp));
    }
    out
}

/// Centered moving average over valid frames, truncated at the ends.
pub fn smooth_landmarks(track: &LandmarkTrack, window: usize) -> Result<LandmarkTrack> {
    if window == 0 || window.is_multiple_of(2) {
        return Err(IngestError::InvalidWindow(window));
    }
    let half = window / 2;
    let n = track.len();
    let mut points = track.points.clone();
    for (i, out) in points.iter_mut().enumerate() {
        if !track.valid[i] {
            continue;
        }
        let lo = i.saturating_sub(half);
        let hi = (i + half).min(n - 1);
        let neighbours: Vec<&Vec<Point>> =
            (lo..=hi).filter(|&j| track.valid[j]).map(|j| &track.points[j]).collect();
        let inv = 1.0 / neighbours.len() as f64;
        for (k, p) in out.iter_mut().enumerate() {
            let (sx, sy) = neighbours.iter().fold((0.0, 0.0), |(sx, sy), pts| (sx + pts[k].x, sy + pts[k].y));
            *p = Point::new(sx * inv, sy * inv);
        }
    }
    Ok(LandmarkTrack { points, valid: track.valid.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform_seq(n: usize, fps: f64) -> FrameSequence {
        let frames = (0..n).map(|i| Frame::filled(2, 2, &[(i % 256) as u8, 0, 0])).collect();
        let ts = (0..n).map(|i| (i as f64 * 1000.0 / fps).round() as u64).collect();
        FrameSequence::new(frames, ts, fps, "s", "v").unwrap()
    }

    fn write_manifest(dir: &Path, body: &str) {
        fs::write(dir.join(MANIFEST_FILE), body).unwrap();
    }

    #[test]
    fn manifest_with_fps_header_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let video = dir.path().join("subj").join("vid");
        let seq = uniform_seq(900, 30.0);
        write_frame_sequence(&seq, &video).unwrap();
        let loaded = load_frame_sequence(&video).unwrap();
        assert_eq!(loaded.len(), 900);
        assert_eq!(loaded.nominal_fps, 30.0);
        assert_eq!(loaded.subject_id, "subj");
        assert_eq!(loaded.video_id, "vid");
        assert_eq!(loaded.frames, seq.frames);

        let before = fs::read(video.join(FRAMES_FILE)).unwrap();
        write_frame_sequence(&loaded, &video).unwrap();
        assert_eq!(before, fs::read(video.join(FRAMES_FILE)).unwrap());
    }

    #[test]
    fn fps_from_median_interval() {
        let dir = tempfile::tempdir().unwrap();
        let seq = uniform_seq(10, 25.0);
        write_frame_sequence(&seq, dir.path()).unwrap();
        write_manifest(dir.path(), "frame_index,timestamp_ms\n0,0\n1,40\n2,80\n3,120\n4,170\n5,200\n6,240\n7,280\n8,320\n9,360\n");
        let loaded = load_frame_sequence(dir.path()).unwrap();
        assert_eq!(loaded.nominal_fps, 25.0);
    }

    #[test]
    fn empty_manifest_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_frame_sequence(&uniform_seq(3, 30.0), dir.path()).unwrap();
        write_manifest(dir.path(), "# fps=30\nframe_index,timestamp_ms\n");
        let err = load_frame_sequence(dir.path()).unwrap_err();
        assert!(err.to_string().contains("empty sequence"), "{err}");
    }

    #[test]
    fn repeated_timestamp_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_frame_sequence(&uniform_seq(3, 30.0), dir.path()).unwrap();
        write_manifest(dir.path(), "frame_index,timestamp_ms\n0,0\n1,33\n2,33\n");
        let err = load_frame_sequence(dir.path()).unwrap_err();
        assert!(err.to_string().contains("non-increasing timestamps"), "{err}");
    }

    #[test]
    fn payload_size_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_frame_sequence(&uniform_seq(3, 30.0), dir.path()).unwrap();
        write_manifest(dir.path(), "# fps=30\nframe_index,timestamp_ms\n0,0\n1,33\n");
        assert!(matches!(load_frame_sequence(dir.path()), Err(IngestError::DimensionMismatch { .. })));
    }

    #[test]
    fn missing_frames_file_names_the_path() {
        let dir = tempfile::tempdir().unwrap();
        write_manifest(dir.path(), "# fps=30\nframe_index,timestamp_ms\n0,0\n");
        let err = load_frame_sequence(dir.path()).unwrap_err();
        assert!(err.to_string().contains(FRAMES_FILE));
    }

    fn landmark_row(i: usize, values: usize) -> String {
        let mut s = i.to_string();
        for k in 0..values {
            s.push_str(&format!(",{}", k as f64 * 0.5));
        }
        s.push('\n');
        s
    }

    fn landmark_header() -> String {
        let mut s = String::from("frame_index");
        for i in 0..LANDMARK_COUNT {
            s.push_str(&format!(",x{i},y{i}"));
        }
        s.push('\n');
        s
    }

    #[test]
    fn landmarks_full_and_partial() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(LANDMARKS_FILE);
        let mut text = landmark_header();
        for i in 0..900 {
            text.push_str(&landmark_row(i, 162));
        }
        fs::write(&path, &text).unwrap();
        let track = load_landmarks(&path, 900).unwrap();
        assert_eq!(track.len(), 900);
        assert_eq!(track.valid_count(), 900);

        let mut text = landmark_header();
        for i in 0..850 {
            text.push_str(&landmark_row(i, 162));
        }
        fs::write(&path, &text).unwrap();
        let track = load_landmarks(&path, 900).unwrap();
        assert_eq!(track.len(), 900);
        assert_eq!(track.len() - track.valid_count(), 50);
    }

    #[test]
    fn landmark_arity_and_parse_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(LANDMARKS_FILE);
        fs::write(&path, landmark_header() + &landmark_row(0, 160)).unwrap();
        let err = load_landmarks(&path, 1).unwrap_err();
        assert!(err.to_string().contains("landmark arity"), "{err}");

        let mut row = landmark_row(0, 162);
        row = row.replacen(",0.5,", ",abc,", 1);
        fs::write(&path, landmark_header() + &row).unwrap();
        assert!(matches!(load_landmarks(&path, 1), Err(IngestError::Parse { .. })));
    }

    #[test]
    fn ground_truth_rules() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(GROUND_TRUTH_FILE);
        fs::write(&path, "time_ms,hr_bpm\n0,72\n1000,73\n").unwrap();
        let gt = load_ground_truth(&path).unwrap();
        assert_eq!(gt.hr_samples, vec![(0.0, 72.0), (1000.0, 73.0)]);
        assert!(gt.bvp_samples.is_none());

        fs::write(&path, "time_ms,hr_bpm\n0,300\n").unwrap();
        let err = load_ground_truth(&path).unwrap_err();
        assert!(err.to_string().contains("hr out of range"), "{err}");

        fs::write(&path, "").unwrap();
        let err = load_ground_truth(&path).unwrap_err();
        assert!(err.to_string().contains("empty trace"), "{err}");

        fs::write(&path, "time_ms,hr_bpm\n10,70\n5,70\n").unwrap();
        assert!(matches!(load_ground_truth(&path), Err(IngestError::TimesDecreasing { .. })));

        fs::write(&path, "time_ms,hr_bpm,bvp\n0,72,0.1\n33,72,0.2\n").unwrap();
        let gt = load_ground_truth(&path).unwrap();
        assert_eq!(gt.bvp_samples.unwrap().len(), 2);
    }

    #[test]
    fn resample_halves_61_fps() {
        let seq = uniform_seq(610, 61.0);
        let out = resample_sequence(&seq, 30.5).unwrap();
        assert_eq!(out.len(), 305);
        assert_eq!(out.nominal_fps, 30.5);
        // every other frame
        for (k, f) in out.frames.iter().enumerate() {
            assert_eq!(f, &seq.frames[2 * k]);
        }
        assert_eq!(resample_indices(&seq.timestamps_ms, 30.5).len(), 305);
    }

    #[test]
    fn resample_at_nominal_is_identity() {
        for fps in [30.0, 25.0, 30.5, 61.0] {
            let seq = uniform_seq(123, fps);
            assert_eq!(resample_sequence(&seq, fps).unwrap(), seq, "fps {fps}");
        }
    }

    #[test]
    fn resample_rejects_bad_targets() {
        let seq = uniform_seq(10, 30.0);
        assert!(resample_sequence(&seq, 0.0).is_err());
        assert!(resample_sequence(&seq, 60.0).is_err());
    }

    #[test]
    fn smoothing_rules() {
        let pts: Vec<Point> = (0..LANDMARK_COUNT).map(|i| Point::new(i as f64, 2.0 * i as f64)).collect();
        let track = LandmarkTrack::constant(&pts, 20);
        assert_eq!(smooth_landmarks(&track, 5).unwrap(), track);

        let frames = (0..3)
            .map(|t| Some(vec![Point::new(10.0 * t as f64, 0.0); LANDMARK_COUNT]))
            .collect();
        let track = LandmarkTrack::from_frames(frames);
        let smoothed = smooth_landmarks(&track, 3).unwrap();
        assert_eq!(smoothed.points[1][0].x, 10.0);
        // truncated edge: mean of frames 0 and 1
        assert_eq!(smoothed.points[0][0].x, 5.0);

        let err = smooth_landmarks(&track, 4).unwrap_err();
        assert!(err.to_string().contains("window must be odd"));
        assert!(smooth_landmarks(&track, 0).is_err());
    }

    #[test]
    fn smoothing_skips_invalid_frames() {
        let frames = vec![
            Some(vec![Point::new(0.0, 0.0); LANDMARK_COUNT]),
            None,
            Some(vec![Point::new(4.0, 0.0); LANDMARK_COUNT]),
        ];
        let track = LandmarkTrack::from_frames(frames);
        let s = smooth_landmarks(&track, 3).unwrap();
        assert_eq!(s.valid, vec![true, false, true]);
        assert_eq!(s.points[0][0].x, 0.0);
        assert_eq!(s.points[2][0].x, 4.0);
    }

    #[test]
    fn mean_hr_window() {
        let gt = GroundTruthTrace { hr_samples: vec![(0.0, 60.0), (500.0, 70.0), (1000.0, 80.0)], bvp_samples: None };
        assert_eq!(gt.mean_hr_between(0.0, 600.0), Some(65.0));
        assert_eq!(gt.mean_hr_between(2000.0, 3000.0), None);
    }
}

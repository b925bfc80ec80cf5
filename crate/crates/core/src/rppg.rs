//! Classical pulse extraction: smoothness-priors detrending, zero-phase
//! Butterworth band-pass, FFT spectral-peak HR, and the GREEN / CHROM / POS
//! baseline estimators operating on block color traces.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stmap::{BlockTraces, ClipWindow, SpatialTemporalMap};

pub const DEFAULT_BAND_HZ: (f64, f64) = (0.7, 2.5);
pub const DEFAULT_DETREND_LAMBDA_30FPS: f64 = 300.0;
pub const MIN_FFT_LEN: usize = 8192;
pub const DEFAULT_POS_WINDOW_S: f64 = 1.6;
pub const DEFAULT_FILTER_ORDER: usize = 2;
const SNR_CAP_DB: f64 = 100.0;
/// Relative variation below which a pulse signal counts as flat.
const FLAT_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum RppgError {
    #[error("signal too short: {len} samples, need at least {min}")]
    TooShort { len: usize, min: usize },
    #[error("no spectral peak")]
    NoPeak,
    #[error("invalid band [{lo}, {hi}] Hz at {fps} fps")]
    InvalidBand { lo: f64, hi: f64, fps: f64 },
    #[error("degenerate channel")]
    DegenerateChannel,
    #[error("window of {window} samples longer than clip of {len}")]
    WindowTooLong { window: usize, len: usize },
    #[error("{method} needs 3-channel RGB traces, got {channels} channel(s)")]
    NotRgb { method: Estimator, channels: usize },
    #[error("unknown estimator {0:?} (expected green, chrom or pos)")]
    UnknownEstimator(String),
    #[error("non-finite samples")]
    NonFinite,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = std::result::Result<T, RppgError>;

#[derive(Debug, Clone, PartialEq)]
pub struct PulseSignal {
    pub samples: Vec<f64>,
    pub fps: f64,
}

impl PulseSignal {
    pub fn new(samples: Vec<f64>, fps: f64) -> Result<Self> {
        if !(fps.is_finite() && fps > 0.0) {
            return Err(RppgError::InvalidParameter(format!("fps {fps}")));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(RppgError::NonFinite);
        }
        Ok(Self { samples, fps })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HrEstimate {
    pub hr_bpm: f64,
    pub snr_db: Option<f64>,
    pub clip: Option<ClipWindow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub lo_hz: f64,
    pub hi_hz: f64,
}

impl Default for Band {
    fn default() -> Self {
        Self { lo_hz: DEFAULT_BAND_HZ.0, hi_hz: DEFAULT_BAND_HZ.1 }
    }
}

impl Band {
    fn check(&self, fps: f64) -> Result<()> {
        if self.lo_hz > 0.0 && self.lo_hz < self.hi_hz && self.hi_hz < 0.5 * fps {
            Ok(())
        } else {
            Err(RppgError::InvalidBand { lo: self.lo_hz, hi: self.hi_hz, fps })
        }
    }
}

/// Smoothness parameter scaled so the trend cutoff frequency stays fixed.
pub fn default_detrend_lambda(fps: f64) -> f64 {
    DEFAULT_DETREND_LAMBDA_30FPS * (fps / 30.0).powi(2)
}

/// Smoothness-priors detrending: `x - (I + lambda^2 D'D)^-1 x` with `D` the
/// second-difference operator.
pub fn detrend(signal: &PulseSignal, lambda: f64) -> Result<PulseSignal> {
    let n = signal.len();
    if n < 3 {
        return Err(RppgError::TooShort { len: n, min: 3 });
    }
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(RppgError::InvalidParameter(format!("detrend lambda {lambda}")));
    }
    let l2 = lambda * lambda;
    // symmetric pentadiagonal system: main, first and second super-diagonals
    let mut band = vec![[0.0f64; 3]; n];
    for b in band.iter_mut() {
        b[0] = 1.0;
    }
    const D: [f64; 3] = [1.0, -2.0, 1.0];
    for k in 0..n - 2 {
        for a in 0..3 {
            for b in a..3 {
                band[k + a][b - a] += l2 * D[a] * D[b];
            }
        }
    }
    let trend = solve_banded_spd(&band, &signal.samples);
    let samples = signal.samples.iter().zip(&trend).map(|(x, z)| x - z).collect();
    Ok(PulseSignal { samples, fps: signal.fps })
}

/// Cholesky solve of a symmetric positive definite matrix with two
/// super-diagonals; `band[i][d]` holds entry `(i, i + d)`.
fn solve_banded_spd(band: &[[f64; 3]], rhs: &[f64]) -> Vec<f64> {
    let n = band.len();
    // l[i][d] holds L(i, i - d)
    let mut l = vec![[0.0f64; 3]; n];
    for j in 0..n {
        let mut diag = band[j][0];
        for d in 1..=2.min(j) {
            diag -= l[j][d] * l[j][d];
        }
        let ljj = diag.sqrt();
        l[j][0] = ljj;
        for i in j + 1..(j + 3).min(n) {
            let mut v = band[j][i - j];
            // sum over k < j of L(i,k) L(j,k)
            for k in i.saturating_sub(2)..j {
                v -= l[i][i - k] * l[j][j - k];
            }
            l[i][i - j] = v / ljj;
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut v = rhs[i];
        for d in 1..=2.min(i) {
            v -= l[i][d] * y[i - d];
        }
        y[i] = v / l[i][0];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut v = y[i];
        for d in 1..=2 {
            if i + d < n {
                v -= l[i + d][d] * x[i + d];
            }
        }
        x[i] = v / l[i][0];
    }
    x
}

/// Second-order section `b0 + b1 z^-1 + b2 z^-2 / 1 + a1 z^-1 + a2 z^-2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    fn response(&self, w: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -w);
        let z2 = z1 * z1;
        (self.b[0] + z1 * self.b[1] + z2 * self.b[2]) / (1.0 + z1 * self.a[0] + z2 * self.a[1])
    }

    /// Steady-state transposed direct-form II state for a unit step input.
    fn step_state(&self) -> [f64; 2] {
        let g = self.b.iter().sum::<f64>() / (1.0 + self.a[0] + self.a[1]);
        let z2 = self.b[2] - self.a[1] * g;
        [self.b[1] - self.a[0] * g + z2, z2]
    }
}

/// Digital Butterworth band-pass as second-order sections, unit gain at the
/// band center.
pub fn butterworth_bandpass(order: usize, band: Band, fps: f64) -> Result<Vec<Biquad>> {
    band.check(fps)?;
    if order == 0 {
        return Err(RppgError::InvalidParameter("filter order must be positive".into()));
    }
    let fs2 = 2.0 * fps;
    let wl = fs2 * (PI * band.lo_hz / fps).tan();
    let wh = fs2 * (PI * band.hi_hz / fps).tan();
    let bw = wh - wl;
    let w0sq = wl * wh;

    let mut poles = Vec::with_capacity(2 * order);
    for k in 0..order {
        let p = Complex64::from_polar(1.0, PI * (2 * k + order + 1) as f64 / (2 * order) as f64);
        let pb = p * bw;
        let disc = (pb * pb - 4.0 * w0sq).sqrt();
        for s in [(pb + disc) * 0.5, (pb - disc) * 0.5] {
            poles.push((fs2 + s) / (fs2 - s));
        }
    }
    let mut sections = Vec::with_capacity(order);
    let mut reals = Vec::new();
    for z in &poles {
        if z.im > 1e-12 {
            sections.push(Biquad { b: [1.0, 0.0, -1.0], a: [-2.0 * z.re, z.norm_sqr()] });
        } else if z.im.abs() <= 1e-12 {
            reals.push(z.re);
        }
    }
    for pair in reals.chunks(2) {
        let [p, q] = pair else {
            return Err(RppgError::InvalidParameter("unpaired real pole".into()));
        };
        sections.push(Biquad { b: [1.0, 0.0, -1.0], a: [-(p + q), p * q] });
    }
    let wc = 2.0 * (w0sq.sqrt() / fs2).atan();
    let gain = sections.iter().map(|s| s.response(wc)).fold(Complex64::new(1.0, 0.0), |acc, h| acc * h).norm();
    for v in sections[0].b.iter_mut() {
        *v /= gain;
    }
    Ok(sections)
}

/// Magnitude response of the forward-backward (zero-phase) filter.
pub fn zero_phase_gain(sections: &[Biquad], freq_hz: f64, fps: f64) -> f64 {
    let w = 2.0 * PI * freq_hz / fps;
    sections.iter().map(|s| s.response(w).norm_sqr()).product()
}

fn sosfilt(sections: &[Biquad], x: &mut [f64]) {
    let mut scale = 1.0;
    let x0 = x[0];
    for s in sections {
        let zi = s.step_state();
        let mut z = [zi[0] * scale * x0, zi[1] * scale * x0];
        scale *= s.b.iter().sum::<f64>() / (1.0 + s.a[0] + s.a[1]);
        for v in x.iter_mut() {
            let input = *v;
            let y = s.b[0] * input + z[0];
            z[0] = s.b[1] * input - s.a[0] * y + z[1];
            z[1] = s.b[2] * input - s.a[1] * y;
            *v = y;
        }
    }
}

/// Forward-backward filtering with odd-extension padding.
pub fn filtfilt(sections: &[Biquad], signal: &[f64], pad: usize) -> Vec<f64> {
    let n = signal.len();
    if n == 0 {
        return Vec::new();
    }
    let pad = pad.min(n - 1);
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * signal[0] - signal[i]));
    ext.extend_from_slice(signal);
    ext.extend((1..=pad).map(|i| 2.0 * signal[n - 1] - signal[n - 1 - i]));
    sosfilt(sections, &mut ext);
    ext.reverse();
    sosfilt(sections, &mut ext);
    ext.reverse();
    ext[pad..pad + n].to_vec()
}

/// Zero-phase Butterworth band-pass (order 2 prototype, run forwards and
/// backwards).
pub fn bandpass(signal: &PulseSignal, band: Band) -> Result<PulseSignal> {
    bandpass_with_order(signal, band, DEFAULT_FILTER_ORDER)
}

pub fn bandpass_with_order(signal: &PulseSignal, band: Band, order: usize) -> Result<PulseSignal> {
    let sections = butterworth_bandpass(order, band, signal.fps)?;
    let pad = (3.0 * signal.fps / band.lo_hz).round() as usize;
    Ok(PulseSignal { samples: filtfilt(&sections, &signal.samples, pad), fps: signal.fps })
}

/// Dominant in-band frequency of the zero-padded magnitude spectrum, refined
/// by a parabola through the peak bin and its neighbours.
pub fn spectral_peak_hr(signal: &PulseSignal, band: Band) -> Result<HrEstimate> {
    let n = signal.len();
    let min = (2.0 * signal.fps).ceil() as usize;
    if n < min.max(3) {
        return Err(RppgError::TooShort { len: n, min: min.max(3) });
    }
    band.check(signal.fps)?;
    if signal.samples.iter().any(|v| !v.is_finite()) {
        return Err(RppgError::NonFinite);
    }
    let mean = signal.samples.iter().sum::<f64>() / n as f64;
    let nfft = n.next_power_of_two().max(MIN_FFT_LEN);
    let mut buf: Vec<Complex64> = signal.samples.iter().map(|v| Complex64::new(v - mean, 0.0)).collect();
    if buf.iter().all(|c| c.re == 0.0) {
        return Err(RppgError::NoPeak);
    }
    buf.resize(nfft, Complex64::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(nfft).process(&mut buf);
    let mag: Vec<f64> = buf[..=nfft / 2].iter().map(|c| c.norm()).collect();

    let bin_hz = signal.fps / nfft as f64;
    let k_lo = (band.lo_hz / bin_hz).ceil() as usize;
    let k_hi = ((band.hi_hz / bin_hz).floor() as usize).min(nfft / 2);
    let (k_peak, peak) = (k_lo..=k_hi)
        .map(|k| (k, mag[k]))
        .fold((k_lo, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });
    if !(peak > 0.0) {
        return Err(RppgError::NoPeak);
    }
    let mut offset = 0.0;
    if k_peak > 0 && k_peak < nfft / 2 {
        let (a, b, c) = (mag[k_peak - 1], mag[k_peak], mag[k_peak + 1]);
        let denom = a - 2.0 * b + c;
        if denom < 0.0 {
            offset = (0.5 * (a - c) / denom).clamp(-0.5, 0.5);
        }
    }
    let freq = ((k_peak as f64 + offset) * bin_hz).clamp(band.lo_hz, band.hi_hz);

    // power within one raw (unpadded) bin of the peak vs the rest of the band
    let half_width = ((nfft as f64 / n as f64).ceil() as usize).max(1);
    let (mut p_peak, mut p_band) = (0.0, 0.0);
    for (k, m) in mag.iter().enumerate().take(k_hi + 1).skip(k_lo) {
        let p = m * m;
        p_band += p;
        if k.abs_diff(k_peak) <= half_width {
            p_peak += p;
        }
    }
    let rest = p_band - p_peak;
    let snr_db = if rest > 0.0 { (10.0 * (p_peak / rest).log10()).min(SNR_CAP_DB) } else { SNR_CAP_DB };
    Ok(HrEstimate { hr_bpm: 60.0 * freq, snr_db: Some(snr_db), clip: None })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    Green,
    Chrom,
    Pos,
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Estimator::Green => "green",
            Estimator::Chrom => "chrom",
            Estimator::Pos => "pos",
        })
    }
}

impl FromStr for Estimator {
    type Err = RppgError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "green" => Ok(Self::Green),
            "chrom" => Ok(Self::Chrom),
            "pos" => Ok(Self::Pos),
            _ => Err(RppgError::UnknownEstimator(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RppgConfig {
    pub band: Band,
    /// `None` selects [`default_detrend_lambda`] for the signal's rate.
    pub detrend_lambda: Option<f64>,
    pub filter_order: usize,
    pub pos_window_s: f64,
}

impl Default for RppgConfig {
    fn default() -> Self {
        Self {
            band: Band::default(),
            detrend_lambda: None,
            filter_order: DEFAULT_FILTER_ORDER,
            pos_window_s: DEFAULT_POS_WINDOW_S,
        }
    }
}

impl Estimator {
    pub fn estimate(self, traces: &BlockTraces, cfg: &RppgConfig) -> Result<HrEstimate> {
        match self {
            Estimator::Green => estimate_green(traces, cfg),
            Estimator::Chrom => estimate_chrom(traces, cfg),
            Estimator::Pos => estimate_pos(traces, cfg),
        }
    }
}

/// Detrend, band-pass, spectral peak.
pub fn condition_and_peak(signal: &PulseSignal, cfg: &RppgConfig) -> Result<HrEstimate> {
    let lambda = cfg.detrend_lambda.unwrap_or_else(|| default_detrend_lambda(signal.fps));
    let detrended = detrend(signal, lambda)?;
    let filtered = bandpass_with_order(&detrended, cfg.band, cfg.filter_order)?;
    spectral_peak_hr(&filtered, cfg.band)
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn std_dev(x: &[f64]) -> f64 {
    let m = mean(x);
    (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64).sqrt()
}

/// Flat relative to `scale` means there is nothing to find a peak in.
fn ensure_varying(signal: &[f64], scale: f64) -> Result<()> {
    let s = std_dev(signal);
    if !(s.is_finite()) {
        return Err(RppgError::NonFinite);
    }
    if s <= FLAT_TOLERANCE * scale.abs().max(f64::MIN_POSITIVE) {
        return Err(RppgError::NoPeak);
    }
    Ok(())
}

fn require_rgb(method: Estimator, traces: &BlockTraces) -> Result<()> {
    if traces.c != 3 {
        return Err(RppgError::NotRgb { method, channels: traces.c });
    }
    Ok(())
}

/// Block-averaged green trace (channel 0 for single-channel traces).
pub fn estimate_green(traces: &BlockTraces, cfg: &RppgConfig) -> Result<HrEstimate> {
    let ch = if traces.c == 3 { 1 } else { 0 };
    let green = traces.block_average(ch);
    let level = mean(&green).abs();
    ensure_varying(&green, if level > 0.0 { level } else { 1.0 })?;
    condition_and_peak(&PulseSignal::new(green, traces.fps)?, cfg)
}

fn normalized_rows(traces: &BlockTraces, block: usize) -> Result<[Vec<f64>; 3]> {
    let mut rows: [Vec<f64>; 3] = Default::default();
    for (ch, row) in rows.iter_mut().enumerate() {
        let r = traces.row(block, ch);
        let m = mean(&r);
        if !(m.abs() > 1e-12) {
            return Err(RppgError::DegenerateChannel);
        }
        *row = r.into_iter().map(|v| v / m).collect();
    }
    Ok(rows)
}

/// Chrominance projection: `X = 3R - 2G`, `Y = 1.5R + G - 1.5B` on
/// mean-normalized channels, `S = X - (std X / std Y) Y`, averaged over blocks.
pub fn estimate_chrom(traces: &BlockTraces, cfg: &RppgConfig) -> Result<HrEstimate> {
    require_rgb(Estimator::Chrom, traces)?;
    let t = traces.t;
    let mut pulse = vec![0.0; t];
    let mut scale = 0.0;
    for b in 0..traces.n {
        let [r, g, bl] = normalized_rows(traces, b)?;
        let x: Vec<f64> = (0..t).map(|i| 3.0 * r[i] - 2.0 * g[i]).collect();
        let y: Vec<f64> = (0..t).map(|i| 1.5 * r[i] + g[i] - 1.5 * bl[i]).collect();
        let (sx, sy) = (std_dev(&x), std_dev(&y));
        let alpha = if sy > 0.0 { sx / sy } else { 0.0 };
        for i in 0..t {
            pulse[i] += x[i] - alpha * y[i];
        }
        scale += 1.0;
    }
    for v in &mut pulse {
        *v /= scale;
    }
    ensure_varying(&pulse, 1.0)?;
    condition_and_peak(&PulseSignal::new(pulse, traces.fps)?, cfg)
}

/// Plane-orthogonal-to-skin projection over sliding windows, overlap-added.
pub fn estimate_pos(traces: &BlockTraces, cfg: &RppgConfig) -> Result<HrEstimate> {
    require_rgb(Estimator::Pos, traces)?;
    let t = traces.t;
    let win = (cfg.pos_window_s * traces.fps).round() as usize;
    if win < 2 {
        return Err(RppgError::InvalidParameter(format!("POS window {win} samples")));
    }
    if win > t {
        return Err(RppgError::WindowTooLong { window: win, len: t });
    }
    let mut pulse = vec![0.0; t];
    let mut h = vec![0.0; win];
    let (mut s1, mut s2) = (vec![0.0; win], vec![0.0; win]);
    for b in 0..traces.n {
        let rows = [traces.row(b, 0), traces.row(b, 1), traces.row(b, 2)];
        for start in 0..=t - win {
            let mut m = [0.0; 3];
            for (ch, row) in rows.iter().enumerate() {
                m[ch] = mean(&row[start..start + win]);
                if !(m[ch].abs() > 1e-12) {
                    return Err(RppgError::DegenerateChannel);
                }
            }
            for i in 0..win {
                let (r, g, bl) = (rows[0][start + i] / m[0], rows[1][start + i] / m[1], rows[2][start + i] / m[2]);
                s1[i] = g - bl;
                s2[i] = g + bl - 2.0 * r;
            }
            let sd2 = std_dev(&s2);
            let alpha = if sd2 > 0.0 { std_dev(&s1) / sd2 } else { 0.0 };
            for i in 0..win {
                h[i] = s1[i] + alpha * s2[i];
            }
            let hm = mean(&h);
            for i in 0..win {
                pulse[start + i] += h[i] - hm;
            }
        }
    }
    let inv = 1.0 / traces.n as f64;
    for v in &mut pulse {
        *v *= inv;
    }
    ensure_varying(&pulse, 1.0)?;
    condition_and_peak(&PulseSignal::new(pulse, traces.fps)?, cfg)
}

/// Map rows as traces (f32 to f64), for estimating from stored maps.
pub fn traces_from_map(map: &SpatialTemporalMap) -> BlockTraces {
    BlockTraces {
        t: map.t,
        n: map.n,
        c: map.c,
        fps: map.fps,
        data: map.data.iter().map(|&v| v as f64).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sine(freq: f64, amp: f64, n: usize, fps: f64) -> Vec<f64> {
        (0..n).map(|i| amp * (2.0 * PI * freq * i as f64 / fps).sin()).collect()
    }

    fn dense_detrend(x: &[f64], lambda: f64) -> Vec<f64> {
        use nalgebra::{DMatrix, DVector};
        let n = x.len();
        let mut d = DMatrix::<f64>::zeros(n - 2, n);
        for k in 0..n - 2 {
            d[(k, k)] = 1.0;
            d[(k, k + 1)] = -2.0;
            d[(k, k + 2)] = 1.0;
        }
        let a = DMatrix::<f64>::identity(n, n) + d.transpose() * &d * (lambda * lambda);
        let xv = DVector::from_column_slice(x);
        let z = a.lu().solve(&xv).unwrap();
        (xv - z).iter().copied().collect()
    }

    #[test]
    fn detrend_matches_dense_solve() {
        let x: Vec<f64> = (0..120).map(|i| (i as f64 * 0.37).sin() * 3.0 + 0.02 * (i * i) as f64).collect();
        for lambda in [1.0, 10.0, 300.0] {
            let fast = detrend(&PulseSignal::new(x.clone(), 30.0).unwrap(), lambda).unwrap();
            let dense = dense_detrend(&x, lambda);
            for (a, b) in fast.samples.iter().zip(&dense) {
                assert!((a - b).abs() < 1e-8, "lambda {lambda}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn detrend_examples() {
        let ramp: Vec<f64> = (0..300).map(|i| i as f64).collect();
        let out = detrend(&PulseSignal::new(ramp, 30.0).unwrap(), 300.0).unwrap();
        let worst = out.samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(worst < 0.01 * 299.0, "{worst}");

        let zero = detrend(&PulseSignal::new(vec![0.0; 50], 30.0).unwrap(), 300.0).unwrap();
        assert!(zero.samples.iter().all(|v| *v == 0.0));

        assert!(matches!(
            detrend(&PulseSignal::new(vec![1.0, 2.0], 30.0).unwrap(), 300.0),
            Err(RppgError::TooShort { .. })
        ));
    }

    fn rms(x: &[f64]) -> f64 {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }

    #[test]
    fn bandpass_response() {
        let sections = butterworth_bandpass(2, Band::default(), 30.0).unwrap();
        // frequency-response evaluation of the designed filter
        assert!(zero_phase_gain(&sections, 1.2, 30.0) >= 0.9);
        assert!(zero_phase_gain(&sections, 0.1, 30.0) <= 0.1);
        let center = (0.7f64 * 2.5).sqrt();
        assert!(zero_phase_gain(&sections, center, 30.0) > 0.99);

        // time domain, away from the edges
        let inner = |v: &[f64]| rms(&v[60..240]);
        let x = sine(1.2, 1.0, 300, 30.0);
        let y = bandpass(&PulseSignal::new(x.clone(), 30.0).unwrap(), Band::default()).unwrap();
        assert!(inner(&y.samples) >= 0.9 * inner(&x));

        let drift = sine(0.1, 1.0, 300, 30.0);
        let y = bandpass(&PulseSignal::new(drift.clone(), 30.0).unwrap(), Band::default()).unwrap();
        assert!(rms(&y.samples) <= 0.1 * rms(&drift), "{}", rms(&y.samples));
    }

    #[test]
    fn invalid_band_rejected() {
        let s = PulseSignal::new(sine(1.0, 1.0, 100, 30.0), 30.0).unwrap();
        assert!(matches!(bandpass(&s, Band { lo_hz: 2.0, hi_hz: 1.0 }), Err(RppgError::InvalidBand { .. })));
        assert!(matches!(bandpass(&s, Band { lo_hz: 0.7, hi_hz: 16.0 }), Err(RppgError::InvalidBand { .. })));
    }

    #[test]
    fn spectral_peak_examples() {
        let s = PulseSignal::new(sine(1.2, 1.0, 300, 30.0), 30.0).unwrap();
        let hr = spectral_peak_hr(&s, Band::default()).unwrap();
        assert!((hr.hr_bpm - 72.0).abs() <= 0.5, "{}", hr.hr_bpm);

        let mixed: Vec<f64> =
            sine(1.0, 1.0, 300, 30.0).iter().zip(sine(2.0, 0.3, 300, 30.0)).map(|(a, b)| a + b).collect();
        let hr = spectral_peak_hr(&PulseSignal::new(mixed, 30.0).unwrap(), Band::default()).unwrap();
        assert!((hr.hr_bpm - 60.0).abs() <= 0.5, "{}", hr.hr_bpm);

        let zero = PulseSignal::new(vec![0.0; 300], 30.0).unwrap();
        let err = spectral_peak_hr(&zero, Band::default()).unwrap_err();
        assert_eq!(err.to_string(), "no spectral peak");
    }

    proptest! {
        #[test]
        fn pure_tone_within_half_bpm(bpm in 45.0f64..148.0, phase in 0.0f64..std::f64::consts::TAU) {
            let f = bpm / 60.0;
            let x: Vec<f64> = (0..300).map(|i| (2.0 * PI * f * i as f64 / 30.0 + phase).sin()).collect();
            let hr = spectral_peak_hr(&PulseSignal::new(x, 30.0).unwrap(), Band::default()).unwrap();
            prop_assert!((hr.hr_bpm - bpm).abs() < 0.5, "{} vs {}", hr.hr_bpm, bpm);
        }

        #[test]
        fn peak_invariant_to_scale_and_offset(k in 0.01f64..100.0, c in -1e3f64..1e3) {
            let x = sine(1.37, 1.0, 300, 30.0);
            let base = spectral_peak_hr(&PulseSignal::new(x.clone(), 30.0).unwrap(), Band::default()).unwrap();
            let y: Vec<f64> = x.iter().map(|v| k * v + c).collect();
            let moved = spectral_peak_hr(&PulseSignal::new(y, 30.0).unwrap(), Band::default()).unwrap();
            prop_assert!((base.hr_bpm - moved.hr_bpm).abs() < 1e-6);
        }

        #[test]
        fn conditioning_is_linear(k in 0.01f64..100.0) {
            let x: Vec<f64> = (0..200).map(|i| (i as f64 * 0.3).sin() + 0.01 * i as f64).collect();
            let s = PulseSignal::new(x.clone(), 30.0).unwrap();
            let a = bandpass(&detrend(&s, 300.0).unwrap(), Band::default()).unwrap();
            let sk = PulseSignal::new(x.iter().map(|v| v * k).collect(), 30.0).unwrap();
            let b = bandpass(&detrend(&sk, 300.0).unwrap(), Band::default()).unwrap();
            for (u, v) in a.samples.iter().zip(&b.samples) {
                prop_assert!((u * k - v).abs() <= 1e-9 * (1.0 + v.abs()));
            }
        }
    }

    fn pulse_traces(bpm: f64, t: usize, n: usize, drift: f64) -> BlockTraces {
        let base = [180.0, 120.0, 100.0];
        let ratio = [0.5, 1.0, 0.7];
        let mut data = Vec::with_capacity(t * n * 3);
        for ti in 0..t {
            let time = ti as f64 / 30.0;
            let p = (2.0 * PI * bpm / 60.0 * time).sin();
            let d = drift * (2.0 * PI * 0.1 * time).sin();
            for b in 0..n {
                for ch in 0..3 {
                    let level = base[ch] + b as f64;
                    data.push(level * (1.0 + 0.01 * (ratio[ch] * p + d)));
                }
            }
        }
        BlockTraces::new(t, n, 3, 30.0, data).unwrap()
    }

    #[test]
    fn estimators_recover_clean_pulse() {
        let cfg = RppgConfig::default();
        for method in [Estimator::Green, Estimator::Chrom, Estimator::Pos] {
            for bpm in [72.0, 100.0] {
                let hr = method.estimate(&pulse_traces(bpm, 300, 4, 0.0), &cfg).unwrap();
                assert!((hr.hr_bpm - bpm).abs() <= 2.0, "{method} {bpm}: {}", hr.hr_bpm);
            }
            let hr = method.estimate(&pulse_traces(72.0, 300, 4, 2.0), &cfg).unwrap();
            assert!((hr.hr_bpm - 72.0).abs() <= 3.0, "{method} drift: {}", hr.hr_bpm);
        }
    }

    #[test]
    fn flat_traces_have_no_peak() {
        let cfg = RppgConfig::default();
        let flat = BlockTraces::new(300, 2, 3, 30.0, [180.0, 120.0, 100.0].repeat(600)).unwrap();
        for method in [Estimator::Green, Estimator::Chrom, Estimator::Pos] {
            assert!(matches!(method.estimate(&flat, &cfg), Err(RppgError::NoPeak)), "{method}");
        }
    }

    #[test]
    fn chrom_equal_channels_no_peak() {
        // X = 3g - 2g = g and Y = 1.5g + g - 1.5g = g, so S = g - g = 0
        let mut data = Vec::new();
        for ti in 0..300 {
            let v = 150.0 * (1.0 + 0.01 * (2.0 * PI * 1.2 * ti as f64 / 30.0).sin());
            data.extend([v, v, v]);
        }
        let traces = BlockTraces::new(300, 1, 3, 30.0, data).unwrap();
        let x: Vec<f64> = (0..300).map(|i| traces.at(i, 0, 0) / mean(&traces.row(0, 0))).collect();
        let s: Vec<f64> = x.iter().map(|g| (3.0 * g - 2.0 * g) - (1.5 * g + g - 1.5 * g)).collect();
        assert!(std_dev(&s) < 1e-12);
        assert!(matches!(estimate_chrom(&traces, &RppgConfig::default()), Err(RppgError::NoPeak)));
    }

    #[test]
    fn degenerate_channel_and_window_errors() {
        let cfg = RppgConfig::default();
        let mut zeros = pulse_traces(72.0, 300, 1, 0.0);
        for t in 0..300 {
            zeros.data[t * 3 + 2] = 0.0;
        }
        let err = estimate_chrom(&zeros, &cfg).unwrap_err();
        assert_eq!(err.to_string(), "degenerate channel");
        assert!(matches!(estimate_pos(&zeros, &cfg), Err(RppgError::DegenerateChannel)));

        let short = pulse_traces(72.0, 40, 1, 0.0);
        assert!(matches!(estimate_pos(&short, &cfg), Err(RppgError::WindowTooLong { .. })));
    }

    #[test]
    fn estimator_names() {
        assert_eq!("POS".parse::<Estimator>().unwrap(), Estimator::Pos);
        assert!(matches!("ica".parse::<Estimator>(), Err(RppgError::UnknownEstimator(_))));
    }
}

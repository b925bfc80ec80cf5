//! `synth`: synthetic subjects in the raw dataset layout.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rhythmkit_core::ingest::{write_frame_sequence, write_ground_truth, write_landmarks, GROUND_TRUTH_FILE, LANDMARKS_FILE};
use rhythmkit_core::synth::{gen_synthetic_frames, HrProfile, SynthSpec};
use rhythmkit_core::FrameSequence;

use crate::error::{CliError, Result};

/// Heart rate per video: the spec's own profile, or a uniform draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HrChoice {
    FromSpec,
    Uniform { min: f64, max: f64 },
}

#[derive(Debug, Clone)]
pub struct SynthOptions {
    pub base: SynthSpec,
    pub subjects: usize,
    pub videos: usize,
    pub hr: HrChoice,
    pub width: usize,
    pub height: usize,
    pub seed: u64,
}

pub fn subject_name(i: usize) -> String {
    format!("s{i:03}")
}

pub fn video_name(i: usize) -> String {
    format!("v{i:02}")
}

/// Per-video specs, drawn from one seeded stream in subject-major order.
pub fn plan(opts: &SynthOptions) -> Result<Vec<(String, String, SynthSpec)>> {
    if opts.subjects == 0 || opts.videos == 0 {
        return Err(CliError::Usage("need at least one subject and one video".into()));
    }
    if let HrChoice::Uniform { min, max } = opts.hr {
        if !(min.is_finite() && max.is_finite() && min <= max) {
            return Err(CliError::Usage(format!("invalid heart-rate range {min}..{max}")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut out = Vec::with_capacity(opts.subjects * opts.videos);
    for s in 0..opts.subjects {
        for v in 0..opts.videos {
            let mut spec = opts.base.clone();
            spec.seed = rng.random();
            if let HrChoice::Uniform { min, max } = opts.hr {
                let u: f64 = rng.random();
                spec.hr_bpm = HrProfile::Constant(min + (max - min) * u);
            }
            spec.validate()?;
            out.push((subject_name(s), video_name(v), spec));
        }
    }
    Ok(out)
}

/// Renders every planned video under `out/<subject>/<video>/`; returns the
/// number written.
pub fn run(out: &Path, opts: &SynthOptions) -> Result<usize> {
    let videos = plan(opts)?;
    videos.par_iter().try_for_each(|(subject, video, spec)| -> Result<()> {
        let dir = out.join(subject).join(video);
        let v = gen_synthetic_frames(spec, opts.width, opts.height)?;
        let seq = FrameSequence { subject_id: subject.clone(), video_id: video.clone(), ..v.sequence };
        write_frame_sequence(&seq, &dir)?;
        write_landmarks(&v.landmarks, &dir.join(LANDMARKS_FILE))?;
        write_ground_truth(&v.ground_truth, &dir.join(GROUND_TRUTH_FILE))?;
        Ok(())
    })?;
    Ok(videos.len())
}

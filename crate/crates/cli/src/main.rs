use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rhythmkit::dataset::{parse_grid, RawOptions};
use rhythmkit::evaluate::EvalOptions;
use rhythmkit::model_cmd::{FoldSelect, TrainOptions};
use rhythmkit::synth_cmd::{HrChoice, SynthOptions};
use rhythmkit::{estimate, evaluate, extract, model_cmd, synth_cmd, CliError, Result};
use rhythmkit_core::ingest::DEFAULT_LANDMARK_WINDOW;
use rhythmkit_core::rppg::Estimator;
use rhythmkit_core::stmap::{DEFAULT_STEP_SECONDS, DEFAULT_WINDOW_FRAMES};
use rhythmkit_core::synth::SynthSpec;
use rhythmkit_core::{ColorSpace, LandmarkSchema};
use rhythmkit_nn::model::{BackboneVariant, DEFAULT_FPS_TRAIN, DEFAULT_GRU_HIDDEN};
use rhythmkit_nn::train::{LrSchedule, TrainConfig};

/// Remote heart-rate estimation from facial frame sequences.
#[derive(Debug, Parser)]
#[command(name = "rhythmkit", version)]
struct Cli {
    /// Seed for every random choice (model init, shuffling, masking, folds,
    /// synthesis).
    #[arg(long, global = true, env = "RHYTHMKIT_SEED")]
    seed: Option<u64>,
    /// Worker threads; outputs do not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build spatial-temporal maps (.stm) from raw video directories.
    Extract {
        /// Dataset root with <subject>/<video>/frames.bin layout.
        root: PathBuf,
        /// Output directory for maps.
        out: PathBuf,
        #[command(flatten)]
        raw: RawArgs,
        /// Color space of the maps.
        #[arg(long, default_value = "yuv")]
        color: ColorSpace,
    },
    /// Classical spectral HR estimation per clip and per video.
    Estimate {
        /// Raw dataset root, or a directory of rgb maps.
        input: PathBuf,
        #[arg(long, default_value = "pos")]
        method: Estimator,
        /// Directory for clips.csv and videos.csv.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        raw: RawArgs,
    },
    /// Train the learned estimator on labelled maps.
    Train(TrainArgs),
    /// Predict HR for maps with a trained model.
    Infer {
        maps: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Directory for clips.csv and videos.csv.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        folds: FoldArgs,
    },
    /// Error metrics and agreement exports from estimate tables.
    Evaluate {
        /// CSV files with hr_bpm and gt_hr_bpm columns.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Raw dataset root; replaces gt_hr_bpm with each video's mean
        /// ground truth, matched on subject_id and video_id.
        #[arg(long)]
        gt: Option<PathBuf>,
        /// Estimator name per input, in order.
        #[arg(long = "name")]
        names: Vec<String>,
        /// Also report per-fold metrics over this many subject folds.
        #[arg(long)]
        folds: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write synthetic videos with known heart rate in the raw layout.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
struct RawArgs {
    /// Clip length in frames.
    #[arg(long, default_value_t = DEFAULT_WINDOW_FRAMES)]
    window: usize,
    /// Clip step in seconds.
    #[arg(long, default_value_t = DEFAULT_STEP_SECONDS)]
    step: f64,
    /// ROI grid as ROWSxCOLS.
    #[arg(long, default_value = "5x5", value_parser = parse_grid)]
    grid: (usize, usize),
    /// Landmark index schema (TOML); the built-in 81-point layout otherwise.
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Landmark smoothing window in frames (odd).
    #[arg(long, default_value_t = DEFAULT_LANDMARK_WINDOW)]
    landmark_window: usize,
    /// Resample frames to this rate before extraction.
    #[arg(long)]
    fps: Option<f64>,
}

impl RawArgs {
    fn options(&self) -> Result<RawOptions> {
        let schema = match &self.schema {
            Some(p) => LandmarkSchema::load(p)?,
            None => LandmarkSchema::default(),
        };
        Ok(RawOptions {
            window: self.window,
            step_s: self.step,
            grid: self.grid,
            schema,
            landmark_window: self.landmark_window,
            target_fps: self.fps,
        })
    }
}

#[derive(Debug, Args)]
struct FoldArgs {
    /// Number of subject-exclusive folds.
    #[arg(long, requires = "fold")]
    folds: Option<usize>,
    /// Held-out fold index: excluded by train, selected by infer.
    #[arg(long, requires = "folds")]
    fold: Option<usize>,
}

impl FoldArgs {
    fn select(&self, seed: u64) -> Option<FoldSelect> {
        Some(FoldSelect { k: self.folds?, index: self.fold?, seed })
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Backbone {
    Compact,
    Resnet18,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Schedule {
    Constant,
    Cosine,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Directory of labelled maps.
    maps: PathBuf,
    /// Checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Training settings (TOML); flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// [default: 50]
    #[arg(long)]
    epochs: Option<usize>,
    /// Adam learning rate [default: 0.001]
    #[arg(long)]
    lr: Option<f64>,
    /// Smooth-loss weight [default: 100]
    #[arg(long)]
    lambda: Option<f64>,
    /// Groups per optimizer step [default: 4]
    #[arg(long)]
    batch_size: Option<usize>,
    /// Adjacent clips per smooth-loss group and GRU sequence [default: 6]
    #[arg(long)]
    group_size: Option<usize>,
    /// Mask augmentation probability [default: 0.5]
    #[arg(long)]
    mask_prob: Option<f64>,
    /// [default: 10]
    #[arg(long)]
    mask_min: Option<usize>,
    /// [default: 30]
    #[arg(long)]
    mask_max: Option<usize>,
    /// [default: constant]
    #[arg(long)]
    lr_schedule: Option<Schedule>,
    #[arg(long, value_enum, default_value = "compact")]
    backbone: Backbone,
    /// Stage widths as four comma-separated integers.
    #[arg(long, value_delimiter = ',')]
    widths: Option<Vec<usize>>,
    /// Per-clip regression without the temporal GRU head.
    #[arg(long)]
    no_gru: bool,
    #[arg(long, default_value_t = DEFAULT_GRU_HIDDEN)]
    gru_hidden: usize,
    /// Frame rate the model's HR outputs refer to.
    #[arg(long, default_value_t = DEFAULT_FPS_TRAIN)]
    fps_train: f64,
    #[command(flatten)]
    folds: FoldArgs,
    /// Per-epoch loss log (CSV).
    #[arg(long)]
    log: Option<PathBuf>,
}

impl TrainArgs {
    fn options(&self, seed: Option<u64>) -> Result<TrainOptions> {
        let mut cfg = match &self.config {
            Some(p) => TrainConfig::load(p)?,
            None => TrainConfig::default(),
        };
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { cfg.$f = v; })* };
        }
        set!(epochs, lr, lambda, batch_size, group_size, mask_prob, mask_min, mask_max);
        if let Some(s) = self.lr_schedule {
            cfg.lr_schedule = match s {
                Schedule::Constant => LrSchedule::Constant,
                Schedule::Cosine => LrSchedule::Cosine,
            };
        }
        if let Some(s) = seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        let widths = match &self.widths {
            Some(w) if w.len() == 4 && !w.contains(&0) => Some([w[0], w[1], w[2], w[3]]),
            Some(w) => return Err(CliError::Usage(format!("--widths needs four positive integers, got {w:?}"))),
            None => None,
        };
        let folds = self.folds.select(cfg.seed);
        Ok(TrainOptions {
            variant: match self.backbone {
                Backbone::Compact => BackboneVariant::Compact,
                Backbone::Resnet18 => BackboneVariant::Resnet18,
            },
            widths,
            use_gru: !self.no_gru,
            gru_hidden: self.gru_hidden,
            fps_train: self.fps_train,
            folds,
            train: cfg,
        })
    }
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    /// Base generator settings (TOML).
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    subjects: usize,
    /// Videos per subject.
    #[arg(long, default_value_t = 1)]
    videos: usize,
    /// Fixed heart rate for every video.
    #[arg(long, conflicts_with_all = ["hr_min", "hr_max"])]
    hr: Option<f64>,
    /// Lower end of a uniform heart-rate draw per video.
    #[arg(long, requires = "hr_max")]
    hr_min: Option<f64>,
    #[arg(long, requires = "hr_min")]
    hr_max: Option<f64>,
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long)]
    fps: Option<f64>,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
}

impl SynthArgs {
    fn options(&self, seed: Option<u64>) -> Result<SynthOptions> {
        let mut base = match &self.spec {
            Some(p) => SynthSpec::load(p)?,
            None => SynthSpec::default(),
        };
        if let Some(hr) = self.hr {
            base.hr_bpm = rhythmkit_core::synth::HrProfile::Constant(hr);
        }
        if let Some(d) = self.duration {
            base.duration_s = d;
        }
        if let Some(f) = self.fps {
            base.fps = f;
        }
        base.validate()?;
        let hr = match (self.hr_min, self.hr_max) {
            (Some(min), Some(max)) => HrChoice::Uniform { min, max },
            _ => HrChoice::FromSpec,
        };
        Ok(SynthOptions {
            seed: seed.unwrap_or(base.seed),
            base,
            subjects: self.subjects,
            videos: self.videos,
            hr,
            width: self.width,
            height: self.height,
        })
    }
}

fn execute(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::Extract { root, out, raw, color } => {
            let s = extract::run(&root, &out, &raw.options()?, color)?;
            if s.skipped > 0 {
                eprintln!("warning: skipped {} clips without usable landmarks", s.skipped);
            }
            println!("extracted {} clips from {} videos into {}", s.clips, s.videos, out.display());
        }
        Command::Estimate { input, method, out, raw } => {
            let (clips, videos) = estimate::run(&input, &out, method, &raw.options()?)?;
            let ok = clips.iter().filter(|c| c.hr_bpm.is_some()).count();
            println!("{method}: {ok}/{} clips, {} videos -> {}", clips.len(), videos.len(), out.display());
        }
        Command::Train(args) => {
            let opts = args.options(seed)?;
            let total = opts.train.epochs;
            let s = model_cmd::run_train(&args.maps, &args.out, &opts, args.log.as_deref(), |e| {
                eprintln!(
                    "epoch {}/{total}: l1 {:.3} smooth {:.3} total {:.3} pred_std {:.2} lr {:.2e}",
                    e.epoch + 1,
                    e.l1,
                    e.smooth,
                    e.total,
                    e.pred_std,
                    e.lr
                );
            })?;
            if s.collapsed {
                eprintln!("warning: predictions barely vary across clips; try a smaller --lambda");
            }
            println!("trained on {} clips from {} videos -> {}", s.clips, s.videos, args.out.display());
        }
        Command::Infer { maps, model, out, folds } => {
            let (clips, videos) = model_cmd::run_infer(&maps, &model, &out, folds.select(seed.unwrap_or(0)))?;
            println!("predicted {} clips, {} videos -> {}", clips.len(), videos.len(), out.display());
        }
        Command::Evaluate { inputs, gt, names, folds, out } => {
            let opts = EvalOptions { names, ground_truth: gt, folds, seed: seed.unwrap_or(0) };
            let report = evaluate::run(&inputs, &out, &opts)?;
            print!("{}", rhythmkit_core::eval::results_table(&report.rows));
        }
        Command::Synth(args) => {
            let n = synth_cmd::run(&args.out, &args.options(seed)?)?;
            println!("wrote {n} synthetic videos to {}", args.out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

//! `csk`: command-line front end for the center-keypoint segmentation core.
//!
//! Exit status: 0 on success, 2 on usage errors (bad flags, bad config,
//! violated preconditions), 1 on data errors (unreadable or malformed input).

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};

use config::{ConfigArgs, RunConfig};

/// Marks an error as a usage error (exit status 2).
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug, Parser)]
#[command(name = "csk", version, about = "Center-keypoint instance segmentation toolkit")]
struct Cli {
    /// Config file with `key = value` lines
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(flatten)]
    overrides: ConfigArgs,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalKind {
    /// Instance-mask JSON files (or directories of them)
    Mask,
    /// Boxes CSV files
    Box,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Encode ground-truth boxes into heatmap, wh and offset FMAP files
    EncodeGt {
        /// Boxes CSV (score column optional)
        #[arg(long)]
        boxes: PathBuf,
        #[arg(long)]
        height: usize,
        #[arg(long)]
        width: usize,
        /// Output directory; one subdirectory per image id
        #[arg(long)]
        out: PathBuf,
        /// Encode only this image
        #[arg(long)]
        image_id: Option<String>,
    },
    /// Decode heatmap, wh and offset FMAP files into a boxes CSV
    Decode {
        /// Directory with one `<image_id>/{heatmap,wh,offset}.fmap` set per image
        #[arg(long)]
        maps: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Crop, paste and threshold one mask per detection
    Segment {
        /// Detections CSV
        #[arg(long)]
        boxes: PathBuf,
        /// Directory with `<image_id>/pyramid_s<stride>.fmap` membership pyramids
        #[arg(long)]
        pyramids: PathBuf,
        /// Output directory; writes `<image_id>.json`
        #[arg(long)]
        out: PathBuf,
        /// Pyramid level the mask head reads
        #[arg(long, default_value_t = 0)]
        level: usize,
    },
    /// Draw uncertainty-biased points from a probability mask
    SamplePoints {
        /// Single-channel FMAP mask probabilities
        #[arg(long)]
        mask: PathBuf,
        /// Named (k, beta) preset; overrides k and beta_sample
        #[arg(long)]
        strategy: Option<String>,
        /// RNG stream (e.g. ROI index)
        #[arg(long, default_value_t = 0)]
        stream: u64,
        /// Output CSV (stdout when omitted)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Average precision over IOU thresholds 0.50:0.05:0.95
    EvalAp {
        /// Prediction files or directories
        #[arg(long, required = true, num_args = 1..)]
        pred: Vec<PathBuf>,
        /// Ground-truth files or directories
        #[arg(long, required = true, num_args = 1..)]
        gt: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = EvalKind::Mask)]
        kind: EvalKind,
        /// Also report bestDice, diffFG, absDiffFG and FgBgDice (mask kind)
        #[arg(long)]
        leaf: bool,
        /// Output CSV (stdout when omitted)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate synthetic scenes with ground truth and ideal pyramids
    SynthGen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        scenes: usize,
        #[arg(long, default_value_t = 512)]
        height: usize,
        #[arg(long, default_value_t = 512)]
        width: usize,
        /// Instances requested per scene
        #[arg(long, default_value_t = 6)]
        count: usize,
        #[arg(long, default_value_t = 8)]
        min_size: usize,
        #[arg(long, default_value_t = 64)]
        max_size: usize,
        #[arg(long, default_value_t = 0.3)]
        max_overlap: f64,
        #[arg(long, default_value_t = 8.0)]
        min_center_distance: f64,
        /// Add thin protrusions to some shapes
        #[arg(long)]
        protrusions: bool,
    },
    /// Compare analytic loss gradients with finite differences
    GradCheck {
        #[arg(long, default_value_t = 100)]
        instances: usize,
        /// Output CSV (stdout when omitted)
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn configure_threads() -> anyhow::Result<()> {
    let Ok(raw) = std::env::var("CSK_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| UsageError(format!("CSK_THREADS must be a non-negative integer, got {raw:?}")))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| anyhow::anyhow!("cannot start thread pool: {e}"))?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    configure_threads()?;
    let cfg = RunConfig::resolve(cli.config.as_deref(), &cli.overrides)?;
    match cli.command {
        Command::EncodeGt {
            boxes,
            height,
            width,
            out,
            image_id,
        } => commands::encode_gt(&cfg, &boxes, height, width, &out, image_id.as_deref()),
        Command::Decode { maps, out } => commands::decode(&cfg, &maps, &out),
        Command::Segment {
            boxes,
            pyramids,
            out,
            level,
        } => commands::segment(&cfg, &boxes, &pyramids, &out, level),
        Command::SamplePoints {
            mask,
            strategy,
            stream,
            out,
        } => commands::sample_points(&cfg, &mask, strategy.as_deref(), stream, out.as_deref()),
        Command::EvalAp {
            pred,
            gt,
            kind,
            leaf,
            out,
        } => commands::eval_ap(&pred, &gt, kind, leaf, out.as_deref()),
        Command::SynthGen {
            out,
            scenes,
            height,
            width,
            count,
            min_size,
            max_size,
            max_overlap,
            min_center_distance,
            protrusions,
        } => {
            let params = csk_synth::SceneParams {
                image_h: height,
                image_w: width,
                count,
                min_size,
                max_size,
                max_overlap,
                protrusions,
                min_center_distance,
                ..csk_synth::SceneParams::default()
            };
            commands::synth_gen(&cfg, &params, scenes, &out)
        }
        Command::GradCheck { instances, out } => commands::grad_check(&cfg, instances, out.as_deref()),
    }
}

fn is_usage(err: &anyhow::Error) -> bool {
    err.chain().any(|e| {
        e.is::<UsageError>() || e.downcast_ref::<csk_core::Error>().is_some_and(|e| e.is_usage())
    })
}

fn main() -> ExitCode {
    let command = Cli::command().after_help(RunConfig::keys_help());
    let matches = command.get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            if is_usage(&err) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rotext_cli::{
    cmd_eval, cmd_gen_targets, cmd_infer, cmd_loss_check, CliError, ConfigOverrides, TargetOptions,
};
use rotext_core::eval::DEFAULT_EVAL_IOU;
use rotext_core::losses::gradcheck::{LossKind, MAX_REL_ERROR};
use rotext_core::targets::DEFAULT_SHRINK;

#[derive(Parser)]
#[command(
    name = "rotext",
    version,
    about = "Rotated scene-text detection post-processing and checks"
)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct FilterArgs {
    #[arg(long)]
    base_size: Option<f64>,
    #[arg(long = "t-d")]
    t_d: Option<f64>,
    #[arg(long = "t-r")]
    t_r: Option<f64>,
    #[arg(long)]
    nms_iou: Option<f64>,
    #[arg(long)]
    score_thresh: Option<f64>,
    #[arg(long)]
    topk: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Decode head outputs listed in a manifest into detections.
    Infer {
        manifest: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[command(flatten)]
        filter: FilterArgs,
    },
    /// Rasterize ICDAR ground truth into per-level target maps.
    GenTargets {
        gt: PathBuf,
        #[arg(long)]
        height: usize,
        #[arg(long)]
        width: usize,
        #[arg(short, long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SHRINK)]
        shrink: f64,
        /// Also write perfect-prediction logits and a manifest for `infer`.
        #[arg(long)]
        as_predictions: bool,
        #[arg(long, default_value_t = 640.0)]
        base_size: f64,
    },
    /// Compare analytic loss gradients against finite differences.
    LossCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        cases: usize,
        /// Scale one loss's analytic gradient to exercise the failure path.
        #[arg(long, hide = true)]
        corrupt: Option<String>,
    },
    /// Precision, recall and F-measure of detections against ground truth.
    Eval {
        detections: PathBuf,
        gt: PathBuf,
        #[arg(long, default_value_t = DEFAULT_EVAL_IOU)]
        iou: f64,
    },
}

fn run(cli: Cli) -> Result<bool, CliError> {
    match cli.command {
        Command::Infer {
            manifest,
            output,
            filter,
        } => {
            let overrides = ConfigOverrides {
                base_size: filter.base_size,
                t_d: filter.t_d,
                t_r: filter.t_r,
                nms_iou: filter.nms_iou,
                score_thresh: filter.score_thresh,
                topk: filter.topk,
            };
            let dets = cmd_infer(&manifest, &output, &overrides)?;
            eprintln!("{} detections written to {}", dets.len(), output.display());
            Ok(true)
        }
        Command::GenTargets {
            gt,
            height,
            width,
            out_dir,
            shrink,
            as_predictions,
            base_size,
        } => {
            let opts = TargetOptions {
                image_height: height,
                image_width: width,
                shrink,
                predictions_base_size: as_predictions.then_some(base_size),
            };
            let summary = cmd_gen_targets(&gt, &out_dir, &opts)?;
            println!(
                "{}",
                serde_json::to_string(&summary).expect("summary serializes")
            );
            Ok(true)
        }
        Command::LossCheck {
            seed,
            cases,
            corrupt,
        } => {
            let corrupt = match corrupt.as_deref() {
                None => None,
                Some(name) => Some(
                    LossKind::from_name(name)
                        .ok_or_else(|| CliError::Validation(format!("unknown loss {name:?}")))?,
                ),
            };
            let (report, ok) = cmd_loss_check(seed, cases, corrupt);
            for r in &report {
                println!(
                    "{:<14} cases={:<4} max_rel_error={:.3e} {}",
                    r.loss.name(),
                    r.cases,
                    r.max_rel_error,
                    if r.passed() { "ok" } else { "FAIL" }
                );
            }
            if !ok {
                eprintln!("gradient check failed (threshold {MAX_REL_ERROR:e})");
            }
            Ok(ok)
        }
        Command::Eval {
            detections,
            gt,
            iou,
        } => {
            let report = cmd_eval(&detections, &gt, iou)?;
            println!(
                "{}",
                serde_json::to_string(&report).expect("report serializes")
            );
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        builder = builder.num_threads(n);
    }
    let pool = match builder.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(1);
        }
    };
    match pool.install(|| run(cli)) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

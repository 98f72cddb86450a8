//! `camofs`: few-shot split sampling, COCO-style evaluation, dataset
//! statistics, the synthetic training run and the gradient check.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use camofs_core::dataset::{build_nested_shots, export_split, load_annotations, DEFAULT_MAX_K};
use camofs_core::gradcheck;
use camofs_core::metrics::{evaluate, load_detections, IouType};
use camofs_core::stats::{write_reports, DEFAULT_GRID};
use camofs_core::trainer::{train, TrainConfig};

#[derive(Parser)]
#[command(name = "camofs", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a nested K-shot split and export the K-shot annotations.
    Sample {
        #[arg(long, env = "CAMOFS_ANN")]
        ann: PathBuf,
        /// Comma-separated category ids or names.
        #[arg(long, value_delimiter = ',', required = true)]
        novel_classes: Vec<String>,
        #[arg(long)]
        shots: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Size of the underlying draw; keep it fixed across K to get nested outputs.
        #[arg(long, default_value_t = DEFAULT_MAX_K)]
        max_k: usize,
        #[arg(long)]
        out: PathBuf,
        /// Also write the full split (every K) as JSON.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Evaluate detections against ground truth.
    Eval {
        #[arg(long, env = "CAMOFS_ANN")]
        ann: PathBuf,
        #[arg(long)]
        dets: PathBuf,
        #[arg(long, default_value = "segm")]
        iou_type: IouType,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write dataset statistics reports.
    Stats {
        #[arg(long, env = "CAMOFS_ANN")]
        ann: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = DEFAULT_GRID)]
        grid: usize,
    },
    /// Train the projection on the synthetic task.
    ToyTrain {
        /// JSON config; missing fields take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare analytic loss gradients with central differences.
    Gradcheck {
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Sample {
            ann,
            novel_classes,
            shots,
            seed,
            max_k,
            out,
            manifest,
        } => {
            if shots == 0 || shots > max_k {
                bail!("--shots must be in 1..={max_k}, got {shots}");
            }
            let set = load_annotations(&ann)?;
            let novel = novel_classes
                .iter()
                .map(|k| set.resolve_category(k.trim()))
                .collect::<camofs_core::Result<BTreeSet<u64>>>()?;
            let split = build_nested_shots(&set, &novel, max_k, seed)?;
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            export_split(&set, &split, shots, &out)?;
            if let Some(m) = manifest {
                write_json(&split, &m)?;
            }
            let n = split.annotation_ids(shots)?.len();
            println!(
                "{n} annotations over {} novel classes -> {}",
                novel.len(),
                out.display()
            );
        }
        Command::Eval {
            ann,
            dets,
            iou_type,
            out,
        } => {
            let gt = load_annotations(&ann)?;
            let dets = load_detections(&dets)?;
            let report = evaluate(&gt, &dets, iou_type)?;
            write_json(&report, &out)?;
            for (name, v) in report.mean.fields() {
                println!("{name:>10} {v:.4}");
            }
        }
        Command::Stats { ann, out_dir, grid } => {
            let set = load_annotations(&ann)?;
            let s = write_reports(&set, &out_dir, grid)?;
            println!(
                "images={} instances={} annotated_images={}",
                s.images, s.instances, s.annotated_images
            );
        }
        Command::ToyTrain { config, out } => {
            let cfg = match config {
                Some(p) => TrainConfig::load_json(&p)?,
                None => TrainConfig::default(),
            };
            let report = train(&cfg)?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            report.write_json(&out.join("train_report.json"))?;
            report.write_trace_csv(&out.join("loss_trace.csv"))?;
            let ratio = report
                .final_initial_ratio
                .map_or_else(|| "n/a".to_string(), |r| format!("{r:.4}"));
            println!(
                "steps={} initial_loss={:.6} final_loss={:.6} ratio={ratio} wall_time={:.2}s",
                report.steps, report.initial_loss, report.final_loss, report.wall_time_secs
            );
        }
        Command::Gradcheck {
            trials,
            tolerance,
            seed,
        } => {
            let report = gradcheck::run(trials, tolerance, seed)?;
            for l in &report.per_loss {
                log::info!(
                    "{:?}: failures={} max_rel_err={:.3e}",
                    l.kind,
                    l.failures,
                    l.max_rel_err
                );
            }
            println!("trials={} failures={}", report.trials, report.failures);
            if report.failures > 0 {
                bail!(
                    "{} gradient checks exceeded tolerance {tolerance}",
                    report.failures
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // library errors already render their source inline
            let mut msg = e.to_string();
            for cause in e.chain().skip(1) {
                let c = cause.to_string();
                if !msg.contains(&c) {
                    msg = format!("{msg}: {c}");
                }
            }
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

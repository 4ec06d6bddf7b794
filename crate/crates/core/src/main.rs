use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use kneeseg::data::{mask_file_name, write_label_png};
use kneeseg::harness::config::parse_pairs;
use kneeseg::harness::report::{write_json, TIMING_JSON};
use kneeseg::harness::{
    evaluate_model, generate_phantom_dataset, load_split_capped, load_subject, load_trained, recompute_report,
    run_sweep, save_trained, segment_volume, train, training_slices, write_evaluation, write_sweep_csv, Mode,
    PhantomSpec, RunConfig, SWEEP_WEIGHTS,
};
use kneeseg::metrics::average_dsc;
use kneeseg::net::count_parameters;
use kneeseg::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "kneeseg", version, about = "Knee MRI bone and cartilage segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct Common {
    /// Preset name (default, tiny) or path to a key=value config file.
    #[arg(long, global = true, default_value = "default")]
    config: String,
    /// Overrides the run seed (the phantom seed for `phantom`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// multiclass, binary-fc or binary-tc.
    #[arg(long, global = true)]
    mode: Option<Mode>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Extra config entries, applied last.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Single-threaded execution for bit-reproducible runs.
    #[arg(long, global = true)]
    deterministic: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic phantom dataset.
    Phantom {
        #[arg(long, default_value_t = 3)]
        train: usize,
        #[arg(long, default_value_t = 1)]
        val: usize,
        #[arg(long, default_value_t = 3)]
        test: usize,
        #[arg(long, default_value_t = 160)]
        slices: usize,
        #[arg(long, default_value_t = 384)]
        size: usize,
    },
    /// Train a network on the train split (validation split selects the checkpoint).
    Train {
        #[arg(long, default_value = "data")]
        data: PathBuf,
    },
    /// Segment the test split and score the critical slices.
    Evaluate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "data")]
        data: PathBuf,
    },
    /// Segment every slice of one subject directory, with timing.
    Segment {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Subject directory holding the volume.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Recompute the summaries of an evaluation directory from its metrics.csv.
    Report {
        /// Evaluation directory (defaults to --out).
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Print the trainable parameter count of the configured network.
    Params,
    /// Train once per pixel/shape loss balance and compare.
    Sweep {
        #[arg(long, default_value = "data")]
        data: PathBuf,
    },
}

impl Common {
    fn run_config(&self) -> Result<RunConfig> {
        let mut overrides = Vec::new();
        if let Some(m) = self.mode {
            overrides.push(("mode".to_string(), m.to_string()));
        }
        if let Some(s) = self.seed {
            overrides.push(("seed".to_string(), s.to_string()));
        }
        overrides.extend(self.set_pairs()?);
        RunConfig::resolve(&self.config, &overrides)
    }

    fn set_pairs(&self) -> Result<Vec<(String, String)>> {
        parse_pairs(&self.set.join("\n"))
    }

    fn out_dir(&self, default: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(default))
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_error(format!("creating {}", dir.display()), e))
}

fn io_error(context: String, e: std::io::Error) -> Error {
    Error::Io { context, source: e }
}

fn required(path: &Option<PathBuf>, flag: &str) -> Result<PathBuf> {
    path.clone().ok_or_else(|| Error::Argument(format!("{flag} is required")))
}

/// Checkpoint configuration with any `--set roi.*`-style overrides applied.
fn checkpoint_config(common: &Common, saved: &RunConfig) -> Result<RunConfig> {
    let mut pairs = parse_pairs(&saved.to_pairs_text())?;
    pairs.extend(common.set_pairs()?);
    let cfg = RunConfig::from_pairs(&pairs)?;
    if cfg.model != saved.model {
        return Err(Error::Config("network settings cannot be overridden for a trained checkpoint".into()));
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    let common = &cli.common;
    match &cli.command {
        Command::Phantom {
            train,
            val,
            test,
            slices,
            size,
        } => {
            let out = common.out_dir("data");
            let spec = PhantomSpec {
                seed: common.seed.unwrap_or(0),
                train: *train,
                val: *val,
                test: *test,
                slice_count: *slices,
                size: *size,
            };
            let dirs = generate_phantom_dataset(&out, &spec)?;
            println!("wrote {} phantom subjects to {}", dirs.len(), out.display());
        }
        Command::Train { data } => {
            let cfg = common.run_config()?;
            let out = common.out_dir("run");
            let size = cfg.model.input_size;
            let train_set = training_slices(&load_split_capped(data, "train", cfg.split.train)?, size, cfg.strip_edges)?;
            let val_set = training_slices(&load_split_capped(data, "val", cfg.split.val)?, size, cfg.strip_edges)?;
            if train_set.is_empty() {
                return Err(Error::Validation(format!("no training subjects under {}", data.join("train").display())));
            }
            log::info!("training on {} slices, validating on {}", train_set.len(), val_set.len());
            let outcome = train(&cfg, &train_set, &val_set)?;
            create_dir(&out)?;
            save_trained(&out.join("model.ckpt"), &outcome.model, &cfg)?;
            fs::write(out.join("config.txt"), cfg.to_pairs_text())
                .map_err(|e| io_error(format!("writing {}", out.join("config.txt").display()), e))?;
            let mut history = String::from("epoch,train_loss,val_loss,seconds\n");
            for h in &outcome.history {
                let val = h.val_loss.map_or("NA".to_string(), |v| v.to_string());
                history.push_str(&format!("{},{},{val},{}\n", h.epoch, h.train_loss, h.seconds));
            }
            fs::write(out.join("history.csv"), history)
                .map_err(|e| io_error(format!("writing {}", out.join("history.csv").display()), e))?;
            println!(
                "saved {} (best epoch {} of {})",
                out.join("model.ckpt").display(),
                outcome.best_epoch,
                cfg.epochs
            );
        }
        Command::Evaluate { checkpoint, data } => {
            let checkpoint = required(checkpoint, "--checkpoint")?;
            let (model, saved) = load_trained(&checkpoint)?;
            let cfg = checkpoint_config(common, &saved)?;
            let out = common.out_dir("evaluation");
            let load_start = Instant::now();
            let volumes = load_split_capped(data, "test", cfg.split.test)?
                .iter()
                .map(|v| v.resized(cfg.model.input_size))
                .collect::<Result<Vec<_>>>()?;
            if volumes.is_empty() {
                return Err(Error::Validation(format!("no test subjects under {}", data.join("test").display())));
            }
            let io_per_volume = load_start.elapsed().as_secs_f64() / volumes.len() as f64;
            let (eval, mut timings) = evaluate_model(&model, cfg.mode, &volumes, &cfg.thresholds)?;
            timings.iter_mut().for_each(|t| t.io_seconds = io_per_volume);
            write_evaluation(&out, &eval, &timings)?;
            if eval.is_empty_selection() {
                println!("empty selection: no critical slices among {} test slices", eval.slice_count);
            } else {
                println!(
                    "evaluated {} of {} slices; average DSC {}",
                    eval.selected.len(),
                    eval.slice_count,
                    eval.average_dsc.map_or("NA".to_string(), |d| format!("{d:.3}"))
                );
            }
        }
        Command::Segment { checkpoint, data } => {
            let checkpoint = required(checkpoint, "--checkpoint")?;
            let dir = required(data, "--data")?;
            let (model, saved) = load_trained(&checkpoint)?;
            let cfg = checkpoint_config(common, &saved)?;
            let out = common.out_dir("segmentation");
            let io_start = Instant::now();
            let volume = load_subject(&dir)?.resized(cfg.model.input_size)?;
            let mut io_seconds = io_start.elapsed().as_secs_f64();
            let mut seg = segment_volume(&model, cfg.mode, &volume)?;
            let write_start = Instant::now();
            create_dir(&out)?;
            for (s, mask) in volume.slices.iter().zip(&seg.masks) {
                write_label_png(&out.join(mask_file_name(&s.id)), mask)?;
            }
            io_seconds += write_start.elapsed().as_secs_f64();
            seg.timing.io_seconds = io_seconds;
            write_json(&out.join(TIMING_JSON), &seg.timing)?;
            println!(
                "segmented {} slices in {:.3}s (+{:.3}s I/O)",
                seg.timing.slice_count, seg.timing.total_seconds, io_seconds
            );
        }
        Command::Report { predictions } => {
            let dir = predictions.clone().or_else(|| common.out.clone()).ok_or_else(|| {
                Error::Argument("report needs --predictions or --out pointing at an evaluation directory".into())
            })?;
            let summaries = recompute_report(&dir)?;
            for s in &summaries {
                println!("{}: mean DSC {:.3} over {} slices", s.tissue.abbrev(), s.mean_dsc, s.count);
            }
            match average_dsc(&summaries) {
                Some(d) => println!("average DSC {d:.3}"),
                None => println!("empty selection: no metric rows"),
            }
        }
        Command::Params => {
            let cfg = common.run_config()?;
            println!("{}", count_parameters(&cfg.model));
        }
        Command::Sweep { data } => {
            let cfg = common.run_config()?;
            let out = common.out_dir("sweep");
            let slices = training_slices(
                &load_split_capped(data, "train", cfg.split.train)?,
                cfg.model.input_size,
                cfg.strip_edges,
            )?;
            let rows = run_sweep(&cfg, &slices, &SWEEP_WEIGHTS)?;
            create_dir(&out)?;
            write_sweep_csv(&out.join("sweep.csv"), &rows)?;
            println!("wrote {}", out.join("sweep.csv").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if cli.common.deterministic {
        // read by candle's worker pool on first use
        std::env::set_var("RAYON_NUM_THREADS", "1");
    }
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}

//! Command-line front end.
//!
//! Exit codes: 0 success, 1 gradient check failure, 2 configuration or
//! usage error, 3 i/o, format or data error, 4 checkpoint/architecture
//! mismatch or shape error, 5 non-finite loss.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::Config;
use crate::data::{gen_mixture, gen_source_task, store, MixtureDataset, Split};
use crate::error::{AmfError, Result};
use crate::gradsuite::{run_suite, SuiteReport};
use crate::harness::{evaluate, export_latents, fmt_g6, pretrain, train, EvalReport, MonitorTrace};
use crate::nn::{checkpoint, Model, ModelConfig};

pub const MIXTURE_FILE: &str = "mixture.amfd";
pub const SOURCE_FILE: &str = "source.amfd";
pub const PRETRAINED_FILE: &str = "pretrained.ckpt";
pub const BEST_FILE: &str = "best.ckpt";
pub const FINAL_FILE: &str = "final.ckpt";
pub const MONITOR_FILE: &str = "monitor.csv";
pub const GRADCHECK_FILE: &str = "gradcheck.csv";
pub const THREADS_ENV: &str = "AMF_THREADS";

#[derive(Debug, Parser)]
#[command(name = "amf", version, about = "Adaptable multi-tuning experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Flat key = value configuration file.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Overrides the command's seed keys.
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the target mixture and the pretraining source task.
    GenData(#[command(flatten)] Common),
    /// Pretrain the backbone and policy feature block on a source dataset.
    Pretrain {
        #[command(flatten)]
        common: Common,
        /// Source dataset file.
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
    },
    /// Fine-tune on a mixture dataset; writes the monitor CSV and checkpoints.
    Train {
        #[command(flatten)]
        common: Common,
        /// Mixture dataset file.
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
        /// Pretrained checkpoint to transfer from.
        #[arg(long, value_name = "PATH")]
        ckpt: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on one split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
        #[arg(long, value_name = "PATH")]
        ckpt: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Also write fused features, label and mode per example as CSV.
        #[arg(long, value_name = "PATH")]
        latents: Option<PathBuf>,
    },
    /// Run the finite-difference gradient suite.
    GradCheck {
        #[command(flatten)]
        common: Common,
        /// Scale one op's backward by 1.5 to exercise the failure path.
        #[arg(long, value_name = "OP")]
        fault: Option<String>,
        /// Instances per entry.
        #[arg(long, value_name = "N")]
        instances: Option<usize>,
    },
}

/// Runs a parsed command line and returns the process exit code,
/// printing results to stdout and errors to stderr.
pub fn run(cli: Cli) -> i32 {
    let result = configure_threads().and_then(|()| dispatch(cli.command));
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Sizes the global thread pool from `AMF_THREADS` (default 1).
pub fn configure_threads() -> Result<()> {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| {
                AmfError::config(
                    THREADS_ENV,
                    format!("expected a positive integer, got {v:?}"),
                )
            })?,
        Err(_) => 1,
    };
    // A pool already exists when called twice in one process; keep it.
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global();
    Ok(())
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::GenData(common) => {
            let config = load_config(&common, &["data.seed"])?;
            print!("{}", gen_data(&config, &require_out(&common)?)?);
            Ok(0)
        }
        Command::Pretrain { common, data } => {
            let config = load_config(&common, &["pretrain.seed"])?;
            print!("{}", cmd_pretrain(&config, &data, &require_out(&common)?)?);
            Ok(0)
        }
        Command::Train { common, data, ckpt } => {
            let config = load_config(&common, &["train.init_seed", "train.data_seed"])?;
            let (text, warnings) =
                cmd_train(&config, &data, ckpt.as_deref(), &require_out(&common)?)?;
            for (epoch, msg) in warnings {
                eprintln!("warning: epoch {epoch}: {msg}");
            }
            print!("{text}");
            Ok(0)
        }
        Command::Eval {
            common,
            data,
            ckpt,
            split,
            latents,
        } => {
            let config = load_config(&common, &[])?;
            let split = Split::parse(&split)?;
            print!(
                "{}",
                cmd_eval(&config, &data, &ckpt, split, latents.as_deref())?
            );
            Ok(0)
        }
        Command::GradCheck {
            common,
            fault,
            instances,
        } => {
            let mut config = match &common.config {
                Some(_) => load_config(&common, &["gradcheck.seed"])?,
                None => {
                    let mut c = Config::default();
                    if let Some(seed) = common.seed {
                        c.set("gradcheck.seed", seed)?;
                    }
                    c
                }
            };
            if let Some(op) = fault {
                config.set("gradcheck.fault", op)?;
            }
            if let Some(n) = instances {
                config.set("gradcheck.instances", n)?;
            }
            let report = run_suite(&config.suite_config()?)?;
            print!("{}", format_suite(&report));
            if let Some(out) = &common.out {
                ensure_dir(out)?;
                crate::fsutil::write_atomic(
                    &out.join(GRADCHECK_FILE),
                    suite_csv(&report).as_bytes(),
                )?;
            }
            Ok(if report.passed() { 0 } else { 1 })
        }
    }
}

fn load_config(common: &Common, seed_keys: &[&str]) -> Result<Config> {
    let path = common
        .config
        .as_ref()
        .ok_or_else(|| AmfError::usage("--config PATH is required"))?;
    let mut config = Config::load(path)?;
    if let Some(seed) = common.seed {
        for key in seed_keys {
            config.set(key, seed)?;
        }
    }
    Ok(config)
}

fn require_out(common: &Common) -> Result<PathBuf> {
    let out = common
        .out
        .clone()
        .ok_or_else(|| AmfError::usage("--out DIR is required"))?;
    ensure_dir(&out)?;
    Ok(out)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| AmfError::io(dir, e))
}

fn split_counts(name: &str, ds: &MixtureDataset) -> String {
    format!(
        "{name}: classes {} (mode 0: {}, mode 1: {}), train {}, val {}, test {}\n",
        ds.spec.classes(),
        ds.spec.classes_a,
        ds.spec.classes_b,
        ds.train.len(),
        ds.val.len(),
        ds.test.len()
    )
}

/// Writes the mixture and source datasets into `out`.
pub fn gen_data(config: &Config, out: &Path) -> Result<String> {
    let spec = config.mixture_spec()?;
    let source_classes = config.source_classes()?;
    let mixture = gen_mixture(&spec)?;
    let source = gen_source_task(&spec, source_classes, config.source_seed()?)?;
    store::save(&mixture, &out.join(MIXTURE_FILE))?;
    store::save(&source, &out.join(SOURCE_FILE))?;
    Ok(split_counts("mixture", &mixture) + &split_counts("source", &source))
}

pub fn cmd_pretrain(config: &Config, data: &Path, out: &Path) -> Result<String> {
    let pc = config.pretrain_config()?;
    let source = store::load(data)?;
    let outcome = pretrain(&pc, &source)?;
    checkpoint::save(&outcome.checkpoint, &out.join(PRETRAINED_FILE))?;
    Ok(format!(
        "pretrain: {} epochs, backbone val top-1 {}, policy val top-1 {}, {} tensors written\n",
        pc.epochs,
        fmt_g6(outcome.backbone_val_top1),
        fmt_g6(outcome.policy_val_top1),
        outcome.checkpoint.len()
    ))
}

/// Returns the summary text and any monitor warnings.
pub fn cmd_train(
    config: &Config,
    data: &Path,
    ckpt: Option<&Path>,
    out: &Path,
) -> Result<(String, Vec<(usize, String)>)> {
    let tc = config.train_config()?;
    let ds = store::load(data)?;
    let pretrained = ckpt.map(checkpoint::load).transpose()?;
    let outcome = train(&tc, &ds, pretrained.as_ref())?;
    outcome.trace.save_csv(&out.join(MONITOR_FILE))?;
    checkpoint::save(&outcome.best, &out.join(BEST_FILE))?;
    checkpoint::save_model(&outcome.model, &out.join(FINAL_FILE))?;
    let MonitorTrace { records, warnings } = outcome.trace;
    let last = records.last().expect("at least one epoch");
    Ok((
        format!(
            "train: arch {}, {} epochs, final loss {}, best epoch {} with val top-1 {}\n",
            tc.model.arch,
            records.len(),
            fmt_g6(last.train_loss),
            outcome.best_epoch,
            fmt_g6(outcome.best_val_top1)
        ),
        warnings,
    ))
}

/// Model configuration from the config file completed with the dataset's
/// class count and geometry.
pub fn model_for(config: &Config, ds: &MixtureDataset) -> Result<ModelConfig> {
    let s = &ds.spec;
    Ok(ModelConfig {
        classes: s.classes(),
        ..config.model_config()?
    }
    .with_input(s.channels, s.height, s.width))
}

pub fn cmd_eval(
    config: &Config,
    data: &Path,
    ckpt: &Path,
    split: Split,
    latents: Option<&Path>,
) -> Result<String> {
    let ds = store::load(data)?;
    let mut model = Model::<f32>::init(model_for(config, &ds)?, 0)?;
    model.load_params(&checkpoint::load(ckpt)?)?;
    let examples = ds.split(split);
    let report = evaluate(&model, examples)?;
    if let Some(path) = latents {
        export_latents(&model, examples, path)?;
    }
    Ok(format_report(&report, split) + &report_line(&report, split) + "\n")
}

pub fn format_report(r: &EvalReport, split: Split) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "arch {}, split {}, {} examples",
        r.arch,
        split.name(),
        r.count
    );
    let _ = writeln!(
        s,
        "top-1 {} (mean loss {})",
        fmt_g6(r.top1_overall),
        fmt_g6(r.loss)
    );
    for m in &r.top1_per_mode {
        let _ = writeln!(
            s,
            "  mode {}: top-1 {} over {}",
            m.mode,
            fmt_g6(m.top1),
            m.count
        );
    }
    if let Some(a) = &r.assignment {
        let _ = writeln!(s, "assignment accuracy {}", fmt_g6(a.overall));
        for (mode, (&branch, &acc)) in a.matching.iter().zip(&a.per_mode).enumerate() {
            let _ = writeln!(s, "  mode {mode} -> branch {branch}: {}", fmt_g6(acc));
        }
    }
    if let Some(h) = &r.mean_weights {
        let h: Vec<String> = h.iter().map(|&v| fmt_g6(v)).collect();
        let _ = writeln!(s, "mean weights {}", h.join(", "));
    }
    s
}

fn json_list<T>(items: &[T], f: impl Fn(&T) -> String) -> String {
    format!("[{}]", items.iter().map(f).collect::<Vec<_>>().join(","))
}

/// One-line JSON with fields always in this order: `arch`, `split`,
/// `count`, `top1`, `loss`, `top1_per_mode` (`[mode, count, top1]`
/// triples), `assign_overall`, `assign_per_mode`, `matching`, `mean_h`.
/// Absent values are `null`.
pub fn report_line(r: &EvalReport, split: Split) -> String {
    let null = || "null".to_string();
    let g = |v: &f64| fmt_g6(*v);
    format!(
        "{{\"arch\":\"{}\",\"split\":\"{}\",\"count\":{},\"top1\":{},\"loss\":{},\"top1_per_mode\":{},\
         \"assign_overall\":{},\"assign_per_mode\":{},\"matching\":{},\"mean_h\":{}}}",
        r.arch,
        split.name(),
        r.count,
        fmt_g6(r.top1_overall),
        fmt_g6(r.loss),
        json_list(&r.top1_per_mode, |m| format!("[{},{},{}]", m.mode, m.count, fmt_g6(m.top1))),
        r.assignment.as_ref().map_or_else(null, |a| fmt_g6(a.overall)),
        r.assignment.as_ref().map_or_else(null, |a| json_list(&a.per_mode, g)),
        r.assignment.as_ref().map_or_else(null, |a| json_list(&a.matching, usize::to_string)),
        r.mean_weights.as_ref().map_or_else(null, |h| json_list(h, g)),
    )
}

pub fn format_suite(report: &SuiteReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<14} {:>12} {:>12} {:>8} {:>8}  result",
        "entry", "rel_err_f64", "rel_err_f32", "checked", "skipped"
    );
    for e in &report.entries {
        let _ = writeln!(
            s,
            "{:<14} {:>12.3e} {:>12.3e} {:>8} {:>8}  {}",
            e.name,
            e.max_rel_error_f64,
            e.max_rel_error_f32,
            e.checked,
            e.skipped,
            if e.passed { "pass" } else { "FAIL" }
        );
    }
    let failed: Vec<&str> = report.failures().map(|e| e.name.as_str()).collect();
    if failed.is_empty() {
        let _ = writeln!(s, "grad-check: all {} entries pass", report.entries.len());
    } else {
        let _ = writeln!(s, "grad-check: FAILED: {}", failed.join(", "));
    }
    s
}

fn suite_csv(report: &SuiteReport) -> String {
    let mut s = String::from("entry,max_rel_error_f64,max_rel_error_f32,checked,skipped,passed\n");
    for e in &report.entries {
        let _ = writeln!(
            s,
            "{},{:e},{:e},{},{},{}",
            e.name, e.max_rel_error_f64, e.max_rel_error_f32, e.checked, e.skipped, e.passed
        );
    }
    s
}

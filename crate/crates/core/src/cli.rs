//! Command-line front end: `synth`, `train`, `predict`, `evaluate`,
//! `gradcheck` and `report`.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
//! `SEG_THREADS` caps the worker pool used for per-slice inference and
//! per-case evaluation.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::autodiff::{load_state, save_state, save_weights, ModelParams};
use crate::dataset::{Manifest, Split};
use crate::error::Error;
use crate::gradcheck::{render_table, run_gradcheck};
use crate::io::{load_volume, save_segv, write_atomic};
use crate::metrics::{aggregate, evaluate_cases, write_cases_csv};
use crate::pipeline::{
    infer_two_stage, load_stage_model, read_loss_csv, save_train_config, write_loss_csv, InferConfig, Stage,
    StageFiles, TrainConfig, Trainer,
};
use crate::synth::{generate_dataset, Jitter, PhantomConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "polyseg", version, about = "Two-stage liver and lesion segmentation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic phantom dataset with a manifest.
    Synth(SynthArgs),
    /// Train stage 1 or stage 2 on the training split of a manifest.
    Train(TrainArgs),
    /// Run two-stage inference on one CT volume.
    Predict(PredictArgs),
    /// Score predicted label volumes against references.
    Evaluate(EvaluateArgs),
    /// Compare tape gradients with finite differences.
    Gradcheck(GradcheckArgs),
    /// Summarize an evaluation JSON and loss logs.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Fraction of phantoms in the training split.
    #[arg(long)]
    pub train_fraction: Option<f64>,
    /// JSON file with any subset of the synth settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub stage: u8,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// JSON file with any subset of the training settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub iters: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lr_period: Option<u64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Continue from the checkpoint in `--out`.
    #[arg(long)]
    pub resume: bool,
    /// Iterations between checkpoint writes.
    #[arg(long, default_value_t = 500)]
    pub checkpoint_every: u64,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub ct: PathBuf,
    #[arg(long)]
    pub ckpt1: PathBuf,
    #[arg(long)]
    pub ckpt2: PathBuf,
    /// Output label volume (SEGV1).
    #[arg(long)]
    pub out: PathBuf,
    /// Region padding `x,y,z`; defaults to the stage-2 training padding.
    #[arg(long, value_delimiter = ',')]
    pub pad: Option<Vec<usize>>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long = "ref")]
    pub reference: PathBuf,
    /// Output prefix: writes `<out>.csv` and `<out>.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Only run checks whose name contains this string.
    #[arg(long)]
    pub ops: Option<String>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Leaderboard JSON written by `evaluate`.
    #[arg(long)]
    pub eval: Option<PathBuf>,
    /// Loss logs written by `train`.
    #[arg(long)]
    pub loss: Vec<PathBuf>,
    /// Also write the summary to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// A failure with its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) | Error::Parameter(_) | Error::Json(_) => EXIT_USAGE,
            _ => EXIT_RUNTIME,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> CliError {
    CliError {
        code: EXIT_USAGE,
        message: message.into(),
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn require_file(path: &Path, what: &str) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(usage(format!("{what} not found: {}", path.display())))
    }
}

/// Recursively overlays `patch` onto `base`.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p,
    }
}

/// Defaults, then the config file, then flags.
fn resolve<T: Serialize + for<'de> Deserialize<'de>>(defaults: &T, file: Option<&Path>, flags: Value) -> CliResult<T> {
    let mut v = serde_json::to_value(defaults).map_err(Error::from)?;
    if let Some(path) = file {
        require_file(path, "config file")?;
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let patch: Value = serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        merge(&mut v, patch);
    }
    merge(&mut v, flags);
    serde_json::from_value(v).map_err(|e| usage(format!("invalid configuration: {e}")))
}

/// Drops `null` entries so unset flags do not override anything.
fn flags(v: Value) -> Value {
    match v {
        Value::Object(m) => Value::Object(m.into_iter().filter(|(_, v)| !v.is_null()).collect()),
        other => other,
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e).into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n: usize,
    pub seed: u64,
    pub train_fraction: f64,
    pub jitter: Jitter,
    pub phantom: PhantomConfig,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n: 4,
            seed: 0,
            train_fraction: 0.75,
            jitter: Jitter::default(),
            phantom: PhantomConfig::default(),
        }
    }
}

fn cmd_synth(a: SynthArgs) -> CliResult<()> {
    let cfg: SynthConfig = resolve(
        &SynthConfig::default(),
        a.config.as_deref(),
        flags(json!({ "n": a.n, "seed": a.seed, "train_fraction": a.train_fraction })),
    )?;
    create_dir(&a.out)?;
    let m = generate_dataset(cfg.n, &cfg.phantom, cfg.jitter, cfg.seed, cfg.train_fraction, &a.out)?;
    write_json(&a.out.join("synth_config.json"), &cfg)?;
    println!(
        "wrote {} phantoms ({} train, {} test) to {}",
        m.entries.len(),
        m.split(Split::Train).count(),
        m.split(Split::Test).count(),
        a.out.display()
    );
    Ok(())
}

fn cmd_train(a: TrainArgs) -> CliResult<()> {
    let stage = Stage::try_from(a.stage)?;
    require_file(&a.manifest, "manifest")?;
    let files = StageFiles::in_dir(&a.out, stage);
    let mut cfg: TrainConfig = resolve(
        &TrainConfig::desk(stage),
        a.config.as_deref(),
        flags(json!({
            "total_iters": a.iters,
            "lr": a.lr,
            "lr_period": a.lr_period,
            "batch_size": a.batch,
            "seed": a.seed,
        })),
    )?;
    cfg.stage = stage;
    if a.iters.is_some() && a.lr_period.is_none() && cfg.lr_period > cfg.total_iters {
        cfg.lr_period = cfg.total_iters;
    }
    cfg.validate()?;
    let cases = Manifest::load(&a.manifest)?.load_cases(Split::Train)?;
    create_dir(&a.out)?;
    let mut trainer = if a.resume {
        require_file(&files.weights, "checkpoint")?;
        require_file(&files.state, "optimizer state")?;
        let mut params: ModelParams<f32> = cfg.model.init_params(0)?;
        crate::autodiff::load_weights_into(&mut params, &files.weights)?;
        let state = load_state(&params, &files.state)?;
        Trainer::resume(&cases, cfg.clone(), params, state)?
    } else {
        Trainer::new(&cases, cfg.clone())?
    };
    save_train_config(&cfg, &files.config)?;
    info!(
        "stage {} from iteration {} to {} on {} case(s)",
        a.stage,
        trainer.iteration(),
        cfg.total_iters,
        cases.len()
    );
    let mut pending = Vec::new();
    let mut append = a.resume;
    let save = |t: &Trainer<f32>, pending: &mut Vec<_>, append: &mut bool| -> CliResult<()> {
        save_weights(t.params(), &files.weights)?;
        save_state(t.params(), t.state(), &files.state)?;
        write_loss_csv(&files.loss, pending, *append)?;
        pending.clear();
        *append = true;
        Ok(())
    };
    while trainer.iteration() < cfg.total_iters {
        let r = trainer.step()?;
        if r.iter % 50 == 0 {
            info!("iter {} lr {:e} loss {:.5}", r.iter, r.lr, r.loss);
        }
        pending.push(r);
        if trainer.iteration() % a.checkpoint_every.max(1) == 0 {
            save(&trainer, &mut pending, &mut append)?;
        }
    }
    if !pending.is_empty() || !files.weights.exists() {
        save(&trainer, &mut pending, &mut append)?;
    }
    println!(
        "stage {} trained to iteration {}: {}",
        a.stage,
        trainer.iteration(),
        files.weights.display()
    );
    Ok(())
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

fn cmd_predict(a: PredictArgs) -> CliResult<()> {
    require_file(&a.ct, "CT volume")?;
    require_file(&a.ckpt1, "stage-1 checkpoint")?;
    require_file(&a.ckpt2, "stage-2 checkpoint")?;
    let (c1, p1) = load_stage_model(&a.ckpt1)?;
    let (c2, p2) = load_stage_model(&a.ckpt2)?;
    let pad = match a.pad.as_deref() {
        Some(&[x, y, z]) => [x, y, z],
        Some(_) => return Err(usage("--pad takes three values")),
        None => c2.roi_pad,
    };
    let cfg = InferConfig::new(c1.model, c2.model, pad);
    let ct = load_volume(&a.ct)?.into_f32();
    let out = infer_two_stage(&ct, &p1, &p2, &cfg)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    save_segv(&out.fused, &a.out)?;
    write_json(
        &with_suffix(&a.out, ".config.json"),
        &json!({ "ct": a.ct, "ckpt1": a.ckpt1, "ckpt2": a.ckpt2, "infer": cfg }),
    )?;
    write_json(
        &with_suffix(&a.out, ".roi.json"),
        &json!({ "roi": out.roi, "fallback": out.roi_fallback, "dims": ct.dims() }),
    )?;
    println!(
        "roi min {:?} max {:?}{}; wrote {}",
        out.roi.min,
        out.roi.max,
        if out.roi_fallback {
            " (stage 1 empty, whole volume)"
        } else {
            ""
        },
        a.out.display()
    );
    Ok(())
}

/// File stem with a trailing `_ct`, `_label`, `_pred` or `_seg` removed.
pub fn case_key(path: &Path) -> Option<String> {
    let name = path.file_name()?.to_str()?;
    let stem = name.strip_suffix(".segv").or_else(|| name.strip_suffix(".nii"))?;
    let stem = ["_ct", "_label", "_pred", "_seg"]
        .iter()
        .find_map(|s| stem.strip_suffix(s))
        .unwrap_or(stem);
    Some(stem.to_string())
}

fn volumes_by_key(dir: &Path) -> CliResult<std::collections::BTreeMap<String, PathBuf>> {
    if !dir.is_dir() {
        return Err(usage(format!("not a directory: {}", dir.display())));
    }
    let mut out = std::collections::BTreeMap::new();
    for e in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = e.map_err(|e| Error::io(dir, e))?.path();
        if p.file_name()
            .and_then(|n| n.to_str())
            .is_some_and(|n| n.contains("_ct."))
        {
            continue;
        }
        if let Some(k) = case_key(&p) {
            out.insert(k, p);
        }
    }
    Ok(out)
}

fn cmd_evaluate(a: EvaluateArgs) -> CliResult<()> {
    let preds = volumes_by_key(&a.pred)?;
    let refs = volumes_by_key(&a.reference)?;
    let mut pairs = Vec::new();
    for (key, rp) in &refs {
        let Some(pp) = preds.get(key) else {
            return Err(usage(format!("no prediction for reference case {key}")));
        };
        pairs.push((
            key.clone(),
            load_volume(pp)?.into_labels()?,
            load_volume(rp)?.into_labels()?,
        ));
    }
    if pairs.is_empty() {
        return Err(usage(format!("no label volumes in {}", a.reference.display())));
    }
    let cases = evaluate_cases(&pairs)?;
    let report = aggregate(&cases)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_cases_csv(&cases, with_suffix(&a.out, ".csv"))?;
    report.save_json(with_suffix(&a.out, ".json"))?;
    write_json(
        &with_suffix(&a.out, ".config.json"),
        &json!({ "pred": a.pred, "ref": a.reference, "cases": pairs.len() }),
    )?;
    print!("{}", report.render());
    Ok(())
}

fn cmd_gradcheck(a: GradcheckArgs) -> CliResult<()> {
    let results = run_gradcheck(a.seed, a.ops.as_deref())?;
    print!("{}", render_table(&results));
    if results.iter().all(|r| r.passed) {
        Ok(())
    } else {
        Err(CliError {
            code: EXIT_RUNTIME,
            message: "gradient check failed".into(),
        })
    }
}

fn fmt_score(v: &Value) -> String {
    match v {
        Value::Number(n) => format!("{:.4}", n.as_f64().unwrap_or(f64::NAN)),
        Value::Null => "undefined".into(),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn cmd_report(a: ReportArgs) -> CliResult<()> {
    if a.eval.is_none() && a.loss.is_empty() {
        return Err(usage("report needs --eval and/or --loss"));
    }
    let mut s = String::new();
    if let Some(path) = &a.eval {
        require_file(path, "evaluation report")?;
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let v: Value = serde_json::from_str(&text).map_err(Error::from)?;
        s += &format!("{:<18}{:>12}{:>12}\n", "metric", "liver", "lesion");
        for key in crate::metrics::LEADERBOARD_FIELDS {
            match &v[key] {
                Value::Object(m) => {
                    s += &format!(
                        "{:<18}{:>12}{:>12}\n",
                        key,
                        fmt_score(&m["liver"]),
                        fmt_score(&m["lesion"])
                    )
                }
                other => s += &format!("{:<18}{:>24}\n", key, fmt_score(other)),
            }
        }
    }
    for path in &a.loss {
        require_file(path, "loss log")?;
        let log = read_loss_csv(path)?;
        let Some(last) = log.last() else {
            s += &format!("{}: empty\n", path.display());
            continue;
        };
        let tail = &log[log.len().saturating_sub(50)..];
        let tail_mean = tail.iter().map(|r| r.loss).sum::<f64>() / tail.len() as f64;
        let min = log.iter().map(|r| r.loss).fold(f64::INFINITY, f64::min);
        s += &format!(
            "{}: {} iterations, first loss {:.5}, min {:.5}, mean of last {} {:.5}, final lr {:e}\n",
            path.display(),
            last.iter + 1,
            log[0].loss,
            min,
            tail.len(),
            tail_mean,
            last.lr
        );
    }
    print!("{s}");
    if let Some(out) = &a.out {
        write_atomic(out, s.as_bytes())?;
    }
    Ok(())
}

fn configure_threads() -> CliResult<()> {
    let Ok(v) = std::env::var("SEG_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| usage(format!("SEG_THREADS must be a positive integer, got {v:?}")))?;
    // A pool may already exist when called twice in one process.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn execute(cli: Cli) -> CliResult<()> {
    configure_threads()?;
    match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Report(a) => cmd_report(a),
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

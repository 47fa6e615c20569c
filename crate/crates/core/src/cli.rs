//! Command-line front end. `run` returns the process exit code:
//! 0 success, 1 usage error, 2 data or format error, 3 contract violation.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::data::{generate_dataset, load_dataset, read_image_pgm, read_sequence_csv, GeneratorConfig};
use crate::error::{Error, Result};
use crate::model::{Ablation, ModelConfig};
use crate::selfcheck::gradient_self_check;
use crate::tensor::KlVariant;
use crate::train::{
    evaluate, load_checkpoint, pretrain_with, save_checkpoint, train_detector_with, Stage, TrainConfig,
    DEFAULT_THRESHOLD,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_CONTRACT: i32 = 3;

/// Detector epochs when `--epochs` is not given to `train-detector`.
pub const DETECTOR_EPOCHS: usize = 30;

#[derive(Parser, Debug)]
#[command(name = "fmae", version, about = "Frequency-masked multimodal autoencoder for contact anomaly detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset directory.
    GenData(GenDataArgs),
    /// Unsupervised autoencoder pretraining.
    Pretrain(PretrainArgs),
    /// Freeze the autoencoder and fit the detector head.
    TrainDetector(DetectorArgs),
    /// Score a dataset and report metrics.
    Eval(EvalArgs),
    /// Score a single sequence/image pair.
    Infer(InferArgs),
    /// Finite-difference check of every gradient.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
struct GenDataArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    anomaly_rate: Option<f64>,
    #[arg(long)]
    distractor_rate: Option<f64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum KlArg {
    Standard,
    PaperVerbatim,
}

#[derive(Args, Debug)]
struct PretrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long, value_enum)]
    kl_variant: Option<KlArg>,
    #[arg(long)]
    seed: Option<u64>,
    /// Per-epoch loss CSV; defaults to `<out>.loss.csv`.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DetectorArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    batch: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum AblateArg {
    None,
    VoltageOnly,
    ImageOnly,
}

impl From<AblateArg> for Ablation {
    fn from(a: AblateArg) -> Self {
        match a {
            AblateArg::None => Ablation::None,
            AblateArg::VoltageOnly => Ablation::VoltageOnly,
            AblateArg::ImageOnly => Ablation::ImageOnly,
        }
    }
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, value_enum, default_value = "none")]
    ablate: AblateArg,
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct InferArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    seq: PathBuf,
    #[arg(long)]
    img: PathBuf,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

/// Parses `args` (program name first) and executes the subcommand.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK { out.write_all(text.as_bytes()) } else { err.write_all(text.as_bytes()) };
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Parameter(_) => EXIT_USAGE,
        Error::Contract(_) => EXIT_CONTRACT,
        Error::Shape(_) | Error::Domain(_) | Error::Parse { .. } | Error::Format { .. } | Error::Io { .. } => EXIT_DATA,
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> Result<i32> {
    match cmd {
        Command::GenData(a) => gen_data(a, out),
        Command::Pretrain(a) => pretrain_cmd(a, out),
        Command::TrainDetector(a) => detector_cmd(a, out),
        Command::Eval(a) => eval_cmd(a, out),
        Command::Infer(a) => infer_cmd(a, out),
        Command::Gradcheck(a) => gradcheck_cmd(a, out),
    }
}

fn emit(out: &mut dyn Write, text: impl std::fmt::Display) -> Result<()> {
    writeln!(out, "{text}").map_err(|e| Error::io("<stdout>", e))
}

fn print_config(out: &mut dyn Write, value: serde_json::Value) -> Result<()> {
    emit(out, serde_json::to_string(&value).expect("config serializes"))
}

fn gen_data(a: GenDataArgs, out: &mut dyn Write) -> Result<i32> {
    let mut cfg = GeneratorConfig {
        seed: a.seed,
        n_samples: a.n,
        ..GeneratorConfig::default()
    };
    if let Some(r) = a.anomaly_rate {
        cfg.anomaly_rate = r;
    }
    if let Some(r) = a.distractor_rate {
        cfg.distractor_rate = r;
    }
    print_config(out, json!({"command": "gen-data", "out": a.out, "generator": cfg}))?;
    let records = generate_dataset(&cfg, &a.out)?;
    let anomalies = records.iter().filter(|r| r.label == 1).count();
    emit(out, format_args!("wrote {} samples ({} anomalous) to {}", records.len(), anomalies, a.out.display()))?;
    Ok(EXIT_OK)
}

fn default_log_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".loss.csv");
    PathBuf::from(s)
}

fn pretrain_cmd(a: PretrainArgs, out: &mut dyn Write) -> Result<i32> {
    let d = TrainConfig::default();
    let cfg = TrainConfig {
        epochs: a.epochs.unwrap_or(d.epochs),
        batch_size: a.batch.unwrap_or(d.batch_size),
        learning_rate: a.lr.unwrap_or(d.learning_rate),
        alpha: a.alpha.unwrap_or(d.alpha),
        beta: a.beta.unwrap_or(d.beta),
        gamma: a.gamma.unwrap_or(d.gamma),
        seed: a.seed.unwrap_or(d.seed),
        kl_variant: match a.kl_variant {
            Some(KlArg::PaperVerbatim) => KlVariant::PaperVerbatim,
            Some(KlArg::Standard) => KlVariant::Standard,
            None => d.kl_variant,
        },
        early_stop: d.early_stop,
    };
    cfg.validate()?;
    let model_cfg = ModelConfig::default();
    let log_path = a.log.unwrap_or_else(|| default_log_path(&a.out));
    print_config(
        out,
        json!({"command": "pretrain", "data": a.data, "out": a.out, "log": log_path, "train": cfg, "model": model_cfg}),
    )?;
    let samples = load_dataset(&a.data, model_cfg.time_steps, model_cfg.cells)?;
    let mut lines = Vec::new();
    let (ckpt, log) = pretrain_with(&samples, &model_cfg, &cfg, |e| {
        lines.push(format!(
            "epoch {:>3}  rec_seq {:.6}  rec_img {:.6}  kl {:.6}  total {:.6}",
            e.epoch, e.rec_seq, e.rec_img, e.kl, e.total
        ))
    })?;
    for l in lines {
        emit(out, l)?;
    }
    save_checkpoint(&a.out, &ckpt)?;
    log.write_csv(&log_path)?;
    emit(out, format_args!("saved {} checkpoint to {}", ckpt.stage, a.out.display()))?;
    Ok(EXIT_OK)
}

fn detector_cmd(a: DetectorArgs, out: &mut dyn Write) -> Result<i32> {
    let d = TrainConfig::default();
    let cfg = TrainConfig {
        epochs: a.epochs.unwrap_or(DETECTOR_EPOCHS),
        batch_size: a.batch.unwrap_or(d.batch_size),
        learning_rate: a.lr.unwrap_or(d.learning_rate),
        seed: a.seed.unwrap_or(d.seed),
        ..d
    };
    cfg.validate()?;
    print_config(
        out,
        json!({"command": "train-detector", "data": a.data, "ckpt": a.ckpt, "out": a.out,
               "epochs": cfg.epochs, "batch_size": cfg.batch_size, "learning_rate": cfg.learning_rate, "seed": cfg.seed}),
    )?;
    let pretrained = load_checkpoint(&a.ckpt)?;
    let mc = pretrained.model.config().clone();
    let samples = load_dataset(&a.data, mc.time_steps, mc.cells)?;
    let mut lines = Vec::new();
    let (ckpt, _) = train_detector_with(&samples, &pretrained, &cfg, |e| {
        lines.push(format!("epoch {:>3}  bce {:.6}", e.epoch, e.bce))
    })?;
    for l in lines {
        emit(out, l)?;
    }
    save_checkpoint(&a.out, &ckpt)?;
    emit(out, format_args!("saved {} checkpoint to {}", ckpt.stage, a.out.display()))?;
    Ok(EXIT_OK)
}

fn eval_cmd(a: EvalArgs, out: &mut dyn Write) -> Result<i32> {
    let ablation = Ablation::from(a.ablate);
    print_config(
        out,
        json!({"command": "eval", "data": a.data, "ckpt": a.ckpt, "ablation": ablation, "json": a.json,
               "threshold": DEFAULT_THRESHOLD}),
    )?;
    let ckpt = load_checkpoint(&a.ckpt)?;
    let mc = ckpt.model.config().clone();
    let samples = load_dataset(&a.data, mc.time_steps, mc.cells)?;
    let report = evaluate(&samples, &ckpt, ablation)?;
    let m = &report.metrics;
    emit(out, format_args!("accuracy  {:.4}", m.accuracy))?;
    emit(out, format_args!("precision {:.4}", m.precision))?;
    emit(out, format_args!("recall    {:.4}", m.recall))?;
    emit(out, format_args!("f1        {:.4}", m.f1))?;
    match m.auc {
        Some(v) => emit(out, format_args!("auc       {v:.4}"))?,
        None => emit(out, "auc       undefined (single class)")?,
    }
    if let Some(p) = &a.json {
        report.write_json(p)?;
    }
    Ok(EXIT_OK)
}

fn infer_cmd(a: InferArgs, out: &mut dyn Write) -> Result<i32> {
    print_config(
        out,
        json!({"command": "infer", "ckpt": a.ckpt, "seq": a.seq, "img": a.img, "threshold": DEFAULT_THRESHOLD}),
    )?;
    let ckpt = load_checkpoint(&a.ckpt)?;
    if ckpt.stage != Stage::Detector {
        return Err(Error::Contract(format!(
            "inference needs a detector checkpoint, {} is stage {}",
            a.ckpt.display(),
            ckpt.stage
        )));
    }
    let mc = ckpt.model.config();
    let seq = read_sequence_csv(&a.seq, mc.time_steps, mc.cells)?;
    let img = read_image_pgm(&a.img)?;
    let p = ckpt.model.score(&seq, &img, Ablation::None)?;
    emit(out, format_args!("probability {p:.4}"))?;
    emit(out, format_args!("label {}", u8::from(p >= DEFAULT_THRESHOLD)))?;
    Ok(EXIT_OK)
}

fn gradcheck_cmd(a: GradcheckArgs, out: &mut dyn Write) -> Result<i32> {
    print_config(out, json!({"command": "gradcheck", "seed": a.seed}))?;
    let rows = gradient_self_check(a.seed)?;
    emit(out, format_args!("{:<18} {:>12} {:>10}  {}", "check", "max_rel_err", "threshold", "status"))?;
    let mut ok = true;
    for r in &rows {
        let pass = r.passed();
        ok &= pass;
        emit(
            out,
            format_args!(
                "{:<18} {:>12.3e} {:>10.0e}  {}",
                r.name,
                r.max_rel_error,
                r.threshold,
                if pass { "ok" } else { "FAIL" }
            ),
        )?;
    }
    Ok(if ok { EXIT_OK } else { EXIT_CONTRACT })
}

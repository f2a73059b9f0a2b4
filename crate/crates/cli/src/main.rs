//! `sfnet`: generate synthetic corpora, train, evaluate, sweep and
//! gradient-check from the command line.
//!
//! Exit status is 0 on success, 1 for bad input (arguments, config, files)
//! and 2 when the computation itself fails.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use sfnet_core::checkpoint::Checkpoint;
use sfnet_core::config::{parse_pairs, TrainConfig};
use sfnet_core::data::{csvio, generate_corpus, load_corpus, save_corpus, FeatureCorpus, Split, SyntheticSpec};
use sfnet_core::harness::{
    evaluate_params, gradcheck, log_dir, param_name, score_predictions, summarize, sweep, sweep_csv, GradcheckSpec,
    GradientFault, SweepParam,
};
use sfnet_core::inference::{FrameDetection, Segment};
use sfnet_core::mining::AnnotationStrategy;
use sfnet_core::model::ModelDims;
use sfnet_core::train::{log_csv, train};
use sfnet_core::Error;

const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Parser)]
#[command(name = "sfnet", version, about = "Single-frame supervised temporal action localization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic feature corpus.
    Gen(GenArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint, or scored prediction files, on a corpus split.
    Eval(EvalArgs),
    /// Train and evaluate once per value of one hyper-parameter.
    Sweep(SweepArgs),
    /// Compare tape gradients of the full objective with finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Ablation preset: weak, sf, sfb, sfba or sfbae.
    #[arg(long)]
    preset: Option<String>,
    /// Override one config key, e.g. `--set eta=2`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self, base: Option<TrainConfig>) -> Result<TrainConfig, Error> {
        let mut cfg = match (&self.config, base) {
            (Some(path), _) => TrainConfig::load(path)?,
            (None, Some(base)) => base,
            (None, None) => TrainConfig::default(),
        };
        if let Some(p) = &self.preset {
            cfg = cfg.with_overrides([("preset", p.as_str())])?;
        }
        cfg.with_overrides(split_overrides(&self.overrides)?)
    }
}

fn split_overrides(raw: &[String]) -> Result<Vec<(String, String)>, Error> {
    raw.iter()
        .map(|kv| {
            kv.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| Error::Argument(format!("override {kv:?} is not KEY=VALUE")))
        })
        .collect()
}

#[derive(Args)]
struct GenArgs {
    /// Spec file of `key = value` lines; defaults apply to missing keys.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Override one spec key. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long, short)]
    out: PathBuf,
    /// Also write test-split ground truth as CSV.
    #[arg(long)]
    ground_truth_csv: Option<PathBuf>,
    /// Also write training annotations of one strategy as CSV.
    #[arg(long)]
    annotations_csv: Option<PathBuf>,
    #[arg(long, default_value = "human_like")]
    strategy: AnnotationStrategy,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    /// Checkpoint to write.
    #[arg(long, short)]
    out: PathBuf,
    /// Training log CSV. Defaults to `$SFNET_LOG_DIR/<checkpoint>.log.csv`,
    /// or next to the checkpoint when the variable is unset.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, required_unless_present = "segments", conflicts_with_all = ["segments", "detections"])]
    checkpoint: Option<PathBuf>,
    /// Predicted segments CSV (video_id,class,start,end,confidence).
    #[arg(long)]
    segments: Option<PathBuf>,
    /// Single-frame detections CSV (video_id,class,frame,confidence).
    #[arg(long, requires = "segments")]
    detections: Option<PathBuf>,
    /// Inference and metric settings; the checkpoint's own config is the base.
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, default_value = "test")]
    split: Split,
    /// Report CSV; stdout when omitted.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Write the model's segments here.
    #[arg(long)]
    segments_out: Option<PathBuf>,
    /// Write the model's single-frame detections here.
    #[arg(long)]
    detections_out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    /// eta, alpha, beta or theta.
    #[arg(long)]
    param: SweepParam,
    /// Comma-separated values.
    #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
    values: Vec<f64>,
    /// Table CSV; stdout when omitted.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 2)]
    videos: usize,
    #[arg(long, default_value_t = 12)]
    frames: usize,
    #[arg(long, default_value_t = 6)]
    dim: usize,
    #[arg(long, default_value_t = 3)]
    classes: usize,
    #[arg(long, default_value_t = 5)]
    hidden: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Corrupt one analytic gradient entry, as `BLOCK:ENTRY:DELTA`, to see the check fail.
    #[arg(long, value_name = "BLOCK:ENTRY:DELTA")]
    inject_fault: Option<String>,
}

/// Failure of a subcommand with its exit status.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) | Error::Argument(_) | Error::Parse { .. } | Error::Io { .. } => 1,
            Error::Shape { .. } | Error::NonFinite(_) | Error::Divergence { .. } => 2,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("sfnet: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn io_error(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        context: path.display().to_string(),
        source: e,
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, Error> {
    File::create(path).map(BufWriter::new).map_err(|e| io_error(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>, Error> {
    File::open(path).map(BufReader::new).map_err(|e| io_error(path, e))
}

fn write_text(path: Option<&Path>, text: &str) -> Result<(), Error> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| io_error(p, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_gen(a: GenArgs) -> Result<(), Failure> {
    let mut pairs = match &a.spec {
        Some(p) => parse_pairs(&std::fs::read_to_string(p).map_err(|e| io_error(p, e))?)?,
        None => Vec::new(),
    };
    pairs.extend(split_overrides(&a.overrides)?);
    let text: String = pairs.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
    let spec = SyntheticSpec::parse(&text)?;
    let corpus = generate_corpus(&spec)?;
    save_corpus(&corpus, &a.out)?;
    if let Some(p) = &a.ground_truth_csv {
        csvio::write_ground_truth(create(p)?, &corpus.ground_truth(Split::Test))?;
    }
    if let Some(p) = &a.annotations_csv {
        let mut anns = Vec::new();
        for v in corpus.split(Split::Train) {
            anns.extend_from_slice(v.annotations_for(a.strategy)?);
        }
        csvio::write_annotations(create(p)?, &anns)?;
    }
    println!("{}", summarize(&corpus));
    Ok(())
}

fn default_log_path(checkpoint: &Path) -> PathBuf {
    let name = format!(
        "{}.log.csv",
        checkpoint.file_stem().map_or("train".into(), |s| s.to_string_lossy())
    );
    match log_dir() {
        Some(dir) => dir.join(name),
        None => checkpoint.with_file_name(name),
    }
}

fn cmd_train(a: TrainArgs) -> Result<(), Failure> {
    let cfg = a.config.resolve(None)?;
    let corpus = load_corpus(&a.corpus)?;
    let outcome = train(&corpus, &cfg)?;
    Checkpoint {
        params: outcome.params,
        config: cfg.to_text(),
        iterations: cfg.iterations,
    }
    .save(&a.out)?;
    let log_path = a.log.unwrap_or_else(|| default_log_path(&a.out));
    if let Some(dir) = log_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    write_text(Some(&log_path), &log_csv(&outcome.log))?;
    if let Some(last) = outcome.log.last() {
        println!("iterations: {}  final loss: {:.6}", last.iter, last.loss.total);
    }
    println!("checkpoint: {}", a.out.display());
    println!("log: {}", log_path.display());
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<(), Failure> {
    let corpus: FeatureCorpus = load_corpus(&a.corpus)?;
    let report = match &a.checkpoint {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            let cfg = a.config.resolve(Some(TrainConfig::parse(&ckpt.config)?))?;
            let (preds, report) = evaluate_params(&ckpt.params, &corpus, a.split, &cfg)?;
            if let Some(p) = &a.segments_out {
                let segs: Vec<Segment> = preds.iter().flat_map(|p| p.segments.iter().copied()).collect();
                csvio::write_segments(create(p)?, &segs)?;
            }
            if let Some(p) = &a.detections_out {
                let dets: Vec<FrameDetection> = preds.iter().flat_map(|p| p.detections.iter().copied()).collect();
                csvio::write_detections(create(p)?, &dets)?;
            }
            report
        }
        None => {
            let cfg = a.config.resolve(None)?;
            let seg_path = a.segments.as_deref().expect("clap requires segments");
            let segments = csvio::read_segments(open(seg_path)?)?;
            let detections = match &a.detections {
                Some(p) => csvio::read_detections(open(p)?)?,
                None => Vec::new(),
            };
            info!("scoring {} segments and {} detections", segments.len(), detections.len());
            score_predictions(&corpus, a.split, &segments, &detections, &cfg)?
        }
    };
    write_text(a.out.as_deref(), &report.to_csv())?;
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> Result<(), Failure> {
    let cfg = a.config.resolve(None)?;
    let corpus = load_corpus(&a.corpus)?;
    let rows = sweep(&corpus, &cfg, a.param, &a.values)?;
    write_text(a.out.as_deref(), &sweep_csv(a.param, &rows))?;
    Ok(())
}

fn parse_fault(raw: &str) -> Result<GradientFault, Error> {
    let bad = || Error::Argument(format!("fault {raw:?} is not BLOCK:ENTRY:DELTA"));
    let parts: Vec<&str> = raw.split(':').collect();
    let [param, entry, delta] = parts[..] else {
        return Err(bad());
    };
    Ok(GradientFault {
        param: param.parse().map_err(|_| bad())?,
        entry: entry.parse().map_err(|_| bad())?,
        delta: delta.parse().map_err(|_| bad())?,
    })
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<(), Failure> {
    let spec = GradcheckSpec {
        videos: a.videos,
        frames: a.frames,
        dim: a.dim,
        classes: a.classes,
        hidden: a.hidden,
        seed: a.seed,
        ..GradcheckSpec::default()
    };
    let fault = a.inject_fault.as_deref().map(parse_fault).transpose()?;
    let report = gradcheck(&spec, fault)?;
    let dims = ModelDims {
        input_dim: spec.dim,
        hidden: spec.hidden,
        num_classes: spec.classes,
        kernel_width: spec.kernel_width,
    };
    let mut out = std::io::stdout().lock();
    for p in &report.per_param {
        writeln!(out, "{:<16} max rel err {:.3e}", param_name(&dims, p.param), p.rel_error).ok();
    }
    let worst = report.worst().expect("the model has parameters");
    let line = format!(
        "worst: {} entry {} analytic {:.9e} numeric {:.9e} rel err {:.3e}",
        param_name(&dims, worst.param),
        worst.entry,
        worst.analytic,
        worst.numeric,
        worst.rel_error
    );
    if report.passes(GRADCHECK_TOLERANCE) {
        writeln!(out, "PASS {line}").ok();
        Ok(())
    } else {
        writeln!(out, "FAIL {line}").ok();
        Err(Failure {
            code: 2,
            message: format!("gradient check failed (tolerance {GRADCHECK_TOLERANCE:e})"),
        })
    }
}

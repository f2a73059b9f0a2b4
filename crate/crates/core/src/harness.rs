//! Operations behind the command-line subcommands: corpus summaries,
//! train-and-evaluate, hyper-parameter sweeps and the full-objective
//! gradient check.

use std::fmt;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::config::TrainConfig;
use crate::data::{FeatureCorpus, Split};
use crate::error::{Error, Result};
use crate::eval::{evaluate, iou_label, EvalReport, IOU_THRESHOLDS};
use crate::inference::{FrameDetection, Segment, VideoPrediction};
use crate::mining::{mine_pseudo_labels, FrameAnnotation};
use crate::model::{forward_on_tape, ModelDims, SFNetParams};
use crate::numeric::gradcheck::{analytic_gradients, compare_gradients, DEFAULT_STEP};
use crate::numeric::{GradCheckReport, Tape, Tensor, Var};
use crate::objectives::BatchObjective;
use crate::train::{predict_split, train, TrainOutcome};

/// Directory for training logs when set.
pub const LOG_DIR_ENV: &str = "SFNET_LOG_DIR";

pub fn log_dir() -> Option<PathBuf> {
    std::env::var_os(LOG_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSummary {
    pub videos: usize,
    pub train: usize,
    pub test: usize,
    pub segments: usize,
    pub min_length: usize,
    pub max_length: usize,
    /// Segments per class, index 0 unused.
    pub class_histogram: Vec<usize>,
}

pub fn summarize(corpus: &FeatureCorpus) -> CorpusSummary {
    let lengths = corpus.videos.iter().map(|v| v.length);
    CorpusSummary {
        videos: corpus.videos.len(),
        train: corpus.split(Split::Train).len(),
        test: corpus.split(Split::Test).len(),
        segments: corpus.num_segments(),
        min_length: lengths.clone().min().unwrap_or(0),
        max_length: lengths.max().unwrap_or(0),
        class_histogram: corpus.class_histogram(),
    }
}

impl fmt::Display for CorpusSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "videos: {} ({} train, {} test)", self.videos, self.train, self.test)?;
        writeln!(f, "frames per video: {}..{}", self.min_length, self.max_length)?;
        writeln!(f, "segments: {}", self.segments)?;
        let hist: Vec<String> = self.class_histogram[1..]
            .iter()
            .enumerate()
            .map(|(c, n)| format!("{}:{n}", c + 1))
            .collect();
        write!(f, "class histogram: {}", hist.join(" "))
    }
}

fn video_labels(corpus: &FeatureCorpus, ids: impl Iterator<Item = u32>) -> Result<Vec<Vec<usize>>> {
    ids.map(|id| {
        corpus
            .video(id)
            .map(|v| v.labels())
            .ok_or_else(|| Error::argument(format!("prediction for unknown video {id}")))
    })
    .collect()
}

/// Score model predictions on one split.
pub fn evaluate_predictions(
    corpus: &FeatureCorpus,
    split: Split,
    predictions: &[VideoPrediction],
    cfg: &TrainConfig,
) -> Result<EvalReport> {
    let labels = video_labels(corpus, predictions.iter().map(|p| p.video))?;
    Ok(evaluate(predictions, &corpus.ground_truth(split), &labels, cfg.ap_mode()))
}

/// Score externally produced segments and detections on one split.
///
/// A video's class probability is taken as the highest confidence of its
/// segments of that class, clipped to `[0, 1]`.
pub fn score_predictions(
    corpus: &FeatureCorpus,
    split: Split,
    segments: &[Segment],
    detections: &[FrameDetection],
    cfg: &TrainConfig,
) -> Result<EvalReport> {
    let preds: Vec<VideoPrediction> = corpus
        .split(split)
        .iter()
        .map(|v| {
            let segs: Vec<Segment> = segments.iter().filter(|s| s.video == v.id).copied().collect();
            let mut probs = vec![0.0; corpus.num_classes + 1];
            for s in &segs {
                if s.class <= corpus.num_classes {
                    probs[s.class] = f64::max(probs[s.class], s.confidence.clamp(0.0, 1.0));
                }
            }
            VideoPrediction {
                video: v.id,
                class_probabilities: probs,
                labels: Vec::new(),
                segments: segs,
                detections: detections.iter().filter(|d| d.video == v.id).copied().collect(),
            }
        })
        .collect();
    evaluate_predictions(corpus, split, &preds, cfg)
}

/// Report on `split` for the given weights.
pub fn evaluate_params(
    params: &SFNetParams,
    corpus: &FeatureCorpus,
    split: Split,
    cfg: &TrainConfig,
) -> Result<(Vec<VideoPrediction>, EvalReport)> {
    let preds = predict_split(params, corpus, split, cfg)?;
    let report = evaluate_predictions(corpus, split, &preds, cfg)?;
    Ok((preds, report))
}

/// Train on the training split and report on the test split.
pub fn train_and_evaluate(corpus: &FeatureCorpus, cfg: &TrainConfig) -> Result<(TrainOutcome, EvalReport)> {
    let outcome = train(corpus, cfg)?;
    let (_, report) = evaluate_params(&outcome.params, corpus, Split::Test, cfg)?;
    Ok((outcome, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Eta,
    Alpha,
    Beta,
    Theta,
}

impl SweepParam {
    pub fn key(self) -> &'static str {
        match self {
            Self::Eta => "eta",
            Self::Alpha => "alpha",
            Self::Beta => "beta",
            Self::Theta => "theta",
        }
    }

    fn set(self, cfg: &mut TrainConfig, v: f64) {
        match self {
            Self::Eta => cfg.eta = v,
            Self::Alpha => cfg.alpha = v,
            Self::Beta => cfg.beta = v,
            Self::Theta => cfg.theta = v,
        }
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eta" | "η" => Ok(Self::Eta),
            "alpha" | "α" => Ok(Self::Alpha),
            "beta" | "β" => Ok(Self::Beta),
            "theta" | "θ" => Ok(Self::Theta),
            _ => Err(Error::config(format!("cannot sweep {s:?}; choose eta, alpha, beta or theta"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub report: EvalReport,
    /// Background frames mined over the whole run.
    pub background_frames: usize,
}

/// Train and evaluate once per value. Only the threshold changes nothing
/// about training, so a θ sweep trains a single model.
pub fn sweep(corpus: &FeatureCorpus, base: &TrainConfig, param: SweepParam, values: &[f64]) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::config("sweep needs at least one value"));
    }
    let mut shared: Option<TrainOutcome> = None;
    let mut rows = Vec::with_capacity(values.len());
    for &value in values {
        let mut cfg = base.clone();
        param.set(&mut cfg, value);
        cfg.validate()?;
        let outcome = match (param, &shared) {
            (SweepParam::Theta, Some(o)) => o.clone(),
            _ => train(corpus, &cfg)?,
        };
        let (_, report) = evaluate_params(&outcome.params, corpus, Split::Test, &cfg)?;
        rows.push(SweepRow {
            value,
            report,
            background_frames: outcome.log.iter().map(|r| r.background_frames).sum(),
        });
        if param == SweepParam::Theta {
            shared = Some(outcome);
        }
    }
    Ok(rows)
}

pub fn sweep_csv(param: SweepParam, rows: &[SweepRow]) -> String {
    let mut cols = vec!["mAP@hit".to_string()];
    cols.extend(IOU_THRESHOLDS.iter().map(|&t| iou_label(t)));
    cols.push("AVG(0.1:0.7)".into());
    cols.push("AVG(0.1:0.5)".into());
    let mut out = format!("{},{},background_frames\n", param.key(), cols.join(","));
    for r in rows {
        let vals: Vec<String> = cols
            .iter()
            .map(|c| format!("{:.6}", r.report.get(c).unwrap_or(f64::NAN)))
            .collect();
        writeln!(out, "{},{},{}", r.value, vals.join(","), r.background_frames).unwrap();
    }
    out
}

/// Toy problem for the full-objective gradient check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckSpec {
    pub videos: usize,
    pub frames: usize,
    pub dim: usize,
    pub classes: usize,
    pub hidden: usize,
    pub kernel_width: usize,
    pub seed: u64,
}

impl Default for GradcheckSpec {
    fn default() -> Self {
        GradcheckSpec {
            videos: 2,
            frames: 12,
            dim: 6,
            classes: 3,
            hidden: 5,
            kernel_width: 3,
            seed: 0,
        }
    }
}

/// Deliberate damage to one analytic gradient entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientFault {
    pub param: usize,
    pub entry: usize,
    pub delta: f64,
}

/// Check tape gradients of the full objective against central differences
/// on a random toy batch. Pseudo labels are mined once from the initial
/// scores and then held fixed so the objective is a smooth function of the
/// weights.
pub fn gradcheck(spec: &GradcheckSpec, fault: Option<GradientFault>) -> Result<GradCheckReport> {
    if spec.videos == 0 || spec.videos > 2 || spec.frames == 0 || spec.frames > 12 || spec.dim == 0 || spec.dim > 6 {
        return Err(Error::config("gradcheck wants a toy batch: N ≤ 2, T ≤ 12, D ≤ 6"));
    }
    let dims = ModelDims {
        input_dim: spec.dim,
        hidden: spec.hidden,
        num_classes: spec.classes,
        kernel_width: spec.kernel_width,
    };
    let mut params = SFNetParams::init(dims, spec.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5f5f);
    // Zero biases put every all-off hidden layer exactly on a ReLU kink,
    // where central differences disagree with any one-sided derivative.
    for (t, (name, _)) in params.tensors.iter_mut().zip(dims.layout()) {
        if name.ends_with("bias") {
            t.data_mut().iter_mut().for_each(|b| *b = rng.random_range(-0.1..0.1));
        }
    }
    let (n, t, d) = (spec.videos, spec.frames, spec.dim);
    // the second video is shorter so padding is exercised
    let lengths: Vec<usize> = (0..n).map(|i| (t - (3 * i).min(t / 2)).max(1)).collect();
    let mut x = vec![0.0; n * t * d];
    for (row, &len) in lengths.iter().enumerate() {
        for v in &mut x[row * t * d..(row * t + len) * d] {
            *v = rng.sample(StandardNormal);
        }
    }
    let x = Tensor::new(vec![n, t, d], x)?;
    let annotations: Vec<Vec<FrameAnnotation>> = lengths
        .iter()
        .enumerate()
        .map(|(row, &len)| {
            let count = if len > 1 { 2 } else { 1 };
            let mut frames: Vec<usize> = (0..count).map(|_| rng.random_range(0..len)).collect();
            frames.sort_unstable();
            frames.dedup();
            frames
                .into_iter()
                .map(|frame| FrameAnnotation {
                    video: row as u32,
                    frame,
                    class: rng.random_range(1..=spec.classes),
                })
                .collect()
        })
        .collect();

    let cfg = TrainConfig {
        eta: 1.0,
        ..TrainConfig::default()
    };
    let maps = params.forward(&x, &lengths)?;
    let labels = mine_pseudo_labels(&maps.probabilities(), &lengths, &annotations, &cfg.mining())?;
    let objective = BatchObjective {
        lengths: &lengths,
        annotations: &annotations,
        labels: &labels,
        weights: cfg.loss_weights(spec.classes),
        terms: cfg.loss_terms(),
        k_ratio: cfg.k_ratio,
    };
    let f = |tape: &mut Tape, vars: &[Var]| -> Result<Var> {
        let xv = tape.constant(x.clone());
        let (c, a) = forward_on_tape(tape, vars, xv, &lengths)?;
        Ok(objective.record(tape, c, a)?.0)
    };
    let mut analytic = analytic_gradients(&params.tensors, &f)?;
    if let Some(fault) = fault {
        let g = analytic
            .get_mut(fault.param)
            .ok_or_else(|| Error::argument(format!("no parameter block {}", fault.param)))?;
        let slot = g
            .data_mut()
            .get_mut(fault.entry)
            .ok_or_else(|| Error::argument(format!("block {} has no entry {}", fault.param, fault.entry)))?;
        *slot += fault.delta;
    }
    compare_gradients(&params.tensors, &analytic, &f, DEFAULT_STEP)
}

/// Name of parameter block `i` in model layout order.
pub fn param_name(dims: &ModelDims, i: usize) -> &'static str {
    dims.layout().get(i).map_or("?", |(n, _)| *n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_toy_gradcheck_passes() {
        let r = gradcheck(&GradcheckSpec::default(), None).unwrap();
        assert!(r.passes(1e-4), "{:?}", r.worst());
    }

    #[test]
    fn single_class_gradcheck_passes() {
        let spec = GradcheckSpec {
            classes: 1,
            ..GradcheckSpec::default()
        };
        let r = gradcheck(&spec, None).unwrap();
        assert!(r.passes(1e-4), "{:?}", r.worst());
    }

    #[test]
    fn injected_fault_is_caught() {
        let fault = GradientFault {
            param: 0,
            entry: 3,
            delta: 0.1,
        };
        let r = gradcheck(&GradcheckSpec::default(), Some(fault)).unwrap();
        assert!(!r.passes(1e-4));
        let w = r.worst().unwrap();
        assert_eq!((w.param, w.entry), (0, 3));
    }

    #[test]
    fn oversized_toy_is_rejected() {
        let spec = GradcheckSpec {
            frames: 40,
            ..GradcheckSpec::default()
        };
        assert!(gradcheck(&spec, None).is_err());
    }

    #[test]
    fn sweep_parameter_names() {
        assert_eq!("η".parse::<SweepParam>().unwrap(), SweepParam::Eta);
        assert_eq!("theta".parse::<SweepParam>().unwrap(), SweepParam::Theta);
        assert!("lr".parse::<SweepParam>().is_err());
    }
}

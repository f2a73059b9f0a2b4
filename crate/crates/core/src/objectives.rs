//! Frame, background, actionness and video losses and their weighted total.
//!
//! Every function records onto a [`Tape`] so the total can be differentiated
//! with respect to the model parameters. Empty frame sets contribute a
//! constant zero.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mining::{ActionFrame, FrameAnnotation, Origin, PseudoLabelSet};
use crate::numeric::{Tape, Tensor, Var};

/// Values of every loss term for one batch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub frame_labeled: f64,
    pub frame_background: f64,
    pub frame_total: f64,
    pub actionness: f64,
    pub video: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// Assemble the breakdown from its four primitive terms.
    pub fn compose(
        frame_labeled: f64,
        frame_background: f64,
        actionness: f64,
        video: f64,
        weights: &LossWeights,
    ) -> Self {
        let frame_total = frame_loss_total(frame_labeled, frame_background, weights.num_classes);
        Self {
            frame_labeled,
            frame_background,
            frame_total,
            actionness,
            video,
            total: frame_total + weights.alpha * video + weights.beta * actionness,
        }
    }

    pub fn is_finite(&self) -> bool {
        [
            self.frame_labeled,
            self.frame_background,
            self.frame_total,
            self.actionness,
            self.video,
            self.total,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    /// Video loss weight.
    pub alpha: f64,
    /// Actionness loss weight.
    pub beta: f64,
    /// `Nc`; the background frame loss is divided by it.
    pub num_classes: usize,
}

/// Which terms enter the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LossTerms {
    pub frame: bool,
    pub background: bool,
    pub actionness: bool,
    pub video: bool,
    /// Expanded frames count as actionness positives, not only anchors.
    pub expanded_actionness: bool,
}

impl Default for LossTerms {
    fn default() -> Self {
        Self {
            frame: true,
            background: true,
            actionness: true,
            video: true,
            expanded_actionness: true,
        }
    }
}

/// `labeled + background / Nc`.
pub fn frame_loss_total(labeled: f64, background: f64, num_classes: usize) -> f64 {
    labeled + background / num_classes as f64
}

fn zero(tape: &mut Tape) -> Var {
    tape.constant(Tensor::scalar(0.0))
}

fn dims3(tape: &Tape, v: Var, what: &'static str) -> Result<(usize, usize, usize)> {
    match tape.value(v).shape() {
        [n, t, c] => Ok((*n, *t, *c)),
        [n, t] => Ok((*n, *t, 1)),
        other => Err(Error::Shape {
            op: what,
            lhs: other.to_vec(),
            rhs: vec![],
        }),
    }
}

/// Mean cross-entropy over labelled frames, given `[N, T, Nc + 1]` log-probabilities.
pub fn frame_loss_labeled(tape: &mut Tape, log_probs: Var, frames: &[ActionFrame]) -> Result<Var> {
    if frames.is_empty() {
        warn!("no labelled frames in batch; frame loss is zero");
        return Ok(zero(tape));
    }
    let (_, t, c) = dims3(tape, log_probs, "frame_loss_labeled")?;
    let index = frames
        .iter()
        .map(|f| (f.row * t + f.frame) * c + f.class)
        .collect();
    let picked = tape.gather(log_probs, index)?;
    let k = frames.len() as f64;
    tape.weighted_sum(picked, vec![-1.0 / k; frames.len()])
}

/// Mean background-class cross-entropy over mined background frames.
pub fn frame_loss_background(
    tape: &mut Tape,
    log_probs: Var,
    frames: &[(usize, usize)],
) -> Result<Var> {
    if frames.is_empty() {
        return Ok(zero(tape));
    }
    let (_, t, c) = dims3(tape, log_probs, "frame_loss_background")?;
    let index = frames.iter().map(|&(n, f)| (n * t + f) * c).collect();
    let picked = tape.gather(log_probs, index)?;
    let m = frames.len() as f64;
    tape.weighted_sum(picked, vec![-1.0 / m; frames.len()])
}

/// Binary cross-entropy on actionness logits: labelled frames are positives,
/// mined background frames negatives.
pub fn actionness_loss(
    tape: &mut Tape,
    actionness: Var,
    action: &[ActionFrame],
    background: &[(usize, usize)],
) -> Result<Var> {
    let (_, t, _) = dims3(tape, actionness, "actionness_loss")?;
    let mut terms = Vec::new();
    if !action.is_empty() {
        let ls = tape.log_sigmoid(actionness);
        let idx = action.iter().map(|f| f.row * t + f.frame).collect();
        let picked = tape.gather(ls, idx)?;
        let k = action.len() as f64;
        terms.push((tape.weighted_sum(picked, vec![-1.0 / k; action.len()])?, 1.0));
    }
    if !background.is_empty() {
        // log(1 - σ(a)) = log σ(-a)
        let neg = tape.scale(actionness, -1.0);
        let ls = tape.log_sigmoid(neg);
        let idx = background.iter().map(|&(n, f)| n * t + f).collect();
        let picked = tape.gather(ls, idx)?;
        let m = background.len() as f64;
        terms.push((tape.weighted_sum(picked, vec![-1.0 / m; background.len()])?, 1.0));
    }
    match terms.len() {
        0 => Ok(zero(tape)),
        1 => Ok(terms[0].0),
        _ => tape.combine(&terms),
    }
}

/// Top-k length for a video of `len` frames: `max(1, floor(len / k_ratio))`.
pub fn topk_len(len: usize, k_ratio: usize) -> usize {
    (len / k_ratio.max(1)).max(1)
}

/// Empirical class distribution of a video's annotations over `Nc + 1` outputs.
pub fn video_label_distribution(annotations: &[FrameAnnotation], outputs: usize) -> Vec<f64> {
    let mut q = vec![0.0; outputs];
    for a in annotations {
        q[a.class] += 1.0;
    }
    let total = annotations.len() as f64;
    if total > 0.0 {
        q.iter_mut().for_each(|v| *v /= total);
    }
    q
}

/// Pooled per-class logits `[N, Nc + 1]` via top-k temporal averaging.
pub fn video_class_encoding(
    tape: &mut Tape,
    logits: Var,
    lengths: &[usize],
    k_ratio: usize,
) -> Result<Var> {
    let k: Vec<usize> = lengths.iter().map(|&l| topk_len(l, k_ratio)).collect();
    tape.topk_pool_time(logits, lengths, &k)
}

/// Multi-label video classification loss on top-k pooled logits.
///
/// The target of each video is the label histogram of its annotations; the
/// softmax spans all `Nc + 1` outputs while the sum runs over action classes.
/// Videos without annotations are left out of the average.
pub fn video_loss(
    tape: &mut Tape,
    logits: Var,
    lengths: &[usize],
    annotations: &[Vec<FrameAnnotation>],
    k_ratio: usize,
) -> Result<Var> {
    let (n, _, c) = dims3(tape, logits, "video_loss")?;
    if annotations.len() != n {
        return Err(Error::argument("one annotation list per video required"));
    }
    let annotated = annotations.iter().filter(|a| !a.is_empty()).count();
    if annotated < n {
        warn!("{} videos without annotations left out of the video loss", n - annotated);
    }
    if annotated == 0 {
        return Ok(zero(tape));
    }
    let r = video_class_encoding(tape, logits, lengths, k_ratio)?;
    let log_p = tape.log_softmax(r);
    let mut weights = vec![0.0; n * c];
    for (i, anns) in annotations.iter().enumerate() {
        if anns.is_empty() {
            continue;
        }
        let q = video_label_distribution(anns, c);
        for j in 1..c {
            weights[i * c + j] = -q[j] / annotated as f64;
        }
    }
    tape.weighted_sum(log_p, weights)
}

/// Inputs shared by every term of one batch objective.
pub struct BatchObjective<'a> {
    pub lengths: &'a [usize],
    pub annotations: &'a [Vec<FrameAnnotation>],
    pub labels: &'a PseudoLabelSet,
    pub weights: LossWeights,
    pub terms: LossTerms,
    pub k_ratio: usize,
}

impl BatchObjective<'_> {
    /// Record the full objective; returns the scalar total and its breakdown.
    pub fn record(&self, tape: &mut Tape, logits: Var, actionness: Var) -> Result<(Var, LossBreakdown)> {
        let zero_if = |tape: &mut Tape, on: bool, f: &mut dyn FnMut(&mut Tape) -> Result<Var>| {
            if on {
                f(tape)
            } else {
                Ok(zero(tape))
            }
        };
        let labels = self.labels;
        let log_p = if self.terms.frame || self.terms.background {
            Some(tape.log_softmax(logits))
        } else {
            None
        };
        let frame_l = zero_if(tape, self.terms.frame, &mut |tape| {
            frame_loss_labeled(tape, log_p.unwrap(), &labels.action_frames)
        })?;
        let frame_b = zero_if(tape, self.terms.background, &mut |tape| {
            frame_loss_background(tape, log_p.unwrap(), &labels.background_frames)
        })?;
        let act = zero_if(tape, self.terms.actionness, &mut |tape| {
            if self.terms.expanded_actionness {
                actionness_loss(tape, actionness, &labels.action_frames, &labels.background_frames)
            } else {
                let anchors: Vec<ActionFrame> =
                    labels.action_frames.iter().filter(|f| f.origin == Origin::Anchor).copied().collect();
                actionness_loss(tape, actionness, &anchors, &labels.background_frames)
            }
        })?;
        let video = zero_if(tape, self.terms.video, &mut |tape| {
            video_loss(tape, logits, self.lengths, self.annotations, self.k_ratio)
        })?;
        let w = self.weights;
        let total = tape.combine(&[
            (frame_l, 1.0),
            (frame_b, 1.0 / w.num_classes as f64),
            (video, w.alpha),
            (act, w.beta),
        ])?;
        let v = |var: Var| tape.value(var).item();
        let breakdown = LossBreakdown::compose(v(frame_l), v(frame_b), v(act), v(video), &w);
        Ok((total, breakdown))
    }
}

//! Pseudo-label mining around single-frame annotations, and simulators that
//! draw single-frame annotations from ground-truth segments.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Beta, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::Segment;
use crate::numeric::Tensor;

/// One annotated frame: the annotator saw class `class` at `frame`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FrameAnnotation {
    pub video: u32,
    pub frame: usize,
    pub class: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Origin {
    Anchor,
    Expanded,
}

/// A labelled action frame inside a batch; `row` indexes the batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ActionFrame {
    pub row: usize,
    pub frame: usize,
    pub class: usize,
    pub origin: Origin,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PseudoLabelSet {
    pub action_frames: Vec<ActionFrame>,
    /// `(row, frame)` pairs, sorted by mining rank.
    pub background_frames: Vec<(usize, usize)>,
}

impl PseudoLabelSet {
    pub fn num_anchors(&self) -> usize {
        self.action_frames
            .iter()
            .filter(|f| f.origin == Origin::Anchor)
            .count()
    }

    pub fn num_expanded(&self) -> usize {
        self.action_frames.len() - self.num_anchors()
    }
}

/// What happens after the first frame that fails the expansion test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpansionMode {
    #[default]
    StopOnFailure,
    /// Keep testing the remaining frames within the radius.
    ScanAll,
}

impl FromStr for ExpansionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stop_on_failure" | "stop" => Ok(Self::StopOnFailure),
            "scan_all" | "scan" => Ok(Self::ScanAll),
            _ => Err(Error::config(format!("unknown expansion mode {s:?}"))),
        }
    }
}

impl fmt::Display for ExpansionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::StopOnFailure => "stop_on_failure",
            Self::ScanAll => "scan_all",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MiningConfig {
    pub expand: bool,
    pub radius: usize,
    pub xi: f64,
    pub mode: ExpansionMode,
    pub background: bool,
    pub eta: f64,
}

impl Default for MiningConfig {
    fn default() -> Self {
        Self {
            expand: true,
            radius: 5,
            xi: 0.9,
            mode: ExpansionMode::StopOnFailure,
            background: true,
            eta: 5.0,
        }
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Grow one anchor into neighbouring frames.
///
/// `scores` holds `len` rows of `classes` scores for a single video. A frame
/// `f` at distance `1..=radius` from the anchor is accepted when frames
/// `f - 1`, `f`, `f + 1` (clamped to the video) share one predicted class and
/// `scores[f][y] >= xi * scores[t][y]`. Returns accepted frames in ascending
/// order, the anchor excluded.
pub fn expand_anchor(
    scores: &[f64],
    classes: usize,
    anchor_frame: usize,
    class: usize,
    radius: usize,
    xi: f64,
    mode: ExpansionMode,
) -> Result<Vec<usize>> {
    let len = scores.len() / classes;
    if anchor_frame >= len {
        return Err(Error::argument(format!(
            "anchor frame {anchor_frame} outside video of {len} frames"
        )));
    }
    if class >= classes {
        return Err(Error::argument(format!(
            "anchor class {class} outside {classes} outputs"
        )));
    }
    if !(xi > 0.0 && xi <= 1.0) {
        return Err(Error::argument(format!("xi must be in (0, 1], got {xi}")));
    }
    let row = |f: usize| &scores[f * classes..(f + 1) * classes];
    let predicted = |f: isize| argmax(row(f.clamp(0, len as isize - 1) as usize));
    let floor = xi * row(anchor_frame)[class];

    let mut accepted = Vec::new();
    for step in [-1isize, 1] {
        for j in 1..=radius as isize {
            let f = anchor_frame as isize + j * step;
            if f < 0 || f >= len as isize {
                break;
            }
            let current = predicted(f);
            let ok = predicted(f - 1) == current
                && predicted(f + 1) == current
                && row(f as usize)[class] >= floor;
            if ok {
                accepted.push(f as usize);
            } else if mode == ExpansionMode::StopOnFailure {
                break;
            }
        }
    }
    accepted.sort_unstable();
    Ok(accepted)
}

/// Pick `floor(eta * k)` unlabelled, unpadded frames with the highest
/// background score across the whole batch.
///
/// `scores` is `[N, T, C]` with background at class 0. Ties go to the lower
/// `(row, frame)`.
pub fn mine_background(
    scores: &Tensor,
    lengths: &[usize],
    labeled: &HashSet<(usize, usize)>,
    eta: f64,
    k: usize,
) -> Vec<(usize, usize)> {
    let wanted = background_budget(eta, k);
    if wanted == 0 {
        return Vec::new();
    }
    let (t, c) = (scores.shape()[1], scores.shape()[2]);
    let mut candidates: Vec<(f64, usize, usize)> = lengths
        .iter()
        .enumerate()
        .flat_map(|(n, &len)| (0..len).map(move |f| (n, f)))
        .filter(|key| !labeled.contains(key))
        .map(|(n, f)| (scores.data()[(n * t + f) * c], n, f))
        .collect();
    let take = wanted.min(candidates.len());
    let cmp = |a: &(f64, usize, usize), b: &(f64, usize, usize)| {
        b.0.total_cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2)))
    };
    if take < candidates.len() {
        candidates.select_nth_unstable_by(take, cmp);
        candidates.truncate(take);
    }
    candidates.sort_by(cmp);
    candidates.into_iter().map(|(_, n, f)| (n, f)).collect()
}

/// `floor(eta * k)`, robust to representation error in `eta`.
pub fn background_budget(eta: f64, k: usize) -> usize {
    if eta <= 0.0 || k == 0 {
        return 0;
    }
    (eta * k as f64 + 1e-9).floor() as usize
}

/// Anchors, expanded frames and mined background frames for one batch.
///
/// `scores` are per-frame class probabilities `[N, T, Nc + 1]`; `annotations`
/// holds each batch row's single-frame labels. A frame claimed by several
/// anchors keeps the first label it receives; anchors are placed before any
/// expansion.
pub fn mine_pseudo_labels(
    scores: &Tensor,
    lengths: &[usize],
    annotations: &[Vec<FrameAnnotation>],
    cfg: &MiningConfig,
) -> Result<PseudoLabelSet> {
    let (t, c) = (scores.shape()[1], scores.shape()[2]);
    if annotations.len() != lengths.len() || scores.shape()[0] != lengths.len() {
        return Err(Error::argument("annotations, lengths and scores disagree on batch size"));
    }
    let mut taken: HashSet<(usize, usize)> = HashSet::new();
    let mut set = PseudoLabelSet::default();
    for (row, anns) in annotations.iter().enumerate() {
        for a in anns {
            if a.frame >= lengths[row] || a.class == 0 || a.class >= c {
                return Err(Error::argument(format!(
                    "annotation {a:?} invalid for a video of {} frames and {} classes",
                    lengths[row],
                    c - 1
                )));
            }
            if taken.insert((row, a.frame)) {
                set.action_frames.push(ActionFrame {
                    row,
                    frame: a.frame,
                    class: a.class,
                    origin: Origin::Anchor,
                });
            }
        }
    }
    if cfg.expand {
        for (row, anns) in annotations.iter().enumerate() {
            let video = &scores.data()[row * t * c..(row * t + lengths[row]) * c];
            for a in anns {
                let frames = expand_anchor(video, c, a.frame, a.class, cfg.radius, cfg.xi, cfg.mode)?;
                for frame in frames {
                    if taken.insert((row, frame)) {
                        set.action_frames.push(ActionFrame {
                            row,
                            frame,
                            class: a.class,
                            origin: Origin::Expanded,
                        });
                    }
                }
            }
        }
    }
    if cfg.background {
        set.background_frames =
            mine_background(scores, lengths, &taken, cfg.eta, set.action_frames.len());
    }
    Ok(set)
}

/// How a simulated annotator picks the frame inside a ground-truth segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotationStrategy {
    /// Uniform over the segment.
    Uniform,
    /// Normal around the midpoint, σ = length / 6, resampled until inside.
    GaussianMid,
    /// Relative position ~ Beta(4, 4).
    HumanLike,
}

impl AnnotationStrategy {
    pub const ALL: [AnnotationStrategy; 3] = [Self::Uniform, Self::GaussianMid, Self::HumanLike];

    pub fn name(self) -> &'static str {
        match self {
            Self::Uniform => "uniform",
            Self::GaussianMid => "gaussian_mid",
            Self::HumanLike => "human_like",
        }
    }
}

impl fmt::Display for AnnotationStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AnnotationStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::config(format!("unknown annotation strategy {s:?}")))
    }
}

/// Draw one frame inside `[start, end]`.
pub fn sample_frame<R: Rng + ?Sized>(
    start: usize,
    end: usize,
    strategy: AnnotationStrategy,
    rng: &mut R,
) -> Result<usize> {
    if start > end {
        return Err(Error::argument(format!("empty segment [{start}, {end}]")));
    }
    let len = end - start + 1;
    Ok(match strategy {
        AnnotationStrategy::Uniform => rng.random_range(start..=end),
        AnnotationStrategy::GaussianMid => {
            let mid = (start + end) as f64 / 2.0;
            let normal = Normal::new(mid, len as f64 / 6.0).expect("positive sigma");
            loop {
                let f = normal.sample(rng).round();
                if f >= start as f64 && f <= end as f64 {
                    break f as usize;
                }
            }
        }
        AnnotationStrategy::HumanLike => {
            let beta = Beta::new(4.0, 4.0).expect("valid shape");
            let u: f64 = beta.sample(rng);
            (start + (u * len as f64).floor() as usize).min(end)
        }
    })
}

/// Exactly one annotation per segment, placed by `strategy`.
pub fn simulate_annotations<R: Rng + ?Sized>(
    segments: &[Segment],
    strategy: AnnotationStrategy,
    rng: &mut R,
) -> Result<Vec<FrameAnnotation>> {
    segments
        .iter()
        .map(|s| {
            if s.class == 0 {
                return Err(Error::argument("ground-truth segment labelled background"));
            }
            Ok(FrameAnnotation {
                video: s.video,
                frame: sample_frame(s.start, s.end, strategy, rng)?,
                class: s.class,
            })
        })
        .collect()
}

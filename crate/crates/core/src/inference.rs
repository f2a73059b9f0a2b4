//! Video labels, action segments and single-frame detections from score maps.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ScoreMaps;
use crate::numeric::{sigmoid_scalar, softmax_rows, topk_indices};
use crate::objectives::topk_len;

/// Inclusive frame interval with a class and a confidence. Ground truth uses
/// confidence 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub video: u32,
    pub start: usize,
    pub end: usize,
    pub class: usize,
    pub confidence: f64,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, frame: usize) -> bool {
        frame >= self.start && frame <= self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameDetection {
    pub video: u32,
    pub frame: usize,
    pub class: usize,
    pub confidence: f64,
}

/// Scale of the two terms summed per frame before thresholding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreScale {
    /// `softmax(C)[c] + σ(A)`, each term in `[0, 1]`.
    #[default]
    Probability,
    /// `C[c] + A` on raw logits.
    RawLogit,
}

impl FromStr for ScoreScale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "probability" => Ok(Self::Probability),
            "raw_logit" => Ok(Self::RawLogit),
            _ => Err(Error::config(format!("unknown score scale {s:?}"))),
        }
    }
}

impl fmt::Display for ScoreScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Probability => "probability",
            Self::RawLogit => "raw_logit",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InferenceConfig {
    /// Segment threshold on the combined score.
    pub theta: f64,
    pub video_threshold: f64,
    pub k_ratio: usize,
    /// Runs separated by at most this many sub-threshold frames are merged.
    pub gap_fill: usize,
    pub scale: ScoreScale,
    /// Without a trained actionness head the actionness logit reads as 0.
    pub use_actionness: bool,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            theta: 0.65,
            video_threshold: 0.5,
            k_ratio: 8,
            gap_fill: 0,
            scale: ScoreScale::Probability,
            use_actionness: true,
        }
    }
}

/// Unpadded scores of one video.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoScores {
    pub video: u32,
    /// `len × (Nc + 1)` raw logits.
    pub logits: Vec<f64>,
    /// `len` raw actionness logits.
    pub actionness: Vec<f64>,
    pub outputs: usize,
}

impl VideoScores {
    pub fn from_maps(maps: &ScoreMaps, row: usize, video: u32) -> Self {
        Self {
            video,
            logits: maps.video_rows(&maps.logits, row).to_vec(),
            actionness: maps.video_actionness(row).to_vec(),
            outputs: maps.num_outputs(),
        }
    }

    pub fn len(&self) -> usize {
        self.actionness.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actionness.is_empty()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.logits.len()];
        softmax_rows(&self.logits, self.outputs, &mut out);
        out
    }
}

/// Softmax over top-k pooled logits, one entry per output (background first).
pub fn video_class_probabilities(scores: &VideoScores, k_ratio: usize) -> Vec<f64> {
    let c = scores.outputs;
    let len = scores.len();
    if len == 0 {
        return vec![1.0 / c as f64; c];
    }
    let k = topk_len(len, k_ratio);
    let pooled: Vec<f64> = (0..c)
        .map(|cls| {
            let column = (0..len).map(|f| scores.logits[f * c + cls]);
            let picked = topk_indices(column, k);
            picked.iter().map(|&f| scores.logits[f * c + cls]).sum::<f64>() / k as f64
        })
        .collect();
    let mut probs = vec![0.0; c];
    softmax_rows(&pooled, c, &mut probs);
    probs
}

/// Action classes whose pooled probability reaches `threshold`; falls back to
/// the most probable action class (lowest index on ties).
pub fn predict_video_labels(scores: &VideoScores, threshold: f64, k_ratio: usize) -> Vec<usize> {
    labels_from_probabilities(&video_class_probabilities(scores, k_ratio), threshold)
}

pub fn labels_from_probabilities(probs: &[f64], threshold: f64) -> Vec<usize> {
    let picked: Vec<usize> = (1..probs.len()).filter(|&j| probs[j] >= threshold).collect();
    if !picked.is_empty() {
        return picked;
    }
    let mut best = 1;
    for j in 2..probs.len() {
        if probs[j] > probs[best] {
            best = j;
        }
    }
    vec![best]
}

/// Per-frame combined score for `class`.
pub fn combined_scores(scores: &VideoScores, class: usize, cfg: &InferenceConfig) -> Vec<f64> {
    let c = scores.outputs;
    match cfg.scale {
        ScoreScale::Probability => {
            let probs = scores.probabilities();
            (0..scores.len())
                .map(|f| {
                    let a = if cfg.use_actionness {
                        sigmoid_scalar(scores.actionness[f])
                    } else {
                        0.5
                    };
                    probs[f * c + class] + a
                })
                .collect()
        }
        ScoreScale::RawLogit => (0..scores.len())
            .map(|f| {
                let a = if cfg.use_actionness {
                    scores.actionness[f]
                } else {
                    0.0
                };
                scores.logits[f * c + class] + a
            })
            .collect(),
    }
}

/// Maximal runs of frames with `score > theta`, merging runs split by at
/// most `gap_fill` frames. Inclusive `(start, end)` pairs.
pub fn threshold_runs(scores: &[f64], theta: f64, gap_fill: usize) -> Vec<(usize, usize)> {
    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut start = None;
    for (f, &s) in scores.iter().enumerate() {
        match (s > theta, start) {
            (true, None) => start = Some(f),
            (false, Some(st)) => {
                runs.push((st, f - 1));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(st) = start {
        runs.push((st, scores.len() - 1));
    }
    if gap_fill == 0 {
        return runs;
    }
    let mut merged: Vec<(usize, usize)> = Vec::with_capacity(runs.len());
    for run in runs {
        match merged.last_mut() {
            Some(last) if run.0 - last.1 - 1 <= gap_fill => last.1 = run.1,
            _ => merged.push(run),
        }
    }
    merged
}

/// Earliest frame in `[start, end]` with the largest score.
fn peak(scores: &[f64], start: usize, end: usize) -> (usize, f64) {
    let mut best = start;
    for f in start..=end {
        if scores[f] > scores[best] {
            best = f;
        }
    }
    (best, scores[best])
}

/// Segments of every class in `classes`. Confidence is the peak combined score.
pub fn extract_segments(scores: &VideoScores, classes: &[usize], cfg: &InferenceConfig) -> Vec<Segment> {
    let mut out = Vec::new();
    for &class in classes {
        let combined = combined_scores(scores, class, cfg);
        for (start, end) in threshold_runs(&combined, cfg.theta, cfg.gap_fill) {
            out.push(Segment {
                video: scores.video,
                start,
                end,
                class,
                confidence: peak(&combined, start, end).1,
            });
        }
    }
    out
}

/// One detection per segment at its peak combined-score frame.
pub fn localize_single_frames(
    scores: &VideoScores,
    segments: &[Segment],
    cfg: &InferenceConfig,
) -> Vec<FrameDetection> {
    let mut cache: Vec<(usize, Vec<f64>)> = Vec::new();
    segments
        .iter()
        .map(|s| {
            let idx = match cache.iter().position(|(c, _)| *c == s.class) {
                Some(i) => i,
                None => {
                    cache.push((s.class, combined_scores(scores, s.class, cfg)));
                    cache.len() - 1
                }
            };
            let (frame, _) = peak(&cache[idx].1, s.start, s.end);
            FrameDetection {
                video: s.video,
                frame,
                class: s.class,
                confidence: s.confidence,
            }
        })
        .collect()
}

/// Everything inference produces for one video.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoPrediction {
    pub video: u32,
    /// Pooled class probabilities including background at index 0.
    pub class_probabilities: Vec<f64>,
    pub labels: Vec<usize>,
    pub segments: Vec<Segment>,
    pub detections: Vec<FrameDetection>,
}

pub fn predict_video(scores: &VideoScores, cfg: &InferenceConfig) -> VideoPrediction {
    let class_probabilities = video_class_probabilities(scores, cfg.k_ratio);
    let labels = labels_from_probabilities(&class_probabilities, cfg.video_threshold);
    let segments = extract_segments(scores, &labels, cfg);
    let detections = localize_single_frames(scores, &segments, cfg);
    VideoPrediction {
        video: scores.video,
        class_probabilities,
        labels,
        segments,
        detections,
    }
}

/// Run inference on every row of a batch; `ids[row]` names the video.
pub fn predict_batch(maps: &ScoreMaps, ids: &[u32], cfg: &InferenceConfig) -> Vec<VideoPrediction> {
    ids.iter()
        .enumerate()
        .map(|(row, &id)| predict_video(&VideoScores::from_maps(maps, row, id), cfg))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_runs(s: &[f64], theta: f64) -> Vec<(usize, usize)> {
        let above: Vec<bool> = s.iter().map(|&v| v > theta).collect();
        let mut out = vec![];
        for a in 0..s.len() {
            for b in a..s.len() {
                let inside = above[a..=b].iter().all(|&x| x);
                let left = a == 0 || !above[a - 1];
                let right = b + 1 == s.len() || !above[b + 1];
                if inside && left && right {
                    out.push((a, b));
                }
            }
        }
        out
    }

    #[test]
    fn runs_example() {
        let s = [0.2, 0.8, 0.9, 0.3, 0.7, 0.6];
        assert_eq!(threshold_runs(&s, 0.5, 0), vec![(1, 2), (4, 5)]);
        assert!(threshold_runs(&[0.1, 0.2], 0.5, 0).is_empty());
        assert_eq!(threshold_runs(&s, 0.5, 1), vec![(1, 5)]);
        // strict inequality
        assert!(threshold_runs(&[0.5, 0.5], 0.5, 0).is_empty());
    }

    fn single_class_scores(len: usize, class_logit: &[f64], act: &[f64]) -> VideoScores {
        // two outputs: background logit 0, class logit as given
        let v = VideoScores {
            video: 3,
            logits: class_logit.iter().flat_map(|&l| [0.0, l]).collect(),
            actionness: act.to_vec(),
            outputs: 2,
        };
        assert_eq!(v.len(), len);
        v
    }

    #[test]
    fn segments_and_detections() {
        let logits = [-5.0, 2.0, 3.0, -5.0, 1.0, 4.0, 1.0];
        let act = [0.0; 7];
        let v = single_class_scores(7, &logits, &act);
        let cfg = InferenceConfig::default();
        let segs = extract_segments(&v, &[1], &cfg);
        assert_eq!(segs.len(), 2);
        assert_eq!((segs[0].start, segs[0].end), (1, 2));
        assert_eq!((segs[1].start, segs[1].end), (4, 6));
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        assert!((segs[1].confidence - (sig(4.0) + 0.5)).abs() < 1e-12);
        let dets = localize_single_frames(&v, &segs, &cfg);
        assert_eq!(dets.iter().map(|d| d.frame).collect::<Vec<_>>(), vec![2, 5]);
        assert_eq!(dets[1].confidence, segs[1].confidence);
    }

    #[test]
    fn single_frame_segment_localizes_to_itself() {
        let v = single_class_scores(3, &[-5.0, 5.0, -5.0], &[0.0; 3]);
        let cfg = InferenceConfig::default();
        let segs = extract_segments(&v, &[1], &cfg);
        assert_eq!(segs.len(), 1);
        let d = localize_single_frames(&v, &segs, &cfg);
        assert_eq!(d[0].frame, 1);
    }

    #[test]
    fn video_labels() {
        // peaked at class 2 everywhere
        let mut logits = vec![];
        for _ in 0..16 {
            logits.extend_from_slice(&[0.0, 0.0, 6.0, 0.0]);
        }
        let v = VideoScores {
            video: 0,
            logits,
            actionness: vec![0.0; 16],
            outputs: 4,
        };
        assert_eq!(predict_video_labels(&v, 0.5, 8), vec![2]);

        let flat = VideoScores {
            video: 0,
            logits: vec![0.0; 64],
            actionness: vec![0.0; 16],
            outputs: 4,
        };
        assert_eq!(predict_video_labels(&flat, 0.9, 8), vec![1]);

        // two classes, 16 frames → k = 2; hand-computed pooled softmax
        let mut logits = vec![0.0; 16 * 3];
        logits[3 + 1] = 4.0;
        logits[2 * 3 + 1] = 2.0;
        logits[5 * 3 + 2] = 3.0;
        logits[6 * 3 + 2] = 3.0;
        let v = VideoScores {
            video: 0,
            logits,
            actionness: vec![0.0; 16],
            outputs: 3,
        };
        let probs = video_class_probabilities(&v, 8);
        let r = [0.0f64, 3.0, 3.0];
        let z: f64 = r.iter().map(|x| x.exp()).sum();
        for (p, ri) in probs.iter().zip(r) {
            assert!((p - ri.exp() / z).abs() < 1e-12);
        }
        assert_eq!(labels_from_probabilities(&probs, 0.4), vec![1, 2]);
    }

    #[test]
    fn disabled_actionness_reads_as_half() {
        let v = single_class_scores(2, &[0.0, 0.0], &[9.0, -9.0]);
        let cfg = InferenceConfig {
            use_actionness: false,
            ..InferenceConfig::default()
        };
        assert_eq!(combined_scores(&v, 1, &cfg), vec![1.0, 1.0]);
    }

    proptest! {
        #[test]
        fn runs_match_brute_force(s in prop::collection::vec(0.0f64..1.0, 1..50), theta in 0.0f64..1.0) {
            prop_assert_eq!(threshold_runs(&s, theta, 0), brute_runs(&s, theta));
        }

        #[test]
        fn raising_threshold_only_shrinks(s in prop::collection::vec(0.0f64..2.0, 1..60), lo in 0.0f64..2.0, bump in 0.0f64..1.0) {
            let covered = |theta: f64| {
                let mut m = vec![false; s.len()];
                for (a, b) in threshold_runs(&s, theta, 0) {
                    m[a..=b].iter_mut().for_each(|x| *x = true);
                }
                m
            };
            let (low, high) = (covered(lo), covered(lo + bump));
            for (l, h) in low.iter().zip(&high) {
                prop_assert!(!h || *l);
            }
        }

        #[test]
        fn detection_is_earliest_argmax(s in prop::collection::vec(0.0f64..1.0, 1..40)) {
            let (f, v) = peak(&s, 0, s.len() - 1);
            let max = s.iter().copied().fold(f64::MIN, f64::max);
            prop_assert_eq!(v, max);
            prop_assert_eq!(f, s.iter().position(|&x| x == max).unwrap());
        }
    }
}

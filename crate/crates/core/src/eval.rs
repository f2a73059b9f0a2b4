//! Segment mAP at temporal IoU, single-frame mAP@hit, class-agnostic AP and
//! video-level classification mAP.
//!
//! Predictions are ranked by confidence (ties broken by video then start
//! frame) and greedily matched, each to the unmatched ground truth of the
//! same class and video that it overlaps most. AP is the area under the
//! uninterpolated precision/recall staircase unless [`ApMode::ElevenPoint`]
//! is requested.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::inference::{FrameDetection, Segment, VideoPrediction};

pub const IOU_THRESHOLDS: [f64; 7] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7];
pub const CLASS_AGNOSTIC_THRESHOLDS: [f64; 3] = [0.3, 0.5, 0.7];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ApMode {
    #[default]
    Staircase,
    ElevenPoint,
}

/// Frame-count IoU of two inclusive intervals.
pub fn temporal_iou(a: &Segment, b: &Segment) -> f64 {
    let lo = a.start.max(b.start);
    let hi = a.end.min(b.end);
    if hi < lo {
        return 0.0;
    }
    let inter = (hi - lo + 1) as f64;
    let union = (a.len() + b.len()) as f64 - inter;
    inter / union
}

/// Outcome of ranking and matching the predictions of one class.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// Indices into the prediction slice, in rank order.
    pub order: Vec<usize>,
    /// Per ranked prediction: true positive?
    pub tp: Vec<bool>,
    /// Per ranked prediction: index of the matched ground truth.
    pub matched: Vec<Option<usize>>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub num_gt: usize,
    pub ap: f64,
}

fn rank_cmp(a: (f64, u32, usize, usize), b: (f64, u32, usize, usize)) -> Ordering {
    b.0.total_cmp(&a.0)
        .then(a.1.cmp(&b.1))
        .then(a.2.cmp(&b.2))
        .then(a.3.cmp(&b.3))
}

fn average_precision(tp: &[bool], num_gt: usize, mode: ApMode) -> (Vec<f64>, Vec<f64>, f64) {
    let mut precision = Vec::with_capacity(tp.len());
    let mut recall = Vec::with_capacity(tp.len());
    let mut hits = 0usize;
    let mut area = 0.0;
    for (i, &t) in tp.iter().enumerate() {
        if t {
            hits += 1;
        }
        let p = hits as f64 / (i + 1) as f64;
        precision.push(p);
        recall.push(if num_gt == 0 { 0.0 } else { hits as f64 / num_gt as f64 });
        if t {
            area += p;
        }
    }
    if num_gt == 0 {
        return (precision, recall, 0.0);
    }
    let ap = match mode {
        ApMode::Staircase => area / num_gt as f64,
        ApMode::ElevenPoint => {
            (0..=10)
                .map(|i| {
                    let r = i as f64 / 10.0;
                    precision
                        .iter()
                        .zip(&recall)
                        .filter(|(_, &rc)| rc + 1e-12 >= r)
                        .map(|(&p, _)| p)
                        .fold(0.0, f64::max)
                })
                .sum::<f64>()
                / 11.0
        }
    };
    (precision, recall, ap)
}

/// Rank and greedily match class-`class` predictions at `iou_threshold`.
pub fn match_segments(
    predictions: &[Segment],
    ground_truth: &[Segment],
    class: usize,
    iou_threshold: f64,
    mode: ApMode,
) -> MatchResult {
    let gt: Vec<usize> = (0..ground_truth.len())
        .filter(|&i| ground_truth[i].class == class)
        .collect();
    let mut order: Vec<usize> = (0..predictions.len())
        .filter(|&i| predictions[i].class == class)
        .collect();
    let key = |i: usize| {
        let p = &predictions[i];
        (p.confidence, p.video, p.start, p.end)
    };
    order.sort_by(|&a, &b| rank_cmp(key(a), key(b)).then(a.cmp(&b)));

    let mut used = vec![false; ground_truth.len()];
    let mut tp = Vec::with_capacity(order.len());
    let mut matched = Vec::with_capacity(order.len());
    for &pi in &order {
        let p = &predictions[pi];
        let mut best: Option<(usize, f64)> = None;
        for &gi in &gt {
            let g = &ground_truth[gi];
            if used[gi] || g.video != p.video {
                continue;
            }
            let iou = temporal_iou(p, g);
            if iou > 0.0 && iou >= iou_threshold && best.is_none_or(|(_, b)| iou > b) {
                best = Some((gi, iou));
            }
        }
        if let Some((gi, _)) = best {
            used[gi] = true;
        }
        tp.push(best.is_some());
        matched.push(best.map(|(gi, _)| gi));
    }
    let (precision, recall, ap) = average_precision(&tp, gt.len(), mode);
    MatchResult {
        order,
        tp,
        matched,
        precision,
        recall,
        num_gt: gt.len(),
        ap,
    }
}

pub fn segment_ap(predictions: &[Segment], ground_truth: &[Segment], class: usize, iou_threshold: f64) -> f64 {
    match_segments(predictions, ground_truth, class, iou_threshold, ApMode::Staircase).ap
}

fn gt_classes(ground_truth: &[Segment]) -> BTreeSet<usize> {
    ground_truth.iter().map(|g| g.class).collect()
}

/// Mean segment AP over classes present in the ground truth.
pub fn segment_map_with(
    predictions: &[Segment],
    ground_truth: &[Segment],
    iou_threshold: f64,
    mode: ApMode,
) -> f64 {
    let classes = gt_classes(ground_truth);
    if classes.is_empty() {
        return 0.0;
    }
    classes
        .iter()
        .map(|&c| match_segments(predictions, ground_truth, c, iou_threshold, mode).ap)
        .sum::<f64>()
        / classes.len() as f64
}

pub fn segment_map(predictions: &[Segment], ground_truth: &[Segment], iou_threshold: f64) -> f64 {
    segment_map_with(predictions, ground_truth, iou_threshold, ApMode::Staircase)
}

/// AP of one class where a detection hits when its frame lies inside an
/// unmatched ground-truth segment of the same class and video.
pub fn frame_hit_ap(detections: &[FrameDetection], ground_truth: &[Segment], class: usize) -> f64 {
    let gt: Vec<usize> = (0..ground_truth.len())
        .filter(|&i| ground_truth[i].class == class)
        .collect();
    let mut order: Vec<usize> = (0..detections.len())
        .filter(|&i| detections[i].class == class)
        .collect();
    let key = |i: usize| {
        let d = &detections[i];
        (d.confidence, d.video, d.frame, 0)
    };
    order.sort_by(|&a, &b| rank_cmp(key(a), key(b)).then(a.cmp(&b)));
    let mut used = vec![false; ground_truth.len()];
    let tp: Vec<bool> = order
        .iter()
        .map(|&di| {
            let d = &detections[di];
            let hit = gt.iter().copied().find(|&gi| {
                let g = &ground_truth[gi];
                !used[gi] && g.video == d.video && g.contains(d.frame)
            });
            if let Some(gi) = hit {
                used[gi] = true;
            }
            hit.is_some()
        })
        .collect();
    average_precision(&tp, gt.len(), ApMode::Staircase).2
}

pub fn map_at_hit(detections: &[FrameDetection], ground_truth: &[Segment]) -> f64 {
    let classes = gt_classes(ground_truth);
    if classes.is_empty() {
        return 0.0;
    }
    classes
        .iter()
        .map(|&c| frame_hit_ap(detections, ground_truth, c))
        .sum::<f64>()
        / classes.len() as f64
}

/// Segment AP with every class collapsed into one.
pub fn class_agnostic_ap(predictions: &[Segment], ground_truth: &[Segment], iou_threshold: f64) -> f64 {
    let collapse = |s: &[Segment]| -> Vec<Segment> {
        s.iter().map(|x| Segment { class: 1, ..*x }).collect()
    };
    segment_ap(&collapse(predictions), &collapse(ground_truth), 1, iou_threshold)
}

/// Mean over classes of the AP of ranking videos by that class's probability.
///
/// `probabilities[v][c]` is indexed by output (background at 0, ignored);
/// `labels[v]` lists the action classes present in video `v`.
pub fn video_classification_map(probabilities: &[Vec<f64>], labels: &[Vec<usize>]) -> f64 {
    let classes: BTreeSet<usize> = labels.iter().flatten().copied().collect();
    if classes.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for &c in &classes {
        let mut order: Vec<usize> = (0..probabilities.len()).collect();
        order.sort_by(|&a, &b| probabilities[b][c].total_cmp(&probabilities[a][c]).then(a.cmp(&b)));
        let tp: Vec<bool> = order.iter().map(|&v| labels[v].contains(&c)).collect();
        let positives = tp.iter().filter(|&&t| t).count();
        total += average_precision(&tp, positives, ApMode::Staircase).2;
    }
    total / classes.len() as f64
}

/// Named metric values in a fixed row order.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<(String, f64)>,
}

impl EvalReport {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.rows.iter().find(|(n, _)| n == name).map(|&(_, v)| v)
    }

    pub fn avg_01_07(&self) -> f64 {
        self.get("AVG(0.1:0.7)").unwrap_or(0.0)
    }

    pub fn map_at_hit(&self) -> f64 {
        self.get("mAP@hit").unwrap_or(0.0)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        for (name, v) in &self.rows {
            writeln!(out, "{name},{v:.6}").unwrap();
        }
        out
    }
}

pub fn iou_label(t: f64) -> String {
    format!("mAP@{t:.1}")
}

/// Score a set of per-video predictions against ground truth.
///
/// `video_labels[i]` are the ground-truth action classes of `predictions[i]`'s video.
pub fn evaluate(
    predictions: &[VideoPrediction],
    ground_truth: &[Segment],
    video_labels: &[Vec<usize>],
    mode: ApMode,
) -> EvalReport {
    let segments: Vec<Segment> = predictions.iter().flat_map(|p| p.segments.iter().copied()).collect();
    let detections: Vec<FrameDetection> =
        predictions.iter().flat_map(|p| p.detections.iter().copied()).collect();
    let mut rows = Vec::new();
    let per_iou: Vec<f64> = IOU_THRESHOLDS
        .iter()
        .map(|&t| segment_map_with(&segments, ground_truth, t, mode))
        .collect();
    for (&t, &v) in IOU_THRESHOLDS.iter().zip(&per_iou) {
        rows.push((iou_label(t), v));
    }
    rows.push(("AVG(0.1:0.7)".into(), per_iou.iter().sum::<f64>() / 7.0));
    rows.push(("AVG(0.1:0.5)".into(), per_iou[..5].iter().sum::<f64>() / 5.0));
    rows.push(("mAP@hit".into(), map_at_hit(&detections, ground_truth)));
    for t in CLASS_AGNOSTIC_THRESHOLDS {
        rows.push((
            format!("CA-AP@{t:.1}"),
            class_agnostic_ap(&segments, ground_truth, t),
        ));
    }
    let probs: Vec<Vec<f64>> = predictions.iter().map(|p| p.class_probabilities.clone()).collect();
    rows.push(("video-mAP".into(), video_classification_map(&probs, video_labels)));
    EvalReport { rows }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seg(video: u32, start: usize, end: usize, class: usize, confidence: f64) -> Segment {
        Segment {
            video,
            start,
            end,
            class,
            confidence,
        }
    }

    fn det(video: u32, frame: usize, class: usize, confidence: f64) -> FrameDetection {
        FrameDetection {
            video,
            frame,
            class,
            confidence,
        }
    }

    #[test]
    fn iou_examples() {
        let a = seg(0, 2, 6, 1, 1.0);
        assert_eq!(temporal_iou(&a, &a), 1.0);
        assert_eq!(temporal_iou(&a, &seg(0, 7, 9, 1, 1.0)), 0.0);
        assert!((temporal_iou(&a, &seg(0, 4, 8, 1, 1.0)) - 3.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn ap_examples() {
        let gt = [seg(0, 0, 9, 1, 1.0), seg(0, 20, 29, 1, 1.0)];
        let exact = [seg(0, 20, 29, 1, 0.1), seg(0, 0, 9, 1, 0.7)];
        assert_eq!(segment_ap(&exact, &gt, 1, 0.5), 1.0);
        let disjoint = [seg(0, 40, 45, 1, 0.9), seg(1, 0, 9, 1, 0.8)];
        assert_eq!(segment_ap(&disjoint, &gt, 1, 0.1), 0.0);
        // ranks TP, FP, TP
        let preds = [
            seg(0, 0, 9, 1, 0.9),
            seg(0, 50, 59, 1, 0.8),
            seg(0, 21, 29, 1, 0.7),
        ];
        let r = match_segments(&preds, &gt, 1, 0.5, ApMode::Staircase);
        assert_eq!(r.tp, vec![true, false, true]);
        assert!((r.ap - (0.5 + (2.0 / 3.0) * 0.5)).abs() < 1e-12);
        assert!((r.ap - 0.8333).abs() < 1e-4);
    }

    #[test]
    fn duplicates_match_once() {
        let gt = [seg(0, 0, 9, 1, 1.0)];
        let preds = [seg(0, 0, 9, 1, 0.9), seg(0, 0, 9, 1, 0.8), seg(0, 1, 9, 1, 0.95)];
        let r = match_segments(&preds, &gt, 1, 0.5, ApMode::Staircase);
        assert_eq!(r.tp.iter().filter(|&&t| t).count(), 1);
        assert_eq!(r.ap, 1.0);
    }

    #[test]
    fn eleven_point_mode() {
        let gt = [seg(0, 0, 9, 1, 1.0), seg(0, 20, 29, 1, 1.0)];
        let preds = [seg(0, 50, 59, 1, 0.9), seg(0, 0, 9, 1, 0.8)];
        // staircase: 0.5 · 0.5; eleven-point: recall ≤ 0.5 → 0.5 (6 points), above → 0
        let r = match_segments(&preds, &gt, 1, 0.5, ApMode::ElevenPoint);
        assert!((r.ap - 6.0 * 0.5 / 11.0).abs() < 1e-12);
        assert!((segment_ap(&preds, &gt, 1, 0.5) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn hit_examples() {
        let gt = [seg(0, 10, 20, 2, 1.0)];
        assert_eq!(map_at_hit(&[det(0, 15, 2, 0.3)], &gt), 1.0);
        assert_eq!(map_at_hit(&[det(0, 21, 2, 0.3)], &gt), 0.0);
        assert_eq!(map_at_hit(&[det(0, 15, 1, 0.3)], &gt), 0.0);
    }

    #[test]
    fn class_agnostic_contrast() {
        let gt = [seg(0, 0, 9, 1, 1.0), seg(1, 5, 9, 2, 1.0)];
        let wrong_class = [seg(0, 0, 9, 2, 0.9), seg(1, 5, 9, 1, 0.8)];
        assert_eq!(class_agnostic_ap(&wrong_class, &gt, 0.5), 1.0);
        assert_eq!(segment_map(&wrong_class, &gt, 0.5), 0.0);
        assert_eq!(class_agnostic_ap(&[], &gt, 0.5), 0.0);
    }

    #[test]
    fn video_map_examples() {
        let labels = vec![vec![1], vec![2]];
        let perfect = vec![vec![0.0, 0.9, 0.1], vec![0.0, 0.2, 0.8]];
        assert_eq!(video_classification_map(&perfect, &labels), 1.0);
        // class 1: positive ranked second → 1/2; class 2 likewise
        let reversed = vec![vec![0.0, 0.1, 0.9], vec![0.0, 0.8, 0.2]];
        assert_eq!(video_classification_map(&reversed, &labels), 0.5);

        // 3 videos, class 1 positives {0, 2}: ranking 2, 1, 0 → (1/1 + 2/3) / 2
        let labels = vec![vec![1], vec![], vec![1]];
        let probs = vec![vec![0.0, 0.2], vec![0.0, 0.5], vec![0.0, 0.9]];
        let expected = (1.0 + 2.0 / 3.0) / 2.0;
        assert!((video_classification_map(&probs, &labels) - expected).abs() < 1e-12);
    }

    #[test]
    fn report_layout() {
        let gt = vec![seg(0, 0, 9, 1, 1.0)];
        let pred = VideoPrediction {
            video: 0,
            class_probabilities: vec![0.1, 0.9],
            labels: vec![1],
            segments: gt.clone(),
            detections: vec![det(0, 4, 1, 1.0)],
        };
        let r = evaluate(&[pred], &gt, &[vec![1]], ApMode::Staircase);
        let names: Vec<&str> = r.rows.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(
            names,
            [
                "mAP@0.1", "mAP@0.2", "mAP@0.3", "mAP@0.4", "mAP@0.5", "mAP@0.6", "mAP@0.7",
                "AVG(0.1:0.7)", "AVG(0.1:0.5)", "mAP@hit", "CA-AP@0.3", "CA-AP@0.5", "CA-AP@0.7",
                "video-mAP"
            ]
        );
        assert!(r.rows.iter().all(|(_, v)| *v == 1.0));
        assert!(r.to_csv().starts_with("metric,value\nmAP@0.1,1.000000\n"));
    }

    fn arb_segments(max: usize) -> impl Strategy<Value = Vec<Segment>> {
        prop::collection::vec(
            (0u32..3, 0usize..40, 1usize..12, 1usize..4, 0.0f64..1.0)
                .prop_map(|(v, s, l, c, conf)| seg(v, s, s + l - 1, c, conf)),
            0..max,
        )
    }

    proptest! {
        #[test]
        fn ap_is_bounded_and_order_free(preds in arb_segments(10), gt in arb_segments(10), thr in 0.1f64..0.9) {
            let m = segment_map(&preds, &gt, thr);
            prop_assert!((0.0..=1.0).contains(&m));
            let mut rev = preds.clone();
            rev.reverse();
            prop_assert_eq!(m, segment_map(&rev, &gt, thr));
            let scaled: Vec<Segment> = preds.iter().map(|p| Segment { confidence: p.confidence * 3.5, ..*p }).collect();
            prop_assert_eq!(m, segment_map(&scaled, &gt, thr));
        }
    }
}

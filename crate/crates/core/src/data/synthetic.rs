//! Planted-segment feature corpora.
//!
//! Each class owns a unit prototype (orthonormalised Gaussian directions).
//! An action frame's mean is `separation · prototype`, a background frame's
//! mean is zero; the mean sequence is boxcar-smoothed so boundaries blur over
//! a few frames, then isotropic noise of total scale `noise` is added
//! (per-dimension deviation `noise / √D`).

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{FeatureCorpus, Split, Video};
use crate::config::{parse_pairs, set_field, to_pairs_text};
use crate::error::{Error, Result};
use crate::inference::Segment;
use crate::mining::{simulate_annotations, AnnotationStrategy};

const PROTOTYPE_STREAM: u64 = 1;
const ANNOTATION_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub dim: usize,
    pub train_videos: usize,
    pub test_videos: usize,
    pub min_length: usize,
    pub max_length: usize,
    pub min_instances: usize,
    pub max_instances: usize,
    /// Share of each video's frames that are background.
    pub background_fraction: f64,
    pub separation: f64,
    pub noise: f64,
    /// Boxcar width applied to the clean mean sequence; 1 disables it.
    pub boundary_smoothing: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_classes: 5,
            dim: 32,
            train_videos: 80,
            test_videos: 20,
            min_length: 150,
            max_length: 250,
            min_instances: 2,
            max_instances: 4,
            background_fraction: 0.6,
            separation: 2.0,
            noise: 1.0,
            boundary_smoothing: 3,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    /// Read `key = value` lines on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut spec = SyntheticSpec::default();
        for (k, v) in parse_pairs(text)? {
            spec = set_field(&spec, &k, &v)?;
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_text(&self) -> String {
        to_pairs_text(self)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::config(m.to_string()));
        if self.num_classes == 0 || self.dim == 0 {
            return fail("need at least one class and one feature dimension");
        }
        if self.num_classes > self.dim {
            return fail("orthogonal prototypes need num_classes ≤ dim");
        }
        if self.train_videos + self.test_videos == 0 {
            return fail("corpus would contain no videos");
        }
        if self.min_length == 0 || self.min_length > self.max_length {
            return fail("length range must satisfy 1 ≤ min_length ≤ max_length");
        }
        if self.min_instances == 0 || self.min_instances > self.max_instances {
            return fail("instance range must satisfy 1 ≤ min_instances ≤ max_instances");
        }
        if !(0.0..1.0).contains(&self.background_fraction) {
            return fail("background_fraction must lie in [0, 1)");
        }
        if !(self.separation > 0.0) || !(self.noise >= 0.0) || !self.noise.is_finite() || !self.separation.is_finite() {
            return fail("separation must be positive and noise non-negative");
        }
        if self.boundary_smoothing == 0 || self.boundary_smoothing % 2 == 0 {
            return fail("boundary_smoothing must be an odd width");
        }
        Ok(())
    }
}

/// Unit prototypes, one per class (index 0 is class 1).
pub fn class_prototypes(spec: &SyntheticSpec) -> Result<Vec<Vec<f64>>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(PROTOTYPE_STREAM);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(spec.num_classes);
    while basis.len() < spec.num_classes {
        let mut v: Vec<f64> = (0..spec.dim).map(|_| rng.sample(StandardNormal)).collect();
        for b in &basis {
            let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    Ok(basis)
}

/// Split `total` into `parts` positive integers roughly proportional to
/// random weights, each at least `min`.
fn random_partition(total: usize, parts: usize, min: usize, rng: &mut impl Rng) -> Vec<usize> {
    let spare = total - parts * min;
    let weights: Vec<f64> = (0..parts).map(|_| rng.random_range(0.5..1.5)).collect();
    let sum: f64 = weights.iter().sum();
    let mut out: Vec<usize> = weights.iter().map(|w| min + (spare as f64 * w / sum) as usize).collect();
    let mut left = total - out.iter().sum::<usize>();
    let mut i = 0;
    while left > 0 {
        out[i % parts] += 1;
        left -= 1;
        i += 1;
    }
    out
}

fn place_segments(id: u32, length: usize, spec: &SyntheticSpec, rng: &mut impl Rng) -> Result<Vec<Segment>> {
    let count = rng.random_range(spec.min_instances..=spec.max_instances);
    let action = ((1.0 - spec.background_fraction) * length as f64).round() as usize;
    let background = length - action;
    // every instance needs two frames, every interior gap one
    if action < 2 * count || background < count - 1 {
        return Err(Error::config(format!(
            "cannot pack {count} instances into a video of {length} frames"
        )));
    }
    let lengths = random_partition(action, count, 2, rng);
    let mut gaps = random_partition(background - (count - 1), count + 1, 0, rng);
    for g in &mut gaps[1..count] {
        *g += 1;
    }
    let mut segments = Vec::with_capacity(count);
    let mut t = 0;
    for (i, &len) in lengths.iter().enumerate() {
        t += gaps[i];
        segments.push(Segment {
            video: id,
            start: t,
            end: t + len - 1,
            class: rng.random_range(1..=spec.num_classes),
            confidence: 1.0,
        });
        t += len;
    }
    Ok(segments)
}

pub fn generate_corpus(spec: &SyntheticSpec) -> Result<FeatureCorpus> {
    let prototypes = class_prototypes(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut ann_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    ann_rng.set_stream(ANNOTATION_STREAM);
    let d = spec.dim;
    let sigma = spec.noise / (d as f64).sqrt();
    let half = spec.boundary_smoothing / 2;
    let total = spec.train_videos + spec.test_videos;
    let mut videos = Vec::with_capacity(total);
    for i in 0..total {
        let id = i as u32;
        let length = rng.random_range(spec.min_length..=spec.max_length);
        let segments = place_segments(id, length, spec, &mut rng)?;

        let mut clean = vec![0.0f64; length * d];
        for s in &segments {
            let p = &prototypes[s.class - 1];
            for t in s.start..=s.end {
                for (x, &v) in clean[t * d..(t + 1) * d].iter_mut().zip(p) {
                    *x = spec.separation * v;
                }
            }
        }
        let mut features = Vec::with_capacity(length * d);
        for t in 0..length {
            let lo = t.saturating_sub(half);
            let hi = (t + half).min(length - 1);
            let width = (2 * half + 1) as f64;
            for j in 0..d {
                // out-of-range neighbours count as background (zero)
                let mean = (lo..=hi).map(|u| clean[u * d + j]).sum::<f64>() / width;
                let n: f64 = rng.sample(StandardNormal);
                features.push((mean + sigma * n) as f32);
            }
        }

        let mut annotations = BTreeMap::new();
        for strategy in AnnotationStrategy::ALL {
            annotations.insert(strategy, simulate_annotations(&segments, strategy, &mut ann_rng)?);
        }
        videos.push(Video {
            id,
            split: if i < spec.train_videos { Split::Train } else { Split::Test },
            length,
            features,
            segments,
            annotations,
        });
    }
    let corpus = FeatureCorpus {
        dim: d,
        num_classes: spec.num_classes,
        videos,
    };
    corpus.validate()?;
    Ok(corpus)
}

/// Index of the nearest scaled prototype, 1-based.
#[cfg(test)]
pub(crate) fn nearest_prototype(frame: &[f32], prototypes: &[Vec<f64>], separation: f64) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (c, p) in prototypes.iter().enumerate() {
        let d: f64 = frame.iter().zip(p).map(|(&x, &v)| (x as f64 - separation * v).powi(2)).sum();
        if d < best.0 {
            best = (d, c + 1);
        }
    }
    best.1
}

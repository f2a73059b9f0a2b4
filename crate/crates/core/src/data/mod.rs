//! Feature corpora: storage, synthetic generation, batching and CSV exchange.

mod batch;
pub mod csvio;
mod format;
mod synthetic;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use batch::{epoch_order, make_batch, make_batches, Batch};
pub use format::{decode_corpus, encode_corpus, load_corpus, save_corpus, MAGIC};
pub use synthetic::{class_prototypes, generate_corpus, SyntheticSpec};

use crate::error::{Error, Result};
use crate::inference::Segment;
use crate::mining::{AnnotationStrategy, FrameAnnotation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(Error::config(format!("unknown split {s:?}"))),
        }
    }
}

/// One video: `length × dim` frame-major features plus its labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Video {
    pub id: u32,
    pub split: Split,
    pub length: usize,
    pub features: Vec<f32>,
    pub segments: Vec<Segment>,
    pub annotations: BTreeMap<AnnotationStrategy, Vec<FrameAnnotation>>,
}

impl Video {
    pub fn frame(&self, t: usize, dim: usize) -> &[f32] {
        &self.features[t * dim..(t + 1) * dim]
    }

    /// Action classes present in the ground truth, ascending and deduplicated.
    pub fn labels(&self) -> Vec<usize> {
        let mut l: Vec<usize> = self.segments.iter().map(|s| s.class).collect();
        l.sort_unstable();
        l.dedup();
        l
    }

    pub fn annotations_for(&self, strategy: AnnotationStrategy) -> Result<&[FrameAnnotation]> {
        self.annotations
            .get(&strategy)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::config(format!("video {} has no {strategy} annotations", self.id)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureCorpus {
    pub dim: usize,
    pub num_classes: usize,
    pub videos: Vec<Video>,
}

impl FeatureCorpus {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.num_classes == 0 {
            return Err(Error::config("corpus needs dim ≥ 1 and at least one class"));
        }
        let mut ids = std::collections::HashSet::new();
        for v in &self.videos {
            if !ids.insert(v.id) {
                return Err(Error::config(format!("duplicate video id {}", v.id)));
            }
            if v.length == 0 || v.features.len() != v.length * self.dim {
                return Err(Error::config(format!(
                    "video {}: {} feature values for {} frames of dim {}",
                    v.id,
                    v.features.len(),
                    v.length,
                    self.dim
                )));
            }
            for s in &v.segments {
                if s.video != v.id || s.start > s.end || s.end >= v.length {
                    return Err(Error::config(format!(
                        "video {}: segment {s:?} outside [0, {}]",
                        v.id,
                        v.length - 1
                    )));
                }
                if s.class == 0 || s.class > self.num_classes {
                    return Err(Error::config(format!("video {}: segment class {} invalid", v.id, s.class)));
                }
            }
            for anns in v.annotations.values() {
                for a in anns {
                    if a.video != v.id || a.frame >= v.length || a.class == 0 || a.class > self.num_classes {
                        return Err(Error::config(format!("video {}: annotation {a:?} invalid", v.id)));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn split(&self, split: Split) -> Vec<&Video> {
        self.videos.iter().filter(|v| v.split == split).collect()
    }

    pub fn video(&self, id: u32) -> Option<&Video> {
        self.videos.iter().find(|v| v.id == id)
    }

    pub fn ground_truth(&self, split: Split) -> Vec<Segment> {
        self.split(split).iter().flat_map(|v| v.segments.iter().copied()).collect()
    }

    pub fn num_segments(&self) -> usize {
        self.videos.iter().map(|v| v.segments.len()).sum()
    }

    /// Segment count per class, index 0 unused.
    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.num_classes + 1];
        for s in self.videos.iter().flat_map(|v| &v.segments) {
            h[s.class] += 1;
        }
        h
    }
}

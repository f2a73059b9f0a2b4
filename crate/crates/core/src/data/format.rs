//! Corpus file layout:
//!
//! ```text
//! "SFC1" | header length: u64 LE | JSON header | f32 LE features, video by video, frame-major
//! ```
//!
//! The header carries the version, feature dimension, class count and a
//! table of videos (id, split, length, segments as `[start, end, class]`,
//! annotations per strategy as `[frame, class]`). Feature blocks follow in
//! the table's order.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FeatureCorpus, Split, Video};
use crate::error::{Error, Result};
use crate::inference::Segment;
use crate::mining::{AnnotationStrategy, FrameAnnotation};

pub const MAGIC: &[u8; 4] = b"SFC1";
const VERSION: u32 = 1;
const PREFIX: usize = 12;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    version: u32,
    dim: usize,
    num_classes: usize,
    videos: Vec<HeaderVideo>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderVideo {
    id: u32,
    split: Split,
    length: usize,
    segments: Vec<[usize; 3]>,
    annotations: BTreeMap<AnnotationStrategy, Vec<[usize; 2]>>,
}

pub fn encode_corpus(corpus: &FeatureCorpus) -> Result<Vec<u8>> {
    corpus.validate()?;
    let header = Header {
        version: VERSION,
        dim: corpus.dim,
        num_classes: corpus.num_classes,
        videos: corpus
            .videos
            .iter()
            .map(|v| HeaderVideo {
                id: v.id,
                split: v.split,
                length: v.length,
                segments: v.segments.iter().map(|s| [s.start, s.end, s.class]).collect(),
                annotations: v
                    .annotations
                    .iter()
                    .map(|(k, a)| (*k, a.iter().map(|a| [a.frame, a.class]).collect()))
                    .collect(),
            })
            .collect(),
    };
    let text = serde_json::to_vec(&header).expect("header serializes");
    let floats: usize = corpus.videos.iter().map(|v| v.features.len()).sum();
    let mut out = Vec::with_capacity(PREFIX + text.len() + 4 * floats);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(text.len() as u64).to_le_bytes());
    out.extend_from_slice(&text);
    for v in &corpus.videos {
        if let Some(i) = v.features.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("video {} feature {i}", v.id)));
        }
        for x in &v.features {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

fn json_offset(text: &[u8], err: &serde_json::Error) -> u64 {
    let mut line = 1;
    let mut start = 0;
    for (i, &b) in text.iter().enumerate() {
        if line == err.line() {
            break;
        }
        if b == b'\n' {
            line += 1;
            start = i + 1;
        }
    }
    (PREFIX + start + err.column().saturating_sub(1)) as u64
}

pub fn decode_corpus(bytes: &[u8]) -> Result<FeatureCorpus> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::parse(0, "not a corpus file (magic bytes are not SFC1)"));
    }
    if bytes.len() < PREFIX {
        return Err(Error::parse(4, "truncated header length"));
    }
    let header_len = u64::from_le_bytes(bytes[4..PREFIX].try_into().unwrap());
    let header_end = (PREFIX as u64).checked_add(header_len).filter(|&e| e <= bytes.len() as u64);
    let Some(header_end) = header_end else {
        return Err(Error::parse(
            bytes.len() as u64,
            format!("truncated header: {header_len} bytes declared"),
        ));
    };
    let header_end = header_end as usize;
    let text = &bytes[PREFIX..header_end];
    let header: Header = serde_json::from_slice(text).map_err(|e| Error::parse(json_offset(text, &e), e.to_string()))?;
    if header.version != VERSION {
        return Err(Error::parse(
            PREFIX as u64,
            format!("unsupported corpus version {} (expected {VERSION})", header.version),
        ));
    }

    let mut pos = header_end;
    let mut videos = Vec::with_capacity(header.videos.len());
    for hv in header.videos {
        let n = hv
            .length
            .checked_mul(header.dim)
            .filter(|n| n.checked_mul(4).is_some_and(|b| b <= bytes.len() - pos))
            .ok_or_else(|| Error::parse(bytes.len() as u64, format!("truncated feature block for video {}", hv.id)))?;
        let mut features = Vec::with_capacity(n);
        for chunk in bytes[pos..pos + 4 * n].chunks_exact(4) {
            let x = f32::from_le_bytes(chunk.try_into().unwrap());
            if !x.is_finite() {
                return Err(Error::parse(
                    (pos + 4 * features.len()) as u64,
                    format!("non-finite feature in video {}", hv.id),
                ));
            }
            features.push(x);
        }
        pos += 4 * n;
        let id = hv.id;
        videos.push(Video {
            id,
            split: hv.split,
            length: hv.length,
            features,
            segments: hv
                .segments
                .iter()
                .map(|&[start, end, class]| Segment {
                    video: id,
                    start,
                    end,
                    class,
                    confidence: 1.0,
                })
                .collect(),
            annotations: hv
                .annotations
                .into_iter()
                .map(|(k, a)| {
                    let anns = a
                        .into_iter()
                        .map(|[frame, class]| FrameAnnotation { video: id, frame, class })
                        .collect();
                    (k, anns)
                })
                .collect(),
        });
    }
    if pos != bytes.len() {
        return Err(Error::parse(pos as u64, "trailing bytes after the last feature block"));
    }
    let corpus = FeatureCorpus {
        dim: header.dim,
        num_classes: header.num_classes,
        videos,
    };
    corpus.validate().map_err(|e| Error::parse(PREFIX as u64, e.to_string()))?;
    Ok(corpus)
}

pub fn save_corpus(corpus: &FeatureCorpus, path: &Path) -> Result<()> {
    let bytes = encode_corpus(corpus)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn load_corpus(path: &Path) -> Result<FeatureCorpus> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    decode_corpus(&bytes)
}

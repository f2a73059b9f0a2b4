//! Model checkpoints:
//!
//! ```text
//! "SFCK" | header length: u64 LE | JSON header | f64 LE parameter blocks
//! ```
//!
//! The header records the model dimensions, the shape of every block, the
//! training config text with its SHA-256, and how many iterations produced
//! the weights.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{ModelDims, SFNetParams};
use crate::numeric::Tensor;

pub const MAGIC: &[u8; 4] = b"SFCK";
const VERSION: u32 = 1;
const PREFIX: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: SFNetParams,
    /// Text form of the training config.
    pub config: String,
    pub iterations: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    version: u32,
    dims: ModelDims,
    iterations: usize,
    config_sha256: String,
    config: String,
    blocks: Vec<Block>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Block {
    name: String,
    shape: Vec<usize>,
}

pub fn config_hash(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let header = Header {
            version: VERSION,
            dims: self.params.dims,
            iterations: self.iterations,
            config_sha256: config_hash(&self.config),
            config: self.config.clone(),
            blocks: self
                .params
                .dims
                .layout()
                .into_iter()
                .map(|(name, shape)| Block {
                    name: name.to_string(),
                    shape,
                })
                .collect(),
        };
        let text = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(PREFIX + text.len() + 8 * self.params.num_scalars());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(text.len() as u64).to_le_bytes());
        out.extend_from_slice(&text);
        for t in &self.params.tensors {
            for x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < PREFIX || &bytes[..4] != MAGIC {
            return Err(Error::parse(0, "not a checkpoint (magic bytes are not SFCK)"));
        }
        let len = u64::from_le_bytes(bytes[4..PREFIX].try_into().unwrap());
        let end = (PREFIX as u64)
            .checked_add(len)
            .filter(|&e| e <= bytes.len() as u64)
            .ok_or_else(|| Error::parse(bytes.len() as u64, "truncated checkpoint header"))? as usize;
        let header: Header =
            serde_json::from_slice(&bytes[PREFIX..end]).map_err(|e| Error::parse(PREFIX as u64, e.to_string()))?;
        if header.version != VERSION {
            return Err(Error::parse(PREFIX as u64, format!("unsupported checkpoint version {}", header.version)));
        }
        if config_hash(&header.config) != header.config_sha256 {
            return Err(Error::parse(PREFIX as u64, "config hash does not match the stored config"));
        }
        let layout = header.dims.layout();
        if layout.len() != header.blocks.len()
            || layout.iter().zip(&header.blocks).any(|((n, s), b)| *n != b.name || *s != b.shape)
        {
            return Err(Error::parse(PREFIX as u64, "block table does not match the model dimensions"));
        }
        let mut pos = end;
        let mut tensors = Vec::with_capacity(layout.len());
        for (name, shape) in layout {
            let n: usize = shape.iter().product();
            if bytes.len() - pos < 8 * n {
                return Err(Error::parse(bytes.len() as u64, format!("truncated block {name}")));
            }
            let mut data = Vec::with_capacity(n);
            for chunk in bytes[pos..pos + 8 * n].chunks_exact(8) {
                let x = f64::from_le_bytes(chunk.try_into().unwrap());
                if !x.is_finite() {
                    return Err(Error::parse((pos + 8 * data.len()) as u64, format!("non-finite value in {name}")));
                }
                data.push(x);
            }
            pos += 8 * n;
            tensors.push(Tensor::new(shape, data)?);
        }
        if pos != bytes.len() {
            return Err(Error::parse(pos as u64, "trailing bytes after the last block"));
        }
        Ok(Checkpoint {
            params: SFNetParams::from_tensors(header.dims, tensors)?,
            config: header.config,
            iterations: header.iterations,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::decode(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let dims = ModelDims {
            input_dim: 3,
            hidden: 4,
            num_classes: 2,
            kernel_width: 3,
        };
        Checkpoint {
            params: SFNetParams::init(dims, 5).unwrap(),
            config: "alpha = 1\n".into(),
            iterations: 7,
        }
    }

    #[test]
    fn encode_decode() {
        let c = sample();
        let bytes = c.encode();
        assert_eq!(&bytes[..4], b"SFCK");
        assert_eq!(Checkpoint::decode(&bytes).unwrap(), c);
    }

    #[test]
    fn hash_is_sha256() {
        assert_eq!(
            config_hash(""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn damage_is_detected() {
        let bytes = sample().encode();
        assert!(Checkpoint::decode(&bytes[..bytes.len() - 1]).is_err());
        let mut b = bytes.clone();
        b[1] = b'X';
        assert!(Checkpoint::decode(&b).is_err());
        let text = String::from_utf8_lossy(&bytes).into_owned();
        let at = text.find("alpha = 1").unwrap();
        let mut b = bytes;
        b[at + 8] = b'2';
        assert!(matches!(Checkpoint::decode(&b), Err(Error::Parse { .. })));
    }
}

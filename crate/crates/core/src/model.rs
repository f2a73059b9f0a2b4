use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{softmax_rows, Tape, Tensor, Var};

/// Layer sizes of the two heads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    /// Feature dimension `D`.
    pub input_dim: usize,
    pub hidden: usize,
    /// Action classes `Nc`, excluding background.
    pub num_classes: usize,
    /// Temporal kernel width of the actionness convolutions.
    pub kernel_width: usize,
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden == 0 || self.num_classes == 0 {
            return Err(Error::config(format!(
                "model dimensions must be positive: {self:?}"
            )));
        }
        if self.kernel_width % 2 == 0 {
            return Err(Error::config(format!(
                "kernel width must be odd, got {}",
                self.kernel_width
            )));
        }
        Ok(())
    }

    /// Classification outputs per frame, background included.
    pub fn num_outputs(&self) -> usize {
        self.num_classes + 1
    }

    /// Names and shapes of every parameter block, in storage order.
    pub fn layout(&self) -> Vec<(&'static str, Vec<usize>)> {
        let (d, h, c, k) = (
            self.input_dim,
            self.hidden,
            self.num_outputs(),
            self.kernel_width,
        );
        vec![
            ("cls.fc1.weight", vec![d, h]),
            ("cls.fc1.bias", vec![h]),
            ("cls.fc2.weight", vec![h, h]),
            ("cls.fc2.bias", vec![h]),
            ("cls.fc3.weight", vec![h, c]),
            ("cls.fc3.bias", vec![c]),
            ("act.conv1.kernel", vec![k, d, h]),
            ("act.conv1.bias", vec![h]),
            ("act.conv2.kernel", vec![k, h, h]),
            ("act.conv2.bias", vec![h]),
            ("act.fc.weight", vec![h, 1]),
            ("act.fc.bias", vec![1]),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SFNetParams {
    pub dims: ModelDims,
    pub tensors: Vec<Tensor>,
}

impl SFNetParams {
    /// Glorot-uniform weights, zero biases.
    pub fn init(dims: ModelDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = dims
            .layout()
            .into_iter()
            .map(|(name, shape)| {
                if name.ends_with("bias") {
                    return Tensor::zeros(&shape);
                }
                let (fan_in, fan_out) = match shape.as_slice() {
                    [i, o] => (*i, *o),
                    [k, i, o] => (k * i, k * o),
                    _ => unreachable!("weights are 2-d or 3-d"),
                };
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let numel = shape.iter().product();
                let data = (0..numel).map(|_| rng.random_range(-bound..bound)).collect();
                Tensor::new(shape, data).expect("layout shapes are consistent")
            })
            .collect();
        Ok(Self { dims, tensors })
    }

    pub fn from_tensors(dims: ModelDims, tensors: Vec<Tensor>) -> Result<Self> {
        dims.validate()?;
        let layout = dims.layout();
        if layout.len() != tensors.len() {
            return Err(Error::config(format!(
                "expected {} parameter blocks, got {}",
                layout.len(),
                tensors.len()
            )));
        }
        for ((name, shape), t) in layout.iter().zip(&tensors) {
            if t.shape() != shape.as_slice() {
                return Err(Error::config(format!(
                    "{name}: expected shape {shape:?}, got {:?}",
                    t.shape()
                )));
            }
        }
        Ok(Self { dims, tensors })
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Put every parameter on `tape` as a differentiable leaf.
    pub fn leaves(&self, tape: &mut Tape) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.leaf(t.clone())).collect()
    }

    pub fn forward(&self, x: &Tensor, lengths: &[usize]) -> Result<ScoreMaps> {
        let mut tape = Tape::new();
        let vars = self.leaves(&mut tape);
        let xv = tape.constant(x.clone());
        let (c, a) = forward_on_tape(&mut tape, &vars, xv, lengths)?;
        ScoreMaps::new(tape.value(c).clone(), tape.value(a).clone(), lengths.to_vec())
    }
}

/// Record both heads on `tape`. Returns `(C, A)` with shapes
/// `[N, T, Nc + 1]` and `[N, T, 1]`.
pub fn forward_on_tape(
    tape: &mut Tape,
    params: &[Var],
    x: Var,
    lengths: &[usize],
) -> Result<(Var, Var)> {
    let xs = tape.value(x).shape().to_vec();
    if xs.len() != 3 || xs[0] != lengths.len() {
        return Err(Error::Shape {
            op: "forward",
            lhs: xs,
            rhs: vec![lengths.len()],
        });
    }
    if let Some(&bad) = lengths.iter().find(|&&l| l > xs[1]) {
        return Err(Error::argument(format!(
            "video length {bad} exceeds padded length {}",
            xs[1]
        )));
    }
    let [w1, b1, w2, b2, w3, b3, k1, kb1, k2, kb2, wa, ba] = params else {
        return Err(Error::argument(format!(
            "expected 12 parameter leaves, got {}",
            params.len()
        )));
    };

    let h = tape.linear(x, *w1, *b1)?;
    let h = tape.relu(h);
    let h = tape.linear(h, *w2, *b2)?;
    let h = tape.relu(h);
    let c = tape.linear(h, *w3, *b3)?;

    // Padded frames are zeroed before every convolution so that their
    // activations never leak into real frames.
    let xm = tape.mask_frames(x, lengths)?;
    let g = tape.conv1d(xm, *k1, *kb1)?;
    let g = tape.relu(g);
    let g = tape.mask_frames(g, lengths)?;
    let g = tape.conv1d(g, *k2, *kb2)?;
    let g = tape.relu(g);
    let a = tape.linear(g, *wa, *ba)?;
    Ok((c, a))
}

/// Softmax over the last axis of a logit tensor.
pub fn class_probabilities(logits: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(logits.shape());
    softmax_rows(logits.data(), logits.last_dim(), out.data_mut());
    out
}

/// Classification logits, actionness logits and the frame validity mask of a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMaps {
    /// `[N, T, Nc + 1]` raw logits, class 0 is background.
    pub logits: Tensor,
    /// `[N, T]` raw actionness logits.
    pub actionness: Tensor,
    pub lengths: Vec<usize>,
}

impl ScoreMaps {
    pub fn new(logits: Tensor, actionness: Tensor, lengths: Vec<usize>) -> Result<Self> {
        let ls = logits.shape().to_vec();
        if ls.len() != 3 || ls[0] != lengths.len() {
            return Err(Error::Shape {
                op: "score maps",
                lhs: ls,
                rhs: vec![lengths.len()],
            });
        }
        let actionness = actionness.reshape(&[ls[0], ls[1]])?;
        if lengths.iter().any(|&l| l > ls[1]) {
            return Err(Error::argument("length exceeds padded length"));
        }
        Ok(Self {
            logits,
            actionness,
            lengths,
        })
    }

    pub fn num_videos(&self) -> usize {
        self.lengths.len()
    }

    pub fn padded_len(&self) -> usize {
        self.logits.shape()[1]
    }

    /// `Nc + 1`.
    pub fn num_outputs(&self) -> usize {
        self.logits.shape()[2]
    }

    pub fn is_valid(&self, video: usize, frame: usize) -> bool {
        frame < self.lengths[video]
    }

    /// Row-wise softmax of the classification logits.
    pub fn probabilities(&self) -> Tensor {
        class_probabilities(&self.logits)
    }

    /// Rows `[0, len)` of video `n` from a `[N, T, C]` tensor.
    pub fn video_rows<'a>(&self, tensor: &'a Tensor, n: usize) -> &'a [f64] {
        let (t, c) = (self.padded_len(), tensor.last_dim());
        &tensor.data()[n * t * c..(n * t + self.lengths[n]) * c]
    }

    pub fn video_actionness(&self, n: usize) -> &[f64] {
        let t = self.padded_len();
        &self.actionness.data()[n * t..n * t + self.lengths[n]]
    }

    /// Drop padding beyond `lengths` and return one `ScoreMaps` per video.
    pub fn split(&self) -> Vec<ScoreMaps> {
        (0..self.num_videos())
            .map(|n| {
                let len = self.lengths[n];
                let c = self.num_outputs();
                let logits =
                    Tensor::new(vec![1, len, c], self.video_rows(&self.logits, n).to_vec())
                        .expect("row slice");
                let act = Tensor::new(vec![1, len], self.video_actionness(n).to_vec())
                    .expect("row slice");
                ScoreMaps {
                    logits,
                    actionness: act,
                    lengths: vec![len],
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims() -> ModelDims {
        ModelDims {
            input_dim: 8,
            hidden: 16,
            num_classes: 5,
            kernel_width: 3,
        }
    }

    fn features(n: usize, t: usize, d: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * t * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::new(vec![n, t, d], data).unwrap()
    }

    #[test]
    fn init_is_deterministic_and_sized() {
        let a = SFNetParams::init(dims(), 7).unwrap();
        let b = SFNetParams::init(dims(), 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, SFNetParams::init(dims(), 8).unwrap());
        let maps = a.forward(&features(1, 4, 8, 0), &[4]).unwrap();
        assert_eq!(maps.logits.shape(), &[1, 4, 6]);
        assert_eq!(maps.actionness.shape(), &[1, 4]);
    }

    #[test]
    fn init_rejects_bad_dims() {
        let mut d = dims();
        d.kernel_width = 4;
        assert!(SFNetParams::init(d, 0).is_err());
        let mut d = dims();
        d.hidden = 0;
        assert!(SFNetParams::init(d, 0).is_err());
    }

    #[test]
    fn weight_sample_mean_is_centred() {
        let d = ModelDims {
            input_dim: 100,
            hidden: 100,
            num_classes: 1,
            kernel_width: 1,
        };
        let p = SFNetParams::init(d, 3).unwrap();
        let w = &p.tensors[0]; // 100 × 100 = 10⁴ draws
        let bound = (6.0f64 / 200.0).sqrt();
        let sigma = bound / 3f64.sqrt() / (w.numel() as f64).sqrt();
        let mean = w.sum() / w.numel() as f64;
        assert!(mean.abs() < 3.0 * sigma, "mean {mean}, 3σ {}", 3.0 * sigma);
        assert!(w.data().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn zero_input_and_zero_biases_give_zero_scores() {
        let p = SFNetParams::init(dims(), 1).unwrap();
        let maps = p.forward(&Tensor::zeros(&[2, 5, 8]), &[5, 3]).unwrap();
        assert!(maps.logits.data().iter().all(|&v| v == 0.0));
        assert!(maps.actionness.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn duplicated_videos_score_identically() {
        let p = SFNetParams::init(dims(), 2).unwrap();
        let one = features(1, 6, 8, 4);
        let mut data = one.data().to_vec();
        data.extend_from_slice(one.data());
        let two = Tensor::new(vec![2, 6, 8], data).unwrap();
        let maps = p.forward(&two, &[6, 6]).unwrap();
        let half = maps.logits.numel() / 2;
        assert_eq!(maps.logits.data()[..half], maps.logits.data()[half..]);
        assert_eq!(maps.actionness.data()[..6], maps.actionness.data()[6..]);
    }

    #[test]
    fn length_beyond_padding_is_rejected() {
        let p = SFNetParams::init(dims(), 2).unwrap();
        assert!(p.forward(&features(1, 4, 8, 0), &[5]).is_err());
    }

    #[test]
    fn receptive_fields() {
        for width in [1usize, 3, 5] {
            let d = ModelDims {
                kernel_width: width,
                ..dims()
            };
            let mut p = SFNetParams::init(d, 5).unwrap();
            // non-zero biases keep ReLUs active so the full window is visible
            for (t, (name, _)) in p.tensors.iter_mut().zip(d.layout()) {
                if name.ends_with("bias") {
                    t.data_mut().iter_mut().for_each(|v| *v = 0.5);
                }
            }
            let t_len = 21;
            let x = features(1, t_len, 8, 9);
            let base = p.forward(&x, &[t_len]).unwrap();
            let hit = 10;
            let mut bumped = x.clone();
            for v in &mut bumped.data_mut()[hit * 8..(hit + 1) * 8] {
                *v += 0.75;
            }
            let after = p.forward(&bumped, &[t_len]).unwrap();
            let reach = width - 1; // two convs of half-width (width - 1) / 2
            for f in 0..t_len {
                let changed = base.actionness.data()[f] != after.actionness.data()[f];
                if f.abs_diff(hit) > reach {
                    assert!(!changed, "width {width}: frame {f} moved");
                }
                let row = |m: &ScoreMaps| m.logits.data()[f * 6..(f + 1) * 6].to_vec();
                assert_eq!(row(&base) != row(&after), f == hit, "classification locality");
            }
            let window: Vec<_> = (0..t_len)
                .filter(|&f| base.actionness.data()[f] != after.actionness.data()[f])
                .collect();
            assert!(window.len() <= 2 * reach + 1);
        }
    }
}

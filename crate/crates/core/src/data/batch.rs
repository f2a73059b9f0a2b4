use rand::seq::SliceRandom;
use rand::Rng;

use super::Video;
use crate::error::{Error, Result};
use crate::mining::{AnnotationStrategy, FrameAnnotation};
use crate::numeric::Tensor;

/// Zero-padded features `[N, T, D]` for a group of videos.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub ids: Vec<u32>,
    pub x: Tensor,
    pub lengths: Vec<usize>,
    /// Per row; empty when the batch was built without annotations.
    pub annotations: Vec<Vec<FrameAnnotation>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Stack `videos` into one batch padded to `pad_to` frames (at least the
/// longest video).
pub fn make_batch(
    videos: &[&Video],
    dim: usize,
    strategy: Option<AnnotationStrategy>,
    pad_to: Option<usize>,
) -> Result<Batch> {
    if videos.is_empty() {
        return Err(Error::argument("cannot build an empty batch"));
    }
    let longest = videos.iter().map(|v| v.length).max().unwrap();
    let t = pad_to.unwrap_or(longest);
    if t < longest {
        return Err(Error::argument(format!("pad length {t} shorter than longest video ({longest})")));
    }
    let mut data = vec![0.0; videos.len() * t * dim];
    for (row, v) in videos.iter().enumerate() {
        let dst = &mut data[row * t * dim..(row * t + v.length) * dim];
        dst.iter_mut().zip(&v.features).for_each(|(d, &s)| *d = s as f64);
    }
    let annotations = match strategy {
        Some(s) => videos
            .iter()
            .map(|v| v.annotations_for(s).map(<[_]>::to_vec))
            .collect::<Result<_>>()?,
        None => vec![Vec::new(); videos.len()],
    };
    Ok(Batch {
        ids: videos.iter().map(|v| v.id).collect(),
        x: Tensor::new(vec![videos.len(), t, dim], data)?,
        lengths: videos.iter().map(|v| v.length).collect(),
        annotations,
    })
}

/// One epoch's worth of shuffled index groups.
pub fn epoch_order<R: Rng + ?Sized>(n: usize, batch_size: usize, rng: &mut R) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::argument("batch size must be at least 1"));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    Ok(idx.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// Shuffle `videos` with `rng` and cut the result into padded batches.
pub fn make_batches<R: Rng + ?Sized>(
    videos: &[&Video],
    dim: usize,
    batch_size: usize,
    strategy: Option<AnnotationStrategy>,
    rng: &mut R,
) -> Result<Vec<Batch>> {
    epoch_order(videos.len(), batch_size, rng)?
        .into_iter()
        .map(|group| {
            let members: Vec<&Video> = group.iter().map(|&i| videos[i]).collect();
            make_batch(&members, dim, strategy, None)
        })
        .collect()
}

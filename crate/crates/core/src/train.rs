//! The training loop: forward, mine pseudo labels from the current scores,
//! record the objective, backpropagate and take one Adam step.

use std::fmt::Write as _;

use log::{debug, info};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::TrainConfig;
use crate::data::{epoch_order, make_batch, Batch, FeatureCorpus, Split, Video};
use crate::error::{Error, Result};
use crate::inference::{predict_batch, VideoPrediction};
use crate::mining::{mine_pseudo_labels, PseudoLabelSet};
use crate::model::{class_probabilities, forward_on_tape, SFNetParams};
use crate::numeric::{adam_step, AdamState, Tape, Tensor};
use crate::objectives::{BatchObjective, LossBreakdown};

const SHUFFLE_STREAM: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationLog {
    /// 1-based.
    pub iter: usize,
    pub loss: LossBreakdown,
    pub action_frames: usize,
    pub background_frames: usize,
}

pub const LOG_HEADER: &str = "iter,frame_l,frame_b,actionness,video,total";

/// Training log as CSV, one row per iteration.
pub fn log_csv(log: &[IterationLog]) -> String {
    let mut out = format!("{LOG_HEADER}\n");
    for r in log {
        let l = &r.loss;
        writeln!(
            out,
            "{},{:.9},{:.9},{:.9},{:.9},{:.9}",
            r.iter, l.frame_labeled, l.frame_background, l.actionness, l.video, l.total
        )
        .unwrap();
    }
    out
}

/// Mine pseudo labels for `batch` from the class probabilities in `logits`.
pub fn mine_for_batch(logits: &Tensor, batch: &Batch, cfg: &TrainConfig) -> Result<PseudoLabelSet> {
    if cfg.weak_only {
        return Ok(PseudoLabelSet::default());
    }
    mine_pseudo_labels(&class_probabilities(logits), &batch.lengths, &batch.annotations, &cfg.mining())
}

/// Evaluate the objective on `batch` and return it with parameter gradients.
pub fn loss_and_gradients(
    params: &SFNetParams,
    batch: &Batch,
    cfg: &TrainConfig,
) -> Result<(LossBreakdown, PseudoLabelSet, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let vars = params.leaves(&mut tape);
    let x = tape.constant(batch.x.clone());
    let (c, a) = forward_on_tape(&mut tape, &vars, x, &batch.lengths)?;
    let labels = mine_for_batch(tape.value(c), batch, cfg)?;
    let objective = BatchObjective {
        lengths: &batch.lengths,
        annotations: &batch.annotations,
        labels: &labels,
        weights: cfg.loss_weights(params.dims.num_classes),
        terms: cfg.loss_terms(),
        k_ratio: cfg.k_ratio,
    };
    let (total, breakdown) = objective.record(&mut tape, c, a)?;
    let grads = tape.backward(total)?;
    let grads = vars
        .iter()
        .zip(&params.tensors)
        .map(|(&v, p)| grads.get_or_zeros(v, p.shape()))
        .collect();
    Ok((breakdown, labels, grads))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: SFNetParams,
    pub log: Vec<IterationLog>,
}

/// Train from scratch on the corpus's training split.
pub fn train(corpus: &FeatureCorpus, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let videos = corpus.split(Split::Train);
    if videos.is_empty() && cfg.iterations > 0 {
        return Err(Error::config("corpus has no training videos"));
    }
    for v in &videos {
        v.annotations_for(cfg.strategy)?;
    }
    let mut params = SFNetParams::init(cfg.model_dims(corpus.dim, corpus.num_classes), cfg.seed)?;
    let mut adam = AdamState::new(cfg.adam(), &params.tensors);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(SHUFFLE_STREAM);
    let mut queue: Vec<Vec<usize>> = Vec::new();
    let mut log = Vec::with_capacity(cfg.iterations);
    for iter in 1..=cfg.iterations {
        if queue.is_empty() {
            queue = epoch_order(videos.len(), cfg.batch_size, &mut rng)?;
            queue.reverse();
        }
        let group = queue.pop().unwrap();
        let members: Vec<&Video> = group.iter().map(|&i| videos[i]).collect();
        let batch = make_batch(&members, corpus.dim, Some(cfg.strategy), None)?;
        let (loss, labels, grads) = loss_and_gradients(&params, &batch, cfg)?;
        if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence {
                iteration: iter,
                what: format!("{loss:?}"),
            });
        }
        adam_step(&mut params.tensors, &grads, &mut adam)?;
        debug!("iter {iter}: total {:.6}", loss.total);
        log.push(IterationLog {
            iter,
            loss,
            action_frames: labels.action_frames.len(),
            background_frames: labels.background_frames.len(),
        });
    }
    if let Some(last) = log.last() {
        info!("trained {} iterations, final loss {:.6}", cfg.iterations, last.loss.total);
    }
    Ok(TrainOutcome { params, log })
}

/// Inference over the videos of one split, in corpus order.
pub fn predict_split(
    params: &SFNetParams,
    corpus: &FeatureCorpus,
    split: Split,
    cfg: &TrainConfig,
) -> Result<Vec<VideoPrediction>> {
    if params.dims.input_dim != corpus.dim || params.dims.num_classes != corpus.num_classes {
        return Err(Error::config(format!(
            "checkpoint expects D={} and {} classes, corpus has D={} and {} classes",
            params.dims.input_dim, params.dims.num_classes, corpus.dim, corpus.num_classes
        )));
    }
    let inference = cfg.inference();
    let mut out = Vec::new();
    for chunk in corpus.split(split).chunks(cfg.batch_size) {
        let batch = make_batch(chunk, corpus.dim, None, None)?;
        let maps = params.forward(&batch.x, &batch.lengths)?;
        out.extend(predict_batch(&maps, &batch.ids, &inference));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Ablation;
    use crate::data::{generate_corpus, SyntheticSpec};

    fn tiny_corpus() -> FeatureCorpus {
        generate_corpus(&SyntheticSpec {
            num_classes: 3,
            dim: 8,
            train_videos: 6,
            test_videos: 2,
            min_length: 30,
            max_length: 40,
            ..SyntheticSpec::default()
        })
        .unwrap()
    }

    fn tiny_config(iterations: usize) -> TrainConfig {
        TrainConfig {
            hidden: 8,
            batch_size: 3,
            iterations,
            lr: 1e-2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_iterations_is_initialisation() {
        let c = tiny_corpus();
        let cfg = tiny_config(0);
        let out = train(&c, &cfg).unwrap();
        assert!(out.log.is_empty());
        assert_eq!(out.params, SFNetParams::init(cfg.model_dims(8, 3), cfg.seed).unwrap());
    }

    #[test]
    fn loss_goes_down_and_runs_repeat() {
        let c = tiny_corpus();
        let cfg = tiny_config(60);
        let out = train(&c, &cfg).unwrap();
        let first = out.log[0].loss.total;
        let last = out.log.last().unwrap().loss.total;
        assert!(last < first, "{first} -> {last}");
        let again = train(&c, &cfg).unwrap();
        assert_eq!(log_csv(&out.log), log_csv(&again.log));
        assert_eq!(out.params, again.params);
    }

    #[test]
    fn weak_only_logs_zero_frame_terms() {
        let c = tiny_corpus();
        let mut cfg = tiny_config(5);
        cfg.apply_preset(Ablation::Weak);
        let out = train(&c, &cfg).unwrap();
        for r in &out.log {
            assert_eq!((r.loss.frame_labeled, r.loss.frame_background, r.loss.actionness), (0.0, 0.0, 0.0));
            assert!(r.loss.video > 0.0);
        }
        let csv = log_csv(&out.log);
        assert!(csv.starts_with("iter,frame_l,frame_b,actionness,video,total\n1,0.000000000,0.000000000,0.000000000,"));
    }

    #[test]
    fn eval_dims_must_match() {
        let c = tiny_corpus();
        let cfg = tiny_config(0);
        let wrong = SFNetParams::init(cfg.model_dims(9, 3), 0).unwrap();
        assert!(matches!(predict_split(&wrong, &c, Split::Test, &cfg), Err(Error::Config(_))));
        let right = SFNetParams::init(cfg.model_dims(8, 3), 0).unwrap();
        assert_eq!(predict_split(&right, &c, Split::Test, &cfg).unwrap().len(), 2);
    }
}

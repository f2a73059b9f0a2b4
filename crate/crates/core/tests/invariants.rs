use std::collections::HashSet;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sfnet_core::config::TrainConfig;
use sfnet_core::data::{decode_corpus, encode_corpus, generate_corpus, make_batch, SyntheticSpec, Video};
use sfnet_core::inference::{predict_batch, Segment};
use sfnet_core::mining::{expand_anchor, mine_background, simulate_annotations, AnnotationStrategy, ExpansionMode};
use sfnet_core::model::SFNetParams;
use sfnet_core::numeric::{Tape, Tensor};
use sfnet_core::train::loss_and_gradients;

fn small_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        num_classes: 3,
        dim: 6,
        train_videos: 5,
        test_videos: 3,
        min_length: 20,
        max_length: 45,
        seed,
        ..SyntheticSpec::default()
    }
}

#[test]
fn corpus_bytes_are_stable() {
    let corpus = generate_corpus(&small_spec(9)).unwrap();
    let bytes = encode_corpus(&corpus).unwrap();
    let back = decode_corpus(&bytes).unwrap();
    assert_eq!(back, corpus);
    assert_eq!(encode_corpus(&back).unwrap(), bytes);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.sfc");
    sfnet_core::data::save_corpus(&corpus, &path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), bytes);
    assert_eq!(sfnet_core::data::load_corpus(&path).unwrap(), corpus);
}

#[test]
fn generated_segments_are_disjoint_and_annotated_once() {
    let corpus = generate_corpus(&SyntheticSpec::default()).unwrap();
    for v in &corpus.videos {
        for w in v.segments.windows(2) {
            assert!(w[0].end < w[1].start, "video {}", v.id);
        }
        assert!(v.segments.last().unwrap().end < v.length);
        for strategy in AnnotationStrategy::ALL {
            let anns = v.annotations_for(strategy).unwrap();
            assert_eq!(anns.len(), v.segments.len());
            for (a, s) in anns.iter().zip(&v.segments) {
                assert!(s.contains(a.frame) && a.class == s.class);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn padding_is_inert(seed in 0u64..1000, extra in 1usize..40, pick in 1usize..5) {
        let corpus = generate_corpus(&small_spec(seed % 7)).unwrap();
        let videos: Vec<&Video> = corpus.videos.iter().take(pick).collect();
        let cfg = TrainConfig { hidden: 6, theta: 0.8, ..TrainConfig::default() };
        let params = SFNetParams::init(cfg.model_dims(6, 3), seed).unwrap();
        let max_len = videos.iter().map(|v| v.length).max().unwrap();
        let a = make_batch(&videos, 6, Some(cfg.strategy), None).unwrap();
        let b = make_batch(&videos, 6, Some(cfg.strategy), Some(max_len + extra)).unwrap();
        let (la, sa, _) = loss_and_gradients(&params, &a, &cfg).unwrap();
        let (lb, sb, _) = loss_and_gradients(&params, &b, &cfg).unwrap();
        prop_assert!((la.total - lb.total).abs() <= 1e-9);
        prop_assert_eq!(sa, sb);
        let pa = predict_batch(&params.forward(&a.x, &a.lengths).unwrap(), &a.ids, &cfg.inference());
        let pb = predict_batch(&params.forward(&b.x, &b.lengths).unwrap(), &b.ids, &cfg.inference());
        for (p, q) in pa.iter().zip(&pb) {
            let span = |s: &[Segment]| s.iter().map(|x| (x.start, x.end, x.class)).collect::<Vec<_>>();
            prop_assert_eq!(span(&p.segments), span(&q.segments));
        }
    }

    #[test]
    fn expansion_stays_in_radius_and_contiguous(
        rows in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 3), 1..25),
        anchor in 0usize..25,
        radius in 0usize..8,
        xi in 0.1f64..=1.0,
    ) {
        let t = anchor % rows.len();
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let got = expand_anchor(&flat, 3, t, 1, radius, xi, ExpansionMode::StopOnFailure).unwrap();
        let mut frames: Vec<usize> = got.clone();
        frames.push(t);
        frames.sort_unstable();
        for w in frames.windows(2) {
            prop_assert_eq!(w[1], w[0] + 1);
        }
        prop_assert!(got.iter().all(|&f| f.abs_diff(t) <= radius && f != t));
    }

    #[test]
    fn background_avoids_labelled_and_padded_frames(
        seed in 0u64..10_000,
        lengths in prop::collection::vec(1usize..9, 1..4),
        eta in 0.0f64..5.0,
        k in 0usize..6,
    ) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = 9;
        let n = lengths.len();
        let scores = Tensor::new(vec![n, t, 2], (0..n * t * 2).map(|_| rng.random::<f64>()).collect()).unwrap();
        let labeled: HashSet<(usize, usize)> = lengths
            .iter()
            .enumerate()
            .flat_map(|(r, &len)| (0..len).map(move |f| (r, f)))
            .filter(|_| rng.random_bool(0.3))
            .collect();
        let got = mine_background(&scores, &lengths, &labeled, eta, k);
        let candidates = lengths.iter().sum::<usize>() - labeled.len();
        let budget = if eta <= 0.0 { 0 } else { (eta * k as f64 + 1e-9).floor() as usize };
        prop_assert_eq!(got.len(), budget.min(candidates));
        for &(r, f) in &got {
            prop_assert!(f < lengths[r] && !labeled.contains(&(r, f)));
        }
        prop_assert_eq!(got.iter().collect::<HashSet<_>>().len(), got.len());
    }

    #[test]
    fn one_annotation_per_segment_inside_it(
        seed in 0u64..10_000,
        spans in prop::collection::vec((0usize..200, 0usize..40, 1usize..6), 0..12),
    ) {
        let segments: Vec<Segment> = spans
            .iter()
            .map(|&(start, len, class)| Segment { video: 0, start, end: start + len, class, confidence: 1.0 })
            .collect();
        for strategy in AnnotationStrategy::ALL {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let anns = simulate_annotations(&segments, strategy, &mut rng).unwrap();
            prop_assert_eq!(anns.len(), segments.len());
            for (a, s) in anns.iter().zip(&segments) {
                prop_assert!(s.contains(a.frame) && a.class == s.class);
            }
        }
    }

    #[test]
    fn softmax_rows_sum_to_one(data in prop::collection::vec(-50.0f64..50.0, 12)) {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![3, 4], data).unwrap());
        let y = tape.softmax(x);
        for row in tape.value(y).data().chunks(4) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(row.iter().all(|p| p.is_finite() && *p >= 0.0));
        }
    }
}

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fsr_core::data::{Dataset, Generator, Split, TaskConfig};
use fsr_core::decoder::{decode, trigger_mask, DecodeMode, SkipConfig};
use fsr_core::lattice::{Lattice, NodeProbs};
use fsr_core::losses::{ctc_loss_and_grad, fsr_lattice_grads, BlankPosterior, FsrConfig};
use fsr_core::model::{ModelConfig, TinyTransducer};
use fsr_core::tensor::Matrix;

fn lattice(seed: u64, frames: usize, target_len: usize) -> Lattice {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut blank = Vec::new();
    let mut label = Vec::new();
    for _ in 0..frames {
        for u in 0..=target_len {
            let (b, l, o): (f64, f64, f64) = (rng.random_range(0.05..1.0), rng.random_range(0.05..1.0), rng.random_range(0.05..1.0));
            let s = b + l + o;
            blank.push((b / s).ln());
            if u < target_len {
                label.push((l / s).ln());
            }
        }
    }
    Lattice::new(NodeProbs::new(frames, target_len, blank, label).unwrap()).unwrap()
}

fn model(seed: u64) -> TinyTransducer {
    let cfg = ModelConfig { vocab_size: 4, feat_dim: 3, hidden: 6, context: 1, subsample: 2 };
    TinyTransducer::init(cfg, seed).unwrap()
}

fn features(seed: u64, frames: usize) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_fn(frames, 3, |_, _| rng.random_range(-2.0..2.0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // every path emits exactly U labels and T blanks
    #[test]
    fn occupancies_count_emissions(seed in any::<u64>(), frames in 1usize..8, target_len in 0usize..5) {
        let lat = lattice(seed, frames, target_len);
        let cb = BlankPosterior::new(vec![0.5; frames]).unwrap();
        let g = fsr_lattice_grads(&lat, &cb, &FsrConfig { lambda: 0.0, ctc_weight: 1.0 }).unwrap();
        let np = lat.node_probs();
        let mut blanks = 0.0;
        let mut labels = 0.0;
        for t in 1..=frames {
            for u in 0..=target_len {
                blanks -= g.d_blank(t, u) * np.blank_lp(t, u).exp();
                if u < target_len {
                    labels -= g.d_label(t, u) * np.label_lp(t, u).exp();
                }
            }
        }
        prop_assert!((blanks - frames as f64).abs() < 1e-9, "{blanks}");
        prop_assert!((labels - target_len as f64).abs() < 1e-9, "{labels}");
    }

    #[test]
    fn scaling_only_grows_magnitudes(seed in any::<u64>(), frames in 1usize..6, target_len in 0usize..4, lambda in 0.0f64..1.0) {
        let lat = lattice(seed, frames, target_len);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let cb = BlankPosterior::new((0..frames).map(|_| rng.random_range(0.0..=1.0)).collect()).unwrap();
        let base = fsr_lattice_grads(&lat, &cb, &FsrConfig { lambda: 0.0, ctc_weight: 1.0 }).unwrap();
        let reg = fsr_lattice_grads(&lat, &cb, &FsrConfig { lambda, ctc_weight: 1.0 }).unwrap();
        for (a, b) in reg.blank_entries().iter().zip(base.blank_entries()).chain(reg.label_entries().iter().zip(base.label_entries())) {
            prop_assert!(*a <= 0.0 && *b <= 0.0);
            prop_assert!(a.abs() >= b.abs() && a.abs() <= (1.0 + lambda) * b.abs() * (1.0 + 1e-12));
        }
    }

    #[test]
    fn ctc_gradient_rows_sum_to_zero(seed in any::<u64>(), frames in 2usize..10, len in 0usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut lp = Matrix::from_fn(frames, 4, |_, _| rng.random_range(-3.0..3.0));
        for t in 0..frames {
            fsr_core::logspace::log_softmax_in_place(lp.row_mut(t));
        }
        let y: Vec<usize> = (0..len).map(|_| rng.random_range(1..4)).collect();
        if let Ok((loss, grad)) = ctc_loss_and_grad(&lp, &y) {
            prop_assert!(loss >= 0.0);
            for t in 0..frames {
                let s: f64 = grad.row(t).iter().sum();
                prop_assert!(s.abs() < 1e-9);
            }
        }
    }

    #[test]
    fn full_trigger_matches_greedy(seed in any::<u64>(), frames in 1usize..30) {
        let m = model(seed);
        let enc = m.encode(&features(seed ^ 7, frames)).unwrap();
        let skip = SkipConfig { delta: 1.0, ..SkipConfig::default() };
        let g = decode(&m, &enc, DecodeMode::Greedy, &skip);
        let f = decode(&m, &enc, DecodeMode::FastSkip, &skip);
        prop_assert_eq!(g.tokens, f.tokens);
        prop_assert_eq!(g.joint_calls, f.joint_calls);
    }

    #[test]
    fn trigger_mask_grows_with_window_and_threshold(
        cb in prop::collection::vec(0.0f64..=1.0, 1..40),
        delta in 0.0f64..1.0,
        extra in 0.0f64..0.5,
        w in (0usize..3, 0usize..3),
        dw in (0usize..3, 0usize..3),
    ) {
        let cb = BlankPosterior::new(cb).unwrap();
        let small = SkipConfig { delta, w_left: w.0, w_right: w.1, ..SkipConfig::default() };
        let wider = SkipConfig { w_left: w.0 + dw.0, w_right: w.1 + dw.1, ..small };
        let looser = SkipConfig { delta: (delta + extra).min(1.0), ..small };
        let base = trigger_mask(&cb, &small);
        for other in [trigger_mask(&cb, &wider), trigger_mask(&cb, &looser)] {
            prop_assert!(base.iter().zip(&other).all(|(a, b)| !a || *b));
        }
        for (t, &c) in cb.as_slice().iter().enumerate() {
            if c <= delta {
                prop_assert!(base[t]);
            }
        }
    }

    #[test]
    fn generated_data_respects_config_and_round_trips(
        seed in any::<u64>(),
        vocab in 2usize..6,
        max_len in 1usize..5,
        repeats in any::<bool>(),
        gap in 0.0f64..=1.0,
        n in 1usize..6,
    ) {
        let cfg = TaskConfig {
            vocab_size: vocab,
            feat_dim: 3,
            min_target_len: 1,
            max_target_len: max_len,
            silence_gap_prob: gap,
            allow_repeats: repeats,
            seed,
            ..TaskConfig::default()
        };
        let data = Generator::new(cfg).unwrap().generate(Split::Dev, n).unwrap();
        prop_assert_eq!(data.len(), n);
        for u in &data.utterances {
            prop_assert!((1..=max_len).contains(&u.targets.len()));
            prop_assert!(u.targets.iter().all(|&k| (1..=vocab).contains(&k)));
            if !repeats {
                prop_assert!(u.targets.windows(2).all(|w| w[0] != w[1]));
            }
            prop_assert!(u.frames() >= u.targets.len() * 2);
        }
        let bytes = data.to_bytes();
        let back = Dataset::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes);
    }
}

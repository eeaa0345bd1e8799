use ndarray::Array2;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rightctx::fullsum::pair_class;
use rightctx::priors::{ema_prior_update, transcript_pair_prior, transcript_prior, PriorOptions};
use rightctx::topology::{
    build_ctc_fsa, build_hmm_fsa, collapse_ctc_path, count_paths, enumerate_paths, SilenceMode,
};
use rightctx::trainer::{Encoder, EncoderConfig, Head, LossVariant};
use rightctx::{Context, Lexicon, PhonemeInventory, TransitionModel};

const NAMES: [&str; 4] = ["a", "b", "c", "d"];

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Phoneme sequence over `n_base` phonemes, word-final last label.
fn phones_strategy() -> impl Strategy<Value = (usize, Vec<usize>)> {
    (1usize..=3).prop_flat_map(|n_base| (Just(n_base), prop::collection::vec(0..2 * n_base, 1..=4)))
}

fn with_eow(inv: &PhonemeInventory, mut phones: Vec<usize>) -> Vec<usize> {
    let last = phones.len() - 1;
    phones[last] = inv.eow_variant(phones[last]).unwrap();
    phones
}

proptest! {
    #[test]
    fn hmm_path_count_is_binomial((n_base, phones) in phones_strategy(), frames in 1usize..=10) {
        let inv = PhonemeInventory::new(&NAMES[..n_base], None).unwrap();
        let phones = with_eow(&inv, phones);
        let g = build_hmm_fsa(&phones, &inv, SilenceMode::None, &TransitionModel::default()).unwrap();
        let expected = if frames < phones.len() { 0.0 } else { binomial(frames - 1, phones.len() - 1) };
        prop_assert_eq!(count_paths(&g, frames), expected);
        prop_assert_eq!(enumerate_paths(&g, frames).unwrap().len() as f64, expected);
    }

    #[test]
    fn silence_paths_are_counted_consistently((n_base, phones) in phones_strategy(), frames in 1usize..=8) {
        let inv = PhonemeInventory::new(&NAMES[..n_base], Some("sil")).unwrap();
        let phones = with_eow(&inv, phones);
        let g = build_hmm_fsa(&phones, &inv, SilenceMode::Optional, &TransitionModel::default()).unwrap();
        prop_assert_eq!(count_paths(&g, frames), enumerate_paths(&g, frames).unwrap().len() as f64);
    }

    #[test]
    fn ctc_paths_collapse_to_transcript((n_base, phones) in phones_strategy(), frames in 1usize..=9) {
        let inv = PhonemeInventory::new(&NAMES[..n_base], None).unwrap().to_ctc();
        let phones = with_eow(&inv, phones);
        let g = build_ctc_fsa(&phones, &inv).unwrap();
        let blank = inv.blank().unwrap();
        let paths = enumerate_paths(&g, frames).unwrap();
        prop_assert_eq!(paths.len() as f64, count_paths(&g, frames));
        for p in paths.iter() {
            prop_assert_eq!(collapse_ctc_path(&g, p, blank), phones.clone());
        }
    }

    #[test]
    fn contexts_stay_in_inventory((n_base, phones) in phones_strategy(), silence in any::<bool>()) {
        let inv = PhonemeInventory::new(&NAMES[..n_base], silence.then_some("sil")).unwrap();
        let phones = with_eow(&inv, phones);
        let mode = if silence { SilenceMode::Optional } else { SilenceMode::None };
        let g = build_hmm_fsa(&phones, &inv, mode, &TransitionModel::default()).unwrap();
        for st in g.states() {
            prop_assert!(st.center < inv.len());
            if inv.is_silence(st.center) {
                prop_assert_eq!((st.left, st.right), (Context::Boundary, Context::Boundary));
            }
            for ctx in [st.left, st.right] {
                if let Context::Label(l) = ctx {
                    prop_assert!(l < inv.len());
                    prop_assert!(!inv.is_silence(l));
                }
            }
        }
    }

    #[test]
    fn priors_are_normalized(
        words in prop::collection::vec(prop::collection::vec(0usize..3, 1..5), 1..6),
        decay in 0.0f64..=1.0,
    ) {
        let inv = PhonemeInventory::new(&NAMES, Some("sil")).unwrap();
        let lex = Lexicon::from_entries([("x", vec!["a", "b"]), ("y", vec!["c"]), ("z", vec!["d", "a", "c"])], &inv).unwrap();
        let transcripts: Vec<Vec<&str>> = words
            .iter()
            .map(|u| u.iter().map(|&w| ["x", "y", "z"][w]).collect())
            .collect();
        let opts = PriorOptions::default();
        let center = transcript_prior(&transcripts, &lex, &inv, &opts).unwrap();
        let pair = transcript_pair_prior(&transcripts, &lex, &inv, &opts).unwrap();
        prop_assert_eq!(center.len(), inv.len());
        prop_assert_eq!(pair.len(), (inv.len() + 1) * inv.len());
        for p in [&center, &pair] {
            prop_assert!((p.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(p.log_probs.iter().all(|l| l.is_finite()));
        }
        let batch = vec![1.0 / inv.len() as f64; inv.len()];
        let ema = ema_prior_update(&center, &batch, decay, 1e-8).unwrap();
        prop_assert!((ema.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

fn features(frames: usize, dim: usize) -> Array2<f64> {
    Array2::from_shape_fn((frames, dim), |(t, d)| {
        ((t * 7 + d * 3) % 11) as f64 / 5.0 - 1.0
    })
}

#[test]
fn joint_head_composed_from_factors_is_their_product() {
    let inv = PhonemeInventory::new(&NAMES, Some("sil")).unwrap();
    let n = inv.len();
    let cfg = EncoderConfig::default();
    let dim = 6;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let src = Encoder::random(
        cfg.clone(),
        dim,
        &LossVariant::FactoredLcr.head_dims(n),
        &mut rng,
    );
    let mut dst = Encoder::random(cfg, dim, &LossVariant::DiphoneJoint.head_dims(n), &mut rng);
    dst.load_from(&src).unwrap();

    let x = features(32, dim);
    let a = src.encode(x.view()).unwrap();
    let b = dst.encode(x.view()).unwrap();
    let (left, center, joint) = (
        a.get(Head::Left).unwrap(),
        a.get(Head::Center).unwrap(),
        b.get(Head::Joint).unwrap(),
    );
    for t in 0..joint.nrows() {
        for lc in 0..=n {
            for c in 0..n {
                let j = joint[[t, pair_class(Context::from_class(lc, n), c, n)]];
                assert!((j - left[[t, lc]] - center[[t, c]]).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn joint_head_from_center_only_model_uses_uniform_left() {
    let inv = PhonemeInventory::new(&NAMES, Some("sil")).unwrap();
    let n = inv.len();
    let cfg = EncoderConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let src = Encoder::random(
        cfg.clone(),
        6,
        &LossVariant::HmmCenter.head_dims(n),
        &mut rng,
    );
    let mut dst = Encoder::random(cfg, 6, &LossVariant::DiphoneJoint.head_dims(n), &mut rng);
    dst.load_from(&src).unwrap();

    let x = features(16, 6);
    let center = src
        .encode(x.view())
        .unwrap()
        .get(Head::Center)
        .unwrap()
        .clone();
    let joint = dst
        .encode(x.view())
        .unwrap()
        .get(Head::Joint)
        .unwrap()
        .clone();
    let uniform = -((n + 1) as f64).ln();
    for t in 0..joint.nrows() {
        for c in 0..n {
            let j = joint[[t, pair_class(Context::Boundary, c, n)]];
            assert!((j - uniform - center[[t, c]]).abs() < 1e-10);
        }
    }
}

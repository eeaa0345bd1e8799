use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rightctx::fullsum::oracle::relative_error;
use rightctx::trainer::encoder::{Encoder, EncoderConfig, Head};
use rightctx::trainer::eval::output_frame_labels;
use rightctx::trainer::{
    load_checkpoint, save_checkpoint, synth_corpus, train, train_with, training_graph,
    utterance_loss, Checkpoint, LossVariant, OclrConfig, SynthSpec, SynthWorld, TrainConfig,
    TrainError,
};
use rightctx::ScaleSet;

fn tiny_spec() -> SynthSpec {
    SynthSpec {
        n_phonemes: 3,
        feature_dim: 4,
        vocab_size: 4,
        word_length: [1, 2],
        utterance_words: [1, 2],
        duration: [4, 6],
        silence_duration: [4, 6],
        ..SynthSpec::default()
    }
}

#[test]
fn stride_and_uniform_outputs() {
    let cfg = EncoderConfig {
        context: 2,
        stride: 4,
        hidden: vec![5],
    };
    let enc = Encoder::zeros(cfg, 3, &[Some(4), Some(3), Some(4), Some(12)]);
    let feats = Array2::from_shape_fn((16, 3), |(t, d)| (t * 3 + d) as f64);
    let out = enc.encode(feats.view()).unwrap();
    assert_eq!(out.frames(), 4);
    for h in Head::ALL {
        let lp = out.get(h).unwrap();
        let n = lp.ncols() as f64;
        assert!(lp.iter().all(|&v| (v + n.ln()).abs() < 1e-15));
    }
    let odd = Array2::zeros((17, 3));
    assert_eq!(enc.encode(odd.view()).unwrap().frames(), 5);
}

#[test]
fn heads_are_normalized() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let enc = Encoder::random(
        EncoderConfig {
            context: 1,
            stride: 2,
            hidden: vec![6, 5],
        },
        3,
        &[Some(4), Some(3), None, None],
        &mut rng,
    );
    let feats = Array2::from_shape_fn((9, 3), |(t, d)| ((t * 7 + d * 3) % 5) as f64 - 2.0);
    let out = enc.encode(feats.view()).unwrap();
    for lp in out.0.iter().flatten() {
        for row in lp.rows() {
            assert!((row.iter().map(|v| v.exp()).sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
    let bad = Array2::zeros((4, 2));
    assert!(matches!(
        enc.encode(bad.view()),
        Err(TrainError::FeatureDim { .. })
    ));
}

/// Central differences of the utterance loss with respect to every
/// encoder parameter, for each loss variant.
#[test]
fn encoder_gradient_matches_finite_differences() {
    let spec = tiny_spec();
    let corpus = synth_corpus(&spec, 3, 4).unwrap();
    for variant in [
        LossVariant::Ctc,
        LossVariant::HmmCenter,
        LossVariant::FactoredLcr,
        LossVariant::DiphoneJoint,
    ] {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cfg = EncoderConfig {
            context: 1,
            stride: 4,
            hidden: vec![4],
        };
        let heads = variant.head_dims(corpus.inv.len());
        let enc = Encoder::random(cfg, spec.feature_dim, &heads, &mut rng);
        let scales = ScaleSet {
            alpha_left: 0.7,
            alpha_right: 0.4,
            eta: 0.8,
            ..ScaleSet::default()
        };
        let u = &corpus.utterances[0];
        let g = training_graph(
            variant,
            &u.transcript,
            &corpus,
            &Default::default(),
            Default::default(),
        )
        .unwrap();
        let loss = |e: &Encoder| {
            utterance_loss(e, u.features.view(), &g, variant, &scales, false)
                .unwrap()
                .loss
        };
        let analytic = utterance_loss(&enc, u.features.view(), &g, variant, &scales, true)
            .unwrap()
            .grad
            .unwrap();
        let h = 1e-6;
        let mut probe = enc.clone();
        let mut worst: f64 = 0.0;
        let grads: Vec<Vec<f64>> = analytic.tensors().iter().map(|t| t.to_vec()).collect();
        for (ti, gt) in grads.iter().enumerate() {
            for (i, &g) in gt.iter().enumerate() {
                let orig = probe.tensors()[ti][i];
                probe.tensors_mut()[ti][i] = orig + h;
                let plus = loss(&probe);
                probe.tensors_mut()[ti][i] = orig - h;
                let minus = loss(&probe);
                probe.tensors_mut()[ti][i] = orig;
                let numeric = (plus - minus) / (2.0 * h);
                worst = worst.max(relative_error(g, numeric, 1e-5));
            }
        }
        assert!(worst <= 1e-3, "{variant:?}: worst relative error {worst}");
    }
}

#[test]
fn synthetic_corpus_properties() {
    let spec = SynthSpec {
        noise_std: 0.0,
        coarticulation: 0.0,
        ..tiny_spec()
    };
    let world = SynthWorld::new(&spec, 5).unwrap();
    let c = world.sample(6, 0, "u");
    for u in &c.utterances {
        let labels = u.frame_labels.as_ref().unwrap();
        for (t, &l) in labels.iter().enumerate() {
            assert_eq!(u.features.row(t), world.prototypes.row(l));
        }
    }
    assert_eq!(
        synth_corpus(&tiny_spec(), 9, 5).unwrap(),
        synth_corpus(&tiny_spec(), 9, 5).unwrap()
    );
    assert_ne!(
        synth_corpus(&tiny_spec(), 9, 5).unwrap(),
        synth_corpus(&tiny_spec(), 10, 5).unwrap()
    );
    let bad = SynthSpec {
        duration: [0, 3],
        ..tiny_spec()
    };
    assert!(synth_corpus(&bad, 0, 1).is_err());
    let empty = synth_corpus(&tiny_spec(), 0, 0).unwrap();
    assert!(matches!(
        train(&TrainConfig::default(), &empty, None),
        Err(TrainError::EmptyCorpus)
    ));
}

#[test]
fn output_labels_by_majority() {
    assert_eq!(
        output_frame_labels(&[1, 1, 2, 2, 3, 3, 3, 4, 5], 4),
        vec![1, 3, 5]
    );
}

fn quick_config(loss: LossVariant) -> TrainConfig {
    TrainConfig {
        loss,
        epochs: 4,
        batch_size: 8,
        encoder: EncoderConfig {
            context: 2,
            stride: 4,
            hidden: vec![24],
        },
        schedule: OclrConfig {
            peak_lr: 3e-3,
            ..OclrConfig::default()
        },
        seed: 4,
        ..TrainConfig::default()
    }
}

#[test]
fn training_is_deterministic_and_resumable() {
    let corpus = synth_corpus(&tiny_spec(), 1, 24).unwrap();
    let cfg = quick_config(LossVariant::FactoredLcr);
    let a = train(&cfg, &corpus, None).unwrap();
    let b = rightctx::par::with_threads(Some(1), || train(&cfg, &corpus, None).unwrap());
    assert_eq!(a.metrics, b.metrics);
    assert_eq!(a.checkpoint, b.checkpoint);
    assert!(a.metrics.last().unwrap().mean_loss < a.metrics[0].mean_loss);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&path, &a.checkpoint).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded, a.checkpoint);
    assert_eq!(
        loaded.probe_loss.to_bits(),
        a.checkpoint.probe_loss.to_bits()
    );

    let resumed = train(
        &TrainConfig {
            epochs: 1,
            ..cfg.clone()
        },
        &corpus,
        Some(&loaded),
    )
    .unwrap();
    assert_eq!(
        resumed.initial_probe_loss.unwrap().to_bits(),
        loaded.probe_loss.to_bits()
    );

    let mut bytes = a.checkpoint.to_bytes();
    bytes[0] = b'X';
    assert!(matches!(
        Checkpoint::from_bytes(&bytes),
        Err(TrainError::Format(_))
    ));
    let n = bytes.len();
    assert!(Checkpoint::from_bytes(&a.checkpoint.to_bytes()[..n - 3]).is_err());
}

#[test]
fn diphone_from_factored_checkpoint() {
    let corpus = synth_corpus(&tiny_spec(), 2, 16).unwrap();
    let first = train(&quick_config(LossVariant::FactoredLcr), &corpus, None).unwrap();
    let mut epochs = Vec::new();
    let second = train_with(
        &TrainConfig {
            epochs: 2,
            ..quick_config(LossVariant::DiphoneJoint)
        },
        &corpus,
        Some(&first.checkpoint),
        &mut |m, ck| {
            epochs.push(m.epoch);
            assert!(ck.encoder.heads[Head::Joint.index()].is_some());
            Ok(())
        },
    )
    .unwrap();
    assert_eq!(epochs, vec![1, 2]);
    assert_eq!(second.checkpoint.encoder.layers.len(), 1);
    assert!(second.metrics.iter().all(|m| m.lr_last <= 5e-5));

    let wider = TrainConfig {
        encoder: EncoderConfig {
            hidden: vec![30],
            ..quick_config(LossVariant::DiphoneJoint).encoder
        },
        ..quick_config(LossVariant::DiphoneJoint)
    };
    assert!(matches!(
        train(&wider, &corpus, Some(&first.checkpoint)),
        Err(TrainError::Incompatible(_))
    ));
}

#[test]
fn single_utterance_loss_decreases_for_every_variant() {
    let corpus = synth_corpus(&tiny_spec(), 6, 1).unwrap();
    for loss in [
        LossVariant::Ctc,
        LossVariant::HmmCenter,
        LossVariant::FactoredLcr,
        LossVariant::DiphoneJoint,
    ] {
        let cfg = TrainConfig {
            epochs: 50,
            batch_size: 1,
            schedule: OclrConfig {
                peak_lr: 1e-3,
                ..OclrConfig::default()
            },
            ..quick_config(loss)
        };
        let out = train(&cfg, &corpus, None).unwrap();
        let losses: Vec<f64> = out.metrics.iter().map(|m| m.mean_loss).collect();
        let smooth: Vec<f64> = losses
            .windows(5)
            .map(|w| w.iter().sum::<f64>() / 5.0)
            .collect();
        let down = smooth.windows(2).filter(|w| w[1] < w[0]).count();
        assert!(
            down as f64 >= 0.9 * (smooth.len() - 1) as f64,
            "{loss:?}: {losses:?}"
        );
    }
}

use ndarray::{array, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rightctx::fullsum::oracle::{
    bruteforce_loss, bruteforce_occupancy, central_differences, relative_error, FD_FLOOR,
};
use rightctx::fullsum::{
    assemble_scores, ctc_loss_grad, diphone_loss_grad, factored_loss_grad, forward_backward,
    hmm_fullsum_loss_grad, pair_class, sequence_loss, FullSumError, Streams,
};
use rightctx::topology::{build_ctc_fsa, build_hmm_fsa, enumerate_paths, SilenceMode};
use rightctx::verify::instances::{random_instance, random_log_posteriors, Limits, Variant};
use rightctx::{Context, PhonemeInventory, ScaleSet, TransitionModel};

fn uniform(rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_elem((rows, cols), -(cols as f64).ln())
}

fn no_eta() -> ScaleSet {
    ScaleSet {
        eta: 0.0,
        ..ScaleSet::default()
    }
}

#[test]
fn ctc_uniform_two_frames_is_log3() {
    let inv = PhonemeInventory::new(&["a", "b"], None).unwrap().to_ctc();
    // Labels a, b, a#eow, b#eow, blank: keep three active classes by giving
    // the EOW variants zero probability.
    let mut lp = Array2::from_elem((2, inv.len()), f64::NEG_INFINITY);
    for t in 0..2 {
        for l in [0, 1, inv.blank().unwrap()] {
            lp[[t, l]] = (1.0f64 / 3.0).ln();
        }
    }
    let r = ctc_loss_grad(lp.view(), &[0], &inv).unwrap();
    assert!((r.loss - 3f64.ln()).abs() < 1e-12);
    let g = build_ctc_fsa(&[0], &inv).unwrap();
    let bf = bruteforce_loss(&Streams::Ctc(lp.view()), &g, &ScaleSet::default()).unwrap();
    assert!((bf - 3f64.ln()).abs() < 1e-12);
}

#[test]
fn ctc_forced_single_frame() {
    let inv = PhonemeInventory::new(&["a"], None).unwrap().to_ctc();
    let mut lp = Array2::from_elem((1, inv.len()), f64::NEG_INFINITY);
    lp[[0, 0]] = 0.0;
    let r = ctc_loss_grad(lp.view(), &[0], &inv).unwrap();
    assert_eq!(r.loss, 0.0);
    assert_eq!(r.grad_center.unwrap()[[0, 0]], -1.0);
}

#[test]
fn ctc_repeated_label_needs_three_frames() {
    let inv = PhonemeInventory::new(&["a"], None).unwrap().to_ctc();
    let lp = uniform(2, inv.len());
    assert!(matches!(
        ctc_loss_grad(lp.view(), &[0, 0], &inv),
        Err(FullSumError::NoPath {
            frames: 2,
            min_frames: Some(3)
        })
    ));
}

#[test]
fn hmm_forced_path_without_transitions() {
    let inv = PhonemeInventory::new(&["k", "ae", "t"], None).unwrap();
    let n = inv.len();
    let g = build_hmm_fsa(
        &[0, 1],
        &inv,
        SilenceMode::None,
        &TransitionModel::default(),
    )
    .unwrap();
    let r = hmm_fullsum_loss_grad(uniform(2, n).view(), &g, &no_eta()).unwrap();
    assert!((r.loss - 2.0 * (n as f64).ln()).abs() < 1e-12);
}

#[test]
fn hmm_single_state_counts_loop_arcs() {
    let inv = PhonemeInventory::new(&["ah"], None).unwrap();
    let ah = inv.eow_variant(0).unwrap();
    let g = build_hmm_fsa(&[ah], &inv, SilenceMode::None, &TransitionModel::default()).unwrap();
    let mut lp = Array2::from_elem((3, inv.len()), f64::NEG_INFINITY);
    lp.column_mut(ah).fill(0.0);
    let r = hmm_fullsum_loss_grad(lp.view(), &g, &ScaleSet::default()).unwrap();
    assert!((r.loss + 2.0 * 0.5f64.ln()).abs() < 1e-12);
}

#[test]
fn hmm_zero_acoustic_scale_depends_only_on_transitions() {
    let inv = PhonemeInventory::new(&["k", "ae"], None).unwrap();
    let g = build_hmm_fsa(
        &[0, 1],
        &inv,
        SilenceMode::None,
        &TransitionModel::default(),
    )
    .unwrap();
    let scales = ScaleSet {
        alpha_center: 0.0,
        ..ScaleSet::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = random_log_posteriors(&mut rng, 4, inv.len(), 2.0);
    let b = random_log_posteriors(&mut rng, 4, inv.len(), 2.0);
    let la = hmm_fullsum_loss_grad(a.view(), &g, &scales).unwrap().loss;
    let lb = hmm_fullsum_loss_grad(b.view(), &g, &scales).unwrap().loss;
    assert_eq!(la, lb);
    // Three paths of length 4, each with two loops and one forward arc.
    assert!((la + (3.0 * 0.125f64).ln()).abs() < 1e-12);
}

#[test]
fn training_losses_reject_prior_scale() {
    let inv = PhonemeInventory::new(&["k"], None).unwrap();
    let g = build_hmm_fsa(&[0], &inv, SilenceMode::None, &TransitionModel::default()).unwrap();
    let scales = ScaleSet {
        beta: 0.5,
        ..ScaleSet::default()
    };
    assert!(matches!(
        hmm_fullsum_loss_grad(uniform(2, inv.len()).view(), &g, &scales),
        Err(FullSumError::Scale(_))
    ));
}

#[test]
fn unnormalized_and_misshaped_streams_are_rejected() {
    let inv = PhonemeInventory::new(&["k"], None).unwrap();
    let n = inv.len();
    let g = build_hmm_fsa(&[0], &inv, SilenceMode::None, &TransitionModel::default()).unwrap();
    let bad = Array2::zeros((2, n));
    assert!(matches!(
        hmm_fullsum_loss_grad(bad.view(), &g, &ScaleSet::default()),
        Err(FullSumError::NotNormalized {
            stream: "center",
            row: 0,
            ..
        })
    ));
    let u = uniform(2, n + 1);
    assert!(matches!(
        factored_loss_grad(
            u.view(),
            uniform(2, n).view(),
            uniform(3, n + 1).view(),
            &g,
            &ScaleSet::default()
        ),
        Err(FullSumError::Shape {
            what: "right stream",
            ..
        })
    ));
    let ctc = build_ctc_fsa(&[0], &inv.to_ctc()).unwrap();
    assert!(matches!(
        hmm_fullsum_loss_grad(uniform(2, n).view(), &ctc, &ScaleSet::default()),
        Err(FullSumError::WrongTopology { .. })
    ));
}

#[test]
fn factored_boundary_sentinel_on_forced_path() {
    let inv = PhonemeInventory::new(&["k", "ae"], None).unwrap();
    let n = inv.len();
    let g = build_hmm_fsa(
        &[0, 1],
        &inv,
        SilenceMode::None,
        &TransitionModel::default(),
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let l = random_log_posteriors(&mut rng, 2, n + 1, 1.0);
    let c = random_log_posteriors(&mut rng, 2, n, 1.0);
    let r = random_log_posteriors(&mut rng, 2, n + 1, 1.0);
    let res = factored_loss_grad(l.view(), c.view(), r.view(), &g, &ScaleSet::default()).unwrap();
    let occ = &res.occupancies;
    assert!((occ.left[[0, n]] - 1.0).abs() < 1e-12);
    assert!((occ.right[[1, n]] - 1.0).abs() < 1e-12);
    assert!((occ.right[[0, 1]] - 1.0).abs() < 1e-12);
    assert!((occ.left[[1, 0]] - 1.0).abs() < 1e-12);
}

#[test]
fn factored_uniform_context_streams_add_constant() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let inst = random_instance(&mut rng, Variant::HmmCenter, &Limits::default());
        let center = inst.streams.center.as_ref().unwrap();
        let (frames, n) = center.dim();
        let base = hmm_fullsum_loss_grad(center.view(), &inst.graph, &inst.scales).unwrap();
        let u = uniform(frames, n + 1);
        let fac = factored_loss_grad(u.view(), center.view(), u.view(), &inst.graph, &inst.scales)
            .unwrap();
        let shift = frames as f64
            * (inst.scales.alpha_left + inst.scales.alpha_right)
            * ((n + 1) as f64).ln();
        assert!(
            (fac.loss - base.loss - shift).abs() <= 1e-9,
            "{} vs {}",
            fac.loss - base.loss,
            shift
        );
        let gc = (fac.grad_center.unwrap() - base.grad_center.unwrap()).mapv(f64::abs);
        assert!(gc.iter().all(|&d| d < 1e-12));
    }
}

#[test]
fn factored_without_context_scales_equals_center_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..50 {
        let mut inst = random_instance(&mut rng, Variant::Factored, &Limits::default());
        inst.scales.alpha_left = 0.0;
        inst.scales.alpha_right = 0.0;
        let s = &inst.streams;
        let (l, c, r) = (
            s.left.as_ref().unwrap(),
            s.center.as_ref().unwrap(),
            s.right.as_ref().unwrap(),
        );
        let fac =
            factored_loss_grad(l.view(), c.view(), r.view(), &inst.graph, &inst.scales).unwrap();
        let hmm = hmm_fullsum_loss_grad(c.view(), &inst.graph, &inst.scales).unwrap();
        assert!((fac.loss - hmm.loss).abs() <= 1e-12);
    }
}

#[test]
fn diphone_separable_joint_reduces_to_center_loss() {
    let inv = PhonemeInventory::new(&["k", "ae", "t"], Some("sil")).unwrap();
    let n = inv.len();
    let phones = [0, 1, inv.eow_variant(2).unwrap()];
    let g = build_hmm_fsa(
        &phones,
        &inv,
        SilenceMode::Optional,
        &TransitionModel::default(),
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let center = random_log_posteriors(&mut rng, 7, n, 1.5);
    let mut joint = Array2::zeros((7, (n + 1) * n));
    for t in 0..7 {
        for l in 0..=n {
            for c in 0..n {
                joint[[t, pair_class(Context::from_class(l, n), c, n)]] =
                    center[[t, c]] - ((n + 1) as f64).ln();
            }
        }
    }
    let scales = ScaleSet {
        alpha_center: 0.7,
        ..ScaleSet::default()
    };
    let d = diphone_loss_grad(joint.view(), &g, &scales).unwrap();
    let h = hmm_fullsum_loss_grad(center.view(), &g, &scales).unwrap();
    let shift = 7.0 * 0.7 * ((n + 1) as f64).ln();
    assert!((d.loss - h.loss - shift).abs() < 1e-9);
}

#[test]
fn diphone_one_hot_forced_path_costs_only_transitions() {
    let inv = PhonemeInventory::new(&["k", "ae"], None).unwrap();
    let n = inv.len();
    let g = build_hmm_fsa(
        &[0, 1],
        &inv,
        SilenceMode::None,
        &TransitionModel::default(),
    )
    .unwrap();
    let mut joint = Array2::from_elem((2, (n + 1) * n), f64::NEG_INFINITY);
    joint[[0, pair_class(Context::Boundary, 0, n)]] = 0.0;
    joint[[1, pair_class(Context::Label(0), 1, n)]] = 0.0;
    let d = diphone_loss_grad(joint.view(), &g, &ScaleSet::default()).unwrap();
    assert!((d.loss + 0.5f64.ln()).abs() < 1e-12);
}

#[test]
fn occupancy_rows_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for v in Variant::ALL {
        for _ in 0..40 {
            let inst = random_instance(&mut rng, v, &Limits::default());
            let r = sequence_loss(&inst.streams.view(), &inst.graph, &inst.scales).unwrap();
            let occ = &r.occupancies;
            for m in [&occ.gamma, &occ.left, &occ.center, &occ.right] {
                for row in m.rows() {
                    assert!((row.sum() - 1.0).abs() <= 1e-9);
                }
            }
        }
    }
}

#[test]
fn forward_backward_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for v in Variant::ALL {
        for _ in 0..60 {
            let inst = random_instance(&mut rng, v, &Limits::default());
            let streams = inst.streams.view();
            let r = sequence_loss(&streams, &inst.graph, &inst.scales).unwrap();
            let bf = bruteforce_loss(&streams, &inst.graph, &inst.scales).unwrap();
            assert!(
                (r.loss - bf).abs() <= 1e-10 * r.loss.abs().max(1.0),
                "{v:?}: {} vs {bf}",
                r.loss
            );
            let gamma = bruteforce_occupancy(&streams, &inst.graph, &inst.scales).unwrap();
            let diff = (&r.occupancies.gamma - &gamma).mapv(f64::abs);
            assert!(diff.iter().all(|&d| d <= 1e-10), "{v:?} gamma");
        }
    }
}

#[test]
fn loss_is_finite_iff_paths_exist() {
    let inv = PhonemeInventory::new(&["a", "b"], None).unwrap();
    let ctc = inv.to_ctc();
    for phones in [vec![0], vec![0, 0], vec![0, 1, 1], vec![2, 2, 2]] {
        for frames in 1..7 {
            let g = build_ctc_fsa(&phones, &ctc).unwrap();
            let lp = uniform(frames, ctc.len());
            let has_paths = !enumerate_paths(&g, frames).unwrap().is_empty();
            let res = ctc_loss_grad(lp.view(), &phones, &ctc);
            assert_eq!(res.is_ok(), has_paths, "{phones:?} T={frames}");
            if let Ok(r) = res {
                assert!(r.loss.is_finite());
            }
            let g = build_hmm_fsa(
                &phones,
                &inv,
                SilenceMode::None,
                &TransitionModel::default(),
            )
            .unwrap();
            let has_paths = !enumerate_paths(&g, frames).unwrap().is_empty();
            let res =
                hmm_fullsum_loss_grad(uniform(frames, inv.len()).view(), &g, &ScaleSet::default());
            assert_eq!(res.is_ok(), has_paths);
        }
    }
}

/// Central-difference check of every gradient entry of every stream.
fn max_gradient_error(inst: &rightctx::verify::instances::Instance, h: f64) -> f64 {
    let analytic = sequence_loss(&inst.streams.view(), &inst.graph, &inst.scales).unwrap();
    let mut worst = 0.0f64;
    let names: Vec<&str> = inst
        .streams
        .clone()
        .streams_mut()
        .iter()
        .map(|(n, _)| *n)
        .collect();
    for name in names {
        let grad = match name {
            "left" => analytic.grad_left.as_ref(),
            "center" => analytic.grad_center.as_ref(),
            "right" => analytic.grad_right.as_ref(),
            _ => analytic.grad_joint.as_ref(),
        }
        .unwrap();
        let mut probe = inst.streams.clone();
        let base = probe
            .streams_mut()
            .into_iter()
            .find(|(n, _)| *n == name)
            .unwrap()
            .1
            .clone();
        let numeric = central_differences(&base, h, |x| {
            for (n, m) in probe.streams_mut() {
                if n == name {
                    m.assign(x);
                }
            }
            bruteforce_loss(&probe.view(), &inst.graph, &inst.scales).unwrap()
        });
        for (a, b) in grad.iter().zip(numeric.iter()) {
            worst = worst.max(relative_error(*a, *b, FD_FLOOR));
        }
    }
    worst
}

#[test]
fn gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let limits = Limits {
        max_frames: 6,
        max_phones: 3,
        ..Limits::default()
    };
    for v in Variant::ALL {
        for _ in 0..15 {
            let inst = random_instance(&mut rng, v, &limits);
            let err = max_gradient_error(&inst, 1e-5);
            assert!(err <= 1e-4, "{v:?}: relative error {err}");
        }
    }
}

#[test]
fn assembled_scores_follow_state_labels() {
    let inv = PhonemeInventory::new(&["k", "ae"], None).unwrap();
    let n = inv.len();
    let g = build_hmm_fsa(
        &[0, 1],
        &inv,
        SilenceMode::None,
        &TransitionModel::default(),
    )
    .unwrap();
    let l = array![[-1.0, -2.0, -3.0, -4.0, -5.0]];
    let c = array![[-10.0, -20.0, -30.0, -40.0]];
    let r = array![[-100.0, -200.0, -300.0, -400.0, -500.0]];
    assert_eq!(l.ncols(), n + 1);
    let scores = assemble_scores(
        &Streams::Factored {
            left: l.view(),
            center: c.view(),
            right: r.view(),
        },
        &g,
        &ScaleSet::default(),
    )
    .unwrap();
    // state 0: (#, k, ae); state 1: (k, ae, #)
    assert_eq!(scores.view()[[0, 0]], -5.0 - 10.0 - 200.0);
    assert_eq!(scores.view()[[0, 1]], -1.0 - 20.0 - 500.0);
    let fb = forward_backward(&scores, &g, 1.0);
    assert!(matches!(fb, Err(FullSumError::NoPath { .. })));
}

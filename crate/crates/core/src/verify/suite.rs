//! Runner for the oracle and property checks. Each property reports its
//! worst observed error against a tolerance.

use std::time::Instant;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::decoding::{exhaustive_decode, random_decode_task, DecodeTask};
use super::instances::{random_instance, Instance, Limits, Variant};
use crate::decoder::{Acoustic, DecodeError, Decoder, DecoderConfig};
use crate::fullsum::oracle::{
    bruteforce_loss, bruteforce_occupancy, central_differences, relative_error, FD_FLOOR,
};
use crate::fullsum::{ctc_loss_grad, factored_loss_grad, hmm_fullsum_loss_grad, sequence_loss};
use crate::inventory::PhonemeInventory;
use crate::par;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteConfig {
    pub seed: u64,
    /// Instances per topology variant for the enumeration checks.
    pub enumeration_instances: usize,
    /// Instances per variant for the finite-difference check.
    pub gradient_instances: usize,
    pub fd_step: f64,
    pub reduction_instances: usize,
    pub decode_tasks: usize,
    /// Perturbs one occupancy entry by 1e-6 before comparing, to show that
    /// the suite detects it.
    pub inject_fault: bool,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            enumeration_instances: 150,
            gradient_instances: 100,
            fd_step: 1e-5,
            reduction_instances: 100,
            decode_tasks: 80,
            inject_fault: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyResult {
    pub name: String,
    /// Instances or tasks examined.
    pub checked: usize,
    pub max_error: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub seconds: f64,
}

impl PropertyResult {
    fn new(name: &str, checked: usize, max_error: f64, tolerance: f64, started: Instant) -> Self {
        Self {
            name: name.to_string(),
            checked,
            max_error,
            tolerance,
            passed: checked > 0 && max_error <= tolerance,
            seconds: started.elapsed().as_secs_f64(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub config: SuiteConfig,
    pub properties: Vec<PropertyResult>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.properties.iter().all(|p| p.passed)
    }

    pub fn get(&self, name: &str) -> Option<&PropertyResult> {
        self.properties.iter().find(|p| p.name == name)
    }

    /// The report without timings, for run-to-run comparisons.
    pub fn without_timings(&self) -> SuiteReport {
        let mut r = self.clone();
        for p in &mut r.properties {
            p.seconds = 0.0;
        }
        r
    }
}

fn max_of(values: impl IntoIterator<Item = f64>) -> f64 {
    // NaN propagates as infinity so that it always fails.
    values
        .into_iter()
        .map(|v| if v.is_nan() { f64::INFINITY } else { v })
        .fold(0.0, f64::max)
}

fn instances(rng: &mut ChaCha8Rng, per_variant: usize, limits: &Limits) -> Vec<Instance> {
    let mut out = Vec::with_capacity(per_variant * Variant::ALL.len());
    for _ in 0..per_variant {
        for v in Variant::ALL {
            out.push(random_instance(rng, v, limits));
        }
    }
    out
}

/// Loss, occupancy and row-sum errors against path enumeration.
fn enumeration(cfg: &SuiteConfig, rng: &mut ChaCha8Rng) -> Vec<PropertyResult> {
    let started = Instant::now();
    let insts = instances(rng, cfg.enumeration_instances, &Limits::default());
    let errors = par::map_range(insts.len(), |i| {
        let inst = &insts[i];
        let streams = inst.streams.view();
        let mut r = sequence_loss(&streams, &inst.graph, &inst.scales).expect("instance has paths");
        if cfg.inject_fault && i == 0 {
            r.occupancies.gamma[[0, 0]] += 1e-6;
        }
        let bf = bruteforce_loss(&streams, &inst.graph, &inst.scales).expect("instance has paths");
        let loss_err = (r.loss - bf).abs() / bf.abs().max(1.0);
        let gamma =
            bruteforce_occupancy(&streams, &inst.graph, &inst.scales).expect("instance has paths");
        let gamma_err = max_of((&r.occupancies.gamma - &gamma).iter().map(|d| d.abs()));
        let occ = &r.occupancies;
        let rows = [&occ.gamma, &occ.left, &occ.center, &occ.right]
            .into_iter()
            .flat_map(|m| {
                m.rows()
                    .into_iter()
                    .map(|row| (row.sum() - 1.0).abs())
                    .collect::<Vec<_>>()
            });
        (loss_err, gamma_err, max_of(rows))
    });
    let n = insts.len();
    vec![
        PropertyResult::new(
            "fullsum_loss_vs_enumeration",
            n,
            max_of(errors.iter().map(|e| e.0)),
            1e-10,
            started,
        ),
        PropertyResult::new(
            "occupancy_vs_enumeration",
            n,
            max_of(errors.iter().map(|e| e.1)),
            1e-10,
            started,
        ),
        PropertyResult::new(
            "occupancy_rows_sum_to_one",
            n,
            max_of(errors.iter().map(|e| e.2)),
            1e-9,
            started,
        ),
    ]
}

fn gradient_error(inst: &Instance, h: f64) -> f64 {
    let analytic =
        sequence_loss(&inst.streams.view(), &inst.graph, &inst.scales).expect("instance has paths");
    let mut probe = inst.streams.clone();
    let names: Vec<&'static str> = probe.streams_mut().iter().map(|(n, _)| *n).collect();
    let mut worst = 0.0f64;
    for name in names {
        let grad = match name {
            "left" => analytic.grad_left.as_ref(),
            "center" => analytic.grad_center.as_ref(),
            "right" => analytic.grad_right.as_ref(),
            _ => analytic.grad_joint.as_ref(),
        }
        .expect("variant provides this gradient");
        let base: Array2<f64> = probe
            .streams_mut()
            .into_iter()
            .find(|(n, _)| *n == name)
            .map(|(_, m)| m.clone())
            .expect("stream present");
        let numeric = central_differences(&base, h, |x| {
            for (n, m) in probe.streams_mut() {
                if n == name {
                    m.assign(x);
                }
            }
            sequence_loss(&probe.view(), &inst.graph, &inst.scales)
                .expect("instance has paths")
                .loss
        });
        for (a, b) in grad.iter().zip(numeric.iter()) {
            worst = worst.max(relative_error(*a, *b, FD_FLOOR));
        }
    }
    worst
}

fn gradients(cfg: &SuiteConfig, rng: &mut ChaCha8Rng) -> Vec<PropertyResult> {
    let limits = Limits {
        max_frames: 8,
        ..Limits::default()
    };
    let insts = instances(rng, cfg.gradient_instances, &limits);
    Variant::ALL
        .iter()
        .map(|&v| {
            let started = Instant::now();
            let mine: Vec<&Instance> = insts.iter().filter(|i| i.streams.variant == v).collect();
            let errs = par::map(&mine, |inst| gradient_error(inst, cfg.fd_step));
            PropertyResult::new(
                &format!("gradient_fd_{}", v.name()),
                mine.len(),
                max_of(errs),
                1e-4,
                started,
            )
        })
        .collect()
}

fn reductions(cfg: &SuiteConfig, rng: &mut ChaCha8Rng) -> Vec<PropertyResult> {
    let started = Instant::now();
    let insts: Vec<Instance> = (0..cfg.reduction_instances)
        .map(|_| random_instance(rng, Variant::Factored, &Limits::default()))
        .collect();
    let errs = par::map(&insts, |inst| {
        let s = &inst.streams;
        let (l, c, r) = (
            s.left.as_ref().expect("factored"),
            s.center.as_ref().expect("factored"),
            s.right.as_ref().expect("factored"),
        );
        let (frames, n) = c.dim();
        let base = hmm_fullsum_loss_grad(c.view(), &inst.graph, &inst.scales)
            .expect("paths")
            .loss;
        let u = Array2::from_elem((frames, n + 1), -((n + 1) as f64).ln());
        let fac = factored_loss_grad(u.view(), c.view(), u.view(), &inst.graph, &inst.scales)
            .expect("paths")
            .loss;
        let shift = frames as f64
            * (inst.scales.alpha_left + inst.scales.alpha_right)
            * ((n + 1) as f64).ln();
        let uniform_err = (fac - base - shift).abs();
        let mut zero = inst.scales;
        zero.alpha_left = 0.0;
        zero.alpha_right = 0.0;
        let f0 = factored_loss_grad(l.view(), c.view(), r.view(), &inst.graph, &zero)
            .expect("paths")
            .loss;
        let h0 = hmm_fullsum_loss_grad(c.view(), &inst.graph, &zero)
            .expect("paths")
            .loss;
        (uniform_err, (f0 - h0).abs())
    });
    let ctc_started = Instant::now();
    // Labels a, a#eow and blank.
    let inv = PhonemeInventory::new(&["a"], None)
        .expect("valid inventory")
        .to_ctc();
    let lp = Array2::from_elem((2, inv.len()), -(inv.len() as f64).ln());
    let ctc =
        ctc_loss_grad(lp.view(), &[0], &inv).map_or(f64::INFINITY, |r| (r.loss - 3f64.ln()).abs());
    vec![
        PropertyResult::new(
            "uniform_context_shift",
            insts.len(),
            max_of(errs.iter().map(|e| e.0)),
            1e-9,
            started,
        ),
        PropertyResult::new(
            "zero_context_scales",
            insts.len(),
            max_of(errs.iter().map(|e| e.1)),
            1e-12,
            started,
        ),
        PropertyResult::new("ctc_uniform_log3", 1, ctc, 1e-12, ctc_started),
    ]
}

/// Outcome of one decoder task: 0 on agreement (including both sides
/// finding no hypothesis), the score difference on equal words, infinity
/// on any disagreement.
fn decode_error(task: &DecodeTask) -> (f64, bool) {
    let dec = match Decoder::new(&task.inv, &task.lex, &task.lm) {
        Ok(d) => d,
        Err(_) => return (f64::INFINITY, false),
    }
    .with_scales(task.scales)
    .with_transitions(task.transitions)
    .with_prior(Some(&task.prior))
    .with_config(DecoderConfig {
        max_words: Some(2),
        silence: task.silence,
        ..DecoderConfig::unpruned()
    });
    let ac = if task.diphone {
        Acoustic::Diphone(task.log_posteriors.view())
    } else {
        Acoustic::Center(task.log_posteriors.view())
    };
    let expected = exhaustive_decode(
        task.log_posteriors.view(),
        task.diphone,
        &task.inv,
        &task.lex,
        &task.lm,
        &task.scales,
        &task.transitions,
        task.silence,
        Some(&task.prior),
        2,
    );
    match (dec.decode(&ac), expected) {
        (Ok(res), Some((words, score))) if res.words == words => ((res.score - score).abs(), true),
        (Err(DecodeError::NoSurvivor { .. }), None) => (0.0, false),
        _ => (f64::INFINITY, false),
    }
}

fn decoding(cfg: &SuiteConfig, rng: &mut ChaCha8Rng) -> Vec<PropertyResult> {
    let started = Instant::now();
    let tasks: Vec<DecodeTask> = (0..cfg.decode_tasks)
        .map(|i| random_decode_task(rng, i % 3, 12))
        .collect();
    let out = par::map(&tasks, decode_error);
    let compared = out.iter().filter(|o| o.1).count();
    let mut r = PropertyResult::new(
        "decoder_vs_exhaustive",
        compared,
        max_of(out.iter().map(|o| o.0)),
        1e-9,
        started,
    );
    r.passed &= out.iter().all(|o| o.0.is_finite());
    vec![r]
}

/// Runs every property in a fixed order from one seeded generator.
pub fn run_suite(cfg: &SuiteConfig) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut properties = enumeration(cfg, &mut rng);
    properties.extend(gradients(cfg, &mut rng));
    properties.extend(reductions(cfg, &mut rng));
    properties.extend(decoding(cfg, &mut rng));
    SuiteReport {
        config: cfg.clone(),
        properties,
    }
}

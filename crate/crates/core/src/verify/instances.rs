//! Random small instances for oracle comparisons.

use ndarray::Array2;
use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::fullsum::Streams;
use crate::inventory::PhonemeInventory;
use crate::scales::{ScaleSet, TransitionModel};
use crate::topology::{build_ctc_fsa, build_hmm_fsa, count_paths, AlignmentGraph, SilenceMode};

const BASE_NAMES: [&str; 3] = ["a", "b", "c"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Ctc,
    HmmCenter,
    Factored,
    Diphone,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Ctc,
        Variant::HmmCenter,
        Variant::Factored,
        Variant::Diphone,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Ctc => "ctc",
            Variant::HmmCenter => "hmm_center",
            Variant::Factored => "factored_lcr",
            Variant::Diphone => "diphone",
        }
    }
}

/// Size limits for generated instances.
#[derive(Debug, Clone, Copy)]
pub struct Limits {
    pub max_frames: usize,
    pub max_phones: usize,
    pub max_labels: usize,
    pub max_paths: f64,
}

impl Default for Limits {
    fn default() -> Self {
        Self {
            max_frames: 10,
            max_phones: 4,
            max_labels: 6,
            max_paths: 20_000.0,
        }
    }
}

/// Owned log-posterior streams for one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct OwnedStreams {
    pub variant: Variant,
    pub left: Option<Array2<f64>>,
    pub center: Option<Array2<f64>>,
    pub right: Option<Array2<f64>>,
    pub joint: Option<Array2<f64>>,
}

impl OwnedStreams {
    pub fn view(&self) -> Streams<'_> {
        fn get(m: &Option<Array2<f64>>) -> ndarray::ArrayView2<'_, f64> {
            m.as_ref().expect("stream present").view()
        }
        match self.variant {
            Variant::Ctc => Streams::Ctc(get(&self.center)),
            Variant::HmmCenter => Streams::Center(get(&self.center)),
            Variant::Factored => Streams::Factored {
                left: get(&self.left),
                center: get(&self.center),
                right: get(&self.right),
            },
            Variant::Diphone => Streams::Diphone(get(&self.joint)),
        }
    }

    /// Mutable access to every stream, in a fixed order.
    pub fn streams_mut(&mut self) -> Vec<(&'static str, &mut Array2<f64>)> {
        let mut out = Vec::new();
        if let Some(m) = self.left.as_mut() {
            out.push(("left", m));
        }
        if let Some(m) = self.center.as_mut() {
            out.push(("center", m));
        }
        if let Some(m) = self.right.as_mut() {
            out.push(("right", m));
        }
        if let Some(m) = self.joint.as_mut() {
            out.push(("joint", m));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct Instance {
    pub inv: PhonemeInventory,
    pub phones: Vec<usize>,
    pub graph: AlignmentGraph,
    pub streams: OwnedStreams,
    pub scales: ScaleSet,
}

/// Row-normalized random log-probabilities, `rows x cols`.
pub fn random_log_posteriors<R: Rng>(
    rng: &mut R,
    rows: usize,
    cols: usize,
    spread: f64,
) -> Array2<f64> {
    let normal = Normal::new(0.0, spread).expect("valid std");
    let mut m = Array2::from_shape_fn((rows, cols), |_| normal.sample(rng));
    for mut row in m.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    m
}

/// Draws a random instance of `variant` within `limits`. The phoneme
/// sequence mixes plain and EOW labels so that optional inter-word silence
/// states appear in HMM graphs.
pub fn random_instance<R: Rng>(rng: &mut R, variant: Variant, limits: &Limits) -> Instance {
    loop {
        // With EOW doubling plus one special label, 2 base phonemes give 5 labels.
        let max_base = ((limits.max_labels.saturating_sub(1)) / 2).clamp(1, BASE_NAMES.len());
        let n_base = rng.random_range(1..=max_base);
        let silence = variant != Variant::Ctc && rng.random_bool(0.5);
        let base = &BASE_NAMES[..n_base];
        let hmm_inv =
            PhonemeInventory::new(base, silence.then_some("sil")).expect("valid inventory");
        let inv = if variant == Variant::Ctc {
            hmm_inv.to_ctc()
        } else {
            hmm_inv
        };
        let phone_labels: Vec<usize> = (0..2 * n_base).collect();
        let len = rng.random_range(1..=limits.max_phones);
        let mut phones: Vec<usize> = (0..len)
            .map(|_| *phone_labels.choose(rng).expect("nonempty"))
            .collect();
        let last = phones.len() - 1;
        phones[last] = inv.eow_variant(phones[last]).expect("phoneme");

        let transitions = TransitionModel {
            p_loop: rng.random_range(0.2..0.8),
            p_sil_loop: rng.random_range(0.2..0.8),
        };
        let graph = match variant {
            Variant::Ctc => build_ctc_fsa(&phones, &inv),
            _ => build_hmm_fsa(
                &phones,
                &inv,
                if silence {
                    SilenceMode::Optional
                } else {
                    SilenceMode::None
                },
                &transitions,
            ),
        }
        .expect("valid graph");
        let min_len = graph.min_path_length().expect("graph has a path");
        if min_len > limits.max_frames {
            continue;
        }
        let frames = rng.random_range(min_len..=limits.max_frames);
        if count_paths(&graph, frames) > limits.max_paths {
            continue;
        }
        let n = inv.len();
        let spread = rng.random_range(0.5..3.0);
        let mut streams = OwnedStreams {
            variant,
            left: None,
            center: None,
            right: None,
            joint: None,
        };
        match variant {
            Variant::Ctc | Variant::HmmCenter => {
                streams.center = Some(random_log_posteriors(rng, frames, n, spread));
            }
            Variant::Factored => {
                streams.left = Some(random_log_posteriors(rng, frames, n + 1, spread));
                streams.center = Some(random_log_posteriors(rng, frames, n, spread));
                streams.right = Some(random_log_posteriors(rng, frames, n + 1, spread));
            }
            Variant::Diphone => {
                streams.joint = Some(random_log_posteriors(rng, frames, (n + 1) * n, spread));
            }
        }
        let scales = ScaleSet {
            alpha_left: rng.random_range(0.2..1.5),
            alpha_center: rng.random_range(0.2..1.5),
            alpha_right: rng.random_range(0.2..1.5),
            beta: 0.0,
            eta: rng.random_range(0.0..1.5),
            lambda: 1.0,
        };
        return Instance {
            inv,
            phones,
            graph,
            streams,
            scales,
        };
    }
}

//! Exhaustive word-sequence search as a reference for the beam decoder.

use ndarray::{Array2, ArrayView2};
use rand::seq::IndexedRandom;
use rand::Rng;

use super::instances::random_log_posteriors;
use crate::decoder::{estimate_arpa, load_arpa, NGramLm};
use crate::fullsum::{pair_class, viterbi, FrameScores};
use crate::inventory::PhonemeInventory;
use crate::lexicon::{phonemize, Lexicon};
use crate::priors::{transcript_pair_prior, transcript_prior, Prior, PriorOptions};
use crate::scales::{ScaleSet, TransitionModel};
use crate::topology::{build_ctc_fsa, build_hmm_fsa, SilenceMode};

/// Best word sequence of at most `max_words` words and its score, found by
/// building the alignment graph of every candidate sequence and adding the
/// scaled sentence LM score to its best-path score.
#[allow(clippy::too_many_arguments)]
pub fn exhaustive_decode(
    lp: ArrayView2<'_, f64>,
    diphone: bool,
    inv: &PhonemeInventory,
    lex: &Lexicon,
    lm: &NGramLm,
    scales: &ScaleSet,
    transitions: &TransitionModel,
    silence: SilenceMode,
    prior: Option<&Prior>,
    max_words: usize,
) -> Option<(Vec<String>, f64)> {
    let n = inv.len();
    let ctc = inv.blank().is_some();
    let vocab = lex.words();
    let mut best: Option<(Vec<String>, f64)> = None;
    let mut seqs: Vec<Vec<usize>> = vec![vec![]];
    for _ in 0..max_words {
        seqs = seqs
            .iter()
            .flat_map(|s| {
                (0..vocab.len()).map(move |w| {
                    let mut s = s.clone();
                    s.push(w);
                    s
                })
            })
            .collect();
        for seq in &seqs {
            let words: Vec<String> = seq.iter().map(|&w| vocab[w].clone()).collect();
            let phones = phonemize(&words, lex).expect("lexicon words");
            let g = if ctc {
                build_ctc_fsa(&phones, inv)
            } else {
                build_hmm_fsa(&phones, inv, silence, transitions)
            }
            .expect("valid graph");
            let scores = Array2::from_shape_fn((lp.nrows(), g.num_states()), |(t, s)| {
                let st = g.state(s);
                let col = if diphone {
                    pair_class(st.left, st.center, n)
                } else {
                    st.center
                };
                let p = match prior {
                    Some(p) if scales.beta != 0.0 => scales.beta * p.log_probs[col],
                    _ => 0.0,
                };
                lp[[t, col]] - p
            });
            let eta = if ctc { 1.0 } else { scales.eta };
            let Ok(path) = viterbi(&FrameScores::new(scores).expect("finite scores"), &g, eta)
            else {
                continue;
            };
            let lm_score = if scales.lambda == 0.0 {
                0.0
            } else {
                scales.lambda * lm.sentence_score(&words).expect("LM covers vocabulary")
            };
            let total = path.score + lm_score;
            if best.as_ref().is_none_or(|(_, b)| total > *b) {
                best = Some((words, total));
            }
        }
    }
    best
}

/// A tiny random decoding task.
#[derive(Debug, Clone)]
pub struct DecodeTask {
    pub inv: PhonemeInventory,
    pub lex: Lexicon,
    pub lm: NGramLm,
    pub prior: Prior,
    pub scales: ScaleSet,
    pub transitions: TransitionModel,
    pub silence: SilenceMode,
    pub diphone: bool,
    pub log_posteriors: Array2<f64>,
}

/// Draws a task with up to five words over three base phonemes, distinct
/// pronunciations, a bigram LM estimated from random word strings, and
/// random posteriors of at most `max_frames` frames. `mode` selects
/// 0 = HMM center, 1 = HMM diphone, 2 = CTC.
pub fn random_decode_task<R: Rng>(rng: &mut R, mode: usize, max_frames: usize) -> DecodeTask {
    let base = ["a", "b", "c"];
    let silence_on = mode != 2 && rng.random_bool(0.5);
    let hmm_inv = PhonemeInventory::new(&base, Some("sil")).expect("valid inventory");
    let inv = if mode == 2 { hmm_inv.to_ctc() } else { hmm_inv };
    let n_words = rng.random_range(2..=5);
    let mut entries: Vec<(String, Vec<&str>)> = Vec::new();
    while entries.len() < n_words {
        let len = rng.random_range(1..=3);
        let pron: Vec<&str> = (0..len)
            .map(|_| *base.choose(rng).expect("nonempty"))
            .collect();
        if entries.iter().all(|(_, p)| *p != pron) {
            entries.push((format!("w{}", entries.len()), pron));
        }
    }
    let lex = Lexicon::from_entries(entries, &inv).expect("valid lexicon");
    let vocab: Vec<String> = lex.words().to_vec();
    let transcripts: Vec<Vec<String>> = (0..8)
        .map(|_| {
            let k = rng.random_range(1..=3);
            (0..k)
                .map(|_| vocab.choose(rng).expect("nonempty").clone())
                .collect()
        })
        .collect();
    let order = rng.random_range(1..=2);
    let lm =
        load_arpa(&estimate_arpa(&transcripts, &vocab, order, 0.5)).expect("estimated LM parses");
    let diphone = mode == 1;
    let opts = PriorOptions::default();
    let prior = if diphone {
        transcript_pair_prior(&transcripts, &lex, &inv, &opts)
    } else {
        transcript_prior(&transcripts, &lex, &inv, &opts)
    }
    .expect("transcripts in lexicon");
    let n = inv.len();
    let cols = if diphone { (n + 1) * n } else { n };
    let frames = rng.random_range(2..=max_frames);
    let spread = rng.random_range(0.5..3.0);
    DecodeTask {
        log_posteriors: random_log_posteriors(rng, frames, cols, spread),
        scales: ScaleSet {
            beta: if rng.random_bool(0.5) {
                rng.random_range(0.0..1.0)
            } else {
                0.0
            },
            eta: rng.random_range(0.0..1.5),
            lambda: rng.random_range(0.0..2.0),
            ..ScaleSet::default()
        },
        transitions: TransitionModel {
            p_loop: rng.random_range(0.2..0.8),
            p_sil_loop: rng.random_range(0.2..0.8),
        },
        silence: if silence_on {
            SilenceMode::Optional
        } else {
            SilenceMode::None
        },
        diphone,
        inv,
        lex,
        lm,
        prior,
    }
}

//! Synthetic corpora: Gaussian frames around per-label prototypes, with
//! random durations, optional silences and linear coarticulation toward
//! neighboring segments.

use std::collections::HashSet;

use ndarray::{Array1, Array2};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::inventory::PhonemeInventory;
use crate::lexicon::Lexicon;
use crate::utterance::Utterance;

pub const SILENCE_NAME: &str = "sil";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    /// Base phonemes; the label inventory adds EOW variants and silence.
    pub n_phonemes: usize,
    pub feature_dim: usize,
    /// Standard deviation of prototype coordinates.
    pub prototype_std: f64,
    pub noise_std: f64,
    /// Inclusive range of input frames per phoneme.
    pub duration: [usize; 2],
    pub silence_duration: [usize; 2],
    /// Probability of a silence segment at each utterance edge.
    pub edge_silence_prob: f64,
    /// Probability of a silence segment between two words.
    pub word_silence_prob: f64,
    /// Length of the offset separating an EOW variant's prototype from the
    /// plain phoneme's, relative to `prototype_std`.
    pub eow_offset: f64,
    /// Maximum blending weight toward the neighboring segment's prototype
    /// at segment edges, in [0, 0.5].
    pub coarticulation: f64,
    pub vocab_size: usize,
    pub word_length: [usize; 2],
    pub utterance_words: [usize; 2],
    /// Seconds per input frame.
    pub frame_shift_s: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_phonemes: 8,
            feature_dim: 16,
            prototype_std: 1.0,
            noise_std: 0.3,
            duration: [6, 14],
            silence_duration: [8, 20],
            edge_silence_prob: 1.0,
            word_silence_prob: 0.3,
            eow_offset: 0.5,
            coarticulation: 0.3,
            vocab_size: 20,
            word_length: [2, 4],
            utterance_words: [1, 4],
            frame_shift_s: 0.01,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(format!("synth spec: {m}")));
        let range_ok = |r: [usize; 2]| r[0] >= 1 && r[0] <= r[1];
        if self.n_phonemes == 0 || self.feature_dim == 0 || self.vocab_size == 0 {
            return bad("n_phonemes, feature_dim and vocab_size must be positive");
        }
        if !range_ok(self.duration) || !range_ok(self.silence_duration) {
            return bad("duration ranges need 1 <= min <= max");
        }
        if !range_ok(self.word_length) || !range_ok(self.utterance_words) {
            return bad("word_length and utterance_words need 1 <= min <= max");
        }
        if !(self.noise_std >= 0.0 && self.prototype_std > 0.0 && self.eow_offset >= 0.0) {
            return bad("noise_std, prototype_std and eow_offset must be nonnegative (prototype_std positive)");
        }
        if !(0.0..=0.5).contains(&self.coarticulation) {
            return bad("coarticulation must lie in [0, 0.5]");
        }
        for p in [self.edge_silence_prob, self.word_silence_prob] {
            if !(0.0..=1.0).contains(&p) {
                return bad("probabilities must lie in [0, 1]");
            }
        }
        if self.frame_shift_s.is_nan() || self.frame_shift_s <= 0.0 {
            return bad("frame_shift_s must be positive");
        }
        let distinct: f64 = (self.word_length[0]..=self.word_length[1])
            .map(|l| (self.n_phonemes as f64).powi(l as i32))
            .sum();
        if distinct < self.vocab_size as f64 {
            return bad("vocab_size exceeds the number of distinct pronunciations");
        }
        Ok(())
    }
}

/// A labeled corpus over a fixed inventory and lexicon.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub inv: PhonemeInventory,
    pub lex: Lexicon,
    pub utterances: Vec<Utterance>,
    pub frame_shift_s: f64,
}

impl Corpus {
    pub fn feature_dim(&self) -> Option<usize> {
        self.utterances.first().map(Utterance::feature_dim)
    }

    pub fn transcripts(&self) -> Vec<Vec<String>> {
        self.utterances
            .iter()
            .map(|u| u.transcript.clone())
            .collect()
    }
}

/// The fixed part of a synthetic task: inventory, lexicon and prototypes.
#[derive(Debug, Clone)]
pub struct SynthWorld {
    pub spec: SynthSpec,
    pub seed: u64,
    pub inv: PhonemeInventory,
    pub lex: Lexicon,
    /// One prototype row per inventory label.
    pub prototypes: Array2<f64>,
    /// Smallest distance between two prototypes.
    pub min_distance: f64,
}

impl SynthWorld {
    pub fn new(spec: &SynthSpec, seed: u64) -> Result<Self, TrainError> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let names: Vec<String> = (0..spec.n_phonemes).map(|i| format!("p{i:02}")).collect();
        let inv = PhonemeInventory::new(&names, Some(SILENCE_NAME))
            .map_err(|e| TrainError::Config(e.to_string()))?;
        let b = spec.n_phonemes;
        let d = spec.feature_dim;
        let proto = Normal::new(0.0, spec.prototype_std).expect("valid std");
        let mut prototypes = Array2::zeros((inv.len(), d));
        for i in 0..b {
            let base: Array1<f64> = (0..d).map(|_| proto.sample(&mut rng)).collect();
            let mut dir: Array1<f64> = (0..d).map(|_| proto.sample(&mut rng)).collect();
            let len = dir.dot(&dir).sqrt().max(1e-12);
            dir *= spec.eow_offset * spec.prototype_std * (d as f64).sqrt() / len;
            prototypes.row_mut(i).assign(&base);
            prototypes.row_mut(b + i).assign(&(&base + &dir));
        }
        let sil = inv.silence().expect("silence symbol");
        let sil_proto: Array1<f64> = (0..d).map(|_| proto.sample(&mut rng)).collect();
        prototypes.row_mut(sil).assign(&sil_proto);

        let mut min_distance = f64::INFINITY;
        for i in 0..inv.len() {
            for j in i + 1..inv.len() {
                let diff = &prototypes.row(i) - &prototypes.row(j);
                min_distance = min_distance.min(diff.dot(&diff).sqrt());
            }
        }
        if min_distance <= 2.0 * spec.noise_std {
            log::warn!(
                "closest prototypes are {min_distance:.3} apart, not more than twice the noise std {}",
                spec.noise_std
            );
        }

        let mut seen = HashSet::new();
        let mut entries: Vec<(String, Vec<String>)> = Vec::new();
        while entries.len() < spec.vocab_size {
            let len = rng.random_range(spec.word_length[0]..=spec.word_length[1]);
            let pron: Vec<String> = (0..len)
                .map(|_| names.choose(&mut rng).expect("nonempty").clone())
                .collect();
            if seen.insert(pron.clone()) {
                entries.push((format!("w{:02}", entries.len()), pron));
            }
        }
        let lex =
            Lexicon::from_entries(entries, &inv).map_err(|e| TrainError::Config(e.to_string()))?;
        Ok(Self {
            spec: spec.clone(),
            seed,
            inv,
            lex,
            prototypes,
            min_distance,
        })
    }

    /// Draws `n` utterances from random stream `stream`; the same
    /// (seed, stream, n) always yields the same utterances.
    pub fn sample(&self, n: usize, stream: u64, id_prefix: &str) -> Corpus {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream + 1);
        let utterances = (0..n)
            .map(|i| self.utterance(&mut rng, format!("{id_prefix}{i:05}")))
            .collect();
        Corpus {
            inv: self.inv.clone(),
            lex: self.lex.clone(),
            utterances,
            frame_shift_s: self.spec.frame_shift_s,
        }
    }

    fn utterance<R: Rng>(&self, rng: &mut R, id: String) -> Utterance {
        let spec = &self.spec;
        let sil = self.inv.silence().expect("silence symbol");
        let n_words = rng.random_range(spec.utterance_words[0]..=spec.utterance_words[1]);
        let words: Vec<usize> = (0..n_words)
            .map(|_| rng.random_range(0..self.lex.len()))
            .collect();

        // Segments as (label, frames).
        let mut segs: Vec<(usize, usize)> = Vec::new();
        let sil_len =
            |rng: &mut R| rng.random_range(spec.silence_duration[0]..=spec.silence_duration[1]);
        if rng.random_bool(spec.edge_silence_prob) {
            segs.push((sil, sil_len(rng)));
        }
        for (k, &w) in words.iter().enumerate() {
            if k > 0 && rng.random_bool(spec.word_silence_prob) {
                segs.push((sil, sil_len(rng)));
            }
            for &p in self.lex.pronunciation(w) {
                segs.push((p, rng.random_range(spec.duration[0]..=spec.duration[1])));
            }
        }
        if rng.random_bool(spec.edge_silence_prob) {
            segs.push((sil, sil_len(rng)));
        }

        let total: usize = segs.iter().map(|s| s.1).sum();
        let d = spec.feature_dim;
        let mut features = Array2::zeros((total, d));
        let mut labels = Vec::with_capacity(total);
        let noise = Normal::new(0.0, spec.noise_std.max(0.0)).expect("valid std");
        let mut t = 0;
        for (k, &(label, dur)) in segs.iter().enumerate() {
            let own = self.prototypes.row(label);
            let left = (k > 0).then(|| self.prototypes.row(segs[k - 1].0));
            let right = segs.get(k + 1).map(|s| self.prototypes.row(s.0));
            for i in 0..dur {
                let r = (i as f64 + 0.5) / dur as f64;
                let mut mean = own.to_owned();
                if label != sil && spec.coarticulation > 0.0 {
                    let wl = spec.coarticulation * (1.0 - 2.0 * r).max(0.0);
                    let wr = spec.coarticulation * (2.0 * r - 1.0).max(0.0);
                    if let Some(l) = left {
                        mean.scaled_add(wl, &(&l - &own));
                    }
                    if let Some(rr) = right {
                        mean.scaled_add(wr, &(&rr - &own));
                    }
                }
                let mut row = features.row_mut(t);
                for (x, m) in row.iter_mut().zip(&mean) {
                    *x = if spec.noise_std > 0.0 {
                        m + noise.sample(rng)
                    } else {
                        *m
                    };
                }
                labels.push(label);
                t += 1;
            }
        }
        Utterance {
            id,
            features,
            transcript: words
                .iter()
                .map(|&w| self.lex.word(w).to_string())
                .collect(),
            frame_labels: Some(labels),
        }
    }
}

/// Generates `n_utts` utterances of the task defined by `spec` and `seed`.
pub fn synth_corpus(spec: &SynthSpec, seed: u64, n_utts: usize) -> Result<Corpus, TrainError> {
    Ok(SynthWorld::new(spec, seed)?.sample(n_utts, 0, "utt"))
}

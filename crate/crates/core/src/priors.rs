//! Label priors for decoding: relative frequencies from phonemized
//! transcripts, or an exponentially decaying average of posteriors.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fullsum::pair_class;
use crate::inventory::{Context, PhonemeInventory};
use crate::lexicon::{context_labels, phonemize, Lexicon, LexiconError};

pub const DEFAULT_FLOOR: f64 = 1e-8;
pub const DEFAULT_SILENCE_MASS: f64 = 0.2;

#[derive(Debug, Error, PartialEq)]
pub enum PriorError {
    #[error("corpus has no phonemes to count")]
    EmptyCorpus,
    #[error("dimension mismatch: prior has {expected} entries, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("decay {0} outside [0, 1]")]
    Decay(f64),
    #[error("batch mean is not a probability vector (sum {0})")]
    NotNormalized(f64),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Lexicon(#[from] LexiconError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimationMode {
    Transcript,
    Ema,
}

/// Label space a prior is defined over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorSpace {
    /// Center labels, `N` entries.
    Center,
    /// (left, center) pairs, `(N + 1) * N` entries indexed by `pair_class`.
    Pair,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorOptions {
    /// Mass given to the special (silence or blank) label, which never
    /// appears in transcripts. The remaining labels share `1 - mass`.
    pub silence_mass: f64,
    pub floor: f64,
}

impl Default for PriorOptions {
    fn default() -> Self {
        Self {
            silence_mass: DEFAULT_SILENCE_MASS,
            floor: DEFAULT_FLOOR,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prior {
    pub space: PriorSpace,
    pub mode: EstimationMode,
    /// Natural-log prior per class.
    pub log_probs: Vec<f64>,
}

fn floor_and_normalize(probs: &mut [f64], floor: f64) {
    for p in probs.iter_mut() {
        *p = p.max(floor);
    }
    let total: f64 = probs.iter().sum();
    for p in probs.iter_mut() {
        *p /= total;
    }
}

impl Prior {
    fn from_probs(space: PriorSpace, mode: EstimationMode, probs: &[f64]) -> Self {
        Self {
            space,
            mode,
            log_probs: probs.iter().map(|p| p.ln()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.log_probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_probs.is_empty()
    }

    pub fn probs(&self) -> Vec<f64> {
        self.log_probs.iter().map(|l| l.exp()).collect()
    }

    /// Uniform prior over a label space.
    pub fn uniform(space: PriorSpace, n_labels: usize) -> Self {
        let dim = match space {
            PriorSpace::Center => n_labels,
            PriorSpace::Pair => (n_labels + 1) * n_labels,
        };
        Self::from_probs(
            space,
            EstimationMode::Transcript,
            &vec![1.0 / dim as f64; dim],
        )
    }

    fn class_name(&self, class: usize, inv: &PhonemeInventory) -> String {
        match self.space {
            PriorSpace::Center => inv.name(class).to_string(),
            PriorSpace::Pair => {
                let (l, c) = crate::fullsum::pair_from_class(class, inv.len());
                format!("{}+{}", inv.context_name(l), inv.name(c))
            }
        }
    }

    /// Prior file format: `label<TAB>log_prior` per line; pair labels are
    /// written `left+center`.
    pub fn to_file_string(&self, inv: &PhonemeInventory) -> String {
        let mut out = String::new();
        for (i, lp) in self.log_probs.iter().enumerate() {
            let _ = writeln!(out, "{}\t{:e}", self.class_name(i, inv), lp);
        }
        out
    }

    /// Parses the prior file format. Every label of the space must appear
    /// exactly once; the space is inferred from the label syntax.
    pub fn parse(
        text: &str,
        inv: &PhonemeInventory,
        mode: EstimationMode,
    ) -> Result<Self, PriorError> {
        let n = inv.len();
        let mut entries: Vec<(usize, usize, f64)> = Vec::new();
        let mut space = None;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            if raw.trim().is_empty() {
                continue;
            }
            let err = |msg: String| PriorError::Parse { line, msg };
            let (label, value) = raw
                .split_once('\t')
                .ok_or_else(|| err("expected `label<TAB>log_prior`".into()))?;
            let value: f64 = value
                .trim()
                .parse()
                .map_err(|_| err(format!("bad number `{}`", value.trim())))?;
            let (this_space, class) = match label.split_once('+') {
                Some((l, c)) => {
                    let left = if l == crate::inventory::BOUNDARY {
                        Context::Boundary
                    } else {
                        Context::Label(
                            inv.index_of(l)
                                .ok_or_else(|| err(format!("unknown label `{l}`")))?,
                        )
                    };
                    let c = inv
                        .index_of(c)
                        .ok_or_else(|| err(format!("unknown label `{c}`")))?;
                    (PriorSpace::Pair, pair_class(left, c, n))
                }
                None => (
                    PriorSpace::Center,
                    inv.index_of(label)
                        .ok_or_else(|| err(format!("unknown label `{label}`")))?,
                ),
            };
            if *space.get_or_insert(this_space) != this_space {
                return Err(err("mixed center and pair labels".into()));
            }
            entries.push((line, class, value));
        }
        let space = space.ok_or(PriorError::EmptyCorpus)?;
        let dim = match space {
            PriorSpace::Center => n,
            PriorSpace::Pair => (n + 1) * n,
        };
        let mut log_probs = vec![f64::NAN; dim];
        for (line, class, value) in entries {
            if !log_probs[class].is_nan() {
                return Err(PriorError::Parse {
                    line,
                    msg: "duplicate label".into(),
                });
            }
            log_probs[class] = value;
        }
        if log_probs.iter().any(|v| v.is_nan()) {
            return Err(PriorError::Dimension {
                expected: dim,
                got: log_probs.iter().filter(|v| !v.is_nan()).count(),
            });
        }
        Ok(Self {
            space,
            mode,
            log_probs,
        })
    }
}

fn special_label(inv: &PhonemeInventory) -> Option<usize> {
    inv.silence().or_else(|| inv.blank())
}

fn finish_counts(
    mut counts: Vec<f64>,
    special_class: Option<usize>,
    space: PriorSpace,
    opts: &PriorOptions,
) -> Result<Prior, PriorError> {
    let total: f64 = counts.iter().sum();
    if total == 0.0 {
        return Err(PriorError::EmptyCorpus);
    }
    let speech_mass = if special_class.is_some() {
        1.0 - opts.silence_mass
    } else {
        1.0
    };
    for c in counts.iter_mut() {
        *c = *c / total * speech_mass;
    }
    if let Some(s) = special_class {
        counts[s] = opts.silence_mass;
    }
    floor_and_normalize(&mut counts, opts.floor);
    Ok(Prior::from_probs(
        space,
        EstimationMode::Transcript,
        &counts,
    ))
}

/// Relative label frequencies over the phonemized transcripts, with the
/// special label's mass injected and every entry floored.
pub fn transcript_prior<S: AsRef<str>>(
    transcripts: &[Vec<S>],
    lex: &Lexicon,
    inv: &PhonemeInventory,
    opts: &PriorOptions,
) -> Result<Prior, PriorError> {
    let mut counts = vec![0.0; inv.len()];
    for words in transcripts {
        for l in phonemize(words, lex)? {
            counts[l] += 1.0;
        }
    }
    finish_counts(counts, special_label(inv), PriorSpace::Center, opts)
}

/// Adjacent (left, center) pair frequencies with the same flooring; the
/// utterance-initial phoneme pairs with the boundary sentinel.
pub fn transcript_pair_prior<S: AsRef<str>>(
    transcripts: &[Vec<S>],
    lex: &Lexicon,
    inv: &PhonemeInventory,
    opts: &PriorOptions,
) -> Result<Prior, PriorError> {
    let n = inv.len();
    let mut counts = vec![0.0; (n + 1) * n];
    for words in transcripts {
        let phones = phonemize(words, lex)?;
        for j in 0..phones.len() {
            let (left, center, _) = context_labels(&phones, j, inv)?;
            counts[pair_class(left, center, n)] += 1.0;
        }
    }
    let special = special_label(inv).map(|s| pair_class(Context::Boundary, s, n));
    finish_counts(counts, special, PriorSpace::Pair, opts)
}

/// `decay * old + (1 - decay) * batch_mean`, floored and renormalized.
pub fn ema_prior_update(
    prior: &Prior,
    batch_mean: &[f64],
    decay: f64,
    floor: f64,
) -> Result<Prior, PriorError> {
    if !(0.0..=1.0).contains(&decay) {
        return Err(PriorError::Decay(decay));
    }
    if batch_mean.len() != prior.len() {
        return Err(PriorError::Dimension {
            expected: prior.len(),
            got: batch_mean.len(),
        });
    }
    let sum: f64 = batch_mean.iter().sum();
    if (sum - 1.0).abs() > 1e-6 || batch_mean.iter().any(|&p| p < 0.0) {
        return Err(PriorError::NotNormalized(sum));
    }
    let mut probs: Vec<f64> = prior
        .probs()
        .iter()
        .zip(batch_mean)
        .map(|(&old, &new)| decay * old + (1.0 - decay) * new)
        .collect();
    floor_and_normalize(&mut probs, floor);
    Ok(Prior::from_probs(prior.space, EstimationMode::Ema, &probs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lexicon::parse_lexicon;

    fn setup() -> (PhonemeInventory, Lexicon) {
        let inv = PhonemeInventory::new(&["k", "ae", "t"], None).unwrap();
        let lex = parse_lexicon("kat\tk ae t\nk\tk\n", &inv).unwrap();
        (inv, lex)
    }

    #[test]
    fn counts_relative_frequencies() {
        let (inv, lex) = setup();
        // k ae t#eow + k#eow: k and k#eow are distinct labels.
        let opts = PriorOptions {
            silence_mass: 0.0,
            floor: 0.0,
        };
        let p = transcript_prior(&[vec!["kat"], vec!["k"]], &lex, &inv, &opts).unwrap();
        let probs = p.probs();
        assert!((probs[0] - 0.25).abs() < 1e-12);
        assert!((probs[1] - 0.25).abs() < 1e-12);
        assert!((probs[5] - 0.25).abs() < 1e-12);
        assert!((probs[3] - 0.25).abs() < 1e-12);
        assert_eq!(probs[2], 0.0);
    }

    #[test]
    fn counts_match_spec_multiset() {
        let inv = PhonemeInventory::new(&["k", "ae", "t"], None).unwrap();
        let lex = parse_lexicon("kkat\tk k ae t\n", &inv).unwrap();
        let opts = PriorOptions {
            silence_mass: 0.0,
            floor: 0.0,
        };
        let p = transcript_prior(&[vec!["kkat"]], &lex, &inv, &opts)
            .unwrap()
            .probs();
        assert!((p[0] - 0.5).abs() < 1e-12);
        assert!((p[1] - 0.25).abs() < 1e-12);
        assert!((p[5] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn floor_applies_to_unseen_labels() {
        let (inv, lex) = setup();
        let opts = PriorOptions::default();
        let p = transcript_prior(&[vec!["k"]], &lex, &inv, &opts).unwrap();
        let probs = p.probs();
        let total = 1.0 + (inv.len() - 1) as f64 * DEFAULT_FLOOR;
        assert!((probs[3] - 1.0 / total).abs() < 1e-15);
        assert!((probs[0] - DEFAULT_FLOOR / total).abs() < 1e-20);
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.log_probs.iter().all(|l| l.is_finite()));
    }

    #[test]
    fn silence_mass_is_injected() {
        let inv = PhonemeInventory::new(&["k"], Some("sil")).unwrap();
        let lex = parse_lexicon("k\tk\n", &inv).unwrap();
        let p = transcript_prior(&[vec!["k"]], &lex, &inv, &PriorOptions::default())
            .unwrap()
            .probs();
        let sil = inv.silence().unwrap();
        assert!((p[sil] - 0.2).abs() < 1e-7);
        assert!((p[1] - 0.8).abs() < 1e-7);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let (inv, lex) = setup();
        let none: Vec<Vec<&str>> = vec![];
        assert_eq!(
            transcript_prior(&none, &lex, &inv, &PriorOptions::default()).unwrap_err(),
            PriorError::EmptyCorpus
        );
    }

    #[test]
    fn pair_prior_counts_adjacent_pairs() {
        let (inv, lex) = setup();
        let opts = PriorOptions {
            silence_mass: 0.0,
            floor: 0.0,
        };
        let p = transcript_pair_prior(&[vec!["kat"]], &lex, &inv, &opts).unwrap();
        let n = inv.len();
        let probs = p.probs();
        assert_eq!(probs.len(), (n + 1) * n);
        let third = 1.0 / 3.0;
        assert!((probs[pair_class(Context::Boundary, 0, n)] - third).abs() < 1e-12);
        assert!((probs[pair_class(Context::Label(0), 1, n)] - third).abs() < 1e-12);
        assert!((probs[pair_class(Context::Label(1), 5, n)] - third).abs() < 1e-12);
    }

    #[test]
    fn ema_identity_replacement_and_fixed_point() {
        let p = Prior::uniform(PriorSpace::Center, 4);
        let batch = [0.7, 0.1, 0.1, 0.1];
        let same = ema_prior_update(&p, &batch, 1.0, 0.0).unwrap();
        for (a, b) in same.log_probs.iter().zip(&p.log_probs) {
            assert!((a - b).abs() < 1e-15);
        }
        let replaced = ema_prior_update(&p, &batch, 0.0, 0.0).unwrap().probs();
        for (a, b) in replaced.iter().zip(&batch) {
            assert!((a - b).abs() < 1e-15);
        }
        let mut cur = p.clone();
        let mut prev_gap = f64::INFINITY;
        for _ in 0..30 {
            cur = ema_prior_update(&cur, &batch, 0.5, 0.0).unwrap();
            let gap = (cur.probs()[0] - 0.7).abs();
            assert!(gap <= prev_gap * 0.5 + 1e-15);
            prev_gap = gap;
        }
        assert!(prev_gap < 1e-8);
    }

    #[test]
    fn ema_rejects_bad_input() {
        let p = Prior::uniform(PriorSpace::Center, 2);
        assert_eq!(
            ema_prior_update(&p, &[0.5, 0.5], 1.5, 0.0).unwrap_err(),
            PriorError::Decay(1.5)
        );
        assert!(matches!(
            ema_prior_update(&p, &[1.0], 0.5, 0.0),
            Err(PriorError::Dimension { .. })
        ));
        assert!(matches!(
            ema_prior_update(&p, &[0.9, 0.9], 0.5, 0.0),
            Err(PriorError::NotNormalized(_))
        ));
    }

    #[test]
    fn file_round_trip() {
        let inv = PhonemeInventory::new(&["k", "ae"], Some("sil")).unwrap();
        let lex = parse_lexicon("kae\tk ae\n", &inv).unwrap();
        let opts = PriorOptions::default();
        for p in [
            transcript_prior(&[vec!["kae"]], &lex, &inv, &opts).unwrap(),
            transcript_pair_prior(&[vec!["kae"]], &lex, &inv, &opts).unwrap(),
        ] {
            let text = p.to_file_string(&inv);
            let back = Prior::parse(&text, &inv, EstimationMode::Transcript).unwrap();
            assert_eq!(back.space, p.space);
            for (a, b) in back.log_probs.iter().zip(&p.log_probs) {
                assert!((a - b).abs() <= 1e-15 * a.abs().max(1.0));
            }
        }
        assert!(matches!(
            Prior::parse("k\t-1\nzz\t-2\n", &inv, EstimationMode::Transcript),
            Err(PriorError::Parse { line: 2, .. })
        ));
    }
}

//! Evaluation of trained encoders: decoding with WER and RTF, forced
//! alignment accuracy against generating labels, and head entropies.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::encoder::{Encoder, Head};
use super::synth::Corpus;
use super::{streams_for, training_graph, LossVariant, TrainError};
use crate::decoder::{
    force_align, measure_rtf, Acoustic, DecodeError, Decoder, DecoderConfig, NGramLm,
};
use crate::par;
use crate::priors::Prior;
use crate::scales::{ScaleSet, TransitionModel};
use crate::topology::SilenceMode;
use crate::wer::{wer, ErrorCounts};

/// Which output feeds the search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DecodeMode {
    /// Center head alone (monophone HMM or CTC).
    #[default]
    Center,
    /// Joint (left, center) head with a pair prior.
    Diphone,
}

#[derive(Debug, Clone, Serialize)]
pub struct UtteranceReport {
    pub id: String,
    pub reference: Vec<String>,
    pub hypothesis: Vec<String>,
    pub errors: ErrorCounts,
    pub score: Option<f64>,
    pub ctm: String,
    pub wall_seconds: f64,
    pub audio_seconds: f64,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub mode: DecodeMode,
    pub scales: ScaleSet,
    pub counts: ErrorCounts,
    /// Word error rate in percent.
    pub wer: f64,
    pub wall_seconds: f64,
    pub audio_seconds: f64,
    pub rtf: f64,
    pub failures: usize,
    pub utterances: Vec<UtteranceReport>,
}

/// Decodes every utterance of `corpus`. Each utterance's wall time covers
/// the forward pass of the heads in use plus the search.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    enc: &Encoder,
    variant: LossVariant,
    corpus: &Corpus,
    lm: &NGramLm,
    prior: Option<&Prior>,
    scales: &ScaleSet,
    transitions: &TransitionModel,
    config: &DecoderConfig,
    mode: DecodeMode,
) -> Result<EvalReport, TrainError> {
    let inv = variant.inventory(&corpus.inv);
    let head = match mode {
        DecodeMode::Center => Head::Center,
        DecodeMode::Diphone => Head::Joint,
    };
    if enc.heads[head.index()].is_none() {
        return Err(TrainError::Config(format!(
            "model has no {head:?} head for {mode:?} decoding"
        )));
    }
    let decoder = Decoder::new(&inv, &corpus.lex, lm)?
        .with_scales(*scales)
        .with_transitions(*transitions)
        .with_config(*config)
        .with_prior(prior);
    let mut mask = [false; 4];
    mask[head.index()] = true;
    let results = par::map(
        &corpus.utterances,
        |u| -> Result<UtteranceReport, TrainError> {
            let started = Instant::now();
            let out = enc.forward_heads(u.features.view(), mask)?.outputs;
            let lp = out.get(head).expect("head computed");
            let ac = match mode {
                DecodeMode::Center => Acoustic::Center(lp.view()),
                DecodeMode::Diphone => Acoustic::Diphone(lp.view()),
            };
            let decoded = decoder.decode(&ac);
            let wall_seconds = started.elapsed().as_secs_f64();
            let audio_seconds = u.num_frames() as f64 * corpus.frame_shift_s;
            let (hypothesis, score, ctm, failure) = match decoded {
                Ok(r) => {
                    let ctm = r.ctm(&u.id);
                    (r.words, Some(r.score), ctm, None)
                }
                Err(e @ DecodeError::NoSurvivor { .. }) => {
                    (Vec::new(), None, String::new(), Some(e.to_string()))
                }
                Err(e) => return Err(e.into()),
            };
            Ok(UtteranceReport {
                id: u.id.clone(),
                errors: wer(&u.transcript, &hypothesis),
                reference: u.transcript.clone(),
                hypothesis,
                score,
                ctm,
                wall_seconds,
                audio_seconds,
                failure,
            })
        },
    )
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    let counts: ErrorCounts = results.iter().map(|r| r.errors).sum();
    let wall_seconds: f64 = results.iter().map(|r| r.wall_seconds).sum();
    let audio_seconds: f64 = results.iter().map(|r| r.audio_seconds).sum();
    Ok(EvalReport {
        mode,
        scales: *scales,
        wer: counts.wer(),
        counts,
        wall_seconds,
        audio_seconds,
        rtf: measure_rtf(wall_seconds, audio_seconds)?,
        failures: results.iter().filter(|r| r.failure.is_some()).count(),
        utterances: results,
    })
}

/// Generating label of each output frame: the most frequent input-frame
/// label in its stride block (earliest on ties).
pub fn output_frame_labels(labels: &[usize], stride: usize) -> Vec<usize> {
    labels
        .chunks(stride)
        .map(|block| {
            let mut best = (0, block[0]);
            for &l in block {
                let c = block.iter().filter(|&&x| x == l).count();
                if c > best.0 {
                    best = (c, l);
                }
            }
            best.1
        })
        .collect()
}

/// Fraction of non-silence output frames whose forced-alignment label
/// equals the generating label. HMM variants only.
pub fn alignment_accuracy(
    enc: &Encoder,
    variant: LossVariant,
    corpus: &Corpus,
    scales: &ScaleSet,
    transitions: &TransitionModel,
    silence: SilenceMode,
) -> Result<f64, TrainError> {
    if variant == LossVariant::Ctc {
        return Err(TrainError::Config(
            "alignment accuracy needs an HMM variant".into(),
        ));
    }
    let sil = corpus.inv.silence();
    let per_utt = par::map(
        &corpus.utterances,
        |u| -> Result<(usize, usize), TrainError> {
            let Some(truth) = &u.frame_labels else {
                return Err(TrainError::Corpus(format!(
                    "utterance {} has no frame labels",
                    u.id
                )));
            };
            let truth = output_frame_labels(truth, enc.config.stride);
            let g = training_graph(variant, &u.transcript, corpus, transitions, silence)?;
            let out = enc.encode(u.features.view())?;
            let al = force_align(&streams_for(variant, &out), &g, scales)?;
            let mut hit = 0;
            let mut total = 0;
            for (&a, &t) in al.labels.iter().zip(&truth) {
                if Some(t) != sil {
                    total += 1;
                    hit += usize::from(a == t);
                }
            }
            Ok((hit, total))
        },
    );
    let (mut hit, mut total) = (0, 0);
    for r in per_utt {
        let (h, t) = r?;
        hit += h;
        total += t;
    }
    Ok(if total == 0 {
        0.0
    } else {
        hit as f64 / total as f64
    })
}

/// Mean per-frame entropy (nats) of one head's posteriors.
pub fn mean_head_entropy(enc: &Encoder, corpus: &Corpus, head: Head) -> Result<f64, TrainError> {
    let sums = par::map(
        &corpus.utterances,
        |u| -> Result<(f64, usize), TrainError> {
            let out = enc.encode(u.features.view())?;
            let lp = out
                .get(head)
                .ok_or_else(|| TrainError::Config(format!("model has no {head:?} head")))?;
            let h: f64 = lp
                .rows()
                .into_iter()
                .map(|r| {
                    -r.iter()
                        .map(|&l| {
                            if l == f64::NEG_INFINITY {
                                0.0
                            } else {
                                l.exp() * l
                            }
                        })
                        .sum::<f64>()
                })
                .sum();
            Ok((h, lp.nrows()))
        },
    );
    let (mut h, mut n) = (0.0, 0);
    for s in sums {
        let (a, b) = s?;
        h += a;
        n += b;
    }
    Ok(h / n.max(1) as f64)
}

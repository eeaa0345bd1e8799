//! Time-synchronous Viterbi beam search over a lexical prefix tree with a
//! backoff n-gram LM, forced alignment, and real-time-factor measurement.

pub mod align;
pub mod arpa;
mod search;
pub mod tree;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use align::{force_align, AlignedSegment, Alignment};
pub use arpa::{estimate_arpa, load_arpa, LmError, NGramLm};
pub use search::{Acoustic, DecodeResult, Decoder, WordSegment};
pub use tree::{build_prefix_tree, PrefixTree};

use crate::topology::SilenceMode;

/// Input frame shift of the feature stream.
pub const INPUT_FRAME_SHIFT_S: f64 = 0.010;
/// Output frame shift after four-fold downsampling.
pub const OUTPUT_FRAME_SHIFT_S: f64 = 0.040;

#[derive(Debug, Error, PartialEq)]
pub enum DecodeError {
    #[error("lexicon is empty")]
    EmptyLexicon,
    #[error("posterior stream has no frames")]
    EmptyInput,
    #[error("posterior stream has {got} columns, expected {expected}")]
    Shape { expected: usize, got: usize },
    #[error("prior has {got} entries, expected {expected}")]
    PriorShape { expected: usize, got: usize },
    #[error("prior scale is nonzero but no prior was given")]
    MissingPrior,
    #[error("silence requested but the inventory has no silence symbol")]
    NoSilence,
    #[error("no hypothesis reached a final state after {frames} frames")]
    NoSurvivor { frames: usize },
    #[error("audio duration is zero")]
    ZeroDuration,
    #[error("invalid decoder setting: {0}")]
    Config(String),
    #[error(transparent)]
    Lm(#[from] LmError),
}

/// Beam and search-space settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoderConfig {
    /// Hypotheses scoring more than this many nats below the frame best are pruned.
    pub beam_threshold: f64,
    /// Histogram pruning limit per frame.
    pub max_hyps: usize,
    /// Optional cap on the number of words in a hypothesis.
    pub max_words: Option<usize>,
    /// Silence between words and at the utterance edges (HMM only).
    pub silence: SilenceMode,
    /// Seconds per posterior frame, for timing and CTM output.
    pub frame_shift_s: f64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            beam_threshold: 14.0,
            max_hyps: 1024,
            max_words: None,
            silence: SilenceMode::Optional,
            frame_shift_s: OUTPUT_FRAME_SHIFT_S,
        }
    }
}

impl DecoderConfig {
    /// No pruning at all.
    pub fn unpruned() -> Self {
        Self {
            beam_threshold: f64::INFINITY,
            max_hyps: usize::MAX,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), DecodeError> {
        if self.beam_threshold.is_nan() || self.beam_threshold < 0.0 {
            return Err(DecodeError::Config(format!(
                "beam_threshold {}",
                self.beam_threshold
            )));
        }
        if self.max_hyps == 0 {
            return Err(DecodeError::Config("max_hyps must be positive".into()));
        }
        if !(self.frame_shift_s.is_finite() && self.frame_shift_s > 0.0) {
            return Err(DecodeError::Config(format!(
                "frame_shift_s {}",
                self.frame_shift_s
            )));
        }
        Ok(())
    }
}

/// Real time factor: wall-clock seconds per second of audio.
pub fn measure_rtf(wall_seconds: f64, audio_seconds: f64) -> Result<f64, DecodeError> {
    if audio_seconds <= 0.0 {
        return Err(DecodeError::ZeroDuration);
    }
    Ok(wall_seconds / audio_seconds)
}

/// Corpus-level RTF: total wall time over total audio.
pub fn corpus_rtf<'a>(
    results: impl IntoIterator<Item = &'a DecodeResult>,
) -> Result<f64, DecodeError> {
    let (wall, audio) = results.into_iter().fold((0.0, 0.0), |(w, a), r| {
        (w + r.wall_seconds, a + r.audio_seconds)
    });
    measure_rtf(wall, audio)
}

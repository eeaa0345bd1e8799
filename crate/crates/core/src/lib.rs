//! Time-synchronous full-sum sequence training for ASR label topologies.
//!
//! The crate provides CTC, posterior-HMM, factored left/center/right and
//! diphone full-sum losses over utterance alignment graphs, label prior
//! estimation, a lexical prefix-tree Viterbi decoder with an ARPA n-gram
//! LM, and a small from-scratch training harness on synthetic corpora.

pub mod decoder;
pub mod fullsum;
pub mod inventory;
pub mod lexicon;
pub mod par;
pub mod priors;
pub mod scales;
pub mod topology;
pub mod trainer;
pub mod utterance;
pub mod verify;
pub mod wer;

pub use inventory::{Context, PhonemeInventory};
pub use lexicon::{context_labels, parse_lexicon, phonemize, Lexicon};
pub use scales::{ScaleSet, TransitionModel};
pub use utterance::Utterance;

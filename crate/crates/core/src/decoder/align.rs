//! Viterbi forced alignment against an utterance graph.

use serde::Serialize;

use crate::fullsum::{assemble_scores, viterbi, FullSumError, Streams};
use crate::scales::ScaleSet;
use crate::topology::{AlignmentGraph, TopologyKind};

/// A run of consecutive frames spent in one graph state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct AlignedSegment {
    pub state: usize,
    pub label: usize,
    /// Phoneme position, `None` for silence and blank.
    pub position: Option<usize>,
    pub start_frame: usize,
    pub end_frame: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Alignment {
    pub score: f64,
    pub states: Vec<usize>,
    /// Label per frame.
    pub labels: Vec<usize>,
    pub segments: Vec<AlignedSegment>,
}

/// Best path through `g` under the training frame scores (transitions
/// scaled by eta, unit scale for CTC). Ties stay in the current state.
pub fn force_align(
    streams: &Streams<'_>,
    g: &AlignmentGraph,
    scales: &ScaleSet,
) -> Result<Alignment, FullSumError> {
    let scores = assemble_scores(streams, g, scales)?;
    let eta = if g.kind() == TopologyKind::Ctc {
        1.0
    } else {
        scales.eta
    };
    let best = viterbi(&scores, g, eta)?;
    let labels = best.states.iter().map(|&s| g.state(s).center).collect();
    let mut segments: Vec<AlignedSegment> = Vec::new();
    for (t, &s) in best.states.iter().enumerate() {
        match segments.last_mut() {
            Some(seg) if seg.state == s => seg.end_frame = t + 1,
            _ => segments.push(AlignedSegment {
                state: s,
                label: g.state(s).center,
                position: g.state(s).position,
                start_frame: t,
                end_frame: t + 1,
            }),
        }
    }
    Ok(Alignment {
        score: best.score,
        states: best.states,
        labels,
        segments,
    })
}

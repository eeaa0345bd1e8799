//! Utterance-specific alignment graphs for the HMM and CTC label
//! topologies, plus exhaustive path enumeration for small instances.

use std::collections::VecDeque;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::inventory::{Context, PhonemeInventory};
use crate::lexicon::context_labels;
use crate::scales::TransitionModel;

/// Upper bound on the number of paths `enumerate_paths` will produce.
pub const MAX_ENUMERATED_PATHS: usize = 1_000_000;

#[derive(Debug, Error, PartialEq)]
pub enum TopologyError {
    #[error("phoneme sequence is empty")]
    EmptySequence,
    #[error("silence insertion requested but the inventory has no silence symbol")]
    NoSilenceSymbol,
    #[error("CTC topology requires an inventory with a blank symbol")]
    NoBlankSymbol,
    #[error("label {0} is not a phoneme of the inventory")]
    NotAPhoneme(usize),
    #[error("path enumeration would produce {count} paths (limit {limit})")]
    TooManyPaths { count: f64, limit: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    Hmm,
    Ctc,
}

/// Whether optional (skippable) silence states are inserted at the
/// utterance edges and between words.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SilenceMode {
    None,
    #[default]
    Optional,
}

/// Emitting state with its factor labels. `position` is the index into the
/// phoneme sequence, `None` for silence and blank states.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GraphState {
    pub left: Context,
    pub center: usize,
    pub right: Context,
    pub position: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphArc {
    pub src: usize,
    pub dst: usize,
    /// Unscaled log transition probability (0 for CTC).
    pub log_weight: f64,
}

/// Lattice of emitting states. A path of length `T` is a sequence of
/// states starting in an initial state, following `T - 1` arcs and ending
/// in a final state; it has no separate entry or exit weight.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentGraph {
    kind: TopologyKind,
    n_labels: usize,
    states: Vec<GraphState>,
    arcs: Vec<GraphArc>,
    initial: Vec<usize>,
    is_initial: Vec<bool>,
    is_final: Vec<bool>,
    incoming: Vec<Vec<usize>>,
    outgoing: Vec<Vec<usize>>,
}

impl AlignmentGraph {
    fn from_parts(
        kind: TopologyKind,
        n_labels: usize,
        states: Vec<GraphState>,
        mut arcs: Vec<GraphArc>,
        initial: Vec<usize>,
        finals: Vec<usize>,
    ) -> Self {
        let n = states.len();
        arcs.sort_by_key(|a| (a.src, a.dst));
        let mut incoming = vec![Vec::new(); n];
        let mut outgoing = vec![Vec::new(); n];
        for (i, a) in arcs.iter().enumerate() {
            outgoing[a.src].push(i);
            incoming[a.dst].push(i);
        }
        for inc in &mut incoming {
            inc.sort_by_key(|&i| arcs[i].src);
        }
        let mut is_initial = vec![false; n];
        for &s in &initial {
            is_initial[s] = true;
        }
        let mut is_final = vec![false; n];
        for &s in &finals {
            is_final[s] = true;
        }
        let mut initial = initial;
        initial.sort_unstable();
        Self {
            kind,
            n_labels,
            states,
            arcs,
            initial,
            is_initial,
            is_final,
            incoming,
            outgoing,
        }
    }

    pub fn kind(&self) -> TopologyKind {
        self.kind
    }

    /// Size of the label inventory the graph was built against.
    pub fn n_labels(&self) -> usize {
        self.n_labels
    }

    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn states(&self) -> &[GraphState] {
        &self.states
    }

    pub fn state(&self, s: usize) -> &GraphState {
        &self.states[s]
    }

    pub fn arcs(&self) -> &[GraphArc] {
        &self.arcs
    }

    pub fn initial_states(&self) -> &[usize] {
        &self.initial
    }

    pub fn is_initial(&self, s: usize) -> bool {
        self.is_initial[s]
    }

    pub fn is_final(&self, s: usize) -> bool {
        self.is_final[s]
    }

    pub fn final_states(&self) -> impl Iterator<Item = usize> + Clone + '_ {
        (0..self.states.len()).filter(|&s| self.is_final[s])
    }

    /// Arcs entering `s`, ordered by source state.
    pub fn incoming(&self, s: usize) -> impl Iterator<Item = &GraphArc> + '_ {
        self.incoming[s].iter().map(|&i| &self.arcs[i])
    }

    /// Arcs leaving `s`, ordered by destination state.
    pub fn outgoing(&self, s: usize) -> impl Iterator<Item = &GraphArc> + '_ {
        self.outgoing[s].iter().map(|&i| &self.arcs[i])
    }

    /// Log weight of the arc `src -> dst`, if present.
    pub fn arc_weight(&self, src: usize, dst: usize) -> Option<f64> {
        self.outgoing(src)
            .find(|a| a.dst == dst)
            .map(|a| a.log_weight)
    }

    /// Fewest frames any complete path needs.
    pub fn min_path_length(&self) -> Option<usize> {
        let n = self.states.len();
        let mut dist = vec![usize::MAX; n];
        let mut queue = VecDeque::new();
        for &s in &self.initial {
            dist[s] = 1;
            queue.push_back(s);
        }
        while let Some(s) = queue.pop_front() {
            for a in self.outgoing(s) {
                if dist[a.dst] == usize::MAX {
                    dist[a.dst] = dist[s] + 1;
                    queue.push_back(a.dst);
                }
            }
        }
        self.final_states()
            .map(|s| dist[s])
            .filter(|&d| d != usize::MAX)
            .min()
    }

    /// Every state reachable from an initial state and co-reachable from a
    /// final state.
    pub fn is_trim(&self) -> bool {
        let n = self.states.len();
        let mut fwd = vec![false; n];
        let mut stack: Vec<usize> = self.initial.clone();
        while let Some(s) = stack.pop() {
            if std::mem::replace(&mut fwd[s], true) {
                continue;
            }
            stack.extend(self.outgoing(s).map(|a| a.dst));
        }
        let mut bwd = vec![false; n];
        let mut stack: Vec<usize> = self.final_states().collect();
        while let Some(s) = stack.pop() {
            if std::mem::replace(&mut bwd[s], true) {
                continue;
            }
            stack.extend(self.incoming(s).map(|a| a.src));
        }
        fwd.iter().zip(&bwd).all(|(&f, &b)| f && b)
    }

    /// Debug dump: `state id left center right pos` lines followed by
    /// `arc src dst logw` lines.
    pub fn dump(&self, inv: &PhonemeInventory) -> String {
        let mut out = String::new();
        for (i, s) in self.states.iter().enumerate() {
            let pos = s
                .position
                .map_or_else(|| "-".to_string(), |p| p.to_string());
            let _ = writeln!(
                out,
                "state {i} {} {} {} {pos}",
                inv.context_name(s.left),
                inv.name(s.center),
                inv.context_name(s.right),
            );
        }
        for a in &self.arcs {
            let _ = writeln!(out, "arc {} {} {}", a.src, a.dst, a.log_weight);
        }
        out
    }
}

fn check_phonemes(phones: &[usize], inv: &PhonemeInventory) -> Result<(), TopologyError> {
    if phones.is_empty() {
        return Err(TopologyError::EmptySequence);
    }
    for &p in phones {
        if p >= inv.len() || inv.eow_variant(p).is_none() {
            return Err(TopologyError::NotAPhoneme(p));
        }
    }
    Ok(())
}

/// HMM topology with one single-state phoneme per position. Each state has
/// a self-loop and forward arcs to the next position; with
/// [`SilenceMode::Optional`], skippable silence states sit at both edges
/// and after every non-final word end.
pub fn build_hmm_fsa(
    phones: &[usize],
    inv: &PhonemeInventory,
    silence: SilenceMode,
    transitions: &TransitionModel,
) -> Result<AlignmentGraph, TopologyError> {
    check_phonemes(phones, inv)?;
    let sil = match silence {
        SilenceMode::None => None,
        SilenceMode::Optional => Some(inv.silence().ok_or(TopologyError::NoSilenceSymbol)?),
    };
    let n = phones.len();
    let sil_state = |sil: usize| GraphState {
        left: Context::Boundary,
        center: sil,
        right: Context::Boundary,
        position: None,
    };

    let mut states = Vec::with_capacity(2 * n + 2);
    let mut successors: Vec<Vec<usize>> = Vec::with_capacity(2 * n + 2);
    let mut initial = Vec::new();
    let mut finals = Vec::new();

    if let Some(sil) = sil {
        states.push(sil_state(sil));
        successors.push(Vec::new());
        initial.push(0);
    }
    let mut prev_exits: Vec<usize> = initial.clone();
    for (j, &p) in phones.iter().enumerate() {
        let (left, center, right) = context_labels(phones, j, inv).expect("position in range");
        let id = states.len();
        states.push(GraphState {
            left,
            center,
            right,
            position: Some(j),
        });
        successors.push(Vec::new());
        for &e in &prev_exits {
            successors[e].push(id);
        }
        if j == 0 {
            initial.push(id);
        }
        prev_exits = vec![id];
        if let (Some(sil), true) = (sil, inv.is_eow(p) && j + 1 < n) {
            let sid = states.len();
            states.push(sil_state(sil));
            successors.push(Vec::new());
            successors[id].push(sid);
            prev_exits.push(sid);
        }
    }
    let last = prev_exits[0];
    finals.push(last);
    if let Some(sil) = sil {
        let sid = states.len();
        states.push(sil_state(sil));
        successors.push(Vec::new());
        successors[last].push(sid);
        finals.push(sid);
    }

    let mut arcs = Vec::new();
    for (s, succ) in successors.iter().enumerate() {
        let p_loop = if Some(states[s].center) == sil {
            transitions.p_sil_loop
        } else {
            transitions.p_loop
        };
        arcs.push(GraphArc {
            src: s,
            dst: s,
            log_weight: p_loop.ln(),
        });
        let fwd = ((1.0 - p_loop) / succ.len().max(1) as f64).ln();
        for &d in succ {
            arcs.push(GraphArc {
                src: s,
                dst: d,
                log_weight: fwd,
            });
        }
    }
    Ok(AlignmentGraph::from_parts(
        TopologyKind::Hmm,
        inv.len(),
        states,
        arcs,
        initial,
        finals,
    ))
}

/// Standard CTC topology over `blank, p1, blank, p2, ..., pn, blank`. All
/// states loop; a blank may be skipped unless the labels on both sides of
/// it are identical. Arc weights are zero.
pub fn build_ctc_fsa(
    phones: &[usize],
    inv: &PhonemeInventory,
) -> Result<AlignmentGraph, TopologyError> {
    check_phonemes(phones, inv)?;
    let blank = inv.blank().ok_or(TopologyError::NoBlankSymbol)?;
    let n = phones.len();
    let blank_state = GraphState {
        left: Context::Boundary,
        center: blank,
        right: Context::Boundary,
        position: None,
    };
    let mut states = Vec::with_capacity(2 * n + 1);
    states.push(blank_state);
    for j in 0..n {
        let (left, center, right) = context_labels(phones, j, inv).expect("position in range");
        states.push(GraphState {
            left,
            center,
            right,
            position: Some(j),
        });
        states.push(blank_state);
    }
    let arc = |src, dst| GraphArc {
        src,
        dst,
        log_weight: 0.0,
    };
    let mut arcs = Vec::new();
    for s in 0..states.len() {
        arcs.push(arc(s, s));
        if s + 1 < states.len() {
            arcs.push(arc(s, s + 1));
        }
    }
    for j in 0..n.saturating_sub(1) {
        if phones[j] != phones[j + 1] {
            arcs.push(arc(2 * j + 1, 2 * j + 3));
        }
    }
    let last = states.len() - 1;
    Ok(AlignmentGraph::from_parts(
        TopologyKind::Ctc,
        inv.len(),
        states,
        arcs,
        vec![0, 1],
        vec![last - 1, last],
    ))
}

/// All complete paths of a fixed length.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PathSet {
    pub paths: Vec<Vec<usize>>,
}

impl PathSet {
    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &[usize]> {
        self.paths.iter().map(Vec::as_slice)
    }
}

/// Number of complete paths of length `frames`, in floating point so that
/// large counts saturate gracefully.
pub fn count_paths(g: &AlignmentGraph, frames: usize) -> f64 {
    if frames == 0 {
        return 0.0;
    }
    let n = g.num_states();
    let mut cur = vec![0.0f64; n];
    for &s in g.initial_states() {
        cur[s] = 1.0;
    }
    for _ in 1..frames {
        let mut next = vec![0.0f64; n];
        for a in g.arcs() {
            next[a.dst] += cur[a.src];
        }
        cur = next;
    }
    g.final_states().map(|s| cur[s]).sum()
}

/// Every complete path of length `frames`, in lexicographic order of
/// state-index sequences.
pub fn enumerate_paths(g: &AlignmentGraph, frames: usize) -> Result<PathSet, TopologyError> {
    let count = count_paths(g, frames);
    if count > MAX_ENUMERATED_PATHS as f64 {
        return Err(TopologyError::TooManyPaths {
            count,
            limit: MAX_ENUMERATED_PATHS,
        });
    }
    if count == 0.0 {
        return Ok(PathSet::default());
    }
    // can_finish[k][s]: a walk of k more states starting after s reaches a final state.
    let n = g.num_states();
    let mut can_finish = vec![vec![false; n]; frames];
    for s in g.final_states() {
        can_finish[0][s] = true;
    }
    for k in 1..frames {
        for s in 0..n {
            can_finish[k][s] = g.outgoing(s).any(|a| can_finish[k - 1][a.dst]);
        }
    }

    let mut paths = Vec::with_capacity(count as usize);
    let mut prefix = Vec::with_capacity(frames);
    fn walk(
        g: &AlignmentGraph,
        can_finish: &[Vec<bool>],
        frames: usize,
        prefix: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
    ) {
        if prefix.len() == frames {
            out.push(prefix.clone());
            return;
        }
        let remaining = frames - prefix.len() - 1;
        let s = *prefix.last().expect("nonempty prefix");
        for a in g.outgoing(s) {
            if can_finish[remaining][a.dst] {
                prefix.push(a.dst);
                walk(g, can_finish, frames, prefix, out);
                prefix.pop();
            }
        }
    }
    for &s in g.initial_states() {
        if can_finish[frames - 1][s] {
            prefix.push(s);
            walk(g, &can_finish, frames, &mut prefix, &mut paths);
            prefix.pop();
        }
    }
    Ok(PathSet { paths })
}

/// Collapses a CTC state path to its label sequence: merge repeats, then
/// drop blanks.
pub fn collapse_ctc_path(g: &AlignmentGraph, path: &[usize], blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev: Option<usize> = None;
    for &s in path {
        if prev != Some(s) {
            let c = g.state(s).center;
            if c != blank {
                out.push(c);
            }
        }
        prev = Some(s);
    }
    out
}

use std::collections::HashMap;
use std::fmt::Write as _;
use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use serde::Serialize;

use super::arpa::{LmHistory, NGramLm, EOS};
use super::tree::{build_prefix_tree, PrefixTree, ROOT};
use super::{measure_rtf, DecodeError, DecoderConfig};
use crate::fullsum::pair_class;
use crate::inventory::{Context, PhonemeInventory};
use crate::lexicon::Lexicon;
use crate::priors::{Prior, PriorSpace};
use crate::scales::{ScaleSet, TransitionModel};
use crate::topology::{SilenceMode, TopologyKind};

const NO_WORD: u32 = u32::MAX;
const NO_TRACE: u32 = u32::MAX;

/// Acoustic input to the search.
#[derive(Debug, Clone, Copy)]
pub enum Acoustic<'a> {
    /// Label posteriors, `T x N` (monophone HMM, or CTC when the inventory
    /// has a blank).
    Center(ArrayView2<'a, f64>),
    /// Joint (left, center) posteriors, `T x (N + 1) * N`.
    Diphone(ArrayView2<'a, f64>),
}

impl Acoustic<'_> {
    fn view(&self) -> ArrayView2<'_, f64> {
        match self {
            Acoustic::Center(v) | Acoustic::Diphone(v) => v.view(),
        }
    }

    fn is_diphone(&self) -> bool {
        matches!(self, Acoustic::Diphone(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WordSegment {
    pub word: String,
    pub start_frame: usize,
    pub end_frame: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecodeResult {
    pub words: Vec<String>,
    /// Total log-linear score of the best hypothesis.
    pub score: f64,
    /// LM part of `score`, already multiplied by the LM scale.
    pub lm_score: f64,
    /// Emitted label per frame along the best path.
    pub state_trace: Vec<usize>,
    pub segments: Vec<WordSegment>,
    pub frames: usize,
    pub frame_shift_s: f64,
    pub audio_seconds: f64,
    pub wall_seconds: f64,
    pub rtf: f64,
    /// Largest number of hypotheses alive after pruning in any frame.
    pub max_active: usize,
}

impl DecodeResult {
    /// CTM lines `utt channel start dur word`.
    pub fn ctm(&self, utt: &str) -> String {
        let mut out = String::new();
        for s in &self.segments {
            let start = s.start_frame as f64 * self.frame_shift_s;
            let dur = (s.end_frame - s.start_frame) as f64 * self.frame_shift_s;
            let _ = writeln!(out, "{utt} 1 {start:.3} {dur:.3} {}", s.word);
        }
        out
    }
}

/// Search position. Ordering doubles as the deterministic tie-break.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
enum Pos {
    StartSil,
    Node(u32),
    /// CTC blank after a tree node; after the root it is the leading blank.
    Blank(u32),
    InterSil,
    EndSil,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct Key {
    pos: Pos,
    hist: LmHistory,
    /// Last label of the previous word, kept only where a diphone left
    /// context depends on it.
    carry: Context,
    words: u16,
}

#[derive(Debug, Clone, Copy)]
struct Cand {
    score: f64,
    parent: u32,
    word: u32,
    word_start: bool,
}

#[derive(Debug, Clone, Copy)]
struct Trace {
    parent: u32,
    pos: Pos,
    word: u32,
    word_start: bool,
}

/// Prefix-tree Viterbi decoder. Resources are borrowed immutably, so one
/// decoder can serve many utterances concurrently.
#[derive(Debug, Clone)]
pub struct Decoder<'a> {
    inv: &'a PhonemeInventory,
    lex: &'a Lexicon,
    lm: &'a NGramLm,
    tree: PrefixTree,
    lm_ids: Vec<u32>,
    eos: Option<u32>,
    start: LmHistory,
    kind: TopologyKind,
    scales: ScaleSet,
    transitions: TransitionModel,
    config: DecoderConfig,
    prior: Option<&'a Prior>,
}

struct Arcs {
    loop_: f64,
    sil_loop: f64,
    fwd: f64,
    fwd_split: f64,
    sil_fwd: f64,
}

impl<'a> Decoder<'a> {
    /// Prepares the tree and maps every lexicon word into the LM vocabulary.
    /// The topology follows the inventory: CTC if it has a blank, else HMM.
    pub fn new(
        inv: &'a PhonemeInventory,
        lex: &'a Lexicon,
        lm: &'a NGramLm,
    ) -> Result<Self, DecodeError> {
        let tree = build_prefix_tree(lex)?;
        let lm_ids = lex
            .words()
            .iter()
            .map(|w| lm.resolve(w))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            inv,
            lex,
            lm,
            tree,
            lm_ids,
            eos: lm.word_id(EOS),
            start: lm.start_history()?,
            kind: if inv.blank().is_some() {
                TopologyKind::Ctc
            } else {
                TopologyKind::Hmm
            },
            scales: ScaleSet::default(),
            transitions: TransitionModel::default(),
            config: DecoderConfig::default(),
            prior: None,
        })
    }

    pub fn with_scales(mut self, scales: ScaleSet) -> Self {
        self.scales = scales;
        self
    }

    pub fn with_transitions(mut self, transitions: TransitionModel) -> Self {
        self.transitions = transitions;
        self
    }

    pub fn with_config(mut self, config: DecoderConfig) -> Self {
        self.config = config;
        self
    }

    pub fn with_prior(mut self, prior: Option<&'a Prior>) -> Self {
        self.prior = prior;
        self
    }

    pub fn tree(&self) -> &PrefixTree {
        &self.tree
    }

    pub fn kind(&self) -> TopologyKind {
        self.kind
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.config
    }

    fn silence(&self) -> Result<Option<usize>, DecodeError> {
        if self.kind == TopologyKind::Ctc || self.config.silence == SilenceMode::None {
            return Ok(None);
        }
        self.inv.silence().map(Some).ok_or(DecodeError::NoSilence)
    }

    /// Per-frame emission scores `log p - beta * log prior` over the
    /// acoustic columns.
    fn emissions(&self, ac: &Acoustic<'_>) -> Result<Array2<f64>, DecodeError> {
        let n = self.inv.len();
        let (cols, space) = if ac.is_diphone() {
            ((n + 1) * n, PriorSpace::Pair)
        } else {
            (n, PriorSpace::Center)
        };
        if ac.is_diphone() && self.kind == TopologyKind::Ctc {
            return Err(DecodeError::Config(
                "diphone scoring needs an HMM inventory".into(),
            ));
        }
        let view = ac.view();
        if view.nrows() == 0 {
            return Err(DecodeError::EmptyInput);
        }
        if view.ncols() != cols {
            return Err(DecodeError::Shape {
                expected: cols,
                got: view.ncols(),
            });
        }
        let mut em = view.to_owned();
        if self.scales.beta != 0.0 {
            let prior = self.prior.ok_or(DecodeError::MissingPrior)?;
            if prior.space != space || prior.len() != cols {
                return Err(DecodeError::PriorShape {
                    expected: cols,
                    got: prior.len(),
                });
            }
            let beta = self.scales.beta;
            for mut row in em.rows_mut() {
                for (v, p) in row.iter_mut().zip(&prior.log_probs) {
                    *v -= beta * p;
                }
            }
        }
        Ok(em)
    }

    fn label(&self, pos: Pos, sil: Option<usize>) -> usize {
        match pos {
            Pos::Node(n) => self.tree.node(n as usize).label,
            Pos::Blank(_) => self.inv.blank().expect("CTC inventory"),
            Pos::StartSil | Pos::InterSil | Pos::EndSil => sil.expect("silence position"),
        }
    }

    fn column(&self, key: &Key, sil: Option<usize>, diphone: bool) -> usize {
        let label = self.label(key.pos, sil);
        if !diphone {
            return label;
        }
        let left = match key.pos {
            Pos::Node(n) => {
                let node = self.tree.node(n as usize);
                if node.depth == 1 {
                    key.carry
                } else {
                    Context::Label(self.tree.node(node.parent.expect("non-root")).label)
                }
            }
            _ => Context::Boundary,
        };
        pair_class(left, label, self.inv.len())
    }

    fn is_final(&self, pos: Pos) -> bool {
        match pos {
            Pos::Node(n) | Pos::Blank(n) => self.tree.is_word_end(n as usize),
            Pos::EndSil => true,
            _ => false,
        }
    }

    fn can_add_word(&self, words: u16) -> bool {
        self.config.max_words.is_none_or(|m| (words as usize) < m)
    }

    /// Successor keys for entering tree node `c` with LM history `hist`.
    /// Word ends branch into one key per word, carrying the LM score.
    fn enter(&self, c: usize, base: Key, mut f: impl FnMut(Key, f64, u32)) {
        let node = self.tree.node(c);
        let pos = Pos::Node(c as u32);
        if node.words.is_empty() {
            f(Key { pos, ..base }, 0.0, NO_WORD);
            return;
        }
        if !self.can_add_word(base.words) {
            return;
        }
        for &w in &node.words {
            let id = self.lm_ids[w];
            let lm = if self.scales.lambda == 0.0 {
                0.0
            } else {
                self.scales.lambda * self.lm.score_ids(base.hist.as_slice(), id)
            };
            if lm == f64::NEG_INFINITY {
                continue;
            }
            let key = Key {
                pos,
                hist: self.lm.advance(&base.hist, id),
                words: base.words + 1,
                ..base
            };
            f(key, lm, w as u32);
        }
    }

    fn word_starts(&self, base: Key, extra: f64, mut f: impl FnMut(Key, f64, u32, bool)) {
        if !self.can_add_word(base.words) {
            return;
        }
        for &c in self.tree.children(ROOT) {
            self.enter(c, base, |k, lm, w| f(k, extra + lm, w, true));
        }
    }

    /// Calls `f(key, arc + lm, word, word_start)` for every successor of `key`.
    fn successors(
        &self,
        key: &Key,
        sil: Option<usize>,
        diphone: bool,
        arcs: &Arcs,
        mut f: impl FnMut(Key, f64, u32, bool),
    ) {
        let eta = self.scales.eta;
        let tw = |w: f64| if eta == 0.0 { 0.0 } else { eta * w };
        let plain = |k: &Key| Key {
            carry: Context::Boundary,
            ..*k
        };
        match self.kind {
            TopologyKind::Hmm => match key.pos {
                Pos::StartSil | Pos::InterSil => {
                    f(*key, tw(arcs.sil_loop), NO_WORD, false);
                    self.word_starts(*key, tw(arcs.sil_fwd), &mut f);
                }
                Pos::EndSil => f(*key, tw(arcs.sil_loop), NO_WORD, false),
                Pos::Node(n) => {
                    let n = n as usize;
                    f(*key, tw(arcs.loop_), NO_WORD, false);
                    let node = self.tree.node(n);
                    if node.words.is_empty() {
                        for &c in &node.children {
                            self.enter(c, plain(key), |k, lm, w| f(k, tw(arcs.fwd) + lm, w, false));
                        }
                        return;
                    }
                    let carry = if diphone {
                        Context::Label(node.label)
                    } else {
                        Context::Boundary
                    };
                    let next = Key { carry, ..*key };
                    if sil.is_some() {
                        if self.can_add_word(key.words) {
                            f(
                                Key {
                                    pos: Pos::InterSil,
                                    ..next
                                },
                                tw(arcs.fwd_split),
                                NO_WORD,
                                false,
                            );
                        }
                        self.word_starts(next, tw(arcs.fwd_split), &mut f);
                        f(
                            Key {
                                pos: Pos::EndSil,
                                ..plain(key)
                            },
                            tw(arcs.fwd),
                            NO_WORD,
                            false,
                        );
                    } else {
                        self.word_starts(next, tw(arcs.fwd), &mut f);
                    }
                }
                Pos::Blank(_) => unreachable!("blank position in HMM search"),
            },
            TopologyKind::Ctc => {
                let base = plain(key);
                match key.pos {
                    Pos::Node(n) => {
                        let node = self.tree.node(n as usize);
                        f(*key, 0.0, NO_WORD, false);
                        f(
                            Key {
                                pos: Pos::Blank(n),
                                ..base
                            },
                            0.0,
                            NO_WORD,
                            false,
                        );
                        let label = node.label;
                        for &c in &node.children {
                            if self.tree.node(c).label != label {
                                self.enter(c, base, |k, lm, w| f(k, lm, w, false));
                            }
                        }
                        if !node.words.is_empty() && self.can_add_word(key.words) {
                            for &c in self.tree.children(ROOT) {
                                if self.tree.node(c).label != label {
                                    self.enter(c, base, |k, lm, w| f(k, lm, w, true));
                                }
                            }
                        }
                    }
                    Pos::Blank(n) => {
                        f(*key, 0.0, NO_WORD, false);
                        let n = n as usize;
                        if n == ROOT || self.tree.is_word_end(n) {
                            self.word_starts(base, 0.0, &mut f);
                        } else {
                            for &c in self.tree.children(n) {
                                self.enter(c, base, |k, lm, w| f(k, lm, w, false));
                            }
                        }
                    }
                    _ => unreachable!("silence position in CTC search"),
                }
            }
        }
    }

    /// Decodes one utterance.
    pub fn decode(&self, ac: &Acoustic<'_>) -> Result<DecodeResult, DecodeError> {
        let started = Instant::now();
        self.config.validate()?;
        let em = self.emissions(ac)?;
        let sil = self.silence()?;
        let diphone = ac.is_diphone();
        let frames = em.nrows();
        let p = self.transitions.p_loop;
        let ps = self.transitions.p_sil_loop;
        let arcs = Arcs {
            loop_: p.ln(),
            sil_loop: ps.ln(),
            fwd: (1.0 - p).ln(),
            fwd_split: ((1.0 - p) / 2.0).ln(),
            sil_fwd: (1.0 - ps).ln(),
        };

        let mut traces: Vec<Trace> = Vec::new();
        let mut cands: HashMap<Key, Cand> = HashMap::new();
        let root = Key {
            pos: Pos::StartSil,
            hist: self.start,
            carry: Context::Boundary,
            words: 0,
        };
        {
            let mut add = |key: Key, extra: f64, word: u32, word_start: bool| {
                let col = self.column(&key, sil, diphone);
                let score = extra + em[[0, col]];
                insert(&mut cands, key, score, NO_TRACE, word, word_start);
            };
            match self.kind {
                TopologyKind::Hmm => {
                    if sil.is_some() {
                        add(root, 0.0, NO_WORD, false);
                    }
                }
                TopologyKind::Ctc => add(
                    Key {
                        pos: Pos::Blank(ROOT as u32),
                        ..root
                    },
                    0.0,
                    NO_WORD,
                    false,
                ),
            }
            self.word_starts(root, 0.0, &mut add);
        }
        let mut active = self.prune_and_trace(cands, &mut traces);
        let mut max_active = active.len();

        for t in 1..frames {
            let mut cands: HashMap<Key, Cand> = HashMap::with_capacity(active.len() * 4);
            for (key, score, trace) in &active {
                self.successors(key, sil, diphone, &arcs, |k, extra, word, word_start| {
                    if extra == f64::NEG_INFINITY {
                        return;
                    }
                    let col = self.column(&k, sil, diphone);
                    let s = score + extra + em[[t, col]];
                    insert(&mut cands, k, s, *trace, word, word_start);
                });
            }
            active = self.prune_and_trace(cands, &mut traces);
            max_active = max_active.max(active.len());
            if active.is_empty() {
                break;
            }
        }

        let mut best: Option<(f64, u32)> = None;
        for (key, score, trace) in &active {
            if !self.is_final(key.pos) {
                continue;
            }
            let end = match self.eos {
                Some(eos) if self.scales.lambda != 0.0 => {
                    self.scales.lambda * self.lm.score_ids(key.hist.as_slice(), eos)
                }
                _ => 0.0,
            };
            let total = score + end;
            if total > f64::NEG_INFINITY && best.is_none_or(|(b, _)| total > b) {
                best = Some((total, *trace));
            }
        }
        let (score, last) = best.ok_or(DecodeError::NoSurvivor { frames })?;
        let mut path = Vec::with_capacity(frames);
        let mut cur = last;
        while cur != NO_TRACE {
            path.push(traces[cur as usize]);
            cur = traces[cur as usize].parent;
        }
        path.reverse();
        debug_assert_eq!(path.len(), frames);

        let mut words = Vec::new();
        let mut segments: Vec<WordSegment> = Vec::new();
        let mut state_trace = Vec::with_capacity(frames);
        for (t, tr) in path.iter().enumerate() {
            state_trace.push(self.label(tr.pos, sil));
            if tr.word_start {
                segments.push(WordSegment {
                    word: String::new(),
                    start_frame: t,
                    end_frame: t + 1,
                });
            }
            if let (Pos::Node(_), Some(seg)) = (tr.pos, segments.last_mut()) {
                seg.end_frame = t + 1;
            }
            if tr.word != NO_WORD {
                let w = self.lex.word(tr.word as usize).to_string();
                if let Some(seg) = segments.last_mut() {
                    seg.word = w.clone();
                }
                words.push(w);
            }
        }
        let lm_score = self.lm_total(&words);
        let audio_seconds = frames as f64 * self.config.frame_shift_s;
        let wall_seconds = started.elapsed().as_secs_f64();
        Ok(DecodeResult {
            words,
            score,
            lm_score,
            state_trace,
            segments,
            frames,
            frame_shift_s: self.config.frame_shift_s,
            audio_seconds,
            wall_seconds,
            rtf: measure_rtf(wall_seconds, audio_seconds)?,
            max_active,
        })
    }

    fn lm_total(&self, words: &[String]) -> f64 {
        if self.scales.lambda == 0.0 {
            return 0.0;
        }
        let mut hist = self.start;
        let mut total = 0.0;
        for w in words {
            let id = self.lm_ids[self.lex.word_id(w).expect("decoded word in lexicon")];
            total += self.lm.score_ids(hist.as_slice(), id);
            hist = self.lm.advance(&hist, id);
        }
        if let Some(eos) = self.eos {
            total += self.lm.score_ids(hist.as_slice(), eos);
        }
        self.scales.lambda * total
    }

    /// Threshold and histogram pruning, then one trace entry per survivor.
    /// Survivors come back sorted by key.
    fn prune_and_trace(
        &self,
        cands: HashMap<Key, Cand>,
        traces: &mut Vec<Trace>,
    ) -> Vec<(Key, f64, u32)> {
        let mut list: Vec<(Key, Cand)> = cands
            .into_iter()
            .filter(|(_, c)| c.score > f64::NEG_INFINITY)
            .collect();
        let best = list
            .iter()
            .map(|(_, c)| c.score)
            .fold(f64::NEG_INFINITY, f64::max);
        let threshold = self.config.beam_threshold;
        if threshold.is_finite() {
            list.retain(|(_, c)| c.score >= best - threshold);
        }
        if list.len() > self.config.max_hyps {
            list.sort_by(|a, b| b.1.score.total_cmp(&a.1.score).then(a.0.cmp(&b.0)));
            list.truncate(self.config.max_hyps);
        }
        list.sort_by_key(|a| a.0);
        list.into_iter()
            .map(|(key, c)| {
                let id = traces.len() as u32;
                traces.push(Trace {
                    parent: c.parent,
                    pos: key.pos,
                    word: c.word,
                    word_start: c.word_start,
                });
                (key, c.score, id)
            })
            .collect()
    }
}

fn insert(
    cands: &mut HashMap<Key, Cand>,
    key: Key,
    score: f64,
    parent: u32,
    word: u32,
    word_start: bool,
) {
    let cand = Cand {
        score,
        parent,
        word,
        word_start,
    };
    cands
        .entry(key)
        .and_modify(|c| {
            if score > c.score {
                *c = cand;
            }
        })
        .or_insert(cand);
}

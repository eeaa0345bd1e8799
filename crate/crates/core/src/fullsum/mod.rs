//! Log-space forward-backward over alignment graphs, state occupancies and
//! the full-sum sequence losses built on them.

mod loss;
pub mod oracle;

use ndarray::{Array2, ArrayView2};
use thiserror::Error;

use crate::inventory::Context;
use crate::scales::ScaleError;
use crate::topology::{AlignmentGraph, TopologyError, TopologyKind};

pub use loss::{
    assemble_scores, ctc_loss_grad, diphone_loss_grad, factored_loss_grad, hmm_fullsum_loss_grad,
    pair_class, sequence_loss, LossResult, Streams,
};

/// Tolerance on `|sum(exp(row)) - 1|` for posterior stream rows.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum FullSumError {
    /// No path of the requested length exists; the likelihood is an empty sum.
    #[error("no alignment path of length {frames} (shortest path needs {min_frames:?})")]
    NoPath {
        frames: usize,
        min_frames: Option<usize>,
    },
    #[error("shape mismatch in {what}: expected {expected:?}, got {got:?}")]
    Shape {
        what: &'static str,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("{stream} row {row} is not normalized (sum of probabilities {sum})")]
    NotNormalized {
        stream: &'static str,
        row: usize,
        sum: f64,
    },
    #[error("frame score at ({row}, {col}) is NaN or +inf")]
    InvalidScore { row: usize, col: usize },
    #[error("loss needs a {expected:?} graph, got {got:?}")]
    WrongTopology {
        expected: TopologyKind,
        got: TopologyKind,
    },
    #[error("empty input: no frames")]
    NoFrames,
    #[error(transparent)]
    Scale(#[from] ScaleError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
}

/// `ln(exp(a) + exp(b))` with max subtraction.
#[inline]
pub fn log_add(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// Log-sum-exp of a sequence with max subtraction. Empty or all `-inf`
/// input gives `-inf`.
pub fn log_sum_exp<I>(values: I) -> f64
where
    I: IntoIterator<Item = f64>,
    I::IntoIter: Clone,
{
    let it = values.into_iter();
    let max = it.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + it.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Log-domain frame scores, `T x |states|`. Entries are finite or `-inf`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameScores(Array2<f64>);

impl FrameScores {
    pub fn new(scores: Array2<f64>) -> Result<Self, FullSumError> {
        if scores.nrows() == 0 {
            return Err(FullSumError::NoFrames);
        }
        for ((row, col), &v) in scores.indexed_iter() {
            if v.is_nan() || v == f64::INFINITY {
                return Err(FullSumError::InvalidScore { row, col });
            }
        }
        Ok(Self(scores))
    }

    pub fn frames(&self) -> usize {
        self.0.nrows()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }
}

/// Posterior state occupancies and their factor-marginal views.
#[derive(Debug, Clone, PartialEq)]
pub struct Occupancies {
    /// `T x |states|`.
    pub gamma: Array2<f64>,
    /// `T x (N + 1)`; the last column is the boundary sentinel.
    pub left: Array2<f64>,
    /// `T x (N + 1)`; the sentinel column is always zero.
    pub center: Array2<f64>,
    /// `T x (N + 1)`; the last column is the boundary sentinel.
    pub right: Array2<f64>,
}

impl Occupancies {
    /// Marginalizes state occupancies onto the left, center and right
    /// factor labels.
    pub fn from_gamma(gamma: Array2<f64>, g: &AlignmentGraph) -> Self {
        let n = g.n_labels();
        let frames = gamma.nrows();
        let mut left = Array2::zeros((frames, n + 1));
        let mut center = Array2::zeros((frames, n + 1));
        let mut right = Array2::zeros((frames, n + 1));
        for t in 0..frames {
            for (s, st) in g.states().iter().enumerate() {
                let w = gamma[[t, s]];
                left[[t, st.left.class(n)]] += w;
                center[[t, st.center]] += w;
                right[[t, st.right.class(n)]] += w;
            }
        }
        Self {
            gamma,
            left,
            center,
            right,
        }
    }

    /// Occupancy marginal over (left, center) pairs, `T x ((N + 1) * N)`,
    /// indexed by [`pair_class`].
    pub fn pairs(&self, g: &AlignmentGraph) -> Array2<f64> {
        let n = g.n_labels();
        let frames = self.gamma.nrows();
        let mut out = Array2::zeros((frames, (n + 1) * n));
        for t in 0..frames {
            for (s, st) in g.states().iter().enumerate() {
                out[[t, pair_class(st.left, st.center, n)]] += self.gamma[[t, s]];
            }
        }
        out
    }

    /// Text dump of the state occupancy matrix, one frame per line.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for row in self.gamma.rows() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
            out.push_str(&cells.join(" "));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardBackward {
    pub log_likelihood: f64,
    pub occupancies: Occupancies,
}

/// Forward log-probabilities `alpha[t, s]`: log-sum over all partial paths
/// ending in `s` at `t`, including the score at `t`.
pub fn forward(
    scores: ArrayView2<'_, f64>,
    g: &AlignmentGraph,
    transition_scale: f64,
) -> Array2<f64> {
    let (frames, n) = scores.dim();
    let mut alpha = Array2::from_elem((frames, n), f64::NEG_INFINITY);
    if frames == 0 {
        return alpha;
    }
    for &s in g.initial_states() {
        alpha[[0, s]] = scores[[0, s]];
    }
    let mut terms: Vec<f64> = Vec::with_capacity(4);
    for t in 1..frames {
        for s in 0..n {
            terms.clear();
            terms.extend(
                g.incoming(s)
                    .map(|a| alpha[[t - 1, a.src]] + transition_scale * a.log_weight),
            );
            alpha[[t, s]] = scores[[t, s]] + log_sum_exp(terms.iter().copied());
        }
    }
    alpha
}

/// Backward log-probabilities `beta[t, s]`: log-sum over all path
/// completions after `t`, excluding the score at `t`.
pub fn backward(
    scores: ArrayView2<'_, f64>,
    g: &AlignmentGraph,
    transition_scale: f64,
) -> Array2<f64> {
    let (frames, n) = scores.dim();
    let mut beta = Array2::from_elem((frames, n), f64::NEG_INFINITY);
    if frames == 0 {
        return beta;
    }
    for s in g.final_states() {
        beta[[frames - 1, s]] = 0.0;
    }
    let mut terms: Vec<f64> = Vec::with_capacity(4);
    for t in (0..frames - 1).rev() {
        for s in 0..n {
            terms.clear();
            terms.extend(g.outgoing(s).map(|a| {
                transition_scale * a.log_weight + scores[[t + 1, a.dst]] + beta[[t + 1, a.dst]]
            }));
            beta[[t, s]] = log_sum_exp(terms.iter().copied());
        }
    }
    beta
}

/// Sum over all length-`T` paths of `exp(sum of frame scores + scaled arc
/// weights)`, in log space, together with the posterior occupancies.
pub fn forward_backward(
    scores: &FrameScores,
    g: &AlignmentGraph,
    transition_scale: f64,
) -> Result<ForwardBackward, FullSumError> {
    let view = scores.view();
    let (frames, n) = view.dim();
    if n != g.num_states() {
        return Err(FullSumError::Shape {
            what: "frame scores",
            expected: (frames, g.num_states()),
            got: (frames, n),
        });
    }
    let alpha = forward(view, g, transition_scale);
    let log_likelihood = log_sum_exp(g.final_states().map(|s| alpha[[frames - 1, s]]));
    if log_likelihood == f64::NEG_INFINITY {
        return Err(FullSumError::NoPath {
            frames,
            min_frames: g.min_path_length(),
        });
    }
    let beta = backward(view, g, transition_scale);
    let mut gamma = Array2::zeros((frames, n));
    ndarray::Zip::from(&mut gamma)
        .and(&alpha)
        .and(&beta)
        .for_each(|gm, &a, &b| *gm = (a + b - log_likelihood).exp());
    Ok(ForwardBackward {
        log_likelihood,
        occupancies: Occupancies::from_gamma(gamma, g),
    })
}

/// Best single path and its score.
#[derive(Debug, Clone, PartialEq)]
pub struct ViterbiPath {
    pub score: f64,
    pub states: Vec<usize>,
}

/// Max-scoring length-`T` path. Ties prefer the self-loop predecessor,
/// then the lowest source state; at the end, the lowest final state.
pub fn viterbi(
    scores: &FrameScores,
    g: &AlignmentGraph,
    transition_scale: f64,
) -> Result<ViterbiPath, FullSumError> {
    let view = scores.view();
    let (frames, n) = view.dim();
    if n != g.num_states() {
        return Err(FullSumError::Shape {
            what: "frame scores",
            expected: (frames, g.num_states()),
            got: (frames, n),
        });
    }
    let mut delta = Array2::from_elem((frames, n), f64::NEG_INFINITY);
    let mut back = Array2::from_elem((frames, n), usize::MAX);
    for &s in g.initial_states() {
        delta[[0, s]] = view[[0, s]];
    }
    for t in 1..frames {
        for s in 0..n {
            let mut best = f64::NEG_INFINITY;
            let mut arg = usize::MAX;
            if let Some(w) = g.arc_weight(s, s) {
                best = delta[[t - 1, s]] + transition_scale * w;
                arg = s;
            }
            for a in g.incoming(s).filter(|a| a.src != s) {
                let v = delta[[t - 1, a.src]] + transition_scale * a.log_weight;
                if v > best {
                    best = v;
                    arg = a.src;
                }
            }
            if best > f64::NEG_INFINITY {
                delta[[t, s]] = best + view[[t, s]];
                back[[t, s]] = arg;
            }
        }
    }
    let mut best = f64::NEG_INFINITY;
    let mut last = usize::MAX;
    for s in g.final_states() {
        if delta[[frames - 1, s]] > best {
            best = delta[[frames - 1, s]];
            last = s;
        }
    }
    if last == usize::MAX {
        return Err(FullSumError::NoPath {
            frames,
            min_frames: g.min_path_length(),
        });
    }
    let mut states = vec![0; frames];
    states[frames - 1] = last;
    for t in (1..frames).rev() {
        states[t - 1] = back[[t, states[t]]];
    }
    Ok(ViterbiPath {
        score: best,
        states,
    })
}

/// Checks every row of a log-probability stream sums to one.
pub fn check_normalized(stream: &'static str, lp: ArrayView2<'_, f64>) -> Result<(), FullSumError> {
    for (row, r) in lp.rows().into_iter().enumerate() {
        let sum: f64 = r.iter().map(|v| v.exp()).sum();
        if sum.is_nan() || (sum - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(FullSumError::NotNormalized { stream, row, sum });
        }
    }
    Ok(())
}

/// Context value for a pair-space class index.
pub fn pair_from_class(class: usize, n_labels: usize) -> (Context, usize) {
    (
        Context::from_class(class / n_labels, n_labels),
        class % n_labels,
    )
}

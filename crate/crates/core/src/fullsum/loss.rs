use ndarray::{s, Array2, ArrayView2};

use super::{check_normalized, forward_backward, FrameScores, FullSumError, Occupancies};
use crate::inventory::{Context, PhonemeInventory};
use crate::scales::ScaleSet;
use crate::topology::{build_ctc_fsa, AlignmentGraph, TopologyKind};

/// Class index of a (left, center) pair in a `(N + 1) * N` joint output.
#[inline]
pub fn pair_class(left: Context, center: usize, n_labels: usize) -> usize {
    left.class(n_labels) * n_labels + center
}

/// Log-posterior inputs of one loss variant, each `T x classes`.
///
/// Center streams have `N` columns, left/right streams `N + 1` (boundary
/// last) and joint streams `(N + 1) * N` indexed by [`pair_class`].
#[derive(Debug, Clone, Copy)]
pub enum Streams<'a> {
    /// Blank-augmented label posteriors, unscaled.
    Ctc(ArrayView2<'a, f64>),
    /// Center-phoneme posteriors only (posterior HMM).
    Center(ArrayView2<'a, f64>),
    /// Separate left, center and right factor posteriors.
    Factored {
        left: ArrayView2<'a, f64>,
        center: ArrayView2<'a, f64>,
        right: ArrayView2<'a, f64>,
    },
    /// Joint (left, center) posteriors.
    Diphone(ArrayView2<'a, f64>),
}

impl Streams<'_> {
    pub fn frames(&self) -> usize {
        match self {
            Streams::Ctc(c) | Streams::Center(c) | Streams::Diphone(c) => c.nrows(),
            Streams::Factored { center, .. } => center.nrows(),
        }
    }

    /// Checks row normalization of every stream.
    pub fn check_normalized(&self) -> Result<(), FullSumError> {
        match self {
            Streams::Ctc(c) => check_normalized("ctc", *c),
            Streams::Center(c) => check_normalized("center", *c),
            Streams::Diphone(j) => check_normalized("joint", *j),
            Streams::Factored {
                left,
                center,
                right,
            } => {
                check_normalized("left", *left)?;
                check_normalized("center", *center)?;
                check_normalized("right", *right)
            }
        }
    }

    fn check_shapes(&self, n_labels: usize) -> Result<(), FullSumError> {
        let frames = self.frames();
        if frames == 0 {
            return Err(FullSumError::NoFrames);
        }
        let check = |what, v: &ArrayView2<'_, f64>, cols| {
            if v.dim() != (frames, cols) {
                Err(FullSumError::Shape {
                    what,
                    expected: (frames, cols),
                    got: v.dim(),
                })
            } else {
                Ok(())
            }
        };
        match self {
            Streams::Ctc(c) => check("ctc stream", c, n_labels),
            Streams::Center(c) => check("center stream", c, n_labels),
            Streams::Diphone(j) => check("joint stream", j, (n_labels + 1) * n_labels),
            Streams::Factored {
                left,
                center,
                right,
            } => {
                check("left stream", left, n_labels + 1)?;
                check("center stream", center, n_labels)?;
                check("right stream", right, n_labels + 1)
            }
        }
    }
}

/// Loss value and gradients with respect to the log-posterior inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct LossResult {
    /// Negative log-likelihood in nats.
    pub loss: f64,
    pub grad_left: Option<Array2<f64>>,
    /// Gradient for the center (or CTC) stream.
    pub grad_center: Option<Array2<f64>>,
    pub grad_right: Option<Array2<f64>>,
    pub grad_joint: Option<Array2<f64>>,
    pub occupancies: Occupancies,
}

/// Adds `scale * stream[t, class(s)]` to every state's frame score. A zero
/// scale contributes nothing, so `-inf` entries never produce NaN.
fn add_stream<F>(
    scores: &mut Array2<f64>,
    stream: ArrayView2<'_, f64>,
    scale: f64,
    g: &AlignmentGraph,
    class_of: F,
) where
    F: Fn(usize) -> usize,
{
    if scale == 0.0 {
        return;
    }
    let classes: Vec<usize> = (0..g.num_states()).map(class_of).collect();
    for (mut row, srow) in scores.rows_mut().into_iter().zip(stream.rows()) {
        for (v, &c) in row.iter_mut().zip(&classes) {
            *v += scale * srow[c];
        }
    }
}

/// Assembles `T x |states|` frame scores for a loss variant. The prior
/// term is absent: training scores are prior-free.
pub fn assemble_scores(
    streams: &Streams<'_>,
    g: &AlignmentGraph,
    scales: &ScaleSet,
) -> Result<FrameScores, FullSumError> {
    let n = g.n_labels();
    streams.check_shapes(n)?;
    let mut scores = Array2::zeros((streams.frames(), g.num_states()));
    let st = g.states();
    match streams {
        Streams::Ctc(c) => add_stream(&mut scores, *c, 1.0, g, |s| st[s].center),
        Streams::Center(c) => add_stream(&mut scores, *c, scales.alpha_center, g, |s| st[s].center),
        Streams::Factored {
            left,
            center,
            right,
        } => {
            add_stream(&mut scores, *left, scales.alpha_left, g, |s| {
                st[s].left.class(n)
            });
            add_stream(&mut scores, *center, scales.alpha_center, g, |s| {
                st[s].center
            });
            add_stream(&mut scores, *right, scales.alpha_right, g, |s| {
                st[s].right.class(n)
            });
        }
        Streams::Diphone(j) => add_stream(&mut scores, *j, scales.alpha_center, g, |s| {
            pair_class(st[s].left, st[s].center, n)
        }),
    }
    FrameScores::new(scores)
}

/// Full-sum loss and gradients for any variant, without checking stream
/// normalization. CTC uses unit scales and ignores `scales`.
pub fn sequence_loss(
    streams: &Streams<'_>,
    g: &AlignmentGraph,
    scales: &ScaleSet,
) -> Result<LossResult, FullSumError> {
    let ctc = matches!(streams, Streams::Ctc(_));
    if !ctc {
        scales.validate_training()?;
    }
    let scores = assemble_scores(streams, g, scales)?;
    let eta = if ctc { 1.0 } else { scales.eta };
    let fb = forward_backward(&scores, g, eta)?;
    let n = g.n_labels();
    let occ = fb.occupancies;
    let neg_scaled = |m: ArrayView2<'_, f64>, scale: f64| m.mapv(|v| -scale * v);
    let center_grad = |scale: f64| neg_scaled(occ.center.slice(s![.., ..n]), scale);

    let mut result = LossResult {
        loss: -fb.log_likelihood,
        grad_left: None,
        grad_center: None,
        grad_right: None,
        grad_joint: None,
        occupancies: occ.clone(),
    };
    match streams {
        Streams::Ctc(_) => result.grad_center = Some(center_grad(1.0)),
        Streams::Center(_) => result.grad_center = Some(center_grad(scales.alpha_center)),
        Streams::Factored { .. } => {
            result.grad_left = Some(neg_scaled(occ.left.view(), scales.alpha_left));
            result.grad_center = Some(center_grad(scales.alpha_center));
            result.grad_right = Some(neg_scaled(occ.right.view(), scales.alpha_right));
        }
        Streams::Diphone(_) => {
            result.grad_joint = Some(neg_scaled(occ.pairs(g).view(), scales.alpha_center));
        }
    }
    Ok(result)
}

/// CTC loss over the blank-augmented topology of `phones`.
pub fn ctc_loss_grad(
    log_post: ArrayView2<'_, f64>,
    phones: &[usize],
    inv: &PhonemeInventory,
) -> Result<LossResult, FullSumError> {
    let streams = Streams::Ctc(log_post);
    streams.check_normalized()?;
    let g = build_ctc_fsa(phones, inv)?;
    sequence_loss(&streams, &g, &ScaleSet::default())
}

fn require_hmm(g: &AlignmentGraph) -> Result<(), FullSumError> {
    match g.kind() {
        TopologyKind::Hmm => Ok(()),
        kind => Err(FullSumError::WrongTopology {
            expected: TopologyKind::Hmm,
            got: kind,
        }),
    }
}

/// Posterior-HMM loss: center posteriors scaled by `alpha_center`,
/// transitions by `eta`, no prior.
pub fn hmm_fullsum_loss_grad(
    center: ArrayView2<'_, f64>,
    g: &AlignmentGraph,
    scales: &ScaleSet,
) -> Result<LossResult, FullSumError> {
    require_hmm(g)?;
    let streams = Streams::Center(center);
    streams.check_normalized()?;
    sequence_loss(&streams, g, scales)
}

/// Factored loss with auxiliary left and right context posteriors. Each
/// factor's gradient is its scaled, negated occupancy marginal.
pub fn factored_loss_grad(
    left: ArrayView2<'_, f64>,
    center: ArrayView2<'_, f64>,
    right: ArrayView2<'_, f64>,
    g: &AlignmentGraph,
    scales: &ScaleSet,
) -> Result<LossResult, FullSumError> {
    require_hmm(g)?;
    let streams = Streams::Factored {
        left,
        center,
        right,
    };
    streams.check_normalized()?;
    sequence_loss(&streams, g, scales)
}

/// Diphone loss over joint (left, center) posteriors, scaled by
/// `alpha_center`.
pub fn diphone_loss_grad(
    joint: ArrayView2<'_, f64>,
    g: &AlignmentGraph,
    scales: &ScaleSet,
) -> Result<LossResult, FullSumError> {
    require_hmm(g)?;
    let streams = Streams::Diphone(joint);
    streams.check_normalized()?;
    sequence_loss(&streams, g, scales)
}

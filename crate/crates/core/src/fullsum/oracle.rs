//! Exhaustive path-enumeration references for the full-sum computations.
//!
//! Every quantity here is computed by scoring each enumerated path on its
//! own, straight from the posterior streams, without going through frame
//! score assembly or the forward/backward recursions.

use ndarray::Array2;

use super::{log_sum_exp, pair_class, FullSumError, Streams};
use crate::scales::ScaleSet;
use crate::topology::{enumerate_paths, AlignmentGraph, PathSet};

/// Log-domain score of one path: per-frame stream terms plus scaled arc
/// weights. Entry and exit carry no weight.
pub fn path_score(
    path: &[usize],
    streams: &Streams<'_>,
    g: &AlignmentGraph,
    scales: &ScaleSet,
) -> f64 {
    let n = g.n_labels();
    let term = |scale: f64, v: f64| if scale == 0.0 { 0.0 } else { scale * v };
    let mut total = 0.0;
    for (t, &s) in path.iter().enumerate() {
        let st = g.state(s);
        total += match streams {
            Streams::Ctc(c) => c[[t, st.center]],
            Streams::Center(c) => term(scales.alpha_center, c[[t, st.center]]),
            Streams::Factored {
                left,
                center,
                right,
            } => {
                term(scales.alpha_left, left[[t, st.left.class(n)]])
                    + term(scales.alpha_center, center[[t, st.center]])
                    + term(scales.alpha_right, right[[t, st.right.class(n)]])
            }
            Streams::Diphone(j) => term(
                scales.alpha_center,
                j[[t, pair_class(st.left, st.center, n)]],
            ),
        };
    }
    let eta = match streams {
        Streams::Ctc(_) => 1.0,
        _ => scales.eta,
    };
    for w in path.windows(2) {
        let lw = g
            .arc_weight(w[0], w[1])
            .expect("enumerated path follows arcs");
        total += term(eta, lw);
    }
    total
}

fn paths(g: &AlignmentGraph, frames: usize) -> Result<PathSet, FullSumError> {
    enumerate_paths(g, frames).map_err(FullSumError::from)
}

/// Exact negative log-likelihood by summing over every path. An empty path
/// set reports the same no-path condition as forward-backward.
pub fn bruteforce_loss(
    streams: &Streams<'_>,
    g: &AlignmentGraph,
    scales: &ScaleSet,
) -> Result<f64, FullSumError> {
    let frames = streams.frames();
    let ps = paths(g, frames)?;
    if ps.is_empty() {
        return Err(FullSumError::NoPath {
            frames,
            min_frames: g.min_path_length(),
        });
    }
    let scores: Vec<f64> = ps
        .iter()
        .map(|p| path_score(p, streams, g, scales))
        .collect();
    Ok(-log_sum_exp(scores.iter().copied()))
}

/// Exact state occupancies: the normalized weight of paths through each
/// (frame, state) cell.
pub fn bruteforce_occupancy(
    streams: &Streams<'_>,
    g: &AlignmentGraph,
    scales: &ScaleSet,
) -> Result<Array2<f64>, FullSumError> {
    let frames = streams.frames();
    let ps = paths(g, frames)?;
    if ps.is_empty() {
        return Err(FullSumError::NoPath {
            frames,
            min_frames: g.min_path_length(),
        });
    }
    let scores: Vec<f64> = ps
        .iter()
        .map(|p| path_score(p, streams, g, scales))
        .collect();
    let total = log_sum_exp(scores.iter().copied());
    let mut gamma = Array2::zeros((frames, g.num_states()));
    for (p, &sc) in ps.iter().zip(&scores) {
        let w = (sc - total).exp();
        for (t, &s) in p.iter().enumerate() {
            gamma[[t, s]] += w;
        }
    }
    Ok(gamma)
}

/// Best path score by exhaustive search. Returns the first maximizing path
/// in lexicographic order.
pub fn bruteforce_best_path(
    streams: &Streams<'_>,
    g: &AlignmentGraph,
    scales: &ScaleSet,
) -> Result<(f64, Vec<usize>), FullSumError> {
    let frames = streams.frames();
    let ps = paths(g, frames)?;
    let mut best: Option<(f64, &[usize])> = None;
    for p in ps.iter() {
        let sc = path_score(p, streams, g, scales);
        if best.is_none_or(|(b, _)| sc > b) {
            best = Some((sc, p));
        }
    }
    best.map(|(s, p)| (s, p.to_vec()))
        .ok_or(FullSumError::NoPath {
            frames,
            min_frames: g.min_path_length(),
        })
}

/// Central finite-difference derivative of `f` with respect to each entry
/// of `x`.
pub fn central_differences<F>(x: &Array2<f64>, h: f64, mut f: F) -> Array2<f64>
where
    F: FnMut(&Array2<f64>) -> f64,
{
    let mut grad = Array2::zeros(x.dim());
    let mut probe = x.clone();
    for idx in ndarray::indices(x.dim()) {
        let orig = probe[idx];
        probe[idx] = orig + h;
        let plus = f(&probe);
        probe[idx] = orig - h;
        let minus = f(&probe);
        probe[idx] = orig;
        grad[idx] = (plus - minus) / (2.0 * h);
    }
    grad
}

/// Magnitude below which gradient entries are compared absolutely. Central
/// differences at h = 1e-5 carry rounding noise near `1e-16 * |loss| / h`,
/// about 1e-9 for losses near 100.
pub const FD_FLOOR: f64 = 1e-4;

/// Relative error used for gradient checks: `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

//! Windowed feed-forward encoder with log-softmax heads and manual
//! backpropagation.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use super::TrainError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    /// Input frames on each side of the window center.
    pub context: usize,
    /// Time downsampling factor.
    pub stride: usize,
    /// Hidden layer widths (tanh).
    pub hidden: Vec<usize>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            context: 4,
            stride: 4,
            hidden: vec![512, 512],
        }
    }
}

/// Output heads. Index order is also the parameter order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Left,
    Center,
    Right,
    Joint,
}

impl Head {
    pub const ALL: [Head; 4] = [Head::Left, Head::Center, Head::Right, Head::Joint];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Output size per head; `None` for absent heads.
pub type HeadDims = [Option<usize>; 4];

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `out x in`
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    fn zeros(out: usize, inp: usize) -> Self {
        Self {
            w: Array2::zeros((out, inp)),
            b: Array1::zeros(out),
        }
    }

    fn glorot<R: Rng>(rng: &mut R, out: usize, inp: usize) -> Self {
        let a = (6.0 / (inp + out) as f64).sqrt();
        let dist = Uniform::new_inclusive(-a, a).expect("valid range");
        Self {
            w: Array2::from_shape_fn((out, inp), |_| dist.sample(rng)),
            b: Array1::zeros(out),
        }
    }

    fn apply(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        x.dot(&self.w.t()) + &self.b
    }

    pub fn same_shape(&self, other: &Dense) -> bool {
        self.w.dim() == other.w.dim()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub input_dim: usize,
    pub layers: Vec<Dense>,
    pub heads: [Option<Dense>; 4],
}

/// Log-posterior streams, one `T x classes` matrix per present head.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutputs(pub [Option<Array2<f64>>; 4]);

impl HeadOutputs {
    pub fn get(&self, h: Head) -> Option<&Array2<f64>> {
        self.0[h.index()].as_ref()
    }

    pub fn frames(&self) -> usize {
        self.0.iter().flatten().next().map_or(0, |m| m.nrows())
    }
}

/// Activations kept for the backward pass.
pub struct ForwardCache {
    /// Network input followed by every hidden activation.
    acts: Vec<Array2<f64>>,
    pub outputs: HeadOutputs,
}

/// Number of output frames for `input_frames` at the given stride.
pub fn output_frames(input_frames: usize, stride: usize) -> usize {
    input_frames.div_ceil(stride)
}

fn log_softmax_rows(z: &mut Array2<f64>) {
    for mut row in z.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
}

/// (outputs, inputs) of a dense layer.
type Shape = (usize, usize);

impl Encoder {
    fn shapes(
        config: &EncoderConfig,
        input_dim: usize,
        heads: &HeadDims,
    ) -> (Vec<Shape>, [Option<Shape>; 4]) {
        let mut inp = (2 * config.context + 1) * input_dim;
        let mut layers = Vec::new();
        for &h in &config.hidden {
            layers.push((h, inp));
            inp = h;
        }
        let heads = heads.map(|d| d.map(|d| (d, inp)));
        (layers, heads)
    }

    pub fn zeros(config: EncoderConfig, input_dim: usize, heads: &HeadDims) -> Self {
        let (layers, head_shapes) = Self::shapes(&config, input_dim, heads);
        Self {
            layers: layers.iter().map(|&(o, i)| Dense::zeros(o, i)).collect(),
            heads: head_shapes.map(|s| s.map(|(o, i)| Dense::zeros(o, i))),
            config,
            input_dim,
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn random<R: Rng>(
        config: EncoderConfig,
        input_dim: usize,
        heads: &HeadDims,
        rng: &mut R,
    ) -> Self {
        let (layers, head_shapes) = Self::shapes(&config, input_dim, heads);
        let layers = layers
            .iter()
            .map(|&(o, i)| Dense::glorot(rng, o, i))
            .collect();
        let heads = head_shapes.map(|s| s.map(|(o, i)| Dense::glorot(rng, o, i)));
        Self {
            config,
            input_dim,
            layers,
            heads,
        }
    }

    /// A zero-valued encoder of identical shape, used as gradient buffer.
    pub fn zeros_like(&self) -> Self {
        let dims = self.head_dims();
        Self::zeros(self.config.clone(), self.input_dim, &dims)
    }

    pub fn head_dims(&self) -> HeadDims {
        self.heads
            .each_ref()
            .map(|h| h.as_ref().map(|d| d.w.nrows()))
    }

    /// Parameter tensors in a fixed order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for d in self.layers.iter().chain(self.heads.iter().flatten()) {
            out.push(d.w.as_slice().expect("standard layout"));
            out.push(d.b.as_slice().expect("standard layout"));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for d in self
            .layers
            .iter_mut()
            .chain(self.heads.iter_mut().flatten())
        {
            out.push(d.w.as_slice_mut().expect("standard layout"));
            out.push(d.b.as_slice_mut().expect("standard layout"));
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// `self += other`, elementwise.
    pub fn add_assign(&mut self, other: &Encoder) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            for x in t.iter_mut() {
                *x *= factor;
            }
        }
    }

    pub fn norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    /// Stacks `2k + 1` input frames around position `stride * t + stride / 2`
    /// for each output frame; frames outside the utterance are zero.
    pub fn windows(&self, feats: ArrayView2<'_, f64>) -> Array2<f64> {
        let (t0, d) = feats.dim();
        let k = self.config.context as isize;
        let stride = self.config.stride;
        let frames = output_frames(t0, stride);
        let width = (2 * k as usize + 1) * d;
        let mut x = Array2::zeros((frames, width));
        for t in 0..frames {
            let center = (stride * t + stride / 2) as isize;
            for (slot, off) in (-k..=k).enumerate() {
                let src = center + off;
                if src >= 0 && (src as usize) < t0 {
                    x.slice_mut(s![t, slot * d..(slot + 1) * d])
                        .assign(&feats.row(src as usize));
                }
            }
        }
        x
    }

    fn check_input(&self, feats: ArrayView2<'_, f64>) -> Result<(), TrainError> {
        if feats.ncols() != self.input_dim {
            return Err(TrainError::FeatureDim {
                expected: self.input_dim,
                got: feats.ncols(),
            });
        }
        if feats.nrows() == 0 {
            return Err(TrainError::EmptyUtterance);
        }
        Ok(())
    }

    pub fn forward(&self, feats: ArrayView2<'_, f64>) -> Result<ForwardCache, TrainError> {
        self.forward_heads(feats, [true; 4])
    }

    /// Forward pass computing only the heads selected by `mask`.
    pub fn forward_heads(
        &self,
        feats: ArrayView2<'_, f64>,
        mask: [bool; 4],
    ) -> Result<ForwardCache, TrainError> {
        self.check_input(feats)?;
        let mut acts = vec![self.windows(feats)];
        for layer in &self.layers {
            let mut h = layer.apply(acts.last().expect("input").view());
            h.mapv_inplace(f64::tanh);
            acts.push(h);
        }
        let top = acts.last().expect("input").view();
        let mut i = 0;
        let outputs = self.heads.each_ref().map(|h| {
            i += 1;
            h.as_ref().filter(|_| mask[i - 1]).map(|d| {
                let mut z = d.apply(top);
                log_softmax_rows(&mut z);
                z
            })
        });
        Ok(ForwardCache {
            acts,
            outputs: HeadOutputs(outputs),
        })
    }

    /// Per-head log-posteriors for one utterance, `ceil(T0 / stride)` frames.
    pub fn encode(&self, feats: ArrayView2<'_, f64>) -> Result<HeadOutputs, TrainError> {
        Ok(self.forward(feats)?.outputs)
    }

    /// Accumulates into `grad` the parameter gradient given gradients with
    /// respect to each head's log-posteriors.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        head_grads: &[Option<Array2<f64>>; 4],
        grad: &mut Encoder,
    ) {
        let top = cache.acts.last().expect("input");
        let mut dh = Array2::<f64>::zeros(top.dim());
        for (i, g) in head_grads.iter().enumerate() {
            let (Some(g), Some(d), Some(out)) = (g, &self.heads[i], &cache.outputs.0[i]) else {
                continue;
            };
            // Log-softmax Jacobian: dz = g - softmax * rowsum(g).
            let sums = g.sum_axis(Axis(1));
            let mut dz = g.clone();
            for ((mut row, &sum), lp) in dz.rows_mut().into_iter().zip(&sums).zip(out.rows()) {
                for (v, &l) in row.iter_mut().zip(lp) {
                    *v -= l.exp() * sum;
                }
            }
            let gd = grad.heads[i].as_mut().expect("gradient has the same heads");
            gd.w += &dz.t().dot(top);
            gd.b += &dz.sum_axis(Axis(0));
            dh += &dz.dot(&d.w);
        }
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let h = &cache.acts[l + 1];
            let input = &cache.acts[l];
            let da = dh * &h.mapv(|v| 1.0 - v * v);
            let gl = &mut grad.layers[l];
            gl.w += &da.t().dot(input);
            gl.b += &da.sum_axis(Axis(0));
            if l > 0 {
                dh = da.dot(&layer.w);
            } else {
                break;
            }
        }
    }

    /// Copies every layer and head of `src` whose shape matches. All
    /// hidden layers must match; returns the number of heads copied.
    pub fn load_from(&mut self, src: &Encoder) -> Result<usize, TrainError> {
        if self.config.context != src.config.context
            || self.config.stride != src.config.stride
            || self.input_dim != src.input_dim
            || self.layers.len() != src.layers.len()
            || self
                .layers
                .iter()
                .zip(&src.layers)
                .any(|(a, b)| !a.same_shape(b))
        {
            return Err(TrainError::Incompatible(
                "hidden layers differ from the initial checkpoint".into(),
            ));
        }
        self.layers.clone_from(&src.layers);
        let mut copied = 0;
        for (dst, s) in self.heads.iter_mut().zip(&src.heads) {
            if let (Some(d), Some(s)) = (dst.as_mut(), s) {
                if d.same_shape(s) {
                    d.clone_from(s);
                    copied += 1;
                }
            }
        }
        let joint = Head::Joint.index();
        if src.heads[joint].is_none() {
            if let (Some(dst), Some(center)) =
                (self.heads[joint].as_mut(), &src.heads[Head::Center.index()])
            {
                if compose_joint(dst, src.heads[Head::Left.index()].as_ref(), center) {
                    copied += 1;
                }
            }
        }
        Ok(copied)
    }
}

/// Sets joint logits to left plus center logits, so that the joint
/// posterior starts as the product of the two factors. A missing left
/// factor counts as uniform.
fn compose_joint(joint: &mut Dense, left: Option<&Dense>, center: &Dense) -> bool {
    let n = center.w.nrows();
    let inputs = center.w.ncols();
    if joint.w.dim() != ((n + 1) * n, inputs) || left.is_some_and(|l| l.w.dim() != (n + 1, inputs))
    {
        return false;
    }
    for lc in 0..=n {
        for c in 0..n {
            let row = lc * n + c;
            let mut w = joint.w.row_mut(row);
            w.assign(&center.w.row(c));
            joint.b[row] = center.b[c];
            if let Some(l) = left {
                w += &l.w.row(lc);
                joint.b[row] += l.b[lc];
            }
        }
    }
    true
}

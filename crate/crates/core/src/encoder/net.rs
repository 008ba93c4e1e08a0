//! The frame-level classifier: a pointwise input stage, a stack of temporal
//! convolutions with symmetric zero padding, and a pointwise output head.
//! Forward and backward passes are written directly against the matrix
//! buffers; the inner loops are contiguous so they vectorize.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::ctc::FrameLogits;
use crate::mat::Mat;

use super::features::FeatureConfig;

/// Architecture knobs for the trainable encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub hidden: usize,
    pub conv_width: usize,
    pub conv_stages: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            hidden: 128,
            conv_width: 9,
            conv_stages: 2,
        }
    }
}

impl EncoderConfig {
    pub fn assert_valid(&self) {
        assert!(self.hidden >= 1);
        assert!(self.conv_width >= 1 && self.conv_width % 2 == 1, "conv width must be odd");
    }
}

/// Shapes actually baked into a parameter set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arch {
    pub n_bands: usize,
    pub hidden: usize,
    pub conv_width: usize,
    pub conv_stages: usize,
    pub n_out: usize,
}

/// All trainable tensors, visited in one fixed order everywhere (gradient
/// accumulation, the optimizer, and checkpoint serialization).
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct NetTensors {
    pub w_in: Mat,            // n_bands x hidden
    pub b_in: Vec<f64>,       // hidden
    pub conv_w: Vec<Vec<Mat>>, // stage -> tap -> (hidden x hidden), row = input channel
    pub conv_b: Vec<Vec<f64>>,
    pub w_out: Mat,           // hidden x n_out
    pub b_out: Vec<f64>,      // n_out
}

impl NetTensors {
    pub fn zeros(arch: &Arch) -> Self {
        NetTensors {
            w_in: Mat::zeros(arch.n_bands, arch.hidden),
            b_in: vec![0.0; arch.hidden],
            conv_w: (0..arch.conv_stages)
                .map(|_| (0..arch.conv_width).map(|_| Mat::zeros(arch.hidden, arch.hidden)).collect())
                .collect(),
            conv_b: (0..arch.conv_stages).map(|_| vec![0.0; arch.hidden]).collect(),
            w_out: Mat::zeros(arch.hidden, arch.n_out),
            b_out: vec![0.0; arch.n_out],
        }
    }

    pub fn visit<'a>(&'a self, mut f: impl FnMut(&'a [f64])) {
        f(self.w_in.data());
        f(&self.b_in);
        for (ws, bs) in self.conv_w.iter().zip(&self.conv_b) {
            for w in ws {
                f(w.data());
            }
            f(bs);
        }
        f(self.w_out.data());
        f(&self.b_out);
    }

    pub fn visit_mut(&mut self, mut f: impl FnMut(&mut [f64])) {
        f(self.w_in.data_mut());
        f(&mut self.b_in);
        for (ws, bs) in self.conv_w.iter_mut().zip(&mut self.conv_b) {
            for w in ws {
                f(w.data_mut());
            }
            f(bs);
        }
        f(self.w_out.data_mut());
        f(&mut self.b_out);
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(|s| n += s.len());
        n
    }

    /// Flattens into `out` (cleared first), in visit order.
    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        out.clear();
        self.visit(|s| out.extend_from_slice(s));
    }

    /// Element-wise accumulate: `self += other`.
    pub fn accumulate(&mut self, other: &NetTensors) {
        let mut chunks: Vec<&[f64]> = Vec::new();
        other.visit(|s| chunks.push(s));
        let mut i = 0;
        self.visit_mut(|dst| {
            let src = chunks[i];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
            i += 1;
        });
    }

    /// Applies `f(param, aux)` pairing each scalar with `aux` in visit order.
    pub fn apply_flat(&mut self, aux: &[f64], mut f: impl FnMut(&mut f64, f64, usize)) {
        let mut cursor = 0;
        self.visit_mut(|dst| {
            for d in dst.iter_mut() {
                f(d, aux[cursor], cursor);
                cursor += 1;
            }
        });
    }
}

/// Trainable encoder parameters plus the fixed input normalization derived
/// from the feature floor.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub(crate) arch: Arch,
    pub(crate) input_shift: f64,
    pub(crate) input_scale: f64,
    pub(crate) tensors: NetTensors,
}

impl EncoderParams {
    /// Glorot-uniform initialization, deterministic in `seed`.
    pub fn init(
        feature: &FeatureConfig,
        encoder: &EncoderConfig,
        n_out: usize,
        seed: u64,
    ) -> Self {
        encoder.assert_valid();
        let mut params = Self::zeros(feature, encoder, n_out);
        let mut rng = StdRng::seed_from_u64(seed);
        let arch = params.arch.clone();

        let glorot = |rng: &mut StdRng, m: &mut Mat, fan_in: usize, fan_out: usize| {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in m.data_mut() {
                *v = rng.gen_range(-limit..limit);
            }
        };
        glorot(&mut rng, &mut params.tensors.w_in, arch.n_bands, arch.hidden);
        for stage in &mut params.tensors.conv_w {
            let fan = arch.conv_width * arch.hidden;
            for w in stage {
                glorot(&mut rng, w, fan, fan);
            }
        }
        glorot(&mut rng, &mut params.tensors.w_out, arch.hidden, n_out);
        params
    }

    /// All-zero parameters (zero logits for any input).
    pub fn zeros(feature: &FeatureConfig, encoder: &EncoderConfig, n_out: usize) -> Self {
        encoder.assert_valid();
        feature.assert_valid();
        let arch = Arch {
            n_bands: feature.n_bands,
            hidden: encoder.hidden,
            conv_width: encoder.conv_width,
            conv_stages: encoder.conv_stages,
            n_out,
        };
        // Input stage sees each frame's spectral shape: the per-frame mean
        // log energy is removed (so gain carries no weight) and the result
        // is scaled to roughly unit range.
        EncoderParams {
            tensors: NetTensors::zeros(&arch),
            arch,
            input_shift: 0.0,
            input_scale: 0.25,
        }
    }

    pub fn arch(&self) -> &Arch {
        &self.arch
    }

    /// Receptive field in frames: `1 + stages * (width - 1)`, always odd.
    pub fn receptive_field_frames(&self) -> usize {
        1 + self.arch.conv_stages * (self.arch.conv_width - 1)
    }

    pub fn param_count(&self) -> usize {
        self.tensors.param_count()
    }

    /// All parameters in visit order.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.tensors.visit(|s| out.extend_from_slice(s));
        out
    }

    /// Overwrites all parameters from a flat slice in visit order.
    pub fn set_flat(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.param_count(), "flat length mismatch");
        let mut cursor = 0;
        self.tensors.visit_mut(|dst| {
            dst.copy_from_slice(&values[cursor..cursor + dst.len()]);
            cursor += dst.len();
        });
    }

    pub fn all_finite(&self) -> bool {
        let mut ok = true;
        self.tensors.visit(|s| ok &= s.iter().all(|v| v.is_finite()));
        ok
    }
}

/// Activations kept around for the backward pass.
pub(crate) struct ForwardTrace {
    pub x_norm: Mat,
    /// Pre-activation of the input stage and each conv stage.
    pub pre: Vec<Mat>,
    /// Post-ReLU activations, same indexing as `pre`.
    pub post: Vec<Mat>,
    pub logits: Mat,
}

fn relu_of(pre: &Mat) -> Mat {
    let mut out = pre.clone();
    for v in out.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

/// Temporal convolution with symmetric zero padding.
fn conv_forward(input: &Mat, taps: &[Mat], bias: &[f64]) -> Mat {
    let frames = input.rows();
    let hidden = bias.len();
    let width = taps.len();
    let center = (width - 1) / 2;
    let mut out = Mat::zeros(frames, hidden);
    for t in 0..frames {
        let row = out.row_mut(t);
        row.copy_from_slice(bias);
        for (j, tap) in taps.iter().enumerate() {
            let ti = t as isize + j as isize - center as isize;
            if ti < 0 || ti >= frames as isize {
                continue;
            }
            let in_row = input.row(ti as usize);
            for (a, &x) in in_row.iter().enumerate() {
                if x == 0.0 {
                    continue;
                }
                let w_row = tap.row(a);
                for (o, w) in row.iter_mut().zip(w_row) {
                    *o += x * w;
                }
            }
        }
    }
    out
}

pub(crate) fn forward_trace(params: &EncoderParams, features: &Mat) -> ForwardTrace {
    assert!(!features.is_empty(), "features must be non-empty");
    assert_eq!(features.cols(), params.arch.n_bands, "band count mismatch");
    let frames = features.rows();
    let arch = &params.arch;
    let t = &params.tensors;

    let mut x_norm = features.clone();
    for t in 0..frames {
        let row = x_norm.row_mut(t);
        let mean = row.iter().sum::<f64>() / row.len() as f64;
        for v in row.iter_mut() {
            *v = (*v - mean - params.input_shift) * params.input_scale;
        }
    }

    let mut pre = Vec::with_capacity(1 + arch.conv_stages);
    let mut post = Vec::with_capacity(1 + arch.conv_stages);

    // Pointwise input stage.
    let mut h = Mat::zeros(frames, arch.hidden);
    for ti in 0..frames {
        let row = h.row_mut(ti);
        row.copy_from_slice(&t.b_in);
        let x_row = x_norm.row(ti);
        for (b, &x) in x_row.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let w_row = t.w_in.row(b);
            for (o, w) in row.iter_mut().zip(w_row) {
                *o += x * w;
            }
        }
    }
    let mut act = relu_of(&h);
    pre.push(h);
    post.push(act.clone());

    for stage in 0..arch.conv_stages {
        let h = conv_forward(&act, &t.conv_w[stage], &t.conv_b[stage]);
        act = relu_of(&h);
        pre.push(h);
        post.push(act.clone());
    }

    // Pointwise output head.
    let mut logits = Mat::zeros(frames, arch.n_out);
    for ti in 0..frames {
        let row = logits.row_mut(ti);
        row.copy_from_slice(&t.b_out);
        let h_row = act.row(ti);
        for (a, &x) in h_row.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let w_row = t.w_out.row(a);
            for (o, w) in row.iter_mut().zip(w_row) {
                *o += x * w;
            }
        }
    }

    ForwardTrace {
        x_norm,
        pre,
        post,
        logits,
    }
}

/// Frame-level logits; output frame `t` depends only on input frames within
/// `(receptive_field - 1)/2` of `t`.
pub fn forward(params: &EncoderParams, features: &Mat) -> FrameLogits {
    FrameLogits::new(forward_trace(params, features).logits)
}

/// Backpropagates `d_logits` through the trace, returning parameter grads.
pub(crate) fn backward(
    params: &EncoderParams,
    trace: &ForwardTrace,
    d_logits: &Mat,
) -> NetTensors {
    let arch = &params.arch;
    let t = &params.tensors;
    let frames = trace.logits.rows();
    let mut grads = NetTensors::zeros(arch);

    // Output head.
    let last_post = &trace.post[arch.conv_stages];
    let mut d_act = Mat::zeros(frames, arch.hidden);
    let w_out_t = t.w_out.transposed(); // n_out x hidden
    for ti in 0..frames {
        let dl = d_logits.row(ti);
        for (v, &g) in dl.iter().enumerate() {
            grads.b_out[v] += g;
        }
        let h_row = last_post.row(ti);
        for (a, &h) in h_row.iter().enumerate() {
            if h == 0.0 {
                continue;
            }
            let gw = grads.w_out.row_mut(a);
            for (gwv, &g) in gw.iter_mut().zip(dl) {
                *gwv += h * g;
            }
        }
        let da = d_act.row_mut(ti);
        for (v, &g) in dl.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let wt_row = w_out_t.row(v);
            for (o, w) in da.iter_mut().zip(wt_row) {
                *o += g * w;
            }
        }
    }

    // Conv stages, reversed.
    for stage in (0..arch.conv_stages).rev() {
        let pre = &trace.pre[stage + 1];
        let input = &trace.post[stage];
        let width = arch.conv_width;
        let center = (width - 1) / 2;

        // ReLU mask in place.
        for ti in 0..frames {
            let d_row = d_act.row_mut(ti);
            let p_row = pre.row(ti);
            for (d, &p) in d_row.iter_mut().zip(p_row) {
                if p <= 0.0 {
                    *d = 0.0;
                }
            }
        }

        let taps_t: Vec<Mat> = t.conv_w[stage].iter().map(|m| m.transposed()).collect();
        let mut d_input = Mat::zeros(frames, arch.hidden);
        for ti in 0..frames {
            let d_row = d_act.row(ti);
            for (o, &g) in d_row.iter().enumerate() {
                grads.conv_b[stage][o] += g;
            }
            for (j, tap_t) in taps_t.iter().enumerate() {
                let src = ti as isize + j as isize - center as isize;
                if src < 0 || src >= frames as isize {
                    continue;
                }
                let src = src as usize;
                // dW_j[a][o] += input[src][a] * d_row[o]
                let in_row = input.row(src);
                let gtap = &mut grads.conv_w[stage][j];
                for (a, &x) in in_row.iter().enumerate() {
                    if x == 0.0 {
                        continue;
                    }
                    let g_row = gtap.row_mut(a);
                    for (gv, &g) in g_row.iter_mut().zip(d_row) {
                        *gv += x * g;
                    }
                }
                // d_input[src][a] += sum_o d_row[o] * W_j[a][o]
                let di = d_input.row_mut(src);
                for (o, &g) in d_row.iter().enumerate() {
                    if g == 0.0 {
                        continue;
                    }
                    let wt_row = tap_t.row(o);
                    for (dv, w) in di.iter_mut().zip(wt_row) {
                        *dv += g * w;
                    }
                }
            }
        }
        d_act = d_input;
    }

    // Input stage.
    let pre0 = &trace.pre[0];
    for ti in 0..frames {
        let d_row = d_act.row_mut(ti);
        let p_row = pre0.row(ti);
        for (d, &p) in d_row.iter_mut().zip(p_row) {
            if p <= 0.0 {
                *d = 0.0;
            }
        }
        for (o, &g) in d_row.iter().enumerate() {
            grads.b_in[o] += g;
        }
        let x_row = trace.x_norm.row(ti);
        for (b, &x) in x_row.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let g_row = grads.w_in.row_mut(b);
            for (gv, &g) in g_row.iter_mut().zip(d_row.iter()) {
                *gv += x * g;
            }
        }
    }

    grads
}

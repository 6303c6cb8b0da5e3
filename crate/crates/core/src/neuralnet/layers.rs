//! Convolution, pooling, dense and activation layers with hand-written
//! backward passes. Backward functions accumulate parameter gradients into a
//! layer-shaped gradient buffer (`+=`), so one buffer can collect the
//! contributions of several time steps or samples.

use rand::Rng;

use super::tensor::{affine, axpy, dot, matvec_t_acc, outer_acc, Tensor};
use super::{NnError, Parameters};

/// 3×3 convolution, stride 1, zero padding 1 (spatial size preserved).
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    /// `[out, in, 3, 3]`
    pub weight: Tensor,
    /// `[out]`
    pub bias: Tensor,
}

impl Conv2d {
    pub fn zeros(in_channels: usize, out_channels: usize) -> Self {
        Self { weight: Tensor::zeros(&[out_channels, in_channels, 3, 3]), bias: Tensor::zeros(&[out_channels]) }
    }

    /// He-uniform weights, zero bias.
    pub fn init(in_channels: usize, out_channels: usize, rng: &mut impl Rng) -> Self {
        let mut c = Self::zeros(in_channels, out_channels);
        let bound = (6.0 / (9 * in_channels) as f64).sqrt();
        c.weight.data_mut().iter_mut().for_each(|w| *w = rng.random_range(-bound..bound));
        c
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor, NnError> {
        let &[c, h, w] = input.shape() else {
            return Err(NnError::ShapeMismatch(format!("conv2d input must be [C,H,W], got {:?}", input.shape())));
        };
        if c != self.in_channels() {
            return Err(NnError::ShapeMismatch(format!(
                "conv2d expects {} input channels, got {c}",
                self.in_channels()
            )));
        }
        let mut out = Tensor::zeros(&[self.out_channels(), h, w]);
        self.forward_raw(input.data(), h, w, out.data_mut());
        Ok(out)
    }

    pub(crate) fn forward_raw(&self, input: &[f64], h: usize, w: usize, out: &mut [f64]) {
        let plane = h * w;
        let cols = im2col(input, self.in_channels(), h, w);
        let rows = 9 * self.in_channels();
        for (o, out_plane) in out.chunks_exact_mut(plane).enumerate() {
            out_plane.fill(self.bias.data()[o]);
            let k = &self.weight.data()[o * rows..(o + 1) * rows];
            for (&wv, col) in k.iter().zip(cols.chunks_exact(plane)) {
                axpy(wv, col, out_plane);
            }
        }
    }

    /// Accumulates weight/bias gradients into `grads`; returns the input
    /// gradient when `want_input` is set.
    pub fn backward(
        &self,
        input: &Tensor,
        grad_out: &Tensor,
        grads: &mut Conv2d,
        want_input: bool,
    ) -> Result<Option<Tensor>, NnError> {
        let &[_, h, w] = input.shape() else {
            return Err(NnError::ShapeMismatch("conv2d backward input must be [C,H,W]".into()));
        };
        grad_out.expect_shape(&[self.out_channels(), h, w], "conv2d grad_out")?;
        let mut gin = want_input.then(|| input.zeros_like());
        self.backward_raw(input.data(), grad_out.data(), h, w, grads, gin.as_mut().map(|g| g.data_mut()));
        Ok(gin)
    }

    pub(crate) fn backward_raw(
        &self,
        input: &[f64],
        grad_out: &[f64],
        h: usize,
        w: usize,
        grads: &mut Conv2d,
        grad_in: Option<&mut [f64]>,
    ) {
        let plane = h * w;
        let cols = im2col(input, self.in_channels(), h, w);
        let rows = 9 * self.in_channels();
        for (o, g) in grad_out.chunks_exact(plane).enumerate() {
            grads.bias.data_mut()[o] += g.iter().sum::<f64>();
            let dk = &mut grads.weight.data_mut()[o * rows..(o + 1) * rows];
            for (d, col) in dk.iter_mut().zip(cols.chunks_exact(plane)) {
                *d += dot(g, col);
            }
        }
        if let Some(gin) = grad_in {
            let mut dcols = vec![0.0; cols.len()];
            for (o, g) in grad_out.chunks_exact(plane).enumerate() {
                let k = &self.weight.data()[o * rows..(o + 1) * rows];
                for (&wv, dcol) in k.iter().zip(dcols.chunks_exact_mut(plane)) {
                    axpy(wv, g, dcol);
                }
            }
            col2im_acc(&dcols, self.in_channels(), h, w, gin);
        }
    }
}

/// Unfolds `[C, H, W]` into `[C·9, H·W]`: row `c·9 + tap` holds the input
/// seen by kernel tap `tap` at every output position (zero outside).
fn im2col(input: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let plane = h * w;
    let mut cols = vec![0.0; c * 9 * plane];
    for ch in 0..c {
        let src = &input[ch * plane..(ch + 1) * plane];
        for tap in 0..9 {
            let dst = &mut cols[(ch * 9 + tap) * plane..(ch * 9 + tap + 1) * plane];
            for_tap_rows(tap, h, w, |y_out, y_in, x0, x1, x_in| {
                dst[y_out * w + x0..y_out * w + x1].copy_from_slice(&src[y_in * w + x_in..y_in * w + x_in + x1 - x0]);
            });
        }
    }
    cols
}

/// Adjoint of [`im2col`], added into `out`.
fn col2im_acc(cols: &[f64], c: usize, h: usize, w: usize, out: &mut [f64]) {
    let plane = h * w;
    for ch in 0..c {
        let dst = &mut out[ch * plane..(ch + 1) * plane];
        for tap in 0..9 {
            let src = &cols[(ch * 9 + tap) * plane..(ch * 9 + tap + 1) * plane];
            for_tap_rows(tap, h, w, |y_out, y_in, x0, x1, x_in| {
                let d = &mut dst[y_in * w + x_in..y_in * w + x_in + x1 - x0];
                for (a, b) in d.iter_mut().zip(&src[y_out * w + x0..y_out * w + x1]) {
                    *a += b;
                }
            });
        }
    }
}

/// For one kernel tap, visits each output row whose shifted input row exists,
/// with the valid output columns `x0..x1` and the first input column `x_in`.
#[inline]
fn for_tap_rows(tap: usize, h: usize, w: usize, mut f: impl FnMut(usize, usize, usize, usize, usize)) {
    let (dy, dx) = ((tap / 3) as isize - 1, (tap % 3) as isize - 1);
    let x0 = (-dx).max(0) as usize;
    let x1 = (w as isize - dx.max(0)).max(0) as usize;
    if x1 <= x0 {
        return;
    }
    let x_in = (x0 as isize + dx) as usize;
    let y0 = (-dy).max(0) as usize;
    let y1 = (h as isize - dy.max(0)).max(0) as usize;
    for y in y0..y1 {
        f(y, (y as isize + dy) as usize, x0, x1, x_in);
    }
}

impl Parameters for Conv2d {
    fn params(&self) -> Vec<&Tensor> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Output of [`maxpool2`]: pooled values plus the flat input index each
/// output was taken from.
#[derive(Clone, Debug, PartialEq)]
pub struct Pooled {
    pub output: Tensor,
    pub argmax: Vec<usize>,
}

/// Non-overlapping 2×2 max pooling over `[C, H, W]`. Odd edges pool over the
/// cells that exist. Ties go to the first cell in row-major patch order.
pub fn maxpool2(input: &Tensor) -> Result<Pooled, NnError> {
    let &[c, h, w] = input.shape() else {
        return Err(NnError::ShapeMismatch(format!("maxpool input must be [C,H,W], got {:?}", input.shape())));
    };
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let mut output = Tensor::zeros(&[c, oh, ow]);
    let mut argmax = vec![0; c * oh * ow];
    maxpool2_raw(input.data(), c, h, w, output.data_mut(), &mut argmax);
    Ok(Pooled { output, argmax })
}

pub(crate) fn maxpool2_raw(input: &[f64], c: usize, h: usize, w: usize, out: &mut [f64], argmax: &mut [usize]) {
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = usize::MAX;
                for y in 2 * oy..(2 * oy + 2).min(h) {
                    for x in 2 * ox..(2 * ox + 2).min(w) {
                        let idx = (ch * h + y) * w + x;
                        if best == usize::MAX || input[idx] > input[best] {
                            best = idx;
                        }
                    }
                }
                let o = (ch * oh + oy) * ow + ox;
                out[o] = input[best];
                argmax[o] = best;
            }
        }
    }
}

/// Routes each output gradient to the input cell it was pooled from.
pub fn maxpool2_backward(grad_out: &[f64], argmax: &[usize], input_len: usize) -> Vec<f64> {
    let mut g = vec![0.0; input_len];
    for (&go, &i) in grad_out.iter().zip(argmax) {
        g[i] += go;
    }
    g
}

/// Nearest-neighbour 2× upsampling of `[C, H, W]`, cropped to `[C, th, tw]`
/// (`th ≤ 2H`, `tw ≤ 2W`).
pub fn upsample2_crop(input: &[f64], c: usize, h: usize, w: usize, th: usize, tw: usize) -> Vec<f64> {
    debug_assert!(th <= 2 * h && tw <= 2 * w);
    let mut out = vec![0.0; c * th * tw];
    for ch in 0..c {
        for y in 0..th {
            let src = &input[(ch * h + y / 2) * w..(ch * h + y / 2 + 1) * w];
            let dst = &mut out[(ch * th + y) * tw..(ch * th + y + 1) * tw];
            for (x, d) in dst.iter_mut().enumerate() {
                *d = src[x / 2];
            }
        }
    }
    out
}

pub fn upsample2_crop_backward(grad_out: &[f64], c: usize, h: usize, w: usize, th: usize, tw: usize) -> Vec<f64> {
    let mut g = vec![0.0; c * h * w];
    for ch in 0..c {
        for y in 0..th {
            for x in 0..tw {
                g[(ch * h + y / 2) * w + x / 2] += grad_out[(ch * th + y) * tw + x];
            }
        }
    }
    g
}

/// Fully connected layer `W x + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    /// `[out, in]`
    pub weight: Tensor,
    /// `[out]`
    pub bias: Tensor,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { weight: Tensor::zeros(&[outputs, inputs]), bias: Tensor::zeros(&[outputs]) }
    }

    /// Glorot-uniform weights scaled by `gain`, zero bias.
    pub fn init(inputs: usize, outputs: usize, gain: f64, rng: &mut impl Rng) -> Self {
        let mut d = Self::zeros(inputs, outputs);
        let bound = gain * (6.0 / (inputs + outputs) as f64).sqrt();
        d.weight.data_mut().iter_mut().for_each(|w| *w = rng.random_range(-bound..bound));
        d
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        if x.len() != self.inputs() {
            return Err(NnError::ShapeMismatch(format!("dense expects {} inputs, got {}", self.inputs(), x.len())));
        }
        let mut out = vec![0.0; self.outputs()];
        affine(self.weight.data(), self.bias.data(), x, &mut out);
        Ok(out)
    }

    /// Accumulates parameter gradients and returns `dL/dx`.
    pub fn backward(&self, x: &[f64], grad_out: &[f64], grads: &mut Dense) -> Vec<f64> {
        outer_acc(grad_out, x, grads.weight.data_mut());
        for (b, g) in grads.bias.data_mut().iter_mut().zip(grad_out) {
            *b += g;
        }
        let mut dx = vec![0.0; x.len()];
        matvec_t_acc(self.weight.data(), grad_out, &mut dx);
        dx
    }
}

impl Parameters for Dense {
    fn params(&self) -> Vec<&Tensor> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight, &mut self.bias]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    pub fn eval(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative expressed through the activation's output `y`.
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => f64::from(u8::from(y > 0.0)),
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }

    pub fn apply_in_place(self, x: &mut [f64]) {
        x.iter_mut().for_each(|v| *v = self.eval(*v));
    }

    /// `grad ⊙ f'(x)` given the outputs `y = f(x)`.
    pub fn backward_in_place(self, y: &[f64], grad: &mut [f64]) {
        for (g, &y) in grad.iter_mut().zip(y) {
            *g *= self.derivative_from_output(y);
        }
    }
}

pub fn activation(x: &Tensor, kind: Activation) -> Tensor {
    let mut y = x.clone();
    kind.apply_in_place(y.data_mut());
    y
}

//! Convolutional-recurrent variational auto-encoder over isovist sequences.
//!
//! Encoder, per frame: `conv(1→10) → relu → pool → conv(10→10) → relu → pool
//! → flatten`. A GRU reads the `t` frame vectors in order from a zero state,
//! and its last state feeds two dense heads for `mu` and `logvar`.
//!
//! Decoder: a dense layer projects `z` to the first GRU input. At each step
//! the hidden state goes through a dense layer and a relu to a
//! `10 × s2 × s2` feature block, which is both the next step's GRU input and
//! the seed of that step's frame: `upsample → conv → relu → upsample → conv →
//! relu → conv(10→1) → sigmoid`, cropping where upsampling overshoots.
//!
//! Checkpoint layout (little-endian): `b"IVAE"`, `u32` version, `u32` t,
//! `u32` window, `u32` hidden, `u32` latent, `u32` filters, `f64` beta,
//! `u64` parameter count, then every parameter as `f64` in the order of
//! [`Parameters::params`] for [`VaeModel`].

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::exec::{mix_seed, Execution};
use crate::neuralnet::{
    affine, bce_grad_from_logits, gru_step_backward, gru_step_cached, kl_grad, maxpool2_backward, maxpool2_raw,
    sigmoid, upsample2_crop, upsample2_crop_backward, Activation, Conv2d, Dense, GruCache, GruParams, NnError,
    Parameters, Signature, Tensor, BCE_EPS,
};
use crate::sequences::{Dataset, SequenceRecord};

pub const FILTERS: usize = 10;
pub const DEFAULT_HIDDEN: usize = 250;
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"IVAE";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Samples per gradient-accumulation chunk. Chunks are the unit of parallel
/// work; their sums are reduced in ascending order, so the batch gradient
/// does not depend on the execution strategy.
const CHUNK: usize = 8;

#[derive(Debug, thiserror::Error)]
pub enum VaeError {
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Shape(#[from] NnError),
    #[error("dataset does not match the model: {0}")]
    HeaderMismatch(String),
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error("checkpoint i/o failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("training diverged: non-finite loss in epoch {0}")]
    Diverged(usize),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VaeConfig {
    /// Frames per sequence (odd).
    pub t: usize,
    /// Isovist window side `W`.
    pub window: usize,
    pub hidden: usize,
    /// Latent dimensionality `d`.
    pub latent: usize,
    /// Weight of the KL term.
    pub beta: f64,
}

impl VaeConfig {
    pub fn new(t: usize, window: usize) -> Self {
        Self { t, window, hidden: DEFAULT_HIDDEN, latent: 1, beta: 1.0 }
    }

    pub fn validate(&self) -> Result<(), VaeError> {
        let bad = |m: String| Err(VaeError::InvalidConfig(m));
        if self.t == 0 || self.t.is_multiple_of(2) {
            return bad(format!("t must be odd and at least 1, got {}", self.t));
        }
        if self.window < 5 {
            return bad(format!("window must be at least 5, got {}", self.window));
        }
        if self.latent == 0 || self.hidden == 0 {
            return bad("latent and hidden sizes must be positive".into());
        }
        if !self.beta.is_finite() || self.beta < 0.0 {
            return bad(format!("beta must be finite and non-negative, got {}", self.beta));
        }
        Ok(())
    }

    /// Side lengths after the first and second pooling.
    pub fn pooled_sides(&self) -> (usize, usize) {
        let s1 = self.window.div_ceil(2);
        (s1, s1.div_ceil(2))
    }

    /// Length of one flattened frame feature vector.
    pub fn feature_len(&self) -> usize {
        let s2 = self.pooled_sides().1;
        FILTERS * s2 * s2
    }

    pub fn frame_len(&self) -> usize {
        self.window * self.window
    }

    pub fn input_len(&self) -> usize {
        self.t * self.frame_len()
    }

    pub fn input_shape(&self) -> [usize; 4] {
        [self.t, 1, self.window, self.window]
    }
}

/// Posterior parameters of one sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentCode {
    pub mu: Tensor,
    pub logvar: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VaeModel {
    config: VaeConfig,
    pub enc_conv1: Conv2d,
    pub enc_conv2: Conv2d,
    pub enc_gru: GruParams,
    pub mu_head: Dense,
    pub logvar_head: Dense,
    pub dec_in: Dense,
    pub dec_gru: GruParams,
    pub dec_out: Dense,
    pub dec_conv1: Conv2d,
    pub dec_conv2: Conv2d,
    pub dec_conv3: Conv2d,
}

impl Parameters for VaeModel {
    fn params(&self) -> Vec<&Tensor> {
        let mut v = self.enc_conv1.params();
        v.extend(self.enc_conv2.params());
        v.extend(self.enc_gru.params());
        v.extend(self.mu_head.params());
        v.extend(self.logvar_head.params());
        v.extend(self.dec_in.params());
        v.extend(self.dec_gru.params());
        v.extend(self.dec_out.params());
        v.extend(self.dec_conv1.params());
        v.extend(self.dec_conv2.params());
        v.extend(self.dec_conv3.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.enc_conv1.params_mut();
        v.extend(self.enc_conv2.params_mut());
        v.extend(self.enc_gru.params_mut());
        v.extend(self.mu_head.params_mut());
        v.extend(self.logvar_head.params_mut());
        v.extend(self.dec_in.params_mut());
        v.extend(self.dec_gru.params_mut());
        v.extend(self.dec_out.params_mut());
        v.extend(self.dec_conv1.params_mut());
        v.extend(self.dec_conv2.params_mut());
        v.extend(self.dec_conv3.params_mut());
        v
    }
}

/// Batch-mean loss terms. `loss = bce + beta · kl / (t·W²)`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ElboTerms {
    pub loss: f64,
    pub bce: f64,
    pub kl: f64,
}

struct EncFrame {
    x: Vec<f64>,
    y1: Vec<f64>,
    arg1: Vec<usize>,
    p1: Vec<f64>,
    y2: Vec<f64>,
    arg2: Vec<usize>,
}

struct EncPass {
    frames: Vec<EncFrame>,
    gru: Vec<GruCache>,
    h_last: Vec<f64>,
    mu: Vec<f64>,
    logvar: Vec<f64>,
}

struct DecFrame {
    feat: Vec<f64>,
    u1: Vec<f64>,
    v1: Vec<f64>,
    u2: Vec<f64>,
    v2: Vec<f64>,
    logits: Vec<f64>,
}

struct DecPass {
    gru: Vec<GruCache>,
    hs: Vec<Vec<f64>>,
    frames: Vec<DecFrame>,
}

impl VaeModel {
    /// Randomly initialised model (He-uniform convolutions, Glorot dense and
    /// recurrent weights, zero biases).
    pub fn new(config: VaeConfig, seed: u64) -> Result<Self, VaeError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (f, h, d) = (config.feature_len(), config.hidden, config.latent);
        Ok(Self {
            config,
            enc_conv1: Conv2d::init(1, FILTERS, &mut rng),
            enc_conv2: Conv2d::init(FILTERS, FILTERS, &mut rng),
            enc_gru: GruParams::init(f, h, &mut rng),
            mu_head: Dense::init(h, d, 1.0, &mut rng),
            logvar_head: Dense::init(h, d, 1.0, &mut rng),
            dec_in: Dense::init(d, f, 1.0, &mut rng),
            dec_gru: GruParams::init(f, h, &mut rng),
            dec_out: Dense::init(h, f, 1.0, &mut rng),
            dec_conv1: Conv2d::init(FILTERS, FILTERS, &mut rng),
            dec_conv2: Conv2d::init(FILTERS, FILTERS, &mut rng),
            dec_conv3: Conv2d::init(FILTERS, 1, &mut rng),
        })
    }

    /// All-zero model with this configuration; used as a gradient buffer.
    pub fn zeros(config: VaeConfig) -> Result<Self, VaeError> {
        config.validate()?;
        let (f, h, d) = (config.feature_len(), config.hidden, config.latent);
        Ok(Self {
            config,
            enc_conv1: Conv2d::zeros(1, FILTERS),
            enc_conv2: Conv2d::zeros(FILTERS, FILTERS),
            enc_gru: GruParams::zeros(f, h),
            mu_head: Dense::zeros(h, d),
            logvar_head: Dense::zeros(h, d),
            dec_in: Dense::zeros(d, f),
            dec_gru: GruParams::zeros(f, h),
            dec_out: Dense::zeros(h, f),
            dec_conv1: Conv2d::zeros(FILTERS, FILTERS),
            dec_conv2: Conv2d::zeros(FILTERS, FILTERS),
            dec_conv3: Conv2d::zeros(FILTERS, 1),
        })
    }

    pub fn config(&self) -> &VaeConfig {
        &self.config
    }

    fn zeros_like(&self) -> Self {
        Self::zeros(self.config).expect("configuration was validated on construction")
    }

    fn check_input(&self, seq: &Tensor) -> Result<(), VaeError> {
        seq.expect_shape(&self.config.input_shape(), "sequence")?;
        Ok(())
    }

    fn check_latent(&self, z: &Tensor) -> Result<(), VaeError> {
        z.expect_shape(&[self.config.latent], "latent vector")?;
        Ok(())
    }

    pub fn encode(&self, seq: &Tensor) -> Result<LatentCode, VaeError> {
        self.check_input(seq)?;
        let pass = self.encode_pass(seq.data(), None);
        let d = self.config.latent;
        Ok(LatentCode { mu: Tensor::from_vec(&[d], pass.mu)?, logvar: Tensor::from_vec(&[d], pass.logvar)? })
    }

    /// Frame probabilities `[t, 1, W, W]`, each strictly inside `(0, 1)`.
    pub fn decode(&self, z: &Tensor) -> Result<Tensor, VaeError> {
        self.check_latent(z)?;
        let pass = self.decode_pass(z.data(), None);
        let probs = pass
            .frames
            .iter()
            .flat_map(|f| f.logits.iter().map(|&a| sigmoid(a).clamp(BCE_EPS, 1.0 - BCE_EPS)))
            .collect();
        Ok(Tensor::from_vec(&self.config.input_shape(), probs)?)
    }

    /// Posterior mean; the deterministic code used for annotation.
    pub fn predict_latent(&self, seq: &Tensor) -> Result<Tensor, VaeError> {
        Ok(self.encode(seq)?.mu)
    }

    /// Decoded posterior mean.
    pub fn reconstruct(&self, seq: &Tensor) -> Result<Tensor, VaeError> {
        self.decode(&self.predict_latent(seq)?)
    }

    /// Batch loss and its gradient with respect to every parameter.
    /// `noise[i]` is the standard-normal draw used to sample `z` for
    /// `batch[i]`.
    pub fn elbo_loss(
        &self,
        batch: &[Tensor],
        noise: &[Tensor],
        beta: f64,
        exec: Execution,
    ) -> Result<(ElboTerms, VaeModel), VaeError> {
        self.check_batch(batch, noise)?;
        let xs: Vec<&[f64]> = batch.iter().map(|t| t.data()).collect();
        let ns: Vec<&[f64]> = noise.iter().map(|t| t.data()).collect();
        Ok(self.batch_gradient(&xs, &ns, beta, exec))
    }

    /// Batch loss together with a hash of every branch decision taken (relu
    /// signs, pooling winners, probability clamps). Two parameter settings
    /// with equal signatures lie on the same smooth piece of the loss.
    pub fn loss_signature(&self, batch: &[Tensor], noise: &[Tensor], beta: f64) -> Result<(f64, u64), VaeError> {
        self.check_batch(batch, noise)?;
        let mut sig = Signature::new();
        let mut loss = 0.0;
        for (x, n) in batch.iter().zip(noise) {
            loss += self.sample(x.data(), n.data(), beta, 1.0, None, Some(&mut sig)).loss;
        }
        Ok((loss / batch.len().max(1) as f64, sig.finish()))
    }

    fn check_batch(&self, batch: &[Tensor], noise: &[Tensor]) -> Result<(), VaeError> {
        if batch.len() != noise.len() {
            return Err(
                NnError::ShapeMismatch(format!("{} sequences but {} noise vectors", batch.len(), noise.len())).into()
            );
        }
        for (x, n) in batch.iter().zip(noise) {
            self.check_input(x)?;
            self.check_latent(n)?;
        }
        Ok(())
    }

    fn batch_gradient(&self, xs: &[&[f64]], noise: &[&[f64]], beta: f64, exec: Execution) -> (ElboTerms, VaeModel) {
        let b = xs.len();
        let scale = 1.0 / b.max(1) as f64;
        let chunks = exec.map(b.div_ceil(CHUNK), |c| {
            let mut g = self.zeros_like();
            let mut terms = ElboTerms::default();
            for i in c * CHUNK..((c + 1) * CHUNK).min(b) {
                let s = self.sample(xs[i], noise[i], beta, scale, Some(&mut g), None);
                terms.loss += s.loss;
                terms.bce += s.bce;
                terms.kl += s.kl;
            }
            (terms, g)
        });
        let mut total = ElboTerms::default();
        let mut grads = self.zeros_like();
        for (t, g) in chunks {
            total.loss += t.loss;
            total.bce += t.bce;
            total.kl += t.kl;
            grads.accumulate(&g).expect("chunk gradients share the model layout");
        }
        total.loss *= scale;
        total.bce *= scale;
        total.kl *= scale;
        (total, grads)
    }

    fn encode_frame(&self, x: &[f64], sig: Option<&mut Signature>) -> (EncFrame, Vec<f64>) {
        let w = self.config.window;
        let (s1, s2) = self.config.pooled_sides();
        let mut y1 = vec![0.0; FILTERS * w * w];
        self.enc_conv1.forward_raw(x, w, w, &mut y1);
        Activation::Relu.apply_in_place(&mut y1);
        let mut p1 = vec![0.0; FILTERS * s1 * s1];
        let mut arg1 = vec![0; p1.len()];
        maxpool2_raw(&y1, FILTERS, w, w, &mut p1, &mut arg1);
        let mut y2 = vec![0.0; FILTERS * s1 * s1];
        self.enc_conv2.forward_raw(&p1, s1, s1, &mut y2);
        Activation::Relu.apply_in_place(&mut y2);
        let mut feat = vec![0.0; FILTERS * s2 * s2];
        let mut arg2 = vec![0; feat.len()];
        maxpool2_raw(&y2, FILTERS, s1, s1, &mut feat, &mut arg2);
        if let Some(sig) = sig {
            sig.mask(&y1);
            sig.indices(&arg1);
            sig.mask(&y2);
            sig.indices(&arg2);
        }
        (EncFrame { x: x.to_vec(), y1, arg1, p1, y2, arg2 }, feat)
    }

    fn encode_pass(&self, seq: &[f64], mut sig: Option<&mut Signature>) -> EncPass {
        let n = self.config.frame_len();
        let mut h = vec![0.0; self.config.hidden];
        let mut frames = Vec::with_capacity(self.config.t);
        let mut gru = Vec::with_capacity(self.config.t);
        for x in seq.chunks_exact(n) {
            let (frame, feat) = self.encode_frame(x, sig.as_deref_mut());
            let (next, cache) = gru_step_cached(&feat, &h, &self.enc_gru);
            frames.push(frame);
            gru.push(cache);
            h = next;
        }
        let mut mu = vec![0.0; self.config.latent];
        let mut logvar = vec![0.0; self.config.latent];
        affine(self.mu_head.weight.data(), self.mu_head.bias.data(), &h, &mut mu);
        affine(self.logvar_head.weight.data(), self.logvar_head.bias.data(), &h, &mut logvar);
        EncPass { frames, gru, h_last: h, mu, logvar }
    }

    fn decode_frame(&self, feat: Vec<f64>) -> DecFrame {
        let w = self.config.window;
        let (s1, s2) = self.config.pooled_sides();
        let u1 = upsample2_crop(&feat, FILTERS, s2, s2, s1, s1);
        let mut v1 = vec![0.0; FILTERS * s1 * s1];
        self.dec_conv1.forward_raw(&u1, s1, s1, &mut v1);
        Activation::Relu.apply_in_place(&mut v1);
        let u2 = upsample2_crop(&v1, FILTERS, s1, s1, w, w);
        let mut v2 = vec![0.0; FILTERS * w * w];
        self.dec_conv2.forward_raw(&u2, w, w, &mut v2);
        Activation::Relu.apply_in_place(&mut v2);
        let mut logits = vec![0.0; w * w];
        self.dec_conv3.forward_raw(&v2, w, w, &mut logits);
        DecFrame { feat, u1, v1, u2, v2, logits }
    }

    fn decode_pass(&self, z: &[f64], mut sig: Option<&mut Signature>) -> DecPass {
        let t = self.config.t;
        let mut x = vec![0.0; self.config.feature_len()];
        affine(self.dec_in.weight.data(), self.dec_in.bias.data(), z, &mut x);
        let mut h = vec![0.0; self.config.hidden];
        let (mut gru, mut hs, mut frames) = (Vec::with_capacity(t), Vec::with_capacity(t), Vec::with_capacity(t));
        for _ in 0..t {
            let (next, cache) = gru_step_cached(&x, &h, &self.dec_gru);
            gru.push(cache);
            h = next;
            let mut feat = vec![0.0; self.config.feature_len()];
            affine(self.dec_out.weight.data(), self.dec_out.bias.data(), &h, &mut feat);
            Activation::Relu.apply_in_place(&mut feat);
            x = feat.clone();
            let frame = self.decode_frame(feat);
            if let Some(sig) = sig.as_deref_mut() {
                sig.mask(&frame.feat);
                sig.mask(&frame.v1);
                sig.mask(&frame.v2);
                for &a in &frame.logits {
                    let p = sigmoid(a);
                    sig.flag(p == p.clamp(BCE_EPS, 1.0 - BCE_EPS));
                }
            }
            hs.push(h.clone());
            frames.push(frame);
        }
        DecPass { gru, hs, frames }
    }

    /// Gradient of a frame's logits back to its feature block.
    fn decode_frame_backward(&self, f: &DecFrame, dlogits: &[f64], g: &mut VaeModel) -> Vec<f64> {
        let w = self.config.window;
        let (s1, s2) = self.config.pooled_sides();
        let mut dv2 = vec![0.0; f.v2.len()];
        self.dec_conv3.backward_raw(&f.v2, dlogits, w, w, &mut g.dec_conv3, Some(&mut dv2));
        Activation::Relu.backward_in_place(&f.v2, &mut dv2);
        let mut du2 = vec![0.0; f.u2.len()];
        self.dec_conv2.backward_raw(&f.u2, &dv2, w, w, &mut g.dec_conv2, Some(&mut du2));
        let mut dv1 = upsample2_crop_backward(&du2, FILTERS, s1, s1, w, w);
        Activation::Relu.backward_in_place(&f.v1, &mut dv1);
        let mut du1 = vec![0.0; f.u1.len()];
        self.dec_conv1.backward_raw(&f.u1, &dv1, s1, s1, &mut g.dec_conv1, Some(&mut du1));
        upsample2_crop_backward(&du1, FILTERS, s2, s2, s1, s1)
    }

    /// Forward pass of one sample and, when `grads` is given, its gradient
    /// scaled by `scale` and accumulated into `grads`.
    fn sample(
        &self,
        x: &[f64],
        noise: &[f64],
        beta: f64,
        scale: f64,
        grads: Option<&mut VaeModel>,
        mut sig: Option<&mut Signature>,
    ) -> ElboTerms {
        let cfg = &self.config;
        let enc = self.encode_pass(x, sig.as_deref_mut());
        let std: Vec<f64> = enc.logvar.iter().map(|lv| (0.5 * lv).exp()).collect();
        let z: Vec<f64> = (0..cfg.latent).map(|i| enc.mu[i] + std[i] * noise[i]).collect();
        let dec = self.decode_pass(&z, sig);

        let logits: Vec<f64> = dec.frames.iter().flat_map(|f| f.logits.iter().copied()).collect();
        let (bce, dlogits) = bce_grad_from_logits(&logits, x);
        let kl = -0.5 * enc.mu.iter().zip(&enc.logvar).map(|(m, lv)| 1.0 + lv - m * m - lv.exp()).sum::<f64>();
        let kl_weight = beta / cfg.input_len() as f64;
        let terms = ElboTerms { loss: bce + kl_weight * kl, bce, kl };
        let Some(g) = grads else { return terms };

        // decoder, newest step first
        let n = cfg.frame_len();
        let mut carry_dh = vec![0.0; cfg.hidden];
        let mut carry_dx: Option<Vec<f64>> = None;
        for k in (0..cfg.t).rev() {
            let frame = &dec.frames[k];
            let dl: Vec<f64> = dlogits[k * n..(k + 1) * n].iter().map(|v| v * scale).collect();
            let mut dfeat = self.decode_frame_backward(frame, &dl, g);
            if let Some(dx) = carry_dx.take() {
                dfeat.iter_mut().zip(dx).for_each(|(a, b)| *a += b);
            }
            Activation::Relu.backward_in_place(&frame.feat, &mut dfeat);
            let mut dh = self.dec_out.backward(&dec.hs[k], &dfeat, &mut g.dec_out);
            dh.iter_mut().zip(&carry_dh).for_each(|(a, b)| *a += b);
            let (dx, dh_prev) = gru_step_backward(&self.dec_gru, &dec.gru[k], &dh, &mut g.dec_gru);
            carry_dx = Some(dx);
            carry_dh = dh_prev;
        }
        let dx0 = carry_dx.unwrap_or_else(|| vec![0.0; cfg.feature_len()]);
        let dz = self.dec_in.backward(&z, &dx0, &mut g.dec_in);

        // latent sampling and KL
        let (kl_mu, kl_lv) = kl_grad(&enc.mu, &enc.logvar);
        let dmu: Vec<f64> = (0..cfg.latent).map(|i| dz[i] + scale * kl_weight * kl_mu[i]).collect();
        let dlv: Vec<f64> =
            (0..cfg.latent).map(|i| dz[i] * 0.5 * std[i] * noise[i] + scale * kl_weight * kl_lv[i]).collect();

        // encoder
        let mut dh = self.mu_head.backward(&enc.h_last, &dmu, &mut g.mu_head);
        let dh_lv = self.logvar_head.backward(&enc.h_last, &dlv, &mut g.logvar_head);
        dh.iter_mut().zip(dh_lv).for_each(|(a, b)| *a += b);
        let w = cfg.window;
        let (s1, _) = cfg.pooled_sides();
        for k in (0..cfg.t).rev() {
            let (dfeat, dh_prev) = gru_step_backward(&self.enc_gru, &enc.gru[k], &dh, &mut g.enc_gru);
            dh = dh_prev;
            let f = &enc.frames[k];
            let mut dy2 = maxpool2_backward(&dfeat, &f.arg2, f.y2.len());
            Activation::Relu.backward_in_place(&f.y2, &mut dy2);
            let mut dp1 = vec![0.0; f.p1.len()];
            self.enc_conv2.backward_raw(&f.p1, &dy2, s1, s1, &mut g.enc_conv2, Some(&mut dp1));
            let mut dy1 = maxpool2_backward(&dp1, &f.arg1, f.y1.len());
            Activation::Relu.backward_in_place(&f.y1, &mut dy1);
            self.enc_conv1.backward_raw(&f.x, &dy1, w, w, &mut g.enc_conv1, None);
        }
        terms
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.config;
        let mut out = Vec::with_capacity(40 + 8 * self.param_count());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        for v in [CHECKPOINT_VERSION, c.t as u32, c.window as u32, c.hidden as u32, c.latent as u32, FILTERS as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&c.beta.to_le_bytes());
        out.extend_from_slice(&(self.param_count() as u64).to_le_bytes());
        for t in self.params() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, VaeError> {
        let bad = |m: &str| VaeError::Format(m.to_string());
        if bytes.len() < 44 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(bad("missing IVAE header"));
        }
        let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        if u32_at(4) != CHECKPOINT_VERSION {
            return Err(VaeError::Format(format!("unsupported version {}", u32_at(4))));
        }
        if u32_at(24) as usize != FILTERS {
            return Err(VaeError::Format(format!("unsupported filter count {}", u32_at(24))));
        }
        let config = VaeConfig {
            t: u32_at(8) as usize,
            window: u32_at(12) as usize,
            hidden: u32_at(16) as usize,
            latent: u32_at(20) as usize,
            beta: f64::from_le_bytes(bytes[28..36].try_into().unwrap()),
        };
        config.validate().map_err(|e| VaeError::Format(e.to_string()))?;
        let count = u64::from_le_bytes(bytes[36..44].try_into().unwrap());
        let mut model = Self::zeros(config)?;
        if count != model.param_count() as u64 {
            return Err(bad("parameter count does not match the configuration"));
        }
        let body = &bytes[44..];
        if body.len() as u64 != count * 8 {
            return Err(bad("parameter block has the wrong length"));
        }
        let values: Vec<f64> = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        model.load_flat(&values)?;
        Ok(model)
    }
}

pub fn save_checkpoint(model: &VaeModel, path: impl AsRef<Path>) -> Result<(), VaeError> {
    let mut file = std::fs::File::create(path)?;
    file.write_all(&model.to_bytes())?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<VaeModel, VaeError> {
    VaeModel::from_bytes(&std::fs::read(path)?)
}

/// `mu + exp(logvar/2)·noise` in training mode, `mu` otherwise.
pub fn reparameterize(code: &LatentCode, noise: &Tensor, train_mode: bool) -> Result<Tensor, VaeError> {
    code.logvar.expect_shape(code.mu.shape(), "logvar")?;
    noise.expect_shape(code.mu.shape(), "noise")?;
    if !train_mode {
        return Ok(code.mu.clone());
    }
    let z = code
        .mu
        .data()
        .iter()
        .zip(code.logvar.data())
        .zip(noise.data())
        .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
        .collect();
    Ok(Tensor::from_vec(code.mu.shape(), z)?)
}

/// A dataset record as a `[t, 1, W, W]` tensor of 0/1 values.
pub fn record_tensor(record: &SequenceRecord) -> Tensor {
    let t = record.frames.len();
    let w = record.frames.first().map_or(0, |f| (f.len() as f64).sqrt() as usize);
    Tensor::from_vec(&[t, 1, w, w], record.values()).expect("record frames are square")
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub exec: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 100, batch_size: 64, learning_rate: 1e-3, seed: 0, exec: Execution::Parallel }
    }
}

/// Sample-weighted means over one epoch, measured before each batch's update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    pub loss: f64,
    pub bce: f64,
    pub kl: f64,
}

fn check_dataset(model: &VaeModel, dataset: &Dataset) -> Result<(), VaeError> {
    let h = dataset.header();
    let c = model.config();
    if h.t as usize != c.t || h.window as usize != c.window {
        return Err(VaeError::HeaderMismatch(format!(
            "dataset has t={}, W={} but the model expects t={}, W={}",
            h.t, h.window, c.t, c.window
        )));
    }
    Ok(())
}

/// Trains `model` in place with Adam. Each epoch shuffles the records with a
/// generator derived from `(seed, epoch)`, which also supplies the sampling
/// noise, so a run is reproducible from its seed. `on_epoch` sees the model
/// after every epoch (for checkpointing); an error from it stops training.
pub fn train(
    model: &mut VaeModel,
    dataset: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&VaeModel, &EpochStats) -> Result<(), VaeError>,
) -> Result<Vec<EpochStats>, VaeError> {
    check_dataset(model, dataset)?;
    if cfg.batch_size == 0 {
        return Err(VaeError::InvalidConfig("batch size must be positive".into()));
    }
    if cfg.epochs == 0 || dataset.is_empty() {
        return Ok(Vec::new());
    }
    let adam = crate::neuralnet::AdamConfig { lr: cfg.learning_rate, ..Default::default() };
    let mut state = crate::neuralnet::AdamState::new(model);
    let d = model.config().latent;
    let beta = model.config().beta;
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, epoch as u64));
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(&mut rng);
        let mut sums = ElboTerms::default();
        for idx in order.chunks(cfg.batch_size) {
            let xs: Vec<Vec<f64>> = idx.iter().map(|&i| dataset.records()[i].values()).collect();
            let noise: Vec<Vec<f64>> =
                idx.iter().map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect()).collect();
            let xr: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
            let nr: Vec<&[f64]> = noise.iter().map(Vec::as_slice).collect();
            let (terms, grads) = model.batch_gradient(&xr, &nr, beta, cfg.exec);
            if !terms.loss.is_finite() || !grads.all_finite() {
                return Err(VaeError::Diverged(epoch));
            }
            let n = idx.len() as f64;
            sums.loss += terms.loss * n;
            sums.bce += terms.bce * n;
            sums.kl += terms.kl * n;
            crate::neuralnet::adam_step(model, &grads, &mut state, &adam)?;
        }
        let n = dataset.len() as f64;
        let stats = EpochStats { epoch, loss: sums.loss / n, bce: sums.bce / n, kl: sums.kl / n };
        on_epoch(model, &stats)?;
        trace.push(stats);
    }
    Ok(trace)
}

/// Posterior means of every record, in dataset order.
pub fn predict_latents(model: &VaeModel, dataset: &Dataset, exec: Execution) -> Result<Vec<Vec<f64>>, VaeError> {
    check_dataset(model, dataset)?;
    Ok(exec.map(dataset.len(), |i| model.encode_pass(&dataset.records()[i].values(), None).mu))
}

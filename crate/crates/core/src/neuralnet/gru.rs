use rand::Rng;

use super::layers::sigmoid;
use super::tensor::{affine, matvec_acc, matvec_t_acc, outer_acc, Tensor};
use super::{NnError, Parameters};

/// Weights of a gated recurrent unit. Input matrices are `[hidden, input]`,
/// recurrent matrices `[hidden, hidden]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GruParams {
    pub w_z: Tensor,
    pub u_z: Tensor,
    pub b_z: Tensor,
    pub w_r: Tensor,
    pub u_r: Tensor,
    pub b_r: Tensor,
    pub w_h: Tensor,
    pub u_h: Tensor,
    pub b_h: Tensor,
}

impl GruParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        let w = || Tensor::zeros(&[hidden, input]);
        let u = || Tensor::zeros(&[hidden, hidden]);
        let b = || Tensor::zeros(&[hidden]);
        Self { w_z: w(), u_z: u(), b_z: b(), w_r: w(), u_r: u(), b_r: b(), w_h: w(), u_h: u(), b_h: b() }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(input, hidden);
        let wb = (6.0 / (input + hidden) as f64).sqrt();
        let ub = (3.0 / hidden as f64).sqrt();
        for w in [&mut p.w_z, &mut p.w_r, &mut p.w_h] {
            w.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-wb..wb));
        }
        for u in [&mut p.u_z, &mut p.u_r, &mut p.u_h] {
            u.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-ub..ub));
        }
        p
    }

    pub fn input_size(&self) -> usize {
        self.w_z.shape()[1]
    }

    pub fn hidden_size(&self) -> usize {
        self.w_z.shape()[0]
    }
}

impl Parameters for GruParams {
    fn params(&self) -> Vec<&Tensor> {
        vec![&self.w_z, &self.u_z, &self.b_z, &self.w_r, &self.u_r, &self.b_r, &self.w_h, &self.u_h, &self.b_h]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.w_z,
            &mut self.u_z,
            &mut self.b_z,
            &mut self.w_r,
            &mut self.u_r,
            &mut self.b_r,
            &mut self.w_h,
            &mut self.u_h,
            &mut self.b_h,
        ]
    }
}

/// Intermediate values of one step, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct GruCache {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub z: Vec<f64>,
    pub r: Vec<f64>,
    pub h_tilde: Vec<f64>,
}

pub fn gru_step(x: &Tensor, h_prev: &Tensor, p: &GruParams) -> Result<Tensor, NnError> {
    x.expect_shape(&[p.input_size()], "gru input")?;
    h_prev.expect_shape(&[p.hidden_size()], "gru hidden state")?;
    let (h, _) = gru_step_cached(x.data(), h_prev.data(), p);
    Tensor::from_vec(&[p.hidden_size()], h)
}

/// Unchecked step on slices; returns the new state and the cache.
pub fn gru_step_cached(x: &[f64], h_prev: &[f64], p: &GruParams) -> (Vec<f64>, GruCache) {
    let n = p.hidden_size();
    let mut z = vec![0.0; n];
    let mut r = vec![0.0; n];
    let mut a = vec![0.0; n];
    affine(p.w_z.data(), p.b_z.data(), x, &mut z);
    matvec_acc(p.u_z.data(), h_prev, &mut z);
    affine(p.w_r.data(), p.b_r.data(), x, &mut r);
    matvec_acc(p.u_r.data(), h_prev, &mut r);
    z.iter_mut().for_each(|v| *v = sigmoid(*v));
    r.iter_mut().for_each(|v| *v = sigmoid(*v));
    let rh: Vec<f64> = r.iter().zip(h_prev).map(|(r, h)| r * h).collect();
    affine(p.w_h.data(), p.b_h.data(), x, &mut a);
    matvec_acc(p.u_h.data(), &rh, &mut a);
    let h_tilde: Vec<f64> = a.iter().map(|v| v.tanh()).collect();
    let h = (0..n).map(|i| (1.0 - z[i]) * h_prev[i] + z[i] * h_tilde[i]).collect();
    (h, GruCache { x: x.to_vec(), h_prev: h_prev.to_vec(), z, r, h_tilde })
}

/// Backward through one step. Accumulates into `grads` and returns
/// `(dL/dx, dL/dh_prev)`.
pub fn gru_step_backward(p: &GruParams, c: &GruCache, dh: &[f64], grads: &mut GruParams) -> (Vec<f64>, Vec<f64>) {
    let n = p.hidden_size();
    let mut dh_prev: Vec<f64> = (0..n).map(|i| dh[i] * (1.0 - c.z[i])).collect();
    let da_h: Vec<f64> = (0..n).map(|i| dh[i] * c.z[i] * (1.0 - c.h_tilde[i] * c.h_tilde[i])).collect();
    let da_z: Vec<f64> = (0..n).map(|i| dh[i] * (c.h_tilde[i] - c.h_prev[i]) * c.z[i] * (1.0 - c.z[i])).collect();

    let rh: Vec<f64> = c.r.iter().zip(&c.h_prev).map(|(r, h)| r * h).collect();
    let mut d_rh = vec![0.0; n];
    matvec_t_acc(p.u_h.data(), &da_h, &mut d_rh);
    let da_r: Vec<f64> = (0..n).map(|i| d_rh[i] * c.h_prev[i] * c.r[i] * (1.0 - c.r[i])).collect();
    for i in 0..n {
        dh_prev[i] += d_rh[i] * c.r[i];
    }

    outer_acc(&da_h, &c.x, grads.w_h.data_mut());
    outer_acc(&da_h, &rh, grads.u_h.data_mut());
    outer_acc(&da_z, &c.x, grads.w_z.data_mut());
    outer_acc(&da_z, &c.h_prev, grads.u_z.data_mut());
    outer_acc(&da_r, &c.x, grads.w_r.data_mut());
    outer_acc(&da_r, &c.h_prev, grads.u_r.data_mut());
    for (b, d) in [(&mut grads.b_h, &da_h), (&mut grads.b_z, &da_z), (&mut grads.b_r, &da_r)] {
        for (g, v) in b.data_mut().iter_mut().zip(d) {
            *g += v;
        }
    }

    matvec_t_acc(p.u_z.data(), &da_z, &mut dh_prev);
    matvec_t_acc(p.u_r.data(), &da_r, &mut dh_prev);

    let mut dx = vec![0.0; c.x.len()];
    matvec_t_acc(p.w_h.data(), &da_h, &mut dx);
    matvec_t_acc(p.w_z.data(), &da_z, &mut dx);
    matvec_t_acc(p.w_r.data(), &da_r, &mut dx);
    (dx, dh_prev)
}

use super::{NnError, Parameters};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates, one flat buffer per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &impl Parameters) -> Self {
        let zeros: Vec<Vec<f64>> = params.params().iter().map(|t| vec![0.0; t.len()]).collect();
        Self { step: 0, m: zeros.clone(), v: zeros }
    }
}

/// One bias-corrected Adam update of `params` using `grads`.
pub fn adam_step<P: Parameters>(
    params: &mut P,
    grads: &P,
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<(), NnError> {
    let gs = grads.params();
    let mut ps = params.params_mut();
    if gs.len() != ps.len() || state.m.len() != ps.len() {
        return Err(NnError::ShapeMismatch("adam: parameter, gradient and state lists differ".into()));
    }
    for ((p, g), m) in ps.iter().zip(&gs).zip(&state.m) {
        g.expect_shape(p.shape(), "adam gradient")?;
        if m.len() != p.len() {
            return Err(NnError::ShapeMismatch("adam: state does not match parameters".into()));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (((p, g), m), v) in ps.iter_mut().zip(gs).zip(&mut state.m).zip(&mut state.v) {
        for (((pi, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *pi -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

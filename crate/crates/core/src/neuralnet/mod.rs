//! Small differentiable-computation core: dense tensors, layers with
//! hand-derived backward passes, losses, Adam, and finite-difference gradient
//! checking. Everything is `f64`.

mod gradcheck;
mod gru;
mod layers;
mod loss;
mod optim;
mod tensor;

pub use gradcheck::{grad_check, grad_check_piecewise, GradCheckReport, Signature, FD_STEP, REL_ERROR_FLOOR};
pub use gru::{gru_step, gru_step_backward, gru_step_cached, GruCache, GruParams};
pub use layers::{
    activation, maxpool2, maxpool2_backward, sigmoid, upsample2_crop, upsample2_crop_backward, Activation, Conv2d,
    Dense, Pooled,
};
pub use loss::{bce_grad_from_logits, bce_loss, kl_diag_gaussian, kl_grad, BCE_EPS};
pub use optim::{adam_step, AdamConfig, AdamState};
pub use tensor::Tensor;

pub(crate) use layers::maxpool2_raw;
pub(crate) use tensor::affine;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// A collection of parameter tensors in a fixed order. Gradient buffers use
/// the same type as the parameters they belong to.
pub trait Parameters {
    fn params(&self) -> Vec<&Tensor>;
    fn params_mut(&mut self) -> Vec<&mut Tensor>;

    fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for t in self.params() {
            out.extend_from_slice(t.data());
        }
        out
    }

    fn load_flat(&mut self, values: &[f64]) -> Result<(), NnError> {
        if values.len() != self.param_count() {
            return Err(NnError::ShapeMismatch(format!(
                "expected {} parameter values, got {}",
                self.param_count(),
                values.len()
            )));
        }
        let mut at = 0;
        for t in self.params_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&values[at..at + n]);
            at += n;
        }
        Ok(())
    }

    fn fill_zero(&mut self) {
        for t in self.params_mut() {
            t.fill(0.0);
        }
    }

    fn scale_all(&mut self, k: f64) {
        for t in self.params_mut() {
            t.scale(k);
        }
    }

    /// `self += other`, tensor by tensor.
    fn accumulate(&mut self, other: &Self) -> Result<(), NnError>
    where
        Self: Sized,
    {
        let src = other.params();
        let mut dst = self.params_mut();
        if src.len() != dst.len() {
            return Err(NnError::ShapeMismatch("parameter sets differ in length".into()));
        }
        for (d, s) in dst.iter_mut().zip(src) {
            s.expect_shape(d.shape(), "accumulate")?;
            d.add_assign(s);
        }
        Ok(())
    }

    fn all_finite(&self) -> bool {
        self.params().iter().all(|t| t.all_finite())
    }
}

use std::hash::{DefaultHasher, Hash, Hasher};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Smallest denominator used for relative errors. Gradient entries far below
/// this are compared on an absolute scale, where cancellation noise in the
/// finite difference would otherwise dominate.
pub const REL_ERROR_FLOOR: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Coordinate with the largest relative error.
    pub worst_index: Option<usize>,
    pub checked: usize,
    /// Coordinates skipped because the probe crossed a non-differentiable
    /// point (a ReLU sign flip, a pooling winner change, a clamp edge).
    pub skipped: usize,
    pub passed: bool,
}

/// Compares `analytic` with central differences of `f` around `point`.
pub fn grad_check(
    mut f: impl FnMut(&[f64]) -> f64,
    point: &[f64],
    analytic: &[f64],
    tolerance: f64,
) -> GradCheckReport {
    grad_check_piecewise(|x| (f(x), 0), point, analytic, tolerance)
}

/// Like [`grad_check`] for piecewise-smooth functions: `f` also returns a
/// signature of its branch decisions, and coordinates whose two probes land
/// on different branches are skipped and counted.
pub fn grad_check_piecewise(
    mut f: impl FnMut(&[f64]) -> (f64, u64),
    point: &[f64],
    analytic: &[f64],
    tolerance: f64,
) -> GradCheckReport {
    assert_eq!(point.len(), analytic.len(), "gradient length must match the point");
    let mut x = point.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst_index: None,
        checked: 0,
        skipped: 0,
        passed: true,
    };
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + FD_STEP;
        let (up, sig_up) = f(&x);
        x[i] = orig - FD_STEP;
        let (down, sig_down) = f(&x);
        x[i] = orig;
        if sig_up != sig_down {
            report.skipped += 1;
            continue;
        }
        let numeric = (up - down) / (2.0 * FD_STEP);
        let abs = (numeric - analytic[i]).abs();
        let rel = abs / numeric.abs().max(analytic[i].abs()).max(REL_ERROR_FLOOR);
        report.checked += 1;
        report.max_abs_error = report.max_abs_error.max(abs);
        if rel > report.max_rel_error || report.worst_index.is_none() {
            report.max_rel_error = report.max_rel_error.max(rel);
            report.worst_index = Some(i);
        }
    }
    report.passed = report.max_rel_error < tolerance;
    report
}

/// Accumulates branch decisions into a hash for [`grad_check_piecewise`].
#[derive(Default)]
pub struct Signature(DefaultHasher);

impl Signature {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records which entries are strictly positive.
    pub fn mask(&mut self, values: &[f64]) {
        for v in values {
            (*v > 0.0).hash(&mut self.0);
        }
    }

    pub fn indices(&mut self, idx: &[usize]) {
        idx.hash(&mut self.0);
    }

    pub fn flag(&mut self, b: bool) {
        b.hash(&mut self.0);
    }

    pub fn finish(&self) -> u64 {
        self.0.finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_is_exact() {
        let w = [3.0, -2.0, 0.5, 7.0];
        let r = grad_check(|x| x.iter().zip(&w).map(|(a, b)| a * b).sum(), &[1.0, 2.0, 3.0, 4.0], &w, 1e-9);
        assert!(r.passed, "{r:?}");
        assert_eq!(r.checked, 4);
        assert!(r.max_rel_error < 1e-9);
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let r = grad_check(|x| x[0] * x[0], &[1.5], &[2.0], 1e-6);
        assert!(!r.passed);
        assert_eq!(r.worst_index, Some(0));
    }

    #[test]
    fn kinks_are_skipped() {
        let relu = |x: &[f64]| (x[0].max(0.0), u64::from(x[0] > 0.0));
        let r = grad_check_piecewise(relu, &[0.0], &[0.5], 1e-6);
        assert_eq!((r.checked, r.skipped), (0, 1));
        let r = grad_check_piecewise(relu, &[0.3], &[1.0], 1e-6);
        assert!(r.passed);
    }
}

//! Central finite-difference gradient verification.
//!
//! All checking runs at 64-bit precision with step h = 1e-5. The error
//! measure is |analytic - numeric| / max(1, |analytic|, |numeric|), i.e.
//! relative for large gradients and absolute for small ones, which keeps
//! near-zero gradients from producing spurious failures.

/// Central-difference step.
pub const GRAD_CHECK_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub checked: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0)
}

/// Checks every component of `analytic` against central differences of `f`
/// around `theta`.
pub fn check_gradients(
    f: impl FnMut(&[f64]) -> f64,
    theta: &[f64],
    analytic: &[f64],
    tolerance: f64,
) -> GradCheckReport {
    let indices: Vec<usize> = (0..theta.len()).collect();
    check_gradients_at(f, theta, analytic, &indices, tolerance)
}

/// Checks only the listed components - used to spot-check very large
/// parameter sets where perturbing every coordinate would be wasteful.
pub fn check_gradients_at(
    mut f: impl FnMut(&[f64]) -> f64,
    theta: &[f64],
    analytic: &[f64],
    indices: &[usize],
    tolerance: f64,
) -> GradCheckReport {
    assert_eq!(theta.len(), analytic.len());
    let mut work = theta.to_vec();
    let mut max_rel_err = 0.0;
    let mut worst_index = 0;
    for &i in indices {
        let orig = work[i];
        work[i] = orig + GRAD_CHECK_STEP;
        let plus = f(&work);
        work[i] = orig - GRAD_CHECK_STEP;
        let minus = f(&work);
        work[i] = orig;
        let numeric = (plus - minus) / (2.0 * GRAD_CHECK_STEP);
        let e = rel_err(analytic[i], numeric);
        if e > max_rel_err {
            max_rel_err = e;
            worst_index = i;
        }
    }
    GradCheckReport {
        max_rel_err,
        worst_index,
        checked: indices.len(),
        tolerance,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_is_exactly_differentiated() {
        let coeffs = [2.0, -3.0, 0.5];
        let theta = [1.0, 2.0, 3.0];
        let report = check_gradients(
            |x| x.iter().zip(&coeffs).map(|(a, b)| a * b).sum(),
            &theta,
            &coeffs,
            1e-7,
        );
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn quadratic_passes_at_loose_tolerance() {
        let theta = [0.3, -1.2, 2.0];
        let analytic: Vec<f64> = theta.iter().map(|&x| 2.0 * x).collect();
        let report = check_gradients(
            |x| x.iter().map(|v| v * v).sum(),
            &theta,
            &analytic,
            1e-6,
        );
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let theta = [0.7, -0.4];
        let mut analytic = vec![2.0 * theta[0], 2.0 * theta[1]];
        analytic[0] = -analytic[0]; // sign flip
        let report = check_gradients(
            |x| x.iter().map(|v| v * v).sum(),
            &theta,
            &analytic,
            1e-4,
        );
        assert!(!report.passed());
        assert_eq!(report.worst_index, 0);
    }

    #[test]
    fn subset_checking_counts_only_requested_indices() {
        let theta = [1.0, 2.0, 3.0, 4.0];
        let analytic = [1.0, 1.0, 1.0, 1.0];
        let report = check_gradients_at(
            |x| x.iter().sum(),
            &theta,
            &analytic,
            &[0, 2],
            1e-7,
        );
        assert_eq!(report.checked, 2);
        assert!(report.passed());
    }
}

//! Central finite-difference verification of analytic gradients (double precision).

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Step used for `(f(x + eps) - f(x - eps)) / (2 eps)`.
pub const FD_EPSILON: f64 = 1e-5;

/// Floor on the relative-error denominator.
const REL_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub name: String,
    pub shapes: String,
    pub checked: usize,
    pub max_rel_error: f64,
    /// Flat index of the worst component.
    pub worst_index: usize,
    pub tolerance: f64,
    /// Set when a non-finite value was encountered.
    pub failure: Option<String>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failure.is_none() && self.max_rel_error < self.tolerance
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<16} shapes={} checked={} max_rel_err={:.3e} (at {}) tol={:.0e} {}",
            self.name,
            self.shapes,
            self.checked,
            self.max_rel_error,
            self.worst_index,
            self.tolerance,
            if self.passed() { "PASS" } else { "FAIL" }
        )?;
        if let Some(reason) = &self.failure {
            write!(f, " ({reason})")?;
        }
        Ok(())
    }
}

/// Compares `analytic[i]` with the central difference of `loss` at `point` along every
/// coordinate. The relative error is `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn grad_check(
    name: impl Into<String>,
    shapes: impl Into<String>,
    point: &[f64],
    analytic: &[f64],
    mut loss: impl FnMut(&[f64]) -> f64,
    tolerance: f64,
) -> GradCheckReport {
    let mut report = GradCheckReport {
        name: name.into(),
        shapes: shapes.into(),
        checked: 0,
        max_rel_error: 0.0,
        worst_index: 0,
        tolerance,
        failure: None,
    };
    if point.len() != analytic.len() {
        report.failure = Some(format!(
            "gradient has {} entries for {} coordinates",
            analytic.len(),
            point.len()
        ));
        return report;
    }
    if let Some(i) = point.iter().position(|v| !v.is_finite()) {
        report.failure = Some(format!("non-finite input at {i}"));
        return report;
    }
    let mut x = point.to_vec();
    for i in 0..x.len() {
        let a = analytic[i];
        let orig = x[i];
        x[i] = orig + FD_EPSILON;
        let fp = loss(&x);
        x[i] = orig - FD_EPSILON;
        let fm = loss(&x);
        x[i] = orig;
        let numeric = (fp - fm) / (2.0 * FD_EPSILON);
        report.checked += 1;
        if !(a.is_finite() && numeric.is_finite()) {
            report.failure = Some(format!(
                "non-finite gradient at {i}: analytic={a}, numeric={numeric}"
            ));
            report.worst_index = i;
            return report;
        }
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_index = i;
        }
    }
    report
}

/// Deterministic values in `[-1, 1)`.
pub fn seeded_uniform(seed: u64, len: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_gradient_of_quadratic() {
        let x = seeded_uniform(1, 5);
        let grad: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let r = grad_check("square", "(5)", &x, &grad, |p| p.iter().map(|v| v * v).sum(), 1e-6);
        assert!(r.passed(), "{r}");
    }

    #[test]
    fn wrong_gradient_fails() {
        let x = seeded_uniform(2, 3);
        let grad = vec![1.0; 3];
        let r = grad_check("bad", "(3)", &x, &grad, |p| p.iter().map(|v| 2.0 * v).sum(), 1e-4);
        assert!(!r.passed());
        assert!((r.max_rel_error - 0.5).abs() < 1e-6);
    }

    #[test]
    fn non_finite_reports_location() {
        let x = vec![0.5, -0.5];
        let r = grad_check("nan", "(2)", &x, &[1.0, f64::NAN], |p| p[0], 1e-4);
        assert!(!r.passed());
        assert!(r.failure.as_deref().unwrap().contains("at 1"));
        assert_eq!(r.worst_index, 1);
    }

    #[test]
    fn seeded_inputs_are_reproducible_and_bounded() {
        let a = seeded_uniform(7, 100);
        assert_eq!(a, seeded_uniform(7, 100));
        assert!(a.iter().all(|v| (-1.0..1.0).contains(v)));
    }
}

//! Central finite-difference gradient checking.

use alloc::vec::Vec;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Coordinate with the largest relative error.
    pub worst_index: Option<usize>,
    pub analytic: f64,
    pub numeric: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Central differences `(f(p + h e_i) - f(p - h e_i)) / 2h` for every coordinate.
pub fn central_difference(mut f: impl FnMut(&[f64]) -> f64, params: &[f64], h: f64) -> Vec<f64> {
    let mut p = params.to_vec();
    (0..p.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + h;
            let up = f(&p);
            p[i] = orig - h;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Relative error with denominator `max(|a|, |b|, 1e-8)`.
#[inline]
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Compares `analytic` against central differences of `f` at `params`.
pub fn grad_check(
    f: impl FnMut(&[f64]) -> f64,
    params: &[f64],
    analytic: &[f64],
    h: f64,
    tol: f64,
) -> GradCheckReport {
    let numeric = central_difference(f, params, h);
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_index: None,
        analytic: 0.0,
        numeric: 0.0,
        tolerance: tol,
        passed: analytic.len() == params.len(),
    };
    for (i, (&a, &n)) in analytic.iter().zip(&numeric).enumerate() {
        let err = relative_error(a, n);
        // NaN compares false, so force it through
        if err > report.max_relative_error || err.is_nan() {
            report.max_relative_error = err;
            report.worst_index = Some(i);
            report.analytic = a;
            report.numeric = n;
        }
    }
    report.passed &= report.max_relative_error < tol;
    report
}

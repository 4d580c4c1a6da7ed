//! Adaptive quadrature used by the density evaluators.
//!
//! The integrands here are smooth after the substitutions applied by the
//! callers, so adaptive Simpson with a global error budget is enough. All
//! routines report an error estimate; callers treat a blown budget as a
//! numeric failure rather than silently returning a bad value.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct QuadratureSpec {
    /// Relative tolerance against the integral magnitude.
    pub rel_tol: f64,
    /// Absolute floor for the tolerance.
    pub abs_tol: f64,
    /// Maximum bisection depth per panel.
    pub max_depth: u32,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec {
            rel_tol: 1e-10,
            abs_tol: 1e-300,
            max_depth: 48,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Quadrature {
    pub value: f64,
    pub error: f64,
    pub evals: usize,
}

fn simpson(h: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    h * (fa + 4.0 * fm + fb) / 6.0
}

struct Panel {
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
}

/// Adaptive Simpson integration of `f` over `[a, b]`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, spec: &QuadratureSpec) -> Result<Quadrature> {
    if !(a.is_finite() && b.is_finite()) || a >= b {
        return Err(Error::domain(format!("bad integration interval [{a}, {b}]")));
    }
    let mut evals = 0usize;
    let mut eval = |x: f64| -> Result<f64> {
        let y = f(x);
        evals += 1;
        if y.is_finite() {
            Ok(y)
        } else {
            Err(Error::numeric(format!("integrand non-finite at x = {x}")))
        }
    };

    // Coarse magnitude scan to set the absolute error budget.
    let mut scale = 0.0f64;
    let n_scan = 16;
    for i in 0..=n_scan {
        let x = a + (b - a) * (i as f64) / (n_scan as f64);
        scale = scale.max(eval(x)?.abs());
    }
    scale *= b - a;
    let tol0 = spec.abs_tol.max(spec.rel_tol * scale.max(f64::MIN_POSITIVE));

    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (eval(a)?, eval(m)?, eval(b)?);
    let mut stack = vec![Panel {
        a,
        b,
        fa,
        fm,
        fb,
        whole: simpson(b - a, fa, fm, fb),
        tol: tol0,
        depth: spec.max_depth,
    }];

    let mut value = 0.0f64;
    let mut error = 0.0f64;
    while let Some(p) = stack.pop() {
        let m = 0.5 * (p.a + p.b);
        let lm = 0.5 * (p.a + m);
        let rm = 0.5 * (m + p.b);
        let flm = eval(lm)?;
        let frm = eval(rm)?;
        let left = simpson(m - p.a, p.fa, flm, p.fm);
        let right = simpson(p.b - m, p.fm, frm, p.fb);
        let delta = left + right - p.whole;
        if p.depth == 0 || delta.abs() <= 15.0 * p.tol {
            value += left + right + delta / 15.0;
            error += delta.abs() / 15.0;
        } else {
            stack.push(Panel {
                a: p.a,
                b: m,
                fa: p.fa,
                fm: flm,
                fb: p.fm,
                whole: left,
                tol: 0.5 * p.tol,
                depth: p.depth - 1,
            });
            stack.push(Panel {
                a: m,
                b: p.b,
                fa: p.fm,
                fm: frm,
                fb: p.fb,
                whole: right,
                tol: 0.5 * p.tol,
                depth: p.depth - 1,
            });
        }
    }

    if error > 1e-6 * value.abs().max(1e-280) {
        return Err(Error::Quadrature { residual: error });
    }
    Ok(Quadrature { value, error, evals })
}

/// Integrate over a chain of segments given by sorted breakpoints.
pub fn integrate_segments<F: Fn(f64) -> f64>(
    f: F,
    points: &[f64],
    spec: &QuadratureSpec,
) -> Result<Quadrature> {
    if points.len() < 2 {
        return Err(Error::domain("need at least two breakpoints"));
    }
    let mut total = Quadrature {
        value: 0.0,
        error: 0.0,
        evals: 0,
    };
    for pair in points.windows(2) {
        let q = integrate(&f, pair[0], pair[1], spec)?;
        total.value += q.value;
        total.error += q.error;
        total.evals += q.evals;
    }
    Ok(total)
}

/// Integrate `f` over `[a, ∞)` for an eventually-decaying integrand by
/// summing geometrically widening segments until two consecutive segments
/// are negligible against the running total.
pub fn integrate_decaying<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    first_width: f64,
    spec: &QuadratureSpec,
) -> Result<Quadrature> {
    if !(first_width > 0.0) {
        return Err(Error::domain("first_width must be positive"));
    }
    let mut total = Quadrature {
        value: 0.0,
        error: 0.0,
        evals: 0,
    };
    let mut lo = a;
    let mut width = first_width;
    let mut negligible_streak = 0u32;
    for k in 0..64 {
        let hi = lo + width;
        let q = integrate(&f, lo, hi, spec)?;
        total.value += q.value;
        total.error += q.error;
        total.evals += q.evals;
        if k >= 3 && q.value.abs() <= spec.rel_tol * total.value.abs().max(f64::MIN_POSITIVE) {
            negligible_streak += 1;
            if negligible_streak >= 2 {
                return Ok(total);
            }
        } else {
            negligible_streak = 0;
        }
        lo = hi;
        width *= 2.0;
    }
    Err(Error::Quadrature {
        residual: total.error.max(total.value.abs() * spec.rel_tol),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn polynomial_exact() {
        let spec = QuadratureSpec::default();
        let q = integrate(|x| x * x * x - 2.0 * x + 1.0, -1.0, 3.0, &spec).unwrap();
        // antiderivative x^4/4 - x^2 + x evaluated on [-1, 3]
        assert_relative_eq!(q.value, 16.0, max_relative = 1e-12);
    }

    #[test]
    fn gaussian_mass() {
        let spec = QuadratureSpec::default();
        let q = integrate(
            |x| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt(),
            -10.0,
            10.0,
            &spec,
        )
        .unwrap();
        assert_relative_eq!(q.value, 1.0, max_relative = 1e-10);
    }

    #[test]
    fn decaying_exponential() {
        let spec = QuadratureSpec::default();
        let q = integrate_decaying(|x| (-0.5 * x).exp(), 0.0, 1.0, &spec).unwrap();
        assert_relative_eq!(q.value, 2.0, max_relative = 1e-9);
    }

    #[test]
    fn non_finite_integrand_rejected() {
        let spec = QuadratureSpec::default();
        assert!(integrate(|x| 1.0 / x, -1.0, 1.0, &spec).is_err());
    }

    #[test]
    fn bad_interval_rejected() {
        let spec = QuadratureSpec::default();
        assert!(integrate(|x| x, 1.0, 0.0, &spec).is_err());
        assert!(integrate(|x| x, 0.0, f64::INFINITY, &spec).is_err());
    }
}

//! Adaptive Simpson quadrature.

const MAX_DEPTH: u32 = 48;

/// ∫_a^b f to absolute tolerance `tol`, starting from `panels` equal
/// subintervals so that oscillatory integrands are resolved before the
/// error estimate is trusted.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, panels: usize, tol: f64) -> f64 {
    let panels = panels.max(1);
    let h = (b - a) / panels as f64;
    let panel_tol = tol / panels as f64;
    let mut total = crate::numeric::CompensatedSum::new();
    for k in 0..panels {
        let lo = a + k as f64 * h;
        let hi = if k + 1 == panels { b } else { lo + h };
        let mid = 0.5 * (lo + hi);
        let (flo, fmid, fhi) = (f(lo), f(mid), f(hi));
        let whole = simpson(lo, hi, flo, fmid, fhi);
        total.add(refine(&f, lo, hi, flo, fmid, fhi, whole, panel_tol, MAX_DEPTH));
    }
    total.value()
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn refine<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    refine(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + refine(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn polynomials_are_exact() {
        let v = integrate(|x| 3.0 * x * x * x - x + 2.0, -1.0, 2.0, 1, 1e-12);
        assert!((v - (3.0 * 15.0 / 4.0 - 1.5 + 6.0)).abs() < 1e-12);
    }

    #[test]
    fn gaussian() {
        let v = integrate(|x| (-x * x).exp(), -10.0, 10.0, 4, 1e-12);
        assert!((v - PI.sqrt()).abs() < 1e-11);
    }

    #[test]
    fn oscillatory_with_panels() {
        let v = integrate(|q| (300.0 * q).sin().powi(2), 0.0, PI, 2400, 1e-11);
        assert!((v - PI / 2.0).abs() < 1e-10);
    }
}

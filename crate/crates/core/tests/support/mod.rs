//! Shared oracles for the integration tests: independent numerical methods
//! (bisection, adaptive quadrature) used to cross-check closed forms. None of
//! this code calls into the solver paths it is checking.

#![allow(dead_code)]

/// Plain bisection to near machine precision. Requires a sign change.
pub fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let mut flo = f(lo);
    let fhi = f(hi);
    assert!(
        flo.signum() != fhi.signum(),
        "bisect: no sign change on [{lo}, {hi}]: {flo}, {fhi}"
    );
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        let fm = f(mid);
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Adaptive Simpson on one panel.
#[allow(clippy::too_many_arguments)]
fn adaptive_simpson(
    f: &impl Fn(f64) -> f64,
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
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        left + right + delta / 15.0
    } else {
        adaptive_simpson(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
            + adaptive_simpson(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
}

/// Adaptive quadrature over [a, b] with pre-splitting at the supplied
/// breakpoints (for integrands whose mass concentrates at known scales).
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, breaks: &[f64], tol: f64) -> f64 {
    let mut points: Vec<f64> = vec![a, b];
    points.extend(breaks.iter().cloned().filter(|x| *x > a && *x < b));
    points.sort_by(|x, y| x.partial_cmp(y).unwrap());
    points.dedup();
    let mut total = 0.0;
    for w in points.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let fa = f(lo);
        let fb = f(hi);
        let fm = f(0.5 * (lo + hi));
        let whole = (hi - lo) / 6.0 * (fa + 4.0 * fm + fb);
        total += adaptive_simpson(&f, lo, hi, fa, fm, fb, whole, tol, 40);
    }
    total
}

/// Geometric breakpoints from both ends of [0, t] at the given decay scale.
pub fn exp_breaks(t: f64, scale: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut s = scale.min(t / 2.0);
    while s < t {
        out.push(s);
        out.push(t - s);
        s *= 4.0;
    }
    out
}

/// Discounted infinite-horizon integral of g: int_0^inf e^{-rho t} g(t) dt,
/// via the substitution w = e^{-rho t} mapping to (0, 1].
pub fn integrate_discounted(g: impl Fn(f64) -> f64, rho: f64, tol: f64) -> f64 {
    let f = |w: f64| {
        if w <= 0.0 {
            0.0
        } else {
            g(-w.ln() / rho)
        }
    };
    // breakpoints resolve the w -> 0 tail (large t)
    let breaks: Vec<f64> = (1..40).map(|k| 2f64.powi(-k)).collect();
    integrate(f, 1e-14, 1.0, &breaks, tol) / rho
}

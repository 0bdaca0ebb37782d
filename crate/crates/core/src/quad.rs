//! Adaptive Simpson quadrature for smooth one-dimensional integrands.

fn simpson(fa: f64, fm: f64, fb: f64, h: f64) -> f64 {
    h / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn recurse<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
    err: &mut f64,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(fa, flm, fm, m - a);
    let right = simpson(fm, frm, fb, b - m);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        *err += delta.abs() / 15.0;
        return left + right + delta / 15.0;
    }
    recurse(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1, err)
        + recurse(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1, err)
}

/// Integral of `f` over `[a, b]` to absolute tolerance `tol`, together with
/// the accumulated error estimate.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> (f64, f64) {
    // Start from a few panels so that symmetric integrands are not fooled by
    // a coincidentally exact first estimate.
    let panels = 8;
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    let mut err = 0.0;
    for i in 0..panels {
        let lo = a + i as f64 * h;
        let hi = lo + h;
        let (fa, fm, fb) = (f(lo), f(0.5 * (lo + hi)), f(hi));
        let whole = simpson(fa, fm, fb, h);
        total += recurse(&f, lo, hi, fa, fm, fb, whole, tol / panels as f64, 48, &mut err);
    }
    (total, err)
}

/// Tensor-product adaptive integration over a rectangle.
pub fn adaptive_simpson_2d<F: Fn(f64, f64) -> f64>(
    f: F,
    x: (f64, f64),
    y: (f64, f64),
    tol: f64,
) -> f64 {
    let width = x.1 - x.0;
    adaptive_simpson(
        |yy| adaptive_simpson(|xx| f(xx, yy), x.0, x.1, tol / (y.1 - y.0)).0,
        y.0,
        y.1,
        tol * width.max(1.0),
    )
    .0
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn sine_cubed() {
        let (v, err) = adaptive_simpson(|x| x.sin().powi(3), 0.0, PI, 1e-12);
        assert!((v - 4.0 / 3.0).abs() < 1e-11);
        assert!(err < 1e-10);
    }

    #[test]
    fn rectangle() {
        let v = adaptive_simpson_2d(|x, y| x * y * y, (0.0, 2.0), (0.0, 3.0), 1e-10);
        assert!((v - 18.0).abs() < 1e-8);
    }
}

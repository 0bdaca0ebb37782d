//! Plane geometry helpers for traces and corridors.

use num_complex::Complex64;

/// Euclidean distance from `p` to the segment `[a, b]`.
#[inline]
pub fn dist_to_segment(p: Complex64, a: Complex64, b: Complex64) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_sqr();
    if len2 == 0.0 {
        return (p - a).norm();
    }
    let t = (((p - a) * ab.conj()).re / len2).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

/// Distance from `p` to a polyline through `pts`.
pub fn dist_to_polyline(p: Complex64, pts: &[Complex64]) -> f64 {
    match pts.len() {
        0 => f64::INFINITY,
        1 => (p - pts[0]).norm(),
        _ => pts
            .windows(2)
            .map(|w| dist_to_segment(p, w[0], w[1]))
            .fold(f64::INFINITY, f64::min),
    }
}

/// Distance from `p` to `ℝ ∪ polyline`.
pub fn dist_to_boundary(p: Complex64, pts: &[Complex64]) -> f64 {
    p.im.abs().min(dist_to_polyline(p, pts))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segment_distance() {
        let a = Complex64::new(0.0, 0.0);
        let b = Complex64::new(2.0, 0.0);
        assert_eq!(dist_to_segment(Complex64::new(1.0, 1.0), a, b), 1.0);
        assert_eq!(dist_to_segment(Complex64::new(3.0, 0.0), a, b), 1.0);
        assert_eq!(dist_to_segment(Complex64::new(-3.0, 4.0), a, b), 5.0);
    }

    #[test]
    fn polyline_distance() {
        let pts = [
            Complex64::new(0.0, 0.0),
            Complex64::new(0.0, 1.0),
            Complex64::new(1.0, 1.0),
        ];
        assert!((dist_to_polyline(Complex64::new(0.5, 0.5), &pts) - 0.5).abs() < 1e-15);
        assert_eq!(dist_to_boundary(Complex64::new(0.5, 0.25), &pts), 0.25);
    }
}

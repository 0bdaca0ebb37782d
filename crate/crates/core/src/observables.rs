//! Green's function, its local martingales, harmonic-measure estimates and
//! the L-shape geometry used for confinement events.

use std::f64::consts::PI;
use std::fmt::Write as _;

use num_complex::Complex64;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, SleError};
use crate::geometry::{dist_to_polyline, dist_to_segment};
use crate::loewner::{extract_trace, flow_point, DrivingPath, PointState, Trace, TrackedPoint};
use crate::mc::{par_map, path_rng, McEstimate};
use crate::params::SleParams;

const STREAM_HARMONIC: u64 = 0x6861_726d;

/// `G(z) = y^{d-2} (sin arg z)^{4a-1}` at a point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GreenValue {
    pub value: f64,
    pub at: Complex64,
    pub params: SleParams,
}

/// Green's function without argument checks.
#[inline]
pub fn green(params: &SleParams, z: Complex64) -> f64 {
    let s = z.im / z.norm();
    (params.radius_exponent() * z.im.ln() + params.angle_exponent() * s.ln()).exp()
}

pub fn green_one(params: &SleParams, z: Complex64) -> Result<GreenValue> {
    if !(z.im > 0.0) || !z.re.is_finite() || !z.im.is_finite() {
        return invalid(format!("Green's function needs Im z > 0, got {z}"));
    }
    Ok(GreenValue {
        value: green(params, z),
        at: z,
        params: *params,
    })
}

/// `M_t = Υ_t^{d-2} S_t^{4a-1}` from the tracked conformal radius.
#[inline]
pub fn martingale_value(params: &SleParams, upsilon: f64, sinangle: f64) -> f64 {
    (params.radius_exponent() * upsilon.ln() + params.angle_exponent() * sinangle.ln()).exp()
}

/// `M_t(z)` for a flow snapshot. Both closed forms, `|g'|^{2-d} G(Z)` and
/// `Υ^{d-2} S^{4a-1}`, are evaluated and must agree.
pub fn martingale_one(point: &TrackedPoint, params: &SleParams) -> Result<f64> {
    if let Some(time) = point.swallowed {
        return Err(SleError::Swallowed { time });
    }
    let via_upsilon = martingale_value(params, point.upsilon, point.sinangle);
    let via_derivative = point.dg.norm().powf(-params.radius_exponent()) * green(params, point.zz);
    let rel = (via_upsilon - via_derivative).abs() / via_upsilon.abs().max(f64::MIN_POSITIVE);
    if rel > 1e-9 {
        return Err(SleError::NotComputed(format!(
            "martingale forms disagree: {via_upsilon} vs {via_derivative}"
        )));
    }
    Ok(via_upsilon)
}

/// Source of two-point Green's function values `Ĝ(z, w)`.
pub trait TwoPointGreen {
    fn ghat(&self, z: Complex64, w: Complex64) -> Option<f64>;
}

impl<F: Fn(Complex64, Complex64) -> Option<f64>> TwoPointGreen for F {
    fn ghat(&self, z: Complex64, w: Complex64) -> Option<f64> {
        self(z, w)
    }
}

/// `M_t(z, w) = |g_t'(z)|^{2-d} |g_t'(w)|^{2-d} Ĝ(Z_t(z), Z_t(w))`.
pub fn martingale_two(pz: &TrackedPoint, pw: &TrackedPoint, params: &SleParams, oracle: &dyn TwoPointGreen) -> Result<f64> {
    for p in [pz, pw] {
        if let Some(time) = p.swallowed {
            return Err(SleError::Swallowed { time });
        }
    }
    let g = oracle
        .ghat(pz.zz, pw.zz)
        .filter(|v| *v > 0.0 && v.is_finite())
        .ok_or_else(|| SleError::NotComputed(format!("Ĝ({}, {})", pz.zz, pw.zz)))?;
    let e = -params.radius_exponent();
    Ok(pz.dg.norm().powf(e) * pw.dg.norm().powf(e) * g)
}

/// Harmonic-measure split of the boundary of `H_t` seen from `z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarmonicSplit {
    /// Estimate of `q = min(h(∂_-), h(∂_+))`.
    pub q: McEstimate,
    /// Estimate of the harmonic measure of the left arc `∂_-`.
    pub left: McEstimate,
    /// `S_t(z)` from the Loewner flow (1 for the empty domain is `sin arg z`).
    pub s: f64,
}

/// Walk-on-spheres estimate of `q = min(h(z, ∂_+), h(z, ∂_-))` in `H_t`,
/// where the boundary is split at the tip `γ(t)` and at infinity.
///
/// `domain = None` is the upper half-plane itself. Walkers stop within
/// `1e-4` of the boundary (relative to the size of the picture) and are
/// classified by the side of the nearest trace segment or by the sign of
/// the real part on `ℝ`. Once a walker is far from the hull the remaining
/// exit distribution is that of the empty half-plane, and its exact left
/// probability `arg(p)/π` is used.
pub fn harmonic_q(
    params: &SleParams,
    domain: Option<(&DrivingPath, f64)>,
    z: Complex64,
    n_walkers: usize,
    seed: u64,
) -> Result<HarmonicSplit> {
    if !(z.im > 0.0) {
        return invalid("harmonic_q needs Im z > 0");
    }
    let (trace, s) = match domain {
        None => (Vec::new(), z.im / z.norm()),
        Some((driving, t)) => {
            let k = driving.index_of_time(t)?;
            let prefix = driving.truncated(k);
            let snaps = flow_point(&prefix, z, params)?;
            let last = snaps.last().unwrap();
            if let Some(time) = last.swallowed {
                return Err(SleError::Swallowed { time });
            }
            (extract_trace(&prefix, params).points, last.sinangle)
        }
    };
    let hull_radius = trace.iter().map(|p| p.norm()).fold(0.0, f64::max);
    let scale = z.norm().max(hull_radius);
    let stop = 1e-4 * scale;
    let far = 1e3 * hull_radius;
    let samples = par_map(n_walkers, |i| {
        let mut rng = path_rng(seed, STREAM_HARMONIC, i as u64);
        let mut p = z;
        for _ in 0..100_000 {
            if p.norm() > far {
                return p.arg() / PI;
            }
            let (dseg, seg) = nearest_segment(p, &trace);
            let d = p.im.min(dseg);
            if d < stop {
                if p.im <= dseg {
                    return if p.re < 0.0 { 1.0 } else { 0.0 };
                }
                let (a, b) = (trace[seg], trace[seg + 1]);
                let cross = ((b - a).conj() * (p - a)).im;
                return if cross > 0.0 { 1.0 } else { 0.0 };
            }
            let phi = 2.0 * PI * rng.random::<f64>();
            p += Complex64::from_polar(d, phi);
        }
        p.arg() / PI
    });
    let left = McEstimate::from_samples(&samples, seed);
    let q = if left.mean <= 0.5 {
        left.clone()
    } else {
        McEstimate {
            mean: 1.0 - left.mean,
            ..left.clone()
        }
    };
    Ok(HarmonicSplit { q, left, s })
}

fn nearest_segment(p: Complex64, pts: &[Complex64]) -> (f64, usize) {
    let mut best = (f64::INFINITY, 0);
    for (j, w) in pts.windows(2).enumerate() {
        let d = dist_to_segment(p, w[0], w[1]);
        if d < best.0 {
            best = (d, j);
        }
    }
    best
}

/// The L-shape `[0, x] ∪ [x, x + iy]` and its corridor of width `ρ|z|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LShape {
    pub z: Complex64,
    pub rho: f64,
}

impl LShape {
    pub fn new(z: Complex64, rho: f64) -> Result<Self> {
        if !(z.im > 0.0) || !(rho > 0.0) {
            return invalid("L-shape needs Im z > 0 and rho > 0");
        }
        Ok(LShape { z, rho })
    }

    pub fn width(&self) -> f64 {
        self.rho * self.z.norm()
    }

    pub fn dist(&self, p: Complex64) -> f64 {
        let corner = Complex64::new(self.z.re, 0.0);
        dist_to_segment(p, Complex64::new(0.0, 0.0), corner).min(dist_to_segment(p, corner, self.z))
    }

    pub fn contains_point(&self, p: Complex64) -> bool {
        self.dist(p) <= self.width()
    }

    pub fn widened(&self, factor: f64) -> Self {
        LShape {
            z: self.z,
            rho: self.rho * factor,
        }
    }
}

/// Whether every trace point lies in the corridor `L_{z,ρ}`.
pub fn lshape_contains(shape: &LShape, trace: &Trace) -> bool {
    trace.points.iter().all(|&p| shape.contains_point(p))
}

/// The event `E_{z,δ}` on the driver: `T_z <= y^2/(2a) + δ`, `U_t` in
/// `[-δ, x+δ]` for `t <= δ`, and `|U_t - x| <= δ` for `δ <= t <= T_z`.
/// For `x < 0` the mirrored conditions are checked.
pub fn event_e_z_delta(params: &SleParams, z: Complex64, delta: f64, driving: &DrivingPath, swallow_time: Option<f64>) -> bool {
    let Some(tz) = swallow_time else {
        return false;
    };
    let sign = if z.re < 0.0 { -1.0 } else { 1.0 };
    let x = z.re.abs();
    if tz > z.im * z.im / (2.0 * params.a()) + delta {
        return false;
    }
    driving
        .times()
        .iter()
        .zip(driving.values())
        .take_while(|(t, _)| **t <= tz)
        .all(|(&t, &u)| {
            let u = sign * u;
            if t <= delta {
                (-delta..=x + delta).contains(&u)
            } else {
                (u - x).abs() <= delta
            }
        })
}

/// For a curve confined to `L_{z,ρ}` up to grid index `k` and a point `w`
/// outside `L_{z,2ρ}`: returns `(G(Z_T(w)) / G(w), |g_T'(w)|)`.
pub fn lshape_map_bounds(
    params: &SleParams,
    shape: &LShape,
    driving: &DrivingPath,
    k: usize,
    w: Complex64,
) -> Result<(f64, f64)> {
    if k >= driving.len() {
        return invalid("grid index out of range");
    }
    let prefix = driving.truncated(k);
    let trace = extract_trace(&prefix, params);
    if !lshape_contains(shape, &trace) {
        return Err(SleError::Precondition("trace leaves the corridor L_{z,ρ}".into()));
    }
    if shape.widened(2.0).contains_point(w) {
        return Err(SleError::Precondition("w lies inside L_{z,2ρ}".into()));
    }
    let a = params.a();
    let mut st = PointState::new(w);
    for j in 0..k {
        let (u, dt) = driving.cell(j);
        if !st.advance(u, driving.times()[j], dt, a) {
            return Err(SleError::Swallowed {
                time: st.swallowed.unwrap(),
            });
        }
    }
    let zz = st.g - driving.values()[k];
    Ok((green(params, zz) / green(params, w), st.dg.norm()))
}

/// Grid export with columns `re,im,G` followed by `M_<t>` for each
/// requested grid time of `driving` (empty when the point is swallowed).
pub fn grid_csv(params: &SleParams, points: &[Complex64], driving: Option<&DrivingPath>, times: &[f64]) -> Result<String> {
    let mut s = String::from("re,im,G");
    for t in times {
        let _ = write!(s, ",M_{t}");
    }
    s.push('\n');
    let idx: Vec<usize> = match driving {
        Some(d) => times.iter().map(|&t| d.index_of_time(t)).collect::<Result<_>>()?,
        None => Vec::new(),
    };
    for &z in points {
        let g = green_one(params, z)?.value;
        let _ = write!(s, "{},{},{}", z.re, z.im, g);
        if let Some(d) = driving {
            let snaps = flow_point(d, z, params)?;
            for &k in &idx {
                match snaps.get(k).filter(|p| p.alive()) {
                    Some(p) => {
                        let _ = write!(s, ",{}", martingale_value(params, p.upsilon, p.sinangle));
                    }
                    None => s.push(','),
                }
            }
        }
        s.push('\n');
    }
    Ok(s)
}

/// Distance from `p` to `ℝ ∪ trace`.
pub fn dist_to_hull(p: Complex64, trace: &Trace) -> f64 {
    p.im.min(dist_to_polyline(p, &trace.points))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn green_examples() {
        let p2 = SleParams::new(2.0).unwrap();
        assert!((green_one(&p2, c(0.0, 1.0)).unwrap().value - 1.0).abs() < 1e-15);
        assert!((green_one(&p2, c(0.0, 2.0)).unwrap().value - 2f64.powf(-0.75)).abs() < 1e-12);
        let p83 = SleParams::new(8.0 / 3.0).unwrap();
        assert!((green_one(&p83, c(1.0, 1.0)).unwrap().value - 0.5).abs() < 1e-12);
        assert!(green_one(&p2, c(1.0, 0.0)).is_err());
    }

    #[test]
    fn lshape_basics() {
        let l = LShape::new(c(1.0, 1.0), 0.1).unwrap();
        assert!(l.contains_point(c(0.5, 0.1)));
        assert!(l.contains_point(c(1.05, 0.5)));
        assert!(!l.contains_point(c(0.5, 0.5)));
        let m = LShape::new(c(-1.0, 1.0), 0.1).unwrap();
        assert!(m.contains_point(c(-0.5, 0.1)));
        assert!(!m.contains_point(c(0.5, 0.1)));
    }

    #[test]
    fn empty_domain_q_is_exact() {
        let p = SleParams::new(3.0).unwrap();
        let h = harmonic_q(&p, None, c(0.0, 2.0), 10, 1).unwrap();
        assert!((h.q.mean - 0.5).abs() < 1e-15);
        let z = Complex64::from_polar(1.0, PI / 4.0);
        let h = harmonic_q(&p, None, z, 10, 1).unwrap();
        assert!((h.q.mean - 0.25).abs() < 1e-15);
        assert!(2.0 * h.q.mean <= h.s && h.s <= PI * h.q.mean);
    }
}

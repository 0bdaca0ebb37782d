//! One-dimensional diffusions behind the one-point estimates.
//!
//! In the radial parametrization the angle of a point under two-sided radial
//! SLE solves `dX = r cot X dt + dB` on `(0, π)` with `r = 2a`. Near either
//! end it looks like the Bessel process `dX = r/X dt + dB`, whose transition
//! law is known exactly (a scaled noncentral χ²), so the simulator switches
//! to that transition close to the boundary.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::Rng as _;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, SleError};
use crate::mc::{par_map, path_rng, McEstimate, Rng};
use crate::params::SleParams;
use crate::quad::adaptive_simpson;

const STREAM_COT: u64 = 0x636f_7401;
const STREAM_BESSEL: u64 = 0x6265_7301;
const STREAM_PSI: u64 = 0x7073_6901;
const STREAM_PSI_SURV: u64 = 0x7073_6902;
const STREAM_PSI_GAP: u64 = 0x7073_6903;
const STREAM_WEIGHT: u64 = 0x7765_6901;

pub const DEFAULT_DT: f64 = 1e-4;

/// One sample of the radial angle process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadialAngleState {
    pub theta: f64,
    pub time: f64,
}

/// Normalizing constants of the invariant density `C_{2r} sin^{2r}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffusionConstants {
    pub c2r: f64,
    pub cstar: f64,
    pub quad_error: f64,
}

pub fn constants(params: &SleParams) -> DiffusionConstants {
    let r = params.r();
    let (integral, err) = adaptive_simpson(|x| x.sin().powf(2.0 * r), 0.0, PI, 1e-12);
    DiffusionConstants {
        c2r: 1.0 / integral,
        // 4a = 2r, so the two integrals coincide
        cstar: 2.0 / integral,
        quad_error: err / (integral * integral),
    }
}

/// `v(t, x) = max(x, sqrt(min(t, 1)))^{1-4a}`.
pub fn v_bound(params: &SleParams, t: f64, x: f64) -> f64 {
    x.max(t.min(1.0).sqrt()).powf(1.0 - 4.0 * params.a())
}

/// Exact transition of the Bessel process of dimension `delta > 0` over
/// time `h`: `X_h^2 / h` is noncentral χ² with `delta` degrees of freedom
/// and noncentrality `x^2 / h`.
pub fn bessel_transition(delta: f64, x: f64, h: f64, rng: &mut Rng) -> f64 {
    let lam = x * x / h;
    let n = if lam > 0.0 {
        Poisson::new(0.5 * lam).map(|p| p.sample(rng)).unwrap_or(0.0)
    } else {
        0.0
    };
    let chi2 = Gamma::new(0.5 * delta + n, 2.0)
        .expect("positive shape")
        .sample(rng);
    (h * chi2).sqrt()
}

/// Simulator for `dX = r cot X dt + dB` (requires `r > 1/2`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CotSde {
    pub r: f64,
    pub dt: f64,
    /// Distance to the boundary below which the Bessel transition is used.
    pub zone: f64,
}

impl CotSde {
    pub fn new(r: f64, dt: f64) -> Result<Self> {
        if !(r > 0.5) {
            return Err(SleError::Unsupported(format!(
                "cot diffusion needs r > 1/2, got {r}"
            )));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return invalid("dt must be positive");
        }
        Ok(CotSde {
            r,
            dt,
            zone: 0.05f64.max(5.0 * dt.sqrt()),
        })
    }

    pub fn for_params(params: &SleParams, dt: f64) -> Result<Self> {
        Self::new(params.r(), dt)
    }

    fn boundary_step(&self, x: f64, h: f64, rng: &mut Rng) -> f64 {
        let lower = x < 0.5 * PI;
        let dist = if lower { x } else { PI - x };
        loop {
            let y = bessel_transition(2.0 * self.r + 1.0, dist, h, rng);
            let next = if lower { y } else { PI - y };
            if next > 0.0 && next < PI {
                return next;
            }
        }
    }

    #[inline]
    pub fn step(&self, x: f64, h: f64, rng: &mut Rng) -> f64 {
        if x.min(PI - x) < self.zone {
            return self.boundary_step(x, h, rng);
        }
        let n: f64 = StandardNormal.sample(rng);
        let y = x + self.r * h / x.tan() + h.sqrt() * n;
        if y > 0.0 && y < PI {
            y
        } else {
            self.boundary_step(x, h, rng)
        }
    }

    pub fn endpoint(&self, x0: f64, t: f64, rng: &mut Rng) -> f64 {
        let mut x = x0;
        let mut s = 0.0;
        while s < t {
            let h = self.dt.min(t - s);
            x = self.step(x, h, rng);
            s += h;
            if t - s < 1e-12 * t {
                break;
            }
        }
        x
    }

    /// Values at `t0 < t1 < ...` in one run.
    pub fn at_times(&self, x0: f64, times: &[f64], rng: &mut Rng) -> Vec<f64> {
        let mut out = Vec::with_capacity(times.len());
        let mut x = x0;
        let mut s = 0.0;
        for &t in times {
            if t > s {
                x = self.endpoint(x, t - s, rng);
                s = t;
            }
            out.push(x);
        }
        out
    }

    /// Drift-implicit step driven by a given normal draw, used where two
    /// copies share their noise. The singular part `r/y` of the drift toward
    /// the nearer end is treated implicitly, which keeps the state inside
    /// `(0, π)`.
    #[inline]
    pub fn coupled_step(&self, x: f64, h: f64, n: f64) -> f64 {
        let lower = x <= 0.5 * PI;
        let (y, noise) = if lower { (x, n) } else { (PI - x, -n) };
        let smooth = self.r * (1.0 / y.tan() - 1.0 / y);
        let b = y + smooth * h + h.sqrt() * noise;
        let y1 = 0.5 * (b + (b * b + 4.0 * self.r * h).sqrt());
        let y1 = y1.min(PI * (1.0 - 1e-15));
        if lower {
            y1
        } else {
            PI - y1
        }
    }
}

/// Path of the radial angle process on a uniform time grid.
pub fn simulate_cot_sde(
    params: &SleParams,
    theta0: f64,
    t: f64,
    dt: f64,
    seed: u64,
) -> Result<Vec<RadialAngleState>> {
    if !(theta0 > 0.0 && theta0 < PI) || !(t >= 0.0) {
        return invalid("theta0 must lie in (0, π) and t >= 0");
    }
    let sde = CotSde::for_params(params, dt)?;
    let mut rng = path_rng(seed, STREAM_COT, 0);
    let mut out = vec![RadialAngleState {
        theta: theta0,
        time: 0.0,
    }];
    let mut x = theta0;
    let mut s = 0.0;
    while s < t * (1.0 - 1e-12) {
        let h = dt.min(t - s);
        x = sde.step(x, h, &mut rng);
        s += h;
        out.push(RadialAngleState { theta: x, time: s });
    }
    Ok(out)
}

/// Endpoints of `n` independent radial angle paths (path `i` uses stream
/// index `i`).
pub fn cot_sde_endpoints(params: &SleParams, theta0: f64, t: f64, dt: f64, n: usize, seed: u64) -> Result<Vec<f64>> {
    let sde = CotSde::for_params(params, dt)?;
    Ok(par_map(n, |i| {
        let mut rng = path_rng(seed, STREAM_COT, i as u64);
        sde.endpoint(theta0, t, &mut rng)
    }))
}

/// Bessel path with its hitting time of zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BesselPath {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub hit_time: Option<f64>,
    /// `∫_0^{T ∧ t} ds / X_s`.
    pub inv_integral: f64,
    pub max: f64,
}

/// `dX = r/X dt + dB` from `x0 > 0` up to time `t` or the hitting time of 0.
///
/// For `r >= 1/2` the exact transition is used and zero is never reached.
/// For `r < 1/2` the path is advanced by Euler steps no longer than
/// `0.01 X^2` so that the approach to zero is resolved; the hitting time is
/// interpolated linearly in the final step.
pub fn simulate_bessel(r: f64, x0: f64, t: f64, dt: f64, seed: u64) -> Result<BesselPath> {
    let mut rng = path_rng(seed, STREAM_BESSEL, 0);
    simulate_bessel_with(r, x0, t, dt, &mut rng)
}

pub fn simulate_bessel_with(r: f64, x0: f64, t: f64, dt: f64, rng: &mut Rng) -> Result<BesselPath> {
    if !(x0 > 0.0) || !(t > 0.0) || !(dt > 0.0) {
        return invalid("bessel simulation needs x0 > 0, t > 0, dt > 0");
    }
    let mut times = vec![0.0];
    let mut values = vec![x0];
    let mut x = x0;
    let mut s = 0.0;
    let mut integral = 0.0;
    let mut max = x0;
    let mut hit_time = None;
    let floor = 1e-10 * x0;
    while s < t * (1.0 - 1e-12) {
        if r >= 0.5 {
            let h = dt.min(t - s);
            // trapezoid on the two ends of the step
            let y = bessel_transition(2.0 * r + 1.0, x, h, rng);
            integral += 0.5 * h * (1.0 / x + 1.0 / y);
            x = y;
            s += h;
        } else {
            let h = dt.min(t - s).min(0.01 * x * x).max(1e-18);
            let n: f64 = StandardNormal.sample(rng);
            let y = x + r * h / x + h.sqrt() * n;
            if y <= floor {
                let frac = if y < x { x / (x - y) } else { 1.0 };
                let th = s + h * frac.clamp(0.0, 1.0);
                integral += (th - s) / x;
                s = th;
                x = 0.0;
                hit_time = Some(s);
            } else {
                integral += h / x;
                x = y;
                s += h;
            }
        }
        max = max.max(x);
        times.push(s);
        values.push(x);
        if hit_time.is_some() {
            break;
        }
    }
    Ok(BesselPath {
        times,
        values,
        hit_time,
        inv_integral: integral,
        max,
    })
}

/// `ψ(t, x) = E^x[(sin X_t)^{1-2r}]` by direct simulation of the angle.
///
/// The integrand has a heavy right tail when `r >= 3/2`, so the reported
/// standard error is only indicative there; see [`psi_survival_estimate`].
pub fn psi_estimate(params: &SleParams, t: f64, x: f64, n: usize, seed: u64) -> Result<McEstimate> {
    psi_estimate_dt(params, t, x, n, seed, DEFAULT_DT)
}

pub fn psi_estimate_dt(params: &SleParams, t: f64, x: f64, n: usize, seed: u64, dt: f64) -> Result<McEstimate> {
    check_psi_args(t, x, n)?;
    let e = 1.0 - 2.0 * params.r();
    if t == 0.0 {
        return Ok(McEstimate::exact(x.sin().powf(e)));
    }
    let sde = CotSde::for_params(params, dt)?;
    let samples = par_map(n, |i| {
        let mut rng = path_rng(seed, STREAM_PSI, i as u64);
        (e * sde.endpoint(x, t, &mut rng).sin().ln()).exp()
    });
    Ok(McEstimate::from_samples(&samples, seed))
}

fn check_psi_args(t: f64, x: f64, n: usize) -> Result<()> {
    if !(t >= 0.0 && t.is_finite()) || !(x > 0.0 && x < PI) || n == 0 {
        return invalid("psi needs t >= 0, x in (0, π), n >= 1");
    }
    Ok(())
}

/// ψ(t, x) through the h-transform identity
///
/// ```text
/// ψ(t, x) = sin(x)^{1-2r} e^{(r-1/2) t} P^x{ζ > t},
/// ```
///
/// where `ζ` is the exit time from `(0, π)` of `dX = (1-r) cot X dt + dB`.
/// The estimator is a rescaled Bernoulli mean, so its variance is finite
/// for every `r`. Exits between grid points are accounted for with the
/// Brownian-bridge crossing probability, and steps shrink near the ends.
pub fn psi_survival_estimate(params: &SleParams, t: f64, x: f64, n: usize, seed: u64, dt: f64) -> Result<McEstimate> {
    check_psi_args(t, x, n)?;
    let r = params.r();
    let scale = x.sin().powf(1.0 - 2.0 * r) * ((r - 0.5) * t).exp();
    if t == 0.0 {
        return Ok(McEstimate::exact(scale));
    }
    let q = 1.0 - r;
    let survived = par_map(n, |i| {
        let mut rng = path_rng(seed, STREAM_PSI_SURV, i as u64);
        if survives(q, x, t, dt, &mut rng) {
            1.0
        } else {
            0.0
        }
    });
    Ok(McEstimate::from_samples(&survived, seed).scale(scale))
}

fn survives(q: f64, x0: f64, t: f64, dt: f64, rng: &mut Rng) -> bool {
    let mut x = x0;
    let mut s = 0.0;
    while s < t {
        let d = x.min(PI - x);
        let h = dt.min(0.02 * d * d).min(t - s).max(1e-14);
        let n: f64 = StandardNormal.sample(rng);
        let y = x + q * h / x.tan() + h.sqrt() * n;
        if y <= 0.0 || y >= PI {
            return false;
        }
        // crossing probability of the bridge between the two grid values
        let p0 = (-2.0 * x * y / h).exp();
        let p1 = (-2.0 * (PI - x) * (PI - y) / h).exp();
        if p0 + p1 > 1e-16 && rng.random::<f64>() < p0 + p1 {
            return false;
        }
        x = y;
        s += h;
    }
    true
}

/// Draw from the invariant density `C_{2r} sin^{2r}` by rejection.
pub fn sample_invariant(r: f64, rng: &mut Rng) -> f64 {
    loop {
        let x = PI * rng.random::<f64>();
        if x > 0.0 && rng.random::<f64>() < x.sin().powf(2.0 * r) {
            return x;
        }
    }
}

/// `ψ(t, x) - 2 C_{2r}` by synchronous coupling.
///
/// Each sample runs the angle from `x` together with a stationary copy
/// started from the invariant density and its mirror image, all driven by
/// the same Brownian increments. The stationary copies have mean exactly
/// `2 C_{2r}` at every time, and the coupling is contracting because `cot`
/// is decreasing, so the difference has small variance once `t` is of
/// order one.
pub fn psi_gap_estimate(params: &SleParams, t: f64, x: f64, n: usize, seed: u64, dt: f64) -> Result<McEstimate> {
    let times = [t];
    Ok(psi_gap_curve(params, &times, x, n, seed, dt)?.remove(0))
}

/// [`psi_gap_estimate`] at several increasing times from the same paths.
pub fn psi_gap_curve(
    params: &SleParams,
    times: &[f64],
    x: f64,
    n: usize,
    seed: u64,
    dt: f64,
) -> Result<Vec<McEstimate>> {
    check_psi_args(*times.last().unwrap_or(&0.0), x, n)?;
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return invalid("times must be increasing");
    }
    let sde = CotSde::for_params(params, dt)?;
    let r = params.r();
    let e = 1.0 - 2.0 * r;
    let f = |y: f64| (e * y.sin().ln()).exp();
    let rows = par_map(n, |i| {
        let mut rng = path_rng(seed, STREAM_PSI_GAP, i as u64);
        let mut a = x;
        let mut b = sample_invariant(r, &mut rng);
        let mut c = PI - b;
        let mut s = 0.0;
        let mut out = Vec::with_capacity(times.len());
        for &t in times {
            while s < t * (1.0 - 1e-12) {
                let h = dt.min(t - s);
                let z: f64 = StandardNormal.sample(&mut rng);
                a = sde.coupled_step(a, h, z);
                b = sde.coupled_step(b, h, z);
                c = sde.coupled_step(c, h, z);
                s += h;
            }
            out.push(f(a) - 0.5 * (f(b) + f(c)));
        }
        out
    });
    Ok((0..times.len())
        .map(|j| {
            let col: Vec<f64> = rows.iter().map(|row| row[j]).collect();
            McEstimate::from_samples(&col, seed)
        })
        .collect())
}

/// One row of a ψ table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsiRow {
    pub t: f64,
    pub x: f64,
    pub estimate: McEstimate,
}

pub fn psi_table_csv(rows: &[PsiRow]) -> String {
    let mut s = String::from("t,x,psi,stderr,n\n");
    for row in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            row.t, row.x, row.estimate.mean, row.estimate.stderr, row.estimate.n
        );
    }
    s
}

/// Which local martingale [`girsanov_weight_paths`] evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// `(sin X)^r exp(-r(r-1)/2 ∫ ds/sin^2 X + r^2 t/2)`.
    Sine,
    /// `X^r exp(-r(r-1)/2 ∫ ds/X^2)`.
    Bessel,
}

/// Log-weights along one Brownian path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightPath {
    pub times: Vec<f64>,
    pub x: Vec<f64>,
    /// `log M_t` (or `log N_t`); `-inf` after the path left the domain.
    pub log_weight: Vec<f64>,
    /// Exit time from `(0, π)` (sine) or `(0, ∞)` (Bessel).
    pub exit_time: Option<f64>,
    /// Set when the accumulated integral overflowed.
    pub flagged: bool,
}

/// The local martingales `M_t` / `N_t` along an unweighted Brownian path
/// started at `x0`, computed in log space.
pub fn girsanov_weight_paths(
    params: &SleParams,
    mode: WeightMode,
    x0: f64,
    t: f64,
    dt: f64,
    seed: u64,
) -> Result<WeightPath> {
    let mut rng = path_rng(seed, STREAM_WEIGHT, 0);
    girsanov_weight_paths_with(params.r(), mode, x0, t, dt, &mut rng)
}

pub fn girsanov_weight_paths_with(
    r: f64,
    mode: WeightMode,
    x0: f64,
    t: f64,
    dt: f64,
    rng: &mut Rng,
) -> Result<WeightPath> {
    let upper = match mode {
        WeightMode::Sine => PI,
        WeightMode::Bessel => f64::INFINITY,
    };
    if !(x0 > 0.0 && x0 < upper) || !(t >= 0.0) || !(dt > 0.0) {
        return invalid("weight path needs x0 inside the domain, t >= 0, dt > 0");
    }
    let pot = |x: f64| match mode {
        WeightMode::Sine => 1.0 / (x.sin() * x.sin()),
        WeightMode::Bessel => 1.0 / (x * x),
    };
    let logf = |x: f64| match mode {
        WeightMode::Sine => r * x.sin().ln(),
        WeightMode::Bessel => r * x.ln(),
    };
    let growth = match mode {
        WeightMode::Sine => 0.5 * r * r,
        WeightMode::Bessel => 0.0,
    };
    let k = 0.5 * r * (r - 1.0);
    let mut times = vec![0.0];
    let mut xs = vec![x0];
    let mut logw = vec![logf(x0)];
    let mut x = x0;
    let mut s = 0.0;
    let mut integral = 0.0;
    let mut exit_time = None;
    let mut flagged = false;
    while s < t * (1.0 - 1e-12) {
        let h = dt.min(t - s);
        let n: f64 = StandardNormal.sample(rng);
        let y = x + h.sqrt() * n;
        s += h;
        if y <= 0.0 || y >= upper {
            exit_time = Some(s);
            times.push(s);
            xs.push(y);
            logw.push(f64::NEG_INFINITY);
            break;
        }
        integral += 0.5 * h * (pot(x) + pot(y));
        if !integral.is_finite() {
            flagged = true;
            break;
        }
        x = y;
        times.push(s);
        xs.push(x);
        logw.push(logf(x) - k * integral + growth * s);
    }
    Ok(WeightPath {
        times,
        x: xs,
        log_weight: logw,
        exit_time,
        flagged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constants_closed_forms() {
        let c = constants(&SleParams::new(8.0 / 3.0).unwrap());
        assert!((c.cstar - 1.5).abs() < 1e-10);
        let c = constants(&SleParams::new(2.0).unwrap());
        assert!((c.c2r - 8.0 / (3.0 * PI)).abs() < 1e-10);
        assert!((c.cstar - 2.0 * c.c2r).abs() < 1e-15);
    }

    #[test]
    fn v_bound_cases() {
        let p = SleParams::new(8.0 / 3.0).unwrap();
        let e = 1.0 - 4.0 * p.a();
        assert_eq!(v_bound(&p, 0.3, 1.5), 1.5f64.powf(e));
        assert_eq!(v_bound(&p, 2.0, 0.5), 1.0);
        assert!((v_bound(&p, 0.04, 0.1) - 0.2f64.powf(e)).abs() < 1e-12);
    }

    #[test]
    fn psi_at_time_zero_is_exact() {
        let p = SleParams::new(2.0).unwrap();
        let e = psi_estimate(&p, 0.0, 0.7, 5, 1).unwrap();
        assert_eq!(e.mean, 0.7f64.sin().powf(-3.0));
        assert_eq!(e.stderr, 0.0);
    }

    #[test]
    fn cot_sde_rejects_small_r() {
        // κ = 6 gives r = 2/3 > 1/2; r = 0.4 must be refused
        assert!(matches!(CotSde::new(0.4, 1e-3), Err(SleError::Unsupported(_))));
    }

    #[test]
    fn coupled_step_stays_inside() {
        let sde = CotSde::new(1.5, 1e-3).unwrap();
        for &x in &[1e-9, 1e-3, 0.5, PI / 2.0, PI - 1e-6] {
            for &n in &[-8.0, -1.0, 0.0, 1.0, 8.0] {
                let y = sde.coupled_step(x, 1e-3, n);
                assert!(y > 0.0 && y < PI, "{x} {n} {y}");
            }
        }
    }
}

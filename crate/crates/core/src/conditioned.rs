//! SLE conditioned to pass through an interior point (two-sided radial) or
//! to hit a boundary point (two-sided chordal), and the Monte Carlo
//! estimators built on them.
//!
//! Both samplers build the driving function cell by cell. The cell length
//! comes from a [`StepRule`] evaluated at the target, the flow over the cell
//! is the exact slit map with the driver frozen, and the driver increment is
//! an Euler step of the tilted SDE:
//!
//! * two-sided radial to `z`: `dU = (4a-1) X/|Z|^2 dt + dW`, the drift of
//!   `U` under the weight `M_t(z) = Υ^{d-2} S^{4a-1}`, since
//!   `∂_U log S^{4a-1} = (4a-1) X/|Z|^2` while `Υ` has no martingale part;
//! * two-sided chordal to `x`: `dU = (4a-1)/X̃ dt + dW` with
//!   `X̃ = g_t(x) - U_t`, so that `dX̃ = (1-3a)/X̃ dt - dW`.
//!
//! The sign of `dW` is immaterial in law; plain runs use `dU = -dB`.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use num_complex::Complex64;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, SleError};
use crate::loewner::{extract_trace, inverse_slit_raw, DrivingPath, MeasureTag, PointState, StepRule, Trace, TrackedPoint};
use crate::mc::{par_map, path_rng, McEstimate, Rng};
use crate::observables::{green, martingale_value, LShape};
use crate::params::SleParams;

const STREAM_RADIAL: u64 = 0x7261_6401;
const STREAM_CHORDAL: u64 = 0x6368_6f01;
const STREAM_HIT: u64 = 0x6869_7401;
const STREAM_F: u64 = 0x6666_7a01;
const STREAM_LSHAPE: u64 = 0x6c73_6801;
const STREAM_RN: u64 = 0x726e_6301;
const STREAM_MARTINGALE: u64 = 0x6d61_7201;

/// How a run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    /// `Υ_t(z)` reached `ε` (radial) or the tip came within `ε` of `x`
    /// (chordal).
    StoppedAtEps,
    HorizonReached,
    /// The target was cut off from infinity without `Υ` reaching `ε`.
    TargetSwallowed,
    /// Chordal run: the driver met `g_t(x)`.
    Hit,
    StepBudget,
    NumericalFlag,
}

/// Measure under which the target run is sampled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tilt {
    Plain,
    Radial,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetOptions {
    /// Stop when `Υ_t(z) <= eps`; 0 disables.
    pub eps: f64,
    pub horizon: f64,
    pub rule: StepRule,
    pub tilt: Tilt,
    /// Also resolve the extra points with the step rule.
    pub resolve_extras: bool,
    /// Keep a snapshot of the target after every cell.
    pub record_snapshots: bool,
}

impl TargetOptions {
    pub fn radial(z: Complex64, eps: f64) -> Self {
        TargetOptions {
            eps,
            horizon: f64::INFINITY,
            rule: StepRule::for_scale(z.norm()),
            tilt: Tilt::Radial,
            resolve_extras: true,
            record_snapshots: false,
        }
    }

    pub fn plain(z: Complex64, eps: f64, horizon: f64) -> Self {
        TargetOptions {
            eps,
            horizon,
            rule: plain_rule(z.norm()).with_max_dt(0.01 * z.norm_sqr()),
            tilt: Tilt::Plain,
            resolve_extras: true,
            record_snapshots: false,
        }
    }
}

/// State handed to run observers after every cell.
pub struct StepView<'a> {
    pub t: f64,
    /// Driver value at `t`.
    pub u: f64,
    pub target: &'a PointState,
    pub extras: &'a [PointState],
}

/// Result of a target-tracking run.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetRun {
    pub z: Complex64,
    pub status: RunStatus,
    pub tau: Option<f64>,
    pub end_time: f64,
    pub target: PointState,
    pub extras: Vec<PointState>,
    pub driving: DrivingPath,
    pub snapshots: Vec<TrackedPoint>,
    pub steps: usize,
}

impl TargetRun {
    /// `M_t(z)` at the end of the run (0 once swallowed).
    pub fn martingale(&self, params: &SleParams) -> f64 {
        if !self.target.alive() {
            return 0.0;
        }
        let zz = self.target.g - self.driving.values().last().unwrap();
        martingale_value(params, self.target.upsilon, zz.im / zz.norm())
    }

    /// `M_t(w)` at the end of the run for extra point `i`.
    pub fn extra_martingale(&self, params: &SleParams, i: usize) -> f64 {
        let st = &self.extras[i];
        if !st.alive() {
            return 0.0;
        }
        let zz = st.g - self.driving.values().last().unwrap();
        martingale_value(params, st.upsilon, zz.im / zz.norm())
    }

    /// Final `Z_t(z)`.
    pub fn zz(&self) -> Complex64 {
        self.target.g - self.driving.values().last().unwrap()
    }

    /// Current tip `γ(end_time)`.
    pub fn tip(&self, params: &SleParams) -> Complex64 {
        tip_of(&self.driving, params)
    }
}

/// `γ` at the last grid time of `driving`.
pub fn tip_of(driving: &DrivingPath, params: &SleParams) -> Complex64 {
    let k = driving.cells();
    if k == 0 {
        return Complex64::new(0.0, 0.0);
    }
    let a = params.a();
    let (u, dt) = driving.cell(k - 1);
    let mut w = Complex64::new(u, (2.0 * a * dt).sqrt());
    for j in (0..k - 1).rev() {
        let (uj, dtj) = driving.cell(j);
        w = inverse_slit_raw(w, uj, 2.0 * a * dtj).0;
    }
    w
}

/// Smallest step that still advances the clock at time `t`.
fn min_step(t: f64) -> f64 {
    4.0 * f64::EPSILON * t
}

fn upsilon_after(st: &PointState, u: f64, s: f64, a: f64) -> f64 {
    let mut c = *st;
    if c.advance(u, 0.0, s, a) {
        c.upsilon
    } else {
        0.0
    }
}

/// Tracks `z` (and `extras`) while growing the driver under `opts.tilt`.
pub fn run_target(
    params: &SleParams,
    z: Complex64,
    extras: &[Complex64],
    opts: &TargetOptions,
    seed: u64,
    rng: &mut Rng,
    observer: &mut dyn FnMut(&StepView),
) -> Result<TargetRun> {
    if !(z.im > 0.0) {
        return invalid("target needs Im z > 0");
    }
    if !(opts.eps >= 0.0 && opts.eps < z.im) {
        return invalid("eps must satisfy 0 <= eps < Im z");
    }
    if !(opts.horizon > 0.0) {
        return invalid("horizon must be positive");
    }
    opts.rule.validate()?;
    let a = params.a();
    let drift_coef = 4.0 * a - 1.0;
    let tag = match opts.tilt {
        Tilt::Plain => MeasureTag::Plain,
        Tilt::Radial => MeasureTag::TwoSidedRadial {
            target: z,
            eps: opts.eps,
        },
    };
    let mut driving = DrivingPath::start(seed, tag);
    let mut st = PointState::new(z);
    let mut ex: Vec<PointState> = extras.iter().map(|&w| PointState::new(w)).collect();
    let mut snapshots = Vec::new();
    if opts.record_snapshots {
        snapshots.push(st.snapshot(z, 0.0, 0.0));
    }
    let mut t = 0.0;
    let mut u = 0.0;
    let mut steps = 0usize;
    let mut tau = None;
    let status = loop {
        if t >= opts.horizon {
            break RunStatus::HorizonReached;
        }
        if steps >= opts.rule.max_steps {
            break RunStatus::StepBudget;
        }
        let zz = st.g - u;
        if zz.norm() <= 1e-7 * st.upsilon {
            break RunStatus::TargetSwallowed;
        }
        let mut dt = opts.rule.dt(a, zz);
        if opts.resolve_extras {
            for e in ex.iter().filter(|e| e.alive()) {
                dt = dt.min(opts.rule.dt_far(a, e.g - u));
            }
        }
        dt = dt.max(min_step(t));
        let mut last = false;
        if t + dt >= opts.horizon {
            dt = opts.horizon - t;
            last = true;
        }
        let mut trial = st;
        trial.advance(u, t, dt, a);
        let mut stop = false;
        if opts.eps > 0.0 && (!trial.alive() || trial.upsilon <= opts.eps) {
            let (mut lo, mut hi) = (0.0, dt);
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                if upsilon_after(&st, u, mid, a) > opts.eps {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo <= 1e-15 * hi {
                    break;
                }
            }
            dt = hi.max(min_step(t));
            trial = st;
            trial.advance(u, t, dt, a);
            stop = true;
        }
        if !trial.alive() {
            // Υ jumped past ε at a numerical swallow; counted as not stopped.
            st = trial;
            break RunStatus::TargetSwallowed;
        }
        for e in ex.iter_mut() {
            e.advance(u, t, dt, a);
        }
        st = trial;
        t += dt;
        steps += 1;
        if stop {
            // The stopped cell ends exactly at τ_ε; the driver value at τ_ε
            // is the frozen one.
            driving.push(t, u);
            tau = Some(t);
        } else {
            let n: f64 = StandardNormal.sample(rng);
            let du = match opts.tilt {
                Tilt::Plain => -dt.sqrt() * n,
                Tilt::Radial => drift_coef * zz.re / zz.norm_sqr() * dt + dt.sqrt() * n,
            };
            u += du;
            if !u.is_finite() {
                break RunStatus::NumericalFlag;
            }
            driving.push(t, u);
        }
        if opts.record_snapshots {
            snapshots.push(st.snapshot(z, t, u));
        }
        observer(&StepView {
            t,
            u,
            target: &st,
            extras: &ex,
        });
        if stop {
            break RunStatus::StoppedAtEps;
        }
        if last {
            break RunStatus::HorizonReached;
        }
    };
    Ok(TargetRun {
        z,
        status,
        tau,
        end_time: t,
        target: st,
        extras: ex,
        driving,
        snapshots,
        steps,
    })
}

/// What a plain run contributes to [`martingale_mean`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MartingaleStop {
    /// `M_{t∧τ_ε}(z)`, a bounded martingale.
    Stopped,
    /// `M_t(z) 1{τ_ε > t}`: the unstopped value with runs that came within
    /// `ε` of the target cut out. Its mean increases to `E[M_t(z)]` as
    /// `ε → 0`.
    Capped,
}

/// Plain-SLE mean of `M_{t∧τ_ε}(z)` or `M_t(z) 1{τ_ε > t}` over `n` runs.
pub fn martingale_mean(
    params: &SleParams,
    z: Complex64,
    eps: f64,
    t: f64,
    stop: MartingaleStop,
    n: usize,
    seed: u64,
) -> Result<McEstimate> {
    if !(eps > 0.0 && eps < z.im) {
        return invalid("need 0 < eps < Im z");
    }
    let opts = TargetOptions::plain(z, eps, t);
    let vals = par_map(n, |i| {
        let mut rng = path_rng(seed, STREAM_MARTINGALE, i as u64);
        run_target(params, z, &[], &opts, seed, &mut rng, &mut |_| {}).map(|r| match (stop, r.status) {
            (MartingaleStop::Capped, RunStatus::StoppedAtEps) => 0.0,
            _ => r.martingale(params),
        })
    });
    let vals: Vec<f64> = vals.into_iter().collect::<Result<_>>()?;
    Ok(McEstimate::from_samples(&vals, seed))
}

/// A conditioned run with its target history and endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionedRun {
    pub driving: DrivingPath,
    pub tracked: Vec<TrackedPoint>,
    pub trace: Option<Trace>,
    /// Tip of the curve when the run stopped.
    pub terminal: Complex64,
    pub tau_eps: Option<f64>,
    pub status: RunStatus,
}

/// Two-sided radial SLE through `z`, stopped when `Υ_t(z) = ε`.
pub fn sample_two_sided_radial(
    params: &SleParams,
    z: Complex64,
    eps: f64,
    rule: StepRule,
    seed: u64,
    with_trace: bool,
) -> Result<ConditionedRun> {
    if !(eps > 0.0 && eps < z.im) {
        return invalid("two-sided radial needs 0 < eps < Im z");
    }
    let opts = TargetOptions {
        rule,
        record_snapshots: true,
        ..TargetOptions::radial(z, eps)
    };
    let mut rng = path_rng(seed, STREAM_RADIAL, 0);
    let run = run_target(params, z, &[], &opts, seed, &mut rng, &mut |_| {})?;
    let terminal = run.tip(params);
    let trace = with_trace.then(|| extract_trace(&run.driving, params));
    Ok(ConditionedRun {
        terminal,
        trace,
        tau_eps: run.tau,
        status: run.status,
        tracked: run.snapshots,
        driving: run.driving,
    })
}

/// Stopping rule for two-sided chordal runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChordalStop {
    /// Stop once the tip is within `eps` of `x`.
    pub eps: Option<f64>,
    pub horizon: f64,
}

/// State handed to chordal observers after every cell.
pub struct ChordalView<'a> {
    pub t: f64,
    pub u: f64,
    /// `g_t(x)` as a point state (`dg` is `g_t'(x)`).
    pub x: &'a PointState,
    pub reals: &'a [PointState],
    pub interior: &'a [PointState],
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChordalRun {
    pub status: RunStatus,
    pub end_time: f64,
    pub driving: DrivingPath,
    pub x: PointState,
    pub reals: Vec<PointState>,
    pub interior: Vec<PointState>,
    /// Tip at the end of the run.
    pub terminal: Complex64,
    /// Minimum of `X̃_t` over the grid before termination.
    pub min_xt: f64,
    pub steps: usize,
}

/// Tracks boundary point `x` (plus other real and interior points) under
/// two-sided chordal SLE through `x`.
#[allow(clippy::too_many_arguments)]
pub fn run_chordal(
    params: &SleParams,
    x: f64,
    reals: &[f64],
    interior: &[Complex64],
    stop: ChordalStop,
    rule: StepRule,
    seed: u64,
    rng: &mut Rng,
    observer: &mut dyn FnMut(&ChordalView),
) -> Result<ChordalRun> {
    if !(x > 0.0) {
        return invalid("two-sided chordal needs x > 0");
    }
    rule.validate()?;
    let a = params.a();
    let drift_coef = 4.0 * a - 1.0;
    let mut driving = DrivingPath::start(seed, MeasureTag::TwoSidedChordal { x });
    let mut xs = PointState::new(Complex64::new(x, 0.0));
    let mut rs: Vec<PointState> = reals.iter().map(|&r| PointState::new(Complex64::new(r, 0.0))).collect();
    let mut is: Vec<PointState> = interior.iter().map(|&w| PointState::new(w)).collect();
    let mut t = 0.0;
    let mut u = 0.0;
    let mut steps = 0;
    let mut min_xt = x;
    // g_t of the rightmost real point of the hull
    let mut base = 0.0f64;
    let mut terminal = Complex64::new(0.0, 0.0);
    let status = loop {
        if t >= stop.horizon {
            break RunStatus::HorizonReached;
        }
        if steps >= rule.max_steps {
            break RunStatus::StepBudget;
        }
        let xt = xs.g.re - u;
        let mut dt = rule.dt_far(a, Complex64::new(xt, 0.0));
        for w in is.iter().filter(|w| w.alive()) {
            dt = dt.min(rule.dt_far(a, w.g - u));
        }
        dt = dt.max(min_step(t)).min(stop.horizon - t);
        xs.advance_real(u, t, dt, a);
        for r in rs.iter_mut() {
            r.advance_real(u, t, dt, a);
        }
        for w in is.iter_mut() {
            w.advance(u, t, dt, a);
        }
        base = u + ((base - u).powi(2) + 2.0 * a * dt).sqrt();
        t += dt;
        steps += 1;
        let n: f64 = StandardNormal.sample(rng);
        let du = drift_coef / xt * dt + dt.sqrt() * n;
        let next = xs.g.re - (u + du);
        if next <= 1e-12 * x {
            // The driver reaches g_t(x): the curve closes in on x.
            terminal = tip_of(&driving_with(&driving, t, u), params);
            u = xs.g.re;
            driving.push(t, u);
            break RunStatus::Hit;
        }
        u += du;
        base = base.max(u);
        driving.push(t, u);
        min_xt = min_xt.min(next);
        observer(&ChordalView {
            t,
            u,
            x: &xs,
            reals: &rs,
            interior: &is,
        });
        if let Some(eps) = stop.eps {
            // Koebe on the reflected map: dist(x, K_t) >= (g_t(x) - b_t) / (4 g_t'(x)),
            // so tips are only computed once that bound drops to eps.
            if xs.g.re - base <= 4.0 * eps * xs.dg.re {
                let tip = tip_of(&driving, params);
                if (tip - x).norm() <= eps {
                    terminal = tip;
                    break RunStatus::StoppedAtEps;
                }
            }
        }
    };
    if status != RunStatus::Hit && status != RunStatus::StoppedAtEps {
        terminal = tip_of(&driving, params);
    }
    Ok(ChordalRun {
        status,
        end_time: t,
        driving,
        x: xs,
        reals: rs,
        interior: is,
        terminal,
        min_xt,
        steps,
    })
}

fn driving_with(d: &DrivingPath, t: f64, u: f64) -> DrivingPath {
    let mut e = d.clone();
    e.push(t, u);
    e
}

/// Two-sided chordal SLE through `x > 0`.
pub fn sample_two_sided_chordal(params: &SleParams, x: f64, stop: ChordalStop, seed: u64) -> Result<ConditionedRun> {
    let mut rng = path_rng(seed, STREAM_CHORDAL, 0);
    let run = run_chordal(params, x, &[], &[], stop, StepRule::for_scale(x), seed, &mut rng, &mut |_| {})?;
    Ok(ConditionedRun {
        terminal: run.terminal,
        trace: None,
        tau_eps: Some(run.end_time),
        status: run.status,
        tracked: Vec::new(),
        driving: run.driving,
    })
}

/// Horizon policy for plain hitting probabilities, in units of `(Im z)^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HorizonRule {
    pub initial: f64,
    pub doublings: u32,
}

impl Default for HorizonRule {
    fn default() -> Self {
        HorizonRule {
            initial: 64.0,
            doublings: 4,
        }
    }
}

/// Plain-SLE estimate of `P{τ_ε < ∞}` with its horizon diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitEstimate {
    pub estimate: McEstimate,
    /// Horizon actually simulated.
    pub horizon: f64,
    /// Estimate at half the horizon (same paths).
    pub half_horizon: McEstimate,
    /// Set when doubling the horizon still moved the estimate by more than
    /// one standard error.
    pub flagged: bool,
    pub step_budget_hits: usize,
}

/// Scale-free step rule for plain runs to long horizons.
pub fn plain_rule(scale: f64) -> StepRule {
    StepRule {
        max_dt: f64::INFINITY,
        z_frac: 0.0025,
        y_frac: f64::INFINITY,
        min_dt: 1e-16 * scale * scale,
        max_steps: 10_000_000,
    }
}

/// Monte Carlo `P{τ_ε(z) < ∞}` under plain SLE. All paths run to the final
/// horizon `initial · 2^doublings · y^2`; the horizon is flagged when the
/// estimate at half of it differs by more than one standard error.
pub fn hit_probability(params: &SleParams, z: Complex64, eps: f64, n: usize, horizon: HorizonRule, seed: u64) -> Result<HitEstimate> {
    if !(eps > 0.0 && eps < z.im) {
        return invalid("hit_probability needs 0 < eps < Im z");
    }
    let h = horizon.initial * 2f64.powi(horizon.doublings as i32) * z.im * z.im;
    let opts = TargetOptions {
        eps,
        horizon: h,
        rule: plain_rule(z.norm()),
        tilt: Tilt::Plain,
        resolve_extras: false,
        record_snapshots: false,
    };
    let runs = par_map(n, |i| {
        let mut rng = path_rng(seed, STREAM_HIT, i as u64);
        run_target(params, z, &[], &opts, seed, &mut rng, &mut |_| {}).map(|r| (r.tau, r.status))
    });
    let mut taus = Vec::with_capacity(n);
    let mut budget = 0;
    for r in runs {
        let (tau, status) = r?;
        if status == RunStatus::StepBudget {
            budget += 1;
        }
        taus.push(tau);
    }
    let at = |hh: f64| -> McEstimate {
        let s: Vec<f64> = taus
            .iter()
            .map(|t| if matches!(t, Some(t) if *t <= hh) { 1.0 } else { 0.0 })
            .collect();
        McEstimate::from_samples(&s, seed)
    };
    let full = at(h);
    let half = at(0.5 * h);
    let flagged = (full.mean - half.mean) > full.stderr.max(1.0 / n as f64);
    Ok(HitEstimate {
        estimate: full,
        horizon: h,
        half_horizon: half,
        flagged,
        step_budget_hits: budget,
    })
}

/// `F̂(z, w)` with bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FEstimate {
    pub estimate: McEstimate,
    /// Paths on which `w` was swallowed before `τ_ε(z)`.
    pub swallowed: usize,
    pub not_stopped: usize,
}

/// `F̂(z, w) = Ê*_z[M_{τ_ε(z)}(w)] / G(w)` under two-sided radial SLE
/// through `z` stopped at `τ_ε(z)`.
pub fn estimate_f(params: &SleParams, z: Complex64, w: Complex64, eps: f64, n: usize, seed: u64) -> Result<FEstimate> {
    if !(w.im > 0.0) || (z - w).norm() <= eps {
        return invalid("estimate_F needs Im w > 0 and |z - w| > eps");
    }
    let opts = TargetOptions::radial(z, eps);
    let gw = green(params, w);
    let runs = par_map(n, |i| {
        let mut rng = path_rng(seed, STREAM_F, i as u64);
        run_target(params, z, &[w], &opts, seed, &mut rng, &mut |_| {})
            .map(|r| (r.extra_martingale(params, 0) / gw, r.extras[0].alive(), r.status))
    });
    let mut vals = Vec::with_capacity(n);
    let mut swallowed = 0;
    let mut not_stopped = 0;
    for r in runs {
        let (v, alive, status) = r?;
        if !alive {
            swallowed += 1;
        }
        if status != RunStatus::StoppedAtEps {
            not_stopped += 1;
        }
        vals.push(v);
    }
    Ok(FEstimate {
        estimate: McEstimate::from_samples(&vals, seed),
        swallowed,
        not_stopped,
    })
}

/// `Ĝ(z, w) = G(z) G(w) [F̂(z, w) + F̂(w, z)]`, with the two F estimates
/// drawn from independent streams.
pub fn estimate_two_point_green(params: &SleParams, z: Complex64, w: Complex64, eps: f64, n: usize, seed: u64) -> Result<TwoPointEstimate> {
    // Order the pair so that swapping the arguments reuses the same streams.
    let (p, q) = if (z.re, z.im) <= (w.re, w.im) { (z, w) } else { (w, z) };
    let fpq = estimate_f(params, p, q, eps, n, crate::mc::derive_seed(seed, 1))?;
    let fqp = estimate_f(params, q, p, eps, n, crate::mc::derive_seed(seed, 2))?;
    let sum = fpq.estimate.plus(&fqp.estimate);
    let ghat = sum.scale(green(params, z) * green(params, w));
    let (f_zw, f_wz) = if p == z { (fpq, fqp) } else { (fqp, fpq) };
    Ok(TwoPointEstimate {
        ghat,
        f_sum: sum,
        f_zw,
        f_wz,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoPointEstimate {
    pub ghat: McEstimate,
    pub f_sum: McEstimate,
    pub f_zw: FEstimate,
    pub f_wz: FEstimate,
}

/// Probability under two-sided radial SLE through `z`, stopped at `τ_ε`,
/// that the curve stays in the corridor `L_{z,ρ}`.
pub fn lshape_probability(params: &SleParams, z: Complex64, rho: f64, eps: f64, n: usize, seed: u64) -> Result<McEstimate> {
    let shape = LShape::new(z, rho)?;
    if !(rho > 0.0 && rho <= 0.5) {
        return invalid("rho must lie in (0, 1/2]");
    }
    let opts = TargetOptions::radial(z, eps);
    let a = params.a();
    let flags = par_map(n, |i| {
        let mut rng = path_rng(seed, STREAM_LSHAPE, i as u64);
        let run = run_target(params, z, &[], &opts, seed, &mut rng, &mut |_| {})?;
        if run.status != RunStatus::StoppedAtEps {
            return Ok(0.0);
        }
        Ok(if confined(&run.driving, &shape, a) { 1.0 } else { 0.0 })
    });
    let flags: Vec<f64> = flags.into_iter().collect::<Result<_>>()?;
    Ok(McEstimate::from_samples(&flags, seed))
}

/// Trace points computed in time order with an early exit at the first
/// point outside the corridor.
fn confined(driving: &DrivingPath, shape: &LShape, a: f64) -> bool {
    for k in 0..driving.cells() {
        let (u, dt) = driving.cell(k);
        let mut w = Complex64::new(u, (2.0 * a * dt).sqrt());
        for j in (0..k).rev() {
            let (uj, dtj) = driving.cell(j);
            w = inverse_slit_raw(w, uj, 2.0 * a * dtj).0;
        }
        if !shape.contains_point(w) {
            return false;
        }
    }
    true
}

/// Per-path extremes of the normalized density ratio between two-sided
/// radial to `z` and two-sided chordal to `x = Re z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadonNikodymReport {
    pub z: Complex64,
    pub eps: f64,
    /// `(min, max)` of `(M_t/M_0) / (N_t/N_0)` over `t <= σ` per path.
    pub extremes: Vec<(f64, f64)>,
    /// Initial ratio `|z|^{1-4a} / x^{1-4a}`.
    pub initial_ratio: f64,
    /// Angles `arg(γ(ξ) - x)` at the first `ε`-approach to `x`.
    pub angles: Vec<f64>,
    pub incomplete: usize,
}

impl RadonNikodymReport {
    /// Smallest `c` such that the band `[1/c, c]` holds on a `frac` share of
    /// paths.
    pub fn band(&self, frac: f64) -> f64 {
        let mut c: Vec<f64> = self
            .extremes
            .iter()
            .map(|&(lo, hi)| hi.max(1.0 / lo))
            .collect();
        c.sort_by(|a, b| a.total_cmp(b));
        if c.is_empty() {
            return f64::NAN;
        }
        let k = ((frac * c.len() as f64).ceil() as usize).clamp(1, c.len()) - 1;
        c[k]
    }
}

/// Under two-sided chordal SLE through `x = Re z`, follows
/// `M_t = |Z_t|^{1-4a} (Υ_t/y)^{d-2} (Y_t/y)^{4a-1}` and
/// `N_t = X̃_t^{1-4a} g_t'(x)^{4a-1}` up to `σ`, the first time the tip is
/// within `2ε` of `x`, and records the angle of the first `ε`-approach.
pub fn radon_nikodym_check(params: &SleParams, z: Complex64, eps: f64, n: usize, seed: u64) -> Result<RadonNikodymReport> {
    let x = z.re;
    if !(x > 0.0) || !(z.im > 0.0) || (z - x).norm() > eps || eps > 0.5 * x {
        return invalid("radon_nikodym_check needs |z - x| <= eps <= x/2 with x = Re z > 0");
    }
    let a = params.a();
    let e = 1.0 - 4.0 * a;
    let de = params.radius_exponent();
    let y = z.im;
    let log_m = |st: &PointState, u: f64| {
        let zz = st.g - u;
        e * zz.norm().ln() + de * (st.upsilon / y).ln() - e * (zz.im / y).ln()
    };
    let log_n = |st: &PointState, u: f64| e * (st.g.re - u).ln() - e * st.dg.re.ln();
    let m0 = e * z.norm().ln();
    let n0 = e * x.ln();
    let rows = par_map(n, |i| -> Result<(f64, f64, Option<f64>, bool)> {
        let mut rng = path_rng(seed, STREAM_RN, i as u64);
        let mut lo = 0.0f64;
        let mut hi = 0.0f64;
        let mut done = false;
        let stop = ChordalStop {
            eps: Some(2.0 * eps),
            horizon: f64::INFINITY,
        };
        let run = run_chordal(params, x, &[], &[z], stop, StepRule::for_scale(x), seed, &mut rng, &mut |v| {
            if done || !v.interior[0].alive() {
                done = true;
                return;
            }
            let r = (log_m(&v.interior[0], v.u) - m0) - (log_n(v.x, v.u) - n0);
            lo = lo.min(r);
            hi = hi.max(r);
        })?;
        // the angle check uses an independent path without the interior point
        let mut rng2 = path_rng(seed, STREAM_RN ^ 0xff, i as u64);
        let stop_angle = ChordalStop {
            eps: Some(eps),
            horizon: f64::INFINITY,
        };
        let angle_run = run_chordal(params, x, &[], &[], stop_angle, StepRule::for_scale(x), seed, &mut rng2, &mut |_| {})?;
        let angle = (angle_run.status == RunStatus::StoppedAtEps).then(|| (angle_run.terminal - x).arg());
        Ok((lo.exp(), hi.exp(), angle, run.status == RunStatus::StoppedAtEps))
    });
    let mut extremes = Vec::new();
    let mut angles = Vec::new();
    let mut incomplete = 0;
    for r in rows {
        let (lo, hi, angle, ok) = r?;
        if !ok {
            incomplete += 1;
        }
        extremes.push((lo, hi));
        if let Some(an) = angle {
            angles.push(an);
        }
    }
    Ok(RadonNikodymReport {
        z,
        eps,
        extremes,
        initial_ratio: (z.norm() / x).powf(e),
        angles,
        incomplete,
    })
}

/// `Δ(x, x₁, x₂) = max_t Z_t(x₂) / Z_t(x₁)` on one two-sided chordal path
/// through `x`, together with `Z_T(x₁)` at termination.
pub fn delta_statistic(params: &SleParams, x: f64, x1: f64, x2: f64, seed: u64, index: u64) -> Result<(f64, f64)> {
    if !(0.0 < x && x < x1 && x1 < x2) {
        return invalid("need 0 < x < x1 < x2");
    }
    let mut rng = path_rng(seed, STREAM_CHORDAL ^ 0xd, index);
    let mut delta = (x2 - x) / (x1 - x);
    let stop = ChordalStop {
        eps: None,
        horizon: f64::INFINITY,
    };
    let run = run_chordal(params, x, &[x1, x2], &[], stop, StepRule::for_scale(x), seed, &mut rng, &mut |v| {
        let z1 = v.reals[0].g.re - v.u;
        let z2 = v.reals[1].g.re - v.u;
        delta = delta.max(z2 / z1);
    })?;
    let u_end = *run.driving.values().last().unwrap();
    Ok((delta, run.reals[0].g.re - u_end))
}

/// One row of a run archive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveRow {
    pub path_id: usize,
    pub status: RunStatus,
    pub tau: Option<f64>,
    pub terminal: Complex64,
    pub observables: Vec<f64>,
}

/// A run set: per-path CSV plus a JSON manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunArchive {
    pub name: String,
    pub params: SleParams,
    pub seed: u64,
    pub observable_names: Vec<String>,
    pub rows: Vec<ArchiveRow>,
    pub estimates: Vec<(String, McEstimate)>,
}

impl RunArchive {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("path_id,status,tau,terminal_re,terminal_im");
        for n in &self.observable_names {
            let _ = write!(s, ",{n}");
        }
        s.push('\n');
        for r in &self.rows {
            let status = serde_json::to_value(r.status)
                .ok()
                .and_then(|v| v.as_str().map(str::to_owned))
                .unwrap_or_default();
            let tau = r.tau.map(|t| t.to_string()).unwrap_or_default();
            let _ = write!(s, "{},{},{},{},{}", r.path_id, status, tau, r.terminal.re, r.terminal.im);
            for v in &r.observables {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }

    /// Manifest without the per-path rows.
    pub fn manifest(&self) -> serde_json::Value {
        let mut counts = std::collections::BTreeMap::<String, usize>::new();
        for r in &self.rows {
            let key = serde_json::to_value(r.status)
                .ok()
                .and_then(|v| v.as_str().map(str::to_owned))
                .unwrap_or_default();
            *counts.entry(key).or_default() += 1;
        }
        serde_json::json!({
            "name": self.name,
            "params": self.params,
            "seed": self.seed,
            "paths": self.rows.len(),
            "status_counts": counts,
            "estimates": self.estimates,
        })
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(format!("{}.csv", self.name)), self.to_csv())?;
        std::fs::write(
            dir.join(format!("{}.json", self.name)),
            serde_json::to_string_pretty(&self.manifest())?,
        )?;
        Ok(())
    }
}

/// Angle of `z` measured in the radial parametrization: returns `θ` at the
/// first time `Υ = Im(z) e^{-2as}` under two-sided radial SLE, for
/// comparison with the angle diffusion at time `s`.
pub fn radial_angle_at(params: &SleParams, z: Complex64, s: f64, seed: u64, index: u64) -> Result<f64> {
    let eps = z.im * (-2.0 * params.a() * s).exp();
    let opts = TargetOptions::radial(z, eps);
    let mut rng = path_rng(seed, STREAM_RADIAL ^ 0xa, index);
    let run = run_target(params, z, &[], &opts, seed, &mut rng, &mut |_| {})?;
    if run.status != RunStatus::StoppedAtEps {
        return Err(SleError::NotComputed("run did not reach the radial time".into()));
    }
    let zz = run.zz();
    Ok(zz.arg().clamp(0.0, PI))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn radial_run_stops_at_eps() {
        let p = SleParams::new(8.0 / 3.0).unwrap();
        let z = c(0.3, 1.0);
        let run = sample_two_sided_radial(&p, z, 0.1, StepRule::for_scale(1.0), 5, false).unwrap();
        assert_eq!(run.status, RunStatus::StoppedAtEps);
        let last = run.tracked.last().unwrap();
        assert!(last.upsilon <= 0.1 && last.upsilon >= 0.1 * (1.0 - 1e-9));
        assert!((run.terminal - z).norm() <= 0.4 * 1.01);
    }

    #[test]
    fn chordal_run_reaches_x() {
        let p = SleParams::new(2.0).unwrap();
        let stop = ChordalStop {
            eps: Some(0.02),
            horizon: f64::INFINITY,
        };
        let run = sample_two_sided_chordal(&p, 1.0, stop, 3).unwrap();
        assert!(matches!(run.status, RunStatus::StoppedAtEps | RunStatus::Hit));
        assert!((run.terminal - 1.0).norm() <= 0.05);
    }

    #[test]
    fn two_point_swap_is_exact() {
        let p = SleParams::new(8.0 / 3.0).unwrap();
        let z = c(0.0, 1.0);
        let w = c(0.5, 1.2);
        let a = estimate_two_point_green(&p, z, w, 0.05, 8, 11).unwrap();
        let b = estimate_two_point_green(&p, w, z, 0.05, 8, 11).unwrap();
        assert_eq!(a.ghat.mean, b.ghat.mean);
        assert_eq!(a.f_zw.estimate.mean, b.f_wz.estimate.mean);
    }
}

//! Chordal Loewner flow with piecewise constant driving functions.
//!
//! The equation `∂_t g_t(z) = a / (g_t(z) - U_t)` is solved exactly on each
//! grid cell `[t_k, t_{k+1}]` with the driver frozen at `U_{t_k}`. On such a
//! cell the map is a vertical slit map
//!
//! ```text
//! g(w) = u + sqrt((w - u)^2 + c),   c = 2a (t_{k+1} - t_k),
//! ```
//!
//! which removes the segment `[u, u + i sqrt(c)]`. Composing these maps gives
//! forward point flows, the inverse maps `g_t^{-1}` and the trace.

use std::fmt::Write as _;
use std::path::Path;

use num_complex::Complex64;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, SleError};
use crate::mc::path_rng;
use crate::params::SleParams;

const STREAM_DRIVING: u64 = 0x6472_6976;

/// Relative threshold under which a mapped point counts as having hit the
/// real line.
pub const SWALLOW_REL: f64 = 1e-12;

/// Which measure a driving path was sampled from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MeasureTag {
    Plain,
    TwoSidedRadial { target: Complex64, eps: f64 },
    TwoSidedChordal { x: f64 },
}

/// Driving function sampled on an increasing capacity-time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrivingPath {
    times: Vec<f64>,
    values: Vec<f64>,
    seed: u64,
    tag: MeasureTag,
}

impl DrivingPath {
    pub fn new(times: Vec<f64>, values: Vec<f64>, seed: u64, tag: MeasureTag) -> Result<Self> {
        if times.is_empty() || times.len() != values.len() {
            return invalid("times and values must be non-empty and of equal length");
        }
        if times[0] != 0.0 {
            return invalid("grid must start at t = 0");
        }
        if times.windows(2).any(|w| !(w[1] > w[0]) || !w[1].is_finite()) {
            return invalid("grid must be strictly increasing and finite");
        }
        if values.iter().any(|v| !v.is_finite()) {
            return invalid("driving values must be finite");
        }
        Ok(DrivingPath {
            times,
            values,
            seed,
            tag,
        })
    }

    /// Empty path `U_0 = 0` to be extended cell by cell.
    pub(crate) fn start(seed: u64, tag: MeasureTag) -> Self {
        DrivingPath {
            times: vec![0.0],
            values: vec![0.0],
            seed,
            tag,
        }
    }

    pub(crate) fn push(&mut self, t: f64, u: f64) {
        debug_assert!(t > *self.times.last().unwrap());
        self.times.push(t);
        self.values.push(u);
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn tag(&self) -> MeasureTag {
        self.tag
    }

    /// Number of grid points (one more than the number of cells).
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.len() < 2
    }

    pub fn cells(&self) -> usize {
        self.times.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Frozen driver value and length of cell `k`.
    #[inline]
    pub fn cell(&self, k: usize) -> (f64, f64) {
        (self.values[k], self.times[k + 1] - self.times[k])
    }

    /// Index of the grid point equal to `s` up to rounding.
    pub fn index_of_time(&self, s: f64) -> Result<usize> {
        let tol = 1e-9 * s.abs().max(1e-3);
        let k = self.times.partition_point(|&t| t < s - tol);
        if k < self.times.len() && (self.times[k] - s).abs() <= tol {
            Ok(k)
        } else {
            invalid(format!("time {s} is not a grid time"))
        }
    }

    /// Number of whole cells ending at or before `t`.
    pub fn cells_until(&self, t: f64) -> usize {
        let tol = 1e-12 * t.abs().max(1.0);
        self.times.partition_point(|&s| s <= t + tol).saturating_sub(1)
    }

    /// Driver value at time `t` (piecewise constant, right-continuous).
    pub fn value_at(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&s| s <= t).max(1) - 1;
        self.values[k]
    }

    /// Brownian driver `U = -B` on a uniform grid; the last cell is
    /// shortened to end at `horizon`.
    ///
    /// κ does not enter the driver, only the flow, so `params` is accepted
    /// for signature symmetry with the other samplers.
    pub fn sample(_params: &SleParams, horizon: f64, step: f64, seed: u64) -> Result<Self> {
        let times = uniform_grid(horizon, step)?;
        let mut rng = path_rng(seed, STREAM_DRIVING, 0);
        let mut values = Vec::with_capacity(times.len());
        values.push(0.0);
        let mut u = 0.0;
        for w in times.windows(2) {
            let z: f64 = StandardNormal.sample(&mut rng);
            u -= (w[1] - w[0]).sqrt() * z;
            values.push(u);
        }
        DrivingPath::new(times, values, seed, MeasureTag::Plain)
    }

    /// Deterministic driver `t ↦ f(t)` on a uniform grid.
    pub fn from_fn(horizon: f64, step: f64, f: impl Fn(f64) -> f64) -> Result<Self> {
        let times = uniform_grid(horizon, step)?;
        let values = times.iter().map(|&t| f(t)).collect();
        DrivingPath::new(times, values, 0, MeasureTag::Plain)
    }

    pub fn constant(u: f64, horizon: f64, step: f64) -> Result<Self> {
        Self::from_fn(horizon, step, |_| u)
    }

    /// Brownian scaling: the driver `t ↦ r U_{t/r^2}`, whose hulls are the
    /// hulls of `U` dilated by `r`.
    pub fn scaled(&self, r: f64) -> Self {
        DrivingPath {
            times: self.times.iter().map(|t| t * r * r).collect(),
            values: self.values.iter().map(|u| u * r).collect(),
            seed: self.seed,
            tag: self.tag,
        }
    }

    /// The driver `-U`, whose hulls are mirror images.
    pub fn reflected(&self) -> Self {
        DrivingPath {
            times: self.times.clone(),
            values: self.values.iter().map(|u| -u).collect(),
            seed: self.seed,
            tag: self.tag,
        }
    }

    /// Prefix ending at grid index `k`.
    pub fn truncated(&self, k: usize) -> Self {
        DrivingPath {
            times: self.times[..=k].to_vec(),
            values: self.values[..=k].to_vec(),
            seed: self.seed,
            tag: self.tag,
        }
    }

    /// CSV with columns `t,U`. Floats use the shortest round-trip format, so
    /// reloading is bit exact.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,U\n");
        for (t, u) in self.times.iter().zip(&self.values) {
            let _ = writeln!(s, "{t:?},{u:?}");
        }
        s
    }

    pub fn from_csv(text: &str, seed: u64, tag: MeasureTag) -> Result<Self> {
        let mut times = Vec::new();
        let mut values = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if i == 0 || line.trim().is_empty() {
                continue;
            }
            let mut it = line.split(',');
            let parse = |f: Option<&str>| -> Result<f64> {
                f.ok_or_else(|| SleError::Parse(format!("line {}: missing column", i + 1)))?
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| SleError::Parse(format!("line {}: {e}", i + 1)))
            };
            times.push(parse(it.next())?);
            values.push(parse(it.next())?);
        }
        DrivingPath::new(times, values, seed, tag)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn load_csv(path: &Path, seed: u64, tag: MeasureTag) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path)?, seed, tag)
    }
}

/// `sample_driving` under its operation name.
pub fn sample_driving(params: &SleParams, horizon: f64, step: f64, seed: u64) -> Result<DrivingPath> {
    DrivingPath::sample(params, horizon, step, seed)
}

fn uniform_grid(horizon: f64, step: f64) -> Result<Vec<f64>> {
    if !(horizon.is_finite() && horizon > 0.0) {
        return invalid(format!("horizon must be positive and finite, got {horizon}"));
    }
    if !(step.is_finite() && step > 0.0) {
        return invalid(format!("step must be positive and finite, got {step}"));
    }
    let n = (horizon / step - 1e-9).ceil().max(1.0) as usize;
    let mut times: Vec<f64> = (0..n).map(|k| k as f64 * step).collect();
    times.push(horizon);
    Ok(times)
}

/// Square root of `v` lying in the closed upper half-plane. When the root is
/// real, the sign of `hint` picks the branch.
#[inline]
pub fn sqrt_upper(v: Complex64, hint: f64) -> Complex64 {
    let m = v.re.hypot(v.im);
    let t = (0.5 * (m + v.re.abs())).sqrt();
    if t == 0.0 {
        return Complex64::new(0.0, 0.0);
    }
    let root = if v.re >= 0.0 {
        Complex64::new(t, v.im / (2.0 * t))
    } else {
        Complex64::new(v.im.abs() / (2.0 * t), t.copysign(v.im))
    };
    if root.im < 0.0 || (root.im == 0.0 && hint < 0.0) {
        -root
    } else {
        root
    }
}

/// One slit step without swallowing checks: `(g(w) - u, g'(w))` for
/// `c = 2a dt`.
#[inline]
pub fn slit_step_raw(w: Complex64, u: f64, c: f64) -> (Complex64, Complex64) {
    let s = w - u;
    let root = sqrt_upper(s * s + c, s.re);
    (root, s / root)
}

/// Whether an interior point landed on the real line in a step.
#[inline]
pub fn is_swallowed(s: Complex64, mapped: Complex64, c: f64) -> bool {
    s.im > 0.0 && mapped.im <= SWALLOW_REL * (s.norm() + c.sqrt())
}

/// Exact one-cell map `w ↦ (g(w), g'(w))` for driver `u` held over `dt`.
///
/// An interior point lying on the removed slit is reported as
/// [`SleError::Swallowed`] with time offset within the cell.
pub fn slit_step(w: Complex64, u: f64, dt: f64, params: &SleParams) -> Result<(Complex64, Complex64)> {
    if !(dt >= 0.0 && dt.is_finite()) || !w.re.is_finite() || !w.im.is_finite() || w.im < 0.0 {
        return invalid("slit_step needs dt >= 0 and w in the closed upper half-plane");
    }
    let a = params.a();
    let c = 2.0 * a * dt;
    let s = w - u;
    let (root, dg) = slit_step_raw(w, u, c);
    if is_swallowed(s, root, c) || (s.im == 0.0 && s.re == 0.0) {
        return Err(SleError::Swallowed {
            time: swallow_offset(s, a, dt),
        });
    }
    Ok((root + u, dg))
}

#[inline]
fn swallow_offset(s: Complex64, a: f64, dt: f64) -> f64 {
    (-(s * s).re / (2.0 * a)).clamp(0.0, dt)
}

/// Inverse of one slit step: `ζ ↦ (h(ζ), h'(ζ))` with
/// `h(ζ) = u + sqrt((ζ - u)^2 - c)`.
#[inline]
pub fn inverse_slit_raw(zeta: Complex64, u: f64, c: f64) -> (Complex64, Complex64) {
    let s = zeta - u;
    let root = sqrt_upper(s * s - c, s.re);
    (root + u, s / root)
}

/// Minimal per-point flow state, advanced one cell at a time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointState {
    /// `g_t(z)` (not recentered).
    pub g: Complex64,
    pub dg: Complex64,
    pub upsilon: f64,
    /// Swallowing time proxy once the point has been swallowed.
    pub swallowed: Option<f64>,
}

impl PointState {
    pub fn new(z: Complex64) -> Self {
        PointState {
            g: z,
            dg: Complex64::new(1.0, 0.0),
            upsilon: z.im,
            swallowed: None,
        }
    }

    pub fn alive(&self) -> bool {
        self.swallowed.is_none()
    }

    /// Advances through the cell `[t, t + dt]` with frozen driver `u`.
    /// Returns `false` once the point is swallowed.
    #[inline]
    pub fn advance(&mut self, u: f64, t: f64, dt: f64, a: f64) -> bool {
        if self.swallowed.is_some() {
            return false;
        }
        let c = 2.0 * a * dt;
        let s = self.g - u;
        let (root, step_dg) = slit_step_raw(self.g, u, c);
        if is_swallowed(s, root, c) {
            self.swallowed = Some(t + swallow_offset(s, a, dt));
            return false;
        }
        // Υ_new / Υ_old = (Im g / Im w) / |g'|, which is at most one exactly;
        // the clamp only removes rounding.
        let factor = (root.im / s.im / step_dg.norm()).min(1.0);
        self.upsilon *= factor;
        self.g = root + u;
        self.dg *= step_dg;
        true
    }

    /// Like [`advance`](Self::advance) for a point on the real line, where
    /// only `g` is needed. Returns `false` once the point reaches the driver.
    #[inline]
    pub fn advance_real(&mut self, u: f64, t: f64, dt: f64, a: f64) -> bool {
        if self.swallowed.is_some() {
            return false;
        }
        let s = self.g.re - u;
        if s == 0.0 {
            self.swallowed = Some(t);
            return false;
        }
        let root = (s * s + 2.0 * a * dt).sqrt().copysign(s);
        self.dg *= s / root;
        self.g = Complex64::new(u + root, 0.0);
        true
    }

    pub fn snapshot(&self, z0: Complex64, t: f64, u: f64) -> TrackedPoint {
        let zz = self.g - u;
        TrackedPoint {
            z0,
            t,
            zz,
            dg: self.dg,
            upsilon: self.upsilon,
            sinangle: zz.im / zz.norm(),
            theta: zz.arg(),
            swallowed: self.swallowed,
        }
    }
}

/// Snapshot of a flowed interior point at capacity time `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackedPoint {
    pub z0: Complex64,
    pub t: f64,
    /// `Z_t = g_t(z0) - U_t`.
    pub zz: Complex64,
    /// `g_t'(z0)`.
    pub dg: Complex64,
    /// `Υ_t = Y_t / |g_t'(z0)|`.
    pub upsilon: f64,
    /// `S_t = Y_t / |Z_t| = sin θ_t`.
    pub sinangle: f64,
    pub theta: f64,
    pub swallowed: Option<f64>,
}

impl TrackedPoint {
    pub fn alive(&self) -> bool {
        self.swallowed.is_none()
    }
}

/// Optional refinement of the frozen-driver discretization for point
/// tracking.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowOptions {
    /// Split a cell when `|ΔU|^2 > refine_ratio |Z|^2`; 0 disables.
    pub refine_ratio: f64,
    /// Upper bound on the number of sub-cells per cell.
    pub max_split: usize,
}

impl Default for FlowOptions {
    fn default() -> Self {
        FlowOptions {
            refine_ratio: 0.0,
            max_split: 64,
        }
    }
}

impl FlowOptions {
    pub fn refined() -> Self {
        FlowOptions {
            refine_ratio: 0.1,
            max_split: 64,
        }
    }
}

/// Flows `z` along the whole path, returning one snapshot per grid time up
/// to and including the cell in which it is swallowed.
pub fn flow_point(driving: &DrivingPath, z: Complex64, params: &SleParams) -> Result<Vec<TrackedPoint>> {
    flow_point_with(driving, z, params, FlowOptions::default())
}

/// [`flow_point`] with refinement. Split cells use the linear interpolation
/// of the driver between grid values.
pub fn flow_point_with(
    driving: &DrivingPath,
    z: Complex64,
    params: &SleParams,
    opts: FlowOptions,
) -> Result<Vec<TrackedPoint>> {
    if !(z.im > 0.0) || !z.re.is_finite() || !z.im.is_finite() {
        return invalid("flow_point needs Im z > 0");
    }
    let a = params.a();
    let times = driving.times();
    let values = driving.values();
    let mut st = PointState::new(z);
    let mut out = Vec::with_capacity(times.len());
    out.push(st.snapshot(z, 0.0, values[0]));
    for k in 0..driving.cells() {
        let (u0, dt) = driving.cell(k);
        let u1 = values[k + 1];
        let zz = st.g - u0;
        let du = u1 - u0;
        let split = if opts.refine_ratio > 0.0 && du * du > opts.refine_ratio * zz.norm_sqr() {
            ((du * du / (opts.refine_ratio * zz.norm_sqr())).sqrt().ceil() as usize).clamp(1, opts.max_split)
        } else {
            1
        };
        let h = dt / split as f64;
        for j in 0..split {
            let u = u0 + du * j as f64 / split as f64;
            if !st.advance(u, times[k] + j as f64 * h, h, a) {
                break;
            }
        }
        out.push(st.snapshot(z, times[k + 1], u1));
        if !st.alive() {
            break;
        }
    }
    Ok(out)
}

/// `g_{t_k}(z)` and `g_{t_k}'(z)` for grid index `k`.
pub fn forward_map(driving: &DrivingPath, k: usize, z: Complex64, params: &SleParams) -> Result<(Complex64, Complex64)> {
    if k >= driving.len() {
        return invalid("grid index out of range");
    }
    let a = params.a();
    let mut st = PointState::new(z);
    for j in 0..k {
        let (u, dt) = driving.cell(j);
        if !st.advance(u, driving.times()[j], dt, a) {
            return Err(SleError::Swallowed {
                time: st.swallowed.unwrap(),
            });
        }
    }
    Ok((st.g, st.dg))
}

/// Sampled curve `γ(t_k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub times: Vec<f64>,
    pub points: Vec<Complex64>,
}

impl Trace {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,re,im\n");
        for (t, p) in self.times.iter().zip(&self.points) {
            let _ = writeln!(s, "{t:?},{:?},{:?}", p.re, p.im);
        }
        s
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn last(&self) -> Complex64 {
        *self.points.last().unwrap()
    }
}

/// Tip of cell `k` pulled back to the original domain, i.e. `γ(t_{k+1})`.
fn cell_tip(driving: &DrivingPath, k: usize, a: f64) -> Complex64 {
    let (u, dt) = driving.cell(k);
    let mut w = Complex64::new(u, (2.0 * a * dt).sqrt());
    for j in (0..k).rev() {
        let (uj, dtj) = driving.cell(j);
        w = inverse_slit_raw(w, uj, 2.0 * a * dtj).0;
    }
    // Rounding can leave a hair below the axis near swallowed boundary arcs.
    Complex64::new(w.re, w.im.max(0.0))
}

/// Trace at every grid time. Cost is quadratic in the number of cells.
pub fn extract_trace(driving: &DrivingPath, params: &SleParams) -> Trace {
    let idx: Vec<usize> = (0..driving.len()).collect();
    extract_trace_at(driving, &idx, params)
}

/// Trace at the grid indices `idx` only.
pub fn extract_trace_at(driving: &DrivingPath, idx: &[usize], params: &SleParams) -> Trace {
    let a = params.a();
    let mut times = Vec::with_capacity(idx.len());
    let mut points = Vec::with_capacity(idx.len());
    for &k in idx {
        times.push(driving.times()[k]);
        points.push(if k == 0 {
            Complex64::new(0.0, 0.0)
        } else {
            cell_tip(driving, k - 1, a)
        });
    }
    Trace { times, points }
}

/// The hull of the discretized flow as one polyline per cell: the slit
/// `[u_k, u_k + i√c_k]` sampled at `samples + 1` points and pulled back
/// through the earlier cells.
///
/// The tip polyline of [`extract_trace`] can miss parts of this hull, since
/// a cell's slit starts at `g_{t_k}^{-1}(u_k)`, which need not be the
/// previous tip when the driver jumps.
pub fn hull_polylines(driving: &DrivingPath, params: &SleParams, samples: usize) -> Vec<Vec<Complex64>> {
    let a = params.a();
    let samples = samples.max(1);
    (0..driving.cells())
        .map(|k| {
            let (u, dt) = driving.cell(k);
            let h = (2.0 * a * dt).sqrt();
            (0..=samples)
                .map(|i| {
                    // Start a hair above the base so the pullback picks the
                    // upper side of earlier slits.
                    let frac = (i as f64 / samples as f64).max(1e-9);
                    let mut w = Complex64::new(u, h * frac);
                    for j in (0..k).rev() {
                        let (uj, dtj) = driving.cell(j);
                        w = inverse_slit_raw(w, uj, 2.0 * a * dtj).0;
                    }
                    Complex64::new(w.re, w.im.max(0.0))
                })
                .collect()
        })
        .collect()
}

/// Roughly `count` evenly spaced grid indices, always including both ends.
pub fn subsample_indices(len: usize, count: usize) -> Vec<usize> {
    if count >= len || len < 2 {
        return (0..len).collect();
    }
    let mut idx: Vec<usize> = (0..count).map(|i| i * (len - 1) / (count - 1)).collect();
    idx.dedup();
    idx
}

/// `f̂_s(z) = g_s^{-1}(z + U_s)` and `|f̂_s'(z)|` for a grid time `s`.
pub fn inverse_map(driving: &DrivingPath, s: f64, z: Complex64, params: &SleParams) -> Result<(Complex64, f64)> {
    let k = driving.index_of_time(s)?;
    inverse_map_index(driving, k, z, params)
}

/// [`inverse_map`] at grid index `k`.
pub fn inverse_map_index(driving: &DrivingPath, k: usize, z: Complex64, params: &SleParams) -> Result<(Complex64, f64)> {
    if k >= driving.len() {
        return invalid("grid index out of range");
    }
    if !(z.im >= 0.0) {
        return invalid("inverse_map needs Im z >= 0");
    }
    let a = params.a();
    let mut w = z + driving.values()[k];
    let mut deriv = 1.0;
    for j in (0..k).rev() {
        let (u, dt) = driving.cell(j);
        let c = 2.0 * a * dt;
        let (h, dh) = inverse_slit_raw(w, u, c);
        if !dh.re.is_finite() || !dh.im.is_finite() {
            return Err(SleError::TipContact(format!("cell {j}, point {w}")));
        }
        deriv *= dh.norm();
        w = h;
    }
    Ok((w, deriv))
}

/// CSV with columns `t,X,Y,absdg,upsilon,S`.
pub fn flow_to_csv(snaps: &[TrackedPoint]) -> String {
    let mut s = String::from("t,X,Y,absdg,upsilon,S\n");
    for p in snaps {
        let _ = writeln!(
            s,
            "{:?},{:?},{:?},{:?},{:?},{:?}",
            p.t,
            p.zz.re,
            p.zz.im,
            p.dg.norm(),
            p.upsilon,
            p.sinangle
        );
    }
    s
}

/// Adaptive time step for tracking a point whose recentered image is `zz`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRule {
    pub max_dt: f64,
    /// Fraction of `|Z|^2 / a`.
    pub z_frac: f64,
    /// Fraction of `Y^2`.
    pub y_frac: f64,
    pub min_dt: f64,
    pub max_steps: usize,
}

impl StepRule {
    /// Default rule for a target at distance of order `scale` from the
    /// origin; every length-like quantity scales with it.
    pub fn for_scale(scale: f64) -> Self {
        StepRule {
            max_dt: 0.01 * scale * scale,
            z_frac: 0.0025,
            y_frac: 0.01,
            min_dt: 1e-16 * scale * scale,
            max_steps: 10_000_000,
        }
    }

    #[inline]
    pub fn dt(&self, a: f64, zz: Complex64) -> f64 {
        (self.z_frac * zz.norm_sqr() / a)
            .min(self.y_frac * zz.im * zz.im)
            .min(self.max_dt)
            .max(self.min_dt)
    }

    pub fn with_max_dt(mut self, max_dt: f64) -> Self {
        self.max_dt = max_dt;
        self
    }

    pub fn with_z_frac(mut self, z_frac: f64) -> Self {
        self.z_frac = z_frac;
        self
    }

    /// Step only resolving `|Z|`, used for points that are not the target.
    #[inline]
    pub fn dt_far(&self, a: f64, zz: Complex64) -> f64 {
        (self.z_frac * zz.norm_sqr() / a).min(self.max_dt).max(self.min_dt)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.max_dt > 0.0 && self.z_frac > 0.0 && self.y_frac > 0.0 && self.min_dt > 0.0 && self.max_steps > 0) {
            return invalid("step rule fields must be positive");
        }
        Ok(())
    }
}

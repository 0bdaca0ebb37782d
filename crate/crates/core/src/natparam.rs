//! The deficiency function φ, the supermartingale Ψ_t(D) = ∫_D M_t dA and
//! the discretized natural parametrization Θ_{t,n}(D).
//!
//! Θ is evaluated by the forward change of variables `w = f̂_s(z)`:
//! `|f̂_s'(z)|^d G(z) dA(z) = M_s(w) dA(w)` and `z = Z_s(w)`, so
//!
//! ```text
//! Θ_{t,n}(D) = Σ_{j ≤ t 2^n} ∫_D M_{s_j}(w) φ(2^{n/2} Z_{s_j}(w)) dA(w),   s_j = (j-1) 2^{-n}.
//! ```
//!
//! This only needs points of `D` flowed forward, so no bounding box in the
//! preimage is required. [`theta_tn_inverse`] evaluates the original form
//! over a caller-supplied box and is kept as a cross-check.

use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::conditioned::{martingale_mean, run_target, MartingaleStop, RunStatus, TargetOptions};
use crate::error::{invalid, Result, SleError};
use crate::loewner::{inverse_map_index, DrivingPath, PointState, StepRule};
use crate::mc::{derive_seed, par_map, path_rng, McEstimate};
use crate::observables::{green, martingale_value};
use crate::params::SleParams;

const STREAM_PHI: u64 = 0x7068_6901;

/// Axis-parallel rectangle in the upper half-plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxDomain {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl BoxDomain {
    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Result<Self> {
        if !(x0 < x1 && 0.0 < y0 && y0 < y1) || ![x0, x1, y0, y1].iter().all(|v| v.is_finite()) {
            return invalid("box needs x0 < x1 and 0 < y0 < y1");
        }
        Ok(BoxDomain { x0, x1, y0, y1 })
    }

    pub fn contains(&self, z: Complex64) -> bool {
        z.re >= self.x0 && z.re <= self.x1 && z.im >= self.y0 && z.im <= self.y1
    }

    pub fn area(&self) -> f64 {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }

    pub fn scaled(&self, r: f64) -> Self {
        BoxDomain {
            x0: r * self.x0,
            x1: r * self.x1,
            y0: r * self.y0,
            y1: r * self.y1,
        }
    }

    /// Smallest `m` with `D ⊂ {|x| < m, 1/m < y < m}`.
    pub fn class_index(&self) -> f64 {
        self.x0.abs().max(self.x1.abs()).max(self.y1).max(1.0 / self.y0)
    }
}

/// Tensor Gauss–Legendre rule on an `nx × ny` cell partition; `order = 1`
/// is the midpoint rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuadGrid {
    pub nx: usize,
    pub ny: usize,
    pub order: usize,
}

fn gauss_legendre(order: usize) -> &'static [(f64, f64)] {
    // nodes on [-1, 1], weights summing to 2
    const G1: [(f64, f64); 1] = [(0.0, 2.0)];
    const G2: [(f64, f64); 2] = [(-0.577_350_269_189_625_8, 1.0), (0.577_350_269_189_625_8, 1.0)];
    const G3: [(f64, f64); 3] = [
        (-0.774_596_669_241_483_4, 0.555_555_555_555_555_6),
        (0.0, 0.888_888_888_888_888_9),
        (0.774_596_669_241_483_4, 0.555_555_555_555_555_6),
    ];
    const G4: [(f64, f64); 4] = [
        (-0.861_136_311_594_052_6, 0.347_854_845_137_453_9),
        (-0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
        (0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
        (0.861_136_311_594_052_6, 0.347_854_845_137_453_9),
    ];
    match order {
        1 => &G1,
        2 => &G2,
        3 => &G3,
        _ => &G4,
    }
}

impl QuadGrid {
    pub fn midpoint(nx: usize, ny: usize) -> Self {
        QuadGrid { nx, ny, order: 1 }
    }

    pub fn refined(&self) -> Self {
        QuadGrid {
            nx: 2 * self.nx,
            ny: 2 * self.ny,
            order: self.order,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.ny == 0 || !(1..=4).contains(&self.order) {
            return invalid("quadrature grid needs nx, ny >= 1 and order in 1..=4");
        }
        Ok(())
    }

    /// Nodes and weights over `domain`.
    pub fn nodes(&self, domain: &BoxDomain) -> Vec<(Complex64, f64)> {
        let hx = (domain.x1 - domain.x0) / self.nx as f64;
        let hy = (domain.y1 - domain.y0) / self.ny as f64;
        let g = gauss_legendre(self.order);
        let mut out = Vec::with_capacity(self.nx * self.ny * g.len() * g.len());
        for i in 0..self.nx {
            let cx = domain.x0 + (i as f64 + 0.5) * hx;
            for j in 0..self.ny {
                let cy = domain.y0 + (j as f64 + 0.5) * hy;
                for &(ux, wx) in g {
                    for &(uy, wy) in g {
                        let p = Complex64::new(cx + 0.5 * hx * ux, cy + 0.5 * hy * uy);
                        out.push((p, 0.25 * hx * hy * wx * wy));
                    }
                }
            }
        }
        out
    }
}

/// `φ̂(z)` from the conditioned sampler and, optionally, the capped direct
/// estimate from plain SLE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhiEstimate {
    pub z: Complex64,
    pub horizon: f64,
    pub eps: f64,
    /// `P*_z{τ_ε <= horizon}` under two-sided radial SLE.
    pub phi: McEstimate,
    /// `1 - Ê[M_horizon(z) 1{τ_ε > horizon}] / G(z)` under plain SLE.
    pub direct: Option<McEstimate>,
}

impl PhiEstimate {
    /// Cross-validation verdict (true when no direct estimate was made).
    pub fn agrees(&self, k: f64) -> bool {
        // binomial estimates at 0 or 1 have zero sample SE; floor at 1/n
        self.direct.as_ref().map_or(true, |d| {
            let floor = 1.0 / self.phi.n.max(1) as f64;
            (self.phi.mean - d.mean).abs() <= k * self.phi.combined_se(d).max(floor)
        })
    }
}

/// `P*_z{τ_ε <= horizon}`; for small `ε` this is the deficiency
/// `1 - E[M_horizon(z)]/G(z)`.
pub fn estimate_phi_at(params: &SleParams, z: Complex64, horizon: f64, n: usize, eps: f64, seed: u64) -> Result<McEstimate> {
    if !(z.im > 0.0) {
        return invalid("phi needs Im z > 0");
    }
    if !(eps > 0.0 && eps < z.im) {
        return invalid("phi needs 0 < eps < Im z");
    }
    let opts = TargetOptions {
        horizon,
        rule: StepRule::for_scale(z.norm()),
        ..TargetOptions::radial(z, eps)
    };
    let hits = par_map(n, |i| {
        let mut rng = path_rng(seed, STREAM_PHI, i as u64);
        run_target(params, z, &[], &opts, seed, &mut rng, &mut |_| {})
            .map(|r| if r.status == RunStatus::StoppedAtEps { 1.0 } else { 0.0 })
    });
    let hits: Vec<f64> = hits.into_iter().collect::<Result<_>>()?;
    Ok(McEstimate::from_samples(&hits, seed))
}

/// Plain-SLE deficiency `1 - Ê[M_horizon(z) 1{τ_ε > horizon}]/G(z)`; the
/// cap at `Υ = ε` keeps the weights bounded by `ε^{d-2}`.
pub fn phi_direct(params: &SleParams, z: Complex64, horizon: f64, n: usize, eps: f64, seed: u64) -> Result<McEstimate> {
    if !(eps > 0.0 && eps < z.im) {
        return invalid("phi needs 0 < eps < Im z");
    }
    let capped = martingale_mean(params, z, eps, horizon, MartingaleStop::Capped, n, seed)?;
    Ok(capped.scale(-1.0 / green(params, z)).plus(&McEstimate::exact(1.0)))
}

/// `φ̂(z)` at horizon 1 with `ε = eps`; when `n_direct > 0` the capped
/// direct estimate at the same `ε` is attached for cross-validation.
pub fn estimate_phi(params: &SleParams, z: Complex64, n: usize, eps: f64, seed: u64, n_direct: usize) -> Result<PhiEstimate> {
    let phi = estimate_phi_at(params, z, 1.0, n, eps, seed)?;
    let direct = if n_direct > 0 {
        Some(phi_direct(params, z, 1.0, n_direct, eps, derive_seed(seed, 0xd1))?)
    } else {
        None
    };
    Ok(PhiEstimate {
        z,
        horizon: 1.0,
        eps,
        phi,
        direct,
    })
}

/// Log-polar node layout for [`PhiGrid`]. Radii are log-spaced over
/// `[r_min, r_max]` including both ends; angles sit at `(j + 1/2) π / n_theta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhiGridSpec {
    pub kappa: f64,
    pub r_min: f64,
    pub r_max: f64,
    pub n_r: usize,
    pub n_theta: usize,
    /// `ε = eps_frac · Im z` at each node.
    pub eps_frac: f64,
    /// Conditioned paths per node (each mirror pair pools two of these).
    pub paths: usize,
    /// Capped direct paths per node for cross-validation (0 disables).
    pub direct_paths: usize,
    /// Largest accepted standard error per node.
    pub se_cap: f64,
    pub seed: u64,
}

impl PhiGridSpec {
    pub fn desk(kappa: f64, seed: u64) -> Self {
        PhiGridSpec {
            kappa,
            r_min: 0.05,
            r_max: 8.0,
            n_r: 17,
            n_theta: 12,
            eps_frac: 0.01,
            paths: 1200,
            direct_paths: 600,
            se_cap: 0.02,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        SleParams::new(self.kappa)?;
        if !(0.0 < self.r_min && self.r_min < self.r_max && self.n_r >= 2 && self.n_theta >= 2 && self.n_theta % 2 == 0) {
            return invalid("phi grid needs 0 < r_min < r_max, n_r >= 2 and even n_theta >= 2");
        }
        if !(self.eps_frac > 0.0 && self.eps_frac < 1.0 && self.paths > 0 && self.se_cap > 0.0) {
            return invalid("phi grid needs eps_frac in (0,1), paths > 0, se_cap > 0");
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form; cache files are keyed by it.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("spec serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn radius(&self, i: usize) -> f64 {
        let f = i as f64 / (self.n_r - 1) as f64;
        (self.r_min.ln() + f * (self.r_max / self.r_min).ln()).exp()
    }

    pub fn angle(&self, j: usize) -> f64 {
        (j as f64 + 0.5) * PI / self.n_theta as f64
    }

    pub fn node(&self, i: usize, j: usize) -> Complex64 {
        Complex64::from_polar(self.radius(i), self.angle(j))
    }
}

/// Tabulated `φ̂` over a log-polar grid, bilinear in `(log|z|, arg z)`.
///
/// Outside the radial range: for `|z| > r_max` the value is 0 provided the
/// outer ring is below `OUTER_TOL`; for `|z| < r_min` the inner ring value
/// is used provided it is above `1 - INNER_TOL`. Otherwise lookups fail
/// with a coverage error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhiGrid {
    pub spec: PhiGridSpec,
    pub hash: String,
    /// Row-major `[i_r][j_theta]`.
    pub values: Vec<f64>,
    pub stderr: Vec<f64>,
    /// Nodes whose cross-validation or SE cap failed.
    pub flagged: Vec<(usize, usize)>,
    /// Nodes not computed when the budget ran out.
    pub missing: Vec<(usize, usize)>,
}

pub const OUTER_TOL: f64 = 0.02;
pub const INNER_TOL: f64 = 0.05;

/// Node-level record of a grid build.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhiNode {
    pub i: usize,
    pub j: usize,
    pub estimate: PhiEstimate,
}

/// Builds the grid. Mirror nodes `j` and `n_theta-1-j` are estimated
/// independently and averaged. `budget` caps the number of conditioned
/// paths; nodes beyond it are listed as missing.
pub fn build_phi_grid(spec: &PhiGridSpec, budget: usize) -> Result<(PhiGrid, Vec<PhiNode>)> {
    spec.validate()?;
    let params = SleParams::new(spec.kappa)?;
    let half = spec.n_theta / 2;
    let mut values = vec![f64::NAN; spec.n_r * spec.n_theta];
    let mut stderr = vec![f64::NAN; spec.n_r * spec.n_theta];
    let mut flagged = Vec::new();
    let mut missing = Vec::new();
    let mut nodes = Vec::new();
    let mut spent = 0usize;
    for i in 0..spec.n_r {
        for j in 0..half {
            let jm = spec.n_theta - 1 - j;
            if spent + 2 * spec.paths > budget {
                missing.push((i, j));
                missing.push((i, jm));
                continue;
            }
            spent += 2 * spec.paths;
            let mut pair = Vec::with_capacity(2);
            for &jj in &[j, jm] {
                let z = spec.node(i, jj);
                let seed = derive_seed(spec.seed, (i * spec.n_theta + jj) as u64);
                let est = estimate_phi(&params, z, spec.paths, spec.eps_frac * z.im, seed, spec.direct_paths)?;
                if !est.agrees(3.0) {
                    flagged.push((i, jj));
                }
                pair.push(est);
            }
            let m = 0.5 * (pair[0].phi.mean + pair[1].phi.mean);
            let se = 0.5 * pair[0].phi.combined_se(&pair[1].phi);
            if se > spec.se_cap {
                flagged.push((i, j));
            }
            for &jj in &[j, jm] {
                values[i * spec.n_theta + jj] = m;
                stderr[i * spec.n_theta + jj] = se;
            }
            for (jj, est) in [j, jm].into_iter().zip(pair) {
                nodes.push(PhiNode { i, j: jj, estimate: est });
            }
        }
    }
    Ok((
        PhiGrid {
            hash: spec.hash(),
            spec: spec.clone(),
            values,
            stderr,
            flagged,
            missing,
        },
        nodes,
    ))
}

impl PhiGrid {
    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.spec.n_theta + j]
    }

    pub fn se(&self, i: usize, j: usize) -> f64 {
        self.stderr[i * self.spec.n_theta + j]
    }

    pub fn set_value(&mut self, i: usize, j: usize, v: f64) {
        self.values[i * self.spec.n_theta + j] = v;
    }

    pub fn is_complete(&self) -> bool {
        self.missing.is_empty()
    }

    fn outer_ok(&self) -> bool {
        let i = self.spec.n_r - 1;
        (0..self.spec.n_theta).all(|j| self.value(i, j) <= OUTER_TOL)
    }

    fn inner_ok(&self) -> bool {
        (0..self.spec.n_theta).all(|j| self.value(0, j) >= 1.0 - INNER_TOL)
    }

    /// Checks that every node is present and both tails may be used.
    pub fn coverage(&self) -> Result<()> {
        let mut bad: Vec<(usize, usize)> = self.missing.clone();
        bad.extend(
            (0..self.spec.n_r)
                .flat_map(|i| (0..self.spec.n_theta).map(move |j| (i, j)))
                .filter(|&(i, j)| !self.value(i, j).is_finite()),
        );
        bad.sort_unstable();
        bad.dedup();
        if !bad.is_empty() {
            return Err(SleError::PhiCoverage {
                count: bad.len(),
                examples: bad.into_iter().take(8).collect(),
            });
        }
        Ok(())
    }

    /// Interpolated `φ̂(z)`.
    pub fn lookup(&self, z: Complex64) -> Result<f64> {
        let s = &self.spec;
        let r = z.norm();
        if !(z.im > 0.0) || !r.is_finite() {
            return invalid("phi lookup needs Im z > 0");
        }
        if r > s.r_max {
            if self.outer_ok() {
                return Ok(0.0);
            }
            return Err(SleError::PhiCoverage {
                count: 1,
                examples: vec![(s.n_r, 0)],
            });
        }
        let (fi, i0) = if r < s.r_min {
            if !self.inner_ok() {
                return Err(SleError::PhiCoverage {
                    count: 1,
                    examples: vec![(0, 0)],
                });
            }
            (0.0, 0)
        } else {
            let x = (r / s.r_min).ln() / (s.r_max / s.r_min).ln() * (s.n_r - 1) as f64;
            let i0 = (x.floor() as usize).min(s.n_r - 2);
            (x - i0 as f64, i0)
        };
        let th = z.arg();
        let y = (th / PI * s.n_theta as f64 - 0.5).clamp(0.0, (s.n_theta - 1) as f64);
        let j0 = (y.floor() as usize).min(s.n_theta - 2);
        let fj = y - j0 as f64;
        let v00 = self.value(i0, j0);
        let v01 = self.value(i0, j0 + 1);
        let v10 = self.value(i0 + 1, j0);
        let v11 = self.value(i0 + 1, j0 + 1);
        let v = (1.0 - fi) * ((1.0 - fj) * v00 + fj * v01) + fi * ((1.0 - fj) * v10 + fj * v11);
        if !v.is_finite() {
            return Err(SleError::PhiCoverage {
                count: 1,
                examples: vec![(i0, j0)],
            });
        }
        Ok(v)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let g: PhiGrid = serde_json::from_str(text)?;
        if g.hash != g.spec.hash() {
            return Err(SleError::Parse("phi grid hash does not match its spec".into()));
        }
        if g.values.len() != g.spec.n_r * g.spec.n_theta || g.stderr.len() != g.values.len() {
            return Err(SleError::Parse("phi grid body has the wrong size".into()));
        }
        Ok(g)
    }

    /// File name used inside a cache directory.
    pub fn file_name(spec: &PhiGridSpec) -> String {
        format!("phi-{}.json", &spec.hash()[..16])
    }

    pub fn save(&self, dir: &Path) -> Result<std::path::PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(Self::file_name(&self.spec));
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, self.to_json()?)?;
        std::fs::rename(&tmp, &path)?;
        Ok(path)
    }

    pub fn load(dir: &Path, spec: &PhiGridSpec) -> Result<Self> {
        let path = dir.join(Self::file_name(spec));
        let text = std::fs::read_to_string(&path)
            .map_err(|_| SleError::MissingGrid(format!("no phi grid at {}", path.display())))?;
        let g = Self::from_json(&text)?;
        if g.spec != *spec {
            return Err(SleError::MissingGrid("cached phi grid has a different spec".into()));
        }
        Ok(g)
    }
}

/// Time stepping and quadrature refinement for [`flow_table_with`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    /// A point steps over `2^k` driver cells at once while
    /// `a · dt / |Z|^2 <= z_frac`; 0 steps every cell.
    pub z_frac: f64,
    /// Rounds of 2×2 subdivision of cells the curve comes close to.
    pub refine_levels: u32,
    /// A cell with half-diagonal `r` is split when `Υ_T(center) <= factor · r`.
    pub refine_factor: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            z_frac: 0.01,
            refine_levels: 0,
            refine_factor: 3.0,
        }
    }
}

/// Continuity correction for the maximum of a discretely monitored
/// Brownian motion: `-ζ(1/2)/√(2π)`.
const BGK_BETA: f64 = 0.582_597_157_939_010_6;

/// Per-path flow of a quadrature rule, sampled at dyadic times.
#[derive(Debug, Clone)]
pub struct FlowTable {
    /// Dyadic level `L`; snapshots at `k 2^{-L}`.
    pub level: u32,
    pub times: Vec<f64>,
    pub nodes: Vec<Complex64>,
    pub weights: Vec<f64>,
    /// `M_{t_k}(w_p)` (0 once swallowed), indexed `[k][p]`.
    pub m: Vec<Vec<f64>>,
    /// `Z_{t_k}(w_p)`.
    pub z: Vec<Vec<Complex64>>,
    /// Running sup of `M(w_p)` up to `t_k`, monitored at the point's own
    /// step ends with a continuity correction for the excursions between
    /// them.
    pub sup_m: Vec<Vec<f64>>,
    pub d: f64,
}

pub struct NodeFlow {
    pub m: Vec<f64>,
    pub z: Vec<Complex64>,
    pub sup: Vec<f64>,
    pub upsilon: f64,
}

/// Flows one point over a uniform driver grid with dyadic step merging,
/// stopping at every multiple of `stride` cells.
pub fn flow_node(params: &SleParams, driving: &DrivingPath, w: Complex64, stride: usize, snaps: usize, z_frac: f64) -> NodeFlow {
    let a = params.a();
    let times = driving.times();
    let values = driving.values();
    let delta = times[1] - times[0];
    let mut st = PointState::new(w);
    let g0 = green(params, w);
    let mut sup = g0;
    let mut out = NodeFlow {
        m: Vec::with_capacity(snaps + 1),
        z: Vec::with_capacity(snaps + 1),
        sup: Vec::with_capacity(snaps + 1),
        upsilon: w.im,
    };
    out.m.push(g0);
    out.z.push(w);
    out.sup.push(g0);
    let mut i = 0usize;
    for k in 1..=snaps {
        let end = k * stride;
        while i < end && st.alive() {
            let zz = st.g - values[i];
            let mut s = 1usize;
            if z_frac > 0.0 {
                let allowed = z_frac * zz.norm_sqr() / (a * delta);
                let lowbit = if i == 0 { usize::MAX } else { 1 << i.trailing_zeros() };
                while (2 * s) as f64 <= allowed && 2 * s <= lowbit && i + 2 * s <= end {
                    s *= 2;
                }
            }
            let dt = times[i + s] - times[i];
            st.advance(values[i], times[i], dt, a);
            i += s;
            if st.alive() {
                let zn = st.g - values[i];
                let mv = martingale_value(params, st.upsilon, zn.im / zn.norm());
                // log M moves like σ·U with σ = (4a-1)|X|/|Z|^2; shift the
                // monitored value for the excursions between step ends
                let sigma = (4.0 * a - 1.0) * zn.re.abs() / zn.norm_sqr();
                let corrected = mv * (BGK_BETA * sigma * dt.sqrt()).exp();
                if corrected > sup {
                    sup = corrected;
                }
            }
        }
        i = end;
        if st.alive() {
            let zz = st.g - values[end];
            out.m.push(martingale_value(params, st.upsilon, zz.im / zz.norm()));
            out.z.push(zz);
        } else {
            out.m.push(0.0);
            out.z.push(Complex64::new(0.0, 0.0));
        }
        out.sup.push(sup);
    }
    out.upsilon = if st.alive() { st.upsilon } else { 0.0 };
    out
}

/// [`flow_table_with`] using the default [`FlowConfig`] without refinement.
pub fn flow_table(
    params: &SleParams,
    driving: &DrivingPath,
    domain: &BoxDomain,
    quad: &QuadGrid,
    level: u32,
    horizon: f64,
) -> Result<FlowTable> {
    flow_table_with(params, driving, domain, quad, level, horizon, &FlowConfig::default())
}

/// Flows the quadrature nodes over `domain` along `driving` (a uniform
/// grid whose step divides `2^{-level}`) up to `horizon`, recording the
/// snapshots at every multiple of `2^{-level}`.
///
/// With `refine_levels > 0` the rule is the midpoint rule on `quad`'s cells,
/// and cells whose center has `Υ_horizon <= refine_factor · r` are split
/// into four, recursively. Since `Υ ≍ dist(·, γ ∪ ℝ)`, every cell the curve
/// crosses before `horizon` is refined.
#[allow(clippy::too_many_arguments)]
pub fn flow_table_with(
    params: &SleParams,
    driving: &DrivingPath,
    domain: &BoxDomain,
    quad: &QuadGrid,
    level: u32,
    horizon: f64,
    cfg: &FlowConfig,
) -> Result<FlowTable> {
    quad.validate()?;
    let h = 2f64.powi(-(level as i32));
    let snaps = (horizon / h).round() as usize;
    if snaps == 0 || ((snaps as f64) * h - horizon).abs() > 1e-9 * horizon.max(1.0) {
        return invalid("horizon must be a positive multiple of 2^-level");
    }
    if driving.horizon() < horizon * (1.0 - 1e-12) {
        return invalid("driving path is shorter than the horizon");
    }
    let times = driving.times();
    let delta = times[1] - times[0];
    let stride = (h / delta).round() as usize;
    if stride == 0 || ((stride as f64) * delta - h).abs() > 1e-9 * h {
        return invalid("driver step must divide 2^-level");
    }
    let cells_needed = snaps * stride;
    if driving.cells() < cells_needed {
        return invalid("driving path is shorter than the horizon");
    }
    for (k, t) in times.iter().enumerate().take(cells_needed + 1).step_by(stride.max(1)) {
        if (t - k as f64 * delta).abs() > 1e-9 * t.max(delta) {
            return invalid("flow tables need a uniform driver grid");
        }
    }
    let mut leaves: Vec<(Complex64, f64, NodeFlow)> = Vec::new();
    if cfg.refine_levels == 0 {
        for (w, wt) in quad.nodes(domain) {
            leaves.push((w, wt, flow_node(params, driving, w, stride, snaps, cfg.z_frac)));
        }
    } else {
        let hx = (domain.x1 - domain.x0) / quad.nx as f64;
        let hy = (domain.y1 - domain.y0) / quad.ny as f64;
        let mut cells: Vec<(Complex64, f64, f64)> = Vec::with_capacity(quad.nx * quad.ny);
        for i in 0..quad.nx {
            for j in 0..quad.ny {
                let c = Complex64::new(domain.x0 + (i as f64 + 0.5) * hx, domain.y0 + (j as f64 + 0.5) * hy);
                cells.push((c, hx, hy));
            }
        }
        for lev in 0..=cfg.refine_levels {
            let mut next = Vec::new();
            for (c, cx, cy) in cells {
                let f = flow_node(params, driving, c, stride, snaps, cfg.z_frac);
                let r = 0.5 * cx.hypot(cy);
                if lev < cfg.refine_levels && f.upsilon <= cfg.refine_factor * r {
                    for (sx, sy) in [(-0.25, -0.25), (-0.25, 0.25), (0.25, -0.25), (0.25, 0.25)] {
                        next.push((c + Complex64::new(sx * cx, sy * cy), 0.5 * cx, 0.5 * cy));
                    }
                } else {
                    leaves.push((c, cx * cy, f));
                }
            }
            cells = next;
        }
    }
    let mut table = FlowTable {
        level,
        times: (0..=snaps).map(|k| k as f64 * h).collect(),
        nodes: leaves.iter().map(|l| l.0).collect(),
        weights: leaves.iter().map(|l| l.1).collect(),
        m: vec![Vec::with_capacity(leaves.len()); snaps + 1],
        z: vec![Vec::with_capacity(leaves.len()); snaps + 1],
        sup_m: vec![Vec::with_capacity(leaves.len()); snaps + 1],
        d: params.d(),
    };
    for (_, _, f) in leaves {
        for k in 0..=snaps {
            table.m[k].push(f.m[k]);
            table.z[k].push(f.z[k]);
            table.sup_m[k].push(f.sup[k]);
        }
    }
    Ok(table)
}

impl FlowTable {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    fn index(&self, t: f64) -> Result<usize> {
        let h = 2f64.powi(-(self.level as i32));
        let k = (t / h).round() as usize;
        if k >= self.times.len() || ((k as f64) * h - t).abs() > 1e-9 * t.max(1.0) {
            return invalid(format!("t = {t} is not a tabulated dyadic time"));
        }
        Ok(k)
    }

    /// `Ψ_t(D)`.
    pub fn psi(&self, t: f64) -> Result<f64> {
        let k = self.index(t)?;
        Ok(self.m[k].iter().zip(&self.weights).map(|(m, w)| m * w).sum())
    }

    /// One summand `∫_D M_s φ(2^{n/2} Z_s) dA` at tabulated index `k`.
    fn theta_term(&self, k: usize, n: u32, phi: &PhiGrid) -> Result<f64> {
        let scale = 2f64.powf(0.5 * n as f64);
        let mut acc = 0.0;
        for ((m, z), w) in self.m[k].iter().zip(&self.z[k]).zip(&self.weights) {
            if *m > 0.0 {
                acc += w * m * phi.lookup(scale * z)?;
            }
        }
        Ok(acc)
    }

    /// `Θ_{t,n}(D)` at every multiple of `2^{-n}` up to the table horizon.
    pub fn theta_curve(&self, n: u32, phi: &PhiGrid) -> Result<Vec<(f64, f64)>> {
        if n > self.level {
            return invalid(format!("n = {n} exceeds the tabulated level {}", self.level));
        }
        let stride = 1usize << (self.level - n);
        let mut out = vec![(0.0, 0.0)];
        let mut acc = 0.0;
        let mut k = 0;
        while k + stride < self.times.len() {
            acc += self.theta_term(k, n, phi)?;
            k += stride;
            out.push((self.times[k], acc));
        }
        Ok(out)
    }

    /// `Θ_{t,n}(D)` with linear interpolation between dyadic times.
    pub fn theta(&self, t: f64, n: u32, phi: &PhiGrid) -> Result<f64> {
        let curve = self.theta_curve(n, phi)?;
        interpolate(&curve, t)
    }

    /// `ε^{d-2} · Area(D ∩ {sup_{s <= t} M_s >= ε^{d-2}})`.
    pub fn minkowski(&self, eps: f64, t: f64) -> Result<f64> {
        if !(eps > 0.0) {
            return invalid("eps must be positive");
        }
        let k = self.index(t)?;
        let lambda = eps.powf(self.d - 2.0);
        Ok(lambda
            * self.sup_m[k]
                .iter()
                .zip(&self.weights)
                .filter(|(s, _)| **s >= lambda)
                .map(|(_, w)| w)
                .sum::<f64>())
    }

    /// Cell-wise membership in `γ^ε(0, t]`.
    pub fn minkowski_set(&self, eps: f64, t: f64) -> Result<Vec<bool>> {
        let k = self.index(t)?;
        let lambda = eps.powf(self.d - 2.0);
        Ok(self.sup_m[k].iter().map(|s| *s >= lambda).collect())
    }
}

fn interpolate(curve: &[(f64, f64)], t: f64) -> Result<f64> {
    let last = curve.last().unwrap();
    if t < 0.0 || t > last.0 * (1.0 + 1e-12) {
        return invalid(format!("t = {t} outside [0, {}]", last.0));
    }
    for w in curve.windows(2) {
        if t <= w[1].0 {
            let f = (t - w[0].0) / (w[1].0 - w[0].0);
            return Ok(w[0].1 + f * (w[1].1 - w[0].1));
        }
    }
    Ok(last.1)
}

/// `Ψ_t(D) = ∫_D M_t dA` by the quadrature rule, `t` a grid time.
pub fn psi_integral(params: &SleParams, driving: &DrivingPath, t: f64, domain: &BoxDomain, quad: &QuadGrid) -> Result<f64> {
    quad.validate()?;
    let k = driving.index_of_time(t)?;
    let a = params.a();
    let u_end = driving.values()[k];
    let times = driving.times();
    let mut acc = 0.0;
    for (w, wt) in quad.nodes(domain) {
        let mut st = PointState::new(w);
        for cell in 0..k {
            let (u, dt) = driving.cell(cell);
            if !st.advance(u, times[cell], dt, a) {
                break;
            }
        }
        if st.alive() {
            let zz = st.g - u_end;
            acc += wt * martingale_value(params, st.upsilon, zz.im / zz.norm());
        }
    }
    Ok(acc)
}

/// Θ curve of one path at one level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NatParamEstimate {
    pub n: u32,
    /// `(t, Θ_{t,n}(D))` at multiples of `2^{-n}`.
    pub curve: Vec<(f64, f64)>,
    pub quad: QuadGrid,
    pub driving_seed: u64,
}

impl NatParamEstimate {
    pub fn at(&self, t: f64) -> Result<f64> {
        interpolate(&self.curve, t)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,theta,n\n");
        for (t, v) in &self.curve {
            s.push_str(&format!("{t},{v},{}\n", self.n));
        }
        s
    }
}

/// `Θ_{s,n}(D)` for `s <= t` (forward route).
pub fn theta_tn(
    params: &SleParams,
    driving: &DrivingPath,
    domain: &BoxDomain,
    t: f64,
    n: u32,
    phi: &PhiGrid,
    quad: &QuadGrid,
) -> Result<NatParamEstimate> {
    let table = flow_table(params, driving, domain, quad, n, t)?;
    Ok(NatParamEstimate {
        n,
        curve: table.theta_curve(n, phi)?,
        quad: *quad,
        driving_seed: driving.seed(),
    })
}

/// `Θ_{t,n}(D)` in its original form: `Σ_j ∫ |f̂'(z)|^d φ(2^{n/2} z) G(z)
/// 1{f̂(z) ∈ D} dA(z)` with `f̂ = f̂_{s_j}` from the inverse slit maps, over
/// the caller-supplied box `zbox` of preimage points.
#[allow(clippy::too_many_arguments)]
pub fn theta_tn_inverse(
    params: &SleParams,
    driving: &DrivingPath,
    domain: &BoxDomain,
    t: f64,
    n: u32,
    phi: &PhiGrid,
    zbox: &BoxDomain,
    quad: &QuadGrid,
) -> Result<f64> {
    let h = 2f64.powi(-(n as i32));
    let steps = (t / h).round() as usize;
    let d = params.d();
    let scale = 2f64.powf(0.5 * n as f64);
    let nodes = quad.nodes(zbox);
    let mut acc = 0.0;
    for j in 0..steps {
        let k = driving.index_of_time(j as f64 * h)?;
        for &(z, w) in &nodes {
            let Ok((fz, df)) = inverse_map_index(driving, k, z, params) else {
                continue;
            };
            if domain.contains(fz) {
                acc += w * df.powf(d) * phi.lookup(scale * z)? * green(params, z);
            }
        }
    }
    Ok(acc)
}

/// Ensemble diagnostics of the Cauchy behaviour of `Θ_{T,n}` in `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CauchyReport {
    pub horizon: f64,
    pub n_list: Vec<u32>,
    /// `mean |Θ_{T,n_{i+1}} - Θ_{T,n_i}|` for consecutive levels.
    pub diffs: Vec<McEstimate>,
    /// `mean[Ψ_T + Θ_{T,n_max}]`.
    pub psi_plus_theta: McEstimate,
}

impl CauchyReport {
    pub fn strictly_decreasing(&self) -> bool {
        self.diffs.windows(2).all(|w| w[1].mean < w[0].mean)
    }
}

/// Runs [`flow_table`] on each driver and reports successive differences.
pub fn theta_convergence_diag(
    params: &SleParams,
    drivings: &[DrivingPath],
    domain: &BoxDomain,
    horizon: f64,
    n_list: &[u32],
    phi: &PhiGrid,
    quad: &QuadGrid,
) -> Result<CauchyReport> {
    if n_list.len() < 2 || n_list.windows(2).any(|w| w[1] <= w[0]) {
        return invalid("n_list must be increasing with at least two levels");
    }
    let level = *n_list.last().unwrap();
    let rows = par_map(drivings.len(), |i| -> Result<(Vec<f64>, f64)> {
        let table = flow_table(params, &drivings[i], domain, quad, level, horizon)?;
        let thetas: Vec<f64> = n_list
            .iter()
            .map(|&n| table.theta(horizon, n, phi))
            .collect::<Result<_>>()?;
        let diffs = thetas.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
        Ok((diffs, table.psi(horizon)? + thetas.last().unwrap()))
    });
    let rows: Vec<(Vec<f64>, f64)> = rows.into_iter().collect::<Result<_>>()?;
    let seed = drivings.first().map_or(0, |d| d.seed());
    let diffs = (0..n_list.len() - 1)
        .map(|j| {
            let v: Vec<f64> = rows.iter().map(|r| r.0[j]).collect();
            McEstimate::from_samples(&v, seed)
        })
        .collect();
    let s: Vec<f64> = rows.iter().map(|r| r.1).collect();
    Ok(CauchyReport {
        horizon,
        n_list: n_list.to_vec(),
        diffs,
        psi_plus_theta: McEstimate::from_samples(&s, seed),
    })
}

/// `ε^{d-2} · Area(D ∩ γ^ε(0, t])` on one path.
pub fn minkowski_estimate(
    params: &SleParams,
    driving: &DrivingPath,
    domain: &BoxDomain,
    eps: f64,
    t: f64,
    quad: &QuadGrid,
) -> Result<f64> {
    // level 0 only needs snapshots at integer times; use the finest level
    // that divides t instead
    let level = (0u32..=20).find(|&l| {
        let k = t * 2f64.powi(l as i32);
        (k - k.round()).abs() < 1e-9
    });
    let Some(level) = level else {
        return invalid("t must be a dyadic rational");
    };
    flow_table(params, driving, domain, quad, level, t)?.minkowski(eps, t)
}

/// `Θ` curves for several levels as CSV (`t, theta, n`).
pub fn theta_csv(curves: &[NatParamEstimate]) -> String {
    let mut s = String::from("t,theta,n\n");
    for c in curves {
        for (t, v) in &c.curve {
            s.push_str(&format!("{t},{v},{}\n", c.n));
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::adaptive_simpson_2d;

    fn p() -> SleParams {
        SleParams::new(8.0 / 3.0).unwrap()
    }

    #[test]
    fn psi_at_zero_matches_adaptive_quadrature() {
        let d = BoxDomain::new(-1.0, 1.0, 0.25, 1.25).unwrap();
        let path = DrivingPath::constant(0.0, 0.25, 1.0 / 64.0).unwrap();
        let q = QuadGrid { nx: 16, ny: 8, order: 4 };
        let v = psi_integral(&p(), &path, 0.0, &d, &q).unwrap();
        let exact = adaptive_simpson_2d(|x, y| green(&p(), Complex64::new(x, y)), (-1.0, 1.0), (0.25, 1.25), 1e-12);
        assert!(((v - exact) / exact).abs() < 1e-6, "{v} vs {exact}");
    }

    #[test]
    fn quad_weights_sum_to_area() {
        let d = BoxDomain::new(-0.5, 1.0, 0.1, 0.7).unwrap();
        for order in 1..=4 {
            let s: f64 = QuadGrid { nx: 3, ny: 5, order }.nodes(&d).iter().map(|n| n.1).sum();
            assert!((s - d.area()).abs() < 1e-12);
        }
    }

    #[test]
    fn spec_hash_depends_on_kappa() {
        let a = PhiGridSpec::desk(8.0 / 3.0, 1);
        let b = PhiGridSpec::desk(2.0, 1);
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash(), PhiGridSpec::desk(8.0 / 3.0, 1).hash());
    }
}

//! Experiment configuration: one JSON document per run.
//!
//! A config file may be partial. Its keys are merged over the registered
//! defaults for the named experiment, so `{"budgets": {"paths": 500}}` is a
//! valid override. Validation runs before any sampling and reports every
//! offending field.

use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use sle_core::natparam::{BoxDomain, PhiGridSpec, QuadGrid};
use sle_core::{Complex64, SleParams};

/// Registered experiments, one per acceptance criterion, in order.
pub const REGISTRY: [(&str, &str); 12] = [
    ("flow-oracle", "slit-map flow against the closed form for a constant driver"),
    ("martingale-one", "stopped one-point martingale has mean G(z)"),
    ("supermartingale-deficiency", "unstopped M_1 loses mass, and the loss matches φ(z)·G(z)"),
    ("one-point", "P{τ_ε < ∞} against ε^{2-d} G(z) ψ(t, arg z)"),
    ("psi-limit", "ψ(t, x) converges to 2C_{2r} at the expected rate"),
    ("two-point-exponent", "log-log slope of Ĝ(z, w) as w approaches z"),
    ("correlation-lower", "F(z, w) + F(w, z) bounded below over a grid of pairs"),
    ("lshape", "two-sided radial SLE stays in the L-shaped corridor with positive probability"),
    ("natparam-drift", "Ψ_T + Θ_{T,n} has constant mean and Θ is increasing"),
    ("natparam-cauchy", "successive differences of Θ_{T,n} shrink in n"),
    ("minkowski", "Minkowski-type content approaches Θ_{T,6} as ε shrinks"),
    ("dimension-scaling", "Θ scales with exponent d under Brownian rescaling"),
];

pub fn registry_names() -> Vec<&'static str> {
    REGISTRY.iter().map(|r| r.0).collect()
}

/// Points, regions and scales an experiment works with. Fields an
/// experiment does not use are left empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct Geometry {
    pub z: Vec<Complex64>,
    pub w: Vec<Complex64>,
    pub domain: Option<BoxDomain>,
    pub rho: Option<f64>,
    /// Absolute stopping radii (or Minkowski radii).
    pub eps: Vec<f64>,
    /// Stopping radius relative to the local length scale of each target.
    pub eps_frac: Option<f64>,
    pub delta: Option<f64>,
    /// Angles in (0, π) for ψ.
    pub x: Vec<f64>,
    /// Separations `|z - w|` or spatial rescalings `r`.
    pub scales: Vec<f64>,
    /// Evaluation times.
    pub times: Vec<f64>,
    /// Dyadic levels `n` of Θ_{t,n}.
    pub levels: Vec<u32>,
    /// The level the verdict is stated for.
    pub level: Option<u32>,
    /// Long-time evaluation point (ψ limit).
    pub horizon: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Budgets {
    /// Paths for the primary estimator.
    pub paths: usize,
    /// Paths for the independent oracle the primary estimate is compared to.
    pub oracle_paths: usize,
    /// Step of the one-dimensional SDE schemes.
    pub sde_dt: f64,
    /// Driver grid step is `2^-driver_log2`.
    pub driver_log2: u32,
    pub quad: QuadGrid,
    pub refine_levels: u32,
    pub z_frac: f64,
    pub phi: Option<PhiGridSpec>,
}

impl Default for Budgets {
    fn default() -> Self {
        Budgets {
            paths: 1000,
            oracle_paths: 0,
            sde_dt: 1e-3,
            driver_log2: 10,
            quad: QuadGrid::midpoint(16, 8),
            refine_levels: 0,
            z_frac: 0.01,
            phi: None,
        }
    }
}

/// Verdict tolerances. Defaults follow the acceptance statements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    /// Agreement and positivity are judged at `k_se` standard errors.
    pub k_se: f64,
    pub rel_err: f64,
    pub time_err: f64,
    /// Half-width of the accepted band around a predicted slope.
    pub slope_tol: f64,
    /// ψ convergence slope must be at most `-(r + slope_margin)`.
    pub slope_margin: f64,
    /// Wall-clock limit in seconds (0 disables).
    pub runtime_s: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            k_se: 3.0,
            rel_err: 1e-8,
            time_err: 1e-4,
            slope_tol: 0.15,
            slope_margin: 0.3,
            runtime_s: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: String,
    pub kappas: Vec<f64>,
    #[serde(default)]
    pub geometry: Geometry,
    #[serde(default)]
    pub budgets: Budgets,
    #[serde(default)]
    pub tolerances: Tolerances,
    pub seed: u64,
    /// Where artifacts go; not part of the hash.
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    /// φ-grid cache directory; not part of the hash.
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConfigError {
    UnknownExperiment(String),
    Invalid { experiment: String, diagnostics: Vec<String> },
    Parse(String),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::UnknownExperiment(name) => {
                writeln!(f, "unknown experiment `{name}`; registered experiments:")?;
                for (n, what) in REGISTRY {
                    writeln!(f, "  {n:<28} {what}")?;
                }
                Ok(())
            }
            ConfigError::Invalid { experiment, diagnostics } => {
                writeln!(f, "invalid config for `{experiment}`:")?;
                for d in diagnostics {
                    writeln!(f, "  {d}")?;
                }
                Ok(())
            }
            ConfigError::Parse(msg) => write!(f, "config parse error: {msg}"),
        }
    }
}

impl std::error::Error for ConfigError {}

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn natparam_budgets(seed: u64) -> Budgets {
    Budgets {
        paths: 500,
        driver_log2: 16,
        quad: QuadGrid::midpoint(16, 8),
        refine_levels: 3,
        z_frac: 0.01,
        phi: Some(PhiGridSpec {
            direct_paths: 0,
            ..PhiGridSpec::desk(8.0 / 3.0, seed)
        }),
        ..Budgets::default()
    }
}

fn natparam_geometry() -> Geometry {
    Geometry {
        domain: Some(BoxDomain { x0: -1.0, x1: 1.0, y0: 0.25, y1: 1.25 }),
        times: vec![0.25, 0.5, 1.0],
        levels: vec![4, 5, 6, 7],
        level: Some(6),
        eps: vec![0.2, 0.1, 0.05],
        ..Geometry::default()
    }
}

impl ExperimentConfig {
    /// Registered defaults for `name`.
    pub fn default_for(name: &str) -> Result<Self, ConfigError> {
        let seed = 20_240_601;
        let k83 = vec![8.0 / 3.0];
        let base = |kappas: Vec<f64>, geometry: Geometry, budgets: Budgets, tolerances: Tolerances| ExperimentConfig {
            experiment: name.to_string(),
            kappas,
            geometry,
            budgets,
            tolerances,
            seed,
            out_dir: None,
            cache_dir: None,
        };
        let tol = |runtime_s: f64| Tolerances { runtime_s, ..Tolerances::default() };
        let cfg = match name {
            "flow-oracle" => base(
                vec![2.0, 8.0 / 3.0, 6.0],
                Geometry { z: vec![c(0.0, 1.0)], ..Geometry::default() },
                Budgets { driver_log2: 0, ..Budgets::default() },
                tol(1.0),
            ),
            "martingale-one" => base(
                k83,
                Geometry { z: vec![c(0.0, 1.0)], eps: vec![0.2], times: vec![1.0], ..Geometry::default() },
                Budgets { paths: 20_000, ..Budgets::default() },
                tol(120.0),
            ),
            "supermartingale-deficiency" => base(
                k83,
                Geometry { z: vec![c(0.0, 1.0)], eps: vec![0.01], times: vec![1.0], ..Geometry::default() },
                Budgets { paths: 20_000, oracle_paths: 20_000, ..Budgets::default() },
                tol(0.0),
            ),
            "one-point" => base(
                k83,
                Geometry { z: vec![c(0.0, 1.0)], eps: vec![0.5], ..Geometry::default() },
                Budgets { paths: 40_000, oracle_paths: 200_000, sde_dt: 1e-4, ..Budgets::default() },
                tol(300.0),
            ),
            "psi-limit" => base(
                vec![2.0, 8.0 / 3.0],
                Geometry {
                    x: vec![0.3, PI / 2.0],
                    horizon: Some(5.0),
                    times: vec![1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0],
                    ..Geometry::default()
                },
                Budgets { paths: 20_000, oracle_paths: 20_000, sde_dt: 1e-3, ..Budgets::default() },
                tol(0.0),
            ),
            "two-point-exponent" => base(
                k83,
                Geometry {
                    z: vec![c(0.0, 1.0)],
                    scales: vec![0.4, 0.2, 0.1, 0.05],
                    eps_frac: Some(0.125),
                    ..Geometry::default()
                },
                Budgets { paths: 4000, ..Budgets::default() },
                tol(1200.0),
            ),
            "correlation-lower" => base(
                k83,
                Geometry {
                    z: vec![c(0.0, 1.0), c(0.5, 0.5), c(-0.5, 1.5)],
                    w: vec![c(0.3, 1.0), c(0.0, 2.0), c(-1.0, 0.5)],
                    eps_frac: Some(0.125),
                    ..Geometry::default()
                },
                Budgets { paths: 1000, ..Budgets::default() },
                tol(0.0),
            ),
            "lshape" => base(
                k83,
                Geometry {
                    z: vec![c(0.0, 1.0), Complex64::from_polar(1.0, PI / 4.0), c(0.95, 0.1)],
                    rho: Some(0.25),
                    eps_frac: Some(0.02),
                    ..Geometry::default()
                },
                Budgets { paths: 2000, ..Budgets::default() },
                tol(0.0),
            ),
            "natparam-drift" => base(k83, natparam_geometry(), natparam_budgets(seed), tol(1800.0)),
            "natparam-cauchy" | "minkowski" => base(k83, natparam_geometry(), natparam_budgets(seed), tol(0.0)),
            "dimension-scaling" => base(
                k83,
                Geometry {
                    scales: vec![1.0, 2.0, 4.0],
                    times: vec![0.5],
                    level: Some(6),
                    ..natparam_geometry()
                },
                Budgets { paths: 100, ..natparam_budgets(seed) },
                tol(0.0),
            ),
            other => return Err(ConfigError::UnknownExperiment(other.to_string())),
        };
        Ok(cfg)
    }

    /// Defaults for the experiment named in `json`, overridden key by key.
    pub fn from_json(json: &str) -> Result<Self, ConfigError> {
        let v: Value = serde_json::from_str(json).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let name = v
            .get("experiment")
            .and_then(Value::as_str)
            .ok_or_else(|| ConfigError::Parse("missing string field `experiment`".into()))?
            .to_string();
        Self::with_overrides(&name, &v)
    }

    pub fn with_overrides(name: &str, overrides: &Value) -> Result<Self, ConfigError> {
        let defaults = Self::default_for(name)?;
        let mut merged = serde_json::to_value(&defaults).expect("config serializes");
        merge(&mut merged, overrides);
        let cfg: ExperimentConfig = serde_json::from_value(merged).map_err(|e| ConfigError::Parse(e.to_string()))?;
        if cfg.experiment != name {
            return Err(ConfigError::Parse(format!("config names `{}`, expected `{name}`", cfg.experiment)));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Parse(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON without the output and cache paths.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Value::Object(m) = &mut v {
            m.remove("out_dir");
            m.remove("cache_dir");
        }
        let digest = Sha256::digest(v.to_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn params(&self) -> Vec<SleParams> {
        self.kappas.iter().filter_map(|&k| SleParams::new(k).ok()).collect()
    }

    /// Checks every field the named experiment reads.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !registry_names().contains(&self.experiment.as_str()) {
            return Err(ConfigError::UnknownExperiment(self.experiment.clone()));
        }
        let mut d = Vec::new();
        let g = &self.geometry;
        let b = &self.budgets;
        let t = &self.tolerances;
        if self.kappas.is_empty() {
            d.push("kappas: empty".to_string());
        }
        for (i, &k) in self.kappas.iter().enumerate() {
            if let Err(e) = SleParams::new(k) {
                d.push(format!("kappas[{i}]: {e}"));
            }
        }
        if !(t.k_se > 0.0) || !(t.slope_tol > 0.0) || !(t.rel_err > 0.0) || !(t.time_err > 0.0) || !(t.runtime_s >= 0.0) {
            d.push("tolerances: k_se, slope_tol, rel_err, time_err must be positive and runtime_s >= 0".into());
        }
        let need_paths = |d: &mut Vec<String>, n: usize, field: &str| {
            if n == 0 {
                d.push(format!("budgets.{field}: must be positive"));
            }
        };
        let upper = |d: &mut Vec<String>, field: &str, pts: &[Complex64]| {
            for (i, p) in pts.iter().enumerate() {
                if !(p.im > 0.0 && p.re.is_finite() && p.im.is_finite()) {
                    d.push(format!("geometry.{field}[{i}]: {p} is not in the upper half-plane"));
                }
            }
        };
        let count = |d: &mut Vec<String>, field: &str, got: usize, want: usize| {
            if got != want {
                d.push(format!("geometry.{field}: expected {want} value(s), got {got}"));
            }
        };
        let positive_increasing = |d: &mut Vec<String>, field: &str, v: &[f64]| {
            if v.is_empty() || v.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
                d.push(format!("geometry.{field}: needs positive finite values"));
            }
        };
        let frac = |d: &mut Vec<String>, v: Option<f64>| match v {
            Some(f) if f > 0.0 && f < 1.0 => {}
            _ => d.push("geometry.eps_frac: must be in (0, 1)".into()),
        };
        upper(&mut d, "z", &g.z);
        upper(&mut d, "w", &g.w);
        match self.experiment.as_str() {
            "flow-oracle" => {
                count(&mut d, "z", g.z.len(), 1);
            }
            "martingale-one" | "supermartingale-deficiency" => {
                count(&mut d, "z", g.z.len(), 1);
                count(&mut d, "eps", g.eps.len(), 1);
                count(&mut d, "times", g.times.len(), 1);
                positive_increasing(&mut d, "times", &g.times);
                if let (Some(z), Some(&e)) = (g.z.first(), g.eps.first()) {
                    if !(e > 0.0 && e < z.im) {
                        d.push(format!("geometry.eps[0]: {e} must be in (0, Im z = {})", z.im));
                    }
                }
                need_paths(&mut d, b.paths, "paths");
                if self.experiment == "supermartingale-deficiency" {
                    need_paths(&mut d, b.oracle_paths, "oracle_paths");
                }
            }
            "one-point" => {
                count(&mut d, "z", g.z.len(), 1);
                count(&mut d, "eps", g.eps.len(), 1);
                if let (Some(z), Some(&e)) = (g.z.first(), g.eps.first()) {
                    if !(e > 0.0 && e < z.im) {
                        d.push(format!("geometry.eps[0]: {e} must be in (0, Im z = {})", z.im));
                    }
                }
                need_paths(&mut d, b.paths, "paths");
                need_paths(&mut d, b.oracle_paths, "oracle_paths");
                if !(b.sde_dt > 0.0 && b.sde_dt <= 0.1) {
                    d.push("budgets.sde_dt: must be in (0, 0.1]".into());
                }
            }
            "psi-limit" => {
                if g.x.is_empty() || g.x.iter().any(|x| !(*x > 0.0 && *x < PI)) {
                    d.push("geometry.x: needs angles in (0, π)".into());
                }
                match g.horizon {
                    Some(h) if h > 0.0 && h.is_finite() => {}
                    _ => d.push("geometry.horizon: must be positive".into()),
                }
                positive_increasing(&mut d, "times", &g.times);
                if g.times.len() < 2 || g.times.windows(2).any(|w| w[1] <= w[0]) {
                    d.push("geometry.times: needs at least two increasing times for the slope".into());
                }
                need_paths(&mut d, b.paths, "paths");
                need_paths(&mut d, b.oracle_paths, "oracle_paths");
                if !(b.sde_dt > 0.0 && b.sde_dt <= 0.1) {
                    d.push("budgets.sde_dt: must be in (0, 0.1]".into());
                }
            }
            "two-point-exponent" => {
                count(&mut d, "z", g.z.len(), 1);
                positive_increasing(&mut d, "scales", &g.scales);
                if g.scales.len() < 2 {
                    d.push("geometry.scales: needs at least two separations".into());
                }
                frac(&mut d, g.eps_frac);
                need_paths(&mut d, b.paths, "paths");
            }
            "correlation-lower" => {
                if g.z.is_empty() || g.w.is_empty() {
                    d.push("geometry.z, geometry.w: need at least one point each".into());
                }
                for z in &g.z {
                    for w in &g.w {
                        if (z - w).norm() < 1e-9 {
                            d.push(format!("geometry: pair ({z}, {w}) coincides"));
                        }
                    }
                }
                frac(&mut d, g.eps_frac);
                need_paths(&mut d, b.paths, "paths");
            }
            "lshape" => {
                if g.z.is_empty() {
                    d.push("geometry.z: needs at least one point".into());
                }
                match g.rho {
                    Some(r) if r > 0.0 && r < 0.5 => {}
                    _ => d.push("geometry.rho: must be in (0, 1/2)".into()),
                }
                frac(&mut d, g.eps_frac);
                if let Some(f) = g.eps_frac {
                    for (i, z) in g.z.iter().enumerate() {
                        if f * z.norm() >= z.im {
                            d.push(format!("geometry.eps_frac: ε = {} is not below Im z[{i}] = {}", f * z.norm(), z.im));
                        }
                    }
                }
                need_paths(&mut d, b.paths, "paths");
            }
            "natparam-drift" | "natparam-cauchy" | "minkowski" | "dimension-scaling" => {
                match g.domain {
                    Some(dom) => {
                        if BoxDomain::new(dom.x0, dom.x1, dom.y0, dom.y1).is_err() {
                            d.push("geometry.domain: needs x0 < x1 and 0 < y0 < y1".into());
                        }
                    }
                    None => d.push("geometry.domain: missing".into()),
                }
                positive_increasing(&mut d, "times", &g.times);
                let level = g.level.unwrap_or(0);
                if g.level.is_none() {
                    d.push("geometry.level: missing".into());
                }
                let top = g.levels.iter().copied().max().unwrap_or(0).max(level);
                if top > b.driver_log2 {
                    d.push(format!("budgets.driver_log2: {} is coarser than level {top}", b.driver_log2));
                }
                for (i, &tt) in g.times.iter().enumerate() {
                    let k = tt * 2f64.powi(level as i32);
                    if (k - k.round()).abs() > 1e-9 {
                        d.push(format!("geometry.times[{i}]: {tt} is not a multiple of 2^-{level}"));
                    }
                }
                if self.experiment == "natparam-cauchy" && (g.levels.len() < 2 || g.levels.windows(2).any(|w| w[1] <= w[0])) {
                    d.push("geometry.levels: needs at least two increasing levels".into());
                }
                if self.experiment == "minkowski" && g.eps.is_empty() {
                    d.push("geometry.eps: needs Minkowski radii".into());
                }
                if self.experiment == "dimension-scaling" {
                    positive_increasing(&mut d, "scales", &g.scales);
                    if g.scales.len() < 2 {
                        d.push("geometry.scales: needs at least two rescalings".into());
                    }
                }
                if let Err(e) = b.quad.validate() {
                    d.push(format!("budgets.quad: {e}"));
                }
                match &b.phi {
                    Some(spec) => {
                        if let Err(e) = spec.validate() {
                            d.push(format!("budgets.phi: {e}"));
                        }
                        if self.kappas.len() != 1 || (spec.kappa - self.kappas[0]).abs() > 0.0 {
                            d.push("budgets.phi.kappa: must equal the single entry of kappas".into());
                        }
                    }
                    None => d.push("budgets.phi: missing φ-grid spec".into()),
                }
                if !(b.z_frac >= 0.0) {
                    d.push("budgets.z_frac: must be >= 0".into());
                }
                need_paths(&mut d, b.paths, "paths");
            }
            _ => unreachable!(),
        }
        if d.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid {
                experiment: self.experiment.clone(),
                diagnostics: d,
            })
        }
    }
}

fn merge(base: &mut Value, over: &Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, o) => *b = o.clone(),
    }
}

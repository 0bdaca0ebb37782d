//! Build, verify and purge the on-disk φ grid.

use std::path::{Path, PathBuf};

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use sle_core::mc::{derive_seed, path_rng};
use sle_core::natparam::{build_phi_grid, estimate_phi_at, PhiGrid, PhiGridSpec};
use sle_core::{Result, SleError, SleParams};

const STREAM_VERIFY: u64 = 0x7665_7201;

/// Cells recomputed by `verify`.
pub const VERIFY_CELLS: usize = 5;
/// Budget multiplier for recomputed cells.
pub const VERIFY_FACTOR: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CacheAction {
    Build,
    Verify,
    Purge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellCheck {
    pub i: usize,
    pub j: usize,
    pub cached: f64,
    pub cached_se: f64,
    pub recomputed: f64,
    pub recomputed_se: f64,
    pub agrees: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CacheStatus {
    Built { path: PathBuf, flagged: usize, missing: usize },
    /// Present and already built for this spec.
    Present { path: PathBuf },
    Verified { checks: Vec<CellCheck> },
    /// Verification failed; the file was renamed so loads miss it.
    Stale { reason: String, moved_to: PathBuf },
    Purged { removed: usize },
}

impl CacheStatus {
    pub fn ok(&self) -> bool {
        !matches!(self, CacheStatus::Stale { .. })
    }
}

pub fn grid_path(dir: &Path, spec: &PhiGridSpec) -> PathBuf {
    dir.join(PhiGrid::file_name(spec))
}

pub fn manage_cache(action: CacheAction, spec: &PhiGridSpec, dir: &Path) -> Result<CacheStatus> {
    spec.validate()?;
    match action {
        CacheAction::Build => {
            if let Ok(g) = PhiGrid::load(dir, spec) {
                if g.is_complete() {
                    return Ok(CacheStatus::Present { path: grid_path(dir, spec) });
                }
            }
            let (grid, _) = build_phi_grid(spec, usize::MAX)?;
            let path = grid.save(dir)?;
            Ok(CacheStatus::Built {
                path,
                flagged: grid.flagged.len(),
                missing: grid.missing.len(),
            })
        }
        CacheAction::Verify => verify(spec, dir),
        CacheAction::Purge => {
            let mut removed = 0;
            if dir.is_dir() {
                for entry in std::fs::read_dir(dir)? {
                    let p = entry?.path();
                    let name = p.file_name().and_then(|s| s.to_str()).unwrap_or("");
                    if name.starts_with("phi-") {
                        std::fs::remove_file(&p)?;
                        removed += 1;
                    }
                }
            }
            Ok(CacheStatus::Purged { removed })
        }
    }
}

fn mark_stale(spec: &PhiGridSpec, dir: &Path, reason: String) -> Result<CacheStatus> {
    let path = grid_path(dir, spec);
    let moved_to = path.with_extension("json.stale");
    if path.exists() {
        std::fs::rename(&path, &moved_to)?;
    }
    Ok(CacheStatus::Stale { reason, moved_to })
}

fn verify(spec: &PhiGridSpec, dir: &Path) -> Result<CacheStatus> {
    let path = grid_path(dir, spec);
    let text = std::fs::read_to_string(&path)
        .map_err(|_| SleError::MissingGrid(format!("no phi grid at {}", path.display())))?;
    let grid = match PhiGrid::from_json(&text) {
        Ok(g) if g.spec == *spec => g,
        Ok(_) => return mark_stale(spec, dir, "cached grid has a different spec".into()),
        Err(e) => return mark_stale(spec, dir, format!("unreadable grid: {e}")),
    };
    if let Err(e) = grid.coverage() {
        return mark_stale(spec, dir, e.to_string());
    }
    // The builder stores mirror averages, so any asymmetry is corruption.
    for i in 0..spec.n_r {
        for j in 0..spec.n_theta {
            let v = grid.value(i, j);
            if !(0.0..=1.0).contains(&v) || v != grid.value(i, spec.n_theta - 1 - j) {
                return mark_stale(spec, dir, format!("cell ({i}, {j}) = {v} fails the range or mirror check"));
            }
        }
    }
    let params = SleParams::new(spec.kappa)?;
    let mut rng = path_rng(spec.seed, STREAM_VERIFY, 0);
    let mut checks = Vec::new();
    for k in 0..VERIFY_CELLS {
        let i = rng.random_range(0..spec.n_r);
        let j = rng.random_range(0..spec.n_theta);
        let z = spec.node(i, j);
        let est = estimate_phi_at(
            &params,
            z,
            1.0,
            VERIFY_FACTOR * spec.paths,
            spec.eps_frac * z.im,
            derive_seed(spec.seed, STREAM_VERIFY + 1 + k as u64),
        )?;
        let cached = grid.value(i, j);
        let cached_se = grid.se(i, j);
        // binomial SEs vanish at 0 and 1; floor them at one path
        let floor = 1.0 / (VERIFY_FACTOR * spec.paths) as f64;
        let se = (cached_se * cached_se + est.stderr * est.stderr).sqrt().max(floor);
        checks.push(CellCheck {
            i,
            j,
            cached,
            cached_se,
            recomputed: est.mean,
            recomputed_se: est.stderr,
            agrees: (cached - est.mean).abs() <= 3.0 * se,
        });
    }
    if let Some(bad) = checks.iter().find(|c| !c.agrees) {
        let reason = format!(
            "cell ({}, {}): cached {:.4} ± {:.4}, recomputed {:.4} ± {:.4}",
            bad.i, bad.j, bad.cached, bad.cached_se, bad.recomputed, bad.recomputed_se
        );
        return mark_stale(spec, dir, reason);
    }
    Ok(CacheStatus::Verified { checks })
}

/// Loads the grid for `spec` from `dir`, building and saving it if absent.
/// Without a directory the grid is built in memory.
pub fn load_or_build(spec: &PhiGridSpec, dir: Option<&Path>) -> Result<PhiGrid> {
    if let Some(dir) = dir {
        match PhiGrid::load(dir, spec) {
            Ok(g) => return Ok(g),
            Err(SleError::MissingGrid(_)) => {}
            Err(e) => return Err(e),
        }
        let (grid, _) = build_phi_grid(spec, usize::MAX)?;
        grid.save(dir)?;
        return Ok(grid);
    }
    Ok(build_phi_grid(spec, usize::MAX)?.0)
}

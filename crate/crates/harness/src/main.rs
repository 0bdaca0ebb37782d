//! `sle`: command-line front end. CSV goes to stdout or `--out`, JSON
//! summaries to stdout. Worker count comes from `SLE_WORKERS`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;
use sle_core::conditioned::{estimate_two_point_green, sample_two_sided_chordal, sample_two_sided_radial, ChordalStop};
use sle_core::diffusions::{psi_estimate_dt, psi_survival_estimate, psi_table_csv, PsiRow};
use sle_core::loewner::{extract_trace_at, subsample_indices, DrivingPath, StepRule};
use sle_core::mc::derive_seed;
use sle_core::natparam::{flow_table_with, theta_csv, BoxDomain, FlowConfig, NatParamEstimate, PhiGrid, PhiGridSpec, QuadGrid};
use sle_core::observables::grid_csv;
use sle_core::{Complex64, SleParams};
use sle_harness::{manage_cache, run_experiment, ConfigError, ExperimentConfig, RunError, REGISTRY};

const DEFAULT_SEED: u64 = 20_240_601;

#[derive(Parser)]
#[command(name = "sle", about = "Chordal SLE simulations and experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sample a Brownian driving function and write it as CSV (t,u).
    Simulate {
        #[arg(long, default_value_t = 8.0 / 3.0)]
        kappa: f64,
        #[arg(long, default_value_t = 1.0)]
        horizon: f64,
        #[arg(long, default_value_t = 1.0 / 1024.0)]
        step: f64,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample a driver and write the curve as CSV (t,re,im).
    Trace {
        #[arg(long, default_value_t = 8.0 / 3.0)]
        kappa: f64,
        #[arg(long, default_value_t = 1.0)]
        horizon: f64,
        #[arg(long, default_value_t = 1.0 / 1024.0)]
        step: f64,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        /// Read the driver from a CSV written by `simulate` instead.
        #[arg(long)]
        driver: Option<PathBuf>,
        /// Number of trace points.
        #[arg(long, default_value_t = 512)]
        points: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Green's function values at points given as `re,im`.
    Green {
        #[arg(long, default_value_t = 8.0 / 3.0)]
        kappa: f64,
        #[arg(long = "z", value_parser = parse_complex, required = true)]
        z: Vec<Complex64>,
    },
    /// ψ(t, x) table from the one-dimensional diffusion.
    Psi {
        #[arg(long, default_value_t = 8.0 / 3.0)]
        kappa: f64,
        #[arg(long = "t", required = true)]
        t: Vec<f64>,
        #[arg(long = "x", required = true)]
        x: Vec<f64>,
        #[arg(long, default_value_t = 10_000)]
        paths: usize,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        /// Use the weighted-endpoint estimator instead of the survival one.
        #[arg(long)]
        direct: bool,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
    },
    /// One two-sided run; prints a JSON summary and optionally the driver.
    Twosided {
        #[arg(value_enum)]
        kind: Kind,
        #[arg(long, default_value_t = 8.0 / 3.0)]
        kappa: f64,
        /// Interior target for radial runs.
        #[arg(long, value_parser = parse_complex)]
        z: Option<Complex64>,
        /// Boundary target for chordal runs.
        #[arg(long)]
        x: Option<f64>,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long, default_value_t = 100.0)]
        horizon: f64,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo F(z,w), F(w,z) and the two-point Green's function.
    Fzw {
        #[arg(long, default_value_t = 8.0 / 3.0)]
        kappa: f64,
        #[arg(long, value_parser = parse_complex)]
        z: Complex64,
        #[arg(long, value_parser = parse_complex)]
        w: Complex64,
        #[arg(long)]
        eps: f64,
        #[arg(long, default_value_t = 1000)]
        paths: usize,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
    },
    /// Θ_{t,n}(D) curves for one sampled driver, using a cached φ grid.
    Natparam {
        #[arg(long, default_value_t = 8.0 / 3.0)]
        kappa: f64,
        /// `x0,x1,y0,y1`.
        #[arg(long, default_value = "-1,1,0.25,1.25")]
        domain: String,
        #[arg(long, default_value_t = 1.0)]
        horizon: f64,
        #[arg(long = "level", default_values_t = [4u32, 5, 6])]
        levels: Vec<u32>,
        #[arg(long, default_value_t = 16)]
        driver_log2: u32,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        /// φ grid spec as JSON; defaults to the registered one.
        #[arg(long)]
        phi_spec: Option<PathBuf>,
        #[arg(long, default_value = "phi-cache")]
        cache_dir: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a registered experiment.
    Experiment {
        name: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        cache_dir: Option<PathBuf>,
    },
    /// Build, verify or purge the φ grid cache.
    Cache {
        #[arg(value_enum)]
        action: Action,
        #[arg(long)]
        phi_spec: Option<PathBuf>,
        #[arg(long, default_value = "phi-cache")]
        cache_dir: PathBuf,
    },
    /// List registered experiments.
    List,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Radial,
    Chordal,
}

#[derive(Clone, Copy, ValueEnum)]
enum Action {
    Build,
    Verify,
    Purge,
}

fn parse_complex(s: &str) -> Result<Complex64, String> {
    let (re, im) = s.split_once(',').ok_or("expected re,im")?;
    let re = re.trim().parse::<f64>().map_err(|e| e.to_string())?;
    let im = im.trim().parse::<f64>().map_err(|e| e.to_string())?;
    Ok(Complex64::new(re, im))
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn phi_spec(path: Option<&Path>) -> Result<PhiGridSpec> {
    match path {
        Some(p) => Ok(serde_json::from_str(&std::fs::read_to_string(p)?)?),
        None => {
            let cfg = ExperimentConfig::default_for("natparam-drift")?;
            Ok(cfg.budgets.phi.expect("natparam defaults carry a phi spec"))
        }
    }
}

fn run(cmd: Cmd) -> Result<ExitCode> {
    match cmd {
        Cmd::Simulate { kappa, horizon, step, seed, out } => {
            let p = SleParams::new(kappa)?;
            let drv = DrivingPath::sample(&p, horizon, step, seed)?;
            emit(&drv.to_csv(), out.as_deref())?;
        }
        Cmd::Trace { kappa, horizon, step, seed, driver, points, out } => {
            let p = SleParams::new(kappa)?;
            let drv = match driver {
                Some(path) => DrivingPath::load_csv(&path, seed, sle_core::loewner::MeasureTag::Plain)?,
                None => DrivingPath::sample(&p, horizon, step, seed)?,
            };
            let idx = subsample_indices(drv.len(), points);
            emit(&extract_trace_at(&drv, &idx, &p).to_csv(), out.as_deref())?;
        }
        Cmd::Green { kappa, z } => {
            let p = SleParams::new(kappa)?;
            print!("{}", grid_csv(&p, &z, None, &[])?);
        }
        Cmd::Psi { kappa, t, x, paths, dt, direct, seed } => {
            let p = SleParams::new(kappa)?;
            let mut rows = Vec::new();
            for (i, &ti) in t.iter().enumerate() {
                for (j, &xj) in x.iter().enumerate() {
                    let s = derive_seed(seed, (i * x.len() + j) as u64);
                    let estimate = if direct {
                        psi_estimate_dt(&p, ti, xj, paths, s, dt)?
                    } else {
                        psi_survival_estimate(&p, ti, xj, paths, s, dt)?
                    };
                    rows.push(PsiRow { t: ti, x: xj, estimate });
                }
            }
            print!("{}", psi_table_csv(&rows));
        }
        Cmd::Twosided { kind, kappa, z, x, eps, horizon, seed, out } => {
            let p = SleParams::new(kappa)?;
            let run = match kind {
                Kind::Radial => {
                    let Some(z) = z else { bail!("radial runs need --z") };
                    let eps = eps.unwrap_or(0.01 * z.im);
                    sample_two_sided_radial(&p, z, eps, StepRule::for_scale(z.norm()), seed, false)?
                }
                Kind::Chordal => {
                    let Some(x) = x else { bail!("chordal runs need --x") };
                    sample_two_sided_chordal(&p, x, ChordalStop { eps, horizon }, seed)?
                }
            };
            let summary = json!({
                "status": run.status,
                "tau": run.tau_eps,
                "terminal": [run.terminal.re, run.terminal.im],
                "cells": run.driving.cells(),
            });
            println!("{summary}");
            if let Some(path) = out {
                run.driving.save_csv(&path)?;
            }
        }
        Cmd::Fzw { kappa, z, w, eps, paths, seed } => {
            let p = SleParams::new(kappa)?;
            let est = estimate_two_point_green(&p, z, w, eps, paths, seed)?;
            println!("{}", serde_json::to_string_pretty(&est)?);
        }
        Cmd::Natparam { kappa, domain, horizon, levels, driver_log2, seed, phi_spec: spec_path, cache_dir, out } => {
            let p = SleParams::new(kappa)?;
            let v: Vec<f64> = domain.split(',').map(|s| s.trim().parse()).collect::<Result<_, _>>()?;
            if v.len() != 4 {
                bail!("--domain needs x0,x1,y0,y1");
            }
            let domain = BoxDomain::new(v[0], v[1], v[2], v[3])?;
            let spec = phi_spec(spec_path.as_deref())?;
            if spec.kappa != kappa {
                bail!("phi grid is for kappa = {}, not {kappa}", spec.kappa);
            }
            let phi = PhiGrid::load(&cache_dir, &spec)?;
            let top = *levels.iter().max().unwrap();
            let drv = DrivingPath::sample(&p, horizon, 2f64.powi(-(driver_log2 as i32)), seed)?;
            let quad = QuadGrid::midpoint(16, 8);
            let table = flow_table_with(&p, &drv, &domain, &quad, top, horizon, &FlowConfig::default())?;
            let curves = levels
                .iter()
                .map(|&n| {
                    Ok(NatParamEstimate {
                        n,
                        curve: table.theta_curve(n, &phi)?,
                        quad,
                        driving_seed: seed,
                    })
                })
                .collect::<sle_core::Result<Vec<_>>>()?;
            emit(&theta_csv(&curves), out.as_deref())?;
        }
        Cmd::Experiment { name, config, seed, out, cache_dir } => {
            let mut cfg = match config {
                Some(path) => ExperimentConfig::load(&path)?,
                None => ExperimentConfig::default_for(&name)?,
            };
            if cfg.experiment != name {
                return Err(ConfigError::Parse(format!("config is for `{}`, not `{name}`", cfg.experiment)).into());
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if out.is_some() {
                cfg.out_dir = out;
            }
            if cache_dir.is_some() {
                cfg.cache_dir = cache_dir;
            }
            let rec = run_experiment(&cfg)?;
            print!("{}", rec.summary());
            for n in &rec.notes {
                println!("note: {n}");
            }
            if rec.partial {
                println!("partial result");
            }
            return Ok(if rec.passed() { ExitCode::SUCCESS } else { ExitCode::from(1) });
        }
        Cmd::Cache { action, phi_spec: spec_path, cache_dir } => {
            let spec = phi_spec(spec_path.as_deref())?;
            let action = match action {
                Action::Build => sle_harness::CacheAction::Build,
                Action::Verify => sle_harness::CacheAction::Verify,
                Action::Purge => sle_harness::CacheAction::Purge,
            };
            let status = manage_cache(action, &spec, &cache_dir)?;
            println!("{}", serde_json::to_string_pretty(&status)?);
            return Ok(if status.ok() { ExitCode::SUCCESS } else { ExitCode::from(1) });
        }
        Cmd::List => {
            for (name, what) in REGISTRY {
                println!("{name:28} {what}");
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn is_usage(e: &anyhow::Error) -> bool {
    e.downcast_ref::<ConfigError>().is_some()
        || matches!(e.downcast_ref::<RunError>(), Some(RunError::Config(_)))
        || matches!(e.downcast_ref::<sle_core::SleError>(), Some(sle_core::SleError::InvalidArgument(_)))
}

fn main() -> ExitCode {
    if let Some(n) = std::env::var("SLE_WORKERS").ok().and_then(|s| s.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if is_usage(&e) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

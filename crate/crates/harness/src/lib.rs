//! Experiment harness for the SLE estimators in `sle-core`.
//!
//! An [`ExperimentConfig`] names one registered experiment plus its
//! geometry, budgets, tolerances and a root seed. [`run_experiment`] turns
//! it into a [`ResultRecord`] of named estimates, PASS/FAIL verdicts and
//! plot tables. Each estimator inside an experiment gets its own seed
//! `derive_seed(root, stream)`, so equal configs give bit-identical records
//! whatever the worker count.

pub mod cache;
pub mod config;
pub mod experiments;
pub mod record;

pub use cache::{load_or_build, manage_cache, CacheAction, CacheStatus};
pub use config::{registry_names, ConfigError, ExperimentConfig, REGISTRY};
pub use experiments::{run_experiment, RunError};
pub use record::{emit_plotdata, DataTable, NamedEstimate, ResultRecord, Verdict};

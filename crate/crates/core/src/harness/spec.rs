#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN
//! TOML experiment files.
//!
//! One document per experiment, selected by `kind`:
//!
//! ```toml
//! kind = "fluid_run"
//! horizon = 5000
//! init = { random = { seed = 3 } }
//!
//! [system]
//! alpha = 0.5
//! classes = [{ p = 0.8, gamma = 0.5 }, { p = 0.5, gamma = 0.5 }]
//! ```
//!
//! Unknown keys are errors.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::SystemConfig;
use crate::sim::Policy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExperimentSpec {
    BalphaTable(BalphaSpec),
    FluidRun(FluidSpec),
    SimSweep(SweepSpec),
    Kurtz(KurtzSpec),
    RelaxedSolve(RelaxedSpec),
}

impl ExperimentSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            ExperimentSpec::BalphaTable(_) => "balpha_table",
            ExperimentSpec::FluidRun(_) => "fluid_run",
            ExperimentSpec::SimSweep(_) => "sim_sweep",
            ExperimentSpec::Kurtz(_) => "kurtz",
            ExperimentSpec::RelaxedSolve(_) => "relaxed_solve",
        }
    }

    pub fn out_dir(&self) -> Option<&Path> {
        match self {
            ExperimentSpec::BalphaTable(s) => s.out_dir.as_deref(),
            ExperimentSpec::FluidRun(s) => s.out_dir.as_deref(),
            ExperimentSpec::SimSweep(s) => s.out_dir.as_deref(),
            ExperimentSpec::Kurtz(s) => s.out_dir.as_deref(),
            ExperimentSpec::RelaxedSolve(s) => s.out_dir.as_deref(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: ExperimentSpec =
            toml::from_str(text).map_err(|e| Error::invalid(format!("experiment file: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::invalid(format!("cannot serialise experiment: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Validation(m) => Error::invalid(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Checks that go beyond the schema.
    pub fn validate(&self) -> Result<()> {
        match self {
            ExperimentSpec::BalphaTable(s) => {
                if !s.paper && s.pairs.is_empty() {
                    return Err(Error::invalid("balpha_table needs `pairs` or `paper = true`"));
                }
                for &[a, b] in &s.pairs {
                    check_pair(a, b)?;
                }
            }
            ExperimentSpec::FluidRun(s) => {
                if s.horizon == 0 {
                    return Err(Error::invalid("horizon must be at least 1"));
                }
                if !(s.tol > 0.0) {
                    return Err(Error::invalid("tol must be positive"));
                }
                if let FluidInit::Random { max_age, .. } = s.init {
                    if max_age == 0 {
                        return Err(Error::invalid("random init needs max_age >= 1"));
                    }
                }
            }
            ExperimentSpec::SimSweep(s) => {
                check_runs(&s.n_list, s.seeds, s.horizon)?;
                if !(0.0..1.0).contains(&s.burn_in_fraction) {
                    return Err(Error::invalid("burn_in_fraction must lie in [0, 1)"));
                }
            }
            ExperimentSpec::Kurtz(s) => {
                check_runs(&s.n_list, s.seeds, s.horizon)?;
                match (s.mu, s.mu_median_factor) {
                    (Some(_), Some(_)) => {
                        return Err(Error::invalid("give either `mu` or `mu_median_factor`, not both"))
                    }
                    (Some(m), None) if !(m > 0.0) => return Err(Error::invalid("mu must be positive")),
                    (None, Some(f)) if !(f > 0.0) => {
                        return Err(Error::invalid("mu_median_factor must be positive"))
                    }
                    _ => {}
                }
            }
            ExperimentSpec::RelaxedSolve(_) => {}
        }
        Ok(())
    }
}

pub(crate) fn check_pair(a: f64, b: f64) -> Result<()> {
    for p in [a, b] {
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::invalid(format!("probability {p} outside (0, 1]")));
        }
    }
    if a == b {
        return Err(Error::invalid(format!("pair ({a}, {b}) has equal probabilities")));
    }
    Ok(())
}

fn check_runs(n_list: &[usize], seeds: usize, horizon: u64) -> Result<()> {
    if n_list.is_empty() {
        return Err(Error::invalid("n_list must not be empty"));
    }
    if seeds == 0 {
        return Err(Error::invalid("seeds must be at least 1"));
    }
    if horizon == 0 {
        return Err(Error::invalid("horizon must be at least 1"));
    }
    Ok(())
}

fn default_fluid_horizon() -> u64 {
    5000
}

fn default_tol() -> f64 {
    1e-6
}

fn default_stride() -> u64 {
    1
}

fn default_burn_in() -> f64 {
    0.1
}

fn default_max_age() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BalphaSpec {
    /// Emit the ten reference pairs with their printed values.
    #[serde(default)]
    pub paper: bool,
    /// Extra `[p_lo, p_hi]` pairs.
    #[serde(default)]
    pub pairs: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

/// Initial fluid state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FluidInit {
    /// The relaxed optimum's proportions.
    Zstar,
    #[default]
    AllAgeOne,
    Random {
        seed: u64,
        #[serde(default = "default_max_age")]
        max_age: usize,
    },
    /// CSV with header `class,age,mass`.
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FluidSpec {
    pub system: SystemConfig,
    #[serde(default)]
    pub init: FluidInit,
    #[serde(default = "default_fluid_horizon")]
    pub horizon: u64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    /// Write every `n`-th state to the trajectory (0 writes none).
    #[serde(default = "default_stride")]
    pub state_stride: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub system: SystemConfig,
    pub n_list: Vec<usize>,
    pub horizon: u64,
    /// Number of seeds per `N`; seeds are `seed, seed + 1, ...`.
    pub seeds: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_policy")]
    pub policy: Policy,
    #[serde(default = "default_burn_in")]
    pub burn_in_fraction: f64,
    /// Reject `alpha N` that is not an integer instead of rounding.
    #[serde(default)]
    pub exact_budget: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

fn default_policy() -> Policy {
    Policy::Whittle
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KurtzSpec {
    pub system: SystemConfig,
    pub n_list: Vec<usize>,
    pub horizon: u64,
    pub seeds: usize,
    #[serde(default)]
    pub seed: u64,
    /// Fixed threshold.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    /// Threshold as a multiple of the median deviation at the largest `N`
    /// (2 when neither field is given).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu_median_factor: Option<f64>,
    /// Common initial proportions, `initial[k][i]` at age `i + 1`; all
    /// users at age 1 when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelaxedSpec {
    pub system: SystemConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

//! Fluid-limit dynamics of the age proportions under Whittle scheduling.
//!
//! The fluid state holds, per class, the expected proportion of all users
//! at each age. One step fills the budget `alpha` from the highest-index
//! mass downwards, then moves scheduled mass `x` of age `i` to age 1 (a
//! fraction `p`) or to age `i + 1`, and every idle bin up by one age.

pub mod audit;
pub mod diagnostics;

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::policy::{priority_cmp, BinKey, SystemConfig};
use crate::relaxed::RelaxedSolution;

pub use audit::{AlphaHistory, AuditMode, AuditReport, MonotonicityAudit, Violation, ViolationKind};
pub use diagnostics::{
    alternation_gap, assumption_bound, check_alternation, compute_d, t_max, weighted_distance,
    weighted_norm, AlternationReport, ConvergenceCertificate,
};

/// Bins below this mass may be dropped from the tail.
pub const DEFAULT_TRUNCATION_EPS: f64 = 1e-15;

/// Tolerance on per-class mass when building a state.
const MASS_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct FluidState {
    /// `classes[k][i]` is the proportion of all users in class `k` at age `i + 1`.
    classes: Vec<Vec<f64>>,
    t: u64,
    truncation_eps: f64,
    lost_mass: Vec<f64>,
}

impl FluidState {
    /// Builds a state, checking that class `k` carries mass `gamma_k`.
    pub fn new(config: &SystemConfig, classes: Vec<Vec<f64>>) -> Result<Self> {
        if classes.len() != config.num_classes() {
            return Err(Error::invalid(format!(
                "state has {} classes, config has {}",
                classes.len(),
                config.num_classes()
            )));
        }
        for (k, (v, c)) in classes.iter().zip(config.classes()).enumerate() {
            if v.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                return Err(Error::invalid(format!(
                    "class {} has a negative or non-finite entry",
                    k + 1
                )));
            }
            let total: f64 = v.iter().sum();
            if (total - c.gamma).abs() > MASS_TOL {
                return Err(Error::invalid(format!(
                    "class {} mass {total} differs from its share {}",
                    k + 1,
                    c.gamma
                )));
            }
        }
        let k = classes.len();
        Ok(FluidState {
            classes,
            t: 0,
            truncation_eps: DEFAULT_TRUNCATION_EPS,
            lost_mass: vec![0.0; k],
        })
    }

    /// Every user at age 1.
    pub fn all_age_one(config: &SystemConfig) -> Self {
        let classes = config.classes().iter().map(|c| vec![c.gamma]).collect();
        FluidState::new(config, classes).expect("shares are validated by the config")
    }

    /// The relaxed optimum's proportions, truncated where they are stored.
    pub fn from_z_star(solution: &RelaxedSolution) -> Self {
        let mut classes = solution.z_star_vectors();
        // Fold the analytic tail into the last stored age so mass is exact.
        for (v, c) in classes.iter_mut().zip(&solution.z_star) {
            if let Some(last) = v.last_mut() {
                *last += c.tail_mass;
            }
        }
        FluidState::new(solution.config(), classes).expect("z* carries the class shares")
    }

    /// Random proportions over ages `1..=max_age`, seeded.
    pub fn random(config: &SystemConfig, seed: u64, max_age: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let classes = config
            .classes()
            .iter()
            .map(|c| {
                let raw: Vec<f64> = (0..max_age.max(1)).map(|_| rng.random::<f64>()).collect();
                let s: f64 = raw.iter().sum();
                raw.into_iter().map(|x| c.gamma * x / s).collect()
            })
            .collect();
        FluidState::new(config, classes).expect("normalised to the class shares")
    }

    pub fn with_truncation_eps(mut self, eps: f64) -> Self {
        self.truncation_eps = eps;
        self
    }

    pub fn classes(&self) -> &[Vec<f64>] {
        &self.classes
    }

    pub fn slot(&self) -> u64 {
        self.t
    }

    pub fn lost_mass(&self) -> &[f64] {
        &self.lost_mass
    }

    pub fn truncation_eps(&self) -> f64 {
        self.truncation_eps
    }

    /// Mass at `age` (1-based) in class `k`; zero outside the support.
    pub fn mass(&self, k: usize, age: u64) -> f64 {
        if age == 0 {
            return 0.0;
        }
        self.classes[k].get((age - 1) as usize).copied().unwrap_or(0.0)
    }

    pub fn class_total(&self, k: usize) -> f64 {
        self.classes[k].iter().sum()
    }

    /// Mean age per user, `sum_k sum_i z_i^k i`.
    pub fn mean_age(&self) -> f64 {
        weighted_norm(&self.classes)
    }
}

/// How one slot's budget is split between classes.
///
/// Class `k` is idle below `thresholds[k]`, idle for a share
/// `idle_share[k]` of the bin at `thresholds[k]`, and scheduled above it.
/// Exactly one class (the critical one) may have an idle share below 1.
/// A threshold of 0 means the class is fully scheduled.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScheduleDecision {
    pub alpha_k: Vec<f64>,
    pub thresholds: Vec<u64>,
    pub idle_share: Vec<f64>,
    pub critical_class: usize,
}

impl ScheduleDecision {
    /// Idle share of class 1's boundary bin.
    pub fn beta(&self) -> f64 {
        self.idle_share[0]
    }

    /// Idle share of class 2's boundary bin (1 for a single class).
    pub fn gamma_split(&self) -> f64 {
        self.idle_share.get(1).copied().unwrap_or(1.0)
    }

    /// Idle mass `sum_{i < l_k} z_i^k + share_k z_{l_k}^k`, summed over classes.
    pub fn idle_mass(&self, state: &FluidState) -> f64 {
        self.thresholds
            .iter()
            .zip(&self.idle_share)
            .enumerate()
            .map(|(k, (&l, &s))| {
                let below: f64 = (1..l).map(|a| state.mass(k, a)).sum();
                below + s * state.mass(k, l)
            })
            .sum()
    }
}

/// Allots `alpha` to the highest-priority mass of `state`.
///
/// Returns the decision and the scheduled mass per (class, age).
fn allot(state: &FluidState, config: &SystemConfig) -> Result<(ScheduleDecision, Vec<Vec<f64>>)> {
    let classes = config.classes();
    let k_count = classes.len();
    let mut scheduled: Vec<Vec<f64>> = state.classes.iter().map(|v| vec![0.0; v.len()]).collect();
    // Next unvisited age per class, walking down from the top of the support.
    let mut head: Vec<u64> = state.classes.iter().map(|v| v.len() as u64).collect();
    let mut remaining = config.alpha();
    let critical = loop {
        let next = (0..k_count)
            .filter(|&k| head[k] >= 1)
            .map(|k| BinKey {
                class: k,
                p: classes[k].p,
                age: head[k],
            })
            .max_by(priority_cmp);
        let Some(bin) = next else {
            return Err(Error::Numerical {
                slot: state.t,
                detail: format!("budget exceeds total mass ({remaining:e} left over)"),
            });
        };
        head[bin.class] -= 1;
        let mass = state.mass(bin.class, bin.age);
        if mass <= 0.0 {
            continue;
        }
        let x = mass.min(remaining.max(0.0));
        scheduled[bin.class][(bin.age - 1) as usize] = x;
        remaining -= x;
        if x < mass {
            break (bin, 1.0 - x / mass);
        }
    };
    let (crit, crit_share) = critical;

    let mut thresholds = vec![0u64; k_count];
    let mut idle_share = vec![1.0; k_count];
    for k in 0..k_count {
        if k == crit.class {
            thresholds[k] = crit.age;
            idle_share[k] = crit_share;
            continue;
        }
        // Highest age of class k ranked below the critical bin.
        let key = |age| BinKey {
            class: k,
            p: classes[k].p,
            age,
        };
        let mut l = 0u64;
        while priority_cmp(&key(l + 1), &crit).is_lt() {
            l += 1;
        }
        thresholds[k] = l;
    }
    let alpha_k = scheduled.iter().map(|v| v.iter().sum()).collect();
    Ok((
        ScheduleDecision {
            alpha_k,
            thresholds,
            idle_share,
            critical_class: crit.class,
        },
        scheduled,
    ))
}

/// One slot of the fluid recursion.
pub fn fluid_step(state: &FluidState, config: &SystemConfig) -> Result<(FluidState, ScheduleDecision)> {
    if state.classes.len() != config.num_classes() {
        return Err(Error::invalid("state and config disagree on the number of classes"));
    }
    let (decision, scheduled) = allot(state, config)?;
    let mut next = Vec::with_capacity(state.classes.len());
    for (k, (z, x)) in state.classes.iter().zip(&scheduled).enumerate() {
        let p = config.classes()[k].p;
        let mut v = Vec::with_capacity(z.len() + 1);
        v.push(p * decision.alpha_k[k]);
        for (&m, &s) in z.iter().zip(x) {
            let moved = m - p * s;
            if !(moved.is_finite() && moved >= 0.0) {
                return Err(Error::Numerical {
                    slot: state.t,
                    detail: format!("class {} produced mass {moved}", k + 1),
                });
            }
            v.push(moved);
        }
        next.push(v);
    }

    let mut lost_mass = state.lost_mass.clone();
    let p_min = config.classes().last().expect("non-empty").p;
    let keep_to = decision.thresholds.iter().copied().max().unwrap_or(0)
        + diagnostics::t_max(config.alpha(), p_min)?;
    for (v, lost) in next.iter_mut().zip(lost_mass.iter_mut()) {
        while v.len() as u64 > keep_to && v.last().is_some_and(|&m| m < state.truncation_eps) {
            *lost += v.pop().expect("checked non-empty");
        }
    }

    Ok((
        FluidState {
            classes: next,
            t: state.t + 1,
            truncation_eps: state.truncation_eps,
            lost_mass,
        },
        decision,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FluidStatus {
    Converged,
    NotConverged,
}

/// Output of [`run_fluid`].
#[derive(Debug, Clone, Serialize)]
pub struct FluidRun {
    pub status: FluidStatus,
    /// First slot whose distance to `z*` is below `tol`.
    pub converged_at: Option<u64>,
    /// `||z(t) - z*||` for `t = 0..=horizon`.
    pub distances: Vec<f64>,
    /// Decision taken at slot `t` for `t = 0..horizon`.
    pub decisions: Vec<ScheduleDecision>,
    /// States at the recorded slots (empty unless requested).
    #[serde(skip)]
    pub states: Vec<FluidState>,
    #[serde(skip)]
    pub final_state: FluidState,
    pub certificate: Option<ConvergenceCertificate>,
    pub audit: Option<AuditReport>,
    pub max_mass_drift: f64,
}

/// Options for [`run_fluid`].
#[derive(Debug, Clone, Copy, Default)]
pub struct FluidRunOptions {
    /// Keep every `n`-th state (0 keeps none).
    pub state_stride: u64,
}

/// Iterates the fluid map for `horizon` slots, tracking the distance to
/// `z*` and, for two classes, the convergence certificate and the
/// monotonicity audit.
pub fn run_fluid(
    z0: FluidState,
    solution: &RelaxedSolution,
    horizon: u64,
    tol: f64,
    options: FluidRunOptions,
) -> Result<FluidRun> {
    if horizon == 0 {
        return Err(Error::invalid("horizon must be at least 1"));
    }
    let config = solution.config();
    let z_star = solution.z_star_vectors();
    let certificate = match config.strict_pair() {
        Ok((p1, p2)) => Some(ConvergenceCertificate::new(p1, p2, config.alpha())?),
        Err(_) => None,
    };
    let mut auditor = certificate
        .as_ref()
        .map(|c| MonotonicityAudit::new(config, c))
        .transpose()?;

    let mut state = z0;
    let mut distances = Vec::with_capacity(horizon as usize + 1);
    let mut decisions = Vec::with_capacity(horizon as usize);
    let mut states = Vec::new();
    let mut max_mass_drift: f64 = 0.0;
    distances.push(weighted_distance(&state.classes, &z_star));
    for t in 0..horizon {
        let (next, decision) = fluid_step(&state, config)?;
        for (k, c) in config.classes().iter().enumerate() {
            let drift = (next.class_total(k) + next.lost_mass[k] - c.gamma).abs();
            max_mass_drift = max_mass_drift.max(drift);
        }
        if let Some(a) = auditor.as_mut() {
            a.observe(&state, &decision);
        }
        if options.state_stride > 0 && t % options.state_stride == 0 {
            states.push(state.clone());
        }
        distances.push(weighted_distance(&next.classes, &z_star));
        decisions.push(decision);
        state = next;
    }
    let converged_at = distances.iter().position(|&d| d < tol).map(|t| t as u64);
    Ok(FluidRun {
        status: if converged_at.is_some() {
            FluidStatus::Converged
        } else {
            FluidStatus::NotConverged
        },
        converged_at,
        distances,
        decisions,
        states,
        final_state: state,
        certificate,
        audit: auditor.map(MonotonicityAudit::finish),
        max_mass_drift,
    })
}

/// Writes recorded states as CSV with header
/// `t,class,age,mass,alpha_1,alpha_2,l_1,l_2,beta,gamma,norm_to_zstar`.
pub fn write_trajectory_csv<W: Write>(run: &FluidRun, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record([
        "t", "class", "age", "mass", "alpha_1", "alpha_2", "l_1", "l_2", "beta", "gamma",
        "norm_to_zstar",
    ])?;
    for state in &run.states {
        let t = state.slot() as usize;
        let d = &run.decisions[t];
        let a2 = d.alpha_k.get(1).copied().unwrap_or(0.0);
        let l2 = d.thresholds.get(1).copied().unwrap_or(0);
        for (k, v) in state.classes().iter().enumerate() {
            for (i, m) in v.iter().enumerate() {
                w.write_record([
                    t.to_string(),
                    (k + 1).to_string(),
                    (i + 1).to_string(),
                    m.to_string(),
                    d.alpha_k[0].to_string(),
                    a2.to_string(),
                    d.thresholds[0].to_string(),
                    l2.to_string(),
                    d.beta().to_string(),
                    d.gamma_split().to_string(),
                    run.distances[t].to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::ClassSpec;
    use crate::relaxed::solve_relaxed;

    fn reference() -> SystemConfig {
        SystemConfig::two_class(0.8, 0.5, 0.5, 0.5).unwrap()
    }

    #[test]
    fn single_class_half_budget_from_age_one() {
        let cfg = SystemConfig::new(vec![ClassSpec::new(1.0, 1.0).unwrap()], 0.5).unwrap();
        let (next, d) = fluid_step(&FluidState::all_age_one(&cfg), &cfg).unwrap();
        assert_eq!(next.classes()[0], vec![0.5, 0.5]);
        assert_eq!(d.alpha_k, vec![0.5]);
        assert_eq!(d.thresholds, vec![1]);
        assert!((d.idle_share[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn step_identities_and_budget() {
        let cfg = reference();
        let mut s = FluidState::random(&cfg, 7, 12);
        for _ in 0..200 {
            let (next, d) = fluid_step(&s, &cfg).unwrap();
            let total: f64 = d.alpha_k.iter().sum();
            assert!((total - cfg.alpha()).abs() < 1e-12);
            for (k, c) in cfg.classes().iter().enumerate() {
                assert_eq!(next.mass(k, 1), c.p * d.alpha_k[k]);
                for age in 1..d.thresholds[k] {
                    assert_eq!(next.mass(k, age + 1), s.mass(k, age));
                }
                let mass = next.class_total(k) + next.lost_mass()[k];
                assert!((mass - c.gamma).abs() < 1e-12);
            }
            assert!((d.idle_mass(&s) - (1.0 - cfg.alpha())).abs() < 1e-10);
            s = next;
        }
    }

    #[test]
    fn decision_structure_has_one_partial_class() {
        let cfg = reference();
        let mut s = FluidState::random(&cfg, 3, 9);
        for _ in 0..100 {
            let (next, d) = fluid_step(&s, &cfg).unwrap();
            let partial = d.idle_share.iter().filter(|&&x| x < 1.0).count();
            assert!(partial <= 1);
            assert!(d.idle_share.iter().all(|&x| x > 0.0 && x <= 1.0));
            s = next;
        }
    }

    #[test]
    fn z_star_is_fixed() {
        let sol = solve_relaxed(&reference()).unwrap();
        let z = FluidState::from_z_star(&sol);
        let (next, _) = fluid_step(&z, sol.config()).unwrap();
        assert!(weighted_distance(next.classes(), z.classes()) < 1e-9);
    }

    #[test]
    fn state_validation() {
        let cfg = reference();
        assert!(FluidState::new(&cfg, vec![vec![0.5]]).is_err());
        assert!(FluidState::new(&cfg, vec![vec![0.5], vec![0.4]]).is_err());
        assert!(FluidState::new(&cfg, vec![vec![0.6, -0.1], vec![0.5]]).is_err());
    }

    #[test]
    fn run_from_z_star_converges_immediately() {
        let sol = solve_relaxed(&reference()).unwrap();
        let run = run_fluid(FluidState::from_z_star(&sol), &sol, 20, 1e-6, Default::default()).unwrap();
        assert_eq!(run.converged_at, Some(0));
        assert_eq!(run.status, FluidStatus::Converged);
    }
}

//! Seeded simulator of the N-user system.
//!
//! Each slot at most `M = round(alpha N)` users transmit; a scheduled
//! user's packet gets through with its class probability and resets the
//! age to 1, every other age grows by one. Channel draws come from one
//! ChaCha8 stream per user (stream id = user id) advanced once per slot, so
//! the draw for (seed, slot, user) does not depend on anything else.

pub mod kurtz;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fluid::{fluid_step, weighted_distance, FluidState};
use crate::policy::{index_value, SystemConfig};
use crate::relaxed::solve_relaxed;

pub use kurtz::{kurtz_deviations, kurtz_experiment, KurtzReport, KurtzRow, KurtzSample, MuRule};

/// Identifier of the random stream layout, written into output metadata.
pub const RNG_ALGORITHM: &str = "chacha8/per-user-stream/one-draw-per-slot";

const COUNT_TOL: f64 = 1e-9;

/// Age after one slot: reset on a delivered packet, otherwise one older.
#[inline]
pub fn age_step(age: u64, scheduled: bool, delivered: bool) -> u64 {
    if scheduled && delivered {
        1
    } else {
        age + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    /// Top-M users by Whittle index.
    Whittle,
    /// Each user keeps a fixed threshold from the relaxed optimum: in every
    /// class a `round(theta * N_k)` share uses `l1`, the rest `l2`. The
    /// budget then holds on average only.
    MixedThreshold,
    /// Top-M users by age.
    MaxAgeGreedy,
}

impl Policy {
    pub fn name(&self) -> &'static str {
        match self {
            Policy::Whittle => "whittle",
            Policy::MixedThreshold => "mixed_threshold",
            Policy::MaxAgeGreedy => "max_age_greedy",
        }
    }
}

/// Initial proportions `x[k][i]` (age `i + 1`) for a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialProportions(pub Vec<Vec<f64>>);

impl InitialProportions {
    pub fn all_age_one(config: &SystemConfig) -> Self {
        InitialProportions(config.classes().iter().map(|c| vec![c.gamma]).collect())
    }

    /// Per-(class, age) user counts at population `n`; every count must be
    /// an integer.
    pub fn counts(&self, n: usize) -> Result<Vec<Vec<usize>>> {
        self.0
            .iter()
            .enumerate()
            .map(|(k, v)| {
                v.iter()
                    .enumerate()
                    .map(|(i, &x)| {
                        let c = x * n as f64;
                        let r = c.round();
                        if (c - r).abs() > COUNT_TOL || r < 0.0 {
                            Err(Error::invalid(format!(
                                "initial proportion {x} at class {}, age {} is not realisable with N = {n}",
                                k + 1,
                                i + 1
                            )))
                        } else {
                            Ok(r as usize)
                        }
                    })
                    .collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub system: SystemConfig,
    pub n_users: usize,
    pub horizon: u64,
    pub seed: u64,
    pub policy: Policy,
    pub record_proportions: bool,
    pub proportion_sample_stride: u64,
    /// Leading fraction of the horizon left out of the burned averages.
    pub burn_in_fraction: f64,
    /// Require `alpha N` to be an integer rather than rounding it.
    pub exact_budget: bool,
    pub initial: Option<InitialProportions>,
}

impl SimConfig {
    pub fn new(system: SystemConfig, n_users: usize, horizon: u64, seed: u64) -> Self {
        SimConfig {
            system,
            n_users,
            horizon,
            seed,
            policy: Policy::Whittle,
            record_proportions: false,
            proportion_sample_stride: 1,
            burn_in_fraction: 0.1,
            exact_budget: false,
            initial: None,
        }
    }

    pub fn with_policy(mut self, policy: Policy) -> Self {
        self.policy = policy;
        self
    }

    /// Users per class; each `gamma_k N` must be an integer.
    pub fn class_counts(&self) -> Result<Vec<usize>> {
        let n = self.n_users;
        self.system
            .classes()
            .iter()
            .map(|c| {
                let x = c.gamma * n as f64;
                let r = x.round();
                if (x - r).abs() > COUNT_TOL {
                    Err(Error::invalid(format!(
                        "class share {} gives {x} users at N = {n}, not an integer",
                        c.gamma
                    )))
                } else {
                    Ok(r as usize)
                }
            })
            .collect()
    }

    /// Per-slot transmission budget `M`.
    pub fn budget(&self) -> Result<usize> {
        let x = self.system.alpha() * self.n_users as f64;
        let m = x.round();
        if self.exact_budget && (x - m).abs() > COUNT_TOL {
            return Err(Error::invalid(format!(
                "alpha N = {x} is not an integer"
            )));
        }
        let m = m as usize;
        if m == 0 || m > self.n_users {
            return Err(Error::invalid(format!(
                "budget M = {m} must lie in [1, N = {}]",
                self.n_users
            )));
        }
        Ok(m)
    }

    fn validate(&self) -> Result<(Vec<usize>, usize)> {
        if self.n_users == 0 {
            return Err(Error::invalid("need at least one user"));
        }
        if self.horizon == 0 {
            return Err(Error::invalid("horizon must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.burn_in_fraction) {
            return Err(Error::invalid("burn-in fraction must lie in [0, 1)"));
        }
        if self.record_proportions && self.proportion_sample_stride == 0 {
            return Err(Error::invalid("proportion sample stride must be positive"));
        }
        Ok((self.class_counts()?, self.budget()?))
    }
}

/// Distance of the empirical proportions to the fluid path and to `z*`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProportionSnapshot {
    pub t: u64,
    pub to_fluid: f64,
    pub to_z_star: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimMetrics {
    pub n_users: usize,
    pub budget: usize,
    pub horizon: u64,
    pub seed: u64,
    pub policy: Policy,
    pub burn_in_slots: u64,
    /// Time- and user-averaged age after burn-in.
    pub avg_age_per_user: f64,
    /// Same average over the whole horizon.
    pub avg_age_per_user_unburned: f64,
    /// Per-class averages after burn-in.
    pub per_class_avg_age: Vec<f64>,
    /// Transmissions divided by `M * horizon`.
    pub utilization: f64,
    pub snapshots: Vec<ProportionSnapshot>,
    /// Time average of `Z^N(t)` over the sampled post-burn-in slots.
    pub time_avg_proportions: Option<Vec<Vec<f64>>>,
    pub rng: &'static str,
}

/// Live state of one simulated run.
#[derive(Debug, Clone)]
pub struct SimRun {
    ages: Vec<u64>,
    class_of: Vec<usize>,
    p_of: Vec<f64>,
    /// Per-user threshold for the mixed-threshold policy.
    thresholds: Vec<u64>,
    policy: Policy,
    budget: usize,
    num_classes: usize,
    rngs: Vec<ChaCha8Rng>,
    slot: u64,
    order: Vec<usize>,
    scheduled: Vec<bool>,
    transmissions: u64,
}

impl SimRun {
    pub fn new(cfg: &SimConfig) -> Result<Self> {
        let (counts, budget) = cfg.validate()?;
        let classes = cfg.system.classes();
        let n = cfg.n_users;
        let mut class_of = Vec::with_capacity(n);
        for (k, &c) in counts.iter().enumerate() {
            class_of.extend(std::iter::repeat_n(k, c));
        }
        let p_of: Vec<f64> = class_of.iter().map(|&k| classes[k].p).collect();

        let ages = match &cfg.initial {
            None => vec![1; n],
            Some(x) => initial_ages(x, &counts, n)?,
        };

        let thresholds = if cfg.policy == Policy::MixedThreshold {
            let sol = solve_relaxed(&cfg.system)?;
            let mut out = Vec::with_capacity(n);
            for (k, &c) in counts.iter().enumerate() {
                // users are exchangeable, so the first share of each class
                // takes l1
                let on_l1 = (sol.theta * c as f64).round() as usize;
                out.extend((0..c).map(|j| if j < on_l1 { sol.l1[k] } else { sol.l2[k] }));
            }
            out
        } else {
            Vec::new()
        };

        let rngs = (0..n)
            .map(|u| {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                rng.set_stream(u as u64);
                rng
            })
            .collect();

        Ok(SimRun {
            ages,
            class_of,
            p_of,
            thresholds,
            policy: cfg.policy,
            budget,
            num_classes: classes.len(),
            rngs,
            slot: 0,
            order: (0..n).collect(),
            scheduled: vec![false; n],
            transmissions: 0,
        })
    }

    pub fn ages(&self) -> &[u64] {
        &self.ages
    }

    pub fn class_of(&self) -> &[usize] {
        &self.class_of
    }

    pub fn slot(&self) -> u64 {
        self.slot
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    /// Users scheduled in the last completed slot.
    pub fn last_scheduled(&self) -> &[bool] {
        &self.scheduled
    }

    pub fn empirical_proportions(&self) -> Vec<Vec<f64>> {
        empirical_proportions(&self.ages, &self.class_of, self.num_classes)
    }

    fn choose(&mut self) {
        self.scheduled.iter_mut().for_each(|s| *s = false);
        match self.policy {
            Policy::Whittle => {
                select_top(&mut self.order, self.budget, &self.ages, &self.p_of, true);
                for &u in &self.order[..self.budget] {
                    self.scheduled[u] = true;
                }
            }
            Policy::MaxAgeGreedy => {
                select_top(&mut self.order, self.budget, &self.ages, &self.p_of, false);
                for &u in &self.order[..self.budget] {
                    self.scheduled[u] = true;
                }
            }
            Policy::MixedThreshold => {
                for (s, (&a, &l)) in self.scheduled.iter_mut().zip(self.ages.iter().zip(&self.thresholds)) {
                    *s = a >= l;
                }
            }
        }
    }

    /// Advances one slot; returns the number of transmissions.
    pub fn step(&mut self) -> usize {
        self.choose();
        let mut sent = 0;
        for u in 0..self.ages.len() {
            let draw: f64 = self.rngs[u].random();
            let on = self.scheduled[u];
            sent += on as usize;
            self.ages[u] = age_step(self.ages[u], on, draw < self.p_of[u]);
        }
        self.transmissions += sent as u64;
        self.slot += 1;
        sent
    }
}

fn initial_ages(x: &InitialProportions, counts: &[usize], n: usize) -> Result<Vec<u64>> {
    let per_age = x.counts(n)?;
    if per_age.len() != counts.len() {
        return Err(Error::invalid("initial state has the wrong number of classes"));
    }
    let mut ages = Vec::with_capacity(n);
    for (k, row) in per_age.iter().enumerate() {
        if row.iter().sum::<usize>() != counts[k] {
            return Err(Error::invalid(format!(
                "initial state puts {} users in class {}, expected {}",
                row.iter().sum::<usize>(),
                k + 1,
                counts[k]
            )));
        }
        for (i, &c) in row.iter().enumerate() {
            ages.extend(std::iter::repeat_n(i as u64 + 1, c));
        }
    }
    Ok(ages)
}

/// Moves the `m` highest-priority users to the front of `order`.
///
/// By Whittle index (ties: larger `p`, lower age, lower id) or, with
/// `by_index = false`, by age (ties: lower id).
fn select_top(order: &mut [usize], m: usize, ages: &[u64], p: &[f64], by_index: bool) {
    if m == 0 || m >= order.len() {
        return;
    }
    let cmp = |&a: &usize, &b: &usize| {
        let primary = if by_index {
            index_value(p[b], ages[b])
                .total_cmp(&index_value(p[a], ages[a]))
                .then(p[b].total_cmp(&p[a]))
                .then(ages[a].cmp(&ages[b]))
        } else {
            ages[b].cmp(&ages[a])
        };
        primary.then(a.cmp(&b))
    };
    order.select_nth_unstable_by(m - 1, cmp);
}

/// The `M` users a Whittle scheduler serves, in ascending id order.
pub fn whittle_schedule(ages: &[u64], p_of_user: &[f64], m: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..ages.len()).collect();
    let m = m.min(ages.len());
    select_top(&mut order, m, ages, p_of_user, true);
    let mut chosen = order[..m].to_vec();
    chosen.sort_unstable();
    chosen
}

/// `Z^N`: per class, users at each age divided by `N`.
pub fn empirical_proportions(ages: &[u64], class_of: &[usize], num_classes: usize) -> Vec<Vec<f64>> {
    let n = ages.len() as f64;
    let mut out = vec![Vec::new(); num_classes];
    for (&a, &k) in ages.iter().zip(class_of) {
        let v = &mut out[k];
        let i = (a - 1) as usize;
        if v.len() <= i {
            v.resize(i + 1, 0.0);
        }
        v[i] += 1.0;
    }
    for v in &mut out {
        v.iter_mut().for_each(|x| *x /= n);
    }
    out
}

/// Runs one simulation to the horizon.
pub fn simulate(cfg: &SimConfig) -> Result<SimMetrics> {
    let mut run = SimRun::new(cfg)?;
    let k_count = cfg.system.num_classes();
    let counts = cfg.class_counts()?;
    let burn_in = (cfg.burn_in_fraction * cfg.horizon as f64).floor() as u64;

    let mut fluid = if cfg.record_proportions {
        let x = cfg
            .initial
            .clone()
            .unwrap_or_else(|| InitialProportions::all_age_one(&cfg.system));
        Some((
            FluidState::new(&cfg.system, x.0)?,
            solve_relaxed(&cfg.system)?.z_star_vectors(),
        ))
    } else {
        None
    };
    let mut snapshots = Vec::new();
    let mut avg_props: Vec<Vec<f64>> = vec![Vec::new(); k_count];
    let mut samples = 0u64;

    let mut total: u128 = 0;
    let mut burned: u128 = 0;
    let mut per_class = vec![0u128; k_count];
    for t in 0..cfg.horizon {
        let mut slot_sum: u128 = 0;
        for (&a, &k) in run.ages.iter().zip(&run.class_of) {
            slot_sum += a as u128;
            if t >= burn_in {
                per_class[k] += a as u128;
            }
        }
        total += slot_sum;
        if t >= burn_in {
            burned += slot_sum;
        }

        if let Some((z, z_star)) = fluid.as_mut() {
            if t % cfg.proportion_sample_stride == 0 {
                let emp = run.empirical_proportions();
                snapshots.push(ProportionSnapshot {
                    t,
                    to_fluid: weighted_distance(&emp, z.classes()),
                    to_z_star: weighted_distance(&emp, z_star),
                });
                if t >= burn_in {
                    samples += 1;
                    for (acc, e) in avg_props.iter_mut().zip(&emp) {
                        if acc.len() < e.len() {
                            acc.resize(e.len(), 0.0);
                        }
                        acc.iter_mut().zip(e).for_each(|(a, x)| *a += x);
                    }
                }
            }
            *z = fluid_step(z, &cfg.system)?.0;
        }
        run.step();
    }

    let n = cfg.n_users as f64;
    let measured = (cfg.horizon - burn_in) as f64;
    let time_avg_proportions = (cfg.record_proportions && samples > 0).then(|| {
        avg_props
            .into_iter()
            .map(|v| v.into_iter().map(|x| x / samples as f64).collect())
            .collect()
    });
    Ok(SimMetrics {
        n_users: cfg.n_users,
        budget: run.budget,
        horizon: cfg.horizon,
        seed: cfg.seed,
        policy: cfg.policy,
        burn_in_slots: burn_in,
        avg_age_per_user: burned as f64 / (n * measured),
        avg_age_per_user_unburned: total as f64 / (n * cfg.horizon as f64),
        per_class_avg_age: per_class
            .iter()
            .zip(&counts)
            .map(|(&s, &c)| if c == 0 { 0.0 } else { s as f64 / (c as f64 * measured) })
            .collect(),
        utilization: run.transmissions as f64 / (run.budget as f64 * cfg.horizon as f64),
        snapshots,
        time_avg_proportions,
        rng: RNG_ALGORITHM,
    })
}

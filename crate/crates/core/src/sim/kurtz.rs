//! Concentration of the empirical proportions around the fluid path.
//!
//! For each population size and seed, record the largest weighted distance
//! between `Z^N(t)` and the deterministic path `z(t)` started from the same
//! proportions, then count how often it reaches `mu`.

use rayon::prelude::*;
use serde::Serialize;

use super::{InitialProportions, Policy, SimConfig, SimRun};
use crate::error::{Error, Result};
use crate::fluid::{fluid_step, weighted_distance, FluidState};
use crate::policy::SystemConfig;

/// How the threshold `mu` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MuRule {
    Fixed(f64),
    /// `factor` times the median deviation at the largest `N`.
    MedianAtLargest(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KurtzRow {
    pub n: usize,
    pub runs: usize,
    pub exceed_prob: f64,
    /// `N * exceed_prob`, flat if the probability decays like `1/N`.
    pub n_times_prob: f64,
    pub median_deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KurtzReport {
    pub mu: f64,
    pub horizon: u64,
    pub rows: Vec<KurtzRow>,
    /// One entry per run, sorted by `(N, seed)`.
    pub samples: Vec<KurtzSample>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KurtzSample {
    pub n: usize,
    pub seed: u64,
    /// `sup_{t < horizon} ||Z^N(t) - z(t)||`.
    pub sup_deviation: f64,
    /// Per-user average age over the whole run.
    pub avg_age_per_user: f64,
}

impl KurtzReport {
    pub fn nonincreasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].exceed_prob <= w[0].exceed_prob)
    }
}

fn fluid_path(system: &SystemConfig, x: &InitialProportions, horizon: u64) -> Result<Vec<Vec<Vec<f64>>>> {
    let mut z = FluidState::new(system, x.0.clone())?;
    let mut path = Vec::with_capacity(horizon as usize);
    for _ in 0..horizon {
        path.push(z.classes().to_vec());
        z = fluid_step(&z, system)?.0;
    }
    Ok(path)
}

/// Runs every `(N, seed)` pair from `x` under the Whittle policy.
pub fn kurtz_deviations(
    system: &SystemConfig,
    x: &InitialProportions,
    n_list: &[usize],
    horizon: u64,
    seeds: &[u64],
) -> Result<Vec<KurtzSample>> {
    if n_list.is_empty() || seeds.is_empty() {
        return Err(Error::invalid("need at least one N and one seed"));
    }
    if horizon == 0 {
        return Err(Error::invalid("horizon must be at least 1"));
    }
    for &n in n_list {
        x.counts(n)?;
    }
    let path = fluid_path(system, x, horizon)?;

    let tasks: Vec<(usize, u64)> = n_list
        .iter()
        .flat_map(|&n| seeds.iter().map(move |&s| (n, s)))
        .collect();
    let mut out = tasks
        .into_par_iter()
        .map(|(n, seed)| {
            let mut cfg = SimConfig::new(system.clone(), n, horizon, seed).with_policy(Policy::Whittle);
            cfg.initial = Some(x.clone());
            let mut run = SimRun::new(&cfg)?;
            let mut sup = 0.0f64;
            let mut age_sum: u128 = 0;
            for z in &path {
                sup = sup.max(weighted_distance(&run.empirical_proportions(), z));
                age_sum += run.ages().iter().map(|&a| a as u128).sum::<u128>();
                run.step();
            }
            Ok(KurtzSample {
                n,
                seed,
                sup_deviation: sup,
                avg_age_per_user: age_sum as f64 / (n as f64 * horizon as f64),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| a.n.cmp(&b.n).then(a.seed.cmp(&b.seed)));
    Ok(out)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Exceedance probability of `mu` per population size.
pub fn kurtz_experiment(
    system: &SystemConfig,
    x: &InitialProportions,
    n_list: &[usize],
    horizon: u64,
    seeds: &[u64],
    mu: MuRule,
) -> Result<KurtzReport> {
    let samples = kurtz_deviations(system, x, n_list, horizon, seeds)?;
    let mut ns: Vec<usize> = n_list.to_vec();
    ns.sort_unstable();
    ns.dedup();
    let at = |n: usize| -> Vec<f64> {
        samples.iter().filter(|d| d.n == n).map(|d| d.sup_deviation).collect()
    };
    let mu = match mu {
        MuRule::Fixed(m) => m,
        MuRule::MedianAtLargest(f) => f * median(at(*ns.last().expect("non-empty"))),
    };
    if mu.is_nan() || mu <= 0.0 {
        return Err(Error::invalid(format!("mu must be positive, got {mu}")));
    }
    let rows = ns
        .iter()
        .map(|&n| {
            let d = at(n);
            let hits = d.iter().filter(|&&v| v >= mu).count();
            let p = hits as f64 / d.len() as f64;
            KurtzRow {
                n,
                runs: d.len(),
                exceed_prob: p,
                n_times_prob: n as f64 * p,
                median_deviation: median(d),
            }
        })
        .collect();
    Ok(KurtzReport {
        mu,
        horizon,
        rows,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference() -> SystemConfig {
        SystemConfig::two_class(0.8, 0.5, 0.5, 0.5).unwrap()
    }

    #[test]
    fn huge_mu_never_exceeded() {
        let sys = reference();
        let x = InitialProportions::all_age_one(&sys);
        let seeds: Vec<u64> = (0..10).collect();
        let r = kurtz_experiment(&sys, &x, &[4, 16], 100, &seeds, MuRule::Fixed(1e6)).unwrap();
        assert!(r.rows.iter().all(|row| row.exceed_prob == 0.0));
    }

    #[test]
    fn tight_mu_at_small_n() {
        let sys = reference();
        let x = InitialProportions::all_age_one(&sys);
        let seeds: Vec<u64> = (0..20).collect();
        let r = kurtz_experiment(&sys, &x, &[4], 100, &seeds, MuRule::Fixed(0.05)).unwrap();
        assert!(r.rows[0].exceed_prob > 0.9);
    }

    #[test]
    fn unrealisable_start_rejected() {
        let sys = reference();
        let x = InitialProportions(vec![vec![0.25, 0.25], vec![0.5]]);
        assert!(kurtz_deviations(&sys, &x, &[4, 6], 10, &[0]).is_err());
        assert!(kurtz_deviations(&sys, &x, &[4, 8], 10, &[0]).is_ok());
    }

    #[test]
    fn sorted_and_deterministic() {
        let sys = reference();
        let x = InitialProportions::all_age_one(&sys);
        let a = kurtz_deviations(&sys, &x, &[16, 8], 50, &[3, 1, 2]).unwrap();
        let b = kurtz_deviations(&sys, &x, &[16, 8], 50, &[3, 1, 2]).unwrap();
        assert_eq!(a, b);
        let keys: Vec<(usize, u64)> = a.iter().map(|d| (d.n, d.seed)).collect();
        assert_eq!(keys, vec![(8, 1), (8, 2), (8, 3), (16, 1), (16, 2), (16, 3)]);
    }
}

//! Whittle index and threshold-policy primitives.
//!
//! A single user of class `p` under a threshold policy with threshold `n`
//! stays idle while its age is below `n` and transmits from age `n` on.
//! The resulting age chain has a closed-form stationary law; everything in
//! this module is built on that law and on the closed-form Whittle index
//! `W(i) = (i - 1) p i / 2 + i`.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tail mass targeted by [`default_max_state`].
pub const DEFAULT_TAIL_MASS: f64 = 1e-14;

/// Tolerance on `sum(gamma) == 1`.
pub const GAMMA_SUM_TOL: f64 = 1e-12;

/// One user class: channel success probability and population share.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSpec {
    pub p: f64,
    pub gamma: f64,
}

impl ClassSpec {
    pub fn new(p: f64, gamma: f64) -> Result<Self> {
        let spec = ClassSpec { p, gamma };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        if !(self.p > 0.0 && self.p <= 1.0) {
            return Err(Error::invalid(format!(
                "success probability must lie in (0, 1], got {}",
                self.p
            )));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::invalid(format!(
                "population share must lie in (0, 1], got {}",
                self.gamma
            )));
        }
        Ok(())
    }
}

/// User classes plus the per-slot scheduling budget `alpha = M / N`.
///
/// Classes are ordered by non-increasing `p`, so class 0 is the most
/// reliable one. Construction (including deserialisation) validates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SystemConfigDef", into = "SystemConfigDef")]
pub struct SystemConfig {
    classes: Vec<ClassSpec>,
    alpha: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SystemConfigDef {
    alpha: f64,
    classes: Vec<ClassSpec>,
}

impl TryFrom<SystemConfigDef> for SystemConfig {
    type Error = Error;

    fn try_from(def: SystemConfigDef) -> Result<Self> {
        SystemConfig::new(def.classes, def.alpha)
    }
}

impl From<SystemConfig> for SystemConfigDef {
    fn from(cfg: SystemConfig) -> Self {
        SystemConfigDef {
            alpha: cfg.alpha,
            classes: cfg.classes,
        }
    }
}

impl SystemConfig {
    pub fn new(classes: Vec<ClassSpec>, alpha: f64) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::invalid("at least one class is required"));
        }
        for c in &classes {
            c.validate()?;
        }
        if classes.windows(2).any(|w| w[0].p < w[1].p) {
            return Err(Error::invalid(
                "classes must be listed by non-increasing success probability",
            ));
        }
        let total: f64 = classes.iter().map(|c| c.gamma).sum();
        if (total - 1.0).abs() > GAMMA_SUM_TOL {
            return Err(Error::invalid(format!(
                "population shares must sum to 1, got {total}"
            )));
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::invalid(format!(
                "scheduling budget alpha must lie strictly in (0, 1), got {alpha}"
            )));
        }
        Ok(SystemConfig { classes, alpha })
    }

    /// Two-class shorthand: `(p1, gamma1)`, `(p2, gamma2)`, budget.
    pub fn two_class(p1: f64, p2: f64, gamma1: f64, alpha: f64) -> Result<Self> {
        SystemConfig::new(
            vec![ClassSpec::new(p1, gamma1)?, ClassSpec::new(p2, 1.0 - gamma1)?],
            alpha,
        )
    }

    pub fn classes(&self) -> &[ClassSpec] {
        &self.classes
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// Returns a copy with a different budget.
    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        SystemConfig::new(self.classes.clone(), alpha)
    }

    /// `(p1, p2)` for a two-class system with `p1 > p2`, which the fluid
    /// convergence diagnostics require.
    pub fn strict_pair(&self) -> Result<(f64, f64)> {
        match self.classes.as_slice() {
            [a, b] if a.p > b.p => Ok((a.p, b.p)),
            [_, _] => Err(Error::invalid(
                "two-class diagnostics require p1 > p2 strictly",
            )),
            _ => Err(Error::invalid(format!(
                "diagnostic defined for two classes, config has {}",
                self.classes.len()
            ))),
        }
    }
}

/// Whittle index of a user at age `age` with success probability `p`.
pub fn whittle_index(p: f64, age: u64) -> Result<f64> {
    if age == 0 {
        return Err(Error::invalid("ages start at 1"));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(format!(
            "success probability must lie in [0, 1], got {p}"
        )));
    }
    Ok(index_value(p, age))
}

#[inline]
pub(crate) fn index_value(p: f64, age: u64) -> f64 {
    let i = age as f64;
    (i - 1.0) * p * i / 2.0 + i
}

/// A (class, age) position in the scheduling order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinKey {
    pub class: usize,
    pub p: f64,
    pub age: u64,
}

impl BinKey {
    pub fn index(&self) -> f64 {
        index_value(self.p, self.age)
    }
}

/// Scheduling priority shared by the relaxed solver, the fluid map and the
/// simulator. `Greater` means `a` is served before `b`.
///
/// Higher index first; equal indices (always the case at age 1) go to the
/// larger `p`, then to the lower age, then to the lower class position.
pub fn priority_cmp(a: &BinKey, b: &BinKey) -> Ordering {
    a.index()
        .total_cmp(&b.index())
        .then(a.p.total_cmp(&b.p))
        .then(b.age.cmp(&a.age))
        .then(b.class.cmp(&a.class))
}

fn check_threshold(p: f64, n: u64) -> Result<()> {
    if n == 0 {
        return Err(Error::invalid("threshold must be at least 1"));
    }
    if p == 0.0 {
        return Err(Error::invalid(
            "p = 0 has no stationary regime: the age diverges",
        ));
    }
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::invalid(format!(
            "success probability must lie in (0, 1], got {p}"
        )));
    }
    Ok(())
}

/// Fraction of time a threshold-`n` user transmits: `1 / (n p + 1 - p)`.
pub fn active_fraction(p: f64, n: u64) -> Result<f64> {
    check_threshold(p, n)?;
    Ok(active_fraction_value(p, n))
}

#[inline]
pub(crate) fn active_fraction_value(p: f64, n: u64) -> f64 {
    1.0 / (n as f64 * p + 1.0 - p)
}

/// Average cost `E[age] + lambda * P(active)` of threshold `n`.
pub fn threshold_average_cost(p: f64, n: u64, lambda: f64) -> Result<f64> {
    check_threshold(p, n)?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!("lambda must be >= 0, got {lambda}")));
    }
    Ok(threshold_mean_age(p, n) + lambda * active_fraction_value(p, n))
}

pub(crate) fn threshold_mean_age(p: f64, n: u64) -> f64 {
    let m = (n - 1) as f64;
    ((m * m + m) * p * p + 2.0 * p * m + 2.0) / (2.0 * p * (m * p + 1.0))
}

/// Smallest truncation point whose analytic tail mass is below
/// [`DEFAULT_TAIL_MASS`].
pub fn default_max_state(p: f64, n: u64) -> u64 {
    max_state_for_tail(p, n, DEFAULT_TAIL_MASS)
}

pub(crate) fn max_state_for_tail(p: f64, n: u64, tail: f64) -> u64 {
    if p >= 1.0 {
        return n;
    }
    let norm = n as f64 * p + 1.0 - p;
    // tail(M) = (1-p)^(M-n+1) / norm
    let k = ((tail * norm).ln() / (1.0 - p).ln()).ceil().max(1.0) as u64;
    n + k - 1
}

/// Stationary age law of a threshold-`n` user, stored up to `max_state`
/// with the remaining mass carried analytically.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdDistribution {
    p: f64,
    n: u64,
    /// `probs[i]` is the probability of age `i + 1`.
    probs: Vec<f64>,
    tail_mass: f64,
}

impl ThresholdDistribution {
    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn threshold(&self) -> u64 {
        self.n
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn tail_mass(&self) -> f64 {
        self.tail_mass
    }

    pub fn max_state(&self) -> u64 {
        self.probs.len() as u64
    }

    /// Probability of `age`, including ages past the stored range.
    pub fn mass(&self, age: u64) -> f64 {
        stationary_mass(self.p, self.n, age)
    }

    pub fn total_mass(&self) -> f64 {
        self.probs.iter().sum::<f64>() + self.tail_mass
    }

    /// Mass on the active ages `>= n`.
    pub fn active_mass(&self) -> f64 {
        self.probs[(self.n - 1) as usize..].iter().sum::<f64>() + self.tail_mass
    }

    /// Mean age: stored prefix plus the geometric tail's first moment.
    pub fn mean(&self) -> f64 {
        let head: f64 = self
            .probs
            .iter()
            .enumerate()
            .map(|(i, &u)| (i + 1) as f64 * u)
            .sum();
        head + self.tail_first_moment()
    }

    /// `sum_{i > max_state} i * u(i)`.
    pub fn tail_first_moment(&self) -> f64 {
        if self.tail_mass == 0.0 {
            return 0.0;
        }
        let (p, n) = (self.p, self.n as f64);
        let q = 1.0 - p;
        let c = p / (n * p + 1.0 - p);
        let j = (self.max_state() + 1 - self.n) as f64;
        let qj = q.powf(j);
        c * (n * qj / p + qj * (j * p + q) / (p * p))
    }
}

#[inline]
pub(crate) fn stationary_mass(p: f64, n: u64, age: u64) -> f64 {
    let c = p / (n as f64 * p + 1.0 - p);
    if age == 0 {
        0.0
    } else if age <= n {
        c
    } else if p >= 1.0 {
        0.0
    } else {
        c * (1.0 - p).powi((age - n) as i32)
    }
}

/// Closed-form stationary law of the threshold-`n` age chain.
pub fn stationary_distribution(p: f64, n: u64, max_state: u64) -> Result<ThresholdDistribution> {
    check_threshold(p, n)?;
    if max_state < n {
        return Err(Error::invalid(format!(
            "max_state {max_state} must be at least the threshold {n}"
        )));
    }
    let probs: Vec<f64> = (1..=max_state).map(|a| stationary_mass(p, n, a)).collect();
    let tail_mass = if p >= 1.0 {
        0.0
    } else {
        (1.0 - p).powf((max_state + 1 - n) as f64) / (n as f64 * p + 1.0 - p)
    };
    Ok(ThresholdDistribution {
        p,
        n,
        probs,
        tail_mass,
    })
}

/// Iteration cap for [`dtmc_stationary_oracle`].
pub const ORACLE_MAX_ITERATIONS: usize = 2_000_000;

/// Stationary law of the truncated threshold chain by power iteration.
///
/// Independent of the closed form: it only encodes the transitions (idle
/// below `n`, reset with probability `p` from `n` on) on ages
/// `1..=max_state`, with the last age absorbing its own overflow. The lazy
/// chain `(I + P) / 2` is iterated so periodic cases (`p = 1`) converge.
pub fn dtmc_stationary_oracle(p: f64, n: u64, max_state: u64) -> Result<Vec<f64>> {
    check_threshold(p, n)?;
    if max_state < n {
        return Err(Error::invalid("max_state must be at least the threshold"));
    }
    if p < 1.0 && (1.0 - p).powf((max_state - n) as f64) >= 1e-14 {
        return Err(Error::invalid(format!(
            "max_state {max_state} too small for p = {p}, n = {n}"
        )));
    }
    let size = max_state as usize;
    let thr = (n - 1) as usize;
    let mut pi = vec![0.0; size];
    pi[0] = 1.0;
    let mut next = vec![0.0; size];
    let mut residual = f64::INFINITY;
    for it in 0..ORACLE_MAX_ITERATIONS {
        next.iter_mut().for_each(|x| *x = 0.0);
        for (s, &m) in pi.iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            let up = (s + 1).min(size - 1);
            if s < thr {
                next[up] += m;
            } else {
                next[0] += p * m;
                next[up] += (1.0 - p) * m;
            }
        }
        let mut total = 0.0;
        for (x, &old) in next.iter_mut().zip(&pi) {
            *x = 0.5 * (*x + old);
            total += *x;
        }
        residual = 0.0;
        for (x, old) in next.iter_mut().zip(pi.iter()) {
            *x /= total;
            residual += (*x - old).abs();
        }
        std::mem::swap(&mut pi, &mut next);
        if residual < 1e-15 && it > 0 {
            return Ok(pi);
        }
    }
    Err(Error::NoConvergence {
        iterations: ORACLE_MAX_ITERATIONS,
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn index_examples() {
        assert_eq!(whittle_index(0.8, 1).unwrap(), 1.0);
        assert_eq!(whittle_index(0.0, 5).unwrap(), 5.0);
        assert!(close(whittle_index(0.8, 3).unwrap(), 5.4, 1e-12));
        assert!(whittle_index(0.5, 0).is_err());
        assert!(whittle_index(1.5, 2).is_err());
    }

    #[test]
    fn index_monotone_in_p() {
        for i in 1..50 {
            let mut prev = f64::NEG_INFINITY;
            for k in 0..=10 {
                let w = whittle_index(k as f64 / 10.0, i).unwrap();
                assert!(w >= prev);
                prev = w;
            }
        }
    }

    #[test]
    fn stationary_examples() {
        let d = stationary_distribution(0.5, 1, 60).unwrap();
        for (i, &u) in d.probs().iter().enumerate() {
            assert!(close(u, 0.5f64.powi(i as i32 + 1), 1e-15));
        }
        let d = stationary_distribution(1.0, 3, 5).unwrap();
        assert_eq!(d.tail_mass(), 0.0);
        for a in 1..=3 {
            assert!(close(d.mass(a), 1.0 / 3.0, 1e-15));
        }
        assert_eq!(d.mass(4), 0.0);
        assert_eq!(d.probs()[3], 0.0);
        let d = stationary_distribution(0.8, 2, 40).unwrap();
        assert!(close(d.mass(1), 4.0 / 9.0, 1e-15));
        assert!(close(d.mass(2), 4.0 / 9.0, 1e-15));
        assert!(close(d.mass(3), 0.8 / 9.0, 1e-15));
    }

    #[test]
    fn stationary_rejects_bad_inputs() {
        assert!(stationary_distribution(0.0, 2, 10).is_err());
        assert!(stationary_distribution(0.5, 0, 10).is_err());
        assert!(stationary_distribution(0.5, 5, 4).is_err());
        assert!(threshold_average_cost(0.0, 1, 0.0).is_err());
        assert!(threshold_average_cost(0.5, 1, -1.0).is_err());
    }

    #[test]
    fn active_fraction_examples() {
        assert_eq!(active_fraction(0.7, 1).unwrap(), 1.0);
        assert!(close(active_fraction(0.5, 3).unwrap(), 0.5, 1e-15));
        assert!(close(active_fraction(1.0, 4).unwrap(), 0.25, 1e-15));
        let d = stationary_distribution(0.5, 3, default_max_state(0.5, 3)).unwrap();
        assert!(close(d.active_mass(), 0.5, 1e-13));
    }

    #[test]
    fn cost_examples() {
        assert!(close(threshold_average_cost(1.0, 1, 0.0).unwrap(), 1.0, 1e-15));
        assert!(close(threshold_average_cost(1.0, 2, 0.0).unwrap(), 1.5, 1e-15));
        assert!(close(threshold_average_cost(0.5, 1, 2.0).unwrap(), 4.0, 1e-15));
    }

    #[test]
    fn default_truncation_meets_tail_target() {
        for &p in &[0.05, 0.1, 0.37, 0.5, 0.99, 1.0] {
            for n in [1, 2, 7, 30] {
                let m = default_max_state(p, n);
                let d = stationary_distribution(p, n, m).unwrap();
                assert!(d.tail_mass() < DEFAULT_TAIL_MASS);
                if m > n {
                    let shorter = stationary_distribution(p, n, m - 1).unwrap();
                    assert!(shorter.tail_mass() >= DEFAULT_TAIL_MASS * 0.999);
                }
            }
        }
    }

    #[test]
    fn tail_first_moment_matches_long_sum() {
        let d = stationary_distribution(0.3, 4, 12).unwrap();
        let brute: f64 = (13..4000u64).map(|a| a as f64 * d.mass(a)).sum();
        assert!(close(d.tail_first_moment(), brute, 1e-12));
    }

    #[test]
    fn oracle_examples() {
        let o = dtmc_stationary_oracle(1.0, 3, 16).unwrap();
        for (i, &x) in o.iter().enumerate() {
            let want = if i < 3 { 1.0 / 3.0 } else { 0.0 };
            assert!(close(x, want, 1e-12), "age {} -> {x}", i + 1);
        }
        let o = dtmc_stationary_oracle(0.5, 1, 64).unwrap();
        for (i, &x) in o.iter().enumerate().take(40) {
            assert!(close(x, 0.5f64.powi(i as i32 + 1), 1e-12));
        }
        assert!(dtmc_stationary_oracle(0.5, 1, 10).is_err());
    }

    #[test]
    fn priority_breaks_age_one_tie_by_p() {
        let hi = BinKey { class: 0, p: 0.8, age: 1 };
        let lo = BinKey { class: 1, p: 0.5, age: 1 };
        assert_eq!(priority_cmp(&hi, &lo), Ordering::Greater);
        let older = BinKey { class: 1, p: 0.5, age: 2 };
        assert_eq!(priority_cmp(&older, &hi), Ordering::Greater);
    }

    #[test]
    fn config_validation() {
        assert!(SystemConfig::two_class(0.8, 0.5, 0.5, 0.5).is_ok());
        assert!(SystemConfig::two_class(0.5, 0.8, 0.5, 0.5).is_err());
        assert!(SystemConfig::two_class(0.8, 0.5, 0.5, 1.0).is_err());
        assert!(SystemConfig::two_class(0.8, 0.5, 0.5, 0.0).is_err());
        assert!(SystemConfig::new(vec![], 0.5).is_err());
        assert!(SystemConfig::new(vec![ClassSpec { p: 0.5, gamma: 0.7 }], 0.5).is_err());
        assert!(ClassSpec::new(0.0, 1.0).is_err());
        let cfg: std::result::Result<SystemConfig, _> =
            toml::from_str("alpha = 0.5\nclasses = [{ p = 0.5, gamma = 0.9 }]");
        assert!(cfg.is_err());
    }
}

//! Optimal solution of the time-averaged (relaxed) scheduling problem.
//!
//! The optimum mixes two threshold vectors that differ only in the class
//! owning the critical index `W*`. It is built by walking the merged,
//! ascending sequence of Whittle index values: each step turns one more
//! (class, age) position passive, until the aggregate active fraction
//! drops to the budget.

use serde::Serialize;

use crate::error::Result;
use crate::policy::{
    active_fraction_value, max_state_for_tail, priority_cmp, stationary_distribution, BinKey,
    SystemConfig, DEFAULT_TAIL_MASS,
};

/// Stationary proportions of one class, truncated with analytic tail mass.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassProportions {
    /// `mass[i]` is the proportion of all users in this class at age `i + 1`.
    pub mass: Vec<f64>,
    pub tail_mass: f64,
}

impl ClassProportions {
    pub fn total(&self) -> f64 {
        self.mass.iter().sum::<f64>() + self.tail_mass
    }
}

/// Mixed-threshold optimum of the relaxed problem.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelaxedSolution {
    pub w_star: f64,
    /// Class and age whose index equals `w_star`.
    pub critical_class: usize,
    pub critical_age: u64,
    pub l1: Vec<u64>,
    pub l2: Vec<u64>,
    pub theta: f64,
    /// Aggregate active fraction of `l1` (`<= alpha`) and of `l2` (`>= alpha`).
    pub f1: f64,
    pub f2: f64,
    pub c_rp: f64,
    pub z_star: Vec<ClassProportions>,
    #[serde(skip)]
    config: SystemConfig,
}

impl RelaxedSolution {
    pub fn config(&self) -> &SystemConfig {
        &self.config
    }

    /// `theta f1 + (1 - theta) f2 - alpha`.
    pub fn constraint_residual(&self) -> f64 {
        self.theta * self.f1 + (1.0 - self.theta) * self.f2 - self.config.alpha()
    }

    /// `z*` as plain per-class vectors (tails dropped).
    pub fn z_star_vectors(&self) -> Vec<Vec<f64>> {
        self.z_star.iter().map(|c| c.mass.clone()).collect()
    }
}

fn aggregate_active(config: &SystemConfig, thresholds: &[u64]) -> f64 {
    config
        .classes()
        .iter()
        .zip(thresholds)
        .map(|(c, &n)| c.gamma * active_fraction_value(c.p, n))
        .sum()
}

/// Solves the relaxed problem for `config`.
pub fn solve_relaxed(config: &SystemConfig) -> Result<RelaxedSolution> {
    let classes = config.classes();
    let alpha = config.alpha();
    let mut thresholds = vec![1u64; classes.len()];
    let mut active = aggregate_active(config, &thresholds);

    // The next position to turn passive in each class is the one at its
    // current threshold; the lowest-priority among them goes first.
    let (prev, critical) = loop {
        let event = (0..classes.len())
            .map(|k| BinKey {
                class: k,
                p: classes[k].p,
                age: thresholds[k],
            })
            .min_by(priority_cmp)
            .expect("non-empty config");
        let prev = thresholds.clone();
        thresholds[event.class] += 1;
        let next_active = aggregate_active(config, &thresholds);
        if next_active <= alpha {
            break ((prev, active), (event, next_active));
        }
        active = next_active;
    };
    let ((l2, f2), (event, f1)) = (prev, critical);
    let l1 = thresholds;

    let theta = if f2 > f1 {
        ((f2 - alpha) / (f2 - f1)).clamp(f64::MIN_POSITIVE, 1.0)
    } else {
        1.0
    };
    let (l2, f2) = if theta >= 1.0 { (l1.clone(), f1) } else { (l2, f2) };

    let mut sol = RelaxedSolution {
        w_star: event.index(),
        critical_class: event.class,
        critical_age: event.age,
        l1,
        l2,
        theta,
        f1,
        f2,
        c_rp: 0.0,
        z_star: Vec::new(),
        config: config.clone(),
    };
    sol.z_star = build_z_star(&sol)?;
    sol.c_rp = relaxed_cost(&sol)?;
    Ok(sol)
}

fn build_z_star(sol: &RelaxedSolution) -> Result<Vec<ClassProportions>> {
    let (theta, cfg) = (sol.theta, &sol.config);
    cfg.classes()
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let (n1, n2) = (sol.l1[k], sol.l2[k]);
            let max_state = max_state_for_tail(c.p, n1.max(n2), DEFAULT_TAIL_MASS)
                .max(n1)
                .max(n2);
            let u1 = stationary_distribution(c.p, n1, max_state)?;
            let u2 = stationary_distribution(c.p, n2, max_state)?;
            let mass = u1
                .probs()
                .iter()
                .zip(u2.probs())
                .map(|(a, b)| c.gamma * (theta * a + (1.0 - theta) * b))
                .collect();
            let tail_mass = c.gamma * (theta * u1.tail_mass() + (1.0 - theta) * u2.tail_mass());
            Ok(ClassProportions { mass, tail_mass })
        })
        .collect()
}

/// Per-user average age of a mixed-threshold solution.
///
/// Sums truncated first moments plus the geometric tail correction, so it
/// agrees with the closed-form threshold cost to rounding.
pub fn relaxed_cost(sol: &RelaxedSolution) -> Result<f64> {
    let mut total = 0.0;
    for (k, c) in sol.config.classes().iter().enumerate() {
        let mean = |n: u64| -> Result<f64> {
            let d = stationary_distribution(c.p, n, max_state_for_tail(c.p, n, DEFAULT_TAIL_MASS))?;
            Ok(d.mean())
        };
        let m1 = mean(sol.l1[k])?;
        let m2 = if sol.theta < 1.0 { mean(sol.l2[k])? } else { 0.0 };
        total += c.gamma * (sol.theta * m1 + (1.0 - sol.theta) * m2);
    }
    Ok(total)
}

/// Stationary proportions `z*` of the relaxed optimum.
pub fn fixed_point(config: &SystemConfig) -> Result<Vec<ClassProportions>> {
    Ok(solve_relaxed(config)?.z_star)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{threshold_average_cost, ClassSpec};

    #[test]
    fn single_class_deterministic_channel() {
        let cfg = SystemConfig::new(vec![ClassSpec::new(1.0, 1.0).unwrap()], 0.5).unwrap();
        let sol = solve_relaxed(&cfg).unwrap();
        assert_eq!(sol.l1, vec![2]);
        assert_eq!(sol.l2, vec![2]);
        assert_eq!(sol.theta, 1.0);
        assert!((sol.c_rp - 1.5).abs() < 1e-12);
        let z = &sol.z_star[0];
        assert!((z.mass[0] - 0.5).abs() < 1e-15);
        assert!((z.mass[1] - 0.5).abs() < 1e-15);
        assert_eq!(z.tail_mass, 0.0);
    }

    #[test]
    fn near_saturated_budget_schedules_everyone() {
        let cfg = SystemConfig::new(vec![ClassSpec::new(0.5, 1.0).unwrap()], 1.0 - 1e-9).unwrap();
        let sol = solve_relaxed(&cfg).unwrap();
        assert_eq!(sol.l2, vec![1]);
        assert!((sol.c_rp - 2.0).abs() < 1e-6);
    }

    #[test]
    fn collapsed_mixture_equals_threshold_cost() {
        let cfg = SystemConfig::new(vec![ClassSpec::new(0.5, 1.0).unwrap()], 0.5).unwrap();
        let sol = solve_relaxed(&cfg).unwrap();
        // active_fraction(0.5, 3) = 0.5 exactly
        assert_eq!(sol.l1, vec![3]);
        assert_eq!(sol.theta, 1.0);
        let want = threshold_average_cost(0.5, 3, 0.0).unwrap();
        assert!((sol.c_rp - want).abs() < 1e-12);
    }

    #[test]
    fn two_class_reference_structure() {
        let cfg = SystemConfig::two_class(0.8, 0.5, 0.5, 0.5).unwrap();
        let sol = solve_relaxed(&cfg).unwrap();
        assert!(sol.constraint_residual().abs() < 1e-12);
        assert!(sol.theta > 0.0 && sol.theta <= 1.0);
        for k in 0..2 {
            let d = sol.l1[k] - sol.l2[k];
            if k == sol.critical_class {
                assert!(d <= 1);
            } else {
                assert_eq!(d, 0);
            }
            assert!((sol.z_star[k].total() - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn relaxed_cost_is_idempotent() {
        let cfg = SystemConfig::two_class(0.9, 0.3, 0.4, 0.35).unwrap();
        let sol = solve_relaxed(&cfg).unwrap();
        assert_eq!(relaxed_cost(&sol).unwrap(), sol.c_rp);
    }
}

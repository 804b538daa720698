use proptest::prelude::*;

use whittle_aoi::fluid::{fluid_step, weighted_distance, weighted_norm, FluidState};
use whittle_aoi::policy::{
    active_fraction, default_max_state, stationary_distribution, whittle_index, ClassSpec,
    SystemConfig,
};
use whittle_aoi::relaxed::solve_relaxed;
use whittle_aoi::sim::{empirical_proportions, simulate, whittle_schedule, SimConfig, SimRun};

/// Up to three classes with non-increasing `p`, shares summing to one.
fn system() -> impl Strategy<Value = SystemConfig> {
    (1usize..=3)
        .prop_flat_map(|k| {
            (
                prop::collection::vec(0.05f64..=1.0, k),
                prop::collection::vec(0.05f64..1.0, k),
                0.02f64..0.98,
            )
        })
        .prop_map(|(mut ps, ws, alpha)| {
            ps.sort_by(|a, b| b.total_cmp(a));
            let total: f64 = ws.iter().sum();
            let mut gammas: Vec<f64> = ws.iter().map(|w| w / total).collect();
            let rest: f64 = gammas[1..].iter().sum();
            gammas[0] = 1.0 - rest;
            let classes = ps.into_iter().zip(gammas).map(|(p, g)| ClassSpec::new(p, g).unwrap()).collect();
            SystemConfig::new(classes, alpha).unwrap()
        })
}

fn random_state(cfg: &SystemConfig, seed: u64) -> FluidState {
    FluidState::random(cfg, seed, 1 + (seed % 25) as usize)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn index_increases_with_age(p in 0.01f64..=1.0, age in 1u64..5000) {
        let a = whittle_index(p, age).unwrap();
        let b = whittle_index(p, age + 1).unwrap();
        prop_assert!(b > a);
        // the difference of two large values carries their rounding
        prop_assert!(((b - a) - (age as f64 * p + 1.0)).abs() <= 4.0 * f64::EPSILON * b);
    }

    #[test]
    fn stationary_law_is_normalised(p in 0.05f64..=1.0, n in 1u64..30) {
        let d = stationary_distribution(p, n, default_max_state(p, n)).unwrap();
        prop_assert!((d.total_mass() - 1.0).abs() < 1e-12);
        prop_assert!((d.active_mass() - active_fraction(p, n).unwrap()).abs() < 1e-12);
        // flat up to the threshold, geometric beyond
        let u = d.probs();
        for i in 1..n as usize {
            prop_assert!((u[i] - u[0]).abs() < 1e-15);
        }
        for i in n as usize..u.len() {
            prop_assert!((u[i] - (1.0 - p) * u[i - 1]).abs() < 1e-14);
        }
    }

    #[test]
    fn relaxed_solution_structure(cfg in system()) {
        let sol = solve_relaxed(&cfg).unwrap();
        prop_assert!(sol.constraint_residual().abs() < 1e-12, "residual {:e}", sol.constraint_residual());
        prop_assert!(sol.theta > 0.0 && sol.theta <= 1.0);
        prop_assert!(sol.f1 <= cfg.alpha() + 1e-15 && sol.f2 >= cfg.alpha() - 1e-15);
        for k in 0..cfg.num_classes() {
            if k == sol.critical_class {
                prop_assert!(sol.l1[k] == sol.l2[k] || sol.l1[k] == sol.l2[k] + 1);
            } else {
                prop_assert_eq!(sol.l1[k], sol.l2[k]);
            }
            prop_assert!((sol.z_star[k].total() - cfg.classes()[k].gamma).abs() < 1e-12);
        }
        prop_assert!(sol.c_rp >= 1.0);
    }

    #[test]
    fn relaxed_cost_decreases_with_budget(cfg in system(), extra in 0.01f64..0.5) {
        let richer = cfg.with_alpha((cfg.alpha() + extra).min(0.99)).unwrap();
        let a = solve_relaxed(&cfg).unwrap().c_rp;
        let b = solve_relaxed(&richer).unwrap().c_rp;
        prop_assert!(b <= a + 1e-12);
    }

    #[test]
    fn fluid_step_invariants(cfg in system(), seed in 0u64..1000) {
        let mut z = random_state(&cfg, seed);
        for _ in 0..30 {
            let (next, d) = fluid_step(&z, &cfg).unwrap();
            let total: f64 = d.alpha_k.iter().sum();
            prop_assert!((total - cfg.alpha()).abs() < 1e-12);
            for (k, c) in cfg.classes().iter().enumerate() {
                prop_assert!(d.alpha_k[k] >= -1e-15 && d.alpha_k[k] <= c.gamma + 1e-12);
                prop_assert!((next.class_total(k) + next.lost_mass()[k] - c.gamma).abs() < 1e-12);
                prop_assert!(next.classes()[k].iter().all(|&x| x >= 0.0));
                prop_assert!((0.0..=1.0).contains(&d.idle_share[k]));
                // delivered mass lands at age 1
                prop_assert!((next.mass(k, 1) - c.p * d.alpha_k[k]).abs() < 1e-12);
            }
            z = next;
        }
    }

    #[test]
    fn weighted_norm_is_a_norm(a in prop::collection::vec(-1.0f64..1.0, 0..10),
                               b in prop::collection::vec(-1.0f64..1.0, 0..10),
                               c in prop::collection::vec(-1.0f64..1.0, 0..10)) {
        let (a, b, c) = (vec![a], vec![b], vec![c]);
        prop_assert!(weighted_norm(&a) >= 0.0);
        prop_assert!(weighted_distance(&a, &c) <= weighted_distance(&a, &b) + weighted_distance(&b, &c) + 1e-12);
        prop_assert!((weighted_distance(&a, &b) - weighted_distance(&b, &a)).abs() < 1e-15);
        prop_assert_eq!(weighted_distance(&a, &a), 0.0);
    }

    #[test]
    fn schedule_takes_the_top_indices(ages in prop::collection::vec(1u64..40, 1..30),
                                      ps in prop::collection::vec(0.05f64..=1.0, 30),
                                      m in 1usize..30) {
        let p = &ps[..ages.len()];
        let m = m.min(ages.len());
        let chosen = whittle_schedule(&ages, p, m);
        prop_assert_eq!(chosen.len(), m);
        let w = |u: usize| whittle_index(p[u], ages[u]).unwrap();
        let worst = chosen.iter().map(|&u| w(u)).fold(f64::INFINITY, f64::min);
        for u in 0..ages.len() {
            if !chosen.contains(&u) {
                prop_assert!(w(u) <= worst);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn simulator_dynamics(seed in 0u64..10_000, half in 1usize..12, alpha in 0.1f64..0.9) {
        let n = 2 * half;
        let cfg = SimConfig::new(SystemConfig::two_class(0.9, 0.4, 0.5, alpha).unwrap(), n, 1, seed);
        let Ok(mut run) = SimRun::new(&cfg) else {
            // budget rounded to zero
            prop_assert!((alpha * n as f64).round() < 1.0);
            return Ok(());
        };
        let m = run.budget();
        for _ in 0..300 {
            let before = run.ages().to_vec();
            prop_assert_eq!(run.step(), m);
            prop_assert_eq!(run.last_scheduled().iter().filter(|&&s| s).count(), m);
            for ((&b, &a), &s) in before.iter().zip(run.ages()).zip(run.last_scheduled()) {
                prop_assert!(a >= 1);
                prop_assert!(a == b + 1 || (s && a == 1));
            }
            let z = empirical_proportions(run.ages(), run.class_of(), 2);
            let total: f64 = z.iter().flatten().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn simulation_is_reproducible(seed in 0u64..1000) {
        let cfg = SimConfig::new(SystemConfig::two_class(0.8, 0.5, 0.5, 0.5).unwrap(), 8, 400, seed);
        prop_assert_eq!(simulate(&cfg).unwrap(), simulate(&cfg).unwrap());
    }
}

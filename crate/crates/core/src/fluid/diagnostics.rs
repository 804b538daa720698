//! Closed-form quantities behind the two-class convergence argument.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::policy::index_value;

fn check_pair(p1: f64, p2: f64) -> Result<()> {
    if !(p1 <= 1.0 && p2 > 0.0) {
        return Err(Error::invalid(format!(
            "probabilities must lie in (0, 1], got ({p1}, {p2})"
        )));
    }
    if p1 <= p2 {
        return Err(Error::invalid(format!(
            "requires p1 > p2, got p1 = {p1}, p2 = {p2}"
        )));
    }
    Ok(())
}

/// Largest root `D` of `f(n) = w2(n + 1) - w1(n)`; index alternation holds
/// strictly on `[1, D)`.
pub fn compute_d(p1: f64, p2: f64) -> Result<f64> {
    check_pair(p1, p2)?;
    let s = p1 + p2;
    let d = p1 - p2;
    Ok((s / 2.0 + (2.0 * d + s * s / 4.0).sqrt()) / d)
}

/// Lower bound `B_alpha = 1 / (1 + (D - 2) p2)` on the budget.
pub fn assumption_bound(p1: f64, p2: f64) -> Result<f64> {
    let d = compute_d(p1, p2)?;
    Ok(1.0 / (1.0 + (d - 2.0) * p2))
}

/// Bound on the instantaneous thresholds: the unique integer in
/// `[(1 - alpha) / (p2 alpha), (1 - alpha) / (p2 alpha) + 1)`.
pub fn t_max(alpha: f64, p2: f64) -> Result<u64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if !(p2 > 0.0 && p2 <= 1.0) {
        return Err(Error::invalid(format!("p2 must lie in (0, 1], got {p2}")));
    }
    let lower = (1.0 - alpha) / (p2 * alpha);
    let nearest = lower.round();
    // An integer lower bound maps to itself; absorb rounding noise.
    let t = if (lower - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        nearest
    } else {
        lower.ceil()
    };
    Ok((t as u64).max(1))
}

/// `f(n) = n^2 (p2 - p1) / 2 + n (p1 + p2) / 2 + 1`.
pub fn alternation_gap(p1: f64, p2: f64, n: f64) -> f64 {
    n * n / 2.0 * (p2 - p1) + n / 2.0 * (p1 + p2) + 1.0
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlternationReport {
    /// `w2(n) < w1(n) < w2(n + 1)` for every `n` in `[1, n_max]`, the
    /// structural tie `w1(1) = w2(1)` excepted.
    pub holds: bool,
    pub first_failure: Option<u64>,
    /// `w1(1) == w2(1)`, which is always the case.
    pub age_one_tie: bool,
    pub n_max: u64,
}

/// Checks the interleaving of the two classes' index sequences.
pub fn check_alternation(p1: f64, p2: f64, n_max: u64) -> Result<AlternationReport> {
    check_pair(p1, p2)?;
    let w1 = |n| index_value(p1, n);
    let w2 = |n| index_value(p2, n);
    let age_one_tie = w1(1) == w2(1);
    let first_failure = (1..=n_max).find(|&n| {
        let lower_ok = n == 1 || w2(n) < w1(n);
        !(lower_ok && w1(n) < w2(n + 1))
    });
    Ok(AlternationReport {
        holds: first_failure.is_none(),
        first_failure,
        age_one_tie,
        n_max,
    })
}

/// Everything needed to state whether the two-class convergence argument
/// applies to a configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceCertificate {
    pub d_value: f64,
    pub b_alpha: f64,
    pub assumption_ok: bool,
    pub t_max: u64,
    /// Alternation over `[1, t_max + 1]`.
    pub alternation_ok: bool,
    pub alternation: AlternationReport,
}

impl ConvergenceCertificate {
    pub fn new(p1: f64, p2: f64, alpha: f64) -> Result<Self> {
        let d_value = compute_d(p1, p2)?;
        let b_alpha = assumption_bound(p1, p2)?;
        let t_max = t_max(alpha, p2)?;
        let alternation = check_alternation(p1, p2, t_max + 1)?;
        Ok(ConvergenceCertificate {
            d_value,
            b_alpha,
            assumption_ok: alpha > b_alpha,
            t_max,
            alternation_ok: alternation.holds,
            alternation,
        })
    }
}

/// Age-weighted L1 norm `sum_k sum_i |v_i^k| i` (`v[k][0]` is age 1).
pub fn weighted_norm<V: AsRef<[f64]>>(v: &[V]) -> f64 {
    v.iter()
        .map(|c| {
            c.as_ref()
                .iter()
                .enumerate()
                .map(|(i, x)| x.abs() * (i + 1) as f64)
                .sum::<f64>()
        })
        .sum()
}

/// `weighted_norm(a - b)` for vectors of possibly different support.
pub fn weighted_distance<A: AsRef<[f64]>, B: AsRef<[f64]>>(a: &[A], b: &[B]) -> f64 {
    let classes = a.len().max(b.len());
    let empty: &[f64] = &[];
    (0..classes)
        .map(|k| {
            let x = a.get(k).map_or(empty, |v| v.as_ref());
            let y = b.get(k).map_or(empty, |v| v.as_ref());
            (0..x.len().max(y.len()))
                .map(|i| {
                    let d = x.get(i).copied().unwrap_or(0.0) - y.get(i).copied().unwrap_or(0.0);
                    d.abs() * (i + 1) as f64
                })
                .sum::<f64>()
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn d_examples() {
        assert!((compute_d(0.4, 0.2).unwrap() - 5.0).abs() < 1e-12);
        assert!((compute_d(1.0, 0.5).unwrap() - 4.0).abs() < 1e-12);
        assert!((compute_d(0.9, 0.6).unwrap() - 6.094).abs() < 5e-4);
        assert!(compute_d(0.5, 0.5).is_err());
        assert!(compute_d(0.4, 0.6).is_err());
    }

    #[test]
    fn d_is_root_of_gap() {
        for &(p1, p2) in &[(0.4, 0.2), (0.8, 0.5), (0.9, 0.85), (1.0, 0.1)] {
            let d = compute_d(p1, p2).unwrap();
            assert!(alternation_gap(p1, p2, d).abs() < 1e-9);
        }
    }

    #[test]
    fn bound_examples() {
        assert!((assumption_bound(0.4, 0.2).unwrap() - 0.625).abs() < 1e-12);
        assert!((assumption_bound(1.0, 0.5).unwrap() - 0.5).abs() < 1e-12);
        assert!((assumption_bound(0.9, 0.8).unwrap() - 0.0720).abs() < 5e-5);
    }

    #[test]
    fn t_max_examples() {
        assert_eq!(t_max(0.5, 0.5).unwrap(), 2);
        assert_eq!(t_max(0.5, 0.4).unwrap(), 3);
        assert_eq!(t_max(0.5, 1.0).unwrap(), 1);
        // (1 - 0.3) / (0.7 * 0.3) = 3.333..
        assert_eq!(t_max(0.3, 0.7).unwrap(), 4);
        assert!(t_max(1.0, 0.5).is_err());
    }

    #[test]
    fn alternation_examples() {
        let tm = t_max(0.5, 0.5).unwrap();
        let r = check_alternation(0.8, 0.5, tm + 1).unwrap();
        assert!(r.holds);
        assert!(r.age_one_tie);

        let (p1, p2) = (0.51, 0.5);
        let d = compute_d(p1, p2).unwrap();
        let r = check_alternation(p1, p2, 10_000).unwrap();
        assert!(!r.holds);
        assert_eq!(r.first_failure, Some(d.ceil() as u64));
    }

    #[test]
    fn norm_examples() {
        let zero: Vec<Vec<f64>> = vec![vec![0.0; 4], vec![]];
        assert_eq!(weighted_norm(&zero), 0.0);
        let v = vec![vec![0.0, 0.0, 0.5], vec![]];
        assert!((weighted_norm(&v) - 1.5).abs() < 1e-15);
        let w = vec![vec![0.0, 0.0, 0.25, 0.1], vec![0.2]];
        let expected = 0.25 * 3.0 + 0.1 * 4.0 + 0.2;
        assert!((weighted_distance(&v, &w) - expected).abs() < 1e-15);
    }
}

//! Slot-by-slot audit of the scheduled-fraction history `alpha_1(t)`.
//!
//! From the burn-in slot `T0` on, every idle bin of the fluid state is a
//! delayed copy `p_k alpha_k(T - i)` of an earlier scheduled fraction, and
//! the window `A_1(T) = (alpha_1(T), ..., alpha_1(T - l(T)))` has a
//! non-increasing maximum and non-decreasing minimum. The audit checks
//! those claims numerically and records every breach.

use std::collections::VecDeque;

use serde::Serialize;

use super::diagnostics::ConvergenceCertificate;
use super::{FluidState, ScheduleDecision};
use crate::error::Result;
use crate::policy::SystemConfig;

/// Slack on every audited inequality.
pub const AUDIT_TOL: f64 = 1e-10;

/// Recent `(alpha_1, alpha_2)` pairs, newest first.
#[derive(Debug, Clone)]
pub struct AlphaHistory {
    entries: VecDeque<(f64, f64)>,
    capacity: usize,
}

impl AlphaHistory {
    pub fn new(capacity: usize) -> Self {
        AlphaHistory {
            entries: VecDeque::with_capacity(capacity),
            capacity: capacity.max(1),
        }
    }

    pub fn push(&mut self, alpha_1: f64, alpha_2: f64) {
        if self.entries.len() == self.capacity {
            self.entries.pop_back();
        }
        self.entries.push_front((alpha_1, alpha_2));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `(alpha_1, alpha_2)` from `lag` slots before the newest entry.
    pub fn lagged(&self, lag: usize) -> Option<(f64, f64)> {
        self.entries.get(lag).copied()
    }

    /// `A_1(T) = (alpha_1(T), ..., alpha_1(T - l))` with `T` the newest slot.
    pub fn window(&self, l: usize) -> Option<Vec<f64>> {
        if l + 1 > self.entries.len() {
            return None;
        }
        Some(self.entries.iter().take(l + 1).map(|e| e.0).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditMode {
    /// Budget condition holds: breaches are violations.
    Enforcing,
    /// Budget condition fails: breaches are only counted.
    Observing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    MaxIncreased,
    MinDecreased,
    NoBracketingCase,
    ThresholdAboveBound,
    ThresholdStructure,
    InactiveClassOne,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub slot: u64,
    pub kind: ViolationKind,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub mode: AuditMode,
    /// First slot with `alpha_1 > 0`.
    pub activation_slot: Option<u64>,
    /// Detected burn-in slot `T0`.
    pub t0: Option<u64>,
    pub l_max: u64,
    pub slots_audited: u64,
    /// Frequencies of the four bracketing cases for `alpha_1(T + 1)`.
    pub case_counts: [u64; 4],
    /// Breaches (in observing mode these are informational).
    pub violations: Vec<Violation>,
    /// Total breaches, including any beyond the stored sample.
    pub violation_count: u64,
    pub max_threshold_seen: u64,
    /// `max A_1 - min A_1` at the last audited slot.
    pub final_spread: Option<f64>,
}

impl AuditReport {
    /// No breaches in enforcing mode.
    pub fn is_clean(&self) -> bool {
        self.violation_count == 0
    }
}

const MAX_STORED_VIOLATIONS: usize = 64;

/// Streaming audit fed with `(state(t), decision(t))` for successive `t`.
#[derive(Debug, Clone)]
pub struct MonotonicityAudit {
    p: [f64; 2],
    l_max: u64,
    history: AlphaHistory,
    report: AuditReport,
    /// `(max A_1(T), min A_1(T), alpha_1(T), alpha_1(T - l + 1), alpha_1(T - l))`.
    previous: Option<(f64, f64, f64, f64, f64)>,
    slot: u64,
}

impl MonotonicityAudit {
    pub fn new(config: &SystemConfig, certificate: &ConvergenceCertificate) -> Result<Self> {
        let (p1, p2) = config.strict_pair()?;
        let mode = if certificate.assumption_ok {
            AuditMode::Enforcing
        } else {
            AuditMode::Observing
        };
        let l_max = certificate.t_max;
        Ok(MonotonicityAudit {
            p: [p1, p2],
            l_max,
            history: AlphaHistory::new(4 * (l_max as usize + 1) + 64),
            report: AuditReport {
                mode,
                activation_slot: None,
                t0: None,
                l_max,
                slots_audited: 0,
                case_counts: [0; 4],
                violations: Vec::new(),
                violation_count: 0,
                max_threshold_seen: 0,
                final_spread: None,
            },
            previous: None,
            slot: 0,
        })
    }

    fn flag(&mut self, kind: ViolationKind, detail: String) {
        self.report.violation_count += 1;
        if self.report.violations.len() < MAX_STORED_VIOLATIONS {
            self.report.violations.push(Violation {
                slot: self.slot,
                kind,
                detail,
            });
        }
    }

    /// Every idle or boundary bin `(k, i)` equals `p_k alpha_k(t - i)`.
    fn idle_bins_expressible(&self, state: &FluidState, d: &ScheduleDecision) -> bool {
        for k in 0..2 {
            for age in 1..=d.thresholds[k] {
                // history holds slots t-1, t-2, ...; lag 0 is t-1
                let Some(past) = self.history.lagged(age as usize - 1) else {
                    return false;
                };
                let a = if k == 0 { past.0 } else { past.1 };
                if (state.mass(k, age) - self.p[k] * a).abs() > AUDIT_TOL {
                    return false;
                }
            }
        }
        true
    }

    pub fn observe(&mut self, state: &FluidState, d: &ScheduleDecision) {
        self.slot = state.slot();
        let (a1, a2) = (d.alpha_k[0], d.alpha_k[1]);
        if self.report.activation_slot.is_none() && a1 > 0.0 {
            self.report.activation_slot = Some(self.slot);
        }
        if self.report.t0.is_none()
            && self.report.activation_slot.is_some()
            && self.idle_bins_expressible(state, d)
        {
            self.report.t0 = Some(self.slot);
        }
        self.history.push(a1, a2);
        if self.report.t0.is_none() {
            return;
        }
        self.audit_slot(d);
    }

    fn audit_slot(&mut self, d: &ScheduleDecision) {
        let (l1, l2) = (d.thresholds[0], d.thresholds[1]);
        let l = l1.max(l2);
        self.report.slots_audited += 1;
        self.report.max_threshold_seen = self.report.max_threshold_seen.max(l);

        let structured = match d.critical_class {
            0 => l1 == l2,
            _ => l1 + 1 == l2,
        };
        if !structured {
            self.flag(
                ViolationKind::ThresholdStructure,
                format!("l_1 = {l1}, l_2 = {l2}, critical class {}", d.critical_class + 1),
            );
        }
        if l > self.l_max {
            self.flag(
                ViolationKind::ThresholdAboveBound,
                format!("l = {l} exceeds l_max = {}", self.l_max),
            );
        }
        let a1 = d.alpha_k[0];
        if a1 <= 0.0 {
            self.flag(ViolationKind::InactiveClassOne, format!("alpha_1 = {a1}"));
        }

        let Some(window) = self.history.window(l as usize) else {
            // The window reaches before the stored history: skip the
            // comparison but keep auditing.
            self.previous = None;
            return;
        };
        let max = window.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = window.iter().copied().fold(f64::INFINITY, f64::min);

        if let Some((pmax, pmin, prev_a1, a_lp1, a_l)) = self.previous {
            if max > pmax + AUDIT_TOL {
                self.flag(
                    ViolationKind::MaxIncreased,
                    format!("max A_1 went from {pmax:e} to {max:e}"),
                );
            }
            if min < pmin - AUDIT_TOL {
                self.flag(
                    ViolationKind::MinDecreased,
                    format!("min A_1 went from {pmin:e} to {min:e}"),
                );
            }
            match bracketing_case(self.p[0], prev_a1, a1, a_lp1, a_l) {
                Some(c) => self.report.case_counts[c] += 1,
                None => self.flag(
                    ViolationKind::NoBracketingCase,
                    format!(
                        "alpha_1(T+1) = {a1:e} with alpha_1(T) = {prev_a1:e}, \
                         alpha_1(T-l+1) = {a_lp1:e}, alpha_1(T-l) = {a_l:e}"
                    ),
                ),
            }
        }
        let l = l as usize;
        let a_l = window[l];
        let a_lp1 = window[l.saturating_sub(1)];
        self.previous = Some((max, min, a1, a_lp1, a_l));
        self.report.final_spread = Some(max - min);
    }

    pub fn finish(self) -> AuditReport {
        let mut report = self.report;
        if report.mode == AuditMode::Observing {
            // Observation only: keep the record, make no claim.
            report.violations.iter_mut().for_each(|v| v.detail.insert_str(0, "[observed] "));
        }
        report
    }
}

/// Which of the four bracketing cases `next = alpha_1(T + 1)` falls in,
/// given `cur = alpha_1(T)`, `lp1 = alpha_1(T - l + 1)`, `l0 = alpha_1(T - l)`,
/// with the matching contraction by `p1`.
pub fn bracketing_case(p1: f64, cur: f64, next: f64, lp1: f64, l0: f64) -> Option<usize> {
    let t = AUDIT_TOL;
    let up = |hi: f64| cur <= next + t && next <= hi + t && next - cur <= p1 * (hi - cur) + t;
    let down = |lo: f64| lo <= next + t && next <= cur + t && cur - next <= p1 * (cur - lo) + t;
    if up(l0) {
        Some(0)
    } else if down(l0) {
        Some(1)
    } else if down(lp1) {
        Some(2)
    } else if up(lp1) {
        Some(3)
    } else {
        None
    }
}

//! Experiment recipes behind the command-line tool.
//!
//! [`run`] executes a validated [`ExperimentSpec`] and returns an
//! [`Outcome`]: rendered output files, a console summary and the result of
//! the command's self-check. Nothing touches the filesystem until
//! [`output::write_all`] is called.

pub mod output;
pub mod spec;

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fluid::{
    assumption_bound, compute_d, run_fluid, write_trajectory_csv, AuditMode, FluidRun,
    FluidRunOptions, FluidState,
};
use crate::policy::SystemConfig;
use crate::relaxed::{solve_relaxed, RelaxedSolution};
use crate::sim::{
    kurtz_experiment, simulate, InitialProportions, KurtzReport, MuRule, Policy, SimConfig,
    SimMetrics, RNG_ALGORITHM,
};

pub use output::{write_all, Metadata, OutputFile};
pub use spec::{BalphaSpec, ExperimentSpec, FluidInit, FluidSpec, KurtzSpec, RelaxedSpec, SweepSpec};

use output::{csv_file, fixed4, num};

/// Reference `(p_lo, p_hi, printed B_alpha)` triples.
pub const REFERENCE_TABLE: [(f64, f64, f64); 10] = [
    (0.1, 0.2, 0.7034),
    (0.2, 0.4, 0.6250),
    (0.3, 0.5, 0.4711),
    (0.4, 0.6, 0.3556),
    (0.4, 0.8, 0.5328),
    (0.5, 0.8, 0.3612),
    (0.5, 1.0, 0.5000),
    (0.6, 0.9, 0.2893),
    (0.7, 0.9, 0.1675),
    (0.8, 0.9, 0.1351),
];

/// The one reference row whose printed value the formula does not give.
pub const KNOWN_MISMATCH: (f64, f64) = (0.8, 0.9);

/// Agreement tolerance against the printed four-decimal values.
pub const TABLE_TOL: f64 = 5e-4;

const RELAXED_RESIDUAL_TOL: f64 = 1e-12;
const SPREAD_TOL: f64 = 1e-8;

/// Per-invocation overrides.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Replaces the spec's base seed (sweeps) or random-init seed (fluid).
    pub seed: Option<u64>,
}

/// Failed self-checks; empty means the check passed.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Check {
    pub failures: Vec<String>,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    fn require(&mut self, ok: bool, msg: impl FnOnce() -> String) {
        if !ok {
            self.failures.push(msg());
        }
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub command: &'static str,
    pub spec: ExperimentSpec,
    pub seed: Option<u64>,
    pub summary: String,
    pub files: Vec<OutputFile>,
    pub check: Check,
}

impl Outcome {
    pub fn metadata(&self, timestamp: bool) -> Result<Metadata> {
        Ok(Metadata {
            tool: "whittle-aoi",
            version: env!("CARGO_PKG_VERSION"),
            command: self.command.to_string(),
            kind: self.spec.kind().to_string(),
            seed: self.seed,
            rng: RNG_ALGORITHM,
            timestamp: timestamp.then(output::unix_now),
            files: self.files.iter().map(|f| f.name.clone()).collect(),
            spec: self.spec.to_toml()?,
        })
    }
}

/// CLI subcommand that runs a given experiment kind.
pub fn command_for(spec: &ExperimentSpec) -> &'static str {
    match spec {
        ExperimentSpec::BalphaTable(_) => "balpha",
        ExperimentSpec::FluidRun(_) => "fluid",
        ExperimentSpec::SimSweep(_) => "compare",
        ExperimentSpec::Kurtz(_) => "kurtz",
        ExperimentSpec::RelaxedSolve(_) => "relaxed",
    }
}

pub fn run(spec: &ExperimentSpec, opts: &RunOptions) -> Result<Outcome> {
    spec.validate()?;
    let mut spec = spec.clone();
    apply_seed(&mut spec, opts.seed);
    let (seed, summary, files, check) = match &spec {
        ExperimentSpec::BalphaTable(s) => {
            let (a, b, c) = cmd_balpha(s)?;
            (None, a, b, c)
        }
        ExperimentSpec::FluidRun(s) => {
            let (a, b, c) = cmd_fluid(s)?;
            let seed = match s.init {
                FluidInit::Random { seed, .. } => Some(seed),
                _ => None,
            };
            (seed, a, b, c)
        }
        ExperimentSpec::SimSweep(s) => {
            let (a, b, c) = cmd_compare(s)?;
            (Some(s.seed), a, b, c)
        }
        ExperimentSpec::Kurtz(s) => {
            let (a, b, c) = cmd_kurtz(s)?;
            (Some(s.seed), a, b, c)
        }
        ExperimentSpec::RelaxedSolve(s) => {
            let (a, b, c) = cmd_relaxed(s)?;
            (None, a, b, c)
        }
    };
    Ok(Outcome {
        command: command_for(&spec),
        spec,
        seed,
        summary,
        files,
        check,
    })
}

/// Two classes (`p = 0.8, 0.5`, equal shares) at half budget.
pub fn reference_system() -> SystemConfig {
    SystemConfig::two_class(0.8, 0.5, 0.5, 0.5).expect("valid reference config")
}

/// The experiment a subcommand runs when no file is given.
pub fn default_spec(command: &str) -> Option<ExperimentSpec> {
    let system = reference_system();
    Some(match command {
        "balpha" => ExperimentSpec::BalphaTable(BalphaSpec { paper: true, pairs: Vec::new(), out_dir: None }),
        "fluid" => ExperimentSpec::FluidRun(FluidSpec {
            system,
            init: FluidInit::Random { seed: 0, max_age: 20 },
            horizon: 5000,
            tol: 1e-6,
            state_stride: 1,
            out_dir: None,
        }),
        "compare" => ExperimentSpec::SimSweep(SweepSpec {
            system,
            n_list: vec![8, 16, 32, 64, 128, 256],
            horizon: 200_000,
            seeds: 8,
            seed: 0,
            policy: Policy::Whittle,
            burn_in_fraction: 0.1,
            exact_budget: true,
            out_dir: None,
        }),
        "kurtz" => ExperimentSpec::Kurtz(KurtzSpec {
            system,
            n_list: vec![16, 64, 256],
            horizon: 500,
            seeds: 200,
            seed: 0,
            mu: None,
            mu_median_factor: Some(2.0),
            initial: None,
            out_dir: None,
        }),
        "relaxed" => ExperimentSpec::RelaxedSolve(RelaxedSpec { system, out_dir: None }),
        _ => return None,
    })
}

fn apply_seed(spec: &mut ExperimentSpec, seed: Option<u64>) {
    let Some(seed) = seed else { return };
    match spec {
        ExperimentSpec::FluidRun(s) => {
            if let FluidInit::Random { seed: ref mut r, .. } = s.init {
                *r = seed;
            }
        }
        ExperimentSpec::SimSweep(s) => s.seed = seed,
        ExperimentSpec::Kurtz(s) => s.seed = seed,
        _ => {}
    }
}

type Rendered = (String, Vec<OutputFile>, Check);

// ---------------------------------------------------------------- balpha

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BalphaRow {
    pub p_lo: f64,
    pub p_hi: f64,
    pub d: f64,
    pub b_alpha: f64,
    /// Reference value, for preset rows.
    pub printed: Option<f64>,
    pub matches: Option<bool>,
}

/// `D` and `B_alpha` for each pair (order within a pair is irrelevant).
pub fn balpha_rows(pairs: &[[f64; 2]]) -> Result<Vec<BalphaRow>> {
    pairs
        .iter()
        .map(|&[a, b]| {
            spec::check_pair(a, b)?;
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            Ok(BalphaRow {
                p_lo: lo,
                p_hi: hi,
                d: compute_d(hi, lo)?,
                b_alpha: assumption_bound(hi, lo)?,
                printed: None,
                matches: None,
            })
        })
        .collect()
}

/// The reference rows, each compared with its printed value.
pub fn balpha_reference() -> Vec<BalphaRow> {
    let pairs: Vec<[f64; 2]> = REFERENCE_TABLE.iter().map(|r| [r.0, r.1]).collect();
    let mut rows = balpha_rows(&pairs).expect("reference pairs are valid");
    for (row, r) in rows.iter_mut().zip(REFERENCE_TABLE) {
        row.printed = Some(r.2);
        row.matches = Some((row.b_alpha - r.2).abs() <= TABLE_TOL);
    }
    rows
}

fn balpha_check(rows: &[BalphaRow]) -> Check {
    let mut check = Check::default();
    for r in rows {
        let Some(m) = r.matches else { continue };
        let known = (r.p_lo, r.p_hi) == KNOWN_MISMATCH;
        check.require(m != known, || {
            format!(
                "({}, {}): computed {:.4}, printed {:.4}, {}",
                r.p_lo,
                r.p_hi,
                r.b_alpha,
                r.printed.unwrap_or(f64::NAN),
                if known { "expected a mismatch" } else { "mismatch" }
            )
        });
    }
    check
}

fn cmd_balpha(s: &BalphaSpec) -> Result<Rendered> {
    let mut rows = if s.paper { balpha_reference() } else { Vec::new() };
    rows.extend(balpha_rows(&s.pairs)?);
    let status = |r: &BalphaRow| match r.matches {
        Some(true) => "match",
        Some(false) => "mismatch",
        None => "",
    };
    let mut summary = format!("{:>6} {:>6} {:>8} {:>8} {:>8}  status\n", "p_lo", "p_hi", "D", "B_alpha", "printed");
    for r in &rows {
        let printed = r.printed.map(fixed4).unwrap_or_default();
        let _ = writeln!(
            summary,
            "{:>6} {:>6} {:>8} {:>8} {:>8}  {}",
            r.p_lo,
            r.p_hi,
            fixed4(r.d),
            fixed4(r.b_alpha),
            printed,
            status(r)
        );
    }
    let csv_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                num(r.p_lo),
                num(r.p_hi),
                fixed4(r.d),
                fixed4(r.b_alpha),
                r.printed.map(fixed4).unwrap_or_default(),
                status(r).to_string(),
            ]
        })
        .collect();
    let file = csv_file("balpha.csv", &["p_lo", "p_hi", "D", "B_alpha", "printed", "status"], &csv_rows)?;
    Ok((summary, vec![file], balpha_check(&rows)))
}

// ---------------------------------------------------------------- relaxed

/// Problems with a relaxed solution's structure, empty when sound.
pub fn relaxed_check(sol: &RelaxedSolution) -> Check {
    let mut check = Check::default();
    let r = sol.constraint_residual();
    check.require(r.abs() < RELAXED_RESIDUAL_TOL, || format!("budget residual {r:e}"));
    check.require(sol.theta > 0.0 && sol.theta <= 1.0, || format!("theta = {} outside (0, 1]", sol.theta));
    for (k, (&a, &b)) in sol.l1.iter().zip(&sol.l2).enumerate() {
        let ok = if k == sol.critical_class {
            a == b || a == b + 1
        } else {
            a == b
        };
        check.require(ok, || format!("class {}: l1 = {a}, l2 = {b}", k + 1));
    }
    check
}

fn cmd_relaxed(s: &RelaxedSpec) -> Result<Rendered> {
    let sol = solve_relaxed(&s.system)?;
    let mut out = String::new();
    let _ = writeln!(out, "W*        {}", sol.w_star);
    let _ = writeln!(out, "critical  class {} at age {}", sol.critical_class + 1, sol.critical_age);
    let _ = writeln!(out, "l1        {:?}", sol.l1);
    let _ = writeln!(out, "l2        {:?}", sol.l2);
    let _ = writeln!(out, "theta     {}", sol.theta);
    let _ = writeln!(out, "f1, f2    {}, {}", sol.f1, sol.f2);
    let _ = writeln!(out, "C_RP      {}", sol.c_rp);
    let _ = writeln!(out, "residual  {:e}", sol.constraint_residual());
    let file = OutputFile::json("relaxed.json", &sol)?;
    Ok((out, vec![file], relaxed_check(&sol)))
}

// ---------------------------------------------------------------- fluid

/// Reads initial proportions from CSV `class,age,mass` (1-based class and
/// age). Errors name the offending line.
pub fn read_proportions_csv(path: &Path, config: &SystemConfig) -> Result<Vec<Vec<f64>>> {
    let name = path.display().to_string();
    let fail = |line: u64, detail: String| Error::Format {
        path: name.clone(),
        line: line as usize,
        detail,
    };
    let file = std::fs::File::open(path)?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let header = rdr.headers().map_err(|e| fail(1, e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != ["class", "age", "mass"] {
        return Err(fail(1, format!("expected header class,age,mass, found {}", header.iter().collect::<Vec<_>>().join(","))));
    }
    let k = config.num_classes();
    let mut out = vec![Vec::<f64>::new(); k];
    let mut seen = std::collections::HashSet::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            fail(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let class: usize = rec[0].parse().map_err(|_| fail(line, format!("bad class `{}`", &rec[0])))?;
        let age: usize = rec[1].parse().map_err(|_| fail(line, format!("bad age `{}`", &rec[1])))?;
        let mass: f64 = rec[2].parse().map_err(|_| fail(line, format!("bad mass `{}`", &rec[2])))?;
        if class == 0 || class > k {
            return Err(fail(line, format!("class {class} outside 1..={k}")));
        }
        if age == 0 {
            return Err(fail(line, "age must be at least 1".into()));
        }
        if !(mass.is_finite() && mass >= 0.0) {
            return Err(fail(line, format!("mass {mass} must be finite and non-negative")));
        }
        if !seen.insert((class, age)) {
            return Err(fail(line, format!("duplicate entry for class {class}, age {age}")));
        }
        let v = &mut out[class - 1];
        if v.len() < age {
            v.resize(age, 0.0);
        }
        v[age - 1] = mass;
    }
    Ok(out)
}

pub fn fluid_initial_state(init: &FluidInit, sol: &RelaxedSolution) -> Result<FluidState> {
    let config = sol.config();
    Ok(match init {
        FluidInit::Zstar => FluidState::from_z_star(sol),
        FluidInit::AllAgeOne => FluidState::all_age_one(config),
        FluidInit::Random { seed, max_age } => FluidState::random(config, *seed, *max_age),
        FluidInit::File { path } => FluidState::new(config, read_proportions_csv(path, config)?)?,
    })
}

/// Convergence claims for a fluid run.
pub fn fluid_check(run: &FluidRun) -> Check {
    let mut check = Check::default();
    check.require(run.converged_at.is_some(), || {
        format!("distance to z* still {:e} at the horizon", run.distances.last().copied().unwrap_or(f64::NAN))
    });
    let (Some(cert), Some(audit)) = (&run.certificate, &run.audit) else {
        return check;
    };
    if audit.mode == AuditMode::Observing {
        return check;
    }
    check.require(audit.t0.is_some(), || "burn-in slot never reached".into());
    check.require(audit.is_clean(), || {
        let first = audit.violations.first().map(|v| format!("; first at slot {}: {}", v.slot, v.detail));
        format!("{} audit violations{}", audit.violation_count, first.unwrap_or_default())
    });
    check.require(audit.final_spread.is_some_and(|s| s < SPREAD_TOL), || {
        format!("final spread of A_1 is {:?}", audit.final_spread)
    });
    check.require(audit.max_threshold_seen <= cert.t_max, || {
        format!("threshold {} exceeds t_max = {}", audit.max_threshold_seen, cert.t_max)
    });
    check
}

#[derive(Serialize)]
struct FluidReport<'a> {
    c_rp: f64,
    status: crate::fluid::FluidStatus,
    converged_at: Option<u64>,
    final_distance: f64,
    max_mass_drift: f64,
    lost_mass: &'a [f64],
    certificate: &'a Option<crate::fluid::ConvergenceCertificate>,
    audit: &'a Option<crate::fluid::AuditReport>,
}

fn cmd_fluid(s: &FluidSpec) -> Result<Rendered> {
    let sol = solve_relaxed(&s.system)?;
    let z0 = fluid_initial_state(&s.init, &sol)?;
    let run = run_fluid(z0, &sol, s.horizon, s.tol, FluidRunOptions { state_stride: s.state_stride })?;

    let mut traj = Vec::new();
    write_trajectory_csv(&run, &mut traj)?;
    let report = FluidReport {
        c_rp: sol.c_rp,
        status: run.status,
        converged_at: run.converged_at,
        final_distance: run.distances.last().copied().unwrap_or(f64::NAN),
        max_mass_drift: run.max_mass_drift,
        lost_mass: run.final_state.lost_mass(),
        certificate: &run.certificate,
        audit: &run.audit,
    };

    let mut out = String::new();
    let _ = writeln!(out, "status          {:?}", run.status);
    let _ = writeln!(out, "converged at    {:?}", run.converged_at);
    let _ = writeln!(out, "final distance  {:e}", report.final_distance);
    if let Some(c) = &run.certificate {
        let _ = writeln!(
            out,
            "certificate     D = {:.4}, B_alpha = {:.4}, assumption_ok = {}, t_max = {}, alternation_ok = {}",
            c.d_value, c.b_alpha, c.assumption_ok, c.t_max, c.alternation_ok
        );
    }
    if let Some(a) = &run.audit {
        let _ = writeln!(
            out,
            "audit           mode = {:?}, t_f = {:?}, T0 = {:?}, slots = {}, violations = {}, max l = {}, cases = {:?}",
            a.mode, a.activation_slot, a.t0, a.slots_audited, a.violation_count, a.max_threshold_seen, a.case_counts
        );
    }
    let files = vec![
        OutputFile::new("trajectory.csv", traj),
        OutputFile::json("fluid_report.json", &report)?,
    ];
    Ok((out, files, fluid_check(&run)))
}

// ---------------------------------------------------------------- compare

/// Gap between the simulated average age and the relaxed bound at one `N`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapRow {
    pub n: usize,
    pub runs: usize,
    pub mean: f64,
    /// Standard error of `mean` across seeds (0 for a single seed).
    pub se: f64,
    pub c_rp: f64,
    pub gap: f64,
    pub rel_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareReport {
    pub c_rp: f64,
    pub runs: Vec<SimMetrics>,
    pub rows: Vec<GapRow>,
}

/// Simulates every `(N, seed)` pair and summarises the gap per `N`.
pub fn compare(
    system: &SystemConfig,
    n_list: &[usize],
    horizon: u64,
    seeds: &[u64],
    policy: Policy,
    burn_in_fraction: f64,
    exact_budget: bool,
) -> Result<CompareReport> {
    let c_rp = solve_relaxed(system)?.c_rp;
    let mut ns = n_list.to_vec();
    ns.sort_unstable();
    ns.dedup();
    let configs: Vec<SimConfig> = ns
        .iter()
        .flat_map(|&n| {
            seeds.iter().map(move |&seed| {
                let mut c = SimConfig::new(system.clone(), n, horizon, seed).with_policy(policy);
                c.burn_in_fraction = burn_in_fraction;
                c.exact_budget = exact_budget;
                c
            })
        })
        .collect();
    // Surface configuration errors before the long runs.
    for c in &configs {
        c.class_counts()?;
        c.budget()?;
    }
    let mut runs = configs.par_iter().map(simulate).collect::<Result<Vec<_>>>()?;
    runs.sort_by(|a, b| a.n_users.cmp(&b.n_users).then(a.seed.cmp(&b.seed)));

    let rows = ns
        .iter()
        .map(|&n| {
            let v: Vec<f64> = runs.iter().filter(|r| r.n_users == n).map(|r| r.avg_age_per_user).collect();
            let (mean, se) = mean_se(&v);
            GapRow {
                n,
                runs: v.len(),
                mean,
                se,
                c_rp,
                gap: mean - c_rp,
                rel_gap: (mean - c_rp) / c_rp,
            }
        })
        .collect();
    Ok(CompareReport { c_rp, runs, rows })
}

pub fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Lower bound at every `N`, and a gap that shrinks from the smallest to
/// the largest `N` with at most one adjacent increase, itself within one
/// standard error of the difference.
pub fn gap_trend_check(rows: &[GapRow]) -> Check {
    let mut check = Check::default();
    for r in rows {
        check.require(r.mean >= r.c_rp - 3.0 * r.se, || {
            format!("N = {}: mean {} below C_RP - 3 SE = {}", r.n, r.mean, r.c_rp - 3.0 * r.se)
        });
    }
    if rows.len() < 2 {
        return check;
    }
    let (first, last) = (&rows[0], &rows[rows.len() - 1]);
    check.require(last.gap < first.gap, || {
        format!("gap at N = {} ({}) not below gap at N = {} ({})", last.n, last.gap, first.n, first.gap)
    });
    let mut inversions = 0;
    for w in rows.windows(2) {
        if w[1].gap > w[0].gap {
            inversions += 1;
            let tol = (w[0].se.powi(2) + w[1].se.powi(2)).sqrt();
            check.require(w[1].gap - w[0].gap <= tol, || {
                format!("gap rises from N = {} to N = {} by {} (> 1 SE = {})", w[0].n, w[1].n, w[1].gap - w[0].gap, tol)
            });
        }
    }
    check.require(inversions <= 1, || format!("{inversions} adjacent gap increases"));
    check
}

fn seeds_from(base: u64, count: usize) -> Vec<u64> {
    (0..count as u64).map(|i| base.wrapping_add(i)).collect()
}

const METRICS_HEADER: [&str; 8] =
    ["N", "seed", "policy", "horizon", "avg_age_per_user", "c_rp", "gap", "exceed_prob"];

const PLOT_STUB: &str = r#"# Plots the gap table written by `whittle-aoi compare`.
import csv
import sys

import matplotlib.pyplot as plt

path = sys.argv[1] if len(sys.argv) > 1 else "gap.csv"
with open(path, newline="") as f:
    rows = list(csv.DictReader(f))
n = [int(r["N"]) for r in rows]
mean = [float(r["mean_avg_age"]) for r in rows]
se = [float(r["se"]) for r in rows]
c_rp = float(rows[0]["c_rp"])

plt.errorbar(n, mean, yerr=se, marker="o", label="Whittle index policy")
plt.axhline(c_rp, linestyle="--", color="k", label="relaxed bound")
plt.xscale("log", base=2)
plt.xlabel("N")
plt.ylabel("average age per user")
plt.legend()
plt.savefig(path.rsplit(".", 1)[0] + ".png", dpi=150)
"#;

fn cmd_compare(s: &SweepSpec) -> Result<Rendered> {
    let seeds = seeds_from(s.seed, s.seeds);
    let rep = compare(&s.system, &s.n_list, s.horizon, &seeds, s.policy, s.burn_in_fraction, s.exact_budget)?;

    let metrics: Vec<Vec<String>> = rep
        .runs
        .iter()
        .map(|r| {
            vec![
                r.n_users.to_string(),
                r.seed.to_string(),
                r.policy.name().to_string(),
                r.horizon.to_string(),
                num(r.avg_age_per_user),
                num(rep.c_rp),
                num(r.avg_age_per_user - rep.c_rp),
                String::new(),
            ]
        })
        .collect();
    let gap: Vec<Vec<String>> = rep
        .rows
        .iter()
        .map(|r| {
            vec![
                r.n.to_string(),
                r.runs.to_string(),
                num(r.mean),
                num(r.se),
                num(r.c_rp),
                num(r.gap),
                num(r.rel_gap),
            ]
        })
        .collect();

    let mut out = format!("C_RP = {}\n{:>6} {:>5} {:>10} {:>9} {:>10} {:>9}\n", rep.c_rp, "N", "runs", "mean", "se", "gap", "rel_gap");
    for r in &rep.rows {
        let _ = writeln!(out, "{:>6} {:>5} {:>10.5} {:>9.2e} {:>10.5} {:>9.5}", r.n, r.runs, r.mean, r.se, r.gap, r.rel_gap);
    }
    let files = vec![
        csv_file("metrics.csv", &METRICS_HEADER, &metrics)?,
        csv_file("gap.csv", &["N", "runs", "mean_avg_age", "se", "c_rp", "gap", "rel_gap"], &gap)?,
        OutputFile::new("plot_gap.py", PLOT_STUB),
    ];
    let check = if s.policy == Policy::Whittle {
        gap_trend_check(&rep.rows)
    } else {
        // The trend claim is about the index policy only.
        Check::default()
    };
    Ok((out, files, check))
}

// ---------------------------------------------------------------- kurtz

pub fn kurtz_from_spec(s: &KurtzSpec) -> Result<KurtzReport> {
    let x = match &s.initial {
        Some(v) => InitialProportions(v.clone()),
        None => InitialProportions::all_age_one(&s.system),
    };
    // Shape and mass are validated by the fluid state constructor.
    FluidState::new(&s.system, x.0.clone())?;
    let mu = match (s.mu, s.mu_median_factor) {
        (Some(m), _) => MuRule::Fixed(m),
        (None, f) => MuRule::MedianAtLargest(f.unwrap_or(2.0)),
    };
    kurtz_experiment(&s.system, &x, &s.n_list, s.horizon, &seeds_from(s.seed, s.seeds), mu)
}

fn cmd_kurtz(s: &KurtzSpec) -> Result<Rendered> {
    let rep = kurtz_from_spec(s)?;
    let c_rp = solve_relaxed(&s.system)?.c_rp;
    let prob = |n: usize| rep.rows.iter().find(|r| r.n == n).map_or(f64::NAN, |r| r.exceed_prob);
    let metrics: Vec<Vec<String>> = rep
        .samples
        .iter()
        .map(|r| {
            vec![
                r.n.to_string(),
                r.seed.to_string(),
                Policy::Whittle.name().to_string(),
                rep.horizon.to_string(),
                num(r.avg_age_per_user),
                num(c_rp),
                num(r.avg_age_per_user - c_rp),
                num(prob(r.n)),
            ]
        })
        .collect();
    let table: Vec<Vec<String>> = rep
        .rows
        .iter()
        .map(|r| {
            vec![
                r.n.to_string(),
                r.runs.to_string(),
                num(rep.mu),
                num(r.exceed_prob),
                num(r.n_times_prob),
                num(r.median_deviation),
            ]
        })
        .collect();
    let mut out = format!("mu = {}\n{:>6} {:>5} {:>10} {:>10} {:>12}\n", rep.mu, "N", "runs", "P(exceed)", "N*P", "median dev");
    for r in &rep.rows {
        let _ = writeln!(out, "{:>6} {:>5} {:>10.4} {:>10.4} {:>12.5}", r.n, r.runs, r.exceed_prob, r.n_times_prob, r.median_deviation);
    }
    let mut check = Check::default();
    check.require(rep.nonincreasing(), || "exceedance probability increases with N".into());
    let files = vec![
        csv_file("kurtz.csv", &["N", "runs", "mu", "exceed_prob", "n_times_prob", "median_deviation"], &table)?,
        csv_file("metrics.csv", &METRICS_HEADER, &metrics)?,
    ];
    Ok((out, files, check))
}

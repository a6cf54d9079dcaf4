//! Dispatches a validated config to the solvers and assembles the report.

use anyhow::Context;
use rayon::prelude::*;
use rbsde::{
    apriori_audit, compute_norms, jump_formula_check, mokobodzki_check, run_battery, run_schedule,
    sandwich_check, skorokhod_check, solve_bsde, solve_rbsde_with, AuditReport, ProblemData,
    ReflectOptions, ReflectedSolution, SolutionView, Verdict,
};
use sha2::{Digest, Sha256};

use crate::config::{ExperimentSpec, Mode, SCHEMA_VERSION};
use crate::report::{Provenance, Report, Summary};

/// Tolerance on the defects of reflected (oracle) solutions.
const ORACLE_TOLERANCE: f64 = 1e-12;
/// Bound on the final barrier violation of a penalization schedule.
const FINAL_VIOLATION_BOUND: f64 = 1e-3;

fn verdict(name: &str, passed: bool, worst: f64, detail: impl Into<String>) -> Verdict {
    Verdict {
        name: name.to_string(),
        passed,
        worst,
        detail: detail.into(),
    }
}

pub fn config_hash(spec: &ExperimentSpec) -> String {
    hex::encode(Sha256::digest(spec.to_canonical_json().as_bytes()))
}

/// Runs independent experiments concurrently; results keep the input order.
pub fn run_batch(specs: &[ExperimentSpec]) -> Vec<anyhow::Result<Report>> {
    specs.par_iter().map(run_experiment).collect()
}

pub fn run_experiment(spec: &ExperimentSpec) -> anyhow::Result<Report> {
    let data = spec
        .validate_data()
        .with_context(|| format!("experiment `{}`", spec.name))?;
    let mut report = Report {
        schema_version: SCHEMA_VERSION,
        name: spec.name.clone(),
        mode: spec.mode,
        summary: Summary {
            y0: f64::NAN,
            k_total: None,
            a_total: None,
            oracle_y0: None,
            residual: None,
            norms: None,
        },
        levels: Vec::new(),
        audit: None,
        verdicts: Vec::new(),
        provenance: Provenance {
            config_hash: config_hash(spec),
            horizon: spec.problem.horizon,
            steps: spec.problem.steps,
            seed: spec.seed,
            solver_version: rbsde::VERSION.to_string(),
            cli_version: env!("CARGO_PKG_VERSION").to_string(),
        },
    };
    let opts = ReflectOptions {
        strict_terminal: spec.strict_terminal,
    };
    match spec.mode {
        Mode::Bsde => run_bsde(&data, &mut report),
        Mode::RbsdeOne | Mode::RbsdeTwo => run_reflected(&data, opts, &mut report),
        Mode::Penalization => run_penalization(spec, &data, opts, &mut report),
        Mode::Suite => run_suite(spec, &data, opts, &mut report),
    }
    .with_context(|| format!("experiment `{}` ({:?} mode)", spec.name, spec.mode))?;
    Ok(report)
}

fn run_bsde(data: &ProblemData, report: &mut Report) -> anyhow::Result<()> {
    let sol = solve_bsde(data)?;
    report.summary.y0 = sol.y0();
    report.summary.residual = Some(sol.residual());
    report.summary.norms = Some(compute_norms(&sol, data, data.p())?);
    report.verdicts.push(verdict(
        "scheme_residual",
        sol.residual() <= 1e-10,
        sol.residual(),
        "max defect of the implicit step equations",
    ));
    Ok(())
}

/// `max (L - Y)^+` and `max (Y - U)^+` over interior nodes; leaves hold the
/// unclamped terminal value.
fn barrier_excess(y: &rbsde::NodeField, data: &ProblemData) -> f64 {
    let last = data.lattice().steps();
    y.iter()
        .filter(|(node, _)| node.step < last)
        .map(|(node, v)| {
            let below = data.lower_at(node).map_or(0.0, |l| (l - v).max(0.0));
            let above = data.upper_at(node).map_or(0.0, |u| (v - u).max(0.0));
            below.max(above)
        })
        .fold(0.0, f64::max)
}

fn oracle_verdicts(sol: &ReflectedSolution, data: &ProblemData, out: &mut Vec<Verdict>) -> anyhow::Result<()> {
    let excess = barrier_excess(sol.y(), data);
    out.push(verdict("barrier_respect", excess <= 0.0, excess, "max barrier violation of the reflected solution"));
    let sk = skorokhod_check(sol, data);
    let defect = sk.lower_defect.max(sk.upper_defect);
    out.push(verdict(
        "skorokhod",
        defect <= ORACLE_TOLERANCE && sk.singularity_ok,
        defect,
        format!("max path defect; pushes mutually singular: {}", sk.singularity_ok),
    ));
    let jr = jump_formula_check(sol, data)?;
    let worst = jr.plus_residual.max(jr.minus_residual).max(jr.envelope_residual.unwrap_or(0.0));
    out.push(verdict(
        "jump_formulas",
        jr.holds,
        worst,
        format!("push increments vs clamp formulas; jumps at steps {:?}", jr.jump_steps),
    ));
    if data.lower().is_some() && data.upper().is_some() {
        let mk = mokobodzki_check(data, None)?;
        out.push(verdict(
            "mokobodzki",
            mk.feasible && mk.witness_between,
            mk.violations as f64,
            mk.note,
        ));
    }
    Ok(())
}

fn run_reflected(data: &ProblemData, opts: ReflectOptions, report: &mut Report) -> anyhow::Result<()> {
    let sol = solve_rbsde_with(data, opts)?;
    report.summary.y0 = sol.y0();
    report.summary.k_total = Some(sol.k_plus_total());
    report.summary.a_total = Some(sol.k_minus_total());
    report.summary.norms = Some(compute_norms(&sol, data, data.p())?);
    oracle_verdicts(&sol, data, &mut report.verdicts)
}

/// Smallest admissible audit exponent `a` for the generator's declared constants.
fn audit_params(data: &ProblemData) -> (f64, f64) {
    let p = if data.p() > 1.0 { data.p() } else { 2.0 };
    let gen = data.generator();
    let a = (gen.mu() + gen.lambda().powi(2) / (p - 1.0).min(1.0)).max(0.0);
    (p, a)
}

/// `max_k (x[k+1] - x[k])`, or `None` for fewer than two values.
fn worst_increase(xs: &[f64]) -> Option<f64> {
    xs.windows(2).map(|w| w[1] - w[0]).reduce(f64::max)
}

fn run_penalization(
    spec: &ExperimentSpec,
    data: &ProblemData,
    opts: ReflectOptions,
    report: &mut Report,
) -> anyhow::Result<()> {
    let schedule = spec.penalty_schedule().context("missing schedule")?;
    let oracle = if spec.oracle {
        Some(solve_rbsde_with(data, opts).context("reflected oracle")?)
    } else {
        None
    };
    let run = run_schedule(data, &schedule, oracle.as_ref())?;
    let last = run.solutions.last().context("empty schedule")?;
    report.summary.y0 = last.y0();
    report.summary.k_total = Some(last.k_total());
    report.summary.a_total = Some(last.a_total());
    report.summary.residual = Some(last.base().residual());
    report.summary.norms = Some(compute_norms(last, data, data.p())?);
    report.summary.oracle_y0 = oracle.as_ref().map(|o| o.y0());
    report.levels = run.levels.clone();

    let v = &mut report.verdicts;
    v.push(verdict(
        "penalization_monotonicity",
        run.monotonicity.holds,
        run.monotonicity.worst_violation.unwrap_or(0.0),
        format!("max (Y_a - Y_b) over {} ordered level pairs", run.monotonicity.pairs_checked),
    ));

    let errors = run.errors();
    if let Some(worst) = worst_increase(&errors) {
        v.push(verdict(
            "oracle_error_decreasing",
            worst < 0.0,
            worst,
            format!("max change of the sup-node error between levels; final {:e}", errors[errors.len() - 1]),
        ));
    }

    let has_lower = data.lower().is_some();
    let has_upper = data.upper().is_some();
    for (name, present, series) in [
        ("lower_violation_decay", has_lower, run.levels.iter().map(|l| l.lower_violation).collect::<Vec<_>>()),
        ("upper_violation_decay", has_upper, run.levels.iter().map(|l| l.upper_violation).collect()),
    ] {
        if !present {
            continue;
        }
        let rise = worst_increase(&series).unwrap_or(0.0);
        let last = series[series.len() - 1];
        v.push(verdict(
            name,
            rise <= 0.0 && last <= FINAL_VIOLATION_BOUND,
            last,
            format!("final max barrier violation; max rise between levels {rise:e}"),
        ));
    }
    for (name, present, series) in [
        ("lower_defect_decay", has_lower, run.levels.iter().map(|l| l.lower_defect).collect::<Vec<_>>()),
        ("upper_defect_decay", has_upper, run.levels.iter().map(|l| l.upper_defect).collect()),
    ] {
        if !present {
            continue;
        }
        let rise = worst_increase(&series).unwrap_or(f64::NEG_INFINITY);
        v.push(verdict(
            name,
            rise < 0.0,
            rise,
            "max change of the Skorokhod defect between levels (strict decrease expected)",
        ));
    }

    if has_lower && has_upper {
        let diagonal: Vec<f64> = run.levels.iter().filter(|l| l.n == l.m).map(|l| l.n).collect();
        if !diagonal.is_empty() {
            let checks: Vec<_> = diagonal.par_iter().map(|&n| sandwich_check(data, n)).collect::<Result<_, _>>()?;
            let worst = checks.iter().map(|s| s.lower_gap.max(s.upper_gap)).fold(f64::NEG_INFINITY, f64::max);
            v.push(verdict(
                "sandwich",
                checks.iter().all(|s| s.holds),
                worst,
                format!("one-sided schemes bracket Y^(n,n) at {} diagonal levels", checks.len()),
            ));
        }
    }

    let family: Vec<&dyn SolutionView> = run.solutions.iter().map(|s| s as &dyn SolutionView).collect();
    let (p, a) = audit_params(data);
    let audit: AuditReport = apriori_audit(&family, data, p, a)?;
    v.push(verdict(
        "apriori_uniformity",
        audit.uniform,
        audit.max_ratio.max(audit.max_push_ratio),
        format!(
            "per-level ratio to the data functional stays within 1.01x of the first level ({:e}, push {:e})",
            audit.first_ratio, audit.first_push_ratio
        ),
    ));
    report.audit = Some(audit);

    if let Some(oracle) = &oracle {
        oracle_verdicts(oracle, data, v)?;
    }
    Ok(())
}

fn run_suite(spec: &ExperimentSpec, data: &ProblemData, opts: ReflectOptions, report: &mut Report) -> anyhow::Result<()> {
    if data.lower().is_some() || data.upper().is_some() {
        let sol = solve_rbsde_with(data, opts)?;
        report.summary.y0 = sol.y0();
        report.summary.k_total = Some(sol.k_plus_total());
        report.summary.a_total = Some(sol.k_minus_total());
    } else {
        let sol = solve_bsde(data)?;
        report.summary.y0 = sol.y0();
        report.summary.residual = Some(sol.residual());
    }
    report.verdicts = run_battery(data, spec.seed)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn increases() {
        assert_eq!(worst_increase(&[3.0, 2.0, 2.5]), Some(0.5));
        assert_eq!(worst_increase(&[1.0]), None);
    }
}

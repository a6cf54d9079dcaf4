//! Backward solver for `Y_t = xi + int f(s, Y, Z) ds + int dV - int Z dB` on the lattice.
//!
//! Each step is implicit in `y` and explicit in `z`:
//! `Y_i = E_i[Y_{i+1}] + f(t_i, Y_i, Z_i) dt + dV_i` with `Z_i` the martingale
//! coefficient of `Y_{i+1}`. Under `dt * max(mu, 0) < 1` the map
//! `y -> y - dt f(t, y, z)` is strictly increasing, so the step has exactly one root.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{NodeField, NodeIndex};
use crate::processes::{Generator, ProblemData, Site};
use crate::solution::SolutionView;

/// Absolute defect accepted by [`implicit_step`] (scaled by `max(1, |e + dv|)`).
pub const STEP_TOLERANCE: f64 = 1e-14;
/// Slack allowed when comparing two solutions nodewise.
pub const COMPARISON_TOLERANCE: f64 = 1e-10;
const MAX_ITERATIONS: usize = 200;

/// Unique `y` with `y = e + f(t, y, z) dt + dv`.
///
/// Safeguarded Newton: a sign-change bracket around `e` is doubled until it
/// holds the root, and any Newton iterate leaving the bracket is replaced by
/// bisection.
pub fn implicit_step<G: Generator + ?Sized>(
    e: f64,
    z: f64,
    gen: &G,
    at: Site,
    dt: f64,
    dv: f64,
) -> Result<f64> {
    let product = dt * gen.monotonicity().max(0.0);
    if product >= 1.0 {
        return Err(Error::Stability { product });
    }
    if !(e.is_finite() && z.is_finite() && dv.is_finite() && dt.is_finite() && dt >= 0.0) {
        return Err(Error::NumericDomain(format!(
            "implicit step inputs must be finite: e = {e}, z = {z}, dv = {dv}, dt = {dt}"
        )));
    }
    let target = e + dv;
    let defect = |y: f64| y - dt * gen.value(at, y, z) - target;
    let tol = STEP_TOLERANCE * target.abs().max(1.0);

    let f_e = gen.value(at, e, z);
    let mut y = target + dt * f_e;
    let mut gy = if y.is_finite() { defect(y) } else { f64::NAN };
    if gy.abs() <= tol {
        return Ok(y);
    }

    let radius = dv.abs() + dt * f_e.abs() + 1.0;
    let (mut lo, mut hi) = (e - radius, e + radius);
    let (mut glo, mut ghi) = (defect(lo), defect(hi));
    let mut width = radius;
    let mut expansions = 0;
    while !(glo <= 0.0 && ghi >= 0.0) {
        if expansions == MAX_ITERATIONS || glo.is_nan() || ghi.is_nan() {
            return Err(Error::NonConvergence {
                iterations: expansions,
                defect: glo.max(-ghi),
            });
        }
        width *= 2.0;
        if glo > 0.0 {
            lo = e - width;
            glo = defect(lo);
        }
        if ghi < 0.0 {
            hi = e + width;
            ghi = defect(hi);
        }
        expansions += 1;
    }
    if glo == 0.0 {
        return Ok(lo);
    }
    if ghi == 0.0 {
        return Ok(hi);
    }
    if !(y > lo && y < hi) || gy.is_nan() {
        y = lo + 0.5 * (hi - lo);
        gy = defect(y);
    }

    for _ in 0..MAX_ITERATIONS {
        if gy.abs() <= tol {
            return Ok(y);
        }
        if gy < 0.0 {
            lo = y;
            glo = gy;
        } else {
            hi = y;
            ghi = gy;
        }
        let slope = 1.0 - dt * gen.dy(at, y, z);
        let mut next = y - gy / slope;
        if !(next > lo && next < hi) {
            next = lo + 0.5 * (hi - lo);
        }
        if !(next > lo && next < hi) {
            // No float strictly inside the bracket: the root is resolved to one ulp.
            return Ok(if glo.abs() <= ghi.abs() { lo } else { hi });
        }
        y = next;
        gy = defect(y);
    }
    Err(Error::NonConvergence {
        iterations: MAX_ITERATIONS,
        defect: gy,
    })
}

/// `Y`, `Z` of a non-reflected solve plus the worst one-step equation defect.
#[derive(Debug, Clone, PartialEq)]
pub struct BsdeSolution {
    pub(crate) y: NodeField,
    pub(crate) z: NodeField,
    pub(crate) residual: f64,
}

impl BsdeSolution {
    pub fn y0(&self) -> f64 {
        self.y[NodeIndex::ROOT]
    }

    pub fn residual(&self) -> f64 {
        self.residual
    }
}

impl SolutionView for BsdeSolution {
    fn y(&self) -> &NodeField {
        &self.y
    }

    fn z(&self) -> &NodeField {
        &self.z
    }
}

/// Solves the non-reflected equation; barriers in `data` are ignored.
pub fn solve_bsde(data: &ProblemData) -> Result<BsdeSolution> {
    solve_with(data, data.generator())
}

pub(crate) fn solve_with<G: Generator + ?Sized>(data: &ProblemData, gen: &G) -> Result<BsdeSolution> {
    let lat = data.lattice();
    let n = lat.steps();
    let dt = lat.dt();
    let mut y = NodeField::zeros(n);
    let mut z = NodeField::zeros(n);
    y.level_mut(n).copy_from_slice(data.terminal());
    let mut residual = 0.0f64;
    for i in (0..n).rev() {
        let t = lat.time(i);
        let dv = data.dv(i);
        for j in 0..=i {
            let node = NodeIndex::new(i, j);
            let e = lat.expect(&y, node);
            let zi = lat.coefficient(&y, node);
            let at = Site::new(t, node);
            let yi = implicit_step(e, zi, gen, at, dt, dv)?;
            residual = residual.max((yi - (e + gen.value(at, yi, zi) * dt + dv)).abs());
            y[node] = yi;
            z[node] = zi;
        }
    }
    Ok(BsdeSolution { y, z, residual })
}

/// Outcome of [`check_comparison`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    /// All hypotheses of the comparison theorem were verified on the data.
    pub applicable: bool,
    pub unmet_hypotheses: Vec<String>,
    /// `Y1 <= Y2 + 1e-10` at every node.
    pub holds: bool,
    /// `max (Y1 - Y2)`.
    pub worst_gap: f64,
}

/// Checks `Y1 <= Y2` nodewise and verifies the comparison hypotheses:
/// ordered terminal values, driver increments, barriers and generators along
/// the first solution (`f1(t, Y1, Z1) <= f2(t, Y1, Z1)`), plus the lattice
/// condition `lambda_2 * sqrt(dt) <= 1` under which the explicit-in-`z` step
/// is order preserving.
pub fn check_comparison<S1, S2>(
    sol1: &S1,
    sol2: &S2,
    data1: &ProblemData,
    data2: &ProblemData,
) -> Result<ComparisonReport>
where
    S1: SolutionView + ?Sized,
    S2: SolutionView + ?Sized,
{
    if !data1.same_lattice(data2) {
        return Err(Error::InvalidComparison(
            "solutions live on different lattices".into(),
        ));
    }
    let lat = data1.lattice();
    if sol1.y().steps() != lat.steps() || sol2.y().steps() != lat.steps() {
        return Err(Error::InvalidComparison(
            "solution does not match the problem lattice".into(),
        ));
    }
    const HYP_TOL: f64 = 1e-12;
    let mut unmet = Vec::new();

    if data1
        .terminal()
        .iter()
        .zip(data2.terminal())
        .any(|(a, b)| *a > *b + HYP_TOL)
    {
        unmet.push("terminal values are not ordered".to_string());
    }
    if (0..lat.steps()).any(|i| data1.dv(i) > data2.dv(i) + HYP_TOL) {
        unmet.push("driver increments are not ordered".to_string());
    }
    let lower_ok = match (data1.lower(), data2.lower()) {
        (_, None) => data1.lower().is_none(),
        (None, Some(_)) => true,
        (Some(l1), Some(l2)) => lat.nodes().all(|n| l1.value(n) <= l2.value(n) + HYP_TOL),
    };
    if !lower_ok {
        unmet.push("lower barriers are not ordered".to_string());
    }
    let upper_ok = match (data1.upper(), data2.upper()) {
        (None, _) => data2.upper().is_none(),
        (Some(_), None) => true,
        (Some(u1), Some(u2)) => lat.nodes().all(|n| u1.value(n) <= u2.value(n) + HYP_TOL),
    };
    if !upper_ok {
        unmet.push("upper barriers are not ordered".to_string());
    }
    let (f1, f2) = (data1.generator(), data2.generator());
    let generator_ok = lat.nodes().filter(|n| n.step < lat.steps()).all(|n| {
        let (y, z) = (sol1.y()[n], sol1.z()[n]);
        let t = lat.time(n.step);
        f1.value_at(t, y, z) <= f2.value_at(t, y, z) + HYP_TOL
    });
    if !generator_ok {
        unmet.push("generators are not ordered along the first solution".to_string());
    }
    if f2.lambda() * lat.sqrt_dt() > 1.0 {
        unmet.push(format!(
            "lambda * sqrt(dt) = {} exceeds 1",
            f2.lambda() * lat.sqrt_dt()
        ));
    }

    let worst_gap = sol1.y().max_excess_over(sol2.y());
    Ok(ComparisonReport {
        applicable: unmet.is_empty(),
        unmet_hypotheses: unmet,
        holds: worst_gap <= COMPARISON_TOLERANCE,
        worst_gap,
    })
}

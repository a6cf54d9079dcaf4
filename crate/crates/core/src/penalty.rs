//! Penalized approximations `f + n (y - L)^- - m (y - U)^+` of the reflected
//! equations, schedules of penalty levels and their convergence reports.
//!
//! The penalty sits inside the implicit one-step solve. Both terms are
//! nonincreasing in `y`, so the step stays uniquely solvable for any level.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bsde::{solve_with, BsdeSolution};
use crate::error::{Error, Result};
use crate::lattice::{NodeField, NodeIndex};
use crate::processes::{BoundProcess, Generator, GeneratorSpec, ProblemData, Site};
use crate::reflect::{expected_total, reflect_with, skorokhod_check, ReflectOptions, ReflectedSolution};
use crate::solution::{PenaltyLevel, SolutionView};

/// Slack allowed when checking monotonicity in the penalty level.
pub const MONOTONICITY_TOLERANCE: f64 = 1e-12;
/// Slack allowed in the sandwich ordering.
pub const SANDWICH_TOLERANCE: f64 = 1e-10;

/// Ordered penalty levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltySchedule {
    levels: Vec<PenaltyLevel>,
}

impl PenaltySchedule {
    /// Levels must be nonempty with strictly increasing `n`, and `m` either
    /// absent everywhere or strictly increasing too.
    pub fn new(levels: Vec<PenaltyLevel>) -> Result<Self> {
        let bad = |msg: String| Err(Error::InvalidConfiguration(msg));
        if levels.is_empty() {
            return bad("penalty schedule has no levels".into());
        }
        for (k, level) in levels.iter().enumerate() {
            if !(level.n.is_finite() && level.n > 0.0) {
                return bad(format!("penalty level {k}: n must be positive, got {}", level.n));
            }
            if let Some(m) = level.m {
                if !(m.is_finite() && m > 0.0) {
                    return bad(format!("penalty level {k}: m must be positive, got {m}"));
                }
            }
        }
        if levels.iter().any(|l| l.m.is_some()) != levels.iter().all(|l| l.m.is_some()) {
            return bad("penalty levels must all set m or all omit it".into());
        }
        for (k, w) in levels.windows(2).enumerate() {
            if w[1].n <= w[0].n {
                return bad(format!("penalty level {}: n must increase strictly", k + 1));
            }
            if let (Some(a), Some(b)) = (w[0].m, w[1].m) {
                if b <= a {
                    return bad(format!("penalty level {}: m must increase strictly", k + 1));
                }
            }
        }
        Ok(Self { levels })
    }

    /// `n_k = start * ratio^k`, `k = 0..count`; `m_k = n_k` when `two_sided`.
    pub fn geometric(start: f64, ratio: f64, count: usize, two_sided: bool) -> Result<Self> {
        if !(ratio > 1.0 && ratio.is_finite()) {
            return Err(Error::InvalidConfiguration(format!(
                "geometric schedule ratio must exceed 1, got {ratio}"
            )));
        }
        let levels = (0..count)
            .map(|k| {
                let n = start * ratio.powi(k as i32);
                if two_sided {
                    PenaltyLevel::two_sided(n, n)
                } else {
                    PenaltyLevel::one_sided(n)
                }
            })
            .collect();
        Self::new(levels)
    }

    pub fn levels(&self) -> &[PenaltyLevel] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
}

/// `f(t, y, z) + n (y - L)^- - m (y - U)^+` with barriers read at the evaluation node.
#[derive(Debug, Clone, Copy)]
pub struct PenalizedGenerator<'a> {
    base: &'a GeneratorSpec,
    n: f64,
    m: f64,
    lower: Option<&'a BoundProcess>,
    upper: Option<&'a BoundProcess>,
}

impl<'a> PenalizedGenerator<'a> {
    pub fn n(&self) -> f64 {
        self.n
    }

    pub fn m(&self) -> f64 {
        self.m
    }
}

/// Builds the penalized generator. A barrier is required whenever its coefficient is positive.
pub fn penalized_generator<'a>(
    base: &'a GeneratorSpec,
    n: f64,
    m: f64,
    lower: Option<&'a BoundProcess>,
    upper: Option<&'a BoundProcess>,
) -> Result<PenalizedGenerator<'a>> {
    for (name, c) in [("n", n), ("m", m)] {
        if !(c >= 0.0 && c.is_finite()) {
            return Err(Error::InvalidConfiguration(format!(
                "penalty coefficient {name} must be finite and nonnegative, got {c}"
            )));
        }
    }
    if n > 0.0 && lower.is_none() {
        return Err(Error::InvalidConfiguration(
            "lower penalty n > 0 needs a lower barrier".into(),
        ));
    }
    if m > 0.0 && upper.is_none() {
        return Err(Error::InvalidConfiguration(
            "upper penalty m > 0 needs an upper barrier".into(),
        ));
    }
    Ok(PenalizedGenerator {
        base,
        n,
        m,
        lower: lower.filter(|_| n > 0.0),
        upper: upper.filter(|_| m > 0.0),
    })
}

impl Generator for PenalizedGenerator<'_> {
    fn value(&self, at: Site, y: f64, z: f64) -> f64 {
        let mut v = self.base.value_at(at.t, y, z);
        if let Some(l) = self.lower {
            v += self.n * (l.value(at.node) - y).max(0.0);
        }
        if let Some(u) = self.upper {
            v -= self.m * (y - u.value(at.node)).max(0.0);
        }
        v
    }

    fn dy(&self, at: Site, y: f64, z: f64) -> f64 {
        let mut d = self.base.dy(at, y, z);
        if self.lower.is_some_and(|l| y < l.value(at.node)) {
            d -= self.n;
        }
        if self.upper.is_some_and(|u| y > u.value(at.node)) {
            d -= self.m;
        }
        d
    }

    fn monotonicity(&self) -> f64 {
        self.base.mu()
    }

    fn z_lipschitz(&self) -> f64 {
        self.base.lambda()
    }
}

/// A penalized solve with its accumulated penalty processes.
#[derive(Debug, Clone, PartialEq)]
pub struct PenalizedSolution {
    pub(crate) base: BsdeSolution,
    pub(crate) k: NodeField,
    pub(crate) a: NodeField,
    pub(crate) n: f64,
    pub(crate) m: f64,
    pub(crate) k_total: f64,
    pub(crate) a_total: f64,
}

impl PenalizedSolution {
    pub fn base(&self) -> &BsdeSolution {
        &self.base
    }

    pub fn y0(&self) -> f64 {
        self.base.y0()
    }

    /// Increments `dt n (Y - L)^-` at interior nodes.
    pub fn k(&self) -> &NodeField {
        &self.k
    }

    /// Increments `dt m (Y - U)^+` at interior nodes.
    pub fn a(&self) -> &NodeField {
        &self.a
    }

    /// Effective `(n, m)`; a coefficient is 0 when its barrier is absent.
    pub fn level(&self) -> (f64, f64) {
        (self.n, self.m)
    }

    /// `E[K_T]`.
    pub fn k_total(&self) -> f64 {
        self.k_total
    }

    /// `E[A_T]`.
    pub fn a_total(&self) -> f64 {
        self.a_total
    }

    /// `max (Y - L)^-` over interior nodes.
    pub fn lower_violation(&self, data: &ProblemData) -> f64 {
        violation(data, |node| {
            data.lower_at(node).map_or(0.0, |l| (l - self.base.y[node]).max(0.0))
        })
    }

    /// `max (Y - U)^+` over interior nodes.
    pub fn upper_violation(&self, data: &ProblemData) -> f64 {
        violation(data, |node| {
            data.upper_at(node).map_or(0.0, |u| (self.base.y[node] - u).max(0.0))
        })
    }
}

fn violation(data: &ProblemData, f: impl Fn(NodeIndex) -> f64) -> f64 {
    let lat = data.lattice();
    lat.nodes()
        .filter(|n| n.step < lat.steps())
        .map(f)
        .fold(0.0, f64::max)
}

impl SolutionView for PenalizedSolution {
    fn y(&self) -> &NodeField {
        &self.base.y
    }

    fn z(&self) -> &NodeField {
        &self.base.z
    }

    fn push_up(&self) -> Option<&NodeField> {
        Some(&self.k)
    }

    fn push_down(&self) -> Option<&NodeField> {
        Some(&self.a)
    }

    fn penalty(&self) -> Option<(f64, f64)> {
        Some((self.n, self.m))
    }
}

/// Resolves a schedule level against the barriers present in `data`:
/// `n` penalizes the lower barrier, `m` (defaulting to `n`) the upper one.
pub fn effective_level(data: &ProblemData, level: PenaltyLevel) -> (f64, f64) {
    let n = if data.lower().is_some() { level.n } else { 0.0 };
    let m = if data.upper().is_some() {
        level.m.unwrap_or(level.n)
    } else {
        0.0
    };
    (n, m)
}

/// Solves the penalized equation at `level`.
pub fn solve_penalized(data: &ProblemData, level: PenaltyLevel) -> Result<PenalizedSolution> {
    let (n, m) = effective_level(data, level);
    let gen = penalized_generator(data.generator(), n, m, data.lower(), data.upper())?;
    let base = solve_with(data, &gen)?;
    let lat = data.lattice();
    let dt = lat.dt();
    let steps = lat.steps();
    let interior = |node: NodeIndex| node.step < steps;
    let k = NodeField::from_fn(steps, |node| match data.lower_at(node) {
        Some(l) if interior(node) => dt * n * (l - base.y[node]).max(0.0),
        _ => 0.0,
    });
    let a = NodeField::from_fn(steps, |node| match data.upper_at(node) {
        Some(u) if interior(node) => dt * m * (base.y[node] - u).max(0.0),
        _ => 0.0,
    });
    let prob = lat.node_probabilities();
    Ok(PenalizedSolution {
        k_total: expected_total(lat, &prob, &k),
        a_total: expected_total(lat, &prob, &a),
        base,
        k,
        a,
        n,
        m,
    })
}

/// Nodewise monotonicity of the penalized family in its levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityReport {
    /// Level pairs `(a, b)` whose penalties are ordered (`n_a <= n_b`, `m_a >= m_b`),
    /// so that `Y_a <= Y_b` is expected.
    pub pairs_checked: usize,
    /// `max (Y_a - Y_b)` over checked pairs and nodes; `None` when no pair is ordered.
    pub worst_violation: Option<f64>,
    pub holds: bool,
}

/// Per-level summary row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    pub level_index: usize,
    pub n: f64,
    pub m: f64,
    pub y0: f64,
    /// `max over nodes |Y - Y_oracle|`.
    pub sup_error_vs_oracle: Option<f64>,
    pub k_total: f64,
    pub a_total: f64,
    pub lower_defect: f64,
    pub upper_defect: f64,
    pub lower_violation: f64,
    pub upper_violation: f64,
}

/// All levels of a schedule, solved and compared.
#[derive(Debug, Clone)]
pub struct PenalizationRun {
    pub schedule: PenaltySchedule,
    pub solutions: Vec<PenalizedSolution>,
    pub monotonicity: MonotonicityReport,
    pub levels: Vec<LevelSummary>,
}

impl PenalizationRun {
    /// Oracle errors in schedule order (empty without an oracle).
    pub fn errors(&self) -> Vec<f64> {
        self.levels
            .iter()
            .filter_map(|l| l.sup_error_vs_oracle)
            .collect()
    }
}

/// Solves every level (concurrently), then checks monotonicity and records
/// errors against `oracle` when given.
pub fn run_schedule(
    data: &ProblemData,
    schedule: &PenaltySchedule,
    oracle: Option<&ReflectedSolution>,
) -> Result<PenalizationRun> {
    let solutions = schedule
        .levels()
        .par_iter()
        .map(|&level| solve_penalized(data, level))
        .collect::<Result<Vec<_>>>()?;

    let mut pairs_checked = 0;
    let mut worst: Option<f64> = None;
    for a in 0..solutions.len() {
        for b in 0..solutions.len() {
            let ((na, ma), (nb, mb)) = (solutions[a].level(), solutions[b].level());
            if a == b || !(na <= nb && ma >= mb) {
                continue;
            }
            pairs_checked += 1;
            let gap = solutions[a].y().max_excess_over(solutions[b].y());
            worst = Some(worst.map_or(gap, |w: f64| w.max(gap)));
        }
    }
    let monotonicity = MonotonicityReport {
        pairs_checked,
        worst_violation: worst,
        holds: worst.map_or(true, |w| w <= MONOTONICITY_TOLERANCE),
    };

    let levels = solutions
        .iter()
        .enumerate()
        .map(|(level_index, sol)| {
            let sk = skorokhod_check(sol, data);
            LevelSummary {
                level_index,
                n: sol.n,
                m: sol.m,
                y0: sol.y0(),
                sup_error_vs_oracle: oracle.map(|o| sol.y().max_abs_diff(o.y())),
                k_total: sol.k_total,
                a_total: sol.a_total,
                lower_defect: sk.lower_defect,
                upper_defect: sk.upper_defect,
                lower_violation: sol.lower_violation(data),
                upper_violation: sol.upper_violation(data),
            }
        })
        .collect();

    Ok(PenalizationRun {
        schedule: schedule.clone(),
        solutions,
        monotonicity,
        levels,
    })
}

/// Ordering of the two one-sided schemes around the diagonal penalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandwichReport {
    pub n: f64,
    /// `Y` of the lower penalty `n` combined with reflection at `U`.
    pub y_bar0: f64,
    /// `Y` of the two-sided penalty `(n, n)`.
    pub y_diag0: f64,
    /// `Y` of the upper penalty `n` combined with reflection at `L`.
    pub y_under0: f64,
    /// `max (Ybar - Y^{n,n})`.
    pub lower_gap: f64,
    /// `max (Y^{n,n} - Yunder)`.
    pub upper_gap: f64,
    pub holds: bool,
    #[serde(skip)]
    pub bar: NodeField,
    #[serde(skip)]
    pub diag: NodeField,
    #[serde(skip)]
    pub under: NodeField,
}

/// Computes `Ybar <= Y^{n,n} <= Yunder` nodewise.
pub fn sandwich_check(data: &ProblemData, n: f64) -> Result<SandwichReport> {
    let (lower, upper) = match (data.lower(), data.upper()) {
        (Some(l), Some(u)) => (l, u),
        _ => {
            return Err(Error::InvalidArgument(
                "sandwich check needs both barriers".into(),
            ))
        }
    };
    let gen = data.generator();
    let opts = ReflectOptions::default();
    let bar = reflect_with(data, &penalized_generator(gen, n, 0.0, Some(lower), None)?, None, Some(upper), opts)?;
    let under = reflect_with(data, &penalized_generator(gen, 0.0, n, None, Some(upper))?, Some(lower), None, opts)?;
    let diag = solve_penalized(data, PenaltyLevel::two_sided(n, n))?;
    let lower_gap = bar.y.max_excess_over(diag.y());
    let upper_gap = diag.y().max_excess_over(&under.y);
    Ok(SandwichReport {
        n,
        y_bar0: bar.y0(),
        y_diag0: diag.y0(),
        y_under0: under.y0(),
        lower_gap,
        upper_gap,
        holds: lower_gap <= SANDWICH_TOLERANCE && upper_gap <= SANDWICH_TOLERANCE,
        bar: bar.y,
        diag: diag.base.y,
        under: under.y,
    })
}

//! Reflected solutions by clamping after each implicit step, and the checks
//! that characterize them: flat-off (Skorokhod) conditions, jump formulas and
//! the brute-force optimal stopping representation.

use serde::{Deserialize, Serialize};

use crate::bsde::implicit_step;
use crate::error::{Error, Result};
use crate::lattice::{enumerate_stopping_rules, LatticeModel, NodeField, NodeIndex};
use crate::processes::{check_terminal, BoundProcess, Generator, ProblemData, Site};
use crate::solution::SolutionView;

/// Tolerance for the flat-off and jump-formula residuals.
pub const REFLECTION_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activity {
    Free,
    AtLower,
    AtUpper,
}

/// Result of one clamped step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReflectedStep {
    pub y: f64,
    pub dk_plus: f64,
    pub dk_minus: f64,
}

/// Implicit step followed by an up-clamp to `lower` and a down-clamp to `upper`.
pub fn reflected_step<G: Generator + ?Sized>(
    e: f64,
    z: f64,
    gen: &G,
    at: Site,
    dt: f64,
    dv: f64,
    lower: Option<f64>,
    upper: Option<f64>,
) -> Result<ReflectedStep> {
    if let (Some(l), Some(u)) = (lower, upper) {
        if l > u {
            return Err(Error::InfeasibleBarriers {
                node: at.node,
                lower: l,
                upper: u,
            });
        }
    }
    let free = implicit_step(e, z, gen, at, dt, dv)?;
    Ok(clamp(free, lower, upper))
}

fn clamp(free: f64, lower: Option<f64>, upper: Option<f64>) -> ReflectedStep {
    let c = lower.map_or(free, |l| free.max(l));
    let y = upper.map_or(c, |u| c.min(u));
    ReflectedStep {
        y,
        dk_plus: c - free,
        dk_minus: c - y,
    }
}

/// `Y`, `Z`, the reflection increments and where the constraint binds.
#[derive(Debug, Clone, PartialEq)]
pub struct ReflectedSolution {
    pub(crate) y: NodeField,
    pub(crate) z: NodeField,
    pub(crate) k_plus: NodeField,
    pub(crate) k_minus: NodeField,
    pub(crate) activity: Vec<Activity>,
    pub(crate) k_plus_total: f64,
    pub(crate) k_minus_total: f64,
}

impl ReflectedSolution {
    pub fn y0(&self) -> f64 {
        self.y[NodeIndex::ROOT]
    }

    /// Increments of the upward push `K` (or `R+`) at each interior node.
    pub fn k_plus(&self) -> &NodeField {
        &self.k_plus
    }

    /// Increments of the downward push `R-` at each interior node.
    pub fn k_minus(&self) -> &NodeField {
        &self.k_minus
    }

    pub fn activity(&self, node: NodeIndex) -> Activity {
        self.activity[node.flat()]
    }

    /// `E[K_T]`.
    pub fn k_plus_total(&self) -> f64 {
        self.k_plus_total
    }

    /// `E[R-_T]`.
    pub fn k_minus_total(&self) -> f64 {
        self.k_minus_total
    }
}

impl SolutionView for ReflectedSolution {
    fn y(&self) -> &NodeField {
        &self.y
    }

    fn z(&self) -> &NodeField {
        &self.z
    }

    fn push_up(&self) -> Option<&NodeField> {
        Some(&self.k_plus)
    }

    fn push_down(&self) -> Option<&NodeField> {
        Some(&self.k_minus)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReflectOptions {
    /// Require `L_N <= xi <= U_N` at every leaf.
    pub strict_terminal: bool,
}

/// Reflected solution between the barriers configured in `data`.
pub fn solve_rbsde(data: &ProblemData) -> Result<ReflectedSolution> {
    solve_rbsde_with(data, ReflectOptions::default())
}

pub fn solve_rbsde_with(data: &ProblemData, opts: ReflectOptions) -> Result<ReflectedSolution> {
    reflect_with(data, data.generator(), data.lower(), data.upper(), opts)
}

pub(crate) fn reflect_with<G: Generator + ?Sized>(
    data: &ProblemData,
    gen: &G,
    lower: Option<&BoundProcess>,
    upper: Option<&BoundProcess>,
    opts: ReflectOptions,
) -> Result<ReflectedSolution> {
    let lat = data.lattice();
    let n = lat.steps();
    let dt = lat.dt();
    let mut y = NodeField::zeros(n);
    let mut z = NodeField::zeros(n);
    let mut k_plus = NodeField::zeros(n);
    let mut k_minus = NodeField::zeros(n);
    let mut activity = vec![Activity::Free; lat.node_count()];
    y.level_mut(n).copy_from_slice(data.terminal());
    if opts.strict_terminal {
        check_terminal(n, data.terminal(), lower, upper)?;
    }
    for i in (0..n).rev() {
        let t = lat.time(i);
        let dv = data.dv(i);
        for j in 0..=i {
            let node = NodeIndex::new(i, j);
            let e = lat.expect(&y, node);
            let zi = lat.coefficient(&y, node);
            let step = reflected_step(
                e,
                zi,
                gen,
                Site::new(t, node),
                dt,
                dv,
                lower.map(|b| b.value(node)),
                upper.map(|b| b.value(node)),
            )?;
            y[node] = step.y;
            z[node] = zi;
            k_plus[node] = step.dk_plus;
            k_minus[node] = step.dk_minus;
            activity[node.flat()] = if step.dk_plus > 0.0 {
                Activity::AtLower
            } else if step.dk_minus > 0.0 {
                Activity::AtUpper
            } else {
                Activity::Free
            };
        }
    }
    let prob = lat.node_probabilities();
    Ok(ReflectedSolution {
        k_plus_total: expected_total(lat, &prob, &k_plus),
        k_minus_total: expected_total(lat, &prob, &k_minus),
        y,
        z,
        k_plus,
        k_minus,
        activity,
    })
}

/// `E[sum of increments over interior nodes]`.
pub(crate) fn expected_total(lat: &LatticeModel, prob: &NodeField, increments: &NodeField) -> f64 {
    lat.nodes()
        .filter(|n| n.step < lat.steps())
        .map(|n| prob[n] * increments[n])
        .sum()
}

/// Largest path sum of a node cost, by backward dynamic programming.
fn max_path_sum(lat: &LatticeModel, mut cost: impl FnMut(NodeIndex) -> f64) -> f64 {
    let n = lat.steps();
    let mut acc = vec![0.0f64; n + 1];
    for i in (0..n).rev() {
        for j in 0..=i {
            acc[j] = cost(NodeIndex::new(i, j)) + acc[j].max(acc[j + 1]);
        }
    }
    acc[0]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkorokhodReport {
    /// `max over paths of sum |Y - L| dK+`.
    pub lower_defect: f64,
    /// `max over paths of sum |U - Y| dK-`.
    pub upper_defect: f64,
    /// No node pushes in both directions.
    pub singularity_ok: bool,
}

impl SkorokhodReport {
    pub fn holds(&self) -> bool {
        self.singularity_ok
            && self.lower_defect <= REFLECTION_TOLERANCE
            && self.upper_defect <= REFLECTION_TOLERANCE
    }
}

/// Flat-off conditions: the push processes may only increase where `Y` sits
/// on the corresponding barrier.
///
/// Testing against `L` itself is enough: `dK > 0` forces `Y = L`, hence
/// `Y = L^` for every admissible `L^` between `L` and `Y`.
pub fn skorokhod_check<S: SolutionView + ?Sized>(sol: &S, data: &ProblemData) -> SkorokhodReport {
    let lat = data.lattice();
    let y = sol.y();
    let lower_defect = match (sol.push_up(), data.lower()) {
        (Some(k), Some(l)) => max_path_sum(lat, |n| (y[n] - l.value(n)).abs() * k[n]),
        (Some(k), None) => max_path_sum(lat, |n| k[n].abs()),
        _ => 0.0,
    };
    let upper_defect = match (sol.push_down(), data.upper()) {
        (Some(a), Some(u)) => max_path_sum(lat, |n| (u.value(n) - y[n]).abs() * a[n]),
        (Some(a), None) => max_path_sum(lat, |n| a[n].abs()),
        _ => 0.0,
    };
    let singularity_ok = match (sol.push_up(), sol.push_down()) {
        (Some(k), Some(a)) => lat
            .nodes()
            .filter(|n| n.step < lat.steps())
            .all(|n| !(k[n] > 0.0 && a[n] > 0.0)),
        _ => true,
    };
    SkorokhodReport {
        lower_defect,
        upper_defect,
        singularity_ok,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpReport {
    /// Grid steps `i` such that `V` or a barrier jumps at `t_i`.
    pub jump_steps: Vec<usize>,
    /// `max |dK+ - (L - y~)+|`.
    pub plus_residual: f64,
    /// `max |dK- - (max(y~, L) - U)+|`.
    pub minus_residual: f64,
    /// For `f = 0`: `max |Y - min(U, max(L, E[Y'] + dV))|`.
    pub envelope_residual: Option<f64>,
    pub holds: bool,
}

/// Recomputes the unreflected value `y~ = E_i[Y_{i+1}] + f dt + dV_i` at every
/// interior node and checks the push increments against the jump formulas.
pub fn jump_formula_check(sol: &ReflectedSolution, data: &ProblemData) -> Result<JumpReport> {
    let lat = data.lattice();
    let gen = data.generator();
    let dt = lat.dt();
    let zero_generator = gen.is_exogenous()
        && lat
            .grid()
            .times()
            .iter()
            .all(|&t| gen.value_at(t, 0.0, 0.0) == 0.0);
    let mut plus_residual = 0.0f64;
    let mut minus_residual = 0.0f64;
    let mut envelope = 0.0f64;
    for i in 0..lat.steps() {
        let t = lat.time(i);
        let dv = data.dv(i);
        for j in 0..=i {
            let node = NodeIndex::new(i, j);
            let e = lat.expect(&sol.y, node);
            let z = lat.coefficient(&sol.y, node);
            let free = implicit_step(e, z, gen, Site::new(t, node), dt, dv)?;
            let l = data.lower_at(node);
            let u = data.upper_at(node);
            let lifted = l.map_or(free, |l| free.max(l));
            let expect_plus = l.map_or(0.0, |l| (l - free).max(0.0));
            let expect_minus = u.map_or(0.0, |u| (lifted - u).max(0.0));
            plus_residual = plus_residual.max((sol.k_plus[node] - expect_plus).abs());
            minus_residual = minus_residual.max((sol.k_minus[node] - expect_minus).abs());
            if zero_generator {
                let target = l.map_or(e + dv, |l| l.max(e + dv));
                let target = u.map_or(target, |u| target.min(u));
                envelope = envelope.max((sol.y[node] - target).abs());
            }
        }
    }
    let mut jump_steps: Vec<usize> = data
        .driver()
        .map(|d| d.jump_steps().into_iter().map(|i| i + 1).collect())
        .unwrap_or_default();
    for b in [data.lower(), data.upper()].into_iter().flatten() {
        jump_steps.extend_from_slice(b.jump_steps());
    }
    jump_steps.sort_unstable();
    jump_steps.dedup();
    let envelope_residual = zero_generator.then_some(envelope);
    let holds = plus_residual <= REFLECTION_TOLERANCE
        && minus_residual <= REFLECTION_TOLERANCE
        && envelope_residual.map_or(true, |r| r <= REFLECTION_TOLERANCE);
    Ok(JumpReport {
        jump_steps,
        plus_residual,
        minus_residual,
        envelope_residual,
        holds,
    })
}

/// `max over stopping rules tau of E[sum_{i < tau} (f(t_i) dt + dV_i) + L_tau 1{tau < N} + xi 1{tau = N}]`,
/// by enumerating every adapted stopping rule on the path tree.
///
/// Only defined for one lower barrier and a generator that ignores `(y, z)`.
pub fn snell_bruteforce(data: &ProblemData) -> Result<f64> {
    let gen = data.generator();
    if !gen.is_exogenous() {
        return Err(Error::UnsupportedOracle(
            "generator depends on (y, z); the stopping representation needs an exogenous f".into(),
        ));
    }
    if data.upper().is_some() {
        return Err(Error::UnsupportedOracle(
            "stopping representation covers a single lower barrier".into(),
        ));
    }
    let lower = data.lower().ok_or_else(|| {
        Error::UnsupportedOracle("stopping representation needs a lower barrier".into())
    })?;
    let lat = data.lattice();
    let n = lat.steps();
    let rules = enumerate_stopping_rules(n)?;
    let dt = lat.dt();
    let running: Vec<f64> = (0..n)
        .map(|i| gen.value_at(lat.time(i), 0.0, 0.0) * dt + data.dv(i))
        .collect();

    // payoff[path][k] = accumulated running reward before k plus the stop payoff at k
    let paths = 1u64 << n;
    let payoff: Vec<Vec<f64>> = (0..paths)
        .map(|moves| {
            let nodes = lat.path_nodes(moves, n);
            let mut acc = 0.0;
            let mut row = Vec::with_capacity(n + 1);
            for (k, node) in nodes.iter().enumerate() {
                let stop = if k == n {
                    data.terminal()[node.up]
                } else {
                    lower.value(*node)
                };
                row.push(acc + stop);
                if k < n {
                    acc += running[k];
                }
            }
            row
        })
        .collect();
    let weight = 1.0 / paths as f64;
    let best = rules
        .iter()
        .map(|rule| {
            (0..paths)
                .map(|moves| payoff[moves as usize][rule.stopping_step(moves)])
                .sum::<f64>()
                * weight
        })
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bsde::solve_bsde;
    use crate::processes::{GeneratorSpec, ProblemSpec, ProcessSpec};

    #[test]
    fn clamp_examples() {
        let s = clamp(0.5, Some(0.7), None);
        assert_eq!((s.y, s.dk_minus), (0.7, 0.0));
        assert!((s.dk_plus - 0.2).abs() < 1e-15);
        let s = clamp(1.5, Some(0.0), Some(1.0));
        assert_eq!((s.y, s.dk_plus, s.dk_minus), (1.0, 0.0, 0.5));
        let s = clamp(0.5, Some(0.0), Some(1.0));
        assert_eq!((s.y, s.dk_plus, s.dk_minus), (0.5, 0.0, 0.0));
    }

    #[test]
    fn reflected_step_rejects_crossed_barriers() {
        let g = GeneratorSpec::zero();
        let r = reflected_step(0.0, 0.0, &g, Site::at_time(0.0), 0.1, 0.0, Some(1.0), Some(0.0));
        assert!(matches!(r, Err(Error::InfeasibleBarriers { .. })));
        let s = reflected_step(0.5, 0.0, &g, Site::at_time(0.0), 0.1, 0.0, Some(0.7), None).unwrap();
        assert_eq!(s.y, 0.7);
    }

    fn decaying_barrier(steps: usize) -> ProblemData {
        ProblemSpec::new(1.0, steps, GeneratorSpec::zero(), ProcessSpec::constant(0.0))
            .with_lower(ProcessSpec::expr("1.0 - t"))
            .build()
            .unwrap()
    }

    #[test]
    fn no_barriers_matches_bsde() {
        let data = ProblemSpec::new(1.0, 12, GeneratorSpec::monotone_poly(0.2, 0.0), ProcessSpec::expr("B"))
            .build()
            .unwrap();
        let r = solve_rbsde(&data).unwrap();
        let b = solve_bsde(&data).unwrap();
        assert_eq!(&r.y, b.y());
        assert_eq!(r.k_plus_total(), 0.0);
    }

    #[test]
    fn stop_immediately_on_decaying_barrier() {
        let data = decaying_barrier(2);
        assert_eq!(solve_rbsde(&data).unwrap().y0(), 1.0);
        assert_eq!(snell_bruteforce(&data).unwrap(), 1.0);
    }

    #[test]
    fn snell_matches_dp_for_abs_terminal() {
        let data = ProblemSpec::new(1.0, 3, GeneratorSpec::zero(), ProcessSpec::expr("abs(B)"))
            .with_lower(ProcessSpec::constant(0.0))
            .build()
            .unwrap();
        let dp = solve_rbsde(&data).unwrap().y0();
        assert!((snell_bruteforce(&data).unwrap() - dp).abs() < 1e-12);
    }

    #[test]
    fn snell_with_inactive_barrier_is_plain_expectation() {
        let data = ProblemSpec::new(1.0, 4, GeneratorSpec::linear(0.0, 0.0, 0.3), ProcessSpec::expr("B^2"))
            .with_lower(ProcessSpec::constant(-1e6))
            .build()
            .unwrap();
        assert!((snell_bruteforce(&data).unwrap() - 1.3).abs() < 1e-12);
    }

    #[test]
    fn snell_rejects_unsupported_instances() {
        let data = ProblemSpec::new(1.0, 2, GeneratorSpec::linear(-1.0, 0.0, 0.0), ProcessSpec::constant(0.0))
            .with_lower(ProcessSpec::constant(0.0))
            .build()
            .unwrap();
        assert!(matches!(snell_bruteforce(&data), Err(Error::UnsupportedOracle(_))));
        let deep = decaying_barrier(6);
        assert!(matches!(snell_bruteforce(&deep), Err(Error::Capacity { .. })));
    }

    #[test]
    fn oracle_satisfies_flat_off_and_barriers() {
        let data = ProblemSpec::new(1.0, 30, GeneratorSpec::linear(-0.05, 0.0, 0.0), ProcessSpec::expr("max(1.0 - exp(0.2*B), 0.0)"))
            .with_lower(ProcessSpec::expr("max(1.0 - exp(0.2*B), 0.0)"))
            .with_upper(ProcessSpec::expr("max(1.0 - exp(0.2*B), 0.0) + 0.05"))
            .build()
            .unwrap();
        let sol = solve_rbsde(&data).unwrap();
        let rep = skorokhod_check(&sol, &data);
        assert!(rep.holds(), "{rep:?}");
        for node in data.lattice().nodes().filter(|n| n.step < 30) {
            let (l, u) = (data.lower_at(node).unwrap(), data.upper_at(node).unwrap());
            assert!(l <= sol.y[node] && sol.y[node] <= u);
            match sol.activity(node) {
                Activity::AtLower => assert_eq!(sol.y[node], l),
                Activity::AtUpper => assert_eq!(sol.y[node], u),
                Activity::Free => assert_eq!(sol.k_plus[node] + sol.k_minus[node], 0.0),
            }
        }
        assert!(sol.k_plus_total() > 0.0 && sol.k_minus_total() > 0.0);
    }

    #[test]
    fn injected_push_at_free_node_is_reported() {
        let data = decaying_barrier(4);
        let mut sol = solve_rbsde(&data).unwrap();
        let node = NodeIndex::new(3, 1);
        sol.k_plus[node] += 0.1;
        sol.y[node] += 0.5;
        let rep = skorokhod_check(&sol, &data);
        assert!(rep.lower_defect > 0.0);
        assert!(!rep.holds());
    }

    #[test]
    fn envelope_relation_at_driver_jump() {
        let data = ProblemSpec::new(1.0, 8, GeneratorSpec::zero(), ProcessSpec::expr("max(B, 0.0)"))
            .with_driver(ProcessSpec::deterministic(vec![(0.0, 0.0)], vec![(0.5, -0.3)]))
            .with_lower(ProcessSpec::constant(0.1))
            .build()
            .unwrap();
        let sol = solve_rbsde(&data).unwrap();
        let rep = jump_formula_check(&sol, &data).unwrap();
        assert_eq!(rep.jump_steps, vec![4]);
        assert!(rep.holds, "{rep:?}");
        assert!(rep.envelope_residual.unwrap() <= 1e-12);
    }

    #[test]
    fn upper_barrier_jump_formula() {
        let data = ProblemSpec::new(1.0, 10, GeneratorSpec::linear(-0.1, 0.0, 0.0), ProcessSpec::expr("B"))
            .with_lower(ProcessSpec::constant(-0.5))
            .with_upper(ProcessSpec::deterministic(vec![(0.0, 0.3)], vec![(0.6, 0.4)]))
            .build()
            .unwrap();
        let sol = solve_rbsde(&data).unwrap();
        let rep = jump_formula_check(&sol, &data).unwrap();
        assert_eq!(rep.jump_steps, vec![6]);
        assert!(rep.holds && rep.envelope_residual.is_none(), "{rep:?}");
        assert!(sol.k_minus_total() > 0.0);
    }

    #[test]
    fn strict_terminal_mode() {
        let data = ProblemSpec::new(1.0, 4, GeneratorSpec::zero(), ProcessSpec::expr("B"))
            .with_lower(ProcessSpec::constant(0.0))
            .build()
            .unwrap();
        assert!(solve_rbsde(&data).is_ok());
        let strict = ReflectOptions { strict_terminal: true };
        assert!(matches!(
            solve_rbsde_with(&data, strict),
            Err(Error::TerminalOutsideBarriers { .. })
        ));
    }
}

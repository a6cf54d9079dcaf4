//! Norms of lattice solutions, the class-(D) norm, the discrete convexity gap
//! of `|x|^p`, feasibility between two barriers and a priori estimate audits.
//!
//! Path expectations are exact (all `2^N` paths) up to [`EXACT_PATH_DEPTH`]
//! steps and seeded Monte Carlo beyond; reports carry an `exact` flag.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{LatticeModel, NodeField, NodeIndex};
use crate::processes::{sign_hat, ProblemData, ProcessRole, ProcessSpec};
use crate::solution::SolutionView;

pub const EXACT_PATH_DEPTH: usize = 12;
pub const MONTE_CARLO_PATHS: usize = 4096;
const MONTE_CARLO_SEED: u64 = 0x00c0_ffee_d00d;

/// Slack for the ratio audit: later members may exceed the first ratio by 1%.
pub const AUDIT_SLACK: f64 = 1.01;

/// `E[g(path)]` over lattice paths, and whether the value is exact.
pub fn path_expectation(lat: &LatticeModel, mut g: impl FnMut(&[NodeIndex]) -> f64) -> (f64, bool) {
    let n = lat.steps();
    let mut path = vec![NodeIndex::ROOT; n + 1];
    if n <= EXACT_PATH_DEPTH {
        let count = 1u64 << n;
        let mut sum = 0.0;
        for moves in 0..count {
            fill_path(&mut path, |k| moves >> k & 1 == 1);
            sum += g(&path);
        }
        (sum / count as f64, true)
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(MONTE_CARLO_SEED);
        let mut sum = 0.0;
        for _ in 0..MONTE_CARLO_PATHS {
            let downs: Vec<bool> = (0..n).map(|_| rng.random()).collect();
            fill_path(&mut path, |k| downs[k]);
            sum += g(&path);
        }
        (sum / MONTE_CARLO_PATHS as f64, false)
    }
}

fn fill_path(path: &mut [NodeIndex], down: impl Fn(usize) -> bool) {
    let mut node = NodeIndex::ROOT;
    path[0] = node;
    for k in 1..path.len() {
        node = if down(k - 1) {
            node.down_child()
        } else {
            node.up_child()
        };
        path[k] = node;
    }
}

fn check_exponent(p: f64) -> Result<()> {
    if !(p > 0.0 && p.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "norm exponent must be positive, got {p}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormReport {
    pub p: f64,
    /// `E[sup_i |Y_i|^p]`.
    pub sup_p: f64,
    /// `E[(sum Z_i^2 dt)^{p/2}]`.
    pub m_p: f64,
    /// `E[(sum |dK_i| + |dA_i|)^p]`.
    pub var_p: f64,
    /// `sup over stopping times of E|Y_tau|`.
    pub class_d: f64,
    /// False when path expectations were estimated by Monte Carlo.
    pub exact: bool,
}

pub fn compute_norms<S: SolutionView + ?Sized>(sol: &S, data: &ProblemData, p: f64) -> Result<NormReport> {
    check_exponent(p)?;
    let lat = data.lattice();
    let n = lat.steps();
    let dt = lat.dt();
    let (y, z) = (sol.y(), sol.z());
    let (sup_p, exact) = path_expectation(lat, |path| {
        path.iter().map(|&v| y[v].abs()).fold(0.0, f64::max).powf(p)
    });
    let (m_p, _) = path_expectation(lat, |path| {
        path[..n].iter().map(|&v| z[v] * z[v] * dt).sum::<f64>().powf(p / 2.0)
    });
    let (var_p, _) = path_expectation(lat, |path| {
        let up = sol.push_up().map_or(0.0, |k| path[..n].iter().map(|&v| k[v].abs()).sum());
        let down = sol.push_down().map_or(0.0, |a| path[..n].iter().map(|&v| a[v].abs()).sum());
        (up + down).powf(p)
    });
    Ok(NormReport {
        p,
        sup_p,
        m_p,
        var_p,
        class_d: class_d_norm(y, lat),
        exact,
    })
}

/// `sup over stopping times of E|Y_tau|`: the optimal stopping value of `|Y|`,
/// `W_N = |Y_N|`, `W_i = max(|Y_i|, E_i[W_{i+1}])`.
pub fn class_d_norm(y: &NodeField, lat: &LatticeModel) -> f64 {
    let n = lat.steps();
    let mut w: Vec<f64> = y.level(n).iter().map(|v| v.abs()).collect();
    for i in (0..n).rev() {
        let level = y.level(i);
        for j in 0..=i {
            w[j] = level[j].abs().max(0.5 * (w[j] + w[j + 1]));
        }
    }
    w[0]
}

/// `r_i = |x_{i+1}|^p - |x_i|^p - p |x_i|^{p-1} sgn(x_i) (x_{i+1} - x_i)`, the
/// convexity gap of `|x|^p` along a path. Each entry is nonnegative; it lumps
/// together the jump, local time and quadratic variation terms of the
/// continuous-time formula.
pub fn convexity_residual(path: &[f64], p: f64) -> Result<Vec<f64>> {
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "convexity residual needs p >= 1, got {p}"
        )));
    }
    Ok(path
        .windows(2)
        .map(|w| {
            let (x, x1) = (w[0], w[1]);
            let slope = if p == 1.0 {
                sign_hat(x)
            } else {
                p * x.abs().powf(p - 1.0) * sign_hat(x)
            };
            x1.abs().powf(p) - x.abs().powf(p) - slope * (x1 - x)
        })
        .collect())
}

/// Norms of a candidate process `X` split by its Doob decomposition `X = X_0 + M + A`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WitnessNorms {
    /// `E[sup_i |X_i|^p]`.
    pub sup_p: f64,
    /// `E[(sum (dM_i)^2)^{p/2}]`.
    pub martingale_p: f64,
    /// `E[(sum |dA_i|)^p]`.
    pub variation_p: f64,
    /// `E[(sum |f(t_i, X_i, 0)| dt)^p]`.
    pub generator_p: f64,
    pub exact: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MokobodzkiReport {
    /// `L <= U` at every node.
    pub feasible: bool,
    pub violations: usize,
    pub first_violation: Option<NodeIndex>,
    /// The witness lies between the barriers at every node.
    pub witness_between: bool,
    pub witness: Option<WitnessNorms>,
    pub note: String,
}

/// Feasibility of the two-barrier problem and the norms of a process between
/// the barriers (the candidate, or `(L + U) / 2`).
pub fn mokobodzki_check(data: &ProblemData, candidate: Option<&ProcessSpec>) -> Result<MokobodzkiReport> {
    let (lower, upper) = match (data.lower(), data.upper()) {
        (Some(l), Some(u)) => (l, u),
        _ => {
            return Err(Error::InvalidArgument(
                "feasibility check needs both barriers".into(),
            ))
        }
    };
    let lat = data.lattice();
    let bad = data.barrier_violations();
    let note = "every adapted lattice process is a semimartingale, so feasibility reduces to L <= U nodewise".to_string();
    if !bad.is_empty() {
        return Ok(MokobodzkiReport {
            feasible: false,
            violations: bad.len(),
            first_violation: bad.first().copied(),
            witness_between: false,
            witness: None,
            note,
        });
    }
    let x = match candidate {
        Some(spec) => spec.bind(lat, ProcessRole::Witness)?.values().clone(),
        None => NodeField::from_fn(lat.steps(), |n| 0.5 * (lower.value(n) + upper.value(n))),
    };
    let witness_between = lat
        .nodes()
        .all(|n| lower.value(n) <= x[n] && x[n] <= upper.value(n));
    Ok(MokobodzkiReport {
        feasible: true,
        violations: 0,
        first_violation: None,
        witness_between,
        witness: Some(witness_norms(&x, data)),
        note,
    })
}

fn witness_norms(x: &NodeField, data: &ProblemData) -> WitnessNorms {
    let lat = data.lattice();
    let n = lat.steps();
    let dt = lat.dt();
    let p = data.p();
    let gen = data.generator();
    let (sup_p, exact) = path_expectation(lat, |path| {
        path.iter().map(|&v| x[v].abs()).fold(0.0, f64::max).powf(p)
    });
    let (martingale_p, _) = path_expectation(lat, |path| {
        (0..n)
            .map(|k| {
                let dm = x[path[k + 1]] - lat.expect(x, path[k]);
                dm * dm
            })
            .sum::<f64>()
            .powf(p / 2.0)
    });
    let (variation_p, _) = path_expectation(lat, |path| {
        (0..n)
            .map(|k| (lat.expect(x, path[k]) - x[path[k]]).abs())
            .sum::<f64>()
            .powf(p)
    });
    let (generator_p, _) = path_expectation(lat, |path| {
        (0..n)
            .map(|k| gen.value_at(lat.time(k), x[path[k]], 0.0).abs() * dt)
            .sum::<f64>()
            .powf(p)
    });
    WitnessNorms {
        sup_p,
        martingale_p,
        variation_p,
        generator_p,
        exact,
    }
}

/// One family member of [`apriori_audit`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditMember {
    pub n: f64,
    pub m: f64,
    /// `E[sup e^{apt} |Y|^p] + E[(sum e^{2as} Z^2 dt)^{p/2}]`.
    pub lhs: f64,
    /// `E[e^{apT} |xi|^p + (sum e^{as} f_s dt)^p + (sum e^{as} |dV|)^p]` with
    /// `f_s = |f(s, 0, 0)| + n L_s^+ + m U_s^-`.
    pub rhs: f64,
    pub ratio: f64,
    /// `E[(sum |dK| + |dA|)^p]`.
    pub push_p: f64,
    pub push_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub p: f64,
    pub a: f64,
    pub members: Vec<AuditMember>,
    pub first_ratio: f64,
    pub max_ratio: f64,
    pub first_push_ratio: f64,
    pub max_push_ratio: f64,
    /// `max_ratio <= 1.01 first_ratio` and the same for the push ratios.
    pub uniform: bool,
    pub exact: bool,
}

fn ratio(num: f64, den: f64) -> f64 {
    if num == 0.0 {
        0.0
    } else if den == 0.0 {
        f64::INFINITY
    } else {
        num / den
    }
}

/// Uniformity audit of the a priori estimate over a family of solutions.
///
/// Each member's data functional uses the bound `y^ f_n(t, y, z) <= f_t + mu |y| + lambda |z|`
/// of its own (possibly penalized) generator, where `f_t = |f(t, 0, 0)| + n L_t^+ + m U_t^-`.
/// The audit records the implied constant `lhs / rhs` per member and checks that no
/// member exceeds the first member's constant by more than 1%.
pub fn apriori_audit(family: &[&dyn SolutionView], data: &ProblemData, p: f64, a: f64) -> Result<AuditReport> {
    let gen = data.generator();
    if !(p > 1.0 && p.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "a priori audit needs p > 1, got {p}"
        )));
    }
    let threshold = gen.mu() + gen.lambda().powi(2) / (p - 1.0).min(1.0);
    if !(a >= threshold) {
        return Err(Error::InvalidArgument(format!(
            "a priori audit needs a >= mu + lambda^2 / min(1, p - 1) = {threshold}, got {a}"
        )));
    }
    let lat = data.lattice();
    let steps = lat.steps();
    let dt = lat.dt();
    let horizon = lat.grid().horizon();
    let mut exact = true;
    let mut members = Vec::with_capacity(family.len());
    for sol in family {
        let (n, m) = sol.penalty().unwrap_or((0.0, 0.0));
        let (y, z) = (sol.y(), sol.z());
        let (sup_part, ex) = path_expectation(lat, |path| {
            path.iter()
                .enumerate()
                .map(|(k, &v)| (a * p * lat.time(k)).exp() * y[v].abs().powf(p))
                .fold(0.0, f64::max)
        });
        exact &= ex;
        let (z_part, _) = path_expectation(lat, |path| {
            (0..steps)
                .map(|k| (2.0 * a * lat.time(k)).exp() * z[path[k]].powi(2) * dt)
                .sum::<f64>()
                .powf(p / 2.0)
        });
        let (rhs, _) = path_expectation(lat, |path| {
            let xi = data.terminal()[path[steps].up].abs().powf(p) * (a * p * horizon).exp();
            let drive: f64 = (0..steps)
                .map(|k| {
                    let node = path[k];
                    let t = lat.time(k);
                    let ft = gen.value_at(t, 0.0, 0.0).abs()
                        + n * data.lower_at(node).map_or(0.0, |l| l.max(0.0))
                        + m * data.upper_at(node).map_or(0.0, |u| (-u).max(0.0));
                    (a * t).exp() * ft * dt
                })
                .sum();
            let dv: f64 = (0..steps).map(|k| (a * lat.time(k)).exp() * data.dv(k).abs()).sum();
            xi + drive.powf(p) + dv.powf(p)
        });
        let (push_p, _) = path_expectation(lat, |path| {
            let up = sol.push_up().map_or(0.0, |k| path[..steps].iter().map(|&v| k[v].abs()).sum());
            let down = sol.push_down().map_or(0.0, |d| path[..steps].iter().map(|&v| d[v].abs()).sum());
            (up + down).powf(p)
        });
        let lhs = sup_part + z_part;
        members.push(AuditMember {
            n,
            m,
            lhs,
            rhs,
            ratio: ratio(lhs, rhs),
            push_p,
            push_ratio: ratio(push_p, rhs),
        });
    }
    let first_ratio = members.first().map_or(0.0, |m| m.ratio);
    let first_push_ratio = members.first().map_or(0.0, |m| m.push_ratio);
    let max_ratio = members.iter().map(|m| m.ratio).fold(first_ratio, f64::max);
    let max_push_ratio = members.iter().map(|m| m.push_ratio).fold(first_push_ratio, f64::max);
    let uniform = max_ratio <= AUDIT_SLACK * first_ratio && max_push_ratio <= AUDIT_SLACK * first_push_ratio;
    Ok(AuditReport {
        p,
        a,
        members,
        first_ratio,
        max_ratio,
        first_push_ratio,
        max_push_ratio,
        uniform,
        exact,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bsde::solve_bsde;
    use crate::lattice::{build_lattice, enumerate_stopping_rules};
    use crate::processes::{GeneratorSpec, ProblemSpec};
    use crate::solution::PenaltyLevel;
    use proptest::prelude::*;

    fn brownian(steps: usize) -> (LatticeModel, NodeField) {
        let lat = build_lattice(1.0, steps).unwrap();
        let y = NodeField::from_fn(steps, |n| lat.brownian(n));
        (lat, y)
    }

    /// `max over rules of E|Y_tau|` by enumeration.
    fn class_d_by_enumeration(lat: &LatticeModel, y: &NodeField) -> f64 {
        let n = lat.steps();
        enumerate_stopping_rules(n)
            .unwrap()
            .iter()
            .map(|rule| {
                (0..1u64 << n)
                    .map(|moves| y[lat.path_nodes(moves, n)[rule.stopping_step(moves)]].abs())
                    .sum::<f64>()
                    / (1u64 << n) as f64
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    #[test]
    fn norms_of_constant_solution() {
        let data = ProblemSpec::new(1.0, 6, GeneratorSpec::zero(), ProcessSpec::constant(-0.5))
            .build()
            .unwrap();
        let sol = solve_bsde(&data).unwrap();
        let r = compute_norms(&sol, &data, 3.0).unwrap();
        assert!((r.sup_p - 0.125).abs() < 1e-15);
        assert_eq!((r.m_p, r.var_p, r.class_d), (0.0, 0.0, 0.5));
        assert!(r.exact);
    }

    #[test]
    fn norms_of_one_step_brownian() {
        let data = ProblemSpec::new(1.0, 1, GeneratorSpec::zero(), ProcessSpec::expr("B"))
            .build()
            .unwrap();
        let sol = solve_bsde(&data).unwrap();
        let r = compute_norms(&sol, &data, 1.0).unwrap();
        assert_eq!((r.class_d, r.sup_p), (1.0, 1.0));
    }

    #[test]
    fn class_d_matches_enumeration() {
        for steps in 1..=4 {
            let (lat, y) = brownian(steps);
            assert!((class_d_norm(&y, &lat) - class_d_by_enumeration(&lat, &y)).abs() < 1e-12);
        }
        let lat = build_lattice(1.0, 4).unwrap();
        let y = NodeField::from_fn(4, |n| (lat.brownian(n) - 0.3).powi(3) - lat.time(n.step));
        assert!((class_d_norm(&y, &lat) - class_d_by_enumeration(&lat, &y)).abs() < 1e-12);
    }

    #[test]
    fn class_d_of_nonnegative_supermartingale_is_initial_value() {
        let data = ProblemSpec::new(1.0, 8, GeneratorSpec::linear(0.0, 0.0, 0.3), ProcessSpec::expr("exp(B)"))
            .build()
            .unwrap();
        let sol = solve_bsde(&data).unwrap();
        let w = class_d_norm(&sol.y, data.lattice());
        assert!((w - sol.y0()).abs() < 1e-15, "{w} vs {}", sol.y0());
        let lat = build_lattice(1.0, 3).unwrap();
        assert_eq!(class_d_norm(&NodeField::zeros(3), &lat), 0.0);
    }

    #[test]
    fn monte_carlo_beyond_exact_depth() {
        let data = ProblemSpec::new(1.0, 40, GeneratorSpec::zero(), ProcessSpec::expr("B"))
            .build()
            .unwrap();
        let sol = solve_bsde(&data).unwrap();
        let r = compute_norms(&sol, &data, 2.0).unwrap();
        assert!(!r.exact);
        // Z = 1 on every path, so the quadratic sum is T exactly.
        assert!((r.m_p - 1.0).abs() < 1e-12);
        assert_eq!(r, compute_norms(&sol, &data, 2.0).unwrap());
    }

    #[test]
    fn residual_examples() {
        let r = convexity_residual(&[1.0, 3.0, -0.5], 2.0).unwrap();
        assert!((r[0] - 4.0).abs() < 1e-15 && (r[1] - 12.25).abs() < 1e-15);
        assert_eq!(convexity_residual(&[0.5, -0.5], 1.0).unwrap(), vec![1.0]);
        assert!(convexity_residual(&[0.0, 1.0], 0.5).is_err());
    }

    proptest! {
        #[test]
        fn residual_is_nonnegative(path in prop::collection::vec(-3.0f64..3.0, 2..30), p in 1.0f64..2.0) {
            for r in convexity_residual(&path, p).unwrap() {
                prop_assert!(r >= -1e-12);
            }
        }

        #[test]
        fn norms_are_monotone(scale in 0.0f64..1.0, shift in -1.0f64..1.0) {
            let data = ProblemSpec::new(1.0, 6, GeneratorSpec::zero(), ProcessSpec::expr(format!("({shift:?}) + B")))
                .build()
                .unwrap();
            let big = solve_bsde(&data).unwrap();
            let mut small = big.clone();
            small.y = big.y.map(|v| v * scale);
            small.z = big.z.map(|v| v * scale);
            let (a, b) = (compute_norms(&small, &data, 1.5).unwrap(), compute_norms(&big, &data, 1.5).unwrap());
            prop_assert!(a.sup_p <= b.sup_p && a.m_p <= b.m_p && a.class_d <= b.class_d);
        }
    }

    #[test]
    fn feasibility_examples() {
        let data = ProblemSpec::new(1.0, 5, GeneratorSpec::zero(), ProcessSpec::constant(0.5))
            .with_lower(ProcessSpec::constant(0.0))
            .with_upper(ProcessSpec::constant(1.0))
            .build()
            .unwrap();
        let r = mokobodzki_check(&data, None).unwrap();
        assert!(r.feasible && r.witness_between);
        let w = r.witness.unwrap();
        assert_eq!((w.variation_p, w.martingale_p), (0.0, 0.0));
        assert!((w.sup_p - 0.25).abs() < 1e-15);

        let crossed = ProblemSpec::new(1.0, 5, GeneratorSpec::zero(), ProcessSpec::constant(0.5))
            .with_lower(ProcessSpec::expr("max(B, 0.0)"))
            .with_upper(ProcessSpec::constant(1.0))
            .build_unordered()
            .unwrap();
        let r = mokobodzki_check(&crossed, None).unwrap();
        assert!(!r.feasible && r.violations > 0 && r.witness.is_none());

        let outside = mokobodzki_check(&data, Some(&ProcessSpec::constant(2.0))).unwrap();
        assert!(outside.feasible && !outside.witness_between);
        let only_lower = ProblemSpec::new(1.0, 2, GeneratorSpec::zero(), ProcessSpec::constant(0.0))
            .with_lower(ProcessSpec::constant(0.0))
            .build()
            .unwrap();
        assert!(mokobodzki_check(&only_lower, None).is_err());
    }

    #[test]
    fn audit_of_constant_family() {
        let data = ProblemSpec::new(1.0, 4, GeneratorSpec::zero(), ProcessSpec::constant(2.0))
            .build()
            .unwrap();
        let sol = solve_bsde(&data).unwrap();
        let r = apriori_audit(&[&sol], &data, 2.0, 0.0).unwrap();
        assert!(r.uniform && r.first_ratio.is_finite());
        assert!((r.first_ratio - 1.0).abs() < 1e-12);
        assert!(apriori_audit(&[&sol], &data, 1.0, 0.0).is_err());
        let lin = ProblemSpec::new(1.0, 4, GeneratorSpec::linear(0.5, 1.0, 0.0), ProcessSpec::constant(2.0))
            .build()
            .unwrap();
        assert!(apriori_audit(&[&sol], &lin, 2.0, 1.0).is_err());
        assert!(apriori_audit(&[&sol], &lin, 2.0, 1.5).is_ok());
    }

    #[test]
    fn audit_over_penalization_family() {
        let payoff = "max(1.0 - exp(0.2*B + 0.03*t), 0.0)";
        let data = ProblemSpec::new(1.0, 10, GeneratorSpec::linear(-0.05, 0.0, 0.0), ProcessSpec::expr(payoff))
            .with_lower(ProcessSpec::expr(payoff))
            .build()
            .unwrap();
        let sols: Vec<_> = [10.0, 100.0, 1000.0]
            .iter()
            .map(|&n| crate::penalty::solve_penalized(&data, PenaltyLevel::one_sided(n)).unwrap())
            .collect();
        let family: Vec<&dyn SolutionView> = sols.iter().map(|s| s as &dyn SolutionView).collect();
        let r = apriori_audit(&family, &data, 2.0, 0.0).unwrap();
        assert_eq!(r.members.len(), 3);
        assert!(r.uniform, "{r:?}");
    }
}

//! Randomized instance generators and the invariant battery run by `suite` mode.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bsde::{check_comparison, implicit_step, solve_bsde, BsdeSolution};
use crate::diagnostics::{convexity_residual, mokobodzki_check, path_expectation};
use crate::error::Result;
use crate::lattice::{LatticeModel, NodeField, NodeIndex};
use crate::penalty::{sandwich_check, solve_penalized};
use crate::processes::{
    generator_structure_check, GeneratorForm, GeneratorSpec, ProblemData, ProblemSpec,
    ProcessSpec, SampleBox, Site, TimeFunction,
};
use crate::reflect::{jump_formula_check, skorokhod_check, snell_bruteforce, solve_rbsde};
use crate::solution::{PenaltyLevel, SolutionView};

pub const COMPARISON_STEPS: usize = 20;
pub const COMPARISON_PAIRS: usize = 100;
pub const SNELL_INSTANCES: usize = 10;
pub const RESIDUAL_PATHS: usize = 1000;
pub const RESIDUAL_EXPONENTS: [f64; 4] = [1.0, 1.25, 1.5, 2.0];

/// Which barriers a random instance carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BarrierSet {
    None,
    Lower,
    Both,
}

/// Outcome of one invariant of the battery.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub passed: bool,
    /// The invariant's worst observed value (its meaning is in `detail`).
    pub worst: f64,
    pub detail: String,
}

impl Verdict {
    fn new(name: &str, passed: bool, worst: f64, detail: impl Into<String>) -> Self {
        Self {
            name: name.to_string(),
            passed,
            worst,
            detail: detail.into(),
        }
    }
}

fn num(x: f64) -> String {
    format!("({x:?})")
}

fn uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

/// Two problems on the same `steps`-step grid over `[0, 1]` whose data are
/// ordered (terminal values, generators, driver increments and barriers), with
/// `lambda sqrt(dt) <= 1` so that the lattice scheme preserves order.
pub fn random_ordered_pair(rng: &mut impl Rng, barriers: BarrierSet, steps: usize) -> (ProblemSpec, ProblemSpec) {
    let lambda_cap = (steps as f64).sqrt().min(2.0);
    let shift_c = uniform(rng, 0.0, 0.5);
    let (gen1, gen2) = if rng.random_bool(0.5) {
        let (a, b, c) = (uniform(rng, -1.0, 1.0), uniform(rng, -lambda_cap, lambda_cap), uniform(rng, -1.0, 1.0));
        (GeneratorSpec::linear(a, b, c), GeneratorSpec::linear(a, b, c + shift_c))
    } else {
        let (mu, c) = (uniform(rng, -1.0, 1.0), uniform(rng, -1.0, 1.0));
        (GeneratorSpec::monotone_poly(mu, c), GeneratorSpec::monotone_poly(mu, c + shift_c))
    };

    let (a, b, c) = (uniform(rng, -1.0, 1.0), uniform(rng, -1.0, 1.0), uniform(rng, -0.5, 0.5));
    let xi1 = format!("{}*B + {}*max(B, 0.0) + {}", num(a), num(b), num(c));
    let xi2 = format!("{xi1} + {}", num(uniform(rng, 0.0, 0.5)));
    let mut p1 = ProblemSpec::new(1.0, steps, gen1, ProcessSpec::expr(xi1));
    let mut p2 = ProblemSpec::new(1.0, steps, gen2, ProcessSpec::expr(xi2));

    if rng.random_bool(0.5) {
        let slope = uniform(rng, -0.5, 0.5);
        let jump_time = rng.random_range(1..=steps) as f64 / steps as f64;
        let jump = uniform(rng, -0.3, 0.3);
        let (ds, dj) = (uniform(rng, 0.0, 0.3), uniform(rng, 0.0, 0.2));
        p1 = p1.with_driver(ProcessSpec::deterministic(vec![(0.0, 0.0), (1.0, slope)], vec![(jump_time, jump)]));
        p2 = p2.with_driver(ProcessSpec::deterministic(vec![(0.0, 0.0), (1.0, slope + ds)], vec![(jump_time, jump + dj)]));
    }

    if barriers != BarrierSet::None {
        let (la, lb, lc) = (uniform(rng, -0.5, 0.5), uniform(rng, -0.5, 0.5), uniform(rng, -1.0, 0.3));
        let lower1 = format!("{}*B + {}*t + {}", num(la), num(lb), num(lc));
        let dl = uniform(rng, 0.0, 0.3);
        p1 = p1.with_lower(ProcessSpec::expr(lower1.clone()));
        p2 = p2.with_lower(ProcessSpec::expr(format!("{lower1} + {}", num(dl))));
        if barriers == BarrierSet::Both {
            // width >= 0.3 >= dl keeps L2 <= U2
            let width = uniform(rng, 0.3, 1.0);
            let du = uniform(rng, 0.0, 0.3);
            p1 = p1.with_upper(ProcessSpec::expr(format!("{lower1} + {}", num(width))));
            p2 = p2.with_upper(ProcessSpec::expr(format!("{lower1} + {}", num(width + du))));
        }
    }
    (p1, p2)
}

/// A one-lower-barrier problem on `[0, 1]` with an exogenous generator.
pub fn random_snell_instance(rng: &mut impl Rng, steps: usize) -> ProblemSpec {
    let gen = GeneratorSpec::new(GeneratorForm::Linear {
        a: 0.0,
        b: 0.0,
        c: TimeFunction::Knots(vec![(0.0, uniform(rng, -0.5, 0.5)), (1.0, uniform(rng, -0.5, 0.5))]),
    });
    let xi = format!("{}*B + {}*abs(B)", num(uniform(rng, -1.0, 1.0)), num(uniform(rng, 0.0, 1.0)));
    let lower = format!(
        "{} + {}*B - {}*t",
        num(uniform(rng, -0.2, 0.6)),
        num(uniform(rng, -1.0, 1.0)),
        num(uniform(rng, 0.0, 0.5))
    );
    let mut spec = ProblemSpec::new(1.0, steps, gen, ProcessSpec::expr(xi)).with_lower(ProcessSpec::expr(lower));
    if rng.random_bool(0.5) {
        let jump_time = rng.random_range(1..=steps) as f64 / steps as f64;
        spec = spec.with_driver(ProcessSpec::deterministic(
            vec![(0.0, 0.0), (1.0, uniform(rng, -0.3, 0.3))],
            vec![(jump_time, uniform(rng, -0.3, 0.3))],
        ));
    }
    spec
}

/// Solution of either kind, for comparisons.
pub enum AnySolution {
    Plain(BsdeSolution),
    Reflected(crate::reflect::ReflectedSolution),
}

impl AnySolution {
    pub fn view(&self) -> &dyn SolutionView {
        match self {
            AnySolution::Plain(s) => s,
            AnySolution::Reflected(s) => s,
        }
    }
}

/// Reflected solve when barriers are configured, plain solve otherwise.
pub fn solve_auto(data: &ProblemData) -> Result<AnySolution> {
    if data.lower().is_some() || data.upper().is_some() {
        Ok(AnySolution::Reflected(solve_rbsde(data)?))
    } else {
        Ok(AnySolution::Plain(solve_bsde(data)?))
    }
}

/// Counts over a batch of comparison pairs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTally {
    pub pairs: usize,
    pub failures: usize,
    pub not_applicable: usize,
    pub worst_gap: f64,
}

pub fn comparison_batch(rng: &mut impl Rng, barriers: BarrierSet, pairs: usize, steps: usize) -> Result<ComparisonTally> {
    let mut tally = ComparisonTally {
        worst_gap: f64::NEG_INFINITY,
        ..Default::default()
    };
    for _ in 0..pairs {
        let (s1, s2) = random_ordered_pair(rng, barriers, steps);
        let (d1, d2) = (s1.build()?, s2.build()?);
        let (y1, y2) = (solve_auto(&d1)?, solve_auto(&d2)?);
        let report = check_comparison(y1.view(), y2.view(), &d1, &d2)?;
        tally.pairs += 1;
        tally.worst_gap = tally.worst_gap.max(report.worst_gap);
        if !report.applicable {
            tally.not_applicable += 1;
        } else if !report.holds {
            tally.failures += 1;
        }
    }
    Ok(tally)
}

fn bisect(mut lo: f64, mut hi: f64, g: impl Fn(f64) -> f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn bool_verdict(name: &str, passed: bool, detail: impl Into<String>) -> Verdict {
    Verdict::new(name, passed, if passed { 0.0 } else { 1.0 }, detail)
}

/// Runs every invariant that applies to `data`, plus the randomized
/// comparison, stopping-representation and convexity batteries seeded by `seed`.
pub fn run_battery(data: &ProblemData, seed: u64) -> Result<Vec<Verdict>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let lat = data.lattice();
    let horizon = lat.grid().horizon();

    let bm = ProblemSpec::new(horizon, lat.steps(), GeneratorSpec::zero(), ProcessSpec::expr("B")).build()?;
    let sol = solve_bsde(&bm)?;
    let err = lat
        .nodes()
        .map(|n| {
            let zerr = if n.step < lat.steps() { (sol.z()[n] - 1.0).abs() } else { 0.0 };
            (sol.y()[n] - lat.brownian(n)).abs().max(zerr)
        })
        .fold(0.0, f64::max);
    out.push(Verdict::new("martingale_exactness", err <= 1e-12, err, "max |Y - B| and |Z - 1| for xi = B_T, f = 0"));

    let depth = lat.steps().min(12);
    let small = LatticeModel::new(horizon, depth)?;
    let leaf: Vec<f64> = (0..=depth).map(|_| uniform(&mut rng, -1.0, 1.0)).collect();
    let mut field = NodeField::zeros(depth);
    field.level_mut(depth).copy_from_slice(&leaf);
    for i in (0..depth).rev() {
        for j in 0..=i {
            let node = NodeIndex::new(i, j);
            field[node] = small.conditional_expectation(node, field[node.up_child()], field[node.down_child()])?;
        }
    }
    let (avg, _) = path_expectation(&small, |p| leaf[p[depth].up]);
    let err = (field[NodeIndex::ROOT] - avg).abs();
    out.push(Verdict::new("tower_property", err <= 1e-12, err, format!("iterated expectation vs path average over {depth} steps")));

    let cubic = GeneratorSpec::monotone_poly(0.0, 0.0);
    let mut worst = 0.0f64;
    for k in 0..=40 {
        let e = -2.0 + 0.1 * k as f64;
        let y = implicit_step(e, 0.0, &cubic, Site::at_time(0.0), 0.5, 0.0)?;
        let oracle = bisect(-3.0, 3.0, |y| y + 0.5 * y * y * y - e);
        worst = worst.max((y - oracle).abs());
    }
    out.push(Verdict::new("implicit_step_vs_bisection", worst <= 1e-13, worst, "f = -y^3, dt = 0.5, e in [-2, 2]"));

    for (name, set) in [
        ("comparison_bsde", BarrierSet::None),
        ("comparison_one_barrier", BarrierSet::Lower),
        ("comparison_two_barriers", BarrierSet::Both),
    ] {
        let t = comparison_batch(&mut rng, set, COMPARISON_PAIRS, COMPARISON_STEPS)?;
        out.push(Verdict::new(
            name,
            t.failures == 0 && t.not_applicable == 0,
            t.worst_gap,
            format!("{} ordered pairs, {} failures, {} not applicable; worst is max(Y1 - Y2)", t.pairs, t.failures, t.not_applicable),
        ));
    }

    let mut worst = 0.0f64;
    for k in 0..SNELL_INSTANCES {
        let steps = 1 + k % 5;
        let d = random_snell_instance(&mut rng, steps).build()?;
        worst = worst.max((snell_bruteforce(&d)? - solve_rbsde(&d)?.y0()).abs());
    }
    out.push(Verdict::new("snell_equivalence", worst <= 1e-12, worst, "stopping-rule maximum vs dynamic programming"));

    let mut worst = f64::INFINITY;
    for _ in 0..RESIDUAL_PATHS {
        let mut x = uniform(&mut rng, -1.0, 1.0);
        let mut path = vec![x];
        for _ in 0..50 {
            x += if rng.random_bool(0.5) { 0.1 } else { -0.1 };
            path.push(x);
        }
        for p in RESIDUAL_EXPONENTS {
            worst = convexity_residual(&path, p)?.into_iter().fold(worst, f64::min);
        }
    }
    out.push(Verdict::new("convexity_residual", worst >= -1e-12, worst, "minimum stepwise gap of |x|^p"));

    let st = generator_structure_check(data.generator(), &SampleBox::new(horizon, 10.0, 10.0), 10_000)?;
    out.push(Verdict::new("generator_structure", st.h2_ok && st.h3_ok && st.h5_ok, st.worst_violation, "declared mu and lambda on [0,T] x [-10,10]^2"));

    let again = (solve_auto(data)?, solve_auto(data)?);
    out.push(bool_verdict(
        "determinism",
        again.0.view().y() == again.1.view().y(),
        "two solves of the configured problem agree bit for bit",
    ));

    if data.lower().is_some() || data.upper().is_some() {
        let sol = solve_rbsde(data)?;
        let mut worst = 0.0f64;
        for node in lat.nodes().filter(|n| n.step < lat.steps()) {
            let y = sol.y()[node];
            if let Some(l) = data.lower_at(node) {
                worst = worst.max(l - y);
            }
            if let Some(u) = data.upper_at(node) {
                worst = worst.max(y - u);
            }
        }
        out.push(Verdict::new("barrier_respect", worst <= 0.0, worst, "max barrier violation of the reflected solution"));
        let sk = skorokhod_check(&sol, data);
        out.push(Verdict::new(
            "skorokhod",
            sk.holds(),
            sk.lower_defect.max(sk.upper_defect),
            format!("flat-off defects, singularity_ok = {}", sk.singularity_ok),
        ));
        let jr = jump_formula_check(&sol, data)?;
        out.push(Verdict::new(
            "jump_formulas",
            jr.holds,
            jr.plus_residual.max(jr.minus_residual).max(jr.envelope_residual.unwrap_or(0.0)),
            format!("jump steps {:?}", jr.jump_steps),
        ));

        let ns = [10.0, 40.0, 160.0, 640.0];
        let m0 = 100.0;
        let mut worst = f64::NEG_INFINITY;
        for w in ns.windows(2) {
            let lo = solve_penalized(data, PenaltyLevel::two_sided(w[0], m0))?;
            let hi = solve_penalized(data, PenaltyLevel::two_sided(w[1], m0))?;
            worst = worst.max(lo.y().max_excess_over(hi.y()));
            if data.upper().is_some() {
                let lo = solve_penalized(data, PenaltyLevel::two_sided(m0, w[0]))?;
                let hi = solve_penalized(data, PenaltyLevel::two_sided(m0, w[1]))?;
                worst = worst.max(hi.y().max_excess_over(lo.y()));
            }
        }
        out.push(Verdict::new("penalization_monotonicity", worst <= 1e-12, worst, "Y nondecreasing in n, nonincreasing in m"));

        if data.lower().is_some() && data.upper().is_some() {
            let sw = sandwich_check(data, 100.0)?;
            out.push(Verdict::new("sandwich", sw.holds, sw.lower_gap.max(sw.upper_gap), "one-sided schemes bracket Y^{n,n} at n = 100"));
            let mk = mokobodzki_check(data, None)?;
            out.push(bool_verdict("mokobodzki", mk.feasible && mk.witness_between, mk.note));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ordered_pairs_build_and_compare() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for set in [BarrierSet::None, BarrierSet::Lower, BarrierSet::Both] {
            let t = comparison_batch(&mut rng, set, 20, COMPARISON_STEPS).unwrap();
            assert_eq!((t.failures, t.not_applicable), (0, 0), "{set:?}: {t:?}");
        }
    }

    #[test]
    fn snell_instances_are_supported() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for steps in 1..=4 {
            let d = random_snell_instance(&mut rng, steps).build().unwrap();
            let dp = solve_rbsde(&d).unwrap().y0();
            assert!((snell_bruteforce(&d).unwrap() - dp).abs() < 1e-12);
        }
    }

    #[test]
    fn battery_passes_on_a_two_barrier_problem() {
        let payoff = "max(1.0 - exp(0.2*B), 0.0)";
        let data = ProblemSpec::new(1.0, 16, GeneratorSpec::linear(-0.05, 0.0, 0.0), ProcessSpec::expr(payoff))
            .with_lower(ProcessSpec::expr(payoff))
            .with_upper(ProcessSpec::expr(format!("{payoff} + 0.1")))
            .build()
            .unwrap();
        let verdicts = run_battery(&data, 7).unwrap();
        for v in &verdicts {
            assert!(v.passed, "{v:?}");
        }
        assert_eq!(verdicts, run_battery(&data, 7).unwrap());
    }
}

//! Benchmark bodies shared by the `benches/` targets.

use std::hint::black_box;

use criterion::{BenchmarkId, Criterion};
use rbsde::{
    apriori_audit, compute_norms, implicit_step, run_battery, run_schedule, sandwich_check, skorokhod_check,
    solve_bsde, solve_penalized, solve_rbsde, GeneratorSpec, PenaltyLevel, PenaltySchedule, ProblemData,
    ProblemSpec, ProcessSpec, Site, SolutionView,
};

/// Problem of a bundled benchmark config, optionally on a different grid.
pub fn bundled(name: &str, steps: Option<usize>) -> ProblemData {
    let mut spec = rbsde_cli::benchmark(name).expect("bundled").expect("valid").problem;
    if let Some(n) = steps {
        spec = spec.with_steps(n);
    }
    spec.build().expect("benchmark builds")
}

pub fn solvers(c: &mut Criterion) {
    let cubic = GeneratorSpec::monotone_poly(0.0, 0.0);
    c.bench_function("implicit_step/cubic", |b| {
        b.iter(|| implicit_step(black_box(1.7), 0.0, &cubic, Site::at_time(0.0), 0.1, 0.0))
    });

    let mut group = c.benchmark_group("solve_bsde/cubic");
    for steps in [50, 100, 200, 400] {
        let data = ProblemSpec::new(1.0, steps, cubic.clone(), ProcessSpec::expr("max(B, 0.0)"))
            .build()
            .unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(steps), &data, |b, d| b.iter(|| solve_bsde(d)));
    }
    group.finish();

    let mut group = c.benchmark_group("solve_rbsde/american_put");
    for steps in [50, 100, 200, 400] {
        let data = bundled("american_put", Some(steps));
        group.bench_with_input(BenchmarkId::from_parameter(steps), &data, |b, d| b.iter(|| solve_rbsde(d)));
    }
    group.finish();

    let data = bundled("dynkin_toy", None);
    c.bench_function("solve_rbsde/dynkin_toy", |b| b.iter(|| solve_rbsde(&data)));
}

pub fn penalization(c: &mut Criterion) {
    let put = bundled("american_put", None);
    c.bench_function("solve_penalized/american_put/n=1e4", |b| {
        b.iter(|| solve_penalized(&put, PenaltyLevel::one_sided(black_box(1e4))))
    });

    let schedule = PenaltySchedule::geometric(10.0, 2.0, 11, false).unwrap();
    let oracle = solve_rbsde(&put).unwrap();
    c.bench_function("run_schedule/american_put/11_levels", |b| {
        b.iter(|| run_schedule(&put, &schedule, Some(&oracle)))
    });

    let dynkin = bundled("dynkin_toy", None);
    c.bench_function("sandwich_check/dynkin_toy/n=1e3", |b| b.iter(|| sandwich_check(&dynkin, black_box(1e3))));
}

pub fn diagnostics(c: &mut Criterion) {
    let put = bundled("american_put", None);
    let oracle = solve_rbsde(&put).unwrap();
    c.bench_function("skorokhod_check/american_put", |b| b.iter(|| skorokhod_check(&oracle, &put)));
    c.bench_function("compute_norms/american_put/monte_carlo", |b| b.iter(|| compute_norms(&oracle, &put, 2.0)));

    let small = bundled("american_put", Some(12));
    let small_oracle = solve_rbsde(&small).unwrap();
    c.bench_function("compute_norms/american_put/exact_n12", |b| {
        b.iter(|| compute_norms(&small_oracle, &small, 2.0))
    });

    let schedule = PenaltySchedule::geometric(10.0, 2.0, 11, false).unwrap();
    let run = run_schedule(&put, &schedule, None).unwrap();
    let family: Vec<&dyn SolutionView> = run.solutions.iter().map(|s| s as &dyn SolutionView).collect();
    c.bench_function("apriori_audit/american_put", |b| b.iter(|| apriori_audit(&family, &put, 2.0, 0.0)));

    let mut group = c.benchmark_group("run_battery");
    group.sample_size(10);
    group.bench_function("dynkin_toy", |b| b.iter(|| run_battery(&bundled("dynkin_toy", None), black_box(7))));
    group.finish();
}

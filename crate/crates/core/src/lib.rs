//! Monotone BSDEs, reflected BSDEs and their penalization schemes on a
//! recombining binomial lattice.
//!
//! The solvers work backward over the lattice of [`LatticeModel`]: each step
//! solves an implicit monotone scalar equation in `y` ([`implicit_step`]) and
//! then, for reflected equations, clamps the result between the barriers.
//! Penalized equations keep the penalty inside the implicit solve, so large
//! penalty levels stay stable.

/// Version of this crate, recorded in report provenance.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub mod bsde;
pub mod diagnostics;
pub mod error;
pub mod lattice;
pub mod penalty;
pub mod processes;
pub mod reflect;
pub mod solution;
pub mod suite;

pub use bsde::{check_comparison, implicit_step, solve_bsde, BsdeSolution, ComparisonReport};
pub use diagnostics::{
    apriori_audit, class_d_norm, compute_norms, convexity_residual, mokobodzki_check,
    path_expectation, AuditMember, AuditReport, MokobodzkiReport, NormReport, WitnessNorms,
};
pub use error::{Error, Result};
pub use lattice::{
    build_lattice, enumerate_stopping_rules, stopping_rule_count, LatticeModel, NodeField,
    NodeIndex, StoppingRule, TimeGrid,
};
pub use penalty::{
    effective_level, penalized_generator, run_schedule, sandwich_check, solve_penalized,
    LevelSummary, MonotonicityReport, PenalizationRun, PenalizedGenerator, PenalizedSolution,
    PenaltySchedule, SandwichReport,
};
pub use processes::{
    generator_structure_check, sign_hat, truncate, Generator, GeneratorForm, GeneratorSpec,
    ProblemData, ProblemSpec, ProcessRole, ProcessSpec, SampleBox, Site, StructureReport,
    TimeFunction, ZCondition,
};
pub use reflect::{
    jump_formula_check, reflected_step, skorokhod_check, snell_bruteforce, solve_rbsde,
    solve_rbsde_with, Activity, JumpReport, ReflectOptions, ReflectedSolution, ReflectedStep,
    SkorokhodReport,
};
pub use solution::{PenaltyLevel, SolutionView};
pub use suite::{run_battery, Verdict};

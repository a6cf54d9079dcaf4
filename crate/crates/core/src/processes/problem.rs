use serde::{Deserialize, Serialize};

use super::generator::GeneratorSpec;
use super::process::{BoundProcess, DriverPath, ProcessRole, ProcessSpec};
use crate::error::{Error, Result};
use crate::lattice::{LatticeModel, NodeIndex};

fn default_p() -> f64 {
    2.0
}

pub(crate) fn check_terminal(
    steps: usize,
    terminal: &[f64],
    lower: Option<&BoundProcess>,
    upper: Option<&BoundProcess>,
) -> Result<()> {
    for (j, &value) in terminal.iter().enumerate() {
        let node = NodeIndex::new(steps, j);
        let (l, u) = (lower.map(|b| b.value(node)), upper.map(|b| b.value(node)));
        if l.is_some_and(|l| value < l) || u.is_some_and(|u| value > u) {
            return Err(Error::TerminalOutsideBarriers {
                node,
                value,
                lower: l.unwrap_or(f64::NEG_INFINITY),
                upper: u.unwrap_or(f64::INFINITY),
            });
        }
    }
    Ok(())
}

/// Serializable description of a problem instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub horizon: f64,
    pub steps: usize,
    pub generator: GeneratorSpec,
    pub terminal: ProcessSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub driver: Option<ProcessSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<ProcessSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<ProcessSpec>,
    #[serde(default = "default_p")]
    pub p: f64,
}

impl ProblemSpec {
    pub fn new(horizon: f64, steps: usize, generator: GeneratorSpec, terminal: ProcessSpec) -> Self {
        Self {
            horizon,
            steps,
            generator,
            terminal,
            driver: None,
            lower: None,
            upper: None,
            p: default_p(),
        }
    }

    pub fn with_driver(mut self, driver: ProcessSpec) -> Self {
        self.driver = Some(driver);
        self
    }

    pub fn with_lower(mut self, lower: ProcessSpec) -> Self {
        self.lower = Some(lower);
        self
    }

    pub fn with_upper(mut self, upper: ProcessSpec) -> Self {
        self.upper = Some(upper);
        self
    }

    pub fn with_p(mut self, p: f64) -> Self {
        self.p = p;
        self
    }

    pub fn with_steps(mut self, steps: usize) -> Self {
        self.steps = steps;
        self
    }

    /// Builds and validates every invariant, including `L <= U` at every node.
    pub fn build(&self) -> Result<ProblemData> {
        let data = self.build_unordered()?;
        data.check_barrier_order()?;
        Ok(data)
    }

    /// Like [`build`](Self::build) but leaves barrier ordering unchecked, for
    /// feasibility diagnostics on deliberately crossed barriers.
    pub fn build_unordered(&self) -> Result<ProblemData> {
        let lattice = LatticeModel::new(self.horizon, self.steps)?;
        if !(self.p >= 1.0) {
            return Err(Error::InvalidConfiguration(format!(
                "integrability exponent p must be >= 1, got {}",
                self.p
            )));
        }
        self.generator.validate()?;
        let product = lattice.dt() * self.generator.mu().max(0.0);
        if product >= 1.0 {
            return Err(Error::Stability { product });
        }
        let terminal = self.terminal.bind_terminal(&lattice)?;
        let driver = self
            .driver
            .as_ref()
            .map(|d| d.bind_driver(&lattice))
            .transpose()?;
        let lower = self
            .lower
            .as_ref()
            .map(|l| l.bind(&lattice, ProcessRole::LowerBarrier))
            .transpose()?;
        let upper = self
            .upper
            .as_ref()
            .map(|u| u.bind(&lattice, ProcessRole::UpperBarrier))
            .transpose()?;
        Ok(ProblemData {
            lattice,
            spec: self.clone(),
            terminal,
            driver,
            lower,
            upper,
        })
    }
}

/// A validated problem instance tabulated on its lattice.
#[derive(Debug, Clone)]
pub struct ProblemData {
    lattice: LatticeModel,
    spec: ProblemSpec,
    terminal: Vec<f64>,
    driver: Option<DriverPath>,
    lower: Option<BoundProcess>,
    upper: Option<BoundProcess>,
}

impl ProblemData {
    pub fn lattice(&self) -> &LatticeModel {
        &self.lattice
    }

    pub fn spec(&self) -> &ProblemSpec {
        &self.spec
    }

    pub fn generator(&self) -> &GeneratorSpec {
        &self.spec.generator
    }

    pub fn p(&self) -> f64 {
        self.spec.p
    }

    /// `xi` at the leaves, indexed by up count.
    pub fn terminal(&self) -> &[f64] {
        &self.terminal
    }

    pub fn driver(&self) -> Option<&DriverPath> {
        self.driver.as_ref()
    }

    pub fn lower(&self) -> Option<&BoundProcess> {
        self.lower.as_ref()
    }

    pub fn upper(&self) -> Option<&BoundProcess> {
        self.upper.as_ref()
    }

    /// `V(t_{i+1}) - V(t_i)`, zero without a driver.
    pub fn dv(&self, step: usize) -> f64 {
        self.driver.as_ref().map_or(0.0, |d| d.increment(step))
    }

    pub fn lower_at(&self, node: NodeIndex) -> Option<f64> {
        self.lower.as_ref().map(|l| l.value(node))
    }

    pub fn upper_at(&self, node: NodeIndex) -> Option<f64> {
        self.upper.as_ref().map(|u| u.value(node))
    }

    /// Nodes where `L > U`.
    pub fn barrier_violations(&self) -> Vec<NodeIndex> {
        match (&self.lower, &self.upper) {
            (Some(l), Some(u)) => self
                .lattice
                .nodes()
                .filter(|&n| l.value(n) > u.value(n))
                .collect(),
            _ => Vec::new(),
        }
    }

    pub fn check_barrier_order(&self) -> Result<()> {
        match self.barrier_violations().first() {
            Some(&node) => Err(Error::InfeasibleBarriers {
                node,
                lower: self.lower_at(node).unwrap_or(f64::NAN),
                upper: self.upper_at(node).unwrap_or(f64::NAN),
            }),
            None => Ok(()),
        }
    }

    /// `L_N <= xi <= U_N` at every leaf.
    pub fn check_terminal_order(&self) -> Result<()> {
        check_terminal(self.lattice.steps(), &self.terminal, self.lower.as_ref(), self.upper.as_ref())
    }

    pub fn same_lattice(&self, other: &ProblemData) -> bool {
        self.lattice == other.lattice
    }
}

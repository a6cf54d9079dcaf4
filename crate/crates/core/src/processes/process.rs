use serde::{Deserialize, Serialize};

use super::expr::StateExpr;
use super::generator::{interpolate, validate_knots};
use crate::error::{Error, Result};
use crate::lattice::{LatticeModel, NodeField, NodeIndex};

/// What a process spec is used for inside a problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProcessRole {
    LowerBarrier,
    UpperBarrier,
    Terminal,
    Driver,
    /// A candidate process between the barriers.
    Witness,
}

impl std::fmt::Display for ProcessRole {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ProcessRole::LowerBarrier => "lower barrier",
            ProcessRole::UpperBarrier => "upper barrier",
            ProcessRole::Terminal => "terminal condition",
            ProcessRole::Driver => "driver",
            ProcessRole::Witness => "witness",
        })
    }
}

/// Description of a barrier, terminal value or finite-variation driver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProcessSpec {
    Constant {
        value: f64,
    },
    /// Linear interpolation of `(t, value)` knots plus grid-aligned jumps
    /// `(t, size)`. The value at a jump time is the post-jump value.
    DeterministicTime {
        knots: Vec<(f64, f64)>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        jumps: Vec<(f64, f64)>,
    },
    /// A formula in `t` and the Brownian value `B`.
    FunctionOfState {
        expr: String,
    },
}

impl ProcessSpec {
    pub fn constant(value: f64) -> Self {
        ProcessSpec::Constant { value }
    }

    pub fn expr(expr: impl Into<String>) -> Self {
        ProcessSpec::FunctionOfState { expr: expr.into() }
    }

    pub fn deterministic(knots: Vec<(f64, f64)>, jumps: Vec<(f64, f64)>) -> Self {
        ProcessSpec::DeterministicTime { knots, jumps }
    }

    pub fn is_deterministic(&self) -> bool {
        !matches!(self, ProcessSpec::FunctionOfState { .. })
    }

    /// Jump steps on `lattice`, merged and sorted, with their total sizes.
    fn grid_jumps(&self, lattice: &LatticeModel, role: ProcessRole) -> Result<Vec<(usize, f64)>> {
        let ProcessSpec::DeterministicTime { jumps, .. } = self else {
            return Ok(Vec::new());
        };
        let mut out: Vec<(usize, f64)> = Vec::new();
        for &(t, size) in jumps {
            if !size.is_finite() {
                return Err(Error::InvalidConfiguration(format!(
                    "{role}: jump size at t = {t} is not finite"
                )));
            }
            let step = lattice.grid().step_of(t).ok_or_else(|| {
                Error::InvalidConfiguration(format!(
                    "{role}: jump time {t} off grid (dt = {})",
                    lattice.dt()
                ))
            })?;
            if step == 0 {
                return Err(Error::InvalidConfiguration(format!(
                    "{role}: jump time {t} must lie in (0, T]"
                )));
            }
            match out.iter_mut().find(|(s, _)| *s == step) {
                Some(entry) => entry.1 += size,
                None => out.push((step, size)),
            }
        }
        out.sort_by_key(|&(s, _)| s);
        Ok(out)
    }

    fn validate(&self, role: ProcessRole) -> Result<()> {
        match self {
            ProcessSpec::Constant { value } if !value.is_finite() => Err(
                Error::InvalidConfiguration(format!("{role}: constant {value} is not finite")),
            ),
            ProcessSpec::DeterministicTime { knots, .. } => validate_knots(knots, &role.to_string()),
            _ => Ok(()),
        }
    }

    /// Evaluates at every node of `lattice`.
    pub fn bind(&self, lattice: &LatticeModel, role: ProcessRole) -> Result<BoundProcess> {
        self.validate(role)?;
        let steps = lattice.steps();
        let (values, left, jump_steps) = match self {
            ProcessSpec::Constant { value } => (
                NodeField::constant(steps, *value),
                NodeField::constant(steps, *value),
                Vec::new(),
            ),
            ProcessSpec::DeterministicTime { knots, .. } => {
                let jumps = self.grid_jumps(lattice, role)?;
                let mut post = Vec::with_capacity(steps + 1);
                let mut pre = Vec::with_capacity(steps + 1);
                let mut acc = 0.0;
                for i in 0..=steps {
                    let cont = interpolate(knots, lattice.time(i));
                    pre.push(cont + acc);
                    if let Some(&(_, size)) = jumps.iter().find(|(s, _)| *s == i) {
                        acc += size;
                    }
                    post.push(cont + acc);
                }
                (
                    NodeField::from_fn(steps, |n| post[n.step]),
                    NodeField::from_fn(steps, |n| pre[n.step]),
                    jumps.iter().map(|&(s, _)| s).collect(),
                )
            }
            ProcessSpec::FunctionOfState { expr } => {
                let mut f = StateExpr::compile(expr)?;
                let values = NodeField::try_from_fn(steps, |n| {
                    f.eval(lattice.time(n.step), lattice.brownian(n))
                })?;
                (values.clone(), values, Vec::new())
            }
        };
        Ok(BoundProcess {
            role,
            values,
            left,
            jump_steps,
        })
    }

    /// Values at the leaves `(N, 0..=N)`.
    pub fn bind_terminal(&self, lattice: &LatticeModel) -> Result<Vec<f64>> {
        self.validate(ProcessRole::Terminal)?;
        let n = lattice.steps();
        let t = lattice.time(n);
        match self {
            ProcessSpec::Constant { value } => Ok(vec![*value; n + 1]),
            ProcessSpec::DeterministicTime { knots, .. } => {
                let jumps = self.grid_jumps(lattice, ProcessRole::Terminal)?;
                let v = interpolate(knots, t) + jumps.iter().map(|j| j.1).sum::<f64>();
                Ok(vec![v; n + 1])
            }
            ProcessSpec::FunctionOfState { expr } => {
                let mut f = StateExpr::compile(expr)?;
                (0..=n)
                    .map(|j| f.eval(t, lattice.brownian(NodeIndex::new(n, j))))
                    .collect()
            }
        }
    }

    /// Increments and variation of a deterministic driver on `lattice`.
    pub fn bind_driver(&self, lattice: &LatticeModel) -> Result<DriverPath> {
        self.validate(ProcessRole::Driver)?;
        let steps = lattice.steps();
        match self {
            ProcessSpec::Constant { value } => Ok(DriverPath {
                values: vec![*value; steps + 1],
                left: vec![*value; steps + 1],
                increments: vec![0.0; steps],
                variation: vec![0.0; steps],
            }),
            ProcessSpec::DeterministicTime { knots, .. } => {
                let jumps = self.grid_jumps(lattice, ProcessRole::Driver)?;
                let jump_at = |i: usize| {
                    jumps
                        .iter()
                        .find(|(s, _)| *s == i)
                        .map_or(0.0, |&(_, size)| size)
                };
                let mut values = Vec::with_capacity(steps + 1);
                let mut left = Vec::with_capacity(steps + 1);
                let mut acc = 0.0;
                for i in 0..=steps {
                    let cont = interpolate(knots, lattice.time(i));
                    left.push(cont + acc);
                    acc += jump_at(i);
                    values.push(cont + acc);
                }
                let increments = (0..steps).map(|i| values[i + 1] - values[i]).collect();
                let variation = (0..steps)
                    .map(|i| {
                        continuous_variation(knots, lattice.time(i), lattice.time(i + 1))
                            + jump_at(i + 1).abs()
                    })
                    .collect();
                Ok(DriverPath {
                    values,
                    left,
                    increments,
                    variation,
                })
            }
            ProcessSpec::FunctionOfState { .. } => Err(Error::InvalidConfiguration(
                "driver must be a deterministic function of time".into(),
            )),
        }
    }
}

fn continuous_variation(knots: &[(f64, f64)], a: f64, b: f64) -> f64 {
    let mut points = vec![a];
    points.extend(knots.iter().map(|k| k.0).filter(|&t| t > a && t < b));
    points.push(b);
    points
        .windows(2)
        .map(|w| (interpolate(knots, w[1]) - interpolate(knots, w[0])).abs())
        .sum()
}

/// A barrier (or other node process) tabulated on a lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundProcess {
    role: ProcessRole,
    values: NodeField,
    left: NodeField,
    jump_steps: Vec<usize>,
}

impl BoundProcess {
    pub fn from_values(role: ProcessRole, values: NodeField) -> Self {
        Self {
            role,
            left: values.clone(),
            values,
            jump_steps: Vec::new(),
        }
    }

    pub fn role(&self) -> ProcessRole {
        self.role
    }

    pub fn value(&self, node: NodeIndex) -> f64 {
        self.values[node]
    }

    /// Pre-jump value at `node`'s time.
    pub fn left_limit(&self, node: NodeIndex) -> f64 {
        self.left[node]
    }

    pub fn values(&self) -> &NodeField {
        &self.values
    }

    pub fn jump_steps(&self) -> &[usize] {
        &self.jump_steps
    }
}

/// A deterministic finite-variation driver `V` on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DriverPath {
    values: Vec<f64>,
    left: Vec<f64>,
    increments: Vec<f64>,
    variation: Vec<f64>,
}

impl DriverPath {
    /// `V(t_i)`, post-jump.
    pub fn value(&self, step: usize) -> f64 {
        self.values[step]
    }

    /// `V(t_i-)`.
    pub fn left_limit(&self, step: usize) -> f64 {
        self.left[step]
    }

    /// `V(t_{i+1}) - V(t_i)`, including any jump at `t_{i+1}`.
    pub fn increment(&self, step: usize) -> f64 {
        self.increments[step]
    }

    /// Total variation of `V` on `(t_i, t_{i+1}]`.
    pub fn step_variation(&self, step: usize) -> f64 {
        self.variation[step]
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    pub fn total_variation(&self) -> f64 {
        self.variation.iter().sum()
    }

    /// Steps `i` whose increment carries a jump at `t_{i+1}`.
    pub fn jump_steps(&self) -> Vec<usize> {
        (0..self.increments.len())
            .filter(|&i| self.values[i + 1] != self.left[i + 1])
            .collect()
    }
}

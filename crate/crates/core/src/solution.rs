//! Common read-only view over solver outputs.

use crate::lattice::NodeField;

/// Penalty coefficients `(n, m)` of a penalized solve.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PenaltyLevel {
    pub n: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<f64>,
}

impl PenaltyLevel {
    pub fn one_sided(n: f64) -> Self {
        Self { n, m: None }
    }

    pub fn two_sided(n: f64, m: f64) -> Self {
        Self { n, m: Some(m) }
    }
}

/// Node-indexed `Y`, `Z` and the per-node increments of the upward
/// (`K`, `R+`) and downward (`A`, `R-`) pushing processes.
///
/// Increments at node `(i, j)` act on `(t_i, t_{i+1}]`; terminal nodes carry none.
pub trait SolutionView {
    fn y(&self) -> &NodeField;
    fn z(&self) -> &NodeField;

    fn push_up(&self) -> Option<&NodeField> {
        None
    }

    fn push_down(&self) -> Option<&NodeField> {
        None
    }

    /// Penalty coefficients used to produce this solution, if any.
    fn penalty(&self) -> Option<(f64, f64)> {
        None
    }
}

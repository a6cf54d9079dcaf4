//! Discrete Brownian filtration on a recombining binomial tree.
//!
//! Nodes are indexed by `(step, up)` with `0 <= up <= step <= N`; the
//! Brownian value at a node is `(2 * up - step) * sqrt(dt)` and both
//! branches carry probability one half. Conditional expectations and
//! martingale-representation coefficients are therefore exact one-step
//! averages and differences.
//!
//! Stopping rules live on the *non-recombining* path tree, where a node is a
//! full history of moves. They are only used by brute-force oracles, so the
//! depth is capped at 5.

use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

/// Uniform time grid `0 = t_0 < ... < t_N = T`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
    dt: f64,
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidConfiguration(format!(
                "horizon must be positive and finite, got {horizon}"
            )));
        }
        if steps == 0 {
            return Err(Error::InvalidConfiguration(
                "time grid needs at least one step".into(),
            ));
        }
        let dt = horizon / steps as f64;
        let mut times: Vec<f64> = (0..=steps).map(|i| i as f64 * dt).collect();
        times[steps] = horizon;
        Ok(Self {
            horizon,
            steps,
            dt,
            times,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn time(&self, step: usize) -> f64 {
        self.times[step]
    }

    /// Grid index of `t`, if `t` lies on the grid (relative tolerance 1e-9 of a step).
    pub fn step_of(&self, t: f64) -> Option<usize> {
        if !t.is_finite() {
            return None;
        }
        let x = t / self.dt;
        let k = x.round();
        if (x - k).abs() <= 1e-9 && k >= 0.0 && k <= self.steps as f64 {
            Some(k as usize)
        } else {
            None
        }
    }
}

/// Node of the recombining tree: `up` up-moves after `step` steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub struct NodeIndex {
    pub step: usize,
    pub up: usize,
}

impl NodeIndex {
    pub const ROOT: NodeIndex = NodeIndex { step: 0, up: 0 };

    pub fn new(step: usize, up: usize) -> Self {
        debug_assert!(up <= step, "up count {up} exceeds step {step}");
        Self { step, up }
    }

    pub fn up_child(self) -> Self {
        Self::new(self.step + 1, self.up + 1)
    }

    pub fn down_child(self) -> Self {
        Self::new(self.step + 1, self.up)
    }

    /// Position in a step-major flat layout.
    pub fn flat(self) -> usize {
        self.step * (self.step + 1) / 2 + self.up
    }
}

/// Symmetric binomial approximation of a one-dimensional Brownian motion.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeModel {
    grid: TimeGrid,
    sqrt_dt: f64,
}

/// Builds the lattice for horizon `horizon` with `steps` uniform steps.
pub fn build_lattice(horizon: f64, steps: usize) -> Result<LatticeModel> {
    LatticeModel::new(horizon, steps)
}

impl LatticeModel {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        let grid = TimeGrid::new(horizon, steps)?;
        let sqrt_dt = grid.dt().sqrt();
        Ok(Self { grid, sqrt_dt })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn steps(&self) -> usize {
        self.grid.steps
    }

    pub fn dt(&self) -> f64 {
        self.grid.dt
    }

    pub fn sqrt_dt(&self) -> f64 {
        self.sqrt_dt
    }

    pub fn time(&self, step: usize) -> f64 {
        self.grid.time(step)
    }

    pub fn branch_probability(&self) -> f64 {
        0.5
    }

    /// `(N + 1)(N + 2) / 2`.
    pub fn node_count(&self) -> usize {
        let n = self.steps();
        (n + 1) * (n + 2) / 2
    }

    pub fn contains(&self, node: NodeIndex) -> bool {
        node.up <= node.step && node.step <= self.steps()
    }

    /// All nodes, step-major.
    pub fn nodes(&self) -> impl Iterator<Item = NodeIndex> + '_ {
        (0..=self.steps()).flat_map(|i| (0..=i).map(move |j| NodeIndex::new(i, j)))
    }

    pub fn brownian(&self, node: NodeIndex) -> f64 {
        (2.0 * node.up as f64 - node.step as f64) * self.sqrt_dt
    }

    fn check_interior(&self, node: NodeIndex) -> Result<()> {
        if !self.contains(node) {
            return Err(Error::OutOfRange {
                node,
                reason: "node is not on the lattice",
            });
        }
        if node.step >= self.steps() {
            return Err(Error::OutOfRange {
                node,
                reason: "terminal node has no successors",
            });
        }
        Ok(())
    }

    /// `E[v_{i+1} | node] = (v_up + v_down) / 2`.
    pub fn conditional_expectation(&self, node: NodeIndex, up: f64, down: f64) -> Result<f64> {
        self.check_interior(node)?;
        Ok(0.5 * (up + down))
    }

    /// The unique `z` with `v_child = mean + z * dB_child`.
    pub fn martingale_coefficient(&self, node: NodeIndex, up: f64, down: f64) -> Result<f64> {
        self.check_interior(node)?;
        Ok((up - down) / (2.0 * self.sqrt_dt))
    }

    /// One-step expectation of a node field; `node` must be interior.
    pub(crate) fn expect(&self, field: &NodeField, node: NodeIndex) -> f64 {
        0.5 * (field[node.up_child()] + field[node.down_child()])
    }

    pub(crate) fn coefficient(&self, field: &NodeField, node: NodeIndex) -> f64 {
        (field[node.up_child()] - field[node.down_child()]) / (2.0 * self.sqrt_dt)
    }

    /// Probability of reaching each node, by forward propagation.
    pub fn node_probabilities(&self) -> NodeField {
        let mut prob = NodeField::zeros(self.steps());
        prob[NodeIndex::ROOT] = 1.0;
        for i in 0..self.steps() {
            for j in 0..=i {
                let node = NodeIndex::new(i, j);
                let half = 0.5 * prob[node];
                prob[node.up_child()] += half;
                prob[node.down_child()] += half;
            }
        }
        prob
    }

    /// Nodes visited by the path encoded in `moves` (bit `k` set = down move at step `k`).
    pub fn path_nodes(&self, moves: u64, depth: usize) -> Vec<NodeIndex> {
        let mut node = NodeIndex::ROOT;
        let mut out = Vec::with_capacity(depth + 1);
        out.push(node);
        for k in 0..depth {
            node = if moves >> k & 1 == 1 {
                node.down_child()
            } else {
                node.up_child()
            };
            out.push(node);
        }
        out
    }
}

/// A real value at every node of the recombining tree.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NodeField {
    steps: usize,
    values: Vec<f64>,
}

impl NodeField {
    pub fn zeros(steps: usize) -> Self {
        Self::constant(steps, 0.0)
    }

    pub fn constant(steps: usize, value: f64) -> Self {
        Self {
            steps,
            values: vec![value; (steps + 1) * (steps + 2) / 2],
        }
    }

    pub fn from_fn(steps: usize, mut f: impl FnMut(NodeIndex) -> f64) -> Self {
        let mut values = Vec::with_capacity((steps + 1) * (steps + 2) / 2);
        for i in 0..=steps {
            for j in 0..=i {
                values.push(f(NodeIndex::new(i, j)));
            }
        }
        Self { steps, values }
    }

    pub fn try_from_fn(
        steps: usize,
        mut f: impl FnMut(NodeIndex) -> Result<f64>,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity((steps + 1) * (steps + 2) / 2);
        for i in 0..=steps {
            for j in 0..=i {
                values.push(f(NodeIndex::new(i, j))?);
            }
        }
        Ok(Self { steps, values })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn get(&self, node: NodeIndex) -> Option<f64> {
        if node.up <= node.step && node.step <= self.steps {
            Some(self.values[node.flat()])
        } else {
            None
        }
    }

    /// Values at step `i`, ordered by up count.
    pub fn level(&self, step: usize) -> &[f64] {
        let start = step * (step + 1) / 2;
        &self.values[start..start + step + 1]
    }

    pub fn level_mut(&mut self, step: usize) -> &mut [f64] {
        let start = step * (step + 1) / 2;
        &mut self.values[start..start + step + 1]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeIndex, f64)> + '_ {
        (0..=self.steps).flat_map(move |i| {
            self.level(i)
                .iter()
                .enumerate()
                .map(move |(j, &v)| (NodeIndex::new(i, j), v))
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            steps: self.steps,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `max |self - other|` over all nodes; panics on mismatched shapes.
    pub fn max_abs_diff(&self, other: &NodeField) -> f64 {
        assert_eq!(self.steps, other.steps, "node fields on different lattices");
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// `max (self - other)` over all nodes.
    pub fn max_excess_over(&self, other: &NodeField) -> f64 {
        assert_eq!(self.steps, other.steps, "node fields on different lattices");
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

impl Index<NodeIndex> for NodeField {
    type Output = f64;

    fn index(&self, node: NodeIndex) -> &f64 {
        &self.values[node.flat()]
    }
}

impl IndexMut<NodeIndex> for NodeField {
    fn index_mut(&mut self, node: NodeIndex) -> &mut f64 {
        &mut self.values[node.flat()]
    }
}

/// Maximum depth accepted by [`enumerate_stopping_rules`].
pub const MAX_STOPPING_DEPTH: usize = 5;

/// An adapted stopping rule on the depth-`N` path tree.
///
/// History nodes use heap numbering: the root is 0 and the children of `k`
/// are `2k + 1` (up) and `2k + 2` (down). Bit `k` of `stop_mask` is set when
/// the rule stops at history `k`; bits below a stop are always clear.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StoppingRule {
    depth: usize,
    stop_mask: u64,
}

impl StoppingRule {
    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn stop_mask(&self) -> u64 {
        self.stop_mask
    }

    pub fn stops_at(&self, history: usize) -> bool {
        self.stop_mask >> history & 1 == 1
    }

    /// Stopping step along the path encoded in `moves` (see [`LatticeModel::path_nodes`]).
    pub fn stopping_step(&self, moves: u64) -> usize {
        let mut history = 0usize;
        for k in 0..self.depth {
            if self.stops_at(history) {
                return k;
            }
            history = 2 * history + 1 + (moves >> k & 1) as usize;
        }
        debug_assert!(self.stops_at(history));
        self.depth
    }
}

/// Lattice node reached by heap-numbered history `history`.
pub fn history_node(history: usize) -> NodeIndex {
    let depth = (usize::BITS - 1 - (history + 1).leading_zeros()) as usize;
    let offset = history + 1 - (1usize << depth);
    NodeIndex::new(depth, depth - offset.count_ones() as usize)
}

/// Number of adapted stopping rules on the depth-`depth` path tree:
/// `f(0) = 1`, `f(k) = 1 + f(k - 1)^2`. `None` once it overflows `u128`.
pub fn stopping_rule_count(depth: usize) -> Option<u128> {
    let mut count: u128 = 1;
    for _ in 0..depth {
        count = count.checked_mul(count)?.checked_add(1)?;
    }
    Some(count)
}

/// All adapted stopping rules on the depth-`depth` path tree.
pub fn enumerate_stopping_rules(depth: usize) -> Result<Vec<StoppingRule>> {
    if depth > MAX_STOPPING_DEPTH {
        return Err(Error::Capacity {
            depth,
            count: stopping_rule_count(depth)
                .map(|c| c.to_string())
                .unwrap_or_else(|| "more than 2^128".into()),
        });
    }
    Ok(subtree_rules(0, depth)
        .into_iter()
        .map(|stop_mask| StoppingRule { depth, stop_mask })
        .collect())
}

fn subtree_rules(history: usize, remaining: usize) -> Vec<u64> {
    let stop_here = 1u64 << history;
    if remaining == 0 {
        return vec![stop_here];
    }
    let ups = subtree_rules(2 * history + 1, remaining - 1);
    let downs = subtree_rules(2 * history + 2, remaining - 1);
    let mut out = Vec::with_capacity(1 + ups.len() * downs.len());
    out.push(stop_here);
    for &u in &ups {
        out.extend(downs.iter().map(|&d| u | d));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_step_lattice() {
        let lat = build_lattice(1.0, 1).unwrap();
        assert_eq!(lat.node_count(), 3);
        let nodes: Vec<_> = lat.nodes().collect();
        assert_eq!(
            nodes,
            vec![NodeIndex::new(0, 0), NodeIndex::new(1, 0), NodeIndex::new(1, 1)]
        );
        assert_eq!(lat.brownian(NodeIndex::new(1, 1)), 1.0);
        assert_eq!(lat.brownian(NodeIndex::new(1, 0)), -1.0);
    }

    #[test]
    fn brownian_values() {
        let lat = build_lattice(1.0, 4).unwrap();
        assert_eq!(lat.brownian(NodeIndex::new(4, 2)), 0.0);
        let lat = build_lattice(0.5, 2).unwrap();
        assert_eq!(lat.brownian(NodeIndex::new(2, 2)), 1.0);
    }

    #[test]
    fn grid_ends_exactly_at_horizon() {
        for &(t, n) in &[(1.0, 3), (0.7, 7), (2.3, 100), (1.0 / 3.0, 9)] {
            let grid = TimeGrid::new(t, n).unwrap();
            assert_eq!(grid.times()[n] - t, 0.0);
            for w in grid.times().windows(2) {
                assert!(w[1] > w[0]);
                assert!((w[1] - w[0] - grid.dt()).abs() <= 8.0 * f64::EPSILON * t);
            }
        }
    }

    #[test]
    fn rejects_bad_configuration() {
        assert!(matches!(
            build_lattice(0.0, 3),
            Err(Error::InvalidConfiguration(_))
        ));
        assert!(matches!(
            build_lattice(-1.0, 3),
            Err(Error::InvalidConfiguration(_))
        ));
        assert!(matches!(
            build_lattice(1.0, 0),
            Err(Error::InvalidConfiguration(_))
        ));
    }

    #[test]
    fn expectation_and_coefficient_examples() {
        let lat = build_lattice(1.0, 4).unwrap();
        let node = NodeIndex::new(1, 0);
        assert_eq!(lat.conditional_expectation(node, 2.0, 0.0).unwrap(), 1.0);
        assert_eq!(lat.conditional_expectation(node, 0.3, 0.3).unwrap(), 0.3);
        assert_eq!(lat.martingale_coefficient(node, 0.3, 0.3).unwrap(), 0.0);
        // dt = 0.25
        assert_eq!(lat.martingale_coefficient(node, 3.0, 1.0).unwrap(), 2.0);

        let terminal = NodeIndex::new(4, 1);
        assert!(matches!(
            lat.conditional_expectation(terminal, 1.0, 1.0),
            Err(Error::OutOfRange { .. })
        ));
        assert!(matches!(
            lat.martingale_coefficient(terminal, 1.0, 1.0),
            Err(Error::OutOfRange { .. })
        ));
    }

    #[test]
    fn brownian_is_a_lattice_martingale_with_unit_coefficient() {
        let lat = build_lattice(1.3, 37).unwrap();
        for i in 0..lat.steps() {
            for j in 0..=i {
                let node = NodeIndex::new(i, j);
                let up = lat.brownian(node.up_child());
                let down = lat.brownian(node.down_child());
                let e = lat.conditional_expectation(node, up, down).unwrap();
                assert!((e - lat.brownian(node)).abs() <= 1e-14);
                let var = 0.5 * ((up - e).powi(2) + (down - e).powi(2));
                assert!((var - lat.dt()).abs() <= 1e-14);
                let z = lat.martingale_coefficient(node, up, down).unwrap();
                assert!((z - 1.0).abs() <= 1e-14);
            }
        }
    }

    #[test]
    fn node_probabilities_sum_to_one() {
        let lat = build_lattice(1.0, 20).unwrap();
        let prob = lat.node_probabilities();
        for i in 0..=20 {
            let s: f64 = prob.level(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-14);
        }
        // C(20, 10) / 2^20
        assert!((prob[NodeIndex::new(20, 10)] - 184756.0 / 1048576.0).abs() < 1e-16);
    }

    #[test]
    fn stopping_rule_counts() {
        assert_eq!(enumerate_stopping_rules(0).unwrap().len(), 1);
        assert_eq!(enumerate_stopping_rules(1).unwrap().len(), 2);
        assert_eq!(enumerate_stopping_rules(2).unwrap().len(), 5);
        assert_eq!(enumerate_stopping_rules(3).unwrap().len(), 26);
        for depth in 0..=MAX_STOPPING_DEPTH {
            let rules = enumerate_stopping_rules(depth).unwrap();
            assert_eq!(rules.len() as u128, stopping_rule_count(depth).unwrap());
            let distinct: std::collections::HashSet<_> = rules.iter().collect();
            assert_eq!(distinct.len(), rules.len());
        }
        assert_eq!(stopping_rule_count(5), Some(458_330));
    }

    #[test]
    fn enumeration_capacity_error_reports_count() {
        match enumerate_stopping_rules(6) {
            Err(Error::Capacity { depth, count }) => {
                assert_eq!(depth, 6);
                assert_eq!(count, (458_330u128 * 458_330 + 1).to_string());
            }
            other => panic!("expected capacity error, got {other:?}"),
        }
    }

    #[test]
    fn every_path_is_stopped_and_rules_are_adapted() {
        let depth = 3;
        for rule in enumerate_stopping_rules(depth).unwrap() {
            for moves in 0..(1u64 << depth) {
                let tau = rule.stopping_step(moves);
                assert!(tau <= depth);
                // Paths sharing the first `tau` moves stop at the same step.
                let prefix = moves & ((1u64 << tau) - 1);
                for other in 0..(1u64 << depth) {
                    if other & ((1u64 << tau) - 1) == prefix {
                        assert_eq!(rule.stopping_step(other), tau);
                    }
                }
            }
        }
    }

    #[test]
    fn history_nodes_map_to_lattice() {
        assert_eq!(history_node(0), NodeIndex::ROOT);
        assert_eq!(history_node(1), NodeIndex::new(1, 1));
        assert_eq!(history_node(2), NodeIndex::new(1, 0));
        assert_eq!(history_node(3), NodeIndex::new(2, 2));
        assert_eq!(history_node(4), NodeIndex::new(2, 1));
        assert_eq!(history_node(5), NodeIndex::new(2, 1));
        assert_eq!(history_node(6), NodeIndex::new(2, 0));
    }

    fn backward_expectation(lat: &LatticeModel, leaf: &[f64], k: usize) -> f64 {
        let mut level = leaf.to_vec();
        for i in (0..k).rev() {
            level = (0..=i)
                .map(|j| lat.conditional_expectation(NodeIndex::new(i, j), level[j + 1], level[j]).unwrap())
                .collect();
        }
        level[0]
    }

    proptest! {
        #[test]
        fn tower_property_matches_path_average(
            k in 1usize..=12,
            seed_values in proptest::collection::vec(-5.0f64..5.0, 13),
        ) {
            let lat = build_lattice(1.0, 12).unwrap();
            let leaf: Vec<f64> = (0..=k).map(|j| seed_values[j]).collect();
            let dp = backward_expectation(&lat, &leaf, k);
            let mut total = 0.0;
            for moves in 0..(1u64 << k) {
                let end = *lat.path_nodes(moves, k).last().unwrap();
                total += leaf[end.up];
            }
            let avg = total / (1u64 << k) as f64;
            prop_assert!((dp - avg).abs() <= 1e-12);
        }

        #[test]
        fn expectation_is_linear_and_monotone(
            a in -10.0f64..10.0, b in -10.0f64..10.0,
            da in 0.0f64..3.0, db in 0.0f64..3.0,
            c in -2.0f64..2.0,
        ) {
            let lat = build_lattice(1.0, 3).unwrap();
            let node = NodeIndex::new(1, 1);
            let e1 = lat.conditional_expectation(node, a, b).unwrap();
            let e2 = lat.conditional_expectation(node, a + da, b + db).unwrap();
            prop_assert!(e1 <= e2);
            let scaled = lat.conditional_expectation(node, c * a + b, c * b + a).unwrap();
            prop_assert!((scaled - (c * e1 + lat.conditional_expectation(node, b, a).unwrap())).abs() <= 1e-12);
        }
    }
}

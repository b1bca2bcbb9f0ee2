use std::collections::{BTreeMap, BTreeSet, VecDeque};

use super::{Axis, GraphError};
use crate::scalar::Weight;
use crate::snapshot::CarId;

/// Weighted directed influence graph for one axis.
///
/// Edges are keyed `(to, from)` so that a node's incoming edges are a
/// contiguous range. Input nodes (the root, obstacles, a car performing a
/// scripted manoeuvre) never carry incoming edges.
#[derive(Clone, Debug, PartialEq)]
pub struct InfluenceGraph<W> {
    pub axis: Axis,
    pub root: CarId,
    nodes: BTreeSet<CarId>,
    inputs: BTreeSet<CarId>,
    edges: BTreeMap<(CarId, CarId), W>,
}

/// Edge-set difference between two graphs of the same axis.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EdgeDiff {
    /// `(from, to)` pairs present only in the newer graph.
    pub added: Vec<(CarId, CarId)>,
    /// `(from, to)` pairs present only in the older graph.
    pub removed: Vec<(CarId, CarId)>,
}

impl EdgeDiff {
    pub fn is_empty(&self) -> bool {
        self.added.is_empty() && self.removed.is_empty()
    }
}

impl<W: Weight> InfluenceGraph<W> {
    pub fn new(axis: Axis, root: CarId) -> Self {
        let mut nodes = BTreeSet::new();
        nodes.insert(root);
        InfluenceGraph {
            axis,
            root,
            nodes,
            inputs: BTreeSet::new(),
            edges: BTreeMap::new(),
        }
    }

    pub fn add_node(&mut self, id: CarId) {
        self.nodes.insert(id);
    }

    /// Adds an input-only node (no incoming edges allowed).
    pub fn add_input(&mut self, id: CarId) {
        self.nodes.insert(id);
        if id != self.root {
            self.inputs.insert(id);
        }
    }

    /// Inserts or replaces edge `from -> to`.
    pub fn add_edge(&mut self, from: CarId, to: CarId, weight: W) -> Result<(), GraphError> {
        if weight <= W::zero() {
            return Err(GraphError::NonPositiveWeight { from, to });
        }
        if to == self.root || self.inputs.contains(&to) {
            return Err(GraphError::UnknownNode(to));
        }
        self.nodes.insert(from);
        self.nodes.insert(to);
        self.edges.insert((to, from), weight);
        Ok(())
    }

    pub fn remove_edge(&mut self, from: CarId, to: CarId) -> Option<W> {
        self.edges.remove(&(to, from))
    }

    pub fn nodes(&self) -> &BTreeSet<CarId> {
        &self.nodes
    }

    /// Input nodes other than the root.
    pub fn inputs(&self) -> &BTreeSet<CarId> {
        &self.inputs
    }

    pub fn is_input(&self, id: CarId) -> bool {
        id == self.root || self.inputs.contains(&id)
    }

    pub fn contains(&self, id: CarId) -> bool {
        self.nodes.contains(&id)
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn weight(&self, from: CarId, to: CarId) -> Option<W> {
        self.edges.get(&(to, from)).copied()
    }

    /// `(from, to, weight)` triples in deterministic order.
    pub fn edges(&self) -> impl Iterator<Item = (CarId, CarId, W)> + '_ {
        self.edges.iter().map(|(&(to, from), &w)| (from, to, w))
    }

    /// Incoming `(from, weight)` pairs of `to`.
    pub fn in_edges(&self, to: CarId) -> impl Iterator<Item = (CarId, W)> + '_ {
        self.edges
            .range((to, CarId(0))..=(to, CarId(u32::MAX)))
            .map(|(&(_, from), &w)| (from, w))
    }

    pub fn in_degree(&self, to: CarId) -> usize {
        self.in_edges(to).count()
    }

    pub fn in_weight(&self, to: CarId) -> W {
        self.in_edges(to).fold(W::zero(), |acc, (_, w)| acc + w)
    }

    pub fn out_neighbors(&self, from: CarId) -> impl Iterator<Item = CarId> + '_ {
        self.edges
            .keys()
            .filter(move |(_, f)| *f == from)
            .map(|(to, _)| *to)
    }

    /// Unweighted edge set as `(from, to)` pairs.
    pub fn edge_set(&self) -> BTreeSet<(CarId, CarId)> {
        self.edges.keys().map(|&(to, from)| (from, to)).collect()
    }

    pub fn diff(&self, newer: &Self) -> EdgeDiff {
        if self.edges.keys().eq(newer.edges.keys()) {
            return EdgeDiff::default();
        }
        let old = self.edge_set();
        let new = newer.edge_set();
        EdgeDiff {
            added: new.difference(&old).copied().collect(),
            removed: old.difference(&new).copied().collect(),
        }
    }

    /// Nodes in id order with out-neighbour lists as positions in that order.
    pub(crate) fn dense_successors(&self) -> (Vec<CarId>, Vec<Vec<usize>>) {
        let order: Vec<CarId> = self.nodes.iter().copied().collect();
        let pos = |id: &CarId| order.binary_search(id).expect("edge endpoint is a node");
        let mut succ = vec![Vec::new(); order.len()];
        for (to, from) in self.edges.keys() {
            succ[pos(from)].push(pos(to));
        }
        (order, succ)
    }

    /// Nodes reachable from the root by directed paths (root included).
    pub fn reachable_from_root(&self) -> BTreeSet<CarId> {
        let (order, succ) = self.dense_successors();
        let mut seen = vec![false; order.len()];
        let mut queue = VecDeque::new();
        if let Ok(r) = order.binary_search(&self.root) {
            seen[r] = true;
            queue.push_back(r);
        }
        while let Some(n) = queue.pop_front() {
            for &next in &succ[n] {
                if !seen[next] {
                    seen[next] = true;
                    queue.push_back(next);
                }
            }
        }
        let mut out: BTreeSet<CarId> = order.iter().zip(&seen).filter(|(_, s)| **s).map(|(id, _)| *id).collect();
        out.insert(self.root);
        out
    }

    /// Renames every node through `map`; unmapped ids are kept.
    pub fn relabel(&self, map: &BTreeMap<CarId, CarId>) -> Self {
        let m = |id: CarId| *map.get(&id).unwrap_or(&id);
        InfluenceGraph {
            axis: self.axis,
            root: m(self.root),
            nodes: self.nodes.iter().map(|&n| m(n)).collect(),
            inputs: self.inputs.iter().map(|&n| m(n)).collect(),
            edges: self
                .edges
                .iter()
                .map(|(&(to, from), &w)| ((m(to), m(from)), w))
                .collect(),
        }
    }

    pub(crate) fn edges_mut(&mut self) -> &mut BTreeMap<(CarId, CarId), W> {
        &mut self.edges
    }
}

/// True iff every non-input node is reachable from the root.
///
/// Input nodes other than the root (obstacles, scripted cars) have no
/// incoming edges by construction and are not required to be reachable.
pub fn has_directed_spanning_tree<W: Weight>(graph: &InfluenceGraph<W>) -> bool {
    let reach = graph.reachable_from_root();
    graph
        .nodes()
        .iter()
        .filter(|n| !graph.inputs().contains(n))
        .all(|n| reach.contains(n))
}

/// Rescales each non-root node's incoming weights so they sum to `total`,
/// preserving their proportions.
pub fn redistribute_weights<W: Weight>(
    graph: &InfluenceGraph<W>,
    total: W,
) -> Result<InfluenceGraph<W>, GraphError> {
    let mut out = graph.clone();
    for &node in graph.nodes() {
        if graph.is_input(node) {
            continue;
        }
        let sum = graph.in_weight(node);
        if graph.in_degree(node) == 0 {
            return Err(GraphError::IsolatedNode(node));
        }
        if sum == total {
            continue;
        }
        let edges = out.edges_mut();
        for (_, w) in edges.range_mut((node, CarId(0))..=(node, CarId(u32::MAX))) {
            *w = *w * total / sum;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::Ratio;

    fn chain(n: u32) -> InfluenceGraph<f64> {
        let mut g = InfluenceGraph::new(Axis::Y, CarId(0));
        for i in 1..n {
            g.add_edge(CarId(i - 1), CarId(i), 1.0).unwrap();
        }
        g
    }

    #[test]
    fn spanning_tree_examples() {
        let single: InfluenceGraph<f64> = InfluenceGraph::new(Axis::Y, CarId(0));
        assert!(has_directed_spanning_tree(&single));
        assert!(has_directed_spanning_tree(&chain(3)));

        let mut g = chain(2);
        g.add_node(CarId(2));
        assert!(!has_directed_spanning_tree(&g));
    }

    #[test]
    fn inputs_need_not_be_reachable() {
        let mut g = chain(3);
        g.add_input(CarId(7));
        g.add_edge(CarId(7), CarId(2), 1.0).unwrap();
        assert!(has_directed_spanning_tree(&g));
        assert!(g.add_edge(CarId(1), CarId(7), 1.0).is_err());
    }

    #[test]
    fn rejects_non_positive_weight() {
        let mut g: InfluenceGraph<f64> = InfluenceGraph::new(Axis::Y, CarId(0));
        assert_eq!(
            g.add_edge(CarId(0), CarId(1), 0.0),
            Err(GraphError::NonPositiveWeight {
                from: CarId(0),
                to: CarId(1)
            })
        );
    }

    #[test]
    fn redistribute_examples() {
        let mut g = InfluenceGraph::new(Axis::Y, CarId(0));
        g.add_edge(CarId(0), CarId(1), 1.0).unwrap();
        g.add_edge(CarId(0), CarId(3), 1.0).unwrap();
        g.add_edge(CarId(1), CarId(3), 1.0).unwrap();
        g.add_edge(CarId(0), CarId(4), 2.0).unwrap();
        g.add_edge(CarId(1), CarId(4), 1.0).unwrap();
        g.add_edge(CarId(0), CarId(5), 5.0).unwrap();
        let r = redistribute_weights(&g, 3.0).unwrap();
        assert_eq!(r.weight(CarId(0), CarId(3)), Some(1.5));
        assert_eq!(r.weight(CarId(1), CarId(3)), Some(1.5));
        assert_eq!(r.weight(CarId(0), CarId(4)), Some(2.0));
        assert_eq!(r.weight(CarId(1), CarId(4)), Some(1.0));

        let one = redistribute_weights(&g, 1.0).unwrap();
        assert_eq!(one.weight(CarId(0), CarId(5)), Some(1.0));
    }

    #[test]
    fn redistribute_isolated_node() {
        let mut g = chain(2);
        g.add_node(CarId(5));
        assert_eq!(
            redistribute_weights(&g, 1.0),
            Err(GraphError::IsolatedNode(CarId(5)))
        );
    }

    #[test]
    fn redistribute_is_exact_for_rationals() {
        let mut g = InfluenceGraph::new(Axis::Y, CarId(0));
        for (from, w) in [(0u32, 1i64), (1, 2), (2, 4)] {
            g.add_edge(CarId(from), CarId(3), Ratio::from_integer(w))
                .unwrap();
        }
        g.add_edge(CarId(0), CarId(1), Ratio::from_integer(1)).unwrap();
        g.add_edge(CarId(0), CarId(2), Ratio::from_integer(1)).unwrap();
        let r = redistribute_weights(&g, Ratio::from_integer(1)).unwrap();
        assert_eq!(r.in_weight(CarId(3)), Ratio::from_integer(1));
        assert_eq!(r.weight(CarId(2), CarId(3)), Some(Ratio::new(4, 7)));
    }

    #[test]
    fn diff_and_relabel() {
        let a = chain(3);
        let mut b = chain(3);
        b.remove_edge(CarId(1), CarId(2));
        b.add_edge(CarId(0), CarId(2), 1.0).unwrap();
        let d = a.diff(&b);
        assert_eq!(d.added, vec![(CarId(0), CarId(2))]);
        assert_eq!(d.removed, vec![(CarId(1), CarId(2))]);

        let map: BTreeMap<_, _> = [(CarId(1), CarId(2)), (CarId(2), CarId(1))].into();
        let r = a.relabel(&map);
        assert_eq!(r.weight(CarId(0), CarId(2)), Some(1.0));
        assert_eq!(r.weight(CarId(2), CarId(1)), Some(1.0));
    }
}

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{
    assign_levels, canonical_numbering, laplacian, Axis, GraphError, InfluenceGraph, LaplacianBundle, LevelMap,
    Numbering,
};
use crate::scalar::{lit, Real};
use crate::snapshot::{CarId, CarRole, CarState, FormationSnapshot};

/// Viewing-region and level-depth configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryParams {
    /// Full opening angle of the longitudinal viewing cone.
    #[serde(default = "default_aov_y")]
    pub aov_y_deg: f64,
    /// Full opening angle of the lateral viewing region.
    #[serde(default = "default_aov_x")]
    pub aov_x_deg: f64,
    /// Maximum number of levels an influence may span.
    #[serde(default = "default_depth")]
    pub influence_depth: u32,
    /// Advisory cap on nodes per level (boundary pseudo-car included).
    #[serde(default = "default_max_per_level")]
    pub max_per_level: usize,
    /// Angular margin applied at cone edges to suppress chattering.
    #[serde(default)]
    pub hysteresis_deg: f64,
}

fn default_aov_y() -> f64 {
    120.0
}
fn default_aov_x() -> f64 {
    180.0
}
fn default_depth() -> u32 {
    1
}
fn default_max_per_level() -> usize {
    4
}

impl Default for GeometryParams {
    fn default() -> Self {
        GeometryParams {
            aov_y_deg: default_aov_y(),
            aov_x_deg: default_aov_x(),
            influence_depth: default_depth(),
            max_per_level: default_max_per_level(),
            hysteresis_deg: 0.0,
        }
    }
}

impl GeometryParams {
    pub fn validate(&self) -> Result<(), GraphError> {
        let ok = self.aov_y_deg > 0.0
            && self.aov_y_deg <= self.aov_x_deg
            && self.aov_x_deg <= 180.0;
        if !ok {
            return Err(GraphError::InvalidParams(format!(
                "require 0 < aov_y ({}) <= aov_x ({}) <= 180",
                self.aov_y_deg, self.aov_x_deg
            )));
        }
        if self.influence_depth < 1 {
            return Err(GraphError::InvalidParams("influence_depth must be >= 1".into()));
        }
        if !(self.hysteresis_deg >= 0.0) {
            return Err(GraphError::InvalidParams("hysteresis_deg must be >= 0".into()));
        }
        Ok(())
    }

    fn aov(&self, axis: Axis) -> f64 {
        match axis {
            Axis::X => self.aov_x_deg,
            Axis::Y => self.aov_y_deg,
        }
    }
}

/// Inputs to graph construction beyond the snapshot itself.
#[derive(Clone, Debug)]
pub struct BuildContext<'a, T> {
    /// Common incoming weight sum `W`.
    pub weight_sum: T,
    /// Levels for every non-leader, non-obstacle car. Required for `X`.
    pub levels: Option<&'a LevelMap>,
    /// Cars whose lateral position is an external input.
    pub x_inputs: Option<&'a BTreeSet<CarId>>,
    /// How far ahead (along the road) an obstacle can be sensed.
    pub obstacle_range: T,
    /// Graph of the previous step, for the hysteresis margin.
    pub previous: Option<&'a InfluenceGraph<T>>,
}

impl<'a, T: Real> BuildContext<'a, T> {
    pub fn new(weight_sum: T) -> Self {
        BuildContext {
            weight_sum,
            levels: None,
            x_inputs: None,
            obstacle_range: T::max_value().unwrap_or_else(|| lit(1e300)),
            previous: None,
        }
    }

    fn is_x_input(&self, id: CarId) -> bool {
        self.x_inputs.is_some_and(|s| s.contains(&id))
    }
}

/// Both axis graphs plus the level map and canonical numbering they imply.
#[derive(Clone, Debug, PartialEq)]
pub struct FormationGraphs<T> {
    pub y: InfluenceGraph<T>,
    pub x: InfluenceGraph<T>,
    pub levels: LevelMap,
    pub numbering: Numbering,
}

impl<T: Real> FormationGraphs<T> {
    pub fn graph(&self, axis: Axis) -> &InfluenceGraph<T> {
        match axis {
            Axis::Y => &self.y,
            Axis::X => &self.x,
        }
    }

    /// Laplacians of one axis in canonical order.
    pub fn bundle(&self, axis: Axis) -> Result<LaplacianBundle<T>, GraphError> {
        let graph = self.graph(axis);
        let order: Vec<CarId> = self.numbering.order.iter().copied().filter(|id| graph.contains(*id)).collect();
        laplacian(graph, &order)
    }
}

/// Whether `target` lies in `viewer`'s viewing region of full angle `aov`.
///
/// The region is the set of points whose bearing from the `+Y` axis is at
/// most `aov / 2`; for the longitudinal axis the target must also be
/// strictly ahead.
fn in_view<T: Real>(viewer: &CarState<T>, target: &CarState<T>, aov_deg: f64, margin_deg: f64, strictly_ahead: bool) -> bool {
    let dx = target.x - viewer.x;
    let dy = target.y - viewer.y;
    if strictly_ahead && dy <= T::zero() {
        return false;
    }
    let bearing = dx.abs().atan2(dy);
    bearing <= lit::<T>((aov_deg / 2.0 + margin_deg).to_radians())
}

fn margin_for<T: Real>(ctx: &BuildContext<'_, T>, geom: &GeometryParams, from: CarId, to: CarId) -> f64 {
    match ctx.previous {
        Some(prev) if prev.weight(from, to).is_some() => geom.hysteresis_deg,
        Some(_) => -geom.hysteresis_deg,
        None => 0.0,
    }
}

fn check_distinct<T: Real>(snapshot: &FormationSnapshot<T>, ids: &[CarId]) -> Result<(), GraphError> {
    let points: Vec<(T, T)> = ids.iter().map(|id| (snapshot.cars[id].x, snapshot.cars[id].y)).collect();
    for (a, p) in points.iter().enumerate() {
        if let Some(b) = points[a + 1..].iter().position(|q| q == p) {
            return Err(GraphError::DegenerateGeometry(ids[a], ids[a + 1 + b]));
        }
    }
    Ok(())
}

/// Sets every non-input node's incoming weights to `total / in_degree`.
pub(crate) fn uniform_weights<T: Real>(graph: &mut InfluenceGraph<T>, total: T) {
    let mut degree: BTreeMap<CarId, usize> = BTreeMap::new();
    for (_, to, _) in graph.edges() {
        *degree.entry(to).or_default() += 1;
    }
    for ((to, _), w) in graph.edges_mut().iter_mut() {
        *w = total / lit::<T>(degree[to] as f64);
    }
}

/// Builds the influence graph of one axis from vehicle geometry.
///
/// Longitudinal: car `j` influences car `i` when `j` lies inside `i`'s
/// forward cone. Levels are computed on that cone graph, then edges spanning
/// more than `influence_depth` levels are dropped. The phantom leader takes
/// part in the cone test like any other car.
///
/// Lateral: regular cars are influenced by cars of the levels above (within
/// `influence_depth`) that lie in the lateral viewing region, and by their
/// immediate left and right neighbours in their own level. Boundary
/// pseudo-cars are influenced only by the boundary pseudo-car of the level
/// directly above; the first-level boundary is the root.
///
/// Obstacles are input nodes seen within `obstacle_range` ahead. Weights are
/// uniform, each non-input node receiving a total of `weight_sum`.
pub fn build_influence_graph<T: Real>(
    snapshot: &FormationSnapshot<T>,
    axis: Axis,
    geom: &GeometryParams,
    ctx: &BuildContext<'_, T>,
) -> Result<InfluenceGraph<T>, GraphError> {
    geom.validate()?;
    let mut graph = match axis {
        Axis::Y => base_y_graph(snapshot, geom, ctx)?,
        Axis::X => base_x_graph(snapshot, geom, ctx)?,
    };
    for obstacle in snapshot.ids_with_role(CarRole::Obstacle) {
        wire_obstacle(snapshot, obstacle, &mut graph, geom, ctx);
    }
    uniform_weights(&mut graph, ctx.weight_sum);
    Ok(graph)
}

fn base_y_graph<T: Real>(
    snapshot: &FormationSnapshot<T>,
    geom: &GeometryParams,
    ctx: &BuildContext<'_, T>,
) -> Result<InfluenceGraph<T>, GraphError> {
    if snapshot.leader().is_none() {
        return Err(GraphError::MissingLeader(Axis::Y));
    }
    let members: Vec<CarId> = snapshot
        .cars
        .iter()
        .filter(|(_, c)| matches!(c.role, CarRole::PhantomLeader | CarRole::Regular | CarRole::Obstacle))
        .map(|(id, _)| *id)
        .collect();
    check_distinct(snapshot, &members)?;

    let mut cone = InfluenceGraph::new(Axis::Y, CarId::LEADER);
    let regulars: Vec<CarId> = snapshot.ids_with_role(CarRole::Regular).collect();
    for &i in &regulars {
        cone.add_node(i);
        let viewer = &snapshot.cars[&i];
        for j in std::iter::once(CarId::LEADER).chain(regulars.iter().copied()) {
            let target = &snapshot.cars[&j];
            if j == i || target.y <= viewer.y {
                continue;
            }
            let margin = margin_for(ctx, geom, j, i);
            if in_view(viewer, target, geom.aov_y_deg, margin, true) {
                cone.add_edge(j, i, T::one())?;
            }
        }
    }

    let levels = assign_levels(&cone)?;
    let depth = geom.influence_depth;
    let mut pruned = InfluenceGraph::new(Axis::Y, CarId::LEADER);
    for &i in &regulars {
        pruned.add_node(i);
    }
    for (from, to, w) in cone.edges() {
        let span = levels[&to].saturating_sub(levels[&from]);
        if levels[&from] < levels[&to] && span <= depth {
            pruned.add_edge(from, to, w)?;
        }
    }
    Ok(pruned)
}

fn base_x_graph<T: Real>(
    snapshot: &FormationSnapshot<T>,
    geom: &GeometryParams,
    ctx: &BuildContext<'_, T>,
) -> Result<InfluenceGraph<T>, GraphError> {
    let levels = ctx.levels.ok_or(GraphError::MissingLevel(CarId::LEADER))?;
    let level_of = |id: CarId| levels.get(&id).copied().ok_or(GraphError::MissingLevel(id));

    let lateral: Vec<CarId> = snapshot
        .cars
        .iter()
        .filter(|(_, c)| matches!(c.role, CarRole::Boundary | CarRole::Regular))
        .map(|(id, _)| *id)
        .collect();
    let mut check: Vec<CarId> = lateral.clone();
    check.extend(snapshot.ids_with_role(CarRole::Obstacle));
    check_distinct(snapshot, &check)?;

    let boundaries: Vec<(CarId, u32)> = snapshot
        .ids_with_role(CarRole::Boundary)
        .map(|id| level_of(id).map(|l| (id, l)))
        .collect::<Result<_, _>>()?;
    let root = boundaries
        .iter()
        .min_by_key(|(id, l)| (*l, *id))
        .map(|(id, _)| *id)
        .ok_or(GraphError::MissingLeader(Axis::X))?;

    let mut graph = InfluenceGraph::new(Axis::X, root);
    for &id in &lateral {
        if ctx.is_x_input(id) {
            graph.add_input(id);
        } else {
            graph.add_node(id);
        }
    }

    for &(b, level) in &boundaries {
        if b == root {
            continue;
        }
        for &(above, l) in &boundaries {
            if l + 1 == level {
                graph.add_edge(above, b, T::one())?;
            }
        }
    }

    // Same-level lateral order, right to left.
    let mut by_level: BTreeMap<u32, Vec<CarId>> = BTreeMap::new();
    for &id in &lateral {
        by_level.entry(level_of(id)?).or_default().push(id);
    }
    for row in by_level.values_mut() {
        row.sort_by(|a, b| {
            let (xa, xb) = (snapshot.cars[a].x, snapshot.cars[b].x);
            xb.partial_cmp(&xa).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(b))
        });
    }

    let depth = geom.influence_depth;
    for &i in &lateral {
        let car = &snapshot.cars[&i];
        if car.role != CarRole::Regular || ctx.is_x_input(i) {
            continue;
        }
        let li = level_of(i)?;
        for &j in &lateral {
            let lj = level_of(j)?;
            if lj < li && li - lj <= depth {
                let margin = margin_for(ctx, geom, j, i);
                if in_view(car, &snapshot.cars[&j], geom.aov_x_deg, margin, false) {
                    graph.add_edge(j, i, T::one())?;
                }
            }
        }
        let row = &by_level[&li];
        let k = row.iter().position(|&c| c == i).expect("car is in its level row");
        if k > 0 {
            graph.add_edge(row[k - 1], i, T::one())?;
        }
        if k + 1 < row.len() {
            graph.add_edge(row[k + 1], i, T::one())?;
        }
    }
    Ok(graph)
}

/// Adds obstacle `obstacle` to `graph` as an input node with edges to every
/// car that senses it. Returns the cars it now influences.
fn wire_obstacle<T: Real>(
    snapshot: &FormationSnapshot<T>,
    obstacle: CarId,
    graph: &mut InfluenceGraph<T>,
    geom: &GeometryParams,
    ctx: &BuildContext<'_, T>,
) -> Vec<CarId> {
    let Some(obs) = snapshot.get(obstacle) else {
        return Vec::new();
    };
    graph.add_input(obstacle);
    let axis = graph.axis;
    let targets: Vec<CarId> = graph
        .nodes()
        .iter()
        .copied()
        .filter(|&id| !graph.is_input(id) && snapshot.role(id) == Some(CarRole::Regular))
        .filter(|id| {
            let car = &snapshot.cars[id];
            let ahead = obs.y - car.y;
            ahead <= ctx.obstacle_range
                && in_view(car, obs, geom.aov(axis), margin_for(ctx, geom, obstacle, *id), axis == Axis::Y)
        })
        .collect();
    for &t in &targets {
        graph
            .add_edge(obstacle, t, T::one())
            .expect("target is a non-input node");
    }
    targets
}

/// Cars that receive an obstacle edge but no edge from any other car.
pub fn corollary_violations<T: Real>(snapshot: &FormationSnapshot<T>, graph: &InfluenceGraph<T>) -> Vec<CarId> {
    let is_obstacle = |id: CarId| snapshot.role(id) == Some(CarRole::Obstacle);
    graph
        .nodes()
        .iter()
        .copied()
        .filter(|&id| {
            let mut from_obstacle = false;
            let mut from_other = false;
            for (from, _) in graph.in_edges(id) {
                if is_obstacle(from) {
                    from_obstacle = true;
                } else {
                    from_other = true;
                }
            }
            from_obstacle && !from_other
        })
        .collect()
}

/// Wires one obstacle into both axis graphs and re-normalises the weights of
/// the cars it reaches. Returns the updated graphs and, per axis, the cars
/// whose only influence is the obstacle.
pub fn obstacle_wiring<T: Real>(
    snapshot: &FormationSnapshot<T>,
    obstacle: CarId,
    graphs: &FormationGraphs<T>,
    geom: &GeometryParams,
    ctx: &BuildContext<'_, T>,
) -> (FormationGraphs<T>, Vec<(Axis, CarId)>) {
    let mut out = graphs.clone();
    let mut violations = Vec::new();
    for graph in [&mut out.y, &mut out.x] {
        wire_obstacle(snapshot, obstacle, graph, geom, ctx);
        uniform_weights(graph, ctx.weight_sum);
        violations.extend(corollary_violations(snapshot, graph).into_iter().map(|c| (graph.axis, c)));
    }
    (out, violations)
}

/// Assigns each boundary pseudo-car the level of the regular car nearest to
/// it along the road; with no regular cars, boundaries are ranked front to
/// back starting at level 1.
pub fn boundary_levels<T: Real>(snapshot: &FormationSnapshot<T>, levels: &LevelMap) -> LevelMap {
    let regulars: Vec<(CarId, T)> = snapshot
        .cars
        .iter()
        .filter(|(id, c)| c.role == CarRole::Regular && levels.contains_key(id))
        .map(|(id, c)| (*id, c.y))
        .collect();
    let mut out = LevelMap::new();
    let mut boundaries: Vec<(CarId, T)> = snapshot
        .ids_with_role(CarRole::Boundary)
        .map(|id| (id, snapshot.cars[&id].y))
        .collect();
    if regulars.is_empty() {
        boundaries.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal).then(a.0.cmp(&b.0)));
        for (k, (id, _)) in boundaries.into_iter().enumerate() {
            out.insert(id, k as u32 + 1);
        }
        return out;
    }
    for (b, yb) in boundaries {
        let nearest = regulars
            .iter()
            .min_by(|p, q| {
                let dp = (p.1 - yb).abs();
                let dq = (q.1 - yb).abs();
                dp.partial_cmp(&dq).unwrap_or(std::cmp::Ordering::Equal).then(p.0.cmp(&q.0))
            })
            .expect("non-empty");
        out.insert(b, levels[&nearest.0]);
    }
    out
}

/// Lateral graph of a formation without a road boundary: there is no
/// lateral reference, so every car is an input and keeps its lateral motion.
fn frozen_lateral_graph<T: Real>(snapshot: &FormationSnapshot<T>) -> InfluenceGraph<T> {
    let mut g = InfluenceGraph::new(Axis::X, CarId::LEADER);
    for (id, car) in &snapshot.cars {
        if matches!(car.role, CarRole::Regular | CarRole::Obstacle) {
            g.add_input(*id);
        }
    }
    g
}

/// Builds the longitudinal graph, derives levels, then builds the lateral
/// graph and the canonical numbering.
///
/// `fixed_levels` supplies levels for cars outside the longitudinal graph
/// (boundary pseudo-cars); missing boundaries are assigned with
/// [`boundary_levels`]. Without any boundary the lateral graph has no
/// dynamics: all cars are inputs of a graph rooted at the leader.
pub fn build_formation_graphs<T: Real>(
    snapshot: &FormationSnapshot<T>,
    geom: &GeometryParams,
    ctx: &BuildContext<'_, T>,
    fixed_levels: Option<&LevelMap>,
    previous: Option<&FormationGraphs<T>>,
) -> Result<FormationGraphs<T>, GraphError> {
    let y_ctx = BuildContext {
        previous: previous.map(|p| &p.y),
        ..ctx.clone()
    };
    let y = build_influence_graph(snapshot, Axis::Y, geom, &y_ctx)?;
    let mut levels = assign_levels(&y)?;
    let mut extra = boundary_levels(snapshot, &levels);
    if let Some(fixed) = fixed_levels {
        for (id, l) in fixed {
            if snapshot.role(*id) == Some(CarRole::Boundary) {
                extra.insert(*id, *l);
            }
        }
    }
    levels.extend(extra);

    let x = if snapshot.ids_with_role(CarRole::Boundary).next().is_none() {
        frozen_lateral_graph(snapshot)
    } else {
        let x_ctx = BuildContext {
            levels: Some(&levels),
            previous: previous.map(|p| &p.x),
            ..ctx.clone()
        };
        build_influence_graph(snapshot, Axis::X, geom, &x_ctx)?
    };
    let numbering = canonical_numbering(snapshot, &levels)?;
    Ok(FormationGraphs {
        y,
        x,
        levels,
        numbering,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formation::has_directed_spanning_tree;

    fn car(role: CarRole, x: f64, y: f64) -> CarState<f64> {
        CarState::at_rest(role, x, y)
    }

    #[test]
    fn cone_excludes_wide_car() {
        // Car 1 at the origin; 2 and 4 inside its 120 degree cone, 3 outside.
        let s = FormationSnapshot::new()
            .with(0, car(CarRole::PhantomLeader, 0.0, 200.0))
            .with(1, car(CarRole::Regular, 0.0, 0.0))
            .with(2, car(CarRole::Regular, -20.0, 40.0))
            .with(3, car(CarRole::Regular, 80.0, 20.0))
            .with(4, car(CarRole::Regular, 30.0, 50.0));
        let geom = GeometryParams::default();
        let ctx = BuildContext::new(1.0);
        let g = build_influence_graph(&s, Axis::Y, &geom, &ctx).unwrap();
        assert!(g.weight(CarId(3), CarId(1)).is_none());
        assert!(g.weight(CarId(2), CarId(1)).is_some());
        assert!(g.weight(CarId(4), CarId(1)).is_some());
    }

    #[test]
    fn single_car_follows_leader() {
        let s = FormationSnapshot::new()
            .with(0, car(CarRole::PhantomLeader, 0.0, 50.0))
            .with(1, car(CarRole::Regular, 0.0, 0.0));
        let ctx = BuildContext::new(1.0);
        let g = build_influence_graph(&s, Axis::Y, &GeometryParams::default(), &ctx).unwrap();
        assert_eq!(g.edge_count(), 1);
        assert_eq!(g.weight(CarId(0), CarId(1)), Some(1.0));
    }

    #[test]
    fn deep_edges_are_pruned() {
        // Straight column: car 3 sees 2, 1 and the leader, keeps only 2.
        let s = FormationSnapshot::new()
            .with(0, car(CarRole::PhantomLeader, 0.0, 0.0))
            .with(1, car(CarRole::Regular, 0.0, -50.0))
            .with(2, car(CarRole::Regular, 0.0, -100.0))
            .with(3, car(CarRole::Regular, 0.0, -150.0));
        let ctx = BuildContext::new(1.0);
        let g = build_influence_graph(&s, Axis::Y, &GeometryParams::default(), &ctx).unwrap();
        let edges: Vec<_> = g.edges().map(|(f, t, _)| (f.0, t.0)).collect();
        assert_eq!(edges, vec![(0, 1), (1, 2), (2, 3)]);
    }

    #[test]
    fn missing_leader() {
        let s = FormationSnapshot::new().with(1, car(CarRole::Regular, 0.0, 0.0));
        let ctx = BuildContext::new(1.0);
        assert_eq!(
            build_influence_graph(&s, Axis::Y, &GeometryParams::default(), &ctx),
            Err(GraphError::MissingLeader(Axis::Y))
        );
    }

    #[test]
    fn coincident_cars() {
        let s = FormationSnapshot::new()
            .with(0, car(CarRole::PhantomLeader, 0.0, 50.0))
            .with(1, car(CarRole::Regular, 0.0, 0.0))
            .with(2, car(CarRole::Regular, 0.0, 0.0));
        let ctx = BuildContext::new(1.0);
        assert_eq!(
            build_influence_graph(&s, Axis::Y, &GeometryParams::default(), &ctx),
            Err(GraphError::DegenerateGeometry(CarId(1), CarId(2)))
        );
    }

    fn abreast() -> FormationSnapshot<f64> {
        FormationSnapshot::new()
            .with(0, car(CarRole::PhantomLeader, -30.0, 50.0))
            .with(1, car(CarRole::Boundary, 0.0, 0.0))
            .with(2, car(CarRole::Regular, -30.0, 0.0))
            .with(3, car(CarRole::Regular, -60.0, 0.0))
            .with(4, car(CarRole::Regular, -90.0, 0.0))
    }

    #[test]
    fn abreast_cars_are_lateral_neighbours() {
        let s = abreast();
        let ctx = BuildContext::new(1.0);
        let g = build_formation_graphs(&s, &GeometryParams::default(), &ctx, None, None).unwrap();
        let x = &g.x;
        assert_eq!(x.root, CarId(1));
        for (a, b) in [(2, 3), (3, 4)] {
            assert!(x.weight(CarId(a), CarId(b)).is_some());
            assert!(x.weight(CarId(b), CarId(a)).is_some());
        }
        // Boundary influences its neighbour, never the other way round.
        assert!(x.weight(CarId(1), CarId(2)).is_some());
        assert!(x.weight(CarId(2), CarId(1)).is_none());
        assert!(x.weight(CarId(2), CarId(4)).is_none());
        assert!(has_directed_spanning_tree(x));
        assert_eq!(g.levels[&CarId(1)], 1);
    }

    #[test]
    fn lane_changer_becomes_input() {
        let s = abreast();
        let inputs: BTreeSet<CarId> = [CarId(3)].into();
        let ctx = BuildContext {
            x_inputs: Some(&inputs),
            ..BuildContext::new(1.0)
        };
        let g = build_formation_graphs(&s, &GeometryParams::default(), &ctx, None, None).unwrap();
        assert!(g.x.is_input(CarId(3)));
        assert_eq!(g.x.in_degree(CarId(3)), 0);
        assert!(g.x.weight(CarId(3), CarId(4)).is_some());
    }

    #[test]
    fn obstacle_behind_is_ignored() {
        let mut s = abreast();
        s.insert(CarId(9), car(CarRole::Obstacle, -45.0, -100.0));
        let ctx = BuildContext {
            obstacle_range: 50.0,
            ..BuildContext::new(1.0)
        };
        let g = build_formation_graphs(&s, &GeometryParams::default(), &ctx, None, None).unwrap();
        assert!(g.y.out_neighbors(CarId(9)).next().is_none());
        assert!(g.x.out_neighbors(CarId(9)).next().is_none());
    }

    #[test]
    fn obstacle_as_sole_influence_violates_corollary() {
        let s = FormationSnapshot::new()
            .with(0, car(CarRole::PhantomLeader, 200.0, 50.0))
            .with(1, car(CarRole::Boundary, 10.0, 0.0))
            .with(2, car(CarRole::Regular, 0.0, 0.0));
        let ctx = BuildContext::new(1.0);
        let geom = GeometryParams::default();
        let base = build_formation_graphs(&s, &geom, &ctx, None, None);
        // The leader is outside car 2's cone, so it is unreachable.
        assert!(base.is_err());

        let s = s.with(0, car(CarRole::PhantomLeader, 0.0, 200.0));
        let base = build_formation_graphs(&s, &geom, &ctx, None, None).unwrap();
        let mut s2 = s.clone();
        s2.insert(CarId(9), car(CarRole::Obstacle, 0.0, 20.0));
        let (wired, violations) = obstacle_wiring(&s2, CarId(9), &base, &geom, &ctx);
        assert!(wired.y.weight(CarId(9), CarId(2)).is_some());
        assert!(violations.is_empty(), "car 2 also sees the leader");

        let mut lone = InfluenceGraph::new(Axis::Y, CarId(0));
        lone.add_node(CarId(2));
        lone.add_input(CarId(9));
        lone.add_edge(CarId(9), CarId(2), 1.0).unwrap();
        assert_eq!(corollary_violations(&s2, &lone), vec![CarId(2)]);
    }

    #[test]
    fn geometry_validation() {
        let bad = GeometryParams {
            aov_y_deg: 200.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = GeometryParams {
            influence_depth: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(GeometryParams::default().validate().is_ok());
    }

    #[test]
    fn hysteresis_keeps_existing_edge() {
        // Car 2 sits just outside car 1's cone (bearing ~60.9 degrees).
        let s = FormationSnapshot::new()
            .with(0, car(CarRole::PhantomLeader, 0.0, 500.0))
            .with(1, car(CarRole::Regular, 0.0, 0.0))
            .with(2, car(CarRole::Regular, 36.0, 20.0));
        let geom = GeometryParams {
            hysteresis_deg: 2.0,
            ..Default::default()
        };
        let ctx = BuildContext::new(1.0);
        let fresh = build_influence_graph(&s, Axis::Y, &geom, &ctx).unwrap();
        assert!(fresh.weight(CarId(2), CarId(1)).is_none());

        let mut prev = fresh.clone();
        prev.add_edge(CarId(2), CarId(1), 0.5).unwrap();
        let ctx = BuildContext {
            previous: Some(&prev),
            ..BuildContext::new(1.0)
        };
        let kept = build_influence_graph(&s, Axis::Y, &geom, &ctx).unwrap();
        assert!(kept.weight(CarId(2), CarId(1)).is_some());
    }
}

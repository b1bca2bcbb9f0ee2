use std::collections::BTreeMap;

use super::{GraphError, InfluenceGraph};
use crate::scalar::{Real, Weight};
use crate::snapshot::{CarId, CarRole, FormationSnapshot};

/// Level (hop depth from the phantom leader) of every car.
pub type LevelMap = BTreeMap<CarId, u32>;

/// Assigns each longitudinal-graph node its level.
///
/// The level of a car is the length of the longest directed path from the
/// root, ignoring edges out of input nodes. On an unpruned viewing-cone
/// graph a car typically sees several levels ahead at once, so only the
/// longest path separates rows of cars; once edges spanning more than one
/// level are pruned, every path into a car has this length and it equals
/// the shortest hop count as well.
pub fn assign_levels<W: Weight>(graph: &InfluenceGraph<W>) -> Result<LevelMap, GraphError> {
    let (order, succ) = graph.dense_successors();
    let member: Vec<bool> = order
        .iter()
        .map(|n| *n == graph.root || !graph.inputs().contains(n))
        .collect();

    let reach = graph.reachable_from_root();
    if let Some((lost, _)) = order.iter().zip(&member).find(|(n, m)| **m && !reach.contains(n)) {
        return Err(GraphError::Unreachable(*lost));
    }

    // Kahn's algorithm over the non-input subgraph, relaxing longest paths.
    let mut indegree = vec![0usize; order.len()];
    for (from, next) in succ.iter().enumerate() {
        if member[from] {
            for &to in next {
                if to != from {
                    indegree[to] += 1;
                }
            }
        }
    }
    let mut levels = vec![0u32; order.len()];
    let mut ready: Vec<usize> = (0..order.len()).filter(|&n| member[n] && indegree[n] == 0).collect();
    let mut done = 0usize;
    while let Some(n) = ready.pop() {
        done += 1;
        let here = levels[n];
        for &next in &succ[n] {
            if next == n {
                continue;
            }
            levels[next] = levels[next].max(here + 1);
            indegree[next] -= 1;
            if indegree[next] == 0 {
                ready.push(next);
            }
        }
    }
    let members = member.iter().filter(|m| **m).count();
    if done != members {
        let stuck = (0..order.len())
            .find(|&n| member[n] && indegree[n] > 0)
            .map(|n| order[n])
            .expect("some node left unresolved");
        return Err(GraphError::Cyclic(stuck));
    }
    Ok(order
        .iter()
        .zip(&member)
        .zip(&levels)
        .filter(|((_, m), _)| **m)
        .map(|((id, _), l)| (*id, *l))
        .collect())
}

/// Canonical car numbering.
///
/// `order[k]` is the car that receives canonical number `k`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Numbering {
    pub order: Vec<CarId>,
}

impl Numbering {
    /// Map from original id to canonical number.
    pub fn relabel_map(&self) -> BTreeMap<CarId, CarId> {
        self.order
            .iter()
            .enumerate()
            .map(|(k, &id)| (id, CarId(k as u32)))
            .collect()
    }

    pub fn position(&self, id: CarId) -> Option<usize> {
        self.order.iter().position(|&c| c == id)
    }

    pub fn is_identity(&self) -> bool {
        self.order
            .iter()
            .enumerate()
            .all(|(k, id)| id.0 as usize == k)
    }

    /// Applies the numbering to a snapshot.
    pub fn apply<T: Real>(&self, snapshot: &FormationSnapshot<T>) -> FormationSnapshot<T> {
        let map = self.relabel_map();
        let mut out = FormationSnapshot::new();
        for (id, car) in &snapshot.cars {
            out.insert(*map.get(id).unwrap_or(id), *car);
        }
        out
    }

    pub fn apply_levels(&self, levels: &LevelMap) -> LevelMap {
        let map = self.relabel_map();
        levels
            .iter()
            .map(|(id, l)| (*map.get(id).unwrap_or(id), *l))
            .collect()
    }
}

/// Orders cars by level, then right to left within a level (the leftmost
/// car gets the highest number), ties broken by original id.
///
/// The phantom leader is always first; obstacles follow it directly so that
/// their Laplacian columns sit left of every car they influence.
pub fn canonical_numbering<T: Real>(
    snapshot: &FormationSnapshot<T>,
    levels: &LevelMap,
) -> Result<Numbering, GraphError> {
    let mut order = Vec::with_capacity(snapshot.len());
    if snapshot.leader().is_some() {
        order.push(CarId::LEADER);
    }
    order.extend(snapshot.ids_with_role(CarRole::Obstacle));

    let mut ranked = Vec::new();
    for (&id, car) in &snapshot.cars {
        if matches!(car.role, CarRole::PhantomLeader | CarRole::Obstacle) {
            continue;
        }
        let level = *levels.get(&id).ok_or(GraphError::MissingLevel(id))?;
        ranked.push((level, car.x, id));
    }
    ranked.sort_by(|a, b| {
        a.0.cmp(&b.0)
            .then(b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal))
            .then(a.2.cmp(&b.2))
    });
    order.extend(ranked.into_iter().map(|(_, _, id)| id));
    Ok(Numbering { order })
}

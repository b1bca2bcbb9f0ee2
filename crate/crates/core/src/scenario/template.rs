use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::equilibrium::{compute_z_local, EquilibriumError};
use crate::formation::{InfluenceGraph, LevelMap};
use crate::snapshot::{CarId, CarRole, FormationSnapshot};

/// Desired lateral shape, in multiples of `g_x` from each level's boundary.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Template {
    /// The car with lateral rank `r` in its level sits at `r`.
    #[default]
    Uniform,
    /// Rank `r` in level `l` sits at `r * scales[l - 1]`; levels beyond the
    /// list reuse its last entry.
    LevelScales { scales: Vec<f64> },
    /// Per-car values; cars not listed sit at 0.
    Explicit { x_f: BTreeMap<CarId, f64> },
}

/// Lateral rank of every regular car counted from its level's boundary
/// (rank 1 is nearest the boundary). Cars in `skip` are left out.
pub fn lateral_ranks(
    snapshot: &FormationSnapshot<f64>,
    levels: &LevelMap,
    skip: &BTreeSet<CarId>,
) -> BTreeMap<CarId, u32> {
    let mut rows: BTreeMap<u32, Vec<(f64, CarId)>> = BTreeMap::new();
    for (id, car) in &snapshot.cars {
        if car.role != CarRole::Regular || skip.contains(id) {
            continue;
        }
        if let Some(&l) = levels.get(id) {
            rows.entry(l).or_default().push((car.x, *id));
        }
    }
    let mut out = BTreeMap::new();
    for row in rows.values_mut() {
        row.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        for (r, (_, id)) in row.iter().enumerate() {
            out.insert(*id, r as u32 + 1);
        }
    }
    out
}

/// Template value `x_f` for every ranked car.
pub fn template_vector(template: &Template, ranks: &BTreeMap<CarId, u32>, levels: &LevelMap) -> BTreeMap<CarId, f64> {
    ranks
        .iter()
        .map(|(id, &r)| {
            let v = match template {
                Template::Uniform => r as f64,
                Template::LevelScales { scales } => {
                    let l = levels.get(id).copied().unwrap_or(1).max(1) as usize;
                    let s = scales.get(l - 1).or(scales.last()).copied().unwrap_or(1.0);
                    r as f64 * s
                }
                Template::Explicit { x_f } => x_f.get(id).copied().unwrap_or(0.0),
            };
            (*id, v)
        })
        .collect()
}

/// Desired offsets from the lateral root, positive away from the boundary.
///
/// Boundaries keep their actual offset; a regular car sits `g_x * x_f` past
/// its level's boundary (or past the root if the level has none).
pub fn desired_offsets(
    snapshot: &FormationSnapshot<f64>,
    x_f: &BTreeMap<CarId, f64>,
    levels: &LevelMap,
    g_x: f64,
    root_x: f64,
) -> BTreeMap<CarId, f64> {
    let mut anchors: BTreeMap<u32, f64> = BTreeMap::new();
    let mut out = BTreeMap::new();
    for (id, car) in &snapshot.cars {
        if car.role == CarRole::Boundary {
            let d = root_x - car.x;
            out.insert(*id, d);
            if let Some(&l) = levels.get(id) {
                anchors.entry(l).or_insert(d);
            }
        }
    }
    for (id, v) in x_f {
        let anchor = levels.get(id).and_then(|l| anchors.get(l)).copied().unwrap_or(0.0);
        out.insert(*id, anchor + g_x * v);
    }
    out
}

/// Offset constants `z` for every non-input regular car of `graph_x`,
/// computed from in-neighbour information only.
///
/// Input cars contribute their actual offset. An obstacle contributes a
/// virtual offset `g_x` beyond the car's own desired offset, on the
/// obstacle's side.
pub fn local_offsets(
    snapshot: &FormationSnapshot<f64>,
    graph_x: &InfluenceGraph<f64>,
    desired: &BTreeMap<CarId, f64>,
    g_x: f64,
) -> Result<BTreeMap<CarId, f64>, EquilibriumError> {
    let root_x = snapshot.get(graph_x.root).map_or(0.0, |c| c.x);
    let mut out = BTreeMap::new();
    for &i in graph_x.nodes() {
        if i == graph_x.root || graph_x.is_input(i) || snapshot.role(i) != Some(CarRole::Regular) {
            continue;
        }
        let Some(&di) = desired.get(&i) else { continue };
        let mut nbrs = Vec::new();
        for (j, w) in graph_x.in_edges(i) {
            let actual = root_x - snapshot.cars[&j].x;
            let dj = match snapshot.role(j) {
                Some(CarRole::Obstacle) => {
                    let side = if actual >= di { 1.0 } else { -1.0 };
                    di + side * g_x
                }
                _ if graph_x.is_input(j) => actual,
                _ => desired.get(&j).copied().unwrap_or(actual),
            };
            nbrs.push((w, dj));
        }
        out.insert(i, compute_z_local(di, &nbrs, g_x)?);
    }
    Ok(out)
}

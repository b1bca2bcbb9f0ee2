//! Stability analysis of every graph a scenario can reach.
//!
//! Modes are the initial formation plus one per obstacle appearance and
//! lane change. Each mode's snapshot is the initial formation carried
//! forward at constant velocity to the event time, with the obstacles
//! present at that time and the lane-changing car as a lateral input.

use std::collections::BTreeSet;

use serde::Serialize;

use super::{Event, Scenario};
use crate::formation::{
    boundary_levels, build_formation_graphs, has_directed_spanning_tree, Axis, BuildContext, FormationGraphs,
    LevelMap,
};
use crate::snapshot::{CarId, CarRole, CarState, FormationSnapshot};
use crate::stability::{analyze_reduced, block_diagonal_margin, StabilityReport};

#[derive(Clone, Debug, Serialize)]
pub struct AxisAnalysis {
    pub spanning_tree: bool,
    pub triangular: bool,
    /// Row order of the reduced Laplacian.
    pub state_ids: Vec<CarId>,
    #[serde(flatten)]
    pub report: StabilityReport<f64>,
    /// Largest eigenvalue of the symmetric part of `P Γ + Γᵀ P` for the
    /// block-diagonal candidate `P`; negative means it certifies the mode.
    pub block_diagonal_margin: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ModeAnalysis {
    pub label: String,
    pub t: f64,
    pub levels: LevelMap,
    pub y: AxisAnalysis,
    pub x: AxisAnalysis,
}

#[derive(Clone, Debug, Serialize)]
pub struct ScenarioAnalysis {
    pub name: String,
    pub modes: Vec<ModeAnalysis>,
    pub all_hurwitz: bool,
    /// Every mode's longitudinal certificate is valid for the same gains,
    /// so one quadratic function serves the whole switched system.
    pub common_certificate: bool,
}

/// A reachable configuration: snapshot plus lateral inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Mode {
    pub label: String,
    pub t: f64,
    pub snapshot: FormationSnapshot<f64>,
    pub x_inputs: BTreeSet<CarId>,
}

fn extrapolate(cars: &FormationSnapshot<f64>, t: f64) -> FormationSnapshot<f64> {
    let mut s = cars.clone();
    for c in s.cars.values_mut() {
        c.x += c.vx * t;
        c.y += c.vy * t;
    }
    s
}

/// Enumerates the analysis modes of a scenario.
pub fn modes(scenario: &Scenario) -> Vec<Mode> {
    let mut out = vec![Mode {
        label: "initial".to_string(),
        t: 0.0,
        snapshot: scenario.cars.clone(),
        x_inputs: BTreeSet::new(),
    }];
    let mut order: Vec<(usize, &Event)> = scenario.events.iter().enumerate().collect();
    order.sort_by(|a, b| a.1.time().total_cmp(&b.1.time()).then(a.0.cmp(&b.0)));
    let mut obstacles: Vec<(CarId, CarState<f64>)> = Vec::new();
    for (_, event) in order {
        let t = event.time();
        match event {
            Event::ObstacleAppear {
                id, x_length, y_length, ..
            } => {
                obstacles.push((*id, CarState::at_rest(CarRole::Obstacle, *x_length, *y_length)));
                let mut snapshot = extrapolate(&scenario.cars, t);
                snapshot.cars.extend(obstacles.iter().copied());
                out.push(Mode {
                    label: format!("obstacle {id} appears"),
                    t,
                    snapshot,
                    x_inputs: BTreeSet::new(),
                });
            }
            Event::ObstacleRemove { id, .. } => obstacles.retain(|(o, _)| o != id),
            Event::LaneChange { car, .. } => {
                let mut snapshot = extrapolate(&scenario.cars, t);
                snapshot.cars.extend(obstacles.iter().copied());
                out.push(Mode {
                    label: format!("car {car} changes lane"),
                    t,
                    snapshot,
                    x_inputs: [*car].into(),
                });
            }
            Event::FormationChange { .. } | Event::GyChange { .. } => {}
        }
    }
    out
}

fn axis_analysis(graphs: &FormationGraphs<f64>, axis: Axis, k: f64, b: f64) -> Result<AxisAnalysis, String> {
    let bundle = graphs.bundle(axis).map_err(|e| e.to_string())?;
    let report = analyze_reduced(&bundle.reduced, k, b);
    Ok(AxisAnalysis {
        spanning_tree: has_directed_spanning_tree(graphs.graph(axis)),
        triangular: bundle.reduced_is_triangular(),
        state_ids: bundle.state_ids.clone(),
        block_diagonal_margin: block_diagonal_margin(&bundle.reduced, k, b),
        report,
    })
}

/// Longitudinal and lateral stability of every mode.
///
/// Boundary levels are fixed from the initial formation, as in a run.
pub fn analyze_scenario(scenario: &Scenario) -> Result<ScenarioAnalysis, String> {
    let g = &scenario.gains;
    let mut fixed: Option<LevelMap> = None;
    let mut out = Vec::new();
    for mode in modes(scenario) {
        let ctx = BuildContext {
            x_inputs: Some(&mode.x_inputs),
            obstacle_range: scenario.obstacle_range(),
            ..BuildContext::new(g.weight_sum)
        };
        let first = build_formation_graphs(&mode.snapshot, &scenario.geometry, &ctx, fixed.as_ref(), None)
            .map_err(|e| format!("{}: {e}", mode.label))?;
        let levels = fixed.get_or_insert_with(|| boundary_levels(&mode.snapshot, &first.levels));
        let graphs = build_formation_graphs(&mode.snapshot, &scenario.geometry, &ctx, Some(levels), None)
            .map_err(|e| format!("{}: {e}", mode.label))?;
        let label = |e: String| format!("{}: {e}", mode.label);
        out.push(ModeAnalysis {
            y: axis_analysis(&graphs, Axis::Y, g.k, g.b).map_err(label)?,
            x: axis_analysis(&graphs, Axis::X, g.k_x, g.b_x).map_err(label)?,
            levels: graphs.levels,
            label: mode.label,
            t: mode.t,
        });
    }
    Ok(ScenarioAnalysis {
        name: scenario.name.clone(),
        all_hurwitz: out.iter().all(|m| m.y.report.hurwitz && m.x.report.hurwitz),
        common_certificate: out
            .iter()
            .all(|m| m.y.report.lyapunov.as_ref().is_some_and(|c| c.is_valid())),
        modes: out,
    })
}

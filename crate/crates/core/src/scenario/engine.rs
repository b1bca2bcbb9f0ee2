use std::collections::{BTreeMap, BTreeSet};

use log::{debug, info, warn};
use nalgebra::DVector;
use thiserror::Error;

use super::template::{desired_offsets, lateral_ranks, local_offsets, template_vector, Template};
use super::trace::{EventRecord, Sample, SwitchRecord, Trace};
use super::{Event, Scenario};
use crate::dynamics::{quantize, step, DynamicsError, GainParams, InputProfile, StepContext};
use crate::equilibrium::EquilibriumError;
use crate::formation::{
    boundary_levels, build_formation_graphs, corollary_violations, has_directed_spanning_tree, Axis,
    BuildContext, FormationGraphs, GraphError, LevelMap,
};
use crate::snapshot::{CarId, CarRole, CarState, FormationSnapshot};
use crate::stability::impulse_admissible;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("t = {t}: the {axis} graph lost its spanning tree")]
    SpanningTreeLost { t: f64, axis: Axis },
    #[error("t = {t}: state of car {car} is no longer finite")]
    NonFiniteState { t: f64, car: CarId },
    #[error("t = {t}: {source}")]
    Graph { t: f64, source: GraphError },
    #[error("t = {t}: {source}")]
    Equilibrium { t: f64, source: EquilibriumError },
    #[error("t = {t}: {message}")]
    Invalid { t: f64, message: String },
}

/// A lateral manoeuvre in progress. Times are already quantized to steps.
#[derive(Clone, Debug, PartialEq)]
pub struct LaneChange {
    pub car: CarId,
    pub t0: f64,
    pub t1: f64,
    pub x_start: f64,
    pub x_target: f64,
    end_step: usize,
}

/// Position and velocity of a lane-changing car: a cubic ease from
/// `x_start` to `x_target` with zero velocity at both ends.
pub fn lane_change_input(lc: &LaneChange, t: f64) -> (f64, f64) {
    let span = lc.t1 - lc.t0;
    let u = ((t - lc.t0) / span).clamp(0.0, 1.0);
    let dx = lc.x_target - lc.x_start;
    let x = lc.x_start + dx * u * u * (3.0 - 2.0 * u);
    let v = if (0.0..1.0).contains(&u) && u > 0.0 {
        dx * 6.0 * u * (1.0 - u) / span
    } else {
        0.0
    };
    (x, v)
}

struct Inputs<'a> {
    t: f64,
    lanes: &'a [LaneChange],
}

impl InputProfile<f64> for Inputs<'_> {
    fn input_state(&self, id: CarId, axis: Axis, base: &CarState<f64>, tau: f64) -> (f64, f64) {
        if axis == Axis::X {
            if let Some(lc) = self.lanes.iter().find(|l| l.car == id) {
                return lane_change_input(lc, self.t + tau);
            }
            return (base.x + base.vx * tau, base.vx);
        }
        (base.y + base.vy * tau, base.vy)
    }
}

struct Pending {
    step: usize,
    order: usize,
    event: Event,
}

/// Step-by-step simulation of one scenario.
pub struct Engine {
    name: String,
    snapshot: FormationSnapshot<f64>,
    step: usize,
    total_steps: usize,
    dt: f64,
    leader_v0: f64,
    gains: GainParams<f64>,
    geometry: crate::formation::GeometryParams,
    explicit_range: Option<f64>,
    template: Template,
    ranks: BTreeMap<CarId, u32>,
    ranked_levels: LevelMap,
    fixed_levels: LevelMap,
    graphs: FormationGraphs<f64>,
    lanes: Vec<LaneChange>,
    pending: Vec<Pending>,
    violations: BTreeSet<(Axis, CarId)>,
    offsets: BTreeMap<CarId, f64>,
    events: Vec<EventRecord>,
    switches: Vec<SwitchRecord>,
    record_every: usize,
}

impl Engine {
    pub fn new(scenario: &Scenario) -> Result<Self, EngineError> {
        let dt = scenario.integration.dt;
        let mut pending: Vec<Pending> = scenario
            .events
            .iter()
            .enumerate()
            .map(|(order, e)| Pending {
                step: quantize(e.time(), dt),
                order,
                event: e.clone(),
            })
            .collect();
        pending.sort_by_key(|p| (p.step, p.order));

        let mut engine = Engine {
            name: scenario.name.clone(),
            snapshot: scenario.cars.clone(),
            step: 0,
            total_steps: scenario.integration.steps(),
            dt,
            leader_v0: scenario.leader_v0_speed,
            gains: scenario.gains.clone(),
            geometry: scenario.geometry.clone(),
            explicit_range: scenario.obstacle_range_length,
            template: scenario.template.clone(),
            ranks: BTreeMap::new(),
            ranked_levels: LevelMap::new(),
            fixed_levels: LevelMap::new(),
            graphs: FormationGraphs {
                y: crate::formation::InfluenceGraph::new(Axis::Y, CarId::LEADER),
                x: crate::formation::InfluenceGraph::new(Axis::X, CarId::LEADER),
                levels: LevelMap::new(),
                numbering: crate::formation::Numbering { order: Vec::new() },
            },
            lanes: Vec::new(),
            pending,
            violations: BTreeSet::new(),
            offsets: BTreeMap::new(),
            events: Vec::new(),
            switches: Vec::new(),
            record_every: scenario.record_every_steps.max(1),
        };
        let initial = engine.build(None)?;
        engine.fixed_levels = boundary_levels(&engine.snapshot, &initial.levels);
        engine.graphs = engine.build(None)?;
        engine.check_trees()?;
        engine.refresh_ranks(true);
        Ok(engine)
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.dt
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.total_steps
    }

    pub fn snapshot(&self) -> &FormationSnapshot<f64> {
        &self.snapshot
    }

    pub fn graphs(&self) -> &FormationGraphs<f64> {
        &self.graphs
    }

    pub fn leader_v0(&self) -> f64 {
        self.leader_v0
    }

    pub fn gains(&self) -> &GainParams<f64> {
        &self.gains
    }

    /// Offset constants used in the most recent step.
    pub fn offsets(&self) -> &BTreeMap<CarId, f64> {
        &self.offsets
    }

    /// Current desired lateral offsets from the boundary root.
    pub fn desired(&self) -> BTreeMap<CarId, f64> {
        let x_f = template_vector(&self.template, &self.ranks, &self.graphs.levels);
        desired_offsets(&self.snapshot, &x_f, &self.graphs.levels, self.gains.g_x, self.root_x())
    }

    pub fn events(&self) -> &[EventRecord] {
        &self.events
    }

    pub fn switches(&self) -> &[SwitchRecord] {
        &self.switches
    }

    pub fn lane_changes(&self) -> &[LaneChange] {
        &self.lanes
    }

    /// Mutable access for callers that script their own perturbations.
    pub fn snapshot_mut(&mut self) -> &mut FormationSnapshot<f64> {
        &mut self.snapshot
    }

    fn root_x(&self) -> f64 {
        self.snapshot.get(self.graphs.x.root).map_or(0.0, |c| c.x)
    }

    fn obstacle_range(&self) -> f64 {
        self.explicit_range
            .unwrap_or(self.geometry.influence_depth as f64 * self.gains.g_y / self.gains.weight_sum)
    }

    fn x_inputs(&self) -> BTreeSet<CarId> {
        self.lanes.iter().map(|l| l.car).collect()
    }

    fn build(&self, previous: Option<&FormationGraphs<f64>>) -> Result<FormationGraphs<f64>, EngineError> {
        let inputs = self.x_inputs();
        let ctx = BuildContext {
            x_inputs: Some(&inputs),
            obstacle_range: self.obstacle_range(),
            ..BuildContext::new(self.gains.weight_sum)
        };
        let fixed = (!self.fixed_levels.is_empty()).then_some(&self.fixed_levels);
        let t = self.time();
        build_formation_graphs(&self.snapshot, &self.geometry, &ctx, fixed, previous).map_err(|e| match e {
            GraphError::Unreachable(_) | GraphError::IsolatedNode(_) => EngineError::SpanningTreeLost { t, axis: Axis::Y },
            GraphError::MissingLeader(axis) => EngineError::SpanningTreeLost { t, axis },
            source => EngineError::Graph { t, source },
        })
    }

    fn check_trees(&self) -> Result<(), EngineError> {
        let t = self.time();
        for g in [&self.graphs.y, &self.graphs.x] {
            if !has_directed_spanning_tree(g) {
                return Err(EngineError::SpanningTreeLost { t, axis: g.axis });
            }
        }
        Ok(())
    }

    fn log(&mut self, kind: &str, car: Option<CarId>, admissible: Option<bool>, note: Option<String>) {
        info!("t={} {kind} car={car:?} admissible={admissible:?}", self.time());
        self.events.push(EventRecord {
            t: self.time(),
            step: self.step,
            kind: kind.to_string(),
            car,
            admissible,
            note,
        });
    }

    /// Recomputes lateral ranks when level membership changed (or `force`).
    fn refresh_ranks(&mut self, force: bool) {
        let skip = self.x_inputs();
        let levels: LevelMap = self
            .graphs
            .levels
            .iter()
            .filter(|(id, _)| self.snapshot.role(**id) == Some(CarRole::Regular) && !skip.contains(id))
            .map(|(id, l)| (*id, *l))
            .collect();
        if force || levels != self.ranked_levels {
            self.ranks = lateral_ranks(&self.snapshot, &self.graphs.levels, &skip);
            self.ranked_levels = levels;
        }
    }

    /// Shifted lateral positions and the jump a desired-offset change implies.
    fn lateral_jump(&self, old: &BTreeMap<CarId, f64>, new: &BTreeMap<CarId, f64>) -> bool {
        let root_x = self.root_x();
        let mut e = Vec::new();
        let mut d = Vec::new();
        for (id, dn) in new {
            if self.snapshot.role(*id) != Some(CarRole::Regular) {
                continue;
            }
            if let (Some(dold), Some(car)) = (old.get(id), self.snapshot.get(*id)) {
                e.push(car.x - root_x + dold);
                d.push(dn - dold);
            }
        }
        impulse_admissible(&DVector::from_vec(e), &DVector::from_vec(d))
    }

    fn apply_event(&mut self, event: Event) -> Result<(), EngineError> {
        match event {
            Event::FormationChange { template, .. } => {
                let old = self.desired();
                self.template = template;
                let new = self.desired();
                let ok = self.lateral_jump(&old, &new);
                self.log("formation-change", None, Some(ok), None);
            }
            Event::GyChange { delta_g_y_length, .. } => {
                let g = self.gains.g_y + delta_g_y_length;
                if !(g > 0.0) {
                    return Err(EngineError::Invalid {
                        t: self.time(),
                        message: format!("g_y would become {g}"),
                    });
                }
                let w = self.gains.weight_sum;
                let leader_y = self.snapshot.leader().map_or(0.0, |c| c.y);
                let mut e = Vec::new();
                let mut d = Vec::new();
                for (id, car) in &self.snapshot.cars {
                    if car.role != CarRole::Regular {
                        continue;
                    }
                    if let Some(&l) = self.graphs.levels.get(id) {
                        let l = l as f64;
                        e.push(car.y - (leader_y - l * self.gains.g_y / w));
                        d.push(l * delta_g_y_length / w);
                    }
                }
                self.gains.g_y = g;
                let ok = impulse_admissible(&DVector::from_vec(e), &DVector::from_vec(d));
                self.log("gy-change", None, Some(ok), Some(format!("g_y = {g}")));
            }
            Event::ObstacleAppear {
                id, x_length, y_length, ..
            } => {
                self.snapshot
                    .insert(id, CarState::at_rest(CarRole::Obstacle, x_length, y_length));
                self.log("obstacle-appear", Some(id), None, None);
            }
            Event::ObstacleRemove { id, .. } => {
                self.snapshot.cars.remove(&id);
                self.log("obstacle-remove", Some(id), None, None);
            }
            Event::LaneChange {
                end_time,
                car,
                x_target_length,
                ..
            } => {
                let end_step = quantize(end_time, self.dt).max(self.step + 1);
                let x_start = self.snapshot.get(car).map_or(0.0, |c| c.x);
                if let Some(c) = self.snapshot.get_mut(car) {
                    c.vx = 0.0;
                }
                self.lanes.push(LaneChange {
                    car,
                    t0: self.time(),
                    t1: end_step as f64 * self.dt,
                    x_start,
                    x_target: x_target_length,
                    end_step,
                });
                self.log("lane-change-start", Some(car), None, None);
            }
        }
        Ok(())
    }

    /// Applies due events, re-derives the graphs and integrates one step.
    pub fn advance(&mut self) -> Result<(), EngineError> {
        let t = self.time();

        let mut finished = false;
        let mut k = 0;
        while k < self.lanes.len() {
            if self.lanes[k].end_step <= self.step {
                let lc = self.lanes.remove(k);
                if let Some(c) = self.snapshot.get_mut(lc.car) {
                    c.x = lc.x_target;
                    c.vx = 0.0;
                }
                self.log("lane-change-end", Some(lc.car), None, None);
                finished = true;
            } else {
                k += 1;
            }
        }
        while self.pending.first().is_some_and(|p| p.step <= self.step) {
            let p = self.pending.remove(0);
            self.apply_event(p.event)?;
        }

        let next = self.build(Some(&self.graphs))?;
        for (old, new) in [(&self.graphs.y, &next.y), (&self.graphs.x, &next.x)] {
            let diff = old.diff(new);
            if !diff.is_empty() {
                debug!("t={t} {} switch +{:?} -{:?}", new.axis, diff.added, diff.removed);
                self.switches.push(SwitchRecord {
                    t,
                    step: self.step,
                    axis: new.axis,
                    added: diff.added,
                    removed: diff.removed,
                });
            }
        }
        self.graphs = next;
        self.check_trees()?;
        self.refresh_ranks(finished);

        let mut now = BTreeSet::new();
        for g in [&self.graphs.y, &self.graphs.x] {
            for car in corollary_violations(&self.snapshot, g) {
                now.insert((g.axis, car));
            }
        }
        for (axis, car) in now.difference(&self.violations).copied().collect::<Vec<_>>() {
            warn!("t={t} car {car} is influenced only by an obstacle on {axis}");
            self.log("corollary-violated", Some(car), None, Some(format!("axis {axis}")));
        }
        self.violations = now;

        let desired = self.desired();
        self.offsets = local_offsets(&self.snapshot, &self.graphs.x, &desired, self.gains.g_x)
            .map_err(|source| EngineError::Equilibrium { t, source })?;

        let inputs = Inputs { t, lanes: &self.lanes };
        let ctx = StepContext {
            graph_y: &self.graphs.y,
            graph_x: &self.graphs.x,
            gains: &self.gains,
            offsets: &self.offsets,
            levels: &self.graphs.levels,
            inputs: &inputs,
        };
        self.snapshot = step(&self.snapshot, &ctx, self.dt).map_err(|e| match e {
            DynamicsError::NonFiniteState(car) => EngineError::NonFiniteState { t: t + self.dt, car },
            other => EngineError::Invalid {
                t,
                message: other.to_string(),
            },
        })?;
        self.step += 1;
        Ok(())
    }

    fn sample(&self) -> Sample {
        Sample {
            step: self.step,
            t: self.time(),
            snapshot: self.snapshot.clone(),
            levels: self.graphs.levels.clone(),
        }
    }

    /// Runs to the end, recording every `record_every_steps`-th step and
    /// the final one.
    pub fn run(mut self) -> Result<Trace, EngineError> {
        let mut samples = vec![self.sample()];
        while !self.is_done() {
            self.advance()?;
            if self.step.is_multiple_of(self.record_every) || self.is_done() {
                samples.push(self.sample());
            }
        }
        info!("{}: finished {} steps, {} switches", self.name, self.step, self.switches.len());
        Ok(Trace {
            samples,
            events: self.events,
            switches: self.switches,
        })
    }
}

/// Runs a scenario from start to finish.
pub fn run(scenario: &Scenario) -> Result<Trace, EngineError> {
    Engine::new(scenario)?.run()
}

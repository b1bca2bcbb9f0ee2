//! Scenario files, event scheduling and end-to-end simulation.

mod analysis;
mod engine;
mod presets;
mod template;
mod trace;

pub use analysis::{analyze_scenario, modes, AxisAnalysis, Mode, ModeAnalysis, ScenarioAnalysis};
pub use engine::{lane_change_input, run, Engine, EngineError, LaneChange};
pub use presets::{preset, preset_names};
pub use template::{desired_offsets, lateral_ranks, local_offsets, template_vector, Template};
pub use trace::{
    read_trace_csv, spacing, summarize, write_trace_csv, EventRecord, LateralGaps, LevelGap, Sample,
    Summary, SwitchRecord, Trace, TraceRow,
};

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{GainParams, IntegrationSettings};
use crate::formation::{build_formation_graphs, has_directed_spanning_tree, BuildContext, GeometryParams};
use crate::snapshot::{CarId, CarRole, CarState, FormationSnapshot};

/// A timed change applied at the first step boundary at or after its time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Event {
    /// Switch to a new lateral template.
    FormationChange { at_time: f64, template: Template },
    /// Add `delta_g_y_length` to the level gap.
    GyChange { at_time: f64, delta_g_y_length: f64 },
    /// Insert a stationary obstacle.
    ObstacleAppear {
        at_time: f64,
        id: CarId,
        x_length: f64,
        y_length: f64,
    },
    ObstacleRemove { at_time: f64, id: CarId },
    /// Drive `car` laterally to `x_target_length` over `[start_time, end_time]`.
    LaneChange {
        start_time: f64,
        end_time: f64,
        car: CarId,
        x_target_length: f64,
    },
}

impl Event {
    /// Time at which the event first takes effect.
    pub fn time(&self) -> f64 {
        match self {
            Event::FormationChange { at_time, .. }
            | Event::GyChange { at_time, .. }
            | Event::ObstacleAppear { at_time, .. }
            | Event::ObstacleRemove { at_time, .. } => *at_time,
            Event::LaneChange { start_time, .. } => *start_time,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Event::FormationChange { .. } => "formation-change",
            Event::GyChange { .. } => "gy-change",
            Event::ObstacleAppear { .. } => "obstacle-appear",
            Event::ObstacleRemove { .. } => "obstacle-remove",
            Event::LaneChange { .. } => "lane-change",
        }
    }
}

/// One car of the initial formation, as stored in scenario files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CarSpec {
    pub id: CarId,
    pub role: CarRole,
    pub x_length: f64,
    pub y_length: f64,
    #[serde(default)]
    pub vx_speed: f64,
    #[serde(default)]
    pub vy_speed: f64,
}

mod cars_format {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(s: &FormationSnapshot<f64>, ser: S) -> Result<S::Ok, S::Error> {
        let cars: Vec<CarSpec> = s
            .cars
            .iter()
            .map(|(id, c)| CarSpec {
                id: *id,
                role: c.role,
                x_length: c.x,
                y_length: c.y,
                vx_speed: c.vx,
                vy_speed: c.vy,
            })
            .collect();
        cars.serialize(ser)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<FormationSnapshot<f64>, D::Error> {
        let cars = Vec::<CarSpec>::deserialize(de)?;
        let mut s = FormationSnapshot::new();
        for c in cars {
            if s.cars.contains_key(&c.id) {
                return Err(serde::de::Error::custom(format!("duplicate car id {}", c.id)));
            }
            s.insert(c.id, CarState::new(c.role, c.x_length, c.y_length, c.vx_speed, c.vy_speed));
        }
        Ok(s)
    }
}

fn default_record_every() -> usize {
    1
}

/// Everything needed to reproduce one simulation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub gains: GainParams<f64>,
    #[serde(default)]
    pub geometry: GeometryParams,
    /// How far ahead obstacles are sensed; defaults to `influence_depth * g_y / W`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub obstacle_range_length: Option<f64>,
    pub integration: IntegrationSettings<f64>,
    pub leader_v0_speed: f64,
    #[serde(with = "cars_format")]
    pub cars: FormationSnapshot<f64>,
    #[serde(default)]
    pub template: Template,
    #[serde(default)]
    pub events: Vec<Event>,
    /// Store every n-th step in the trace.
    #[serde(default = "default_record_every")]
    pub record_every_steps: usize,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
}

fn invalid(path: impl Into<String>, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid {
        path: path.into(),
        message: message.into(),
    }
}

impl Scenario {
    /// Parses and validates a scenario file.
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let scenario = Self::parse(text)?;
        scenario.validate()?;
        Ok(scenario)
    }

    /// Parses without semantic validation.
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        serde_json::from_str(text).map_err(|e| ScenarioError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn obstacle_range(&self) -> f64 {
        self.obstacle_range_length.unwrap_or(
            self.geometry.influence_depth as f64 * self.gains.g_y / self.gains.weight_sum,
        )
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.gains.validate().map_err(|e| invalid("gains", e.to_string()))?;
        self.geometry.validate().map_err(|e| invalid("geometry", e.to_string()))?;
        self.integration
            .validate()
            .map_err(|e| invalid("integration", e.to_string()))?;
        if !self.leader_v0_speed.is_finite() {
            return Err(invalid("leader_v0_speed", "must be finite"));
        }
        if self.record_every_steps < 1 {
            return Err(invalid("record_every_steps", "must be >= 1"));
        }
        if let Some(r) = self.obstacle_range_length {
            if !(r > 0.0) {
                return Err(invalid("obstacle_range_length", "must be > 0"));
            }
        }
        self.validate_cars()?;
        self.validate_template(&self.template, "template")?;
        self.validate_events()?;

        let ctx = BuildContext {
            obstacle_range: self.obstacle_range(),
            ..BuildContext::new(self.gains.weight_sum)
        };
        let graphs = build_formation_graphs(&self.cars, &self.geometry, &ctx, None, None)
            .map_err(|e| invalid("cars", format!("initial formation: {e}")))?;
        if !has_directed_spanning_tree(&graphs.y) {
            return Err(invalid("cars", "initial longitudinal graph has no spanning tree from the leader"));
        }
        if !has_directed_spanning_tree(&graphs.x) {
            return Err(invalid("cars", "initial lateral graph has no spanning tree from the boundary"));
        }
        Ok(())
    }

    fn validate_cars(&self) -> Result<(), ScenarioError> {
        let leaders: Vec<CarId> = self.cars.ids_with_role(CarRole::PhantomLeader).collect();
        if leaders != [CarId::LEADER] {
            return Err(invalid("cars", "exactly one phantom-leader with id 0 is required"));
        }
        for (n, (id, car)) in self.cars.cars.iter().enumerate() {
            let path = format!("cars[{n}] (id {id})");
            if !car.is_finite() {
                return Err(invalid(path, "coordinates must be finite"));
            }
            match car.role {
                CarRole::PhantomLeader if car.vy != self.leader_v0_speed => {
                    return Err(invalid(path, "leader vy_speed must equal leader_v0_speed"));
                }
                CarRole::PhantomLeader if car.vx != 0.0 => {
                    return Err(invalid(path, "leader vx_speed must be 0"));
                }
                CarRole::Boundary if car.vx != 0.0 => {
                    return Err(invalid(path, "boundary vx_speed must be 0"));
                }
                CarRole::Obstacle if car.vx != 0.0 || car.vy != 0.0 => {
                    return Err(invalid(path, "obstacles must be stationary"));
                }
                _ => {}
            }
        }
        Ok(())
    }

    fn validate_template(&self, template: &Template, path: &str) -> Result<(), ScenarioError> {
        match template {
            Template::Uniform => Ok(()),
            Template::LevelScales { scales } => {
                if scales.iter().any(|s| !s.is_finite() || *s < 0.0) {
                    return Err(invalid(format!("{path}.scales"), "scales must be finite and >= 0"));
                }
                Ok(())
            }
            Template::Explicit { x_f } => {
                for (id, v) in x_f {
                    if !v.is_finite() {
                        return Err(invalid(format!("{path}.x_f.{id}"), "must be finite"));
                    }
                    if self.cars.get(*id).is_none() {
                        return Err(invalid(format!("{path}.x_f.{id}"), "unknown car"));
                    }
                }
                Ok(())
            }
        }
    }

    fn validate_events(&self) -> Result<(), ScenarioError> {
        let t_end = self.integration.t_end;
        let mut obstacles: BTreeSet<CarId> = self.cars.ids_with_role(CarRole::Obstacle).collect();
        let mut order: Vec<(usize, &Event)> = self.events.iter().enumerate().collect();
        order.sort_by(|a, b| a.1.time().total_cmp(&b.1.time()).then(a.0.cmp(&b.0)));
        let mut lane_windows: BTreeMap<CarId, Vec<(f64, f64)>> = BTreeMap::new();
        for (n, ev) in order {
            let path = format!("events[{n}]");
            let t = ev.time();
            if !(t >= 0.0 && t <= t_end) {
                return Err(invalid(path, format!("time {t} outside [0, {t_end}]")));
            }
            match ev {
                Event::FormationChange { template, .. } => {
                    self.validate_template(template, &format!("{path}.template"))?;
                }
                Event::GyChange { delta_g_y_length, .. } => {
                    if !delta_g_y_length.is_finite() {
                        return Err(invalid(path, "delta_g_y_length must be finite"));
                    }
                }
                Event::ObstacleAppear { id, x_length, y_length, .. } => {
                    if !x_length.is_finite() || !y_length.is_finite() {
                        return Err(invalid(path, "obstacle position must be finite"));
                    }
                    if self.cars.get(*id).is_some() || !obstacles.insert(*id) {
                        return Err(invalid(path, format!("id {id} already in use")));
                    }
                }
                Event::ObstacleRemove { id, .. } => {
                    if !obstacles.remove(id) {
                        return Err(invalid(path, format!("no obstacle {id} present")));
                    }
                }
                Event::LaneChange {
                    start_time,
                    end_time,
                    car,
                    x_target_length,
                } => {
                    if !(start_time < end_time) || *end_time > t_end {
                        return Err(invalid(path, "require start_time < end_time <= t_end"));
                    }
                    if self.cars.role(*car) != Some(CarRole::Regular) {
                        return Err(invalid(path, format!("car {car} is not a regular car")));
                    }
                    if !x_target_length.is_finite() {
                        return Err(invalid(path, "x_target_length must be finite"));
                    }
                    let windows = lane_windows.entry(*car).or_default();
                    if windows.iter().any(|(a, b)| start_time < b && a < end_time) {
                        return Err(invalid(path, "overlapping lane changes for one car"));
                    }
                    windows.push((*start_time, *end_time));
                }
            }
        }
        Ok(())
    }
}

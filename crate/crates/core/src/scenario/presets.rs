//! Built-in scenarios.
//!
//! The reference formation has four levels 50 apart behind the leader. Each
//! level holds a boundary pseudo-car at `x = 0` and three cars spaced 30 to
//! its left, numbered boundary first: level `l` uses ids `4l - 3 ..= 4l`.

use super::{Event, Scenario, Template};
use crate::dynamics::{GainParams, IntegrationSettings};
use crate::formation::GeometryParams;
use crate::snapshot::{CarId, CarRole, CarState, FormationSnapshot};

const LEVELS: u32 = 4;
const PER_LEVEL: u32 = 3;

/// Ids, roles and equilibrium positions of the reference formation for a
/// per-level lateral scale; `jitter` adds a fixed deterministic offset.
fn reference_formation(v0: f64, scales: &[f64], jitter: f64) -> FormationSnapshot<f64> {
    let g = GainParams::default();
    let mut s = FormationSnapshot::new().with(0, CarState::new(CarRole::PhantomLeader, -60.0, 0.0, 0.0, v0));
    for l in 1..=LEVELS {
        let y = -(l as f64) * g.g_y;
        let base = 4 * (l - 1) + 1;
        s.insert(CarId(base), CarState::new(CarRole::Boundary, 0.0, y, 0.0, v0));
        let scale = scales[(l - 1) as usize];
        for r in 1..=PER_LEVEL {
            let id = base + r;
            // Small fixed pattern so that every car starts off equilibrium.
            let dy = jitter * (((id * 7) % 5) as f64 - 2.0);
            let dx = jitter * 0.5 * (((id * 3) % 5) as f64 - 2.0);
            let dv = jitter * 0.1 * (((id * 11) % 3) as f64 - 1.0);
            let x = -(r as f64) * scale * g.g_x + dx;
            s.insert(CarId(id), CarState::new(CarRole::Regular, x, y + dy, 0.0, v0 + dv));
        }
    }
    s
}

fn base(name: &str, v0: f64, cars: FormationSnapshot<f64>, t_end: f64) -> Scenario {
    Scenario {
        name: name.to_string(),
        gains: GainParams::default(),
        geometry: GeometryParams::default(),
        obstacle_range_length: None,
        integration: IntegrationSettings { dt: 0.1, t_end },
        leader_v0_speed: v0,
        cars,
        template: Template::Uniform,
        events: Vec::new(),
        record_every_steps: 10,
    }
}

pub fn preset_names() -> &'static [&'static str] {
    &[
        "steady-flow",
        "formation-change",
        "obstacle",
        "lane-change",
        "chain-3",
        "leader-only",
    ]
}

/// Looks up a built-in scenario by name.
pub fn preset(name: &str) -> Option<Scenario> {
    let uniform = [1.0; LEVELS as usize];
    Some(match name {
        "steady-flow" => base("steady-flow", 10.0, reference_formation(10.0, &uniform, 1.0), 4500.0),
        "formation-change" => {
            let first = vec![1.0, 1.0, 0.5, 1.0];
            let second = vec![1.0, 0.5, 1.0, 0.5];
            let mut s = base("formation-change", 10.0, reference_formation(10.0, &first, 0.0), 5000.0);
            s.template = Template::LevelScales { scales: first };
            s.events.push(Event::FormationChange {
                at_time: 2000.0,
                template: Template::LevelScales { scales: second },
            });
            s
        }
        "obstacle" => {
            let v0 = 1.0;
            let t_appear = 100.0;
            // Level 3 sits at y = -150 + v0 t; the obstacle appears 40 ahead of
            // it, just inside the lateral position of its outermost car.
            let y_obstacle = -150.0 + v0 * t_appear + 40.0;
            let mut s = base("obstacle", v0, reference_formation(v0, &uniform, 0.0), 5000.0);
            s.events.push(Event::ObstacleAppear {
                at_time: t_appear,
                id: CarId(100),
                x_length: -85.0,
                y_length: y_obstacle,
            });
            s.events.push(Event::ObstacleRemove {
                at_time: t_appear + 400.0,
                id: CarId(100),
            });
            s
        }
        "lane-change" => {
            // Car 6 starts as the leftmost car of level 2 and cuts across
            // to the slot next to the boundary.
            let mut cars = reference_formation(10.0, &uniform, 0.0);
            let x6 = cars.cars[&CarId(6)].x;
            let x8 = cars.cars[&CarId(8)].x;
            cars.get_mut(CarId(6)).expect("car 6 exists").x = x8;
            cars.get_mut(CarId(8)).expect("car 8 exists").x = x6;
            let mut s = base("lane-change", 10.0, cars, 6000.0);
            s.events.push(Event::LaneChange {
                start_time: 100.0,
                end_time: 400.0,
                car: CarId(6),
                x_target_length: -15.0,
            });
            s
        }
        "chain-3" => {
            let cars = FormationSnapshot::new()
                .with(0, CarState::new(CarRole::PhantomLeader, 0.0, 0.0, 0.0, 10.0))
                .with(1, CarState::new(CarRole::Regular, 0.0, -45.0, 0.0, 8.0))
                .with(2, CarState::new(CarRole::Regular, 0.0, -110.0, 0.0, 11.0))
                .with(3, CarState::new(CarRole::Regular, 0.0, -140.0, 0.0, 9.0));
            let mut s = base("chain-3", 10.0, cars, 200.0);
            s.record_every_steps = 1;
            s
        }
        "leader-only" => {
            let cars = FormationSnapshot::new().with(0, CarState::new(CarRole::PhantomLeader, 0.0, 0.0, 0.0, 10.0));
            let mut s = base("leader-only", 10.0, cars, 10.0);
            s.record_every_steps = 1;
            s
        }
        _ => return None,
    })
}

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::formation::{Axis, LevelMap};
use crate::snapshot::{CarId, CarRole, FormationSnapshot};

/// One recorded state of the formation.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub step: usize,
    pub t: f64,
    pub snapshot: FormationSnapshot<f64>,
    pub levels: LevelMap,
}

/// An applied event or a diagnostic raised during the run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub t: f64,
    pub step: usize,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub car: Option<CarId>,
    /// For events that shift the equilibrium: whether the jump in shifted
    /// coordinates is norm non-increasing.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub admissible: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Change of one axis graph's edge set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwitchRecord {
    pub t: f64,
    pub step: usize,
    pub axis: Axis,
    pub added: Vec<(CarId, CarId)>,
    pub removed: Vec<(CarId, CarId)>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trace {
    pub samples: Vec<Sample>,
    pub events: Vec<EventRecord>,
    pub switches: Vec<SwitchRecord>,
}

/// One line of `trace.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: f64,
    pub car: CarId,
    pub role: CarRole,
    pub level: Option<u32>,
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
}

impl Trace {
    pub fn rows(&self) -> impl Iterator<Item = TraceRow> + '_ {
        self.samples.iter().flat_map(|s| {
            s.snapshot.cars.iter().map(move |(id, c)| TraceRow {
                t: s.t,
                car: *id,
                role: c.role,
                level: match c.role {
                    CarRole::Obstacle => None,
                    CarRole::PhantomLeader => Some(0),
                    _ => s.levels.get(id).copied(),
                },
                x: c.x,
                y: c.y,
                vx: c.vx,
                vy: c.vy,
            })
        })
    }

    pub fn last(&self) -> Option<&Sample> {
        self.samples.last()
    }
}

const HEADER: [&str; 8] = ["t", "car", "role", "level", "x", "y", "vx", "vy"];

pub fn write_trace_csv<W: Write>(rows: impl Iterator<Item = TraceRow>, out: W) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(HEADER)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace_csv<R: Read>(input: R) -> csv::Result<Vec<TraceRow>> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    r.deserialize().collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelGap {
    pub upper: u32,
    pub lower: u32,
    pub gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LateralGaps {
    pub level: u32,
    /// Gaps between neighbours, starting at the boundary side.
    pub gaps: Vec<f64>,
}

/// Final-state metrics of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    pub t_final: f64,
    pub steps: usize,
    pub leader_v0: f64,
    pub level_gaps: Vec<LevelGap>,
    pub lateral_gaps: Vec<LateralGaps>,
    /// Largest spread of y within one level.
    pub same_level_y_spread: f64,
    /// Largest `|vy - v0|` over regular cars in the final sample.
    pub max_velocity_deviation: f64,
    pub max_lateral_speed: f64,
    /// Earliest sample time after which the velocity deviation stays
    /// below `1e-4`.
    pub convergence_time: Option<f64>,
    pub switch_count: usize,
    pub event_count: usize,
}

fn velocity_deviation(s: &FormationSnapshot<f64>, v0: f64) -> f64 {
    s.cars
        .values()
        .filter(|c| c.role == CarRole::Regular)
        .map(|c| (c.vy - v0).abs())
        .fold(0.0, f64::max)
}

/// Level gaps, lateral gaps and the y spread of a snapshot.
pub fn spacing(s: &FormationSnapshot<f64>, levels: &LevelMap) -> (Vec<LevelGap>, Vec<LateralGaps>, f64) {
    let mut ys: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    let mut xs: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for (id, c) in &s.cars {
        let Some(&l) = levels.get(id) else { continue };
        match c.role {
            CarRole::Regular => {
                ys.entry(l).or_default().push(c.y);
                xs.entry(l).or_default().push(c.x);
            }
            CarRole::Boundary => xs.entry(l).or_default().push(c.x),
            _ => {}
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let mut level_gaps = Vec::new();
    let mut prev = s.leader().map(|c| (0u32, c.y));
    let mut spread = 0.0f64;
    for (&l, v) in &ys {
        let m = mean(v);
        if let Some((pl, py)) = prev {
            level_gaps.push(LevelGap {
                upper: pl,
                lower: l,
                gap: py - m,
            });
        }
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        spread = spread.max(hi - lo);
        prev = Some((l, m));
    }
    let lateral = xs
        .into_iter()
        .map(|(level, mut v)| {
            v.sort_by(|a, b| b.total_cmp(a));
            LateralGaps {
                level,
                gaps: v.windows(2).map(|w| w[0] - w[1]).collect(),
            }
        })
        .collect();
    (level_gaps, lateral, spread)
}

pub fn summarize(name: &str, trace: &Trace, leader_v0: f64) -> Summary {
    let Some(last) = trace.last() else {
        return Summary {
            name: name.to_string(),
            t_final: 0.0,
            steps: 0,
            leader_v0,
            level_gaps: Vec::new(),
            lateral_gaps: Vec::new(),
            same_level_y_spread: 0.0,
            max_velocity_deviation: 0.0,
            max_lateral_speed: 0.0,
            convergence_time: None,
            switch_count: trace.switches.len(),
            event_count: trace.events.len(),
        };
    };
    let (level_gaps, lateral_gaps, spread) = spacing(&last.snapshot, &last.levels);
    let mut convergence_time = None;
    for s in trace.samples.iter().rev() {
        if velocity_deviation(&s.snapshot, leader_v0) < 1e-4 {
            convergence_time = Some(s.t);
        } else {
            break;
        }
    }
    Summary {
        name: name.to_string(),
        t_final: last.t,
        steps: last.step,
        leader_v0,
        level_gaps,
        lateral_gaps,
        same_level_y_spread: spread,
        max_velocity_deviation: velocity_deviation(&last.snapshot, leader_v0),
        max_lateral_speed: last
            .snapshot
            .cars
            .values()
            .filter(|c| c.role == CarRole::Regular)
            .map(|c| c.vx.abs())
            .fold(0.0, f64::max),
        convergence_time,
        switch_count: trace.switches.len(),
        event_count: trace.events.len(),
    }
}

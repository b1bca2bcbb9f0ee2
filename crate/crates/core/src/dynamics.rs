//! Per-car control laws and their fixed-step integration.
//!
//! Longitudinal law for a regular car `i` with in-neighbours `j`:
//!
//! ```text
//! dv_i/dt = sum_j w_ij [ b (v_j - v_i) + k (y_j - y_i) ] - k g_y sum_j w_ij / W
//! ```
//!
//! Lateral law, with `z_i` the car's offset constant:
//!
//! ```text
//! dv_i/dt = k_x [ sum_j w_ij (x_j - x_i) - g_x z_i ] + b_x sum_j w_ij (v_j - v_i)
//! ```
//!
//! Stacked over the reduced state these are the rows of
//! `-k L y - b L v + B (k y_in + b v_in) - k g_y d / W` and
//! `-k_x L x - b_x L v + B (k_x x_in + b_x v_in) - k_x g_x C`, where `d` is
//! the vector of incoming weight sums.

use std::collections::BTreeMap;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::formation::{Axis, InfluenceGraph, LaplacianBundle, LevelMap};
use crate::scalar::{lit, Real};
use crate::snapshot::{CarId, CarRole, CarState, FormationSnapshot};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DynamicsError {
    #[error("invalid gains: {0}")]
    InvalidGains(String),
    #[error("invalid integration settings: {0}")]
    InvalidSettings(String),
    #[error("state of car {0} is no longer finite")]
    NonFiniteState(CarId),
    #[error("impulse has a nonzero velocity component at index {0}")]
    VelocityJump(usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Controller gains and desired spacings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainParams<T> {
    /// Longitudinal velocity gain.
    pub b: T,
    /// Longitudinal position gain.
    pub k: T,
    /// Lateral velocity gain.
    pub b_x: T,
    /// Lateral position gain.
    pub k_x: T,
    /// Desired gap between consecutive levels.
    #[serde(rename = "g_y_length")]
    pub g_y: T,
    /// Desired lateral gap between neighbours of a level.
    #[serde(rename = "g_x_length")]
    pub g_x: T,
    /// Common incoming weight sum `W`.
    pub weight_sum: T,
}

impl<T: Real> GainParams<T> {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        let fields = [
            ("b", self.b),
            ("k", self.k),
            ("b_x", self.b_x),
            ("k_x", self.k_x),
            ("g_y", self.g_y),
            ("g_x", self.g_x),
            ("weight_sum", self.weight_sum),
        ];
        for (name, v) in fields {
            if !(v > T::zero()) || !v.is_finite() {
                return Err(DynamicsError::InvalidGains(format!(
                    "{name} must be strictly positive and finite, got {v:?}"
                )));
            }
        }
        Ok(())
    }
}

impl Default for GainParams<f64> {
    fn default() -> Self {
        GainParams {
            b: 0.4,
            k: 0.001,
            b_x: 0.4,
            k_x: 0.001,
            g_y: 50.0,
            g_x: 30.0,
            weight_sum: 1.0,
        }
    }
}

/// Fixed-step RK4 integration settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegrationSettings<T> {
    #[serde(rename = "dt_time")]
    pub dt: T,
    #[serde(rename = "t_end_time")]
    pub t_end: T,
}

impl<T: Real> IntegrationSettings<T> {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        if !(self.dt > T::zero()) || !self.dt.is_finite() {
            return Err(DynamicsError::InvalidSettings("dt must be > 0".into()));
        }
        if !(self.t_end >= T::zero()) || !self.t_end.is_finite() {
            return Err(DynamicsError::InvalidSettings("t_end must be >= 0".into()));
        }
        Ok(())
    }

    /// Number of whole steps covering `t_end`.
    pub fn steps(&self) -> usize {
        quantize(self.t_end, self.dt)
    }
}

/// Step index of time `t`: the first step boundary at or after `t`.
pub fn quantize<T: Real>(t: T, dt: T) -> usize {
    let k = (t / dt - lit(1e-9)).ceil();
    if k <= T::zero() {
        0
    } else {
        nalgebra::try_convert::<T, f64>(k).unwrap_or(0.0) as usize
    }
}

/// Stacked `[positions; velocities]` over the non-input cars of one axis.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector<T: Real> {
    pub axis: Axis,
    pub ids: Vec<CarId>,
    pub data: DVector<T>,
}

impl<T: Real> StateVector<T> {
    pub fn from_snapshot(snapshot: &FormationSnapshot<T>, axis: Axis, ids: &[CarId]) -> Self {
        let m = ids.len();
        let mut data = DVector::zeros(2 * m);
        for (a, id) in ids.iter().enumerate() {
            let car = &snapshot.cars[id];
            let (p, v) = axis_state(car, axis);
            data[a] = p;
            data[m + a] = v;
        }
        StateVector {
            axis,
            ids: ids.to_vec(),
            data,
        }
    }

    pub fn dim(&self) -> usize {
        self.ids.len()
    }

    pub fn positions(&self) -> DVector<T> {
        self.data.rows(0, self.dim()).into_owned()
    }

    pub fn velocities(&self) -> DVector<T> {
        self.data.rows(self.dim(), self.dim()).into_owned()
    }

    /// Writes the stacked state back into `snapshot`.
    pub fn write_to(&self, snapshot: &mut FormationSnapshot<T>) {
        let m = self.dim();
        for (a, id) in self.ids.iter().enumerate() {
            if let Some(car) = snapshot.get_mut(*id) {
                set_axis_state(car, self.axis, self.data[a], self.data[m + a]);
            }
        }
    }
}

/// Applies a position jump. `delta` is the full `[dp; dv]` vector and must
/// have a zero velocity block.
pub fn apply_impulse<T: Real>(state: &StateVector<T>, delta: &DVector<T>) -> Result<StateVector<T>, DynamicsError> {
    let m = state.dim();
    if delta.len() != 2 * m {
        return Err(DynamicsError::DimensionMismatch {
            expected: 2 * m,
            got: delta.len(),
        });
    }
    if let Some(a) = (m..2 * m).find(|&a| delta[a] != T::zero()) {
        return Err(DynamicsError::VelocityJump(a));
    }
    let mut out = state.clone();
    for a in 0..m {
        out.data[a] += delta[a];
    }
    Ok(out)
}

fn axis_state<T: Real>(car: &CarState<T>, axis: Axis) -> (T, T) {
    match axis {
        Axis::X => (car.x, car.vx),
        Axis::Y => (car.y, car.vy),
    }
}

fn set_axis_state<T: Real>(car: &mut CarState<T>, axis: Axis, p: T, v: T) {
    match axis {
        Axis::X => {
            car.x = p;
            car.vx = v;
        }
        Axis::Y => {
            car.y = p;
            car.vy = v;
        }
    }
}

/// Longitudinal acceleration of `car` from its in-edges in `graph_y`.
pub fn y_acceleration<T: Real>(
    car: CarId,
    snapshot: &FormationSnapshot<T>,
    graph_y: &InfluenceGraph<T>,
    gains: &GainParams<T>,
) -> T {
    let me = &snapshot.cars[&car];
    let mut acc = T::zero();
    let mut weight = T::zero();
    for (j, w) in graph_y.in_edges(car) {
        let other = &snapshot.cars[&j];
        acc += w * (gains.b * (other.vy - me.vy) + gains.k * (other.y - me.y));
        weight += w;
    }
    acc - gains.k * gains.g_y * weight / gains.weight_sum
}

/// Lateral acceleration of `car`; `offsets` holds the `z` constants, missing
/// entries count as zero.
pub fn x_acceleration<T: Real>(
    car: CarId,
    snapshot: &FormationSnapshot<T>,
    graph_x: &InfluenceGraph<T>,
    gains: &GainParams<T>,
    offsets: &BTreeMap<CarId, T>,
) -> T {
    let me = &snapshot.cars[&car];
    let mut pos = T::zero();
    let mut vel = T::zero();
    for (j, w) in graph_x.in_edges(car) {
        let other = &snapshot.cars[&j];
        pos += w * (other.x - me.x);
        vel += w * (other.vx - me.vx);
    }
    let z = offsets.get(&car).copied().unwrap_or_else(T::zero);
    gains.k_x * (pos - gains.g_x * z) + gains.b_x * vel
}

fn gather<T: Real>(snapshot: &FormationSnapshot<T>, ids: &[CarId], axis: Axis) -> (DVector<T>, DVector<T>) {
    let p = DVector::from_iterator(ids.len(), ids.iter().map(|id| axis_state(&snapshot.cars[id], axis).0));
    let v = DVector::from_iterator(ids.len(), ids.iter().map(|id| axis_state(&snapshot.cars[id], axis).1));
    (p, v)
}

/// Stacked longitudinal accelerations in `bundle.state_ids` order.
pub fn y_acceleration_matrix<T: Real>(
    bundle: &LaplacianBundle<T>,
    snapshot: &FormationSnapshot<T>,
    gains: &GainParams<T>,
) -> DVector<T> {
    let (y, v) = gather(snapshot, &bundle.state_ids, Axis::Y);
    let (yin, vin) = gather(snapshot, &bundle.input_ids, Axis::Y);
    let l = &bundle.reduced;
    let degree = DVector::from_iterator(
        bundle.state_dim(),
        (0..bundle.state_dim()).map(|a| l[(a, a)]),
    );
    -(l * &y) * gains.k - (l * &v) * gains.b + &bundle.leader_cols * (yin * gains.k + vin * gains.b)
        - degree * (gains.k * gains.g_y / gains.weight_sum)
}

/// Stacked lateral accelerations in `bundle.state_ids` order.
pub fn x_acceleration_matrix<T: Real>(
    bundle: &LaplacianBundle<T>,
    snapshot: &FormationSnapshot<T>,
    gains: &GainParams<T>,
    c: &DVector<T>,
) -> DVector<T> {
    let (x, v) = gather(snapshot, &bundle.state_ids, Axis::X);
    let (xin, vin) = gather(snapshot, &bundle.input_ids, Axis::X);
    let l = &bundle.reduced;
    -(l * &x) * gains.k_x - (l * &v) * gains.b_x + &bundle.leader_cols * (xin * gains.k_x + vin * gains.b_x)
        - c * (gains.k_x * gains.g_x)
}

/// Trajectory of cars whose motion is not governed by the control laws
/// (leader, obstacles, boundaries, scripted manoeuvres) within one step.
pub trait InputProfile<T: Real> {
    /// `(position, velocity)` of input `id` on `axis`, `tau` after the start
    /// of the step whose initial state is `base`.
    fn input_state(&self, id: CarId, axis: Axis, base: &CarState<T>, tau: T) -> (T, T);
}

/// Every input keeps its velocity over the step.
#[derive(Clone, Copy, Debug, Default)]
pub struct ConstantVelocity;

impl<T: Real> InputProfile<T> for ConstantVelocity {
    fn input_state(&self, _id: CarId, axis: Axis, base: &CarState<T>, tau: T) -> (T, T) {
        let (p, v) = axis_state(base, axis);
        (p + v * tau, v)
    }
}

/// Everything one integration step needs besides the state.
pub struct StepContext<'a, T: Real> {
    pub graph_y: &'a InfluenceGraph<T>,
    pub graph_x: &'a InfluenceGraph<T>,
    pub gains: &'a GainParams<T>,
    /// Lateral `z` constants per car.
    pub offsets: &'a BTreeMap<CarId, T>,
    /// Levels used to pair boundary pseudo-cars with their reference car.
    pub levels: &'a LevelMap,
    pub inputs: &'a dyn InputProfile<T>,
}

impl<'a, T: Real> StepContext<'a, T> {
    fn integrated(&self, snapshot: &FormationSnapshot<T>, graph: &InfluenceGraph<T>) -> Vec<CarId> {
        graph
            .nodes()
            .iter()
            .copied()
            .filter(|&id| id != graph.root && !graph.is_input(id) && snapshot.role(id) == Some(CarRole::Regular))
            .collect()
    }
}

/// In-edges of one integrated car, as indices into the dense car list.
struct Row<T> {
    car: usize,
    edges: Vec<(usize, T)>,
    weight: T,
    z: T,
}

fn rows<T: Real>(
    ids: &[CarId],
    index: &BTreeMap<CarId, usize>,
    graph: &InfluenceGraph<T>,
    offsets: Option<&BTreeMap<CarId, T>>,
) -> Vec<Row<T>> {
    ids.iter()
        .map(|id| {
            let edges: Vec<(usize, T)> = graph.in_edges(*id).map(|(j, w)| (index[&j], w)).collect();
            let weight = edges.iter().fold(T::zero(), |acc, (_, w)| acc + *w);
            Row {
                car: index[id],
                edges,
                weight,
                z: offsets.and_then(|o| o.get(id).copied()).unwrap_or_else(T::zero),
            }
        })
        .collect()
}

/// One fixed-step RK4 update of both axes.
///
/// Cars outside the integrated sets follow `ctx.inputs`. Afterwards each
/// boundary pseudo-car takes the longitudinal state of the leftmost regular
/// car of its level and has its lateral velocity zeroed.
pub fn step<T: Real>(
    snapshot: &FormationSnapshot<T>,
    ctx: &StepContext<'_, T>,
    dt: T,
) -> Result<FormationSnapshot<T>, DynamicsError> {
    let ids: Vec<CarId> = snapshot.cars.keys().copied().collect();
    let index: BTreeMap<CarId, usize> = ids.iter().enumerate().map(|(a, id)| (*id, a)).collect();
    let base: Vec<CarState<T>> = snapshot.cars.values().copied().collect();
    let y_rows = rows(&ctx.integrated(snapshot, ctx.graph_y), &index, ctx.graph_y, None);
    let x_rows = rows(&ctx.integrated(snapshot, ctx.graph_x), &index, ctx.graph_x, Some(ctx.offsets));
    let ny = y_rows.len();
    let mut free_y = vec![true; ids.len()];
    let mut free_x = vec![true; ids.len()];
    for r in &y_rows {
        free_y[r.car] = false;
    }
    for r in &x_rows {
        free_x[r.car] = false;
    }

    let mut x0 = Vec::with_capacity(2 * (ny + x_rows.len()));
    for r in &y_rows {
        x0.push(base[r.car].y);
        x0.push(base[r.car].vy);
    }
    for r in &x_rows {
        x0.push(base[r.car].x);
        x0.push(base[r.car].vx);
    }

    let stage = |state: &[T], tau: T| -> Vec<CarState<T>> {
        let mut cars = base.clone();
        for (a, car) in cars.iter_mut().enumerate() {
            if free_y[a] {
                let (p, v) = ctx.inputs.input_state(ids[a], Axis::Y, &base[a], tau);
                set_axis_state(car, Axis::Y, p, v);
            }
            if free_x[a] {
                let (p, v) = ctx.inputs.input_state(ids[a], Axis::X, &base[a], tau);
                set_axis_state(car, Axis::X, p, v);
            }
        }
        for (a, r) in y_rows.iter().enumerate() {
            set_axis_state(&mut cars[r.car], Axis::Y, state[2 * a], state[2 * a + 1]);
        }
        for (a, r) in x_rows.iter().enumerate() {
            let o = 2 * (ny + a);
            set_axis_state(&mut cars[r.car], Axis::X, state[o], state[o + 1]);
        }
        cars
    };

    // Same arithmetic as `y_acceleration` and `x_acceleration`.
    let g = ctx.gains;
    let deriv = |cars: &[CarState<T>]| -> Vec<T> {
        let mut out = Vec::with_capacity(x0.len());
        for r in &y_rows {
            let me = &cars[r.car];
            let mut acc = T::zero();
            for &(j, w) in &r.edges {
                let other = &cars[j];
                acc += w * (g.b * (other.vy - me.vy) + g.k * (other.y - me.y));
            }
            out.push(me.vy);
            out.push(acc - g.k * g.g_y * r.weight / g.weight_sum);
        }
        for r in &x_rows {
            let me = &cars[r.car];
            let mut pos = T::zero();
            let mut vel = T::zero();
            for &(j, w) in &r.edges {
                let other = &cars[j];
                pos += w * (other.x - me.x);
                vel += w * (other.vx - me.vx);
            }
            out.push(me.vx);
            out.push(g.k_x * (pos - g.g_x * r.z) + g.b_x * vel);
        }
        out
    };

    let axpy = |x: &[T], k: &[T], h: T| -> Vec<T> { x.iter().zip(k).map(|(a, b)| *a + *b * h).collect() };

    let half = dt / lit(2.0);
    let k1 = deriv(&base);
    let k2 = deriv(&stage(&axpy(&x0, &k1, half), half));
    let k3 = deriv(&stage(&axpy(&x0, &k2, half), half));
    let k4 = deriv(&stage(&axpy(&x0, &k3, dt), dt));
    let sixth = dt / lit(6.0);
    let two: T = lit(2.0);
    let x1: Vec<T> = (0..x0.len())
        .map(|a| x0[a] + sixth * (k1[a] + two * k2[a] + two * k3[a] + k4[a]))
        .collect();

    let mut next = FormationSnapshot {
        cars: ids.iter().copied().zip(stage(&x1, dt)).collect(),
    };
    clamp_boundaries(&mut next, ctx.levels);
    if let Some((id, _)) = next.cars.iter().find(|(_, c)| !c.is_finite()) {
        return Err(DynamicsError::NonFiniteState(*id));
    }
    Ok(next)
}

/// Gives each boundary pseudo-car the longitudinal state of the leftmost
/// (smallest `x`) regular car in its level and zero lateral velocity.
pub fn clamp_boundaries<T: Real>(snapshot: &mut FormationSnapshot<T>, levels: &LevelMap) {
    let mut reference: BTreeMap<u32, (T, T, T)> = BTreeMap::new();
    for (id, car) in &snapshot.cars {
        if car.role != CarRole::Regular {
            continue;
        }
        let Some(&l) = levels.get(id) else { continue };
        let entry = reference.entry(l).or_insert((car.x, car.y, car.vy));
        if car.x < entry.0 {
            *entry = (car.x, car.y, car.vy);
        }
    }
    for (id, car) in snapshot.cars.iter_mut() {
        if car.role != CarRole::Boundary {
            continue;
        }
        car.vx = T::zero();
        if let Some((_, y, vy)) = levels.get(id).and_then(|l| reference.get(l)) {
            car.y = *y;
            car.vy = *vy;
        }
    }
}

//! Per-car kinematic state.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::scalar::Real;

/// Identifier of a car (or pseudo-car). Id 0 is reserved for the phantom leader.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CarId(pub u32);

impl CarId {
    pub const LEADER: CarId = CarId(0);
}

impl fmt::Display for CarId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// What a node in the formation represents.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CarRole {
    /// Fictitious node setting the reference velocity along the road.
    PhantomLeader,
    /// Road-edge pseudo-car: no lateral motion, mirrors its level in `y`.
    Boundary,
    /// Stationary obstacle, an input-only node.
    Obstacle,
    Regular,
}

impl CarRole {
    pub fn as_str(self) -> &'static str {
        match self {
            CarRole::PhantomLeader => "phantom-leader",
            CarRole::Boundary => "boundary",
            CarRole::Obstacle => "obstacle",
            CarRole::Regular => "regular",
        }
    }
}

impl fmt::Display for CarRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CarState<T> {
    pub role: CarRole,
    pub x: T,
    pub y: T,
    pub vx: T,
    pub vy: T,
}

impl<T: Real> CarState<T> {
    pub fn new(role: CarRole, x: T, y: T, vx: T, vy: T) -> Self {
        CarState { role, x, y, vx, vy }
    }

    pub fn at_rest(role: CarRole, x: T, y: T) -> Self {
        CarState::new(role, x, y, T::zero(), T::zero())
    }

    pub fn is_finite(&self) -> bool {
        [self.x, self.y, self.vx, self.vy]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Positions, velocities and roles of every node at one instant.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct FormationSnapshot<T> {
    pub cars: BTreeMap<CarId, CarState<T>>,
}

impl<T: Real> FormationSnapshot<T> {
    pub fn new() -> Self {
        FormationSnapshot {
            cars: BTreeMap::new(),
        }
    }

    pub fn with(mut self, id: u32, car: CarState<T>) -> Self {
        self.cars.insert(CarId(id), car);
        self
    }

    pub fn insert(&mut self, id: CarId, car: CarState<T>) {
        self.cars.insert(id, car);
    }

    pub fn get(&self, id: CarId) -> Option<&CarState<T>> {
        self.cars.get(&id)
    }

    pub fn get_mut(&mut self, id: CarId) -> Option<&mut CarState<T>> {
        self.cars.get_mut(&id)
    }

    pub fn role(&self, id: CarId) -> Option<CarRole> {
        self.cars.get(&id).map(|c| c.role)
    }

    pub fn leader(&self) -> Option<&CarState<T>> {
        self.cars
            .get(&CarId::LEADER)
            .filter(|c| c.role == CarRole::PhantomLeader)
    }

    pub fn ids_with_role(&self, role: CarRole) -> impl Iterator<Item = CarId> + '_ {
        self.cars
            .iter()
            .filter(move |(_, c)| c.role == role)
            .map(|(id, _)| *id)
    }

    pub fn len(&self) -> usize {
        self.cars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cars.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.cars.values().all(CarState::is_finite)
    }

    /// Shifts every position by `(dx, dy)`.
    pub fn translated(&self, dx: T, dy: T) -> Self {
        let mut out = self.clone();
        for car in out.cars.values_mut() {
            car.x += dx;
            car.y += dy;
        }
        out
    }
}

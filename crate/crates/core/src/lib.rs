//! Distributed formation control for laneless traffic.
//!
//! Cars follow a phantom leader along the road (`Y`) and keep lateral
//! spacing from a road boundary (`X`). Each car reacts only to the cars in
//! its viewing region, so the coupling is a pair of directed influence
//! graphs that switch as the geometry changes.
//!
//! * [`formation`] builds the graphs, levels and Laplacians.
//! * [`dynamics`] evaluates the control laws and integrates them.
//! * [`equilibrium`] computes equilibrium positions and lateral offsets.
//! * [`stability`] checks spectra, Lyapunov certificates and impulses.
//! * [`scenario`] runs timed scenarios and records traces.
//!
//! The numeric core is generic over the scalar; the aliases below fix it
//! to `f64` (or `f32`) for everyday use.

pub mod dynamics;
pub mod equilibrium;
pub mod formation;
pub mod scalar;
pub mod scenario;
pub mod snapshot;
pub mod stability;

pub use formation::{Axis, GeometryParams, GraphError};
pub use scalar::{Real, Weight};
pub use snapshot::{CarId, CarRole, CarState};

pub type Snapshot = snapshot::FormationSnapshot<f64>;
pub type Car = snapshot::CarState<f64>;
pub type Graph = formation::InfluenceGraph<f64>;
pub type Bundle = formation::LaplacianBundle<f64>;
pub type Graphs = formation::FormationGraphs<f64>;
pub type Gains = dynamics::GainParams<f64>;
pub type Settings = dynamics::IntegrationSettings<f64>;
pub type State = dynamics::StateVector<f64>;
pub type Report = stability::StabilityReport<f64>;
pub type Certificate = stability::LyapunovCertificate<f64>;

pub type SnapshotF32 = snapshot::FormationSnapshot<f32>;
pub type GraphF32 = formation::InfluenceGraph<f32>;
pub type BundleF32 = formation::LaplacianBundle<f32>;
pub type GainsF32 = dynamics::GainParams<f32>;
pub type ReportF32 = stability::StabilityReport<f32>;

//! Influence graphs, levels, numbering and Laplacians.
//!
//! Each axis has its own weighted directed graph. An edge `j -> i` means
//! car `j`'s state enters car `i`'s control law. The longitudinal (`Y`)
//! graph is rooted at the phantom leader, the lateral (`X`) graph at the
//! road-boundary pseudo-car of the first level.

mod geometry;
mod graph;
mod laplacian;
mod levels;

pub use geometry::{
    boundary_levels, build_formation_graphs, build_influence_graph, corollary_violations,
    obstacle_wiring,
    BuildContext, FormationGraphs, GeometryParams,
};
pub use graph::{has_directed_spanning_tree, redistribute_weights, EdgeDiff, InfluenceGraph};
pub use laplacian::{laplacian, LaplacianBundle};
pub(crate) use laplacian::is_lower_triangular;
pub use levels::{assign_levels, canonical_numbering, LevelMap, Numbering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::snapshot::CarId;

/// Direction of motion a graph governs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Axis {
    /// Lateral, across the road.
    X,
    /// Longitudinal, direction of travel.
    Y,
}

impl std::fmt::Display for Axis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Axis::X => f.write_str("X"),
            Axis::Y => f.write_str("Y"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("no root node for the {0} axis")]
    MissingLeader(Axis),
    #[error("cars {0} and {1} occupy the same position")]
    DegenerateGeometry(CarId, CarId),
    #[error("car {0} is not reachable from the root")]
    Unreachable(CarId),
    #[error("car {0} has no incoming edges")]
    IsolatedNode(CarId),
    #[error("edge {from} -> {to} must have a strictly positive weight")]
    NonPositiveWeight { from: CarId, to: CarId },
    #[error("car {0} is not a node of the graph")]
    UnknownNode(CarId),
    #[error("car {0} lies on a directed cycle; levels are undefined")]
    Cyclic(CarId),
    #[error("ordering does not cover the graph's node set exactly")]
    OrderingMismatch,
    #[error("invalid geometry parameters: {0}")]
    InvalidParams(String),
    #[error("car {0} has no level")]
    MissingLevel(CarId),
}

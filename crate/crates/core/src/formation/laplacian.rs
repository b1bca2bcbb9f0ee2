use nalgebra::DMatrix;

use super::{GraphError, InfluenceGraph};
use crate::scalar::Weight;
use crate::snapshot::CarId;

/// Full, reduced and input-coupling matrices of one axis graph.
///
/// `full[(i, j)] = -w_ij` for an edge `j -> i` and `full[(i, i)]` is the
/// incoming weight sum, so every row sums to zero. `reduced` drops the rows
/// and columns of the input nodes (root first, then the other inputs);
/// `leader_cols` holds the positive weights coupling inputs to the
/// remaining nodes, i.e. `leader_cols = -full[state_rows, input_cols]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LaplacianBundle<W: Weight> {
    pub full: DMatrix<W>,
    pub reduced: DMatrix<W>,
    pub leader_cols: DMatrix<W>,
    /// Row/column order of `full`.
    pub ordering: Vec<CarId>,
    /// Row/column order of `reduced`.
    pub state_ids: Vec<CarId>,
    /// Column order of `leader_cols`.
    pub input_ids: Vec<CarId>,
}

pub fn laplacian<W: Weight>(
    graph: &InfluenceGraph<W>,
    ordering: &[CarId],
) -> Result<LaplacianBundle<W>, GraphError> {
    let n = ordering.len();
    if n != graph.nodes().len() || !ordering.iter().all(|id| graph.contains(*id)) {
        return Err(GraphError::OrderingMismatch);
    }
    let index = |id: CarId| ordering.iter().position(|&o| o == id);

    let mut full = DMatrix::<W>::zeros(n, n);
    for (from, to, w) in graph.edges() {
        let i = index(to).ok_or(GraphError::OrderingMismatch)?;
        let j = index(from).ok_or(GraphError::OrderingMismatch)?;
        full[(i, j)] = full[(i, j)] - w;
        full[(i, i)] = full[(i, i)] + w;
    }

    let mut input_ids = vec![graph.root];
    input_ids.extend(ordering.iter().copied().filter(|id| graph.inputs().contains(id)));
    let state_ids: Vec<CarId> = ordering
        .iter()
        .copied()
        .filter(|id| !graph.is_input(*id))
        .collect();

    let rows: Vec<usize> = state_ids.iter().map(|&id| index(id).unwrap()).collect();
    let cols: Vec<usize> = input_ids.iter().map(|&id| index(id).unwrap()).collect();

    let m = rows.len();
    let reduced = DMatrix::from_fn(m, m, |a, b| full[(rows[a], rows[b])]);
    let leader_cols = DMatrix::from_fn(m, cols.len(), |a, b| W::zero() - full[(rows[a], cols[b])]);

    Ok(LaplacianBundle {
        full,
        reduced,
        leader_cols,
        ordering: ordering.to_vec(),
        state_ids,
        input_ids,
    })
}

impl<W: Weight> LaplacianBundle<W> {
    pub fn dim(&self) -> usize {
        self.ordering.len()
    }

    pub fn state_dim(&self) -> usize {
        self.state_ids.len()
    }

    pub fn index_of(&self, id: CarId) -> Option<usize> {
        self.ordering.iter().position(|&o| o == id)
    }

    pub fn state_index_of(&self, id: CarId) -> Option<usize> {
        self.state_ids.iter().position(|&o| o == id)
    }

    pub fn row_sums(&self) -> Vec<W> {
        (0..self.dim())
            .map(|i| self.full.row(i).iter().fold(W::zero(), |a, &b| a + b))
            .collect()
    }

    /// True when every entry above the diagonal is exactly zero.
    pub fn is_lower_triangular(&self) -> bool {
        is_lower_triangular(&self.full)
    }

    pub fn reduced_is_triangular(&self) -> bool {
        is_lower_triangular(&self.reduced)
    }
}

pub(crate) fn is_lower_triangular<W: Weight>(m: &DMatrix<W>) -> bool {
    (0..m.nrows()).all(|i| ((i + 1)..m.ncols()).all(|j| m[(i, j)] == W::zero()))
}

//! Equilibrium positions and the lateral offset vector.
//!
//! Longitudinal equilibrium solves `L y = -g_y d / W` (with `d` the incoming
//! weight sums, so `d / W = 1` for normalised graphs) by forward
//! substitution. Lateral equilibrium satisfies `L x = -g_x C`; choosing
//! `C = L x_f` for a template `x_f` puts the cars at `x = x_anchor - g_x x_f`.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::formation::{is_lower_triangular, LaplacianBundle};
use crate::scalar::{lit, Real, Weight};
use crate::snapshot::CarId;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EquilibriumError {
    #[error("car {0} has a zero diagonal entry; it is disconnected")]
    SingularLevel(CarId),
    #[error("Laplacian is not lower triangular in the given ordering")]
    NotTriangular,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("lateral spacing g_x must be nonzero")]
    ZeroSpacing,
    #[error("no position supplied for input car {0}")]
    MissingInput(CarId),
    #[error("reduced Laplacian is singular")]
    Singular,
}

/// Solves the longitudinal equilibrium by forward substitution.
///
/// Returns positions in `bundle.ordering` order. The root sits at
/// `leader_y`; other input nodes take their value from `inputs`.
pub fn solve_y_equilibrium<W: Weight>(
    bundle: &LaplacianBundle<W>,
    g_y: W,
    weight_sum: W,
    leader_y: W,
    inputs: &BTreeMap<CarId, W>,
) -> Result<Vec<W>, EquilibriumError> {
    let l = &bundle.full;
    if !is_lower_triangular(l) {
        return Err(EquilibriumError::NotTriangular);
    }
    let root = bundle.input_ids[0];
    let mut y: Vec<W> = Vec::with_capacity(bundle.dim());
    for (i, &id) in bundle.ordering.iter().enumerate() {
        if id == root {
            y.push(leader_y);
            continue;
        }
        if bundle.input_ids.contains(&id) {
            y.push(*inputs.get(&id).ok_or(EquilibriumError::MissingInput(id))?);
            continue;
        }
        let diag = l[(i, i)];
        if diag == W::zero() {
            return Err(EquilibriumError::SingularLevel(id));
        }
        let mut rhs = W::zero() - g_y * diag / weight_sum;
        for (j, yj) in y.iter().enumerate() {
            rhs = rhs - l[(i, j)] * *yj;
        }
        y.push(rhs / diag);
    }
    Ok(y)
}

/// `C = L x_f`, in `bundle.ordering` order.
pub fn compute_c_from_template<W: Weight>(
    bundle: &LaplacianBundle<W>,
    x_f: &DVector<W>,
) -> Result<DVector<W>, EquilibriumError> {
    if x_f.len() != bundle.dim() {
        return Err(EquilibriumError::DimensionMismatch {
            expected: bundle.dim(),
            got: x_f.len(),
        });
    }
    let n = bundle.dim();
    Ok(DVector::from_fn(n, |i, _| {
        (0..n).fold(W::zero(), |acc, j| acc + bundle.full[(i, j)] * x_f[j])
    }))
}

/// Offset constant of one car from its own and its in-neighbours' desired
/// offsets `d = g_x x_f`. `neighbours` holds `(weight, desired offset)`.
pub fn compute_z_local<W: Weight>(desired: W, neighbours: &[(W, W)], g_x: W) -> Result<W, EquilibriumError> {
    if g_x == W::zero() {
        return Err(EquilibriumError::ZeroSpacing);
    }
    let mut weighted = W::zero();
    let mut total = W::zero();
    for &(w, d) in neighbours {
        weighted = weighted + w * d;
        total = total + w;
    }
    Ok((weighted - total * desired) / (W::zero() - g_x))
}

/// Lateral equilibrium of the state cars given input positions and `C`,
/// returned in `bundle.state_ids` order.
pub fn solve_x_equilibrium<T: Real>(
    bundle: &LaplacianBundle<T>,
    c: &DVector<T>,
    g_x: T,
    inputs: &BTreeMap<CarId, T>,
) -> Result<DVector<T>, EquilibriumError> {
    if c.len() != bundle.dim() {
        return Err(EquilibriumError::DimensionMismatch {
            expected: bundle.dim(),
            got: c.len(),
        });
    }
    let xin = bundle
        .input_ids
        .iter()
        .map(|id| inputs.get(id).copied().ok_or(EquilibriumError::MissingInput(*id)))
        .collect::<Result<Vec<T>, _>>()?;
    let xin = DVector::from_vec(xin);
    let c_state = DVector::from_iterator(
        bundle.state_dim(),
        bundle.state_ids.iter().map(|id| c[bundle.index_of(*id).unwrap()]),
    );
    let rhs = &bundle.leader_cols * xin - c_state * g_x;
    bundle
        .reduced
        .clone()
        .lu()
        .solve(&rhs)
        .ok_or(EquilibriumError::Singular)
}

/// Outcome of the per-level solvability check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExistenceReport {
    pub feasible: bool,
    /// Rank from row reduction.
    pub rank: usize,
    /// Rank from singular values, as an independent check.
    pub rank_svd: usize,
    pub rows: usize,
    pub cols: usize,
}

/// Checks that a level's offset constants can realise gaps of `g_x`.
///
/// Unknowns are the level's positions and one `z` per non-input car of the
/// level. Rows are each such car's Laplacian row (`(L x)_i + g_x z_i = rhs`,
/// positions outside the level moved to the right-hand side) and one gap
/// row per adjacent pair. Full row rank means a solution exists for any
/// right-hand side.
pub fn verify_existence<T: Real>(bundle: &LaplacianBundle<T>, level: &[CarId], g_x: T) -> ExistenceReport {
    let m = level.len();
    let z_cars: Vec<CarId> = level
        .iter()
        .copied()
        .filter(|id| bundle.state_ids.contains(id))
        .collect();
    let cols = m + z_cars.len();
    let rows = z_cars.len() + m.saturating_sub(1);
    let mut a = DMatrix::<T>::zeros(rows, cols);
    for (r, id) in z_cars.iter().enumerate() {
        let i = bundle.index_of(*id).expect("level car in ordering");
        for (c, jd) in level.iter().enumerate() {
            a[(r, c)] = bundle.full[(i, bundle.index_of(*jd).expect("level car in ordering"))];
        }
        a[(r, m + r)] = g_x;
    }
    for p in 0..m.saturating_sub(1) {
        let r = z_cars.len() + p;
        a[(r, p)] = -T::one();
        a[(r, p + 1)] = T::one();
    }
    let tol = lit::<T>(1e-9) * (T::one() + a.amax());
    let rank = echelon_rank(a.clone(), tol);
    let rank_svd = if rows == 0 { 0 } else { a.rank(tol) };
    ExistenceReport {
        feasible: rank == rows,
        rank,
        rank_svd,
        rows,
        cols,
    }
}

/// Rank by Gaussian elimination with partial pivoting.
pub fn echelon_rank<T: Real>(mut a: DMatrix<T>, tol: T) -> usize {
    let (rows, cols) = a.shape();
    let mut rank = 0;
    for col in 0..cols {
        if rank == rows {
            break;
        }
        let (pivot, best) = (rank..rows)
            .map(|r| (r, a[(r, col)].abs()))
            .fold((rank, T::zero()), |acc, x| if x.1 > acc.1 { x } else { acc });
        if best <= tol {
            continue;
        }
        a.swap_rows(rank, pivot);
        let p = a[(rank, col)];
        for c in col..cols {
            a[(rank, c)] /= p;
        }
        for r in 0..rows {
            if r != rank {
                let f = a[(r, col)];
                if f != T::zero() {
                    for c in col..cols {
                        let v = a[(rank, c)];
                        a[(r, c)] -= f * v;
                    }
                }
            }
        }
        rank += 1;
    }
    rank
}

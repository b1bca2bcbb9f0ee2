//! Spectral and Lyapunov checks of the closed-loop matrix
//! `Gamma = [[0, I], [-k L, -b L]]` of a reduced Laplacian `L`.
//!
//! Each eigenvalue `mu` of `L` contributes the two roots of
//! `s^2 + b mu s + k mu`, so `Gamma` is Hurwitz exactly when every `mu` has
//! positive real part (and `b, k > 0`).
//!
//! The quadratic certificate uses
//!
//! ```text
//! P = [[ 2k^2/b^2 I, (k/b) I ],
//!      [ (k/b) I,     I      ]]
//! ```
//!
//! With `S` the symmetric part of `L`, `P Gamma + Gamma^T P` reduces per
//! eigenvalue `s` of `S` to `(k/b) [[-2ks, a - 2bs], [a - 2bs, 2 - 2b^2 s/k]]`
//! with `a = 2k/b`, which is negative definite iff `s > k / b^2`. `P` does not
//! depend on `L`, so it is common to every mode that passes the test.

use nalgebra::linalg::Schur;
use nalgebra::{ComplexField, DMatrix, DVector};
use nalgebra::Complex;
use serde::{Deserialize, Serialize};

use crate::dynamics::GainParams;
use crate::formation::{is_lower_triangular, LaplacianBundle};
use crate::scalar::{lit, Real};

/// Real and imaginary part of one eigenvalue.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Eigenvalue<T> {
    pub re: T,
    pub im: T,
}

impl<T: Real> Eigenvalue<T> {
    fn from_complex(c: Complex<T>) -> Self {
        Eigenvalue { re: c.re, im: c.im }
    }

    pub fn modulus(&self) -> T {
        (self.re * self.re + self.im * self.im).sqrt()
    }

    fn dist(&self, other: &Self) -> T {
        let dr = self.re - other.re;
        let di = self.im - other.im;
        (dr * dr + di * di).sqrt()
    }
}

/// Quadratic Lyapunov certificate `V = e^T P e`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LyapunovCertificate<T: Real> {
    /// Inverse of the position block scale of `P`.
    pub q: T,
    /// Smallest eigenvalue of the symmetric part of `L`.
    pub lambda_min: T,
    /// Largest eigenvalue of `P Gamma + Gamma^T P`; negative for a valid certificate.
    pub negdef_margin: T,
    #[serde(skip)]
    pub p: DMatrix<T>,
}

impl<T: Real> LyapunovCertificate<T> {
    pub fn is_valid(&self) -> bool {
        self.negdef_margin < T::zero()
    }

    /// `V(e) = e^T P e` for a stacked `[positions; velocities]` deviation.
    pub fn value(&self, e: &DVector<T>) -> T {
        e.dot(&(&self.p * e))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StabilityReport<T: Real> {
    pub eigenvalues: Vec<Eigenvalue<T>>,
    pub hurwitz: bool,
    /// Minus the largest real part.
    pub spectral_margin: T,
    /// Largest distance between dense and closed-form eigenvalues, when the
    /// reduced Laplacian is triangular.
    pub closed_form_mismatch: Option<T>,
    /// Serialized as `"inapplicable"` when no certificate exists.
    #[serde(serialize_with = "certificate_or_inapplicable")]
    pub lyapunov: Option<LyapunovCertificate<T>>,
}

fn certificate_or_inapplicable<T: Real + Serialize, S: serde::Serializer>(
    c: &Option<LyapunovCertificate<T>>,
    ser: S,
) -> Result<S::Ok, S::Error> {
    match c {
        Some(c) => c.serialize(ser),
        None => ser.serialize_str("inapplicable"),
    }
}

/// `[[0, I], [-k L, -b L]]`.
pub fn gamma_matrix<T: Real>(reduced: &DMatrix<T>, k: T, b: T) -> DMatrix<T> {
    let m = reduced.nrows();
    let mut g = DMatrix::zeros(2 * m, 2 * m);
    for a in 0..m {
        g[(a, m + a)] = T::one();
        for c in 0..m {
            g[(m + a, c)] = -(k * reduced[(a, c)]);
            g[(m + a, m + c)] = -(b * reduced[(a, c)]);
        }
    }
    g
}

fn snap<T: Real>(mut e: Eigenvalue<T>) -> Eigenvalue<T> {
    if e.re.abs() <= lit::<T>(1e-12) * (T::one() + e.modulus()) {
        e.re = T::zero();
    }
    e
}

/// Eigenvalues from a real Schur decomposition with a bounded iteration count.
fn dense_eigenvalues<T: Real>(m: DMatrix<T>) -> Option<Vec<Complex<T>>> {
    let n = m.nrows();
    Schur::try_new(m, T::default_epsilon(), 1000 * n.max(1)).map(|s| s.complex_eigenvalues().iter().copied().collect())
}

/// Both roots of `s^2 + b mu s + k mu` for a complex `mu`.
fn shifted_roots<T: Real>(mu: Complex<T>, k: T, b: T) -> [Complex<T>; 2] {
    let two: T = lit(2.0);
    let p = mu * b;
    let c = mu * k;
    let mut r = ComplexField::sqrt(p * p - c * lit::<T>(4.0));
    if (p.conj() * r).re < T::zero() {
        r = -r;
    }
    let big = -(p + r) / two;
    let small = if big == Complex::new(T::zero(), T::zero()) { big } else { c / big };
    [big, small]
}

/// All `2m` eigenvalues of `Gamma` from a dense eigensolver.
///
/// If the QR iteration on `Gamma` stalls (it can on nearly defective
/// matrices), the spectrum is assembled from the eigenvalues of `L` instead,
/// using that every eigenvalue `mu` of `L` yields the roots of
/// `s^2 + b mu s + k mu`.
pub fn gamma_spectrum<T: Real>(reduced: &DMatrix<T>, k: T, b: T) -> Vec<Eigenvalue<T>> {
    if reduced.nrows() == 0 {
        return Vec::new();
    }
    let values = dense_eigenvalues(gamma_matrix(reduced, k, b)).unwrap_or_else(|| {
        log::debug!("Schur iteration on Gamma stalled; using the spectrum of L");
        let mus = dense_eigenvalues(reduced.clone()).unwrap_or_else(|| {
            // The diagonal is exact for triangular `L`; otherwise report NaN.
            let exact = is_lower_triangular(reduced);
            let nan = Complex::new(lit::<T>(f64::NAN), lit::<T>(f64::NAN));
            reduced
                .diagonal()
                .iter()
                .map(|d| if exact { Complex::new(*d, T::zero()) } else { nan })
                .collect()
        });
        mus.into_iter().flat_map(|mu| shifted_roots(mu, k, b)).collect()
    });
    values.into_iter().map(|c| snap(Eigenvalue::from_complex(c))).collect()
}

/// Roots of `s^2 + b mu s + k mu` for each diagonal entry `mu`.
pub fn closed_form_spectrum<T: Real>(reduced: &DMatrix<T>, k: T, b: T) -> Vec<Eigenvalue<T>> {
    let two: T = lit(2.0);
    let mut out = Vec::with_capacity(2 * reduced.nrows());
    for a in 0..reduced.nrows() {
        let mu = reduced[(a, a)];
        let p = b * mu;
        let disc = p * p - lit::<T>(4.0) * k * mu;
        if disc >= T::zero() {
            let r = disc.sqrt();
            // Stable form for the small root.
            let big = -(p + r) / two;
            let small = if big != T::zero() { k * mu / big } else { T::zero() };
            out.push(snap(Eigenvalue { re: big, im: T::zero() }));
            out.push(snap(Eigenvalue { re: small, im: T::zero() }));
        } else {
            let im = (-disc).sqrt() / two;
            let re = -p / two;
            out.push(snap(Eigenvalue { re, im }));
            out.push(snap(Eigenvalue { re, im: -im }));
        }
    }
    out
}

/// Largest distance in a greedy nearest-neighbour matching of two spectra.
pub fn spectrum_mismatch<T: Real>(a: &[Eigenvalue<T>], b: &[Eigenvalue<T>]) -> T {
    if a.len() != b.len() {
        return T::max_value().unwrap_or_else(|| lit(f64::MAX));
    }
    let mut used = vec![false; b.len()];
    let mut worst = T::zero();
    for ea in a {
        let mut best: Option<(usize, T)> = None;
        for (j, eb) in b.iter().enumerate() {
            if used[j] {
                continue;
            }
            let d = ea.dist(eb);
            if best.as_ref().is_none_or(|(_, bd)| d < *bd) {
                best = Some((j, d));
            }
        }
        let (j, d) = best.expect("equal lengths");
        used[j] = true;
        if d > worst {
            worst = d;
        }
    }
    worst
}

fn symmetric_part<T: Real>(l: &DMatrix<T>) -> DMatrix<T> {
    (l + l.transpose()) * lit::<T>(0.5)
}

fn max_sym_eigen<T: Real>(m: DMatrix<T>) -> T {
    m.symmetric_eigenvalues().max()
}

/// Common quadratic certificate for `Gamma(L)`; `None` when the symmetric
/// part of `L` is not positive definite.
pub fn lyapunov_certificate<T: Real>(reduced: &DMatrix<T>, k: T, b: T) -> Option<LyapunovCertificate<T>> {
    let m = reduced.nrows();
    if m == 0 {
        return None;
    }
    let lambda_min = symmetric_part(reduced).symmetric_eigenvalues().min();
    if lambda_min <= T::zero() {
        return None;
    }
    let beta = k / b;
    let alpha = lit::<T>(2.0) * beta * beta;
    let mut p = DMatrix::zeros(2 * m, 2 * m);
    for a in 0..m {
        p[(a, a)] = alpha;
        p[(a, m + a)] = beta;
        p[(m + a, a)] = beta;
        p[(m + a, m + a)] = T::one();
    }
    let gamma = gamma_matrix(reduced, k, b);
    let q_mat = &p * &gamma + gamma.transpose() * &p;
    Some(LyapunovCertificate {
        q: T::one() / alpha,
        lambda_min,
        negdef_margin: max_sym_eigen(symmetric_part(&q_mat)),
        p,
    })
}

/// Largest eigenvalue of `P Gamma + Gamma^T P` for the block-diagonal
/// `P = diag(I / q, I)` with `q = 2 / (k lambda_min)`. Its position block
/// is always zero, so the value is never negative.
pub fn block_diagonal_margin<T: Real>(reduced: &DMatrix<T>, k: T, b: T) -> Option<T> {
    let m = reduced.nrows();
    if m == 0 {
        return None;
    }
    let lambda_min = symmetric_part(reduced).symmetric_eigenvalues().min();
    if lambda_min <= T::zero() {
        return None;
    }
    let q = lit::<T>(2.0) / (k * lambda_min);
    let mut p = DMatrix::identity(2 * m, 2 * m);
    for a in 0..m {
        p[(a, a)] = T::one() / q;
    }
    let gamma = gamma_matrix(reduced, k, b);
    let q_mat = &p * &gamma + gamma.transpose() * &p;
    Some(max_sym_eigen(symmetric_part(&q_mat)))
}

/// Spectrum, Hurwitz test and certificate for the longitudinal gains.
pub fn analyze<T: Real>(bundle: &LaplacianBundle<T>, gains: &GainParams<T>) -> StabilityReport<T> {
    analyze_reduced(&bundle.reduced, gains.k, gains.b)
}

/// Same as [`analyze`] for an explicit reduced Laplacian and gain pair.
pub fn analyze_reduced<T: Real>(reduced: &DMatrix<T>, k: T, b: T) -> StabilityReport<T> {
    let eigenvalues = gamma_spectrum(reduced, k, b);
    let (margin_source, mismatch) = if is_lower_triangular(reduced) {
        let closed = closed_form_spectrum(reduced, k, b);
        let mismatch = spectrum_mismatch(&closed, &eigenvalues);
        (closed, Some(mismatch))
    } else {
        (eigenvalues.clone(), None)
    };
    let max_re = margin_source
        .iter()
        .map(|e| e.re)
        .fold(None, |acc: Option<T>, r| Some(acc.map_or(r, |a| if r > a { r } else { a })));
    let finite = margin_source.iter().all(|e| e.re.is_finite() && e.im.is_finite());
    let spectral_margin = if finite {
        max_re.map_or(T::zero(), |r| -r)
    } else {
        lit(f64::NAN)
    };
    StabilityReport {
        hurwitz: spectral_margin > T::zero(),
        spectral_margin,
        eigenvalues,
        closed_form_mismatch: mismatch,
        lyapunov: lyapunov_certificate(reduced, k, b),
    }
}

/// Whether a position jump `delta` does not increase the Euclidean norm of
/// the shifted (deviation from equilibrium) positions.
pub fn impulse_admissible<T: Real>(shifted: &DVector<T>, delta: &DVector<T>) -> bool {
    (shifted + delta).norm_squared() <= shifted.norm_squared()
}

/// Lyapunov function evaluated along a sampled trajectory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceCheckReport<T> {
    pub samples: usize,
    /// Largest `V(t_{n+1}) - V(t_n)` over ordinary steps (0 if none rose).
    pub max_step_increase: T,
    /// Largest `V(t+) - V(t)` across impulse instants, if any were given.
    pub max_impulse_increase: Option<T>,
    pub values: Vec<T>,
}

/// Evaluates `V = e^T P e` on `states` (shifted coordinates). Transition
/// `n -> n+1` is treated as an impulse when `impulse_after[n]` is set.
pub fn lyapunov_trace_check<T: Real>(
    states: &[DVector<T>],
    p: &DMatrix<T>,
    impulse_after: &[usize],
) -> TraceCheckReport<T> {
    let values: Vec<T> = states.iter().map(|e| e.dot(&(p * e))).collect();
    let mut step = T::zero();
    let mut jump: Option<T> = None;
    for n in 1..values.len() {
        let dv = values[n] - values[n - 1];
        if impulse_after.contains(&(n - 1)) {
            jump = Some(jump.map_or(dv, |j| if dv > j { dv } else { j }));
        } else if dv > step {
            step = dv;
        }
    }
    TraceCheckReport {
        samples: values.len(),
        max_step_increase: step,
        max_impulse_increase: jump,
        values,
    }
}

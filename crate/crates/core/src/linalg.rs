//! Small dense helpers shared by the model, the master-equation oracle and
//! the spin model.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

pub type CMatrix = DMatrix<C64>;

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn pauli_x() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[c(0., 0.), c(1., 0.), c(1., 0.), c(0., 0.)])
}

pub fn pauli_y() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[c(0., 0.), c(0., -1.), c(0., 1.), c(0., 0.)])
}

pub fn pauli_z() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[c(1., 0.), c(0., 0.), c(0., 0.), c(-1., 0.)])
}

pub fn eigenvalues_hermitian(m: &CMatrix) -> Vec<f64> {
    // Symmetrize first so rounding noise cannot produce complex eigenvalues.
    let h = (m + m.adjoint()) * c(0.5, 0.0);
    h.symmetric_eigen().eigenvalues.iter().copied().collect()
}

pub fn min_hermitian_eigenvalue(m: &CMatrix) -> f64 {
    eigenvalues_hermitian(m)
        .into_iter()
        .fold(f64::INFINITY, f64::min)
}

pub fn hermitian_spectral_norm(m: &CMatrix) -> f64 {
    eigenvalues_hermitian(m)
        .into_iter()
        .fold(0.0, |a, v| a.max(v.abs()))
}

pub fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    (a - b).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn trace(m: &CMatrix) -> C64 {
    m.diagonal().iter().sum()
}

/// `<psi| A |psi>` for a plain (unweighted) vector.
pub fn expectation(a: &CMatrix, psi: &[C64]) -> C64 {
    let n = psi.len();
    let mut acc = c(0.0, 0.0);
    for i in 0..n {
        let mut row = c(0.0, 0.0);
        for j in 0..n {
            row += a[(i, j)] * psi[j];
        }
        acc += psi[i].conj() * row;
    }
    acc
}

/// `|psi><psi|`.
pub fn projector(psi: &[C64]) -> CMatrix {
    let n = psi.len();
    CMatrix::from_fn(n, n, |i, j| psi[i] * psi[j].conj())
}

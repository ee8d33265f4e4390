//! Spinor realization of the maps and the sixteen-label detector model
//! (four yes/no devices, each click flips one of them).

use super::{check_fuzz, directions, Spinor, Vec3};
use crate::error::{Error, Result};
use crate::model::{CMatrix, Hamiltonian, HybridModel, JumpOp, JumpOperator, QuantumSpace, Units, C64};

pub fn bloch_from_spinor(psi: &Spinor) -> Result<Vec3> {
    let n2 = psi[0].norm_sqr() + psi[1].norm_sqr();
    if !(n2 > 0.0) {
        return Err(Error::InvalidArgument("zero spinor".into()));
    }
    let ab = psi[0].conj() * psi[1];
    Ok(Vec3::new(2.0 * ab.re, 2.0 * ab.im, psi[0].norm_sqr() - psi[1].norm_sqr()) / n2)
}

/// A normalized spinor with Bloch vector `r` (phase fixed by a real first
/// component, or `(0, 1)` at the south pole).
pub fn spinor_from_bloch(r: &Vec3) -> Result<Spinor> {
    let n = r.norm();
    if !(n > 0.0) {
        return Err(Error::InvalidArgument("zero vector".into()));
    }
    let z = (r.z / n).clamp(-1.0, 1.0);
    let c = ((1.0 + z) / 2.0).sqrt();
    let s = ((1.0 - z) / 2.0).sqrt();
    let phi = r.y.atan2(r.x);
    Ok([C64::new(c, 0.0), C64::from_polar(s, phi)])
}

/// `g_i = (1 + a sigma.n_i) / (2 sqrt(1 + a^2))`, so `sum g_i^dag g_i = 1`.
pub fn jump_operator(i: usize, a: f64) -> Result<CMatrix> {
    check_fuzz(a)?;
    let n = directions()
        .get(i)
        .copied()
        .ok_or_else(|| Error::InvalidArgument(format!("device index {i} out of 0..4")))?;
    let k = 1.0 / (2.0 * (1.0 + a * a).sqrt());
    Ok(CMatrix::from_row_slice(
        2,
        2,
        &[
            C64::new(k * (1.0 + a * n.z), 0.0),
            C64::new(k * a * n.x, -k * a * n.y),
            C64::new(k * a * n.x, k * a * n.y),
            C64::new(k * (1.0 - a * n.z), 0.0),
        ],
    ))
}

/// `g_i psi / ||g_i psi||`.
pub fn spin_jump(psi: &Spinor, i: usize, a: f64) -> Result<Spinor> {
    let g = jump_operator(i, a)?;
    let out = [
        g[(0, 0)] * psi[0] + g[(0, 1)] * psi[1],
        g[(1, 0)] * psi[0] + g[(1, 1)] * psi[1],
    ];
    let n = (out[0].norm_sqr() + out[1].norm_sqr()).sqrt();
    if !(n > 0.0) {
        return Err(Error::InvalidArgument("jump annihilates the state".into()));
    }
    Ok([out[0] / n, out[1] / n])
}

pub const N_LABELS: usize = 16;

/// Jump index of device `i` firing from label `alpha`.
pub fn spin_jump_index(alpha: usize, i: usize) -> usize {
    4 * alpha + i
}

/// Spin-1/2 with `H = 0` coupled to four devices; label bit `i` is the
/// state of device `i`, and device `i` flips with operator
/// `sqrt(rate) g_i`. Every label has `Lambda = rate`.
pub fn spin_model(a: f64, rate: f64) -> Result<HybridModel> {
    if !(rate > 0.0) {
        return Err(Error::InvalidArgument(format!("rate must be > 0, got {rate}")));
    }
    let ops: Vec<CMatrix> = (0..4)
        .map(|i| jump_operator(i, a).map(|g| g * C64::new(rate.sqrt(), 0.0)))
        .collect::<Result<_>>()?;
    let mut jumps = Vec::with_capacity(4 * N_LABELS);
    for alpha in 0..N_LABELS {
        for (i, g) in ops.iter().enumerate() {
            jumps.push(JumpOperator {
                source: alpha,
                target: alpha ^ (1 << i),
                op: JumpOp::Matrix(g.clone()),
                spatial_tag: None,
            });
        }
    }
    HybridModel::new(
        (0..N_LABELS).map(|b| format!("{b:04b}")).collect(),
        vec![QuantumSpace::Finite { dim: 2 }; N_LABELS],
        vec![Hamiltonian::Matrix(CMatrix::zeros(2, 2)); N_LABELS],
        jumps,
        Units::electron(),
    )
}

//! Tetrahedral spin model: four simultaneous fuzzy spin measurements
//! along the vertices of a regular tetrahedron give a nonlinear iterated
//! function system on the Bloch sphere with point-dependent probabilities.

pub mod markov;
pub mod sphere;
pub mod spin;
#[cfg(test)]
mod tests;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::engine::split_seed;
use crate::error::{Error, Result};
use crate::model::C64;

pub use markov::MarkovOperator;
pub use sphere::{box_counting_dimension, DimensionFit, Pixelization, SphereMeasure};
pub use spin::{bloch_from_spinor, jump_operator, spin_jump, spin_model, spinor_from_bloch};

pub type Vec3 = Vector3<f64>;

/// Tetrahedron vertices `n_1..n_4`.
pub fn directions() -> [Vec3; 4] {
    let s2 = 2f64.sqrt();
    let s23 = (2.0f64 / 3.0).sqrt();
    [
        Vec3::new(1.0, 0.0, 0.0),
        Vec3::new(-1.0 / 3.0, 0.0, 2.0 * s2 / 3.0),
        Vec3::new(-1.0 / 3.0, s23, -s2 / 3.0),
        Vec3::new(-1.0 / 3.0, -s23, -s2 / 3.0),
    ]
}

pub fn check_fuzz(a: f64) -> Result<()> {
    if !(a > 0.0 && a < 1.0) {
        return Err(Error::InvalidArgument(format!("a_fuzz must lie in (0, 1), got {a}")));
    }
    Ok(())
}

/// Map `T_i` without argument checks; also used with negative `a`.
pub(crate) fn map_raw(r: &Vec3, n: &Vec3, a: f64) -> Vec3 {
    let rn = r.dot(n);
    let v = r * (1.0 - a * a) + n * (2.0 * a * (1.0 + a * rn));
    let out = v / (1.0 + a * a + 2.0 * a * rn);
    out / out.norm()
}

/// `T_i(r)` for `i` in `0..4`, renormalized to the unit sphere.
pub fn ifs_map(r: &Vec3, i: usize, a: f64) -> Result<Vec3> {
    check_fuzz(a)?;
    let n = directions()
        .get(i)
        .copied()
        .ok_or_else(|| Error::InvalidArgument(format!("map index {i} out of 0..4")))?;
    Ok(map_raw(r, &n, a))
}

/// `p_i(r)`; any `a` is accepted.
pub fn ifs_probs(r: &Vec3, a: f64) -> [f64; 4] {
    let d = directions();
    let den = 4.0 * (1.0 + a * a);
    let mut p = [0.0; 4];
    for (pi, n) in p.iter_mut().zip(&d) {
        *pi = (1.0 + a * a + 2.0 * a * r.dot(n)) / den;
    }
    p
}

/// Uniform point on the unit sphere.
pub fn random_unit<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    let z: f64 = rng.random_range(-1.0..1.0);
    let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let s = (1.0 - z * z).sqrt();
    Vec3::new(s * phi.cos(), s * phi.sin(), z)
}

pub fn choose(p: &[f64; 4], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    3
}

pub const DEFAULT_BURN_IN: usize = 100;

/// Chaos-game orbit of length `n` after discarding `burn_in` steps.
pub fn chaos_game(r0: &Vec3, a: f64, n: usize, burn_in: usize, seed: u64) -> Result<Vec<Vec3>> {
    check_fuzz(a)?;
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one point".into()));
    }
    let norm = r0.norm();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("start point has |r| = {norm}")));
    }
    let d = directions();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = *r0;
    let mut out = Vec::with_capacity(n);
    for k in 0..burn_in + n {
        let i = choose(&ifs_probs(&r, a), rng.random());
        r = map_raw(&r, &d[i], a);
        if k >= burn_in {
            out.push(r);
        }
    }
    Ok(out)
}

/// Independent chains from random starts, pooled in chain order.
pub fn chaos_game_pooled(a: f64, chains: usize, per_chain: usize, master_seed: u64) -> Result<Vec<Vec3>> {
    if chains == 0 {
        return Err(Error::InvalidArgument("need at least one chain".into()));
    }
    let parts = (0..chains as u64)
        .into_par_iter()
        .map(|c| {
            let seed = split_seed(master_seed, c);
            let r0 = random_unit(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed));
            chaos_game(&r0, a, per_chain, DEFAULT_BURN_IN, seed)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(parts.concat())
}

/// Index of the nearest tetrahedron vertex (Voronoi cell of `r`).
pub fn voronoi_cell(r: &Vec3) -> usize {
    let d = directions();
    (0..4).max_by(|&i, &j| r.dot(&d[i]).total_cmp(&r.dot(&d[j]))).unwrap()
}

/// Amplitudes of a spinor as plain complex numbers.
pub type Spinor = [C64; 2];

//! Crank–Nicolson stepping of the damped Schrödinger equation
//! `d psi/dt = K psi` with `K = -iH/hbar - Lambda/2`.
//!
//! One step solves `(I - h/2 K) psi' = (I + h/2 K) psi`. Finite spaces use
//! a dense propagator matrix, 1D grids a tridiagonal (Thomas) solve with an
//! optional moving window, 2D grids the Peaceman–Rachford ADI split.
//! Norms are never restored: the decay of `||psi||^2` is what the jump
//! sampler reads.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{EffectiveGenerator, HybridModel, C64};

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

/// Moving-window policy for 1D grids: grid points outside the window are
/// held at exactly zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WindowPolicy {
    /// `|psi|^2` below this counts as empty.
    pub tol: f64,
    /// Empty points kept between the outermost occupied point and the edge.
    pub margin: usize,
}

impl Default for WindowPolicy {
    fn default() -> Self {
        WindowPolicy {
            tol: 1e-30,
            margin: 96,
        }
    }
}

/// Per-label stepper for the engine's fixed step.
#[derive(Debug)]
enum Stepper {
    Dense {
        n: usize,
        /// Row-major `A^{-1} B`.
        u: Vec<C64>,
    },
    Tridiagonal(TriFactor),
    Adi(AdiFactor),
}

/// `A = I - h/2 K` factorized from index 0; `B = I + h/2 K`.
#[derive(Debug)]
struct TriFactor {
    b_diag: Vec<C64>,
    /// Off-diagonal of `B`.
    b_off: C64,
    /// Off-diagonal of `A`.
    a_off: C64,
    cp: Vec<C64>,
    inv_den: Vec<C64>,
}

impl TriFactor {
    fn new(diag_k: &[C64], off_k: C64, h: f64) -> Result<Self> {
        let half = C64::new(0.5 * h, 0.0);
        let a_off = -half * off_k;
        let b_off = half * off_k;
        let n = diag_k.len();
        let mut cp = vec![ZERO; n];
        let mut inv_den = vec![ZERO; n];
        let mut prev_cp = ZERO;
        for i in 0..n {
            let a = ONE - half * diag_k[i];
            let den = a - a_off * prev_cp;
            if den.norm() < 1e-300 {
                return Err(Error::LinearSolve(format!(
                    "singular tridiagonal pivot at row {i}"
                )));
            }
            inv_den[i] = ONE / den;
            cp[i] = a_off * inv_den[i];
            prev_cp = cp[i];
        }
        let b_diag = diag_k.iter().map(|&k| ONE + half * k).collect();
        Ok(TriFactor {
            b_diag,
            b_off,
            a_off,
            cp,
            inv_den,
        })
    }

    /// One step on `[lo, hi)`, assuming `psi` vanishes outside.
    fn apply(&self, psi: &mut [C64], lo: usize, hi: usize, buf: &mut Vec<C64>) {
        if lo >= hi {
            return;
        }
        buf.clear();
        buf.resize(hi - lo, ZERO);
        // forward sweep fused with the right-hand side
        let mut prev = ZERO;
        for i in lo..hi {
            let left = if i > lo { psi[i - 1] } else { ZERO };
            let right = if i + 1 < hi { psi[i + 1] } else { ZERO };
            let d = self.b_diag[i] * psi[i] + self.b_off * (left + right);
            prev = (d - self.a_off * prev) * self.inv_den[i];
            buf[i - lo] = prev;
        }
        let mut next = ZERO;
        for i in (lo..hi).rev() {
            next = buf[i - lo] - self.cp[i] * next;
            psi[i] = next;
        }
    }
}

/// Thomas solve with an on-the-fly factorization (used for partial steps).
fn tridiagonal_step(
    diag_k: &[C64],
    off_k: C64,
    h: f64,
    psi: &mut [C64],
    lo: usize,
    hi: usize,
    stride: usize,
    buf: &mut Vec<C64>,
) -> Result<()> {
    if lo >= hi {
        return Ok(());
    }
    let half = C64::new(0.5 * h, 0.0);
    let a_off = -half * off_k;
    let b_off = half * off_k;
    let m = hi - lo;
    buf.clear();
    buf.resize(2 * m, ZERO);
    let (dp, cp) = buf.split_at_mut(m);
    let idx = |i: usize| i * stride;
    let mut prev_cp = ZERO;
    let mut prev_dp = ZERO;
    for i in 0..m {
        let g = lo + i;
        let left = if i > 0 { psi[idx(g - 1)] } else { ZERO };
        let right = if i + 1 < m { psi[idx(g + 1)] } else { ZERO };
        let d = (ONE + half * diag_k[g]) * psi[idx(g)] + b_off * (left + right);
        let den = (ONE - half * diag_k[g]) - a_off * prev_cp;
        if den.norm() < 1e-300 {
            return Err(Error::LinearSolve(format!("singular pivot at row {g}")));
        }
        let inv = ONE / den;
        cp[i] = a_off * inv;
        dp[i] = (d - a_off * prev_dp) * inv;
        prev_cp = cp[i];
        prev_dp = dp[i];
    }
    let mut next = ZERO;
    for i in (0..m).rev() {
        next = dp[i] - cp[i] * next;
        psi[idx(lo + i)] = next;
    }
    Ok(())
}

/// Peaceman–Rachford split of `K` into x and y parts, each carrying half
/// of the potential and of `Lambda`.
#[derive(Debug)]
struct AdiFactor {
    nx: usize,
    ny: usize,
    /// Diagonal of `K_x` (= diagonal of `K_y` up to the kinetic constants).
    kx_diag: Vec<C64>,
    ky_diag: Vec<C64>,
    off_x: C64,
    off_y: C64,
    /// Per-row factorizations of `I - h/2 K_x` (row-major, length nx*ny).
    x_cp: Vec<C64>,
    x_inv: Vec<C64>,
    /// Per-column factorizations of `I - h/2 K_y` (column-major).
    y_cp: Vec<C64>,
    y_inv: Vec<C64>,
    h: f64,
}

impl AdiFactor {
    fn split(gen: &EffectiveGenerator) -> (usize, usize, Vec<C64>, Vec<C64>, C64, C64) {
        let EffectiveGenerator::Stencil2D {
            nx,
            ny,
            diag,
            off_x,
            off_y,
        } = gen
        else {
            unreachable!()
        };
        // diag = -i(2tx + 2ty + V)/hbar - Lambda/2, off = i t/hbar
        // K_x diag = -i(2tx)/hbar + (rest)/2 where rest = diag + 2i(tx+ty)/hbar
        let two = C64::new(2.0, 0.0);
        let kx_kin = -two * off_x;
        let ky_kin = -two * off_y;
        let rest: Vec<C64> = diag.iter().map(|d| d - kx_kin - ky_kin).collect();
        let kx = rest.iter().map(|r| kx_kin + r * 0.5).collect();
        let ky = rest.iter().map(|r| ky_kin + r * 0.5).collect();
        (*nx, *ny, kx, ky, *off_x, *off_y)
    }

    fn new(gen: &EffectiveGenerator, h: f64) -> Result<Self> {
        let (nx, ny, kx_diag, ky_diag, off_x, off_y) = Self::split(gen);
        let half = 0.5 * h;
        let mut x_cp = vec![ZERO; nx * ny];
        let mut x_inv = vec![ZERO; nx * ny];
        let ax = -off_x * half;
        for j in 0..ny {
            let mut prev = ZERO;
            for i in 0..nx {
                let k = j * nx + i;
                let den = (ONE - kx_diag[k] * half) - ax * prev;
                if den.norm() < 1e-300 {
                    return Err(Error::LinearSolve("singular ADI pivot (x)".into()));
                }
                x_inv[k] = ONE / den;
                x_cp[k] = ax * x_inv[k];
                prev = x_cp[k];
            }
        }
        let mut y_cp = vec![ZERO; nx * ny];
        let mut y_inv = vec![ZERO; nx * ny];
        let ay = -off_y * half;
        for i in 0..nx {
            let mut prev = ZERO;
            for j in 0..ny {
                let k = j * nx + i;
                let c = i * ny + j;
                let den = (ONE - ky_diag[k] * half) - ay * prev;
                if den.norm() < 1e-300 {
                    return Err(Error::LinearSolve("singular ADI pivot (y)".into()));
                }
                y_inv[c] = ONE / den;
                y_cp[c] = ay * y_inv[c];
                prev = y_cp[c];
            }
        }
        Ok(AdiFactor {
            nx,
            ny,
            kx_diag,
            ky_diag,
            off_x,
            off_y,
            x_cp,
            x_inv,
            y_cp,
            y_inv,
            h,
        })
    }

    fn apply(&self, psi: &mut [C64], buf: &mut Vec<C64>) {
        let (nx, ny) = (self.nx, self.ny);
        let half = 0.5 * self.h;
        let bx = self.off_x * half;
        let by = self.off_y * half;
        let ax = -bx;
        let ay = -by;
        buf.clear();
        buf.resize(nx * ny + nx.max(ny), ZERO);
        let (r, line) = buf.split_at_mut(nx * ny);

        // r = (I + h/2 K_y) psi
        for j in 0..ny {
            for i in 0..nx {
                let k = j * nx + i;
                let up = if j + 1 < ny { psi[k + nx] } else { ZERO };
                let dn = if j > 0 { psi[k - nx] } else { ZERO };
                r[k] = (ONE + self.ky_diag[k] * half) * psi[k] + by * (up + dn);
            }
        }
        // (I - h/2 K_x) psi* = r, row by row
        for j in 0..ny {
            let row = j * nx;
            let mut prev = ZERO;
            for i in 0..nx {
                let k = row + i;
                prev = (r[k] - ax * prev) * self.x_inv[k];
                line[i] = prev;
            }
            let mut next = ZERO;
            for i in (0..nx).rev() {
                next = line[i] - self.x_cp[row + i] * next;
                psi[row + i] = next;
            }
        }
        // r = (I + h/2 K_x) psi*
        for j in 0..ny {
            for i in 0..nx {
                let k = j * nx + i;
                let rt = if i + 1 < nx { psi[k + 1] } else { ZERO };
                let lt = if i > 0 { psi[k - 1] } else { ZERO };
                r[k] = (ONE + self.kx_diag[k] * half) * psi[k] + bx * (lt + rt);
            }
        }
        // (I - h/2 K_y) psi' = r, column by column
        for i in 0..nx {
            let mut prev = ZERO;
            for j in 0..ny {
                let k = j * nx + i;
                let c = i * ny + j;
                prev = (r[k] - ay * prev) * self.y_inv[c];
                line[j] = prev;
            }
            let mut next = ZERO;
            for j in (0..ny).rev() {
                next = line[j] - self.y_cp[i * ny + j] * next;
                psi[j * nx + i] = next;
            }
        }
    }
}

/// Scratch space owned by one trajectory.
#[derive(Debug, Default)]
pub struct Workspace {
    buf: Vec<C64>,
}

/// Crank–Nicolson propagators for every label at a fixed step `dt`.
#[derive(Debug)]
pub struct Propagator<'m> {
    model: &'m HybridModel,
    generators: Vec<EffectiveGenerator>,
    steppers: Vec<Stepper>,
    dt: f64,
    window: Option<WindowPolicy>,
}

impl<'m> Propagator<'m> {
    pub fn new(model: &'m HybridModel, dt: f64, window: Option<WindowPolicy>) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("dt must be > 0, got {dt}")));
        }
        let generators: Vec<_> = (0..model.n_labels())
            .map(|a| model.effective_generator(a))
            .collect();
        let steppers = generators
            .iter()
            .map(|g| Self::build_stepper(g, dt))
            .collect::<Result<Vec<_>>>()?;
        Ok(Propagator {
            model,
            generators,
            steppers,
            dt,
            window,
        })
    }

    fn build_stepper(gen: &EffectiveGenerator, h: f64) -> Result<Stepper> {
        Ok(match gen {
            EffectiveGenerator::Matrix(k) => {
                let n = k.nrows();
                let u = dense_cayley(k, h)?;
                Stepper::Dense {
                    n,
                    u: (0..n * n).map(|x| u[(x / n, x % n)]).collect(),
                }
            }
            EffectiveGenerator::Tridiagonal { diag, off } => {
                Stepper::Tridiagonal(TriFactor::new(diag, *off, h)?)
            }
            EffectiveGenerator::Stencil2D { .. } => Stepper::Adi(AdiFactor::new(gen, h)?),
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn model(&self) -> &'m HybridModel {
        self.model
    }

    pub fn window_policy(&self) -> Option<WindowPolicy> {
        self.window
    }

    /// Advances `psi` (label `label`, active range `active`) by `h`.
    /// Steps of exactly `dt` reuse the precomputed factorization.
    pub fn step(
        &self,
        label: usize,
        psi: &mut [C64],
        active: &mut (usize, usize),
        h: f64,
        ws: &mut Workspace,
    ) -> Result<()> {
        if h <= 0.0 {
            return Ok(());
        }
        let full = (h - self.dt).abs() <= 1e-9 * self.dt;
        match (&self.steppers[label], &self.generators[label]) {
            (Stepper::Dense { n, u }, EffectiveGenerator::Matrix(k)) => {
                let n = *n;
                ws.buf.clear();
                ws.buf.extend_from_slice(psi);
                if full {
                    for i in 0..n {
                        let row = &u[i * n..(i + 1) * n];
                        let mut acc = ZERO;
                        for j in 0..n {
                            acc += row[j] * ws.buf[j];
                        }
                        psi[i] = acc;
                    }
                } else {
                    let um = dense_cayley(k, h)?;
                    for i in 0..n {
                        psi[i] = (0..n).map(|j| um[(i, j)] * ws.buf[j]).sum();
                    }
                }
            }
            (Stepper::Tridiagonal(f), EffectiveGenerator::Tridiagonal { diag, off }) => {
                if self.window.is_some() {
                    self.adjust_window(psi, active);
                }
                let (lo, hi) = *active;
                if full {
                    f.apply(psi, lo, hi, &mut ws.buf);
                } else {
                    tridiagonal_step(diag, *off, h, psi, lo, hi, 1, &mut ws.buf)?;
                }
            }
            (Stepper::Adi(f), gen) => {
                if full {
                    f.apply(psi, &mut ws.buf);
                } else {
                    AdiFactor::new(gen, h)?.apply(psi, &mut ws.buf);
                }
            }
            _ => unreachable!("stepper and generator built together"),
        }
        Ok(())
    }

    /// Keeps `margin` empty points on both sides of the occupied region.
    fn adjust_window(&self, psi: &mut [C64], active: &mut (usize, usize)) {
        let Some(policy) = self.window else { return };
        let n = psi.len();
        let (lo, hi) = *active;
        let first = (lo..hi).find(|&i| psi[i].norm_sqr() > policy.tol);
        let Some(first) = first else {
            // nothing left above tolerance: keep a small window in place
            return;
        };
        let last = (first..hi).rev().find(|&i| psi[i].norm_sqr() > policy.tol).unwrap();
        let m = policy.margin;
        let new_lo = if first < lo + m / 2 || first > lo + 2 * m {
            first.saturating_sub(m)
        } else {
            lo
        };
        let new_hi = if last + m / 2 >= hi || last + 2 * m < hi {
            (last + 1 + m).min(n)
        } else {
            hi
        };
        if new_lo > lo {
            for v in &mut psi[lo..new_lo] {
                *v = ZERO;
            }
        }
        if new_hi < hi {
            for v in &mut psi[new_hi..hi] {
                *v = ZERO;
            }
        }
        *active = (new_lo, new_hi);
    }
}

/// `(I - h/2 K)^{-1} (I + h/2 K)`.
pub fn dense_cayley(k: &DMatrix<C64>, h: f64) -> Result<DMatrix<C64>> {
    let n = k.nrows();
    let id = DMatrix::<C64>::identity(n, n);
    let half = C64::new(0.5 * h, 0.0);
    let a = &id - k * half;
    let b = &id + k * half;
    a.lu()
        .solve(&b)
        .ok_or_else(|| Error::LinearSolve("singular Crank-Nicolson matrix".into()))
}

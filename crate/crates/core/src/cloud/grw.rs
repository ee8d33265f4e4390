use super::DetectorMedium;
use crate::error::{Error, Result};
use crate::model::{CMatrix, QuantumSpace, Units, C64};

/// Dense integrator for the quantum marginal of the medium,
///
/// ```text
/// rho' = -i [H, rho] / hbar + sum_a g_a rho g_a - {Lambda, rho} / 2
/// ```
///
/// on a 1D grid. `rho` carries the grid weight (`rho = dx |psi><psi|`),
/// so `tr rho = 1`.
#[derive(Clone, Debug)]
pub struct GrwOracle {
    n: usize,
    x: Vec<f64>,
    hbar: f64,
    pub(super) h_diag: Vec<f64>,
    pub(super) h_off: f64,
    /// `sum_a g_a(x) g_a(x')`, row-major.
    kernel: Vec<f64>,
    lambda: Vec<f64>,
}

pub const MAX_GRID: usize = 128;

#[derive(Clone, Debug)]
pub struct GrwSeries {
    pub times: Vec<f64>,
    pub rho: Vec<CMatrix>,
}

impl GrwOracle {
    pub fn new(medium: &DetectorMedium, potential: Option<&[f64]>, units: Units) -> Result<Self> {
        let QuantumSpace::Grid1D(g) = medium.space() else {
            return Err(Error::Unsupported("the effective-equation oracle is 1D".into()));
        };
        if g.n > MAX_GRID {
            return Err(Error::Unsupported(format!(
                "grid of {} points exceeds the dense limit {MAX_GRID}",
                g.n
            )));
        }
        let n = g.n;
        let t = units.kinetic / (g.dx() * g.dx());
        let h_diag = (0..n)
            .map(|i| 2.0 * t + potential.map_or(0.0, |v| v[i]))
            .collect();
        let profiles: Vec<Vec<f64>> = (0..medium.sites().len())
            .map(|a| medium.profile(a).to_dense(medium.space()))
            .collect();
        let mut kernel = vec![0.0; n * n];
        for p in &profiles {
            for i in 0..n {
                if p[i] == 0.0 {
                    continue;
                }
                for j in 0..n {
                    kernel[i * n + j] += p[i] * p[j];
                }
            }
        }
        let lambda = (0..n).map(|i| kernel[i * n + i]).collect();
        Ok(GrwOracle {
            n,
            x: g.points(),
            hbar: units.hbar,
            h_diag,
            h_off: -t,
            kernel,
            lambda,
        })
    }

    pub fn lambda_field(&self) -> &[f64] {
        &self.lambda
    }

    fn h_times(&self, rho: &CMatrix, out: &mut CMatrix) {
        let n = self.n;
        for j in 0..n {
            for i in 0..n {
                let mut z = rho[(i, j)] * self.h_diag[i];
                if i > 0 {
                    z += rho[(i - 1, j)] * self.h_off;
                }
                if i + 1 < n {
                    z += rho[(i + 1, j)] * self.h_off;
                }
                out[(i, j)] = z;
            }
        }
    }

    pub fn rhs(&self, rho: &CMatrix) -> CMatrix {
        let n = self.n;
        let mut hr = CMatrix::zeros(n, n);
        self.h_times(rho, &mut hr);
        // rho H = (H rho^dagger)^dagger
        let mut hrd = CMatrix::zeros(n, n);
        self.h_times(&rho.adjoint(), &mut hrd);
        let rh = hrd.adjoint();
        let mi = C64::new(0.0, -1.0 / self.hbar);
        CMatrix::from_fn(n, n, |i, j| {
            mi * (hr[(i, j)] - rh[(i, j)])
                + rho[(i, j)]
                    * (self.kernel[i * n + j] - 0.5 * (self.lambda[i] + self.lambda[j]))
        })
    }

    /// RK4 from `rho0` to `t_end` (a multiple of `dt`), keeping every
    /// `stride`-th state plus the first and last.
    pub fn integrate(&self, rho0: &CMatrix, t_end: f64, dt: f64, stride: usize) -> Result<GrwSeries> {
        if rho0.nrows() != self.n || rho0.ncols() != self.n {
            return Err(Error::DimensionMismatch(format!(
                "rho is {}x{}, grid has {} points",
                rho0.nrows(),
                rho0.ncols(),
                self.n
            )));
        }
        if !(dt > 0.0) || t_end < 0.0 || stride == 0 {
            return Err(Error::InvalidArgument("need dt > 0, t_end >= 0, stride >= 1".into()));
        }
        let steps_f = t_end / dt;
        let steps = steps_f.round() as usize;
        if (steps_f - steps as f64).abs() > 1e-6 {
            return Err(Error::InvalidArgument(format!(
                "t_end = {t_end} is not a multiple of dt = {dt}"
            )));
        }
        let half = C64::new(0.5 * dt, 0.0);
        let full = C64::new(dt, 0.0);
        let sixth = C64::new(dt / 6.0, 0.0);
        let two = C64::new(2.0, 0.0);
        let mut rho = rho0.clone();
        let mut out = GrwSeries {
            times: vec![0.0],
            rho: vec![rho.clone()],
        };
        for k in 1..=steps {
            let k1 = self.rhs(&rho);
            let k2 = self.rhs(&(&rho + &k1 * half));
            let k3 = self.rhs(&(&rho + &k2 * half));
            let k4 = self.rhs(&(&rho + &k3 * full));
            rho += (k1 + k2 * two + k3 * two + k4) * sixth;
            if k % stride == 0 || k == steps {
                out.times.push(k as f64 * dt);
                out.rho.push(rho.clone());
            }
        }
        Ok(out)
    }

    /// `(<x>, <x^2>, tr rho^2)`.
    pub fn moments(&self, rho: &CMatrix) -> (f64, f64, f64) {
        let tr: f64 = (0..self.n).map(|i| rho[(i, i)].re).sum();
        let m1: f64 = (0..self.n).map(|i| self.x[i] * rho[(i, i)].re).sum::<f64>() / tr;
        let m2: f64 = (0..self.n)
            .map(|i| self.x[i] * self.x[i] * rho[(i, i)].re)
            .sum::<f64>()
            / tr;
        let purity = rho.iter().map(|z| z.norm_sqr()).sum::<f64>() / (tr * tr);
        (m1, m2, purity)
    }
}

/// One evaluation of the effective-equation right-hand side.
pub fn grw_effective_rhs(medium: &DetectorMedium, rho: &CMatrix, units: Units) -> Result<CMatrix> {
    let o = GrwOracle::new(medium, None, units)?;
    if rho.nrows() != o.n || rho.ncols() != o.n {
        return Err(Error::DimensionMismatch("rho does not match the grid".into()));
    }
    Ok(o.rhs(rho))
}

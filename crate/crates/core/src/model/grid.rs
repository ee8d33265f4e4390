use serde::{Deserialize, Serialize};

/// Uniform 1D grid including both end points; Dirichlet walls sit just
/// outside `x_min` and `x_max`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    pub x_min: f64,
    pub x_max: f64,
    pub n: usize,
}

impl Grid1D {
    pub fn new(x_min: f64, x_max: f64, n: usize) -> Self {
        Grid1D { x_min, x_max, n }
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / (self.n as f64 - 1.0)
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x_min + i as f64 * self.dx()
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.x(i)).collect()
    }

    /// Index range `[lo, hi)` of grid points within `[a, b]`.
    pub fn index_range(&self, a: f64, b: f64) -> (usize, usize) {
        let dx = self.dx();
        let lo = ((a - self.x_min) / dx).ceil().max(0.0) as usize;
        let hi = (((b - self.x_min) / dx).floor() + 1.0).max(0.0) as usize;
        (lo.min(self.n), hi.min(self.n).max(lo.min(self.n)))
    }

    pub(crate) fn is_valid(&self) -> bool {
        self.n >= 2 && self.x_max > self.x_min && self.dx() > 0.0
    }
}

/// Real, non-negative multiplication profile `g(x)` of a detector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Profile {
    /// One value per grid point.
    Dense(Vec<f64>),
    /// `peak * exp(-|x - center|^2 / (2 sigma^2))`; evaluated only within
    /// `GAUSSIAN_CUTOFF` standard deviations of the center.
    Gaussian {
        center: [f64; 2],
        sigma: f64,
        peak: f64,
    },
}

/// Beyond this many standard deviations a Gaussian profile is treated as
/// exactly zero (amplitude below e^-72).
pub const GAUSSIAN_CUTOFF: f64 = 12.0;

impl Profile {
    pub fn gaussian_1d(center: f64, sigma: f64, peak: f64) -> Self {
        Profile::Gaussian {
            center: [center, 0.0],
            sigma,
            peak,
        }
    }

    pub fn gaussian_2d(center: [f64; 2], sigma: f64, peak: f64) -> Self {
        Profile::Gaussian {
            center,
            sigma,
            peak,
        }
    }

    /// Visits every grid point where the profile may be nonzero, in the
    /// flattened (row-major, x fastest) index order.
    pub fn for_each(&self, space: &super::QuantumSpace, mut f: impl FnMut(usize, f64)) {
        use super::QuantumSpace;
        match (self, space) {
            (Profile::Dense(v), _) => {
                for (i, &g) in v.iter().enumerate() {
                    if g != 0.0 {
                        f(i, g);
                    }
                }
            }
            (
                Profile::Gaussian {
                    center,
                    sigma,
                    peak,
                },
                QuantumSpace::Grid1D(grid),
            ) => {
                let reach = GAUSSIAN_CUTOFF * sigma;
                let (lo, hi) = grid.index_range(center[0] - reach, center[0] + reach);
                let inv = 1.0 / (2.0 * sigma * sigma);
                for i in lo..hi {
                    let d = grid.x(i) - center[0];
                    f(i, peak * (-d * d * inv).exp());
                }
            }
            (
                Profile::Gaussian {
                    center,
                    sigma,
                    peak,
                },
                QuantumSpace::Grid2D { x, y },
            ) => {
                let reach = GAUSSIAN_CUTOFF * sigma;
                let (xlo, xhi) = x.index_range(center[0] - reach, center[0] + reach);
                let (ylo, yhi) = y.index_range(center[1] - reach, center[1] + reach);
                let inv = 1.0 / (2.0 * sigma * sigma);
                let gx: Vec<f64> = (xlo..xhi)
                    .map(|i| {
                        let d = x.x(i) - center[0];
                        (-d * d * inv).exp()
                    })
                    .collect();
                for j in ylo..yhi {
                    let d = y.x(j) - center[1];
                    let gy = peak * (-d * d * inv).exp();
                    let row = j * x.n;
                    for (off, gxv) in gx.iter().enumerate() {
                        f(row + xlo + off, gy * gxv);
                    }
                }
            }
            (Profile::Gaussian { .. }, QuantumSpace::Finite { .. }) => {}
        }
    }

    /// Dense evaluation over the whole space.
    pub fn to_dense(&self, space: &super::QuantumSpace) -> Vec<f64> {
        let mut out = vec![0.0; space.len()];
        self.for_each(space, |i, g| out[i] = g);
        out
    }
}

/// Normalized Gaussian packet `exp(-|x - center|^2 / (4 sigma^2) + i k.x)`
/// on a grid space; `sigma` is the position standard deviation of
/// `|psi|^2`.
pub fn gaussian_packet(
    space: &super::QuantumSpace,
    center: [f64; 2],
    sigma: f64,
    k: [f64; 2],
) -> crate::error::Result<Vec<super::C64>> {
    use super::{QuantumSpace, C64};
    let inv = 1.0 / (4.0 * sigma * sigma);
    let amp = |x: f64, y: f64| {
        let (dx, dy) = (x - center[0], y - center[1]);
        C64::from_polar((-(dx * dx + dy * dy) * inv).exp(), k[0] * x + k[1] * y)
    };
    let mut psi: Vec<C64> = match space {
        QuantumSpace::Grid1D(g) => (0..g.n).map(|i| amp(g.x(i), center[1])).collect(),
        QuantumSpace::Grid2D { x, y } => (0..y.n)
            .flat_map(|j| (0..x.n).map(move |i| (i, j)))
            .map(|(i, j)| amp(x.x(i), y.x(j)))
            .collect(),
        QuantumSpace::Finite { .. } => {
            return Err(crate::error::Error::InvalidArgument(
                "wave packets need a grid space".into(),
            ))
        }
    };
    let n2 = space.norm2(&psi);
    if !(n2 > 0.0) {
        return Err(crate::error::Error::InvalidArgument(
            "packet has no weight on the grid".into(),
        ));
    }
    let s = 1.0 / n2.sqrt();
    psi.iter_mut().for_each(|z| *z *= s);
    Ok(psi)
}

//! Equal-area ring pixelization of the sphere (HEALPix ring ordering),
//! measures on it, and box counting.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use super::{directions, Vec3};
use crate::error::{Error, Result};
use crate::stats::linear_fit;

/// `12 nside^2` equal-area cells on `4 nside - 1` iso-latitude rings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pixelization {
    pub nside: u32,
}

impl Pixelization {
    pub fn new(nside: u32) -> Result<Self> {
        if nside == 0 || nside > 1 << 13 {
            return Err(Error::InvalidArgument(format!("nside must be in 1..=8192, got {nside}")));
        }
        Ok(Pixelization { nside })
    }

    pub fn n_cells(&self) -> usize {
        12 * (self.nside as usize).pow(2)
    }

    pub fn cell_area(&self) -> f64 {
        4.0 * PI / self.n_cells() as f64
    }

    /// Typical angular size `sqrt(area)` of a cell, in radians.
    pub fn resolution(&self) -> f64 {
        self.cell_area().sqrt()
    }

    /// Resolution closest to an angular scale `eps`.
    pub fn for_scale(eps: f64) -> Result<Self> {
        if !(eps > 0.0) {
            return Err(Error::InvalidArgument(format!("scale must be > 0, got {eps}")));
        }
        Self::new(((PI / 3.0).sqrt() / eps).round().max(1.0) as u32)
    }

    /// Cell containing the point with `z = cos(theta)` and longitude `phi`.
    pub fn cell_of_zphi(&self, z: f64, phi: f64) -> usize {
        let ns = self.nside as i64;
        let za = z.abs();
        let tt = phi.rem_euclid(2.0 * PI) / FRAC_PI_2;
        let nsf = ns as f64;
        if za <= 2.0 / 3.0 {
            let t1 = nsf * (0.5 + tt);
            let t2 = nsf * z * 0.75;
            let jp = (t1 - t2).floor() as i64;
            let jm = (t1 + t2).floor() as i64;
            let ir = ns + 1 + jp - jm;
            let kshift = 1 - (ir & 1);
            let ip = ((jp + jm - ns + kshift + 1) / 2).rem_euclid(4 * ns);
            (2 * ns * (ns - 1) + (ir - 1) * 4 * ns + ip) as usize
        } else {
            let tp = tt - tt.floor();
            let tmp = nsf * (3.0 * (1.0 - za)).sqrt();
            let jp = (tp * tmp).floor() as i64;
            let jm = ((1.0 - tp) * tmp).floor() as i64;
            let ir = (jp + jm + 1).min(ns);
            let ip = ((tt * ir as f64).floor() as i64).rem_euclid(4 * ir);
            if z > 0.0 {
                (2 * ir * (ir - 1) + ip) as usize
            } else {
                (12 * ns * ns - 2 * ir * (ir + 1) + ip) as usize
            }
        }
    }

    pub fn cell_of(&self, r: &Vec3) -> usize {
        let z = (r.z / r.norm()).clamp(-1.0, 1.0);
        self.cell_of_zphi(z, r.y.atan2(r.x))
    }

    /// `(z, phi)` of the cell center.
    pub fn center_zphi(&self, cell: usize) -> (f64, f64) {
        let ns = self.nside as i64;
        let nsf = ns as f64;
        let p = cell as i64;
        let npix = 12 * ns * ns;
        let ncap = 2 * ns * (ns - 1);
        if p < ncap {
            let iring = (1 + isqrt(1 + 2 * p)) / 2;
            let iphi = p + 1 - 2 * iring * (iring - 1);
            let z = 1.0 - (iring * iring) as f64 / (3.0 * nsf * nsf);
            (z, (iphi as f64 - 0.5) * FRAC_PI_2 / iring as f64)
        } else if p < npix - ncap {
            let ip = p - ncap;
            let iring = ip / (4 * ns) + ns;
            let iphi = ip % (4 * ns) + 1;
            let fodd = if (iring + ns) & 1 == 1 { 1.0 } else { 0.5 };
            let z = (2 * ns - iring) as f64 * 2.0 / (3.0 * nsf);
            (z, (iphi as f64 - fodd) * PI / (2.0 * nsf))
        } else {
            let ip = npix - p;
            let iring = (1 + isqrt(2 * ip - 1)) / 2;
            let iphi = 4 * iring + 1 - (ip - 2 * iring * (iring - 1));
            let z = -1.0 + (iring * iring) as f64 / (3.0 * nsf * nsf);
            (z, (iphi as f64 - 0.5) * FRAC_PI_2 / iring as f64)
        }
    }

    pub fn center(&self, cell: usize) -> Vec3 {
        let (z, phi) = self.center_zphi(cell);
        let s = (1.0 - z * z).max(0.0).sqrt();
        Vec3::new(s * phi.cos(), s * phi.sin(), z)
    }
}

fn isqrt(v: i64) -> i64 {
    let mut r = (v as f64).sqrt() as i64;
    while r * r > v {
        r -= 1;
    }
    while (r + 1) * (r + 1) <= v {
        r += 1;
    }
    r
}

/// Non-negative cell masses summing to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SphereMeasure {
    pub pix: Pixelization,
    pub masses: Vec<f64>,
}

pub const MASS_TOL: f64 = 1e-9;

impl SphereMeasure {
    pub fn uniform(pix: Pixelization) -> Self {
        let n = pix.n_cells();
        SphereMeasure { pix, masses: vec![1.0 / n as f64; n] }
    }

    pub fn point_mass(pix: Pixelization, r: &Vec3) -> Self {
        let mut masses = vec![0.0; pix.n_cells()];
        masses[pix.cell_of(r)] = 1.0;
        SphereMeasure { pix, masses }
    }

    /// Normalized histogram of a point cloud.
    pub fn from_points(pix: Pixelization, points: &[Vec3]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidArgument("empty point cloud".into()));
        }
        let mut masses = vec![0.0; pix.n_cells()];
        for p in points {
            masses[pix.cell_of(p)] += 1.0;
        }
        let w = 1.0 / points.len() as f64;
        masses.iter_mut().for_each(|m| *m *= w);
        Ok(SphereMeasure { pix, masses })
    }

    pub fn validate(&self) -> Result<()> {
        if self.masses.len() != self.pix.n_cells() {
            return Err(Error::DimensionMismatch("mass vector does not match the pixelization".into()));
        }
        if self.masses.iter().any(|m| !(*m >= 0.0)) {
            return Err(Error::InvalidArgument("negative or NaN mass".into()));
        }
        let t = self.total();
        if (t - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidArgument(format!("total mass {t} != 1")));
        }
        Ok(())
    }

    pub fn total(&self) -> f64 {
        self.masses.iter().sum()
    }

    pub fn l1(&self, other: &SphereMeasure) -> f64 {
        self.masses.iter().zip(&other.masses).map(|(a, b)| (a - b).abs()).sum()
    }

    /// Mass per unit solid angle.
    pub fn density(&self, cell: usize) -> f64 {
        self.masses[cell] / self.pix.cell_area()
    }

    /// Mass of the cells whose centers lie within angle `radius` of `axis`.
    pub fn cap_mass(&self, axis: &Vec3, radius: f64) -> f64 {
        let c = radius.cos();
        let a = axis / axis.norm();
        (0..self.masses.len())
            .filter(|&i| self.pix.center(i).dot(&a) >= c)
            .map(|i| self.masses[i])
            .sum()
    }

    /// Largest relative spread among the cap masses around `n_i` and,
    /// separately, around `-n_i`.
    pub fn tetrahedral_asymmetry(&self, radius: f64) -> f64 {
        let d = directions();
        let spread = |sign: f64| {
            let m: Vec<f64> = d.iter().map(|n| self.cap_mass(&(n * sign), radius)).collect();
            let hi = m.iter().cloned().fold(f64::MIN, f64::max);
            let lo = m.iter().cloned().fold(f64::MAX, f64::min);
            let mean = m.iter().sum::<f64>() / 4.0;
            if mean > 0.0 { (hi - lo) / mean } else { 0.0 }
        };
        spread(1.0).max(spread(-1.0))
    }

    /// Density on an `n x n` row-major grid over the plane view of the
    /// upper hemisphere (`x, y` in `[-1, 1]`, row 0 at `y = 1`); points
    /// outside the unit disk are `None`.
    pub fn hemisphere_grid(&self, n: usize) -> Vec<Option<f64>> {
        let mut out = Vec::with_capacity(n * n);
        for row in 0..n {
            let y = 1.0 - (row as f64 + 0.5) * 2.0 / n as f64;
            for col in 0..n {
                let x = -1.0 + (col as f64 + 0.5) * 2.0 / n as f64;
                let rho2 = x * x + y * y;
                out.push((rho2 < 1.0).then(|| {
                    let r = Vec3::new(x, y, (1.0 - rho2).sqrt());
                    self.density(self.pix.cell_of(&r))
                }));
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DimensionFit {
    pub dimension: f64,
    /// Coefficient of determination of the log-log fit.
    pub r2: f64,
    /// RMS residual of `ln N`.
    pub residual: f64,
    /// `(eps, occupied cells)` per scale, with `eps` the realized cell size.
    pub counts: Vec<(f64, usize)>,
    pub degenerate: bool,
}

/// Log-spaced scales from `lo` to `hi` radians.
pub fn log_scales(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| lo * (hi / lo).powf(i as f64 / (n - 1).max(1) as f64))
        .collect()
}

pub const DEFAULT_SCALES: (f64, f64) = (0.005, 0.1);

/// Box-counting dimension: slope of `ln N(eps)` against `ln(1/eps)`
/// with `N` the number of occupied cells at the resolution nearest `eps`.
pub fn box_counting_dimension(points: &[Vec3], scales: &[f64]) -> Result<DimensionFit> {
    if points.is_empty() {
        return Err(Error::InvalidArgument("empty point cloud".into()));
    }
    let mut nsides: Vec<u32> = scales
        .iter()
        .map(|&e| Pixelization::for_scale(e).map(|p| p.nside))
        .collect::<Result<_>>()?;
    nsides.sort_unstable();
    nsides.dedup();
    if nsides.len() < 4 {
        return Err(Error::InvalidArgument("need at least four distinct scales".into()));
    }
    let span = *nsides.last().unwrap() as f64 / nsides[0] as f64;
    if span < 10.0 - 1e-9 {
        return Err(Error::InvalidArgument(format!("scales span only {span:.2}x, need a decade")));
    }
    let degenerate = points.iter().all(|p| (p - points[0]).norm() < 1e-12);
    let counts: Vec<(f64, usize)> = nsides
        .iter()
        .map(|&ns| {
            let pix = Pixelization { nside: ns };
            let mut seen = vec![false; pix.n_cells()];
            for p in points {
                seen[pix.cell_of(p)] = true;
            }
            (pix.resolution(), seen.iter().filter(|&&s| s).count())
        })
        .collect();
    if degenerate {
        log::warn!("box counting on a single repeated point; dimension set to 0");
        return Ok(DimensionFit { dimension: 0.0, r2: 1.0, residual: 0.0, counts, degenerate });
    }
    let x: Vec<f64> = counts.iter().map(|(e, _)| -e.ln()).collect();
    let y: Vec<f64> = counts.iter().map(|(_, c)| (*c as f64).ln()).collect();
    let (a, b, r2) = linear_fit(&x, &y);
    let residual = (x
        .iter()
        .zip(&y)
        .map(|(u, v)| (v - a - b * u).powi(2))
        .sum::<f64>()
        / x.len() as f64)
        .sqrt();
    Ok(DimensionFit { dimension: b, r2, residual, counts, degenerate })
}

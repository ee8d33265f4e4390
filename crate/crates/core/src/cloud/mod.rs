//! A quantum particle in a medium of two-state detectors.
//!
//! Detector `a` fires with profile `g_a(x) = A exp(-|x - a|^2 / (4 w^2))`,
//! `A = sqrt(cell * lambda / 2) (2 pi w^2)^(-D/4)`, so that
//! `Lambda(x) = sum_a g_a(x)^2 ~ lambda / 2` on a dense lattice. Only the
//! parity of the number of flips is kept as the classical label; the flip
//! history itself lives in the event log.

mod grw;
#[cfg(test)]
mod tests;

pub use grw::{grw_effective_rhs, GrwOracle, GrwSeries};

use serde::{Deserialize, Serialize};

use crate::engine::{
    Engine, EngineConfig, EnsembleOptions, HybridPureState, Observable, ObservableKind,
    SampledSeries, SamplingSpec, TrajectoryRecord, WindowPolicy,
};
use crate::master::{compare_series, ComparisonReport};
use crate::error::{Error, Result};
use crate::model::{
    gaussian_packet, Grid1D, Hamiltonian, HybridModel, JumpOp, JumpOperator, Profile,
    QuantumSpace, SpatialTag, Units, C64,
};

pub const EVEN: usize = 0;
pub const ODD: usize = 1;

/// Largest tolerated relative deviation of `Lambda(x)` from `lambda / 2`
/// in the lattice interior.
pub const LAMBDA_TOLERANCE: f64 = 0.10;

#[derive(Clone, Debug, PartialEq)]
pub struct DetectorMedium {
    space: QuantumSpace,
    sites: Vec<[f64; 2]>,
    width: f64,
    lambda: f64,
    cell_volume: f64,
    lattice: bool,
}

fn lattice_axis(g: &Grid1D, pitch: f64) -> Vec<f64> {
    let len = g.x_max - g.x_min;
    let count = (len / pitch + 1e-9).floor() as usize + 1;
    let start = g.x_min + 0.5 * (len - (count - 1) as f64 * pitch);
    (0..count).map(|i| start + i as f64 * pitch).collect()
}

impl DetectorMedium {
    /// Homogeneous lattice with the given pitch over a 1D or 2D grid.
    pub fn lattice(space: QuantumSpace, pitch: f64, width: f64, lambda: f64) -> Result<Self> {
        if !(pitch > 0.0) {
            return Err(Error::InvalidModel(format!("pitch must be > 0, got {pitch}")));
        }
        let (sites, cell_volume) = match &space {
            QuantumSpace::Grid1D(g) => (
                lattice_axis(g, pitch).into_iter().map(|x| [x, 0.0]).collect(),
                pitch,
            ),
            QuantumSpace::Grid2D { x, y } => {
                let xs = lattice_axis(x, pitch);
                let ys = lattice_axis(y, pitch);
                (
                    ys.iter()
                        .flat_map(|&b| xs.iter().map(move |&a| [a, b]))
                        .collect(),
                    pitch * pitch,
                )
            }
            QuantumSpace::Finite { .. } => {
                return Err(Error::InvalidModel("detector media live on grids".into()))
            }
        };
        let medium = Self::build(space, sites, cell_volume, width, lambda, true)?;
        if let Some(dev) = medium.lambda_deviation() {
            if dev > LAMBDA_TOLERANCE {
                return Err(Error::InvalidModel(format!(
                    "Lambda deviates from lambda/2 by {:.1}% in the interior; \
                     use a pitch closer to the width",
                    100.0 * dev
                )));
            }
        }
        Ok(medium)
    }

    /// Explicit detector positions; `cell_volume` is the quadrature weight
    /// of one site.
    pub fn from_sites(
        space: QuantumSpace,
        sites: Vec<[f64; 2]>,
        cell_volume: f64,
        width: f64,
        lambda: f64,
    ) -> Result<Self> {
        Self::build(space, sites, cell_volume, width, lambda, false)
    }

    /// Point-like strong coupling: one site per grid point, `w = dx / 2`.
    pub fn point_like(grid: Grid1D, lambda: f64) -> Result<Self> {
        let sites = grid.points().into_iter().map(|x| [x, 0.0]).collect();
        Self::build(
            QuantumSpace::Grid1D(grid),
            sites,
            grid.dx(),
            0.5 * grid.dx(),
            lambda,
            true,
        )
    }

    fn build(
        space: QuantumSpace,
        sites: Vec<[f64; 2]>,
        cell_volume: f64,
        width: f64,
        lambda: f64,
        lattice: bool,
    ) -> Result<Self> {
        if !space.is_grid() {
            return Err(Error::InvalidModel("detector media live on grids".into()));
        }
        if !(width > 0.0) || !(lambda >= 0.0) || !(cell_volume > 0.0) {
            return Err(Error::InvalidModel(format!(
                "need width > 0, lambda >= 0, cell volume > 0 (got {width}, {lambda}, {cell_volume})"
            )));
        }
        if sites.is_empty() {
            return Err(Error::InvalidModel("medium without detectors".into()));
        }
        Ok(DetectorMedium {
            space,
            sites,
            width,
            lambda,
            cell_volume,
            lattice,
        })
    }

    pub fn space(&self) -> &QuantumSpace {
        &self.space
    }

    pub fn dimension(&self) -> usize {
        match self.space {
            QuantumSpace::Grid2D { .. } => 2,
            _ => 1,
        }
    }

    pub fn sites(&self) -> &[[f64; 2]] {
        &self.sites
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn cell_volume(&self) -> f64 {
        self.cell_volume
    }

    pub fn peak(&self) -> f64 {
        let d = self.dimension() as f64;
        (self.cell_volume * self.lambda / 2.0).sqrt()
            * (2.0 * std::f64::consts::PI * self.width * self.width).powf(-d / 4.0)
    }

    pub fn profile(&self, site: usize) -> Profile {
        let s = self.sites[site];
        Profile::gaussian_2d(s, std::f64::consts::SQRT_2 * self.width, self.peak())
    }

    fn tag(&self, site: usize) -> SpatialTag {
        let s = self.sites[site];
        match self.dimension() {
            2 => SpatialTag::xy(s[0], s[1]),
            _ => SpatialTag::x(s[0]),
        }
    }

    /// `Lambda(x) = sum_a g_a(x)^2` on the grid.
    pub fn lambda_field(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.space.len()];
        for a in 0..self.sites.len() {
            self.profile(a).for_each(&self.space, |i, g| acc[i] += g * g);
        }
        acc
    }

    /// Grid points at least four widths inside the lattice's bounding box
    /// (lattices only).
    pub fn interior(&self) -> Vec<usize> {
        if !self.lattice {
            return Vec::new();
        }
        let m = 4.0 * self.width;
        let lo = |k: usize| self.sites.iter().map(|s| s[k]).fold(f64::INFINITY, f64::min);
        let hi = |k: usize| self.sites.iter().map(|s| s[k]).fold(f64::NEG_INFINITY, f64::max);
        let (x0, x1) = (lo(0) + m, hi(0) - m);
        match &self.space {
            QuantumSpace::Grid1D(g) => (0..g.n).filter(|&i| (x0..=x1).contains(&g.x(i))).collect(),
            QuantumSpace::Grid2D { x, y } => {
                let (y0, y1) = (lo(1) + m, hi(1) - m);
                (0..y.n)
                    .flat_map(|j| (0..x.n).map(move |i| (i, j)))
                    .filter(|&(i, j)| (x0..=x1).contains(&x.x(i)) && (y0..=y1).contains(&y.x(j)))
                    .map(|(i, j)| j * x.n + i)
                    .collect()
            }
            QuantumSpace::Finite { .. } => Vec::new(),
        }
    }

    /// Largest `|Lambda(x) / (lambda/2) - 1|` over the interior; `None` when
    /// there is no interior or `lambda = 0`.
    pub fn lambda_deviation(&self) -> Option<f64> {
        let inner = self.interior();
        if inner.is_empty() || self.lambda == 0.0 {
            return None;
        }
        let field = self.lambda_field();
        let target = self.lambda / 2.0;
        inner
            .into_iter()
            .map(|i| (field[i] / target - 1.0).abs())
            .reduce(f64::max)
    }

    /// Two labels (`even`, `odd` flip count), each detector toggling the
    /// parity. `potential` defaults to zero.
    pub fn build_model(&self, potential: Option<Vec<f64>>, units: Units) -> Result<HybridModel> {
        let v = potential.unwrap_or_else(|| vec![0.0; self.space.len()]);
        let mut jumps = Vec::with_capacity(2 * self.sites.len());
        for (source, target) in [(EVEN, ODD), (ODD, EVEN)] {
            for a in 0..self.sites.len() {
                jumps.push(JumpOperator {
                    source,
                    target,
                    op: JumpOp::Profile(self.profile(a)),
                    spatial_tag: Some(self.tag(a)),
                });
            }
        }
        HybridModel::new(
            vec!["even".into(), "odd".into()],
            vec![self.space.clone(); 2],
            vec![Hamiltonian::Grid { potential: v.clone() }, Hamiltonian::Grid { potential: v }],
            jumps,
            units,
        )
    }

    fn engine_config(&self, dt: f64) -> EngineConfig {
        let cfg = EngineConfig::new(dt);
        match self.space {
            QuantumSpace::Grid1D(_) => cfg.with_window(WindowPolicy::default()),
            _ => cfg,
        }
    }
}

/// Probability of each detector being the next to fire,
/// `||g_a psi||^2 / (psi, Lambda psi)`.
pub fn flip_position_distribution(medium: &DetectorMedium, psi: &[C64]) -> Result<Vec<f64>> {
    if psi.len() != medium.space.len() {
        return Err(Error::DimensionMismatch(format!(
            "state has {} components, grid has {}",
            psi.len(),
            medium.space.len()
        )));
    }
    let mut w: Vec<f64> = (0..medium.sites.len())
        .map(|a| {
            let mut acc = 0.0;
            medium
                .profile(a)
                .for_each(&medium.space, |i, g| acc += g * g * psi[i].norm_sqr());
            acc
        })
        .collect();
    let total: f64 = w.iter().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidArgument(
            "state has zero flip rate in this medium".into(),
        ));
    }
    w.iter_mut().for_each(|x| *x /= total);
    Ok(w)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Flip {
    pub time: f64,
    pub x: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<f64>,
}

/// Detector flips in time order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FlipSet {
    pub flips: Vec<Flip>,
}

impl FlipSet {
    pub fn from_record(record: &TrajectoryRecord) -> Self {
        FlipSet {
            flips: record
                .events
                .iter()
                .filter_map(|e| {
                    e.spatial_tag.map(|t| Flip {
                        time: e.time,
                        x: t.x,
                        y: t.y,
                    })
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.flips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flips.is_empty()
    }
}

/// Principal axis of a 2D flip set, oriented along the direction of travel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrackFit {
    pub direction: [f64; 2],
    /// Angle between `direction` and +x, degrees in `[0, 180]`.
    pub angle_from_x_deg: f64,
}

pub fn fit_track(set: &FlipSet) -> Option<TrackFit> {
    let pts: Vec<[f64; 2]> = set.flips.iter().map(|f| [f.x, f.y.unwrap_or(0.0)]).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p[0]).sum::<f64>() / n;
    let my = pts.iter().map(|p| p[1]).sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for p in &pts {
        let (dx, dy) = (p[0] - mx, p[1] - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx + syy == 0.0 {
        return None;
    }
    let theta = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    let mut d = [theta.cos(), theta.sin()];
    let (first, last) = (pts[0], pts[pts.len() - 1]);
    if d[0] * (last[0] - first[0]) + d[1] * (last[1] - first[1]) < 0.0 {
        d = [-d[0], -d[1]];
    }
    Some(TrackFit {
        direction: d,
        angle_from_x_deg: d[0].clamp(-1.0, 1.0).acos().to_degrees(),
    })
}

/// Initial Gaussian packet; `sigma` is the position spread, `k` the mean
/// wave vector (1/A).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Packet {
    pub center: [f64; 2],
    pub sigma: f64,
    pub k: [f64; 2],
}

impl Packet {
    pub fn state(&self, medium: &DetectorMedium) -> Result<Vec<C64>> {
        let inside = |g: &Grid1D, c: f64| c >= g.x_min && c <= g.x_max;
        let resolvable = |g: &Grid1D, k: f64| k.abs() * g.dx() < 0.5;
        let ok = match &medium.space {
            QuantumSpace::Grid1D(g) => inside(g, self.center[0]) && resolvable(g, self.k[0]),
            QuantumSpace::Grid2D { x, y } => {
                inside(x, self.center[0])
                    && inside(y, self.center[1])
                    && resolvable(x, self.k[0])
                    && resolvable(y, self.k[1])
            }
            QuantumSpace::Finite { .. } => false,
        };
        if !ok || !(self.sigma > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "packet {self:?} must sit inside the grid with k*dx < 0.5"
            )));
        }
        gaussian_packet(&medium.space, self.center, self.sigma, self.k)
    }
}

/// One trajectory of the particle through the medium.
pub fn run_track(
    medium: &DetectorMedium,
    packet: &Packet,
    t_cut: f64,
    dt: f64,
    seed: u64,
) -> Result<(FlipSet, TrajectoryRecord)> {
    let model = medium.build_model(None, Units::electron())?;
    let engine = Engine::new(&model, medium.engine_config(dt))?;
    let init = HybridPureState::new(&model, EVEN, packet.state(medium)?)?;
    let rec = engine.run_trajectory(&init, t_cut, &[], seed)?;
    Ok((FlipSet::from_record(&rec), rec))
}

/// `n` independent tracks; track `i` equals `run_track` with seed
/// `split_seed(master_seed, i)`.
pub fn run_tracks(
    medium: &DetectorMedium,
    packet: &Packet,
    t_cut: f64,
    dt: f64,
    n: usize,
    master_seed: u64,
    workers: Option<usize>,
) -> Result<Vec<(FlipSet, TrajectoryRecord)>> {
    let model = medium.build_model(None, Units::electron())?;
    let engine = Engine::new(&model, medium.engine_config(dt))?;
    let init = HybridPureState::new(&model, EVEN, packet.state(medium)?)?;
    let opts = EnsembleOptions {
        workers,
        keep_records: true,
        ..EnsembleOptions::default()
    };
    let out = engine.run_ensemble(&init, t_cut, &[], n, master_seed, &opts)?;
    Ok(out
        .records
        .into_iter()
        .map(|r| (FlipSet::from_record(&r), r))
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct BornHistogram {
    /// First-flip counts per detector site.
    pub counts: Vec<u64>,
    /// Runs in which no detector fired within the coupling window.
    pub no_flip: u64,
    pub n_samples: usize,
}

impl BornHistogram {
    pub fn frequencies(&self) -> Vec<f64> {
        self.counts
            .iter()
            .map(|&c| c as f64 / self.n_samples as f64)
            .collect()
    }

    /// L1 distance between the observed frequencies and `reference`.
    pub fn l1_distance(&self, reference: &[f64]) -> f64 {
        self.frequencies()
            .iter()
            .zip(reference)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            + self.no_flip as f64 / self.n_samples as f64
    }
}

/// `|psi(a)|^2 dx` at each site of a point-like medium.
pub fn born_reference(medium: &DetectorMedium, psi: &[C64]) -> Result<Vec<f64>> {
    let QuantumSpace::Grid1D(g) = medium.space else {
        return Err(Error::Unsupported("Born reference is 1D only".into()));
    };
    let norm = medium.space.norm2(psi);
    medium
        .sites
        .iter()
        .map(|s| {
            let f = (s[0] - g.x_min) / g.dx();
            let i = f.round();
            if (f - i).abs() > 1e-6 || i < 0.0 || i as usize >= g.n {
                return Err(Error::InvalidArgument(format!(
                    "site {} is not a grid point",
                    s[0]
                )));
            }
            Ok(psi[i as usize].norm_sqr() * g.dx() / norm)
        })
        .collect()
}

/// First-flip positions of `n_samples` independent runs, each coupling
/// the medium to `psi` for `lambda_dt / lambda`.
pub fn born_limit_histogram(
    medium: &DetectorMedium,
    psi: &[C64],
    lambda_dt: f64,
    n_samples: usize,
    seed: u64,
    workers: Option<usize>,
) -> Result<BornHistogram> {
    let QuantumSpace::Grid1D(g) = medium.space else {
        return Err(Error::Unsupported("the Born-limit experiment is 1D".into()));
    };
    if medium.width > g.dx() * (1.0 + 1e-12) {
        return Err(Error::InvalidArgument(format!(
            "profile width {} exceeds the grid step {}",
            medium.width,
            g.dx()
        )));
    }
    if !(medium.lambda > 0.0) || !(lambda_dt > 0.0) {
        return Err(Error::InvalidArgument(
            "need lambda > 0 and a positive coupling window".into(),
        ));
    }
    let model = medium.build_model(None, Units::electron())?;
    let dt = 0.1 / medium.lambda;
    let engine = Engine::new(&model, medium.engine_config(dt))?;
    let init = HybridPureState::new(&model, EVEN, psi.to_vec())?;
    let opts = EnsembleOptions {
        workers,
        keep_records: true,
        ..EnsembleOptions::default()
    };
    let t_window = lambda_dt / medium.lambda;
    let out = engine.run_ensemble(&init, t_window, &[ODD], n_samples, seed, &opts)?;
    let mut counts = vec![0u64; medium.sites.len()];
    let mut no_flip = 0;
    for r in &out.records {
        match r.events.first() {
            Some(e) => counts[e.jump] += 1,
            None => no_flip += 1,
        }
    }
    Ok(BornHistogram {
        counts,
        no_flip,
        n_samples,
    })
}

/// Trajectory averages of `<x>`, `<x^2>` and purity next to the dense
/// effective-equation solution.
#[derive(Clone, Debug)]
pub struct GrwCheck {
    /// Series named `x`, `x2`, `purity`.
    pub ensemble: SampledSeries,
    /// `oracle[obs][t]` in the same order.
    pub oracle: Vec<Vec<f64>>,
    pub report: ComparisonReport,
}

/// Runs `n` trajectories from `packet` and integrates the effective
/// equation from the same initial state (RK4 at `dt / substeps`). Sampling
/// happens every `stride` steps of `dt` up to `t_end`.
#[allow(clippy::too_many_arguments)]
pub fn check_grw(
    medium: &DetectorMedium,
    packet: &Packet,
    t_end: f64,
    dt: f64,
    stride: usize,
    substeps: usize,
    n: usize,
    seed: u64,
    workers: Option<usize>,
    z_tol: f64,
) -> Result<GrwCheck> {
    let QuantumSpace::Grid1D(g) = medium.space else {
        return Err(Error::Unsupported("the effective-equation check is 1D".into()));
    };
    if substeps == 0 {
        return Err(Error::InvalidArgument("substeps must be >= 1".into()));
    }
    let units = Units::electron();
    let model = medium.build_model(None, units)?;
    let engine = Engine::new(&model, medium.engine_config(dt))?;
    let psi = packet.state(medium)?;
    let init = HybridPureState::new(&model, EVEN, psi.clone())?;
    let xs = g.points();
    let sampling = SamplingSpec {
        stride,
        observables: vec![
            Observable {
                name: "x".into(),
                kind: ObservableKind::Diagonal { label: None, values: xs.clone() },
            },
            Observable {
                name: "x2".into(),
                kind: ObservableKind::Diagonal {
                    label: None,
                    values: xs.iter().map(|x| x * x).collect(),
                },
            },
        ],
        projectors: true,
    };
    let opts = EnsembleOptions {
        workers,
        sampling: Some(sampling),
        ..EnsembleOptions::default()
    };
    let t_cut = t_end + 0.5 * dt;
    let out = engine.run_ensemble(&init, t_cut, &[], n, seed, &opts)?;
    let mut series = out
        .stats
        .series
        .ok_or_else(|| Error::InvalidArgument("no samples".into()))?;
    let (pm, ps) = series.purity(true)?;
    series.names.push("purity".into());
    series.mean.push(pm);
    series.se.push(ps);
    series.batches.clear();

    let oracle = GrwOracle::new(medium, None, units)?;
    let rho0 = crate::linalg::projector(&psi) * C64::new(g.dx(), 0.0);
    let t_last = *series.times.last().unwrap_or(&0.0);
    let run = oracle.integrate(&rho0, t_last, dt / substeps as f64, stride * substeps)?;
    let mut curves = vec![Vec::new(), Vec::new(), Vec::new()];
    for r in &run.rho {
        let (m1, m2, p) = oracle.moments(r);
        curves[0].push(m1);
        curves[1].push(m2);
        curves[2].push(p);
    }
    let report = compare_series(&series, &curves, z_tol, 1e-6)?;
    Ok(GrwCheck {
        ensemble: series,
        oracle: curves,
        report,
    })
}

//! Ensemble-level dynamics of a finite-dimensional hybrid model:
//!
//! ```text
//! d rho_a/dt = -i [H_a, rho_a] / hbar + sum_{g: b -> a} g rho_b g^dagger - {Lambda_a, rho_a} / 2
//! ```
//!
//! integrated with classical RK4. This is the reference the trajectory
//! ensembles are checked against.

use crate::engine::{EnsembleStats, HybridPureState, Observable, ObservableKind, SampledSeries};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{CMatrix, HybridModel, JumpOp, C64};

/// Trace-class operators `rho_a`, one per classical label.
#[derive(Clone, Debug, PartialEq)]
pub struct HybridDensityState {
    pub rho: Vec<CMatrix>,
}

pub const POSITIVITY_TOL: f64 = 1e-10;
pub const TRACE_TOL: f64 = 1e-9;

impl HybridDensityState {
    /// `|psi><psi| (x) delta_label`, normalized to unit trace.
    pub fn from_pure(model: &HybridModel, state: &HybridPureState) -> Self {
        let mut rho: Vec<CMatrix> = (0..model.n_labels())
            .map(|a| {
                let n = model.space(a).len();
                CMatrix::zeros(n, n)
            })
            .collect();
        let w = model.space(state.label).weight() / state.norm2;
        rho[state.label] = linalg::projector(&state.psi) * C64::new(w, 0.0);
        HybridDensityState { rho }
    }

    pub fn trace(&self) -> f64 {
        self.rho.iter().map(|m| linalg::trace(m).re).sum()
    }

    fn zeros_like(&self) -> Self {
        HybridDensityState {
            rho: self
                .rho
                .iter()
                .map(|m| CMatrix::zeros(m.nrows(), m.ncols()))
                .collect(),
        }
    }

    fn axpy(&self, h: f64, k: &Self) -> Self {
        HybridDensityState {
            rho: self
                .rho
                .iter()
                .zip(&k.rho)
                .map(|(a, b)| a + b * C64::new(h, 0.0))
                .collect(),
        }
    }

    /// Largest `|rho - rho^dagger|` entry over labels.
    pub fn hermiticity_defect(&self) -> f64 {
        self.rho
            .iter()
            .map(|m| linalg::max_abs_diff(m, &m.adjoint()))
            .fold(0.0, f64::max)
    }

    /// `(label, min eigenvalue)` of the least positive block.
    pub fn min_eigenvalue(&self) -> (usize, f64) {
        self.rho
            .iter()
            .enumerate()
            .map(|(a, m)| (a, linalg::min_hermitian_eigenvalue(m)))
            .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc })
    }
}

fn require_finite(model: &HybridModel) -> Result<()> {
    if !model.is_finite() {
        return Err(Error::Unsupported(
            "the master-equation oracle handles finite-dimensional labels only".into(),
        ));
    }
    if (0..model.n_labels()).any(|a| model.space(a).len() > 64) {
        return Err(Error::Unsupported("label dimension above 64".into()));
    }
    Ok(())
}

fn check_shape(model: &HybridModel, ops: &[CMatrix]) -> Result<()> {
    if ops.len() != model.n_labels() {
        return Err(Error::DimensionMismatch(format!(
            "{} blocks for {} labels",
            ops.len(),
            model.n_labels()
        )));
    }
    for (a, m) in ops.iter().enumerate() {
        let n = model.space(a).len();
        if m.nrows() != n || m.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "block {a} is {}x{}, expected {n}x{n}",
                m.nrows(),
                m.ncols()
            )));
        }
    }
    Ok(())
}

/// Schrödinger-picture generator applied to `rho`.
pub fn liouville_rhs(model: &HybridModel, rho: &HybridDensityState) -> Result<HybridDensityState> {
    require_finite(model)?;
    check_shape(model, &rho.rho)?;
    let mi_hbar = C64::new(0.0, -1.0 / model.units().hbar);
    let half = C64::new(0.5, 0.0);
    let mut out = rho.zeros_like();
    for a in 0..model.n_labels() {
        let h = model.hamiltonian_dense(a);
        let lam = model.lambda_op(a).to_dense();
        let r = &rho.rho[a];
        let comm = &h * r - r * &h;
        let anti = &lam * r + r * &lam;
        out.rho[a] += comm * mi_hbar - anti * half;
    }
    for g in model.jumps() {
        if let JumpOp::Matrix(m) = &g.op {
            out.rho[g.target] += m * &rho.rho[g.source] * m.adjoint();
        }
    }
    Ok(out)
}

/// Heisenberg-picture (adjoint) generator applied to observables `a`.
pub fn heisenberg_rhs(model: &HybridModel, obs: &[CMatrix]) -> Result<Vec<CMatrix>> {
    require_finite(model)?;
    check_shape(model, obs)?;
    let i_hbar = C64::new(0.0, 1.0 / model.units().hbar);
    let half = C64::new(0.5, 0.0);
    let mut out: Vec<CMatrix> = Vec::with_capacity(obs.len());
    for (a, x) in obs.iter().enumerate() {
        let h = model.hamiltonian_dense(a);
        let lam = model.lambda_op(a).to_dense();
        out.push((&h * x - x * &h) * i_hbar - (&lam * x + x * &lam) * half);
    }
    for g in model.jumps() {
        if let JumpOp::Matrix(m) = &g.op {
            out[g.source] += m.adjoint() * &obs[g.target] * m;
        }
    }
    Ok(out)
}

/// `sum_a tr(A_a rho_a)`.
pub fn pairing(obs: &[CMatrix], rho: &HybridDensityState) -> C64 {
    obs.iter()
        .zip(&rho.rho)
        .map(|(a, r)| linalg::trace(&(a * r)))
        .sum()
}

/// States of an RK4 run on a regular time grid.
#[derive(Clone, Debug)]
pub struct MasterSeries {
    pub times: Vec<f64>,
    pub states: Vec<HybridDensityState>,
}

/// Integrates from `rho0` to `t_end` with step `dt`, keeping every
/// `stride`-th state (the first and last are always kept). `t_end` must be
/// an integer multiple of `dt`.
pub fn integrate_master(
    model: &HybridModel,
    rho0: &HybridDensityState,
    t_end: f64,
    dt: f64,
    stride: usize,
) -> Result<MasterSeries> {
    require_finite(model)?;
    check_shape(model, &rho0.rho)?;
    if !(dt > 0.0) || t_end < 0.0 || stride == 0 {
        return Err(Error::InvalidArgument(format!(
            "need dt > 0, t_end >= 0, stride >= 1 (got {dt}, {t_end}, {stride})"
        )));
    }
    let steps_f = t_end / dt;
    let steps = steps_f.round() as usize;
    if (steps_f - steps as f64).abs() > 1e-6 {
        return Err(Error::InvalidArgument(format!(
            "t_end = {t_end} is not a multiple of dt = {dt}"
        )));
    }
    let tr0 = rho0.trace();
    let mut rho = rho0.clone();
    let mut times = vec![0.0];
    let mut states = vec![rho.clone()];
    for k in 1..=steps {
        let k1 = liouville_rhs(model, &rho)?;
        let k2 = liouville_rhs(model, &rho.axpy(0.5 * dt, &k1))?;
        let k3 = liouville_rhs(model, &rho.axpy(0.5 * dt, &k2))?;
        let k4 = liouville_rhs(model, &rho.axpy(dt, &k3))?;
        for a in 0..rho.rho.len() {
            let inc = (&k1.rho[a] + &k2.rho[a] * C64::new(2.0, 0.0) + &k3.rho[a] * C64::new(2.0, 0.0)
                + &k4.rho[a])
                * C64::new(dt / 6.0, 0.0);
            rho.rho[a] += inc;
        }
        if k % stride == 0 || k == steps {
            let t = k as f64 * dt;
            let (label, min) = rho.min_eigenvalue();
            if min < -POSITIVITY_TOL {
                return Err(Error::Positivity {
                    time: t,
                    label,
                    min_eigenvalue: min,
                });
            }
            let drift = (rho.trace() - tr0).abs();
            if drift > TRACE_TOL {
                return Err(Error::InvalidArgument(format!(
                    "trace drifted by {drift:e} at t = {t}; reduce dt"
                )));
            }
            times.push(t);
            states.push(rho.clone());
        }
    }
    Ok(MasterSeries { times, states })
}

/// Value of an ensemble observable in a density state.
pub fn observable_value(model: &HybridModel, kind: &ObservableKind, rho: &HybridDensityState) -> f64 {
    let blocks = |label: &Option<usize>| -> Vec<usize> {
        match label {
            Some(a) => vec![*a],
            None => (0..model.n_labels()).collect(),
        }
    };
    match kind {
        ObservableKind::LabelOccupation(a) => linalg::trace(&rho.rho[*a]).re,
        ObservableKind::Expectation { label, op } => blocks(label)
            .into_iter()
            .map(|a| linalg::trace(&(op * &rho.rho[a])).re)
            .sum(),
        ObservableKind::Diagonal { label, values } => blocks(label)
            .into_iter()
            .map(|a| {
                values
                    .iter()
                    .enumerate()
                    .map(|(i, v)| v * rho.rho[a][(i, i)].re)
                    .sum::<f64>()
            })
            .sum(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObservableReport {
    pub name: String,
    pub max_deviation: f64,
    /// Largest `|deviation| / se` over times with `se > 0`.
    pub max_sigma: f64,
    /// Time of the worst `|deviation| - (z_tol se + floor)`.
    pub worst_time: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonReport {
    pub z_tol: f64,
    pub floor: f64,
    pub rows: Vec<ObservableReport>,
}

impl ComparisonReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.passed)
    }
}

/// Compares sampled means against reference curves `expected[obs][t]`:
/// an observable passes when `|mean - ref| <= z_tol * se + floor` at
/// every sampled time.
pub fn compare_series(
    series: &SampledSeries,
    expected: &[Vec<f64>],
    z_tol: f64,
    floor: f64,
) -> Result<ComparisonReport> {
    if expected.len() != series.names.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} reference curves for {} observables",
            expected.len(),
            series.names.len()
        )));
    }
    let mut rows = Vec::new();
    for (o, name) in series.names.iter().enumerate() {
        if expected[o].len() != series.times.len() {
            return Err(Error::DimensionMismatch(format!(
                "`{name}`: {} reference points for {} sample times",
                expected[o].len(),
                series.times.len()
            )));
        }
        let mut max_dev: f64 = 0.0;
        let mut max_sigma: f64 = 0.0;
        let mut worst = f64::NEG_INFINITY;
        let mut worst_time = 0.0;
        for (t, &time) in series.times.iter().enumerate() {
            let dev = (series.mean[o][t] - expected[o][t]).abs();
            let se = series.se[o][t];
            max_dev = max_dev.max(dev);
            if se > 0.0 {
                max_sigma = max_sigma.max(dev / se);
            }
            let excess = dev - (z_tol * se + floor);
            if excess > worst {
                worst = excess;
                worst_time = time;
            }
        }
        rows.push(ObservableReport {
            name: name.clone(),
            max_deviation: max_dev,
            max_sigma,
            worst_time,
            passed: worst <= 0.0,
        });
    }
    Ok(ComparisonReport {
        z_tol,
        floor,
        rows,
    })
}

/// Ensemble averages versus the master equation on the same time grid.
pub fn compare_ensemble_to_master(
    model: &HybridModel,
    stats: &EnsembleStats,
    observables: &[Observable],
    master: &MasterSeries,
    z_tol: f64,
    floor: f64,
) -> Result<ComparisonReport> {
    if stats.n_runs == 0 {
        return Err(Error::InvalidArgument("empty ensemble".into()));
    }
    let series = stats
        .series
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("ensemble was run without sampling".into()))?;
    if series.times.len() != master.times.len()
        || series
            .times
            .iter()
            .zip(&master.times)
            .any(|(a, b)| (a - b).abs() > 1e-9 * a.abs().max(1.0))
    {
        return Err(Error::DimensionMismatch(format!(
            "time grids differ ({} ensemble vs {} master points)",
            series.times.len(),
            master.times.len()
        )));
    }
    let expected: Vec<Vec<f64>> = observables
        .iter()
        .map(|o| {
            master
                .states
                .iter()
                .map(|r| observable_value(model, &o.kind, r))
                .collect()
        })
        .collect();
    compare_series(series, &expected, z_tol, floor)
}

//! Finite toy models: trajectory ensemble against the master equation.

use serde::{Deserialize, Serialize};

use crate::engine::{Engine, EngineConfig, EnsembleOptions, HybridPureState, Observable, ObservableKind, SamplingSpec};
use crate::error::{Error, Result};
use crate::master::{compare_ensemble_to_master, integrate_master, ComparisonReport, HybridDensityState, MasterSeries};
use crate::model::spec::{build_model, matrix_from_rows, ModelSpec};
use crate::model::{HybridModel, QuantumSpace, C64};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    pub label: String,
    /// `[re, im]` amplitudes; normalized on use.
    pub amplitudes: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObservableSpec {
    /// Probability of a classical label.
    Label { name: String, label: String },
    /// `<A>` summed over labels, or restricted to one.
    Expectation {
        name: String,
        #[serde(default)]
        label: Option<String>,
        matrix: Vec<Vec<[f64; 2]>>,
    },
}

fn default_z() -> f64 {
    5.0
}

fn default_floor() -> f64 {
    1e-6
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidationSpec {
    pub model: ModelSpec,
    pub initial: InitialSpec,
    pub t_end: f64,
    pub dt: f64,
    /// Compare every `stride` steps.
    pub stride: usize,
    pub trajectories: usize,
    #[serde(default = "default_z")]
    pub z_tol: f64,
    /// Absolute slack added to `z_tol * se`.
    #[serde(default = "default_floor")]
    pub floor: f64,
    pub observables: Vec<ObservableSpec>,
}

#[derive(Clone, Debug)]
pub struct ValidationOutcome {
    pub model: HybridModel,
    pub observables: Vec<Observable>,
    pub times: Vec<f64>,
    /// `[observable][time]`.
    pub ensemble_mean: Vec<Vec<f64>>,
    pub ensemble_se: Vec<Vec<f64>>,
    pub master: MasterSeries,
    pub report: ComparisonReport,
}

fn label_id(model: &HybridModel, name: &str) -> Result<usize> {
    (0..model.n_labels())
        .find(|&a| model.label_name(a) == name)
        .ok_or_else(|| Error::UnknownLabel(name.to_string()))
}

pub fn resolve_observables(model: &HybridModel, specs: &[ObservableSpec]) -> Result<Vec<Observable>> {
    specs
        .iter()
        .map(|s| {
            Ok(match s {
                ObservableSpec::Label { name, label } => Observable {
                    name: name.clone(),
                    kind: ObservableKind::LabelOccupation(label_id(model, label)?),
                },
                ObservableSpec::Expectation { name, label, matrix } => Observable {
                    name: name.clone(),
                    kind: ObservableKind::Expectation {
                        label: label.as_deref().map(|l| label_id(model, l)).transpose()?,
                        op: matrix_from_rows(matrix)?,
                    },
                },
            })
        })
        .collect()
}

/// Runs `spec.trajectories` trajectories and the master equation on the
/// same time grid and compares every observable at every sampled time.
pub fn run_validation(spec: &ValidationSpec, master_seed: u64, workers: Option<usize>) -> Result<ValidationOutcome> {
    let model = build_model(&spec.model)?;
    if (0..model.n_labels()).any(|a| !matches!(model.space(a), QuantumSpace::Finite { .. })) {
        return Err(Error::Unsupported("validation needs finite-dimensional labels".into()));
    }
    if spec.trajectories == 0 || spec.stride == 0 {
        return Err(Error::InvalidArgument("need trajectories >= 1 and stride >= 1".into()));
    }
    if spec.observables.is_empty() {
        return Err(Error::InvalidArgument("no observables to compare".into()));
    }
    let label = label_id(&model, &spec.initial.label)?;
    let psi: Vec<C64> = spec.initial.amplitudes.iter().map(|a| C64::new(a[0], a[1])).collect();
    let init = HybridPureState::normalized(&model, label, psi)?;
    let observables = resolve_observables(&model, &spec.observables)?;

    let engine = Engine::new(&model, EngineConfig::new(spec.dt))?;
    let opts = EnsembleOptions {
        workers,
        sampling: Some(SamplingSpec { stride: spec.stride, observables: observables.clone(), projectors: false }),
        ..Default::default()
    };
    // sampling runs to the last grid point at or before t_end
    let t_cut = spec.t_end + 0.5 * spec.dt;
    let out = engine.run_ensemble(&init, t_cut, &[], spec.trajectories, master_seed, &opts)?;
    let rho0 = HybridDensityState::from_pure(&model, &init);
    let master = integrate_master(&model, &rho0, spec.t_end, spec.dt, spec.stride)?;
    let report = compare_ensemble_to_master(&model, &out.stats, &observables, &master, spec.z_tol, spec.floor)?;
    let series = out.stats.series.expect("sampling was requested");
    Ok(ValidationOutcome {
        model,
        observables,
        times: series.times.clone(),
        ensemble_mean: series.mean.clone(),
        ensemble_se: series.se.clone(),
        master,
        report,
    })
}

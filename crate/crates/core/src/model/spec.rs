//! Declarative, serde-friendly description of a [`HybridModel`].
//!
//! Every physical quantity carries its unit in the field name. Complex
//! matrix entries are written as `[re, im]` pairs, row by row:
//!
//! ```toml
//! [units]
//! hbar_ev_fs = 1.0
//!
//! [[labels]]
//! name = "idle"
//! space = { kind = "finite", dim = 2 }
//! hamiltonian_ev = [[[0.5, 0.0], [0.0, 0.0]], [[0.0, 0.0], [-0.5, 0.0]]]
//!
//! [[jumps]]
//! from = "idle"
//! to = "fired"
//! matrix = [[[0.0, 0.0], [1.0, 0.0]], [[1.0, 0.0], [0.0, 0.0]]]
//! ```
//!
//! Grid labels give `space = { kind = "grid", x_min_a, x_max_a, n }`, a
//! potential made of rectangular pieces, and Gaussian detector profiles.

use serde::{Deserialize, Serialize};

use super::{
    CMatrix, Grid1D, Hamiltonian, HybridModel, JumpOp, JumpOperator, Profile, QuantumSpace,
    SpatialTag, Units, C64,
};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(default)]
    pub units: UnitsSpec,
    pub labels: Vec<LabelSpec>,
    #[serde(default)]
    pub jumps: Vec<JumpSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnitsSpec {
    pub hbar_ev_fs: f64,
    pub kinetic_ev_a2: f64,
}

impl Default for UnitsSpec {
    fn default() -> Self {
        let u = Units::electron();
        UnitsSpec {
            hbar_ev_fs: u.hbar,
            kinetic_ev_a2: u.kinetic,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpaceSpec {
    Finite { dim: usize },
    Grid { x_min_a: f64, x_max_a: f64, n: usize },
}

/// Rectangular potential piece `height_ev` on `[from_a, to_a]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialPiece {
    pub from_a: f64,
    pub to_a: f64,
    pub height_ev: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelSpec {
    pub name: String,
    pub space: SpaceSpec,
    /// Finite spaces: rows of `[re, im]` pairs.
    #[serde(default)]
    pub hamiltonian_ev: Option<Vec<Vec<[f64; 2]>>>,
    /// Grid spaces: potential pieces (zero elsewhere).
    #[serde(default)]
    pub potential: Vec<PotentialPiece>,
}

/// Gaussian detector profile `sqrt(peak_rate_per_fs) * exp(-(x-c)^2 / (2 sigma^2))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianSpec {
    pub center_a: f64,
    pub sigma_a: f64,
    pub peak_rate_per_fs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JumpSpec {
    pub from: String,
    pub to: String,
    #[serde(default)]
    pub matrix: Option<Vec<Vec<[f64; 2]>>>,
    #[serde(default)]
    pub gaussian: Option<GaussianSpec>,
}

pub fn matrix_from_rows(rows: &[Vec<[f64; 2]>]) -> Result<CMatrix> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if n == 0 || m == 0 || rows.iter().any(|r| r.len() != m) {
        return Err(Error::DimensionMismatch(
            "matrix rows must be non-empty and of equal length".into(),
        ));
    }
    Ok(CMatrix::from_fn(n, m, |i, j| {
        C64::new(rows[i][j][0], rows[i][j][1])
    }))
}

pub fn matrix_to_rows(m: &CMatrix) -> Vec<Vec<[f64; 2]>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect())
        .collect()
}

/// Builds and validates a model from its declarative description.
pub fn build_model(spec: &ModelSpec) -> Result<HybridModel> {
    let units = Units {
        hbar: spec.units.hbar_ev_fs,
        kinetic: spec.units.kinetic_ev_a2,
    };
    let mut names = Vec::new();
    let mut spaces = Vec::new();
    let mut hams = Vec::new();
    for l in &spec.labels {
        names.push(l.name.clone());
        match &l.space {
            SpaceSpec::Finite { dim } => {
                spaces.push(QuantumSpace::Finite { dim: *dim });
                let h = match &l.hamiltonian_ev {
                    Some(rows) => matrix_from_rows(rows)?,
                    None => CMatrix::zeros(*dim, *dim),
                };
                hams.push(Hamiltonian::Matrix(h));
            }
            SpaceSpec::Grid { x_min_a, x_max_a, n } => {
                let grid = Grid1D::new(*x_min_a, *x_max_a, *n);
                let space = QuantumSpace::Grid1D(grid);
                let mut potential = vec![0.0; *n];
                if grid.is_valid() {
                    for p in &l.potential {
                        let (lo, hi) = grid.index_range(p.from_a, p.to_a);
                        for v in &mut potential[lo..hi] {
                            *v += p.height_ev;
                        }
                    }
                }
                spaces.push(space);
                hams.push(Hamiltonian::Grid { potential });
            }
        }
    }
    let lookup = |name: &str| {
        names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownLabel(name.to_string()))
    };
    let mut jumps = Vec::new();
    for j in &spec.jumps {
        let source = lookup(&j.from)?;
        let target = lookup(&j.to)?;
        let (op, spatial_tag) = match (&j.matrix, &j.gaussian) {
            (Some(rows), None) => (JumpOp::Matrix(matrix_from_rows(rows)?), None),
            (None, Some(g)) => (
                JumpOp::Profile(Profile::gaussian_1d(
                    g.center_a,
                    g.sigma_a,
                    g.peak_rate_per_fs.max(0.0).sqrt(),
                )),
                Some(SpatialTag::x(g.center_a)),
            ),
            _ => {
                return Err(Error::InvalidModel(format!(
                    "jump {} -> {} needs exactly one of `matrix` or `gaussian`",
                    j.from, j.to
                )))
            }
        };
        jumps.push(JumpOperator {
            source,
            target,
            op,
            spatial_tag,
        });
    }
    HybridModel::new(names, spaces, hams, jumps, units)
}

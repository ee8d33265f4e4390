//! Data model of a coupled classical + quantum system.
//!
//! A [`HybridModel`] holds a finite set of classical labels, one quantum
//! space and Hamiltonian per label, and a list of jump operators `g` that
//! move the classical label while acting on the quantum state. From the
//! jumps leaving a label `a` the model derives the damping operator
//! `Lambda_a = sum g^dagger g`, which sets both the event rate and the
//! non-Hermitian part of the continuous flow.

mod grid;
pub mod spec;

pub use grid::{gaussian_packet, Grid1D, Profile, GAUSSIAN_CUTOFF};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;

/// Physical constants used to convert Hamiltonians (eV) into rates (1/fs).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Units {
    /// Reduced Planck constant in eV*fs.
    pub hbar: f64,
    /// Kinetic prefactor hbar^2 / 2m in eV*A^2.
    pub kinetic: f64,
}

impl Units {
    pub const HBAR_EV_FS: f64 = 0.6582119;
    pub const ELECTRON_KINETIC_EV_A2: f64 = 3.80998;

    pub fn electron() -> Self {
        Units {
            hbar: Self::HBAR_EV_FS,
            kinetic: Self::ELECTRON_KINETIC_EV_A2,
        }
    }

    /// hbar = 1, m = 1; handy for finite-dimensional toy models.
    pub fn natural() -> Self {
        Units {
            hbar: 1.0,
            kinetic: 0.5,
        }
    }

    /// Wave number (1/A) of a free particle with kinetic energy `e` (eV).
    pub fn wave_number(&self, e: f64) -> f64 {
        (e / self.kinetic).sqrt()
    }

    /// Group velocity (A/fs) at wave number `k`.
    pub fn velocity(&self, k: f64) -> f64 {
        2.0 * self.kinetic * k / self.hbar
    }
}

impl Default for Units {
    fn default() -> Self {
        Units::electron()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassicalLabel {
    pub id: usize,
    pub name: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum QuantumSpace {
    Finite { dim: usize },
    Grid1D(Grid1D),
    Grid2D { x: Grid1D, y: Grid1D },
}

impl QuantumSpace {
    pub fn len(&self) -> usize {
        match self {
            QuantumSpace::Finite { dim } => *dim,
            QuantumSpace::Grid1D(g) => g.n,
            QuantumSpace::Grid2D { x, y } => x.n * y.n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Quadrature weight of one component in the inner product.
    pub fn weight(&self) -> f64 {
        match self {
            QuantumSpace::Finite { .. } => 1.0,
            QuantumSpace::Grid1D(g) => g.dx(),
            QuantumSpace::Grid2D { x, y } => x.dx() * y.dx(),
        }
    }

    pub fn is_grid(&self) -> bool {
        !matches!(self, QuantumSpace::Finite { .. })
    }

    /// Squared norm with the space's quadrature weight.
    pub fn norm2(&self, psi: &[C64]) -> f64 {
        self.weight() * psi.iter().map(|z| z.norm_sqr()).sum::<f64>()
    }

    fn validate(&self) -> Result<()> {
        match self {
            QuantumSpace::Finite { dim } if *dim == 0 => {
                Err(Error::InvalidModel("finite space with dim 0".into()))
            }
            QuantumSpace::Grid1D(g) if !g.is_valid() => Err(Error::InvalidModel(format!(
                "grid needs n >= 2 and x_max > x_min, got {g:?}"
            ))),
            QuantumSpace::Grid2D { x, y } if !x.is_valid() || !y.is_valid() => Err(
                Error::InvalidModel(format!("2D grid axes invalid: {x:?} x {y:?}")),
            ),
            _ => Ok(()),
        }
    }
}

/// Per-label Hamiltonian. Grid Hamiltonians are `-kinetic * Laplacian + V(x)`
/// with the 3-point (5-point in 2D) finite-difference Laplacian.
#[derive(Clone, Debug, PartialEq)]
pub enum Hamiltonian {
    Matrix(CMatrix),
    Grid { potential: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq)]
pub enum JumpOp {
    Matrix(CMatrix),
    Profile(Profile),
}

/// Position of the detector that fired, in A.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpatialTag {
    pub x: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<f64>,
}

impl SpatialTag {
    pub fn x(x: f64) -> Self {
        SpatialTag { x, y: None }
    }

    pub fn xy(x: f64, y: f64) -> Self {
        SpatialTag { x, y: Some(y) }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct JumpOperator {
    pub source: usize,
    pub target: usize,
    pub op: JumpOp,
    pub spatial_tag: Option<SpatialTag>,
}

/// Damping operator of one label.
#[derive(Clone, Debug, PartialEq)]
pub enum LambdaOp {
    Matrix(CMatrix),
    Diagonal(Vec<f64>),
}

impl LambdaOp {
    /// `(psi, Lambda psi)` including the space weight `w`.
    pub fn expectation(&self, psi: &[C64], w: f64) -> f64 {
        match self {
            LambdaOp::Diagonal(d) => {
                w * d
                    .iter()
                    .zip(psi)
                    .map(|(l, z)| l * z.norm_sqr())
                    .sum::<f64>()
            }
            LambdaOp::Matrix(m) => {
                let n = psi.len();
                let mut acc = C64::new(0.0, 0.0);
                for i in 0..n {
                    let mut row = C64::new(0.0, 0.0);
                    for j in 0..n {
                        row += m[(i, j)] * psi[j];
                    }
                    acc += psi[i].conj() * row;
                }
                w * acc.re
            }
        }
    }

    pub fn to_dense(&self) -> CMatrix {
        match self {
            LambdaOp::Matrix(m) => m.clone(),
            LambdaOp::Diagonal(d) => {
                CMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
                    d.len(),
                    d.iter().map(|&v| C64::new(v, 0.0)),
                ))
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            LambdaOp::Matrix(m) => m.iter().all(|z| *z == C64::new(0.0, 0.0)),
            LambdaOp::Diagonal(d) => d.iter().all(|&v| v == 0.0),
        }
    }
}

/// `K = -i H / hbar - Lambda / 2` in the representation the propagators use.
#[derive(Clone, Debug, PartialEq)]
pub enum EffectiveGenerator {
    Matrix(CMatrix),
    /// Tridiagonal: `diag[i]` on the diagonal and the constant `off`
    /// on both neighbouring diagonals.
    Tridiagonal { diag: Vec<C64>, off: C64 },
    /// 5-point stencil on an `nx * ny` row-major grid.
    Stencil2D {
        nx: usize,
        ny: usize,
        diag: Vec<C64>,
        off_x: C64,
        off_y: C64,
    },
}

impl EffectiveGenerator {
    pub fn to_dense(&self) -> CMatrix {
        match self {
            EffectiveGenerator::Matrix(m) => m.clone(),
            EffectiveGenerator::Tridiagonal { diag, off } => {
                let n = diag.len();
                CMatrix::from_fn(n, n, |i, j| {
                    if i == j {
                        diag[i]
                    } else if i.abs_diff(j) == 1 {
                        *off
                    } else {
                        C64::new(0.0, 0.0)
                    }
                })
            }
            EffectiveGenerator::Stencil2D {
                nx,
                ny,
                diag,
                off_x,
                off_y,
            } => {
                let n = nx * ny;
                let mut m = CMatrix::zeros(n, n);
                for j in 0..*ny {
                    for i in 0..*nx {
                        let k = j * nx + i;
                        m[(k, k)] = diag[k];
                        if i + 1 < *nx {
                            m[(k, k + 1)] = *off_x;
                            m[(k + 1, k)] = *off_x;
                        }
                        if j + 1 < *ny {
                            m[(k, k + nx)] = *off_y;
                            m[(k + nx, k)] = *off_y;
                        }
                    }
                }
                m
            }
        }
    }
}

/// Tolerance on `max |H - H^dagger|` for finite Hamiltonians.
pub const HERMITIAN_TOL: f64 = 1e-12;

/// Immutable description of a coupled classical + quantum system.
#[derive(Clone, Debug)]
pub struct HybridModel {
    labels: Vec<ClassicalLabel>,
    spaces: Vec<QuantumSpace>,
    hamiltonians: Vec<Hamiltonian>,
    jumps: Vec<JumpOperator>,
    units: Units,
    lambdas: Vec<LambdaOp>,
    jumps_from: Vec<Vec<usize>>,
}

impl HybridModel {
    /// Validates the pieces and precomputes `Lambda` for every label.
    pub fn new(
        label_names: Vec<String>,
        spaces: Vec<QuantumSpace>,
        hamiltonians: Vec<Hamiltonian>,
        jumps: Vec<JumpOperator>,
        units: Units,
    ) -> Result<Self> {
        let k = label_names.len();
        if k == 0 {
            return Err(Error::InvalidModel("no classical labels".into()));
        }
        if spaces.len() != k || hamiltonians.len() != k {
            return Err(Error::DimensionMismatch(format!(
                "{k} labels but {} spaces and {} hamiltonians",
                spaces.len(),
                hamiltonians.len()
            )));
        }
        for (i, a) in label_names.iter().enumerate() {
            if label_names[..i].contains(a) {
                return Err(Error::InvalidModel(format!("duplicate label name `{a}`")));
            }
        }
        if !(units.hbar > 0.0 && units.kinetic > 0.0) {
            return Err(Error::InvalidModel(format!("non-positive units {units:?}")));
        }
        for s in &spaces {
            s.validate()?;
        }
        for (a, (h, s)) in hamiltonians.iter().zip(&spaces).enumerate() {
            validate_hamiltonian(a, h, s)?;
        }
        let mut jumps_from = vec![Vec::new(); k];
        for (j, g) in jumps.iter().enumerate() {
            validate_jump(j, g, &spaces)?;
            jumps_from[g.source].push(j);
        }

        let labels = label_names
            .into_iter()
            .enumerate()
            .map(|(id, name)| ClassicalLabel { id, name })
            .collect();
        let mut model = HybridModel {
            labels,
            spaces,
            hamiltonians,
            jumps,
            units,
            lambdas: Vec::new(),
            jumps_from,
        };
        model.lambdas = (0..k).map(|a| model.compute_lambda(a)).collect();
        for (a, l) in model.lambdas.iter().enumerate() {
            if let LambdaOp::Matrix(m) = l {
                if m.nrows() <= 64 {
                    let min = crate::linalg::min_hermitian_eigenvalue(m);
                    if min < -1e-12 {
                        return Err(Error::InvalidModel(format!(
                            "Lambda of label {a} has eigenvalue {min:e}"
                        )));
                    }
                }
            }
        }
        Ok(model)
    }

    pub fn labels(&self) -> &[ClassicalLabel] {
        &self.labels
    }

    pub fn n_labels(&self) -> usize {
        self.labels.len()
    }

    pub fn label_id(&self, name: &str) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| l.name == name)
            .ok_or_else(|| Error::UnknownLabel(name.to_string()))
    }

    pub fn label_name(&self, id: usize) -> &str {
        &self.labels[id].name
    }

    pub fn space(&self, label: usize) -> &QuantumSpace {
        &self.spaces[label]
    }

    pub fn hamiltonian(&self, label: usize) -> &Hamiltonian {
        &self.hamiltonians[label]
    }

    pub fn jumps(&self) -> &[JumpOperator] {
        &self.jumps
    }

    /// Indices of jumps leaving `label`, in declaration order.
    pub fn jumps_from(&self, label: usize) -> &[usize] {
        &self.jumps_from[label]
    }

    pub fn units(&self) -> Units {
        self.units
    }

    pub fn is_finite(&self) -> bool {
        self.spaces.iter().all(|s| !s.is_grid())
    }

    /// `Lambda_a = sum over jumps leaving a of g^dagger g`.
    pub fn lambda_op(&self, label: usize) -> &LambdaOp {
        &self.lambdas[label]
    }

    fn compute_lambda(&self, label: usize) -> LambdaOp {
        let space = &self.spaces[label];
        match space {
            QuantumSpace::Finite { dim } => {
                let mut acc = CMatrix::zeros(*dim, *dim);
                for &j in &self.jumps_from[label] {
                    if let JumpOp::Matrix(g) = &self.jumps[j].op {
                        acc += g.adjoint() * g;
                    }
                }
                LambdaOp::Matrix(acc)
            }
            _ => {
                let mut acc = vec![0.0; space.len()];
                for &j in &self.jumps_from[label] {
                    if let JumpOp::Profile(p) = &self.jumps[j].op {
                        p.for_each(space, |i, g| acc[i] += g * g);
                    }
                }
                LambdaOp::Diagonal(acc)
            }
        }
    }

    /// `K_a = -i H_a / hbar - Lambda_a / 2`.
    pub fn effective_generator(&self, label: usize) -> EffectiveGenerator {
        let hbar = self.units.hbar;
        let i = C64::new(0.0, 1.0);
        match (&self.hamiltonians[label], &self.spaces[label], &self.lambdas[label]) {
            (Hamiltonian::Matrix(h), _, lam) => {
                let lam = lam.to_dense();
                EffectiveGenerator::Matrix(h.map(|z| -i * z / hbar) - lam * C64::new(0.5, 0.0))
            }
            (Hamiltonian::Grid { potential }, QuantumSpace::Grid1D(g), LambdaOp::Diagonal(lam)) => {
                let t = self.units.kinetic / (g.dx() * g.dx());
                let diag = potential
                    .iter()
                    .zip(lam)
                    .map(|(v, l)| -i * (2.0 * t + v) / hbar - 0.5 * l)
                    .collect();
                EffectiveGenerator::Tridiagonal {
                    diag,
                    off: i * t / hbar,
                }
            }
            (
                Hamiltonian::Grid { potential },
                QuantumSpace::Grid2D { x, y },
                LambdaOp::Diagonal(lam),
            ) => {
                let tx = self.units.kinetic / (x.dx() * x.dx());
                let ty = self.units.kinetic / (y.dx() * y.dx());
                let diag = potential
                    .iter()
                    .zip(lam)
                    .map(|(v, l)| -i * (2.0 * tx + 2.0 * ty + v) / hbar - 0.5 * l)
                    .collect();
                EffectiveGenerator::Stencil2D {
                    nx: x.n,
                    ny: y.n,
                    diag,
                    off_x: i * tx / hbar,
                    off_y: i * ty / hbar,
                }
            }
            _ => unreachable!("validated at construction"),
        }
    }

    /// Dense Hamiltonian (eV); grid Hamiltonians are expanded, which is only
    /// sensible for small grids.
    pub fn hamiltonian_dense(&self, label: usize) -> CMatrix {
        match &self.hamiltonians[label] {
            Hamiltonian::Matrix(h) => h.clone(),
            Hamiltonian::Grid { .. } => {
                let k = self.effective_generator(label).to_dense();
                let lam = self.lambdas[label].to_dense();
                // K = -iH/hbar - Lambda/2  =>  H = i hbar (K + Lambda/2)
                (k + lam * C64::new(0.5, 0.0)) * C64::new(0.0, self.units.hbar)
            }
        }
    }

    /// Squared norm of the jump image, `||g psi||^2` with the space weight.
    pub fn jump_weight(&self, jump: usize, psi: &[C64]) -> f64 {
        let g = &self.jumps[jump];
        match &g.op {
            JumpOp::Matrix(m) => {
                let mut acc = 0.0;
                for r in 0..m.nrows() {
                    let mut z = C64::new(0.0, 0.0);
                    for c in 0..m.ncols() {
                        z += m[(r, c)] * psi[c];
                    }
                    acc += z.norm_sqr();
                }
                acc
            }
            JumpOp::Profile(p) => {
                let space = &self.spaces[g.source];
                let mut acc = 0.0;
                p.for_each(space, |i, v| acc += v * v * psi[i].norm_sqr());
                acc * space.weight()
            }
        }
    }

    /// `g psi` (not normalized).
    pub fn apply_jump(&self, jump: usize, psi: &[C64]) -> Vec<C64> {
        let g = &self.jumps[jump];
        match &g.op {
            JumpOp::Matrix(m) => (0..m.nrows())
                .map(|r| (0..m.ncols()).map(|c| m[(r, c)] * psi[c]).sum())
                .collect(),
            JumpOp::Profile(p) => {
                let mut out = vec![C64::new(0.0, 0.0); psi.len()];
                p.for_each(&self.spaces[g.source], |i, v| out[i] = psi[i] * v);
                out
            }
        }
    }

    /// Event rate `(psi, Lambda_a psi)`.
    pub fn rate(&self, label: usize, psi: &[C64]) -> f64 {
        self.lambdas[label].expectation(psi, self.spaces[label].weight())
    }

    /// Operator norm of the largest finite Hamiltonian (eV); zero for
    /// grid-only models.
    pub fn max_hamiltonian_norm(&self) -> f64 {
        self.hamiltonians
            .iter()
            .filter_map(|h| match h {
                Hamiltonian::Matrix(m) => Some(crate::linalg::hermitian_spectral_norm(m)),
                _ => None,
            })
            .fold(0.0, f64::max)
    }
}

fn validate_hamiltonian(label: usize, h: &Hamiltonian, space: &QuantumSpace) -> Result<()> {
    match (h, space) {
        (Hamiltonian::Matrix(m), QuantumSpace::Finite { dim }) => {
            if m.nrows() != *dim || m.ncols() != *dim {
                return Err(Error::DimensionMismatch(format!(
                    "H of label {label} is {}x{}, space has dim {dim}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            let dev = (m - m.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
            if dev >= HERMITIAN_TOL {
                return Err(Error::InvalidModel(format!(
                    "H of label {label} is not Hermitian (max deviation {dev:e})"
                )));
            }
            Ok(())
        }
        (Hamiltonian::Grid { potential }, s) if s.is_grid() => {
            if potential.len() != s.len() {
                return Err(Error::DimensionMismatch(format!(
                    "potential of label {label} has {} points, grid has {}",
                    potential.len(),
                    s.len()
                )));
            }
            if potential.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidModel(format!(
                    "potential of label {label} is not finite"
                )));
            }
            Ok(())
        }
        _ => Err(Error::InvalidModel(format!(
            "Hamiltonian kind of label {label} does not match its space"
        ))),
    }
}

fn validate_jump(j: usize, g: &JumpOperator, spaces: &[QuantumSpace]) -> Result<()> {
    let k = spaces.len();
    if g.source >= k || g.target >= k {
        return Err(Error::InvalidModel(format!(
            "jump {j} references undeclared label ({} -> {})",
            g.source, g.target
        )));
    }
    if g.source == g.target {
        return Err(Error::InvalidModel(format!(
            "jump {j} has source = target = {}; diagonal couplings must vanish",
            g.source
        )));
    }
    let (src, tgt) = (&spaces[g.source], &spaces[g.target]);
    match &g.op {
        JumpOp::Matrix(m) => {
            if src.is_grid() || tgt.is_grid() {
                return Err(Error::Unsupported(format!(
                    "jump {j}: dense matrices are only supported between finite spaces"
                )));
            }
            if m.ncols() != src.len() || m.nrows() != tgt.len() {
                return Err(Error::DimensionMismatch(format!(
                    "jump {j} is {}x{}, expected {}x{}",
                    m.nrows(),
                    m.ncols(),
                    tgt.len(),
                    src.len()
                )));
            }
        }
        JumpOp::Profile(p) => {
            if !src.is_grid() || src != tgt {
                return Err(Error::InvalidModel(format!(
                    "jump {j}: profiles need identical grid spaces at both ends"
                )));
            }
            match p {
                Profile::Dense(v) => {
                    if v.len() != src.len() {
                        return Err(Error::DimensionMismatch(format!(
                            "jump {j} profile has {} values, grid has {}",
                            v.len(),
                            src.len()
                        )));
                    }
                    if v.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                        return Err(Error::InvalidModel(format!(
                            "jump {j} profile must be real and non-negative"
                        )));
                    }
                }
                Profile::Gaussian { sigma, peak, .. } => {
                    if !(*sigma > 0.0 && *peak >= 0.0 && peak.is_finite()) {
                        return Err(Error::InvalidModel(format!(
                            "jump {j}: Gaussian needs sigma > 0 and peak >= 0"
                        )));
                    }
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests;

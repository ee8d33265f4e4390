use super::*;
use crate::linalg::{self, c, pauli_x};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn two_label_sigma_x() -> HybridModel {
    HybridModel::new(
        vec!["off".into(), "on".into()],
        vec![QuantumSpace::Finite { dim: 2 }; 2],
        vec![Hamiltonian::Matrix(CMatrix::zeros(2, 2)); 2],
        vec![JumpOperator {
            source: 0,
            target: 1,
            op: JumpOp::Matrix(pauli_x()),
            spatial_tag: None,
        }],
        Units::natural(),
    )
    .unwrap()
}

fn random_matrix(rng: &mut impl Rng, r: usize, cols: usize) -> CMatrix {
    CMatrix::from_fn(r, cols, |_, _| {
        c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
    })
}

fn random_hermitian(rng: &mut impl Rng, n: usize) -> CMatrix {
    let a = random_matrix(rng, n, n);
    (&a + a.adjoint()) * c(0.5, 0.0)
}

fn random_finite_model(seed: u64, dims: &[usize], n_jumps: usize) -> HybridModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = dims.len();
    let mut jumps = Vec::new();
    for _ in 0..n_jumps {
        let s = rng.random_range(0..k);
        let mut t = rng.random_range(0..k);
        while t == s {
            t = rng.random_range(0..k);
        }
        jumps.push(JumpOperator {
            source: s,
            target: t,
            op: JumpOp::Matrix(random_matrix(&mut rng, dims[t], dims[s])),
            spatial_tag: None,
        });
    }
    HybridModel::new(
        (0..k).map(|i| format!("l{i}")).collect(),
        dims.iter().map(|&d| QuantumSpace::Finite { dim: d }).collect(),
        dims.iter()
            .map(|&d| Hamiltonian::Matrix(random_hermitian(&mut rng, d)))
            .collect(),
        jumps,
        Units::natural(),
    )
    .unwrap()
}

#[test]
fn sigma_x_jump_gives_identity_lambda_on_source_only() {
    let m = two_label_sigma_x();
    let l0 = m.lambda_op(0).to_dense();
    let l1 = m.lambda_op(1).to_dense();
    assert!(linalg::max_abs_diff(&l0, &CMatrix::identity(2, 2)) < 1e-15);
    assert!(linalg::max_abs_diff(&l1, &CMatrix::zeros(2, 2)) < 1e-15);
}

#[test]
fn rejects_diagonal_jump() {
    let err = HybridModel::new(
        vec!["a".into()],
        vec![QuantumSpace::Finite { dim: 2 }],
        vec![Hamiltonian::Matrix(CMatrix::zeros(2, 2))],
        vec![JumpOperator {
            source: 0,
            target: 0,
            op: JumpOp::Matrix(pauli_x()),
            spatial_tag: None,
        }],
        Units::natural(),
    )
    .unwrap_err();
    assert!(err.to_string().contains("source = target"), "{err}");
}

#[test]
fn rejects_empty_grid() {
    let err = HybridModel::new(
        vec!["a".into()],
        vec![QuantumSpace::Grid1D(Grid1D::new(0.0, 1.0, 0))],
        vec![Hamiltonian::Grid { potential: vec![] }],
        vec![],
        Units::electron(),
    )
    .unwrap_err();
    assert!(matches!(err, Error::InvalidModel(_)));
}

#[test]
fn rejects_non_hermitian_hamiltonian() {
    let mut h = CMatrix::zeros(2, 2);
    h[(0, 1)] = c(1.0, 0.0);
    let err = HybridModel::new(
        vec!["a".into()],
        vec![QuantumSpace::Finite { dim: 2 }],
        vec![Hamiltonian::Matrix(h)],
        vec![],
        Units::natural(),
    )
    .unwrap_err();
    assert!(err.to_string().contains("Hermitian"));
}

#[test]
fn rejects_dimension_mismatch() {
    let err = HybridModel::new(
        vec!["a".into(), "b".into()],
        vec![QuantumSpace::Finite { dim: 2 }, QuantumSpace::Finite { dim: 3 }],
        vec![
            Hamiltonian::Matrix(CMatrix::zeros(2, 2)),
            Hamiltonian::Matrix(CMatrix::zeros(3, 3)),
        ],
        vec![JumpOperator {
            source: 0,
            target: 1,
            op: JumpOp::Matrix(pauli_x()),
            spatial_tag: None,
        }],
        Units::natural(),
    )
    .unwrap_err();
    assert!(matches!(err, Error::DimensionMismatch(_)));
}

#[test]
fn rejects_negative_profile() {
    let g = Grid1D::new(-1.0, 1.0, 5);
    let err = HybridModel::new(
        vec!["a".into(), "b".into()],
        vec![QuantumSpace::Grid1D(g); 2],
        vec![Hamiltonian::Grid { potential: vec![0.0; 5] }; 2],
        vec![JumpOperator {
            source: 0,
            target: 1,
            op: JumpOp::Profile(Profile::Dense(vec![0.0, 1.0, -1.0, 0.0, 0.0])),
            spatial_tag: None,
        }],
        Units::electron(),
    )
    .unwrap_err();
    assert!(err.to_string().contains("non-negative"));
}

#[test]
fn generator_limits() {
    // H = 0, Lambda = I  =>  K = -I/2
    let m = two_label_sigma_x();
    let k = m.effective_generator(0).to_dense();
    assert!(linalg::max_abs_diff(&k, &(CMatrix::identity(2, 2) * c(-0.5, 0.0))) < 1e-15);

    // Lambda = 0  =>  K = -i H / hbar
    let h = linalg::pauli_z() * c(0.3, 0.0);
    let m = HybridModel::new(
        vec!["a".into()],
        vec![QuantumSpace::Finite { dim: 2 }],
        vec![Hamiltonian::Matrix(h.clone())],
        vec![],
        Units::electron(),
    )
    .unwrap();
    let k = m.effective_generator(0).to_dense();
    let expect = h * c(0.0, -1.0 / Units::HBAR_EV_FS);
    assert!(linalg::max_abs_diff(&k, &expect) < 1e-15);
}

#[test]
fn grid_generator_matches_dense_finite_difference_construction() {
    let grid = Grid1D::new(-3.0, 4.0, 8);
    let units = Units::electron();
    let potential: Vec<f64> = (0..8).map(|i| 0.1 * i as f64 - 0.2).collect();
    let profile: Vec<f64> = (0..8).map(|i| 0.05 * (i % 3) as f64).collect();
    let m = HybridModel::new(
        vec!["a".into(), "b".into()],
        vec![QuantumSpace::Grid1D(grid); 2],
        vec![
            Hamiltonian::Grid {
                potential: potential.clone()
            };
            2
        ],
        vec![JumpOperator {
            source: 0,
            target: 1,
            op: JumpOp::Profile(Profile::Dense(profile.clone())),
            spatial_tag: None,
        }],
        units,
    )
    .unwrap();

    // Independent dense build: H = -kin * D2 + V, Lambda = diag(g^2).
    let dx = grid.dx();
    let mut h = CMatrix::zeros(8, 8);
    for i in 0..8 {
        h[(i, i)] = c(2.0 * units.kinetic / (dx * dx) + potential[i], 0.0);
        if i + 1 < 8 {
            h[(i, i + 1)] = c(-units.kinetic / (dx * dx), 0.0);
            h[(i + 1, i)] = c(-units.kinetic / (dx * dx), 0.0);
        }
    }
    let lam = CMatrix::from_fn(8, 8, |i, j| {
        if i == j {
            c(profile[i] * profile[i], 0.0)
        } else {
            c(0.0, 0.0)
        }
    });
    let expect = h.map(|z| z * c(0.0, -1.0 / units.hbar)) - lam * c(0.5, 0.0);
    let k = m.effective_generator(0);
    assert!(matches!(k, EffectiveGenerator::Tridiagonal { .. }));
    assert!(linalg::max_abs_diff(&k.to_dense(), &expect) < 1e-12);
    // and the dense H reconstruction agrees
    assert!(linalg::max_abs_diff(&m.hamiltonian_dense(0), &h) < 1e-9);
}

#[test]
fn lambda_is_psd_and_matches_jump_weights() {
    for seed in 0..20 {
        let m = random_finite_model(seed, &[2, 3, 2], 5);
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        for a in 0..m.n_labels() {
            let lam = m.lambda_op(a).to_dense();
            assert!(linalg::max_abs_diff(&lam, &lam.adjoint()) < 1e-14);
            assert!(linalg::min_hermitian_eigenvalue(&lam) >= -1e-12);
            let dim = m.space(a).len();
            for _ in 0..100 {
                let psi: Vec<C64> = (0..dim)
                    .map(|_| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
                    .collect();
                let total: f64 = m.jumps_from(a).iter().map(|&j| m.jump_weight(j, &psi)).sum();
                let rate = m.rate(a, &psi);
                let scale = rate.abs().max(1e-300);
                assert!(
                    (total - rate).abs() / scale < 1e-12 || (total == 0.0 && rate.abs() < 1e-300),
                    "label {a}: {total} vs {rate}"
                );
            }
        }
    }
}

#[test]
fn grid_norm_is_resolution_independent() {
    let sigma: f64 = 1.3;
    let norm_at = |n: usize| {
        let grid = Grid1D::new(-12.0, 12.0, n);
        let space = QuantumSpace::Grid1D(grid);
        let psi: Vec<C64> = grid
            .points()
            .into_iter()
            .map(|x| c((-x * x / (4.0 * sigma * sigma)).exp(), 0.0))
            .collect();
        space.norm2(&psi)
    };
    let exact = (2.0 * std::f64::consts::PI).sqrt() * sigma;
    for n in [33, 65, 129] {
        let rel = (norm_at(n) - exact).abs() / exact;
        assert!(rel < 1e-6, "n = {n}: {rel}");
    }
}

#[test]
fn declarative_spec_builds() {
    use super::spec::*;
    let spec = ModelSpec {
        units: UnitsSpec {
            hbar_ev_fs: 1.0,
            kinetic_ev_a2: 0.5,
        },
        labels: vec![
            LabelSpec {
                name: "idle".into(),
                space: SpaceSpec::Finite { dim: 2 },
                hamiltonian_ev: Some(vec![
                    vec![[0.5, 0.0], [0.1, 0.2]],
                    vec![[0.1, -0.2], [-0.5, 0.0]],
                ]),
                potential: vec![],
            },
            LabelSpec {
                name: "fired".into(),
                space: SpaceSpec::Finite { dim: 2 },
                hamiltonian_ev: None,
                potential: vec![],
            },
        ],
        jumps: vec![JumpSpec {
            from: "idle".into(),
            to: "fired".into(),
            matrix: Some(vec![vec![[0.0, 0.0], [1.0, 0.0]], vec![[1.0, 0.0], [0.0, 0.0]]]),
            gaussian: None,
        }],
    };
    let m = build_model(&spec).unwrap();
    assert_eq!(m.n_labels(), 2);
    assert_eq!(m.label_id("fired").unwrap(), 1);
    assert!(linalg::max_abs_diff(&m.lambda_op(0).to_dense(), &CMatrix::identity(2, 2)) < 1e-15);

    let mut bad = spec.clone();
    bad.jumps[0].to = "nowhere".into();
    assert!(matches!(build_model(&bad), Err(Error::UnknownLabel(_))));
}

proptest! {
    #[test]
    fn random_models_have_psd_lambda(seed in 0u64..10_000, n_jumps in 0usize..6) {
        let m = random_finite_model(seed, &[2, 2, 3], n_jumps);
        for a in 0..m.n_labels() {
            let lam = m.lambda_op(a).to_dense();
            prop_assert!(linalg::min_hermitian_eigenvalue(&lam) >= -1e-12);
        }
    }
}

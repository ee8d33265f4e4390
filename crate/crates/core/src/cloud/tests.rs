use super::*;
use crate::engine::Engine;
use crate::linalg;
use crate::model::CMatrix;
use crate::stats::{ks_critical_001, ks_statistic};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn medium_1d(n: usize, half: f64, w: f64, lambda: f64) -> DetectorMedium {
    DetectorMedium::lattice(QuantumSpace::Grid1D(Grid1D::new(-half, half, n)), w, w, lambda).unwrap()
}

fn variance(space: &QuantumSpace, psi: &[C64]) -> f64 {
    let QuantumSpace::Grid1D(g) = space else { unreachable!() };
    let p: Vec<f64> = psi.iter().map(|z| z.norm_sqr()).collect();
    let tot: f64 = p.iter().sum();
    let m: f64 = (0..g.n).map(|i| g.x(i) * p[i]).sum::<f64>() / tot;
    (0..g.n).map(|i| (g.x(i) - m).powi(2) * p[i]).sum::<f64>() / tot
}

#[test]
fn lattice_lambda_is_half_rate_in_interior() {
    let m = medium_1d(401, 40.0, 2.0, 0.3);
    assert!(m.lambda_deviation().unwrap() < 1e-4);
    let grid = QuantumSpace::Grid2D { x: Grid1D::new(-20.0, 20.0, 81), y: Grid1D::new(-20.0, 20.0, 81) };
    let m2 = DetectorMedium::lattice(grid.clone(), 2.0, 2.0, 0.3).unwrap();
    assert!(m2.lambda_deviation().unwrap() < 1e-4);
    assert!(m2.lambda_field().iter().all(|&l| l >= 0.0));
    assert!(DetectorMedium::lattice(grid, 6.0, 2.0, 0.3).is_err());
    let p = DetectorMedium::point_like(Grid1D::new(-10.0, 10.0, 201), 5.0).unwrap();
    assert!(p.lambda_deviation().unwrap() < LAMBDA_TOLERANCE);
}

#[test]
fn flip_distribution_properties() {
    let m = medium_1d(401, 40.0, 1.0, 0.5);
    let QuantumSpace::Grid1D(g) = *m.space() else { unreachable!() };
    // spike on a site
    let site = m.sites().len() / 2;
    let i0 = g.index_range(m.sites()[site][0] - 1e-9, m.sites()[site][0] + 1e-9).0;
    let mut psi = vec![C64::new(0.0, 0.0); g.n];
    psi[i0] = C64::new(1.0, 0.0);
    let p = flip_position_distribution(&m, &psi).unwrap();
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(p[site] > 0.3 && p[site] >= p.iter().cloned().fold(0.0, f64::max));
    let near: f64 = p[site - 3..=site + 3].iter().sum();
    assert!(near > 0.999);

    let flat = vec![C64::new(1.0, 0.0); g.n];
    let p = flip_position_distribution(&m, &flat).unwrap();
    let reach = 8.0 * m.width();
    let inner: Vec<f64> = m
        .sites()
        .iter()
        .zip(&p)
        .filter(|(s, _)| s[0] > g.x_min + reach && s[0] < g.x_max - reach)
        .map(|(_, &w)| w)
        .collect();
    let mean = inner.iter().sum::<f64>() / inner.len() as f64;
    assert!(inner.iter().all(|w| (w / mean - 1.0).abs() < 1e-9));

    let off = medium_1d(401, 40.0, 1.0, 0.0);
    assert!(flip_position_distribution(&off, &flat).is_err());
}

#[test]
fn zero_coupling_gives_empty_flip_set() {
    let m = medium_1d(201, 20.0, 1.0, 0.0);
    let pk = Packet { center: [0.0, 0.0], sigma: 2.0, k: [0.5, 0.0] };
    let (flips, rec) = run_track(&m, &pk, 5.0, 0.01, 3).unwrap();
    assert!(flips.is_empty());
    assert_eq!(rec.terminated_by, crate::engine::TerminatedBy::TCut);
    let bad = Packet { k: [10.0, 0.0], ..pk };
    assert!(run_track(&m, &bad, 5.0, 0.01, 3).is_err());
}

#[test]
fn sampled_flip_sites_pass_chi_square() {
    let m = medium_1d(401, 40.0, 1.0, 0.5);
    let model = m.build_model(None, Units::electron()).unwrap();
    let engine = Engine::new(&model, EngineConfig::new(0.01)).unwrap();
    let pk = Packet { center: [3.0, 0.0], sigma: 2.5, k: [0.4, 0.0] };
    let psi = pk.state(&m).unwrap();
    let p = flip_position_distribution(&m, &psi).unwrap();
    let state = HybridPureState::new(&model, EVEN, psi).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let n = 100_000;
    let mut counts = vec![0usize; p.len()];
    for _ in 0..n {
        counts[engine.sample_jump_target(&state, rng.random()).unwrap().jump] += 1;
    }
    // pool cells with expected count below 5
    let (mut chi2, mut dof, mut acc_e, mut acc_o) = (0.0, 0usize, 0.0, 0.0);
    for (pi, &c) in p.iter().zip(&counts) {
        acc_e += pi * n as f64;
        acc_o += c as f64;
        if acc_e >= 5.0 {
            chi2 += (acc_o - acc_e).powi(2) / acc_e;
            dof += 1;
            acc_e = 0.0;
            acc_o = 0.0;
        }
    }
    let crit = ChiSquared::new((dof - 1) as f64).unwrap().inverse_cdf(0.99);
    assert!(chi2 < crit, "chi2 {chi2} vs {crit} ({dof} cells)");
}

#[test]
fn flips_do_not_broaden_the_packet_beyond_width() {
    let m = medium_1d(401, 40.0, 1.5, 0.5);
    let model = m.build_model(None, Units::electron()).unwrap();
    let engine = Engine::new(&model, EngineConfig::new(0.01)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let pk = Packet {
            center: [rng.random_range(-10.0..10.0), 0.0],
            sigma: rng.random_range(0.5..6.0),
            k: [rng.random_range(-1.0..1.0), 0.0],
        };
        let psi = pk.state(&m).unwrap();
        let before = variance(m.space(), &psi);
        let state = HybridPureState::new(&model, EVEN, psi).unwrap();
        let after = engine.sample_jump_target(&state, rng.random()).unwrap().state;
        let v = variance(m.space(), &after.psi);
        assert!(v <= before + m.width().powi(2) + 1e-9, "{v} > {before} + w^2");
    }
}

#[test]
fn homogeneous_medium_waiting_times_are_exponential() {
    let m = medium_1d(801, 80.0, 2.0, 0.4);
    let pk = Packet { center: [0.0, 0.0], sigma: 3.0, k: [0.3, 0.0] };
    let model = m.build_model(None, Units::electron()).unwrap();
    let engine = Engine::new(&model, m.engine_config(0.01)).unwrap();
    let init = HybridPureState::new(&model, EVEN, pk.state(&m).unwrap()).unwrap();
    let opts = EnsembleOptions { keep_records: true, ..EnsembleOptions::default() };
    let out = engine.run_ensemble(&init, 40.0, &[ODD], 4000, 99, &opts).unwrap();
    let mut waits: Vec<f64> = out.records.iter().filter_map(|r| r.events.first().map(|e| e.time)).collect();
    let rate = m.lambda() / 2.0;
    // all runs fire well before t_cut
    assert!(waits.len() as f64 > 0.999 * 4000.0);
    let d = ks_statistic(&mut waits, |t| 1.0 - (-rate * t).exp());
    assert!(d < ks_critical_001(4000), "KS {d}");
}

#[test]
fn grw_rhs_reduces_to_unitary_and_conserves_trace() {
    let units = Units::electron();
    let off = medium_1d(48, 12.0, 1.0, 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let a = CMatrix::from_fn(48, 48, |_, _| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
    let rho = &a * a.adjoint();
    let model = off.build_model(None, units).unwrap();
    let h = model.hamiltonian_dense(EVEN);
    let d = grw_effective_rhs(&off, &rho, units).unwrap();
    let expect = (&h * &rho - &rho * &h) * C64::new(0.0, -1.0 / units.hbar);
    assert!(linalg::max_abs_diff(&d, &expect) < 1e-10 * expect.norm());

    let on = medium_1d(48, 12.0, 1.0, 0.7);
    let d = grw_effective_rhs(&on, &rho, units).unwrap();
    assert!(linalg::trace(&d).norm() < 1e-12 * linalg::trace(&rho).norm());
    // Lambda of the oracle equals the PDP damping and ~lambda/2 inside
    let o = GrwOracle::new(&on, None, units).unwrap();
    let lam = on.build_model(None, units).unwrap();
    let crate::model::LambdaOp::Diagonal(l) = lam.lambda_op(EVEN) else { unreachable!() };
    for (a, b) in o.lambda_field().iter().zip(l) {
        assert!((a - b).abs() < 1e-14);
    }
    assert!((o.lambda_field()[24] / 0.35 - 1.0).abs() < 1e-6);
}

#[test]
fn grw_oracle_decoheres_far_off_diagonals() {
    let units = Units::electron();
    let m = medium_1d(64, 16.0, 1.0, 1.0);
    let mut o = GrwOracle::new(&m, None, units).unwrap();
    o.h_diag.iter_mut().for_each(|v| *v = 0.0);
    o.h_off = 0.0;
    let QuantumSpace::Grid1D(g) = *m.space() else { unreachable!() };
    let (i, j) = (16, 48);
    let mut psi = vec![C64::new(0.0, 0.0); 64];
    psi[i] = C64::new(1.0, 0.0);
    psi[j] = C64::new(1.0, 0.0);
    let rho0 = linalg::projector(&psi) * C64::new(0.5, 0.0);
    let t = 5.0;
    let run = o.integrate(&rho0, t, 0.01, 500).unwrap();
    let r = run.rho.last().unwrap();
    assert!((r[(i, i)].re - 0.5).abs() < 1e-12);
    assert!((r[(j, j)].re - 0.5).abs() < 1e-12);
    // separation 16 A >> w: coherence decays as exp(-lambda/2 t)
    let expect = 0.5 * (-0.5 * t).exp();
    assert!((r[(i, j)].re - expect).abs() < 1e-6 * expect, "{} vs {expect}", r[(i, j)].re);
    assert!(g.x(j) - g.x(i) > 10.0 * m.width());
}

#[test]
fn born_histogram_edge_cases() {
    let grid = Grid1D::new(-10.0, 10.0, 81);
    let m = DetectorMedium::point_like(grid, 200.0).unwrap();
    let mut spike = vec![C64::new(0.0, 0.0); grid.n];
    spike[30] = C64::new(1.0, 0.0);
    // coupling fast against the spike's kinetic spreading (~100/fs here)
    let fast = DetectorMedium::point_like(grid, 1e5).unwrap();
    let h = born_limit_histogram(&fast, &spike, 50.0, 2000, 1, None).unwrap();
    assert_eq!(h.no_flip, 0);
    // w = dx/2 leaves neighbours a relative weight e^-2
    assert_eq!(h.counts[28..=32].iter().sum::<u64>(), 2000);
    let share = 1.0 / (1.0 + 2.0 * (-2.0f64).exp() + 2.0 * (-8.0f64).exp());
    assert!((h.counts[30] as f64 / 2000.0 - share).abs() < 4.0 * (share * (1.0 - share) / 2000.0).sqrt());

    let mut two = vec![C64::new(0.0, 0.0); grid.n];
    for i in 0..grid.n {
        let x = grid.x(i);
        two[i] = C64::new((-(x - 4.0).powi(2) / 2.0).exp() + (-(x + 4.0).powi(2) / 2.0).exp(), 0.0);
    }
    let n = 20_000;
    let h = born_limit_histogram(&m, &two, 50.0, n, 2, None).unwrap();
    let left: u64 = h.counts[..40].iter().sum();
    let right: u64 = h.counts[41..].iter().sum();
    let se = (n as f64 * 0.25).sqrt();
    assert!(((left as f64) - (right as f64)).abs() < 4.0 * 2.0 * se / 2.0, "{left} vs {right}");
    let reference = born_reference(&m, &two).unwrap();
    assert!(h.l1_distance(&reference) < 0.1);
}

#[test]
fn fitted_track_follows_points() {
    for deg in [0.0f64, 30.0, 120.0, 200.0] {
        let (c, s) = (deg.to_radians().cos(), deg.to_radians().sin());
        let flips = (0..10)
            .map(|i| Flip { time: i as f64, x: 1.0 + i as f64 * c, y: Some(-2.0 + i as f64 * s) })
            .collect();
        let fit = fit_track(&FlipSet { flips }).unwrap();
        let expect = if deg > 180.0 { 360.0 - deg } else { deg };
        assert!((fit.angle_from_x_deg - expect).abs() < 1e-9, "{deg}: {fit:?}");
    }
    assert!(fit_track(&FlipSet::default()).is_none());
}

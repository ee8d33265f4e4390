use super::markov::markov_step;
use super::sphere::log_scales;
use super::spin::spin_jump_index;
use super::*;
use crate::engine::{Engine, EngineConfig, EnsembleOptions, HybridPureState};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn unit(v: [f64; 3]) -> Vec3 {
    let r = Vec3::new(v[0], v[1], v[2]);
    r / r.norm()
}

/// The map written out component by component, without renormalization.
fn formula(r: [f64; 3], n: [f64; 3], a: f64) -> [f64; 3] {
    let rn = r[0] * n[0] + r[1] * n[1] + r[2] * n[2];
    let den = 1.0 + a * a + 2.0 * a * rn;
    let mut out = [0.0; 3];
    for k in 0..3 {
        out[k] = ((1.0 - a * a) * r[k] + 2.0 * a * (1.0 + a * rn) * n[k]) / den;
    }
    out
}

fn arr(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

#[test]
fn tetrahedron_is_regular() {
    let d = directions();
    let sum: Vec3 = d.iter().sum();
    assert!(sum.norm() < 1e-15);
    for i in 0..4 {
        assert!((d[i].norm() - 1.0).abs() < 1e-15);
        for j in 0..i {
            assert!((d[i].dot(&d[j]) + 1.0 / 3.0).abs() < 1e-15);
        }
    }
}

#[test]
fn fixed_points_and_pull_toward_vertex() {
    let d = directions();
    for a in [0.1, 0.5, 0.7, 0.95] {
        for (i, n) in d.iter().enumerate() {
            assert!((ifs_map(n, i, a).unwrap() - n).norm() < 1e-14);
            assert!((ifs_map(&-n, i, a).unwrap() + n).norm() < 1e-14);
        }
    }
    let t = ifs_map(&d[1], 0, 0.5).unwrap();
    let f = formula(arr(&d[1]), arr(&d[0]), 0.5);
    for k in 0..3 {
        assert!((t[k] - f[k]).abs() < 1e-15);
    }
    // by hand: r.n = -1/3, den = 1 + 1/4 - 1/3 = 11/12
    assert!((t.x - (0.75 * -1.0 / 3.0 + 1.0 * (1.0 - 0.5 / 3.0)) / (11.0 / 12.0)).abs() < 1e-15);
    assert!((t.norm() - 1.0).abs() < 1e-15);
    assert!(t.dot(&d[0]) > d[1].dot(&d[0]));
    assert!(ifs_map(&d[0], 0, 1.0).is_err());
    assert!(ifs_map(&d[0], 0, 0.0).is_err());
    assert!(ifs_map(&d[0], 4, 0.5).is_err());
}

#[test]
fn maps_expand_near_the_antipode() {
    let a = 0.7;
    for (i, n) in directions().iter().enumerate() {
        let perp = n.cross(&Vec3::new(0.3, 0.5, 0.7)).normalize();
        let p = (-n + perp * 1e-3).normalize();
        let q = (-n - perp * 1e-3).normalize();
        let (tp, tq) = (ifs_map(&p, i, a).unwrap(), ifs_map(&q, i, a).unwrap());
        assert!((tp - tq).norm() > (p - q).norm(), "T_{i} does not expand at -n_{i}");
    }
}

#[test]
fn probability_bounds() {
    let d = directions();
    assert!((ifs_probs(&d[0], 1.0)[0] - 0.5).abs() < 1e-15);
    let a = 0.7;
    let pmin = (1.0 - a) * (1.0 - a) / (4.0 * (1.0 + a * a));
    for (i, n) in d.iter().enumerate() {
        assert!((ifs_probs(&-n, a)[i] - pmin).abs() < 1e-15);
    }
}

proptest! {
    #[test]
    fn maps_preserve_the_sphere(v in prop::array::uniform3(-1.0f64..1.0), a in 0.01f64..0.99, i in 0usize..4) {
        prop_assume!(Vec3::new(v[0], v[1], v[2]).norm() > 1e-3);
        let r = unit(v);
        let n = directions()[i];
        let f = formula(arr(&r), arr(&n), a);
        prop_assert!(((f[0] * f[0] + f[1] * f[1] + f[2] * f[2]).sqrt() - 1.0).abs() < 1e-12);
        let p = ifs_probs(&r, a);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&x| x >= 0.0));
        // the same formula at -a inverts T_i
        let back = map_raw(&map_raw(&r, &n, a), &n, -a);
        prop_assert!((back - r).norm() < 1e-10);
    }

    #[test]
    fn bloch_round_trip(v in prop::array::uniform3(-1.0f64..1.0), theta in 0.0f64..6.3) {
        prop_assume!(Vec3::new(v[0], v[1], v[2]).norm() > 1e-3);
        let r = unit(v);
        let psi = spinor_from_bloch(&r).unwrap();
        prop_assert!((bloch_from_spinor(&psi).unwrap() - r).norm() < 1e-12);
        let ph = C64::from_polar(1.0, theta);
        let rot = [psi[0] * ph, psi[1] * ph];
        prop_assert!((bloch_from_spinor(&rot).unwrap() - r).norm() < 1e-14);
    }
}

#[test]
fn bloch_basics() {
    let up = [C64::new(1.0, 0.0), C64::new(0.0, 0.0)];
    assert!((bloch_from_spinor(&up).unwrap() - Vec3::new(0.0, 0.0, 1.0)).norm() < 1e-15);
    assert!(bloch_from_spinor(&[C64::new(0.0, 0.0); 2]).is_err());
    let down = spinor_from_bloch(&Vec3::new(0.0, 0.0, -1.0)).unwrap();
    assert!((down[1].norm() - 1.0).abs() < 1e-15);
}

#[test]
fn spinor_jumps_realize_the_maps() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a = 0.7;
    // sum g^dag g = 1
    let mut s = crate::model::CMatrix::zeros(2, 2);
    for i in 0..4 {
        let g = jump_operator(i, a).unwrap();
        s += g.adjoint() * g;
    }
    assert!((s - crate::model::CMatrix::identity(2, 2)).norm() < 1e-15);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let psi = [
            C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5),
            C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5),
        ];
        let n = (psi[0].norm_sqr() + psi[1].norm_sqr()).sqrt();
        let psi = [psi[0] / n, psi[1] / n];
        let r = bloch_from_spinor(&psi).unwrap();
        let p = ifs_probs(&r, a);
        for i in 0..4 {
            // 2x2 arithmetic written out
            let n = directions()[i];
            let k = 1.0 / (2.0 * (1.0 + a * a).sqrt());
            let u = (psi[0] * (1.0 + a * n.z) + psi[1] * C64::new(a * n.x, -a * n.y)) * k;
            let v = (psi[0] * C64::new(a * n.x, a * n.y) + psi[1] * (1.0 - a * n.z)) * k;
            let w = u.norm_sqr() + v.norm_sqr();
            assert!((w - p[i]).abs() < 1e-12);
            let out = spin_jump(&psi, i, a).unwrap();
            assert!((out[0] - u / w.sqrt()).norm() < 1e-12);
            let t = ifs_map(&r, i, a).unwrap();
            worst = worst.max((bloch_from_spinor(&out).unwrap() - t).norm());
        }
    }
    assert!(worst < 1e-10, "{worst}");
}

#[test]
fn pixelization_round_trips_and_is_equal_area() {
    for ns in [1u32, 2, 3, 7, 16, 33] {
        let pix = Pixelization::new(ns).unwrap();
        for c in 0..pix.n_cells() {
            assert_eq!(pix.cell_of(&pix.center(c)), c, "nside {ns} cell {c}");
        }
    }
    let pix = Pixelization::new(4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 400_000;
    let mut counts = vec![0.0; pix.n_cells()];
    for _ in 0..n {
        counts[pix.cell_of(&random_unit(&mut rng))] += 1.0;
    }
    let e = n as f64 / pix.n_cells() as f64;
    let chi2: f64 = counts.iter().map(|c| (c - e) * (c - e) / e).sum();
    let crit = ChiSquared::new((pix.n_cells() - 1) as f64).unwrap().inverse_cdf(0.99);
    assert!(chi2 < crit, "{chi2} vs {crit}");
    assert!(Pixelization::new(0).is_err());
}

#[test]
fn chaos_game_is_reproducible_and_symmetric() {
    let r0 = unit([0.2, -0.4, 0.9]);
    let a = chaos_game(&r0, 0.7, 1000, 100, 5).unwrap();
    let b = chaos_game(&r0, 0.7, 1000, 100, 5).unwrap();
    assert_eq!(a, b);
    assert!(a.iter().all(|p| (p.norm() - 1.0).abs() < 1e-12));
    assert!(chaos_game(&r0, 1.2, 10, 0, 1).is_err());

    let n = 1_000_000;
    let pts = chaos_game(&r0, 0.7, n, 100, 9).unwrap();
    // batch means absorb the chain's autocorrelation
    let batches = 100;
    let per = n / batches;
    let freq: Vec<[f64; 4]> = pts
        .chunks(per)
        .map(|c| {
            let mut f = [0.0; 4];
            for p in c {
                f[voronoi_cell(p)] += 1.0 / per as f64;
            }
            f
        })
        .collect();
    for i in 0..4 {
        let xs: Vec<f64> = freq.iter().map(|f| f[i]).collect();
        let (m, se) = crate::stats::mean_se(&xs);
        assert!((m - 0.25).abs() < 4.0 * se, "cell {i}: {m} +- {se}");
    }
}

fn great_circle(n: usize) -> Vec<Vec3> {
    let axis = unit([1.0, 2.0, 3.0]);
    let u = axis.cross(&Vec3::new(0.0, 0.0, 1.0)).normalize();
    let v = axis.cross(&u);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    (0..n)
        .map(|_| {
            let t: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            u * t.cos() + v * t.sin()
        })
        .collect()
}

#[test]
fn box_counting_recovers_known_dimensions() {
    let circle = box_counting_dimension(&great_circle(200_000), &log_scales(0.005, 0.1, 8)).unwrap();
    assert!((circle.dimension - 1.0).abs() < 0.1, "{circle:?}");
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let cloud: Vec<Vec3> = (0..1_000_000).map(|_| random_unit(&mut rng)).collect();
    let sphere = box_counting_dimension(&cloud, &log_scales(0.02, 0.2, 8)).unwrap();
    assert!((sphere.dimension - 2.0).abs() < 0.1, "{sphere:?}");
    let point = box_counting_dimension(&vec![unit([1.0, 1.0, 0.0]); 10], &log_scales(0.01, 0.1, 5)).unwrap();
    assert!(point.degenerate && point.dimension == 0.0);
    assert!(box_counting_dimension(&cloud[..10], &[0.01, 0.02, 0.03, 0.04]).is_err());
}

#[test]
fn markov_step_moves_point_mass_to_images() {
    let a = 0.7;
    let pix = Pixelization::new(32).unwrap();
    let d = directions();
    let mu = SphereMeasure::point_mass(pix, &d[0]);
    let next = markov_step(&mu, a, 16).unwrap();
    assert!((next.total() - 1.0).abs() < 1e-12);
    let p = ifs_probs(&d[0], a);
    for j in 0..4 {
        let img = map_raw(&d[0], &d[j], a);
        let cell = pix.cell_of(&img);
        // neighbours catch what the cell's own extent spreads out
        let near: f64 = (0..pix.n_cells())
            .filter(|&c| (pix.center(c) - img).norm() < 3.0 * pix.resolution() * if j == 0 { 1.0 } else { 4.0 })
            .map(|c| next.masses[c])
            .sum();
        // p_j varies by at most a |s - n| / (2 (1 + a^2)) across the cell
        let tol = a * pix.resolution() / (2.0 * (1.0 + a * a));
        assert!((near - p[j]).abs() < tol, "image {j}: {near} vs {}", p[j]);
        assert!(next.masses[cell] > 0.0);
    }
    assert!(markov_step(&mu, a, 0).is_err());
    assert!(markov_step(&mu, a, 5).is_err());
}

#[test]
fn markov_iteration_conserves_mass_and_converges() {
    let pix = Pixelization::new(48).unwrap();
    let op = MarkovOperator::new(pix, 0.7, 16).unwrap();
    let mus = op.iterate(&SphereMeasure::uniform(pix), 9).unwrap();
    for w in mus.windows(2) {
        assert!((w[1].total() - w[0].total()).abs() < 1e-9);
        w[1].validate().unwrap();
    }
    let l1: Vec<f64> = mus.windows(2).map(|w| w[0].l1(&w[1])).collect();
    for n in 4..8 {
        assert!(l1[n + 1] < l1[n], "{l1:?}");
    }
    assert!(mus[8].tetrahedral_asymmetry(0.4) < 0.1);
    let grid = mus[8].hemisphere_grid(64);
    assert_eq!(grid.len(), 64 * 64);
    assert!(grid[0].is_none() && grid[32 * 64 + 32].is_some());
}

#[test]
fn engine_on_spin_model_reproduces_chaos_game() {
    let a = 0.7;
    let model = spin_model(a, 1.0).unwrap();
    assert_eq!(model.n_labels(), 16);
    for alpha in 0..16 {
        let crate::model::LambdaOp::Matrix(l) = model.lambda_op(alpha) else { panic!() };
        assert!((l - crate::model::CMatrix::identity(2, 2)).norm() < 1e-14);
    }
    let engine = Engine::new(&model, EngineConfig::new(0.05)).unwrap();
    let r0 = unit([0.3, 0.1, -0.5]);
    let psi0 = spinor_from_bloch(&r0).unwrap();
    let init = HybridPureState::new(&model, 0, psi0.to_vec()).unwrap();
    let n = 4000;
    let opts = EnsembleOptions { keep_records: true, keep_final_states: true, ..Default::default() };
    let out = engine.run_ensemble(&init, 60.0, &[], n, 21, &opts).unwrap();
    let mut pdp = Vec::with_capacity(n);
    for rec in &out.records {
        // replay the recorded clicks on the Bloch sphere
        let mut r = r0;
        let mut label = 0;
        for e in &rec.events {
            let i = e.jump % 4;
            assert_eq!(e.jump, spin_jump_index(label, i));
            label ^= 1 << i;
            r = ifs_map(&r, i, a).unwrap();
        }
        assert_eq!(rec.final_label, label);
        let fs = rec.final_state.as_ref().unwrap();
        let end = bloch_from_spinor(&[fs.psi[0], fs.psi[1]]).unwrap();
        assert!((end - r).norm() < 1e-8);
        assert!(rec.events.len() > 20);
        pdp.push(end);
    }
    let chaos: Vec<Vec3> = (0..n as u64)
        .map(|c| *chaos_game(&r0, a, 1, 60, 1000 + c).unwrap().last().unwrap())
        .collect();
    let pix = Pixelization::new(2).unwrap();
    let (mut ca, mut cb) = (vec![0.0; pix.n_cells()], vec![0.0; pix.n_cells()]);
    for p in &pdp {
        ca[pix.cell_of(p)] += 1.0;
    }
    for p in &chaos {
        cb[pix.cell_of(p)] += 1.0;
    }
    let (mut chi2, mut dof) = (0.0, 0usize);
    for (x, y) in ca.iter().zip(&cb) {
        if x + y > 0.0 {
            chi2 += (x - y) * (x - y) / (x + y);
            dof += 1;
        }
    }
    let crit = ChiSquared::new((dof - 1) as f64).unwrap().inverse_cdf(0.99);
    assert!(chi2 < crit, "{chi2} vs {crit}");
}

use super::clocks::*;
use super::*;
use crate::model::LambdaOp;

const U: Units = Units {
    hbar: Units::HBAR_EV_FS,
    kinetic: Units::ELECTRON_KINETIC_EV_A2,
};

fn barrier(v0: f64, d: f64) -> BarrierConfig {
    BarrierConfig { v0, d }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

/// Small domain so trajectories are cheap.
fn small_setup(d: f64, v0: f64) -> TunnelSetup {
    let mut s = TunnelSetup::traversal(d, v0);
    s.packet.x0 = -100.0;
    s.grid = GridConfig { x_min: -400.0, x_max: 400.0, n: 3277, dt: 0.01 };
    s.t_cut = 30.0;
    s
}

#[test]
fn scattering_is_unitary_and_continuous_at_threshold() {
    for &(v0, d) in &[(10.0, 5.0), (10.0, 40.0), (3.0, 12.0), (-2.0, 7.0)] {
        let b = barrier(v0, d);
        for i in 1..400 {
            let e = 0.05 * i as f64;
            let t = transmission_amplitude(e, &b, U).unwrap();
            let r = reflection_amplitude(e, &b, U).unwrap();
            assert!((t.norm_sqr() + r.norm_sqr() - 1.0).abs() < 1e-12, "E={e} {b:?}");
        }
        if v0 > 0.0 {
            let at = transmission_amplitude(v0, &b, U).unwrap();
            for eps in [1e-7, -1e-7] {
                let near = transmission_amplitude(v0 + eps, &b, U).unwrap();
                assert!((near - at).norm() < 1e-5);
            }
        }
    }
    assert!(transmission_amplitude(0.0, &barrier(1.0, 1.0), U).is_err());
}

#[test]
fn free_and_opaque_limits() {
    let b = barrier(0.0, 7.0);
    for e in [0.5, 5.0, 20.0] {
        let k = U.wave_number(e);
        let t = transmission_amplitude(e, &b, U).unwrap();
        assert!((t - C64::from_polar(1.0, k * 7.0)).norm() < 1e-13);
    }
    let (v0, d) = (10.0, 40.0);
    for e in [0.5, 1.0, 2.0] {
        let kappa = ((v0 - e) / U.kinetic).sqrt();
        assert!(kappa * d > 20.0);
        let t2 = transmission_amplitude(e, &barrier(v0, d), U).unwrap().norm_sqr();
        let approx = 16.0 * (e / v0) * (1.0 - e / v0) * (-2.0 * kappa * d).exp();
        assert!(rel(t2, approx) < 1e-6, "{t2} vs {approx}");
    }
}

fn unwrapped_arg(e: f64, b: &BarrierConfig, h: f64) -> (f64, f64) {
    let a0 = transmission_amplitude(e - h, b, U).unwrap();
    let a1 = transmission_amplitude(e + h, b, U).unwrap();
    // arg of the ratio avoids branch jumps
    ((a1 / a0).arg(), (a1.norm() / a0.norm()).ln())
}

#[test]
fn analytic_derivatives_match_finite_differences() {
    for &(v0, d) in &[(10.0, 5.0), (10.0, 20.0), (4.0, 40.0), (5.0, 40.0), (0.0, 10.0)] {
        let b = barrier(v0, d);
        for e in [2.0, 4.5, 5.0, 5.5, 9.0] {
            let h = 1e-5;
            let (darg, _) = unwrapped_arg(e, &b, h);
            let fd = U.hbar * darg / (2.0 * h);
            let an = phase_delay(e, &b, U).unwrap();
            assert!(rel(an, fd) < 1e-6, "E={e} {b:?}: {an} vs {fd}");

            let up = transmission_amplitude(e, &barrier(v0 + h, d), U).unwrap();
            let dn = transmission_amplitude(e, &barrier(v0 - h, d), U).unwrap();
            let fd_arg = (up / dn).arg() / (2.0 * h);
            let fd_log = (up.norm() / dn.norm()).ln() / (2.0 * h);
            let (a_arg, a_log) = v0_derivatives(e, &b, U).unwrap();
            assert!(rel(a_arg, fd_arg) < 1e-6, "dphi E={e} {b:?}: {a_arg} vs {fd_arg}");
            if fd_log.abs() > 1e-8 {
                assert!(rel(a_log, fd_log) < 1e-6, "dlog E={e} {b:?}: {a_log} vs {fd_log}");
            }
        }
    }
}

#[test]
fn clocks_reduce_to_free_flight_without_barrier() {
    let (x1, x2, d) = (-12.5, 15.0, 10.0);
    let b = barrier(0.0, d);
    for e in [1.0, 5.0, 12.0] {
        let free = (x2 - x1) / velocity(e, U);
        assert!(rel(phase_time(e, &b, x1, x2, U).unwrap(), free) < 1e-9);
        assert!(rel(semiclassical_time(e, &b, x1, x2, U).unwrap(), free) < 1e-9);
        assert!(rel(buttiker_larmor_interval(e, &b, x1, x2, U).unwrap(), free) < 1e-9);
        let small = buttiker_larmor_time(e, &barrier(1e-7, d), U).unwrap();
        assert!(rel(small, d / velocity(e, U)) < 1e-6);
    }
}

#[test]
fn phase_time_saturates_with_width() {
    let t = |d: f64| phase_time(5.0, &barrier(10.0, d), -12.5, d + 5.0, U).unwrap();
    let ratio = t(40.0) / t(20.0);
    assert!((ratio - 1.0).abs() < 0.05, "{ratio}");
    // Büttiker–Larmor keeps growing linearly
    let bl = |d: f64| buttiker_larmor_time(5.0, &barrier(10.0, d), U).unwrap();
    let (a, b, c) = (bl(20.0), bl(30.0), bl(40.0));
    assert!(rel(c - b, b - a) < 0.05);
    assert!(c > 1.5 * a);
}

#[test]
fn semiclassical_time_behaviour() {
    let b = barrier(5.0, 10.0);
    assert!(semiclassical_time(5.0, &b, -1.0, 11.0, U).is_err());
    assert!(semiclassical_time(5.0 - 1e-8, &b, -1.0, 11.0, U).unwrap() > 1e3);
    let mut last = f64::INFINITY;
    for i in 1..100 {
        let v0 = 5.0 + 0.1 * i as f64;
        let t = semiclassical_time(5.0, &barrier(v0, 10.0), -1.0, 11.0, U).unwrap();
        assert!(t < last);
        last = t;
    }
}

#[test]
fn packet_averages() {
    let b = barrier(10.0, 5.0);
    let one = packet_average(|_| Ok(1.0), 5.0, 12.5, Weighting::Transmitted, &b, U, 0.0).unwrap();
    assert!((one.value - 1.0).abs() < 1e-12);
    let clock = |e: f64| phase_time(e, &b, -12.5, 10.0, U);
    let plane = clock(5.0).unwrap();
    let narrow = packet_average(clock, 5.0, 1e5, Weighting::Momentum, &b, U, 0.0).unwrap();
    assert!(rel(narrow.value, plane) < 1e-6);

    // independent trapezoid quadrature in k
    let eta = 12.5;
    let k0 = U.wave_number(5.0);
    let sk = 1.0 / (2.0 * eta);
    let (mut num, mut den) = (0.0, 0.0);
    let n = 40_000;
    for j in 0..=n {
        let k = k0 - 8.0 * sk + 16.0 * sk * j as f64 / n as f64;
        let e = U.kinetic * k * k;
        let w = (-(k - k0).powi(2) / (2.0 * sk * sk)).exp()
            * transmission_amplitude(e, &b, U).unwrap().norm_sqr()
            * if j == 0 || j == n { 0.5 } else { 1.0 };
        num += w * clock(e).unwrap();
        den += w;
    }
    let broad = packet_average(clock, 5.0, eta, Weighting::Transmitted, &b, U, 0.0).unwrap();
    assert!(rel(broad.value, num / den) < 1e-6);
    // transmission weighting favours faster components
    assert!(broad.value < plane);

    let semi = |e: f64| semiclassical_time(e, &barrier(5.0, 5.0), -12.5, 10.0, U);
    let avg = packet_average(semi, 5.0, 12.5, Weighting::Momentum, &barrier(5.0, 5.0), U, 1e-3).unwrap();
    assert!(avg.excluded_weight > 0.0 && avg.excluded_weight < 0.01);
}

#[test]
fn model_structure() {
    let setup = TunnelSetup::reflection(5.0);
    let (model, init) = build_tunnel_model(&setup).unwrap();
    assert_eq!(init.label, WAIT);
    let g = setup.grid();
    let lam = |a: usize| match model.lambda_op(a) {
        LambdaOp::Diagonal(v) => v.clone(),
        _ => unreachable!(),
    };
    let (w, p) = (lam(WAIT), lam(PRIMED));
    let g1 = detector_profile(&setup.d1, U).to_dense(model.space(WAIT));
    let g2 = detector_profile(&setup.d2, U).to_dense(model.space(WAIT));
    for i in 0..g.n {
        assert!((w[i] - g1[i] * g1[i]).abs() < 1e-15);
        assert!((p[i] - g1[i] * g1[i] - g2[i] * g2[i]).abs() < 1e-15);
    }
    assert!(lam(REFL).iter().chain(&lam(TRANS)).all(|&x| x == 0.0));
    let peak = w.iter().cloned().fold(0.0, f64::max);
    let imax = w.iter().position(|&x| x == peak).unwrap();
    assert!((g.x(imax) - setup.d1.x).abs() <= g.dx());
    assert!(rel(peak, 0.16 / U.hbar) < 1e-3);

    let mut bad = setup;
    bad.d1.x = -990.0;
    assert!(build_tunnel_model(&bad).is_err());
    let mut late = TunnelSetup::traversal(5.0, 10.0);
    late.t_cut = 400.0;
    assert!(build_tunnel_model(&late).is_err());
}

#[test]
fn disabled_second_detector_only_reflects() {
    let mut s = small_setup(5.0, 10.0);
    s.d2.w0 = 0.0;
    let opts = ExperimentOptions { estimator: Estimator::Direct, ..Default::default() };
    let r = run_tunnel_experiment(&s, 300, 3, &opts).unwrap();
    assert_eq!(r.stats.transmitted.weight, 0.0);
    assert!(r.stats.transmitted.mean.is_none());
    assert!(r.stats.reflected.weight > 0.0);
    assert!(r.outcomes.iter().all(|o| o.kind != OutcomeKind::Transmitted));
}

#[test]
fn opaque_barrier_blocks_transmission() {
    let mut s = small_setup(5.0, 500.0);
    // keep the tail of D2 off the reflecting front
    s.d2.x = 35.0;
    let opts = ExperimentOptions { estimator: Estimator::Direct, ..Default::default() };
    let r = run_tunnel_experiment(&s, 300, 4, &opts).unwrap();
    assert_eq!(r.stats.transmitted.weight, 0.0);
}

#[test]
fn events_are_ordered_and_censoring_shrinks_with_t_cut() {
    let s = small_setup(3.0, 0.0);
    let (model, init) = build_tunnel_model(&s).unwrap();
    let engine = Engine::new(&model, engine_config(&s)).unwrap();
    let eo = EnsembleOptions { keep_records: true, ..Default::default() };
    let short = engine.run_ensemble(&init, 18.0, &[REFL, TRANS], 200, 5, &eo).unwrap();
    let long = engine.run_ensemble(&init, 30.0, &[REFL, TRANS], 200, 5, &eo).unwrap();
    for (a, b) in short.records.iter().zip(&long.records) {
        for r in [a, b] {
            if let Some(i) = r.events.iter().position(|e| e.to == REFL || e.to == TRANS) {
                assert_eq!(i, 1);
                assert_eq!((r.events[0].from, r.events[0].to), (WAIT, PRIMED));
            }
        }
        let (oa, ob) = (TunnelOutcome::from_record(a), TunnelOutcome::from_record(b));
        if matches!(oa.kind, OutcomeKind::Reflected | OutcomeKind::Transmitted) {
            assert_eq!(oa, ob);
        }
    }
    let censored = |o: &crate::engine::EnsembleOutput| {
        o.records
            .iter()
            .filter(|r| {
                let k = TunnelOutcome::from_record(r).kind;
                k == OutcomeKind::NoFirstEvent || k == OutcomeKind::OneEventOnly
            })
            .count()
    };
    assert!(censored(&long) <= censored(&short));
}

#[test]
fn free_traversal_matches_flight_time() {
    let mut s = small_setup(0.0, 0.0);
    s.d2.x = 100.0;
    s.t_cut = 35.0;
    let opts = ExperimentOptions { estimator: Estimator::Direct, ..Default::default() };
    let r = run_tunnel_experiment(&s, 400, 6, &opts).unwrap();
    let tau = r.stats.transmitted.mean.unwrap();
    let flight = (s.d2.x - s.d1.x) / velocity(s.packet.e0, U);
    assert!(rel(tau, flight) < 0.2, "{tau} vs {flight}");
}

#[test]
fn conditional_estimator_agrees_with_direct_sampling() {
    let mut s = small_setup(2.0, 4.0);
    s.d2.x = 20.0;
    let direct = run_tunnel_experiment(&s, 1500, 8, &ExperimentOptions { estimator: Estimator::Direct, ..Default::default() }).unwrap();
    let cond = run_tunnel_experiment(&s, 1500, 8, &ExperimentOptions::default()).unwrap();
    for (a, b) in [
        (direct.stats.transmitted, cond.stats.transmitted),
        (direct.stats.reflected, cond.stats.reflected),
    ] {
        let (ma, mb) = (a.mean.unwrap(), b.mean.unwrap());
        let se = a.se.unwrap().hypot(b.se.unwrap());
        assert!((ma - mb).abs() < 4.0 * se, "{ma} vs {mb} (se {se})");
        assert!((a.weight - b.weight).abs() < 4.0 * a.weight.sqrt() + 1.0);
    }
    // same first clicks, so the Rao-Blackwellized spread is not larger
    assert!(cond.stats.transmitted.se.unwrap() <= direct.stats.transmitted.se.unwrap());
}

#[test]
fn interpolated_integrals_track_direct_evaluation() {
    let s = small_setup(5.0, 10.0);
    let (model, init) = build_tunnel_model(&s).unwrap();
    let engine = Engine::new(&model, engine_config(&s)).unwrap();
    let dt = s.grid.dt;
    let m = 25; // node spacing 0.25 fs
    let mut phi = init.clone();
    let mut states = Vec::new();
    for step in 0..=(8 * m + m / 2) {
        if step >= 4 * m && (step % m == 0 || step == 6 * m + 12) {
            states.push((step, phi.psi.clone()));
        }
        engine.evolve_continuous(&mut phi, dt).unwrap();
    }
    let f = |step: usize| {
        let psi = &states.iter().find(|(s, _)| *s == step).unwrap().1;
        conditional_integrals(&s, &model, &engine, psi, step as f64 * dt).unwrap().to_array()
    };
    let nodes = [f(5 * m), f(6 * m), f(7 * m), f(8 * m)];
    let exact = f(6 * m + 12);
    let w = cubic_weights(12.0 / m as f64);
    for k in 0..4 {
        let interp: f64 = (0..4).map(|i| w[i] * nodes[i][k]).sum();
        assert!(rel(interp, exact[k]) < 1e-3, "component {k}: {interp} vs {}", exact[k]);
    }
}

#[test]
fn rejects_empty_experiment() {
    let s = small_setup(5.0, 10.0);
    assert!(run_tunnel_experiment(&s, 0, 1, &ExperimentOptions::default()).is_err());
}

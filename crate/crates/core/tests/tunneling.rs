use eeqt_core::tunneling::{run_tunnel_experiment, ExperimentOptions, GridConfig, TunnelSetup};

fn setup(n: usize, dt: f64) -> TunnelSetup {
    let mut s = TunnelSetup::traversal(2.0, 4.0);
    s.packet.x0 = -100.0;
    s.d2.x = 20.0;
    s.grid = GridConfig { x_min: -400.0, x_max: 400.0, n, dt };
    s.t_cut = 30.0;
    s
}

#[test]
fn mean_times_are_stable_under_refinement() {
    let opts = ExperimentOptions::default();
    let coarse = run_tunnel_experiment(&setup(3277, 0.01), 2000, 11, &opts).unwrap().stats;
    let fine = run_tunnel_experiment(&setup(6553, 0.005), 2000, 11, &opts).unwrap().stats;
    for (a, b) in [(coarse.transmitted, fine.transmitted), (coarse.reflected, fine.reflected)] {
        let (ma, mb) = (a.mean.unwrap(), b.mean.unwrap());
        let se = a.se.unwrap().hypot(b.se.unwrap());
        assert!((ma - mb).abs() < 2.0 * se, "{ma} vs {mb} (se {se})");
        assert!((a.weight - b.weight).abs() < 0.05 * a.weight, "{} vs {}", a.weight, b.weight);
    }
}

#[test]
fn results_do_not_depend_on_worker_count() {
    let s = setup(3277, 0.01);
    let run = |w| {
        let opts = ExperimentOptions { workers: Some(w), ..Default::default() };
        run_tunnel_experiment(&s, 300, 4, &opts).unwrap().stats
    };
    assert_eq!(run(1), run(3));
}

use eeqt_core::validation::{run_validation, ValidationSpec};

fn spec() -> ValidationSpec {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/validate.toml");
    let mut s: ValidationSpec = toml::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    s.trajectories = 3000;
    s
}

#[test]
fn shipped_toy_model_agrees_with_master_equation() {
    let out = run_validation(&spec(), 17, None).unwrap();
    assert!(out.report.passed(), "{:?}", out.report.rows);
    assert_eq!(out.times.len(), out.master.times.len());
    // occupations of the three labels add up to one at every sampled time
    let idx: Vec<usize> = ["p_a", "p_b", "p_c"]
        .iter()
        .map(|n| out.observables.iter().position(|o| o.name == *n).unwrap())
        .collect();
    for k in 0..out.times.len() {
        let s: f64 = idx.iter().map(|&j| out.ensemble_mean[j][k]).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }
}

#[test]
fn ensemble_is_independent_of_worker_count() {
    let s = spec();
    let a = run_validation(&s, 5, Some(1)).unwrap();
    let b = run_validation(&s, 5, Some(4)).unwrap();
    assert_eq!(a.ensemble_mean, b.ensemble_mean);
    assert_eq!(a.ensemble_se, b.ensemble_se);
}

#[test]
fn zero_tolerance_rejects_monte_carlo_noise() {
    let mut s = spec();
    s.z_tol = 0.0;
    s.floor = 0.0;
    assert!(!run_validation(&s, 5, None).unwrap().report.passed());
}

#[test]
fn bad_specs_are_rejected() {
    let mut s = spec();
    s.initial.label = "nowhere".into();
    assert!(run_validation(&s, 1, None).is_err());
    let mut s = spec();
    s.observables.clear();
    assert!(run_validation(&s, 1, None).is_err());
    let mut s = spec();
    s.stride = 0;
    assert!(run_validation(&s, 1, None).is_err());
}

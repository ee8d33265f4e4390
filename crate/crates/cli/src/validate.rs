use eeqt_core::master::observable_value;
use eeqt_core::validation::{run_validation, ValidationSpec};

use crate::output::OutDir;
use crate::{load_config, Common};

pub fn run(args: &Common) -> anyhow::Result<bool> {
    let cfg = load_config::<ValidationSpec>(&args.config)?;
    let spec = cfg.value;
    let mut out = OutDir::create(&args.out, "validate", &args.config, &cfg.text, args.seed)?;
    let res = run_validation(&spec, args.seed, args.workers)?;

    // one row per (time, observable), ensemble next to the master equation
    let names: Vec<&str> = res.observables.iter().map(|o| o.name.as_str()).collect();
    let master: Vec<Vec<f64>> = res
        .observables
        .iter()
        .map(|o| res.master.states.iter().map(|s| observable_value(&res.model, &o.kind, s)).collect())
        .collect();
    out.write_csv("series.csv", |w| {
        w.write_record(["t", "observable", "mean", "se", "master"])?;
        for (k, t) in res.times.iter().enumerate() {
            for (j, name) in names.iter().enumerate() {
                w.write_record([
                    t.to_string(),
                    name.to_string(),
                    res.ensemble_mean[j][k].to_string(),
                    res.ensemble_se[j][k].to_string(),
                    master[j][k].to_string(),
                ])?;
            }
        }
        Ok(())
    })?;
    out.write_csv("report.csv", |w| {
        w.write_record(["observable", "max_deviation", "max_sigma", "worst_time", "passed"])?;
        for r in &res.report.rows {
            w.write_record([
                r.name.clone(),
                r.max_deviation.to_string(),
                r.max_sigma.to_string(),
                r.worst_time.to_string(),
                r.passed.to_string(),
            ])?;
        }
        Ok(())
    })?;
    out.finish()?;

    println!("{} trajectories, z_tol {}, floor {}", spec.trajectories, spec.z_tol, spec.floor);
    for r in &res.report.rows {
        println!(
            "{:<12} {}  max |dev| {:.3e}  max {:.2} sigma  tightest margin at t = {:.3}",
            r.name,
            if r.passed { "ok  " } else { "FAIL" },
            r.max_deviation,
            r.max_sigma,
            r.worst_time
        );
    }
    let passed = res.report.passed();
    println!("{}", if passed { "validation passed" } else { "validation FAILED" });
    Ok(passed)
}

use eeqt_core::tunneling::clocks::{buttiker_larmor_interval, packet_average, phase_time, semiclassical_time, Weighting};
use eeqt_core::tunneling::{run_tunnel_experiment, Estimator, ExperimentOptions, TunnelOutcome, TunnelSetup};
use eeqt_core::Units;
use serde::{Deserialize, Serialize};

use crate::output::{opt, OutDir};
use crate::{load_config, Common};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
enum ScanParameter {
    /// Barrier width `d` (A).
    D,
    /// Barrier height `V0` (eV).
    V0,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScanConfig {
    parameter: ScanParameter,
    values: Vec<f64>,
    /// When scanning `d`, keep `D2` this far behind the barrier.
    #[serde(default)]
    d2_gap: Option<f64>,
}

fn default_estimator() -> Estimator {
    Estimator::Conditional
}

fn default_spacing() -> f64 {
    ExperimentOptions::default().node_spacing
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TunnelConfig {
    trajectories: usize,
    #[serde(default = "default_estimator")]
    estimator: Estimator,
    #[serde(default = "default_spacing")]
    node_spacing: f64,
    setup: TunnelSetup,
    scan: ScanConfig,
}

#[derive(Serialize)]
struct OutcomeLine {
    scan_value: f64,
    run: usize,
    #[serde(flatten)]
    outcome: TunnelOutcome,
}

struct Clocks {
    phase: Option<f64>,
    semiclassical: Option<f64>,
    larmor: Option<f64>,
    phase_packet: Option<f64>,
}

/// Stationary clocks at the packet's mean energy over `[x1, x2]`, plus the
/// phase time averaged over the transmitted packet.
fn clocks(s: &TunnelSetup) -> Clocks {
    let u = Units::electron();
    let (e, b, x1, x2) = (s.packet.e0, &s.barrier, s.d1.x, s.d2.x);
    Clocks {
        phase: phase_time(e, b, x1, x2, u).ok(),
        semiclassical: semiclassical_time(e, b, x1, x2, u).ok(),
        larmor: buttiker_larmor_interval(e, b, x1, x2, u).ok(),
        phase_packet: packet_average(|en| phase_time(en, b, x1, x2, u), e, s.packet.eta, Weighting::Transmitted, b, u, 0.0)
            .ok()
            .map(|p| p.value),
    }
}

pub fn run(args: &Common) -> anyhow::Result<bool> {
    let cfg = load_config::<TunnelConfig>(&args.config)?;
    let c = &cfg.value;
    anyhow::ensure!(!c.scan.values.is_empty(), "scan.values is empty");
    let opts = ExperimentOptions { estimator: c.estimator, node_spacing: c.node_spacing, workers: args.workers };
    let setups: Vec<(f64, TunnelSetup)> = c
        .scan
        .values
        .iter()
        .map(|&v| {
            let mut s = c.setup;
            match c.scan.parameter {
                ScanParameter::D => {
                    s.barrier.d = v;
                    if let Some(gap) = c.scan.d2_gap {
                        s.d2.x = v + gap;
                    }
                }
                ScanParameter::V0 => s.barrier.v0 = v,
            }
            s.validate(Units::electron()).map(|_| (v, s))
        })
        .collect::<Result<_, _>>()?;

    let mut out = OutDir::create(&args.out, "tunnel", &args.config, &cfg.text, args.seed)?;
    let mut rows = Vec::new();
    let mut lines = Vec::new();
    for (v, s) in &setups {
        let t = std::time::Instant::now();
        let run = run_tunnel_experiment(s, c.trajectories, args.seed, &opts)?;
        let st = &run.stats;
        log::info!(
            "{:?} = {v}: tau_T {:?} +- {:?}, tau_R {:?} +- {:?} ({:.1} s)",
            c.scan.parameter,
            st.transmitted.mean,
            st.transmitted.se,
            st.reflected.mean,
            st.reflected.se,
            t.elapsed().as_secs_f64()
        );
        lines.extend(run.outcomes.iter().enumerate().map(|(i, o)| OutcomeLine { scan_value: *v, run: i, outcome: *o }));
        rows.push((*v, st.clone(), clocks(s)));
    }

    let name = match c.scan.parameter {
        ScanParameter::D => "d",
        ScanParameter::V0 => "v0",
    };
    out.write_csv("scan.csv", |w| {
        w.write_record([
            name, "tau_r", "se_r", "n_r", "tau_t", "se_t", "n_t", "censored", "phase_time", "semiclassical_time",
            "larmor_time", "phase_time_packet",
        ])?;
        for (v, st, ck) in &rows {
            w.write_record([
                v.to_string(),
                opt(st.reflected.mean),
                opt(st.reflected.se),
                st.reflected.weight.to_string(),
                opt(st.transmitted.mean),
                opt(st.transmitted.se),
                st.transmitted.weight.to_string(),
                st.censored_fraction().to_string(),
                opt(ck.phase),
                opt(ck.semiclassical),
                opt(ck.larmor),
                opt(ck.phase_packet),
            ])?;
        }
        Ok(())
    })?;
    out.write_jsonl("outcomes.jsonl", lines)?;
    out.finish()?;

    println!("{:>8} {:>22} {:>22} {:>10}", name, "tau_T (fs)", "tau_R (fs)", "censored");
    let fmt = |m: Option<f64>, s: Option<f64>| match (m, s) {
        (Some(m), Some(s)) => format!("{m:.4} +- {s:.4}"),
        (Some(m), None) => format!("{m:.4}"),
        _ => "-".into(),
    };
    for (v, st, _) in &rows {
        println!(
            "{v:>8} {:>22} {:>22} {:>10.4}",
            fmt(st.transmitted.mean, st.transmitted.se),
            fmt(st.reflected.mean, st.reflected.se),
            st.censored_fraction()
        );
    }
    Ok(true)
}

use eeqt_core::cloud::{fit_track, run_tracks, DetectorMedium, Packet};
use eeqt_core::model::Grid1D;
use eeqt_core::{QuantumSpace, Units};
use serde::{Deserialize, Serialize};

use crate::output::OutDir;
use crate::{load_config, Common};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MediumConfig {
    x: Grid1D,
    /// Present for a 2D medium.
    #[serde(default)]
    y: Option<Grid1D>,
    pitch: f64,
    width: f64,
    lambda: f64,
}

fn default_min_flips() -> usize {
    5
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CloudConfig {
    medium: MediumConfig,
    packet: Packet,
    t_cut: f64,
    dt: f64,
    tracks: usize,
    /// Tracks with fewer flips are left out of the direction summary.
    #[serde(default = "default_min_flips")]
    min_flips: usize,
}

#[derive(Serialize)]
struct EventLine<'a> {
    track: usize,
    seed: u64,
    time: f64,
    from: &'a str,
    to: &'a str,
    spatial_tag: Option<eeqt_core::model::SpatialTag>,
}

pub fn run(args: &Common) -> anyhow::Result<bool> {
    let cfg = load_config::<CloudConfig>(&args.config)?;
    let c = &cfg.value;
    let space = match c.medium.y {
        Some(y) => QuantumSpace::Grid2D { x: c.medium.x, y },
        None => QuantumSpace::Grid1D(c.medium.x),
    };
    let medium = DetectorMedium::lattice(space, c.medium.pitch, c.medium.width, c.medium.lambda)?;
    let model = medium.build_model(None, Units::electron())?;
    let mut out = OutDir::create(&args.out, "cloud", &args.config, &cfg.text, args.seed)?;
    let tracks = run_tracks(&medium, &c.packet, c.t_cut, c.dt, c.tracks, args.seed, args.workers)?;

    out.write_csv("flips.csv", |w| {
        w.write_record(["track", "t", "x", "y"])?;
        for (i, (set, _)) in tracks.iter().enumerate() {
            for f in &set.flips {
                w.write_record([i.to_string(), f.time.to_string(), f.x.to_string(), crate::output::opt(f.y)])?;
            }
        }
        Ok(())
    })?;
    let mut angles = Vec::new();
    out.write_csv("tracks.csv", |w| {
        w.write_record(["track", "seed", "flips", "dir_x", "dir_y", "angle_from_x_deg"])?;
        for (i, (set, rec)) in tracks.iter().enumerate() {
            let fit = fit_track(set);
            if let Some(f) = fit.filter(|_| set.len() >= c.min_flips) {
                angles.push(f.angle_from_x_deg);
            }
            w.write_record([
                i.to_string(),
                rec.seed.to_string(),
                set.len().to_string(),
                crate::output::opt(fit.map(|f| f.direction[0])),
                crate::output::opt(fit.map(|f| f.direction[1])),
                crate::output::opt(fit.map(|f| f.angle_from_x_deg)),
            ])?;
        }
        Ok(())
    })?;
    out.write_jsonl(
        "events.jsonl",
        tracks.iter().enumerate().flat_map(|(i, (_, rec))| {
            let model = &model;
            rec.events.iter().map(move |e| EventLine {
                track: i,
                seed: rec.seed,
                time: e.time,
                from: model.label_name(e.from),
                to: model.label_name(e.to),
                spatial_tag: e.spatial_tag,
            })
        }),
    )?;
    out.finish()?;

    let flips: usize = tracks.iter().map(|(s, _)| s.len()).sum();
    println!(
        "{} tracks, {} sites, {:.2} flips per track",
        tracks.len(),
        medium.sites().len(),
        flips as f64 / tracks.len().max(1) as f64
    );
    if angles.is_empty() {
        println!("no track with at least {} flips", c.min_flips);
    } else {
        let mean = angles.iter().sum::<f64>() / angles.len() as f64;
        println!(
            "{} tracks with at least {} flips, mean angle from +x {:.2} deg",
            angles.len(),
            c.min_flips,
            mean
        );
    }
    Ok(true)
}

use eeqt_core::fractal::markov::DEFAULT_SAMPLES_PER_CELL;
use eeqt_core::fractal::sphere::{log_scales, DEFAULT_SCALES};
use eeqt_core::fractal::{box_counting_dimension, chaos_game_pooled, MarkovOperator, Pixelization, SphereMeasure};
use serde::Deserialize;

use crate::output::{opt, OutDir};
use crate::{load_config, Common};

fn default_chains() -> usize {
    8
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CloudSection {
    a_fuzz: f64,
    points: usize,
    #[serde(default = "default_chains")]
    chains: usize,
}

fn default_spc() -> usize {
    DEFAULT_SAMPLES_PER_CELL
}

fn default_grid() -> usize {
    256
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MeasureSection {
    a_fuzz: f64,
    nside: u32,
    iterations: usize,
    #[serde(default = "default_spc")]
    samples_per_cell: usize,
    /// Side of the hemisphere raster.
    #[serde(default = "default_grid")]
    grid: usize,
}

fn default_n_scales() -> usize {
    8
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DimensionSection {
    a_fuzz: Vec<f64>,
    points: usize,
    #[serde(default = "default_chains")]
    chains: usize,
    #[serde(default)]
    scale_min: Option<f64>,
    #[serde(default)]
    scale_max: Option<f64>,
    #[serde(default = "default_n_scales")]
    scales: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FractalConfig {
    #[serde(default)]
    cloud: Option<CloudSection>,
    #[serde(default)]
    measure: Option<MeasureSection>,
    #[serde(default)]
    dimension: Option<DimensionSection>,
}

fn per_chain(points: usize, chains: usize) -> anyhow::Result<usize> {
    anyhow::ensure!(chains > 0 && points > 0, "need points > 0 and chains > 0");
    Ok(points.div_ceil(chains))
}

pub fn run(args: &Common) -> anyhow::Result<bool> {
    let cfg = load_config::<FractalConfig>(&args.config)?;
    let c = &cfg.value;
    anyhow::ensure!(
        c.cloud.is_some() || c.measure.is_some() || c.dimension.is_some(),
        "config has none of [cloud], [measure], [dimension]"
    );
    let mut out = OutDir::create(&args.out, "fractal", &args.config, &cfg.text, args.seed)?;

    if let Some(s) = &c.cloud {
        let mut pts = chaos_game_pooled(s.a_fuzz, s.chains, per_chain(s.points, s.chains)?, args.seed)?;
        pts.truncate(s.points);
        out.write_csv("cloud.csv", |w| {
            w.write_record(["x", "y", "z"])?;
            for p in &pts {
                w.write_record([p.x.to_string(), p.y.to_string(), p.z.to_string()])?;
            }
            Ok(())
        })?;
        println!("cloud: {} points at a_fuzz = {}", pts.len(), s.a_fuzz);
    }

    if let Some(s) = &c.measure {
        let pix = Pixelization::new(s.nside)?;
        let op = MarkovOperator::new(pix, s.a_fuzz, s.samples_per_cell)?;
        let mus = op.iterate(&SphereMeasure::uniform(pix), s.iterations)?;
        let last = mus.last().expect("iterate returns the start measure");
        out.write_csv("measure.csv", |w| {
            w.write_record(["cell", "lon_deg", "lat_deg", "mass"])?;
            for (i, m) in last.masses.iter().enumerate() {
                let (z, phi) = pix.center_zphi(i);
                w.write_record([
                    i.to_string(),
                    phi.to_degrees().to_string(),
                    z.clamp(-1.0, 1.0).asin().to_degrees().to_string(),
                    m.to_string(),
                ])?;
            }
            Ok(())
        })?;
        out.write_csv("convergence.csv", |w| {
            w.write_record(["n", "l1_to_next", "total_mass", "tetrahedral_asymmetry"])?;
            for (n, pair) in mus.windows(2).enumerate() {
                w.write_record([
                    n.to_string(),
                    pair[0].l1(&pair[1]).to_string(),
                    pair[1].total().to_string(),
                    pair[1].tetrahedral_asymmetry(0.4).to_string(),
                ])?;
            }
            Ok(())
        })?;
        let grid = last.hemisphere_grid(s.grid);
        let mut csv = String::new();
        for row in grid.chunks(s.grid) {
            let cells: Vec<String> = row.iter().map(|v| opt(*v)).collect();
            csv.push_str(&cells.join(","));
            csv.push('\n');
        }
        out.write("hemisphere_grid.csv", csv.as_bytes())?;
        println!(
            "measure: nside {}, {} iterations, final step L1 {:.3e}",
            s.nside,
            s.iterations,
            mus.windows(2).last().map_or(0.0, |p| p[0].l1(&p[1]))
        );
    }

    if let Some(s) = &c.dimension {
        let lo = s.scale_min.unwrap_or(DEFAULT_SCALES.0);
        let hi = s.scale_max.unwrap_or(DEFAULT_SCALES.1);
        let scales = log_scales(lo, hi, s.scales);
        let mut fits = Vec::new();
        for &a in &s.a_fuzz {
            let mut pts = chaos_game_pooled(a, s.chains, per_chain(s.points, s.chains)?, args.seed)?;
            pts.truncate(s.points);
            let fit = box_counting_dimension(&pts, &scales)?;
            println!("dimension: a_fuzz = {a}: D = {:.3} (R^2 {:.4})", fit.dimension, fit.r2);
            fits.push((a, fit));
        }
        out.write_csv("dimensions.csv", |w| {
            w.write_record(["a_fuzz", "dimension", "r2", "residual", "points"])?;
            for (a, f) in &fits {
                w.write_record([a.to_string(), f.dimension.to_string(), f.r2.to_string(), f.residual.to_string(), s.points.to_string()])?;
            }
            Ok(())
        })?;
        out.write_csv("box_counts.csv", |w| {
            w.write_record(["a_fuzz", "eps", "occupied"])?;
            for (a, f) in &fits {
                for (e, n) in &f.counts {
                    w.write_record([a.to_string(), e.to_string(), n.to_string()])?;
                }
            }
            Ok(())
        })?;
    }
    out.finish()?;
    Ok(true)
}

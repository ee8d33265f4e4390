//! Push-forward of sphere measures under the IFS, by stratified
//! sampling of every cell.

use serde::{Deserialize, Serialize};

use super::sphere::{Pixelization, SphereMeasure};
use super::{check_fuzz, directions, ifs_probs, map_raw};
use crate::error::{Error, Result};

pub const DEFAULT_SAMPLES_PER_CELL: usize = 16;

/// Sparse transfer matrix: row `c` lists `(target cell, weight)` with
/// weights summing to one.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MarkovOperator {
    pub pix: Pixelization,
    pub a_fuzz: f64,
    pub samples_per_cell: usize,
    rows: Vec<Vec<(u32, f64)>>,
}

impl MarkovOperator {
    /// The `K` samples of a cell are the centers of its `K` sub-cells at
    /// `sqrt(K)` times the resolution, so `K` must be a perfect square.
    pub fn new(pix: Pixelization, a_fuzz: f64, samples_per_cell: usize) -> Result<Self> {
        check_fuzz(a_fuzz)?;
        if samples_per_cell < 1 {
            return Err(Error::InvalidArgument("need at least one sample per cell".into()));
        }
        let m = (samples_per_cell as f64).sqrt().round() as u32;
        if (m * m) as usize != samples_per_cell {
            return Err(Error::InvalidArgument(format!(
                "samples per cell must be a perfect square, got {samples_per_cell}"
            )));
        }
        let fine = Pixelization::new(pix.nside * m)?;
        let d = directions();
        let w = 1.0 / samples_per_cell as f64;
        let mut rows: Vec<Vec<(u32, f64)>> = vec![Vec::new(); pix.n_cells()];
        let mut filled = vec![0usize; pix.n_cells()];
        for f in 0..fine.n_cells() {
            let s = fine.center(f);
            let c = pix.cell_of(&s);
            filled[c] += 1;
            let p = ifs_probs(&s, a_fuzz);
            for (n, pi) in d.iter().zip(p) {
                let t = pix.cell_of(&map_raw(&s, n, a_fuzz)) as u32;
                rows[c].push((t, w * pi));
            }
        }
        if filled.iter().any(|&k| k != samples_per_cell) {
            return Err(Error::InvalidArgument("sub-cells do not tile the cells evenly".into()));
        }
        for row in &mut rows {
            row.sort_unstable_by_key(|e| e.0);
            let mut merged: Vec<(u32, f64)> = Vec::with_capacity(row.len());
            for &(t, v) in row.iter() {
                match merged.last_mut() {
                    Some(last) if last.0 == t => last.1 += v,
                    _ => merged.push((t, v)),
                }
            }
            *row = merged;
        }
        Ok(MarkovOperator { pix, a_fuzz, samples_per_cell, rows })
    }

    pub fn step(&self, mu: &SphereMeasure) -> Result<SphereMeasure> {
        if mu.pix != self.pix {
            return Err(Error::DimensionMismatch("measure and operator use different cells".into()));
        }
        let mut out = vec![0.0; self.pix.n_cells()];
        for (row, &m) in self.rows.iter().zip(&mu.masses) {
            if m == 0.0 {
                continue;
            }
            for &(t, w) in row {
                out[t as usize] += m * w;
            }
        }
        Ok(SphereMeasure { pix: self.pix, masses: out })
    }

    /// `mu_0, P mu_0, ..., P^n mu_0`.
    pub fn iterate(&self, mu0: &SphereMeasure, n: usize) -> Result<Vec<SphereMeasure>> {
        let mut out = vec![mu0.clone()];
        for _ in 0..n {
            let next = self.step(out.last().unwrap())?;
            out.push(next);
        }
        Ok(out)
    }
}

/// One push-forward step, building the operator on the fly.
pub fn markov_step(mu: &SphereMeasure, a_fuzz: f64, samples_per_cell: usize) -> Result<SphereMeasure> {
    MarkovOperator::new(mu.pix, a_fuzz, samples_per_cell)?.step(mu)
}

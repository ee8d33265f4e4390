//! Piecewise-deterministic trajectories of a [`HybridModel`].
//!
//! Between events the unnormalized state follows `d psi/dt = K_a psi`, so
//! `||psi||^2` decays at rate `(psi, Lambda_a psi)`. A uniform draw `p`
//! fixes the threshold `1 - p`; when the squared norm reaches it, a jump
//! `g` leaving `a` is picked with probability `||g psi||^2 / (psi, Lambda_a psi)`
//! and the state becomes `g psi / ||g psi||`.
//!
//! Time steps sit on the global grid `k * dt`. A crossing inside a step
//! is located by bisection on the cubic Hermite interpolant of the norm
//! (slopes `-(psi, Lambda psi)` at both ends), and the state at the
//! crossing is recomputed by a partial step.

mod ensemble;
mod propagator;
pub mod rng;

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use ensemble::{
    EnsembleOptions, EnsembleOutput, EnsembleStats, Observable, ObservableKind, Outcome,
    OutcomeStats, ProjectorBatch, SampledSeries, SamplingSpec,
};
pub use propagator::{dense_cayley, Propagator, WindowPolicy, Workspace};
pub use rng::{split_seed, trajectory_rng, TrajectoryRng};

use crate::error::{Error, Result};
use crate::model::{HybridModel, JumpOp, LambdaOp, Profile, QuantumSpace, SpatialTag, C64};

/// Classical label plus a (possibly unnormalized) state vector.
#[derive(Clone, Debug, PartialEq)]
pub struct HybridPureState {
    pub label: usize,
    pub psi: Vec<C64>,
    /// Squared norm with the space weight, kept in sync by the engine.
    pub norm2: f64,
    active: (usize, usize),
}

impl HybridPureState {
    pub fn new(model: &HybridModel, label: usize, psi: Vec<C64>) -> Result<Self> {
        if label >= model.n_labels() {
            return Err(Error::UnknownLabel(format!("label id {label}")));
        }
        let space = model.space(label);
        if psi.len() != space.len() {
            return Err(Error::DimensionMismatch(format!(
                "state has {} components, space of `{}` has {}",
                psi.len(),
                model.label_name(label),
                space.len()
            )));
        }
        let norm2 = space.norm2(&psi);
        if !(norm2 > 0.0 && norm2.is_finite()) {
            return Err(Error::InvalidArgument(format!("state norm^2 = {norm2}")));
        }
        let n = psi.len();
        Ok(HybridPureState {
            label,
            psi,
            norm2,
            active: (0, n),
        })
    }

    pub fn normalized(model: &HybridModel, label: usize, psi: Vec<C64>) -> Result<Self> {
        let mut s = Self::new(model, label, psi)?;
        s.normalize();
        Ok(s)
    }

    pub fn normalize(&mut self) {
        let f = 1.0 / self.norm2.sqrt();
        let (lo, hi) = self.active;
        for z in &mut self.psi[lo..hi] {
            *z *= f;
        }
        self.norm2 = 1.0;
    }

    /// Index range outside which `psi` is exactly zero.
    pub fn active_range(&self) -> (usize, usize) {
        self.active
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminatedBy {
    TCut,
    Absorbed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEvent {
    pub time: f64,
    pub from: usize,
    pub to: usize,
    /// Index of the jump operator that fired.
    pub jump: usize,
    pub spatial_tag: Option<SpatialTag>,
    pub pre_jump_norm2: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRecord {
    pub index: u64,
    pub seed: u64,
    pub events: Vec<TrajectoryEvent>,
    pub final_time: f64,
    pub final_label: usize,
    pub final_state: Option<HybridPureState>,
    pub terminated_by: TerminatedBy,
}

/// Result of [`Engine::sample_jump_target`].
#[derive(Clone, Debug)]
pub struct JumpChoice {
    pub jump: usize,
    pub state: HybridPureState,
    pub spatial_tag: Option<SpatialTag>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EngineConfig {
    /// Global step (fs).
    pub dt: f64,
    /// Crossing-time tolerance as a fraction of `dt`.
    pub crossing_tol: f64,
    /// Moving window for 1D grids; `None` propagates the whole grid.
    pub window: Option<WindowPolicy>,
}

impl EngineConfig {
    pub fn new(dt: f64) -> Self {
        EngineConfig {
            dt,
            crossing_tol: 1e-3,
            window: None,
        }
    }

    pub fn with_window(mut self, w: WindowPolicy) -> Self {
        self.window = Some(w);
        self
    }

    pub fn with_crossing_tol(mut self, tol: f64) -> Self {
        self.crossing_tol = tol;
        self
    }
}

/// A trajectory waiting for its norm to reach `threshold`.
#[derive(Clone, Copy, Debug)]
struct Pending {
    id: usize,
    threshold: f64,
}

trait SweepHooks {
    fn crossed(&mut self, engine: &Engine, id: usize, t: f64, state: HybridPureState)
        -> Result<()>;

    fn grid_point(&mut self, _engine: &Engine, _k: u64, _state: &HybridPureState, _alive: usize) {}

    /// Keep sweeping with no pending thresholds (sampling only).
    fn keep_going(&self) -> bool {
        false
    }
}

/// Fast path for many same-width Gaussian sites on a 2D grid.
#[derive(Debug)]
struct SiteTable {
    sigma: f64,
    /// Distinct x centers (bit patterns) and, per jump, its x-center slot.
    centers_x: Vec<f64>,
    slot: Vec<usize>,
}

#[derive(Debug)]
pub struct Engine<'m> {
    model: &'m HybridModel,
    prop: Propagator<'m>,
    cfg: EngineConfig,
    /// Row-major `Lambda` of finite labels.
    lambda_rows: Vec<Option<Vec<C64>>>,
    sites: Vec<Option<SiteTable>>,
}

impl<'m> Engine<'m> {
    pub fn new(model: &'m HybridModel, cfg: EngineConfig) -> Result<Self> {
        if !(cfg.crossing_tol > 0.0 && cfg.crossing_tol < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "crossing_tol must lie in (0, 1), got {}",
                cfg.crossing_tol
            )));
        }
        let prop = Propagator::new(model, cfg.dt, cfg.window)?;
        let lambda_rows = (0..model.n_labels())
            .map(|a| match model.lambda_op(a) {
                LambdaOp::Matrix(m) => {
                    let n = m.nrows();
                    Some((0..n * n).map(|x| m[(x / n, x % n)]).collect())
                }
                LambdaOp::Diagonal(_) => None,
            })
            .collect();
        let sites = (0..model.n_labels())
            .map(|a| Self::site_table(model, a))
            .collect();
        Ok(Engine {
            model,
            prop,
            cfg,
            lambda_rows,
            sites,
        })
    }

    fn site_table(model: &HybridModel, label: usize) -> Option<SiteTable> {
        let QuantumSpace::Grid2D { .. } = model.space(label) else {
            return None;
        };
        let jumps = model.jumps_from(label);
        if jumps.len() < 8 {
            return None;
        }
        let mut sigma = None;
        let mut centers_x: Vec<f64> = Vec::new();
        let mut slot = Vec::new();
        for &j in jumps {
            let JumpOp::Profile(Profile::Gaussian { center, sigma: s, .. }) = &model.jumps()[j].op
            else {
                return None;
            };
            match sigma {
                None => sigma = Some(*s),
                Some(v) if v != *s => return None,
                _ => {}
            }
            let pos = match centers_x.iter().position(|&c| c == center[0]) {
                Some(p) => p,
                None => {
                    centers_x.push(center[0]);
                    centers_x.len() - 1
                }
            };
            slot.push(pos);
        }
        Some(SiteTable {
            sigma: sigma?,
            centers_x,
            slot,
        })
    }

    pub fn model(&self) -> &'m HybridModel {
        self.model
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn dt(&self) -> f64 {
        self.cfg.dt
    }

    /// `(||psi||^2, (psi, Lambda psi))` over the active range.
    fn measure(&self, s: &HybridPureState) -> (f64, f64) {
        let space = self.model.space(s.label);
        let w = space.weight();
        match (&self.lambda_rows[s.label], self.model.lambda_op(s.label)) {
            (Some(rows), _) => {
                let n = s.psi.len();
                let mut norm = 0.0;
                let mut acc = C64::new(0.0, 0.0);
                for i in 0..n {
                    norm += s.psi[i].norm_sqr();
                    let row = &rows[i * n..(i + 1) * n];
                    let mut r = C64::new(0.0, 0.0);
                    for j in 0..n {
                        r += row[j] * s.psi[j];
                    }
                    acc += s.psi[i].conj() * r;
                }
                (norm * w, acc.re * w)
            }
            (None, LambdaOp::Diagonal(d)) => {
                let (lo, hi) = s.active;
                let mut norm = 0.0;
                let mut rate = 0.0;
                for i in lo..hi {
                    let p = s.psi[i].norm_sqr();
                    norm += p;
                    rate += d[i] * p;
                }
                (norm * w, rate * w)
            }
            _ => unreachable!(),
        }
    }

    /// Event rate `(psi, Lambda psi)` of the (unnormalized) state.
    pub fn rate(&self, s: &HybridPureState) -> f64 {
        self.measure(s).1
    }

    /// One Crank–Nicolson step of length `h`, without renormalization.
    pub fn evolve_continuous(&self, state: &mut HybridPureState, h: f64) -> Result<()> {
        if !(h > 0.0) {
            return Err(Error::InvalidArgument(format!("step must be > 0, got {h}")));
        }
        let mut ws = Workspace::default();
        self.prop
            .step(state.label, &mut state.psi, &mut state.active, h, &mut ws)?;
        state.norm2 = self.measure(state).0;
        Ok(())
    }

    /// Jump weights `||g psi||^2` for every jump leaving the state's label,
    /// in declaration order.
    pub fn jump_weights(&self, state: &HybridPureState) -> Vec<f64> {
        let jumps = self.model.jumps_from(state.label);
        if let (Some(table), QuantumSpace::Grid2D { x, y }) =
            (&self.sites[state.label], self.model.space(state.label))
        {
            return self.site_weights(table, *x, *y, jumps, &state.psi);
        }
        jumps
            .iter()
            .map(|&j| self.model.jump_weight(j, &state.psi))
            .collect()
    }

    fn site_weights(
        &self,
        table: &SiteTable,
        gx: crate::model::Grid1D,
        gy: crate::model::Grid1D,
        jumps: &[usize],
        psi: &[C64],
    ) -> Vec<f64> {
        let reach = crate::model::GAUSSIAN_CUTOFF * table.sigma;
        let inv = 1.0 / (table.sigma * table.sigma);
        // row_sums[c][j] = sum_i exp(-(x_i - cx)^2 / sigma^2) |psi_ij|^2
        let row_sums: Vec<Vec<f64>> = table
            .centers_x
            .iter()
            .map(|&cx| {
                let (lo, hi) = gx.index_range(cx - reach, cx + reach);
                let f: Vec<f64> = (lo..hi)
                    .map(|i| {
                        let d = gx.x(i) - cx;
                        (-d * d * inv).exp()
                    })
                    .collect();
                (0..gy.n)
                    .map(|j| {
                        let row = &psi[j * gx.n + lo..j * gx.n + hi];
                        row.iter().zip(&f).map(|(z, f)| f * z.norm_sqr()).sum()
                    })
                    .collect()
            })
            .collect();
        let w = gx.dx() * gy.dx();
        jumps
            .iter()
            .enumerate()
            .map(|(n, &j)| {
                let JumpOp::Profile(Profile::Gaussian { center, peak, .. }) =
                    &self.model.jumps()[j].op
                else {
                    unreachable!()
                };
                let sums = &row_sums[table.slot[n]];
                let (lo, hi) = gy.index_range(center[1] - reach, center[1] + reach);
                let s: f64 = (lo..hi)
                    .map(|jj| {
                        let d = gy.x(jj) - center[1];
                        (-d * d * inv).exp() * sums[jj]
                    })
                    .sum();
                peak * peak * s * w
            })
            .collect()
    }

    /// Picks the jump by inverse CDF over `||g psi||^2` and returns the
    /// normalized post-jump state.
    pub fn sample_jump_target(&self, state: &HybridPureState, u: f64) -> Result<JumpChoice> {
        let jumps = self.model.jumps_from(state.label);
        let weights = self.jump_weights(state);
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::NullJump {
                label: self.model.label_name(state.label).to_string(),
            });
        }
        let target = u * total;
        let mut cum = 0.0;
        let mut pick = None;
        for (n, &w) in weights.iter().enumerate() {
            cum += w;
            if w > 0.0 {
                pick = Some(n);
                if target < cum {
                    break;
                }
            }
        }
        let n = pick.expect("positive total weight");
        let j = jumps[n];
        let g = &self.model.jumps()[j];
        let psi = self.model.apply_jump(j, &state.psi);
        let mut next = HybridPureState {
            label: g.target,
            norm2: weights[n],
            active: if self.model.space(g.target) == self.model.space(state.label) {
                state.active
            } else {
                (0, psi.len())
            },
            psi,
        };
        next.norm2 = self.measure(&next).0;
        next.normalize();
        Ok(JumpChoice {
            jump: j,
            state: next,
            spatial_tag: g.spatial_tag,
        })
    }

    /// Evolves a normalized `state0` from `t0` until `||psi||^2 = 1 - p`.
    /// Returns `None` when the threshold is not reached by `t_max`.
    pub fn sample_jump_time(
        &self,
        state0: &HybridPureState,
        p: f64,
        t0: f64,
        t_max: f64,
    ) -> Result<Option<(f64, HybridPureState)>> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!("p must lie in [0, 1], got {p}")));
        }
        struct Catch(Option<(f64, HybridPureState)>);
        impl SweepHooks for Catch {
            fn crossed(&mut self, _: &Engine, _: usize, t: f64, s: HybridPureState) -> Result<()> {
                self.0 = Some((t, s));
                Ok(())
            }
        }
        let mut state = state0.clone();
        let mut pending = VecDeque::from([Pending {
            id: 0,
            threshold: 1.0 - p,
        }]);
        let mut hooks = Catch(None);
        self.sweep(&mut state, t0, &mut pending, t_max, &mut hooks)?;
        Ok(hooks.0)
    }

    /// Runs one trajectory until `t_cut` or an absorbing label.
    pub fn run_trajectory(
        &self,
        initial: &HybridPureState,
        t_cut: f64,
        absorbing: &[usize],
        seed: u64,
    ) -> Result<TrajectoryRecord> {
        let opts = EnsembleOptions {
            keep_records: true,
            keep_final_states: true,
            ..EnsembleOptions::default()
        };
        let mut out = self.run_chunk(initial, t_cut, absorbing, &[(0, seed)], &opts)?;
        Ok(out.records.pop().expect("one record"))
    }

    /// Core integrator: advances `state` from `t0` on the global step grid
    /// until every pending threshold has been crossed (and the hooks stop
    /// asking for more) or `t_end` is reached. `pending` must be sorted by
    /// decreasing threshold. Returns the time reached.
    fn sweep<H: SweepHooks>(
        &self,
        state: &mut HybridPureState,
        t0: f64,
        pending: &mut VecDeque<Pending>,
        t_end: f64,
        hooks: &mut H,
    ) -> Result<f64> {
        let dt = self.cfg.dt;
        let tol = self.cfg.crossing_tol * dt;
        let mut ws = Workspace::default();
        let (mut n_a, mut r_a) = self.measure(state);
        state.norm2 = n_a;
        while let Some(p) = pending.front().copied() {
            if p.threshold < n_a {
                break;
            }
            pending.pop_front();
            hooks.crossed(self, p.id, t0, state.clone())?;
        }
        let running = |pending: &VecDeque<Pending>, hooks: &H| !pending.is_empty() || hooks.keep_going();

        let kf = t0 / dt;
        let mut k = kf.round();
        if (kf - k).abs() <= 1e-9 * kf.abs().max(1.0) {
            if running(pending, hooks) {
                hooks.grid_point(self, k as u64, state, pending.len());
            }
        } else {
            k = kf.floor();
        }
        let mut t = t0;
        let mut prev = state.clone();
        while running(pending, hooks) && t < t_end {
            let t_grid = (k + 1.0) * dt;
            let on_grid = t_grid <= t_end + 1e-9 * dt;
            let t_next = if on_grid { t_grid } else { t_end };
            let h = t_next - t;
            if h <= 0.0 {
                break;
            }
            // remember the step start for partial re-stepping
            {
                let (lo, hi) = union(prev.active, state.active);
                prev.psi[lo..hi].copy_from_slice(&state.psi[lo..hi]);
                prev.active = state.active;
                prev.norm2 = state.norm2;
            }
            self.prop
                .step(state.label, &mut state.psi, &mut state.active, h, &mut ws)?;
            let (n_b, r_b) = self.measure(state);
            state.norm2 = n_b;
            while let Some(p) = pending.front().copied() {
                if p.threshold < n_b {
                    break;
                }
                pending.pop_front();
                let tau = hermite_crossing(n_a, r_a, n_b, r_b, h, p.threshold, tol);
                let mut s = prev.clone();
                if tau > 0.0 {
                    self.prop.step(s.label, &mut s.psi, &mut s.active, tau, &mut ws)?;
                    s.norm2 = self.measure(&s).0;
                }
                hooks.crossed(self, p.id, t + tau, s)?;
            }
            t = t_next;
            if on_grid {
                k += 1.0;
                if running(pending, hooks) {
                    hooks.grid_point(self, k as u64, state, pending.len());
                }
            }
            n_a = n_b;
            r_a = r_b;
        }
        Ok(t)
    }
}

fn union(a: (usize, usize), b: (usize, usize)) -> (usize, usize) {
    (a.0.min(b.0), a.1.max(b.1))
}

/// Time offset `s` in `[0, h]` where the cubic Hermite interpolant of the
/// squared norm (values `n_a`, `n_b`, slopes `-r_a`, `-r_b`) hits `theta`.
fn hermite_crossing(n_a: f64, r_a: f64, n_b: f64, r_b: f64, h: f64, theta: f64, tol: f64) -> f64 {
    let p = |s: f64| {
        let x = s / h;
        let x2 = x * x;
        let x3 = x2 * x;
        (2.0 * x3 - 3.0 * x2 + 1.0) * n_a
            + (x3 - 2.0 * x2 + x) * h * (-r_a)
            + (-2.0 * x3 + 3.0 * x2) * n_b
            + (x3 - x2) * h * (-r_b)
    };
    let (mut lo, mut hi) = (0.0, h);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if p(mid) > theta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Threshold `1 - p` for a fresh uniform draw.
fn draw_threshold(rng: &mut TrajectoryRng) -> f64 {
    1.0 - rng.random::<f64>()
}

//! Operational tunneling times: a packet hits a square barrier between two
//! soft detectors. `D1` (in front) is on from the start; its first click
//! at `t0` arms `D2` (behind). A second click by `D1` at `t1` is a
//! reflection (`t1 - t0`), a click by `D2` at `t2` a traversal (`t2 - t0`).

pub mod clocks;
#[cfg(test)]
mod tests;

use serde::{Deserialize, Serialize};

use crate::engine::{Engine, EngineConfig, EnsembleOptions, HybridPureState, TrajectoryRecord, WindowPolicy};
use crate::error::{Error, Result};
use crate::model::{
    Grid1D, Hamiltonian, HybridModel, JumpOp, JumpOperator, Profile, QuantumSpace, SpatialTag,
    Units, C64,
};
use crate::stats::mean_se;

pub const WAIT: usize = 0;
pub const PRIMED: usize = 1;
pub const REFL: usize = 2;
pub const TRANS: usize = 3;

/// Jump indices in the built model.
pub const JUMP_FIRST: usize = 0;
pub const JUMP_REFL: usize = 1;
pub const JUMP_TRANS: usize = 2;

/// Square barrier of height `v0` (eV) on `[0, d]` (A).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BarrierConfig {
    pub v0: f64,
    pub d: f64,
}

/// Gaussian detector: center `x`, standard deviation `dx` (A), peak
/// strength `w0` (eV).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub x: f64,
    pub dx: f64,
    pub w0: f64,
}

/// Initial Gaussian packet: center `x0` (A), position spread `eta` (A),
/// mean energy `e0` (eV).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PacketConfig {
    pub x0: f64,
    pub eta: f64,
    pub e0: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub x_min: f64,
    pub x_max: f64,
    pub n: usize,
    pub dt: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            x_min: -1000.0,
            x_max: 1000.0,
            n: 8192,
            dt: 0.01,
        }
    }
}

pub const DEFAULT_T_CUT: f64 = 120.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TunnelSetup {
    pub barrier: BarrierConfig,
    pub d1: DetectorConfig,
    pub d2: DetectorConfig,
    pub packet: PacketConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default = "default_t_cut")]
    pub t_cut: f64,
}

fn default_t_cut() -> f64 {
    DEFAULT_T_CUT
}

impl TunnelSetup {
    /// Traversal-time geometry: `E0 = 5 eV`, narrow packet, `D2` 5 A behind
    /// the barrier.
    pub fn traversal(d: f64, v0: f64) -> Self {
        TunnelSetup {
            barrier: BarrierConfig { v0, d },
            d1: DetectorConfig { x: -12.5, dx: 12.5, w0: 0.16 },
            d2: DetectorConfig { x: d + 5.0, dx: 5.0, w0: 2.56 },
            packet: PacketConfig { x0: -250.0, eta: 12.5, e0: 5.0 },
            grid: GridConfig::default(),
            t_cut: DEFAULT_T_CUT,
        }
    }

    /// Reflection-time geometry at mean energy `e0`.
    pub fn reflection(e0: f64) -> Self {
        TunnelSetup {
            barrier: BarrierConfig { v0: 10.0, d: 5.0 },
            d1: DetectorConfig { x: -25.0, dx: 25.0, w0: 0.16 },
            d2: DetectorConfig { x: 10.0, dx: 5.0, w0: 2.56 },
            packet: PacketConfig { x0: -250.0, eta: 25.0, e0 },
            grid: GridConfig::default(),
            t_cut: DEFAULT_T_CUT,
        }
    }

    pub fn grid(&self) -> Grid1D {
        Grid1D::new(self.grid.x_min, self.grid.x_max, self.grid.n)
    }

    /// Earliest time at which amplitude reflected by a grid wall can reach
    /// a detector again, for components up to six momentum spreads above
    /// the mean.
    pub fn horizon(&self, units: Units) -> f64 {
        let k = units.wave_number(self.packet.e0) + 6.0 / (2.0 * self.packet.eta);
        let v = units.velocity(k);
        let g = &self.grid;
        let left = (self.barrier.d.max(0.0) - self.packet.x0)
            + (self.barrier.d.max(0.0) - g.x_min)
            + (self.d1.x - 6.0 * self.d1.dx - g.x_min);
        let right = (g.x_max - self.packet.x0) + (g.x_max - (self.d2.x + 6.0 * self.d2.dx));
        left.min(right) / v
    }

    pub fn validate(&self, units: Units) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidModel(m));
        let g = &self.grid;
        if !(g.n >= 3 && g.x_max > g.x_min && g.dt > 0.0) {
            return bad(format!("invalid grid {g:?}"));
        }
        if !(self.barrier.d >= 0.0) || !self.barrier.v0.is_finite() {
            return bad(format!("invalid barrier {:?}", self.barrier));
        }
        for (name, det) in [("D1", &self.d1), ("D2", &self.d2)] {
            if !(det.dx > 0.0 && det.w0 >= 0.0) {
                return bad(format!("{name}: need dx > 0 and w0 >= 0, got {det:?}"));
            }
            if det.x - 6.0 * det.dx < g.x_min || det.x + 6.0 * det.dx > g.x_max {
                return bad(format!("{name} overlaps the domain boundary"));
            }
        }
        if self.d2.x < self.barrier.d {
            return bad("D2 must sit behind the barrier".into());
        }
        let p = &self.packet;
        if !(p.eta > 0.0 && p.e0 > 0.0) {
            return bad(format!("packet needs eta > 0 and e0 > 0, got {p:?}"));
        }
        if !(p.x0 < self.d1.x && self.d1.x < 0.0) {
            return bad("need x0 < x1 < 0".into());
        }
        if p.x0 - 8.0 * p.eta < g.x_min {
            return bad("packet starts too close to the left wall".into());
        }
        let dx = self.grid().dx();
        if units.wave_number(p.e0) * dx >= 0.5 {
            return bad(format!("k0 dx = {:.3} is not resolved (< 0.5)", units.wave_number(p.e0) * dx));
        }
        if !(self.t_cut > 0.0) {
            return bad("t_cut must be > 0".into());
        }
        let h = self.horizon(units);
        if self.t_cut > h {
            return bad(format!(
                "t_cut = {} fs exceeds the wall-free horizon {h:.1} fs; enlarge the domain",
                self.t_cut
            ));
        }
        Ok(())
    }

    /// Cell-averaged barrier potential on the grid.
    pub fn potential(&self) -> Vec<f64> {
        let g = self.grid();
        let dx = g.dx();
        let b = self.barrier;
        (0..g.n)
            .map(|i| {
                let x = g.x(i);
                let lo = (x - 0.5 * dx).max(0.0);
                let hi = (x + 0.5 * dx).min(b.d);
                b.v0 * ((hi - lo).max(0.0) / dx)
            })
            .collect()
    }
}

fn detector_profile(det: &DetectorConfig, units: Units) -> Profile {
    Profile::gaussian_1d(det.x, det.dx, (det.w0 / units.hbar).sqrt())
}

/// Four labels (`wait`, `primed`, `refl`, `trans`) sharing one Hamiltonian;
/// `G1` drives wait -> primed and primed -> refl, `G2` primed -> trans.
pub fn build_tunnel_model(setup: &TunnelSetup) -> Result<(HybridModel, HybridPureState)> {
    let units = Units::electron();
    setup.validate(units)?;
    let g = setup.grid();
    let space = QuantumSpace::Grid1D(g);
    let v = setup.potential();
    let g1 = detector_profile(&setup.d1, units);
    let g2 = detector_profile(&setup.d2, units);
    let jumps = vec![
        JumpOperator { source: WAIT, target: PRIMED, op: JumpOp::Profile(g1.clone()), spatial_tag: Some(SpatialTag::x(setup.d1.x)) },
        JumpOperator { source: PRIMED, target: REFL, op: JumpOp::Profile(g1), spatial_tag: Some(SpatialTag::x(setup.d1.x)) },
        JumpOperator { source: PRIMED, target: TRANS, op: JumpOp::Profile(g2), spatial_tag: Some(SpatialTag::x(setup.d2.x)) },
    ];
    let model = HybridModel::new(
        vec!["wait".into(), "primed".into(), "refl".into(), "trans".into()],
        vec![space.clone(); 4],
        (0..4).map(|_| Hamiltonian::Grid { potential: v.clone() }).collect(),
        jumps,
        units,
    )?;
    let k0 = units.wave_number(setup.packet.e0);
    let psi = crate::model::gaussian_packet(&space, [setup.packet.x0, 0.0], setup.packet.eta, [k0, 0.0])?;
    let init = HybridPureState::new(&model, WAIT, psi)?;
    Ok((model, init))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeKind {
    Reflected,
    Transmitted,
    NoFirstEvent,
    OneEventOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TunnelOutcome {
    pub kind: OutcomeKind,
    pub t0: Option<f64>,
    /// Time of the second click (`t1` or `t2`).
    pub t_second: Option<f64>,
}

impl TunnelOutcome {
    pub fn from_record(rec: &TrajectoryRecord) -> Self {
        let t0 = rec.events.first().map(|e| e.time);
        let second = rec.events.get(1);
        let kind = match (t0, second.map(|e| e.to)) {
            (None, _) => OutcomeKind::NoFirstEvent,
            (Some(_), Some(REFL)) => OutcomeKind::Reflected,
            (Some(_), Some(TRANS)) => OutcomeKind::Transmitted,
            _ => OutcomeKind::OneEventOnly,
        };
        TunnelOutcome { kind, t0, t_second: second.map(|e| e.time) }
    }

    /// `t_REF` or `t_TRA`.
    pub fn duration(&self) -> Option<f64> {
        Some(self.t_second? - self.t0?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// Average of sampled `t_REF` / `t_TRA`.
    Direct,
    /// Sampled first clicks; the second click is integrated exactly
    /// given `t0` (its conditional density is `||G psi(t)||^2`).
    Conditional,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeEstimate {
    /// `None` when no run completed with this outcome.
    pub mean: Option<f64>,
    pub se: Option<f64>,
    /// Number of runs (direct) or expected number of runs (conditional).
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TunnelStats {
    pub estimator: Estimator,
    pub n_runs: usize,
    pub reflected: TimeEstimate,
    pub transmitted: TimeEstimate,
    pub no_first_event: f64,
    pub one_event_only: f64,
}

impl TunnelStats {
    /// Share of runs without a completed outcome by `t_cut`.
    pub fn censored_fraction(&self) -> f64 {
        (self.no_first_event + self.one_event_only) / self.n_runs as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentOptions {
    pub estimator: Estimator,
    /// Spacing of the `t0` lattice on which the conditional integrals are
    /// evaluated (rounded to a multiple of `dt`).
    pub node_spacing: f64,
    pub workers: Option<usize>,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        ExperimentOptions {
            estimator: Estimator::Conditional,
            node_spacing: 0.25,
            workers: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TunnelRun {
    pub stats: TunnelStats,
    /// Per-run outcomes (direct) or first clicks only (conditional).
    pub outcomes: Vec<TunnelOutcome>,
    /// Per-run conditional `(P_trans, P_refl)` given `t0` (conditional only).
    pub conditional: Vec<Option<ConditionalIntegrals>>,
}

/// Second-click integrals after a first click at `t0`: probabilities and
/// first moments of the delay, for both detectors, up to `t_cut`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConditionalIntegrals {
    pub p_trans: f64,
    pub m_trans: f64,
    pub p_refl: f64,
    pub m_refl: f64,
}

impl ConditionalIntegrals {
    fn to_array(self) -> [f64; 4] {
        [self.p_trans, self.m_trans, self.p_refl, self.m_refl]
    }

    fn from_array(a: [f64; 4]) -> Self {
        ConditionalIntegrals { p_trans: a[0], m_trans: a[1], p_refl: a[2], m_refl: a[3] }
    }
}

fn engine_config(setup: &TunnelSetup) -> EngineConfig {
    EngineConfig::new(setup.grid.dt).with_window(WindowPolicy::default())
}

/// One chunk per worker, so the no-click segment is propagated once each.
fn ensemble_options(n: usize, opts: &ExperimentOptions) -> EnsembleOptions {
    let threads = opts.workers.unwrap_or_else(rayon::current_num_threads).max(1);
    EnsembleOptions {
        workers: opts.workers,
        keep_records: true,
        chunk_size: n.div_ceil(threads).max(1),
        ..Default::default()
    }
}

pub fn run_tunnel_experiment(
    setup: &TunnelSetup,
    n: usize,
    master_seed: u64,
    opts: &ExperimentOptions,
) -> Result<TunnelRun> {
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one run".into()));
    }
    let (model, init) = build_tunnel_model(setup)?;
    let engine = Engine::new(&model, engine_config(setup))?;
    match opts.estimator {
        Estimator::Direct => {
            let eo = ensemble_options(n, opts);
            let out = engine.run_ensemble(&init, setup.t_cut, &[REFL, TRANS], n, master_seed, &eo)?;
            let outcomes: Vec<TunnelOutcome> = out.records.iter().map(TunnelOutcome::from_record).collect();
            let times = |k: OutcomeKind| -> Vec<f64> {
                outcomes.iter().filter(|o| o.kind == k).filter_map(|o| o.duration()).collect()
            };
            let est = |xs: Vec<f64>| {
                let w = xs.len() as f64;
                if xs.is_empty() {
                    return TimeEstimate { mean: None, se: None, weight: 0.0 };
                }
                let (m, s) = mean_se(&xs);
                TimeEstimate { mean: Some(m), se: s.is_finite().then_some(s), weight: w }
            };
            let count = |k: OutcomeKind| outcomes.iter().filter(|o| o.kind == k).count() as f64;
            let stats = TunnelStats {
                estimator: Estimator::Direct,
                n_runs: n,
                reflected: est(times(OutcomeKind::Reflected)),
                transmitted: est(times(OutcomeKind::Transmitted)),
                no_first_event: count(OutcomeKind::NoFirstEvent),
                one_event_only: count(OutcomeKind::OneEventOnly),
            };
            Ok(TunnelRun { stats, outcomes, conditional: Vec::new() })
        }
        Estimator::Conditional => run_conditional(setup, &model, &engine, &init, n, master_seed, opts),
    }
}

/// Conditional integrals after a first click at grid time `t0`, given the
/// (unnormalized) wait-state `phi` at that time.
pub fn conditional_integrals(
    setup: &TunnelSetup,
    model: &HybridModel,
    engine: &Engine,
    phi: &[C64],
    t0: f64,
) -> Result<ConditionalIntegrals> {
    let post = model.apply_jump(JUMP_FIRST, phi);
    let mut s = HybridPureState::normalized(model, PRIMED, post)?;
    let dt = setup.grid.dt;
    let dens = |s: &HybridPureState| [model.jump_weight(JUMP_TRANS, &s.psi), model.jump_weight(JUMP_REFL, &s.psi)];
    let g = setup.grid();
    let (zlo, zhi) = g.index_range(setup.d1.x - 8.0 * setup.d1.dx, setup.d2.x + 8.0 * setup.d2.dx);
    let live = [setup.d2.w0 > 0.0, setup.d1.w0 > 0.0];
    let mut acc = [0.0; 4];
    let mut t = t0;
    let mut prev = dens(&s);
    let mut step = 0usize;
    while t < setup.t_cut - 1e-9 * dt {
        step += 1;
        if step % 50 == 0 {
            // amplitude that has left the detector zone does not come back
            let inside = g.dx() * s.psi[zlo..zhi].iter().map(|z| z.norm_sqr()).sum::<f64>();
            let rest = setup.t_cut - t0;
            let settled = (0..2).all(|j| {
                !live[j] || (inside <= 1e-6 * acc[2 * j] && inside * rest <= 1e-6 * acc[2 * j + 1])
            });
            if settled {
                break;
            }
        }
        let h = dt.min(setup.t_cut - t);
        engine.evolve_continuous(&mut s, h)?;
        let cur = dens(&s);
        let (ta, tb) = (t - t0, t + h - t0);
        for (j, (a, b)) in prev.iter().zip(&cur).enumerate() {
            acc[2 * j] += 0.5 * h * (a + b);
            acc[2 * j + 1] += 0.5 * h * (a * ta + b * tb);
        }
        prev = cur;
        t += h;
    }
    Ok(ConditionalIntegrals::from_array(acc))
}

/// Lagrange weights of the four nodes `j-1..=j+2` at fractional offset
/// `f` in `[0, 1)` from node `j`.
fn cubic_weights(f: f64) -> [f64; 4] {
    let (a, b, c, d) = (f + 1.0, f, f - 1.0, f - 2.0);
    [
        -b * c * d / 6.0,
        a * c * d / 2.0,
        -a * b * d / 2.0,
        a * b * c / 6.0,
    ]
}

fn run_conditional(
    setup: &TunnelSetup,
    model: &HybridModel,
    engine: &Engine,
    init: &HybridPureState,
    n: usize,
    master_seed: u64,
    opts: &ExperimentOptions,
) -> Result<TunnelRun> {
    let dt = setup.grid.dt;
    let eo = ensemble_options(n, opts);
    let out = engine.run_ensemble(init, setup.t_cut, &[PRIMED], n, master_seed, &eo)?;
    let outcomes: Vec<TunnelOutcome> = out
        .records
        .iter()
        .map(|r| {
            let t0 = r.events.first().map(|e| e.time);
            TunnelOutcome {
                kind: if t0.is_some() { OutcomeKind::OneEventOnly } else { OutcomeKind::NoFirstEvent },
                t0,
                t_second: None,
            }
        })
        .collect();

    let m = ((opts.node_spacing / dt).round() as u64).max(1);
    let delta = m as f64 * dt;
    let last_node = (setup.t_cut / delta).floor() as i64;
    let node_of = |t0: f64| -> (i64, f64) {
        // stencil j-1..=j+2 kept inside [0, last_node]
        let j = ((t0 / delta).floor() as i64).clamp(1, (last_node - 2).max(1));
        (j, t0 / delta - j as f64)
    };
    let mut needed = std::collections::BTreeSet::new();
    for t0 in outcomes.iter().filter_map(|o| o.t0) {
        let (j, _) = node_of(t0);
        for k in j - 1..=j + 2 {
            needed.insert(k.clamp(0, last_node));
        }
    }

    // sweep the wait state over the needed node times
    let mut table = std::collections::BTreeMap::new();
    let mut phi = init.clone();
    let mut step: u64 = 0;
    for &node in &needed {
        let target = node as u64 * m;
        while step < target {
            engine.evolve_continuous(&mut phi, dt)?;
            step += 1;
        }
        let t0 = target as f64 * dt;
        let f = conditional_integrals(setup, model, engine, &phi.psi, t0)?;
        table.insert(node, f.to_array());
    }

    let mut conditional = Vec::with_capacity(n);
    let mut cols: [Vec<f64>; 4] = Default::default();
    for o in &outcomes {
        let v = match o.t0 {
            None => {
                conditional.push(None);
                [0.0; 4]
            }
            Some(t0) => {
                let (j, f) = node_of(t0);
                let w = cubic_weights(f);
                let mut v = [0.0; 4];
                for (i, wi) in w.iter().enumerate() {
                    let node = (j - 1 + i as i64).clamp(0, last_node);
                    for (vk, nk) in v.iter_mut().zip(&table[&node]) {
                        *vk += wi * nk;
                    }
                }
                // interpolated probabilities are clipped to their range
                v[0] = v[0].max(0.0);
                v[2] = v[2].max(0.0);
                conditional.push(Some(ConditionalIntegrals::from_array(v)));
                v
            }
        };
        for (c, x) in cols.iter_mut().zip(v) {
            c.push(x);
        }
    }
    let ratio = |p: &[f64], q: &[f64]| -> TimeEstimate {
        let nf = p.len() as f64;
        let sp: f64 = p.iter().sum();
        if !(sp > 0.0) {
            return TimeEstimate { mean: None, se: None, weight: 0.0 };
        }
        let r = q.iter().sum::<f64>() / sp;
        let pbar = sp / nf;
        let z: Vec<f64> = p.iter().zip(q).map(|(a, b)| b - r * a).collect();
        let (_, se_z) = mean_se(&z);
        TimeEstimate { mean: Some(r), se: Some(se_z / pbar).filter(|s| s.is_finite()), weight: sp }
    };
    let transmitted = ratio(&cols[0], &cols[1]);
    let reflected = ratio(&cols[2], &cols[3]);
    let first = outcomes.iter().filter(|o| o.t0.is_some()).count() as f64;
    let stats = TunnelStats {
        estimator: Estimator::Conditional,
        n_runs: n,
        no_first_event: n as f64 - first,
        one_event_only: (first - transmitted.weight - reflected.weight).max(0.0),
        reflected,
        transmitted,
    };
    Ok(TunnelRun { stats, outcomes, conditional })
}

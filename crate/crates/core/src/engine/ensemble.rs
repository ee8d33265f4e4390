//! Ensembles of trajectories.
//!
//! Trajectories are processed in fixed chunks of consecutive indices, so
//! chunk composition (and every floating-point sum) is independent of the
//! number of workers. Inside a chunk all members share the deterministic
//! flow up to their first event: thresholds are sorted and a single sweep
//! hands each member off at its own crossing. Each member's history is
//! bit-identical to running it alone.

use std::collections::VecDeque;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    draw_threshold, rng, Engine, HybridPureState, Pending, SweepHooks, TerminatedBy,
    TrajectoryEvent, TrajectoryRecord, TrajectoryRng,
};
use crate::error::{Error, Result};
use crate::model::{CMatrix, C64};

#[derive(Clone, Debug, PartialEq)]
pub enum ObservableKind {
    /// 1 if the classical label equals the given one.
    LabelOccupation(usize),
    /// `<psi|A|psi>` (real part) on the normalized state; zero when the
    /// label does not match.
    Expectation { label: Option<usize>, op: CMatrix },
    /// `sum_i v_i |psi_i|^2 * weight` on the normalized state.
    Diagonal { label: Option<usize>, values: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Observable {
    pub name: String,
    pub kind: ObservableKind,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplingSpec {
    /// Sample every `stride` global steps, starting at t = 0.
    pub stride: usize,
    pub observables: Vec<Observable>,
    /// Accumulate per-batch averaged projectors `|psi><psi| (x) delta_a`.
    pub projectors: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleOptions {
    pub chunk_size: usize,
    /// Worker threads; `None` uses the global pool.
    pub workers: Option<usize>,
    pub keep_records: bool,
    pub keep_final_states: bool,
    pub sampling: Option<SamplingSpec>,
}

impl Default for EnsembleOptions {
    fn default() -> Self {
        EnsembleOptions {
            chunk_size: 256,
            workers: None,
            keep_records: false,
            keep_final_states: false,
            sampling: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    TCut,
    Absorbed(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutcomeStats {
    pub outcome: Outcome,
    pub count: usize,
    /// Mean and standard error of the termination time.
    pub time_mean: f64,
    pub time_se: f64,
    pub events_mean: f64,
}

/// Averaged projectors of one batch (= chunk): `rho[t][label]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectorBatch {
    pub n: usize,
    pub rho: Vec<Vec<CMatrix>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampledSeries {
    pub times: Vec<f64>,
    pub names: Vec<String>,
    /// `mean[obs][t]`
    pub mean: Vec<Vec<f64>>,
    pub se: Vec<Vec<f64>>,
    pub batches: Vec<ProjectorBatch>,
}

impl SampledSeries {
    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Ensemble-averaged projectors over all batches.
    pub fn mean_projectors(&self) -> Vec<Vec<CMatrix>> {
        let total: usize = self.batches.iter().map(|b| b.n).sum();
        let mut out = self.batches[0].rho.clone();
        for row in &mut out {
            for m in row.iter_mut() {
                m.fill(C64::new(0.0, 0.0));
            }
        }
        for b in &self.batches {
            let f = C64::new(b.n as f64 / total as f64, 0.0);
            for (t, row) in b.rho.iter().enumerate() {
                for (a, m) in row.iter().enumerate() {
                    out[t][a] += m * f;
                }
            }
        }
        out
    }

    /// Unbiased purity `tr rho^2` per sample time, from the per-batch
    /// U-statistic `(n tr rhobar^2 - 1) / (n - 1)`. With `reduce = true`
    /// the classical label is traced out first (all labels must share a
    /// dimension). Returns (mean, standard error over batches).
    pub fn purity(&self, reduce: bool) -> Result<(Vec<f64>, Vec<f64>)> {
        let usable: Vec<&ProjectorBatch> = self.batches.iter().filter(|b| b.n >= 2).collect();
        if usable.len() < 2 {
            return Err(Error::InvalidArgument(
                "purity needs at least two batches with two members".into(),
            ));
        }
        let n_t = self.times.len();
        let mut mean = vec![0.0; n_t];
        let mut se = vec![0.0; n_t];
        for t in 0..n_t {
            let u: Vec<f64> = usable
                .iter()
                .map(|b| {
                    let tr2 = if reduce {
                        let mut s = b.rho[t][0].clone();
                        for m in &b.rho[t][1..] {
                            s += m;
                        }
                        hs_square(&s)
                    } else {
                        b.rho[t].iter().map(hs_square).sum()
                    };
                    let n = b.n as f64;
                    (n * tr2 - 1.0) / (n - 1.0)
                })
                .collect();
            let (m, s) = crate::stats::mean_se(&u);
            mean[t] = m;
            se[t] = s;
        }
        Ok((mean, se))
    }
}

fn hs_square(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleStats {
    pub n_runs: usize,
    pub outcomes: Vec<OutcomeStats>,
    pub series: Option<SampledSeries>,
}

impl EnsembleStats {
    pub fn count(&self, outcome: Outcome) -> usize {
        self.outcomes
            .iter()
            .find(|o| o.outcome == outcome)
            .map_or(0, |o| o.count)
    }
}

#[derive(Clone, Debug)]
pub struct EnsembleOutput {
    pub stats: EnsembleStats,
    /// Per-trajectory records in index order (empty unless requested).
    pub records: Vec<TrajectoryRecord>,
}

/// Running sums of sampled observables.
#[derive(Debug)]
struct SampleAcc {
    stride: u64,
    n_times: usize,
    n_obs: usize,
    sum: Vec<f64>,
    sumsq: Vec<f64>,
    proj: Option<Vec<Vec<CMatrix>>>,
    members: usize,
}

impl SampleAcc {
    fn new(engine: &Engine, spec: &SamplingSpec, t_cut: f64) -> Self {
        let dt = engine.dt();
        let stride = spec.stride.max(1) as u64;
        let n_times = (t_cut / (dt * stride as f64) + 1e-9).floor() as usize + 1;
        let n_obs = spec.observables.len();
        let model = engine.model();
        let proj = spec.projectors.then(|| {
            (0..n_times)
                .map(|_| {
                    (0..model.n_labels())
                        .map(|a| {
                            let n = model.space(a).len();
                            CMatrix::zeros(n, n)
                        })
                        .collect()
                })
                .collect()
        });
        SampleAcc {
            stride,
            n_times,
            n_obs,
            sum: vec![0.0; n_times * n_obs],
            sumsq: vec![0.0; n_times * n_obs],
            proj,
            members: 0,
        }
    }

    fn add(&mut self, engine: &Engine, spec: &SamplingSpec, k: u64, s: &HybridPureState, count: usize) {
        if k % self.stride != 0 {
            return;
        }
        let t = (k / self.stride) as usize;
        if t >= self.n_times || count == 0 {
            return;
        }
        let c = count as f64;
        let inv = 1.0 / s.norm2;
        let w = engine.model().space(s.label).weight();
        for (o, obs) in spec.observables.iter().enumerate() {
            let v = observe(&obs.kind, s, w) * inv;
            self.sum[t * self.n_obs + o] += c * v;
            self.sumsq[t * self.n_obs + o] += c * v * v;
        }
        if let Some(p) = &mut self.proj {
            let m = &mut p[t][s.label];
            let n = s.psi.len();
            let f = c * inv * w;
            for j in 0..n {
                let pj = s.psi[j].conj() * f;
                if pj == C64::new(0.0, 0.0) {
                    continue;
                }
                for i in 0..n {
                    m[(i, j)] += s.psi[i] * pj;
                }
            }
        }
    }
}

fn observe(kind: &ObservableKind, s: &HybridPureState, w: f64) -> f64 {
    match kind {
        ObservableKind::LabelOccupation(a) => {
            if s.label == *a {
                s.norm2
            } else {
                0.0
            }
        }
        ObservableKind::Expectation { label, op } => {
            if label.is_some_and(|a| a != s.label) {
                return 0.0;
            }
            w * crate::linalg::expectation(op, &s.psi).re
        }
        ObservableKind::Diagonal { label, values } => {
            if label.is_some_and(|a| a != s.label) {
                return 0.0;
            }
            let (lo, hi) = s.active_range();
            w * (lo..hi).map(|i| values[i] * s.psi[i].norm_sqr()).sum::<f64>()
        }
    }
}

/// Mutable per-trajectory bookkeeping inside a chunk.
struct Member {
    index: u64,
    seed: u64,
    rng: TrajectoryRng,
    events: Vec<TrajectoryEvent>,
    end: Option<(TerminatedBy, f64, usize, Option<HybridPureState>)>,
}

struct Ctx<'a> {
    t_cut: f64,
    absorbing: &'a [bool],
    keep_final: bool,
    spec: Option<&'a SamplingSpec>,
}

pub(super) struct ChunkOut {
    pub records: Vec<TrajectoryRecord>,
    acc: Option<SampleAcc>,
}

/// Samples only: the state is carried along without thresholds.
struct Follow<'a, 'c> {
    ctx: &'a Ctx<'c>,
    acc: Option<&'a mut SampleAcc>,
    crossing: Option<(f64, HybridPureState)>,
    sample_only: bool,
}

impl SweepHooks for Follow<'_, '_> {
    fn crossed(&mut self, _: &Engine, _: usize, t: f64, s: HybridPureState) -> Result<()> {
        self.crossing = Some((t, s));
        Ok(())
    }

    fn grid_point(&mut self, engine: &Engine, k: u64, s: &HybridPureState, alive: usize) {
        if let (Some(acc), Some(spec)) = (self.acc.as_deref_mut(), self.ctx.spec) {
            acc.add(engine, spec, k, s, alive.max(self.sample_only as usize));
        }
    }

    fn keep_going(&self) -> bool {
        self.sample_only && self.acc.is_some()
    }
}

struct Shared<'a, 'c> {
    ctx: &'a Ctx<'c>,
    members: &'a mut [Member],
    acc: Option<&'a mut SampleAcc>,
}

impl SweepHooks for Shared<'_, '_> {
    fn crossed(&mut self, engine: &Engine, id: usize, t: f64, s: HybridPureState) -> Result<()> {
        engine.continue_member(&mut self.members[id], t, s, self.ctx, self.acc.as_deref_mut())
    }

    fn grid_point(&mut self, engine: &Engine, k: u64, s: &HybridPureState, alive: usize) {
        if let (Some(acc), Some(spec)) = (self.acc.as_deref_mut(), self.ctx.spec) {
            acc.add(engine, spec, k, s, alive);
        }
    }
}

impl Engine<'_> {
    /// Runs `n` trajectories; trajectory `i` uses `split_seed(master_seed, i)`.
    pub fn run_ensemble(
        &self,
        initial: &HybridPureState,
        t_cut: f64,
        absorbing: &[usize],
        n: usize,
        master_seed: u64,
        opts: &EnsembleOptions,
    ) -> Result<EnsembleOutput> {
        if n == 0 {
            return Err(Error::InvalidArgument("ensemble size must be >= 1".into()));
        }
        if opts.chunk_size == 0 {
            return Err(Error::InvalidArgument("chunk_size must be >= 1".into()));
        }
        let chunks: Vec<Vec<(u64, u64)>> = (0..n as u64)
            .collect::<Vec<_>>()
            .chunks(opts.chunk_size)
            .map(|c| c.iter().map(|&i| (i, rng::split_seed(master_seed, i))).collect())
            .collect();
        let work = || {
            chunks
                .par_iter()
                .map(|c| self.run_chunk(initial, t_cut, absorbing, c, opts))
                .collect::<Result<Vec<_>>>()
        };
        let outs = match opts.workers {
            Some(w) => rayon::ThreadPoolBuilder::new()
                .num_threads(w.max(1))
                .build()
                .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?
                .install(work)?,
            None => work()?,
        };
        self.merge(outs, n, t_cut, opts)
    }

    fn merge(
        &self,
        outs: Vec<ChunkOut>,
        n: usize,
        t_cut: f64,
        opts: &EnsembleOptions,
    ) -> Result<EnsembleOutput> {
        use std::collections::BTreeMap;
        let mut by_outcome: BTreeMap<Outcome, (usize, f64, f64, f64)> = BTreeMap::new();
        let mut records = Vec::new();
        let mut total_acc: Option<(Vec<f64>, Vec<f64>)> = None;
        let mut batches = Vec::new();
        for out in outs {
            for r in &out.records {
                let key = match r.terminated_by {
                    TerminatedBy::TCut => Outcome::TCut,
                    TerminatedBy::Absorbed => Outcome::Absorbed(r.final_label),
                };
                let e = by_outcome.entry(key).or_insert((0, 0.0, 0.0, 0.0));
                e.0 += 1;
                e.1 += r.final_time;
                e.2 += r.final_time * r.final_time;
                e.3 += r.events.len() as f64;
            }
            if let Some(acc) = out.acc {
                match &mut total_acc {
                    None => total_acc = Some((acc.sum.clone(), acc.sumsq.clone())),
                    Some((s, q)) => {
                        for (a, b) in s.iter_mut().zip(&acc.sum) {
                            *a += b;
                        }
                        for (a, b) in q.iter_mut().zip(&acc.sumsq) {
                            *a += b;
                        }
                    }
                }
                if let Some(p) = acc.proj {
                    let f = C64::new(1.0 / acc.members as f64, 0.0);
                    batches.push(ProjectorBatch {
                        n: acc.members,
                        rho: p
                            .into_iter()
                            .map(|row| row.into_iter().map(|m| m * f).collect())
                            .collect(),
                    });
                }
            }
            if opts.keep_records {
                records.extend(out.records);
            }
        }
        let outcomes = by_outcome
            .into_iter()
            .map(|(outcome, (c, s, q, ev))| {
                let cf = c as f64;
                let mean = s / cf;
                let var = if c > 1 {
                    ((q - s * s / cf) / (cf - 1.0)).max(0.0)
                } else {
                    0.0
                };
                OutcomeStats {
                    outcome,
                    count: c,
                    time_mean: mean,
                    time_se: (var / cf).sqrt(),
                    events_mean: ev / cf,
                }
            })
            .collect();
        let series = match (opts.sampling.as_ref(), total_acc) {
            (Some(spec), Some((sum, sumsq))) => {
                let n_obs = spec.observables.len();
                let n_times = if n_obs > 0 {
                    sum.len() / n_obs
                } else {
                    (t_cut / (self.dt() * spec.stride.max(1) as f64) + 1e-9).floor() as usize + 1
                };
                let nf = n as f64;
                let mut mean = vec![vec![0.0; n_times]; n_obs];
                let mut se = vec![vec![0.0; n_times]; n_obs];
                for t in 0..n_times {
                    for o in 0..n_obs {
                        let s = sum[t * n_obs + o];
                        let q = sumsq[t * n_obs + o];
                        let m = s / nf;
                        let var = if n > 1 {
                            ((q - s * s / nf) / (nf - 1.0)).max(0.0)
                        } else {
                            0.0
                        };
                        mean[o][t] = m;
                        se[o][t] = (var / nf).sqrt();
                    }
                }
                let step = self.dt() * spec.stride.max(1) as f64;
                Some(SampledSeries {
                    times: (0..n_times).map(|t| t as f64 * step).collect(),
                    names: spec.observables.iter().map(|o| o.name.clone()).collect(),
                    mean,
                    se,
                    batches,
                })
            }
            _ => None,
        };
        Ok(EnsembleOutput {
            stats: EnsembleStats {
                n_runs: n,
                outcomes,
                series,
            },
            records,
        })
    }

    /// Runs the given `(index, seed)` members with a shared first segment.
    pub(super) fn run_chunk(
        &self,
        initial: &HybridPureState,
        t_cut: f64,
        absorbing: &[usize],
        seeds: &[(u64, u64)],
        opts: &EnsembleOptions,
    ) -> Result<ChunkOut> {
        let model = self.model();
        if !(t_cut > 0.0) {
            return Err(Error::InvalidArgument(format!("t_cut must be > 0, got {t_cut}")));
        }
        if initial.label >= model.n_labels() || initial.psi.len() != model.space(initial.label).len() {
            return Err(Error::DimensionMismatch("initial state does not fit the model".into()));
        }
        let mut absorbing_mask = vec![false; model.n_labels()];
        for &a in absorbing {
            *absorbing_mask
                .get_mut(a)
                .ok_or_else(|| Error::UnknownLabel(format!("absorbing label id {a}")))? = true;
        }
        let ctx = Ctx {
            t_cut,
            absorbing: &absorbing_mask,
            keep_final: opts.keep_final_states,
            spec: opts.sampling.as_ref(),
        };
        let mut acc = opts
            .sampling
            .as_ref()
            .map(|spec| SampleAcc::new(self, spec, t_cut));
        if let Some(a) = &mut acc {
            a.members = seeds.len();
        }
        let mut members: Vec<Member> = seeds
            .iter()
            .map(|&(index, seed)| Member {
                index,
                seed,
                rng: rng::trajectory_rng(seed),
                events: Vec::new(),
                end: None,
            })
            .collect();

        let mut start = initial.clone();
        start.norm2 = self.measure(&start).0;
        start.normalize();

        if absorbing_mask[start.label] {
            for m in &mut members {
                m.end = Some((
                    TerminatedBy::Absorbed,
                    0.0,
                    start.label,
                    ctx.keep_final.then(|| start.clone()),
                ));
            }
            if let Some(a) = acc.as_mut() {
                let mut st = start.clone();
                let mut hooks = Follow {
                    ctx: &ctx,
                    acc: Some(a),
                    crossing: None,
                    sample_only: true,
                };
                // every member contributes identically
                let mut q = VecDeque::new();
                let mut scaled = ScaledFollow {
                    inner: &mut hooks,
                    weight: members.len(),
                };
                self.sweep(&mut st, 0.0, &mut q, t_cut, &mut scaled)?;
            }
        } else {
            let mut pending: Vec<Pending> = members
                .iter_mut()
                .enumerate()
                .map(|(id, m)| Pending {
                    id,
                    threshold: draw_threshold(&mut m.rng),
                })
                .collect();
            pending.sort_by(|a, b| b.threshold.total_cmp(&a.threshold).then(a.id.cmp(&b.id)));
            let mut pending = VecDeque::from(pending);
            let mut st = start.clone();
            let mut hooks = Shared {
                ctx: &ctx,
                members: &mut members,
                acc: acc.as_mut(),
            };
            self.sweep(&mut st, 0.0, &mut pending, t_cut, &mut hooks)?;
            for p in pending {
                members[p.id].end = Some((
                    TerminatedBy::TCut,
                    t_cut,
                    st.label,
                    ctx.keep_final.then(|| st.clone()),
                ));
            }
        }

        let records = members
            .into_iter()
            .map(|m| {
                let (terminated_by, final_time, final_label, final_state) =
                    m.end.expect("every member terminates");
                TrajectoryRecord {
                    index: m.index,
                    seed: m.seed,
                    events: m.events,
                    final_time,
                    final_label,
                    final_state,
                    terminated_by,
                }
            })
            .collect();
        Ok(ChunkOut { records, acc })
    }

    /// Jump at `(t, s)` and follow the member until it terminates.
    fn continue_member(
        &self,
        m: &mut Member,
        mut t: f64,
        mut s: HybridPureState,
        ctx: &Ctx,
        mut acc: Option<&mut SampleAcc>,
    ) -> Result<()> {
        loop {
            let u: f64 = m.rng.random();
            let pre = s.norm2;
            let from = s.label;
            let choice = self.sample_jump_target(&s, u)?;
            m.events.push(TrajectoryEvent {
                time: t,
                from,
                to: choice.state.label,
                jump: choice.jump,
                spatial_tag: choice.spatial_tag,
                pre_jump_norm2: pre,
            });
            s = choice.state;
            if ctx.absorbing[s.label] {
                m.end = Some((
                    TerminatedBy::Absorbed,
                    t,
                    s.label,
                    ctx.keep_final.then(|| s.clone()),
                ));
                if acc.is_some() {
                    let mut hooks = Follow {
                        ctx,
                        acc: acc.as_deref_mut(),
                        crossing: None,
                        sample_only: true,
                    };
                    self.sweep(&mut s, t, &mut VecDeque::new(), ctx.t_cut, &mut hooks)?;
                }
                return Ok(());
            }
            let mut pending = VecDeque::from([Pending {
                id: 0,
                threshold: draw_threshold(&mut m.rng),
            }]);
            let mut hooks = Follow {
                ctx,
                acc: acc.as_deref_mut(),
                crossing: None,
                sample_only: false,
            };
            self.sweep(&mut s, t, &mut pending, ctx.t_cut, &mut hooks)?;
            match hooks.crossing.take() {
                Some((t1, s1)) => {
                    t = t1;
                    s = s1;
                }
                None => {
                    let label = s.label;
                    m.end = Some((TerminatedBy::TCut, ctx.t_cut, label, ctx.keep_final.then_some(s)));
                    return Ok(());
                }
            }
        }
    }
}

/// Scales sample weights for a group of identical members.
struct ScaledFollow<'h, 'a, 'c> {
    inner: &'h mut Follow<'a, 'c>,
    weight: usize,
}

impl SweepHooks for ScaledFollow<'_, '_, '_> {
    fn crossed(&mut self, e: &Engine, id: usize, t: f64, s: HybridPureState) -> Result<()> {
        self.inner.crossed(e, id, t, s)
    }

    fn grid_point(&mut self, engine: &Engine, k: u64, s: &HybridPureState, _alive: usize) {
        if let (Some(acc), Some(spec)) = (self.inner.acc.as_deref_mut(), self.inner.ctx.spec) {
            acc.add(engine, spec, k, s, self.weight);
        }
    }

    fn keep_going(&self) -> bool {
        self.inner.keep_going()
    }
}

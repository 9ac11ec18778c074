//! Simulated-annealing schedule optimizer used both as the continuation
//! oracle inside the lookahead and as the one-shot baseline.
//!
//! Moves are evaluated incrementally: the annealer keeps the capacity
//! cursor before every position, replays only from the first changed
//! position and stops as soon as the replayed cursor matches the stored one.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::belief::Belief;
use crate::block_model::{Action, BlockModel, CapacityCursor, Destination, OperationalState};
use crate::economics::{EconParams, ValueTable};
use crate::error::{Error, Result};
use crate::schedule::Schedule;
use crate::seed::{self, StreamRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SaParams {
    /// Proposed moves per start.
    pub iterations: usize,
    pub moves_per_temperature: usize,
    pub cooling_ratio: f64,
    /// Acceptance probability of the median worsening probe move at T0.
    pub initial_acceptance_target: f64,
    pub n_starts: usize,
    #[serde(default)]
    pub seed: u64,
}

impl SaParams {
    /// Budget for repeated continuation solves.
    pub fn oracle() -> Self {
        SaParams {
            iterations: 20_000,
            moves_per_temperature: 200,
            cooling_ratio: 0.95,
            initial_acceptance_target: 0.8,
            n_starts: 3,
            seed: 0,
        }
    }

    /// Budget for the single life-of-mine solve.
    pub fn baseline() -> Self {
        SaParams {
            iterations: 200_000,
            n_starts: 8,
            ..SaParams::oracle()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.n_starts == 0 || self.moves_per_temperature == 0 {
            return Err(Error::Config(
                "SA iterations, n_starts and moves_per_temperature must be >= 1".into(),
            ));
        }
        if !(self.cooling_ratio > 0.0 && self.cooling_ratio < 1.0) {
            return Err(Error::Config(format!(
                "cooling ratio must lie in (0, 1), got {}",
                self.cooling_ratio
            )));
        }
        if !(self.initial_acceptance_target > 0.0 && self.initial_acceptance_target < 1.0) {
            return Err(Error::Config(format!(
                "initial acceptance target must lie in (0, 1), got {}",
                self.initial_acceptance_target
            )));
        }
        Ok(())
    }
}

/// Metropolis acceptance probability of a move changing the objective by
/// `delta` at temperature `t`.
pub fn acceptance_probability(delta: f64, t: f64) -> f64 {
    if delta >= 0.0 {
        1.0
    } else {
        (delta / t).exp()
    }
}

const PROBE_MOVES: usize = 100;
const RECOMPUTE_EVERY: usize = 1_000;
const SOFTMAX_POOL: usize = 5;
const P_SWAP: f64 = 0.4;
const P_SHIFT: f64 = 0.8;

/// Everything a solve needs besides the schedule itself.
pub struct Problem<'a> {
    model: &'a BlockModel,
    table: &'a ValueTable,
    discount: Vec<f64>,
    start: OperationalState,
}

impl<'a> Problem<'a> {
    pub fn new(
        model: &'a BlockModel,
        table: &'a ValueTable,
        e: &EconParams,
        start: &OperationalState,
    ) -> Self {
        // each extraction advances the clock by at most two periods
        let horizon = start.period() as usize + 2 * start.n_remaining() + 2;
        let discount = (0..horizon).map(|p| e.discount_factor(p as u32)).collect();
        Problem {
            model,
            table,
            discount,
            start: start.clone(),
        }
    }

    fn disc(&self, period: u32) -> f64 {
        self.discount[period as usize]
    }

    fn tonnes(&self, block: usize) -> f64 {
        self.model.block(block).tonnes
    }

    fn extract(&self, cursor: &mut CapacityCursor, a: Action) -> Option<u32> {
        cursor
            .extract(
                self.model.capacities(),
                self.model.min_tonnes(),
                a.block,
                self.tonnes(a.block),
                a.destination,
            )
            .ok()
    }

    /// Best destination `cursor` can take for `block`.
    fn best_admitted(&self, cursor: &CapacityCursor, block: usize) -> Destination {
        let b = self.model.block(block);
        let mut best: Option<(Destination, f64)> = None;
        for &d in Destination::compatible(b.zone) {
            if cursor.admits(self.model.capacities(), b.tonnes, d) {
                let v = self.table.value(block, d);
                if best.is_none_or(|(_, bv)| v > bv) {
                    best = Some((d, v));
                }
            }
        }
        // model validation guarantees an unlimited destination per zone
        best.expect("zone has an unlimited destination").0
    }

    /// Expected NPV of `actions` from the start state, or `None` if the
    /// replay is infeasible.
    pub fn value_of(&self, actions: &[Action]) -> Option<f64> {
        let mut c = *self.start.cursor();
        let mut total = 0.0;
        for &a in actions {
            let p = self.extract(&mut c, a)?;
            total += self.table.value(a.block, a.destination) * self.disc(p);
        }
        Some(total)
    }

    /// Keeps the order of `actions` and swaps any destination the replay
    /// cannot take for the best one it can.
    pub fn repair(&self, actions: impl IntoIterator<Item = Action>) -> Schedule {
        let mut c = *self.start.cursor();
        let mut out = Vec::new();
        for mut a in actions {
            if !c.admits(self.model.capacities(), self.tonnes(a.block), a.destination) {
                a.destination = self.best_admitted(&c, a.block);
            }
            self.extract(&mut c, a).expect("destination admitted");
            out.push(a);
        }
        Schedule::new(out)
    }

    /// Greedy by best expected value per tonne among ready blocks. With an
    /// RNG the pick is a softmax draw over the top few instead.
    pub fn greedy(&self, mut rng: Option<&mut StreamRng>) -> Schedule {
        let model = self.model;
        let graph = model.graph();
        let n = model.len();
        let mut unmet = vec![0u32; n];
        let mut ready = Vec::new();
        for b in 0..n {
            if self.start.is_mined(b) {
                continue;
            }
            unmet[b] = graph
                .predecessors(b)
                .iter()
                .filter(|&&p| !self.start.is_mined(p))
                .count() as u32;
            if unmet[b] == 0 {
                ready.push(b);
            }
        }
        let key: Vec<f64> = (0..n)
            .map(|b| self.table.best(b).1 / self.tonnes(b))
            .collect();
        let better = |a: usize, b: usize| key[a] > key[b] || (key[a] == key[b] && a < b);

        let mut c = *self.start.cursor();
        let mut out = Vec::with_capacity(self.start.n_remaining());
        while !ready.is_empty() {
            let slot = match rng.as_deref_mut() {
                None => {
                    let mut best = 0;
                    for i in 1..ready.len() {
                        if better(ready[i], ready[best]) {
                            best = i;
                        }
                    }
                    best
                }
                Some(r) => {
                    let mut idx: Vec<usize> = (0..ready.len()).collect();
                    idx.sort_by(|&i, &j| {
                        if better(ready[i], ready[j]) {
                            std::cmp::Ordering::Less
                        } else {
                            std::cmp::Ordering::Greater
                        }
                    });
                    idx.truncate(SOFTMAX_POOL);
                    let top = key[ready[idx[0]]];
                    let spread = top - key[ready[*idx.last().unwrap()]];
                    let weights: Vec<f64> = idx
                        .iter()
                        .map(|&i| {
                            if spread > 0.0 {
                                ((key[ready[i]] - top) / spread).exp()
                            } else {
                                1.0
                            }
                        })
                        .collect();
                    let mut u = r.random::<f64>() * weights.iter().sum::<f64>();
                    let mut pick = idx[idx.len() - 1];
                    for (&i, w) in idx.iter().zip(&weights) {
                        if u < *w {
                            pick = i;
                            break;
                        }
                        u -= w;
                    }
                    pick
                }
            };
            let b = ready.swap_remove(slot);
            let a = Action::new(b, self.best_admitted(&c, b));
            self.extract(&mut c, a).expect("destination admitted");
            out.push(a);
            for &s in graph.successors(b) {
                unmet[s] -= 1;
                if unmet[s] == 0 {
                    ready.push(s);
                }
            }
        }
        Schedule::new(out)
    }
}

/// Greedy construction under the belief mean. `bias_seed` switches on the
/// softmax diversification.
pub fn greedy_construct(
    model: &BlockModel,
    belief: &Belief,
    state: &OperationalState,
    e: &EconParams,
    bias_seed: Option<u64>,
) -> Schedule {
    let table = ValueTable::expected(model, belief, e);
    let problem = Problem::new(model, &table, e, state);
    let mut rng = bias_seed.map(seed::rng);
    problem.greedy(rng.as_mut())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub temperature: f64,
    pub incumbent_value: f64,
    pub best_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaOutcome {
    pub schedule: Schedule,
    pub value: f64,
    /// Value of each start's initial schedule.
    pub initial_values: Vec<f64>,
    /// Largest relative gap seen between the incrementally maintained value
    /// and a full recomputation.
    pub max_drift: f64,
    pub trace: Vec<TraceRow>,
}

struct Annealer<'p, 'a> {
    p: &'p Problem<'a>,
    actions: Vec<Action>,
    pos: Vec<usize>,
    /// `cursors[k]` is the cursor before position `k`.
    cursors: Vec<CapacityCursor>,
    contrib: Vec<f64>,
    value: f64,
    new_actions: Vec<Action>,
    new_cursors: Vec<CapacityCursor>,
    new_contrib: Vec<f64>,
}

const ABSENT: usize = usize::MAX;

impl<'p, 'a> Annealer<'p, 'a> {
    fn new(p: &'p Problem<'a>, schedule: Schedule) -> Self {
        let mut s = Annealer {
            p,
            actions: schedule.actions,
            pos: vec![ABSENT; p.model.len()],
            cursors: Vec::new(),
            contrib: Vec::new(),
            value: 0.0,
            new_actions: Vec::new(),
            new_cursors: Vec::new(),
            new_contrib: Vec::new(),
        };
        for (k, a) in s.actions.iter().enumerate() {
            s.pos[a.block] = k;
        }
        s.recompute();
        s
    }

    /// Full replay; returns the relative change in the stored value.
    fn recompute(&mut self) -> f64 {
        let n = self.actions.len();
        self.cursors.clear();
        self.contrib.clear();
        let mut c = *self.p.start.cursor();
        self.cursors.push(c);
        let mut total = 0.0;
        for &a in &self.actions {
            let period = self.p.extract(&mut c, a).expect("incumbent is feasible");
            let v = self.p.table.value(a.block, a.destination) * self.p.disc(period);
            total += v;
            self.contrib.push(v);
            self.cursors.push(c);
        }
        debug_assert_eq!(self.contrib.len(), n);
        let drift = (self.value - total).abs() / total.abs().max(1.0);
        self.value = total;
        drift
    }

    fn window(&self, block: usize) -> (usize, usize) {
        let graph = self.p.model.graph();
        let mut lo = 0;
        for &q in graph.predecessors(block) {
            if self.pos[q] != ABSENT {
                lo = lo.max(self.pos[q] + 1);
            }
        }
        let mut hi = self.actions.len() - 1;
        for &q in graph.successors(block) {
            if self.pos[q] != ABSENT {
                hi = hi.min(self.pos[q] - 1);
            }
        }
        (lo, hi)
    }

    /// Uniform position in `[lo, hi]` other than `skip`.
    fn other_position(rng: &mut StreamRng, lo: usize, hi: usize, skip: usize) -> Option<usize> {
        if hi <= lo {
            return None;
        }
        let j = rng.random_range(lo..hi);
        Some(if j >= skip { j + 1 } else { j })
    }

    /// Fills `new_actions` with the replacement for positions `lo..=hi`.
    fn propose(&mut self, rng: &mut StreamRng) -> Option<(usize, usize)> {
        let n = self.actions.len();
        if n == 0 {
            return None;
        }
        let r: f64 = rng.random();
        let i = rng.random_range(0..n);
        let bi = self.actions[i].block;
        self.new_actions.clear();
        if r < P_SHIFT {
            let (wl, wh) = self.window(bi);
            let j = Self::other_position(rng, wl, wh, i)?;
            let (lo, hi) = (i.min(j), i.max(j));
            if r < P_SWAP {
                let bj = self.actions[j].block;
                let (wl_j, wh_j) = self.window(bj);
                if i < wl_j || i > wh_j {
                    return None;
                }
                self.new_actions.extend_from_slice(&self.actions[lo..=hi]);
                self.new_actions.swap(0, hi - lo);
            } else if j < i {
                self.new_actions.push(self.actions[i]);
                self.new_actions.extend_from_slice(&self.actions[j..i]);
            } else {
                self.new_actions.extend_from_slice(&self.actions[i + 1..=j]);
                self.new_actions.push(self.actions[i]);
            }
            Some((lo, hi))
        } else {
            let options = Destination::compatible(self.p.model.block(bi).zone);
            let current = self.actions[i].destination;
            let others: Vec<Destination> = options.iter().copied().filter(|&d| d != current).collect();
            if others.is_empty() {
                return None;
            }
            let d = others[rng.random_range(0..others.len())];
            self.new_actions.push(Action::new(bi, d));
            Some((i, i))
        }
    }

    /// Change in value if the proposal were applied and the exclusive end
    /// of the replayed range, or `None` if the proposal is infeasible.
    fn evaluate(&mut self, lo: usize, hi: usize) -> Option<(f64, usize)> {
        let n = self.actions.len();
        self.new_cursors.clear();
        self.new_contrib.clear();
        let mut c = self.cursors[lo];
        let mut delta = 0.0;
        let mut k = lo;
        while k < n {
            let a = if k <= hi {
                self.new_actions[k - lo]
            } else {
                self.actions[k]
            };
            let period = self.p.extract(&mut c, a)?;
            let v = self.p.table.value(a.block, a.destination) * self.p.disc(period);
            delta += v - self.contrib[k];
            self.new_contrib.push(v);
            self.new_cursors.push(c);
            k += 1;
            if k > hi && c == self.cursors[k] {
                break;
            }
        }
        Some((delta, k))
    }

    fn commit(&mut self, lo: usize, hi: usize, end: usize, delta: f64) {
        for k in lo..=hi {
            let a = self.new_actions[k - lo];
            self.actions[k] = a;
            self.pos[a.block] = k;
        }
        for k in lo..end {
            self.contrib[k] = self.new_contrib[k - lo];
            self.cursors[k + 1] = self.new_cursors[k - lo];
        }
        self.value += delta;
    }

    /// T0 from the median worsening magnitude over probe moves.
    fn calibrate(&mut self, rng: &mut StreamRng, target: f64) -> f64 {
        let mut worse = Vec::new();
        for _ in 0..PROBE_MOVES {
            if let Some((lo, hi)) = self.propose(rng) {
                if let Some((delta, _)) = self.evaluate(lo, hi) {
                    if delta < 0.0 {
                        worse.push(-delta);
                    }
                }
            }
        }
        if worse.is_empty() {
            return 1.0;
        }
        worse.sort_by(f64::total_cmp);
        let m = worse.len();
        let median = if m % 2 == 1 {
            worse[m / 2]
        } else {
            0.5 * (worse[m / 2 - 1] + worse[m / 2])
        };
        median / -target.ln()
    }
}

/// Runs every start and keeps the best schedule. `warm`, if given, is
/// repaired and replaces the first start.
pub fn anneal(
    problem: &Problem<'_>,
    params: &SaParams,
    warm: Option<&Schedule>,
    trace: bool,
) -> Result<SaOutcome> {
    params.validate()?;
    let mut best: Option<(Schedule, f64)> = None;
    let mut initial_values = Vec::with_capacity(params.n_starts);
    let mut max_drift: f64 = 0.0;
    let mut rows = Vec::new();
    for start in 0..params.n_starts {
        let mut rng = seed::child_rng(params.seed, &[seed::tag::SA_START, start as u64]);
        let init = match (start, warm) {
            (0, Some(w)) => problem.repair(w.actions.iter().copied()),
            (s, w) => {
                // the first greedy start is deterministic
                let greedy_index = if w.is_some() { s - 1 } else { s };
                if greedy_index == 0 {
                    problem.greedy(None)
                } else {
                    problem.greedy(Some(&mut rng))
                }
            }
        };
        if init.len() != problem.start.n_remaining() {
            return Err(Error::IncompleteSchedule(format!(
                "initial schedule covers {} of {} blocks",
                init.len(),
                problem.start.n_remaining()
            )));
        }
        let mut ann = Annealer::new(problem, init);
        initial_values.push(ann.value);
        let mut start_best = ann.value;
        let mut start_best_actions = ann.actions.clone();
        let mut t = ann.calibrate(&mut rng, params.initial_acceptance_target);
        for it in 0..params.iterations {
            if let Some((lo, hi)) = ann.propose(&mut rng) {
                if let Some((delta, end)) = ann.evaluate(lo, hi) {
                    let accept = delta >= 0.0 || rng.random::<f64>() < acceptance_probability(delta, t);
                    if accept {
                        ann.commit(lo, hi, end, delta);
                        if ann.value > start_best {
                            start_best = ann.value;
                            start_best_actions.clone_from(&ann.actions);
                        }
                    }
                }
            }
            if (it + 1) % RECOMPUTE_EVERY == 0 {
                max_drift = max_drift.max(ann.recompute());
            }
            if (it + 1) % params.moves_per_temperature == 0 {
                t *= params.cooling_ratio;
                if trace {
                    rows.push(TraceRow {
                        iteration: start * params.iterations + it + 1,
                        temperature: t,
                        incumbent_value: ann.value,
                        best_value: start_best.max(best.as_ref().map_or(f64::NEG_INFINITY, |b| b.1)),
                    });
                }
            }
        }
        // best-so-far bookkeeping used incremental values; settle exactly
        let exact = problem
            .value_of(&start_best_actions)
            .expect("tracked schedules are feasible");
        if best.as_ref().is_none_or(|(_, v)| exact > *v) {
            best = Some((Schedule::new(start_best_actions), exact));
        }
    }
    let (schedule, value) = best.expect("n_starts >= 1");
    Ok(SaOutcome {
        schedule,
        value,
        initial_values,
        max_drift,
        trace: rows,
    })
}

/// Best schedule found for the blocks remaining in `state`, and its
/// belief-expected NPV in period-0 money.
pub fn sa_optimize(
    model: &BlockModel,
    belief: &Belief,
    state: &OperationalState,
    e: &EconParams,
    params: &SaParams,
) -> Result<(Schedule, f64)> {
    let table = ValueTable::expected(model, belief, e);
    let problem = Problem::new(model, &table, e, state);
    let out = anneal(&problem, params, None, false)?;
    Ok((out.schedule, out.value))
}

/// Optimized expected value of the rest of the mine from `state`. Cash flows
/// are discounted by their absolute extraction periods.
pub fn continuation_value(
    model: &BlockModel,
    belief: &Belief,
    state: &OperationalState,
    e: &EconParams,
    params: &SaParams,
) -> Result<f64> {
    if state.n_remaining() == 0 {
        return Ok(0.0);
    }
    Ok(sa_optimize(model, belief, state, e, params)?.1)
}

/// Writes trace rows as `iteration,temperature,incumbent_value,best_value`.
pub fn write_trace<W: std::io::Write>(rows: &[TraceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

//! Exhaustive reference solutions for tiny instances.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::belief::{Belief, EsmdaConfig};
use crate::block_model::{
    Action, BlockModel, Destination, GridDims, OperationalState, PeriodCapacities, PrecedencePattern, ZoneLayout,
    N_DESTINATIONS,
};
use crate::economics::{block_cash_flow, EconParams};
use crate::error::{Error, Result};
use crate::geostat::GradeField;
use crate::pomdp_engine::ContinuationSolver;
use crate::schedule::Schedule;
use crate::seed;

pub const MAX_BLOCKS: usize = 10;
pub const MAX_MEMBERS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleMode {
    OpenLoop,
    OneStepLookahead,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub mode: OracleMode,
    pub value: f64,
    /// First actions attaining `value`.
    pub best_actions: Vec<Action>,
    /// Every feasible first action with its value.
    pub action_values: Vec<(Action, f64)>,
}

type Key = (u32, u32, u64, [u64; N_DESTINATIONS]);

fn key(state: &OperationalState) -> Key {
    let mask = state
        .mined_mask()
        .iter()
        .enumerate()
        .fold(0u32, |m, (i, &b)| if b { m | (1 << i) } else { m });
    let c = state.cursor();
    (
        mask,
        c.period,
        c.remaining_mining.to_bits(),
        c.remaining_dest.map(f64::to_bits),
    )
}

/// Depth-first enumeration of every precedence- and capacity-feasible
/// completion, memoized on the operational state.
struct OpenLoop<'a> {
    model: &'a BlockModel,
    e: &'a EconParams,
    /// Belief-mean undiscounted cash flow per (block, destination).
    mean_cf: Vec<[f64; N_DESTINATIONS]>,
    memo: HashMap<Key, (f64, Option<Action>)>,
}

impl<'a> OpenLoop<'a> {
    fn new(model: &'a BlockModel, belief: &Belief, e: &'a EconParams) -> Self {
        let n = belief.n_members() as f64;
        let mean_cf = model
            .blocks()
            .iter()
            .map(|b| {
                let mut row = [f64::NEG_INFINITY; N_DESTINATIONS];
                for d in Destination::compatible(b.zone) {
                    let total: f64 = belief
                        .members()
                        .iter()
                        .map(|m| block_cash_flow(m.cu[b.id], m.au[b.id], b.tonnes, *d, e))
                        .sum();
                    row[d.index()] = total / n;
                }
                row
            })
            .collect();
        OpenLoop {
            model,
            e,
            mean_cf,
            memo: HashMap::new(),
        }
    }

    fn step_value(&self, action: Action, period: u32) -> f64 {
        self.mean_cf[action.block][action.destination.index()] * self.e.discount_factor(period)
    }

    fn value(&mut self, state: &OperationalState) -> Result<f64> {
        if state.n_remaining() == 0 {
            return Ok(0.0);
        }
        let k = key(state);
        if let Some(&(v, _)) = self.memo.get(&k) {
            return Ok(v);
        }
        let mut best = (f64::NEG_INFINITY, None);
        for a in self.model.feasible_actions(state) {
            let (next, period) = self.model.transition(state, a)?;
            let v = self.step_value(a, period) + self.value(&next)?;
            if v > best.0 {
                best = (v, Some(a));
            }
        }
        if best.1.is_none() {
            return Err(Error::Model("no feasible completion".into()));
        }
        self.memo.insert(k, best);
        Ok(best.0)
    }

    fn first_actions(&mut self, state: &OperationalState) -> Result<Vec<(Action, f64)>> {
        self.model
            .feasible_actions(state)
            .into_iter()
            .map(|a| {
                let (next, period) = self.model.transition(state, a)?;
                Ok((a, self.step_value(a, period) + self.value(&next)?))
            })
            .collect()
    }

    fn schedule(&mut self, start: &OperationalState) -> Result<(Schedule, f64)> {
        let value = self.value(start)?;
        let mut state = start.clone();
        let mut actions = Vec::new();
        while state.n_remaining() > 0 {
            let a = self.memo[&key(&state)].1.expect("memoized non-terminal state");
            actions.push(a);
            state = self.model.transition(&state, a)?.0;
        }
        Ok((Schedule::new(actions), value))
    }
}

fn guard(model: &BlockModel, belief: &Belief) -> Result<()> {
    if model.len() > MAX_BLOCKS || belief.n_members() > MAX_MEMBERS {
        return Err(Error::TooLarge(format!(
            "oracle handles at most {MAX_BLOCKS} blocks and {MAX_MEMBERS} members, got {} and {}",
            model.len(),
            belief.n_members()
        )));
    }
    Ok(())
}

/// Open-loop optimum of the remaining blocks from `state`.
pub fn exact_open_loop(
    model: &BlockModel,
    belief: &Belief,
    state: &OperationalState,
    e: &EconParams,
) -> Result<(Schedule, f64)> {
    guard(model, belief)?;
    OpenLoop::new(model, belief, e).schedule(state)
}

/// Continuation solver that returns the exact open-loop optimum.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExactContinuation;

impl ContinuationSolver for ExactContinuation {
    fn solve(
        &self,
        model: &BlockModel,
        belief: &Belief,
        state: &OperationalState,
        e: &EconParams,
        _seed: u64,
        _warm: Option<&Schedule>,
    ) -> Result<(Schedule, f64)> {
        exact_open_loop(model, belief, state, e)
    }
}

/// Exhaustive optimum from the initial state.
///
/// `OneStepLookahead` values each first action by its belief-expected
/// cash flow plus, averaged over every member, the open-loop optimum under
/// the posterior that member's observation would produce. Posterior noise
/// streams follow the closed-loop engine, so with `seed` equal to a
/// candidate's seed the values match an exhaustive-mode Q-estimate.
pub fn brute_force_oracle(
    model: &BlockModel,
    belief: &Belief,
    e: &EconParams,
    mode: OracleMode,
    esmda: &EsmdaConfig,
    seed: u64,
) -> Result<OracleResult> {
    guard(model, belief)?;
    let start = OperationalState::initial(model);
    let action_values = match mode {
        OracleMode::OpenLoop => OpenLoop::new(model, belief, e).first_actions(&start)?,
        OracleMode::OneStepLookahead => {
            let ne = belief.n_members();
            model
                .feasible_actions(&start)
                .into_iter()
                .map(|a| {
                    let (next, period) = model.transition(&start, a)?;
                    let tonnes = model.block(a.block).tonnes;
                    let immediate = belief
                        .members()
                        .iter()
                        .map(|m| block_cash_flow(m.cu[a.block], m.au[a.block], tonnes, a.destination, e))
                        .sum::<f64>()
                        / ne as f64
                        * e.discount_factor(period);
                    let mut cont = 0.0;
                    if next.n_remaining() > 0 {
                        for j in 0..ne {
                            let mut rng = seed::child_rng(seed, &[seed::tag::MEMBER, j as u64]);
                            let post = belief.lookahead_for_member(model, a, j, esmda, &mut rng)?;
                            cont += OpenLoop::new(model, &post, e).value(&next)?;
                        }
                    }
                    Ok((a, immediate + cont / ne as f64))
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    let value = action_values
        .iter()
        .map(|(_, v)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    if !value.is_finite() {
        return Err(Error::Model("no feasible first action".into()));
    }
    let tol = 1e-9 * value.abs().max(1.0);
    let best_actions = action_values
        .iter()
        .filter(|(_, v)| value - v <= tol)
        .map(|(a, _)| *a)
        .collect();
    Ok(OracleResult {
        mode,
        value,
        best_actions,
        action_values,
    })
}

/// Grid shapes of at most eight blocks used for randomized instances.
const TINY_DIMS: [(usize, usize, usize); 6] = [(1, 1, 2), (2, 1, 1), (2, 2, 1), (3, 1, 2), (2, 2, 2), (4, 2, 1)];

/// Deposit on `dims` with `n_members` lognormal members. Capacities bind
/// so periods roll over.
pub fn tiny_instance(dims: GridDims, n_members: usize, seed: u64) -> Result<(BlockModel, Belief)> {
    let mut rng = seed::rng(seed);
    let layout = ZoneLayout {
        oxide_fraction: rng.random_range(0.0..0.5),
        transition_fraction: rng.random_range(0.0..0.5),
        boundary_noise: 0.3,
    };
    let caps = PeriodCapacities::new(
        10_000.0 * rng.random_range(1..=3) as f64,
        10_000.0 * rng.random_range(1..=2) as f64,
        10_000.0,
    );
    let model = BlockModel::synthetic(dims, 15.0, 10_000.0, &layout, PrecedencePattern::Nine, caps, seed)?;
    let cu = LogNormal::new(0.25f64.ln(), 0.8).expect("valid lognormal");
    let au = LogNormal::new(0.3f64.ln(), 0.8).expect("valid lognormal");
    let members = (0..n_members.max(1))
        .map(|_| {
            GradeField::new(
                (0..model.len()).map(|_| cu.sample(&mut rng)).collect(),
                (0..model.len()).map(|_| au.sample(&mut rng)).collect(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((model, Belief::new(members, None)?))
}

/// Random tiny shape of at most eight blocks with 1 to `max_members`
/// members.
pub fn random_instance(seed: u64, max_members: usize) -> Result<(BlockModel, Belief)> {
    let mut rng = seed::child_rng(seed, &[seed::tag::ZONES]);
    let (nx, ny, nz) = TINY_DIMS[rng.random_range(0..TINY_DIMS.len())];
    let n_members = rng.random_range(1..=max_members.max(1));
    tiny_instance(GridDims::new(nx, ny, nz), n_members, seed)
}

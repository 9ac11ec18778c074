//! Closed-loop decision process: candidate screening, one-step lookahead
//! Q-estimation with an optimized continuation, execution, observation and
//! the committed belief update. Also hosts the one-shot baseline runner.

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::belief::{Belief, EsmdaConfig, SpreadStats};
use crate::block_model::{Action, BlockModel, Destination, OperationalState};
use crate::economics::{
    block_cash_flow, evaluate_schedule, expected_npv, expectation_reality_gap, EconParams,
    ValueTable,
};
use crate::error::{Error, Result};
use crate::geostat::{GradeField, Sample};
use crate::sa_scheduler::{anneal, sa_optimize, Problem, SaParams};
use crate::schedule::Schedule;
use crate::seed::{self, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScreenWeights {
    pub value: f64,
    pub uncertainty: f64,
    pub access: f64,
}

/// Fractions of the shortlist filled by top score, top uncertainty and
/// uniform sampling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Split {
    pub value: f64,
    pub uncertainty: f64,
    pub random: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CandidateConfig {
    pub k: usize,
    pub weights: ScreenWeights,
    pub split: Split,
}

impl Default for CandidateConfig {
    fn default() -> Self {
        CandidateConfig {
            k: 8,
            weights: ScreenWeights {
                value: 0.5,
                uncertainty: 0.3,
                access: 0.2,
            },
            split: Split {
                value: 0.5,
                uncertainty: 0.25,
                random: 0.25,
            },
        }
    }
}

impl CandidateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("candidate count k must be >= 1".into()));
        }
        let w = self.weights;
        if [w.value, w.uncertainty, w.access].iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Config("screen weights must be >= 0".into()));
        }
        let s = self.split;
        let parts = [s.value, s.uncertainty, s.random];
        if parts.iter().any(|v| !(0.0..=1.0).contains(v)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config("split fractions must lie in [0, 1] and sum to 1".into()));
        }
        Ok(())
    }
}

fn min_max_normalize(xs: &[f64]) -> Vec<f64> {
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    xs.iter()
        .map(|&x| if hi > lo { (x - lo) / (hi - lo) } else { 0.0 })
        .collect()
}

/// Screening inputs for one frontier block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockScreen {
    pub block: usize,
    /// Best belief-expected cash flow among destinations the state admits.
    pub best: Action,
    pub value: f64,
    /// Ensemble std of in-situ metal value per tonne.
    pub uncertainty: f64,
    /// Unmined successors.
    pub access: f64,
    pub score: f64,
}

/// Feasibility filter and heuristic scores for every frontier block.
pub fn screen_blocks(
    model: &BlockModel,
    belief: &Belief,
    state: &OperationalState,
    table: &ValueTable,
    e: &EconParams,
    w: &ScreenWeights,
) -> Vec<BlockScreen> {
    let mut out: Vec<BlockScreen> = Vec::new();
    for a in model.feasible_actions(state) {
        let v = table.value(a.block, a.destination);
        match out.last_mut() {
            Some(s) if s.block == a.block => {
                if v > s.value {
                    s.best = a;
                    s.value = v;
                }
            }
            _ => out.push(BlockScreen {
                block: a.block,
                best: a,
                value: v,
                uncertainty: 0.0,
                access: 0.0,
                score: 0.0,
            }),
        }
    }
    for s in &mut out {
        let per_tonne = belief
            .members()
            .iter()
            .map(|m| m.cu[s.block] / 100.0 * e.cu_price + m.au[s.block] * e.au_price);
        s.uncertainty = crate::belief::sample_std(per_tonne);
        s.access = model
            .graph()
            .successors(s.block)
            .iter()
            .filter(|&&q| !state.is_mined(q))
            .count() as f64;
    }
    let nv = min_max_normalize(&out.iter().map(|s| s.value).collect::<Vec<_>>());
    let nu = min_max_normalize(&out.iter().map(|s| s.uncertainty).collect::<Vec<_>>());
    let na = min_max_normalize(&out.iter().map(|s| s.access).collect::<Vec<_>>());
    for (i, s) in out.iter_mut().enumerate() {
        s.score = w.value * nv[i] + w.uncertainty * nu[i] + w.access * na[i];
    }
    out
}

/// Shortlist of actions to evaluate. Each selected block contributes its
/// best admissible destination and its zone's waste dump. Best-destination
/// actions rank ahead of waste alternatives, each group by block score.
pub fn candidate_actions<R: Rng + ?Sized>(
    model: &BlockModel,
    belief: &Belief,
    state: &OperationalState,
    e: &EconParams,
    cfg: &CandidateConfig,
    rng: &mut R,
) -> Result<Vec<Action>> {
    cfg.validate()?;
    let table = ValueTable::expected(model, belief, e);
    let screens = screen_blocks(model, belief, state, &table, e, &cfg.weights);
    if screens.is_empty() {
        return Ok(Vec::new());
    }
    let by_score = |a: &BlockScreen, b: &BlockScreen| {
        b.score.total_cmp(&a.score).then(a.block.cmp(&b.block))
    };
    let mut chosen: Vec<BlockScreen> = if screens.len() <= cfg.k {
        screens.clone()
    } else {
        let k = cfg.k;
        let n_value = ((k as f64 * cfg.split.value).round() as usize).min(k);
        let n_unc = ((k as f64 * cfg.split.uncertainty).round() as usize).min(k - n_value);
        let n_rand = k - n_value - n_unc;
        let mut rest = screens.clone();
        rest.sort_by(by_score);
        let mut chosen: Vec<BlockScreen> = rest.drain(..n_value).collect();
        rest.sort_by(|a, b| {
            b.uncertainty
                .total_cmp(&a.uncertainty)
                .then(a.block.cmp(&b.block))
        });
        chosen.extend(rest.drain(..n_unc.min(rest.len())));
        rest.sort_by_key(|s| s.block);
        let n_rand = n_rand.min(rest.len());
        let mut picks: Vec<usize> = sample(rng, rest.len(), n_rand).into_vec();
        picks.sort_unstable();
        chosen.extend(picks.into_iter().map(|i| rest[i]));
        chosen
    };
    chosen.sort_by(by_score);
    let mut actions: Vec<Action> = chosen.iter().map(|s| s.best).collect();
    for s in &chosen {
        let w = Action::new(s.block, Destination::waste_for(model.block(s.block).zone));
        if !actions.contains(&w) {
            actions.push(w);
        }
    }
    if screens.len() > cfg.k {
        actions.truncate(cfg.k);
    }
    Ok(actions)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QEstimate {
    pub action: Action,
    /// Belief-expected discounted cash flow of the action itself.
    pub immediate: f64,
    pub continuation: f64,
    pub q: f64,
    pub sampled_member: usize,
}

/// Solves the rest of the mine under a (hypothetical) belief.
pub trait ContinuationSolver: Sync {
    /// Returns the schedule and its belief-expected NPV in period-0 money.
    fn solve(
        &self,
        model: &BlockModel,
        belief: &Belief,
        state: &OperationalState,
        e: &EconParams,
        seed: u64,
        warm: Option<&Schedule>,
    ) -> Result<(Schedule, f64)>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaContinuation {
    pub params: SaParams,
}

impl ContinuationSolver for SaContinuation {
    fn solve(
        &self,
        model: &BlockModel,
        belief: &Belief,
        state: &OperationalState,
        e: &EconParams,
        seed: u64,
        warm: Option<&Schedule>,
    ) -> Result<(Schedule, f64)> {
        if state.n_remaining() == 0 {
            return Ok((Schedule::default(), 0.0));
        }
        let table = ValueTable::expected(model, belief, e);
        let problem = Problem::new(model, &table, e, state);
        let params = self.params.clone().with_seed(seed);
        let out = anneal(&problem, &params, warm, false)?;
        Ok((out.schedule, out.value))
    }
}

/// How the simulated observation behind the lookahead is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LookaheadMode {
    /// One uniformly sampled member per rollout.
    #[default]
    Sampled,
    /// Every member in turn, averaged.
    Exhaustive,
}

/// Inputs shared by every Q-estimate of one epoch.
pub struct QContext<'a, S: ContinuationSolver> {
    pub model: &'a BlockModel,
    pub econ: &'a EconParams,
    pub solver: &'a S,
    pub esmda: &'a EsmdaConfig,
    pub mode: LookaheadMode,
    pub n_rollouts: usize,
}

/// Belief-expected discounted cash flow of `action` from `state`.
pub fn immediate_reward(
    model: &BlockModel,
    belief: &Belief,
    state: &OperationalState,
    action: Action,
    e: &EconParams,
) -> Result<(f64, OperationalState)> {
    let (next, period) = model.transition(state, action)?;
    let tonnes = model.block(action.block).tonnes;
    let total: f64 = belief
        .members()
        .iter()
        .map(|m| block_cash_flow(m.cu[action.block], m.au[action.block], tonnes, action.destination, e))
        .sum();
    Ok((total / belief.n_members() as f64 * e.discount_factor(period), next))
}

/// Continuation under the posterior implied by member `member`'s grades at
/// the action block. The assimilation noise stream depends only on `seed`
/// and the member index.
pub fn member_continuation<S: ContinuationSolver>(
    ctx: &QContext<'_, S>,
    belief: &Belief,
    next: &OperationalState,
    action: Action,
    member: usize,
    seed: u64,
    warm: Option<&Schedule>,
) -> Result<(Schedule, f64)> {
    if next.n_remaining() == 0 {
        return Ok((Schedule::default(), 0.0));
    }
    let mut rng = seed::child_rng(seed, &[seed::tag::MEMBER, member as u64]);
    let post = belief.lookahead_for_member(ctx.model, action, member, ctx.esmda, &mut rng)?;
    let solve_seed = seed::derive(seed, &[seed::tag::CONTINUATION, member as u64]);
    ctx.solver.solve(ctx.model, &post, next, ctx.econ, solve_seed, warm)
}

/// Q-estimate plus the continuation schedule of its first rollout.
pub fn estimate_q_with_schedule<S: ContinuationSolver>(
    ctx: &QContext<'_, S>,
    belief: &Belief,
    state: &OperationalState,
    action: Action,
    seed: u64,
    warm: Option<&Schedule>,
) -> Result<(QEstimate, Schedule)> {
    let (immediate, next) = immediate_reward(ctx.model, belief, state, action, ctx.econ)?;
    let ne = belief.n_members();
    let mut first: Option<(usize, Schedule)> = None;
    let mut sum = 0.0;
    let runs: Vec<(usize, u64)> = match ctx.mode {
        LookaheadMode::Sampled => (0..ctx.n_rollouts.max(1))
            .map(|r| {
                let rseed = seed::derive(seed, &[seed::tag::LOOKAHEAD, r as u64]);
                let member = seed::rng(rseed).random_range(0..ne);
                (member, rseed)
            })
            .collect(),
        LookaheadMode::Exhaustive => (0..ne).map(|j| (j, seed)).collect(),
    };
    for &(member, rseed) in &runs {
        let (sched, v) = member_continuation(ctx, belief, &next, action, member, rseed, warm)?;
        sum += v;
        if first.is_none() {
            first = Some((member, sched));
        }
    }
    let continuation = sum / runs.len() as f64;
    let (sampled_member, sched) = first.expect("at least one rollout");
    Ok((
        QEstimate {
            action,
            immediate,
            continuation,
            q: immediate + continuation,
            sampled_member,
        },
        sched,
    ))
}

pub fn estimate_q<S: ContinuationSolver>(
    ctx: &QContext<'_, S>,
    belief: &Belief,
    state: &OperationalState,
    action: Action,
    seed: u64,
) -> Result<QEstimate> {
    estimate_q_with_schedule(ctx, belief, state, action, seed, None).map(|(q, _)| q)
}

fn preferred(a: &QEstimate, b: &QEstimate) -> bool {
    a.q > b.q || (a.q == b.q && (a.action.block, a.action.destination) < (b.action.block, b.action.destination))
}

/// Index of the highest-q estimate; ties go to the lower block id, then
/// destination order.
pub fn select_index(estimates: &[QEstimate]) -> Result<usize> {
    if estimates.is_empty() {
        return Err(Error::Empty("Q-estimate list"));
    }
    let mut best = 0;
    for i in 1..estimates.len() {
        if preferred(&estimates[i], &estimates[best]) {
            best = i;
        }
    }
    Ok(best)
}

pub fn select_action(estimates: &[QEstimate]) -> Result<Action> {
    select_index(estimates).map(|i| estimates[i].action)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PomdpConfig {
    pub candidates: CandidateConfig,
    pub sa: SaParams,
    pub esmda_committed: EsmdaConfig,
    pub esmda_lookahead: EsmdaConfig,
    pub lookahead: LookaheadMode,
    pub n_rollouts: usize,
    /// Stop after this many epochs; `None` mines out the pit.
    pub max_epochs: Option<usize>,
    /// Seed each candidate's first SA start with the incumbent plan.
    pub warm_start: bool,
    /// Budget for the life-of-mine plan solved on the prior before the
    /// first epoch. It becomes the first incumbent; `None` starts without
    /// one.
    pub initial_plan: Option<SaParams>,
    /// Add the incumbent plan's next action to the screened candidates, so
    /// the loop can always follow its own plan.
    pub include_incumbent: bool,
}

impl Default for PomdpConfig {
    fn default() -> Self {
        PomdpConfig {
            candidates: CandidateConfig::default(),
            sa: SaParams::oracle(),
            esmda_committed: EsmdaConfig::committed(),
            esmda_lookahead: EsmdaConfig::lookahead(),
            lookahead: LookaheadMode::Sampled,
            n_rollouts: 1,
            max_epochs: None,
            warm_start: true,
            initial_plan: Some(SaParams::baseline()),
            include_incumbent: true,
        }
    }
}

impl PomdpConfig {
    pub fn validate(&self) -> Result<()> {
        self.candidates.validate()?;
        self.sa.validate()?;
        self.esmda_committed.validate()?;
        self.esmda_lookahead.validate()?;
        if self.n_rollouts == 0 {
            return Err(Error::Config("n_rollouts must be >= 1".into()));
        }
        if let Some(p) = &self.initial_plan {
            p.validate()?;
        }
        Ok(())
    }
}

/// Ensemble-mean RMSE against `truth` over `blocks`, per metal.
pub fn mean_rmse(belief: &Belief, truth: &GradeField, blocks: &[usize]) -> [f64; 2] {
    if blocks.is_empty() {
        return [0.0, 0.0];
    }
    let w = 1.0 / belief.n_members() as f64;
    let mut se = [0.0, 0.0];
    for &b in blocks {
        let (mut cu, mut au) = (0.0, 0.0);
        for m in belief.members() {
            cu += m.cu[b];
            au += m.au[b];
        }
        se[0] += (cu * w - truth.cu[b]).powi(2);
        se[1] += (au * w - truth.au[b]).powi(2);
    }
    let n = blocks.len() as f64;
    [(se[0] / n).sqrt(), (se[1] / n).sqrt()]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub epoch: usize,
    pub action: Action,
    pub period: u32,
    pub obs_cu: f64,
    pub obs_au: f64,
    /// Belief-expected discounted cash flow at decision time.
    pub immediate: f64,
    pub q_selected: f64,
    pub n_candidates: usize,
    /// True cash flow of the step.
    pub realized_undiscounted: f64,
    pub realized_discounted: f64,
    /// Spread over unmined blocks after the committed update, Cu then Au.
    pub spread: Option<[SpreadStats; 2]>,
    /// Ensemble-mean RMSE at observed blocks before and after the update.
    pub rmse_before: [f64; 2],
    pub rmse_after: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<TrajectoryStep>,
    /// Sum of the belief-expected discounted rewards at commit time.
    pub expected_npv: f64,
    pub realized_npv: f64,
    /// Selected q at the first epoch: the plan's value before any data.
    pub initial_q: f64,
}

impl Trajectory {
    pub fn schedule(&self) -> Schedule {
        Schedule::new(self.steps.iter().map(|s| s.action).collect())
    }

    pub fn gap(&self) -> Result<f64> {
        expectation_reality_gap(self.expected_npv, self.realized_npv)
    }
}

#[derive(Debug, thiserror::Error)]
#[error("episode aborted at epoch {epoch}: {source}")]
pub struct EpisodeFailure {
    pub epoch: usize,
    pub partial: Trajectory,
    #[source]
    pub source: Error,
}

impl From<Box<EpisodeFailure>> for Error {
    fn from(f: Box<EpisodeFailure>) -> Error {
        Error::Episode {
            epoch: f.epoch,
            source: Box::new(f.source),
        }
    }
}

/// One closed-loop episode against the hidden `truth`, starting from
/// belief `b0` and the initial state. Heartbeats go to the `log` facade.
pub fn run_pomdp_episode(
    model: &BlockModel,
    truth: &GradeField,
    b0: &Belief,
    e: &EconParams,
    cfg: &PomdpConfig,
    seed: u64,
) -> std::result::Result<Trajectory, Box<EpisodeFailure>> {
    let mut traj = Trajectory {
        steps: Vec::new(),
        expected_npv: 0.0,
        realized_npv: 0.0,
        initial_q: 0.0,
    };
    let fail = |epoch: usize, traj: &Trajectory, source: Error| {
        Box::new(EpisodeFailure {
            epoch,
            partial: traj.clone(),
            source,
        })
    };
    if let Err(err) = cfg.validate().and_then(|_| e.validate()) {
        return Err(fail(0, &traj, err));
    }
    let solver = SaContinuation {
        params: cfg.sa.clone(),
    };
    let ctx = QContext {
        model,
        econ: e,
        solver: &solver,
        esmda: &cfg.esmda_lookahead,
        mode: cfg.lookahead,
        n_rollouts: cfg.n_rollouts,
    };
    let mut belief = b0.clone();
    let mut state = OperationalState::initial(model);
    let mut observed: Vec<usize> = Vec::new();
    // the plan the loop would follow next; refreshed every epoch from the
    // selected candidate's continuation
    let mut incumbent: Option<Schedule> = None;
    if let Some(p) = &cfg.initial_plan {
        let params = p.clone().with_seed(seed::derive(seed, &[seed::tag::PLAN]));
        match sa_optimize(model, b0, &state, e, &params) {
            Ok((plan, _)) => incumbent = Some(plan),
            Err(err) => return Err(fail(0, &traj, err)),
        }
    }
    let horizon = cfg.max_epochs.unwrap_or(usize::MAX);

    for epoch in 0..horizon {
        let epoch_seed = seed::derive(seed, &[seed::tag::EPOCH, epoch as u64]);
        let mut crng = seed::child_rng(epoch_seed, &[seed::tag::CANDIDATES]);
        let mut cands = match candidate_actions(model, &belief, &state, e, &cfg.candidates, &mut crng) {
            Ok(c) => c,
            Err(err) => return Err(fail(epoch, &traj, err)),
        };
        if cfg.include_incumbent {
            if let Some(&next) = incumbent.as_ref().and_then(|p| p.actions.first()) {
                if !cands.contains(&next) && model.feasible_actions(&state).contains(&next) {
                    cands.push(next);
                }
            }
        }
        if cands.is_empty() {
            break;
        }
        let evaluated: Result<Vec<(QEstimate, Schedule)>> = cands
            .par_iter()
            .enumerate()
            .map(|(i, &a)| {
                let cseed = seed::derive(epoch_seed, &[seed::tag::CANDIDATE, i as u64]);
                let w = if cfg.warm_start {
                    incumbent.as_ref().map(|s| s.without(a.block))
                } else {
                    None
                };
                estimate_q_with_schedule(&ctx, &belief, &state, a, cseed, w.as_ref())
            })
            .collect();
        let mut evaluated = match evaluated {
            Ok(v) => v,
            Err(err) => return Err(fail(epoch, &traj, err)),
        };
        let estimates: Vec<QEstimate> = evaluated.iter().map(|(q, _)| *q).collect();
        let pick = select_index(&estimates).expect("non-empty candidate list");
        let chosen = estimates[pick];
        incumbent = Some(std::mem::take(&mut evaluated[pick].1));

        let (next, period) = match model.transition(&state, chosen.action) {
            Ok(t) => t,
            Err(err) => return Err(fail(epoch, &traj, err)),
        };
        let b = chosen.action.block;
        let obs = Sample {
            block: b,
            cu: truth.cu[b],
            au: truth.au[b],
        };
        observed.push(b);
        let rmse_before = mean_rmse(&belief, truth, &observed);
        if belief.n_members() >= 2 {
            let mut rng: StreamRng = seed::child_rng(epoch_seed, &[seed::tag::COMMIT]);
            belief = match belief.assimilate(model, &[obs], &cfg.esmda_committed, &mut rng) {
                Ok(p) => p,
                Err(err) => return Err(fail(epoch, &traj, err)),
            };
        } else {
            belief = belief.with_observation(obs);
        }
        let rmse_after = mean_rmse(&belief, truth, &observed);
        let spread = belief.spread_stats(Some(next.mined_mask())).ok();

        let tonnes = model.block(b).tonnes;
        let realized = block_cash_flow(obs.cu, obs.au, tonnes, chosen.action.destination, e);
        let realized_discounted = realized * e.discount_factor(period);
        traj.expected_npv += chosen.immediate;
        traj.realized_npv += realized_discounted;
        if epoch == 0 {
            traj.initial_q = chosen.q;
        }
        traj.steps.push(TrajectoryStep {
            epoch,
            action: chosen.action,
            period,
            obs_cu: obs.cu,
            obs_au: obs.au,
            immediate: chosen.immediate,
            q_selected: chosen.q,
            n_candidates: cands.len(),
            realized_undiscounted: realized,
            realized_discounted,
            spread,
            rmse_before,
            rmse_after,
        });
        log::info!(
            "epoch {epoch} block {b} -> {} period {period} realized_dcf {:.0} mean_spread_cu {:.4}",
            chosen.action.destination,
            traj.realized_npv,
            spread.map_or(0.0, |s| s[0].mean_spread),
        );
        state = next;
    }
    Ok(traj)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OneShotResult {
    pub schedule: Schedule,
    pub expected_npv: f64,
    pub expected_std: f64,
    pub realized_npv: f64,
}

impl OneShotResult {
    pub fn gap(&self) -> Result<f64> {
        expectation_reality_gap(self.expected_npv, self.realized_npv)
    }
}

/// Life-of-mine schedule optimized once on `b0` and executed unchanged
/// under `truth`.
pub fn run_oneshot(
    model: &BlockModel,
    b0: &Belief,
    truth: &GradeField,
    e: &EconParams,
    params: &SaParams,
) -> Result<OneShotResult> {
    e.validate()?;
    let start = OperationalState::initial(model);
    let table = ValueTable::expected(model, b0, e);
    let problem = Problem::new(model, &table, e, &start);
    let out = anneal(&problem, params, None, false)?;
    let (expected_npv, expected_std) = expected_npv(model, &out.schedule, b0, e, &start)?;
    let realized_npv = evaluate_schedule(model, &out.schedule, truth, e, &start)?;
    Ok(OneShotResult {
        schedule: out.schedule,
        expected_npv,
        expected_std,
        realized_npv,
    })
}

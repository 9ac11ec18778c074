//! Randomized deposits and feasibility checks shared by the property
//! suite and the acceptance target.

use std::collections::HashMap;

use mineplan_core::belief::{AssimilationSpace, Belief, EsmdaConfig};
use mineplan_core::block_model::{
    Block, BlockModel, Destination, GridDims, OperationalState, PeriodCapacities,
    PrecedencePattern, Zone, N_DESTINATIONS,
};
use mineplan_core::economics::{block_cash_flow, evaluate_schedule, EconParams};
use mineplan_core::geostat::GradeField;
use mineplan_core::pomdp_engine::{run_oneshot, run_pomdp_episode, PomdpConfig, Trajectory};
use mineplan_core::sa_scheduler::{greedy_construct, sa_optimize, SaParams};
use mineplan_core::schedule::Schedule;
use proptest::prelude::*;

#[derive(Debug, Clone)]
pub struct Deposit {
    pub model: BlockModel,
    pub members: Vec<GradeField>,
    pub truth: GradeField,
}

#[derive(Debug, Clone)]
struct BlockDraw {
    tonnes: f64,
    zone: usize,
}

fn zone_of(i: usize) -> Zone {
    [Zone::Oxide, Zone::Transition, Zone::Sulfide][i]
}

fn field(n: usize) -> impl Strategy<Value = GradeField> {
    (
        prop::collection::vec(0.0f64..2.0, n),
        prop::collection::vec(0.0f64..3.0, n),
    )
        .prop_map(|(cu, au)| GradeField::new(cu, au).unwrap())
}

pub fn deposit(max_xy: usize, max_z: usize, max_members: usize) -> impl Strategy<Value = Deposit> {
    (1..=max_xy, 1..=max_xy, 1..=max_z, any::<bool>())
        .prop_flat_map(move |(nx, ny, nz, five)| {
            let n = nx * ny * nz;
            let blocks = prop::collection::vec(
                (5_000.0f64..15_000.0, 0usize..3).prop_map(|(tonnes, zone)| BlockDraw { tonnes, zone }),
                n,
            );
            let caps = (15_000.0f64..60_000.0, 0.0f64..40_000.0, 0.0f64..40_000.0);
            let members = prop::collection::vec(field(n), 1..=max_members);
            (Just((nx, ny, nz, five)), blocks, caps, members, field(n))
        })
        .prop_map(|((nx, ny, nz, five), draws, (mining, mill, leach), members, truth)| {
            let dims = GridDims::new(nx, ny, nz);
            let blocks = draws
                .iter()
                .enumerate()
                .map(|(id, d)| {
                    let (ix, iy, iz) = dims.position(id);
                    Block {
                        id,
                        ix,
                        iy,
                        iz,
                        x: ix as f64 * 15.0,
                        y: iy as f64 * 15.0,
                        z: -(iz as f64) * 15.0,
                        tonnes: d.tonnes,
                        zone: zone_of(d.zone),
                    }
                })
                .collect();
            let pattern = if five {
                PrecedencePattern::Five
            } else {
                PrecedencePattern::Nine
            };
            let caps = PeriodCapacities::new(mining, mill, leach);
            Deposit {
                model: BlockModel::new(dims, blocks, pattern, caps).unwrap(),
                members,
                truth,
            }
        })
}

/// Checks precedence closure, zone compatibility, per-period capacities and
/// tonnage conservation of a complete schedule with the given periods.
fn check_feasible(model: &BlockModel, schedule: &Schedule, periods: &[u32]) -> Result<(), TestCaseError> {
    prop_assert_eq!(schedule.len(), model.len());
    prop_assert_eq!(periods.len(), schedule.len());
    let mut position = vec![usize::MAX; model.len()];
    for (i, a) in schedule.actions.iter().enumerate() {
        prop_assert_eq!(position[a.block], usize::MAX, "block {} extracted twice", a.block);
        position[a.block] = i;
    }
    for (i, a) in schedule.actions.iter().enumerate() {
        let block = model.block(a.block);
        prop_assert!(a.destination.accepts(block.zone));
        for &p in model.graph().predecessors(a.block) {
            prop_assert!(position[p] < i, "block {} before predecessor {}", a.block, p);
        }
    }
    for w in periods.windows(2) {
        prop_assert!(w[0] <= w[1]);
    }

    let caps = model.capacities();
    let mut mined: HashMap<u32, f64> = HashMap::new();
    let mut by_dest: HashMap<(u32, usize), f64> = HashMap::new();
    for (a, &t) in schedule.actions.iter().zip(periods) {
        let tonnes = model.block(a.block).tonnes;
        *mined.entry(t).or_default() += tonnes;
        *by_dest.entry((t, a.destination.index())).or_default() += tonnes;
    }
    for (&t, &total) in &mined {
        prop_assert!(total <= caps.mining + 1e-6, "period {t} mines {total}");
    }
    for (&(t, d), &total) in &by_dest {
        let limit = caps.limit(Destination::from_index(d));
        prop_assert!(total <= limit + 1e-6, "period {t} sends {total} to {d}");
    }

    let mut sent = [0.0; N_DESTINATIONS];
    for (&(_, d), &total) in &by_dest {
        sent[d] += total;
    }
    let mut assigned = [0.0; N_DESTINATIONS];
    for a in &schedule.actions {
        assigned[a.destination.index()] += model.block(a.block).tonnes;
    }
    for d in 0..N_DESTINATIONS {
        prop_assert!((sent[d] - assigned[d]).abs() <= 1e-6 * model.total_tonnes());
    }
    let total: f64 = sent.iter().sum();
    prop_assert!((total - model.total_tonnes()).abs() <= 1e-6 * model.total_tonnes());
    Ok(())
}

/// NPV from independently discounted per-block cash flows.
fn additive_npv(model: &BlockModel, schedule: &Schedule, periods: &[u32], f: &GradeField, e: &EconParams) -> f64 {
    schedule
        .actions
        .iter()
        .zip(periods)
        .map(|(a, &t)| {
            let b = a.block;
            block_cash_flow(f.cu[b], f.au[b], model.block(b).tonnes, a.destination, e)
                / (1.0 + e.discount_rate).powi(t as i32)
        })
        .sum()
}

pub fn check_schedule(d: &Deposit, schedule: &Schedule, e: &EconParams) -> Result<(), TestCaseError> {
    let start = OperationalState::initial(&d.model);
    let (steps, end) = schedule.replay(&d.model, &start).map_err(|err| TestCaseError::fail(err.to_string()))?;
    prop_assert_eq!(end.n_remaining(), 0);
    let periods: Vec<u32> = steps.iter().map(|s| s.period).collect();
    check_feasible(&d.model, schedule, &periods)?;
    for f in d.members.iter().chain(std::iter::once(&d.truth)) {
        let npv = evaluate_schedule(&d.model, schedule, f, e, &start).unwrap();
        let sum = additive_npv(&d.model, schedule, &periods, f, e);
        prop_assert!((npv - sum).abs() <= 1e-9 * (1.0 + sum.abs()), "{npv} vs {sum}");
    }
    Ok(())
}

pub fn check_trajectory(d: &Deposit, traj: &Trajectory, e: &EconParams) -> Result<(), TestCaseError> {
    let schedule = traj.schedule();
    let periods: Vec<u32> = traj.steps.iter().map(|s| s.period).collect();
    check_feasible(&d.model, &schedule, &periods)?;
    check_schedule(d, &schedule, e)?;
    let mut realized = 0.0;
    let mut expected = 0.0;
    for (i, s) in traj.steps.iter().enumerate() {
        let b = s.action.block;
        prop_assert_eq!(s.epoch, i);
        prop_assert_eq!(s.obs_cu, d.truth.cu[b]);
        prop_assert_eq!(s.obs_au, d.truth.au[b]);
        let cf = block_cash_flow(d.truth.cu[b], d.truth.au[b], d.model.block(b).tonnes, s.action.destination, e);
        prop_assert!((s.realized_undiscounted - cf).abs() <= 1e-9 * (1.0 + cf.abs()));
        realized += s.realized_discounted;
        expected += s.immediate;
    }
    let start = OperationalState::initial(&d.model);
    let truth_npv = evaluate_schedule(&d.model, &schedule, &d.truth, e, &start).unwrap();
    prop_assert!((traj.realized_npv - realized).abs() <= 1e-9 * (1.0 + realized.abs()));
    prop_assert!((traj.realized_npv - truth_npv).abs() <= 1e-9 * (1.0 + truth_npv.abs()));
    prop_assert!((traj.expected_npv - expected).abs() <= 1e-9 * (1.0 + expected.abs()));
    Ok(())
}

fn small_sa(seed: u64) -> SaParams {
    SaParams {
        iterations: 400,
        n_starts: 1,
        ..SaParams::oracle()
    }
    .with_seed(seed)
}

fn raw(inflation: Vec<f64>) -> EsmdaConfig {
    EsmdaConfig {
        inflation,
        space: AssimilationSpace::Raw,
        ..EsmdaConfig::committed()
    }
}

/// Greedy, annealed and one-shot schedules on `d` are feasible and
/// additive.
pub fn schedules_case(d: &Deposit, seed: u64) -> Result<(), TestCaseError> {
    let e = EconParams::default();
    let belief = Belief::new(d.members.clone(), None).unwrap();
    let start = OperationalState::initial(&d.model);
    check_schedule(d, &greedy_construct(&d.model, &belief, &start, &e, None), &e)?;
    check_schedule(d, &greedy_construct(&d.model, &belief, &start, &e, Some(seed)), &e)?;
    let (sa, value) = sa_optimize(&d.model, &belief, &start, &e, &small_sa(seed)).unwrap();
    check_schedule(d, &sa, &e)?;
    let mean = belief.mean_field();
    let npv = evaluate_schedule(&d.model, &sa, &mean, &e, &start).unwrap();
    prop_assert!((npv - value).abs() <= 1e-6 * (1.0 + npv.abs()));
    let one = run_oneshot(&d.model, &belief, &d.truth, &e, &small_sa(seed)).unwrap();
    check_schedule(d, &one.schedule, &e)
}

/// A closed-loop episode on `d` is feasible, observes the truth and sums
/// its rewards.
pub fn trajectory_case(d: &Deposit, seed: u64) -> Result<(), TestCaseError> {
    let e = EconParams::default();
    let belief = Belief::new(d.members.clone(), None).unwrap();
    let cfg = PomdpConfig {
        sa: small_sa(0),
        initial_plan: Some(small_sa(1)),
        esmda_committed: raw(vec![4.0; 4]),
        esmda_lookahead: raw(vec![1.0]),
        ..PomdpConfig::default()
    };
    let traj = run_pomdp_episode(&d.model, &d.truth, &belief, &e, &cfg, seed)
        .map_err(|f| TestCaseError::fail(f.to_string()))?;
    check_trajectory(d, &traj, &e)
}

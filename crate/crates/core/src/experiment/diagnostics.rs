//! Plot-ready series for executed schedules and closed-loop trajectories.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::block_model::{BlockModel, Destination, OperationalState};
use crate::economics::{cash_flows, CashFlow, EconParams};
use crate::error::Result;
use crate::geostat::{GradeField, Metal};
use crate::io::write_rows;
use crate::pomdp_engine::Trajectory;
use crate::schedule::Schedule;

use super::Method;

/// Linear-interpolation percentile (`q` in 0..=100) of unsorted values.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 100.0) / 100.0 * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CumDcfRow {
    pub period: u32,
    pub p10: f64,
    pub p50: f64,
    pub p90: f64,
    pub realized: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowRow {
    pub period: u32,
    pub destination: Destination,
    pub tonnes: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradeRow {
    pub period: u32,
    pub destination: Destination,
    pub metal: Metal,
    pub p10: f64,
    pub p50: f64,
    pub p90: f64,
    pub realized_mean: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SequenceRow {
    pub block_id: usize,
    pub epoch: usize,
    pub period: u32,
    pub destination: Destination,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpreadRow {
    pub step: usize,
    pub metal: Metal,
    pub mean_spread: f64,
    pub spatial_std: f64,
    pub cv_spread: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub epoch: usize,
    pub period: u32,
    pub block_id: usize,
    pub destination: Destination,
    pub obs_cu: f64,
    pub obs_au: f64,
    pub immediate: f64,
    pub q_selected: f64,
    pub n_candidates: usize,
    pub realized_undiscounted: f64,
    pub realized_discounted: f64,
    pub rmse_before_cu: f64,
    pub rmse_after_cu: f64,
    pub rmse_before_au: f64,
    pub rmse_after_au: f64,
}

/// Series describing one executed schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleDiagnostics {
    pub cumdcf: Vec<CumDcfRow>,
    pub flows: Vec<FlowRow>,
    pub grades: Vec<GradeRow>,
    pub sequence: Vec<SequenceRow>,
    /// True cash flow of every step.
    pub ledger: Vec<CashFlow>,
}

/// Replays `schedule` from the initial state. Envelopes are percentiles
/// across `members`; realized columns use `truth`.
pub fn schedule_diagnostics(
    model: &BlockModel,
    schedule: &Schedule,
    members: &[GradeField],
    truth: &GradeField,
    e: &EconParams,
) -> Result<ScheduleDiagnostics> {
    let (steps, _) = schedule.replay(model, &OperationalState::initial(model))?;
    let n_periods = steps.last().map_or(0, |x| x.period as usize + 1);

    let per_period = |field: &GradeField| -> Vec<f64> {
        let mut acc = vec![0.0; n_periods];
        for c in cash_flows(model, &steps, field, e) {
            acc[c.period as usize] += c.discounted;
        }
        let mut run = 0.0;
        for v in &mut acc {
            run += *v;
            *v = run;
        }
        acc
    };
    let member_cum: Vec<Vec<f64>> = members.iter().map(per_period).collect();
    let truth_cum = per_period(truth);
    let cumdcf = (0..n_periods)
        .map(|p| {
            let col: Vec<f64> = member_cum.iter().map(|m| m[p]).collect();
            CumDcfRow {
                period: p as u32,
                p10: percentile(&col, 10.0),
                p50: percentile(&col, 50.0),
                p90: percentile(&col, 90.0),
                realized: truth_cum[p],
            }
        })
        .collect();

    // blocks[period][dest]
    let mut groups: Vec<Vec<Vec<usize>>> = vec![vec![Vec::new(); Destination::ALL.len()]; n_periods];
    for x in &steps {
        groups[x.period as usize][x.action.destination.index()].push(x.action.block);
    }
    let mut flows = Vec::new();
    let mut grades = Vec::new();
    for (p, by_dest) in groups.iter().enumerate() {
        for (&dest, blocks) in Destination::ALL.iter().zip(by_dest) {
            let tonnes: f64 = blocks.iter().map(|&b| model.block(b).tonnes).sum();
            flows.push(FlowRow {
                period: p as u32,
                destination: dest,
                tonnes,
            });
            if blocks.is_empty() {
                continue;
            }
            for metal in [Metal::Cu, Metal::Au] {
                let mean_grade = |f: &GradeField| {
                    let g = f.metal(metal);
                    blocks.iter().map(|&b| g[b] * model.block(b).tonnes).sum::<f64>() / tonnes
                };
                let col: Vec<f64> = members.iter().map(mean_grade).collect();
                grades.push(GradeRow {
                    period: p as u32,
                    destination: dest,
                    metal,
                    p10: percentile(&col, 10.0),
                    p50: percentile(&col, 50.0),
                    p90: percentile(&col, 90.0),
                    realized_mean: mean_grade(truth),
                });
            }
        }
    }
    let sequence = steps
        .iter()
        .map(|x| SequenceRow {
            block_id: x.action.block,
            epoch: x.step,
            period: x.period,
            destination: x.action.destination,
        })
        .collect();
    Ok(ScheduleDiagnostics {
        cumdcf,
        flows,
        grades,
        sequence,
        ledger: cash_flows(model, &steps, truth, e),
    })
}

pub fn spread_rows(traj: &Trajectory) -> Vec<SpreadRow> {
    let mut out = Vec::new();
    for s in &traj.steps {
        if let Some(stats) = s.spread {
            for (metal, st) in [Metal::Cu, Metal::Au].into_iter().zip(stats) {
                out.push(SpreadRow {
                    step: s.epoch,
                    metal,
                    mean_spread: st.mean_spread,
                    spatial_std: st.spatial_std,
                    cv_spread: st.cv_spread,
                });
            }
        }
    }
    out
}

pub fn trajectory_rows(traj: &Trajectory) -> Vec<TrajectoryRow> {
    traj.steps
        .iter()
        .map(|s| TrajectoryRow {
            epoch: s.epoch,
            period: s.period,
            block_id: s.action.block,
            destination: s.action.destination,
            obs_cu: s.obs_cu,
            obs_au: s.obs_au,
            immediate: s.immediate,
            q_selected: s.q_selected,
            n_candidates: s.n_candidates,
            realized_undiscounted: s.realized_undiscounted,
            realized_discounted: s.realized_discounted,
            rmse_before_cu: s.rmse_before[0],
            rmse_after_cu: s.rmse_after[0],
            rmse_before_au: s.rmse_before[1],
            rmse_after_au: s.rmse_after[1],
        })
        .collect()
}

/// First index from which every full `window`-long slice has a range
/// below `rel_tol` times its mean.
pub fn stable_from(series: &[f64], window: usize, rel_tol: f64) -> Option<usize> {
    if window == 0 || series.len() < window {
        return None;
    }
    let ok = |w: &[f64]| {
        let lo = w.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        hi - lo < rel_tol * mean.abs()
    };
    let flags: Vec<bool> = series.windows(window).map(ok).collect();
    let mut start = None;
    for (i, &f) in flags.iter().enumerate().rev() {
        if !f {
            break;
        }
        start = Some(i);
    }
    start
}

pub fn write_schedule_diagnostics(dir: &Path, method: Method, d: &ScheduleDiagnostics) -> Result<()> {
    let m = method.as_str();
    write_rows(&dir.join(format!("cumdcf_{m}.csv")), &d.cumdcf)?;
    write_rows(&dir.join(format!("flows_{m}.csv")), &d.flows)?;
    write_rows(&dir.join(format!("grades_{m}.csv")), &d.grades)?;
    write_rows(&dir.join(format!("sequence_{m}.csv")), &d.sequence)?;
    write_rows(&dir.join(format!("ledger_{m}.csv")), &d.ledger)
}

/// `trajectory.csv` and `spread.csv`.
pub fn write_trajectory(dir: &Path, traj: &Trajectory) -> Result<()> {
    write_rows(&dir.join("trajectory.csv"), &trajectory_rows(traj))?;
    write_rows(&dir.join("spread.csv"), &spread_rows(traj))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::block_model::{GridDims, PeriodCapacities, PrecedencePattern, ZoneLayout};

    #[test]
    fn percentile_matches_linear_interpolation() {
        let v = [4.0, 1.0, 3.0, 2.0, 5.0];
        assert_eq!(percentile(&v, 50.0), 3.0);
        assert!((percentile(&v, 10.0) - 1.4).abs() < 1e-12);
        assert!((percentile(&v, 90.0) - 4.6).abs() < 1e-12);
        assert_eq!(percentile(&[7.0], 10.0), 7.0);
    }

    #[test]
    fn stability_window() {
        let s = [1.0, 3.0, 1.0, 1.0, 1.05, 1.0, 1.02];
        assert_eq!(stable_from(&s, 3, 0.2), Some(2));
        assert_eq!(stable_from(&[1.0, 2.0], 3, 0.2), None);
        assert_eq!(stable_from(&[1.0, 2.0, 1.0], 2, 0.2), None);
    }

    #[test]
    fn final_cumdcf_and_flows_are_consistent() {
        let model = BlockModel::synthetic(
            GridDims::new(3, 3, 2),
            15.0,
            10_000.0,
            &ZoneLayout::default(),
            PrecedencePattern::Nine,
            PeriodCapacities::new(40_000.0, 20_000.0, 20_000.0),
            3,
        )
        .unwrap();
        let n = model.len();
        let field = |k: f64| {
            GradeField::new(
                (0..n).map(|i| 0.1 + k * (i % 5) as f64 * 0.1).collect(),
                (0..n).map(|i| 0.2 + k * (i % 3) as f64 * 0.1).collect(),
            )
            .unwrap()
        };
        let members = vec![field(0.5), field(1.0), field(1.5)];
        let truth = field(1.2);
        let e = EconParams::default();
        let mut state = OperationalState::initial(&model);
        let mut actions = Vec::new();
        while let Some(&a) = model
            .feasible_actions(&state)
            .iter()
            .find(|a| model.check_action(&state, **a).is_ok())
        {
            actions.push(a);
            state = model.transition(&state, a).unwrap().0;
        }
        let sched = Schedule::new(actions);
        let d = schedule_diagnostics(&model, &sched, &members, &truth, &e).unwrap();
        let realized = crate::economics::evaluate_schedule(
            &model,
            &sched,
            &truth,
            &e,
            &OperationalState::initial(&model),
        )
        .unwrap();
        assert!((d.cumdcf.last().unwrap().realized - realized).abs() < 1e-6);
        for p in 0..d.cumdcf.len() as u32 {
            let flow: f64 = d.flows.iter().filter(|f| f.period == p).map(|f| f.tonnes).sum();
            let mined: f64 = d
                .ledger
                .iter()
                .filter(|c| c.period == p)
                .map(|c| model.block(c.block_id).tonnes)
                .sum();
            assert_eq!(flow, mined);
        }
        assert_eq!(d.sequence.len(), n);
    }
}

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use mineplan_core::economics::expectation_reality_gap;
use mineplan_core::experiment::diagnostics::{
    schedule_diagnostics, write_schedule_diagnostics, write_trajectory,
};
use mineplan_core::experiment::oracle::{brute_force_oracle, tiny_instance, ExactContinuation, OracleMode};
use mineplan_core::experiment::{
    base_case, cell_inputs, genesis, misspec_sweep, read_deposit, write_deposit, CellRun, Deposit,
    Method, RunConfig,
};
use mineplan_core::io::write_json;
use mineplan_core::pomdp_engine::{
    estimate_q, run_oneshot, run_pomdp_episode, LookaheadMode, QContext,
};
use mineplan_core::sa_scheduler::sa_optimize;
use mineplan_core::belief::{AssimilationSpace, EsmdaConfig};
use mineplan_core::block_model::OperationalState;
use mineplan_core::seed;

#[derive(Parser)]
#[command(name = "mineplan", version, about = "Closed-loop mine scheduling under grade uncertainty")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides `out_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed; overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; overrides `threads` in the config.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the block model, drillholes and realization ensemble.
    Genesis {
        #[command(flatten)]
        common: Common,
    },
    /// Run one method on a deposit written by `genesis` into --out.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        mode: Mode,
    },
    /// Paired runs over replicates (and alphas, if any differ from 1).
    Experiment {
        #[command(flatten)]
        common: Common,
        /// Comma-separated truth scaling factors for the sweep.
        #[arg(long, value_delimiter = ',')]
        alphas: Option<Vec<f64>>,
    },
    /// Exhaustive oracle versus annealing on a tiny instance.
    Oracle {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Oneshot,
    Pomdp,
}

impl Mode {
    fn method(self) -> Method {
        match self {
            Mode::Oneshot => Method::Oneshot,
            Mode::Pomdp => Method::Pomdp,
        }
    }
}

fn load_config(common: &Common) -> anyhow::Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            RunConfig::from_json(&text).with_context(|| format!("invalid config {}", p.display()))?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if common.threads.is_some() {
        cfg.threads = common.threads;
    }
    if common.out.is_some() {
        cfg.out_dir = common.out.clone();
    }
    cfg.validate().context("invalid config")?;
    Ok(cfg)
}

fn out_dir(cfg: &RunConfig) -> anyhow::Result<PathBuf> {
    let Some(dir) = cfg.out_dir.clone() else {
        bail!("no output directory: pass --out or set out_dir");
    };
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn init_runtime(cfg: &RunConfig) -> anyhow::Result<()> {
    env_logger::Builder::new()
        .parse_filters(&cfg.log_level)
        .format_timestamp(None)
        .try_init()
        .ok();
    if let Some(n) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("building the worker pool")?;
    }
    Ok(())
}

fn print_json<T: Serialize>(value: &T) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

#[derive(Serialize)]
struct GenesisSummary<'a> {
    out: &'a Path,
    n_blocks: usize,
    n_realizations: usize,
    n_belief_members: usize,
    truth_index: usize,
    master_seed: u64,
}

fn cmd_genesis(cfg: &RunConfig) -> anyhow::Result<()> {
    let dir = out_dir(cfg)?;
    let ex = &cfg.experiment;
    let deposit = genesis(&ex.deposit, ex.n_realizations, cfg.seed)?;
    let side = write_deposit(&dir, &ex.deposit, &deposit)?;
    write_json(&dir.join("config.json"), cfg)?;
    print_json(&GenesisSummary {
        out: &dir,
        n_blocks: side.n_blocks,
        n_realizations: side.n_realizations,
        n_belief_members: side.n_belief_members,
        truth_index: side.truth_index,
        master_seed: side.master_seed,
    })
}

#[derive(Serialize)]
struct RunSummary<'a> {
    mode: &'static str,
    expected: f64,
    realized: f64,
    gap: f64,
    master_seed: u64,
    method_seed: u64,
    n_steps: usize,
    /// Set when the episode stopped early; the partial trajectory is on disk.
    failed_at_epoch: Option<usize>,
    config: &'a RunConfig,
}

fn cmd_run(cfg: &RunConfig, mode: Mode) -> anyhow::Result<()> {
    let dir = out_dir(cfg)?;
    let ex = &cfg.experiment;
    let deposit = read_deposit(&dir, &ex.deposit)
        .with_context(|| format!("reading genesis outputs from {}", dir.display()))?;
    let inputs = cell_inputs(&deposit, 1.0, false, false)?;
    let method = mode.method();
    let t0 = Instant::now();
    let (schedule, expected, realized, method_seed, members, failure) = match mode {
        Mode::Oneshot => {
            let s = seed::derive(deposit.seed, &[seed::tag::ONESHOT]);
            let r = run_oneshot(
                &deposit.model,
                &inputs.oneshot_prior,
                &inputs.truth,
                &ex.econ,
                &ex.sa_baseline.clone().with_seed(s),
            )?;
            (r.schedule, r.expected_npv, r.realized_npv, s, &inputs.oneshot_prior, None)
        }
        Mode::Pomdp => {
            let s = seed::derive(deposit.seed, &[seed::tag::POMDP]);
            let (traj, failure) = match run_pomdp_episode(
                &deposit.model,
                &inputs.truth,
                &inputs.pomdp_prior,
                &ex.econ,
                &ex.pomdp,
                s,
            ) {
                Ok(t) => (t, None),
                Err(f) => {
                    let f = *f;
                    (f.partial, Some((f.epoch, f.source)))
                }
            };
            write_trajectory(&dir, &traj)?;
            (traj.schedule(), traj.expected_npv, traj.realized_npv, s, &inputs.pomdp_prior, failure)
        }
    };
    let elapsed = t0.elapsed().as_secs_f64();
    let m = method.as_str();
    let summary = RunSummary {
        mode: m,
        expected,
        realized,
        gap: if failure.is_some() {
            f64::NAN
        } else {
            expectation_reality_gap(expected, realized)?
        },
        master_seed: deposit.seed,
        method_seed,
        n_steps: schedule.len(),
        failed_at_epoch: failure.as_ref().map(|(e, _)| *e),
        config: cfg,
    };
    write_json(&dir.join(format!("summary_{m}.json")), &summary)?;
    write_json(&dir.join(format!("timings_{m}.json")), &serde_json::json!({ "seconds": elapsed }))?;
    if let Some((epoch, source)) = failure {
        return Err(anyhow::Error::new(source).context(format!(
            "episode aborted at epoch {epoch}; partial trajectory written to {}",
            dir.join("trajectory.csv").display()
        )));
    }
    let d = schedule_diagnostics(&deposit.model, &schedule, members.members(), &inputs.truth, &ex.econ)?;
    write_schedule_diagnostics(&dir, method, &d)?;
    print_json(&summary)
}

fn write_cell(root: &Path, deposit: &Deposit, run: &CellRun, cfg: &RunConfig) -> mineplan_core::error::Result<()> {
    let dir = root
        .join("cells")
        .join(format!("alpha_{}_rep_{}", run.alpha, run.replicate));
    std::fs::create_dir_all(&dir)?;
    let ex = &cfg.experiment;
    let include = run.alpha != 1.0 || ex.alphas.iter().any(|&a| a != 1.0);
    let inputs = cell_inputs(deposit, run.alpha, include, ex.truth_in_oneshot_only)?;
    let one = schedule_diagnostics(
        &deposit.model,
        &run.oneshot.schedule,
        inputs.oneshot_prior.members(),
        &inputs.truth,
        &ex.econ,
    )?;
    write_schedule_diagnostics(&dir, Method::Oneshot, &one)?;
    let pom = schedule_diagnostics(
        &deposit.model,
        &run.trajectory.schedule(),
        inputs.pomdp_prior.members(),
        &inputs.truth,
        &ex.econ,
    )?;
    write_schedule_diagnostics(&dir, Method::Pomdp, &pom)?;
    write_trajectory(&dir, &run.trajectory)
}

fn cmd_experiment(mut cfg: RunConfig, alphas: Option<Vec<f64>>) -> anyhow::Result<()> {
    if let Some(a) = alphas {
        cfg.experiment.alphas = a;
        cfg.validate().context("invalid --alphas")?;
    }
    let dir = out_dir(&cfg)?;
    let sweep = cfg.experiment.alphas.iter().any(|&a| a != 1.0);
    let sink = |d: &Deposit, r: &CellRun| write_cell(&dir, d, r, &cfg);
    let t0 = Instant::now();
    let report = if sweep {
        misspec_sweep(&cfg.experiment, cfg.seed, Some(&sink))?
    } else {
        base_case(&cfg.experiment, cfg.seed, Some(&sink))?
    };
    write_json(&dir.join("report.json"), &report)?;
    let summary = report.summary_json()?;
    write_json(&dir.join("summary.json"), &summary)?;
    write_json(
        &dir.join("timings.json"),
        &serde_json::json!({ "total_s": t0.elapsed().as_secs_f64(), "cells": report.timings }),
    )?;
    print_json(&serde_json::json!({
        "kind": if sweep { "misspec_sweep" } else { "base_case" },
        "by_alpha": report.by_alpha,
    }))
}

#[derive(Serialize)]
struct OracleReport {
    n_blocks: usize,
    n_members: usize,
    oracle_value: f64,
    sa_value: f64,
    ratio: f64,
    /// SA within 5% of the optimum, measured against |optimum|.
    within_bound: bool,
    lookahead_oracle_value: f64,
    /// Largest |q - oracle| over first actions, exhaustive lookahead with
    /// the exact continuation.
    lookahead_max_abs_diff: f64,
}

fn cmd_oracle(cfg: &RunConfig) -> anyhow::Result<()> {
    let ex = &cfg.experiment;
    let (model, belief) = tiny_instance(cfg.oracle.dims, cfg.oracle.n_members, cfg.seed)?;
    // tiny instances carry no normal-score transform
    let esmda = &EsmdaConfig {
        space: AssimilationSpace::Raw,
        ..ex.pomdp.esmda_lookahead.clone()
    };
    let open = brute_force_oracle(&model, &belief, &ex.econ, OracleMode::OpenLoop, esmda, cfg.seed)?;
    let start = OperationalState::initial(&model);
    let sa = ex.pomdp.sa.clone().with_seed(cfg.seed);
    let (_, sa_value) = sa_optimize(&model, &belief, &start, &ex.econ, &sa)?;
    let look = brute_force_oracle(&model, &belief, &ex.econ, OracleMode::OneStepLookahead, esmda, cfg.seed)?;
    let ctx = QContext {
        model: &model,
        econ: &ex.econ,
        solver: &ExactContinuation,
        esmda,
        mode: LookaheadMode::Exhaustive,
        n_rollouts: 1,
    };
    let mut max_diff: f64 = 0.0;
    for &(a, v) in &look.action_values {
        let q = estimate_q(&ctx, &belief, &start, a, cfg.seed)?;
        max_diff = max_diff.max((q.q - v).abs());
    }
    let opt = open.value;
    let report = OracleReport {
        n_blocks: model.len(),
        n_members: belief.n_members(),
        oracle_value: opt,
        sa_value,
        ratio: sa_value / opt,
        within_bound: sa_value >= opt - 0.05 * opt.abs(),
        lookahead_oracle_value: look.value,
        lookahead_max_abs_diff: max_diff,
    };
    if let Some(dir) = &cfg.out_dir {
        std::fs::create_dir_all(dir)?;
        write_json(&dir.join("oracle.json"), &report)?;
    }
    print_json(&report)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Genesis { common } => {
            let cfg = load_config(&common)?;
            init_runtime(&cfg)?;
            cmd_genesis(&cfg)
        }
        Command::Run { common, mode } => {
            let cfg = load_config(&common)?;
            init_runtime(&cfg)?;
            cmd_run(&cfg, mode)
        }
        Command::Experiment { common, alphas } => {
            let cfg = load_config(&common)?;
            init_runtime(&cfg)?;
            cmd_experiment(cfg, alphas)
        }
        Command::Oracle { common } => {
            let cfg = load_config(&common)?;
            init_runtime(&cfg)?;
            cmd_oracle(&cfg)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

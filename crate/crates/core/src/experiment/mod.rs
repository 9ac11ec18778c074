//! Desk-scale experimental protocol: synthetic deposit genesis, paired
//! one-shot and closed-loop runs, the misspecification sweep and the
//! exhaustive oracle.

pub mod diagnostics;
pub mod oracle;

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::belief::{Anamorphosis, Belief};
use crate::block_model::{BlockModel, GridDims, PeriodCapacities, PrecedencePattern, ZoneLayout};
use crate::economics::{expectation_reality_gap, EconParams};
use crate::io::{self, EnsembleSidecar};
use crate::error::{Error, Result};
use crate::geostat::{
    generate_ensemble, sample_drillholes, scale_field, sgs_simulate, DrillholeData, Ensemble,
    GradeField, NormalScoreTable, SgsParams, Variogram,
};
use crate::pomdp_engine::{run_oneshot, run_pomdp_episode, OneShotResult, PomdpConfig, Trajectory};
use crate::sa_scheduler::SaParams;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LognormalPrior {
    pub median: f64,
    pub log_sigma: f64,
}

/// Per-period limits in tonnes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapacityConfig {
    pub mining: f64,
    pub sulfide_mill: f64,
    pub sulfide_heap_leach: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DepositConfig {
    pub dims: GridDims,
    /// Block edge length in metres.
    pub block_size: f64,
    pub tonnes: f64,
    pub zones: ZoneLayout,
    pub precedence: PrecedencePattern,
    pub capacities: CapacityConfig,
    pub variogram: Variogram,
    pub n_neighbors: usize,
    /// Collar spacing in blocks.
    pub drillhole_spacing: usize,
    pub cu_prior: LognormalPrior,
    pub au_prior: LognormalPrior,
    /// Knots in each normal-score table.
    pub table_knots: usize,
}

impl Default for DepositConfig {
    fn default() -> Self {
        DepositConfig {
            dims: GridDims::new(16, 16, 4),
            block_size: 15.0,
            tonnes: 10_000.0,
            zones: ZoneLayout::default(),
            precedence: PrecedencePattern::Nine,
            capacities: CapacityConfig {
                mining: 400_000.0,
                sulfide_mill: 120_000.0,
                sulfide_heap_leach: 150_000.0,
            },
            variogram: Variogram::default(),
            n_neighbors: 16,
            drillhole_spacing: 4,
            cu_prior: LognormalPrior {
                median: 0.25,
                log_sigma: 0.6,
            },
            au_prior: LognormalPrior {
                median: 0.30,
                log_sigma: 0.7,
            },
            table_knots: 1_000,
        }
    }
}

impl DepositConfig {
    pub fn capacities(&self) -> PeriodCapacities {
        PeriodCapacities::new(
            self.capacities.mining,
            self.capacities.sulfide_mill,
            self.capacities.sulfide_heap_leach,
        )
    }

    pub fn anamorphosis(&self) -> Result<Anamorphosis> {
        Ok(Anamorphosis {
            cu: Arc::new(NormalScoreTable::lognormal(
                self.cu_prior.median,
                self.cu_prior.log_sigma,
                self.table_knots,
            )?),
            au: Arc::new(NormalScoreTable::lognormal(
                self.au_prior.median,
                self.au_prior.log_sigma,
                self.table_knots,
            )?),
        })
    }

    pub fn sgs_params(&self, ana: &Anamorphosis) -> SgsParams {
        SgsParams {
            variogram: self.variogram,
            n_neighbors: self.n_neighbors,
            cu_table: ana.cu.clone(),
            au_table: ana.au.clone(),
        }
    }

    pub fn build_model(&self, seed: u64) -> Result<BlockModel> {
        BlockModel::synthetic(
            self.dims,
            self.block_size,
            self.tonnes,
            &self.zones,
            self.precedence,
            self.capacities(),
            seed,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub deposit: DepositConfig,
    /// Realizations generated, including the one held out as truth.
    pub n_realizations: usize,
    pub econ: EconParams,
    /// Budget of the one-shot life-of-mine solve.
    pub sa_baseline: SaParams,
    /// Closed-loop settings, including the continuation SA budget.
    pub pomdp: PomdpConfig,
    pub alphas: Vec<f64>,
    pub replicates: usize,
    /// Put the scaled truth only into the one-shot ensemble during the
    /// misspecification sweep instead of into both priors.
    pub truth_in_oneshot_only: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            deposit: DepositConfig::default(),
            n_realizations: 51,
            econ: EconParams::default(),
            sa_baseline: SaParams::baseline(),
            pomdp: PomdpConfig::default(),
            alphas: vec![1.0],
            replicates: 10,
            truth_in_oneshot_only: false,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_realizations < 2 {
            return Err(Error::Config(format!(
                "n_realizations must be >= 2, got {}",
                self.n_realizations
            )));
        }
        if self.alphas.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
            return Err(Error::Config("alpha values must be > 0".into()));
        }
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be >= 1".into()));
        }
        if self.deposit.drillhole_spacing == 0 || self.deposit.n_neighbors == 0 {
            return Err(Error::Config("drillhole spacing and n_neighbors must be >= 1".into()));
        }
        self.deposit.variogram.validate()?;
        self.econ.validate()?;
        self.sa_baseline.validate()?;
        self.pomdp.validate()
    }
}

/// Tiny instance solved by the exhaustive oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    pub dims: GridDims,
    pub n_members: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            dims: GridDims::new(2, 2, 2),
            n_members: 3,
        }
    }
}

/// Everything the command-line front end reads from one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; `None` uses every core. Not written back out, so
    /// saved configs and summaries do not depend on it.
    #[serde(skip_serializing)]
    pub threads: Option<usize>,
    pub log_level: String,
    #[serde(skip_serializing)]
    pub out_dir: Option<PathBuf>,
    pub experiment: ExperimentConfig,
    pub oracle: OracleConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            threads: None,
            log_level: "info".into(),
            out_dir: None,
            experiment: ExperimentConfig::default(),
            oracle: OracleConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be >= 1".into()));
        }
        if !["error", "warn", "info", "debug", "trace", "off"].contains(&self.log_level.as_str()) {
            return Err(Error::Config(format!("unknown log level `{}`", self.log_level)));
        }
        if self.oracle.dims.len() > oracle::MAX_BLOCKS || self.oracle.n_members == 0 {
            return Err(Error::Config(format!(
                "oracle instance needs 1..={} blocks and at least one member",
                oracle::MAX_BLOCKS
            )));
        }
        self.experiment.validate()
    }
}

/// Everything generated for one replicate before any method runs.
#[derive(Debug, Clone)]
pub struct Deposit {
    pub model: BlockModel,
    pub drillholes: DrillholeData,
    pub ensemble: Ensemble,
    pub anamorphosis: Arc<Anamorphosis>,
    pub seed: u64,
}

impl Deposit {
    pub fn truth(&self) -> &GradeField {
        self.ensemble.truth()
    }

    /// Prior belief with the truth excluded.
    pub fn prior(&self) -> Result<Belief> {
        Belief::new(self.ensemble.prior_members(), Some(self.anamorphosis.clone()))
    }
}

/// Reference field, drillholes sampled from it, and the conditional
/// ensemble with one member held out as truth.
pub fn genesis(cfg: &DepositConfig, n_realizations: usize, seed: u64) -> Result<Deposit> {
    let model = cfg.build_model(seed)?;
    let ana = Arc::new(cfg.anamorphosis()?);
    let params = cfg.sgs_params(&ana);
    let reference = sgs_simulate(
        &model,
        &DrillholeData::default(),
        &params,
        seed::derive(seed, &[seed::tag::REFERENCE]),
    )?;
    let drillholes = sample_drillholes(&model, &reference, cfg.drillhole_spacing, seed)?;
    let ensemble = generate_ensemble(n_realizations, &model, &drillholes, &params, seed)?;
    Ok(Deposit {
        model,
        drillholes,
        ensemble,
        anamorphosis: ana,
        seed,
    })
}

pub const BLOCKS_FILE: &str = "blocks.csv";
pub const DRILLHOLES_FILE: &str = "drillholes.csv";

/// Writes the block model, drillholes, ensemble matrices and sidecar.
pub fn write_deposit(dir: &Path, cfg: &DepositConfig, deposit: &Deposit) -> Result<EnsembleSidecar> {
    std::fs::create_dir_all(dir)?;
    io::write_blocks(&dir.join(BLOCKS_FILE), deposit.model.blocks())?;
    io::write_drillholes(&dir.join(DRILLHOLES_FILE), &deposit.drillholes)?;
    let sidecar = EnsembleSidecar {
        n_blocks: deposit.model.len(),
        n_realizations: deposit.ensemble.realizations.len(),
        truth_index: deposit.ensemble.truth_index,
        n_belief_members: deposit.ensemble.realizations.len() - 1,
        master_seed: deposit.seed,
        realization_seeds: deposit.ensemble.seeds.clone(),
        variogram: cfg.variogram,
    };
    io::write_ensemble(dir, &deposit.ensemble, &sidecar)?;
    Ok(sidecar)
}

/// Reads what `write_deposit` wrote. Precedence and capacities come from
/// `cfg`; the grid must match the block file.
pub fn read_deposit(dir: &Path, cfg: &DepositConfig) -> Result<Deposit> {
    let blocks = io::read_blocks(&dir.join(BLOCKS_FILE))?;
    let model = BlockModel::new(cfg.dims, blocks, cfg.precedence, cfg.capacities())?;
    let drillholes = io::read_drillholes(&dir.join(DRILLHOLES_FILE))?;
    let (ensemble, sidecar) = io::read_ensemble(dir)?;
    if sidecar.n_blocks != model.len() {
        return Err(Error::Parse(format!(
            "ensemble has {} blocks, block model has {}",
            sidecar.n_blocks,
            model.len()
        )));
    }
    Ok(Deposit {
        model,
        drillholes,
        ensemble,
        anamorphosis: Arc::new(cfg.anamorphosis()?),
        seed: sidecar.master_seed,
    })
}

pub fn replicate_seed(master: u64, replicate: usize) -> u64 {
    seed::derive(master, &[seed::tag::REPLICATE, replicate as u64])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Oneshot,
    Pomdp,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Oneshot => "oneshot",
            Method::Pomdp => "pomdp",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub expected: f64,
    pub realized: f64,
    pub gap: f64,
}

impl MethodSummary {
    fn new(expected: f64, realized: f64) -> Result<Self> {
        Ok(MethodSummary {
            expected,
            realized,
            gap: expectation_reality_gap(expected, realized)?,
        })
    }
}

/// Inputs of one (alpha, replicate) cell after the inclusion rule.
pub struct CellInputs {
    pub truth: GradeField,
    pub oneshot_prior: Belief,
    pub pomdp_prior: Belief,
}

/// Scales the truth and applies the inclusion rule: `include` adds the
/// scaled truth to the one-shot prior, and also to the closed-loop prior
/// unless `oneshot_only`.
pub fn cell_inputs(
    deposit: &Deposit,
    alpha: f64,
    include: bool,
    oneshot_only: bool,
) -> Result<CellInputs> {
    let truth = scale_field(deposit.truth(), alpha)?;
    let base = deposit.ensemble.prior_members();
    let with_truth = || {
        let mut m = base.clone();
        m.push(truth.clone());
        m
    };
    let ana = Some(deposit.anamorphosis.clone());
    let oneshot_members = if include { with_truth() } else { base.clone() };
    let pomdp_members = if include && !oneshot_only {
        with_truth()
    } else {
        base.clone()
    };
    Ok(CellInputs {
        oneshot_prior: Belief::new(oneshot_members, ana.clone())?,
        pomdp_prior: Belief::new(pomdp_members, ana)?,
        truth,
    })
}

/// Full output of running both methods on one cell.
#[derive(Debug, Clone)]
pub struct CellRun {
    pub alpha: f64,
    pub replicate: usize,
    pub seed: u64,
    pub oneshot: OneShotResult,
    pub trajectory: Trajectory,
    pub summary: CellSummary,
    pub timing: CellTiming,
}

/// Wall-clock seconds per method; kept apart from the reproducible
/// results.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellTiming {
    pub alpha: f64,
    pub replicate: usize,
    pub oneshot_s: f64,
    pub pomdp_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub alpha: f64,
    pub replicate: usize,
    pub seed: u64,
    pub oneshot: MethodSummary,
    pub pomdp: MethodSummary,
}

/// Runs the one-shot baseline and a closed-loop episode on identical
/// deposit, economics and master seed.
pub fn run_cell(
    cfg: &ExperimentConfig,
    deposit: &Deposit,
    inputs: &CellInputs,
    alpha: f64,
    replicate: usize,
) -> Result<CellRun> {
    let t0 = Instant::now();
    let sa = cfg
        .sa_baseline
        .clone()
        .with_seed(seed::derive(deposit.seed, &[seed::tag::ONESHOT]));
    let oneshot = run_oneshot(&deposit.model, &inputs.oneshot_prior, &inputs.truth, &cfg.econ, &sa)?;
    let t_oneshot = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    let trajectory = run_pomdp_episode(
        &deposit.model,
        &inputs.truth,
        &inputs.pomdp_prior,
        &cfg.econ,
        &cfg.pomdp,
        seed::derive(deposit.seed, &[seed::tag::POMDP]),
    )?;
    let t_pomdp = t1.elapsed().as_secs_f64();
    let summary = CellSummary {
        alpha,
        replicate,
        seed: deposit.seed,
        oneshot: MethodSummary::new(oneshot.expected_npv, oneshot.realized_npv)?,
        pomdp: MethodSummary::new(trajectory.expected_npv, trajectory.realized_npv)?,
    };
    Ok(CellRun {
        alpha,
        replicate,
        seed: deposit.seed,
        oneshot,
        trajectory,
        summary,
        timing: CellTiming {
            alpha,
            replicate,
            oneshot_s: t_oneshot,
            pomdp_s: t_pomdp,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaSummary {
    pub alpha: f64,
    pub n: usize,
    pub oneshot_mean_realized: f64,
    pub pomdp_mean_realized: f64,
    pub oneshot_mean_abs_gap: f64,
    pub pomdp_mean_abs_gap: f64,
    /// Replicates where the closed loop's |gap| is strictly smaller.
    pub pomdp_smaller_gap: usize,
    /// Mean of pomdp realized minus oneshot realized.
    pub mean_advantage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub master_seed: u64,
    pub config: ExperimentConfig,
    pub cells: Vec<CellSummary>,
    pub by_alpha: Vec<AlphaSummary>,
    pub timings: Vec<CellTiming>,
}

impl ExperimentReport {
    pub fn new(
        master_seed: u64,
        config: ExperimentConfig,
        mut cells: Vec<CellSummary>,
        mut timings: Vec<CellTiming>,
    ) -> Self {
        timings.sort_by(|a, b| a.alpha.total_cmp(&b.alpha).then(a.replicate.cmp(&b.replicate)));
        cells.sort_by(|a, b| a.alpha.total_cmp(&b.alpha).then(a.replicate.cmp(&b.replicate)));
        let mut by_alpha: Vec<AlphaSummary> = Vec::new();
        for c in &cells {
            if by_alpha.last().is_none_or(|s| s.alpha != c.alpha) {
                by_alpha.push(AlphaSummary {
                    alpha: c.alpha,
                    n: 0,
                    oneshot_mean_realized: 0.0,
                    pomdp_mean_realized: 0.0,
                    oneshot_mean_abs_gap: 0.0,
                    pomdp_mean_abs_gap: 0.0,
                    pomdp_smaller_gap: 0,
                    mean_advantage: 0.0,
                });
            }
            let s = by_alpha.last_mut().expect("pushed above");
            s.n += 1;
            s.oneshot_mean_realized += c.oneshot.realized;
            s.pomdp_mean_realized += c.pomdp.realized;
            s.oneshot_mean_abs_gap += c.oneshot.gap.abs();
            s.pomdp_mean_abs_gap += c.pomdp.gap.abs();
            s.mean_advantage += c.pomdp.realized - c.oneshot.realized;
            if c.pomdp.gap.abs() < c.oneshot.gap.abs() {
                s.pomdp_smaller_gap += 1;
            }
        }
        for s in &mut by_alpha {
            let n = s.n as f64;
            s.oneshot_mean_realized /= n;
            s.pomdp_mean_realized /= n;
            s.oneshot_mean_abs_gap /= n;
            s.pomdp_mean_abs_gap /= n;
            s.mean_advantage /= n;
        }
        ExperimentReport {
            master_seed,
            config,
            cells,
            by_alpha,
            timings,
        }
    }

    /// The report without wall-clock timings: identical across reruns
    /// with the same config and seed.
    pub fn summary_json(&self) -> Result<serde_json::Value> {
        let mut v = serde_json::to_value(self)?;
        if let Some(obj) = v.as_object_mut() {
            obj.remove("timings");
        }
        Ok(v)
    }

    pub fn alpha(&self, alpha: f64) -> Option<&AlphaSummary> {
        self.by_alpha.iter().find(|s| s.alpha == alpha)
    }
}

/// Called with each finished cell, e.g. to write its diagnostics.
pub type CellSink<'a> = dyn Fn(&Deposit, &CellRun) -> Result<()> + Sync + 'a;

fn run_grid(
    cfg: &ExperimentConfig,
    master_seed: u64,
    alphas: &[f64],
    include: bool,
    sink: Option<&CellSink<'_>>,
) -> Result<ExperimentReport> {
    cfg.validate()?;
    let (cells, timings): (Vec<CellSummary>, Vec<CellTiming>) = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| -> Result<Vec<(CellSummary, CellTiming)>> {
            let deposit = genesis(&cfg.deposit, cfg.n_realizations, replicate_seed(master_seed, r))?;
            alphas
                .iter()
                .map(|&alpha| {
                    let inputs = cell_inputs(&deposit, alpha, include, cfg.truth_in_oneshot_only)?;
                    let run = run_cell(cfg, &deposit, &inputs, alpha, r)?;
                    log::info!(
                        "alpha {alpha} replicate {r}: oneshot gap {:+.4}, pomdp gap {:+.4}",
                        run.summary.oneshot.gap,
                        run.summary.pomdp.gap
                    );
                    if let Some(f) = sink {
                        f(&deposit, &run)?;
                    }
                    Ok((run.summary, run.timing))
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .unzip();
    Ok(ExperimentReport::new(master_seed, cfg.clone(), cells, timings))
}

/// Consistent prior: alpha 1 and the truth excluded from both beliefs.
pub fn base_case(
    cfg: &ExperimentConfig,
    master_seed: u64,
    sink: Option<&CellSink<'_>>,
) -> Result<ExperimentReport> {
    run_grid(cfg, master_seed, &[1.0], false, sink)
}

/// Scaled truth for every configured alpha, with the inclusion rule.
pub fn misspec_sweep(
    cfg: &ExperimentConfig,
    master_seed: u64,
    sink: Option<&CellSink<'_>>,
) -> Result<ExperimentReport> {
    if cfg.alphas.is_empty() {
        return Err(Error::Config("alpha list is empty".into()));
    }
    run_grid(cfg, master_seed, &cfg.alphas, true, sink)
}

//! Cash flows, discounting and belief-weighted schedule valuation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::belief::{sample_std, Belief};
use crate::block_model::{BlockModel, Destination, OperationalState, N_DESTINATIONS};
use crate::error::{Error, Result};
use crate::geostat::GradeField;
use crate::schedule::{Extraction, Schedule};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Recovery {
    pub cu: f64,
    pub au: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EconParams {
    /// $ per tonne of copper.
    pub cu_price: f64,
    /// $ per gram of gold.
    pub au_price: f64,
    /// Metallurgical recoveries of processing destinations. Destinations
    /// absent from the map recover nothing.
    pub recovery: BTreeMap<Destination, Recovery>,
    /// $ per tonne mined, charged on every block.
    pub mining_cost: f64,
    /// $ per tonne processed.
    pub processing_cost: BTreeMap<Destination, f64>,
    /// $ per tonne sent to a waste dump.
    pub waste_handling_cost: f64,
    /// Per period.
    pub discount_rate: f64,
}

impl Default for EconParams {
    fn default() -> Self {
        use Destination::*;
        let r = |cu, au| Recovery { cu, au };
        EconParams {
            cu_price: 7_500.0,
            au_price: 60.0,
            recovery: BTreeMap::from([
                (SulfideMill, r(0.88, 0.75)),
                (SulfideHeapLeach, r(0.60, 0.20)),
                (TransitionHeapLeach, r(0.55, 0.20)),
                (OxideHeapLeach, r(0.50, 0.55)),
            ]),
            mining_cost: 2.5,
            processing_cost: BTreeMap::from([
                (SulfideMill, 10.0),
                (SulfideHeapLeach, 5.0),
                (TransitionHeapLeach, 5.0),
                (OxideHeapLeach, 5.0),
            ]),
            waste_handling_cost: 0.5,
            discount_rate: 0.10,
        }
    }
}

/// Per-tonne cash flow of one destination as an affine function of grade:
/// `cu_coef * cu + au_coef * au + fixed`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitValue {
    pub cu_coef: f64,
    pub au_coef: f64,
    pub fixed: f64,
}

impl UnitValue {
    pub fn per_tonne(&self, cu: f64, au: f64) -> f64 {
        self.cu_coef * cu + self.au_coef * au + self.fixed
    }
}

impl EconParams {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("cu_price", self.cu_price),
            ("au_price", self.au_price),
            ("mining_cost", self.mining_cost),
            ("waste_handling_cost", self.waste_handling_cost),
            ("discount_rate", self.discount_rate),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be >= 0, got {v}")));
            }
        }
        for (d, r) in &self.recovery {
            if !((0.0..=1.0).contains(&r.cu) && (0.0..=1.0).contains(&r.au)) {
                return Err(Error::Config(format!("recoveries of {d} must lie in [0, 1]")));
            }
            if d.is_waste() && (r.cu != 0.0 || r.au != 0.0) {
                return Err(Error::Config(format!("waste destination {d} cannot recover metal")));
            }
        }
        for (d, c) in &self.processing_cost {
            if !(*c >= 0.0 && c.is_finite()) {
                return Err(Error::Config(format!("processing cost of {d} must be >= 0")));
            }
        }
        Ok(())
    }

    pub fn unit_value(&self, dest: Destination) -> UnitValue {
        if dest.is_waste() {
            return UnitValue {
                cu_coef: 0.0,
                au_coef: 0.0,
                fixed: -(self.mining_cost + self.waste_handling_cost),
            };
        }
        let r = self.recovery.get(&dest).copied().unwrap_or(Recovery { cu: 0.0, au: 0.0 });
        let proc = self.processing_cost.get(&dest).copied().unwrap_or(0.0);
        UnitValue {
            // grade in percent
            cu_coef: r.cu * self.cu_price / 100.0,
            au_coef: r.au * self.au_price,
            fixed: -(self.mining_cost + proc),
        }
    }

    pub fn unit_values(&self) -> [UnitValue; N_DESTINATIONS] {
        Destination::ALL.map(|d| self.unit_value(d))
    }

    pub fn discount_factor(&self, period: u32) -> f64 {
        (1.0 + self.discount_rate).powi(-(period as i32))
    }
}

/// Undiscounted cash flow of sending a block to `dest`.
pub fn block_cash_flow(cu: f64, au: f64, tonnes: f64, dest: Destination, e: &EconParams) -> f64 {
    tonnes * e.unit_value(dest).per_tonne(cu, au)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CashFlow {
    pub step: usize,
    pub block_id: usize,
    pub period: u32,
    pub destination: Destination,
    pub undiscounted: f64,
    pub discounted: f64,
}

/// Cash flows of replayed extractions under the grades of `field`.
pub fn cash_flows(
    model: &BlockModel,
    extractions: &[Extraction],
    field: &GradeField,
    e: &EconParams,
) -> Vec<CashFlow> {
    let units = e.unit_values();
    extractions
        .iter()
        .map(|x| {
            let b = x.action.block;
            let undiscounted =
                model.block(b).tonnes * units[x.action.destination.index()].per_tonne(field.cu[b], field.au[b]);
            CashFlow {
                step: x.step,
                block_id: b,
                period: x.period,
                destination: x.action.destination,
                undiscounted,
                discounted: undiscounted * e.discount_factor(x.period),
            }
        })
        .collect()
}

fn npv_of(model: &BlockModel, extractions: &[Extraction], field: &GradeField, e: &EconParams) -> f64 {
    cash_flows(model, extractions, field, e).iter().map(|c| c.discounted).sum()
}

/// NPV of `schedule` executed from `start` under `field`. Periods are
/// absolute, so the result is in period-0 money.
pub fn evaluate_schedule(
    model: &BlockModel,
    schedule: &Schedule,
    field: &GradeField,
    e: &EconParams,
    start: &OperationalState,
) -> Result<f64> {
    let (steps, _) = schedule.replay(model, start)?;
    Ok(npv_of(model, &steps, field, e))
}

/// Equal-weight mean and sample standard deviation of the schedule's NPV
/// over the belief's members.
pub fn expected_npv(
    model: &BlockModel,
    schedule: &Schedule,
    belief: &Belief,
    e: &EconParams,
    start: &OperationalState,
) -> Result<(f64, f64)> {
    let (steps, _) = schedule.replay(model, start)?;
    let values: Vec<f64> = belief
        .members()
        .iter()
        .map(|m| npv_of(model, &steps, m, e))
        .collect();
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    Ok((mean, sample_std(values.iter().copied())))
}

/// Relative optimism of an expectation: (expected - realized) / realized.
pub fn expectation_reality_gap(expected: f64, realized: f64) -> Result<f64> {
    if realized == 0.0 {
        return Err(Error::ZeroRealized);
    }
    Ok((expected - realized) / realized)
}

/// Undiscounted cash flow of every (block, destination) pair under one
/// grade field. Incompatible pairs hold `NEG_INFINITY`.
///
/// Cash flow is affine in grade, so the table built from the ensemble mean
/// gives each pair's belief-expected cash flow.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable {
    values: Vec<[f64; N_DESTINATIONS]>,
}

impl ValueTable {
    pub fn from_field(model: &BlockModel, field: &GradeField, e: &EconParams) -> Self {
        let units = e.unit_values();
        let values = model
            .blocks()
            .iter()
            .map(|b| {
                let mut row = [f64::NEG_INFINITY; N_DESTINATIONS];
                for &d in Destination::compatible(b.zone) {
                    row[d.index()] = b.tonnes * units[d.index()].per_tonne(field.cu[b.id], field.au[b.id]);
                }
                row
            })
            .collect();
        ValueTable { values }
    }

    pub fn expected(model: &BlockModel, belief: &Belief, e: &EconParams) -> Self {
        Self::from_field(model, &belief.mean_field(), e)
    }

    pub fn value(&self, block: usize, dest: Destination) -> f64 {
        self.values[block][dest.index()]
    }

    pub fn row(&self, block: usize) -> &[f64; N_DESTINATIONS] {
        &self.values[block]
    }

    /// Highest-value compatible destination; ties go to the lower enum
    /// position, which puts waste last.
    pub fn best(&self, block: usize) -> (Destination, f64) {
        let row = &self.values[block];
        let mut best = (Destination::ALL[0], f64::NEG_INFINITY);
        for d in Destination::ALL {
            if row[d.index()] > best.1 {
                best = (d, row[d.index()]);
            }
        }
        best
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

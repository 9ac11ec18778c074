//! Geological ground truth, drillholes and the conditional-simulation
//! ensemble that seeds the belief.

mod normal_score;
mod sgs;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::block_model::BlockModel;
use crate::error::{Error, Result};
use crate::seed;

pub use normal_score::{normal_score, std_normal_quantile, NormalScoreTable, SCORE_CAP};
pub use sgs::{sgs_simulate, SgsParams};

/// Spherical variogram with geometric anisotropy between the horizontal
/// plane and the vertical axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variogram {
    pub nugget: f64,
    pub sill: f64,
    pub range_xy: f64,
    pub range_z: f64,
}

impl Default for Variogram {
    fn default() -> Self {
        // ranges of 6 and 3 blocks at the default 15 m block size
        Variogram {
            nugget: 0.1,
            sill: 1.0,
            range_xy: 90.0,
            range_z: 45.0,
        }
    }
}

impl Variogram {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.nugget && self.nugget <= self.sill) {
            return Err(Error::Config(format!(
                "variogram needs 0 <= nugget <= sill (nugget {}, sill {})",
                self.nugget, self.sill
            )));
        }
        if !(self.range_xy > 0.0 && self.range_z > 0.0) {
            return Err(Error::Config("variogram ranges must be positive".into()));
        }
        Ok(())
    }

    /// Range-normalized lag.
    pub fn reduced_lag(&self, h_xy: f64, h_z: f64) -> f64 {
        ((h_xy / self.range_xy).powi(2) + (h_z / self.range_z).powi(2)).sqrt()
    }

    pub fn covariance(&self, h_xy: f64, h_z: f64) -> f64 {
        let h = self.reduced_lag(h_xy, h_z);
        if h == 0.0 {
            self.sill
        } else {
            (self.sill - self.nugget) * spherical(h)
        }
    }

    pub fn gamma(&self, h_xy: f64, h_z: f64) -> f64 {
        self.sill - self.covariance(h_xy, h_z)
    }
}

fn spherical(h: f64) -> f64 {
    if h >= 1.0 {
        0.0
    } else {
        1.0 - 1.5 * h + 0.5 * h * h * h
    }
}

pub fn variogram_covariance(v: &Variogram, h_xy: f64, h_z: f64) -> f64 {
    v.covariance(h_xy, h_z)
}

/// One geological realization: per-block Cu (%) and Au (g/t).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradeField {
    pub cu: Vec<f64>,
    pub au: Vec<f64>,
}

impl GradeField {
    pub fn new(cu: Vec<f64>, au: Vec<f64>) -> Result<Self> {
        if cu.len() != au.len() {
            return Err(Error::Model(format!(
                "cu has {} values, au has {}",
                cu.len(),
                au.len()
            )));
        }
        if let Some(v) = cu.iter().chain(&au).find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Model(format!("grade {v} is negative or not finite")));
        }
        Ok(GradeField { cu, au })
    }

    pub fn len(&self) -> usize {
        self.cu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cu.is_empty()
    }

    pub fn metal(&self, metal: Metal) -> &[f64] {
        match metal {
            Metal::Cu => &self.cu,
            Metal::Au => &self.au,
        }
    }

    pub fn metal_mut(&mut self, metal: Metal) -> &mut [f64] {
        match metal {
            Metal::Cu => &mut self.cu,
            Metal::Au => &mut self.au,
        }
    }

    pub fn grades(&self, block: usize) -> (f64, f64) {
        (self.cu[block], self.au[block])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metal {
    Cu,
    Au,
}

impl Metal {
    pub const BOTH: [Metal; 2] = [Metal::Cu, Metal::Au];

    pub fn as_str(self) -> &'static str {
        match self {
            Metal::Cu => "cu",
            Metal::Au => "au",
        }
    }
}

/// Multiplies both metals by `alpha`.
pub fn scale_field(field: &GradeField, alpha: f64) -> Result<GradeField> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Config(format!("scaling factor must be > 0, got {alpha}")));
    }
    Ok(GradeField {
        cu: field.cu.iter().map(|v| v * alpha).collect(),
        au: field.au.iter().map(|v| v * alpha).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub block: usize,
    pub cu: f64,
    pub au: f64,
}

/// Drillhole composites at block support, sorted by block id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DrillholeData {
    pub samples: Vec<Sample>,
}

impl DrillholeData {
    pub fn new(mut samples: Vec<Sample>) -> Result<Self> {
        samples.sort_by_key(|s| s.block);
        if samples.windows(2).any(|w| w[0].block == w[1].block) {
            return Err(Error::Model("duplicate drillhole block".into()));
        }
        Ok(DrillholeData { samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Vertical holes on a regular collar lattice with seeded jitter; every
/// block a hole passes through is sampled from `truth`.
pub fn sample_drillholes(
    model: &BlockModel,
    truth: &GradeField,
    spacing: usize,
    seed: u64,
) -> Result<DrillholeData> {
    if spacing == 0 {
        return Err(Error::Config("drillhole spacing must be >= 1".into()));
    }
    let dims = model.dims();
    let mut rng = seed::child_rng(seed, &[seed::tag::DRILLHOLES]);
    let jitter = (spacing as i64 - 1) / 4;
    let collar_axis = |n: usize, rng: &mut seed::StreamRng| -> Vec<usize> {
        (0..n.div_ceil(spacing))
            .map(|k| {
                let lo = k * spacing;
                let hi = ((k + 1) * spacing).min(n) - 1;
                let centre = (lo + spacing / 2).min(hi) as i64;
                let shift = if jitter > 0 {
                    rng.random_range(-jitter..=jitter)
                } else {
                    0
                };
                (centre + shift).clamp(lo as i64, hi as i64) as usize
            })
            .collect()
    };
    let xs = collar_axis(dims.nx, &mut rng);
    let ys = collar_axis(dims.ny, &mut rng);
    let mut samples = Vec::with_capacity(xs.len() * ys.len() * dims.nz);
    for &iy in &ys {
        for &ix in &xs {
            for iz in 0..dims.nz {
                let b = dims.index(ix, iy, iz);
                samples.push(Sample {
                    block: b,
                    cu: truth.cu[b],
                    au: truth.au[b],
                });
            }
        }
    }
    DrillholeData::new(samples)
}

/// Realizations plus the index of the one designated as hidden truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub realizations: Vec<GradeField>,
    pub seeds: Vec<u64>,
    pub truth_index: usize,
}

impl Ensemble {
    pub fn truth(&self) -> &GradeField {
        &self.realizations[self.truth_index]
    }

    /// All realizations except the truth, in order.
    pub fn prior_members(&self) -> Vec<GradeField> {
        self.realizations
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != self.truth_index)
            .map(|(_, f)| f.clone())
            .collect()
    }
}

pub fn realization_seed(master: u64, index: usize) -> u64 {
    seed::derive(master, &[seed::tag::REALIZATION, index as u64])
}

/// `n` conditional realizations with per-index seeds; one is picked
/// uniformly as the hidden truth.
pub fn generate_ensemble(
    n: usize,
    model: &BlockModel,
    drillholes: &DrillholeData,
    params: &SgsParams,
    seed: u64,
) -> Result<Ensemble> {
    if n < 2 {
        return Err(Error::Config(format!("ensemble needs n >= 2, got {n}")));
    }
    let seeds: Vec<u64> = (0..n).map(|i| realization_seed(seed, i)).collect();
    let realizations = seeds
        .par_iter()
        .map(|&s| sgs_simulate(model, drillholes, params, s))
        .collect::<Result<Vec<_>>>()?;
    let truth_index = seed::child_rng(seed, &[seed::tag::TRUTH_PICK]).random_range(0..n);
    Ok(Ensemble {
        realizations,
        seeds,
        truth_index,
    })
}

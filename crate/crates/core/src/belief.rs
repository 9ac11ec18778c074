//! Ensemble belief state and ES-MDA assimilation of mined-block grades.
//!
//! The belief is an equally weighted set of grade realizations. Updates
//! move the realizations themselves; weights are never introduced.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::block_model::{Action, BlockModel};
use crate::error::{Error, Result};
use crate::geostat::{GradeField, Metal, NormalScoreTable, Sample};

/// Per-metal Gaussian anamorphosis used for NormalScore-space updates.
#[derive(Debug, Clone, PartialEq)]
pub struct Anamorphosis {
    pub cu: Arc<NormalScoreTable>,
    pub au: Arc<NormalScoreTable>,
}

impl Anamorphosis {
    fn table(&self, metal: Metal) -> &NormalScoreTable {
        match metal {
            Metal::Cu => &self.cu,
            Metal::Au => &self.au,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssimilationSpace {
    #[default]
    NormalScore,
    Raw,
}

/// Gaspari-Cohn taper on the anisotropic distance between a block and an
/// observed block. The taper reaches zero at twice the given half-widths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Localization {
    pub half_width_xy: f64,
    pub half_width_z: f64,
}

fn gaspari_cohn(r: f64) -> f64 {
    let r = r.abs();
    if r >= 2.0 {
        0.0
    } else if r >= 1.0 {
        let r2 = r * r;
        let r3 = r2 * r;
        let r4 = r3 * r;
        let r5 = r4 * r;
        r5 / 12.0 - r4 / 2.0 + r3 * 5.0 / 8.0 + r2 * 5.0 / 3.0 - 5.0 * r + 4.0 - 2.0 / (3.0 * r)
    } else {
        let r2 = r * r;
        let r3 = r2 * r;
        let r4 = r3 * r;
        let r5 = r4 * r;
        -r5 / 4.0 + r4 / 2.0 + r3 * 5.0 / 8.0 - r2 * 5.0 / 3.0 + 1.0
    }
}

impl Localization {
    pub fn weight(&self, model: &BlockModel, a: usize, b: usize) -> f64 {
        let (ba, bb) = (model.block(a), model.block(b));
        let h_xy = ((ba.x - bb.x).powi(2) + (ba.y - bb.y).powi(2)).sqrt();
        let h_z = (ba.z - bb.z).abs();
        let r = ((h_xy / self.half_width_xy).powi(2) + (h_z / self.half_width_z).powi(2)).sqrt();
        gaspari_cohn(r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EsmdaConfig {
    /// Inflation coefficients, one per assimilation pass. Their inverses
    /// must sum to one.
    pub inflation: Vec<f64>,
    /// Observation error standard deviation in % Cu.
    pub obs_error_cu: f64,
    /// Observation error standard deviation in g/t Au.
    pub obs_error_au: f64,
    #[serde(default)]
    pub space: AssimilationSpace,
    #[serde(default)]
    pub localization: Option<Localization>,
}

impl EsmdaConfig {
    /// Four passes with inflation 4, tapered to zero at the default
    /// variogram ranges.
    pub fn committed() -> Self {
        EsmdaConfig {
            inflation: vec![4.0; 4],
            obs_error_cu: 0.02,
            obs_error_au: 0.02,
            space: AssimilationSpace::NormalScore,
            localization: Some(Localization {
                half_width_xy: 45.0,
                half_width_z: 22.5,
            }),
        }
    }

    /// A single pass with inflation 1, used inside the lookahead.
    pub fn lookahead() -> Self {
        EsmdaConfig {
            inflation: vec![1.0],
            ..EsmdaConfig::committed()
        }
    }

    pub fn n_assimilations(&self) -> usize {
        self.inflation.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.inflation.is_empty() {
            return Err(Error::Config("ES-MDA needs at least one pass".into()));
        }
        if self.inflation.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
            return Err(Error::Config("inflation coefficients must be positive".into()));
        }
        let sum: f64 = self.inflation.iter().map(|a| 1.0 / a).sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "inverse inflation coefficients sum to {sum}, expected 1"
            )));
        }
        if !(self.obs_error_cu > 0.0 && self.obs_error_au > 0.0) {
            return Err(Error::Config("observation error std must be positive".into()));
        }
        if let Some(loc) = self.localization {
            if !(loc.half_width_xy > 0.0 && loc.half_width_z > 0.0) {
                return Err(Error::Config("localization half-widths must be positive".into()));
            }
        }
        Ok(())
    }

    fn obs_error(&self, metal: Metal) -> f64 {
        match metal {
            Metal::Cu => self.obs_error_cu,
            Metal::Au => self.obs_error_au,
        }
    }
}

/// In-place ES-MDA on a generic ensemble of parameter vectors.
///
/// `members[j][i]` is parameter `i` of member `j`; observation `k` reads
/// parameter `obs_index[k]` directly. `taper[k][i]`, when given, scales the
/// cross-covariance between parameter `i` and observation `k`.
pub fn esmda_update<R: Rng + ?Sized>(
    members: &mut [Vec<f64>],
    obs_index: &[usize],
    d_obs: &[f64],
    obs_std: &[f64],
    inflation: &[f64],
    taper: Option<&[Vec<f64>]>,
    rng: &mut R,
) -> Result<()> {
    let ne = members.len();
    if ne < 2 {
        return Err(Error::EnsembleTooSmall(ne));
    }
    let nd = obs_index.len();
    if nd == 0 {
        return Err(Error::Empty("observation set"));
    }
    let np = members[0].len();
    let denom = (ne - 1) as f64;

    for &alpha in inflation {
        // predicted data and anomalies
        let d: Vec<Vec<f64>> = members
            .iter()
            .map(|m| obs_index.iter().map(|&i| m[i]).collect())
            .collect();
        let d_mean: Vec<f64> = (0..nd)
            .map(|k| d.iter().map(|dj| dj[k]).sum::<f64>() / ne as f64)
            .collect();
        let mut cdd = DMatrix::<f64>::zeros(nd, nd);
        for dj in &d {
            for a in 0..nd {
                for b in 0..nd {
                    cdd[(a, b)] += (dj[a] - d_mean[a]) * (dj[b] - d_mean[b]);
                }
            }
        }
        cdd /= denom;
        for k in 0..nd {
            cdd[(k, k)] += alpha * obs_std[k] * obs_std[k];
        }
        let chol = cdd.cholesky().ok_or(Error::Singular("ES-MDA data covariance"))?;

        // y_j = (C_DD + alpha C_D)^-1 (d_obs + sqrt(alpha) e_j - d_j)
        let sa = alpha.sqrt();
        let mut y: Vec<DVector<f64>> = Vec::with_capacity(ne);
        for dj in &d {
            let innov = DVector::from_iterator(
                nd,
                (0..nd).map(|k| {
                    let e: f64 = StandardNormal.sample(rng);
                    d_obs[k] + sa * obs_std[k] * e - dj[k]
                }),
            );
            y.push(chol.solve(&innov));
        }

        // C_MD, one column per observation
        let mut m_mean = vec![0.0; np];
        for m in members.iter() {
            for (acc, v) in m_mean.iter_mut().zip(m) {
                *acc += v;
            }
        }
        for v in &mut m_mean {
            *v /= ne as f64;
        }
        let mut cmd = vec![vec![0.0; np]; nd];
        for (m, dj) in members.iter().zip(&d) {
            for k in 0..nd {
                let dd = (dj[k] - d_mean[k]) / denom;
                if dd == 0.0 {
                    continue;
                }
                for (c, (v, mu)) in cmd[k].iter_mut().zip(m.iter().zip(&m_mean)) {
                    *c += (v - mu) * dd;
                }
            }
        }
        if let Some(t) = taper {
            for k in 0..nd {
                for (c, w) in cmd[k].iter_mut().zip(&t[k]) {
                    *c *= w;
                }
            }
        }
        for (m, yj) in members.iter_mut().zip(&y) {
            for k in 0..nd {
                let g = yj[k];
                for (v, c) in m.iter_mut().zip(&cmd[k]) {
                    *v += c * g;
                }
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpreadStats {
    pub mean_spread: f64,
    pub spatial_std: f64,
    pub cv_spread: f64,
}

impl SpreadStats {
    /// Mean and sample standard deviation (divisor n - 1) of per-block
    /// spreads.
    pub fn from_spreads(spreads: &[f64]) -> SpreadStats {
        let n = spreads.len();
        if n == 0 {
            return SpreadStats {
                mean_spread: 0.0,
                spatial_std: 0.0,
                cv_spread: 0.0,
            };
        }
        let mean = spreads.iter().sum::<f64>() / n as f64;
        let spatial_std = if n > 1 {
            (spreads.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        let cv_spread = if mean > 0.0 { spatial_std / mean } else { 0.0 };
        SpreadStats {
            mean_spread: mean,
            spatial_std,
            cv_spread,
        }
    }
}

/// Sample standard deviation with divisor n - 1.
pub fn sample_std(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = values.clone().count();
    if n < 2 {
        return 0.0;
    }
    // shifted by the first value so identical inputs give exactly zero
    let first = values.clone().next().unwrap_or(0.0);
    let mean = values.clone().map(|v| v - first).sum::<f64>() / n as f64;
    (values.map(|v| (v - first - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Belief {
    members: Vec<GradeField>,
    observed: Vec<Sample>,
    anamorphosis: Option<Arc<Anamorphosis>>,
}

impl Belief {
    pub fn new(members: Vec<GradeField>, anamorphosis: Option<Arc<Anamorphosis>>) -> Result<Self> {
        let first = members.first().ok_or(Error::Empty("ensemble"))?;
        if members.iter().any(|m| m.len() != first.len()) {
            return Err(Error::Model("ensemble members differ in length".into()));
        }
        Ok(Belief {
            members,
            observed: Vec::new(),
            anamorphosis,
        })
    }

    pub fn members(&self) -> &[GradeField] {
        &self.members
    }

    pub fn n_members(&self) -> usize {
        self.members.len()
    }

    pub fn n_blocks(&self) -> usize {
        self.members[0].len()
    }

    pub fn observed(&self) -> &[Sample] {
        &self.observed
    }

    pub fn anamorphosis(&self) -> Option<&Arc<Anamorphosis>> {
        self.anamorphosis.as_ref()
    }

    /// Equal-weight ensemble mean per block.
    pub fn mean_field(&self) -> GradeField {
        let n = self.n_blocks();
        let mut cu = vec![0.0; n];
        let mut au = vec![0.0; n];
        for m in &self.members {
            for i in 0..n {
                cu[i] += m.cu[i];
                au[i] += m.au[i];
            }
        }
        let w = 1.0 / self.n_members() as f64;
        cu.iter_mut().for_each(|v| *v *= w);
        au.iter_mut().for_each(|v| *v *= w);
        GradeField { cu, au }
    }

    pub fn grade_std(&self, block: usize, metal: Metal) -> f64 {
        sample_std(self.members.iter().map(move |m| m.metal(metal)[block]))
    }

    /// ES-MDA update on `obs`; returns the posterior and leaves `self`
    /// untouched.
    pub fn assimilate<R: Rng + ?Sized>(
        &self,
        model: &BlockModel,
        obs: &[Sample],
        cfg: &EsmdaConfig,
        rng: &mut R,
    ) -> Result<Belief> {
        cfg.validate()?;
        let ne = self.n_members();
        if ne < 2 {
            return Err(Error::EnsembleTooSmall(ne));
        }
        if obs.is_empty() {
            return Err(Error::Empty("observation set"));
        }
        let n = self.n_blocks();
        if let Some(s) = obs.iter().find(|s| s.block >= n) {
            return Err(Error::UnknownBlock(s.block));
        }
        if cfg.space == AssimilationSpace::NormalScore && self.anamorphosis.is_none() {
            return Err(Error::Config(
                "normal-score assimilation needs an anamorphosis".into(),
            ));
        }

        let obs_index: Vec<usize> = obs.iter().map(|s| s.block).collect();
        let taper: Option<Vec<Vec<f64>>> = cfg.localization.map(|loc| {
            obs_index
                .iter()
                .map(|&o| (0..n).map(|i| loc.weight(model, i, o)).collect())
                .collect()
        });
        // parameters the update can reach
        let active: Vec<usize> = match &taper {
            Some(t) => (0..n).filter(|&i| t.iter().any(|row| row[i] > 0.0)).collect(),
            None => (0..n).collect(),
        };
        let local_index: Vec<usize> = {
            let mut map = vec![usize::MAX; n];
            for (k, &i) in active.iter().enumerate() {
                map[i] = k;
            }
            obs_index.iter().map(|&o| map[o]).collect()
        };
        let local_taper: Option<Vec<Vec<f64>>> = taper
            .as_ref()
            .map(|t| t.iter().map(|row| active.iter().map(|&i| row[i]).collect()).collect());

        let mut post = self.clone();
        for metal in Metal::BOTH {
            let table = match cfg.space {
                AssimilationSpace::NormalScore => {
                    Some(self.anamorphosis.as_ref().expect("checked").table(metal))
                }
                AssimilationSpace::Raw => None,
            };
            let to_space = |v: f64| table.map_or(v, |t| t.transform(v));
            let mut ens: Vec<Vec<f64>> = self
                .members
                .iter()
                .map(|m| active.iter().map(|&i| to_space(m.metal(metal)[i])).collect())
                .collect();
            let raw_obs: Vec<f64> = obs
                .iter()
                .map(|s| match metal {
                    Metal::Cu => s.cu,
                    Metal::Au => s.au,
                })
                .collect();
            let d_obs: Vec<f64> = raw_obs.iter().map(|&v| to_space(v)).collect();
            let obs_std: Vec<f64> = raw_obs
                .iter()
                .map(|&v| {
                    let sd = cfg.obs_error(metal);
                    table.map_or(sd, |t| sd * t.slope_at(v).max(1e-6))
                })
                .collect();
            esmda_update(
                &mut ens,
                &local_index,
                &d_obs,
                &obs_std,
                &cfg.inflation,
                local_taper.as_deref(),
                rng,
            )?;
            for (m, vals) in post.members.iter_mut().zip(&ens) {
                let out = m.metal_mut(metal);
                for (&i, &v) in active.iter().zip(vals) {
                    let raw = table.map_or(v, |t| t.back_transform(v));
                    out[i] = raw.max(0.0);
                }
            }
        }
        post.observed.extend_from_slice(obs);
        Ok(post)
    }

    /// Copy with `obs` appended to the log and the members untouched.
    pub fn with_observation(&self, obs: Sample) -> Belief {
        let mut out = self.clone();
        out.observed.push(obs);
        out
    }

    /// Hypothetical posterior after observing member `member`'s grades at
    /// `action.block`. A single-member belief is already a point mass and
    /// passes through unchanged.
    pub fn lookahead_for_member<R: Rng + ?Sized>(
        &self,
        model: &BlockModel,
        action: Action,
        member: usize,
        cfg: &EsmdaConfig,
        rng: &mut R,
    ) -> Result<Belief> {
        let (cu, au) = self.members[member].grades(action.block);
        let obs = [Sample {
            block: action.block,
            cu,
            au,
        }];
        if self.n_members() == 1 {
            return Ok(self.with_observation(obs[0]));
        }
        self.assimilate(model, &obs, cfg, rng)
    }

    /// Samples a member uniformly, simulates the observation it implies at
    /// the action block and returns the hypothetical posterior.
    pub fn lookahead<R: Rng + ?Sized>(
        &self,
        model: &BlockModel,
        action: Action,
        cfg: &EsmdaConfig,
        rng: &mut R,
    ) -> Result<(Belief, usize)> {
        let member = rng.random_range(0..self.n_members());
        let post = self.lookahead_for_member(model, action, member, cfg, rng)?;
        Ok((post, member))
    }

    /// Spread diagnostics per metal over unmined blocks (`mined` masks out
    /// extracted blocks).
    pub fn spread_stats(&self, mined: Option<&[bool]>) -> Result<[SpreadStats; 2]> {
        if self.n_members() < 2 {
            return Err(Error::EnsembleTooSmall(self.n_members()));
        }
        let blocks: Vec<usize> = (0..self.n_blocks())
            .filter(|&b| mined.is_none_or(|m| !m[b]))
            .collect();
        let stats = |metal: Metal| {
            let spreads: Vec<f64> = blocks.iter().map(|&b| self.grade_std(b, metal)).collect();
            SpreadStats::from_spreads(&spreads)
        };
        Ok([stats(Metal::Cu), stats(Metal::Au)])
    }
}

pub fn esmda_assimilate<R: Rng + ?Sized>(
    belief: &Belief,
    model: &BlockModel,
    obs: &[Sample],
    cfg: &EsmdaConfig,
    rng: &mut R,
) -> Result<Belief> {
    belief.assimilate(model, obs, cfg, rng)
}

pub fn lookahead_update<R: Rng + ?Sized>(
    belief: &Belief,
    model: &BlockModel,
    action: Action,
    cfg: &EsmdaConfig,
    rng: &mut R,
) -> Result<(Belief, usize)> {
    belief.lookahead(model, action, cfg, rng)
}

pub fn spread_stats(belief: &Belief, mined: Option<&[bool]>) -> Result<[SpreadStats; 2]> {
    belief.spread_stats(mined)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::block_model::{
        Block, Destination, GridDims, PeriodCapacities, PrecedencePattern, Zone,
    };
    use crate::seed;

    fn line_model(n: usize) -> BlockModel {
        let dims = GridDims::new(n, 1, 1);
        let blocks = (0..n)
            .map(|id| Block {
                id,
                ix: id,
                iy: 0,
                iz: 0,
                x: id as f64 * 10.0,
                y: 0.0,
                z: 0.0,
                tonnes: 1.0,
                zone: Zone::Sulfide,
            })
            .collect();
        BlockModel::new(dims, blocks, PrecedencePattern::Nine, PeriodCapacities::new(10.0, 5.0, 5.0))
            .unwrap()
    }

    fn raw_cfg(inflation: Vec<f64>, sd: f64) -> EsmdaConfig {
        EsmdaConfig {
            inflation,
            obs_error_cu: sd,
            obs_error_au: sd,
            space: AssimilationSpace::Raw,
            localization: None,
        }
    }

    fn field(cu: &[f64]) -> GradeField {
        GradeField::new(cu.to_vec(), cu.iter().map(|v| v * 2.0).collect()).unwrap()
    }

    #[test]
    fn inflation_sum_rule() {
        assert!(raw_cfg(vec![4.0; 4], 0.1).validate().is_ok());
        assert!(raw_cfg(vec![5.0; 4], 0.1).validate().is_err());
        assert!(raw_cfg(vec![9.333, 7.0, 4.0, 2.0], 0.1).validate().is_err());
        assert!(raw_cfg(vec![3.0, 3.0, 3.0], 0.1).validate().is_ok());
        assert!(raw_cfg(vec![1.0], 0.0).validate().is_err());
    }

    #[test]
    fn zero_spread_passes_through() {
        let m = line_model(3);
        let members = vec![field(&[0.2, 0.3, 0.4]); 4];
        let b = Belief::new(members.clone(), None).unwrap();
        let obs = [Sample { block: 1, cu: 0.9, au: 0.1 }];
        let post = b
            .assimilate(&m, &obs, &raw_cfg(vec![4.0; 4], 0.05), &mut seed::rng(1))
            .unwrap();
        assert_eq!(post.members(), &members[..]);
        assert_eq!(post.observed(), &obs);
        assert!(b.observed().is_empty());
    }

    #[test]
    fn single_member_update_is_an_error_but_lookahead_passes() {
        let m = line_model(2);
        let b = Belief::new(vec![field(&[0.2, 0.3])], None).unwrap();
        let obs = [Sample { block: 0, cu: 0.2, au: 0.4 }];
        assert!(matches!(
            b.assimilate(&m, &obs, &raw_cfg(vec![1.0], 0.1), &mut seed::rng(0)),
            Err(Error::EnsembleTooSmall(1))
        ));
        let (post, j) = b
            .lookahead(&m, Action::new(1, Destination::SulfideMill), &raw_cfg(vec![1.0], 0.1), &mut seed::rng(0))
            .unwrap();
        assert_eq!(j, 0);
        assert_eq!(post.members(), b.members());
        assert_eq!(post.observed()[0].cu, 0.3);
    }

    #[test]
    fn lookahead_moves_toward_sampled_member() {
        let m = line_model(1);
        let b = Belief::new(vec![field(&[0.1]), field(&[0.2]), field(&[0.3])], None).unwrap();
        let cfg = raw_cfg(vec![1.0], 0.01);
        let post = b
            .lookahead_for_member(&m, Action::new(0, Destination::SulfideMill), 2, &cfg, &mut seed::rng(3))
            .unwrap();
        let mean = post.mean_field().cu[0];
        assert!(mean > 0.2 + 0.05, "posterior mean {mean}");
        // the sampled member reads its own value, so it barely moves
        assert!((post.members()[2].cu[0] - 0.3).abs() < 0.03);
        assert_eq!(b.mean_field().cu[0], 0.2);
    }

    #[test]
    fn scalar_linear_gaussian_matches_kalman() {
        let ne = 500;
        let mut rng = seed::rng(2024);
        let mut members: Vec<Vec<f64>> = (0..ne)
            .map(|_| vec![StandardNormal.sample(&mut rng)])
            .collect();
        esmda_update(&mut members, &[0], &[1.0], &[1.0], &[4.0; 4], None, &mut rng).unwrap();
        let vals: Vec<f64> = members.iter().map(|m| m[0]).collect();
        let mean = vals.iter().sum::<f64>() / ne as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (ne - 1) as f64;
        assert!((mean - 0.5).abs() < 0.05, "mean {mean}");
        assert!((var - 0.5).abs() < 0.05, "var {var}");
    }

    #[test]
    fn update_reduces_misfit_and_keeps_grades_nonnegative() {
        let m = line_model(5);
        let mut rng = seed::rng(5);
        let members: Vec<GradeField> = (0..30)
            .map(|_| {
                let base: f64 = rng.random_range(0.0..0.6);
                field(&(0..5).map(|i| (base + 0.05 * i as f64 - 0.1).max(0.0)).collect::<Vec<_>>())
            })
            .collect();
        let b = Belief::new(members, None).unwrap();
        let obs = [Sample { block: 2, cu: 0.05, au: 0.1 }];
        let before = (b.mean_field().cu[2] - 0.05).powi(2);
        let post = b.assimilate(&m, &obs, &raw_cfg(vec![4.0; 4], 0.01), &mut rng).unwrap();
        let after = (post.mean_field().cu[2] - 0.05).powi(2);
        assert!(after <= before);
        assert!(post.members().iter().all(|f| f.cu.iter().chain(&f.au).all(|v| *v >= 0.0)));
    }

    #[test]
    fn localization_leaves_distant_blocks_alone() {
        let m = line_model(10);
        let mut rng = seed::rng(8);
        let members: Vec<GradeField> = (0..20)
            .map(|_| field(&(0..10).map(|_| rng.random_range(0.1..0.5)).collect::<Vec<_>>()))
            .collect();
        let b = Belief::new(members, None).unwrap();
        let mut cfg = raw_cfg(vec![1.0], 0.01);
        cfg.localization = Some(Localization {
            half_width_xy: 10.0,
            half_width_z: 10.0,
        });
        let obs = [Sample { block: 0, cu: 0.3, au: 0.6 }];
        let post = b.assimilate(&m, &obs, &cfg, &mut rng).unwrap();
        for (a, p) in b.members().iter().zip(post.members()) {
            assert_eq!(a.cu[5..], p.cu[5..]);
        }
        assert!(b.members().iter().zip(post.members()).any(|(a, p)| a.cu[0] != p.cu[0]));
    }

    #[test]
    fn spread_of_identical_and_shifted_members() {
        let b = Belief::new(vec![field(&[0.1, 0.2]); 3], None).unwrap();
        assert_eq!(b.spread_stats(None).unwrap()[0].mean_spread, 0.0);
        let b = Belief::new(vec![field(&[0.1, 0.2, 0.3]), field(&[2.1, 2.2, 2.3])], None).unwrap();
        let s = b.spread_stats(None).unwrap()[0];
        assert!((s.mean_spread - 2f64.sqrt()).abs() < 1e-12);
        assert!(s.spatial_std < 1e-12);
        assert!(s.cv_spread < 1e-12);
    }

    #[test]
    fn spread_stats_arithmetic() {
        let s = SpreadStats::from_spreads(&[1.0, 2.0, 3.0]);
        assert_eq!(s.mean_spread, 2.0);
        assert!((s.spatial_std - 1.0).abs() < 1e-15);
        assert!((s.cv_spread - 0.5).abs() < 1e-15);
    }

    #[test]
    fn spread_ignores_mined_blocks() {
        let b = Belief::new(vec![field(&[0.1, 0.2]), field(&[0.1, 0.4])], None).unwrap();
        let s = b.spread_stats(Some(&[false, true])).unwrap()[0];
        assert_eq!(s.mean_spread, 0.0);
        assert!(Belief::new(vec![field(&[0.1])], None).unwrap().spread_stats(None).is_err());
    }

    #[test]
    fn gaspari_cohn_shape() {
        assert_eq!(gaspari_cohn(0.0), 1.0);
        assert!((gaspari_cohn(1.0) - 0.2083333333333333).abs() < 1e-12);
        assert!(gaspari_cohn(1.999).abs() < 1e-6);
        assert_eq!(gaspari_cohn(2.5), 0.0);
    }
}

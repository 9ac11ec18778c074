//! Sequential Gaussian simulation on the block grid.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{DrillholeData, GradeField, NormalScoreTable, Variogram};
use crate::block_model::BlockModel;
use crate::error::Result;
use crate::seed;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SgsParams {
    pub variogram: Variogram,
    pub n_neighbors: usize,
    pub cu_table: Arc<NormalScoreTable>,
    pub au_table: Arc<NormalScoreTable>,
}

/// Grid offsets inside the variogram range, nearest first.
fn search_offsets(model: &BlockModel, v: &Variogram) -> Vec<(i64, i64, i64, f64, f64)> {
    let dims = model.dims();
    let (sx, sy, sz) = cell_size(model);
    let reach = |range: f64, size: f64, n: usize| ((range / size).ceil() as i64).min(n as i64 - 1);
    let (rx, ry, rz) = (
        reach(v.range_xy, sx, dims.nx),
        reach(v.range_xy, sy, dims.ny),
        reach(v.range_z, sz, dims.nz),
    );
    let mut out = Vec::new();
    for dz in -rz..=rz {
        for dy in -ry..=ry {
            for dx in -rx..=rx {
                if dx == 0 && dy == 0 && dz == 0 {
                    continue;
                }
                let h_xy = ((dx as f64 * sx).powi(2) + (dy as f64 * sy).powi(2)).sqrt();
                let h_z = (dz as f64 * sz).abs();
                if v.reduced_lag(h_xy, h_z) < 1.0 {
                    out.push((dx, dy, dz, h_xy, h_z));
                }
            }
        }
    }
    out.sort_by(|a, b| {
        let ha = v.reduced_lag(a.3, a.4);
        let hb = v.reduced_lag(b.3, b.4);
        ha.total_cmp(&hb)
            .then((a.2, a.1, a.0).cmp(&(b.2, b.1, b.0)))
    });
    out
}

/// Centroid spacing along each axis; 1 for singleton axes.
fn cell_size(model: &BlockModel) -> (f64, f64, f64) {
    let dims = model.dims();
    let origin = model.block(0);
    let step = |id: usize, f: fn(&crate::block_model::Block) -> f64| -> f64 {
        let d = (f(model.block(id)) - f(origin)).abs();
        if d > 0.0 {
            d
        } else {
            1.0
        }
    };
    let sx = if dims.nx > 1 { step(dims.index(1, 0, 0), |b| b.x) } else { 1.0 };
    let sy = if dims.ny > 1 { step(dims.index(0, 1, 0), |b| b.y) } else { 1.0 };
    let sz = if dims.nz > 1 { step(dims.index(0, 0, 1), |b| b.z) } else { 1.0 };
    (sx, sy, sz)
}

/// One realization conditioned on `drillholes`. Cu and Au are simulated as
/// independent Gaussian fields sharing the random path and kriging weights.
pub fn sgs_simulate(
    model: &BlockModel,
    drillholes: &DrillholeData,
    params: &SgsParams,
    seed: u64,
) -> Result<GradeField> {
    params.variogram.validate()?;
    let v = &params.variogram;
    let dims = model.dims();
    let n = model.len();
    let mut rng = seed::rng(seed);

    let mut informed = vec![false; n];
    let mut z_cu = vec![0.0; n];
    let mut z_au = vec![0.0; n];
    let mut cu = vec![0.0; n];
    let mut au = vec![0.0; n];
    for s in &drillholes.samples {
        informed[s.block] = true;
        z_cu[s.block] = params.cu_table.transform(s.cu);
        z_au[s.block] = params.au_table.transform(s.au);
        cu[s.block] = s.cu;
        au[s.block] = s.au;
    }

    let mut path: Vec<usize> = (0..n).filter(|&b| !informed[b]).collect();
    path.shuffle(&mut rng);
    let offsets = search_offsets(model, v);
    let mut neigh: Vec<(usize, f64, f64)> = Vec::with_capacity(params.n_neighbors);

    for &node in &path {
        let (ix, iy, iz) = dims.position(node);
        neigh.clear();
        for &(dx, dy, dz, h_xy, h_z) in &offsets {
            if neigh.len() == params.n_neighbors {
                break;
            }
            let (px, py, pz) = (ix as i64 + dx, iy as i64 + dy, iz as i64 + dz);
            if px < 0
                || py < 0
                || pz < 0
                || px >= dims.nx as i64
                || py >= dims.ny as i64
                || pz >= dims.nz as i64
            {
                continue;
            }
            let id = dims.index(px as usize, py as usize, pz as usize);
            if informed[id] {
                neigh.push((id, h_xy, h_z));
            }
        }

        let (mean_cu, mean_au, var) = if neigh.is_empty() {
            (0.0, 0.0, v.sill)
        } else {
            match simple_kriging(model, v, &neigh, node) {
                Some(w) => {
                    let mut m_cu = 0.0;
                    let mut m_au = 0.0;
                    let mut explained = 0.0;
                    for (k, &(id, h_xy, h_z)) in neigh.iter().enumerate() {
                        m_cu += w[k] * z_cu[id];
                        m_au += w[k] * z_au[id];
                        explained += w[k] * v.covariance(h_xy, h_z);
                    }
                    (m_cu, m_au, (v.sill - explained).max(0.0))
                }
                None => {
                    log::warn!("singular kriging system at block {node}; drawing from the prior");
                    (0.0, 0.0, v.sill)
                }
            }
        };
        let sd = var.sqrt();
        let e_cu: f64 = StandardNormal.sample(&mut rng);
        let e_au: f64 = StandardNormal.sample(&mut rng);
        z_cu[node] = mean_cu + sd * e_cu;
        z_au[node] = mean_au + sd * e_au;
        cu[node] = params.cu_table.back_transform(z_cu[node]).max(0.0);
        au[node] = params.au_table.back_transform(z_au[node]).max(0.0);
        informed[node] = true;
    }
    GradeField::new(cu, au)
}

fn block_lag(model: &BlockModel, a: usize, b: usize) -> (f64, f64) {
    let (ba, bb) = (model.block(a), model.block(b));
    let h_xy = ((ba.x - bb.x).powi(2) + (ba.y - bb.y).powi(2)).sqrt();
    (h_xy, (ba.z - bb.z).abs())
}

/// Simple-kriging weights, or `None` when the system is singular.
fn simple_kriging(
    model: &BlockModel,
    v: &Variogram,
    neigh: &[(usize, f64, f64)],
    _node: usize,
) -> Option<Vec<f64>> {
    let k = neigh.len();
    let lhs = DMatrix::from_fn(k, k, |i, j| {
        if i == j {
            v.sill
        } else {
            let (h_xy, h_z) = block_lag(model, neigh[i].0, neigh[j].0);
            v.covariance(h_xy, h_z)
        }
    });
    let rhs = DVector::from_iterator(k, neigh.iter().map(|&(_, h_xy, h_z)| v.covariance(h_xy, h_z)));
    let chol = lhs.cholesky()?;
    let w = chol.solve(&rhs);
    w.iter().all(|x| x.is_finite()).then(|| w.iter().copied().collect())
}

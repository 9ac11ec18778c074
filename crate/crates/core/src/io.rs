//! CSV and JSON persistence of deposits, drillholes and ensembles.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::block_model::{Block, Zone};
use crate::error::{Error, Result};
use crate::geostat::{DrillholeData, Ensemble, GradeField, Sample, Variogram};

#[derive(Debug, Serialize, Deserialize)]
struct BlockRow {
    id: usize,
    ix: usize,
    iy: usize,
    iz: usize,
    x: f64,
    y: f64,
    z: f64,
    tonnes: f64,
    zone: Zone,
}

pub fn write_blocks(path: &Path, blocks: &[Block]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for b in blocks {
        w.serialize(BlockRow {
            id: b.id,
            ix: b.ix,
            iy: b.iy,
            iz: b.iz,
            x: b.x,
            y: b.y,
            z: b.z,
            tonnes: b.tonnes,
            zone: b.zone,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_blocks(path: &Path) -> Result<Vec<Block>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize::<BlockRow>()
        .map(|row| {
            let b = row?;
            Ok(Block {
                id: b.id,
                ix: b.ix,
                iy: b.iy,
                iz: b.iz,
                x: b.x,
                y: b.y,
                z: b.z,
                tonnes: b.tonnes,
                zone: b.zone,
            })
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct DrillRow {
    block_id: usize,
    cu_pct: f64,
    au_gpt: f64,
}

pub fn write_drillholes(path: &Path, d: &DrillholeData) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for s in &d.samples {
        w.serialize(DrillRow {
            block_id: s.block,
            cu_pct: s.cu,
            au_gpt: s.au,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_drillholes(path: &Path) -> Result<DrillholeData> {
    let mut r = csv::Reader::from_path(path)?;
    let samples = r
        .deserialize::<DrillRow>()
        .map(|row| {
            let s = row?;
            Ok(Sample {
                block: s.block_id,
                cu: s.cu_pct,
                au: s.au_gpt,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    DrillholeData::new(samples)
}

/// Writes one metal as an `n_blocks x n_fields` matrix without header.
pub fn write_matrix(path: &Path, fields: &[GradeField], cu: bool) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let n = fields.first().map_or(0, |f| f.len());
    for b in 0..n {
        let row: Vec<String> = fields
            .iter()
            .map(|f| format!("{}", if cu { f.cu[b] } else { f.au[b] }))
            .collect();
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("{}: `{v}`: {e}", path.display())))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

/// Metadata written next to the ensemble matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSidecar {
    pub n_blocks: usize,
    pub n_realizations: usize,
    pub truth_index: usize,
    pub n_belief_members: usize,
    pub master_seed: u64,
    pub realization_seeds: Vec<u64>,
    pub variogram: Variogram,
}

pub fn write_ensemble(dir: &Path, ensemble: &Ensemble, sidecar: &EnsembleSidecar) -> Result<()> {
    write_matrix(&dir.join("ensemble_cu.csv"), &ensemble.realizations, true)?;
    write_matrix(&dir.join("ensemble_au.csv"), &ensemble.realizations, false)?;
    write_json(&dir.join("ensemble.json"), sidecar)
}

pub fn read_ensemble(dir: &Path) -> Result<(Ensemble, EnsembleSidecar)> {
    let sidecar: EnsembleSidecar = read_json(&dir.join("ensemble.json"))?;
    let cu = read_matrix(&dir.join("ensemble_cu.csv"))?;
    let au = read_matrix(&dir.join("ensemble_au.csv"))?;
    let shape_ok = |m: &Vec<Vec<f64>>| {
        m.len() == sidecar.n_blocks && m.iter().all(|r| r.len() == sidecar.n_realizations)
    };
    if !shape_ok(&cu) || !shape_ok(&au) {
        return Err(Error::Parse(format!(
            "ensemble matrices do not match {} blocks x {} realizations",
            sidecar.n_blocks, sidecar.n_realizations
        )));
    }
    if sidecar.truth_index >= sidecar.n_realizations {
        return Err(Error::Parse("truth index out of range".into()));
    }
    let realizations = (0..sidecar.n_realizations)
        .map(|j| {
            GradeField::new(
                cu.iter().map(|r| r[j]).collect(),
                au.iter().map(|r| r[j]).collect(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((
        Ensemble {
            realizations,
            seeds: sidecar.realization_seeds.clone(),
            truth_index: sidecar.truth_index,
        },
        sidecar,
    ))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let r = BufReader::new(File::open(path)?);
    Ok(serde_json::from_reader(r)?)
}

/// Serializes `rows` to a CSV file with a header from the row type.
pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use crate::run::RunManifest;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub nodes: usize,
    pub max_diff: f64,
    pub mean_diff: f64,
    /// Per boundary curve, `sup_x |log b_a - log b_b|` in `log phi` cells.
    pub boundary_cells: Vec<(String, f64)>,
    /// Per boundary curve, `sup_x |b_a - b_b|`.
    pub boundary_sup: Vec<(String, f64)>,
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<f64>>,
}

fn read_table(path: &Path) -> Result<Table> {
    let mut rd = csv::Reader::from_path(path).with_context(|| format!("cannot read {}", path.display()))?;
    let header = rd.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        // Non-numeric columns (region labels) are dropped.
        rows.push(rec.iter().map(|s| s.parse::<f64>().unwrap_or(f64::NAN)).collect());
    }
    Ok(Table { header, rows })
}

fn artifact_table(dir: &Path, m: &RunManifest, name: &str) -> Result<Table> {
    if m.artifact(name).is_none() {
        bail!("run {} has no {name}", dir.display());
    }
    read_table(&dir.join(name))
}

fn log_phi_step(values: &Table) -> f64 {
    let mut phis: Vec<f64> = values.rows.iter().map(|r| r[0]).filter(|p| *p > 0.0).collect();
    phis.sort_by(f64::total_cmp);
    phis.dedup();
    if phis.len() < 2 {
        return f64::NAN;
    }
    (phis[1] / phis[0]).ln()
}

/// Node-wise value differences and boundary distances of two runs that
/// share grid and mode.
pub fn compare_runs(a: &Path, b: &Path) -> Result<CompareReport> {
    let (da, ma) = RunManifest::load(a)?;
    let (db, mb) = RunManifest::load(b)?;
    ma.validate(&da)?;
    mb.validate(&db)?;
    let ms = |m: &RunManifest| m.config.mode.map(|x| x.is_testing());
    if ms(&ma) != ms(&mb) {
        bail!("runs solve different problems");
    }
    let va = artifact_table(&da, &ma, "value.csv")?;
    let vb = artifact_table(&db, &mb, "value.csv")?;
    if va.rows.len() != vb.rows.len()
        || va.rows.iter().zip(&vb.rows).any(|(p, q)| {
            (p[0] - q[0]).abs() > 1e-12 * p[0].abs().max(1.0) || (p[1] - q[1]).abs() > 1e-12 * p[1].abs().max(1.0)
        })
    {
        bail!("incompatible grids");
    }
    let diffs: Vec<f64> = va.rows.iter().zip(&vb.rows).map(|(p, q)| (p[2] - q[2]).abs()).collect();
    let max_diff = diffs.iter().fold(0.0f64, |m, d| m.max(*d));
    let mean_diff = diffs.iter().sum::<f64>() / diffs.len().max(1) as f64;

    let h = log_phi_step(&va);
    let ba = artifact_table(&da, &ma, "boundaries.csv")?;
    let bb = artifact_table(&db, &mb, "boundaries.csv")?;
    if ba.header != bb.header || ba.rows.len() != bb.rows.len() {
        bail!("boundary files differ in shape");
    }
    let mut boundary_cells = Vec::new();
    let mut boundary_sup = Vec::new();
    for (c, name) in ba.header.iter().enumerate().skip(1) {
        let (mut cells, mut sup) = (0.0f64, 0.0f64);
        for (p, q) in ba.rows.iter().zip(&bb.rows) {
            sup = sup.max((p[c] - q[c]).abs());
            cells = cells.max((p[c].ln() - q[c].ln()).abs() / h);
        }
        boundary_cells.push((name.clone(), cells));
        boundary_sup.push((name.clone(), sup));
    }
    Ok(CompareReport {
        nodes: diffs.len(),
        max_diff,
        mean_diff,
        boundary_cells,
        boundary_sup,
    })
}

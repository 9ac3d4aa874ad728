//! CSV artifacts exchanged between pipeline stages.
//!
//! Every numeric cell is written with at most 15 significant digits in the
//! shortest form that reads back to the same value, so reruns are
//! byte-identical.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::Deserialize;

use crate::cfpca::{EigenSystem, ScoreMatrix};
use crate::clustering::{ClusterResult, SelectionRow};
use crate::compdata::{closure, ClrCurve, FunctionalComposition, TimeGrid, DEFAULT_PSEUDOCOUNT};
use crate::error::{Error, Result};
use crate::ingest::{ConservationRow, Reject};
use crate::smoothing::MissingMask;

/// Shortest decimal text of `x` rounded to 15 significant digits.
pub fn fmt_num(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let rounded: f64 = format!("{x:.14e}").parse().expect("scientific notation parses");
    format!("{rounded}")
}

fn fmt_year(t: f64) -> String {
    if t.fract() == 0.0 && t.abs() < 1e9 {
        format!("{}", t as i64)
    } else {
        fmt_num(t)
    }
}

/// Writes rows to `path`, creating parent directories.
pub struct CsvOut {
    path: std::path::PathBuf,
    out: BufWriter<File>,
}

impl CsvOut {
    pub fn create(path: &Path, header: &[&str]) -> Result<Self> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = Self { path: path.to_path_buf(), out: BufWriter::new(file) };
        w.row(header.iter().map(|s| s.to_string()))?;
        Ok(w)
    }

    pub fn row(&mut self, cells: impl IntoIterator<Item = String>) -> Result<()> {
        let line: Vec<String> = cells.into_iter().map(|c| quote(&c)).collect();
        writeln!(self.out, "{}", line.join(",")).map_err(|e| Error::io(&self.path, e))
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

fn quote(cell: &str) -> String {
    if cell.contains([',', '"', '\n']) {
        format!("\"{}\"", cell.replace('"', "\"\""))
    } else {
        cell.to_string()
    }
}

fn open(path: &Path) -> Result<csv::Reader<File>> {
    if !path.exists() {
        return Err(Error::MissingUpstreamArtifact(path.to_path_buf()));
    }
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    open(path)?
        .deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| Error::malformed(path, e.to_string()))
}

fn write_curve_rows(
    w: &mut CsvOut,
    id: &str,
    names: &[String],
    grid: &TimeGrid,
    values: &DMatrix<f64>,
) -> Result<()> {
    for (d, part) in names.iter().enumerate() {
        for (i, &t) in grid.points().iter().enumerate() {
            w.row([id.to_string(), part.clone(), fmt_year(t), fmt_num(values[(d, i)])])?;
        }
    }
    Ok(())
}

/// `id,part,year,value`, one row per curve, part and grid point.
pub fn write_compositions(path: &Path, curves: &[FunctionalComposition]) -> Result<()> {
    let mut w = CsvOut::create(path, &["id", "part", "year", "value"])?;
    for f in curves {
        write_curve_rows(&mut w, f.id(), f.part_names(), f.grid(), f.parts())?;
    }
    w.finish()
}

pub fn write_clr_curves(path: &Path, curves: &[ClrCurve]) -> Result<()> {
    let mut w = CsvOut::create(path, &["id", "part", "year", "value"])?;
    for c in curves {
        write_curve_rows(&mut w, c.id(), c.part_names(), c.grid(), c.coords())?;
    }
    w.finish()
}

#[derive(Deserialize)]
struct CurveRow {
    #[serde(alias = "component")]
    id: String,
    part: String,
    year: f64,
    value: f64,
}

struct RawCurve {
    id: String,
    names: Vec<String>,
    grid: TimeGrid,
    values: DMatrix<f64>,
}

/// Groups long-format rows by id (first-appearance order) into `D x T` matrices.
fn read_curves(path: &Path) -> Result<Vec<RawCurve>> {
    let rows: Vec<CurveRow> = rows(path)?;
    if rows.is_empty() {
        return Err(Error::malformed(path, "no rows"));
    }
    let mut order: Vec<String> = Vec::new();
    let mut by_id: BTreeMap<String, Vec<&CurveRow>> = BTreeMap::new();
    for r in &rows {
        if !by_id.contains_key(&r.id) {
            order.push(r.id.clone());
        }
        by_id.entry(r.id.clone()).or_default().push(r);
    }
    let mut out = Vec::with_capacity(order.len());
    for id in order {
        let rs = &by_id[&id];
        let mut names: Vec<String> = Vec::new();
        let mut years: Vec<f64> = Vec::new();
        for r in rs {
            if !names.contains(&r.part) {
                names.push(r.part.clone());
            }
            if !years.contains(&r.year) {
                years.push(r.year);
            }
        }
        if rs.len() != names.len() * years.len() {
            return Err(Error::malformed(path, format!("curve `{id}` is not a full part x year table")));
        }
        let grid =
            TimeGrid::new(years.clone()).map_err(|e| Error::malformed(path, format!("curve `{id}`: {e}")))?;
        let mut values = DMatrix::from_element(names.len(), years.len(), f64::NAN);
        for r in rs {
            let d = names.iter().position(|n| *n == r.part).unwrap();
            let i = years.iter().position(|y| *y == r.year).unwrap();
            values[(d, i)] = r.value;
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::malformed(path, format!("curve `{id}` repeats a part-year cell")));
        }
        out.push(RawCurve { id, names, grid, values });
    }
    Ok(out)
}

/// Reads compositions, re-closing each column to absorb rounding.
pub fn read_compositions(path: &Path) -> Result<Vec<FunctionalComposition>> {
    read_curves(path)?
        .into_iter()
        .map(|c| {
            closure(c.id, c.names, c.grid, &c.values, DEFAULT_PSEUDOCOUNT)
                .map_err(|e| Error::malformed(path, e.to_string()))
        })
        .collect()
}

pub fn read_clr_curves(path: &Path) -> Result<Vec<ClrCurve>> {
    read_curves(path)?.into_iter().map(|c| ClrCurve::project(c.id, c.names, c.grid, c.values)).collect()
}

/// `id,year,missing` with `missing` in {0, 1}.
pub fn write_masks(path: &Path, masks: &[MissingMask], grid: &TimeGrid) -> Result<()> {
    let mut w = CsvOut::create(path, &["id", "year", "missing"])?;
    for m in masks {
        for (&t, &miss) in grid.points().iter().zip(&m.missing) {
            w.row([m.id.clone(), fmt_year(t), u8::from(miss).to_string()])?;
        }
    }
    w.finish()
}

#[derive(Deserialize)]
struct MaskRow {
    id: String,
    missing: u8,
}

pub fn read_masks(path: &Path) -> Result<Vec<MissingMask>> {
    let mut out: Vec<MissingMask> = Vec::new();
    for r in rows::<MaskRow>(path)? {
        match out.last_mut() {
            Some(m) if m.id == r.id => m.missing.push(r.missing != 0),
            _ => out.push(MissingMask { id: r.id, missing: vec![r.missing != 0] }),
        }
    }
    Ok(out)
}

/// `component,eigenvalue,fev,cumulative_fev` for every retained component.
pub fn write_eigenvalues(path: &Path, eig: &EigenSystem) -> Result<()> {
    let mut w = CsvOut::create(path, &["component", "eigenvalue", "fev", "cumulative_fev"])?;
    let cum = eig.cumulative_fev();
    for (k, c) in cum.iter().enumerate().take(eig.n_components()) {
        w.row([format!("PC{}", k + 1), fmt_num(eig.eigenvalues[k]), fmt_num(eig.fev[k]), fmt_num(*c)])?;
    }
    w.finish()
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct EigenvalueRow {
    pub component: String,
    pub eigenvalue: f64,
    pub fev: f64,
    pub cumulative_fev: f64,
}

pub fn read_eigenvalues(path: &Path) -> Result<Vec<EigenvalueRow>> {
    rows(path)
}

/// `component,part,year,value` for the first `k` eigenfunctions.
pub fn write_eigenfunctions(path: &Path, eig: &EigenSystem, k: usize, simplex: bool) -> Result<()> {
    let mut w = CsvOut::create(path, &["component", "part", "year", "value"])?;
    for j in 0..k.min(eig.n_components()) {
        let label = format!("PC{}", j + 1);
        if simplex {
            let f = &eig.simplex_eigenfunctions[j];
            write_curve_rows(&mut w, &label, f.part_names(), f.grid(), f.parts())?;
        } else {
            let c = &eig.clr_eigenfunctions[j];
            write_curve_rows(&mut w, &label, c.part_names(), c.grid(), c.coords())?;
        }
    }
    w.finish()
}

/// Reads clr eigenfunctions written by [`write_eigenfunctions`].
pub fn read_clr_eigenfunctions(path: &Path) -> Result<Vec<ClrCurve>> {
    read_clr_curves(path)
}

/// Rebuilds the parts of an eigen system needed for reconstruction and plots.
pub fn read_eigensystem(eigenvalues: &Path, clr_eigenfunctions: &Path, n: usize) -> Result<EigenSystem> {
    let values = read_eigenvalues(eigenvalues)?;
    let phis = read_clr_eigenfunctions(clr_eigenfunctions)?;
    if values.len() < phis.len() {
        return Err(Error::malformed(eigenvalues, "fewer eigenvalues than eigenfunctions"));
    }
    let simplex = phis.iter().map(crate::compdata::clr_inv).collect::<Result<Vec<_>>>()?;
    let total_variance = match values.first() {
        Some(v) if v.fev > 0.0 => v.eigenvalue / v.fev,
        _ => 0.0,
    };
    let k = phis.len();
    Ok(EigenSystem {
        eigenvalues: values.iter().take(k).map(|v| v.eigenvalue).collect(),
        fev: values.iter().take(k).map(|v| v.fev).collect(),
        clr_eigenfunctions: phis,
        simplex_eigenfunctions: simplex,
        total_variance,
        n,
        k_max: k,
    })
}

/// `id,component,score`.
pub fn write_scores(path: &Path, scores: &ScoreMatrix) -> Result<()> {
    let mut w = CsvOut::create(path, &["id", "component", "score"])?;
    for (i, id) in scores.ids.iter().enumerate() {
        for (k, comp) in scores.components.iter().enumerate() {
            w.row([id.clone(), comp.clone(), fmt_num(scores.values[(i, k)])])?;
        }
    }
    w.finish()
}

#[derive(Deserialize)]
struct ScoreRow {
    id: String,
    component: String,
    score: f64,
}

pub fn read_scores(path: &Path) -> Result<ScoreMatrix> {
    let rs: Vec<ScoreRow> = rows(path)?;
    let mut ids: Vec<String> = Vec::new();
    let mut comps: Vec<String> = Vec::new();
    for r in &rs {
        if !ids.contains(&r.id) {
            ids.push(r.id.clone());
        }
        if !comps.contains(&r.component) {
            comps.push(r.component.clone());
        }
    }
    if ids.is_empty() || rs.len() != ids.len() * comps.len() {
        return Err(Error::malformed(path, "scores are not a full id x component table"));
    }
    let mut values = DMatrix::zeros(ids.len(), comps.len());
    for r in &rs {
        let i = ids.iter().position(|x| *x == r.id).unwrap();
        let k = comps.iter().position(|x| *x == r.component).unwrap();
        values[(i, k)] = r.score;
    }
    ScoreMatrix::new(ids, comps, values)
}

/// `id,label,silhouette`, with 1-based labels.
pub fn write_clusters(path: &Path, ids: &[String], result: &ClusterResult) -> Result<()> {
    let mut w = CsvOut::create(path, &["id", "label", "silhouette"])?;
    for (i, id) in ids.iter().enumerate() {
        w.row([id.clone(), (result.labels[i] + 1).to_string(), fmt_num(result.per_point_silhouette[i])])?;
    }
    w.finish()
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ClusterRow {
    pub id: String,
    pub label: usize,
    pub silhouette: f64,
}

pub fn read_clusters(path: &Path) -> Result<Vec<ClusterRow>> {
    rows(path)
}

/// `G,silhouette_mean,vote_share`.
pub fn write_selection(path: &Path, rows: &[SelectionRow]) -> Result<()> {
    let mut w = CsvOut::create(path, &["G", "silhouette_mean", "vote_share"])?;
    for r in rows {
        w.row([r.g.to_string(), fmt_num(r.silhouette_mean), fmt_num(r.vote_share)])?;
    }
    w.finish()
}

/// `cluster,component,score` for the score-space centroids.
pub fn write_centroid_scores(path: &Path, centroids: &DMatrix<f64>, components: &[String]) -> Result<()> {
    let mut w = CsvOut::create(path, &["cluster", "component", "score"])?;
    for g in 0..centroids.nrows() {
        for (k, c) in components.iter().enumerate() {
            w.row([(g + 1).to_string(), c.clone(), fmt_num(centroids[(g, k)])])?;
        }
    }
    w.finish()
}

/// `line,reason`.
pub fn write_rejects(path: &Path, rejects: &[Reject]) -> Result<()> {
    let mut w = CsvOut::create(path, &["line", "reason"])?;
    for r in rejects {
        w.row([r.line.to_string(), r.reason.clone()])?;
    }
    w.finish()
}

/// `country,sex,year,input,classified,excluded`.
pub fn write_conservation(path: &Path, rows: &[ConservationRow]) -> Result<()> {
    let mut w = CsvOut::create(path, &["country", "sex", "year", "input", "classified", "excluded"])?;
    for r in rows {
        w.row([
            r.country.clone(),
            r.sex.to_string(),
            r.year.to_string(),
            r.input.to_string(),
            r.classified.to_string(),
            r.excluded.to_string(),
        ])?;
    }
    w.finish()
}

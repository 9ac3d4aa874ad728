//! Stage-by-stage driver: ingest, smooth, pca, cluster, plot.
//!
//! Stages talk to each other only through CSV files under the output
//! directory, so `all` and a sequence of single-stage runs write the same bytes.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cfpca::{self, component_envelope, reconstruct, MeanComposition};
use crate::clustering::{
    laplacian_spectrum, majority_vote_with, select_g, similarity, ClusterOptions, SilhouetteOptions,
};
use crate::compdata::DEFAULT_PSEUDOCOUNT;
use crate::error::{Error, ErrorKind, Result};
use crate::ingest::{self, AgeWindow, BuildOptions, CauseMap, FormatConfig, Sex};
use crate::io;
use crate::plot;
use crate::smoothing::{
    impute_missing, smooth_composition_masked, MissingMask, SmoothingConfig, DEFAULT_RIDGE,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Ingest,
    Smooth,
    Pca,
    Cluster,
    Plot,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::Ingest, Stage::Smooth, Stage::Pca, Stage::Cluster, Stage::Plot];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Smooth => "smooth",
            Stage::Pca => "pca",
            Stage::Cluster => "cluster",
            Stage::Plot => "plot",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SexSelection {
    Men,
    Women,
    #[default]
    Both,
}

impl SexSelection {
    pub fn sexes(self) -> Vec<Sex> {
        match self {
            SexSelection::Men => vec![Sex::Male],
            SexSelection::Women => vec![Sex::Female],
            SexSelection::Both => Sex::BOTH.to_vec(),
        }
    }
}

impl std::str::FromStr for SexSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "men" => Ok(SexSelection::Men),
            "women" => Ok(SexSelection::Women),
            "both" => Ok(SexSelection::Both),
            _ => Err(Error::Config(format!("sex must be men, women or both, got `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub data: Vec<PathBuf>,
    pub format: Option<PathBuf>,
    /// Defaults to the bundled cause map.
    pub cause_map: Option<PathBuf>,
    /// Defaults to the bundled adjustments.
    pub adjustments: Option<PathBuf>,
    pub output: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct YearWindow {
    pub first: i32,
    pub last: i32,
}

impl Default for YearWindow {
    fn default() -> Self {
        Self { first: 1959, last: 2015 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PcaConfig {
    /// Components kept for scores, clustering and reconstruction.
    pub components: usize,
    /// Multiple of `sqrt(lambda)` used for the plotted envelopes.
    pub envelope_scale: f64,
}

impl Default for PcaConfig {
    fn default() -> Self {
        Self { components: cfpca::DEFAULT_COMPONENTS, envelope_scale: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusteringConfig {
    pub sigma: f64,
    pub repetitions: usize,
    pub g_min: usize,
    pub g_max: usize,
    pub master_seed: u64,
    pub silhouette_literal: bool,
    pub silhouette_unsquared: bool,
    /// Cluster count reported for men instead of the silhouette choice.
    pub g_men: Option<usize>,
    pub g_women: Option<usize>,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        Self {
            sigma: crate::clustering::DEFAULT_SIGMA,
            repetitions: crate::clustering::DEFAULT_REPETITIONS,
            g_min: 2,
            g_max: 8,
            master_seed: 1,
            silhouette_literal: false,
            silhouette_unsquared: false,
            g_men: None,
            g_women: None,
        }
    }
}

impl ClusteringConfig {
    fn options(&self) -> ClusterOptions {
        ClusterOptions {
            silhouette: SilhouetteOptions {
                unsquared: self.silhouette_unsquared,
                literal: self.silhouette_literal,
            },
        }
    }

    fn override_for(&self, sex: Option<Sex>) -> Option<usize> {
        match sex {
            Some(Sex::Male) => self.g_men,
            Some(Sex::Female) => self.g_women,
            None => None,
        }
    }
}

fn default_countries() -> Vec<String> {
    ingest::DEFAULT_COUNTRIES.iter().map(|s| s.to_string()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub sex: SexSelection,
    /// Country labels to analyse; `["*"]` keeps every country in the data.
    pub countries: Vec<String>,
    pub pseudocount: f64,
    pub impute_ridge: f64,
    pub paths: Paths,
    pub years: YearWindow,
    pub ages: AgeWindow,
    pub smoothing: SmoothingConfig,
    pub pca: PcaConfig,
    pub clustering: ClusteringConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            sex: SexSelection::Both,
            countries: default_countries(),
            pseudocount: DEFAULT_PSEUDOCOUNT,
            impute_ridge: DEFAULT_RIDGE,
            paths: Paths { output: PathBuf::from("out"), ..Paths::default() },
            years: YearWindow::default(),
            ages: AgeWindow::default(),
            smoothing: SmoothingConfig::default(),
            pca: PcaConfig::default(),
            clustering: ClusteringConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Parses TOML; relative paths are resolved against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        cfg.paths.data.iter_mut().for_each(resolve);
        cfg.paths.format.iter_mut().for_each(resolve);
        cfg.paths.cause_map.iter_mut().for_each(resolve);
        cfg.paths.adjustments.iter_mut().for_each(resolve);
        resolve(&mut cfg.paths.output);
        cfg.validate()?;
        cfg.check_files()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.pca.components == 0 {
            return bad("pca.components must be at least 1".into());
        }
        if !(self.pca.envelope_scale > 0.0 && self.pca.envelope_scale.is_finite()) {
            return bad("pca.envelope_scale must be positive".into());
        }
        let c = &self.clustering;
        if c.repetitions == 0 {
            return bad("clustering.repetitions must be at least 1".into());
        }
        if !(c.sigma > 0.0 && c.sigma.is_finite()) {
            return bad(format!("clustering.sigma must be positive, got {}", c.sigma));
        }
        if c.g_min < 2 || c.g_min > c.g_max {
            return bad(format!("clustering g range {}..={} is invalid", c.g_min, c.g_max));
        }
        if let Some(g) = c.g_men.into_iter().chain(c.g_women).find(|&g| g < 2) {
            return bad(format!("cluster count override {g} is below 2"));
        }
        if self.years.first > self.years.last {
            return bad(format!("year window {}-{} is empty", self.years.first, self.years.last));
        }
        if self.ages.from > self.ages.to {
            return bad("age window is empty".into());
        }
        if !(self.pseudocount > 0.0 && self.pseudocount.is_finite()) {
            return bad("pseudocount must be positive".into());
        }
        if !(self.impute_ridge >= 0.0 && self.impute_ridge.is_finite()) {
            return bad("impute_ridge must be nonnegative".into());
        }
        self.smoothing.validate().map_err(|e| Error::Config(e.to_string()))
    }

    /// Every input file named in the configuration must exist.
    pub fn check_files(&self) -> Result<()> {
        let p = &self.paths;
        for f in p.data.iter().chain(&p.format).chain(&p.cause_map).chain(&p.adjustments) {
            if !f.is_file() {
                return Err(Error::Config(format!("input file {} does not exist", f.display())));
            }
        }
        Ok(())
    }

    pub fn sample_dir(&self, sex: Sex) -> PathBuf {
        self.paths.output.join(sex.sample_label())
    }

    fn build_options(&self) -> BuildOptions {
        BuildOptions {
            first_year: self.years.first,
            last_year: self.years.last,
            age_window: self.ages,
            pseudocount: self.pseudocount,
            countries: (self.countries.iter().all(|c| c != "*")).then(|| self.countries.clone()),
        }
    }
}

/// Output names inside a sample directory.
pub mod files {
    pub const RAW: &str = "raw.csv";
    pub const MASK: &str = "mask.csv";
    pub const SMOOTHED: &str = "smoothed.csv";
    pub const MEAN: &str = "mean.csv";
    pub const EIGENVALUES: &str = "eigenvalues.csv";
    pub const EIGENFUNCTIONS: &str = "eigenfunctions.csv";
    pub const EIGENFUNCTIONS_CLR: &str = "eigenfunctions_clr.csv";
    pub const SCORES: &str = "scores.csv";
    pub const ENVELOPES: &str = "envelopes.csv";
    pub const SELECTION: &str = "selection.csv";
    pub const CLUSTERS: &str = "clusters.csv";
    pub const LAPLACIAN: &str = "laplacian.csv";
    pub const CENTROID_SCORES: &str = "centroid_scores.csv";
    pub const CENTROIDS: &str = "centroids.csv";
    pub const REJECTS: &str = "rejects.csv";
    pub const CONSERVATION: &str = "conservation.csv";
    pub const MANIFEST: &str = "manifest.json";
}

#[derive(Debug, Clone, Default)]
pub struct StageReport {
    pub written: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

impl StageReport {
    fn merge(&mut self, other: StageReport) {
        self.written.extend(other.written);
        self.warnings.extend(other.warnings);
    }
}

/// An error tagged with the stage that raised it.
#[derive(Debug)]
pub struct StageError {
    pub stage: Stage,
    pub error: Error,
}

impl StageError {
    pub fn kind(&self) -> ErrorKind {
        self.error.kind()
    }
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage `{}` failed: {}", self.stage, self.error)
    }
}

impl std::error::Error for StageError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

/// Parses, classifies and aggregates the records into raw compositions and masks.
pub fn ingest(cfg: &PipelineConfig) -> Result<StageReport> {
    let format_path = cfg
        .paths
        .format
        .as_ref()
        .ok_or_else(|| Error::Config("paths.format is required for ingest".into()))?;
    if cfg.paths.data.is_empty() {
        return Err(Error::Config("paths.data lists no input files".into()));
    }
    let format = FormatConfig::from_path(format_path)?;
    let map = match &cfg.paths.cause_map {
        Some(p) => CauseMap::from_path(p)?,
        None => CauseMap::builtin(),
    };
    let adjustments = match &cfg.paths.adjustments {
        Some(p) => ingest::adjustments_from_path(p)?,
        None => ingest::builtin_adjustments(),
    };
    let mut records = Vec::new();
    let mut rejects = Vec::new();
    let mut report = StageReport::default();
    for path in &cfg.paths.data {
        let name =
            path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
        let parsed = ingest::parse_records_path(path, &format)?;
        if !parsed.rejects.is_empty() {
            report.warnings.push(format!("{name}: {} rows rejected", parsed.rejects.len()));
        }
        records.extend(parsed.records);
        rejects.extend(parsed.rejects.into_iter().map(|mut r| {
            r.reason = format!("{name}: {}", r.reason);
            r
        }));
    }
    let built = ingest::build_compositions(&records, &map, &adjustments, &cfg.build_options())?;
    report.warnings.extend(built.warnings);
    if let Some(row) = built.conservation.iter().find(|r| !r.balanced()) {
        return Err(Error::Config(format!(
            "conservation check failed for {} {} {}",
            row.country, row.sex, row.year
        )));
    }
    let ingest_dir = cfg.paths.output.join("ingest");
    let rejects_path = ingest_dir.join(files::REJECTS);
    io::write_rejects(&rejects_path, &rejects)?;
    let conservation_path = ingest_dir.join(files::CONSERVATION);
    io::write_conservation(&conservation_path, &built.conservation)?;
    report.written.extend([rejects_path, conservation_path]);

    let grid = crate::compdata::TimeGrid::years(cfg.years.first, cfg.years.last)?;
    for sex in cfg.sex.sexes() {
        let empty = ingest::SexSample::default();
        let sample = built.samples.get(&sex).unwrap_or(&empty);
        if sample.compositions.is_empty() {
            return Err(Error::EmptySample);
        }
        let dir = cfg.sample_dir(sex);
        let raw = dir.join(files::RAW);
        let mask = dir.join(files::MASK);
        io::write_compositions(&raw, &sample.compositions)?;
        io::write_masks(&mask, &sample.masks, &grid)?;
        report.written.extend([raw, mask]);
    }
    Ok(report)
}

/// Smooths every curve on its observed years, then completes missing years.
pub fn smooth_sample(
    raw: &Path,
    mask: Option<&Path>,
    out_dir: &Path,
    cfg: &PipelineConfig,
) -> Result<StageReport> {
    let sample = io::read_compositions(raw)?;
    let masks = match mask {
        Some(p) => io::read_masks(p)?,
        None => sample.iter().map(|f| MissingMask::complete(f.id(), f.n_points())).collect(),
    };
    if masks.len() != sample.len() || masks.iter().zip(&sample).any(|(m, f)| m.id != f.id()) {
        return Err(Error::malformed(mask.unwrap_or(raw), "mask ids do not match the compositions"));
    }
    let smoothed = sample
        .iter()
        .zip(&masks)
        .map(|(f, m)| smooth_composition_masked(f, Some(m), &cfg.smoothing))
        .collect::<Result<Vec<_>>>()?;
    let completed = impute_missing(&smoothed, &masks, cfg.impute_ridge)?;
    let mut report = StageReport::default();
    for m in masks.iter().filter(|m| !m.is_complete()) {
        report.warnings.push(format!("{}: imputed {} missing years", m.id, m.n_missing()));
    }
    let out = out_dir.join(files::SMOOTHED);
    io::write_compositions(&out, &completed)?;
    report.written.push(out);
    Ok(report)
}

/// Mean, eigen system, scores and envelopes of the compositions in `input`.
pub fn pca_sample(input: &Path, out_dir: &Path, cfg: &PipelineConfig) -> Result<StageReport> {
    let sample = io::read_compositions(input)?;
    let fit = cfpca::fit(&sample)?;
    let mut report = StageReport::default();
    let available = fit.eigen.n_components();
    let k = cfg.pca.components.min(available);
    if k < cfg.pca.components {
        report.warnings.push(format!(
            "{} components requested, only {available} have positive variance",
            cfg.pca.components
        ));
    }
    let scores = cfpca::scores(&fit.centered, &fit.eigen, k)?;
    let mut envelopes = Vec::new();
    for j in 0..k {
        let (plus, minus) = component_envelope(&fit.mean, &fit.eigen, j, cfg.pca.envelope_scale)?;
        envelopes.extend([plus, minus]);
    }
    let path = |name: &str| out_dir.join(name);
    io::write_compositions(&path(files::MEAN), std::slice::from_ref(&fit.mean.composition))?;
    io::write_eigenvalues(&path(files::EIGENVALUES), &fit.eigen)?;
    io::write_eigenfunctions(&path(files::EIGENFUNCTIONS), &fit.eigen, k, true)?;
    io::write_eigenfunctions(&path(files::EIGENFUNCTIONS_CLR), &fit.eigen, k, false)?;
    io::write_scores(&path(files::SCORES), &scores)?;
    io::write_compositions(&path(files::ENVELOPES), &envelopes)?;
    report.written.extend(
        [
            files::MEAN,
            files::EIGENVALUES,
            files::EIGENFUNCTIONS,
            files::EIGENFUNCTIONS_CLR,
            files::SCORES,
            files::ENVELOPES,
        ]
        .map(path),
    );
    Ok(report)
}

/// Majority-vote spectral clustering of the scores in `scores_path`, with
/// centroid curves when the mean and eigenfunctions sit in the same directory.
pub fn cluster_sample(
    scores_path: &Path,
    out_dir: &Path,
    cfg: &PipelineConfig,
    sex: Option<Sex>,
) -> Result<StageReport> {
    let scores = io::read_scores(scores_path)?;
    let n = scores.n();
    let c = &cfg.clustering;
    let mut report = StageReport::default();
    let g_max = c.g_max.min(n.saturating_sub(1));
    if g_max < c.g_min {
        return Err(Error::InvalidClustering(format!(
            "{n} curves leave no cluster count in {}..={}",
            c.g_min, c.g_max
        )));
    }
    if g_max < c.g_max {
        report.warnings.push(format!("cluster counts capped at {g_max} for {n} curves"));
    }
    let g_range: Vec<usize> = (c.g_min..=g_max).collect();
    let points = &scores.values;
    let selection = select_g(points, &g_range, c.sigma, c.repetitions, c.master_seed, c.options())?;
    let chosen_g = c.override_for(sex).unwrap_or(selection.best_g);
    let result = match selection.result_for(chosen_g) {
        Some(r) => r.clone(),
        None => {
            if chosen_g >= n {
                return Err(Error::InvalidClustering(format!("cluster count {chosen_g} for {n} curves")));
            }
            let graph = similarity(points, c.sigma)?;
            majority_vote_with(&graph, chosen_g, c.repetitions, c.master_seed, c.options())?
        }
    };
    if chosen_g != selection.best_g {
        report
            .warnings
            .push(format!("reporting G = {chosen_g}; silhouette is highest at G = {}", selection.best_g));
    }
    let path = |name: &str| out_dir.join(name);
    io::write_selection(&path(files::SELECTION), &selection.rows)?;
    io::write_clusters(&path(files::CLUSTERS), &scores.ids, &result)?;
    io::write_centroid_scores(&path(files::CENTROID_SCORES), &result.centroids, &scores.components)?;
    let spectrum = laplacian_spectrum(&similarity(points, c.sigma)?);
    let mut w = io::CsvOut::create(&path(files::LAPLACIAN), &["index", "eigenvalue"])?;
    for (i, v) in spectrum.iter().enumerate() {
        w.row([(i + 1).to_string(), io::fmt_num(*v)])?;
    }
    w.finish()?;
    report
        .written
        .extend([files::SELECTION, files::CLUSTERS, files::CENTROID_SCORES, files::LAPLACIAN].map(path));

    let dir = scores_path.parent().unwrap_or(Path::new("."));
    let (mean_p, val_p, fun_p) =
        (dir.join(files::MEAN), dir.join(files::EIGENVALUES), dir.join(files::EIGENFUNCTIONS_CLR));
    if mean_p.exists() && val_p.exists() && fun_p.exists() {
        let mean = read_mean(&mean_p, n)?;
        let eig = io::read_eigensystem(&val_p, &fun_p, n)?;
        let k = scores.k().min(eig.n_components());
        let centroids = (0..result.g)
            .map(|g| {
                let row: Vec<f64> = result.centroids.row(g).iter().copied().collect();
                reconstruct(&mean, &eig, &row, k).map(|f| f.with_id(format!("cluster{}", g + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        io::write_compositions(&path(files::CENTROIDS), &centroids)?;
        report.written.push(path(files::CENTROIDS));
    }
    Ok(report)
}

fn read_mean(path: &Path, n: usize) -> Result<MeanComposition> {
    let mut curves = io::read_compositions(path)?;
    if curves.len() != 1 {
        return Err(Error::malformed(path, "expected exactly one mean curve"));
    }
    Ok(MeanComposition { composition: curves.remove(0), n })
}

/// SVG figures for one sample directory.
pub fn plot_sample(dir: &Path, cfg: &PipelineConfig, title: &str) -> Result<StageReport> {
    let fun_p = dir.join(files::EIGENFUNCTIONS_CLR);
    let val_p = dir.join(files::EIGENVALUES);
    let scores = io::read_scores(&dir.join(files::SCORES))?;
    let eig = io::read_eigensystem(&val_p, &fun_p, scores.n())?;
    let mean = read_mean(&dir.join(files::MEAN), scores.n())?;
    let sample = io::read_compositions(&dir.join(files::SMOOTHED))?;
    let mut report = StageReport::default();
    let mut write = |name: String, svg: String| -> Result<()> {
        let p = dir.join(&name);
        std::fs::write(&p, svg).map_err(|e| Error::io(&p, e))?;
        report.written.push(p);
        Ok(())
    };
    for k in 0..eig.n_components() {
        let (plus, minus) = component_envelope(&mean, &eig, k, cfg.pca.envelope_scale)?;
        let heading = format!(
            "{title}: PC{} (lambda = {}, FEV = {})",
            k + 1,
            io::fmt_num(round_to(eig.eigenvalues[k], 2)),
            io::fmt_num(round_to(eig.fev[k], 3))
        );
        write(
            format!("pc{}.svg", k + 1),
            plot::component_figure(&heading, &mean.composition, &plus, &minus),
        )?;
    }
    write(
        "curves.svg".into(),
        plot::spaghetti_figure(&format!("{title}: smoothed curves"), &sample, &mean.composition),
    )?;

    let clusters_p = dir.join(files::CLUSTERS);
    let labels: Vec<usize> = if clusters_p.exists() {
        let rows = io::read_clusters(&clusters_p)?;
        scores
            .ids
            .iter()
            .map(|id| rows.iter().find(|r| &r.id == id).map_or(0, |r| r.label.saturating_sub(1)))
            .collect()
    } else {
        vec![0; scores.n()]
    };
    if scores.k() >= 2 {
        let col = |k: usize| scores.values.column(k).iter().copied().collect::<Vec<f64>>();
        write(
            "scores.svg".into(),
            plot::score_scatter(
                &format!("{title}: scores"),
                "PC1",
                "PC2",
                &scores.ids,
                &col(0),
                &col(1),
                &labels,
            ),
        )?;
    }
    let centroids_p = dir.join(files::CENTROIDS);
    if centroids_p.exists() {
        let centroids = io::read_compositions(&centroids_p)?;
        write(
            "centroids.svg".into(),
            plot::centroid_figure(&format!("{title}: cluster centroids"), &centroids),
        )?;
    }
    Ok(report)
}

fn round_to(x: f64, digits: i32) -> f64 {
    let s = 10f64.powi(digits);
    (x * s).round() / s
}

/// Runs one stage for every selected sex, then refreshes the manifest.
pub fn run_stage(cfg: &PipelineConfig, stage: Stage) -> std::result::Result<StageReport, StageError> {
    let tag = |error| StageError { stage, error };
    let mut report = StageReport::default();
    if stage == Stage::Ingest {
        report = ingest(cfg).map_err(tag)?;
    } else {
        for sex in cfg.sex.sexes() {
            let dir = cfg.sample_dir(sex);
            let r = match stage {
                Stage::Smooth => {
                    smooth_sample(&dir.join(files::RAW), Some(&dir.join(files::MASK)), &dir, cfg)
                }
                Stage::Pca => pca_sample(&dir.join(files::SMOOTHED), &dir, cfg),
                Stage::Cluster => cluster_sample(&dir.join(files::SCORES), &dir, cfg, Some(sex)),
                Stage::Plot => plot_sample(&dir, cfg, sex.sample_label()),
                Stage::Ingest => unreachable!(),
            }
            .map_err(tag)?;
            report.merge(StageReport {
                written: r.written,
                warnings: r.warnings.into_iter().map(|w| format!("{}: {w}", sex.sample_label())).collect(),
            });
        }
    }
    finish_stage(&cfg.paths.output, stage, &report, cfg).map_err(tag)?;
    Ok(report)
}

/// Every stage in order.
pub fn run_all(cfg: &PipelineConfig) -> std::result::Result<Vec<StageReport>, StageError> {
    Stage::ALL.iter().map(|&s| run_stage(cfg, s)).collect()
}

/// Writes the stage log and rewrites `manifest.json` for the output directory.
pub fn finish_stage(out: &Path, stage: Stage, report: &StageReport, cfg: &PipelineConfig) -> Result<()> {
    let log = out.join("logs").join(format!("{stage}.log"));
    std::fs::create_dir_all(log.parent().unwrap()).map_err(|e| Error::io(&log, e))?;
    let mut text = String::new();
    for w in &report.warnings {
        text.push_str(&format!("warning: {w}\n"));
    }
    for p in &report.written {
        let rel = p.strip_prefix(out).unwrap_or(p);
        text.push_str(&format!("wrote {}\n", rel.display()));
    }
    std::fs::write(&log, text).map_err(|e| Error::io(&log, e))?;
    write_manifest(out, cfg).map(|_| ())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub artifacts: Vec<ManifestEntry>,
    pub palette: BTreeMap<String, String>,
    pub parameters: BTreeMap<String, serde_json::Value>,
}

/// Lists every file under `out` with its SHA-256, in path order.
pub fn write_manifest(out: &Path, cfg: &PipelineConfig) -> Result<Manifest> {
    let mut artifacts = Vec::new();
    let mut stack = vec![out.to_path_buf()];
    while let Some(dir) = stack.pop() {
        let entries = std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
        for entry in entries {
            let p = entry.map_err(|e| Error::io(&dir, e))?.path();
            if p.is_dir() {
                stack.push(p);
            } else if p != out.join(files::MANIFEST) {
                let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
                let rel = p.strip_prefix(out).unwrap_or(&p);
                artifacts.push(ManifestEntry {
                    path: rel
                        .components()
                        .map(|c| c.as_os_str().to_string_lossy())
                        .collect::<Vec<_>>()
                        .join("/"),
                    bytes: bytes.len() as u64,
                    sha256: Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect(),
                });
            }
        }
    }
    artifacts.sort_by(|a, b| a.path.cmp(&b.path));
    let mut palette = BTreeMap::new();
    palette.insert("mean".into(), plot::MEAN_COLOR.into());
    palette.insert("envelope_plus".into(), plot::PLUS_COLOR.into());
    palette.insert("envelope_minus".into(), plot::MINUS_COLOR.into());
    palette.insert("sample".into(), plot::SAMPLE_COLOR.into());
    for (i, c) in plot::PALETTE.iter().enumerate() {
        palette.insert(format!("cluster{:02}", i + 1), c.to_string());
    }
    let mut parameters = BTreeMap::new();
    let c = &cfg.clustering;
    parameters.insert("components".into(), cfg.pca.components.into());
    parameters.insert("sigma".into(), c.sigma.into());
    parameters.insert("repetitions".into(), c.repetitions.into());
    parameters.insert("g_range".into(), serde_json::json!([c.g_min, c.g_max]));
    parameters.insert("master_seed".into(), c.master_seed.into());
    parameters.insert("silhouette_literal".into(), c.silhouette_literal.into());
    parameters.insert("silhouette_unsquared".into(), c.silhouette_unsquared.into());
    parameters.insert("years".into(), serde_json::json!([cfg.years.first, cfg.years.last]));
    parameters.insert("ages".into(), serde_json::json!([cfg.ages.from, cfg.ages.to]));
    let manifest = Manifest { artifacts, palette, parameters };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Config(e.to_string()))?;
    let path = out.join(files::MANIFEST);
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

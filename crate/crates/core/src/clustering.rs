//! Spectral clustering of principal component scores.
//!
//! Fully connected Gaussian similarity graph, symmetric normalized Laplacian
//! with a row-normalized embedding, and seeded k-means++/Lloyd in the
//! embedding. Repeated runs are combined by majority vote over canonical
//! partitions and the number of clusters is chosen by the silhouette index.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

pub const DEFAULT_SIGMA: f64 = 1.0;
pub const DEFAULT_REPETITIONS: usize = 1000;
pub const KMEANS_MAX_ITER: usize = 100;
pub const KMEANS_TOLERANCE: f64 = 1e-9;
pub const KMEANS_MAX_ATTEMPTS: usize = 20;
const MIN_ROW_NORM: f64 = 1e-12;

/// How `a(i)` and `b(i)` are measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SilhouetteOptions {
    /// Use Euclidean instead of squared Euclidean distances.
    pub unsquared: bool,
    /// Read the between-cluster term literally as the distance from the point
    /// to the cluster's mean score vector rather than the average distance to
    /// the cluster's members.
    pub literal: bool,
}

#[derive(Debug, Clone)]
pub struct SimilarityGraph {
    pub weights: DMatrix<f64>,
    pub sigma: f64,
    /// The `n x K` score vectors the graph was built from.
    pub points: DMatrix<f64>,
}

impl SimilarityGraph {
    pub fn n(&self) -> usize {
        self.weights.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterResult {
    /// Canonical labels in `0..g`: cluster 0 holds point 0, cluster 1 holds the
    /// first point not in cluster 0, and so on.
    pub labels: Vec<usize>,
    /// Per-cluster mean score vectors (`g x K`).
    pub centroids: DMatrix<f64>,
    pub g: usize,
    pub silhouette_mean: f64,
    pub per_point_silhouette: Vec<f64>,
    /// Fraction of repetitions that produced exactly this partition.
    pub vote_share: f64,
}

impl ClusterResult {
    pub fn from_partition(
        points: &DMatrix<f64>,
        labels: Vec<usize>,
        vote_share: f64,
        options: SilhouetteOptions,
    ) -> Result<Self> {
        let labels = canonicalize(&labels);
        let g = labels.iter().max().map_or(0, |m| m + 1);
        let centroids = cluster_means(points, &labels, g);
        let (silhouette_mean, per_point_silhouette) =
            if g >= 2 { silhouette_with(points, &labels, options)? } else { (0.0, vec![0.0; labels.len()]) };
        Ok(Self { labels, centroids, g, silhouette_mean, per_point_silhouette, vote_share })
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.g];
        self.labels.iter().for_each(|&l| sizes[l] += 1);
        sizes
    }
}

/// Relabels so that clusters are numbered in order of first appearance.
pub fn canonicalize(labels: &[usize]) -> Vec<usize> {
    let mut map = BTreeMap::new();
    labels
        .iter()
        .map(|l| {
            let next = map.len();
            *map.entry(*l).or_insert(next)
        })
        .collect()
}

fn cluster_means(points: &DMatrix<f64>, labels: &[usize], g: usize) -> DMatrix<f64> {
    let mut sums = DMatrix::zeros(g, points.ncols());
    let mut counts = vec![0usize; g];
    for (i, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        let mut row = sums.row_mut(l);
        row += points.row(i);
    }
    for (l, c) in counts.iter().enumerate() {
        if *c > 0 {
            let mut row = sums.row_mut(l);
            row /= *c as f64;
        }
    }
    sums
}

fn squared_distance(points: &DMatrix<f64>, i: usize, j: usize) -> f64 {
    points.row(i).iter().zip(points.row(j).iter()).map(|(a, b)| (a - b).powi(2)).sum()
}

/// Gaussian similarity `exp(-|xi_i - xi_j|^2 / (2 sigma^2))` over all pairs.
pub fn similarity(points: &DMatrix<f64>, sigma: f64) -> Result<SimilarityGraph> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidClustering(format!("sigma must be positive, got {sigma}")));
    }
    let n = points.nrows();
    let mut weights = DMatrix::identity(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let s = (-squared_distance(points, i, j) / (2.0 * sigma * sigma)).exp();
            weights[(i, j)] = s;
            weights[(j, i)] = s;
        }
    }
    Ok(SimilarityGraph { weights, sigma, points: points.clone() })
}

/// Symmetric normalized Laplacian `I - D^-1/2 W D^-1/2`.
pub fn normalized_laplacian(graph: &SimilarityGraph) -> DMatrix<f64> {
    let n = graph.n();
    let inv_sqrt: Vec<f64> = graph.weights.row_iter().map(|r| 1.0 / r.sum().sqrt()).collect();
    DMatrix::from_fn(n, n, |i, j| {
        let a = inv_sqrt[i] * graph.weights[(i, j)] * inv_sqrt[j];
        if i == j {
            1.0 - a
        } else {
            -a
        }
    })
}

/// Eigenvalues of the normalized Laplacian in ascending order.
pub fn laplacian_spectrum(graph: &SimilarityGraph) -> Vec<f64> {
    let mut ev: Vec<f64> =
        SymmetricEigen::new(normalized_laplacian(graph)).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Rows of the `g` eigenvectors with smallest Laplacian eigenvalue, each
/// scaled to unit length.
pub fn spectral_embedding(graph: &SimilarityGraph, g: usize) -> Result<DMatrix<f64>> {
    let n = graph.n();
    if g == 0 || g > n {
        return Err(Error::InvalidClustering(format!("embedding dimension {g} for {n} points")));
    }
    let eig = SymmetricEigen::try_new(normalized_laplacian(graph), f64::EPSILON, 0)
        .ok_or(Error::ConvergenceFailure)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));
    let mut emb = DMatrix::from_fn(n, g, |i, c| eig.eigenvectors[(i, order[c])]);
    for (i, mut row) in emb.row_iter_mut().enumerate() {
        let norm = row.norm();
        if norm < MIN_ROW_NORM {
            return Err(Error::DegenerateEmbedding { row: i });
        }
        row /= norm;
    }
    Ok(emb)
}

/// Outcome of one k-means run.
#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub labels: Vec<usize>,
    pub centroids: DMatrix<f64>,
    /// Within-cluster sum of squares after each assignment step.
    pub objective_trace: Vec<f64>,
    pub attempts: usize,
}

impl KMeansFit {
    pub fn objective(&self) -> f64 {
        self.objective_trace.last().copied().unwrap_or(0.0)
    }
}

/// Within-cluster sum of squared distances to the cluster means.
pub fn within_cluster_ss(points: &DMatrix<f64>, labels: &[usize]) -> f64 {
    let g = labels.iter().max().map_or(0, |m| m + 1);
    let means = cluster_means(points, labels, g);
    labels
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            points.row(i).iter().zip(means.row(l).iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
        })
        .sum()
}

/// k-means++ seeding followed by Lloyd iterations.
///
/// A run that leaves a cluster empty is restarted from fresh seeds drawn
/// from the same generator, at most [`KMEANS_MAX_ATTEMPTS`] times.
pub fn kmeans(points: &DMatrix<f64>, k: usize, rng: &mut impl Rng) -> Result<KMeansFit> {
    let n = points.nrows();
    if k == 0 || k > n {
        return Err(Error::InvalidClustering(format!("k = {k} for {n} points")));
    }
    for attempt in 1..=KMEANS_MAX_ATTEMPTS {
        let mut centroids = plus_plus(points, k, rng);
        let mut labels = vec![0usize; n];
        let mut trace = Vec::new();
        let mut empty = false;
        for _ in 0..KMEANS_MAX_ITER {
            let mut objective = 0.0;
            for (i, label) in labels.iter_mut().enumerate() {
                let (best, dist) = nearest(points, i, &centroids);
                *label = best;
                objective += dist;
            }
            trace.push(objective);
            let mut counts = vec![0usize; k];
            labels.iter().for_each(|&l| counts[l] += 1);
            if counts.contains(&0) {
                empty = true;
                break;
            }
            let updated = cluster_means(points, &labels, k);
            let shift = (&updated - &centroids).row_iter().map(|r| r.norm_squared()).fold(0.0, f64::max);
            centroids = updated;
            if shift <= KMEANS_TOLERANCE {
                break;
            }
        }
        if empty {
            continue;
        }
        // the last centroid update may have moved points across boundaries
        let mut objective = 0.0;
        for (i, label) in labels.iter_mut().enumerate() {
            let (best, dist) = nearest(points, i, &centroids);
            *label = best;
            objective += dist;
        }
        trace.push(objective);
        let mut counts = vec![0usize; k];
        labels.iter().for_each(|&l| counts[l] += 1);
        if counts.contains(&0) {
            continue;
        }
        let centroids = cluster_means(points, &labels, k);
        return Ok(KMeansFit { labels, centroids, objective_trace: trace, attempts: attempt });
    }
    Err(Error::EmptyCluster { attempts: KMEANS_MAX_ATTEMPTS })
}

fn nearest(points: &DMatrix<f64>, i: usize, centroids: &DMatrix<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for c in 0..centroids.nrows() {
        let d: f64 = points.row(i).iter().zip(centroids.row(c).iter()).map(|(a, b)| (a - b).powi(2)).sum();
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus(points: &DMatrix<f64>, k: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let n = points.nrows();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut dist: Vec<f64> = (0..n).map(|i| squared_distance(points, i, chosen[0])).collect();
    while chosen.len() < k {
        let total: f64 = dist.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &d) in dist.iter().enumerate().filter(|(_, d)| **d > 0.0) {
                pick = Some(i);
                if target < d {
                    break;
                }
                target -= d;
            }
            pick.expect("positive total implies a positive distance")
        } else {
            rng.random_range(0..n)
        };
        chosen.push(next);
        for (i, d) in dist.iter_mut().enumerate() {
            *d = d.min(squared_distance(points, i, next));
        }
    }
    DMatrix::from_fn(k, points.ncols(), |c, j| points[(chosen[c], j)])
}

/// Options shared by the spectral clustering entry points.
#[derive(Debug, Clone, Copy, Default)]
pub struct ClusterOptions {
    pub silhouette: SilhouetteOptions,
}

pub fn spectral_cluster(graph: &SimilarityGraph, g: usize, seed: u64) -> Result<ClusterResult> {
    spectral_cluster_with(graph, g, seed, ClusterOptions::default())
}

pub fn spectral_cluster_with(
    graph: &SimilarityGraph,
    g: usize,
    seed: u64,
    options: ClusterOptions,
) -> Result<ClusterResult> {
    let labels = spectral_partition(graph, g, seed)?;
    ClusterResult::from_partition(&graph.points, labels, 1.0, options.silhouette)
}

/// Canonical partition from one seeded spectral clustering run.
pub fn spectral_partition(graph: &SimilarityGraph, g: usize, seed: u64) -> Result<Vec<usize>> {
    let n = graph.n();
    if g < 2 || g > n {
        return Err(Error::InvalidClustering(format!("number of clusters must be within 2..={n}, got {g}")));
    }
    if g == n {
        return Ok((0..n).collect());
    }
    let embedding = spectral_embedding(graph, g)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fit = kmeans(&embedding, g, &mut rng)?;
    Ok(canonicalize(&fit.labels))
}

/// Seeds for `b` repetitions, derived deterministically from `master_seed`.
pub fn derive_seeds(master_seed: u64, b: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    (0..b).map(|_| rng.next_u64()).collect()
}

pub fn majority_vote(graph: &SimilarityGraph, g: usize, b: usize, master_seed: u64) -> Result<ClusterResult> {
    majority_vote_with(graph, g, b, master_seed, ClusterOptions::default())
}

/// Most frequent canonical partition over `b` seeded runs; ties go to the
/// lexicographically smallest partition.
pub fn majority_vote_with(
    graph: &SimilarityGraph,
    g: usize,
    b: usize,
    master_seed: u64,
    options: ClusterOptions,
) -> Result<ClusterResult> {
    if b == 0 {
        return Err(Error::InvalidClustering("at least one repetition is required".into()));
    }
    let partitions = derive_seeds(master_seed, b)
        .into_par_iter()
        .map(|seed| spectral_partition(graph, g, seed))
        .collect::<Result<Vec<_>>>()?;
    let mut counts: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
    for p in partitions {
        *counts.entry(p).or_default() += 1;
    }
    let mut best: Option<(&Vec<usize>, usize)> = None;
    for (p, &c) in &counts {
        if best.is_none_or(|(_, bc)| c > bc) {
            best = Some((p, c));
        }
    }
    let (partition, count) = best.expect("b >= 1");
    ClusterResult::from_partition(
        &graph.points,
        partition.clone(),
        count as f64 / b as f64,
        options.silhouette,
    )
}

pub fn silhouette(points: &DMatrix<f64>, labels: &[usize]) -> Result<(f64, Vec<f64>)> {
    silhouette_with(points, labels, SilhouetteOptions::default())
}

/// Silhouette values `s(i) = (b - a) / max(a, b)`; singletons score 0.
pub fn silhouette_with(
    points: &DMatrix<f64>,
    labels: &[usize],
    options: SilhouetteOptions,
) -> Result<(f64, Vec<f64>)> {
    let n = points.nrows();
    if labels.len() != n {
        return Err(Error::DimensionMismatch(format!("{} labels for {n} points", labels.len())));
    }
    let g = labels.iter().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; g];
    labels.iter().for_each(|&l| sizes[l] += 1);
    if sizes.contains(&0) {
        return Err(Error::InvalidClustering("labels must be contiguous with no empty cluster".into()));
    }
    if g < 2 {
        return Err(Error::SingleCluster);
    }
    let dist = |i: usize, j: usize| {
        let d = squared_distance(points, i, j);
        if options.unsquared {
            d.sqrt()
        } else {
            d
        }
    };
    let means = cluster_means(points, labels, g);
    let per_point: Vec<f64> = (0..n)
        .map(|i| {
            let own = labels[i];
            if sizes[own] == 1 {
                return 0.0;
            }
            let mut sums = vec![0.0; g];
            for j in 0..n {
                if j != i {
                    sums[labels[j]] += dist(i, j);
                }
            }
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = (0..g)
                .filter(|&c| c != own)
                .map(|c| {
                    if options.literal {
                        let d: f64 =
                            points.row(i).iter().zip(means.row(c).iter()).map(|(x, y)| (x - y).powi(2)).sum();
                        if options.unsquared {
                            d.sqrt()
                        } else {
                            d
                        }
                    } else {
                        sums[c] / sizes[c] as f64
                    }
                })
                .fold(f64::INFINITY, f64::min);
            let denom = a.max(b);
            if denom > 0.0 {
                (b - a) / denom
            } else {
                0.0
            }
        })
        .collect();
    let mean = per_point.iter().sum::<f64>() / n as f64;
    Ok((mean, per_point))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionRow {
    pub g: usize,
    pub silhouette_mean: f64,
    pub vote_share: f64,
}

#[derive(Debug, Clone)]
pub struct Selection {
    pub rows: Vec<SelectionRow>,
    pub results: Vec<ClusterResult>,
    /// Number of clusters with the largest mean silhouette (smallest on ties).
    pub best_g: usize,
}

impl Selection {
    pub fn result_for(&self, g: usize) -> Option<&ClusterResult> {
        self.results.iter().find(|r| r.g == g)
    }
}

/// Majority-vote clustering for every `g` in `g_range`, scored by silhouette.
pub fn select_g(
    points: &DMatrix<f64>,
    g_range: &[usize],
    sigma: f64,
    b: usize,
    master_seed: u64,
    options: ClusterOptions,
) -> Result<Selection> {
    let n = points.nrows();
    if g_range.is_empty() {
        return Err(Error::InvalidClustering("empty range of cluster counts".into()));
    }
    if let Some(g) = g_range.iter().find(|&&g| g < 2 || g + 1 > n) {
        return Err(Error::InvalidClustering(format!(
            "cluster count {g} outside 2..={}",
            n.saturating_sub(1)
        )));
    }
    let graph = similarity(points, sigma)?;
    let mut rows = Vec::new();
    let mut results = Vec::new();
    for &g in g_range {
        let r = majority_vote_with(&graph, g, b, master_seed, options)?;
        rows.push(SelectionRow { g: r.g, silhouette_mean: r.silhouette_mean, vote_share: r.vote_share });
        results.push(r);
    }
    let mut best = &rows[0];
    for r in &rows[1..] {
        if r.silhouette_mean > best.silhouette_mean
            || (r.silhouette_mean == best.silhouette_mean && r.g < best.g)
        {
            best = r;
        }
    }
    let best_g = best.g;
    Ok(Selection { rows, results, best_g })
}

//! Compositional functional principal component analysis.
//!
//! Everything is computed in clr space: the sample mean is the clr-inverse of
//! the mean clr curve, the covariance is the `D x D` block kernel of centered
//! clr curves, and the integral eigenproblem is discretized with the grid's
//! trapezoid weights. With `W` the weights repeated once per part and `R` the
//! assembled `(D T) x (D T)` kernel, the symmetric matrix `W^1/2 R W^1/2` is
//! decomposed and eigenvectors are mapped back with `W^-1/2`, so that the
//! eigenfunctions are orthonormal under the quadrature inner product.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::compdata::{clr, clr_inv, clr_inv_coords, ClrCurve, FunctionalComposition, TimeGrid};
use crate::error::{Error, Result};

/// Components with an eigenvalue below this fraction of the leading one are dropped.
pub const EIGEN_FLOOR: f64 = 1e-12;
/// Relative tolerance on negative eigenvalues before the kernel is declared non-PSD.
pub const PSD_TOLERANCE: f64 = 1e-8;
/// Eigenvalues below this are rounding noise whatever the leading eigenvalue.
const ABSOLUTE_FLOOR: f64 = 1e-20;
/// Number of components used downstream unless configured otherwise.
pub const DEFAULT_COMPONENTS: usize = 4;

/// Sample mean in the functional simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanComposition {
    pub composition: FunctionalComposition,
    pub n: usize,
}

impl MeanComposition {
    pub fn clr(&self) -> ClrCurve {
        clr(&self.composition)
    }
}

/// Empirical block covariance kernel on the grid, stored as the assembled
/// `(D T) x (D T)` matrix with part-major indexing `d * T + i`.
#[derive(Debug, Clone)]
pub struct CovKernelBlocks {
    grid: TimeGrid,
    part_names: Vec<String>,
    matrix: DMatrix<f64>,
    n: usize,
    centered: bool,
}

impl CovKernelBlocks {
    /// Wraps an assembled kernel, e.g. one built analytically.
    pub fn from_matrix(
        grid: TimeGrid,
        part_names: Vec<String>,
        matrix: DMatrix<f64>,
        n: usize,
    ) -> Result<Self> {
        let dim = part_names.len() * grid.len();
        if matrix.shape() != (dim, dim) {
            return Err(Error::DimensionMismatch(format!(
                "kernel is {:?}, expected {dim}x{dim}",
                matrix.shape()
            )));
        }
        Ok(Self { grid, part_names, matrix, n, centered: true })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn part_names(&self) -> &[String] {
        &self.part_names
    }

    pub fn n_parts(&self) -> usize {
        self.part_names.len()
    }

    pub fn n_samples(&self) -> usize {
        self.n
    }

    pub fn is_centered(&self) -> bool {
        self.centered
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// `r_jl(s, t)` for grid indices `s`, `t`.
    pub fn value(&self, j: usize, l: usize, s: usize, t: usize) -> f64 {
        let n_t = self.grid.len();
        self.matrix[(j * n_t + s, l * n_t + t)]
    }

    pub fn block(&self, j: usize, l: usize) -> DMatrix<f64> {
        let n_t = self.grid.len();
        self.matrix.view((j * n_t, l * n_t), (n_t, n_t)).into_owned()
    }

    /// `sum_d \int r_dd(t, t) dt` by quadrature.
    pub fn trace(&self) -> f64 {
        let n_t = self.grid.len();
        (0..self.n_parts())
            .map(|d| {
                (0..n_t)
                    .map(|i| self.grid.weights()[i] * self.matrix[(d * n_t + i, d * n_t + i)])
                    .sum::<f64>()
            })
            .sum()
    }
}

/// Eigen-decomposition of the covariance operator.
#[derive(Debug, Clone)]
pub struct EigenSystem {
    /// Retained eigenvalues, descending and strictly positive.
    pub eigenvalues: Vec<f64>,
    pub clr_eigenfunctions: Vec<ClrCurve>,
    pub simplex_eigenfunctions: Vec<FunctionalComposition>,
    /// `lambda_k / total_variance`.
    pub fev: Vec<f64>,
    /// Sum of every eigenvalue above the floor, retained or not.
    pub total_variance: f64,
    pub n: usize,
    pub k_max: usize,
}

impl EigenSystem {
    pub fn n_components(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn cumulative_fev(&self) -> Vec<f64> {
        self.fev
            .iter()
            .scan(0.0, |acc, v| {
                *acc += v;
                Some(*acc)
            })
            .collect()
    }
}

/// `n x K` matrix of principal component scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    pub ids: Vec<String>,
    pub components: Vec<String>,
    pub values: DMatrix<f64>,
}

impl ScoreMatrix {
    pub fn new(ids: Vec<String>, components: Vec<String>, values: DMatrix<f64>) -> Result<Self> {
        if values.shape() != (ids.len(), components.len()) {
            return Err(Error::DimensionMismatch(format!(
                "score matrix is {:?} for {} ids and {} components",
                values.shape(),
                ids.len(),
                components.len()
            )));
        }
        Ok(Self { ids, components, values })
    }

    /// Convenience constructor with ids `0..n` and components `PC1..PCK`.
    pub fn from_values(values: DMatrix<f64>) -> Self {
        let ids = (0..values.nrows()).map(|i| i.to_string()).collect();
        let components = component_labels(values.ncols());
        Self { ids, components, values }
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn k(&self) -> usize {
        self.values.ncols()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.values.row(i).iter().copied().collect()
    }
}

pub fn component_labels(k: usize) -> Vec<String> {
    (1..=k).map(|c| format!("PC{c}")).collect()
}

fn ensure_common<'a, I>(mut curves: I) -> Result<(&'a TimeGrid, usize)>
where
    I: Iterator<Item = (&'a TimeGrid, usize)>,
{
    let (grid, d) = curves.next().ok_or(Error::EmptySample)?;
    for (g, dd) in curves {
        grid.ensure_matches(g)?;
        if dd != d {
            return Err(Error::DimensionMismatch(format!("{dd} parts vs {d} parts")));
        }
    }
    Ok((grid, d))
}

/// Closed geometric mean across the sample, via the mean of clr images.
pub fn mean(sample: &[FunctionalComposition]) -> Result<MeanComposition> {
    let (grid, _) = ensure_common(sample.iter().map(|f| (f.grid(), f.n_parts())))?;
    let first = &sample[0];
    let mut acc = DMatrix::zeros(first.n_parts(), first.n_points());
    for f in sample {
        acc += clr(f).coords();
    }
    acc /= sample.len() as f64;
    let composition = clr_inv_coords("mean", first.part_names().to_vec(), grid.clone(), &acc)?;
    Ok(MeanComposition { composition, n: sample.len() })
}

/// Centered clr curves `clr(f_i) - clr(mean)`.
pub fn center(sample: &[FunctionalComposition], mean: &MeanComposition) -> Result<Vec<ClrCurve>> {
    let m = mean.clr();
    sample
        .iter()
        .map(|f| {
            f.grid().ensure_matches(m.grid())?;
            clr(f).sub(&m).map(|c| c.with_id(f.id()))
        })
        .collect()
}

/// Block covariance with divisor `n`.
pub fn covariance(centered: &[ClrCurve]) -> Result<CovKernelBlocks> {
    let (grid, d) = ensure_common(centered.iter().map(|c| (c.grid(), c.n_parts())))?;
    let n = centered.len();
    if n < 2 {
        return Err(Error::InsufficientSample { needed: 2, found: n });
    }
    let dim = d * grid.len();
    let mut data = DMatrix::zeros(dim, n);
    for (i, c) in centered.iter().enumerate() {
        data.set_column(i, &c.to_flat());
    }
    let mut matrix = &data * data.transpose();
    matrix /= n as f64;
    // exact symmetry
    matrix = (&matrix + matrix.transpose()) * 0.5;
    Ok(CovKernelBlocks {
        grid: grid.clone(),
        part_names: centered[0].part_names().to_vec(),
        matrix,
        n,
        centered: true,
    })
}

/// Discretized eigenproblem `\int r(s,t) phi(t) dt = lambda phi(s)`.
pub fn eigendecompose(cov: &CovKernelBlocks, k_max: usize) -> Result<EigenSystem> {
    let d = cov.n_parts();
    let n_t = cov.grid.len();
    let dim = d * n_t;
    let upper = cov.n.saturating_sub(1).min(dim).max(1);
    if k_max == 0 || k_max > upper {
        return Err(Error::DimensionMismatch(format!("k_max must be within 1..={upper}, got {k_max}")));
    }
    let sqrt_w: Vec<f64> = (0..dim).map(|k| cov.grid.weights()[k % n_t].sqrt()).collect();
    let weighted = DMatrix::from_fn(dim, dim, |a, b| sqrt_w[a] * cov.matrix[(a, b)] * sqrt_w[b]);
    let eig = SymmetricEigen::try_new(weighted, f64::EPSILON, 0).ok_or(Error::ConvergenceFailure)?;

    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let leading = eig.eigenvalues[order[0]].max(0.0);
    let smallest = eig.eigenvalues[order[dim - 1]];
    if smallest < -PSD_TOLERANCE * leading && smallest < -ABSOLUTE_FLOOR {
        return Err(Error::NonPsd { eigenvalue: smallest });
    }
    let kept: Vec<usize> = order
        .iter()
        .copied()
        .filter(|&k| eig.eigenvalues[k] >= (EIGEN_FLOOR * leading).max(ABSOLUTE_FLOOR))
        .collect();
    let total_variance: f64 = kept.iter().map(|&k| eig.eigenvalues[k]).sum();

    let mut eigenvalues = Vec::new();
    let mut clr_eigenfunctions = Vec::new();
    let mut simplex_eigenfunctions = Vec::new();
    for (c, &k) in kept.iter().take(k_max).enumerate() {
        let v = eig.eigenvectors.column(k);
        let mut coords = DMatrix::from_fn(d, n_t, |p, i| v[p * n_t + i] / sqrt_w[p * n_t + i]);
        orient(&mut coords);
        let label = format!("PC{}", c + 1);
        let phi = ClrCurve::new(label.clone(), cov.part_names.clone(), cov.grid.clone(), coords)?;
        let phi = phi.scale(1.0 / phi.norm());
        simplex_eigenfunctions.push(clr_inv(&phi)?.with_id(label));
        clr_eigenfunctions.push(phi);
        eigenvalues.push(eig.eigenvalues[k]);
    }
    let fev = eigenvalues.iter().map(|l| l / total_variance).collect();
    Ok(EigenSystem {
        eigenvalues,
        clr_eigenfunctions,
        simplex_eigenfunctions,
        fev,
        total_variance,
        n: cov.n,
        k_max,
    })
}

/// Flips the sign so that the entry of largest magnitude (first one on ties) is positive.
fn orient(coords: &mut DMatrix<f64>) {
    let mut best = 0.0f64;
    let mut sign = 1.0;
    // column-major iteration order is the tie-break
    for &v in coords.iter() {
        if v.abs() > best {
            best = v.abs();
            sign = v.signum();
        }
    }
    if sign < 0.0 {
        coords.neg_mut();
    }
}

/// Scores `xi_ik = <c_i, phi_k>` for the first `k` components.
pub fn scores(centered: &[ClrCurve], eig: &EigenSystem, k: usize) -> Result<ScoreMatrix> {
    if k > eig.n_components() {
        return Err(Error::DimensionMismatch(format!(
            "{k} components requested, {} available",
            eig.n_components()
        )));
    }
    let mut values = DMatrix::zeros(centered.len(), k);
    for (i, c) in centered.iter().enumerate() {
        for (j, phi) in eig.clr_eigenfunctions.iter().take(k).enumerate() {
            values[(i, j)] = c.inner(phi)?;
        }
    }
    Ok(ScoreMatrix {
        ids: centered.iter().map(|c| c.id().to_string()).collect(),
        components: component_labels(k),
        values,
    })
}

/// Truncated expansion `clr^-1( clr(mean) + sum_{k<K} xi_k phi_k )`.
pub fn reconstruct(
    mean: &MeanComposition,
    eig: &EigenSystem,
    score_row: &[f64],
    k: usize,
) -> Result<FunctionalComposition> {
    if k > eig.n_components() || k > score_row.len() {
        return Err(Error::DimensionMismatch(format!(
            "{k} components requested, {} eigenfunctions and {} scores available",
            eig.n_components(),
            score_row.len()
        )));
    }
    let mut acc = mean.clr();
    for (xi, phi) in score_row.iter().zip(&eig.clr_eigenfunctions).take(k) {
        acc = acc.axpy(*xi, phi)?;
    }
    clr_inv(&acc)
}

/// `clr^-1(clr(mean) +/- c sqrt(lambda_k) phi_k)` for component index `k` (0-based).
pub fn component_envelope(
    mean: &MeanComposition,
    eig: &EigenSystem,
    k: usize,
    c: f64,
) -> Result<(FunctionalComposition, FunctionalComposition)> {
    let (lambda, phi) = eig.eigenvalues.get(k).zip(eig.clr_eigenfunctions.get(k)).ok_or_else(|| {
        Error::DimensionMismatch(format!("component {k} requested, {} available", eig.n_components()))
    })?;
    let m = mean.clr();
    let step = c * lambda.sqrt();
    let label = format!("PC{}", k + 1);
    let plus = clr_inv(&m.axpy(step, phi)?)?.with_id(format!("{label}+"));
    let minus = clr_inv(&m.axpy(-step, phi)?)?.with_id(format!("{label}-"));
    Ok((plus, minus))
}

/// Every result of a compositional FPCA on one sample.
#[derive(Debug, Clone)]
pub struct FpcaFit {
    pub mean: MeanComposition,
    pub centered: Vec<ClrCurve>,
    pub covariance: CovKernelBlocks,
    pub eigen: EigenSystem,
    pub scores: ScoreMatrix,
}

/// mean -> center -> covariance -> eigendecompose -> scores, keeping every
/// component above the floor (`k_max = n - 1` capped by the grid dimension).
pub fn fit(sample: &[FunctionalComposition]) -> Result<FpcaFit> {
    let mean = mean(sample)?;
    let centered = center(sample, &mean)?;
    let covariance = covariance(&centered)?;
    let dim = covariance.n_parts() * covariance.grid.len();
    let k_max = (sample.len() - 1).min(dim).max(1);
    let eigen = eigendecompose(&covariance, k_max)?;
    let scores = scores(&centered, &eigen, eigen.n_components())?;
    Ok(FpcaFit { mean, centered, covariance, eigen, scores })
}

/// Flattened centered curves as rows, useful for external linear algebra.
pub fn data_matrix(centered: &[ClrCurve]) -> DMatrix<f64> {
    let rows: Vec<DVector<f64>> = centered.iter().map(|c| c.to_flat()).collect();
    DMatrix::from_fn(rows.len(), rows.first().map_or(0, |r| r.len()), |i, j| rows[i][j])
}

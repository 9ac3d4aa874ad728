//! Compositional functional data on a discrete time grid.
//!
//! A [`FunctionalComposition`] is a `D x T` matrix whose columns are
//! compositions (strictly positive, unit sum). The functional simplex
//! operations (perturbation, powering, inner product) are implemented
//! together with the centered log-ratio map to the zero-sum subspace
//! represented by [`ClrCurve`], where they become ordinary vector
//! operations.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Post-closure lower bound on any part.
pub const EPS_FLOOR: f64 = 1e-12;
/// Count added to zero entries before closure.
pub const DEFAULT_PSEUDOCOUNT: f64 = 0.5;
/// Two grids are equal when every point agrees within this tolerance.
pub const GRID_TOLERANCE: f64 = 1e-9;
/// Column sums of a clr matrix accepted (and recentered) by `clr_inv`.
pub const CLR_SUM_TOLERANCE: f64 = 1e-8;
/// Largest clr magnitude accepted before exponentiation.
pub const EXP_GUARD: f64 = 700.0;

const CLOSURE_TOLERANCE: f64 = 1e-12;

/// Ordered time points with trapezoid quadrature weights.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl TimeGrid {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidGrid(format!("need at least 2 points, got {}", points.len())));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidGrid("non-finite grid point".into()));
        }
        if points.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidGrid("points must be strictly increasing".into()));
        }
        let n = points.len();
        let weights = (0..n)
            .map(|i| match i {
                0 => (points[1] - points[0]) / 2.0,
                i if i == n - 1 => (points[n - 1] - points[n - 2]) / 2.0,
                i => (points[i + 1] - points[i - 1]) / 2.0,
            })
            .collect();
        Ok(Self { points, weights })
    }

    /// `n` equally spaced points on `[start, end]`.
    pub fn uniform(start: f64, end: f64, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidGrid(format!("need at least 2 points, got {n}")));
        }
        let step = (end - start) / (n - 1) as f64;
        Self::new((0..n).map(|i| start + step * i as f64).collect())
    }

    /// Yearly grid `first..=last`.
    pub fn years(first: i32, last: i32) -> Result<Self> {
        Self::new((first..=last).map(f64::from).collect())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn matches(&self, other: &TimeGrid) -> bool {
        self.len() == other.len()
            && self.points.iter().zip(&other.points).all(|(a, b)| (a - b).abs() <= GRID_TOLERANCE)
    }

    pub fn ensure_matches(&self, other: &TimeGrid) -> Result<()> {
        if self.matches(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }

    /// Trapezoid quadrature of sampled values.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.len());
        self.weights.iter().zip(values).map(|(w, v)| w * v).sum()
    }
}

/// A `D`-part composition-valued curve sampled on a [`TimeGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalComposition {
    id: String,
    part_names: Vec<String>,
    grid: TimeGrid,
    parts: DMatrix<f64>,
}

impl FunctionalComposition {
    /// Wraps already-closed proportions, checking every invariant.
    pub fn new(
        id: impl Into<String>,
        part_names: Vec<String>,
        grid: TimeGrid,
        parts: DMatrix<f64>,
    ) -> Result<Self> {
        check_shape(&part_names, &grid, parts.nrows(), parts.ncols())?;
        for (j, col) in parts.column_iter().enumerate() {
            for (d, &v) in col.iter().enumerate() {
                if !(v.is_finite() && v > 0.0) {
                    return Err(Error::NonPositiveEntry { part: d, column: j, value: v });
                }
            }
            let sum = col.sum();
            if (sum - 1.0).abs() > CLOSURE_TOLERANCE {
                return Err(Error::ColumnSum { column: j, sum, expected: 1.0 });
            }
        }
        Ok(Self { id: id.into(), part_names, grid, parts })
    }

    /// Closes nonnegative values (e.g. counts or rounded proportions) with the
    /// default pseudocount.
    pub fn from_raw(
        id: impl Into<String>,
        part_names: Vec<String>,
        grid: TimeGrid,
        raw: &DMatrix<f64>,
    ) -> Result<Self> {
        closure(id, part_names, grid, raw, DEFAULT_PSEUDOCOUNT)
    }

    /// The same composition at every grid point.
    pub fn constant(
        id: impl Into<String>,
        part_names: Vec<String>,
        grid: TimeGrid,
        column: &[f64],
    ) -> Result<Self> {
        let raw = DMatrix::from_fn(column.len(), grid.len(), |d, _| column[d]);
        closure(id, part_names, grid, &raw, DEFAULT_PSEUDOCOUNT)
    }

    /// The neutral element of perturbation.
    pub fn uniform(id: impl Into<String>, part_names: Vec<String>, grid: TimeGrid) -> Result<Self> {
        let d = part_names.len();
        let parts = DMatrix::from_element(d, grid.len(), 1.0 / d as f64);
        check_shape(&part_names, &grid, d, grid.len())?;
        Ok(Self { id: id.into(), part_names, grid, parts })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn set_id(&mut self, id: impl Into<String>) {
        self.id = id.into();
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn part_names(&self) -> &[String] {
        &self.part_names
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn parts(&self) -> &DMatrix<f64> {
        &self.parts
    }

    pub fn n_parts(&self) -> usize {
        self.parts.nrows()
    }

    pub fn n_points(&self) -> usize {
        self.parts.ncols()
    }

    pub fn clr(&self) -> ClrCurve {
        clr(self)
    }

    fn ensure_compatible(&self, other: &FunctionalComposition) -> Result<()> {
        self.grid.ensure_matches(&other.grid)?;
        if self.n_parts() != other.n_parts() {
            return Err(Error::DimensionMismatch(format!(
                "{} parts vs {} parts",
                self.n_parts(),
                other.n_parts()
            )));
        }
        Ok(())
    }
}

fn check_shape(part_names: &[String], grid: &TimeGrid, rows: usize, cols: usize) -> Result<()> {
    if rows < 2 {
        return Err(Error::DimensionMismatch(format!("need at least 2 parts, got {rows}")));
    }
    if part_names.len() != rows {
        return Err(Error::DimensionMismatch(format!("{} part names for {} parts", part_names.len(), rows)));
    }
    if cols != grid.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} columns for a grid of {} points",
            cols,
            grid.len()
        )));
    }
    Ok(())
}

/// Image of a composition under the centered log-ratio map: every column sums to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ClrCurve {
    id: String,
    part_names: Vec<String>,
    grid: TimeGrid,
    coords: DMatrix<f64>,
}

impl ClrCurve {
    /// Accepts coordinates whose column sums are within [`CLR_SUM_TOLERANCE`]
    /// of zero and removes the residual column means.
    pub fn new(
        id: impl Into<String>,
        part_names: Vec<String>,
        grid: TimeGrid,
        mut coords: DMatrix<f64>,
    ) -> Result<Self> {
        check_shape(&part_names, &grid, coords.nrows(), coords.ncols())?;
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::DimensionMismatch("non-finite clr coordinate".into()));
        }
        recenter_columns(&mut coords, CLR_SUM_TOLERANCE)?;
        Ok(Self { id: id.into(), part_names, grid, coords })
    }

    /// Projects arbitrary coordinates onto the zero-sum subspace.
    pub fn project(
        id: impl Into<String>,
        part_names: Vec<String>,
        grid: TimeGrid,
        mut coords: DMatrix<f64>,
    ) -> Result<Self> {
        check_shape(&part_names, &grid, coords.nrows(), coords.ncols())?;
        recenter_columns(&mut coords, f64::INFINITY)?;
        Ok(Self { id: id.into(), part_names, grid, coords })
    }

    pub fn zeros(id: impl Into<String>, part_names: Vec<String>, grid: TimeGrid) -> Self {
        let coords = DMatrix::zeros(part_names.len(), grid.len());
        Self { id: id.into(), part_names, grid, coords }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn part_names(&self) -> &[String] {
        &self.part_names
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn coords(&self) -> &DMatrix<f64> {
        &self.coords
    }

    pub fn n_parts(&self) -> usize {
        self.coords.nrows()
    }

    pub fn n_points(&self) -> usize {
        self.coords.ncols()
    }

    /// Part-major flattening: index `d * T + i`.
    pub fn to_flat(&self) -> DVector<f64> {
        let (d, t) = self.coords.shape();
        DVector::from_fn(d * t, |k, _| self.coords[(k / t, k % t)])
    }

    pub fn inner(&self, other: &ClrCurve) -> Result<f64> {
        self.ensure_compatible(other)?;
        Ok(weighted_inner(&self.grid, &self.coords, &other.coords))
    }

    pub fn norm(&self) -> f64 {
        weighted_inner(&self.grid, &self.coords, &self.coords).max(0.0).sqrt()
    }

    pub fn add(&self, other: &ClrCurve) -> Result<ClrCurve> {
        self.ensure_compatible(other)?;
        Ok(self.map_coords(&self.coords + &other.coords))
    }

    pub fn sub(&self, other: &ClrCurve) -> Result<ClrCurve> {
        self.ensure_compatible(other)?;
        Ok(self.map_coords(&self.coords - &other.coords))
    }

    pub fn scale(&self, alpha: f64) -> ClrCurve {
        self.map_coords(&self.coords * alpha)
    }

    /// `self + alpha * other`.
    pub fn axpy(&self, alpha: f64, other: &ClrCurve) -> Result<ClrCurve> {
        self.ensure_compatible(other)?;
        Ok(self.map_coords(&self.coords + &other.coords * alpha))
    }

    fn map_coords(&self, coords: DMatrix<f64>) -> ClrCurve {
        ClrCurve { id: self.id.clone(), part_names: self.part_names.clone(), grid: self.grid.clone(), coords }
    }

    fn ensure_compatible(&self, other: &ClrCurve) -> Result<()> {
        self.grid.ensure_matches(&other.grid)?;
        if self.coords.shape() != other.coords.shape() {
            return Err(Error::DimensionMismatch(format!(
                "{:?} vs {:?}",
                self.coords.shape(),
                other.coords.shape()
            )));
        }
        Ok(())
    }
}

fn recenter_columns(coords: &mut DMatrix<f64>, tolerance: f64) -> Result<()> {
    let d = coords.nrows() as f64;
    for (j, mut col) in coords.column_iter_mut().enumerate() {
        let sum = col.sum();
        if sum.abs() > tolerance {
            return Err(Error::ColumnSum { column: j, sum, expected: 0.0 });
        }
        col.add_scalar_mut(-sum / d);
    }
    Ok(())
}

fn weighted_inner(grid: &TimeGrid, a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.column_iter().zip(b.column_iter()).zip(grid.weights()).map(|((ca, cb), w)| w * ca.dot(&cb)).sum()
}

/// Closure of a nonnegative `D x T` matrix.
///
/// Zero entries are replaced by `pseudocount` before each column is divided by
/// its sum; entries are then floored at [`EPS_FLOOR`].
pub fn closure(
    id: impl Into<String>,
    part_names: Vec<String>,
    grid: TimeGrid,
    raw: &DMatrix<f64>,
    pseudocount: f64,
) -> Result<FunctionalComposition> {
    check_shape(&part_names, &grid, raw.nrows(), raw.ncols())?;
    let mut parts = raw.clone();
    for (j, mut col) in parts.column_iter_mut().enumerate() {
        for (d, v) in col.iter().enumerate() {
            if !v.is_finite() || *v < 0.0 {
                return Err(Error::NegativeEntry { part: d, column: j, value: *v });
            }
        }
        if col.sum() <= 0.0 {
            return Err(Error::AllZeroColumn { column: j });
        }
        for v in col.iter_mut() {
            if *v == 0.0 {
                *v = pseudocount;
            }
        }
        close_column(col.as_mut_slice());
    }
    Ok(FunctionalComposition { id: id.into(), part_names, grid, parts })
}

/// Divides by the sum, floors at [`EPS_FLOOR`] and divides again.
fn close_column(col: &mut [f64]) {
    let sum: f64 = col.iter().sum();
    col.iter_mut().for_each(|v| *v /= sum);
    if col.iter().any(|v| *v < EPS_FLOOR) {
        col.iter_mut().for_each(|v| *v = v.max(EPS_FLOOR));
        let sum: f64 = col.iter().sum();
        col.iter_mut().for_each(|v| *v /= sum);
    }
}

/// Pointwise geometric mean of the parts, computed in log space.
pub fn geometric_mean_curve(f: &FunctionalComposition) -> Vec<f64> {
    let d = f.n_parts() as f64;
    f.parts.column_iter().map(|col| (col.iter().map(|v| v.ln()).sum::<f64>() / d).exp()).collect()
}

pub fn clr(f: &FunctionalComposition) -> ClrCurve {
    let mut coords = f.parts.map(f64::ln);
    let d = f.n_parts() as f64;
    for mut col in coords.column_iter_mut() {
        let mean = col.sum() / d;
        col.add_scalar_mut(-mean);
    }
    ClrCurve { id: f.id.clone(), part_names: f.part_names.clone(), grid: f.grid.clone(), coords }
}

/// Inverse clr of a raw coordinate matrix; columns are recentered first.
pub fn clr_inv_coords(
    id: impl Into<String>,
    part_names: Vec<String>,
    grid: TimeGrid,
    coords: &DMatrix<f64>,
) -> Result<FunctionalComposition> {
    check_shape(&part_names, &grid, coords.nrows(), coords.ncols())?;
    let mut centered = coords.clone();
    recenter_columns(&mut centered, CLR_SUM_TOLERANCE)?;
    exp_close(id.into(), part_names, grid, centered)
}

pub fn clr_inv(u: &ClrCurve) -> Result<FunctionalComposition> {
    clr_inv_coords(u.id.clone(), u.part_names.clone(), u.grid.clone(), &u.coords)
}

fn exp_close(
    id: String,
    part_names: Vec<String>,
    grid: TimeGrid,
    mut logs: DMatrix<f64>,
) -> Result<FunctionalComposition> {
    if let Some(&v) = logs.iter().find(|v| !v.is_finite() || v.abs() > EXP_GUARD) {
        return Err(Error::Overflow { value: v });
    }
    for mut col in logs.column_iter_mut() {
        let max = col.max();
        col.iter_mut().for_each(|v| *v = (*v - max).exp());
        close_column(col.as_mut_slice());
    }
    Ok(FunctionalComposition { id, part_names, grid, parts: logs })
}

/// `f ⊕ g`: pointwise product followed by closure.
pub fn perturb(f: &FunctionalComposition, g: &FunctionalComposition) -> Result<FunctionalComposition> {
    f.ensure_compatible(g)?;
    let logs = f.parts.map(f64::ln) + g.parts.map(f64::ln);
    exp_close(f.id.clone(), f.part_names.clone(), f.grid.clone(), logs)
}

/// `alpha ⊙ f`: pointwise power followed by closure.
pub fn power(alpha: f64, f: &FunctionalComposition) -> Result<FunctionalComposition> {
    let logs = f.parts.map(|v| alpha * v.ln());
    exp_close(f.id.clone(), f.part_names.clone(), f.grid.clone(), logs)
}

/// `f ⊖ g = f ⊕ ((-1) ⊙ g)`.
pub fn difference(f: &FunctionalComposition, g: &FunctionalComposition) -> Result<FunctionalComposition> {
    perturb(f, &power(-1.0, g)?)
}

/// Simplex inner product: the quadrature `L2^D` inner product of the clr images.
pub fn inner_product(f: &FunctionalComposition, g: &FunctionalComposition) -> Result<f64> {
    f.grid.ensure_matches(&g.grid)?;
    clr(f).inner(&clr(g))
}

pub fn norm(f: &FunctionalComposition) -> f64 {
    clr(f).norm()
}

pub fn distance(f: &FunctionalComposition, g: &FunctionalComposition) -> Result<f64> {
    Ok(norm(&difference(f, g)?))
}

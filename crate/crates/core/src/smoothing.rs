//! Penalized B-spline smoothing of compositions in clr space, and completion
//! of partially observed curves by ridge-regularized conditional expectation.

use nalgebra::{Cholesky, DMatrix, DVector, SVD};
use serde::{Deserialize, Serialize};

use crate::compdata::{clr, clr_inv_coords, ClrCurve, FunctionalComposition};
use crate::error::{Error, Result};

pub const DEFAULT_BASIS_DIMENSION: usize = 15;
pub const DEFAULT_PENALTY_ORDER: usize = 2;
pub const DEFAULT_RIDGE: f64 = 1e-3;
/// Minimum share of observed grid points for a curve to be completed.
pub const MIN_OBSERVED_FRACTION: f64 = 0.6;
pub const MIN_COMPLETE_CURVES: usize = 5;

const DEGREE: usize = 3;
const RANK_TOLERANCE: f64 = 1e-10;

/// Smoothing parameter: fixed, or chosen by generalized cross-validation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Lambda {
    Fixed(f64),
    #[default]
    Gcv,
}

impl Serialize for Lambda {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Lambda::Fixed(v) => s.serialize_f64(*v),
            Lambda::Gcv => s.serialize_str("gcv"),
        }
    }
}

impl<'de> Deserialize<'de> for Lambda {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Number(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Number(v) => Ok(Lambda::Fixed(v)),
            Raw::Text(t) if t.eq_ignore_ascii_case("gcv") => Ok(Lambda::Gcv),
            Raw::Text(t) => {
                Err(serde::de::Error::custom(format!("lambda must be a number or \"gcv\", got {t:?}")))
            }
        }
    }
}

/// 21 log-spaced values `10^-6 ..= 10^4`.
pub fn gcv_lambda_grid() -> Vec<f64> {
    (0..21).map(|k| 10f64.powf(-6.0 + 0.5 * k as f64)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmoothingConfig {
    pub basis_dimension: usize,
    pub penalty_order: usize,
    pub lambda: Lambda,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        Self {
            basis_dimension: DEFAULT_BASIS_DIMENSION,
            penalty_order: DEFAULT_PENALTY_ORDER,
            lambda: Lambda::Gcv,
        }
    }
}

impl SmoothingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.basis_dimension < 4 {
            return Err(Error::InvalidSmoothing(format!(
                "basis_dimension must be at least 4, got {}",
                self.basis_dimension
            )));
        }
        if !(1..=3).contains(&self.penalty_order) {
            return Err(Error::InvalidSmoothing(format!(
                "penalty_order must be 1, 2 or 3, got {}",
                self.penalty_order
            )));
        }
        if let Lambda::Fixed(v) = self.lambda {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidSmoothing(format!("lambda must be >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Clamped cubic B-spline basis with equally spaced interior knots.
#[derive(Debug, Clone)]
pub struct BSplineBasis {
    knots: Vec<f64>,
    n_basis: usize,
}

impl BSplineBasis {
    pub fn new(lower: f64, upper: f64, n_basis: usize) -> Result<Self> {
        if n_basis < DEGREE + 1 || upper <= lower {
            return Err(Error::InvalidSmoothing(format!(
                "cannot build {n_basis} cubic B-splines on [{lower}, {upper}]"
            )));
        }
        let interior = n_basis - DEGREE - 1;
        let mut knots = vec![lower; DEGREE + 1];
        let step = (upper - lower) / (interior + 1) as f64;
        knots.extend((1..=interior).map(|j| lower + step * j as f64));
        knots.extend(std::iter::repeat_n(upper, DEGREE + 1));
        Ok(Self { knots, n_basis })
    }

    pub fn n_basis(&self) -> usize {
        self.n_basis
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// All basis functions of `degree` at `x` (Cox-de Boor).
    fn lower_degree(&self, x: f64, degree: usize) -> Vec<f64> {
        let u = &self.knots;
        let m = u.len();
        let last = *u.last().unwrap();
        let mut b: Vec<f64> = (0..m - 1)
            .map(|i| {
                let inside = u[i] <= x && x < u[i + 1];
                let right_end = x == last && u[i] < u[i + 1] && u[i + 1] == last;
                if inside || right_end {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        for q in 1..=degree {
            b = (0..m - 1 - q)
                .map(|i| {
                    let left = ratio(x - u[i], u[i + q] - u[i]) * b[i];
                    let right = ratio(u[i + q + 1] - x, u[i + q + 1] - u[i + 1]) * b[i + 1];
                    left + right
                })
                .collect();
        }
        b
    }

    /// Values (`order = 0`) or `order`-th derivatives of every basis function at `x`.
    pub fn evaluate(&self, x: f64, order: usize) -> Vec<f64> {
        if order > DEGREE {
            return vec![0.0; self.n_basis];
        }
        let u = &self.knots;
        let mut d = self.lower_degree(x, DEGREE - order);
        for q in (DEGREE - order + 1)..=DEGREE {
            let qf = q as f64;
            d = (0..u.len() - 1 - q)
                .map(|i| qf * (ratio(d[i], u[i + q] - u[i]) - ratio(d[i + 1], u[i + q + 1] - u[i + 1])))
                .collect();
        }
        d
    }

    /// Gram matrix of `order`-th derivatives, `\int B_j^(m) B_k^(m)`, by
    /// 4-point Gauss-Legendre on every knot span (exact for cubic splines).
    pub fn penalty(&self, order: usize) -> DMatrix<f64> {
        const NODES: [f64; 4] = [
            -0.861_136_311_594_052_6,
            -0.339_981_043_584_856_3,
            0.339_981_043_584_856_3,
            0.861_136_311_594_052_6,
        ];
        const WEIGHTS: [f64; 4] = [
            0.347_854_845_137_453_9,
            0.652_145_154_862_546_1,
            0.652_145_154_862_546_1,
            0.347_854_845_137_453_9,
        ];
        let k = self.n_basis;
        let mut p = DMatrix::zeros(k, k);
        for span in self.knots.windows(2).filter(|w| w[1] > w[0]) {
            let half = (span[1] - span[0]) / 2.0;
            let mid = (span[1] + span[0]) / 2.0;
            for (node, weight) in NODES.iter().zip(WEIGHTS) {
                let d = DVector::from_vec(self.evaluate(mid + half * node, order));
                p += (&d * d.transpose()) * (weight * half);
            }
        }
        p
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Result of fitting one or more series with a shared smoothing parameter.
#[derive(Debug, Clone)]
pub struct SplineFit {
    /// `K x S` spline coefficients, one column per series.
    pub coefficients: DMatrix<f64>,
    /// `T x S` fitted values at every grid point.
    pub fitted: DMatrix<f64>,
    pub lambda: f64,
    /// Trace of the hat matrix.
    pub edf: f64,
    /// Weighted residual sum of squares over all series.
    pub rss: f64,
    pub gcv: f64,
    /// `sum_s c_s' P c_s`.
    pub roughness: f64,
}

/// Penalized least squares smoother on a fixed set of sample points.
#[derive(Debug, Clone)]
pub struct PenalizedSpline {
    basis: BSplineBasis,
    design: DMatrix<f64>,
    penalty: DMatrix<f64>,
}

impl PenalizedSpline {
    pub fn new(points: &[f64], basis_dimension: usize, penalty_order: usize) -> Result<Self> {
        SmoothingConfig { basis_dimension, penalty_order, lambda: Lambda::Gcv }.validate()?;
        let (lo, hi) = match (points.first(), points.last()) {
            (Some(&lo), Some(&hi)) if hi > lo => (lo, hi),
            _ => return Err(Error::InvalidSmoothing("need at least two distinct points".into())),
        };
        let basis = BSplineBasis::new(lo, hi, basis_dimension)?;
        let mut design = DMatrix::zeros(points.len(), basis_dimension);
        for (i, &x) in points.iter().enumerate() {
            for (j, v) in basis.evaluate(x, 0).into_iter().enumerate() {
                design[(i, j)] = v;
            }
        }
        let penalty = basis.penalty(penalty_order);
        Ok(Self { basis, design, penalty })
    }

    pub fn basis(&self) -> &BSplineBasis {
        &self.basis
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    pub fn penalty(&self) -> &DMatrix<f64> {
        &self.penalty
    }

    /// Fits the columns of `y` (`T x S`) with observation weights (0 drops a point).
    pub fn fit(&self, y: &DMatrix<f64>, weights: &[f64], lambda: f64) -> Result<SplineFit> {
        let t = self.design.nrows();
        if y.nrows() != t || weights.len() != t {
            return Err(Error::DimensionMismatch(format!(
                "{} rows and {} weights for {t} grid points",
                y.nrows(),
                weights.len()
            )));
        }
        let bw = DMatrix::from_fn(t, self.design.ncols(), |i, j| self.design[(i, j)] * weights[i]);
        let gram = bw.transpose() * &self.design;
        if lambda == 0.0 {
            let svd = SVD::new(gram.clone(), false, false);
            let max = svd.singular_values.max();
            if max <= 0.0 || svd.singular_values.min() <= RANK_TOLERANCE * max {
                return Err(Error::SingularFit);
            }
        }
        let system = &gram + &self.penalty * lambda;
        let chol = Cholesky::new(system).ok_or(Error::SingularFit)?;
        let coefficients = chol.solve(&(bw.transpose() * y));
        let fitted = &self.design * &coefficients;
        let edf = chol.solve(&gram).trace();
        let rss: f64 = (0..t).map(|i| weights[i] * (y.row(i) - fitted.row(i)).norm_squared()).sum();
        let n_obs: f64 = weights.iter().sum();
        let gcv = if n_obs - edf > 1e-8 { n_obs * rss / (n_obs - edf).powi(2) } else { f64::INFINITY };
        let roughness = (coefficients.transpose() * &self.penalty * &coefficients).trace();
        Ok(SplineFit { coefficients, fitted, lambda, edf, rss, gcv, roughness })
    }

    /// Minimizes GCV over [`gcv_lambda_grid`]; ties keep the smaller lambda.
    pub fn fit_gcv(&self, y: &DMatrix<f64>, weights: &[f64]) -> Result<SplineFit> {
        let mut best: Option<SplineFit> = None;
        for lambda in gcv_lambda_grid() {
            let fit = match self.fit(y, weights, lambda) {
                Ok(f) => f,
                Err(Error::SingularFit) => continue,
                Err(e) => return Err(e),
            };
            if best.as_ref().is_none_or(|b| fit.gcv < b.gcv) {
                best = Some(fit);
            }
        }
        best.ok_or(Error::SingularFit)
    }

    pub fn fit_with(&self, y: &DMatrix<f64>, weights: &[f64], lambda: Lambda) -> Result<SplineFit> {
        match lambda {
            Lambda::Fixed(v) => self.fit(y, weights, v),
            Lambda::Gcv => self.fit_gcv(y, weights),
        }
    }
}

/// Grid points without data for one curve.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MissingMask {
    pub id: String,
    pub missing: Vec<bool>,
}

impl MissingMask {
    pub fn complete(id: impl Into<String>, n: usize) -> Self {
        Self { id: id.into(), missing: vec![false; n] }
    }

    pub fn n_missing(&self) -> usize {
        self.missing.iter().filter(|m| **m).count()
    }

    pub fn is_complete(&self) -> bool {
        self.n_missing() == 0
    }

    pub fn observed_fraction(&self) -> f64 {
        if self.missing.is_empty() {
            return 1.0;
        }
        1.0 - self.n_missing() as f64 / self.missing.len() as f64
    }

    pub fn check_guard(&self) -> Result<()> {
        if self.observed_fraction() < MIN_OBSERVED_FRACTION {
            return Err(Error::GuardViolation {
                id: self.id.clone(),
                observed: 100.0 * self.observed_fraction(),
            });
        }
        Ok(())
    }

    fn weights(&self) -> Vec<f64> {
        self.missing.iter().map(|&m| if m { 0.0 } else { 1.0 }).collect()
    }
}

pub fn smooth_composition(
    raw: &FunctionalComposition,
    cfg: &SmoothingConfig,
) -> Result<FunctionalComposition> {
    smooth_composition_masked(raw, None, cfg)
}

/// Smooths every clr coordinate with one shared smoothing parameter, fitting
/// only the observed grid points when a mask is given.
pub fn smooth_composition_masked(
    raw: &FunctionalComposition,
    mask: Option<&MissingMask>,
    cfg: &SmoothingConfig,
) -> Result<FunctionalComposition> {
    cfg.validate()?;
    let t = raw.n_points();
    let weights = match mask {
        Some(m) if m.missing.len() != t => {
            return Err(Error::DimensionMismatch(format!(
                "mask of length {} for {t} grid points",
                m.missing.len()
            )))
        }
        Some(m) => m.weights(),
        None => vec![1.0; t],
    };
    let spline = PenalizedSpline::new(raw.grid().points(), cfg.basis_dimension, cfg.penalty_order)?;
    let coords = clr(raw);
    let fit = spline.fit_with(&coords.coords().transpose(), &weights, cfg.lambda)?;
    let centered = center_columns(fit.fitted.transpose());
    clr_inv_coords(raw.id(), raw.part_names().to_vec(), raw.grid().clone(), &centered)
}

/// Roughness `sum_d c_d' P c_d` of the penalized fit of `f`'s clr coordinates.
pub fn clr_roughness(f: &FunctionalComposition, cfg: &SmoothingConfig) -> Result<f64> {
    cfg.validate()?;
    let spline = PenalizedSpline::new(f.grid().points(), cfg.basis_dimension, cfg.penalty_order)?;
    let y = clr(f).coords().transpose();
    Ok(spline.fit_with(&y, &vec![1.0; f.n_points()], cfg.lambda)?.roughness)
}

/// Fills the missing years of incomplete curves with the best linear
/// predictor given their observed years.
///
/// Works on part-major flattened clr vectors. The mean and covariance (divisor
/// `n`) come from the complete curves; the observed block is regularized by
/// `ridge` times its mean diagonal. Observed columns are returned unchanged.
pub fn impute_missing(
    sample: &[FunctionalComposition],
    masks: &[MissingMask],
    ridge: f64,
) -> Result<Vec<FunctionalComposition>> {
    if sample.len() != masks.len() {
        return Err(Error::DimensionMismatch(format!("{} curves and {} masks", sample.len(), masks.len())));
    }
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::InvalidSmoothing(format!("ridge must be >= 0, got {ridge}")));
    }
    for (f, m) in sample.iter().zip(masks) {
        if m.missing.len() != f.n_points() {
            return Err(Error::DimensionMismatch(format!(
                "mask `{}` has {} entries for {} grid points",
                m.id,
                m.missing.len(),
                f.n_points()
            )));
        }
    }
    if masks.iter().all(MissingMask::is_complete) {
        return Ok(sample.to_vec());
    }
    for m in masks.iter().filter(|m| !m.is_complete()) {
        m.check_guard()?;
    }
    let complete: Vec<ClrCurve> =
        sample.iter().zip(masks).filter(|(_, m)| m.is_complete()).map(|(f, _)| clr(f)).collect();
    if complete.len() < MIN_COMPLETE_CURVES {
        return Err(Error::InsufficientCompleteCurves { needed: MIN_COMPLETE_CURVES, found: complete.len() });
    }
    let first = &sample[0];
    for f in sample {
        first.grid().ensure_matches(f.grid())?;
        if f.n_parts() != first.n_parts() {
            return Err(Error::DimensionMismatch("curves have different part counts".into()));
        }
    }
    let (d, t) = (first.n_parts(), first.n_points());
    let dim = d * t;
    let nc = complete.len() as f64;
    let mut mu = DVector::zeros(dim);
    for c in &complete {
        mu += c.to_flat();
    }
    mu /= nc;
    let mut cov = DMatrix::zeros(dim, dim);
    for c in &complete {
        let x = c.to_flat() - &mu;
        cov.ger(1.0 / nc, &x, &x, 1.0);
    }

    sample
        .iter()
        .zip(masks)
        .map(|(f, m)| {
            if m.is_complete() {
                return Ok(f.clone());
            }
            let x = clr(f).to_flat();
            let (miss, obs): (Vec<usize>, Vec<usize>) = (0..dim).partition(|k| m.missing[k % t]);
            let s_oo = DMatrix::from_fn(obs.len(), obs.len(), |a, b| cov[(obs[a], obs[b])]);
            let s_mo = DMatrix::from_fn(miss.len(), obs.len(), |a, b| cov[(miss[a], obs[b])]);
            let resid = DVector::from_fn(obs.len(), |a, _| x[obs[a]] - mu[obs[a]]);
            let scale = s_oo.trace() / obs.len() as f64;
            let predicted_dev = if scale <= 0.0 {
                DVector::zeros(miss.len())
            } else {
                let mut system = s_oo;
                for a in 0..obs.len() {
                    system[(a, a)] += ridge * scale;
                }
                let alpha = match Cholesky::new(system.clone()) {
                    Some(ch) => ch.solve(&resid),
                    None => SVD::new(system, true, true)
                        .solve(&resid, RANK_TOLERANCE * scale)
                        .map_err(|_| Error::SingularFit)?,
                };
                s_mo * alpha
            };
            let mut coords = clr(f).coords().clone();
            for (a, &k) in miss.iter().enumerate() {
                coords[(k / t, k % t)] = mu[k] + predicted_dev[a];
            }
            let filled =
                clr_inv_coords(f.id(), f.part_names().to_vec(), f.grid().clone(), &center_columns(coords))?;
            let mut parts = f.parts().clone();
            for i in (0..t).filter(|&i| m.missing[i]) {
                parts.set_column(i, &filled.parts().column(i));
            }
            FunctionalComposition::new(f.id(), f.part_names().to_vec(), f.grid().clone(), parts)
        })
        .collect()
}

fn center_columns(mut m: DMatrix<f64>) -> DMatrix<f64> {
    let d = m.nrows() as f64;
    for mut col in m.column_iter_mut() {
        let mean = col.sum() / d;
        col.add_scalar_mut(-mean);
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compdata::TimeGrid;
    use approx::assert_abs_diff_eq;

    fn names(d: usize) -> Vec<String> {
        (0..d).map(|i| format!("p{i}")).collect()
    }

    #[test]
    fn basis_partition_of_unity() {
        let b = BSplineBasis::new(0.0, 10.0, 9).unwrap();
        for x in [0.0, 0.3, 2.5, 5.0, 9.99, 10.0] {
            let v = b.evaluate(x, 0);
            assert_eq!(v.len(), 9);
            assert_abs_diff_eq!(v.iter().sum::<f64>(), 1.0, epsilon = 1e-14);
            assert!(v.iter().all(|&x| x >= 0.0));
            // derivatives of a partition of unity vanish
            assert_abs_diff_eq!(b.evaluate(x, 1).iter().sum::<f64>(), 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(b.evaluate(x, 2).iter().sum::<f64>(), 0.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let b = BSplineBasis::new(0.0, 1.0, 8).unwrap();
        let h = 1e-6;
        for x in [0.13, 0.42, 0.77] {
            let d = b.evaluate(x, 1);
            let plus = b.evaluate(x + h, 0);
            let minus = b.evaluate(x - h, 0);
            for j in 0..8 {
                assert_abs_diff_eq!(d[j], (plus[j] - minus[j]) / (2.0 * h), epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn penalty_annihilates_low_order_polynomials() {
        // coefficients of x (a linear function) in a clamped cubic basis are
        // the Greville abscissae
        let b = BSplineBasis::new(0.0, 1.0, 10).unwrap();
        let u = b.knots();
        let greville = DVector::from_fn(10, |j, _| (u[j + 1] + u[j + 2] + u[j + 3]) / 3.0);
        let ones = DVector::from_element(10, 1.0);
        let p2 = b.penalty(2);
        assert!((&p2 * &greville).amax() < 1e-10);
        assert!((&p2 * &ones).amax() < 1e-10);
        let p1 = b.penalty(1);
        assert_abs_diff_eq!((greville.transpose() * &p1 * &greville)[(0, 0)], 1.0, epsilon = 1e-10);
    }

    #[test]
    fn config_validation() {
        assert!(SmoothingConfig::default().validate().is_ok());
        let bad =
            |b, p, l| SmoothingConfig { basis_dimension: b, penalty_order: p, lambda: l }.validate().is_err();
        assert!(bad(3, 2, Lambda::Gcv));
        assert!(bad(10, 0, Lambda::Gcv));
        assert!(bad(10, 4, Lambda::Gcv));
        assert!(bad(10, 2, Lambda::Fixed(-1.0)));
        let parsed: SmoothingConfig = toml::from_str("lambda = \"gcv\"\nbasis_dimension = 12").unwrap();
        assert_eq!(parsed.lambda, Lambda::Gcv);
        assert_eq!(parsed.basis_dimension, 12);
        let fixed: SmoothingConfig = toml::from_str("lambda = 0.5").unwrap();
        assert_eq!(fixed.lambda, Lambda::Fixed(0.5));
        assert!(toml::from_str::<SmoothingConfig>("lambda = \"auto\"").is_err());
    }

    fn wiggly(t: usize) -> FunctionalComposition {
        let grid = TimeGrid::years(1959, 1958 + t as i32).unwrap();
        let raw = DMatrix::from_fn(4, t, |d, i| {
            let x = i as f64;
            1.0 + d as f64 + (0.7 * x + d as f64).sin().abs() + 0.3 * ((x * 1.3).cos() + 1.0)
        });
        FunctionalComposition::from_raw("w", names(4), grid, &raw).unwrap()
    }

    #[test]
    fn saturated_unpenalized_fit_interpolates() {
        let f = wiggly(20);
        let cfg = SmoothingConfig { basis_dimension: 20, penalty_order: 2, lambda: Lambda::Fixed(0.0) };
        let s = smooth_composition(&f, &cfg).unwrap();
        assert!((s.parts() - f.parts()).amax() < 1e-8);
    }

    #[test]
    fn constant_composition_is_unchanged() {
        let grid = TimeGrid::years(1959, 2015).unwrap();
        let f = FunctionalComposition::constant("c", names(3), grid, &[5.0, 2.0, 1.0]).unwrap();
        for lambda in [Lambda::Fixed(0.0), Lambda::Fixed(1e3), Lambda::Gcv] {
            let cfg = SmoothingConfig { lambda, ..Default::default() };
            let s = smooth_composition(&f, &cfg).unwrap();
            assert!((s.parts() - f.parts()).amax() < 1e-8);
            assert!(s.parts().column_iter().all(|c| (c.sum() - 1.0).abs() < 1e-12));
        }
    }

    #[test]
    fn rank_deficient_basis_is_singular() {
        let f = wiggly(10);
        let cfg = SmoothingConfig { basis_dimension: 14, penalty_order: 2, lambda: Lambda::Fixed(0.0) };
        assert!(matches!(smooth_composition(&f, &cfg), Err(Error::SingularFit)));
    }

    #[test]
    fn roughness_decreases_with_lambda() {
        let f = wiggly(57);
        let mut last = f64::INFINITY;
        for lambda in gcv_lambda_grid() {
            let cfg = SmoothingConfig { lambda: Lambda::Fixed(lambda), ..Default::default() };
            let r = clr_roughness(&f, &cfg).unwrap();
            assert!(r <= last * (1.0 + 1e-9));
            last = r;
        }
    }

    #[test]
    fn relabeling_parts_commutes_with_smoothing() {
        let f = wiggly(57);
        let perm = [2, 0, 3, 1];
        let permuted_parts = DMatrix::from_fn(4, 57, |d, i| f.parts()[(perm[d], i)]);
        let g = FunctionalComposition::new("w", names(4), f.grid().clone(), permuted_parts).unwrap();
        let cfg = SmoothingConfig::default();
        let sf = smooth_composition(&f, &cfg).unwrap();
        let sg = smooth_composition(&g, &cfg).unwrap();
        for (d, &pd) in perm.iter().enumerate() {
            for i in 0..57 {
                assert_abs_diff_eq!(sg.parts()[(d, i)], sf.parts()[(pd, i)], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn masked_smoothing_ignores_missing_points() {
        let f = wiggly(57);
        let mut mask = MissingMask::complete("w", 57);
        mask.missing[30] = true;
        mask.missing[31] = true;
        let mut raw = f.parts().clone();
        raw[(0, 30)] = 50.0;
        let corrupted = FunctionalComposition::from_raw("w", names(4), f.grid().clone(), &raw).unwrap();
        let cfg = SmoothingConfig { lambda: Lambda::Fixed(1.0), ..Default::default() };
        let a = smooth_composition_masked(&f, Some(&mask), &cfg).unwrap();
        let b = smooth_composition_masked(&corrupted, Some(&mask), &cfg).unwrap();
        // the corrupted value changes closure of that column only, which is masked
        assert!((a.parts() - b.parts()).amax() < 1e-12);
    }

    fn identical_sample(n: usize) -> Vec<FunctionalComposition> {
        (0..n).map(|i| wiggly(57).with_id(format!("c{i}"))).collect()
    }

    #[test]
    fn complete_masks_are_a_no_op() {
        let sample = identical_sample(3);
        let masks: Vec<_> = sample.iter().map(|f| MissingMask::complete(f.id(), 57)).collect();
        assert_eq!(impute_missing(&sample, &masks, DEFAULT_RIDGE).unwrap(), sample);
    }

    #[test]
    fn identical_curves_impute_the_common_value() {
        let sample = identical_sample(7);
        let mut masks: Vec<_> = sample.iter().map(|f| MissingMask::complete(f.id(), 57)).collect();
        masks[6].missing[40] = true;
        let mut broken = sample.clone();
        let mut raw = broken[6].parts().clone();
        raw.set_column(40, &DVector::from_vec(vec![0.7, 0.1, 0.1, 0.1]));
        broken[6] = FunctionalComposition::new("c6", names(4), broken[6].grid().clone(), raw).unwrap();
        let out = impute_missing(&broken, &masks, DEFAULT_RIDGE).unwrap();
        let col = out[6].parts().column(40);
        let expected = sample[0].parts().column(40);
        assert!((col - expected).amax() < 1e-6);
        // observed columns are bitwise untouched
        for i in (0..57).filter(|&i| i != 40) {
            assert_eq!(out[6].parts().column(i), broken[6].parts().column(i));
        }
    }

    #[test]
    fn imputation_errors() {
        let sample = identical_sample(5);
        let mut masks: Vec<_> = sample.iter().map(|f| MissingMask::complete(f.id(), 57)).collect();
        masks[0].missing[3] = true;
        assert!(matches!(
            impute_missing(&sample, &masks, DEFAULT_RIDGE),
            Err(Error::InsufficientCompleteCurves { found: 4, .. })
        ));
        let sample = identical_sample(7);
        let mut masks: Vec<_> = sample.iter().map(|f| MissingMask::complete(f.id(), 57)).collect();
        masks[0].missing.iter_mut().take(30).for_each(|m| *m = true);
        assert!(matches!(impute_missing(&sample, &masks, DEFAULT_RIDGE), Err(Error::GuardViolation { .. })));
        assert!(impute_missing(&sample, &masks[..3], DEFAULT_RIDGE).is_err());
    }
}

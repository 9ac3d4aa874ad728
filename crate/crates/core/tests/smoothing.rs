use compfda_core::compdata::{clr, clr_inv_coords, TimeGrid};
use compfda_core::smoothing::{impute_missing, MissingMask, PenalizedSpline, DEFAULT_RIDGE};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn years() -> Vec<f64> {
    (1959..=2015).map(f64::from).collect()
}

#[test]
fn gcv_recovers_a_noisy_line() {
    let t = years();
    let spline = PenalizedSpline::new(&t, 15, 2).unwrap();
    let noise = Normal::new(0.0, 0.05).unwrap();
    let mut total = 0.0;
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let truth: Vec<f64> = t.iter().map(|x| -1.0 + 0.02 * (x - 1959.0)).collect();
        let y = DMatrix::from_fn(t.len(), 1, |i, _| truth[i] + noise.sample(&mut rng));
        let fit = spline.fit_gcv(&y, &vec![1.0; t.len()]).unwrap();
        let mse = (0..t.len()).map(|i| (fit.fitted[(i, 0)] - truth[i]).powi(2)).sum::<f64>() / t.len() as f64;
        total += mse.sqrt();
    }
    let rmse = total / 100.0;
    assert!(rmse < 0.03, "mean RMSE {rmse}");
}

const D: usize = 3;
const NOISE_SD: f64 = 0.1;

/// Two planted clr eigenfunctions, orthonormal under the yearly trapezoid rule.
fn planted(grid: &TimeGrid) -> [DVector<f64>; 2] {
    let n_t = grid.len();
    let s = |i: usize| i as f64 / (n_t - 1) as f64;
    let v1 = [1.0, -1.0, 0.0];
    let v2 = [1.0, 1.0, -2.0];
    let raw1 = DVector::from_fn(D * n_t, |r, _| v1[r / n_t] * (std::f64::consts::PI * s(r % n_t)).sin());
    let raw2 = DVector::from_fn(D * n_t, |r, _| v2[r / n_t] * (std::f64::consts::PI * s(r % n_t)).cos());
    let w = DVector::from_fn(D * n_t, |r, _| grid.weights()[r % n_t]);
    let ip = |a: &DVector<f64>, b: &DVector<f64>| a.component_mul(b).dot(&w);
    let e1 = &raw1 / ip(&raw1, &raw1).sqrt();
    let r2 = &raw2 - &e1 * ip(&raw2, &e1);
    let e2 = &r2 / ip(&r2, &r2).sqrt();
    [e1, e2]
}

fn true_covariance(phi: &[DVector<f64>; 2], n_t: usize) -> DMatrix<f64> {
    let mut cov = &phi[0] * phi[0].transpose() * 4.0 + &phi[1] * phi[1].transpose() * 1.0;
    for i in 0..n_t {
        for a in 0..D {
            for b in 0..D {
                let p = if a == b { 1.0 } else { 0.0 } - 1.0 / D as f64;
                cov[(a * n_t + i, b * n_t + i)] += NOISE_SD * NOISE_SD * p;
            }
        }
    }
    cov
}

/// Conditional expectation of the missing entries given the observed ones.
fn oracle(
    cov: &DMatrix<f64>,
    mu: &DVector<f64>,
    x: &DVector<f64>,
    missing: &[usize],
    observed: &[usize],
) -> Vec<f64> {
    let s_oo = DMatrix::from_fn(observed.len(), observed.len(), |a, b| cov[(observed[a], observed[b])]);
    let s_mo = DMatrix::from_fn(missing.len(), observed.len(), |a, b| cov[(missing[a], observed[b])]);
    let dev = DVector::from_fn(observed.len(), |a, _| x[observed[a]] - mu[observed[a]]);
    let pred = s_mo * s_oo.pseudo_inverse(1e-10).unwrap() * dev;
    missing.iter().enumerate().map(|(a, &m)| mu[m] + pred[a]).collect()
}

#[test]
fn imputation_is_close_to_the_conditional_expectation() {
    let grid = TimeGrid::years(1959, 2015).unwrap();
    let n_t = grid.len();
    let phi = planted(&grid);
    let cov = true_covariance(&phi, n_t);
    let mu = DVector::from_fn(D * n_t, |r, _| {
        let s = (r % n_t) as f64 / (n_t - 1) as f64;
        [0.4 - 0.3 * s, -0.1 + 0.5 * s, -0.3 - 0.2 * s][r / n_t]
    });
    let names: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
    let gap: Vec<usize> = (30..35).collect();
    let missing_idx: Vec<usize> = (0..D).flat_map(|d| gap.iter().map(move |i| d * n_t + i)).collect();
    let observed_idx: Vec<usize> = (0..D * n_t).filter(|r| !missing_idx.contains(r)).collect();

    let (mut err_imputed, mut err_oracle) = (0.0, 0.0);
    for rep in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + rep);
        let z = Normal::new(0.0, 1.0).unwrap();
        let n = 200;
        let mut sample = Vec::with_capacity(n);
        let mut truths = Vec::with_capacity(n);
        for i in 0..n {
            let mut x = &mu + &phi[0] * (2.0 * z.sample(&mut rng)) + &phi[1] * z.sample(&mut rng);
            for t in 0..n_t {
                let e: Vec<f64> = (0..D).map(|_| NOISE_SD * z.sample(&mut rng)).collect();
                let m = e.iter().sum::<f64>() / D as f64;
                for d in 0..D {
                    x[d * n_t + t] += e[d] - m;
                }
            }
            let coords = DMatrix::from_fn(D, n_t, |d, t| x[d * n_t + t]);
            sample.push(clr_inv_coords(format!("c{i}"), names.clone(), grid.clone(), &coords).unwrap());
            truths.push(x);
        }
        let mut masks: Vec<MissingMask> =
            (0..n).map(|i| MissingMask::complete(format!("c{i}"), n_t)).collect();
        for &i in &gap {
            masks[0].missing[i] = true;
        }
        let out = impute_missing(&sample, &masks, DEFAULT_RIDGE).unwrap();
        let imputed = clr(&out[0]);
        let best = oracle(&cov, &mu, &truths[0], &missing_idx, &observed_idx);
        for (a, &r) in missing_idx.iter().enumerate() {
            let (d, t) = (r / n_t, r % n_t);
            err_imputed += (imputed.coords()[(d, t)] - truths[0][r]).powi(2);
            err_oracle += (best[a] - truths[0][r]).powi(2);
        }
    }
    let ratio = (err_imputed / err_oracle).sqrt();
    assert!(ratio <= 1.5, "imputation RMSE is {ratio:.3} times the oracle");
}

//! Evaluation metrics: prediction MSE (noisy and true inputs), integrated
//! squared error of the recovered function, empirical credible-interval
//! coverage, latent-predictor RMSE, CRPS, and the reliability-ratio
//! attenuation factor.

use ndarray::ArrayView2;

use crate::error::{Error, Result};
use crate::stats::quantile_sorted;

/// Mean squared difference.
pub fn mse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::InvalidData(format!(
            "mse needs equal nonempty lengths, got {} and {}",
            pred.len(),
            truth.len()
        )));
    }
    Ok(pred
        .iter()
        .zip(truth)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / pred.len() as f64)
}

/// Composite-Simpson integral of (f_est - f_true)^2 over [lo, hi] from
/// values already tabulated on the uniform grid (odd length >= 3).
pub fn ise_from_grid(est: &[f64], truth: &[f64], lo: f64, hi: f64) -> Result<f64> {
    let n = est.len();
    if n != truth.len() || n < 3 || n % 2 == 0 {
        return Err(Error::InvalidData(
            "ise grid must be odd-length >= 3 and match the truth table".into(),
        ));
    }
    if est.iter().chain(truth).any(|v| !v.is_finite()) {
        return Err(Error::InvalidData(
            "non-finite function value on the ise grid".into(),
        ));
    }
    let h = (hi - lo) / (n - 1) as f64;
    let mut acc = 0.0;
    for k in 0..n {
        let w = if k == 0 || k == n - 1 {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let d = est[k] - truth[k];
        acc += w * d * d;
    }
    Ok(acc * h / 3.0)
}

/// Integrated squared error of a fitted 1-D function against the truth,
/// Simpson's rule with `n_grid` points (odd, >= 3) over [lo, hi].
pub fn ise<FE, FT>(f_est: FE, f_true: FT, lo: f64, hi: f64, n_grid: usize) -> Result<f64>
where
    FE: Fn(f64) -> f64,
    FT: Fn(f64) -> f64,
{
    if n_grid < 3 || n_grid % 2 == 0 {
        return Err(Error::InvalidData("n_grid must be odd and >= 3".into()));
    }
    let h = (hi - lo) / (n_grid - 1) as f64;
    let est: Vec<f64> = (0..n_grid).map(|k| f_est(lo + k as f64 * h)).collect();
    let truth: Vec<f64> = (0..n_grid).map(|k| f_true(lo + k as f64 * h)).collect();
    ise_from_grid(&est, &truth, lo, hi)
}

/// Empirical CRPS of a sample against one observation:
/// mean|S - y| - (1/2) mean|S - S'| with the double mean over all ordered
/// sample pairs. Computed in O(k log k) via the sorted-sample identity.
pub fn crps_samples(samples: &[f64], observed: f64) -> Result<f64> {
    let k = samples.len();
    if k < 2 {
        return Err(Error::InvalidData(
            "crps needs at least two posterior draws".into(),
        ));
    }
    let kf = k as f64;
    let term1 = samples.iter().map(|s| (s - observed).abs()).sum::<f64>() / kf;
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("NaN in crps input"));
    // sum over ordered pairs |s_i - s_j| = 2 * sum_i (2i + 1 - k) s_(i)
    let mut pair_sum = 0.0;
    for (i, s) in sorted.iter().enumerate() {
        pair_sum += (2.0 * i as f64 + 1.0 - kf) * s;
    }
    let term2 = pair_sum / (kf * kf); // already includes the 1/2
    Ok(term1 - term2)
}

/// Fraction of points whose true value falls inside the pointwise
/// [2.5%, 97.5%] empirical interval of the posterior draws (k x n).
pub fn coverage95(draws: ArrayView2<'_, f64>, truth: &[f64]) -> Result<f64> {
    let k = draws.nrows();
    let n = draws.ncols();
    if n != truth.len() {
        return Err(Error::InvalidData(format!(
            "coverage: {n} draw columns vs {} truth values",
            truth.len()
        )));
    }
    if k < 40 {
        return Err(Error::InvalidData(format!(
            "coverage needs at least 40 draws for quantile resolution, got {k}"
        )));
    }
    let mut covered = 0usize;
    let mut col = vec![0.0f64; k];
    for j in 0..n {
        for (i, c) in col.iter_mut().enumerate() {
            *c = draws[[i, j]];
        }
        col.sort_by(|a, b| a.partial_cmp(b).expect("NaN in coverage draws"));
        let lo = quantile_sorted(&col, 0.025);
        let hi = quantile_sorted(&col, 0.975);
        if truth[j] >= lo && truth[j] <= hi {
            covered += 1;
        }
    }
    Ok(covered as f64 / n as f64)
}

/// Entrywise RMSE of a latent-predictor estimate, raw and scaled by the
/// measurement-error sd (so the observed matrix itself scores ~1).
pub fn x_rmse(x_hat: ArrayView2<'_, f64>, x_true: ArrayView2<'_, f64>, sigma_e: f64) -> Result<(f64, f64)> {
    if x_hat.dim() != x_true.dim() {
        return Err(Error::InvalidData(format!(
            "x_rmse shape mismatch: {:?} vs {:?}",
            x_hat.dim(),
            x_true.dim()
        )));
    }
    if !(sigma_e > 0.0) {
        return Err(Error::InvalidData(
            "x_rmse scaling needs a positive sigma_e".into(),
        ));
    }
    let n = x_hat.len() as f64;
    let ss: f64 = x_hat
        .iter()
        .zip(x_true.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let raw = (ss / n).sqrt();
    Ok((raw, raw / sigma_e))
}

/// Attenuation factor sigma_x^2 / (sigma_x^2 + sigma_e^2).
pub fn reliability_ratio(sigma_x: f64, sigma_e: f64) -> f64 {
    let vx = sigma_x * sigma_x;
    vx / (vx + sigma_e * sigma_e)
}

/// One scenario/method/replicate's worth of metrics. Optional entries are
/// absent where the scenario type does not define them (ISE is 1-D only,
/// coverage multi-D, latent RMSE only for methods that estimate X, sigma
/// CRPS only when the true sigma is known).
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub scenario: String,
    pub method: String,
    pub replicate: u64,
    pub sigma_e: f64,
    pub mse_noisy: f64,
    pub mse_true_x: f64,
    pub ise: Option<f64>,
    pub coverage95: Option<f64>,
    pub x_rmse: Option<f64>,
    pub x_rmse_scaled: Option<f64>,
    pub crps_y: f64,
    pub crps_sigma: Option<f64>,
}

impl MetricReport {
    pub const CSV_HEADER: &'static str = "scenario,method,replicate,sigma_e,mse_noisy,mse_true_x,ise,coverage95,x_rmse,x_rmse_scaled,crps_y,crps_sigma";

    pub fn csv_row(&self) -> String {
        fn opt(v: Option<f64>) -> String {
            v.map(|x| format!("{x}")).unwrap_or_default()
        }
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.scenario,
            self.method,
            self.replicate,
            self.sigma_e,
            self.mse_noisy,
            self.mse_true_x,
            opt(self.ise),
            opt(self.coverage95),
            opt(self.x_rmse),
            opt(self.x_rmse_scaled),
            self.crps_y,
            opt(self.crps_sigma),
        )
    }

    /// Long-format rows (metric, value) for the plot-ready export.
    pub fn long_rows(&self) -> Vec<(String, f64)> {
        let mut rows = vec![
            ("mse_noisy".to_string(), self.mse_noisy),
            ("mse_true_x".to_string(), self.mse_true_x),
        ];
        if let Some(v) = self.ise {
            rows.push(("ise".into(), v));
        }
        if let Some(v) = self.coverage95 {
            rows.push(("coverage95".into(), v));
        }
        if let Some(v) = self.x_rmse {
            rows.push(("x_rmse".into(), v));
        }
        if let Some(v) = self.x_rmse_scaled {
            rows.push(("x_rmse_scaled".into(), v));
        }
        rows.push(("crps_y".into(), self.crps_y));
        if let Some(v) = self.crps_sigma {
            rows.push(("crps_sigma".into(), v));
        }
        rows
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn mse_examples() {
        assert_eq!(mse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mse(&[2.0, 3.0], &[1.0, 2.0]).unwrap(), 1.0);
        assert_eq!(mse(&[0.0, 2.0], &[1.0, 0.0]).unwrap(), 2.5);
        assert!(mse(&[0.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn ise_examples() {
        let zero = ise(|_| 1.0, |_| 1.0, 0.0, 1.0, 101).unwrap();
        assert_eq!(zero, 0.0);
        let unit = ise(|_| 1.0, |_| 0.0, 0.0, 1.0, 101).unwrap();
        assert!((unit - 1.0).abs() < 1e-12);
        // integral of x^2 over [0,1] = 1/3; Simpson is exact for cubics
        let third = ise(|x| x, |_| 0.0, 0.0, 1.0, 1001).unwrap();
        assert!((third - 1.0 / 3.0).abs() < 1e-8);
        assert!(ise(|x| x, |_| 0.0, 0.0, 1.0, 100).is_err());
        assert!(ise(|_| f64::NAN, |_| 0.0, 0.0, 1.0, 11).is_err());
    }

    #[test]
    fn ise_grid_refinement_converges() {
        let f = |x: f64| (3.0 * x).sin() + 0.2 * x * x;
        let a = ise(f, |_| 0.0, -0.9, 0.9, 1001).unwrap();
        let b = ise(f, |_| 0.0, -0.9, 0.9, 2001).unwrap();
        assert!((a - b).abs() < 1e-6);
    }

    #[test]
    fn crps_examples() {
        // all draws equal the observation
        assert_eq!(crps_samples(&[1.0, 1.0, 1.0], 1.0).unwrap(), 0.0);
        // {0,2} vs 1: E|S-1| = 1, pairwise mean over 4 ordered pairs = 1
        let v = crps_samples(&[0.0, 2.0], 1.0).unwrap();
        assert!((v - 0.5).abs() < 1e-15);
        // degenerate draws reduce to absolute error
        let v = crps_samples(&[3.0; 10], 1.25).unwrap();
        assert!((v - 1.75).abs() < 1e-12);
        assert!(crps_samples(&[1.0], 0.0).is_err());
    }

    #[test]
    fn crps_matches_brute_force_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..50 {
            let k = rng.random_range(2..40usize);
            let samples: Vec<f64> = (0..k).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
            let y = rng.random::<f64>();
            let fast = crps_samples(&samples, y).unwrap();
            let kf = k as f64;
            let t1: f64 = samples.iter().map(|s| (s - y).abs()).sum::<f64>() / kf;
            let mut t2 = 0.0;
            for a in &samples {
                for b in &samples {
                    t2 += (a - b).abs();
                }
            }
            t2 /= 2.0 * kf * kf;
            assert!((fast - (t1 - t2)).abs() < 1e-10);
            // never exceeds the draws' mean absolute error
            assert!(fast <= t1 + 1e-12);
        }
    }

    #[test]
    fn coverage_trivial_cases() {
        let k = 100;
        let n = 7;
        // truth at the pointwise median: always covered
        let draws = Array2::from_shape_fn((k, n), |(i, _)| i as f64 / (k - 1) as f64);
        let truth = vec![0.5; n];
        assert_eq!(coverage95(draws.view(), &truth).unwrap(), 1.0);
        // truth far outside: never covered
        let truth = vec![100.0; n];
        assert_eq!(coverage95(draws.view(), &truth).unwrap(), 0.0);
        // too few draws for the quantiles
        let small = Array2::zeros((10, n));
        assert!(coverage95(small.view(), &truth).is_err());
    }

    #[test]
    fn coverage_calibrated_gaussian() {
        // calibrated setup: each point's posterior is N(center, 1) where the
        // center itself missed the truth by N(0, 1) noise, so the 95%
        // interval should cover the truth 95% of the time
        let (k, n) = (4000, 1000);
        let mut rng = ChaCha8Rng::seed_from_u64(66);
        let truth: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 10.0 - 5.0).collect();
        let centers: Vec<f64> = truth
            .iter()
            .map(|t| {
                let z: f64 = rng.sample(StandardNormal);
                t + z
            })
            .collect();
        let draws = Array2::from_shape_fn((k, n), |(_, j)| {
            let z: f64 = rng.sample(StandardNormal);
            centers[j] + z
        });
        let c = coverage95(draws.view(), &truth).unwrap();
        assert!((c - 0.95).abs() < 0.02, "coverage {c}");
    }

    #[test]
    fn x_rmse_examples() {
        let a = Array2::from_shape_vec((1, 1), vec![0.4]).unwrap();
        let b = Array2::from_shape_vec((1, 1), vec![0.1]).unwrap();
        let (raw, scaled) = x_rmse(a.view(), b.view(), 0.1).unwrap();
        assert!((raw - 0.3).abs() < 1e-15);
        assert!((scaled - 3.0).abs() < 1e-12);
        let (raw, scaled) = x_rmse(a.view(), a.view(), 0.1).unwrap();
        assert_eq!((raw, scaled), (0.0, 0.0));
    }

    #[test]
    fn x_rmse_of_observed_matrix_is_about_one() {
        let n = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(90);
        let x_true = Array2::from_shape_fn((n, 1), |_| {
            let z: f64 = rng.sample(StandardNormal);
            0.3 * z
        });
        let x_star = x_true.map(|v| {
            let z: f64 = rng.sample(StandardNormal);
            v + 0.1 * z
        });
        let (_, scaled) = x_rmse(x_star.view(), x_true.view(), 0.1).unwrap();
        assert!((scaled - 1.0).abs() < 0.02, "scaled rmse {scaled}");
    }

    #[test]
    fn reliability_ratio_values() {
        assert!((reliability_ratio(0.3, 1e-12) - 1.0).abs() < 1e-9);
        assert!((reliability_ratio(0.7, 0.7) - 0.5).abs() < 1e-15);
        assert!((reliability_ratio(0.3, 0.1) - 0.9).abs() < 1e-12);
    }

    #[test]
    fn csv_row_shape() {
        let r = MetricReport {
            scenario: "indicator".into(),
            method: "mebart".into(),
            replicate: 3,
            sigma_e: 0.1,
            mse_noisy: 0.5,
            mse_true_x: 0.25,
            ise: Some(0.125),
            coverage95: None,
            x_rmse: Some(0.08),
            x_rmse_scaled: Some(0.8),
            crps_y: 0.2,
            crps_sigma: None,
        };
        let row = r.csv_row();
        assert_eq!(row.split(',').count(), MetricReport::CSV_HEADER.split(',').count());
        assert!(row.starts_with("indicator,mebart,3,0.1,"));
        // absent metrics leave empty cells
        assert!(row.contains(",,"));
    }
}

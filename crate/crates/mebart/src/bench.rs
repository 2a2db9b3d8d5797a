//! Benchmark orchestration: the replicate x scenario x method grid behind
//! the simulation studies, with per-job seed derivation so results are
//! independent of scheduling.

use ndarray::Array2;
use rayon::prelude::*;

use crate::config::{derive_hyperparams, ExperimentConfig};
use crate::error::{Error, Result};
use crate::metrics::{
    coverage95, crps_samples, ise_from_grid, mse, x_rmse, MetricReport,
};
use crate::sampler::{run, EvalSet, Method, Mode, PosteriorDraws, SamplerConfig};
use crate::stats::median;
use crate::synthetic::{generate, ScenarioSpec, SyntheticDataset, TestFunction};

/// Default grid resolution for the integrated-squared-error metric (odd).
pub const ISE_GRID_POINTS: usize = 1001;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchJob {
    pub function: TestFunction,
    pub sigma_e: f64,
    pub method: Method,
    pub replicate: u64,
    pub seed: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Deterministic per-job seed: mixes the master seed with the scenario,
/// noise level, and replicate (never the method, so both methods see the
/// same dataset within a cell).
pub fn job_data_seed(master: u64, function: TestFunction, sigma_e: f64, replicate: u64) -> u64 {
    let mut h = master;
    h = splitmix64(h ^ (function as u64).wrapping_mul(0x9E3779B97F4A7C15));
    h = splitmix64(h ^ sigma_e.to_bits());
    splitmix64(h ^ replicate)
}

/// Expand the configured grid into jobs, replicate-major within each cell.
pub fn expand_jobs(cfg: &ExperimentConfig) -> Result<Vec<BenchJob>> {
    let mut jobs = Vec::new();
    for name in &cfg.bench.scenarios {
        let function = TestFunction::parse(name)?;
        for &sigma_e in &cfg.bench.sigma_e {
            for replicate in 0..cfg.bench.replicates {
                for &method in &cfg.methods {
                    jobs.push(BenchJob {
                        function,
                        sigma_e,
                        method,
                        replicate,
                        seed: job_data_seed(cfg.sampler.seed, function, sigma_e, replicate),
                    });
                }
            }
        }
    }
    Ok(jobs)
}

/// Uniform grid over the +-3 sigma_x latent range used by the ISE metric.
pub fn ise_grid(mu_x: f64, sigma_x: f64, n_points: usize) -> Vec<f64> {
    let lo = mu_x - 3.0 * sigma_x;
    let hi = mu_x + 3.0 * sigma_x;
    let h = (hi - lo) / (n_points - 1) as f64;
    (0..n_points).map(|k| lo + k as f64 * h).collect()
}

fn scenario_spec(cfg: &ExperimentConfig, job: &BenchJob) -> ScenarioSpec {
    ScenarioSpec {
        function: job.function,
        n_train: cfg.data.n_train,
        n_test: cfg.data.n_test,
        mu_x: cfg.data.mu_x.unwrap_or_else(|| job.function.default_mu_x()),
        sigma_x: cfg.data.sigma_x,
        sigma_e: job.sigma_e,
        sigma_y: cfg.data.sigma_y,
        seed: job.seed,
    }
}

/// Fit one job and score it. Returns the metric row; the posterior draws
/// are discarded once summarized.
pub fn run_job(cfg: &ExperimentConfig, job: &BenchJob) -> Result<MetricReport> {
    let spec = scenario_spec(cfg, job);
    let ds = generate(&spec)?;
    let report = score_fit(cfg, job, &spec, &ds)?;
    Ok(report)
}

fn score_fit(
    cfg: &ExperimentConfig,
    job: &BenchJob,
    spec: &ScenarioSpec,
    ds: &SyntheticDataset,
) -> Result<MetricReport> {
    let data = ds.observed_train();
    let hp = derive_hyperparams(&data, &cfg.hyper, Mode::Continuous)?;
    let one_d = spec.p() == 1;

    let mut evals = vec![
        EvalSet {
            name: "test_star".into(),
            points: ds.x_star_test.clone(),
            per_draw: false,
        },
        EvalSet {
            name: "test_true".into(),
            points: ds.x_true_test.clone(),
            per_draw: true,
        },
    ];
    if one_d {
        let grid = ise_grid(spec.mu_x, spec.sigma_x, ISE_GRID_POINTS);
        evals.push(EvalSet {
            name: "grid".into(),
            points: Array2::from_shape_vec((grid.len(), 1), grid)
                .expect("grid shape"),
            per_draw: false,
        });
    }

    let scfg = SamplerConfig {
        keep_latent: job.method == Method::Mebart,
        store_ensembles: false,
        // chain randomness is per-job; both methods share it within a cell
        seed: job.seed ^ 0xABCD,
        ..cfg.sampler.to_sampler_config(job.method)
    };
    let draws = run(&data, &hp, &scfg, &evals)?;
    summarize(job, spec, ds, &draws)
}

/// Compute the metric row for a finished fit.
pub fn summarize(
    job: &BenchJob,
    spec: &ScenarioSpec,
    ds: &SyntheticDataset,
    draws: &PosteriorDraws,
) -> Result<MetricReport> {
    let one_d = spec.p() == 1;
    let y_test: Vec<f64> = ds.y_test.iter().cloned().collect();
    let f_true_test: Vec<f64> = ds.f_true_test.iter().cloned().collect();

    let star = draws
        .eval("test_star")
        .ok_or_else(|| Error::InvalidData("missing test_star eval".into()))?;
    let truep = draws
        .eval("test_true")
        .ok_or_else(|| Error::InvalidData("missing test_true eval".into()))?;
    let mse_noisy = mse(&star.mean, &y_test)?;
    let mse_true_x = mse(&truep.mean, &y_test)?;

    let ise = if one_d {
        let grid_trace = draws
            .eval("grid")
            .ok_or_else(|| Error::InvalidData("missing grid eval".into()))?;
        let grid = ise_grid(spec.mu_x, spec.sigma_x, ISE_GRID_POINTS);
        let truth: Vec<f64> = grid
            .iter()
            .map(|&x| crate::synthetic::eval_true_function(spec.function, &[x]))
            .collect();
        Some(ise_from_grid(
            &grid_trace.mean,
            &truth,
            grid[0],
            grid[grid.len() - 1],
        )?)
    } else {
        None
    };

    let per_draw = truep
        .per_draw
        .as_ref()
        .ok_or_else(|| Error::InvalidData("test_true eval lacks per-draw values".into()))?;
    let coverage = if one_d {
        None
    } else {
        Some(coverage95(per_draw.view(), &f_true_test)?)
    };

    // function CRPS against the true function values at the true test inputs
    let k = per_draw.nrows();
    let mut col = vec![0.0f64; k];
    let mut crps_acc = 0.0;
    for j in 0..per_draw.ncols() {
        for (i, c) in col.iter_mut().enumerate() {
            *c = per_draw[[i, j]];
        }
        crps_acc += crps_samples(&col, f_true_test[j])?;
    }
    let crps_y = crps_acc / per_draw.ncols() as f64;

    let crps_sigma = if draws.sigma.is_empty() {
        None
    } else {
        Some(crps_samples(&draws.sigma, spec.sigma_y)?)
    };

    let (xr, xrs) = match draws.latent_posterior_mean(spec.n_train, spec.p()) {
        Some(x_hat) if job.method == Method::Mebart && spec.sigma_e > 0.0 => {
            let (raw, scaled) = x_rmse(x_hat.view(), ds.x_true_train.view(), spec.sigma_e)?;
            (Some(raw), Some(scaled))
        }
        _ => (None, None),
    };

    Ok(MetricReport {
        scenario: spec.function.name().to_string(),
        method: job.method.name().to_string(),
        replicate: job.replicate,
        sigma_e: spec.sigma_e,
        mse_noisy,
        mse_true_x,
        ise,
        coverage95: coverage,
        x_rmse: xr,
        x_rmse_scaled: xrs,
        crps_y,
        crps_sigma,
    })
}

/// Run the whole grid. Jobs execute in parallel; the output order is the
/// deterministic job order regardless of thread count. `progress` is called
/// once per finished job.
pub fn run_bench<F>(cfg: &ExperimentConfig, progress: F) -> Result<Vec<MetricReport>>
where
    F: Fn(usize, usize) + Sync,
{
    let jobs = expand_jobs(cfg)?;
    let total = jobs.len();
    let done = std::sync::atomic::AtomicUsize::new(0);
    let results: Vec<Result<MetricReport>> = jobs
        .par_iter()
        .map(|job| {
            let r = run_job(cfg, job);
            let d = done.fetch_add(1, std::sync::atomic::Ordering::Relaxed) + 1;
            progress(d, total);
            r
        })
        .collect();
    results.into_iter().collect()
}

/// Median-per-cell summary in the same wide layout as the per-replicate
/// rows (one row per scenario x sigma_e x method x metric).
pub fn summary_rows(reports: &[MetricReport]) -> Vec<(String, f64, String, String, f64)> {
    let mut cells: Vec<(String, f64, String)> = Vec::new();
    for r in reports {
        let key = (r.scenario.clone(), r.sigma_e, r.method.clone());
        if !cells.contains(&key) {
            cells.push(key);
        }
    }
    let mut out = Vec::new();
    for (scenario, sigma_e, method) in cells {
        let members: Vec<&MetricReport> = reports
            .iter()
            .filter(|r| r.scenario == scenario && r.sigma_e == sigma_e && r.method == method)
            .collect();
        let metric_names: Vec<String> = members
            .first()
            .map(|m| m.long_rows().iter().map(|(k, _)| k.clone()).collect())
            .unwrap_or_default();
        for name in metric_names {
            let vals: Vec<f64> = members
                .iter()
                .flat_map(|m| {
                    m.long_rows()
                        .into_iter()
                        .filter(|(k, _)| *k == name)
                        .map(|(_, v)| v)
                })
                .collect();
            if !vals.is_empty() {
                out.push((scenario.clone(), sigma_e, method.clone(), name, median(&vals)));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.bench.replicates = 2;
        cfg.bench.scenarios = vec!["indicator".into()];
        cfg.hyper.m = 20;
        cfg.sampler.n_burn = 30;
        cfg.sampler.n_keep = 60;
        cfg.sampler.seed = 7;
        cfg
    }

    #[test]
    fn grid_cardinality() {
        let cfg = tiny_cfg();
        let jobs = expand_jobs(&cfg).unwrap();
        // 2 replicates x 2 methods x 1 scenario x 1 noise level
        assert_eq!(jobs.len(), 4);
        let reports = run_bench(&cfg, |_, _| {}).unwrap();
        assert_eq!(reports.len(), 4);
        for r in &reports {
            assert!(r.mse_noisy.is_finite() && r.mse_noisy >= 0.0);
            assert!(r.ise.is_some());
            assert!(r.coverage95.is_none());
            assert!(r.crps_sigma.is_some());
        }
        // both methods saw the same dataset within a replicate
        assert_eq!(jobs[0].seed, jobs[1].seed);
        assert_ne!(jobs[0].seed, jobs[2].seed);
        // mebart rows carry latent metrics, bart rows do not
        for r in &reports {
            if r.method == "mebart" {
                assert!(r.x_rmse.is_some());
            } else {
                assert!(r.x_rmse.is_none());
            }
        }
    }

    #[test]
    fn bench_is_thread_count_invariant() {
        let cfg = tiny_cfg();
        let pool1 = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let pool2 = rayon::ThreadPoolBuilder::new().num_threads(2).build().unwrap();
        let a = pool1.install(|| run_bench(&cfg, |_, _| {}).unwrap());
        let b = pool2.install(|| run_bench(&cfg, |_, _| {}).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn friedman_jobs_produce_coverage_not_ise() {
        let mut cfg = tiny_cfg();
        cfg.bench.scenarios = vec!["friedman".into()];
        cfg.bench.replicates = 1;
        cfg.methods = vec![Method::Mebart];
        cfg.sampler.n_keep = 60;
        let reports = run_bench(&cfg, |_, _| {}).unwrap();
        assert_eq!(reports.len(), 1);
        assert!(reports[0].ise.is_none());
        let c = reports[0].coverage95.unwrap();
        assert!((0.0..=1.0).contains(&c));
    }

    #[test]
    fn summary_has_one_row_per_cell_metric() {
        let cfg = tiny_cfg();
        let reports = run_bench(&cfg, |_, _| {}).unwrap();
        let rows = summary_rows(&reports);
        // bart: mse_noisy, mse_true_x, ise, crps_y, crps_sigma = 5
        // mebart adds x_rmse and x_rmse_scaled = 7
        assert_eq!(rows.len(), 12);
    }
}

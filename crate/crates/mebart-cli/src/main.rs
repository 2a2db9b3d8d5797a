//! Experiment command line: `simulate`, `fit`, `predict`, `metrics`,
//! `bench`, and `trace` around the mebart library. Errors leave as
//! machine-readable JSON on stderr with exit codes 1 (usage), 2 (data),
//! 3 (runtime).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mebart::config::{derive_hyperparams, ExperimentConfig};
use mebart::data::ObservedDataset;
use mebart::draws::{load_draws, load_sidecar, persist_draws, DrawsSidecar};
use mebart::metrics::MetricReport;
use mebart::sampler::{diagnostics, EvalSet, Mode, PosteriorDraws};
use mebart::stats::quantile;
use mebart::synthetic::{generate, ScenarioSpec, TestFunction};

#[derive(Parser)]
#[command(
    name = "mebart",
    version,
    about = "Tree-ensemble regression with measurement error in the predictors"
)]
struct Cli {
    /// Override the config file's RNG seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Suppress progress output.
    #[arg(long, global = true)]
    quiet: bool,

    /// Worker threads for chain/replicate parallelism (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Print the fully resolved configuration as TOML and exit.
    #[arg(long, global = true)]
    print_config: bool,

    /// Experiment configuration file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic datasets and write train/test CSV files.
    Simulate(OutArgs),
    /// Fit the configured methods and persist posterior draws.
    Fit(OutArgs),
    /// Evaluate saved draws at new inputs (uses the observed predictors).
    Predict(PredictArgs),
    /// Score saved draws against a dataset with oracle columns.
    Metrics(MetricsArgs),
    /// Run the full replicate x scenario x method grid and export tables.
    Bench(OutArgs),
    /// Export the per-sweep sigma trace of a saved fit.
    Trace(TraceArgs),
}

#[derive(Args)]
struct OutArgs {
    /// Output directory (defaults to the config's output_dir).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    /// Saved draws container from `fit`.
    #[arg(long)]
    draws: PathBuf,
    /// CSV of inputs to predict at.
    #[arg(long)]
    data: PathBuf,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long)]
    draws: PathBuf,
    /// Test CSV with oracle_x*/oracle_f columns.
    #[arg(long)]
    data: PathBuf,
    /// Training CSV with oracle columns, for the latent-recovery metrics.
    #[arg(long)]
    train_data: Option<PathBuf>,
    /// True error sd, when known, for the sigma CRPS.
    #[arg(long)]
    sigma_true: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TraceArgs {
    #[arg(long)]
    draws: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

const TRACE_HEADER: &str = "chain,iteration,phase,sigma";

enum CliError {
    Usage(String),
    Data(String),
    Runtime(String),
}

impl From<mebart::Error> for CliError {
    fn from(e: mebart::Error) -> Self {
        match &e {
            mebart::Error::Config(_) => CliError::Usage(e.to_string()),
            mebart::Error::Io(_) => CliError::Runtime(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

fn emit_error(kind: &str, message: &str) {
    let payload = serde_json::json!({ "error": { "kind": kind, "message": message } });
    eprintln!("{payload}");
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            if e.use_stderr() {
                emit_error("usage", &e.to_string());
                return ExitCode::from(1);
            }
            // --help / --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            emit_error("usage", &m);
            ExitCode::from(1)
        }
        Err(CliError::Data(m)) => {
            emit_error("data", &m);
            ExitCode::from(2)
        }
        Err(CliError::Runtime(m)) => {
            emit_error("runtime", &m);
            ExitCode::from(3)
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.sampler.seed = seed;
    }
    Ok(cfg)
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?;
    }
    if cli.print_config {
        let cfg = load_config(&cli)?;
        print!("{}", cfg.to_toml_string());
        return Ok(());
    }
    let quiet = cli.quiet;
    match &cli.command {
        None => Err(CliError::Usage(
            "no subcommand; try `mebart --help`".to_string(),
        )),
        Some(Command::Simulate(args)) => {
            let cfg = load_config(&cli)?;
            cmd_simulate(&cfg, args.out.as_deref(), quiet)
        }
        Some(Command::Fit(args)) => {
            let cfg = load_config(&cli)?;
            cmd_fit(&cfg, args.out.as_deref(), quiet)
        }
        Some(Command::Bench(args)) => {
            let cfg = load_config(&cli)?;
            cmd_bench(&cfg, args.out.as_deref(), quiet)
        }
        Some(Command::Predict(args)) => cmd_predict(args),
        Some(Command::Metrics(args)) => cmd_metrics(args),
        Some(Command::Trace(args)) => cmd_trace(args),
    }
}

fn out_dir(cfg: &ExperimentConfig, over: Option<&Path>) -> Result<PathBuf, CliError> {
    let dir = over
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from(&cfg.output_dir));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn scenario_from_config(cfg: &ExperimentConfig) -> Result<ScenarioSpec, CliError> {
    let name = cfg.data.scenario.as_deref().ok_or_else(|| {
        CliError::Usage("this command needs data.scenario in the config".to_string())
    })?;
    let function = TestFunction::parse(name)?;
    let sigma_e = cfg
        .data
        .sigma_e
        .as_ref()
        .and_then(|v| v.first().copied())
        .unwrap_or(0.1);
    Ok(ScenarioSpec {
        function,
        n_train: cfg.data.n_train,
        n_test: cfg.data.n_test,
        mu_x: cfg.data.mu_x.unwrap_or_else(|| function.default_mu_x()),
        sigma_x: cfg.data.sigma_x,
        sigma_e,
        sigma_y: cfg.data.sigma_y,
        seed: cfg.sampler.seed,
    })
}

fn cmd_simulate(cfg: &ExperimentConfig, out: Option<&Path>, quiet: bool) -> Result<(), CliError> {
    let dir = out_dir(cfg, out)?;
    let spec = scenario_from_config(cfg)?;
    let ds = generate(&spec)?;
    let train = dir.join(format!("{}_train.csv", spec.function.name()));
    let test = dir.join(format!("{}_test.csv", spec.function.name()));
    ds.observed_train().save_csv(&train)?;
    ds.observed_test().save_csv(&test)?;
    if !quiet {
        eprintln!(
            "simulate: wrote {} ({} rows) and {} ({} rows)",
            train.display(),
            spec.n_train,
            test.display(),
            spec.n_test
        );
    }
    Ok(())
}

/// Training data named by the config: a CSV file or a synthetic scenario,
/// plus optional test inputs.
fn load_fit_data(
    cfg: &ExperimentConfig,
) -> Result<(ObservedDataset, Option<ObservedDataset>), CliError> {
    if let Some(path) = &cfg.data.input {
        let mut data = ObservedDataset::load_csv(path)?;
        if let Some(s) = &cfg.data.sigma_e {
            let p = data.p();
            let arr = match s.len() {
                1 => ndarray::Array1::from_elem(p, s[0]),
                n if n == p => ndarray::Array1::from_vec(s.clone()),
                n => {
                    return Err(CliError::Usage(format!(
                        "config sigma_e has {n} entries for {p} predictors"
                    )))
                }
            };
            data.sigma_e = Some(arr);
        }
        let test = match &cfg.data.test_input {
            Some(t) => Some(ObservedDataset::load_csv(t)?),
            None => None,
        };
        Ok((data, test))
    } else {
        let spec = scenario_from_config(cfg)?;
        let ds = generate(&spec)?;
        Ok((ds.observed_train(), Some(ds.observed_test())))
    }
}

fn cmd_fit(cfg: &ExperimentConfig, out: Option<&Path>, quiet: bool) -> Result<(), CliError> {
    let dir = out_dir(cfg, out)?;
    let (data, test) = load_fit_data(cfg)?;
    // binary responses switch to the probit variant automatically
    let mode = if data.binary_y {
        Mode::Probit
    } else {
        cfg.sampler.mode
    };
    let hp = derive_hyperparams(&data, &cfg.hyper, mode)?;
    let mut evals = Vec::new();
    if let Some(t) = &test {
        evals.push(EvalSet {
            name: "test".into(),
            points: t.x_star.clone(),
            per_draw: true,
        });
    }
    for &method in &cfg.methods {
        let mut scfg = cfg.sampler.to_sampler_config(method);
        scfg.mode = mode;
        if !quiet {
            eprintln!(
                "fit: {} ({} chains x {} sweeps) ...",
                method.name(),
                scfg.n_chains,
                scfg.n_sweeps()
            );
        }
        let t0 = std::time::Instant::now();
        let draws = mebart::sampler::run(&data, &hp, &scfg, &evals)?;
        let mut sidecar = DrawsSidecar::new(scfg.seed);
        sidecar.config_hash = Some(cfg.content_hash());
        sidecar.config = serde_json::to_value(cfg).ok();
        let path = dir.join(format!("{}.draws", method.name()));
        persist_draws(&draws, &sidecar, &path)?;
        let report = diagnostics(&draws)?;
        let diag_path = dir.join(format!("{}.diagnostics.json", method.name()));
        let diag_json = serde_json::json!({
            "per_chain_sigma_mean": report.per_chain_sigma_mean,
            "split_rhat_sigma": report.split_rhat_sigma,
            "ess_sigma": report.ess_sigma,
            "latent_acceptance": report.acceptance.as_ref().map(|a| {
                serde_json::json!({"mean": a.mean_rate, "min": a.min_rate, "max": a.max_rate})
            }),
            "n_burn": report.n_burn,
            "n_keep_per_chain": report.n_keep_per_chain,
            "n_chains": report.n_chains,
        });
        std::fs::write(&diag_path, serde_json::to_string_pretty(&diag_json).unwrap())?;
        if !quiet {
            eprintln!(
                "fit: {} done in {:.1}s -> {}",
                method.name(),
                t0.elapsed().as_secs_f64(),
                path.display()
            );
        }
    }
    Ok(())
}

fn cmd_predict(args: &PredictArgs) -> Result<(), CliError> {
    let draws = load_draws(&args.draws)?;
    let data = ObservedDataset::load_csv(&args.data)?;
    let values = draws.eval_draws(&data.x_star)?;
    let mut out = String::from("pred_mean,pred_q025,pred_q975\n");
    let k = values.nrows();
    let mut col = vec![0.0f64; k];
    for j in 0..values.ncols() {
        for (i, c) in col.iter_mut().enumerate() {
            *c = values[[i, j]];
        }
        let mean = col.iter().sum::<f64>() / k as f64;
        let lo = quantile(&col, 0.025);
        let hi = quantile(&col, 0.975);
        out.push_str(&format!("{mean},{lo},{hi}\n"));
    }
    std::fs::write(&args.out, out)?;
    Ok(())
}

fn cmd_metrics(args: &MetricsArgs) -> Result<(), CliError> {
    let draws = load_draws(&args.draws)?;
    let data = ObservedDataset::load_csv(&args.data)?;
    let x_true = data.x_true.as_ref().ok_or_else(|| {
        CliError::Data("metrics needs oracle_x columns in the test CSV".to_string())
    })?;
    let f_true = data.f_true.as_ref().ok_or_else(|| {
        CliError::Data("metrics needs an oracle_f column in the test CSV".to_string())
    })?;
    let y_test: Vec<f64> = data.y.iter().cloned().collect();
    let f_true_v: Vec<f64> = f_true.iter().cloned().collect();

    let star = draws.eval_draws(&data.x_star)?;
    let truep = draws.eval_draws(x_true)?;
    let colmean = |m: &ndarray::Array2<f64>| -> Vec<f64> {
        (0..m.ncols())
            .map(|j| m.column(j).sum() / m.nrows() as f64)
            .collect()
    };
    let mse_noisy = mebart::metrics::mse(&colmean(&star), &y_test)?;
    let mse_true_x = mebart::metrics::mse(&colmean(&truep), &y_test)?;
    let coverage = if data.p() > 1 {
        Some(mebart::metrics::coverage95(truep.view(), &f_true_v)?)
    } else {
        None
    };
    let k = truep.nrows();
    let mut col = vec![0.0f64; k];
    let mut crps_acc = 0.0;
    for j in 0..truep.ncols() {
        for (i, c) in col.iter_mut().enumerate() {
            *c = truep[[i, j]];
        }
        crps_acc += mebart::metrics::crps_samples(&col, f_true_v[j])?;
    }
    let crps_y = crps_acc / truep.ncols() as f64;
    let crps_sigma = match (args.sigma_true, draws.sigma.is_empty()) {
        (Some(s), false) => Some(mebart::metrics::crps_samples(&draws.sigma, s)?),
        _ => None,
    };

    let (x_rmse, x_rmse_scaled) = match &args.train_data {
        Some(path) => {
            let train = ObservedDataset::load_csv(path)?;
            let xt = train.x_true.as_ref().ok_or_else(|| {
                CliError::Data("train CSV lacks oracle_x columns for latent metrics".to_string())
            })?;
            let sigma_e = train
                .sigma_e
                .as_ref()
                .and_then(|s| s.first().copied())
                .unwrap_or(0.0);
            match draws.latent_posterior_mean(train.n(), train.p()) {
                Some(x_hat) if sigma_e > 0.0 => {
                    let (r, s) = mebart::metrics::x_rmse(x_hat.view(), xt.view(), sigma_e)?;
                    (Some(r), Some(s))
                }
                _ => (None, None),
            }
        }
        None => (None, None),
    };

    let sidecar = load_sidecar(&args.draws).ok();
    let scenario = sidecar
        .as_ref()
        .and_then(|s| s.config.as_ref())
        .and_then(|c| c.pointer("/data/scenario"))
        .and_then(|v| v.as_str())
        .unwrap_or("dataset")
        .to_string();
    let report = MetricReport {
        scenario,
        method: draws.method.name().to_string(),
        replicate: 0,
        sigma_e: data
            .sigma_e
            .as_ref()
            .and_then(|s| s.first().copied())
            .unwrap_or(0.0),
        mse_noisy,
        mse_true_x,
        ise: None,
        coverage95: coverage,
        x_rmse,
        x_rmse_scaled,
        crps_y,
        crps_sigma,
    };
    let mut out = String::from(MetricReport::CSV_HEADER);
    out.push('\n');
    out.push_str(&report.csv_row());
    out.push('\n');
    std::fs::write(&args.out, out)?;
    Ok(())
}

fn cmd_bench(cfg: &ExperimentConfig, out: Option<&Path>, quiet: bool) -> Result<(), CliError> {
    let dir = out_dir(cfg, out)?;
    let t0 = std::time::Instant::now();
    let reports = mebart::bench::run_bench(cfg, |done, total| {
        if !quiet && (done % 10 == 0 || done == total) {
            eprintln!("bench: {done}/{total} jobs finished");
        }
    })?;

    let mut wide = String::from(MetricReport::CSV_HEADER);
    wide.push('\n');
    for r in &reports {
        wide.push_str(&r.csv_row());
        wide.push('\n');
    }
    std::fs::write(dir.join("bench_metrics.csv"), wide)?;

    let mut long = String::from("scenario,sigma_e,method,replicate,metric,value\n");
    for r in &reports {
        for (metric, value) in r.long_rows() {
            long.push_str(&format!(
                "{},{},{},{},{metric},{value}\n",
                r.scenario, r.sigma_e, r.method, r.replicate
            ));
        }
    }
    std::fs::write(dir.join("bench_long.csv"), long)?;

    let mut summary = String::from("scenario,sigma_e,method,metric,median\n");
    for (scenario, sigma_e, method, metric, med) in mebart::bench::summary_rows(&reports) {
        summary.push_str(&format!("{scenario},{sigma_e},{method},{metric},{med}\n"));
    }
    std::fs::write(dir.join("bench_summary.csv"), summary)?;

    if !quiet {
        eprintln!(
            "bench: {} rows in {:.1}s -> {}",
            reports.len(),
            t0.elapsed().as_secs_f64(),
            dir.display()
        );
    }
    Ok(())
}

fn cmd_trace(args: &TraceArgs) -> Result<(), CliError> {
    let draws: PosteriorDraws = load_draws(&args.draws)?;
    if draws.sigma_trace.is_empty() {
        return Err(CliError::Data(
            "no sigma trace in this container (probit fits carry none)".to_string(),
        ));
    }
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for (c, chain) in draws.sigma_trace.iter().enumerate() {
        for (it, sigma) in chain.iter().enumerate() {
            let phase = if it < draws.n_burn { "burnin" } else { "kept" };
            out.push_str(&format!("{c},{it},{phase},{sigma}\n"));
        }
    }
    std::fs::write(&args.out, out)?;
    Ok(())
}

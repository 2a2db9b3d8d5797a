//! Experiment configuration: a TOML file with strict schema validation
//! (unknown keys are rejected) covering the data source, every prior
//! constant, the sampler settings, and the benchmark grid.

use serde::{Deserialize, Serialize};

use crate::data::ObservedDataset;
use crate::error::{Error, Result};
use crate::priors::{calibrate_lambda, HyperParams, SigmaHatSource, YScaler};
use crate::sampler::{Method, Mode, SamplerConfig};
use crate::stats::variance;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub output_dir: String,
    pub methods: Vec<Method>,
    pub data: DataConfig,
    pub hyper: HyperSettings,
    pub sampler: SamplerSettings,
    pub bench: BenchSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            output_dir: "out".into(),
            methods: vec![Method::Bart, Method::Mebart],
            data: DataConfig::default(),
            hyper: HyperSettings::default(),
            sampler: SamplerSettings::default(),
            bench: BenchSettings::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Synthetic scenario name (indicator|sin|combo|step|friedman)...
    pub scenario: Option<String>,
    /// ...or a CSV file to load instead.
    pub input: Option<String>,
    /// Optional held-out CSV used by `fit` for test-set draws.
    pub test_input: Option<String>,
    pub n_train: usize,
    pub n_test: usize,
    /// Latent predictor law for synthetic scenarios; `mu_x = None` uses the
    /// scenario's own default mean.
    pub mu_x: Option<f64>,
    pub sigma_x: f64,
    /// Measurement-error sd; a scalar here applies to every column. For CSV
    /// input this overrides any `#sigma_e:` header comment.
    pub sigma_e: Option<Vec<f64>>,
    pub sigma_y: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            scenario: Some("indicator".into()),
            input: None,
            test_input: None,
            n_train: 100,
            n_test: 100,
            mu_x: None,
            sigma_x: 0.3,
            sigma_e: Some(vec![0.1]),
            sigma_y: 0.1,
        }
    }
}

/// Prior constants as configured (data-independent); [`derive_hyperparams`]
/// turns them into a concrete [`HyperParams`] for one dataset.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct HyperSettings {
    pub m: usize,
    pub k: f64,
    pub alpha: f64,
    pub beta: f64,
    pub nu: f64,
    /// Prior mass below the sigma-hat anchor when calibrating lambda.
    pub lambda_quantile: f64,
    pub sigma_hat: SigmaHatSource,
    /// Fixed lambda (model scale), bypassing the calibration.
    pub lambda: Option<f64>,
    pub n_cutpoints: usize,
    /// Latent proposal sd = multiplier * sigma_e, per coordinate.
    pub proposal_multiplier: f64,
    /// Overrides for the empirical-Bayes latent prior.
    pub mu_x: Option<Vec<f64>>,
    pub sigma_x: Option<Vec<f64>>,
}

impl Default for HyperSettings {
    fn default() -> Self {
        HyperSettings {
            m: 200,
            k: 2.0,
            alpha: 0.95,
            beta: 2.0,
            nu: 3.0,
            lambda_quantile: 0.90,
            sigma_hat: SigmaHatSource::LeastSquares,
            lambda: None,
            n_cutpoints: 100,
            proposal_multiplier: 1.0,
            mu_x: None,
            sigma_x: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerSettings {
    pub mode: Mode,
    pub n_burn: usize,
    pub n_keep: usize,
    pub thin: usize,
    pub n_chains: usize,
    pub seed: u64,
    pub keep_latent: bool,
    pub store_ensembles: bool,
    pub check_every: usize,
}

impl Default for SamplerSettings {
    fn default() -> Self {
        SamplerSettings {
            mode: Mode::Continuous,
            n_burn: 200,
            n_keep: 1000,
            thin: 1,
            n_chains: 1,
            seed: 42,
            keep_latent: true,
            store_ensembles: true,
            check_every: 0,
        }
    }
}

impl SamplerSettings {
    pub fn to_sampler_config(&self, method: Method) -> SamplerConfig {
        SamplerConfig {
            mode: self.mode,
            method,
            n_burn: self.n_burn,
            n_keep: self.n_keep,
            thin: self.thin,
            n_chains: self.n_chains,
            seed: self.seed,
            keep_latent: self.keep_latent && method == Method::Mebart,
            store_ensembles: self.store_ensembles,
            check_every: self.check_every,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSettings {
    pub replicates: u64,
    pub scenarios: Vec<String>,
    /// Measurement-noise grid: each scenario is run once per entry.
    pub sigma_e: Vec<f64>,
}

impl Default for BenchSettings {
    fn default() -> Self {
        BenchSettings {
            replicates: 100,
            scenarios: vec![
                "indicator".into(),
                "sin".into(),
                "combo".into(),
                "step".into(),
            ],
            sigma_e: vec![0.1],
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load<P: AsRef<std::path::Path>>(path: P) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the canonical serialized form, recorded in draw sidecars.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(self.to_toml_string().as_bytes());
        let out = h.finalize();
        out.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::Config("methods list is empty".into()));
        }
        if self.data.scenario.is_none() && self.data.input.is_none() {
            return Err(Error::Config(
                "either data.scenario or data.input must be set".into(),
            ));
        }
        if let Some(s) = &self.data.scenario {
            crate::synthetic::TestFunction::parse(s)?;
        }
        for s in &self.bench.scenarios {
            crate::synthetic::TestFunction::parse(s)?;
        }
        if !(self.hyper.lambda_quantile > 0.0 && self.hyper.lambda_quantile < 1.0) {
            return Err(Error::Config("lambda_quantile must lie in (0,1)".into()));
        }
        if self.hyper.m == 0 {
            return Err(Error::Config("hyper.m must be at least 1".into()));
        }
        if self.sampler.n_keep == 0 || self.sampler.thin == 0 || self.sampler.n_chains == 0 {
            return Err(Error::Config(
                "sampler n_keep, thin, n_chains must be positive".into(),
            ));
        }
        if self.bench.sigma_e.iter().any(|&s| !(s >= 0.0)) {
            return Err(Error::Config("bench.sigma_e entries must be >= 0".into()));
        }
        Ok(())
    }
}

/// Ordinary least-squares residual variance of y on X with intercept,
/// solved by normal equations (predictor counts here are tiny).
fn ols_residual_variance(x: &ndarray::Array2<f64>, y: &[f64]) -> Result<f64> {
    let n = x.nrows();
    let p = x.ncols() + 1; // intercept
    if n <= p {
        return Err(Error::DegenerateResponse(
            "too few observations for a least-squares variance anchor".into(),
        ));
    }
    // build X'X and X'y with the intercept column folded in
    let mut xtx = vec![0.0f64; p * p];
    let mut xty = vec![0.0f64; p];
    for i in 0..n {
        let mut row = Vec::with_capacity(p);
        row.push(1.0);
        row.extend(x.row(i).iter().cloned());
        for a in 0..p {
            xty[a] += row[a] * y[i];
            for b in 0..p {
                xtx[a * p + b] += row[a] * row[b];
            }
        }
    }
    for a in 0..p {
        xtx[a * p + a] += 1e-10; // ridge jitter against exact collinearity
    }
    // Cholesky solve
    let mut l = vec![0.0f64; p * p];
    for a in 0..p {
        for b in 0..=a {
            let mut s = xtx[a * p + b];
            for k in 0..b {
                s -= l[a * p + k] * l[b * p + k];
            }
            if a == b {
                if s <= 0.0 {
                    return Err(Error::DegenerateResponse(
                        "singular design in least-squares anchor".into(),
                    ));
                }
                l[a * p + a] = s.sqrt();
            } else {
                l[a * p + b] = s / l[b * p + b];
            }
        }
    }
    let mut beta = xty.clone();
    for a in 0..p {
        for k in 0..a {
            beta[a] -= l[a * p + k] * beta[k];
        }
        beta[a] /= l[a * p + a];
    }
    for a in (0..p).rev() {
        for k in a + 1..p {
            beta[a] -= l[k * p + a] * beta[k];
        }
        beta[a] /= l[a * p + a];
    }
    let mut ssr = 0.0;
    for i in 0..n {
        let mut fit = beta[0];
        for j in 0..p - 1 {
            fit += beta[j + 1] * x[[i, j]];
        }
        ssr += (y[i] - fit) * (y[i] - fit);
    }
    Ok(ssr / (n - p) as f64)
}

/// Build the concrete prior constants for one dataset: rescale the
/// response, calibrate the variance prior, and set the latent-predictor
/// prior by empirical Bayes (column means of the observed predictors;
/// variances `max(var(X*_j) - sigma_e_j^2, 0.01 var(X*_j))`, the classical
/// decomposition with a floor against negative estimates).
pub fn derive_hyperparams(
    data: &ObservedDataset,
    settings: &HyperSettings,
    mode: Mode,
) -> Result<HyperParams> {
    let p = data.p();
    let sigma_e_sd: Vec<f64> = match &data.sigma_e {
        Some(s) => s.to_vec(),
        None => vec![0.0; p],
    };

    let lambda = match (settings.lambda, mode) {
        (Some(l), _) => {
            if !(l > 0.0) {
                return Err(Error::Config("hyper.lambda must be positive".into()));
            }
            l
        }
        (None, Mode::Probit) => 1.0, // unused: the probit variance is fixed at 1
        (None, Mode::Continuous) => {
            let y: Vec<f64> = data.y.iter().cloned().collect();
            let scaler = YScaler::fit(&y)?;
            let y_model: Vec<f64> = y.iter().map(|&v| scaler.forward(v)).collect();
            let sigma_hat_sq = match settings.sigma_hat {
                SigmaHatSource::SampleVariance => variance(&y_model),
                SigmaHatSource::LeastSquares => ols_residual_variance(&data.x_star, &y_model)?,
            };
            calibrate_lambda(sigma_hat_sq, settings.nu, settings.lambda_quantile)?
        }
    };

    let mut mu_x = Vec::with_capacity(p);
    let mut sigma_x_sq = Vec::with_capacity(p);
    for j in 0..p {
        let col: Vec<f64> = data.x_star.column(j).to_vec();
        let m = crate::stats::mean(&col);
        let v = variance(&col);
        let ve = sigma_e_sd[j] * sigma_e_sd[j];
        mu_x.push(m);
        sigma_x_sq.push((v - ve).max(0.01 * v));
    }
    if let Some(over) = &settings.mu_x {
        if over.len() != p {
            return Err(Error::Config(format!(
                "mu_x override has {} entries for {p} predictors",
                over.len()
            )));
        }
        mu_x = over.clone();
    }
    if let Some(over) = &settings.sigma_x {
        if over.len() != p {
            return Err(Error::Config(format!(
                "sigma_x override has {} entries for {p} predictors",
                over.len()
            )));
        }
        sigma_x_sq = over.iter().map(|s| s * s).collect();
    }

    let hp = HyperParams {
        m: settings.m,
        k: settings.k,
        // probit latents live on a unit-variance scale spanning about
        // [-3, 3]; the rescaled continuous response spans [-0.5, 0.5]
        f_half_range: match mode {
            Mode::Continuous => 0.5,
            Mode::Probit => 3.0,
        },
        alpha_tree: settings.alpha,
        beta_tree: settings.beta,
        nu: settings.nu,
        lambda,
        mu_x,
        sigma_x_sq,
        sigma_e_sq: sigma_e_sd.iter().map(|s| s * s).collect(),
        proposal_scale: sigma_e_sd
            .iter()
            .map(|s| s * settings.proposal_multiplier)
            .collect(),
        n_cutpoints: settings.n_cutpoints,
    };
    hp.validate()?;
    Ok(hp)
}

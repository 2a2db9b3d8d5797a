//! Synthetic benchmark scenarios: four 1-D test functions, the 5-D Friedman
//! design, and the additive-Gaussian noise recipes for latent predictors,
//! measured predictors, and responses.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::ObservedDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestFunction {
    /// -1 below zero, +1 at and above zero.
    Indicator,
    /// sin(2 pi x).
    Sin,
    /// cos(pi x) below zero, -cos(pi x) at and above zero.
    Combo,
    /// Four bands of |x| with values 0..3.
    Step,
    /// sin(pi x1 x2) + 2 (x3 - 1/2)^2 + x4 + x5/2 on five inputs.
    Friedman,
}

impl TestFunction {
    pub fn dim(&self) -> usize {
        match self {
            TestFunction::Friedman => 5,
            _ => 1,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TestFunction::Indicator => "indicator",
            TestFunction::Sin => "sin",
            TestFunction::Combo => "combo",
            TestFunction::Step => "step",
            TestFunction::Friedman => "friedman",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "indicator" => Ok(TestFunction::Indicator),
            "sin" => Ok(TestFunction::Sin),
            "combo" => Ok(TestFunction::Combo),
            "step" => Ok(TestFunction::Step),
            "friedman" => Ok(TestFunction::Friedman),
            other => Err(Error::Config(format!(
                "unknown scenario function '{other}' (expected indicator|sin|combo|step|friedman)"
            ))),
        }
    }

    /// Default latent-predictor mean for the scenario.
    pub fn default_mu_x(&self) -> f64 {
        match self {
            TestFunction::Friedman => 0.5,
            _ => 0.0,
        }
    }
}

/// Exact test-function value; boundary conventions follow the printed
/// inequalities (closed on the upper end of each inner band of `step`).
pub fn eval_true_function(kind: TestFunction, x: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), kind.dim(), "dimension mismatch for {kind:?}");
    match kind {
        TestFunction::Indicator => {
            if x[0] < 0.0 {
                -1.0
            } else {
                1.0
            }
        }
        TestFunction::Sin => (2.0 * std::f64::consts::PI * x[0]).sin(),
        TestFunction::Combo => {
            let c = (std::f64::consts::PI * x[0]).cos();
            if x[0] < 0.0 {
                c
            } else {
                -c
            }
        }
        TestFunction::Step => {
            let a = x[0].abs();
            if a > 5.0 / 8.0 {
                3.0
            } else if a > 3.0 / 8.0 {
                2.0
            } else if a > 1.0 / 8.0 {
                1.0
            } else {
                0.0
            }
        }
        TestFunction::Friedman => {
            (std::f64::consts::PI * x[0] * x[1]).sin()
                + 2.0 * (x[2] - 0.5) * (x[2] - 0.5)
                + x[3]
                + 0.5 * x[4]
        }
    }
}

/// Full recipe for one synthetic dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub function: TestFunction,
    pub n_train: usize,
    pub n_test: usize,
    /// Latent predictor law: each coordinate i.i.d. N(mu_x, sigma_x^2).
    pub mu_x: f64,
    pub sigma_x: f64,
    /// Measurement noise sd applied independently per coordinate.
    pub sigma_e: f64,
    /// Response noise sd.
    pub sigma_y: f64,
    pub seed: u64,
}

impl ScenarioSpec {
    /// Scenario defaults: n = 100/100, sigma_x = 0.3, sigma_e = 0.1,
    /// sigma_y = 0.1, with the function's own predictor mean.
    pub fn defaults(function: TestFunction, seed: u64) -> Self {
        ScenarioSpec {
            function,
            n_train: 100,
            n_test: 100,
            mu_x: function.default_mu_x(),
            sigma_x: 0.3,
            sigma_e: 0.1,
            sigma_y: 0.1,
            seed,
        }
    }

    pub fn p(&self) -> usize {
        self.function.dim()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_x > 0.0) {
            return Err(Error::Config("sigma_x must be positive".into()));
        }
        if !(self.sigma_e >= 0.0) || !(self.sigma_y >= 0.0) {
            return Err(Error::Config("noise sds must be nonnegative".into()));
        }
        if self.n_train == 0 {
            return Err(Error::Config("n_train must be positive".into()));
        }
        Ok(())
    }
}

/// A realized dataset with ground truth retained for metric evaluation.
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub spec: ScenarioSpec,
    pub x_true_train: Array2<f64>,
    pub x_star_train: Array2<f64>,
    pub y_train: Array1<f64>,
    pub f_true_train: Array1<f64>,
    pub x_true_test: Array2<f64>,
    pub x_star_test: Array2<f64>,
    pub y_test: Array1<f64>,
    pub f_true_test: Array1<f64>,
}

impl SyntheticDataset {
    pub fn f_true(&self, x: &[f64]) -> f64 {
        eval_true_function(self.spec.function, x)
    }

    /// Training portion as the sampler's input dataset, oracle columns
    /// attached.
    pub fn observed_train(&self) -> ObservedDataset {
        ObservedDataset {
            x_star: self.x_star_train.clone(),
            y: self.y_train.clone(),
            sigma_e: Some(Array1::from_elem(self.spec.p(), self.spec.sigma_e)),
            x_true: Some(self.x_true_train.clone()),
            f_true: Some(self.f_true_train.clone()),
            binary_y: false,
            predictor_names: (1..=self.spec.p()).map(|j| format!("x{j}")).collect(),
        }
    }

    /// Test portion in the same layout.
    pub fn observed_test(&self) -> ObservedDataset {
        ObservedDataset {
            x_star: self.x_star_test.clone(),
            y: self.y_test.clone(),
            sigma_e: Some(Array1::from_elem(self.spec.p(), self.spec.sigma_e)),
            x_true: Some(self.x_true_test.clone()),
            f_true: Some(self.f_true_test.clone()),
            binary_y: false,
            predictor_names: (1..=self.spec.p()).map(|j| format!("x{j}")).collect(),
        }
    }
}

/// Draw a dataset. Train and test points are independent draws from the
/// same predictor law; the draw order (all latent X, then measurement
/// errors, then response errors) is fixed so a (spec, seed) pair is
/// bitwise reproducible.
pub fn generate(spec: &ScenarioSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let p = spec.p();
    let n = spec.n_train + spec.n_test;

    let mut x_true = vec![0.0f64; n * p];
    for v in x_true.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *v = spec.mu_x + spec.sigma_x * z;
    }
    let mut x_star = x_true.clone();
    for v in x_star.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *v += spec.sigma_e * z;
    }
    let mut y = vec![0.0f64; n];
    let mut f_true = vec![0.0f64; n];
    for i in 0..n {
        f_true[i] = eval_true_function(spec.function, &x_true[i * p..(i + 1) * p]);
        let z: f64 = rng.sample(StandardNormal);
        y[i] = f_true[i] + spec.sigma_y * z;
    }

    let split = |m: &[f64], rows: std::ops::Range<usize>, cols: usize| {
        Array2::from_shape_vec(
            (rows.len(), cols),
            m[rows.start * cols..rows.end * cols].to_vec(),
        )
        .expect("shape consistent by construction")
    };
    let tr = 0..spec.n_train;
    let te = spec.n_train..n;
    Ok(SyntheticDataset {
        spec: *spec,
        x_true_train: split(&x_true, tr.clone(), p),
        x_star_train: split(&x_star, tr.clone(), p),
        y_train: Array1::from_vec(y[tr.clone()].to_vec()),
        f_true_train: Array1::from_vec(f_true[tr].to_vec()),
        x_true_test: split(&x_true, te.clone(), p),
        x_star_test: split(&x_star, te.clone(), p),
        y_test: Array1::from_vec(y[te.clone()].to_vec()),
        f_true_test: Array1::from_vec(f_true[te].to_vec()),
    })
}

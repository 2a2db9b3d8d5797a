//! Minimal library walkthrough: simulate one noisy-predictor dataset, fit
//! the measurement-error sampler and the plain baseline, and compare how
//! well each recovers the error sd and the latent predictors.

use mebart::config::{derive_hyperparams, HyperSettings};
use mebart::sampler::{diagnostics, run, EvalSet, Method, Mode, SamplerConfig};
use mebart::stats::mean;
use mebart::synthetic::{generate, ScenarioSpec, TestFunction};

fn main() {
    let spec = ScenarioSpec::defaults(TestFunction::Indicator, 42);
    let ds = generate(&spec).unwrap();
    let data = ds.observed_train();
    let hp = derive_hyperparams(&data, &HyperSettings::default(), Mode::Continuous).unwrap();

    let evals = vec![EvalSet {
        name: "test".into(),
        points: ds.x_star_test.clone(),
        per_draw: false,
    }];

    for method in [Method::Bart, Method::Mebart] {
        let cfg = SamplerConfig::new(Mode::Continuous, method, 42);
        let draws = run(&data, &hp, &cfg, &evals).unwrap();
        let y_test: Vec<f64> = ds.y_test.iter().cloned().collect();
        let mse = mebart::metrics::mse(&draws.eval("test").unwrap().mean, &y_test).unwrap();
        let diag = diagnostics(&draws).unwrap();
        print!(
            "{:>6}: sigma_hat = {:.3} (true {}), test MSE = {:.3}, rhat = {:.3}",
            method.name(),
            mean(&draws.sigma),
            spec.sigma_y,
            mse,
            diag.split_rhat_sigma.unwrap()
        );
        if let Some(x_hat) = draws.latent_posterior_mean(spec.n_train, spec.p()) {
            let (_, scaled) =
                mebart::metrics::x_rmse(x_hat.view(), ds.x_true_train.view(), spec.sigma_e)
                    .unwrap();
            print!(", latent rmse/sigma_e = {scaled:.2}");
        }
        println!();
    }
}

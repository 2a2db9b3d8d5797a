//! Metropolis-within-Gibbs updates of the latent true predictor values.
//!
//! Each observation's unobserved predictor vector is a parameter with full
//! conditional proportional to
//!
//! ```text
//! N(y_i; f(x_i), sigma^2) * N_p(x_i*; x_i, Sigma_e) * N_p(x_i; mu_x, Sigma_x)
//! ```
//!
//! sampled by a symmetric Gaussian random walk centered at the current
//! value with per-coordinate sd `proposal_scale` (defaults to sigma_e). The
//! proposal terms cancel in the acceptance ratio because the walk is
//! symmetric. Observations are updated one at a time in index order; an
//! update never reads another observation's latent value.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::ensemble::{evaluate_ensemble, NodeAssignment, Tree};
use crate::priors::{log_latent_x_prior, HyperParams};
use crate::stats::normal_logpdf;

/// Current latent predictor matrix plus per-observation acceptance tallies.
#[derive(Debug, Clone)]
pub struct LatentState {
    /// n x p, row-major, same scale as the observed predictors. Initialized
    /// to the observed matrix.
    pub x: Vec<f64>,
    pub n: usize,
    pub p: usize,
    pub accepted: Vec<u64>,
    pub proposed: Vec<u64>,
}

impl LatentState {
    pub fn from_observed(x_star: &[f64], n: usize, p: usize) -> Self {
        assert_eq!(x_star.len(), n * p);
        LatentState {
            x: x_star.to_vec(),
            n,
            p,
            accepted: vec![0; n],
            proposed: vec![0; n],
        }
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    /// Per-observation acceptance rates; 0 for observations never proposed.
    pub fn acceptance_rates(&self) -> Vec<f64> {
        self.accepted
            .iter()
            .zip(&self.proposed)
            .map(|(&a, &p)| if p == 0 { 0.0 } else { a as f64 / p as f64 })
            .collect()
    }
}

/// Log full conditional of one latent predictor vector (up to a constant).
pub fn log_full_conditional_x(
    x: &[f64],
    y_i: f64,
    x_star_i: &[f64],
    trees: &[Tree],
    sigma2: f64,
    hp: &HyperParams,
) -> f64 {
    let f = evaluate_ensemble(trees, x);
    let mut total = normal_logpdf(y_i, f, sigma2);
    for j in 0..x.len() {
        total += normal_logpdf(x_star_i[j], x[j], hp.sigma_e_sq[j]);
    }
    total + log_latent_x_prior(x, hp)
}

/// One random-walk step for observation `i`, given the ensemble value at the
/// current latent vector. On acceptance the caller's bookkeeping closures
/// are driven through the returned value: `Some(f_new)` means the move was
/// taken and `scratch` holds the accepted vector.
///
/// The measurement and prior terms are evaluated per coordinate; the
/// y-likelihood term uses the fresh ensemble evaluation at the proposal and
/// the maintained fit at the current value.
#[allow(clippy::too_many_arguments)]
fn step_observation<R: Rng>(
    x_i: &[f64],
    f_current: f64,
    y_i: f64,
    x_star_i: &[f64],
    trees: &[Tree],
    sigma2: f64,
    hp: &HyperParams,
    rng: &mut R,
    proposal: &mut [f64],
) -> Option<f64> {
    let p = x_i.len();
    for j in 0..p {
        let z: f64 = rng.sample(StandardNormal);
        proposal[j] = x_i[j] + hp.proposal_scale[j] * z;
    }
    let f_prop = evaluate_ensemble(trees, proposal);
    let mut log_ratio = normal_logpdf(y_i, f_prop, sigma2) - normal_logpdf(y_i, f_current, sigma2);
    for j in 0..p {
        log_ratio += normal_logpdf(x_star_i[j], proposal[j], hp.sigma_e_sq[j])
            - normal_logpdf(x_star_i[j], x_i[j], hp.sigma_e_sq[j]);
        log_ratio += normal_logpdf(proposal[j], hp.mu_x[j], hp.sigma_x_sq[j])
            - normal_logpdf(x_i[j], hp.mu_x[j], hp.sigma_x_sq[j]);
    }
    let u: f64 = rng.random();
    if u.ln() < log_ratio {
        Some(f_prop)
    } else {
        None
    }
}

/// One full sweep over all observations, maintaining the per-tree routing,
/// per-tree fitted values, and the total fit alongside the latent matrix.
///
/// `y` is the model-scale response (or the probit latent vector with
/// `sigma2 = 1`); `fits[h][i]` is tree h's leaf value for observation i and
/// `total_fit[i]` their sum. All three are updated in place on acceptance.
#[allow(clippy::too_many_arguments)]
pub fn latent_sweep<R: Rng>(
    state: &mut LatentState,
    x_star: &[f64],
    y: &[f64],
    trees: &[Tree],
    assignments: &mut [NodeAssignment],
    fits: &mut [Vec<f64>],
    total_fit: &mut [f64],
    sigma2: f64,
    hp: &HyperParams,
    rng: &mut R,
) {
    let p = state.p;
    let mut proposal = vec![0.0; p];
    for i in 0..state.n {
        state.proposed[i] += 1;
        let accepted = {
            let x_i = &state.x[i * p..(i + 1) * p];
            step_observation(
                x_i,
                total_fit[i],
                y[i],
                &x_star[i * p..(i + 1) * p],
                trees,
                sigma2,
                hp,
                rng,
                &mut proposal,
            )
        };
        if let Some(f_new) = accepted {
            state.accepted[i] += 1;
            state.x[i * p..(i + 1) * p].copy_from_slice(&proposal);
            let x_i = &state.x[i * p..(i + 1) * p];
            for (tree, (assign, fit)) in trees.iter().zip(assignments.iter_mut().zip(fits.iter_mut()))
            {
                let leaf = assign.refresh_observation(tree, i, x_i);
                fit[i] = tree.node(leaf).mu;
            }
            total_fit[i] = f_new;
            debug_assert!(
                (total_fit[i] - fits.iter().map(|f| f[i]).sum::<f64>()).abs() < 1e-10
            );
        }
    }
}

/// Standalone sweep against a frozen ensemble, without the sampler's fit
/// and routing caches; used directly by the distributional tests.
pub fn update_latent_x<R: Rng>(
    state: &mut LatentState,
    x_star: &[f64],
    y: &[f64],
    trees: &[Tree],
    sigma2: f64,
    hp: &HyperParams,
    rng: &mut R,
) {
    let p = state.p;
    let mut proposal = vec![0.0; p];
    for i in 0..state.n {
        state.proposed[i] += 1;
        let x_i = &state.x[i * p..(i + 1) * p];
        let f_current = evaluate_ensemble(trees, x_i);
        if let Some(_f) = step_observation(
            x_i,
            f_current,
            y[i],
            &x_star[i * p..(i + 1) * p],
            trees,
            sigma2,
            hp,
            rng,
            &mut proposal,
        ) {
            state.accepted[i] += 1;
            state.x[i * p..(i + 1) * p].copy_from_slice(&proposal);
        }
    }
}

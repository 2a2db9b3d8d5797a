//! Prior constants, the response-rescaling contract, and the conjugate
//! full-conditional draws (leaf values and error variance).

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::ensemble::{CutpointGrid, Tree};
use crate::error::{Error, Result};
use crate::stats::normal_logpdf;

/// Affine map taking the observed response range onto [-0.5, 0.5].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct YScaler {
    pub y_min: f64,
    pub y_max: f64,
}

impl YScaler {
    pub fn fit(y: &[f64]) -> Result<Self> {
        let y_min = y.iter().cloned().fold(f64::INFINITY, f64::min);
        let y_max = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !(y_max > y_min) || !y_min.is_finite() || !y_max.is_finite() {
            return Err(Error::DegenerateResponse(format!(
                "response range [{y_min}, {y_max}] cannot be rescaled"
            )));
        }
        Ok(YScaler { y_min, y_max })
    }

    #[inline]
    pub fn range(&self) -> f64 {
        self.y_max - self.y_min
    }

    #[inline]
    pub fn forward(&self, y: f64) -> f64 {
        (y - self.y_min) / self.range() - 0.5
    }

    #[inline]
    pub fn inverse(&self, u: f64) -> f64 {
        (u + 0.5) * self.range() + self.y_min
    }

    /// Map a standard deviation from model scale back to response scale.
    #[inline]
    pub fn sd_to_original(&self, sd: f64) -> f64 {
        sd * self.range()
    }
}

/// Source for the sigma-hat anchor used in the variance-prior calibration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SigmaHatSource {
    /// Sample variance of the (rescaled) response. Default.
    SampleVariance,
    /// Residual variance of an ordinary least-squares fit of the rescaled
    /// response on the observed predictors.
    LeastSquares,
}

/// All prior constants for one fit, in model scale.
///
/// The leaf-prior sd is never stored: it is a deterministic function of
/// `m`, `k`, and the model-scale half-range, recomputed on demand so it can
/// never go stale.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperParams {
    /// Number of trees in the ensemble.
    pub m: usize,
    /// Leaf-prior scaling factor.
    pub k: f64,
    /// Half-width of the range the ensemble sum should cover a priori:
    /// 0.5 for a response rescaled to [-0.5, 0.5], 3.0 for probit latents
    /// (which live on roughly [-3, 3] with unit variance).
    pub f_half_range: f64,
    /// Depth-prior base: an internal node at depth d has prior probability
    /// alpha * (1+d)^(-beta).
    pub alpha_tree: f64,
    pub beta_tree: f64,
    /// Error-variance prior sigma^2 ~ nu*lambda / chi^2_nu.
    pub nu: f64,
    pub lambda: f64,
    /// Latent-predictor prior mean and variances (diagonal), per column.
    pub mu_x: Vec<f64>,
    pub sigma_x_sq: Vec<f64>,
    /// Known measurement-error variances (diagonal), per column.
    pub sigma_e_sq: Vec<f64>,
    /// Random-walk proposal sds for the latent update, per column.
    pub proposal_scale: Vec<f64>,
    /// Cutpoints per variable in the split grid.
    pub n_cutpoints: usize,
}

impl HyperParams {
    /// Leaf-prior standard deviation `f_half_range / (k sqrt(m))`, i.e.
    /// 0.5/(k sqrt(m)) on the rescaled-response scale.
    #[inline]
    pub fn sigma_mu(&self) -> f64 {
        self.f_half_range / (self.k * (self.m as f64).sqrt())
    }

    #[inline]
    pub fn sigma_mu_sq(&self) -> f64 {
        let s = self.sigma_mu();
        s * s
    }

    pub fn p(&self) -> usize {
        self.mu_x.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::Config("m must be at least 1".into()));
        }
        if !(self.k > 0.0) {
            return Err(Error::Config("k must be positive".into()));
        }
        if !(self.f_half_range > 0.0) {
            return Err(Error::Config("f_half_range must be positive".into()));
        }
        if !(self.alpha_tree > 0.0 && self.alpha_tree < 1.0) {
            return Err(Error::Config("alpha_tree must lie in (0,1)".into()));
        }
        if !(self.beta_tree > 0.0) {
            return Err(Error::Config("beta_tree must be positive".into()));
        }
        if !(self.nu > 0.0) || !(self.lambda > 0.0) {
            return Err(Error::Config("nu and lambda must be positive".into()));
        }
        let p = self.p();
        if self.sigma_x_sq.len() != p || self.sigma_e_sq.len() != p || self.proposal_scale.len() != p
        {
            return Err(Error::Config(
                "mu_x, sigma_x, sigma_e, proposal_scale must share one length".into(),
            ));
        }
        if self.sigma_x_sq.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::Config("sigma_x variances must be positive".into()));
        }
        if self.sigma_e_sq.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::Config("sigma_e variances must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Prior probability that a node at depth `d` is internal.
#[inline]
pub fn p_internal(alpha: f64, beta: f64, depth: u32) -> f64 {
    alpha * (1.0 + depth as f64).powf(-beta)
}

/// Log prior of a tree structure: depth factors for every node and the
/// uniform split-rule factors (variable, cutpoint) for every internal node.
pub fn log_tree_structure_prior(tree: &Tree, grid: &CutpointGrid, hp: &HyperParams) -> f64 {
    let usable = grid.n_usable_vars() as f64;
    let mut total = 0.0;
    let mut stack = vec![tree.root()];
    while let Some(id) = stack.pop() {
        let node = tree.node(id);
        let p_int = p_internal(hp.alpha_tree, hp.beta_tree, node.depth);
        if node.is_leaf() {
            total += (1.0 - p_int).ln();
        } else {
            total += p_int.ln() - usable.ln() - (grid.n_cuts(node.var as usize) as f64).ln();
            stack.push(node.left);
            stack.push(node.right);
        }
    }
    total
}

/// Change in the log structure prior from splitting a leaf at `depth` on
/// `var`. Telescopes the full product: only the grown node and its two new
/// children contribute.
pub fn log_structure_prior_grow_delta(
    depth: u32,
    var: usize,
    grid: &CutpointGrid,
    hp: &HyperParams,
) -> f64 {
    let p_d = p_internal(hp.alpha_tree, hp.beta_tree, depth);
    let p_child = p_internal(hp.alpha_tree, hp.beta_tree, depth + 1);
    p_d.ln() + 2.0 * (1.0 - p_child).ln() - (1.0 - p_d).ln()
        - (grid.n_usable_vars() as f64).ln()
        - (grid.n_cuts(var) as f64).ln()
}

/// Draw each leaf value from its normal full conditional given the leaf's
/// occupancy `n_t` and residual sum `s_t`:
/// mean = (s_t/sigma^2) / (1/sigma_mu^2 + n_t/sigma^2),
/// var  = 1 / (1/sigma_mu^2 + n_t/sigma^2).
/// An empty leaf reduces to a draw from the prior N(0, sigma_mu^2).
pub fn sample_leaf_values<R: Rng>(
    counts: &[u32],
    sums: &[f64],
    sigma2: f64,
    hp: &HyperParams,
    rng: &mut R,
    out: &mut Vec<f64>,
) {
    debug_assert!(sigma2 > 0.0);
    let prior_prec = 1.0 / hp.sigma_mu_sq();
    out.clear();
    out.reserve(counts.len());
    for (&n_t, &s_t) in counts.iter().zip(sums) {
        let prec = prior_prec + n_t as f64 / sigma2;
        let var = 1.0 / prec;
        let mean = (s_t / sigma2) * var;
        let z: f64 = rng.sample(rand_distr::StandardNormal);
        out.push(mean + var.sqrt() * z);
    }
}

/// The posterior (mean, var) a leaf draw uses; exposed for tests.
pub fn leaf_posterior(n_t: u32, s_t: f64, sigma2: f64, sigma_mu_sq: f64) -> (f64, f64) {
    let prec = 1.0 / sigma_mu_sq + n_t as f64 / sigma2;
    let var = 1.0 / prec;
    ((s_t / sigma2) * var, var)
}

/// Draw sigma^2 from its inverse-gamma full conditional with shape
/// (nu+n)/2 and scale (nu*lambda + sum r_i^2)/2.
pub fn sample_sigma2<R: Rng>(full_residuals: &[f64], hp: &HyperParams, rng: &mut R) -> f64 {
    let n = full_residuals.len() as f64;
    let ssr: f64 = full_residuals.iter().map(|r| r * r).sum();
    let shape = (hp.nu + n) / 2.0;
    let scale = (hp.nu * hp.lambda + ssr) / 2.0;
    // 1/X ~ Gamma(shape, rate=scale)  =>  X ~ InvGamma(shape, scale)
    let g = Gamma::new(shape, 1.0 / scale).expect("valid gamma parameters");
    1.0 / g.sample(rng)
}

/// Calibrate lambda so that the prior nu*lambda/chi^2_nu puts probability
/// `q` below `sigma_hat_sq`: lambda = sigma_hat_sq * chi2_quantile(1-q, nu) / nu.
pub fn calibrate_lambda(sigma_hat_sq: f64, nu: f64, q: f64) -> Result<f64> {
    if !(sigma_hat_sq > 0.0) || !sigma_hat_sq.is_finite() {
        return Err(Error::DegenerateResponse(
            "sigma-hat anchor is not positive; response unusable for variance calibration".into(),
        ));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Config(format!("quantile q={q} must lie in (0,1)")));
    }
    let chi2 = ChiSquared::new(nu)
        .map_err(|e| Error::Config(format!("invalid nu for chi-square prior: {e}")))?;
    Ok(sigma_hat_sq * chi2.inverse_cdf(1.0 - q) / nu)
}

/// Log density of the diagonal-normal latent-predictor prior at `x`.
pub fn log_latent_x_prior(x: &[f64], hp: &HyperParams) -> f64 {
    x.iter()
        .zip(&hp.mu_x)
        .zip(&hp.sigma_x_sq)
        .map(|((&xj, &mj), &vj)| normal_logpdf(xj, mj, vj))
        .sum()
}

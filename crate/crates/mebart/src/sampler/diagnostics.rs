//! Convergence summaries for posterior draws: split-chain potential scale
//! reduction, autocorrelation-based effective sample size, and the
//! latent-update acceptance overview.

use crate::error::{Error, Result};
use crate::stats::mean;

use super::PosteriorDraws;

#[derive(Debug, Clone)]
pub struct AcceptanceSummary {
    pub mean_rate: f64,
    pub min_rate: f64,
    pub max_rate: f64,
}

#[derive(Debug, Clone)]
pub struct DiagnosticsReport {
    /// Per-chain means of the kept sigma draws (original units); empty in
    /// probit mode.
    pub per_chain_sigma_mean: Vec<f64>,
    /// Split-chain potential scale reduction for sigma; absent in probit
    /// mode or when a chain is too short to split.
    pub split_rhat_sigma: Option<f64>,
    /// Effective sample size of the pooled sigma draws.
    pub ess_sigma: Option<f64>,
    pub acceptance: Option<AcceptanceSummary>,
    /// Burn-in length, for trace plots' cutoff marker.
    pub n_burn: usize,
    pub n_keep_per_chain: usize,
    pub n_chains: usize,
}

/// Split-chain potential scale reduction. Each chain is halved; the
/// statistic compares between- and within-half variances. Values below 1
/// (possible by construction when chains agree perfectly) clamp to exactly 1.
pub fn split_rhat(chains: &[&[f64]]) -> Option<f64> {
    let mut halves: Vec<&[f64]> = Vec::with_capacity(chains.len() * 2);
    for c in chains {
        if c.len() < 4 {
            return None;
        }
        let mid = c.len() / 2;
        halves.push(&c[..mid]);
        halves.push(&c[mid..mid * 2]);
    }
    let m = halves.len() as f64;
    let n = halves[0].len() as f64;
    let means: Vec<f64> = halves.iter().map(|h| mean(h)).collect();
    let grand = mean(&means);
    let b = means.iter().map(|mu| (mu - grand) * (mu - grand)).sum::<f64>() * n / (m - 1.0);
    let w = halves
        .iter()
        .zip(&means)
        .map(|(h, mu)| h.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (n - 1.0))
        .sum::<f64>()
        / m;
    if w <= 0.0 {
        // identical constant chains: perfectly converged
        return Some(1.0);
    }
    let var_plus = (n - 1.0) / n * w + b / n;
    Some((var_plus / w).sqrt().max(1.0))
}

/// Effective sample size with Geyer's initial-positive-sequence truncation,
/// computed per chain and summed.
pub fn ess(chains: &[&[f64]]) -> Option<f64> {
    let mut total = 0.0;
    for c in chains {
        let n = c.len();
        if n < 10 {
            return None;
        }
        let mu = mean(c);
        let var = c.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / n as f64;
        if var <= 0.0 {
            // a constant chain carries one effective draw
            total += 1.0;
            continue;
        }
        let rho = |lag: usize| -> f64 {
            let mut s = 0.0;
            for i in 0..n - lag {
                s += (c[i] - mu) * (c[i + lag] - mu);
            }
            s / (n as f64 * var)
        };
        let mut tau = 1.0;
        let mut lag = 1;
        while lag + 1 < n {
            let pair = rho(lag) + rho(lag + 1);
            if pair <= 0.0 {
                break;
            }
            tau += 2.0 * pair;
            lag += 2;
        }
        total += n as f64 / tau;
    }
    Some(total)
}

/// Summaries for a finished run. Requires at least 10 kept draws per chain.
pub fn diagnostics(draws: &PosteriorDraws) -> Result<DiagnosticsReport> {
    if draws.n_keep < 10 {
        return Err(Error::InvalidData(format!(
            "diagnostics need n_keep >= 10, got {}",
            draws.n_keep
        )));
    }
    let acceptance = draws.acceptance.as_ref().map(|rates| AcceptanceSummary {
        mean_rate: mean(rates),
        min_rate: rates.iter().cloned().fold(f64::INFINITY, f64::min),
        max_rate: rates.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    });
    if draws.sigma.is_empty() {
        // probit mode: no sigma to summarize
        return Ok(DiagnosticsReport {
            per_chain_sigma_mean: Vec::new(),
            split_rhat_sigma: None,
            ess_sigma: None,
            acceptance,
            n_burn: draws.n_burn,
            n_keep_per_chain: draws.n_keep,
            n_chains: draws.n_chains,
        });
    }
    let per_chain: Vec<&[f64]> = (0..draws.n_chains)
        .map(|c| &draws.sigma[c * draws.n_keep..(c + 1) * draws.n_keep])
        .collect();
    Ok(DiagnosticsReport {
        per_chain_sigma_mean: per_chain.iter().map(|c| mean(c)).collect(),
        split_rhat_sigma: split_rhat(&per_chain),
        ess_sigma: ess(&per_chain),
        acceptance,
        n_burn: draws.n_burn,
        n_keep_per_chain: draws.n_keep,
        n_chains: draws.n_chains,
    })
}

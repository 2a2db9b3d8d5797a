//! Integrated likelihood of a tree structure with the leaf values
//! marginalized out.
//!
//! Leaves have conjugate normal priors N(0, sigma_mu^2) and within-leaf
//! residuals are N(mu, sigma^2), so each leaf's evidence is available in
//! closed form. For a leaf with `n_t` observations, residual sum `s_t`, and
//! residual sum of squares `ssr_t`:
//!
//! ```text
//! log Z_t = -n_t/2 ln(2 pi sigma^2) - ssr_t/(2 sigma^2)
//!           + 1/2 ln( sigma^2 / (sigma^2 + n_t sigma_mu^2) )
//!           + sigma_mu^2 s_t^2 / ( 2 sigma^2 (sigma^2 + n_t sigma_mu^2) )
//! ```
//!
//! Summed over leaves, the first two terms equal `-n/2 ln(2 pi sigma^2) -
//! ssr/(2 sigma^2)` for the whole residual vector regardless of structure,
//! so they cancel exactly in structure-move ratios; [`leaf_core`] keeps only
//! the structure-dependent part and is what the sampler differences.

use super::assignment::NodeAssignment;
use super::tree::Tree;
use crate::stats::LN_2PI;

/// Structure-dependent part of one leaf's log evidence.
/// With `n_t = 0` (and hence `s_t = 0`) this is exactly 0, which is the
/// correct evidence of an empty leaf up to the cancelling constants.
#[inline]
pub fn leaf_core(n_t: u32, s_t: f64, sigma2: f64, sigma_mu2: f64) -> f64 {
    let denom = sigma2 + n_t as f64 * sigma_mu2;
    0.5 * (sigma2 / denom).ln() + sigma_mu2 * s_t * s_t / (2.0 * sigma2 * denom)
}

/// Full log marginal likelihood of the residual vector under the tree
/// structure, leaf values integrated out.
pub fn log_marginal_likelihood(
    tree: &Tree,
    assignment: &NodeAssignment,
    residuals: &[f64],
    sigma2: f64,
    sigma_mu2: f64,
) -> f64 {
    assert!(sigma2 > 0.0 && sigma_mu2 > 0.0);
    let n = residuals.len();
    let mut sums = vec![0.0f64; tree.capacity()];
    let mut ssr = 0.0;
    for (i, &r) in residuals.iter().enumerate() {
        sums[assignment.leaf_of[i] as usize] += r;
        ssr += r * r;
    }
    let mut total = -(n as f64) / 2.0 * (LN_2PI + sigma2.ln()) - ssr / (2.0 * sigma2);
    for leaf in tree.leaves() {
        total += leaf_core(
            assignment.count(leaf),
            sums[leaf as usize],
            sigma2,
            sigma_mu2,
        );
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::tree::Tree;
    use crate::stats::normal_logpdf;

    /// Independent oracle: per-leaf 1-D Simpson quadrature of
    /// prod_i N(r_i; mu, sigma^2) * N(mu; 0, sigma_mu^2) over mu, in log
    /// space, summed with the log-sum-exp trick.
    fn quadrature_log_marginal(
        leaves: &[Vec<f64>],
        sigma2: f64,
        sigma_mu2: f64,
        n_points: usize,
    ) -> f64 {
        let sigma_mu = sigma_mu2.sqrt();
        let mut total = 0.0;
        for resid in leaves {
            // integration range generously covers prior and likelihood mass
            let center = if resid.is_empty() {
                0.0
            } else {
                resid.iter().sum::<f64>() / resid.len() as f64
            };
            let half = 12.0 * sigma_mu + 12.0 * sigma2.sqrt() + center.abs();
            let lo = -half.max(12.0 * sigma_mu);
            let hi = -lo;
            let h = (hi - lo) / (n_points - 1) as f64;
            let log_f = |mu: f64| -> f64 {
                let mut v = normal_logpdf(mu, 0.0, sigma_mu2);
                for &r in resid {
                    v += normal_logpdf(r, mu, sigma2);
                }
                v
            };
            let mut terms: Vec<f64> = Vec::with_capacity(n_points);
            for k in 0..n_points {
                let w: f64 = if k == 0 || k == n_points - 1 {
                    1.0
                } else if k % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                terms.push(log_f(lo + k as f64 * h) + w.ln());
            }
            let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = terms.iter().map(|t| (t - max).exp()).sum();
            total += max + sum.ln() + (h / 3.0).ln();
        }
        total
    }

    fn assignment_for(tree: &Tree, x: &[f64], n: usize) -> NodeAssignment {
        NodeAssignment::from_scratch(tree, x, n, 1)
    }

    #[test]
    fn single_leaf_zero_residuals_reduces_to_shrinkage_term() {
        let tree = Tree::single_leaf(0.0);
        let n = 5;
        let x = vec![0.0; n];
        let a = assignment_for(&tree, &x, n);
        let resid = vec![0.0; n];
        let (sigma2, sigma_mu2) = (0.04, 0.25);
        let got = log_marginal_likelihood(&tree, &a, &resid, sigma2, sigma_mu2);
        let expected = -(n as f64) / 2.0 * (LN_2PI + sigma2.ln())
            + 0.5 * (sigma2 / (sigma2 + n as f64 * sigma_mu2)).ln();
        assert!((got - expected).abs() < 1e-12);
        // and the structure-dependent part alone
        assert!(
            (leaf_core(n as u32, 0.0, sigma2, sigma_mu2)
                - 0.5 * (sigma2 / (sigma2 + n as f64 * sigma_mu2)).ln())
            .abs()
                < 1e-15
        );
    }

    #[test]
    fn empty_leaf_core_is_zero() {
        assert_eq!(leaf_core(0, 0.0, 0.3, 0.7), 0.0);
    }

    #[test]
    fn two_leaf_tree_matches_quadrature() {
        let mut tree = Tree::single_leaf(0.0);
        tree.grow(0, 0, 0, 0.0);
        let x = [-0.7, -0.1, 0.3, 1.2];
        let a = assignment_for(&tree, &x, 4);
        let resid = [0.42, -0.17, 0.05, -0.33];
        let (sigma2, sigma_mu2) = (0.09, 0.0625);
        let got = log_marginal_likelihood(&tree, &a, &resid, sigma2, sigma_mu2);
        let oracle = quadrature_log_marginal(
            &[vec![0.42, -0.17], vec![0.05, -0.33]],
            sigma2,
            sigma_mu2,
            4001,
        );
        assert!(
            (got - oracle).abs() < 1e-8,
            "closed form {got} vs quadrature {oracle}"
        );
    }

    #[test]
    fn all_small_trees_match_quadrature() {
        // every tree shape with <= 3 leaves over small datasets; seeded
        // residuals; agreement to 1e-8
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        for n in 1..=6usize {
            for shape in 0..3 {
                for _rep in 0..3 {
                    let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
                    let resid: Vec<f64> =
                        (0..n).map(|_| rng.random::<f64>() * 0.8 - 0.4).collect();
                    let mut tree = Tree::single_leaf(0.0);
                    if shape >= 1 {
                        tree.grow(0, 0, 0, 0.0);
                    }
                    if shape == 2 {
                        let leaves = tree.leaves();
                        tree.grow(leaves[1], 0, 1, 0.5);
                    }
                    let a = assignment_for(&tree, &x, n);
                    let (sigma2, sigma_mu2) = (0.05, 0.02);
                    let got = log_marginal_likelihood(&tree, &a, &resid, sigma2, sigma_mu2);
                    // group residuals by leaf for the oracle
                    let leaves = tree.leaves();
                    let groups: Vec<Vec<f64>> = leaves
                        .iter()
                        .map(|&lf| {
                            (0..n)
                                .filter(|&i| a.leaf_of[i] == lf)
                                .map(|i| resid[i])
                                .collect()
                        })
                        .collect();
                    let oracle = quadrature_log_marginal(&groups, sigma2, sigma_mu2, 4001);
                    assert!(
                        (got - oracle).abs() < 1e-8,
                        "n={n} shape={shape}: {got} vs {oracle}"
                    );
                }
            }
        }
    }

    #[test]
    fn mh_ratio_matches_monte_carlo_evidence_ratio() {
        // 3-point toy problem: ratio of evidences for a stump vs a single
        // leaf, against brute-force prior-sampling Monte Carlo estimates of
        // each evidence.
        use rand::SeedableRng;
        use rand_distr::{Distribution, Normal};

        let x = [-0.6, 0.2, 0.8];
        let resid = [0.3, -0.1, 0.25];
        let (sigma2, sigma_mu2) = (0.09, 0.04);

        let single = Tree::single_leaf(0.0);
        let a_single = assignment_for(&single, &x, 3);
        let mut stump = Tree::single_leaf(0.0);
        stump.grow(0, 0, 0, 0.0);
        let a_stump = assignment_for(&stump, &x, 3);

        let lm_single = log_marginal_likelihood(&single, &a_single, &resid, sigma2, sigma_mu2);
        let lm_stump = log_marginal_likelihood(&stump, &a_stump, &resid, sigma2, sigma_mu2);
        let ratio_closed = (lm_stump - lm_single).exp();

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5150);
        let prior = Normal::new(0.0, sigma_mu2.sqrt()).unwrap();
        let m = 400_000;
        let lik = |mu: f64, rs: &[f64]| -> f64 {
            rs.iter()
                .map(|&r| normal_logpdf(r, mu, sigma2))
                .sum::<f64>()
                .exp()
        };
        let mut z_single = 0.0;
        let mut z_left = 0.0;
        let mut z_right = 0.0;
        for _ in 0..m {
            let mu = prior.sample(&mut rng);
            z_single += lik(mu, &resid);
            let mu_l = prior.sample(&mut rng);
            z_left += lik(mu_l, &resid[0..1]); // x = -0.6 goes left of 0
            let mu_r = prior.sample(&mut rng);
            z_right += lik(mu_r, &resid[1..3]);
        }
        let ratio_mc = (z_left / m as f64) * (z_right / m as f64) / (z_single / m as f64);
        let rel = (ratio_closed - ratio_mc).abs() / ratio_closed;
        assert!(
            rel < 0.02,
            "closed-form ratio {ratio_closed} vs MC {ratio_mc} (rel err {rel})"
        );
    }
}

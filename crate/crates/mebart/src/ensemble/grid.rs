//! Per-variable cutpoint grids.
//!
//! Split rules are drawn from a fixed grid built once from the observed
//! predictors: equally spaced values strictly inside
//! `[min(X*_j) - 3*sigma_e_j, max(X*_j) + 3*sigma_e_j]`. The expansion
//! matters for the measurement-error sampler: latent predictor values can
//! drift outside the observed range, and the tree must still be able to
//! split around them.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CutpointGrid {
    cuts: Vec<Vec<f64>>,
}

impl CutpointGrid {
    /// Build from explicit per-variable cut sequences. Each sequence must be
    /// strictly increasing; empty sequences mark a variable as unsplittable
    /// (used for degenerate columns and intercept-only fits).
    pub fn from_parts(cuts: Vec<Vec<f64>>) -> Result<Self> {
        for (j, c) in cuts.iter().enumerate() {
            for w in c.windows(2) {
                if !(w[0] < w[1]) {
                    return Err(Error::InvalidData(format!(
                        "cutpoints for variable {j} are not strictly increasing"
                    )));
                }
            }
            if c.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidData(format!(
                    "non-finite cutpoint for variable {j}"
                )));
            }
        }
        Ok(Self { cuts })
    }

    /// Build the grid from observed predictors (`n` rows of `p` columns,
    /// row-major) with `n_cut` equally spaced interior values per variable
    /// over the 3-sigma-expanded range. A column whose expanded range
    /// collapses (constant column with zero error scale) gets no cutpoints.
    pub fn from_data(x_star: &[f64], n: usize, p: usize, sigma_e: &[f64], n_cut: usize) -> Self {
        assert_eq!(x_star.len(), n * p);
        assert_eq!(sigma_e.len(), p);
        let mut cuts = Vec::with_capacity(p);
        for j in 0..p {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for i in 0..n {
                let v = x_star[i * p + j];
                lo = lo.min(v);
                hi = hi.max(v);
            }
            lo -= 3.0 * sigma_e[j];
            hi += 3.0 * sigma_e[j];
            let width = hi - lo;
            if n_cut == 0 || !(width > 0.0) || !width.is_finite() {
                cuts.push(Vec::new());
                continue;
            }
            let step = width / (n_cut + 1) as f64;
            cuts.push((1..=n_cut).map(|t| lo + t as f64 * step).collect());
        }
        Self { cuts }
    }

    pub fn n_vars(&self) -> usize {
        self.cuts.len()
    }

    pub fn n_cuts(&self, var: usize) -> usize {
        self.cuts[var].len()
    }

    #[inline]
    pub fn value(&self, var: usize, cut: usize) -> f64 {
        self.cuts[var][cut]
    }

    /// Number of variables with at least one cutpoint.
    pub fn n_usable_vars(&self) -> usize {
        self.cuts.iter().filter(|c| !c.is_empty()).count()
    }

    /// The k-th usable variable (k < n_usable_vars).
    pub fn usable_var(&self, k: usize) -> usize {
        self.cuts
            .iter()
            .enumerate()
            .filter(|(_, c)| !c.is_empty())
            .nth(k)
            .map(|(j, _)| j)
            .expect("usable variable index out of range")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interior_points_cover_expanded_range() {
        // one column with values in [0, 1], sigma_e = 0.1 -> range [-0.3, 1.3]
        let x = [0.0, 0.25, 0.5, 0.75, 1.0];
        let g = CutpointGrid::from_data(&x, 5, 1, &[0.1], 100);
        assert_eq!(g.n_cuts(0), 100);
        let first = g.value(0, 0);
        let last = g.value(0, 99);
        assert!(first > -0.3 && first < -0.28);
        assert!(last < 1.3 && last > 1.28);
        // strictly increasing
        for t in 1..100 {
            assert!(g.value(0, t) > g.value(0, t - 1));
        }
    }

    #[test]
    fn degenerate_column_has_no_cuts() {
        let x = [2.0, 2.0, 2.0];
        let g = CutpointGrid::from_data(&x, 3, 1, &[0.0], 100);
        assert_eq!(g.n_cuts(0), 0);
        assert_eq!(g.n_usable_vars(), 0);
    }

    #[test]
    fn usable_var_skips_empty() {
        let g = CutpointGrid::from_parts(vec![vec![], vec![0.5], vec![0.1, 0.2]]).unwrap();
        assert_eq!(g.n_usable_vars(), 2);
        assert_eq!(g.usable_var(0), 1);
        assert_eq!(g.usable_var(1), 2);
    }

    #[test]
    fn rejects_unordered_cuts() {
        assert!(CutpointGrid::from_parts(vec![vec![0.2, 0.1]]).is_err());
        assert!(CutpointGrid::from_parts(vec![vec![0.2, 0.2]]).is_err());
    }
}

//! Observation-to-leaf bookkeeping for one tree.
//!
//! The sampler keeps, per tree, the arena index of the leaf each training
//! observation currently routes to, plus per-leaf occupancy counts. Leaf
//! residual sums are recomputed from the partial residual each sweep (they
//! change whenever any other tree moves), so only the routing is maintained
//! incrementally. `from_scratch` re-derives everything by traversal and is
//! the reference the incremental path is audited against.

use super::propose::TreeMove;
use super::tree::Tree;

#[derive(Debug, Clone, PartialEq)]
pub struct NodeAssignment {
    /// Per observation: arena index of its leaf.
    pub leaf_of: Vec<u32>,
    /// Per arena slot: number of observations routed to that leaf (garbage
    /// for internal/freed slots is never read).
    pub counts: Vec<u32>,
}

impl NodeAssignment {
    pub fn from_scratch(tree: &Tree, x: &[f64], n: usize, p: usize) -> Self {
        let mut leaf_of = vec![0u32; n];
        let mut counts = vec![0u32; tree.capacity()];
        for i in 0..n {
            let leaf = tree.route(&x[i * p..(i + 1) * p]);
            leaf_of[i] = leaf;
            counts[leaf as usize] += 1;
        }
        NodeAssignment { leaf_of, counts }
    }

    #[inline]
    pub fn count(&self, leaf: u32) -> u32 {
        self.counts[leaf as usize]
    }

    fn ensure_capacity(&mut self, cap: usize) {
        if self.counts.len() < cap {
            self.counts.resize(cap, 0);
        }
    }

    /// Re-route the observations of a just-split leaf to its new children.
    /// Must be called after `Tree::grow` with the same move.
    pub fn apply_grow(&mut self, tree: &Tree, grown_leaf: u32, x: &[f64], p: usize) {
        self.ensure_capacity(tree.capacity());
        let node = tree.node(grown_leaf);
        let (l, r) = (node.left, node.right);
        let (var, cut_value) = (node.var as usize, node.cut_value);
        let mut nl = 0u32;
        let mut nr = 0u32;
        for (i, leaf) in self.leaf_of.iter_mut().enumerate() {
            if *leaf == grown_leaf {
                if x[i * p + var] < cut_value {
                    *leaf = l;
                    nl += 1;
                } else {
                    *leaf = r;
                    nr += 1;
                }
            }
        }
        self.counts[grown_leaf as usize] = 0;
        self.counts[l as usize] = nl;
        self.counts[r as usize] = nr;
    }

    /// Merge the observations of a collapsed node's children back onto it.
    /// Must be called after `Tree::prune`; `old_left`/`old_right` are the
    /// freed child slots.
    pub fn apply_prune(&mut self, pruned: u32, old_left: u32, old_right: u32) {
        let merged = self.counts[old_left as usize] + self.counts[old_right as usize];
        for leaf in self.leaf_of.iter_mut() {
            if *leaf == old_left || *leaf == old_right {
                *leaf = pruned;
            }
        }
        self.counts[old_left as usize] = 0;
        self.counts[old_right as usize] = 0;
        self.counts[pruned as usize] = merged;
    }

    /// Re-route a single observation after its latent predictor moved.
    pub fn refresh_observation(&mut self, tree: &Tree, i: usize, x_i: &[f64]) -> u32 {
        let new_leaf = tree.route(x_i);
        let old = self.leaf_of[i];
        if new_leaf != old {
            self.counts[old as usize] -= 1;
            self.counts[new_leaf as usize] += 1;
            self.leaf_of[i] = new_leaf;
        }
        new_leaf
    }

    /// Per-leaf residual sums into `sums` (indexed by arena slot).
    pub fn residual_sums(&self, residuals: &[f64], sums: &mut Vec<f64>) {
        sums.clear();
        sums.resize(self.counts.len(), 0.0);
        for (i, &leaf) in self.leaf_of.iter().enumerate() {
            sums[leaf as usize] += residuals[i];
        }
    }

    /// Occupancy and residual sums a grow move would give the two children,
    /// plus the current stats of the split leaf. Returns
    /// `(n_left, s_left, n_right, s_right)`.
    pub fn split_stats(
        &self,
        mv: &TreeMove,
        grid_value: f64,
        var: usize,
        x: &[f64],
        p: usize,
        residuals: &[f64],
    ) -> (u32, f64, u32, f64) {
        let leaf = match mv {
            TreeMove::Grow { leaf, .. } => *leaf,
            TreeMove::Prune { .. } => panic!("split_stats is only defined for grow moves"),
        };
        let mut nl = 0u32;
        let mut sl = 0.0;
        let mut nr = 0u32;
        let mut sr = 0.0;
        for (i, &lf) in self.leaf_of.iter().enumerate() {
            if lf == leaf {
                if x[i * p + var] < grid_value {
                    nl += 1;
                    sl += residuals[i];
                } else {
                    nr += 1;
                    sr += residuals[i];
                }
            }
        }
        (nl, sl, nr, sr)
    }
}

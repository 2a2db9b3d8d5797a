//! Grow/prune proposal kernel for the tree-structure Metropolis step.
//!
//! The move set is the minimal reversible pair: GROW splits a uniformly
//! chosen leaf on a uniformly chosen splittable variable and uniformly
//! chosen cutpoint; PRUNE collapses a uniformly chosen internal node whose
//! children are both leaves. Each kind is picked with probability 1/2,
//! except that a single-leaf tree puts all mass on GROW (there is nothing
//! to prune) and a tree with no splittable variable cannot grow.

use rand::Rng;

use super::grid::CutpointGrid;
use super::tree::Tree;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TreeMove {
    Grow {
        leaf: u32,
        var: u32,
        cut: u32,
        cut_value: f64,
    },
    Prune {
        node: u32,
    },
}

/// A proposed move together with its log proposal density and the log
/// density of the exact reverse move evaluated on the post-move tree, as
/// needed for the Metropolis-Hastings correction.
#[derive(Debug, Clone, Copy)]
pub struct Proposal {
    pub mv: TreeMove,
    pub log_forward: f64,
    pub log_reverse: f64,
}

fn log_p_grow(tree_is_single_leaf: bool, can_grow: bool) -> f64 {
    match (tree_is_single_leaf, can_grow) {
        (true, true) => 0.0,         // ln 1
        (_, false) => f64::NEG_INFINITY,
        (false, true) => -std::f64::consts::LN_2,
    }
}

fn log_p_prune(tree_is_single_leaf: bool, can_grow: bool) -> f64 {
    if tree_is_single_leaf {
        f64::NEG_INFINITY
    } else if can_grow {
        -std::f64::consts::LN_2
    } else {
        0.0
    }
}

/// Draw one structure move. Returns `None` only when no move exists (a
/// single-leaf tree over a grid with no splittable variable).
pub fn propose_move<R: Rng>(tree: &Tree, grid: &CutpointGrid, rng: &mut R) -> Option<Proposal> {
    let usable = grid.n_usable_vars();
    let can_grow = usable > 0;
    let single = tree.is_single_leaf();
    if single && !can_grow {
        return None;
    }
    let p_grow = if single {
        1.0
    } else if can_grow {
        0.5
    } else {
        0.0
    };
    let grow = rng.random::<f64>() < p_grow;
    if grow {
        let leaves = tree.leaves();
        let leaf = leaves[rng.random_range(0..leaves.len())];
        let var = grid.usable_var(rng.random_range(0..usable));
        let n_cuts = grid.n_cuts(var);
        let cut = rng.random_range(0..n_cuts);
        let log_forward = log_p_grow(single, can_grow)
            - (leaves.len() as f64).ln()
            - (usable as f64).ln()
            - (n_cuts as f64).ln();
        // reverse: prune the grown node in the post-move tree
        let parent = tree.node(leaf).parent;
        let parent_was_prunable = parent != super::tree::NIL && {
            let p = tree.node(parent);
            let sibling = if p.left == leaf { p.right } else { p.left };
            tree.node(sibling).is_leaf()
        };
        let n_prunable_after = tree.n_prunable() + 1 - u32::from(parent_was_prunable);
        // the post-grow tree has >= 2 leaves and a splittable variable
        let log_reverse = log_p_prune(false, true) - f64::from(n_prunable_after).ln();
        Some(Proposal {
            mv: TreeMove::Grow {
                leaf,
                var: var as u32,
                cut: cut as u32,
                cut_value: grid.value(var, cut),
            },
            log_forward,
            log_reverse,
        })
    } else {
        let prunable = tree.prunable_nodes();
        let node = prunable[rng.random_range(0..prunable.len())];
        let log_forward = log_p_prune(single, can_grow) - (prunable.len() as f64).ln();
        // reverse: regrow the collapsed leaf with the same rule
        let n_leaves_after = tree.n_leaves() - 1;
        let var = tree.node(node).var as usize;
        let log_reverse = log_p_grow(n_leaves_after == 1, can_grow)
            - f64::from(n_leaves_after).ln()
            - (usable as f64).ln()
            - (grid.n_cuts(var) as f64).ln();
        Some(Proposal {
            mv: TreeMove::Prune { node },
            log_forward,
            log_reverse,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid100() -> CutpointGrid {
        CutpointGrid::from_data(&[0.0, 1.0], 2, 1, &[0.0], 100)
    }

    #[test]
    fn single_leaf_always_grows() {
        let tree = Tree::single_leaf(0.0);
        let grid = grid100();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let p = propose_move(&tree, &grid, &mut rng).unwrap();
            assert!(matches!(p.mv, TreeMove::Grow { .. }));
            // forward density: ln(1 * 1/1 * 1/1 * 1/100)
            assert!((p.log_forward - (1.0f64 / 100.0).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn no_move_without_cutpoints() {
        let tree = Tree::single_leaf(0.0);
        let grid = CutpointGrid::from_parts(vec![Vec::new()]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        assert!(propose_move(&tree, &grid, &mut rng).is_none());
    }

    #[test]
    fn depth_one_grow_density() {
        // depth-1 tree, p=1, 100 cutpoints: a specific grow has density
        // P(GROW) * 1/n_leaves * 1/n_vars * 1/n_cuts = 0.5 * 1/2 * 1 * 1/100
        let mut tree = Tree::single_leaf(0.0);
        tree.grow(0, 0, 50, 0.5);
        let grid = grid100();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let expected = (0.5f64 * 0.5 * 1.0 / 100.0).ln();
        let mut saw_grow = false;
        for _ in 0..100 {
            let p = propose_move(&tree, &grid, &mut rng).unwrap();
            if let TreeMove::Grow { .. } = p.mv {
                saw_grow = true;
                assert!((p.log_forward - expected).abs() < 1e-12);
            }
        }
        assert!(saw_grow);
    }

    #[test]
    fn grow_reverse_matches_prune_forward_on_grown_tree() {
        let grid = grid100();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        // start from a 3-leaf tree so prunable counts are nontrivial
        let mut base = Tree::single_leaf(0.0);
        base.grow(0, 0, 10, grid.value(0, 10));
        let leaves = base.leaves();
        base.grow(leaves[0], 0, 5, grid.value(0, 5));

        for _ in 0..300 {
            let p = propose_move(&base, &grid, &mut rng).unwrap();
            if let TreeMove::Grow {
                leaf,
                var,
                cut,
                cut_value,
            } = p.mv
            {
                let mut grown = base.clone();
                grown.grow(leaf, var, cut, cut_value);
                // prune density of exactly that node on the grown tree
                let prune_forward =
                    -std::f64::consts::LN_2 - f64::from(grown.n_prunable()).ln();
                assert!(
                    (p.log_reverse - prune_forward).abs() < 1e-12,
                    "reverse {} vs prune forward {}",
                    p.log_reverse,
                    prune_forward
                );
            }
        }
    }

    #[test]
    fn prune_reverse_matches_grow_forward_on_pruned_tree() {
        let grid = grid100();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut base = Tree::single_leaf(0.0);
        base.grow(0, 0, 10, grid.value(0, 10));
        for _ in 0..300 {
            let p = propose_move(&base, &grid, &mut rng).unwrap();
            if let TreeMove::Prune { node } = p.mv {
                let mut pruned = base.clone();
                let (var, _, _) = pruned.prune(node);
                let single = pruned.is_single_leaf();
                let grow_forward = log_p_grow(single, true)
                    - f64::from(pruned.n_leaves()).ln()
                    - 0.0 // one usable variable
                    - (grid.n_cuts(var as usize) as f64).ln();
                assert!((p.log_reverse - grow_forward).abs() < 1e-12);
            }
        }
    }
}

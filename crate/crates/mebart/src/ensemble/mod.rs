//! Trees, cutpoint grids, observation bookkeeping, and the grow/prune
//! structure proposals for one ensemble member.

mod assignment;
mod grid;
mod marginal;
mod propose;
mod tree;

pub use assignment::NodeAssignment;
pub use grid::CutpointGrid;
pub use marginal::{leaf_core, log_marginal_likelihood};
pub use propose::{propose_move, Proposal, TreeMove};
pub use tree::{
    accumulate_ensemble, accumulate_ensemble_sorted_1d, evaluate_ensemble, Node, Tree, NIL,
};

/// Free-function form of [`Tree::eval`]: the output of one tree at one
/// input.
pub fn evaluate_tree(tree: &Tree, x: &[f64]) -> f64 {
    tree.eval(x)
}

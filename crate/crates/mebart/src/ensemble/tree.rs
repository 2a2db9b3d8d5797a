//! Index-arena binary regression trees.
//!
//! Nodes live in a flat `Vec` with explicit child indices; freed slots are
//! recycled LIFO so that a grow immediately undoing a prune (or vice versa)
//! reproduces the previous arena layout exactly. Internal nodes carry a
//! split `(variable, cutpoint index, cutpoint value)`; leaves carry the
//! scalar output in rescaled-response units.
//!
//! Routing rule: `x[var] < cut_value` goes left, ties go right.

pub const NIL: u32 = u32::MAX;
const FREED: u32 = u32::MAX - 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Node {
    pub var: u32,
    pub cut: u32,
    pub cut_value: f64,
    pub left: u32,
    pub right: u32,
    pub parent: u32,
    pub depth: u32,
    pub mu: f64,
}

impl Node {
    #[inline]
    pub fn is_leaf(&self) -> bool {
        self.left == NIL
    }

    fn is_freed(&self) -> bool {
        self.left == FREED
    }
}

#[derive(Debug, Clone)]
pub struct Tree {
    nodes: Vec<Node>,
    root: u32,
    free: Vec<u32>,
    n_leaves: u32,
    n_prunable: u32,
}

impl Tree {
    pub fn single_leaf(mu: f64) -> Self {
        Tree {
            nodes: vec![Node {
                var: 0,
                cut: 0,
                cut_value: 0.0,
                left: NIL,
                right: NIL,
                parent: NIL,
                depth: 0,
                mu,
            }],
            root: 0,
            free: Vec::new(),
            n_leaves: 1,
            n_prunable: 0,
        }
    }

    #[inline]
    pub fn root(&self) -> u32 {
        self.root
    }

    /// Arena capacity (including freed slots); assignment bookkeeping sizes
    /// its per-node buffers from this.
    #[inline]
    pub fn capacity(&self) -> usize {
        self.nodes.len()
    }

    #[inline]
    pub fn node(&self, id: u32) -> &Node {
        &self.nodes[id as usize]
    }

    #[inline]
    pub fn n_leaves(&self) -> u32 {
        self.n_leaves
    }

    /// Internal nodes whose children are both leaves (prune candidates).
    #[inline]
    pub fn n_prunable(&self) -> u32 {
        self.n_prunable
    }

    #[inline]
    pub fn is_single_leaf(&self) -> bool {
        self.n_leaves == 1
    }

    /// Route a p-vector to its leaf and return the leaf's arena index.
    #[inline]
    pub fn route(&self, x: &[f64]) -> u32 {
        let mut id = self.root;
        loop {
            let n = &self.nodes[id as usize];
            if n.left == NIL {
                return id;
            }
            id = if x[n.var as usize] < n.cut_value {
                n.left
            } else {
                n.right
            };
        }
    }

    /// Tree output at `x`: the value of the unique leaf reached.
    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.nodes[self.route(x) as usize].mu
    }

    pub fn set_mu(&mut self, id: u32, mu: f64) {
        debug_assert!(self.nodes[id as usize].is_leaf());
        self.nodes[id as usize].mu = mu;
    }

    /// Leaf arena indices in preorder.
    pub fn leaves(&self) -> Vec<u32> {
        let mut out = Vec::with_capacity(self.n_leaves as usize);
        self.walk(|id, node| {
            if node.is_leaf() {
                out.push(id);
            }
        });
        out
    }

    /// Prunable internal nodes (both children leaves) in preorder.
    pub fn prunable_nodes(&self) -> Vec<u32> {
        let mut out = Vec::with_capacity(self.n_prunable as usize);
        self.walk(|id, node| {
            if !node.is_leaf() {
                let l = &self.nodes[node.left as usize];
                let r = &self.nodes[node.right as usize];
                if l.is_leaf() && r.is_leaf() {
                    out.push(id);
                }
            }
        });
        out
    }

    fn walk<F: FnMut(u32, &Node)>(&self, mut f: F) {
        let mut stack = vec![self.root];
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id as usize];
            f(id, node);
            if !node.is_leaf() {
                // preorder with left first: push right before left
                stack.push(node.right);
                stack.push(node.left);
            }
        }
    }

    fn alloc(&mut self, node: Node) -> u32 {
        if let Some(id) = self.free.pop() {
            self.nodes[id as usize] = node;
            id
        } else {
            self.nodes.push(node);
            (self.nodes.len() - 1) as u32
        }
    }

    /// Split leaf `leaf` on `(var, cut)`; returns the new (left, right) leaf
    /// ids. Both children start with mu = 0; callers redraw leaf values
    /// anyway.
    pub fn grow(&mut self, leaf: u32, var: u32, cut: u32, cut_value: f64) -> (u32, u32) {
        debug_assert!(self.nodes[leaf as usize].is_leaf());
        let depth = self.nodes[leaf as usize].depth + 1;
        let child = Node {
            var: 0,
            cut: 0,
            cut_value: 0.0,
            left: NIL,
            right: NIL,
            parent: leaf,
            depth,
            mu: 0.0,
        };
        let l = self.alloc(child);
        let r = self.alloc(child);
        let n = &mut self.nodes[leaf as usize];
        n.var = var;
        n.cut = cut;
        n.cut_value = cut_value;
        n.left = l;
        n.right = r;
        self.n_leaves += 1;
        self.n_prunable += 1;
        let parent = self.nodes[leaf as usize].parent;
        if parent != NIL && self.was_prunable_before_grow(parent, leaf) {
            self.n_prunable -= 1;
        }
        (l, r)
    }

    fn was_prunable_before_grow(&self, parent: u32, grown: u32) -> bool {
        let p = &self.nodes[parent as usize];
        let sibling = if p.left == grown { p.right } else { p.left };
        self.nodes[sibling as usize].is_leaf()
    }

    /// Collapse internal node `id` (whose children must both be leaves) back
    /// into a leaf; returns the removed split `(var, cut, cut_value)`.
    pub fn prune(&mut self, id: u32) -> (u32, u32, f64) {
        let (l, r, var, cut, cut_value) = {
            let n = &self.nodes[id as usize];
            debug_assert!(!n.is_leaf());
            (n.left, n.right, n.var, n.cut, n.cut_value)
        };
        debug_assert!(self.nodes[l as usize].is_leaf() && self.nodes[r as usize].is_leaf());
        // free right then left: the next grow pops left first, restoring the
        // exact pre-prune arena layout
        self.nodes[r as usize].left = FREED;
        self.nodes[l as usize].left = FREED;
        self.free.push(r);
        self.free.push(l);
        let n = &mut self.nodes[id as usize];
        n.left = NIL;
        n.right = NIL;
        n.mu = 0.0;
        self.n_leaves -= 1;
        self.n_prunable -= 1;
        let parent = self.nodes[id as usize].parent;
        if parent != NIL {
            let p = &self.nodes[parent as usize];
            let sibling = if p.left == id { p.right } else { p.left };
            if self.nodes[sibling as usize].is_leaf() {
                self.n_prunable += 1;
            }
        }
        (var, cut, cut_value)
    }

    /// Structural equality: same topology, splits, and leaf values, ignoring
    /// arena slot numbering.
    pub fn structural_eq(&self, other: &Tree) -> bool {
        fn eq(a: &Tree, ai: u32, b: &Tree, bi: u32) -> bool {
            let na = a.node(ai);
            let nb = b.node(bi);
            match (na.is_leaf(), nb.is_leaf()) {
                (true, true) => na.mu == nb.mu,
                (false, false) => {
                    na.var == nb.var
                        && na.cut == nb.cut
                        && na.cut_value == nb.cut_value
                        && eq(a, na.left, b, nb.left)
                        && eq(a, na.right, b, nb.right)
                }
                _ => false,
            }
        }
        eq(self, self.root, other, other.root)
    }

    /// Rebuild with a dense preorder arena (root at slot 0). Used for
    /// canonical serialization.
    pub fn compacted(&self) -> Tree {
        fn copy(src: &Tree, id: u32, parent: u32, out: &mut Vec<Node>) -> u32 {
            let slot = out.len() as u32;
            let mut n = *src.node(id);
            n.parent = parent;
            out.push(n);
            if !src.node(id).is_leaf() {
                let l = copy(src, src.node(id).left, slot, out);
                let r = copy(src, src.node(id).right, slot, out);
                out[slot as usize].left = l;
                out[slot as usize].right = r;
            }
            slot
        }
        let mut nodes = Vec::with_capacity((2 * self.n_leaves - 1) as usize);
        copy(self, self.root, NIL, &mut nodes);
        Tree {
            nodes,
            root: 0,
            free: Vec::new(),
            n_leaves: self.n_leaves,
            n_prunable: self.n_prunable,
        }
    }

    /// Rebuild a tree from a dense node array with root at slot 0 (the
    /// serialized form). Rejects node graphs that are not a tree: every slot
    /// must be reached exactly once from the root. Parent and depth links
    /// are recomputed.
    pub fn from_dense_nodes(mut nodes: Vec<Node>) -> crate::error::Result<Tree> {
        use crate::error::Error;
        let n = nodes.len();
        if n == 0 {
            return Err(Error::DrawsFormat("empty node array".into()));
        }
        let mut visits = vec![false; n];
        let mut stack: Vec<(u32, u32, u32)> = vec![(0, NIL, 0)]; // (id, parent, depth)
        let mut n_leaves = 0u32;
        let mut n_prunable = 0u32;
        let mut seen = 0usize;
        while let Some((id, parent, depth)) = stack.pop() {
            let idx = id as usize;
            if idx >= n {
                return Err(Error::DrawsFormat(format!("child index {id} out of range")));
            }
            if visits[idx] {
                return Err(Error::DrawsFormat(format!(
                    "node {id} reached twice: not a tree"
                )));
            }
            visits[idx] = true;
            seen += 1;
            nodes[idx].parent = parent;
            nodes[idx].depth = depth;
            if nodes[idx].is_leaf() {
                n_leaves += 1;
            } else {
                let (l, r) = (nodes[idx].left, nodes[idx].right);
                if l as usize >= n || r as usize >= n || l == r {
                    return Err(Error::DrawsFormat(format!(
                        "bad children ({l}, {r}) at node {id}"
                    )));
                }
                stack.push((r, id, depth + 1));
                stack.push((l, id, depth + 1));
            }
        }
        if seen != n {
            return Err(Error::DrawsFormat(format!(
                "{} of {n} nodes unreachable from the root",
                n - seen
            )));
        }
        for idx in 0..n {
            if !nodes[idx].is_leaf() {
                let l = nodes[nodes[idx].left as usize];
                let r = nodes[nodes[idx].right as usize];
                if l.is_leaf() && r.is_leaf() {
                    n_prunable += 1;
                }
            }
        }
        Ok(Tree {
            nodes,
            root: 0,
            free: Vec::new(),
            n_leaves,
            n_prunable,
        })
    }

    /// Full consistency audit of the cached counters and parent/child links;
    /// used by the sampler's periodic coherence checks.
    pub fn check_invariants(&self) -> bool {
        let mut leaves = 0u32;
        let mut prunable = 0u32;
        let mut seen = 0usize;
        let mut ok = true;
        self.walk(|id, node| {
            seen += 1;
            if node.is_leaf() {
                leaves += 1;
            } else {
                let l = self.node(node.left);
                let r = self.node(node.right);
                ok &= l.parent == id && r.parent == id;
                ok &= l.depth == node.depth + 1 && r.depth == node.depth + 1;
                ok &= !l.is_freed() && !r.is_freed();
                if l.is_leaf() && r.is_leaf() {
                    prunable += 1;
                }
            }
        });
        let live = self.nodes.iter().filter(|n| !n.is_freed()).count();
        ok && leaves == self.n_leaves && prunable == self.n_prunable && seen == live
    }
}

/// Sum of tree outputs at `x`.
#[inline]
pub fn evaluate_ensemble(trees: &[Tree], x: &[f64]) -> f64 {
    trees.iter().map(|t| t.eval(x)).sum()
}

/// Ensemble sums at many points given as `n` row-major rows of length `p`;
/// results accumulate into `out` (callers zero it first if needed).
pub fn accumulate_ensemble(trees: &[Tree], xs: &[f64], p: usize, out: &mut [f64]) {
    let n = out.len();
    assert_eq!(xs.len(), n * p);
    for tree in trees {
        for (i, o) in out.iter_mut().enumerate() {
            *o += tree.eval(&xs[i * p..(i + 1) * p]);
        }
    }
}

/// Ensemble sums over a sorted 1-D point set, one interval-fill pass per
/// tree instead of a root-to-leaf walk per point. Used for dense grids.
pub fn accumulate_ensemble_sorted_1d(trees: &[Tree], xs_sorted: &[f64], out: &mut [f64]) {
    assert_eq!(xs_sorted.len(), out.len());
    debug_assert!(xs_sorted.windows(2).all(|w| w[0] <= w[1]));
    let mut stack: Vec<(u32, usize, usize)> = Vec::new();
    for tree in trees {
        stack.push((tree.root(), 0, xs_sorted.len()));
        while let Some((id, lo, hi)) = stack.pop() {
            let node = tree.node(id);
            if node.is_leaf() {
                for o in &mut out[lo..hi] {
                    *o += node.mu;
                }
            } else {
                let mid = lo + xs_sorted[lo..hi].partition_point(|&x| x < node.cut_value);
                if mid > lo {
                    stack.push((node.left, lo, mid));
                }
                if hi > mid {
                    stack.push((node.right, mid, hi));
                }
            }
        }
    }
}

use serde::{Deserialize, Serialize};

/// Flat binary tree. Leaves have `feature == None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    /// Split feature; `None` marks a leaf.
    pub feature: Option<usize>,
    /// Rows with `x[feature] < threshold` go left.
    pub threshold: f64,
    pub left: usize,
    pub right: usize,
    pub value: f64,
}

impl Node {
    fn leaf(value: f64) -> Self {
        Node { feature: None, threshold: 0.0, left: 0, right: 0, value }
    }
}

impl Tree {
    pub fn leaf(value: f64) -> Self {
        Tree { nodes: vec![Node::leaf(value)] }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            let n = &self.nodes[i];
            match n.feature {
                None => return n.value,
                Some(f) => i = if x[f] < n.threshold { n.left } else { n.right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            let n = &t.nodes[i];
            match n.feature {
                None => 0,
                Some(_) => 1 + go(t, n.left).max(go(t, n.right)),
            }
        }
        go(self, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| n.feature.is_none()).count()
    }

    /// Every internal node has two in-range children and leaves are finite.
    pub fn is_well_formed(&self) -> bool {
        self.nodes.iter().all(|n| match n.feature {
            None => n.value.is_finite(),
            Some(_) => n.left < self.nodes.len() && n.right < self.nodes.len() && n.left != n.right,
        })
    }
}

/// A chosen split: feature, threshold and the score it improves by.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Split {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
}

impl Split {
    /// Whether `self` should replace `best`: strictly higher gain, or an exact
    /// tie on another feature whose values over `rows` compare lower. The
    /// tie-break looks at column contents, never column positions, so a
    /// permuted feature matrix grows the same tree.
    pub fn beats(&self, best: Option<&Split>, x: &Columns, rows: &[usize]) -> bool {
        let Some(b) = best else { return true };
        if self.gain != b.gain {
            return self.gain > b.gain;
        }
        if self.feature == b.feature {
            return false;
        }
        for &r in rows {
            match x.get(r, self.feature).total_cmp(&x.get(r, b.feature)) {
                std::cmp::Ordering::Less => return true,
                std::cmp::Ordering::Greater => return false,
                std::cmp::Ordering::Equal => {}
            }
        }
        false
    }
}

/// Column-major feature access for split search.
pub(crate) struct Columns<'a> {
    pub data: &'a [f64],
    pub cols: usize,
}

impl Columns<'_> {
    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    /// `rows` sorted by the value of `col`, ties by row index.
    pub fn sorted(&self, rows: &[usize], col: usize) -> Vec<usize> {
        let mut r = rows.to_vec();
        r.sort_by(|&a, &b| self.get(a, col).total_cmp(&self.get(b, col)).then(a.cmp(&b)));
        r
    }
}

/// Every column's row order, computed once per fit. Columns never change
/// while trees grow, so a node's sorted rows are the presorted order filtered
/// by membership: the same sequence as [`Columns::sorted`], in O(n).
pub(crate) struct Presorted {
    order: Vec<Vec<usize>>,
    /// Multiplicity of each row in the current node (bootstrap repeats rows).
    counts: Vec<u32>,
}

impl Presorted {
    pub fn new(x: &Columns, n: usize) -> Self {
        let all: Vec<usize> = (0..n).collect();
        Presorted { order: (0..x.cols).map(|f| x.sorted(&all, f)).collect(), counts: vec![0; n] }
    }

    /// Select the node whose rows are passed to [`Presorted::sorted_into`].
    pub fn load(&mut self, rows: &[usize]) {
        self.counts.fill(0);
        for &r in rows {
            self.counts[r] += 1;
        }
    }

    pub fn sorted_into(&self, col: usize, out: &mut Vec<usize>) {
        out.clear();
        for &r in &self.order[col] {
            for _ in 0..self.counts[r] {
                out.push(r);
            }
        }
    }
}

/// Recursive builder shared by boosting and CART. `leaf_value` and
/// `best_split` carry the model-specific statistics.
pub(crate) fn grow(
    rows: Vec<usize>,
    depth: usize,
    max_depth: Option<usize>,
    tree: &mut Tree,
    leaf_value: &dyn Fn(&[usize]) -> f64,
    best_split: &mut dyn FnMut(&[usize]) -> Option<Split>,
    x: &Columns,
) -> usize {
    let id = tree.nodes.len();
    tree.nodes.push(Node::leaf(leaf_value(&rows)));
    if max_depth.is_some_and(|m| depth >= m) || rows.len() < 2 {
        return id;
    }
    let Some(split) = best_split(&rows) else { return id };
    let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| x.get(i, split.feature) < split.threshold);
    if l.is_empty() || r.is_empty() {
        return id;
    }
    let left = grow(l, depth + 1, max_depth, tree, leaf_value, best_split, x);
    let right = grow(r, depth + 1, max_depth, tree, leaf_value, best_split, x);
    let n = &mut tree.nodes[id];
    n.feature = Some(split.feature);
    n.threshold = split.threshold;
    n.left = left;
    n.right = right;
    id
}

/// Midpoint threshold between two distinct sorted values; falls back to the
/// upper value when the midpoint rounds onto the lower one.
pub(crate) fn midpoint(lo: f64, hi: f64) -> f64 {
    let m = lo + (hi - lo) / 2.0;
    if m > lo {
        m
    } else {
        hi
    }
}

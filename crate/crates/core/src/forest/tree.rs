//! CART classification trees grown on Gini impurity.

use rand::Rng;

use crate::error::{Error, Result};
use crate::forest::{ForestParams, Samples};

/// Gini impurity `1 - Σ p_i²` of a class histogram.
pub fn gini(counts: &[usize]) -> Result<f64> {
    let n: usize = counts.iter().sum();
    if n == 0 {
        return Err(Error::Degenerate("gini of an empty histogram".into()));
    }
    let n = n as f64;
    Ok(1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
}

/// Node of a tree stored in preorder. The left child of a split always
/// immediately follows it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Node {
    Leaf {
        class: u16,
    },
    Split {
        feature: u8,
        threshold: f64,
        right: u32,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    /// Builds a tree from preorder nodes, checking child links.
    pub(crate) fn from_nodes(nodes: Vec<Node>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::Format("tree without nodes".into()));
        }
        for (i, node) in nodes.iter().enumerate() {
            if let Node::Split { right, .. } = node {
                let r = *right as usize;
                if r <= i + 1 || r >= nodes.len() {
                    return Err(Error::Format(format!(
                        "node {i} has invalid right child {r}"
                    )));
                }
            }
        }
        Ok(Tree { nodes })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn predict(&self, x: &[f64]) -> u16 {
        let mut i = 0usize;
        loop {
            match self.nodes[i] {
                Node::Leaf { class } => return class,
                Node::Split {
                    feature,
                    threshold,
                    right,
                } => {
                    i = if x[feature as usize] <= threshold {
                        i + 1
                    } else {
                        right as usize
                    };
                }
            }
        }
    }

    /// Longest root-to-leaf edge count.
    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> (usize, usize) {
            // returns (depth below i, index after subtree)
            match nodes[i] {
                Node::Leaf { .. } => (0, i + 1),
                Node::Split { right, .. } => {
                    let (dl, _) = walk(nodes, i + 1);
                    let (dr, end) = walk(nodes, right as usize);
                    (1 + dl.max(dr), end)
                }
            }
        }
        walk(&self.nodes, 0).0
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }
}

/// Lowest class id with the maximal count.
pub(crate) fn majority(counts: &[usize]) -> u16 {
    let mut best = 0usize;
    for (c, &n) in counts.iter().enumerate() {
        if n > counts[best] {
            best = c;
        }
    }
    best as u16
}

/// Smallest gain treated as an improvement.
const MIN_GAIN: f64 = 1e-12;

/// Exhaustive Gini split search over `features` for the rows `rows` of
/// `data`.
///
/// Candidate thresholds are midpoints between consecutive distinct values;
/// both children must keep at least `min_leaf` rows. Ties go to the lowest
/// feature index, then the lowest threshold.
pub fn best_split(
    data: &Samples,
    rows: &[u32],
    features: &[usize],
    min_leaf: usize,
) -> Option<Split> {
    let mut scratch = SplitScratch::new(data.n_classes());
    scratch.best_split(data, rows, features, min_leaf)
}

struct SplitScratch {
    pairs: Vec<(f64, u16)>,
    left: Vec<usize>,
    right: Vec<usize>,
}

impl SplitScratch {
    fn new(n_classes: usize) -> Self {
        SplitScratch {
            pairs: Vec::new(),
            left: vec![0; n_classes],
            right: vec![0; n_classes],
        }
    }

    fn best_split(
        &mut self,
        data: &Samples,
        rows: &[u32],
        features: &[usize],
        min_leaf: usize,
    ) -> Option<Split> {
        let n = rows.len();
        let min_leaf = min_leaf.max(1);
        if n < 2 * min_leaf {
            return None;
        }
        let mut parent = vec![0usize; data.n_classes()];
        for &r in rows {
            parent[data.label(r as usize) as usize] += 1;
        }
        let parent_sq: f64 = parent.iter().map(|&c| (c * c) as f64).sum();
        let nf = n as f64;
        let parent_term = parent_sq / (nf * nf);

        let mut sorted: Vec<usize> = features.to_vec();
        sorted.sort_unstable();
        sorted.dedup();

        let mut best: Option<Split> = None;
        for &feature in &sorted {
            self.pairs.clear();
            self.pairs.extend(
                rows.iter()
                    .map(|&r| (data.row(r as usize)[feature], data.label(r as usize))),
            );
            self.pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));

            self.left.iter_mut().for_each(|c| *c = 0);
            self.right.copy_from_slice(&parent);
            // Running Σc² on each side.
            let mut left_sq = 0.0f64;
            let mut right_sq = parent_sq;

            for k in 0..n - 1 {
                let (value, label) = self.pairs[k];
                let c = label as usize;
                left_sq += (2 * self.left[c] + 1) as f64;
                right_sq -= (2 * self.right[c] - 1) as f64;
                self.left[c] += 1;
                self.right[c] -= 1;

                let next = self.pairs[k + 1].0;
                let n_left = k + 1;
                let n_right = n - n_left;
                if next <= value || n_left < min_leaf || n_right < min_leaf {
                    continue;
                }
                let gain = (left_sq / n_left as f64 + right_sq / n_right as f64) / nf - parent_term;
                if gain > MIN_GAIN && best.is_none_or(|b| gain > b.gain) {
                    let mut threshold = value + (next - value) / 2.0;
                    if threshold >= next {
                        threshold = value;
                    }
                    best = Some(Split {
                        feature,
                        threshold,
                        gain,
                    });
                }
            }
        }
        best
    }
}

/// Grows one CART tree on the rows listed in `bootstrap` (duplicates allowed).
pub fn grow_tree<R: Rng>(
    data: &Samples,
    bootstrap: &[u32],
    params: &ForestParams,
    rng: &mut R,
) -> Tree {
    assert!(!bootstrap.is_empty(), "grow_tree needs at least one row");
    let mut builder = Builder {
        data,
        params,
        rng,
        nodes: Vec::new(),
        scratch: SplitScratch::new(data.n_classes()),
        features: (0..data.dim()).collect(),
    };
    let mut rows = bootstrap.to_vec();
    builder.build(&mut rows, 0);
    Tree {
        nodes: builder.nodes,
    }
}

struct Builder<'a, R> {
    data: &'a Samples,
    params: &'a ForestParams,
    rng: &'a mut R,
    nodes: Vec<Node>,
    scratch: SplitScratch,
    features: Vec<usize>,
}

impl<R: Rng> Builder<'_, R> {
    fn build(&mut self, rows: &mut [u32], depth: usize) {
        let mut counts = vec![0usize; self.data.n_classes()];
        for &r in rows.iter() {
            counts[self.data.label(r as usize) as usize] += 1;
        }
        let leaf = Node::Leaf {
            class: majority(&counts),
        };
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        let min_leaf = self.params.min_leaf.max(1);
        if pure || depth >= self.params.max_depth || rows.len() < 2 * min_leaf {
            self.nodes.push(leaf);
            return;
        }

        let subset = self.draw_features();
        let Some(split) = self.scratch.best_split(self.data, rows, &subset, min_leaf) else {
            self.nodes.push(leaf);
            return;
        };

        let mid = partition(rows, |r| {
            self.data.row(r as usize)[split.feature] <= split.threshold
        });
        let at = self.nodes.len();
        self.nodes.push(Node::Split {
            feature: split.feature as u8,
            threshold: split.threshold,
            right: 0,
        });
        let (left, right) = rows.split_at_mut(mid);
        self.build(left, depth + 1);
        let right_at = self.nodes.len() as u32;
        self.build(right, depth + 1);
        if let Node::Split { right, .. } = &mut self.nodes[at] {
            *right = right_at;
        }
    }

    /// Partial Fisher-Yates draw of `mtry` distinct features.
    fn draw_features(&mut self) -> Vec<usize> {
        let dim = self.features.len();
        let mtry = self.params.mtry.clamp(1, dim);
        for i in 0..mtry {
            let j = self.rng.random_range(i..dim);
            self.features.swap(i, j);
        }
        let mut subset = self.features[..mtry].to_vec();
        subset.sort_unstable();
        subset
    }
}

/// Stable-order-agnostic in-place partition; returns the count of rows for
/// which `pred` holds, which end up first.
fn partition(rows: &mut [u32], pred: impl Fn(u32) -> bool) -> usize {
    let mut mid = 0;
    for i in 0..rows.len() {
        if pred(rows[i]) {
            rows.swap(i, mid);
            mid += 1;
        }
    }
    mid
}

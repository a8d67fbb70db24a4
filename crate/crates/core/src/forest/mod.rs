//! Random forest of CART trees with bootstrap aggregation and majority vote.
//!
//! Reproducibility: tree `t` is grown from a `ChaCha8Rng` seeded (via
//! `SeedableRng::seed_from_u64`) with `splitmix64(seed ^ splitmix64(t))`.
//! The bootstrap draws `n` indices with `random_range(0..n)` and each node
//! draws its feature subset by a partial Fisher-Yates shuffle, so a given
//! `(data, params)` pair yields the same forest on every platform and for
//! any number of worker threads.

mod eval;
mod persist;
mod tree;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use eval::{evaluate, ClassScore, Evaluation};
pub use persist::{read_model, write_model, MODEL_MAGIC, MODEL_VERSION};
pub use tree::{best_split, gini, grow_tree, Node, Split, Tree};

use crate::error::{Error, Result};
use crate::fault::{ClassSet, FaultClass};
use crate::features::FeatureMode;

/// Row-major feature matrix with one class id per row.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Samples {
    dim: usize,
    n_classes: usize,
    x: Vec<f64>,
    y: Vec<u16>,
}

impl Samples {
    pub fn new(dim: usize, n_classes: usize) -> Self {
        Samples {
            dim,
            n_classes,
            x: Vec::new(),
            y: Vec::new(),
        }
    }

    pub fn push(&mut self, x: &[f64], y: u16) {
        assert_eq!(x.len(), self.dim, "feature dimension mismatch");
        assert!((y as usize) < self.n_classes, "class id {y} out of range");
        self.x.extend_from_slice(x);
        self.y.push(y);
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> u16 {
        self.y[i]
    }

    pub fn labels(&self) -> &[u16] {
        &self.y
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], u16)> {
        self.x
            .chunks_exact(self.dim.max(1))
            .zip(self.y.iter().copied())
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &y in &self.y {
            counts[y as usize] += 1;
        }
        counts
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features tried at each split.
    pub mtry: usize,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 227,
            max_depth: 64,
            min_leaf: 2,
            mtry: 3,
            seed: 42,
        }
    }
}

impl ForestParams {
    /// The 100-tree configuration used for quick experiments.
    pub fn desk_scale() -> Self {
        ForestParams {
            n_trees: 100,
            ..Default::default()
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::Config("n_trees must be at least 1".into()));
        }
        if self.mtry == 0 || self.mtry > dim {
            return Err(Error::Config(format!(
                "mtry must be in 1..={dim}, got {}",
                self.mtry
            )));
        }
        if self.min_leaf == 0 {
            return Err(Error::Config("min_leaf must be at least 1".into()));
        }
        if self.n_trees > u32::MAX as usize || self.max_depth > u32::MAX as usize {
            return Err(Error::Config("forest parameters out of range".into()));
        }
        Ok(())
    }
}

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the generator for stream `index` under the master `seed`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    trees: Vec<Tree>,
    params: ForestParams,
    classes: ClassSet,
    mode: FeatureMode,
}

impl Forest {
    pub(crate) fn from_parts(
        trees: Vec<Tree>,
        params: ForestParams,
        classes: ClassSet,
        mode: FeatureMode,
    ) -> Self {
        Forest {
            trees,
            params,
            classes,
            mode,
        }
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn params(&self) -> &ForestParams {
        &self.params
    }

    pub fn classes(&self) -> &ClassSet {
        &self.classes
    }

    pub fn feature_mode(&self) -> FeatureMode {
        self.mode
    }

    /// Per-class vote counts for `x`.
    pub fn votes(&self, x: &[f64]) -> Vec<u32> {
        let mut votes = vec![0u32; self.classes.len()];
        for tree in &self.trees {
            votes[tree.predict(x) as usize] += 1;
        }
        votes
    }

    /// Majority vote; ties go to the lowest class id.
    pub fn predict_id(&self, x: &[f64]) -> u16 {
        debug_assert_eq!(x.len(), self.mode.dim());
        let votes = self.votes(x);
        let mut best = 0usize;
        for (c, &v) in votes.iter().enumerate() {
            if v > votes[best] {
                best = c;
            }
        }
        best as u16
    }

    /// `predict_id` for each row of `rows` (row-major, `dim` values per row).
    /// Walks one tree over all rows at a time, which keeps it in cache.
    pub fn predict_batch(&self, rows: &[f64]) -> Vec<u16> {
        let dim = self.mode.dim();
        let n = rows.len() / dim;
        let k = self.classes.len();
        let mut votes = vec![0u32; n * k];
        for tree in &self.trees {
            for (r, x) in rows.chunks_exact(dim).enumerate() {
                votes[r * k + tree.predict(x) as usize] += 1;
            }
        }
        votes
            .chunks_exact(k)
            .map(|v| {
                let mut best = 0usize;
                for (c, &n) in v.iter().enumerate() {
                    if n > v[best] {
                        best = c;
                    }
                }
                best as u16
            })
            .collect()
    }

    pub fn predict(&self, x: &[f64]) -> &FaultClass {
        self.classes
            .get(self.predict_id(x))
            .expect("tree leaves hold valid class ids")
    }

    /// Same trees, restricted to the first `n`. Used for tree-count sweeps.
    pub fn truncated(&self, n: usize) -> Forest {
        let n = n.clamp(1, self.trees.len());
        Forest {
            trees: self.trees[..n].to_vec(),
            params: ForestParams {
                n_trees: n,
                ..self.params
            },
            classes: self.classes.clone(),
            mode: self.mode,
        }
    }
}

/// Trains a forest. Trees are grown in parallel on the current rayon pool;
/// the result does not depend on the pool size.
pub fn train_forest(
    train: &Samples,
    classes: &ClassSet,
    mode: FeatureMode,
    params: &ForestParams,
) -> Result<Forest> {
    if train.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    if train.dim() != mode.dim() {
        return Err(Error::Config(format!(
            "{mode} features have dimension {}, samples have {}",
            mode.dim(),
            train.dim()
        )));
    }
    if train.n_classes() != classes.len() {
        return Err(Error::Config(
            "sample class count does not match the class set".into(),
        ));
    }
    params.validate(train.dim())?;
    if train.len() > u32::MAX as usize {
        return Err(Error::Config("training set too large".into()));
    }
    for (id, &n) in train.class_counts().iter().enumerate() {
        if n == 0 {
            let name = classes.get(id as u16).map(|c| c.name()).unwrap_or_default();
            log::warn!("class {id} ({name}) has no training samples");
        }
    }

    let n = train.len();
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(params.seed, t as u64));
            let bootstrap: Vec<u32> = (0..n).map(|_| rng.random_range(0..n as u32)).collect();
            grow_tree(train, &bootstrap, params, &mut rng)
        })
        .collect();

    Ok(Forest::from_parts(trees, *params, classes.clone(), mode))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fault::FaultSet;

    fn three_classes() -> ClassSet {
        ClassSet::new(["none", "Sa1", "Sa2"].map(|s| s.parse::<FaultSet>().unwrap())).unwrap()
    }

    fn blobs(n: usize, seed: u64) -> Samples {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = Samples::new(3, 3);
        for i in 0..n {
            let c = (i % 3) as u16;
            let centre = c as f64 * 2.0;
            let x = [
                centre + rng.random_range(-1.2..1.2),
                rng.random_range(-1.0..1.0),
                -centre + rng.random_range(-1.2..1.2),
            ];
            s.push(&x, c);
        }
        s
    }

    fn leaf_tree(class: u16) -> Tree {
        Tree::from_nodes(vec![Node::Leaf { class }]).unwrap()
    }

    fn forest_with_votes(votes: &[(u16, usize)]) -> Forest {
        let trees = votes
            .iter()
            .flat_map(|&(c, n)| std::iter::repeat_with(move || leaf_tree(c)).take(n))
            .collect::<Vec<_>>();
        let params = ForestParams {
            n_trees: trees.len(),
            mtry: 1,
            ..Default::default()
        };
        Forest::from_parts(trees, params, three_classes(), FeatureMode::Raw)
    }

    #[test]
    fn unanimous_vote() {
        let f = forest_with_votes(&[(2, 7)]);
        assert_eq!(f.predict_id(&[0.0; 3]), 2);
    }

    #[test]
    fn plurality_vote_against_tally() {
        let f = forest_with_votes(&[(1, 3), (0, 5), (2, 2)]);
        let x = [0.0; 3];
        let tally = f.votes(&x);
        assert_eq!(tally, vec![5, 3, 2]);
        let winner = f.predict_id(&x);
        assert!(tally.iter().all(|&v| tally[winner as usize] >= v));
        assert_eq!(winner, 0);
    }

    #[test]
    fn vote_tie_goes_to_lowest_id() {
        let f = forest_with_votes(&[(2, 5), (1, 5)]);
        assert_eq!(f.predict_id(&[0.0; 3]), 1);
    }

    #[test]
    fn single_tree_forest_equals_tree() {
        let data = blobs(300, 1);
        let params = ForestParams {
            n_trees: 1,
            ..ForestParams::default()
        };
        let f = train_forest(&data, &three_classes(), FeatureMode::Raw, &params).unwrap();
        for (x, _) in data.iter() {
            assert_eq!(f.predict_id(x), f.trees()[0].predict(x));
        }
    }

    #[test]
    fn training_is_deterministic_across_pool_sizes() {
        let data = blobs(400, 2);
        let params = ForestParams {
            n_trees: 12,
            ..ForestParams::default()
        };
        let classes = three_classes();
        let a = train_forest(&data, &classes, FeatureMode::Raw, &params).unwrap();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let b = pool.install(|| train_forest(&data, &classes, FeatureMode::Raw, &params).unwrap());
        assert_eq!(a, b);
        let c = train_forest(
            &data,
            &classes,
            FeatureMode::Raw,
            &ForestParams { seed: 43, ..params },
        )
        .unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn training_errors() {
        let classes = three_classes();
        let empty = Samples::new(3, 3);
        assert!(matches!(
            train_forest(&empty, &classes, FeatureMode::Raw, &ForestParams::default()),
            Err(Error::EmptyTrainingSet)
        ));
        let data = blobs(30, 3);
        assert!(train_forest(
            &data,
            &classes,
            FeatureMode::Transformed,
            &ForestParams::default()
        )
        .is_err());
        let bad = ForestParams {
            mtry: 4,
            ..ForestParams::default()
        };
        assert!(train_forest(&data, &classes, FeatureMode::Raw, &bad).is_err());
    }

    #[test]
    fn forest_beats_chance_on_blobs() {
        let train = blobs(900, 4);
        let test = blobs(300, 5);
        let params = ForestParams {
            n_trees: 25,
            ..ForestParams::default()
        };
        let f = train_forest(&train, &three_classes(), FeatureMode::Raw, &params).unwrap();
        let eval = evaluate(&f, &test).unwrap();
        assert!(eval.overall > 0.8, "{}", eval.overall);
    }
}

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use super::TrainingSet;
use crate::error::{Error, Result};
use crate::seed::{self, tag};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// Smallest number of bootstrap rows allowed in a leaf.
    pub min_leaf: usize,
    /// Candidate features per split; `None` means `max(1, p / 3)`.
    pub max_features: Option<usize>,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 200,
            min_leaf: 5,
            max_features: None,
        }
    }
}

impl ForestConfig {
    fn features_per_split(&self, p: usize) -> usize {
        self.max_features.unwrap_or(p / 3).clamp(1, p.max(1))
    }
}

#[derive(Debug, Clone, Copy)]
enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone)]
struct Tree {
    nodes: Vec<Node>,
    /// Bitset over training rows drawn into this tree's bootstrap sample.
    in_bag: Vec<u64>,
}

impl Tree {
    fn predict(&self, x: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf(v) => return v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    fn contains(&self, row: usize) -> bool {
        self.in_bag[row / 64] & (1 << (row % 64)) != 0
    }
}

/// Bagged regression trees grown on bootstrap samples with variance-reduction splits.
///
/// Tree `k` draws all of its randomness from a stream derived from
/// `(seed, k)`, so the fitted forest does not depend on build order.
#[derive(Debug, Clone)]
pub struct RandomForest {
    trees: Vec<Tree>,
    n_features: usize,
    responses: Vec<f64>,
}

struct Builder<'a> {
    ts: &'a TrainingSet,
    min_leaf: usize,
    mtry: usize,
    pairs: Vec<(f64, f64)>,
    order: Vec<usize>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    score: f64,
}

impl Builder<'_> {
    fn grow<R: Rng>(&mut self, rows: &mut [usize], nodes: &mut Vec<Node>, rng: &mut R) -> usize {
        let at = nodes.len();
        let n = rows.len();
        let ys = self.ts.responses();
        let sum: f64 = rows.iter().map(|&r| ys[r]).sum();
        nodes.push(Node::Leaf(sum / n as f64));
        if n < 2 * self.min_leaf {
            return at;
        }
        let Some(best) = self.best_split(rows, sum, rng) else {
            return at;
        };

        let mut split = 0;
        for i in 0..n {
            if self.ts.row(rows[i])[best.feature] <= best.threshold {
                rows.swap(i, split);
                split += 1;
            }
        }
        let (lo, hi) = rows.split_at_mut(split);
        let left = self.grow(lo, nodes, rng);
        let right = self.grow(hi, nodes, rng);
        nodes[at] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
        };
        at
    }

    /// Scans shuffled features, stopping once `mtry` have been tried and a
    /// valid split exists.
    fn best_split<R: Rng>(&mut self, rows: &[usize], sum: f64, rng: &mut R) -> Option<BestSplit> {
        let n = rows.len();
        let ys = self.ts.responses();
        let parent = sum * sum / n as f64;
        let sum_sq: f64 = rows.iter().map(|&r| ys[r] * ys[r]).sum();
        let tol = 1e-12 * sum_sq.max(f64::MIN_POSITIVE);
        self.order.shuffle(rng);

        let mut best: Option<BestSplit> = None;
        for k in 0..self.order.len() {
            if k >= self.mtry && best.is_some() {
                break;
            }
            let feature = self.order[k];
            self.pairs.clear();
            self.pairs
                .extend(rows.iter().map(|&r| (self.ts.row(r)[feature], ys[r])));
            self.pairs
                .sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

            let mut left = 0.0;
            for i in 0..n - 1 {
                left += self.pairs[i].1;
                let n_left = i + 1;
                if n_left < self.min_leaf || n - n_left < self.min_leaf {
                    continue;
                }
                let (x, next) = (self.pairs[i].0, self.pairs[i + 1].0);
                if x == next {
                    continue;
                }
                let right = sum - left;
                let score =
                    left * left / n_left as f64 + right * right / (n - n_left) as f64 - parent;
                if score > tol && best.as_ref().is_none_or(|b| score > b.score) {
                    best = Some(BestSplit {
                        feature,
                        threshold: x + (next - x) / 2.0,
                        score,
                    });
                }
            }
        }
        best
    }
}

impl RandomForest {
    pub fn fit(cfg: &ForestConfig, ts: &TrainingSet, seed: u64) -> Result<Self> {
        if ts.n_rows() == 0 {
            return Err(Error::EmptyTrainingSet);
        }
        let p = ts.n_features();
        if p == 0 {
            return Err(Error::InvalidConfig("forest needs at least one feature".into()));
        }
        if cfg.n_trees == 0 || cfg.min_leaf == 0 {
            return Err(Error::InvalidConfig(
                "forest needs at least one tree and a positive leaf size".into(),
            ));
        }
        ts.check_finite()?;
        let trees = (0..cfg.n_trees)
            .into_par_iter()
            .map(|k| Self::grow_tree(cfg, ts, seed, k))
            .collect();
        Ok(Self {
            trees,
            n_features: p,
            responses: ts.responses().to_vec(),
        })
    }

    fn grow_tree(cfg: &ForestConfig, ts: &TrainingSet, seed: u64, k: usize) -> Tree {
        let n = ts.n_rows();
        let mut rng = seed::rng(seed, &[tag::TREE, k as u64]);
        let mut rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        let mut in_bag = vec![0u64; n.div_ceil(64)];
        for &r in &rows {
            in_bag[r / 64] |= 1 << (r % 64);
        }
        let mut builder = Builder {
            ts,
            min_leaf: cfg.min_leaf,
            mtry: cfg.features_per_split(ts.n_features()),
            pairs: Vec::with_capacity(n),
            order: (0..ts.n_features()).collect(),
        };
        let mut nodes = Vec::new();
        builder.grow(&mut rows, &mut nodes, &mut rng);
        Tree { nodes, in_bag }
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub(crate) fn predict_unchecked(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64
    }

    /// Averages only the trees whose bootstrap sample missed every row in
    /// `rows`. With no such tree the mean response of the remaining rows is
    /// returned, so the result never depends on `rows`' responses. NaN if
    /// `rows` covers the whole training set.
    pub fn predict_out_of_bag(&self, x: &[f64], rows: &[usize]) -> Result<f64> {
        if x.len() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                got: x.len(),
            });
        }
        let (mut sum, mut count) = (0.0, 0usize);
        for tree in &self.trees {
            if rows.iter().all(|&r| !tree.contains(r)) {
                sum += tree.predict(x);
                count += 1;
            }
        }
        if count > 0 {
            return Ok(sum / count as f64);
        }
        let rest: Vec<f64> = (0..self.responses.len())
            .filter(|r| !rows.contains(r))
            .map(|r| self.responses[r])
            .collect();
        if rest.is_empty() {
            return Ok(f64::NAN);
        }
        Ok(rest.iter().sum::<f64>() / rest.len() as f64)
    }
}

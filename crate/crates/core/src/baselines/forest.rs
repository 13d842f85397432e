use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// `None` grows until leaves are pure or too small.
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    /// Features tried per split; `None` means `⌈p/3⌉`.
    pub max_features: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 50,
            max_depth: Some(10),
            min_leaf: 2,
            max_features: None,
            bootstrap: true,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf { value: f64 },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

/// Binary regression tree; node 0 is the root. Rows with
/// `x[feature] <= threshold` go left.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<Node>,
}

impl RegressionTree {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split { feature, threshold, left, right } => {
                    i = if row[feature] <= threshold { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<RegressionTree>,
}

impl ForestModel {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict_row(row)).sum::<f64>() / self.trees.len() as f64
    }
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [f64],
    config: &'a ForestConfig,
    features: usize,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    fn mean(&self, rows: &[usize]) -> f64 {
        rows.iter().map(|&i| self.y[i]).sum::<f64>() / rows.len() as f64
    }

    fn grow(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let id = self.nodes.len();
        let value = self.mean(&rows);
        self.nodes.push(Node::Leaf { value });
        let depth_ok = self.config.max_depth.is_none_or(|d| depth < d);
        if !depth_ok || rows.len() < 2 * self.config.min_leaf {
            return id;
        }
        let Some((feature, threshold)) = self.best_split(&rows) else {
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| self.x[i][feature] <= threshold);
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.nodes[id] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }

    /// Largest variance reduction over a random feature subset; ties go to
    /// the lowest feature index, then the lowest threshold.
    fn best_split(&mut self, rows: &[usize]) -> Option<(usize, f64)> {
        let p = self.x[0].len();
        let mut candidates: Vec<usize> = if self.features >= p {
            (0..p).collect()
        } else {
            sample(&mut self.rng, p, self.features).into_vec()
        };
        candidates.sort_unstable();
        let n = rows.len() as f64;
        let total: f64 = rows.iter().map(|&i| self.y[i]).sum();
        let parent = total * total / n;
        let min_leaf = self.config.min_leaf.max(1);
        let mut best: Option<(f64, usize, f64)> = None;
        let mut order: Vec<(f64, f64)> = Vec::with_capacity(rows.len());
        for f in candidates {
            order.clear();
            order.extend(rows.iter().map(|&i| (self.x[i][f], self.y[i])));
            order.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left_sum = 0.0;
            for k in 0..order.len() - 1 {
                left_sum += order[k].1;
                let nl = k + 1;
                if order[k].0 == order[k + 1].0 || nl < min_leaf || order.len() - nl < min_leaf {
                    continue;
                }
                let right_sum = total - left_sum;
                let nr = (order.len() - nl) as f64;
                let gain = left_sum * left_sum / nl as f64 + right_sum * right_sum / nr - parent;
                let threshold = 0.5 * (order[k].0 + order[k + 1].0);
                if gain > 1e-12 * (1.0 + parent.abs()) && best.is_none_or(|(g, _, _)| gain > g) {
                    best = Some((gain, f, threshold));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }
}

fn tree_seed(seed: u64, tree: usize) -> u64 {
    seed ^ (tree as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Bagged CART regression trees with per-tree seeds derived from `seed`.
pub fn fit_random_forest(x: &[Vec<f64>], y: &[f64], config: &ForestConfig) -> ForestModel {
    let n = y.len();
    assert!(n >= 2, "random forest needs at least two samples");
    assert_eq!(x.len(), n, "row count mismatch");
    assert!(config.n_trees > 0, "forest needs at least one tree");
    let p = x[0].len();
    let features = config.max_features.unwrap_or(p.div_ceil(3)).clamp(1, p);
    let trees = (0..config.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(tree_seed(config.seed, t));
            let rows: Vec<usize> = if config.bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            let mut b = Builder {
                x,
                y,
                config,
                features,
                rng,
                nodes: Vec::new(),
            };
            b.grow(rows, 0);
            RegressionTree { nodes: b.nodes }
        })
        .collect();
    ForestModel { trees }
}

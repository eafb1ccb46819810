use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::check_training_set;
use crate::error::{Error, Result};
use crate::types::{Label, LogitPair};

/// Leaf frequencies are clamped to `[LEAF_EPSILON, 1 - LEAF_EPSILON]` before the log.
pub const LEAF_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    /// Features tried per split; `None` means `ceil(sqrt(d))`.
    pub max_features: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 100,
            max_depth: 8,
            max_features: None,
            bootstrap: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    /// (human, bot) training counts reaching this leaf.
    Leaf { counts: [u32; 2] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf_counts(&self, x: &[f64]) -> [u32; 2] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { counts } => return *counts,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    /// (feature, threshold) of every split in node order.
    pub fn splits(&self) -> Vec<(usize, f64)> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Split { feature, threshold, .. } => Some((*feature, *threshold)),
                Node::Leaf { .. } => None,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<Tree>,
    pub n_features: usize,
    pub config: ForestConfig,
}

impl ForestModel {
    /// Mean over trees of the leaf bot frequency.
    pub fn bot_frequency(&self, x: &[f64]) -> f64 {
        let sum: f64 = self
            .trees
            .iter()
            .map(|t| {
                let c = t.leaf_counts(x);
                c[1] as f64 / (c[0] + c[1]) as f64
            })
            .sum();
        sum / self.trees.len() as f64
    }

    pub fn predict(&self, x: &[f64]) -> Result<LogitPair> {
        if x.len() != self.n_features {
            return Err(Error::dim(self.n_features, x.len()));
        }
        let bot = self.bot_frequency(x).clamp(LEAF_EPSILON, 1.0 - LEAF_EPSILON);
        Ok(LogitPair::new((1.0 - bot).ln(), bot.ln()))
    }
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [Label],
    max_depth: usize,
    max_features: usize,
    nodes: Vec<Node>,
}

fn gini(c: [usize; 2]) -> f64 {
    let n = (c[0] + c[1]) as f64;
    if n == 0.0 {
        return 0.0;
    }
    let p = c[1] as f64 / n;
    2.0 * p * (1.0 - p)
}

impl Builder<'_> {
    fn counts(&self, idx: &[usize]) -> [usize; 2] {
        let mut c = [0usize; 2];
        for &i in idx {
            c[self.y[i].index()] += 1;
        }
        c
    }

    /// Best (feature, threshold) by Gini decrease; ties keep the earliest
    /// feature in ascending order, then the lowest threshold.
    fn best_split(&self, idx: &[usize], features: &[usize]) -> Option<(usize, f64)> {
        let total = self.counts(idx);
        let n = idx.len() as f64;
        let parent = gini(total);
        let mut best: Option<(f64, usize, f64)> = None;
        let mut column: Vec<(f64, usize)> = Vec::with_capacity(idx.len());
        for &f in features {
            column.clear();
            column.extend(idx.iter().map(|&i| (self.x[i][f], self.y[i].index())));
            column.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left = [0usize; 2];
            for k in 0..column.len() - 1 {
                left[column[k].1] += 1;
                let (v, next) = (column[k].0, column[k + 1].0);
                if v == next {
                    continue;
                }
                let right = [total[0] - left[0], total[1] - left[1]];
                let nl = (left[0] + left[1]) as f64;
                let child = (nl * gini(left) + (n - nl) * gini(right)) / n;
                let gain = parent - child;
                if gain > 0.0 && best.is_none_or(|(g, _, _)| gain > g) {
                    best = Some((gain, f, v + (next - v) / 2.0));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }

    fn grow(&mut self, idx: Vec<usize>, depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let counts = self.counts(&idx);
        let leaf = Node::Leaf {
            counts: [counts[0] as u32, counts[1] as u32],
        };
        let id = self.nodes.len();
        self.nodes.push(leaf);
        if depth >= self.max_depth || counts[0] == 0 || counts[1] == 0 {
            return id;
        }
        let d = self.x[0].len();
        let mut features = sample(rng, d, self.max_features).into_vec();
        features.sort_unstable();
        let Some((feature, threshold)) = self.best_split(&idx, &features) else {
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| self.x[i][feature] <= threshold);
        let left = self.grow(l, depth + 1, rng);
        let right = self.grow(r, depth + 1, rng);
        self.nodes[id] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }
}

pub fn train_forest(x: &[Vec<f64>], y: &[Label], config: &ForestConfig) -> Result<ForestModel> {
    let d = check_training_set(x, y)?;
    if config.n_trees == 0 {
        return Err(Error::Config("forest needs at least one tree".into()));
    }
    let max_features = config
        .max_features
        .unwrap_or_else(|| (d as f64).sqrt().ceil() as usize)
        .clamp(1, d);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = x.len();
    let trees = (0..config.n_trees)
        .map(|_| {
            let mut tree_rng = ChaCha8Rng::seed_from_u64(rng.random());
            let idx: Vec<usize> = if config.bootstrap {
                (0..n).map(|_| tree_rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            let mut b = Builder {
                x,
                y,
                max_depth: config.max_depth,
                max_features,
                nodes: Vec::new(),
            };
            b.grow(idx, 0, &mut tree_rng);
            Tree { nodes: b.nodes }
        })
        .collect();
    Ok(ForestModel {
        trees,
        n_features: d,
        config: config.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use Label::{Bot, Human};

    fn cfg(n_trees: usize, max_depth: usize) -> ForestConfig {
        ForestConfig {
            n_trees,
            max_depth,
            max_features: None,
            bootstrap: true,
            seed: 1,
        }
    }

    #[test]
    fn separable_points_fit_perfectly() {
        let x = vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]];
        let y = vec![Human, Human, Bot, Bot];
        let mut c = cfg(10, 2);
        c.bootstrap = false;
        let m = train_forest(&x, &y, &c).unwrap();
        for (xi, yi) in x.iter().zip(&y) {
            assert_eq!(m.predict(xi).unwrap().argmax(), *yi);
        }
    }

    #[test]
    fn depth_zero_predicts_prior() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let y: Vec<Label> = (0..10).map(|i| if i < 3 { Bot } else { Human }).collect();
        let mut c = cfg(5, 0);
        c.bootstrap = false;
        let m = train_forest(&x, &y, &c).unwrap();
        for t in &m.trees {
            assert_eq!(t.nodes, vec![Node::Leaf { counts: [7, 3] }]);
        }
        let p = m.predict(&[100.0]).unwrap().softmax();
        assert!((p.bot() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn conflicting_duplicates_give_label_frequency() {
        let x = vec![vec![1.0]; 4];
        let y = vec![Bot, Human, Bot, Bot];
        let mut c = cfg(3, 5);
        c.bootstrap = false;
        let m = train_forest(&x, &y, &c).unwrap();
        assert!((m.predict(&[1.0]).unwrap().softmax().bot() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn unanimous_and_split_votes() {
        let pure = Tree {
            nodes: vec![Node::Leaf { counts: [0, 4] }],
        };
        let human = Tree {
            nodes: vec![Node::Leaf { counts: [3, 0] }],
        };
        let m = ForestModel {
            trees: vec![pure.clone(), pure.clone()],
            n_features: 1,
            config: cfg(2, 1),
        };
        let p = m.predict(&[0.0]).unwrap().softmax();
        assert!(p.bot() > 0.999 && p.bot() < 1.0);
        assert!((p.human() - LEAF_EPSILON).abs() < 1e-12);
        let m = ForestModel {
            trees: vec![pure, human],
            ..m
        };
        let p = m.predict(&[0.0]).unwrap().softmax();
        assert_eq!(p.0, [0.5, 0.5]);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            train_forest(&[vec![0.0], vec![1.0]], &[Bot, Bot], &cfg(1, 1)),
            Err(Error::SingleClass)
        ));
        let m = train_forest(&[vec![0.0], vec![1.0]], &[Bot, Human], &cfg(1, 1)).unwrap();
        assert!(matches!(m.predict(&[0.0, 1.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn leaf_histograms_sum_to_sample_count() {
        let x: Vec<Vec<f64>> = (0..40).map(|i| vec![(i * 7 % 13) as f64, (i % 5) as f64]).collect();
        let y: Vec<Label> = (0..40).map(|i| if (i * 7 % 13) > 6 { Bot } else { Human }).collect();
        let m = train_forest(&x, &y, &cfg(4, 3)).unwrap();
        for t in &m.trees {
            let total: u32 = t
                .nodes
                .iter()
                .map(|n| match n {
                    Node::Leaf { counts } => counts[0] + counts[1],
                    _ => 0,
                })
                .sum();
            assert_eq!(total, 40);
        }
    }
}

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::baselines::{argmax, check_dim, splitmix64};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub enum TreeNode {
    Leaf {
        label: usize,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// A CART classification tree with axis-aligned Gini splits.
#[derive(Debug, Clone)]
pub struct DecisionTree {
    pub nodes: Vec<TreeNode>,
}

impl DecisionTree {
    pub fn predict(&self, features: &[f64]) -> usize {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                TreeNode::Leaf { label } => return *label,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if features[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct RandomForestModel {
    pub trees: Vec<DecisionTree>,
    pub num_classes: usize,
    pub dim: usize,
    /// Features examined per split (√dim by default).
    pub feature_subsample: usize,
}

impl RandomForestModel {
    /// Majority vote over the trees; ties go to the lower label.
    pub fn predict(&self, features: &[f64]) -> Result<usize> {
        check_dim(self.dim, features.len())?;
        let mut votes = vec![0.0; self.num_classes];
        for tree in &self.trees {
            votes[tree.predict(features)] += 1.0;
        }
        Ok(argmax(&votes))
    }
}

pub(crate) fn gini(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let total = total as f64;
    1.0 - counts
        .iter()
        .map(|&c| {
            let p = c as f64 / total;
            p * p
        })
        .sum::<f64>()
}

fn majority(labels: &[usize], indices: &[usize], num_classes: usize) -> usize {
    let mut counts = vec![0.0; num_classes];
    for &i in indices {
        counts[labels[i]] += 1.0;
    }
    argmax(&counts)
}

struct TreeBuilder<'a> {
    features: &'a [Vec<f64>],
    labels: &'a [usize],
    num_classes: usize,
    max_depth: usize,
    feature_subsample: usize,
    nodes: Vec<TreeNode>,
}

impl TreeBuilder<'_> {
    fn build(&mut self, indices: &[usize], depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let first = self.labels[indices[0]];
        let pure = indices.iter().all(|&i| self.labels[i] == first);
        if pure || depth >= self.max_depth || indices.len() < 2 {
            let label = majority(self.labels, indices, self.num_classes);
            self.nodes.push(TreeNode::Leaf { label });
            return self.nodes.len() - 1;
        }

        let dim = self.features[0].len();
        let mut candidates: Vec<usize> = (0..dim).collect();
        candidates.shuffle(rng);
        candidates.truncate(self.feature_subsample);
        candidates.sort_unstable(); // deterministic evaluation order

        let parent_counts = {
            let mut c = vec![0usize; self.num_classes];
            for &i in indices {
                c[self.labels[i]] += 1;
            }
            c
        };
        let parent_gini = gini(&parent_counts);
        let mut best: Option<(f64, usize, f64)> = None; // (impurity, feature, threshold)

        for &f in &candidates {
            let mut order: Vec<usize> = indices.to_vec();
            order.sort_by(|&a, &b| {
                self.features[a][f]
                    .partial_cmp(&self.features[b][f])
                    .unwrap()
                    .then(a.cmp(&b))
            });
            let mut left = vec![0usize; self.num_classes];
            let mut right = parent_counts.clone();
            for w in 0..order.len() - 1 {
                let i = order[w];
                left[self.labels[i]] += 1;
                right[self.labels[i]] -= 1;
                let (va, vb) = (self.features[i][f], self.features[order[w + 1]][f]);
                if va == vb {
                    continue;
                }
                let n_left = (w + 1) as f64;
                let n_right = (order.len() - w - 1) as f64;
                let n = order.len() as f64;
                let impurity = (n_left * gini(&left) + n_right * gini(&right)) / n;
                let threshold = va + (vb - va) / 2.0;
                let better = match best {
                    None => impurity < parent_gini - 1e-12,
                    Some((b, _, _)) => impurity < b - 1e-12,
                };
                if better {
                    best = Some((impurity, f, threshold));
                }
            }
        }

        let Some((_, feature, threshold)) = best else {
            let label = majority(self.labels, indices, self.num_classes);
            self.nodes.push(TreeNode::Leaf { label });
            return self.nodes.len() - 1;
        };

        let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = indices
            .iter()
            .partition(|&&i| self.features[i][feature] <= threshold);
        let slot = self.nodes.len();
        self.nodes.push(TreeNode::Leaf { label: 0 }); // placeholder
        let left = self.build(&left_idx, depth + 1, rng);
        let right = self.build(&right_idx, depth + 1, rng);
        self.nodes[slot] = TreeNode::Split {
            feature,
            threshold,
            left,
            right,
        };
        slot
    }
}

fn train_tree(
    features: &[Vec<f64>],
    labels: &[usize],
    num_classes: usize,
    max_depth: usize,
    feature_subsample: usize,
    bootstrap: bool,
    seed: u64,
) -> DecisionTree {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = features.len();
    let indices: Vec<usize> = if bootstrap {
        (0..n).map(|_| rng.gen_range(0..n)).collect()
    } else {
        (0..n).collect()
    };
    let mut builder = TreeBuilder {
        features,
        labels,
        num_classes,
        max_depth,
        feature_subsample,
        nodes: Vec::new(),
    };
    builder.build(&indices, 0, &mut rng);
    DecisionTree {
        nodes: builder.nodes,
    }
}

/// Bootstrap-sampled CART ensemble with Gini splits and √dim feature
/// subsampling. Per-tree seeds derive from `seed` via splitmix64, so the
/// result is independent of training order.
pub fn rf_train(
    features: &[Vec<f64>],
    labels: &[usize],
    num_classes: usize,
    num_trees: usize,
    max_depth: usize,
    seed: u64,
) -> Result<RandomForestModel> {
    if features.is_empty() || features.len() != labels.len() {
        return Err(Error::contract("rf_train: empty or mismatched dataset"));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
        return Err(Error::contract(format!("label {bad} out of range")));
    }
    let dim = features[0].len();
    let feature_subsample = ((dim as f64).sqrt().round() as usize).clamp(1, dim);
    let trees: Vec<DecisionTree> = (0..num_trees)
        .map(|t| {
            train_tree(
                features,
                labels,
                num_classes,
                max_depth,
                feature_subsample,
                num_trees > 1,
                splitmix64(seed ^ (t as u64)),
            )
        })
        .collect();
    Ok(RandomForestModel {
        trees,
        num_classes,
        dim,
        feature_subsample,
    })
}

use std::cmp::Ordering;

use rand::Rng;

use super::{feature_order, ForestParams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Node {
    /// Samples with `x[feature] <= threshold` go left.
    Split {
        feature: u32,
        threshold: f64,
        left: u32,
        right: u32,
    },
    Leaf {
        positive_fraction: f64,
    },
}

/// CART tree with Gini splits. Node 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
    pub max_depth: usize,
    /// Sample-weighted Gini decrease credited to each feature.
    pub importance: Vec<f64>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    decrease: f64,
}

fn gini(pos: usize, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let p = pos as f64 / n as f64;
    2.0 * p * (1.0 - p)
}

impl DecisionTree {
    pub(crate) fn fit<R: Rng>(
        x: &[Vec<f64>],
        y: &[bool],
        sample: &[usize],
        mtry: usize,
        params: &ForestParams,
        rng: &mut R,
    ) -> Self {
        let mut tree = DecisionTree {
            nodes: Vec::new(),
            max_depth: params.max_depth,
            importance: vec![0.0; x[0].len()],
        };
        tree.grow(x, y, sample.to_vec(), 0, mtry, params, rng);
        tree
    }

    #[allow(clippy::too_many_arguments)]
    fn grow<R: Rng>(
        &mut self,
        x: &[Vec<f64>],
        y: &[bool],
        idx: Vec<usize>,
        depth: usize,
        mtry: usize,
        params: &ForestParams,
        rng: &mut R,
    ) -> u32 {
        let id = self.nodes.len() as u32;
        let pos = idx.iter().filter(|&&i| y[i]).count();
        let leaf = Node::Leaf {
            positive_fraction: pos as f64 / idx.len() as f64,
        };
        self.nodes.push(leaf);

        let pure = pos == 0 || pos == idx.len();
        if pure || depth >= params.max_depth || idx.len() < 2 * params.min_leaf.max(1) {
            return id;
        }
        let Some(split) = best_split(x, y, &idx, pos, mtry, params.min_leaf.max(1), rng) else {
            return id;
        };
        self.importance[split.feature] += split.decrease;
        let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = idx
            .iter()
            .partition(|&&i| x[i][split.feature] <= split.threshold);
        let left = self.grow(x, y, left_idx, depth + 1, mtry, params, rng);
        let right = self.grow(x, y, right_idx, depth + 1, mtry, params, rng);
        self.nodes[id as usize] = Node::Split {
            feature: split.feature as u32,
            threshold: split.threshold,
            left,
            right,
        };
        id
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut k = 0usize;
        loop {
            match self.nodes[k] {
                Node::Leaf { positive_fraction } => return positive_fraction,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    k = if x[feature as usize] <= threshold {
                        left as usize
                    } else {
                        right as usize
                    };
                }
            }
        }
    }

    /// Weighted Gini decrease per feature accumulated while growing.
    pub fn impurity_decrease(&self) -> &[f64] {
        &self.importance
    }
}

fn best_split<R: Rng>(
    x: &[Vec<f64>],
    y: &[bool],
    idx: &[usize],
    pos_total: usize,
    mtry: usize,
    min_leaf: usize,
    rng: &mut R,
) -> Option<BestSplit> {
    let n = idx.len();
    let parent = gini(pos_total, n) * n as f64;
    let mut best: Option<BestSplit> = None;
    let mut column: Vec<(f64, bool)> = Vec::with_capacity(n);

    for (tried, feature) in feature_order(rng, x[0].len()).into_iter().enumerate() {
        if tried >= mtry && best.is_some() {
            break;
        }
        column.clear();
        column.extend(idx.iter().map(|&i| (x[i][feature], y[i])));
        column.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal));

        let mut left_pos = 0usize;
        for k in 0..n - 1 {
            left_pos += column[k].1 as usize;
            let (a, b) = (column[k].0, column[k + 1].0);
            if a == b {
                continue;
            }
            let nl = k + 1;
            let nr = n - nl;
            if nl < min_leaf || nr < min_leaf {
                continue;
            }
            let child = gini(left_pos, nl) * nl as f64 + gini(pos_total - left_pos, nr) * nr as f64;
            let decrease = parent - child;
            if decrease > 1e-12 && best.as_ref().is_none_or(|bs| decrease > bs.decrease) {
                let mid = a + (b - a) / 2.0;
                best = Some(BestSplit {
                    feature,
                    threshold: if mid < b { mid } else { a },
                    decrease,
                });
            }
        }
    }
    best
}

//! Random forest over shared feature vectors with soft (leaf-fraction) votes.

mod io;
mod tree;

pub use tree::{DecisionTree, Node};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::rng_for;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Candidate features per split; `None` means `ceil(sqrt(d))`.
    pub max_features: Option<usize>,
    /// Draw each bootstrap half from each class.
    pub class_balance: bool,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: 12,
            min_leaf: 2,
            max_features: None,
            class_balance: true,
            seed: 0,
        }
    }
}

impl ForestParams {
    fn candidates(&self, n_features: usize) -> usize {
        self.max_features
            .unwrap_or_else(|| (n_features as f64).sqrt().ceil() as usize)
            .clamp(1, n_features)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    pub trees: Vec<DecisionTree>,
    pub n_features: usize,
    pub feature_names: Vec<String>,
    pub seed: u64,
    /// Out-of-bag misclassification rate at the 0.5 boundary.
    pub oob_error: Option<f64>,
}

/// Label, positive-class probability and `max(p, 1 - p)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub probability: f64,
    pub positive: bool,
    pub confidence: f64,
}

impl Prediction {
    pub fn from_probability(p: f64) -> Self {
        Self {
            probability: p,
            positive: p >= 0.5,
            confidence: p.max(1.0 - p),
        }
    }
}

pub fn train_forest(
    x: &[Vec<f64>],
    y: &[bool],
    feature_names: &[String],
    params: &ForestParams,
) -> Result<ForestModel> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("{} rows but {} labels", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::MissingData("forest needs at least two samples".into()));
    }
    if params.n_trees == 0 {
        return Err(Error::Config("forest needs at least one tree".into()));
    }
    let n_features = x[0].len();
    if n_features == 0 || x.iter().any(|r| r.len() != n_features) {
        return Err(Error::Shape("ragged or empty feature rows".into()));
    }
    if feature_names.len() != n_features {
        return Err(Error::Shape(format!(
            "{} feature names for {n_features} features",
            feature_names.len()
        )));
    }
    let positives: Vec<usize> = (0..y.len()).filter(|&i| y[i]).collect();
    let negatives: Vec<usize> = (0..y.len()).filter(|&i| !y[i]).collect();
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::DegenerateLabels(format!(
            "{} positive and {} negative samples",
            positives.len(),
            negatives.len()
        )));
    }

    let mtry = params.candidates(n_features);
    let fitted: Vec<(DecisionTree, Vec<usize>)> = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng_for(params.seed, &format!("tree-{t}"));
            let sample = bootstrap(&mut rng, y.len(), &positives, &negatives, params.class_balance);
            let tree = DecisionTree::fit(x, y, &sample, mtry, params, &mut rng);
            (tree, sample)
        })
        .collect();

    let oob_error = out_of_bag_error(x, y, &fitted);
    Ok(ForestModel {
        trees: fitted.into_iter().map(|(t, _)| t).collect(),
        n_features,
        feature_names: feature_names.to_vec(),
        seed: params.seed,
        oob_error,
    })
}

fn bootstrap<R: Rng>(
    rng: &mut R,
    n: usize,
    positives: &[usize],
    negatives: &[usize],
    balance: bool,
) -> Vec<usize> {
    if balance {
        let half = n / 2;
        let mut s: Vec<usize> = (0..half)
            .map(|_| positives[rng.random_range(0..positives.len())])
            .collect();
        s.extend((half..n).map(|_| negatives[rng.random_range(0..negatives.len())]));
        s
    } else {
        (0..n).map(|_| rng.random_range(0..n)).collect()
    }
}

fn out_of_bag_error(x: &[Vec<f64>], y: &[bool], fitted: &[(DecisionTree, Vec<usize>)]) -> Option<f64> {
    let n = y.len();
    let mut sum = vec![0.0; n];
    let mut votes = vec![0usize; n];
    for (tree, sample) in fitted {
        let mut in_bag = vec![false; n];
        for &i in sample {
            in_bag[i] = true;
        }
        for i in (0..n).filter(|&i| !in_bag[i]) {
            sum[i] += tree.predict(&x[i]);
            votes[i] += 1;
        }
    }
    let scored: Vec<usize> = (0..n).filter(|&i| votes[i] > 0).collect();
    if scored.is_empty() {
        return None;
    }
    let wrong = scored
        .iter()
        .filter(|&&i| (sum[i] / votes[i] as f64 >= 0.5) != y[i])
        .count();
    Some(wrong as f64 / scored.len() as f64)
}

impl ForestModel {
    /// Mean leaf positive fraction over all trees.
    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n_features {
            return Err(Error::Shape(format!(
                "expected {} features, got {}",
                self.n_features,
                x.len()
            )));
        }
        let total: f64 = self.trees.iter().map(|t| t.predict(x)).sum();
        Ok(total / self.trees.len() as f64)
    }

    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        self.predict_proba(x).map(Prediction::from_probability)
    }

    /// Mean impurity decrease per feature, normalized to sum to 1. All zeros
    /// when no tree ever split.
    pub fn feature_importances(&self) -> Vec<f64> {
        let mut total = vec![0.0; self.n_features];
        for tree in &self.trees {
            let imp = tree.impurity_decrease();
            let s: f64 = imp.iter().sum();
            if s > 0.0 {
                for (t, &v) in total.iter_mut().zip(imp) {
                    *t += v / s;
                }
            }
        }
        let s: f64 = total.iter().sum();
        if s > 0.0 {
            total.iter_mut().for_each(|v| *v /= s);
        }
        total
    }
}

/// Picks the candidate features for one split: a random order over all
/// features, of which the first `mtry` are always examined.
pub(crate) fn feature_order<R: Rng>(rng: &mut R, n_features: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n_features).collect();
    order.shuffle(rng);
    order
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(d: usize) -> Vec<String> {
        (0..d).map(|i| format!("f{i}")).collect()
    }

    fn separable() -> (Vec<Vec<f64>>, Vec<bool>) {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..40 {
            let mut pos = vec![0.5; 15];
            pos[0] = 101.0 + i as f64 * 3.0;
            pos[3] = (i % 5) as f64;
            x.push(pos);
            y.push(true);
            let mut neg = vec![0.5; 15];
            neg[0] = (i % 10) as f64;
            neg[3] = (i % 7) as f64;
            x.push(neg);
            y.push(false);
        }
        (x, y)
    }

    #[test]
    fn separable_training_accuracy_is_perfect() {
        let (x, y) = separable();
        let m = train_forest(&x, &y, &names(15), &ForestParams { seed: 3, ..Default::default() }).unwrap();
        for (xi, &yi) in x.iter().zip(&y) {
            let p = m.predict(xi).unwrap();
            assert_eq!(p.positive, yi);
            assert!(p.confidence >= 0.5);
        }
        assert_eq!(m.trees.len(), 100);
        assert_eq!(m.oob_error, Some(0.0));
    }

    #[test]
    fn duplicated_points_give_pure_leaves() {
        let x: Vec<Vec<f64>> = (0..100).map(|i| vec![if i < 50 { 1.0 } else { 2.0 }; 15]).collect();
        let y: Vec<bool> = (0..100).map(|i| i < 50).collect();
        let m = train_forest(&x, &y, &names(15), &ForestParams::default()).unwrap();
        for t in &m.trees {
            for n in &t.nodes {
                if let Node::Leaf { positive_fraction } = n {
                    assert!(*positive_fraction == 0.0 || *positive_fraction == 1.0);
                }
            }
        }
    }

    #[test]
    fn fixed_seed_is_bitwise_reproducible() {
        let (x, y) = separable();
        let p = ForestParams { seed: 11, n_trees: 20, ..Default::default() };
        let a = train_forest(&x, &y, &names(15), &p).unwrap();
        let b = train_forest(&x, &y, &names(15), &p).unwrap();
        assert_eq!(a.to_bytes().unwrap(), b.to_bytes().unwrap());
        let c = train_forest(&x, &y, &names(15), &ForestParams { seed: 12, ..p }).unwrap();
        assert_ne!(a.to_bytes().unwrap(), c.to_bytes().unwrap());
    }

    #[test]
    fn single_class_is_rejected() {
        let x = vec![vec![1.0; 15]; 4];
        assert!(matches!(
            train_forest(&x, &[true; 4], &names(15), &ForestParams::default()),
            Err(Error::DegenerateLabels(_))
        ));
    }

    #[test]
    fn dimension_mismatch_on_predict() {
        let (x, y) = separable();
        let m = train_forest(&x, &y, &names(15), &ForestParams { n_trees: 3, ..Default::default() }).unwrap();
        assert!(matches!(m.predict_proba(&[1.0; 14]), Err(Error::Shape(_))));
    }

    fn stump(fraction_left: f64, fraction_right: f64) -> DecisionTree {
        DecisionTree {
            nodes: vec![
                Node::Split { feature: 0, threshold: 0.5, left: 1, right: 2 },
                Node::Leaf { positive_fraction: fraction_left },
                Node::Leaf { positive_fraction: fraction_right },
            ],
            max_depth: 1,
            importance: vec![0.0],
        }
    }

    #[test]
    fn soft_vote_averaging() {
        let mut trees: Vec<DecisionTree> = (0..60).map(|_| stump(1.0, 1.0)).collect();
        trees.extend((0..40).map(|_| stump(0.0, 0.0)));
        let m = ForestModel { trees, n_features: 1, feature_names: names(1), seed: 0, oob_error: None };
        assert!((m.predict_proba(&[0.0]).unwrap() - 0.6).abs() < 1e-12);

        let unanimous = ForestModel {
            trees: (0..100).map(|_| stump(1.0, 0.0)).collect(),
            ..m.clone()
        };
        assert_eq!(unanimous.predict_proba(&[0.0]).unwrap(), 1.0);
        assert_eq!(unanimous.predict_proba(&[1.0]).unwrap(), 0.0);
    }

    #[test]
    fn importances_sum_to_one() {
        let (x, y) = separable();
        let m = train_forest(&x, &y, &names(15), &ForestParams { n_trees: 30, ..Default::default() }).unwrap();
        let imp = m.feature_importances();
        assert!((imp.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(imp.iter().all(|&v| v >= 0.0));
        assert!(imp[0] > 0.5);
    }

    #[test]
    fn balanced_bootstrap_halves() {
        let mut rng = rng_for(1, "b");
        let s = bootstrap(&mut rng, 10, &[0, 1], &[2, 3, 4, 5, 6, 7, 8, 9], true);
        assert_eq!(s.len(), 10);
        assert!(s[..5].iter().all(|&i| i < 2));
        assert!(s[5..].iter().all(|&i| i >= 2));
    }
}

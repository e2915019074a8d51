use std::cmp::Ordering;

use crate::error::{Error, Result};

fn check_scores(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.is_empty() {
        return Err(Error::MissingData("no scores to evaluate".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::MissingData("NaN score".into()));
    }
    Ok(())
}

/// Rank-based area under the ROC curve; tied positive/negative pairs count
/// one half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_scores(scores, labels)?;
    let n_pos = labels.iter().filter(|&&y| y).count() as u64;
    let n_neg = labels.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::DegenerateLabels(format!(
            "AUC needs both classes, got {n_pos} positive and {n_neg} negative"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the number of concordant pairs plus ties, kept integral.
    let mut doubled: u64 = 0;
    let mut neg_below: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let pos_here = order[i..j].iter().filter(|&&k| labels[k]).count() as u64;
        let neg_here = (j - i) as u64 - pos_here;
        doubled += pos_here * (2 * neg_below + neg_here);
        neg_below += neg_here;
        i = j;
    }
    Ok(doubled as f64 / (2 * n_pos * n_neg) as f64)
}

/// Fraction of cars whose `score ≥ boundary` prediction matches the label.
pub fn accuracy(scores: &[f64], labels: &[bool], boundary: f64) -> Result<f64> {
    check_scores(scores, labels)?;
    let correct = scores
        .iter()
        .zip(labels)
        .filter(|&(&s, &y)| (s >= boundary) == y)
        .count();
    Ok(correct as f64 / scores.len() as f64)
}

/// Number of cars in the top `k_percent`: `ceil(k · N / 100)`.
pub fn top_k_count(n: usize, k_percent: f64) -> Result<usize> {
    if !(k_percent > 0.0 && k_percent <= 100.0) {
        return Err(Error::Config(format!("top-k percentage {k_percent} outside (0, 100]")));
    }
    Ok(((k_percent * n as f64) / 100.0).ceil().min(n as f64) as usize)
}

/// Share of positives among the `ceil(k% · N)` highest-scoring cars, ties
/// broken by ascending id.
pub fn top_k_precision(ids: &[&str], scores: &[f64], labels: &[bool], k_percent: f64) -> Result<f64> {
    check_scores(scores, labels)?;
    if ids.len() != scores.len() {
        return Err(Error::Shape(format!("{} ids for {} scores", ids.len(), scores.len())));
    }
    let m = top_k_count(scores.len(), k_percent)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| match scores[b].total_cmp(&scores[a]) {
        Ordering::Equal => ids[a].cmp(ids[b]),
        other => other,
    });
    let hits = order[..m].iter().filter(|&&i| labels[i]).count();
    Ok(hits as f64 / m as f64)
}

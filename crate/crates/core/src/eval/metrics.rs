use std::collections::BTreeSet;

use serde::Serialize;

use crate::error::{Error, Result};

/// Population z-scores. All zero when the values are constant.
pub fn z_scores(values: &[f64]) -> Vec<f64> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std == 0.0 || !std.is_finite() {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - mean) / std).collect()
}

/// Area under the ROC curve via the rank statistic, ties counted one half.
/// `None` when either class is empty.
pub fn auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), positive.len());
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // average 1-based ranks over runs of equal scores
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j + 2) as f64 / 2.0;
        rank_sum_pos += avg_rank * order[i..=j].iter().filter(|&&k| positive[k]).count() as f64;
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos * n_neg) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AucSummary {
    pub mean: f64,
    /// Per-class AUC; `None` for classes without positives or negatives.
    pub per_class: Vec<Option<f64>>,
}

/// One-vs-rest AUC per class, averaged over classes where it is defined.
/// `scores[e][c]` is example `e`'s score for class `c`; `gold[e]` the class
/// index.
pub fn average_auc(scores: &[Vec<f64>], gold: &[usize]) -> Result<AucSummary> {
    if scores.len() != gold.len() {
        return Err(Error::Shape("one gold label per scored example required".into()));
    }
    let classes = scores.first().map_or(0, Vec::len);
    let mut per_class = Vec::with_capacity(classes);
    for c in 0..classes {
        let s: Vec<f64> = scores.iter().map(|row| row[c]).collect();
        let pos: Vec<bool> = gold.iter().map(|&g| g == c).collect();
        let a = auc(&s, &pos);
        if a.is_none() {
            log::warn!("class {c}: AUC undefined (no positives or no negatives); excluded");
        }
        per_class.push(a);
    }
    let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
    if defined.is_empty() {
        return Err(Error::Invalid("AUC undefined for every class".into()));
    }
    Ok(AucSummary {
        mean: defined.iter().sum::<f64>() / defined.len() as f64,
        per_class,
    })
}

/// Accuracy and macro-averaged F1 over the classes that occur in either
/// list.
pub fn accuracy_f1<T: Ord + Copy>(predictions: &[T], gold: &[T]) -> Result<(f64, f64)> {
    if predictions.len() != gold.len() {
        return Err(Error::Shape("predictions and gold differ in length".into()));
    }
    if gold.is_empty() {
        return Err(Error::Invalid("no examples".into()));
    }
    let correct = predictions.iter().zip(gold).filter(|(p, g)| p == g).count();
    let classes: BTreeSet<T> = predictions.iter().chain(gold).copied().collect();
    let f1_sum: f64 = classes
        .iter()
        .map(|&c| {
            let tp = predictions.iter().zip(gold).filter(|&(&p, &g)| p == c && g == c).count();
            let fp = predictions.iter().zip(gold).filter(|&(&p, &g)| p == c && g != c).count();
            let fn_ = predictions.iter().zip(gold).filter(|&(&p, &g)| p != c && g == c).count();
            2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
        })
        .sum();
    Ok((
        correct as f64 / gold.len() as f64,
        f1_sum / classes.len() as f64,
    ))
}

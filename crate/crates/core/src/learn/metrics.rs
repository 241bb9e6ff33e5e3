//! Ranking, classification and regression metrics.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array2, ArrayView1};

use crate::error::{Error, Result};

/// Ordered name → value pairs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricReport {
    entries: Vec<(String, f64)>,
}

impl MetricReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: f64) {
        let name = name.into();
        match self.entries.iter_mut().find(|e| e.0 == name) {
            Some(e) => e.1 = value,
            None => self.entries.push((name, value)),
        }
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.entries.iter().find(|e| e.0 == name).map(|e| e.1)
    }

    pub fn entries(&self) -> &[(String, f64)] {
        &self.entries
    }

    /// Adds every entry of `other` with `prefix` prepended to its name.
    pub fn extend_prefixed(&mut self, prefix: &str, other: &MetricReport) {
        for (k, v) in &other.entries {
            self.insert(format!("{prefix}{k}"), *v);
        }
    }

    /// `metric,value` lines.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,value\n");
        for (k, v) in &self.entries {
            let _ = writeln!(s, "{k},{v}");
        }
        s
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// 1-based rank of `target` among `scores`; ties count against the target.
pub fn rank_of(scores: ArrayView1<f64>, target: usize) -> usize {
    let s = scores[target];
    1 + scores
        .iter()
        .enumerate()
        .filter(|&(i, &x)| i != target && x >= s)
        .count()
}

pub fn hit_rate(ranks: &[usize], k: usize) -> Result<f64> {
    if ranks.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    Ok(ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64)
}

/// Single relevant item: gain `1/log2(rank + 1)` when `rank <= k`.
pub fn ndcg(ranks: &[usize], k: usize) -> Result<f64> {
    if ranks.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let total: f64 = ranks
        .iter()
        .filter(|&&r| r <= k)
        .map(|&r| 1.0 / ((r + 1) as f64).log2())
        .sum();
    Ok(total / ranks.len() as f64)
}

/// HR@K and NDCG@K for each `k`, from one score row per example.
pub fn evaluate_ranking(scores: &Array2<f64>, targets: &[usize], ks: &[usize]) -> Result<MetricReport> {
    if targets.len() != scores.nrows() {
        return Err(Error::shape(format!("{} score rows for {} targets", scores.nrows(), targets.len())));
    }
    let ranks: Vec<usize> = targets
        .iter()
        .enumerate()
        .map(|(i, &t)| rank_of(scores.row(i), t))
        .collect();
    let mut report = MetricReport::new();
    for &k in ks {
        report.insert(format!("hr@{k}"), hit_rate(&ranks, k)?);
        report.insert(format!("ndcg@{k}"), ndcg(&ranks, k)?);
    }
    Ok(report)
}

/// `counts[[truth, predicted]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix {
    pub counts: Array2<u64>,
}

impl ConfusionMatrix {
    pub fn from_predictions(predicted: &[usize], truth: &[usize], classes: usize) -> Result<Self> {
        if predicted.len() != truth.len() {
            return Err(Error::shape(format!("{} predictions for {} labels", predicted.len(), truth.len())));
        }
        if truth.is_empty() {
            return Err(Error::EmptyEvaluation);
        }
        let mut counts = Array2::zeros((classes, classes));
        for (&p, &t) in predicted.iter().zip(truth) {
            if p >= classes || t >= classes {
                return Err(Error::invalid(format!("class id {} outside {classes} classes", p.max(t))));
            }
            counts[[t, p]] += 1;
        }
        Ok(ConfusionMatrix { counts })
    }

    pub fn classes(&self) -> usize {
        self.counts.nrows()
    }

    pub fn total(&self) -> u64 {
        self.counts.sum()
    }

    pub fn accuracy(&self) -> f64 {
        let correct: u64 = (0..self.classes()).map(|c| self.counts[[c, c]]).sum();
        correct as f64 / self.total().max(1) as f64
    }

    /// F1 of class `c`; 0 when it has neither predictions nor support.
    pub fn class_f1(&self, c: usize) -> f64 {
        let tp = self.counts[[c, c]] as f64;
        let predicted = self.counts.column(c).sum() as f64;
        let support = self.counts.row(c).sum() as f64;
        if predicted + support == 0.0 {
            return 0.0;
        }
        2.0 * tp / (predicted + support)
    }

    /// Mean F1 over the classes that occur in the truth or the predictions.
    pub fn macro_f1(&self) -> f64 {
        let present: Vec<usize> = (0..self.classes())
            .filter(|&c| self.counts.row(c).sum() + self.counts.column(c).sum() > 0)
            .collect();
        if present.is_empty() {
            return 0.0;
        }
        present.iter().map(|&c| self.class_f1(c)).sum::<f64>() / present.len() as f64
    }

    /// Class with the smallest nonzero support (smallest id on ties).
    pub fn minority_class(&self) -> usize {
        (0..self.classes())
            .filter(|&c| self.counts.row(c).sum() > 0)
            .min_by_key(|&c| (self.counts.row(c).sum(), c))
            .unwrap_or(0)
    }
}

/// Accuracy, Macro-F1 and Micro-F1, where Micro-F1 is the F1 of the minority
/// class (the rare positive class in imbalanced detection settings).
pub fn evaluate_classification(predicted: &[usize], truth: &[usize], classes: usize) -> Result<MetricReport> {
    let cm = ConfusionMatrix::from_predictions(predicted, truth, classes)?;
    let mut report = MetricReport::new();
    report.insert("accuracy", cm.accuracy());
    report.insert("macro_f1", cm.macro_f1());
    report.insert("micro_f1", cm.class_f1(cm.minority_class()));
    Ok(report)
}

/// MAE, RMSE and MAPE (in percent, over entries whose truth is nonzero).
pub fn evaluate_regression(predicted: &[f64], truth: &[f64]) -> Result<MetricReport> {
    if predicted.len() != truth.len() {
        return Err(Error::shape(format!("{} predictions for {} targets", predicted.len(), truth.len())));
    }
    if truth.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let n = truth.len() as f64;
    let mut abs = 0.0;
    let mut sq = 0.0;
    let mut pct = 0.0;
    let mut pct_n = 0usize;
    for (&p, &y) in predicted.iter().zip(truth) {
        let e = p - y;
        abs += e.abs();
        sq += e * e;
        if y != 0.0 {
            pct += (e / y).abs();
            pct_n += 1;
        }
    }
    let mut report = MetricReport::new();
    report.insert("mae", abs / n);
    report.insert("rmse", (sq / n).sqrt());
    report.insert("mape", if pct_n == 0 { 0.0 } else { 100.0 * pct / pct_n as f64 });
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn rank_one_and_two() {
        let s = array![[0.9, 0.1, 0.3]];
        let r = evaluate_ranking(&s, &[0], &[10]).unwrap();
        assert_eq!(r.get("hr@10"), Some(1.0));
        assert_eq!(r.get("ndcg@10"), Some(1.0));
        let r = evaluate_ranking(&s, &[2], &[10]).unwrap();
        assert!((r.get("ndcg@10").unwrap() - 0.6309297535714575).abs() < 1e-12);
    }

    #[test]
    fn ties_rank_pessimistically() {
        let s = array![1.0, 1.0, 1.0];
        assert_eq!(rank_of(s.view(), 0), 3);
    }

    #[test]
    fn regression_perfect() {
        let r = evaluate_regression(&[1.0, -2.0], &[1.0, -2.0]).unwrap();
        assert_eq!(r.get("mae"), Some(0.0));
        assert_eq!(r.get("rmse"), Some(0.0));
        assert_eq!(r.get("mape"), Some(0.0));
    }

    #[test]
    fn empty_sets_rejected() {
        assert!(matches!(hit_rate(&[], 10), Err(Error::EmptyEvaluation)));
        assert!(matches!(evaluate_regression(&[], &[]), Err(Error::EmptyEvaluation)));
    }

    #[test]
    fn report_csv() {
        let mut r = MetricReport::new();
        r.insert("a", 1.5);
        r.insert("a", 2.0);
        assert_eq!(r.to_csv(), "metric,value\na,2\n");
    }
}

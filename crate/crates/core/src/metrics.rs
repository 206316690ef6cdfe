//! Multi-label evaluation: macro/micro AUC, macro/micro F1 and P@k.
//!
//! F1 uses a fixed decision threshold (a cell is predicted positive when
//! `prob >= threshold`) and defines F1 as 0 when precision and recall are both
//! 0. AUC is the Mann-Whitney statistic with half credit for ties; macro AUC
//! averages over the labels whose gold column contains both classes.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Predicted probabilities and gold labels, both `n_docs x n_labels`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionBatch {
    probs: Vec<Vec<f64>>,
    gold: Vec<Vec<f64>>,
    n_labels: usize,
}

impl PredictionBatch {
    pub fn new(probs: Vec<Vec<f64>>, gold: Vec<Vec<f64>>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Invalid("empty prediction batch".into()));
        }
        if probs.len() != gold.len() {
            return Err(Error::shape("PredictionBatch", &[probs.len()], &[gold.len()]));
        }
        let n_labels = probs[0].len();
        for (p, g) in probs.iter().zip(&gold) {
            if p.len() != n_labels || g.len() != n_labels {
                return Err(Error::shape("PredictionBatch", &[p.len()], &[g.len(), n_labels]));
            }
            if p.iter().any(|x| !x.is_finite()) {
                return Err(Error::Invalid("non-finite probability".into()));
            }
            if g.iter().any(|&y| y != 0.0 && y != 1.0) {
                return Err(Error::Invalid("gold labels must be 0 or 1".into()));
            }
        }
        Ok(Self {
            probs,
            gold,
            n_labels,
        })
    }

    pub fn n_docs(&self) -> usize {
        self.probs.len()
    }

    pub fn n_labels(&self) -> usize {
        self.n_labels
    }

    pub fn probs(&self) -> &[Vec<f64>] {
        &self.probs
    }

    pub fn gold(&self) -> &[Vec<f64>] {
        &self.gold
    }

    fn column(&self, label: usize) -> (Vec<f64>, Vec<f64>) {
        (
            self.probs.iter().map(|r| r[label]).collect(),
            self.gold.iter().map(|r| r[label]).collect(),
        )
    }
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
struct Confusion {
    tp: u64,
    fp: u64,
    fn_: u64,
}

impl Confusion {
    fn add(&mut self, prob: f64, gold: f64, threshold: f64) {
        match (prob >= threshold, gold == 1.0) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => {}
        }
    }

    fn f1(&self) -> f64 {
        let precision = if self.tp + self.fp == 0 {
            0.0
        } else {
            self.tp as f64 / (self.tp + self.fp) as f64
        };
        let recall = if self.tp + self.fn_ == 0 {
            0.0
        } else {
            self.tp as f64 / (self.tp + self.fn_) as f64
        };
        if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        }
    }
}

/// F1 over all pooled (document, label) decisions.
pub fn micro_f1(batch: &PredictionBatch, threshold: f64) -> f64 {
    let mut c = Confusion::default();
    for (p, g) in batch.probs.iter().zip(&batch.gold) {
        for (&p, &g) in p.iter().zip(g) {
            c.add(p, g, threshold);
        }
    }
    c.f1()
}

/// Unweighted mean of per-label F1 over every label.
pub fn macro_f1(batch: &PredictionBatch, threshold: f64) -> f64 {
    let total: f64 = (0..batch.n_labels)
        .map(|l| {
            let mut c = Confusion::default();
            for (p, g) in batch.probs.iter().zip(&batch.gold) {
                c.add(p[l], g[l], threshold);
            }
            c.f1()
        })
        .sum();
    total / batch.n_labels as f64
}

/// Area under the ROC curve; ties between a positive and a negative count
/// one half. Undefined unless both classes are present.
pub fn auc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::shape("auc", &[scores.len()], &[labels.len()]));
    }
    let n_pos = labels.iter().filter(|&&y| y == 1.0).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Undefined("auc needs both positive and negative labels"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Sum of mid-ranks (1-based) of the positives.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid_rank = (i + j + 2) as f64 / 2.0;
        let positives = order[i..=j].iter().filter(|&&k| labels[k] == 1.0).count();
        rank_sum += mid_rank * positives as f64;
        i = j + 1;
    }
    let n_pos_f = n_pos as f64;
    let u = rank_sum - n_pos_f * (n_pos_f + 1.0) / 2.0;
    Ok(u / (n_pos_f * n_neg as f64))
}

/// One AUC over all flattened cells.
pub fn micro_auc(batch: &PredictionBatch) -> Result<f64> {
    let scores: Vec<f64> = batch.probs.iter().flatten().copied().collect();
    let labels: Vec<f64> = batch.gold.iter().flatten().copied().collect();
    auc(&scores, &labels)
}

/// Mean per-label AUC over the labels where it is defined.
pub fn macro_auc(batch: &PredictionBatch) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0;
    for l in 0..batch.n_labels {
        let (scores, labels) = batch.column(l);
        if let Ok(a) = auc(&scores, &labels) {
            sum += a;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Undefined("no label has both classes"));
    }
    Ok(sum / count as f64)
}

/// Mean over documents of the fraction of the `k` highest-scored labels that
/// are gold positives. Score ties favour the lower label index.
pub fn precision_at_k(batch: &PredictionBatch, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::Invalid("k must be positive".into()));
    }
    if k > batch.n_labels {
        return Err(Error::Invalid(format!(
            "k = {k} exceeds the number of labels {}",
            batch.n_labels
        )));
    }
    let mut total = 0.0;
    for (p, g) in batch.probs.iter().zip(&batch.gold) {
        let mut order: Vec<usize> = (0..p.len()).collect();
        order.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
        let hits = order[..k].iter().filter(|&&l| g[l] == 1.0).count();
        total += hits as f64 / k as f64;
    }
    Ok(total / batch.n_docs() as f64)
}

/// The full evaluation suite for one batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub macro_auc: Option<f64>,
    pub micro_auc: Option<f64>,
    pub macro_f1: f64,
    pub micro_f1: f64,
    /// `(k, P@k)` pairs.
    pub precision_at_k: Vec<(usize, f64)>,
}

impl MetricsReport {
    pub fn evaluate(batch: &PredictionBatch, threshold: f64, ks: &[usize]) -> Result<Self> {
        let precision_at_k = ks
            .iter()
            .map(|&k| precision_at_k(batch, k).map(|p| (k, p)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            macro_auc: macro_auc(batch).ok(),
            micro_auc: micro_auc(batch).ok(),
            macro_f1: macro_f1(batch, threshold),
            micro_f1: micro_f1(batch, threshold),
            precision_at_k,
        })
    }

    /// Ordered `(name, value)` pairs; undefined AUCs are NaN.
    pub fn entries(&self) -> Vec<(String, f64)> {
        let mut out = vec![
            ("macro_auc".to_string(), self.macro_auc.unwrap_or(f64::NAN)),
            ("micro_auc".to_string(), self.micro_auc.unwrap_or(f64::NAN)),
            ("macro_f1".to_string(), self.macro_f1),
            ("micro_f1".to_string(), self.micro_f1),
        ];
        for (k, p) in &self.precision_at_k {
            out.push((format!("p@{k}"), *p));
        }
        out
    }

    /// Flat `key=value` block, one metric per line.
    pub fn to_kv_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(probs: &[&[f64]], gold: &[&[f64]]) -> PredictionBatch {
        PredictionBatch::new(
            probs.iter().map(|r| r.to_vec()).collect(),
            gold.iter().map(|r| r.to_vec()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn micro_f1_examples() {
        let b = batch(&[&[1.0, 0.0], &[0.0, 1.0]], &[&[1.0, 0.0], &[0.0, 1.0]]);
        assert_eq!(micro_f1(&b, 0.5), 1.0);
        // Pooled: TP = 1, FP = 1, FN = 1.
        let b = batch(&[&[1.0, 0.0, 1.0]], &[&[1.0, 1.0, 0.0]]);
        assert_eq!(micro_f1(&b, 0.5), 0.5);
        let b = batch(&[&[0.1, 0.2]], &[&[1.0, 0.0]]);
        assert_eq!(micro_f1(&b, 0.5), 0.0);
    }

    #[test]
    fn macro_f1_examples() {
        let b = batch(&[&[0.9, 0.1], &[0.1, 0.9]], &[&[0.0, 1.0], &[1.0, 0.0]]);
        assert_eq!(macro_f1(&b, 0.5), 0.0);
        let b = batch(&[&[0.9, 0.1]], &[&[1.0, 1.0]]);
        assert_eq!(macro_f1(&b, 0.5), 0.5);

        // Three labels, counted by hand:
        // label 0: TP 2, FP 0, FN 0 -> 1
        // label 1: TP 1, FP 1, FN 1 -> 0.5
        // label 2: TP 0, FP 1, FN 1 -> 0
        let b = batch(
            &[&[0.9, 0.8, 0.7], &[0.6, 0.2, 0.1], &[0.1, 0.9, 0.2]],
            &[&[1.0, 1.0, 0.0], &[1.0, 1.0, 1.0], &[0.0, 0.0, 0.0]],
        );
        assert!((macro_f1(&b, 0.5) - 0.5).abs() < 1e-15);

        // Same distribution on every label: macro equals micro.
        let b = batch(&[&[0.9, 0.9], &[0.1, 0.1], &[0.8, 0.8]], &[&[1.0, 1.0], &[1.0, 1.0], &[0.0, 0.0]]);
        assert_eq!(macro_f1(&b, 0.5), micro_f1(&b, 0.5));
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &[0.0, 0.0, 1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(auc(&[0.3; 4], &[0.0, 1.0, 0.0, 1.0]).unwrap(), 0.5);
        assert_eq!(auc(&[0.1, 0.4, 0.35, 0.8], &[0.0, 0.0, 1.0, 1.0]).unwrap(), 0.75);
        assert!(matches!(auc(&[0.1, 0.2], &[1.0, 1.0]), Err(Error::Undefined(_))));
    }

    #[test]
    fn micro_macro_auc() {
        let b = batch(&[&[0.9], &[0.2], &[0.4]], &[&[1.0], &[0.0], &[1.0]]);
        let a = auc(&[0.9, 0.2, 0.4], &[1.0, 0.0, 1.0]).unwrap();
        assert_eq!(micro_auc(&b).unwrap(), a);
        assert_eq!(macro_auc(&b).unwrap(), a);

        // Second label has no positives and is skipped by macro.
        let b = batch(&[&[0.9, 0.3], &[0.2, 0.1]], &[&[1.0, 0.0], &[0.0, 0.0]]);
        assert_eq!(macro_auc(&b).unwrap(), 1.0);
        let b = batch(&[&[0.9], &[0.2]], &[&[1.0], &[1.0]]);
        assert!(macro_auc(&b).is_err());
    }

    #[test]
    fn precision_at_k_examples() {
        let b = batch(&[&[0.9, 0.8, 0.1]], &[&[1.0, 0.0, 1.0]]);
        assert_eq!(precision_at_k(&b, 2).unwrap(), 0.5);
        let b = batch(&[&[0.9, 0.8, 0.1]], &[&[1.0, 1.0, 1.0]]);
        assert_eq!(precision_at_k(&b, 2).unwrap(), 1.0);
        assert!(precision_at_k(&b, 0).is_err());
        assert!(precision_at_k(&b, 4).is_err());
        // Ties go to the lower index.
        let b = batch(&[&[0.5, 0.5, 0.5]], &[&[0.0, 1.0, 1.0]]);
        assert_eq!(precision_at_k(&b, 1).unwrap(), 0.0);
    }

    #[test]
    fn batch_validation() {
        assert!(PredictionBatch::new(vec![], vec![]).is_err());
        assert!(PredictionBatch::new(vec![vec![0.5]], vec![vec![2.0]]).is_err());
        assert!(PredictionBatch::new(vec![vec![f64::NAN]], vec![vec![1.0]]).is_err());
        assert!(PredictionBatch::new(vec![vec![0.5, 0.1]], vec![vec![1.0]]).is_err());
    }

    #[test]
    fn report_text() {
        let b = batch(&[&[0.9, 0.1], &[0.2, 0.7]], &[&[1.0, 0.0], &[0.0, 1.0]]);
        let r = MetricsReport::evaluate(&b, 0.5, &[1]).unwrap();
        let text = r.to_kv_text();
        assert!(text.contains("micro_f1=1\n"));
        assert!(text.contains("p@1=1\n"));
        let back: MetricsReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }
}

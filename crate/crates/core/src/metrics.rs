//! Confusion-matrix evaluation with macro-averaged precision, recall and F1,
//! plus mean squared error over integer class indices.

use crate::data::NUM_CLASSES;
use crate::error::{Error, Result};

/// Rows are gold classes, columns are predictions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionMatrix {
    counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
    total: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn counts(&self) -> &[[u64; NUM_CLASSES]; NUM_CLASSES] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn add(&mut self, gold: usize, pred: usize) {
        self.counts[gold][pred] += 1;
        self.total += 1;
    }

    /// Cell-wise sum, for combining shards.
    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for g in 0..NUM_CLASSES {
            for p in 0..NUM_CLASSES {
                self.counts[g][p] += other.counts[g][p];
            }
        }
        self.total += other.total;
    }

    pub fn class_counts(&self, k: usize) -> ClassCounts {
        let tp = self.counts[k][k];
        let col: u64 = (0..NUM_CLASSES).map(|g| self.counts[g][k]).sum();
        let row: u64 = self.counts[k].iter().sum();
        let fp = col - tp;
        let fn_ = row - tp;
        ClassCounts {
            tp,
            fp,
            fn_,
            tn: self.total - tp - fp - fn_,
        }
    }

    fn require_nonempty(&self) -> Result<()> {
        if self.total == 0 {
            return Err(Error::UndefinedMetric("no predictions".into()));
        }
        Ok(())
    }

    pub fn trace(&self) -> u64 {
        (0..NUM_CLASSES).map(|k| self.counts[k][k]).sum()
    }
}

pub fn confusion(preds: &[usize], golds: &[usize]) -> Result<ConfusionMatrix> {
    if preds.len() != golds.len() {
        return Err(Error::Usage(format!(
            "{} predictions for {} gold labels",
            preds.len(),
            golds.len()
        )));
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &g) in preds.iter().zip(golds) {
        if p >= NUM_CLASSES || g >= NUM_CLASSES {
            return Err(Error::Usage(format!(
                "class index out of range: pred {p}, gold {g}"
            )));
        }
        cm.add(g, p);
    }
    Ok(cm)
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Fraction of correct predictions (trace / total).
pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    cm.require_nonempty()?;
    Ok(cm.trace() as f64 / cm.total as f64)
}

pub fn class_precision(cm: &ConfusionMatrix, k: usize) -> f64 {
    let c = cm.class_counts(k);
    ratio(c.tp, c.tp + c.fp)
}

pub fn class_recall(cm: &ConfusionMatrix, k: usize) -> f64 {
    let c = cm.class_counts(k);
    ratio(c.tp, c.tp + c.fn_)
}

/// Harmonic mean; 0 when both inputs are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

pub fn class_f1(cm: &ConfusionMatrix, k: usize) -> f64 {
    f1_score(class_precision(cm, k), class_recall(cm, k))
}

fn macro_mean(cm: &ConfusionMatrix, f: impl Fn(&ConfusionMatrix, usize) -> f64) -> Result<f64> {
    cm.require_nonempty()?;
    Ok((0..NUM_CLASSES).map(|k| f(cm, k)).sum::<f64>() / NUM_CLASSES as f64)
}

pub fn precision_macro(cm: &ConfusionMatrix) -> Result<f64> {
    macro_mean(cm, class_precision)
}

pub fn recall_macro(cm: &ConfusionMatrix) -> Result<f64> {
    macro_mean(cm, class_recall)
}

/// Mean of the per-class F1 scores (not F1 of the macro precision and recall).
pub fn f1_macro(cm: &ConfusionMatrix) -> Result<f64> {
    macro_mean(cm, class_f1)
}

/// Mean squared difference between predicted and gold class indices.
pub fn mse_labels(preds: &[usize], golds: &[usize]) -> Result<f64> {
    if preds.len() != golds.len() {
        return Err(Error::Usage(format!(
            "{} predictions for {} gold labels",
            preds.len(),
            golds.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::UndefinedMetric("mse of zero predictions".into()));
    }
    let sum: f64 = preds
        .iter()
        .zip(golds)
        .map(|(&p, &g)| {
            let d = p as f64 - g as f64;
            d * d
        })
        .sum();
    Ok(sum / preds.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub mse: f64,
}

pub fn summarize(preds: &[usize], golds: &[usize]) -> Result<Summary> {
    let cm = confusion(preds, golds)?;
    Ok(Summary {
        accuracy: accuracy(&cm)?,
        precision: precision_macro(&cm)?,
        recall: recall_macro(&cm)?,
        f1: f1_macro(&cm)?,
        mse: mse_labels(preds, golds)?,
    })
}

/// Area under the ROC curve for `scores` where higher means positive, computed
/// from average ranks (ties count one half).
pub fn roc_auc(scores: &[f64], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(Error::Usage(format!(
            "{} scores for {} labels",
            scores.len(),
            positive.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numeric("non-finite score".into()));
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(
            "auc needs both positive and negative labels".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += avg_rank * order[i..=j].iter().filter(|&&k| positive[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_when_perfect() {
        let v = [0, 1, 2, 3, 4, 5, 5, 1];
        let cm = confusion(&v, &v).unwrap();
        for g in 0..6 {
            for p in 0..6 {
                if g != p {
                    assert_eq!(cm.counts()[g][p], 0);
                }
            }
        }
        assert_eq!(accuracy(&cm).unwrap(), 1.0);
        assert_eq!(precision_macro(&cm).unwrap(), 1.0);
        assert_eq!(recall_macro(&cm).unwrap(), 1.0);
        assert_eq!(f1_macro(&cm).unwrap(), 1.0);
        assert_eq!(mse_labels(&v, &v).unwrap(), 0.0);
    }

    #[test]
    fn empty_input() {
        let cm = confusion(&[], &[]).unwrap();
        assert_eq!(cm.total(), 0);
        assert!(matches!(accuracy(&cm), Err(Error::UndefinedMetric(_))));
        assert!(f1_macro(&cm).is_err());
        assert!(mse_labels(&[], &[]).is_err());
    }

    #[test]
    fn four_of_five() {
        let cm = confusion(&[0, 1, 2, 3, 4], &[0, 1, 2, 3, 3]).unwrap();
        assert_eq!(accuracy(&cm).unwrap(), 0.8);
    }

    #[test]
    fn harmonic_mean_of_table_values() {
        let f = f1_score(0.05, 0.224);
        assert!((f - 0.082).abs() <= 0.0005, "{f}");
        assert!((f - 2.0 * 0.05 * 0.224 / 0.274).abs() < 1e-15);
    }

    #[test]
    fn maximal_label_distance() {
        assert_eq!(mse_labels(&[0, 5], &[5, 0]).unwrap(), 25.0);
    }

    #[test]
    fn errors() {
        assert!(matches!(confusion(&[0], &[0, 1]), Err(Error::Usage(_))));
        assert!(matches!(confusion(&[6], &[0]), Err(Error::Usage(_))));
    }

    #[test]
    fn auc_cases() {
        assert_eq!(
            roc_auc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap(),
            0.75
        );
        assert_eq!(roc_auc(&[0.5, 0.5], &[true, false]).unwrap(), 0.5);
        assert_eq!(roc_auc(&[0.9, 0.1], &[true, false]).unwrap(), 1.0);
        assert!(matches!(
            roc_auc(&[0.2], &[true]),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn tn_is_consistent() {
        let cm = confusion(&[0, 0, 1, 2, 2, 2], &[0, 1, 1, 2, 0, 5]).unwrap();
        for k in 0..6 {
            let c = cm.class_counts(k);
            assert_eq!(c.tp + c.fp + c.fn_ + c.tn, cm.total());
        }
    }
}

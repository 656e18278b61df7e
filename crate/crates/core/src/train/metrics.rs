use serde::{Deserialize, Serialize};

/// Counts with "hate" (label 1) as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn from_predictions(predicted: &[usize], labels: &[usize]) -> Self {
        assert_eq!(predicted.len(), labels.len(), "one prediction per label");
        let mut c = Self::default();
        for (&p, &y) in predicted.iter().zip(labels) {
            match (p == 1, y == 1) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// `None` when the split holds a single class.
    pub auc: Option<f64>,
    pub confusion: Confusion,
}

impl MetricsReport {
    /// `scores` are hate probabilities; the prediction is hate when the
    /// score exceeds one half.
    pub fn from_scores(scores: &[f64], labels: &[usize]) -> Self {
        let predicted: Vec<usize> = scores.iter().map(|&s| usize::from(s > 0.5)).collect();
        let confusion = Confusion::from_predictions(&predicted, labels);
        let mut r = Self::from_confusion(confusion);
        r.auc = roc_auc(scores, labels);
        r
    }

    pub fn from_confusion(c: Confusion) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(c.tp, c.tp + c.fp);
        let recall = ratio(c.tp, c.tp + c.fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            accuracy: ratio(c.tp + c.tn, c.total()),
            precision,
            recall,
            f1,
            auc: None,
            confusion: c,
        }
    }
}

/// Area under the ROC curve by the trapezoidal rule. Thresholds walk the
/// distinct scores from high to low, so tied scores form one diagonal step.
pub fn roc_auc(scores: &[f64], labels: &[usize]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len(), "one score per label");
    let pos = labels.iter().filter(|&&y| y == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let (mut prev_tpr, mut prev_fpr) = (0.0f64, 0.0f64);
    let mut area = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let tpr = tp as f64 / pos as f64;
        let fpr = fp as f64 / neg as f64;
        area += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
        prev_tpr = tpr;
        prev_fpr = fpr;
    }
    Some(area)
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// K×K counts; rows are true classes, columns predictions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
    pub class_names: Vec<String>,
}

impl ConfusionMatrix {
    pub fn k(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn support(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    pub fn with_names(mut self, names: &[String]) -> Result<Self> {
        if names.len() != self.k() {
            return Err(Error::shape(format!(
                "{} names for {} classes",
                names.len(),
                self.k()
            )));
        }
        self.class_names = names.to_vec();
        Ok(self)
    }
}

pub fn confusion(labels: &[usize], predictions: &[usize], k: usize) -> Result<ConfusionMatrix> {
    if labels.len() != predictions.len() {
        return Err(Error::Contract(format!(
            "{} labels but {} predictions",
            labels.len(),
            predictions.len()
        )));
    }
    let mut counts = vec![vec![0u64; k]; k];
    for (&t, &p) in labels.iter().zip(predictions) {
        if t >= k || p >= k {
            return Err(Error::Contract(format!(
                "class pair ({t}, {p}) outside [0, {k})"
            )));
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix {
        counts,
        class_names: (0..k).map(|i| i.to_string()).collect(),
    })
}

/// Per-class figures. Ratios with a zero denominator are reported as 0 and
/// listed in `undefined`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub name: String,
    pub support: u64,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    /// Identical to recall.
    pub sensitivity: f64,
    pub specificity: f64,
    /// `100 · recall`.
    pub class_accuracy: f64,
    pub undefined: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub acc: f64,
    /// Unweighted mean of per-class recall over all K classes.
    pub bacc: f64,
    pub per_class: Vec<ClassMetrics>,
}

fn ratio(num: u64, den: u64, name: &str, undefined: &mut Vec<String>) -> f64 {
    if den == 0 {
        undefined.push(name.to_string());
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn metrics(cm: &ConfusionMatrix) -> Metrics {
    let k = cm.k();
    let total = cm.total();
    let mut per_class = Vec::with_capacity(k);
    for i in 0..k {
        let tp = cm.counts[i][i];
        let support = cm.support(i);
        let predicted: u64 = (0..k).map(|r| cm.counts[r][i]).sum();
        let fp = predicted - tp;
        let tn = total - support - fp;
        let mut undefined = Vec::new();
        let recall = ratio(tp, support, "recall", &mut undefined);
        let precision = ratio(tp, predicted, "precision", &mut undefined);
        let specificity = ratio(tn, tn + fp, "specificity", &mut undefined);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            undefined.push("f1".into());
            0.0
        };
        per_class.push(ClassMetrics {
            name: cm
                .class_names
                .get(i)
                .cloned()
                .unwrap_or_else(|| i.to_string()),
            support,
            recall,
            precision,
            f1,
            sensitivity: recall,
            specificity,
            class_accuracy: 100.0 * recall,
            undefined,
        });
    }
    let trace: u64 = (0..k).map(|i| cm.counts[i][i]).sum();
    let acc = if total == 0 {
        0.0
    } else {
        trace as f64 / total as f64
    };
    let bacc = if k == 0 {
        0.0
    } else {
        per_class.iter().map(|c| c.recall).sum::<f64>() / k as f64
    };
    Metrics {
        acc,
        bacc,
        per_class,
    }
}

/// Balanced accuracy from per-class accuracies given in percent.
pub fn bacc_from_class_accuracies(percent: &[f64]) -> f64 {
    percent.iter().map(|p| p / 100.0).sum::<f64>() / percent.len() as f64
}

/// Harmonic mean of precision and recall (0 when both are 0).
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

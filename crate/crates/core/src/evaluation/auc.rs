use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Area under the ROC curve via the Mann–Whitney rank statistic with
/// midranks for ties. `None` unless both classes are present.
pub fn binary_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    assert_eq!(
        scores.len(),
        positive.len(),
        "scores and labels differ in length"
    );
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
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
        // ranks i+1 ..= j+1 share their mean
        let midrank = (i + j + 2) as f64 / 2.0;
        let tied_pos = order[i..=j].iter().filter(|&&o| positive[o]).count();
        rank_sum += midrank * tied_pos as f64;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AucReport {
    /// One-vs-rest AUC per class; `None` when the class has no positives or
    /// no negatives.
    pub per_class: Vec<Option<f64>>,
    /// Unweighted mean over classes with a defined AUC.
    pub macro_auc: f64,
    /// Support-weighted mean over classes with a defined AUC.
    pub weighted_auc: f64,
    pub skipped: Vec<usize>,
}

/// One-vs-rest AUC of row-major N×K `scores`.
pub fn roc_auc_ovr(scores: &[f64], k: usize, labels: &[usize]) -> Result<AucReport> {
    if k == 0 || scores.len() != labels.len() * k {
        return Err(Error::shape(format!(
            "scores of length {} do not form {}×{k}",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Contract(format!("label {bad} outside [0, {k})")));
    }
    let mut per_class = Vec::with_capacity(k);
    let mut skipped = Vec::new();
    let (mut sum, mut wsum, mut defined, mut support_total) = (0.0, 0.0, 0usize, 0usize);
    for c in 0..k {
        let col: Vec<f64> = scores.iter().skip(c).step_by(k).copied().collect();
        let pos: Vec<bool> = labels.iter().map(|&l| l == c).collect();
        let auc = binary_auc(&col, &pos);
        match auc {
            Some(a) => {
                let support = pos.iter().filter(|&&p| p).count();
                sum += a;
                wsum += a * support as f64;
                defined += 1;
                support_total += support;
            }
            None => skipped.push(c),
        }
        per_class.push(auc);
    }
    if defined == 0 {
        return Err(Error::Contract(
            "no class has both positives and negatives".into(),
        ));
    }
    Ok(AucReport {
        per_class,
        macro_auc: sum / defined as f64,
        weighted_auc: wsum / support_total as f64,
        skipped,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// `None` for the origin, which lies above every score.
    pub threshold: Option<f64>,
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC points at every distinct score, from the highest threshold down,
/// preceded by the origin.
pub fn roc_curve(scores: &[f64], positive: &[bool]) -> Vec<RocPoint> {
    let n_pos = positive.iter().filter(|&&p| p).count() as f64;
    let n_neg = positive.len() as f64 - n_pos;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let rate = |n: f64, d: f64| if d > 0.0 { n / d } else { 0.0 };
    let mut points = vec![RocPoint {
        threshold: None,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if positive[order[i]] {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold: Some(t),
            fpr: rate(fp, n_neg),
            tpr: rate(tp, n_pos),
        });
    }
    points
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_cases() {
        assert_eq!(
            binary_auc(&[0.9, 0.8, 0.3], &[true, false, true]),
            Some(0.5)
        );
        assert_eq!(
            binary_auc(&[0.9, 0.8, 0.1, 0.2], &[true, true, false, false]),
            Some(1.0)
        );
        assert_eq!(
            binary_auc(&[0.4; 5], &[true, false, true, false, false]),
            Some(0.5)
        );
        assert_eq!(binary_auc(&[0.4, 0.5], &[true, true]), None);
    }

    #[test]
    fn ovr_macro_and_skip() {
        // class 2 never occurs → skipped
        let scores = [0.8, 0.1, 0.1, 0.3, 0.6, 0.1, 0.6, 0.3, 0.1];
        let r = roc_auc_ovr(&scores, 3, &[0, 1, 0]).unwrap();
        assert_eq!(r.per_class, vec![Some(1.0), Some(1.0), None]);
        assert_eq!(r.skipped, vec![2]);
        assert_eq!(r.macro_auc, 1.0);
        assert!(matches!(
            roc_auc_ovr(&[0.5, 0.5], 2, &[0]),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn roc_endpoints() {
        let pts = roc_curve(&[0.9, 0.8, 0.8, 0.1], &[true, false, true, false]);
        assert_eq!((pts[0].fpr, pts[0].tpr), (0.0, 0.0));
        let last = pts.last().unwrap();
        assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
        assert_eq!(pts.len(), 4);
        assert_eq!((pts[2].fpr, pts[2].tpr), (0.5, 1.0));
    }
}

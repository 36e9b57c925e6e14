//! Confusion matrices, per-class and aggregate metrics, one-vs-rest AUC,
//! and report/embedding export.

mod auc;
mod metrics;

pub use auc::{binary_auc, roc_auc_ovr, roc_curve, AucReport, RocPoint};
pub use metrics::{
    bacc_from_class_accuracies, confusion, f1_score, metrics, ClassMetrics, ConfusionMatrix,
    Metrics,
};

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::batch_tensor;
use crate::model::{predict, ModelBundle};
use crate::training::{meta_tensor, Dataset, Sample};

/// Softmax probabilities and fused embeddings for a dataset, in sample order.
#[derive(Clone, Debug, PartialEq)]
pub struct Predictions {
    pub ids: Vec<String>,
    pub labels: Vec<usize>,
    /// Row-major N×K.
    pub probs: Vec<f32>,
    pub n_classes: usize,
    /// Row-major N×E.
    pub embeddings: Vec<f32>,
    pub embedding_dim: usize,
}

impl Predictions {
    /// Arg-max class per sample (lowest index on ties).
    pub fn predictions(&self) -> Vec<usize> {
        self.probs
            .chunks(self.n_classes)
            .map(|row| {
                let mut best = 0;
                for (i, &p) in row.iter().enumerate() {
                    if p > row[best] {
                        best = i;
                    }
                }
                best
            })
            .collect()
    }

    pub fn prob_row(&self, i: usize) -> &[f32] {
        &self.probs[i * self.n_classes..(i + 1) * self.n_classes]
    }
}

/// Forward pass over `data` without augmentation or the SR head.
pub fn predict_dataset(
    bundle: &ModelBundle,
    data: &Dataset,
    batch_size: usize,
) -> Result<Predictions> {
    if data.is_empty() {
        return Err(Error::Contract("cannot evaluate an empty partition".into()));
    }
    let cfg = bundle.config();
    let mut out = Predictions {
        ids: Vec::with_capacity(data.len()),
        labels: data.labels(),
        probs: Vec::with_capacity(data.len() * cfg.n_classes),
        n_classes: cfg.n_classes,
        embeddings: Vec::new(),
        embedding_dim: cfg.classifier_input_dim(),
    };
    for chunk in data.samples.chunks(batch_size.max(1)) {
        let samples: Vec<&Sample> = chunk.iter().collect();
        let images: Vec<_> = chunk.iter().map(|s| &s.image).collect();
        let x = batch_tensor(&images)?;
        let m = meta_tensor(&samples, cfg.meta_input_dim)?;
        let res = predict(bundle, &x, &m, false)?;
        out.probs.extend_from_slice(res.probs.data());
        out.embeddings.extend_from_slice(res.embedding.data());
        out.ids.extend(chunk.iter().map(|s| s.id.clone()));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    #[serde(flatten)]
    pub metrics: ClassMetrics,
    pub auc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassRoc {
    pub class: String,
    pub points: Vec<RocPoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_samples: usize,
    pub acc: f64,
    pub bacc: f64,
    /// Unweighted one-vs-rest mean over classes with a defined AUC.
    pub macro_auc: f64,
    /// Support-weighted one-vs-rest mean.
    pub weighted_auc: f64,
    pub per_class: Vec<ClassReport>,
    pub confusion: ConfusionMatrix,
    pub roc: Vec<ClassRoc>,
}

/// Builds the full report from predictions.
pub fn report_from_predictions(preds: &Predictions, class_names: &[String]) -> Result<EvalReport> {
    let k = preds.n_classes;
    let cm = confusion(&preds.labels, &preds.predictions(), k)?.with_names(class_names)?;
    let m = metrics(&cm);
    let scores: Vec<f64> = preds.probs.iter().map(|&p| p as f64).collect();
    let auc = roc_auc_ovr(&scores, k, &preds.labels)?;
    let roc = (0..k)
        .map(|c| {
            let col: Vec<f64> = scores.iter().skip(c).step_by(k).copied().collect();
            let pos: Vec<bool> = preds.labels.iter().map(|&l| l == c).collect();
            ClassRoc {
                class: class_names[c].clone(),
                points: roc_curve(&col, &pos),
            }
        })
        .collect();
    Ok(EvalReport {
        n_samples: preds.labels.len(),
        acc: m.acc,
        bacc: m.bacc,
        macro_auc: auc.macro_auc,
        weighted_auc: auc.weighted_auc,
        per_class: m
            .per_class
            .into_iter()
            .zip(auc.per_class)
            .map(|(metrics, auc)| ClassReport { metrics, auc })
            .collect(),
        confusion: cm,
        roc,
    })
}

pub fn evaluate(
    bundle: &ModelBundle,
    data: &Dataset,
    batch_size: usize,
) -> Result<(EvalReport, Predictions)> {
    let preds = predict_dataset(bundle, data, batch_size)?;
    let report = report_from_predictions(&preds, &data.class_names)?;
    Ok((report, preds))
}

fn write_text(path: &Path, text: String) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_report_json(report: &EvalReport, path: impl AsRef<Path>) -> Result<()> {
    write_text(path.as_ref(), serde_json::to_string_pretty(report)? + "\n")
}

pub fn write_confusion_csv(cm: &ConfusionMatrix, path: impl AsRef<Path>) -> Result<()> {
    let mut s = String::from("true\\pred");
    for n in &cm.class_names {
        s.push(',');
        s.push_str(n);
    }
    s.push('\n');
    for (name, row) in cm.class_names.iter().zip(&cm.counts) {
        s.push_str(name);
        for c in row {
            let _ = write!(s, ",{c}");
        }
        s.push('\n');
    }
    write_text(path.as_ref(), s)
}

pub fn write_roc_csv(roc: &[ClassRoc], path: impl AsRef<Path>) -> Result<()> {
    let mut s = String::from("class,threshold,fpr,tpr\n");
    for c in roc {
        for p in &c.points {
            let t = p
                .threshold
                .map_or_else(|| "inf".to_string(), |t| t.to_string());
            let _ = writeln!(s, "{},{t},{},{}", c.class, p.fpr, p.tpr);
        }
    }
    write_text(path.as_ref(), s)
}

/// `sample_id,true_label,e0,…` with one row per sample.
pub fn write_embeddings_csv(
    preds: &Predictions,
    class_names: &[String],
    path: impl AsRef<Path>,
) -> Result<()> {
    let e = preds.embedding_dim;
    let mut s = String::from("sample_id,true_label");
    for j in 0..e {
        let _ = write!(s, ",e{j}");
    }
    s.push('\n');
    for (i, id) in preds.ids.iter().enumerate() {
        let _ = write!(s, "{id},{}", class_names[preds.labels[i]]);
        for v in &preds.embeddings[i * e..(i + 1) * e] {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    write_text(path.as_ref(), s)
}

pub fn export_embeddings(
    bundle: &ModelBundle,
    data: &Dataset,
    path: impl AsRef<Path>,
) -> Result<()> {
    let preds = predict_dataset(bundle, data, 32)?;
    write_embeddings_csv(&preds, &data.class_names, path)
}

use serde::{Deserialize, Serialize};

use super::train::dataset_loss;
use super::HarnessError;
use crate::cornergraph::{CornerGraph, GlobalFeatures};
use crate::heads::{top_k, Batch, Model, Task};

/// Test-set metrics of one model. Classification scores are present only
/// for the task they apply to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task: Task,
    pub n: usize,
    pub loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top3: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub precision: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recall: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f1: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinaryScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Share of rows whose label is among the `k` most probable entries.
pub fn top_k_accuracy(probs: &[Vec<f64>], labels: &[usize], k: usize) -> f64 {
    let hits = probs.iter().zip(labels).filter(|(p, y)| top_k(p, k).contains(y)).count();
    hits as f64 / labels.len().max(1) as f64
}

/// Precision, recall and F1 with positives at `p >= 0.5`. Empty
/// denominators score 0.
pub fn binary_scores(probs: &[f64], labels: &[bool]) -> BinaryScores {
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (p, y) in probs.iter().zip(labels) {
        match (*p >= 0.5, *y) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => {}
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fneg);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    BinaryScores { precision, recall, f1 }
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Shot probabilities with the ground-truth receiver fed to conditional
/// models, as during training.
pub fn shot_probabilities(model: &Model, data: &[&CornerGraph]) -> Result<Vec<f64>, HarnessError> {
    let mut out = Vec::with_capacity(data.len());
    for chunk in data.chunks(64) {
        let batch = if model.spec().conditional {
            model.labelled_batch(chunk)?
        } else {
            Batch {
                graphs: chunk.to_vec(),
                globals: vec![GlobalFeatures::none(); chunk.len()],
            }
        };
        out.extend(model.shot_probs(&batch)?);
    }
    Ok(out)
}

pub fn receiver_probabilities(model: &Model, data: &[&CornerGraph]) -> Result<Vec<Vec<f64>>, HarnessError> {
    let mut out = Vec::with_capacity(data.len());
    for chunk in data.chunks(64) {
        out.extend(model.receiver_probs(chunk)?);
    }
    Ok(out)
}

pub fn evaluate(model: &Model, test_set: &[CornerGraph]) -> Result<MetricsReport, HarnessError> {
    super::check_labels(model.task(), test_set)?;
    let data: Vec<&CornerGraph> = test_set.iter().collect();
    let mut report = MetricsReport {
        task: model.task(),
        n: data.len(),
        loss: dataset_loss(model, &data, 0)?,
        top1: None,
        top3: None,
        precision: None,
        recall: None,
        f1: None,
    };
    match model.task() {
        Task::Receiver => {
            let probs = receiver_probabilities(model, &data)?;
            let labels: Vec<usize> = data.iter().map(|c| c.receiver_index().expect("checked")).collect();
            report.top1 = Some(top_k_accuracy(&probs, &labels, 1));
            report.top3 = Some(top_k_accuracy(&probs, &labels, 3));
        }
        Task::Shot => {
            let probs = shot_probabilities(model, &data)?;
            let labels: Vec<bool> = data.iter().map(|c| c.shot_taken().expect("checked")).collect();
            let s = binary_scores(&probs, &labels);
            report.precision = Some(s.precision);
            report.recall = Some(s.recall);
            report.f1 = Some(s.f1);
        }
        Task::Generate => {}
    }
    Ok(report)
}

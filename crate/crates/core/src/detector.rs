//! Threshold calibration, window classification and detection metrics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::WindowSet;
use crate::error::{Error, Result};
use crate::model::AnomalyModel;
use crate::tensor::Tensor;

/// Threshold `mean + k * std` of validation anomaly scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorProfile {
    pub threshold: f64,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub k: f64,
}

impl DetectorProfile {
    pub fn from_scores(scores: &[f64], k: f64) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::Empty("validation scores".into()));
        }
        if !k.is_finite() {
            return Err(Error::Config(format!("detector k must be finite, got {k}")));
        }
        let n = scores.len() as f64;
        let mean = scores.iter().sum::<f64>() / n;
        let var = scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        Ok(DetectorProfile {
            threshold: mean + k * std,
            mean,
            std,
            k,
        })
    }

    /// Scores strictly above the threshold are anomalous.
    pub fn is_anomalous(&self, score: f64) -> bool {
        score > self.threshold
    }
}

/// Anomaly score of every window, computed in parallel, returned in order.
pub fn score_windows<M: AnomalyModel + ?Sized>(model: &M, windows: &[Tensor]) -> Result<Vec<f64>> {
    windows.par_iter().map(|x| model.score(x)).collect()
}

/// Score the (normal) validation windows and derive the threshold.
pub fn calibrate<M: AnomalyModel + ?Sized>(
    model: &M,
    valid: &WindowSet,
    k: f64,
) -> Result<DetectorProfile> {
    if valid.is_empty() {
        return Err(Error::Empty("validation window set".into()));
    }
    let scores = score_windows(model, &valid.windows)?;
    DetectorProfile::from_scores(&scores, k)
}

/// 2x2 confusion counts; positive means anomalous.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn from_pairs(predictions: &[bool], labels: &[bool]) -> Self {
        let mut c = Confusion::default();
        for (&p, &l) in predictions.iter().zip(labels) {
            match (p, l) {
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

    /// F1 = TP / (TP + (FP + FN) / 2), Recall = TP / (TP + FN),
    /// FPR = FP / (FP + TN). Undefined ratios are `None` with a note.
    pub fn metrics(&self) -> DetectionMetrics {
        let mut notes = Vec::new();
        let mut ratio = |num: usize, den: f64, name: &str, why: &str| {
            if den > 0.0 {
                Some(num as f64 / den)
            } else {
                notes.push(format!("{name} undefined: {why}"));
                None
            }
        };
        let f1 = ratio(
            self.tp,
            self.tp as f64 + 0.5 * (self.fp + self.fn_) as f64,
            "f1",
            "no positive labels or predictions",
        );
        let recall = ratio(self.tp, (self.tp + self.fn_) as f64, "recall", "TP + FN = 0");
        let fpr = ratio(self.fp, (self.fp + self.tn) as f64, "fpr", "FP + TN = 0");
        DetectionMetrics {
            f1,
            recall,
            fpr,
            notes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub f1: Option<f64>,
    pub recall: Option<f64>,
    pub fpr: Option<f64>,
    pub notes: Vec<String>,
}

/// Per-window scores and predictions, plus metrics when every window is
/// labeled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub profile: DetectorProfile,
    pub scores: Vec<f64>,
    pub predictions: Vec<bool>,
    pub labels: Vec<Option<bool>>,
    pub confusion: Option<Confusion>,
    pub metrics: Option<DetectionMetrics>,
}

impl DetectionReport {
    pub fn from_scores(profile: DetectorProfile, scores: Vec<f64>, labels: Vec<Option<bool>>) -> Self {
        let predictions: Vec<bool> = scores.iter().map(|&s| profile.is_anomalous(s)).collect();
        let confusion = labels
            .iter()
            .copied()
            .collect::<Option<Vec<bool>>>()
            .filter(|l| !l.is_empty())
            .map(|l| Confusion::from_pairs(&predictions, &l));
        DetectionReport {
            profile,
            metrics: confusion.map(|c| c.metrics()),
            scores,
            predictions,
            labels,
            confusion,
        }
    }

    /// Indices of windows predicted anomalous.
    pub fn flagged(&self) -> Vec<usize> {
        self.predictions
            .iter()
            .enumerate()
            .filter_map(|(i, &p)| p.then_some(i))
            .collect()
    }
}

/// Score and classify every window of `set`.
pub fn classify<M: AnomalyModel + ?Sized>(
    model: &M,
    profile: &DetectorProfile,
    set: &WindowSet,
) -> Result<DetectionReport> {
    if set.is_empty() {
        return Err(Error::Empty("window set to classify".into()));
    }
    let scores = score_windows(model, &set.windows)?;
    Ok(DetectionReport::from_scores(*profile, scores, set.labels.clone()))
}

//! Feature selection and counterfactual explanations for anomalous windows.
//!
//! A counterfactual `x'` starts at the anomalous window `x` and follows
//! plain gradient descent on
//!
//! ```text
//! objective(x') = AS(x', model(x')) + lambda * mean|x - x'|
//! ```
//!
//! with the gradient rows of non-selected features zeroed, so those rows
//! are never touched.

use serde::{Deserialize, Serialize};

use crate::detector::DetectorProfile;
use crate::error::{Error, Result};
use crate::model::AnomalyModel;
use crate::tensor::{anomaly_score_window, mean_abs_diff, Tensor};

/// Parameters of the high-impact feature rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectorConfig {
    /// Multiplier applied to the percentile level.
    pub m: f64,
    /// Percentile (0..=100) of all window scores.
    pub percentile: f64,
    /// Fraction of the window a feature must stay above the level.
    pub duration_fraction: f64,
}

impl Default for SelectorConfig {
    fn default() -> Self {
        SelectorConfig {
            m: 0.75,
            percentile: 90.0,
            duration_fraction: 0.9,
        }
    }
}

impl SelectorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=100.0).contains(&self.percentile)
            || !(0.0..=1.0).contains(&self.duration_fraction)
            || !(self.m >= 0.0 && self.m.is_finite())
        {
            return Err(Error::Config(format!("invalid selector settings {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMask {
    pub selected: Vec<bool>,
    pub rule: SelectorConfig,
    /// Set when no feature met the rule and the max-mean feature was taken.
    pub fallback: bool,
}

impl FeatureMask {
    pub fn all(n: usize) -> Self {
        FeatureMask {
            selected: vec![true; n],
            rule: SelectorConfig::default(),
            fallback: false,
        }
    }

    pub fn count(&self) -> usize {
        self.selected.iter().filter(|&&s| s).count()
    }

    pub fn indices(&self) -> Vec<usize> {
        self.selected
            .iter()
            .enumerate()
            .filter_map(|(i, &s)| s.then_some(i))
            .collect()
    }
}

/// Percentile with linear interpolation between order statistics.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty(), "percentile of empty slice");
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Pick the features whose per-step score exceeds `m * P` (P the chosen
/// percentile over the whole `[n, l]` score matrix) for more than
/// `duration_fraction * l` steps. Falls back to the feature with the
/// largest mean score (lowest index on ties) when none qualifies.
pub fn select_features(asw: &Tensor, cfg: &SelectorConfig) -> Result<FeatureMask> {
    cfg.validate()?;
    if asw.rank() != 2 {
        return Err(Error::shape("score matrix", &[0, 0], asw.shape()));
    }
    let (n, l) = (asw.rows(), asw.cols());
    let level = cfg.m * percentile(asw.data(), cfg.percentile);
    let needed = cfg.duration_fraction * l as f64;
    let mut selected: Vec<bool> = (0..n)
        .map(|j| asw.row(j).iter().filter(|&&v| v > level).count() as f64 > needed)
        .collect();
    let fallback = !selected.contains(&true);
    if fallback {
        let mut best = 0;
        let mut best_mean = f64::NEG_INFINITY;
        for j in 0..n {
            let mean = asw.row(j).iter().sum::<f64>() / l as f64;
            if mean > best_mean {
                best = j;
                best_mean = mean;
            }
        }
        selected[best] = true;
    }
    Ok(FeatureMask {
        selected,
        rule: *cfg,
        fallback,
    })
}

/// Explanation method tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Feature selection followed by masked counterfactual descent.
    Ours,
    /// Counterfactual descent over every feature with a distance penalty.
    Counterfactual,
    /// The model's reconstruction itself.
    Reconstruction,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Ours => "ours",
            Method::Counterfactual => "counterfactual",
            Method::Reconstruction => "reconstruction",
        }
    }

    pub const ALL: [Method; 3] = [Method::Reconstruction, Method::Counterfactual, Method::Ours];
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ours" => Ok(Method::Ours),
            "counterfactual" | "counterfactual_full" => Ok(Method::Counterfactual),
            "reconstruction" => Ok(Method::Reconstruction),
            other => Err(Error::Config(format!(
                "unknown method '{other}' (expected ours, counterfactual or reconstruction)"
            ))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Settings of the counterfactual descent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplainConfig {
    /// Weight of the distance term.
    pub lambda: f64,
    /// Step length.
    pub eta: f64,
    pub max_iters: usize,
    /// Stop as soon as the score drops below the threshold.
    pub early_stop: bool,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        ExplainConfig {
            lambda: 0.0,
            eta: 0.01,
            max_iters: 75_000,
            early_stop: false,
        }
    }
}

impl ExplainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) || !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("invalid explainer settings {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub method: Method,
    pub mask: FeatureMask,
    pub original: Tensor,
    pub counterfactual: Tensor,
    /// Score of the original window.
    pub initial_score: f64,
    /// Score of the returned counterfactual, recomputed.
    pub final_score: f64,
    /// Objective value at the returned iterate.
    pub objective: f64,
    /// Descent steps taken.
    pub iterations: usize,
    /// Step index of the returned iterate (0 is the original window).
    pub best_iteration: usize,
    pub lambda: f64,
}

fn require_anomalous<M: AnomalyModel + ?Sized>(
    model: &M,
    profile: &DetectorProfile,
    x: &Tensor,
) -> Result<f64> {
    let score = model.score(x)?;
    if !profile.is_anomalous(score) {
        return Err(Error::NotAnomalous {
            score,
            threshold: profile.threshold,
        });
    }
    Ok(score)
}

/// Masked gradient-descent counterfactual. Returns the iterate with the
/// lowest objective seen (the original window included).
pub fn explain_counterfactual<M: AnomalyModel + ?Sized>(
    model: &M,
    profile: &DetectorProfile,
    x: &Tensor,
    mask: &FeatureMask,
    cfg: &ExplainConfig,
) -> Result<Explanation> {
    cfg.validate()?;
    let (n, l) = model.input_shape();
    if x.shape() != [n, l] {
        return Err(Error::shape("window", &[n, l], x.shape()));
    }
    if mask.selected.len() != n {
        return Err(Error::shape("feature mask", &[n], &[mask.selected.len()]));
    }
    let initial_score = require_anomalous(model, profile, x)?;
    let rows = mask.indices();
    let m = x.len() as f64;

    let mut current = x.clone();
    let mut best: Option<(Tensor, usize, f64)> = None;
    let mut steps = 0;
    loop {
        let fail = |e: Error| Error::Explain {
            iteration: steps,
            message: e.to_string(),
        };
        let (score, mut grad) = model.score_with_input_grad(&current).map_err(fail)?;
        let objective = if cfg.lambda != 0.0 {
            score + cfg.lambda * mean_abs_diff(x, &current).map_err(fail)?
        } else {
            score
        };
        if !objective.is_finite() {
            return Err(fail(Error::NonFinite("objective".into())));
        }
        if best.as_ref().is_none_or(|b| objective < b.2) {
            best = Some((current.clone(), steps, objective));
        }
        if steps == cfg.max_iters || (cfg.early_stop && score < profile.threshold) {
            break;
        }
        if cfg.lambda != 0.0 {
            for ((g, &c), &o) in grad.data_mut().iter_mut().zip(current.data()).zip(x.data()) {
                *g += cfg.lambda * crate::tensor::sign0(c - o) / m;
            }
        }
        let g = grad.data();
        let cur = current.data_mut();
        for &r in &rows {
            for i in r * l..(r + 1) * l {
                cur[i] -= cfg.eta * g[i];
            }
        }
        if cur.iter().any(|v| !v.is_finite()) {
            return Err(fail(Error::NonFinite("counterfactual iterate".into())));
        }
        steps += 1;
    }

    let (counterfactual, best_iteration, objective) = best.expect("at least one iterate");
    let final_score = model.score(&counterfactual)?;
    Ok(Explanation {
        method: Method::Ours,
        mask: mask.clone(),
        original: x.clone(),
        counterfactual,
        initial_score,
        final_score,
        objective,
        iterations: steps,
        best_iteration,
        lambda: cfg.lambda,
    })
}

/// Select features from the window's score matrix, then run the masked
/// descent on them.
pub fn explain_with_selection<M: AnomalyModel + ?Sized>(
    model: &M,
    profile: &DetectorProfile,
    x: &Tensor,
    selector: &SelectorConfig,
    cfg: &ExplainConfig,
) -> Result<Explanation> {
    let asw = anomaly_score_window(x, &model.reconstruct(x)?)?;
    let mask = select_features(&asw, selector)?;
    explain_counterfactual(model, profile, x, &mask, cfg)
}

/// Counterfactual over every feature with a unit distance weight.
pub fn explain_counterfactual_full<M: AnomalyModel + ?Sized>(
    model: &M,
    profile: &DetectorProfile,
    x: &Tensor,
    eta: f64,
    max_iters: usize,
) -> Result<Explanation> {
    let cfg = ExplainConfig {
        lambda: 1.0,
        eta,
        max_iters,
        early_stop: false,
    };
    let mask = FeatureMask::all(model.input_shape().0);
    let mut e = explain_counterfactual(model, profile, x, &mask, &cfg)?;
    e.method = Method::Counterfactual;
    Ok(e)
}

/// Use the model's reconstruction as the explanation.
pub fn explain_reconstruction<M: AnomalyModel + ?Sized>(model: &M, x: &Tensor) -> Result<Explanation> {
    let (n, l) = model.input_shape();
    if x.shape() != [n, l] {
        return Err(Error::shape("window", &[n, l], x.shape()));
    }
    let counterfactual = model.reconstruct(x)?;
    let final_score = model.score(&counterfactual)?;
    let initial_score = model.score(x)?;
    let objective = final_score;
    Ok(Explanation {
        method: Method::Reconstruction,
        mask: FeatureMask::all(n),
        original: x.clone(),
        counterfactual,
        initial_score,
        final_score,
        objective,
        iterations: 0,
        best_iteration: 0,
        lambda: 0.0,
    })
}

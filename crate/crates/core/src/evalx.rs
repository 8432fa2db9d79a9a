//! Validity, sparsity and distance of counterfactual explanations.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explainer::{Explanation, Method};
use crate::model::AnomalyModel;
use crate::tensor::{mean_abs_diff, Tensor};

/// Default change tolerance for sparsity.
pub const DEFAULT_EPSILON: f64 = 0.005;

/// Whether each counterfactual scores strictly below the threshold.
/// Scores are recomputed with `model`; stored values are ignored.
pub fn validity_flags<M: AnomalyModel + ?Sized>(
    model: &M,
    counterfactuals: &[&Tensor],
    threshold: f64,
) -> Result<Vec<bool>> {
    counterfactuals
        .par_iter()
        .map(|x| Ok(model.score(x)? < threshold))
        .collect()
}

/// Fraction of counterfactuals that the model scores below the threshold.
pub fn validity<M: AnomalyModel + ?Sized>(
    model: &M,
    counterfactuals: &[&Tensor],
    threshold: f64,
) -> Result<f64> {
    if counterfactuals.is_empty() {
        return Err(Error::Empty("explanation set".into()));
    }
    let flags = validity_flags(model, counterfactuals, threshold)?;
    Ok(flags.iter().filter(|&&v| v).count() as f64 / flags.len() as f64)
}

/// Features whose time-averaged absolute change exceeds `epsilon`.
pub fn changed_features(x: &Tensor, cf: &Tensor, epsilon: f64) -> Result<Vec<bool>> {
    if x.shape() != cf.shape() || x.rank() != 2 {
        return Err(Error::shape("counterfactual", x.shape(), cf.shape()));
    }
    Ok((0..x.rows())
        .map(|j| {
            let d: f64 = x.row(j).iter().zip(cf.row(j)).map(|(a, b)| (a - b).abs()).sum();
            d / x.cols() as f64 > epsilon
        })
        .collect())
}

/// Mean over pairs of the fraction of features changed by more than `epsilon`.
pub fn sparsity(pairs: &[(&Tensor, &Tensor)], epsilon: f64) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty("explanation set".into()));
    }
    let mut total = 0.0;
    for (x, cf) in pairs {
        let changed = changed_features(x, cf, epsilon)?;
        total += changed.iter().filter(|&&c| c).count() as f64 / changed.len() as f64;
    }
    Ok(total / pairs.len() as f64)
}

/// Mean over pairs of the mean absolute difference.
pub fn distance(pairs: &[(&Tensor, &Tensor)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty("explanation set".into()));
    }
    let mut total = 0.0;
    for (x, cf) in pairs {
        total += mean_abs_diff(x, cf)?;
    }
    Ok(total / pairs.len() as f64)
}

/// Counterfactual validity split by whether the flagged window was a true
/// or a false positive.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidityTable {
    pub tp_valid: usize,
    pub tp_not_valid: usize,
    pub fp_valid: usize,
    pub fp_not_valid: usize,
}

impl ValidityTable {
    pub fn total(&self) -> usize {
        self.tp_valid + self.tp_not_valid + self.fp_valid + self.fp_not_valid
    }

    pub fn valid(&self) -> usize {
        self.tp_valid + self.fp_valid
    }
}

/// `valid[i]` is the validity of the i-th explanation, `labels[i]` the
/// ground truth of its window (true: anomalous, so a true positive).
pub fn validity_confusion(valid: &[bool], labels: &[bool]) -> Result<ValidityTable> {
    if valid.len() != labels.len() {
        return Err(Error::shape("label vector", &[valid.len()], &[labels.len()]));
    }
    let mut t = ValidityTable::default();
    for (&v, &l) in valid.iter().zip(labels) {
        match (l, v) {
            (true, true) => t.tp_valid += 1,
            (true, false) => t.tp_not_valid += 1,
            (false, true) => t.fp_valid += 1,
            (false, false) => t.fp_not_valid += 1,
        }
    }
    Ok(t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationMetrics {
    pub method: Method,
    pub count: usize,
    pub validity: f64,
    pub sparsity: f64,
    pub distance: f64,
    pub epsilon: f64,
    pub threshold: f64,
    /// Present when every explained window carries a label.
    pub confusion: Option<ValidityTable>,
}

/// Score a set of explanations of one method.
pub fn evaluate<M: AnomalyModel + ?Sized>(
    model: &M,
    method: Method,
    explanations: &[Explanation],
    labels: Option<&[bool]>,
    threshold: f64,
    epsilon: f64,
) -> Result<ExplanationMetrics> {
    if explanations.is_empty() {
        return Err(Error::Empty("explanation set".into()));
    }
    let cfs: Vec<&Tensor> = explanations.iter().map(|e| &e.counterfactual).collect();
    let pairs: Vec<(&Tensor, &Tensor)> = explanations
        .iter()
        .map(|e| (&e.original, &e.counterfactual))
        .collect();
    let flags = validity_flags(model, &cfs, threshold)?;
    let validity = flags.iter().filter(|&&v| v).count() as f64 / flags.len() as f64;
    let confusion = labels.map(|l| validity_confusion(&flags, l)).transpose()?;
    Ok(ExplanationMetrics {
        method,
        count: explanations.len(),
        validity,
        sparsity: sparsity(&pairs, epsilon)?,
        distance: distance(&pairs)?,
        epsilon,
        threshold,
        confusion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Scores a window by its first element.
    struct FirstValue;

    impl AnomalyModel for FirstValue {
        fn input_shape(&self) -> (usize, usize) {
            (1, 1)
        }
        fn reconstruct(&self, x: &Tensor) -> Result<Tensor> {
            Ok(x.clone())
        }
        fn score(&self, x: &Tensor) -> Result<f64> {
            Ok(x.data()[0])
        }
        fn score_with_input_grad(&self, x: &Tensor) -> Result<(f64, Tensor)> {
            let mut g = Tensor::zeros(x.shape());
            g.data_mut()[0] = 1.0;
            Ok((x.data()[0], g))
        }
    }

    fn t(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn identical_pairs() {
        let x = t(&[vec![0.1, 0.2], vec![0.3, 0.4]]);
        assert_eq!(sparsity(&[(&x, &x)], 0.005).unwrap(), 0.0);
        assert_eq!(distance(&[(&x, &x)]).unwrap(), 0.0);
    }

    #[test]
    fn one_feature_shifted() {
        let x = t(&[vec![0.0; 4], vec![0.0; 4], vec![0.0; 4], vec![0.0; 4]]);
        let cf = t(&[vec![0.0; 4], vec![0.2; 4], vec![0.0; 4], vec![0.0; 4]]);
        assert_eq!(sparsity(&[(&x, &cf)], 0.005).unwrap(), 0.25);
        assert!((distance(&[(&x, &cf)]).unwrap() - 0.05).abs() < 1e-15);
    }

    #[test]
    fn small_shifts() {
        let x = t(&[vec![0.3; 5], vec![0.6; 5]]);
        let half = t(&[vec![0.31; 5], vec![0.6; 5]]);
        let tiny = t(&[vec![0.304; 5], vec![0.604; 5]]);
        assert_eq!(sparsity(&[(&x, &half)], DEFAULT_EPSILON).unwrap(), 0.5);
        assert_eq!(sparsity(&[(&x, &tiny)], DEFAULT_EPSILON).unwrap(), 0.0);
        let all = t(&[vec![0.5; 5], vec![0.8; 5]]);
        assert!((distance(&[(&x, &all)]).unwrap() - 0.2).abs() < 1e-12);
    }

    #[test]
    fn sparsity_monotone_in_magnitude_and_epsilon() {
        let x = t(&[vec![0.0; 3], vec![0.0; 3], vec![0.0; 3]]);
        let mut last = 0.0;
        for k in 0..20 {
            let s = k as f64 * 0.001;
            let cf = t(&[vec![s; 3], vec![2.0 * s; 3], vec![0.5 * s; 3]]);
            let v = sparsity(&[(&x, &cf)], DEFAULT_EPSILON).unwrap();
            assert!(v >= last);
            last = v;
            let loose = sparsity(&[(&x, &cf)], 0.001).unwrap();
            assert!(loose >= v);
        }
    }

    #[test]
    fn sparsity_is_strict_above_epsilon() {
        let x = t(&[vec![0.0, 0.0]]);
        let cf = t(&[vec![0.25, 0.25]]);
        assert_eq!(sparsity(&[(&x, &cf)], 0.25).unwrap(), 0.0);
        assert_eq!(sparsity(&[(&x, &cf)], 0.2).unwrap(), 1.0);
    }

    #[test]
    fn validity_counts_strictly_below() {
        let below = t(&[vec![0.5]]);
        let tie = t(&[vec![1.0]]);
        let above = t(&[vec![2.0]]);
        let v = validity(&FirstValue, &[&below, &tie, &above, &below], 1.0).unwrap();
        assert_eq!(v, 0.5);
        assert!(validity(&FirstValue, &[], 1.0).is_err());
    }

    #[test]
    fn confusion_table() {
        let t = validity_confusion(&[true, false, true, false, true], &[true, true, false, false, false])
            .unwrap();
        assert_eq!(
            t,
            ValidityTable {
                tp_valid: 1,
                tp_not_valid: 1,
                fp_valid: 2,
                fp_not_valid: 1
            }
        );
        assert_eq!(t.total(), 5);
        assert!(validity_confusion(&[true], &[]).is_err());
    }
}

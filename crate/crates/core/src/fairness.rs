//! Group-fairness metrics and the group cross-entropy surrogate.
//!
//! Metrics are estimated from samples. An empty conditioning group is an
//! error rather than a NaN.

use crate::data::{split_by_group, LabeledDataset};
use crate::error::{Error, Result};
use crate::model::{group_loss_grads, CeMode, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FairnessReport {
    pub dpd: f64,
    pub eod: f64,
    pub accuracy: f64,
    pub group_positive_rates: [f64; 2],
    pub group_tprs: [f64; 2],
}

/// Mean cross-entropy per sensitive group and their signed difference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurrogateGap {
    pub mu_s0: f64,
    pub mu_s1: f64,
    pub delta_mu: f64,
}

fn check_lengths(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::LengthMismatch(format!("{a} predictions, {b} {what}")));
    }
    Ok(())
}

/// Positive-prediction rate of each group.
pub fn group_positive_rates(predictions: &[u8], sensitive: &[u8]) -> Result<[f64; 2]> {
    check_lengths(predictions.len(), sensitive.len(), "sensitive values")?;
    let mut pos = [0usize; 2];
    let mut total = [0usize; 2];
    for (&p, &s) in predictions.iter().zip(sensitive) {
        total[s as usize] += 1;
        pos[s as usize] += usize::from(p == 1);
    }
    if let Some(g) = total.iter().position(|&t| t == 0) {
        return Err(Error::UndefinedMetric(format!("group {g} empty")));
    }
    Ok([pos[0] as f64 / total[0] as f64, pos[1] as f64 / total[1] as f64])
}

/// True-positive rate of each group.
pub fn group_tprs(predictions: &[u8], labels: &[u8], sensitive: &[u8]) -> Result<[f64; 2]> {
    check_lengths(predictions.len(), labels.len(), "labels")?;
    check_lengths(predictions.len(), sensitive.len(), "sensitive values")?;
    let mut hit = [0usize; 2];
    let mut positives = [0usize; 2];
    for ((&p, &y), &s) in predictions.iter().zip(labels).zip(sensitive) {
        if y == 1 {
            positives[s as usize] += 1;
            hit[s as usize] += usize::from(p == 1);
        }
    }
    if let Some(g) = positives.iter().position(|&t| t == 0) {
        return Err(Error::UndefinedMetric(format!("group {g} has no positive labels")));
    }
    Ok([hit[0] as f64 / positives[0] as f64, hit[1] as f64 / positives[1] as f64])
}

/// Demographic parity difference `|P(pred=1 | S=0) - P(pred=1 | S=1)|`.
pub fn dpd(predictions: &[u8], sensitive: &[u8]) -> Result<f64> {
    let r = group_positive_rates(predictions, sensitive)?;
    Ok((r[0] - r[1]).abs())
}

/// Equal opportunity difference `|TPR_0 - TPR_1|`.
pub fn eod(predictions: &[u8], labels: &[u8], sensitive: &[u8]) -> Result<f64> {
    let r = group_tprs(predictions, labels, sensitive)?;
    Ok((r[0] - r[1]).abs())
}

pub fn accuracy(predictions: &[u8], labels: &[u8]) -> Result<f64> {
    check_lengths(predictions.len(), labels.len(), "labels")?;
    if labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let hits = predictions.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Mean cross-entropy of the true class over `group_indices`.
pub fn group_ce_mu(model: &ModelParams, ds: &LabeledDataset, group_indices: &[usize], ce: CeMode) -> Result<f64> {
    if group_indices.is_empty() {
        return Err(Error::UndefinedMetric("empty group".into()));
    }
    let stats = group_loss_grads(model, ds, group_indices, ce)?;
    Ok((stats.loss_sum[0] + stats.loss_sum[1]) / group_indices.len() as f64)
}

/// Signed gap `mu(S=0) - mu(S=1)` on the whole dataset.
pub fn surrogate_gap(model: &ModelParams, ds: &LabeledDataset, ce: CeMode) -> Result<SurrogateGap> {
    let groups = split_by_group(ds);
    for g in 0..2u8 {
        if groups.group(g).is_empty() {
            return Err(Error::UndefinedMetric(format!("group {g} empty")));
        }
    }
    let mu_s0 = group_ce_mu(model, ds, &groups.s0, ce)?;
    let mu_s1 = group_ce_mu(model, ds, &groups.s1, ce)?;
    Ok(SurrogateGap {
        mu_s0,
        mu_s1,
        delta_mu: mu_s0 - mu_s1,
    })
}

/// Report for a fixed prediction vector against the dataset's labels.
pub fn fairness_report_from_predictions(predictions: &[u8], ds: &LabeledDataset) -> Result<FairnessReport> {
    let group_positive_rates = group_positive_rates(predictions, ds.sensitive_attrs())?;
    let group_tprs = group_tprs(predictions, ds.labels(), ds.sensitive_attrs())?;
    Ok(FairnessReport {
        dpd: (group_positive_rates[0] - group_positive_rates[1]).abs(),
        eod: (group_tprs[0] - group_tprs[1]).abs(),
        accuracy: accuracy(predictions, ds.labels())?,
        group_positive_rates,
        group_tprs,
    })
}

pub fn fairness_report(model: &ModelParams, ds: &LabeledDataset) -> Result<FairnessReport> {
    let predictions = model.predict_dataset(ds)?;
    fairness_report_from_predictions(&predictions, ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Architecture;
    use proptest::prelude::*;

    #[test]
    fn dpd_examples() {
        let pred = [1, 1, 1, 0, 1, 0, 0, 0];
        let sens = [0, 0, 0, 0, 1, 1, 1, 1];
        assert_eq!(dpd(&pred, &sens).unwrap(), 0.5);
        assert_eq!(dpd(&[1, 0, 1, 0], &[0, 0, 1, 1]).unwrap(), 0.0);
        let err = dpd(&[1, 0], &[0, 0]).unwrap_err();
        assert_eq!(err.to_string(), "undefined metric: group 1 empty");
    }

    #[test]
    fn eod_examples() {
        let pred = [1, 1, 1, 0, 0];
        let labels = [1, 1, 1, 1, 0];
        let sens = [0, 0, 1, 1, 1];
        assert_eq!(eod(&pred, &labels, &sens).unwrap(), 0.5);
        assert_eq!(eod(&[1, 1, 0], &[1, 1, 0], &[0, 1, 1]).unwrap(), 0.0);
        assert!(matches!(
            eod(&[1, 1, 0], &[1, 0, 0], &[0, 1, 1]),
            Err(Error::UndefinedMetric(_))
        ));
    }

    fn logit_dataset(rows: &[(f64, u8, u8)]) -> (ModelParams, LabeledDataset) {
        // Linear model whose logit 1 equals the first feature and logit 0 is
        // its negation, so the true-class logit of a row is ±x.
        let feats: Vec<Vec<f64>> = rows.iter().map(|r| vec![r.0]).collect();
        let labels: Vec<f64> = rows.iter().map(|r| f64::from(r.1)).collect();
        let sens: Vec<f64> = rows.iter().map(|r| f64::from(r.2)).collect();
        let ds = LabeledDataset::from_arrays(&feats, &labels, &sens).unwrap();
        let p = ModelParams::from_values(Architecture::Linear { dim: 1 }, vec![-1.0, 0.0, 1.0, 0.0]).unwrap();
        (p, ds)
    }

    #[test]
    fn group_ce_examples() {
        let (p, ds) = logit_dataset(&[(0.0, 1, 0), (0.0, 0, 0), (10.0, 1, 1)]);
        let ln2 = std::f64::consts::LN_2;
        assert!((group_ce_mu(&p, &ds, &[0], CeMode::Sigmoid).unwrap() - ln2).abs() < 1e-15);
        assert!((group_ce_mu(&p, &ds, &[0, 1], CeMode::Sigmoid).unwrap() - ln2).abs() < 1e-15);
        let v = group_ce_mu(&p, &ds, &[2], CeMode::Sigmoid).unwrap();
        assert!((v - 4.539_889_921_686_465e-5).abs() < 1e-18);
        assert!(group_ce_mu(&p, &ds, &[], CeMode::Sigmoid).is_err());
    }

    #[test]
    fn surrogate_gap_sign_and_symmetry() {
        let (p, ds) = logit_dataset(&[(1.5, 1, 0), (-0.5, 0, 0), (1.5, 1, 1), (-0.5, 0, 1)]);
        let g = surrogate_gap(&p, &ds, CeMode::Sigmoid).unwrap();
        assert_eq!(g.delta_mu, 0.0);

        // Logits chosen so that mu_s0 = 0.8 and mu_s1 = 0.5 under sigmoid CE:
        // softplus(-q) = m  <=>  q = -ln(e^m - 1).
        let q0 = -(0.8f64.exp_m1()).ln();
        let q1 = -(0.5f64.exp_m1()).ln();
        let (p, ds) = logit_dataset(&[(q0, 1, 0), (q1, 1, 1)]);
        let g = surrogate_gap(&p, &ds, CeMode::Sigmoid).unwrap();
        assert!((g.mu_s0 - 0.8).abs() < 1e-12 && (g.mu_s1 - 0.5).abs() < 1e-12);
        assert!((g.delta_mu - 0.3).abs() < 1e-12);
        assert_eq!(g.delta_mu, g.mu_s0 - g.mu_s1);

        let (p, swapped) = logit_dataset(&[(q0, 1, 1), (q1, 1, 0)]);
        let s = surrogate_gap(&p, &swapped, CeMode::Sigmoid).unwrap();
        assert_eq!(s.delta_mu, -g.delta_mu);

        let (p, one_sided) = logit_dataset(&[(q0, 1, 1), (q1, 1, 1)]);
        assert!(surrogate_gap(&p, &one_sided, CeMode::Sigmoid).is_err());
    }

    #[test]
    fn report_examples() {
        let (_, ds) = logit_dataset(&[(1.0, 1, 0), (-1.0, 0, 0), (1.0, 1, 1), (-1.0, 0, 1), (1.0, 1, 1)]);
        // Perfect classifier: predictions equal labels.
        let r = fairness_report_from_predictions(ds.labels(), &ds).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.dpd, (0.5f64 - 2.0 / 3.0).abs());
        assert_eq!(r.eod, 0.0);

        let ones = vec![1u8; ds.len()];
        let r = fairness_report_from_predictions(&ones, &ds).unwrap();
        assert_eq!((r.dpd, r.eod), (0.0, 0.0));
        assert_eq!(r.accuracy, 3.0 / 5.0);

        let pred = [1, 1, 0, 0, 1];
        let r = fairness_report_from_predictions(&pred, &ds).unwrap();
        assert_eq!(r.dpd, dpd(&pred, ds.sensitive_attrs()).unwrap());
        assert_eq!(r.eod, eod(&pred, ds.labels(), ds.sensitive_attrs()).unwrap());
        assert_eq!(r.accuracy, accuracy(&pred, ds.labels()).unwrap());
    }

    #[test]
    fn model_report_uses_argmax_predictions() {
        let (p, ds) = logit_dataset(&[(1.0, 1, 0), (-1.0, 0, 0), (1.0, 1, 1), (-1.0, 1, 1)]);
        let r = fairness_report(&p, &ds).unwrap();
        assert_eq!(r.accuracy, 0.75);
        assert_eq!(r.group_tprs, [1.0, 0.5]);
    }

    proptest! {
        #[test]
        fn metrics_bounded_and_permutation_invariant(
            rows in proptest::collection::vec((0u8..2, 0u8..2, 0u8..2), 4..40),
            rot in 0usize..40,
        ) {
            let mut rows = rows;
            // Guarantee both groups with a positive label.
            rows.extend([(1, 1, 0), (1, 1, 1)]);
            let pred: Vec<u8> = rows.iter().map(|r| r.0).collect();
            let y: Vec<u8> = rows.iter().map(|r| r.1).collect();
            let s: Vec<u8> = rows.iter().map(|r| r.2).collect();
            let d = dpd(&pred, &s).unwrap();
            let e = eod(&pred, &y, &s).unwrap();
            prop_assert!((0.0..=1.0).contains(&d) && (0.0..=1.0).contains(&e));

            let k = rot % rows.len();
            let mut rotated = rows.clone();
            rotated.rotate_left(k);
            rotated.reverse();
            let pred: Vec<u8> = rotated.iter().map(|r| r.0).collect();
            let y: Vec<u8> = rotated.iter().map(|r| r.1).collect();
            let s: Vec<u8> = rotated.iter().map(|r| r.2).collect();
            prop_assert_eq!(dpd(&pred, &s).unwrap(), d);
            prop_assert_eq!(eod(&pred, &y, &s).unwrap(), e);
        }

        #[test]
        fn group_ce_nonnegative_and_monotone(q in -30.0f64..30.0, dq in 0.01f64..5.0) {
            let (p, ds) = logit_dataset(&[(q, 1, 0), (q + dq, 1, 0)]);
            let lo = group_ce_mu(&p, &ds, &[0], CeMode::Sigmoid).unwrap();
            let hi = group_ce_mu(&p, &ds, &[1], CeMode::Sigmoid).unwrap();
            prop_assert!(lo >= 0.0 && hi >= 0.0);
            prop_assert!(hi <= lo);
        }
    }
}

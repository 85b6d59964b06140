use crate::error::{Error, Result};

/// Area under the ROC curve in its Mann-Whitney form: the fraction of
/// (positive, negative) pairs ranked correctly, ties counting one half.
///
/// Computed from a single sort by accumulating twice the U statistic as an
/// integer, so the result equals exhaustive pair counting exactly.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            got: scores.len(),
        });
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::NonFinite(format!("score {s}")));
    }
    if let Some((row, l)) = labels.iter().enumerate().find(|(_, l)| **l > 1) {
        return Err(Error::UnknownLabel {
            row,
            value: l.to_string(),
        });
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count() as u64;
    let n_neg = labels.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut twice_u: u64 = 0;
    let mut neg_below: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (mut pos, mut neg) = (0u64, 0u64);
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1 {
                pos += 1;
            } else {
                neg += 1;
            }
            i += 1;
        }
        twice_u += 2 * pos * neg_below + pos * neg;
        neg_below += neg;
    }
    Ok(twice_u as f64 / (2 * n_pos * n_neg) as f64)
}

/// Percentage of the gap between the shifted-data baseline and the full-data
/// model that a method recovers: `100 (m - ood) / (cap - ood)`. `None` when
/// the two reference AUCs coincide.
pub fn gap_closed(auc_method: f64, auc_ood: f64, auc_cap: f64) -> Option<f64> {
    let denom = auc_cap - auc_ood;
    if denom == 0.0 || !denom.is_finite() {
        return None;
    }
    Some(100.0 * (auc_method - auc_ood) / denom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn small_cases() {
        assert_eq!(auc(&[0.9, 0.8, 0.7, 0.1], &[1, 0, 1, 0]).unwrap(), 0.75);
        assert_eq!(auc(&[0.2, 0.9, 0.1, 0.8], &[0, 1, 0, 1]).unwrap(), 1.0);
        assert_eq!(auc(&[0.5; 6], &[0, 1, 0, 1, 1, 0]).unwrap(), 0.5);
        // Signed zeros compare equal.
        assert_eq!(auc(&[0.0, -0.0], &[1, 0]).unwrap(), 0.5);
    }

    #[test]
    fn errors() {
        assert!(matches!(auc(&[0.1, 0.2], &[1, 1]), Err(Error::SingleClass)));
        assert!(auc(&[0.1], &[1, 0]).is_err());
        assert!(auc(&[f64::NAN, 0.2], &[1, 0]).is_err());
        assert!(auc(&[0.1, 0.2], &[2, 0]).is_err());
    }

    #[test]
    fn gap_closed_reference_points() {
        assert_eq!(gap_closed(0.90, 0.87, 0.93), Some(50.0));
        assert_eq!(gap_closed(0.87, 0.87, 0.93), Some(0.0));
        assert_eq!(gap_closed(0.93, 0.87, 0.93), Some(100.0));
        assert_eq!(gap_closed(0.9, 0.8, 0.8), None);
        let g = gap_closed(0.69, 0.70, 0.77).unwrap();
        assert!((g + 100.0 / 7.0).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn reversal_and_monotone_invariance(
            raw in prop::collection::vec((-1e3f64..1e3, 0u8..2), 2..60)
        ) {
            let scores: Vec<f64> = raw.iter().map(|r| r.0).collect();
            let labels: Vec<u8> = raw.iter().map(|r| r.1).collect();
            prop_assume!(labels.contains(&0) && labels.contains(&1));
            let a = auc(&scores, &labels).unwrap();
            prop_assert!((0.0..=1.0).contains(&a));
            let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
            // Tied pairs count one half in both directions.
            prop_assert!((a + auc(&neg, &labels).unwrap() - 1.0).abs() < 1e-12);
            let squashed: Vec<f64> = scores.iter().map(|s| (s / 100.0).atan() * 3.0 + 7.0).collect();
            prop_assert_eq!(a, auc(&squashed, &labels).unwrap());
        }
    }
}

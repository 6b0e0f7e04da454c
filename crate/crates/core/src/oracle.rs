//! Oracle rejectors: given a fraction `f`, drop the `floor(f * n)` images with
//! the highest absolute error and report the MAE of the rest. They need
//! ground truth at decision time, so they are reference bounds rather than
//! deployable rejectors.

use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::ImageRecord;
use crate::parallel::map_indexed;

/// Lowest absolute error reachable by any confidence threshold.
///
/// A threshold can only produce the counts `n - i` where `i` is the first
/// index of a distinct sorted score, plus zero (a threshold above every
/// score), so those are the only candidates.
pub fn best_case_ae(image: &ImageRecord) -> u64 {
    let scores = image.scores();
    let n = scores.len() as u64;
    let gt = image.gt_count();
    // A count of zero needs a threshold above every score, which [0, 1]
    // cannot offer once a box scores exactly 1.
    let mut best = match scores.last() {
        Some(&top) if top >= 1.0 => u64::MAX,
        _ => gt,
    };
    for (i, s) in scores.iter().enumerate() {
        if i == 0 || scores[i - 1] != *s {
            best = best.min((n - i as u64).abs_diff(gt));
        }
    }
    best
}

/// Lowest absolute error over an explicit set of thresholds.
pub fn best_case_ae_among(image: &ImageRecord, thresholds: &[f64]) -> Option<u64> {
    thresholds.iter().map(|&t| image.absolute_error(t)).min()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum OracleMode {
    /// Every image evaluated at one fixed box threshold.
    ConfidenceAware { threshold: f64 },
    /// Every image at its own best threshold, drawn from `candidates` or,
    /// when absent, from all thresholds.
    BestCase { candidates: Option<Vec<f64>> },
}

impl OracleMode {
    fn validate(&self) -> Result<()> {
        let bad = |t: &f64| !(0.0..=1.0).contains(t);
        match self {
            OracleMode::ConfidenceAware { threshold } if bad(threshold) => Err(Error::Usage(
                format!("oracle threshold {threshold} outside [0, 1]"),
            )),
            OracleMode::BestCase {
                candidates: Some(c),
            } if c.is_empty() || c.iter().any(bad) => Err(Error::Usage(
                "oracle threshold set must be non-empty with values in [0, 1]".into(),
            )),
            _ => Ok(()),
        }
    }

    pub fn image_error(&self, image: &ImageRecord) -> u64 {
        match self {
            OracleMode::ConfidenceAware { threshold } => image.absolute_error(*threshold),
            OracleMode::BestCase { candidates: None } => best_case_ae(image),
            OracleMode::BestCase {
                candidates: Some(c),
            } => best_case_ae_among(image, c).expect("validated non-empty"),
        }
    }
}

impl fmt::Display for OracleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OracleMode::ConfidenceAware { threshold } => write!(f, "aware@{threshold}"),
            OracleMode::BestCase { .. } => f.write_str("best"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OraclePoint {
    pub fraction: f64,
    pub mae: f64,
    pub n_kept: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleCurve {
    pub mode: OracleMode,
    pub points: Vec<OraclePoint>,
}

/// `floor(fraction * n)`, tolerant of products like `0.29 * 100` landing a
/// hair below an integer.
fn dropped(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64 + 1e-9).floor() as usize).min(n.saturating_sub(1))
}

pub fn validate_fractions(fractions: &[f64]) -> Result<()> {
    if fractions.is_empty() {
        return Err(Error::Usage("no oracle fractions given".into()));
    }
    if let Some(f) = fractions.iter().find(|f| !(0.0..1.0).contains(*f)) {
        return Err(Error::Usage(format!(
            "oracle fraction {f} outside [0, 1): the mean of zero images is undefined"
        )));
    }
    if fractions.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Usage(
            "oracle fractions must be strictly increasing".into(),
        ));
    }
    Ok(())
}

/// Per-image errors ordered worst first, ties broken by ascending image id.
pub fn ranked_errors(images: &[ImageRecord], mode: &OracleMode) -> Vec<u64> {
    let errors = map_indexed(images.len(), |i| mode.image_error(&images[i]));
    let mut order: Vec<usize> = (0..images.len()).collect();
    order.sort_by(|&a, &b| {
        errors[b]
            .cmp(&errors[a])
            .then_with(|| images[a].image_id().cmp(images[b].image_id()))
    });
    order.into_iter().map(|i| errors[i]).collect()
}

pub fn oracle_curve(
    images: &[ImageRecord],
    mode: &OracleMode,
    fractions: &[f64],
) -> Result<OracleCurve> {
    if images.is_empty() {
        return Err(Error::Degenerate("oracle over an empty dataset".into()));
    }
    mode.validate()?;
    validate_fractions(fractions)?;
    let ranked = ranked_errors(images, mode);
    let n = ranked.len();
    // tail[k] = sum of ranked[k..]
    let mut tail = vec![0u128; n + 1];
    for k in (0..n).rev() {
        tail[k] = tail[k + 1] + ranked[k] as u128;
    }
    let points = fractions
        .iter()
        .map(|&fraction| {
            let drop = dropped(fraction, n);
            let n_kept = n - drop;
            OraclePoint {
                fraction,
                mae: tail[drop] as f64 / n_kept as f64,
                n_kept,
            }
        })
        .collect();
    Ok(OracleCurve {
        mode: mode.clone(),
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::mean_absolute_error;
    use proptest::prelude::*;

    fn img(id: &str, scores: &[f64], gt: u64) -> ImageRecord {
        ImageRecord::new(id, "K20".parse().unwrap(), scores.to_vec(), gt).unwrap()
    }

    #[test]
    fn full_confidence_box_cannot_be_dropped() {
        assert_eq!(best_case_ae(&img("a", &[1.0], 0)), 1);
        assert_eq!(best_case_ae(&img("b", &[0.4, 1.0, 1.0], 0)), 2);
        assert_eq!(best_case_ae(&img("c", &[0.999], 0)), 0);
    }

    /// Images whose error at threshold 0.5 is exactly `ae` (no boxes, gt = ae).
    fn with_errors(aes: &[u64]) -> Vec<ImageRecord> {
        aes.iter()
            .enumerate()
            .map(|(i, &ae)| img(&format!("im{i:03}"), &[], ae))
            .collect()
    }

    #[test]
    fn best_case_examples() {
        assert_eq!(best_case_ae(&img("a", &[0.9, 0.2], 1)), 0);
        assert_eq!(best_case_ae(&img("a", &[0.5, 0.5], 1)), 1);
        assert_eq!(best_case_ae(&img("a", &[], 3)), 3);
        assert_eq!(best_case_ae(&img("a", &[0.3, 0.3, 0.3], 5)), 2);
    }

    #[test]
    fn best_case_among_restricted_thresholds() {
        let im = img("a", &[0.1, 0.2, 0.9], 2);
        assert_eq!(best_case_ae(&im), 0);
        assert_eq!(best_case_ae_among(&im, &[0.5]), Some(1));
        assert_eq!(best_case_ae_among(&im, &[]), None);
    }

    #[test]
    fn sort_and_drop() {
        let images = with_errors(&[5, 3, 1, 0]);
        let mode = OracleMode::ConfidenceAware { threshold: 0.5 };
        let curve = oracle_curve(&images, &mode, &[0.0, 0.25]).unwrap();
        assert_eq!(curve.points[0].mae, 2.25);
        assert_eq!(curve.points[0].n_kept, 4);
        assert_eq!(curve.points[1].mae, 4.0 / 3.0);
        assert_eq!(curve.points[1].n_kept, 3);
    }

    #[test]
    fn floor_rounding_of_dropped_images() {
        assert_eq!(dropped(0.29, 100), 29);
        assert_eq!(dropped(0.25, 10), 2);
        assert_eq!(dropped(0.95, 1), 0);
        assert_eq!(dropped(0.9, 10), 9);
    }

    #[test]
    fn rejects_bad_fractions() {
        let images = with_errors(&[1, 2]);
        let mode = OracleMode::BestCase { candidates: None };
        for bad in [&[1.0][..], &[-0.1], &[0.5, 0.2], &[]] {
            assert!(matches!(
                oracle_curve(&images, &mode, bad),
                Err(Error::Usage(_))
            ));
        }
    }

    #[test]
    fn tie_order_uses_image_id() {
        let images = vec![img("b", &[], 2), img("a", &[], 2), img("c", &[], 1)];
        let mode = OracleMode::ConfidenceAware { threshold: 0.5 };
        assert_eq!(ranked_errors(&images, &mode), vec![2, 2, 1]);
    }

    fn dataset() -> impl Strategy<Value = Vec<ImageRecord>> {
        prop::collection::vec(
            (prop::collection::vec(0.0f64..=1.0, 0..12), 0u64..10),
            1..60,
        )
        .prop_map(|v| {
            v.into_iter()
                .enumerate()
                .map(|(i, (s, gt))| img(&format!("i{i}"), &s, gt))
                .collect()
        })
    }

    fn fractions() -> Vec<f64> {
        (0..20).map(|i| i as f64 * 0.05).collect()
    }

    proptest! {
        #[test]
        fn curve_is_non_increasing_and_dominated(images in dataset(), t in 0.0f64..=1.0) {
            let aware = oracle_curve(&images, &OracleMode::ConfidenceAware { threshold: t }, &fractions()).unwrap();
            let best = oracle_curve(&images, &OracleMode::BestCase { candidates: None }, &fractions()).unwrap();
            for w in aware.points.windows(2) {
                prop_assert!(w[1].mae <= w[0].mae);
            }
            for (a, b) in aware.points.iter().zip(&best.points) {
                prop_assert!(b.mae <= a.mae);
            }
            let full: Vec<u64> = images.iter().map(|im| im.absolute_error(t)).collect();
            prop_assert_eq!(aware.points[0].mae, mean_absolute_error(&full).unwrap());
        }

        #[test]
        fn best_case_bounds_dense_grid(scores in prop::collection::vec(0.0f64..=1.0, 0..15), gt in 0u64..20) {
            let im = img("x", &scores, gt);
            let best = best_case_ae(&im);
            let dense = (0..=1000).map(|i| im.absolute_error(i as f64 / 1000.0)).min().unwrap();
            prop_assert!(best <= dense);
            for &s in im.scores() {
                prop_assert!(best <= im.absolute_error(s));
            }
        }
    }
}

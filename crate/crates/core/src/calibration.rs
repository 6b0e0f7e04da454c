//! Threshold selection on validation data.
//!
//! Calibration runs in two stages. The confidence sweep picks the box
//! threshold that minimizes MAE over every image. The median sweep then holds
//! that threshold fixed and varies the median cutoff. At each cutoff it
//! partitions the images and measures how strongly the accepted side has
//! lower absolute error than the rejected side.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{gate_with, EmptyMedian, ImageRecord, LevelKind, RejectionLevel};
use crate::parallel::{derive_seed, map_indexed};
use crate::stats::{
    bootstrap_effect_size_ci, bootstrap_mae_ci, mean_absolute_error, BootstrapConfig,
    IntervalEstimate,
};

const CONFIDENCE_STREAM: u64 = 1;
const MEDIAN_STREAM: u64 = 2;
const EVALUATION_STREAM: u64 = 3;

/// `0, step, 2*step, ..., 1`. `step` must divide 1 evenly.
pub fn unit_grid(step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::Usage(format!(
            "grid step must lie in (0, 1], got {step}"
        )));
    }
    let n = (1.0 / step).round();
    if (n * step - 1.0).abs() > 1e-9 {
        return Err(Error::Usage(format!("grid step {step} does not divide 1")));
    }
    let n = n as u32;
    Ok((0..=n).map(|i| f64::from(i) / f64::from(n)).collect())
}

fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Usage("threshold grid is empty".into()));
    }
    if grid.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Usage("grid values must lie in [0, 1]".into()));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Usage(
            "grid values must be strictly increasing".into(),
        ));
    }
    Ok(())
}

fn require_images(images: &[ImageRecord]) -> Result<()> {
    if images.is_empty() {
        return Err(Error::Validation("dataset is empty".into()));
    }
    Ok(())
}

fn stream_seed(cfg: &BootstrapConfig, stream: u64, index: usize) -> BootstrapConfig {
    cfg.with_seed(derive_seed(derive_seed(cfg.seed, stream), index as u64))
}

pub fn absolute_errors(images: &[ImageRecord], threshold: f64) -> Vec<u64> {
    images
        .iter()
        .map(|im| im.absolute_error(threshold))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub threshold: f64,
    pub mae: IntervalEstimate,
    pub n_images: usize,
}

/// MAE over all images (no gating) at each confidence threshold.
pub fn sweep_confidence(
    images: &[ImageRecord],
    grid: &[f64],
    cfg: &BootstrapConfig,
) -> Result<Vec<SweepPoint>> {
    require_images(images)?;
    validate_grid(grid)?;
    cfg.validate()?;
    map_indexed(grid.len(), |i| {
        let threshold = grid[i];
        let aes = absolute_errors(images, threshold);
        Ok(SweepPoint {
            threshold,
            mae: bootstrap_mae_ci(&aes, &stream_seed(cfg, CONFIDENCE_STREAM, i))?,
            n_images: images.len(),
        })
    })
    .into_iter()
    .collect()
}

/// Threshold with the lowest MAE; the smallest threshold wins ties.
pub fn optimal_confidence(sweep: &[SweepPoint]) -> Result<f64> {
    let mut best: Option<&SweepPoint> = None;
    for p in sweep {
        match best {
            Some(b) if p.mae.point > b.mae.point => {}
            Some(b) if p.mae.point == b.mae.point && p.threshold >= b.threshold => {}
            _ => best = Some(p),
        }
    }
    best.map(|p| p.threshold)
        .ok_or_else(|| Error::Degenerate("empty confidence sweep".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MedianSweepPoint {
    pub median: f64,
    /// `None` when either partition is empty.
    pub effect: Option<IntervalEstimate>,
    pub rejected_fraction: f64,
    pub n_accepted: usize,
    pub n_rejected: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MedianSweep {
    pub conf_threshold: f64,
    pub points: Vec<MedianSweepPoint>,
}

impl MedianSweep {
    pub fn point_at(&self, median: f64) -> Option<&MedianSweepPoint> {
        self.points.iter().find(|p| p.median == median)
    }
}

/// Effect size between accepted and rejected partitions at each median
/// cutoff, with the box threshold fixed at `conf_threshold`.
pub fn sweep_median(
    images: &[ImageRecord],
    conf_threshold: f64,
    grid: &[f64],
    cfg: &BootstrapConfig,
    empty: EmptyMedian,
) -> Result<MedianSweep> {
    require_images(images)?;
    validate_grid(grid)?;
    cfg.validate()?;
    if !(0.0..=1.0).contains(&conf_threshold) {
        return Err(Error::Usage(format!(
            "confidence threshold {conf_threshold} outside [0, 1]"
        )));
    }
    let probe = RejectionLevel::new(conf_threshold, 0.0, LevelKind::Absolute)?;
    let scored: Vec<(f64, u64)> = images
        .iter()
        .map(|im| {
            (
                gate_with(im, &probe, empty).survivor_median,
                im.absolute_error(conf_threshold),
            )
        })
        .collect();

    let points = map_indexed(grid.len(), |i| {
        let median = grid[i];
        let (accepted, rejected): (Vec<_>, Vec<_>) = scored.iter().partition(|(m, _)| *m >= median);
        let accepted: Vec<u64> = accepted.into_iter().map(|(_, ae)| ae).collect();
        let rejected: Vec<u64> = rejected.into_iter().map(|(_, ae)| ae).collect();
        let effect = if accepted.is_empty() || rejected.is_empty() {
            None
        } else {
            Some(bootstrap_effect_size_ci(
                &accepted,
                &rejected,
                &stream_seed(cfg, MEDIAN_STREAM, i),
            ))
        };
        let point = MedianSweepPoint {
            median,
            effect: None,
            rejected_fraction: rejected.len() as f64 / scored.len() as f64,
            n_accepted: accepted.len(),
            n_rejected: rejected.len(),
        };
        match effect {
            Some(Err(e)) => Err(e),
            Some(Ok(ci)) => Ok(MedianSweepPoint {
                effect: Some(ci),
                ..point
            }),
            None => Ok(point),
        }
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    Ok(MedianSweep {
        conf_threshold,
        points,
    })
}

/// The cutoff with the largest effect size; the smallest cutoff wins ties.
pub fn select_absolute(sweep: &MedianSweep) -> Result<RejectionLevel> {
    let mut best: Option<(f64, f64)> = None;
    for p in &sweep.points {
        let Some(effect) = p.effect else { continue };
        match best {
            Some((_, e)) if effect.point <= e => {}
            _ => best = Some((p.median, effect.point)),
        }
    }
    let (median, _) = best.ok_or_else(|| {
        Error::Degenerate(format!(
            "every median cutoff leaves a partition empty at confidence {}",
            sweep.conf_threshold
        ))
    })?;
    RejectionLevel::new(sweep.conf_threshold, median, LevelKind::Absolute)
}

/// Among cutoffs whose effect interval reaches the absolute level's effect
/// size, the one rejecting the fewest images; the smallest cutoff wins ties.
pub fn select_relative(sweep: &MedianSweep, absolute: &RejectionLevel) -> Result<RejectionLevel> {
    let target = sweep
        .point_at(absolute.median_threshold())
        .and_then(|p| p.effect)
        .ok_or_else(|| {
            Error::Validation(format!(
                "absolute cutoff {} is not a defined point of this sweep",
                absolute.median_threshold()
            ))
        })?
        .point;
    let mut best: Option<&MedianSweepPoint> = None;
    for p in &sweep.points {
        let Some(effect) = p.effect else { continue };
        if effect.hi < target {
            continue;
        }
        match best {
            Some(b) if p.n_rejected >= b.n_rejected => {}
            _ => best = Some(p),
        }
    }
    let chosen = best.expect("absolute point is always a candidate");
    RejectionLevel::new(sweep.conf_threshold, chosen.median, LevelKind::Relative)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationConfig {
    /// Skip the confidence sweep and use this box threshold.
    pub conf_threshold: Option<f64>,
    pub confidence_grid: Vec<f64>,
    pub median_grid: Vec<f64>,
    pub bootstrap: BootstrapConfig,
    pub empty_median: EmptyMedian,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        let grid = unit_grid(0.01).expect("0.01 divides 1");
        CalibrationConfig {
            conf_threshold: None,
            confidence_grid: grid.clone(),
            median_grid: grid,
            bootstrap: BootstrapConfig::default(),
            empty_median: EmptyMedian::Zero,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationReport {
    pub conf_threshold: f64,
    /// Present when the threshold was chosen by sweeping.
    pub confidence_sweep: Option<Vec<SweepPoint>>,
    pub median_sweep: MedianSweep,
    pub absolute: RejectionLevel,
    pub relative: RejectionLevel,
    pub is_global: bool,
}

impl CalibrationReport {
    /// Distinct levels: one global level, or absolute then relative.
    pub fn levels(&self) -> Vec<RejectionLevel> {
        if self.is_global {
            vec![self.absolute]
        } else {
            vec![self.absolute, self.relative]
        }
    }

    pub fn point_for(&self, level: &RejectionLevel) -> &MedianSweepPoint {
        self.median_sweep
            .point_at(level.median_threshold())
            .expect("levels are drawn from the sweep")
    }
}

pub fn calibrate(images: &[ImageRecord], cfg: &CalibrationConfig) -> Result<CalibrationReport> {
    require_images(images)?;
    let (conf_threshold, confidence_sweep) = match cfg.conf_threshold {
        Some(t) => (t, None),
        None => {
            let sweep = sweep_confidence(images, &cfg.confidence_grid, &cfg.bootstrap)?;
            (optimal_confidence(&sweep)?, Some(sweep))
        }
    };
    let median_sweep = sweep_median(
        images,
        conf_threshold,
        &cfg.median_grid,
        &cfg.bootstrap,
        cfg.empty_median,
    )?;
    let absolute = select_absolute(&median_sweep)?;
    let relative = select_relative(&median_sweep, &absolute)?;
    let is_global = absolute.median_threshold() == relative.median_threshold();
    let (absolute, relative) = if is_global {
        (
            absolute.with_kind(LevelKind::Global),
            relative.with_kind(LevelKind::Global),
        )
    } else {
        (absolute, relative)
    };
    Ok(CalibrationReport {
        conf_threshold,
        confidence_sweep,
        median_sweep,
        absolute,
        relative,
        is_global,
    })
}

/// Test-set performance of one fixed rejection level.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelEvaluation {
    pub level: RejectionLevel,
    /// MAE over accepted images.
    pub mae: IntervalEstimate,
    /// MAE over every image at the level's confidence threshold.
    pub ungated_mae: f64,
    pub rejected_fraction: f64,
    pub n_accepted: usize,
    pub n_rejected: usize,
}

pub fn evaluate_level(
    images: &[ImageRecord],
    level: &RejectionLevel,
    cfg: &BootstrapConfig,
    empty: EmptyMedian,
) -> Result<LevelEvaluation> {
    require_images(images)?;
    let t = level.conf_threshold();
    let accepted: Vec<u64> = images
        .iter()
        .filter(|im| gate_with(im, level, empty).accepted)
        .map(|im| im.absolute_error(t))
        .collect();
    if accepted.is_empty() {
        return Err(Error::Degenerate(format!(
            "level {level} rejects all {} images",
            images.len()
        )));
    }
    let n_rejected = images.len() - accepted.len();
    Ok(LevelEvaluation {
        level: *level,
        mae: bootstrap_mae_ci(&accepted, &stream_seed(cfg, EVALUATION_STREAM, 0))?,
        ungated_mae: mean_absolute_error(&absolute_errors(images, t))?,
        rejected_fraction: n_rejected as f64 / images.len() as f64,
        n_accepted: accepted.len(),
        n_rejected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(id: &str, scores: &[f64], gt: u64) -> ImageRecord {
        ImageRecord::new(id, "K19".parse().unwrap(), scores.to_vec(), gt).unwrap()
    }

    fn quick() -> BootstrapConfig {
        BootstrapConfig::new(200, 0.05, 5).unwrap()
    }

    fn sweep_point(threshold: f64, mae: f64) -> SweepPoint {
        SweepPoint {
            threshold,
            mae: IntervalEstimate::exact(mae),
            n_images: 1,
        }
    }

    fn median_point(
        median: f64,
        effect: Option<(f64, f64)>,
        n_rejected: usize,
    ) -> MedianSweepPoint {
        MedianSweepPoint {
            median,
            effect: effect.map(|(point, hi)| IntervalEstimate { point, lo: 0.0, hi }),
            rejected_fraction: n_rejected as f64 / 10.0,
            n_accepted: 10 - n_rejected,
            n_rejected,
        }
    }

    #[test]
    fn unit_grid_is_exact() {
        let g = unit_grid(0.01).unwrap();
        assert_eq!(g.len(), 101);
        assert_eq!(g[41], 0.41);
        assert_eq!(g[17], 0.17);
        assert_eq!(*g.last().unwrap(), 1.0);
        assert!(unit_grid(0.03).is_err());
        assert!(unit_grid(0.0).is_err());
    }

    #[test]
    fn single_image_sweep() {
        let pts = sweep_confidence(&[img("a", &[0.9], 1)], &[0.5], &quick()).unwrap();
        assert_eq!(pts[0].mae.point, 0.0);
        assert!(sweep_confidence(&[], &[0.5], &quick()).is_err());
    }

    #[test]
    fn two_image_sweep_matches_brute_force() {
        let images = [img("a", &[0.9], 1), img("b", &[0.4, 0.9], 1)];
        let grid = unit_grid(0.01).unwrap();
        let pts = sweep_confidence(&images, &grid, &quick()).unwrap();
        for p in &pts {
            let brute = images
                .iter()
                .map(|im| {
                    let count = im.scores().iter().filter(|&&s| s >= p.threshold).count() as f64;
                    (count - im.gt_count() as f64).abs()
                })
                .sum::<f64>()
                / 2.0;
            assert_eq!(p.mae.point, brute, "t={}", p.threshold);
            let expected = if p.threshold <= 0.40 {
                0.5
            } else if p.threshold <= 0.90 {
                0.0
            } else {
                1.0
            };
            assert_eq!(p.mae.point, expected, "t={}", p.threshold);
        }
        assert_eq!(optimal_confidence(&pts).unwrap(), 0.41);
    }

    #[test]
    fn optimal_confidence_tie_breaks_low() {
        let s = [
            sweep_point(0.1, 3.0),
            sweep_point(0.2, 1.0),
            sweep_point(0.3, 2.0),
        ];
        assert_eq!(optimal_confidence(&s).unwrap(), 0.2);
        let s = [sweep_point(0.2, 1.0), sweep_point(0.4, 1.0)];
        assert_eq!(optimal_confidence(&s).unwrap(), 0.2);
        assert!(optimal_confidence(&[]).is_err());
    }

    /// Images with survivor medians 0.9, 0.8, 0.2, 0.1 and AEs 0, 0, 5, 7.
    fn four_images() -> Vec<ImageRecord> {
        vec![
            img("a", &[0.9], 1),
            img("b", &[0.8], 1),
            img("c", &[0.2], 6),
            img("d", &[0.1], 8),
        ]
    }

    #[test]
    fn median_sweep_partitions() {
        let sweep = sweep_median(
            &four_images(),
            0.0,
            &[0.0, 0.5],
            &quick(),
            EmptyMedian::Zero,
        )
        .unwrap();
        let at0 = &sweep.points[0];
        assert!(at0.effect.is_none());
        assert_eq!((at0.n_accepted, at0.n_rejected), (4, 0));
        let at5 = &sweep.points[1];
        assert_eq!(at5.effect.unwrap().point, 1.0);
        assert_eq!(at5.rejected_fraction, 0.5);
    }

    #[test]
    fn identical_errors_give_half_everywhere() {
        let images: Vec<_> = (0..6)
            .map(|i| img(&format!("i{i}"), &[0.1 + 0.15 * i as f64], 2))
            .collect();
        let sweep = sweep_median(
            &images,
            0.0,
            &unit_grid(0.1).unwrap(),
            &quick(),
            EmptyMedian::Zero,
        )
        .unwrap();
        for p in sweep.points.iter().filter(|p| p.effect.is_some()) {
            assert_eq!(p.effect.unwrap().point, 0.5);
        }
    }

    #[test]
    fn absolute_on_four_image_toy() {
        let sweep = sweep_median(
            &four_images(),
            0.0,
            &[0.05, 0.5, 0.85],
            &quick(),
            EmptyMedian::Zero,
        )
        .unwrap();
        assert!(sweep.points[0].effect.is_none());
        assert_eq!(sweep.points[2].effect.unwrap().point, 2.5 / 3.0);
        let abs = select_absolute(&sweep).unwrap();
        assert_eq!(abs.median_threshold(), 0.5);
        assert_eq!(abs.kind(), LevelKind::Absolute);
    }

    #[test]
    fn absolute_selection_rules() {
        let sweep = MedianSweep {
            conf_threshold: 0.3,
            points: vec![
                median_point(0.1, Some((0.3, 0.4)), 1),
                median_point(0.5, Some((0.9, 0.95)), 3),
                median_point(0.8, Some((0.7, 0.8)), 6),
            ],
        };
        assert_eq!(select_absolute(&sweep).unwrap().median_threshold(), 0.5);

        let tie = MedianSweep {
            conf_threshold: 0.3,
            points: vec![
                median_point(0.2, Some((0.6, 0.7)), 1),
                median_point(0.4, Some((0.6, 0.7)), 2),
            ],
        };
        assert_eq!(select_absolute(&tie).unwrap().median_threshold(), 0.2);

        let none = MedianSweep {
            conf_threshold: 0.3,
            points: vec![median_point(0.0, None, 0)],
        };
        assert!(matches!(select_absolute(&none), Err(Error::Degenerate(_))));
    }

    #[test]
    fn relative_selection_rules() {
        let sweep = MedianSweep {
            conf_threshold: 0.3,
            points: vec![
                median_point(0.1, Some((0.5, 0.6)), 0),
                median_point(0.3, Some((0.85, 0.92)), 1),
                median_point(0.6, Some((0.90, 0.97)), 4),
            ],
        };
        let abs = select_absolute(&sweep).unwrap();
        assert_eq!(abs.median_threshold(), 0.6);
        let rel = select_relative(&sweep, &abs).unwrap();
        assert_eq!(rel.median_threshold(), 0.3);
        assert_eq!(rel.kind(), LevelKind::Relative);

        let lone = MedianSweep {
            conf_threshold: 0.3,
            points: vec![
                median_point(0.1, Some((0.5, 0.6)), 0),
                median_point(0.6, Some((0.9, 0.97)), 4),
            ],
        };
        let abs = select_absolute(&lone).unwrap();
        assert_eq!(
            select_relative(&lone, &abs).unwrap().median_threshold(),
            0.6
        );
    }

    #[test]
    fn calibrate_reports_global_when_levels_coincide() {
        let cfg = CalibrationConfig {
            conf_threshold: Some(0.0),
            median_grid: vec![0.05, 0.5, 0.85],
            bootstrap: quick(),
            ..CalibrationConfig::default()
        };
        let report = calibrate(&four_images(), &cfg).unwrap();
        assert!(report.confidence_sweep.is_none());
        assert_eq!(report.conf_threshold, 0.0);
        assert!(report.is_global);
        assert_eq!(report.levels().len(), 1);
        assert_eq!(report.absolute.to_string(), "[0.0, 0.5]_g");
    }

    #[test]
    fn calibrate_sweeps_when_threshold_absent() {
        let cfg = CalibrationConfig {
            bootstrap: quick(),
            ..CalibrationConfig::default()
        };
        let report = calibrate(&four_images(), &cfg).unwrap();
        let sweep = report.confidence_sweep.as_ref().unwrap();
        assert_eq!(report.conf_threshold, optimal_confidence(sweep).unwrap());
        assert_eq!(report, calibrate(&four_images(), &cfg).unwrap());
    }

    #[test]
    fn evaluation_of_universal_and_empty_levels() {
        let images = four_images();
        let all = RejectionLevel::new(0.0, 0.0, LevelKind::Absolute).unwrap();
        let ev = evaluate_level(&images, &all, &quick(), EmptyMedian::Zero).unwrap();
        assert_eq!(ev.mae.point, ev.ungated_mae);
        assert_eq!(ev.rejected_fraction, 0.0);

        let none = RejectionLevel::new(0.95, 0.5, LevelKind::Absolute).unwrap();
        assert!(matches!(
            evaluate_level(&images, &none, &quick(), EmptyMedian::Zero),
            Err(Error::Degenerate(_))
        ));
    }
}

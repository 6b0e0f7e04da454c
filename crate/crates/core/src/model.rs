//! Domain types and the gating arithmetic.
//!
//! Conventions used throughout the crate:
//! - a box survives a confidence threshold `t` when `score >= t`;
//! - the predicted count of an image is its number of surviving boxes;
//! - an image is accepted when its survivor median is `>= median_threshold`;
//! - the median of an even number of survivors is the mean of the middle two;
//! - the median of zero survivors is 0 unless [`EmptyMedian::One`] is chosen.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cotton season type. Summer runs roughly March to June, kharif July to
/// December, so within a year summer comes first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SeasonKind {
    Summer,
    Kharif,
}

/// A season label such as `K18` or `S20`, ordered by year then type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SeasonId {
    year: u8,
    kind: SeasonKind,
}

impl SeasonId {
    pub fn new(kind: SeasonKind, year: u8) -> Result<Self> {
        if year > 99 {
            return Err(Error::Validation(format!(
                "season year must have two digits, got {year}"
            )));
        }
        Ok(SeasonId { year, kind })
    }

    pub fn year(&self) -> u8 {
        self.year
    }

    pub fn kind(&self) -> SeasonKind {
        self.kind
    }
}

impl FromStr for SeasonId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || {
            Error::Validation(format!(
                "invalid season label {s:?} (expected e.g. K18, S20)"
            ))
        };
        let mut chars = s.chars();
        let kind = match chars.next() {
            Some('S') => SeasonKind::Summer,
            Some('K') => SeasonKind::Kharif,
            _ => return Err(bad()),
        };
        let digits = chars.as_str();
        if digits.len() != 2 || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        SeasonId::new(kind, digits.parse().map_err(|_| bad())?)
    }
}

impl fmt::Display for SeasonId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.kind {
            SeasonKind::Summer => 'S',
            SeasonKind::Kharif => 'K',
        };
        write!(f, "{tag}{:02}", self.year)
    }
}

impl Serialize for SeasonId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SeasonId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One photographed trap image: its detector box confidences and the
/// annotated pest count.
///
/// Scores are held sorted ascending; box order carries no meaning for
/// counting.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    image_id: String,
    season: SeasonId,
    scores: Vec<f64>,
    gt_count: u64,
}

impl ImageRecord {
    pub fn new(
        image_id: impl Into<String>,
        season: SeasonId,
        mut scores: Vec<f64>,
        gt_count: u64,
    ) -> Result<Self> {
        let image_id = image_id.into();
        if image_id.is_empty() {
            return Err(Error::Validation("image_id must be non-empty".into()));
        }
        if let Some(s) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(Error::Validation(format!(
                "image {image_id}: score {s} outside [0, 1]"
            )));
        }
        scores.sort_by(f64::total_cmp);
        Ok(ImageRecord {
            image_id,
            season,
            scores,
            gt_count,
        })
    }

    pub fn image_id(&self) -> &str {
        &self.image_id
    }

    pub fn season(&self) -> SeasonId {
        self.season
    }

    /// All box scores, ascending.
    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn gt_count(&self) -> u64 {
        self.gt_count
    }

    pub fn surviving_scores(&self, threshold: f64) -> &[f64] {
        debug_assert!((0.0..=1.0).contains(&threshold));
        let start = self.scores.partition_point(|&s| s < threshold);
        &self.scores[start..]
    }

    pub fn predicted_count(&self, threshold: f64) -> u64 {
        self.surviving_scores(threshold).len() as u64
    }

    pub fn absolute_error(&self, threshold: f64) -> u64 {
        self.predicted_count(threshold).abs_diff(self.gt_count)
    }

    pub fn survivor_median(&self, threshold: f64, empty: EmptyMedian) -> f64 {
        median_sorted(self.surviving_scores(threshold)).unwrap_or(empty.value())
    }
}

/// Sample median of an ascending slice.
fn median_sorted(sorted: &[f64]) -> Option<f64> {
    let n = sorted.len();
    match n {
        0 => None,
        _ if n % 2 == 1 => Some(sorted[n / 2]),
        _ => Some((sorted[n / 2 - 1] + sorted[n / 2]) / 2.0),
    }
}

/// Median assigned to an image with no surviving boxes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmptyMedian {
    /// Rejected by every positive median cutoff.
    #[default]
    Zero,
    /// Accepted by every median cutoff.
    One,
}

impl EmptyMedian {
    pub fn value(self) -> f64 {
        match self {
            EmptyMedian::Zero => 0.0,
            EmptyMedian::One => 1.0,
        }
    }
}

impl FromStr for EmptyMedian {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(EmptyMedian::Zero),
            "one" => Ok(EmptyMedian::One),
            _ => Err(Error::Usage(format!(
                "empty median must be zero|one, got {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LevelKind {
    Absolute,
    Relative,
    /// Absolute and relative selection coincided.
    Global,
}

impl LevelKind {
    pub fn subscript(self) -> char {
        match self {
            LevelKind::Absolute => 'a',
            LevelKind::Relative => 'r',
            LevelKind::Global => 'g',
        }
    }
}

/// The (confidence threshold, median cutoff) pair that decides whether an
/// image is accepted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RejectionLevel {
    conf_threshold: f64,
    median_threshold: f64,
    kind: LevelKind,
}

impl RejectionLevel {
    pub fn new(conf_threshold: f64, median_threshold: f64, kind: LevelKind) -> Result<Self> {
        for (name, v) in [("confidence", conf_threshold), ("median", median_threshold)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Usage(format!("{name} threshold {v} outside [0, 1]")));
            }
        }
        Ok(RejectionLevel {
            conf_threshold,
            median_threshold,
            kind,
        })
    }

    pub fn conf_threshold(&self) -> f64 {
        self.conf_threshold
    }

    pub fn median_threshold(&self) -> f64 {
        self.median_threshold
    }

    pub fn kind(&self) -> LevelKind {
        self.kind
    }

    pub fn with_kind(self, kind: LevelKind) -> Self {
        RejectionLevel { kind, ..self }
    }
}

impl fmt::Display for RejectionLevel {
    /// Tuple notation with kind subscript, e.g. `[0.17, 0.22]_g`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}, {}]_{}",
            trim_decimal(self.conf_threshold),
            trim_decimal(self.median_threshold),
            self.kind.subscript()
        )
    }
}

fn trim_decimal(v: f64) -> String {
    let s = format!("{v:.6}");
    let s = s.trim_end_matches('0');
    match s.strip_suffix('.') {
        Some(int) => format!("{int}.0"),
        None => s.to_string(),
    }
}

/// Outcome of gating one image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateDecision {
    pub accepted: bool,
    pub surviving_count: u64,
    pub survivor_median: f64,
}

pub fn surviving_scores(image: &ImageRecord, threshold: f64) -> &[f64] {
    image.surviving_scores(threshold)
}

pub fn predicted_count(image: &ImageRecord, threshold: f64) -> u64 {
    image.predicted_count(threshold)
}

pub fn absolute_error(image: &ImageRecord, threshold: f64) -> u64 {
    image.absolute_error(threshold)
}

pub fn survivor_median(image: &ImageRecord, threshold: f64) -> f64 {
    image.survivor_median(threshold, EmptyMedian::Zero)
}

pub fn gate(image: &ImageRecord, level: &RejectionLevel) -> GateDecision {
    gate_with(image, level, EmptyMedian::Zero)
}

pub fn gate_with(image: &ImageRecord, level: &RejectionLevel, empty: EmptyMedian) -> GateDecision {
    let survivors = image.surviving_scores(level.conf_threshold);
    let survivor_median = median_sorted(survivors).unwrap_or(empty.value());
    GateDecision {
        accepted: survivor_median >= level.median_threshold,
        surviving_count: survivors.len() as u64,
        survivor_median,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn img(scores: &[f64], gt: u64) -> ImageRecord {
        ImageRecord::new("x", "K19".parse().unwrap(), scores.to_vec(), gt).unwrap()
    }

    fn level(t: f64, m: f64) -> RejectionLevel {
        RejectionLevel::new(t, m, LevelKind::Global).unwrap()
    }

    #[test]
    fn surviving_scores_filters_inclusively() {
        assert_eq!(img(&[0.9, 0.5, 0.3], 0).surviving_scores(0.5), &[0.5, 0.9]);
        assert!(img(&[], 0).surviving_scores(0.3).is_empty());
        assert_eq!(img(&[0.2, 0.8], 0).surviving_scores(0.0), &[0.2, 0.8]);
    }

    #[test]
    fn counts_and_errors() {
        assert_eq!(predicted_count(&img(&[0.9, 0.5, 0.3], 0), 0.5), 2);
        assert_eq!(predicted_count(&img(&[], 0), 0.1), 0);
        assert_eq!(predicted_count(&img(&[0.4, 0.4], 0), 0.4), 2);
        assert_eq!(absolute_error(&img(&[0.9, 0.5, 0.3], 3), 0.17), 0);
        assert_eq!(absolute_error(&img(&[0.9], 4), 0.5), 3);
        assert_eq!(absolute_error(&img(&[], 0), 0.7), 0);
    }

    #[test]
    fn medians() {
        assert_eq!(survivor_median(&img(&[0.2, 0.4, 0.9], 0), 0.0), 0.4);
        assert!((survivor_median(&img(&[0.2, 0.4], 0), 0.0) - 0.3).abs() < 1e-15);
        assert_eq!(survivor_median(&img(&[], 0), 0.0), 0.0);
        assert_eq!(img(&[0.1], 0).survivor_median(0.5, EmptyMedian::One), 1.0);
    }

    #[test]
    fn gate_examples() {
        let d = gate(&img(&[0.9, 0.3, 0.1], 0), &level(0.17, 0.22));
        assert!(d.accepted);
        assert_eq!(d.surviving_count, 2);
        assert!((d.survivor_median - 0.6).abs() < 1e-15);

        let d = gate(&img(&[0.18, 0.20], 0), &level(0.17, 0.22));
        assert!(!d.accepted);
        assert!((d.survivor_median - 0.19).abs() < 1e-15);

        assert!(gate(&img(&[], 0), &level(0.5, 0.0)).accepted);
    }

    #[test]
    fn empty_median_one_accepts_empty_images() {
        let d = gate_with(&img(&[0.1], 2), &level(0.5, 0.9), EmptyMedian::One);
        assert!(d.accepted);
        assert_eq!(d.surviving_count, 0);
    }

    #[test]
    fn rejects_invalid_records() {
        let s: SeasonId = "K19".parse().unwrap();
        assert!(ImageRecord::new("", s, vec![], 0).is_err());
        assert!(ImageRecord::new("a", s, vec![1.5], 0).is_err());
        assert!(ImageRecord::new("a", s, vec![f64::NAN], 0).is_err());
        assert!(RejectionLevel::new(1.2, 0.1, LevelKind::Absolute).is_err());
    }

    #[test]
    fn season_labels_and_order() {
        let parse = |s: &str| s.parse::<SeasonId>().unwrap();
        assert!(parse("K18") < parse("S19"));
        assert!(parse("S19") < parse("K19"));
        assert!(parse("K19") < parse("S20"));
        assert_eq!(parse("S20").to_string(), "S20");
        assert_eq!(parse("K05").to_string(), "K05");
        for bad in ["", "K", "X19", "K1", "K190", "k19", "K1a"] {
            assert!(bad.parse::<SeasonId>().is_err(), "{bad}");
        }
    }

    #[test]
    fn level_notation() {
        assert_eq!(level(0.17, 0.22).to_string(), "[0.17, 0.22]_g");
        let l = RejectionLevel::new(0.5, 0.0, LevelKind::Absolute).unwrap();
        assert_eq!(l.to_string(), "[0.5, 0.0]_a");
    }

    fn scores() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..=1.0, 0..30)
    }

    proptest! {
        #[test]
        fn count_is_monotone(s in scores(), a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let im = img(&s, 0);
            prop_assert!(im.predicted_count(lo) >= im.predicted_count(hi));
        }

        #[test]
        fn rejection_is_monotone_in_cutoff(
            s in scores(), t in 0.0f64..=1.0, a in 0.0f64..=1.0, b in 0.0f64..=1.0,
        ) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let im = img(&s, 0);
            if !gate(&im, &level(t, lo)).accepted {
                prop_assert!(!gate(&im, &level(t, hi)).accepted);
            }
            prop_assert!(gate(&im, &level(t, 0.0)).accepted);
        }

        #[test]
        fn median_lies_within_survivors(s in scores(), t in 0.0f64..=1.0) {
            let im = img(&s, 0);
            let surv = im.surviving_scores(t);
            let m = survivor_median(&im, t);
            if let (Some(lo), Some(hi)) = (surv.first(), surv.last()) {
                prop_assert!(*lo <= m && m <= *hi);
            }
            if surv.len() == 1 {
                prop_assert_eq!(m, surv[0]);
            }
        }
    }
}

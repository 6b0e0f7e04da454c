//! Mean absolute error, percentile bootstrap intervals and the
//! common-language effect size.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::parallel::{map_indexed, stream_rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub resamples: usize,
    /// Two-sided miss rate; 0.05 gives a 95% interval.
    pub alpha: f64,
    pub seed: u64,
}

impl BootstrapConfig {
    pub fn new(resamples: usize, alpha: f64, seed: u64) -> Result<Self> {
        let cfg = BootstrapConfig {
            resamples,
            alpha,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.resamples == 0 {
            return Err(Error::Usage("bootstrap resamples must be >= 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Usage(format!(
                "bootstrap alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        Ok(())
    }

    pub fn with_seed(self, seed: u64) -> Self {
        BootstrapConfig { seed, ..self }
    }
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            resamples: 1000,
            alpha: 0.05,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalEstimate {
    pub point: f64,
    pub lo: f64,
    pub hi: f64,
}

impl IntervalEstimate {
    pub fn exact(point: f64) -> Self {
        IntervalEstimate {
            point,
            lo: point,
            hi: point,
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }
}

pub fn mean_absolute_error(aes: &[u64]) -> Result<f64> {
    if aes.is_empty() {
        return Err(Error::Degenerate(
            "mean absolute error of an empty set".into(),
        ));
    }
    let total: u128 = aes.iter().map(|&a| a as u128).sum();
    Ok(total as f64 / aes.len() as f64)
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Percentile interval over resample statistics.
///
/// Bounds are order statistics rounded outward: the lower bound sits at rank
/// `floor(alpha/2 * (B-1))` and the upper at `ceil((1-alpha/2) * (B-1))` of
/// the `B` sorted statistics, so both are values some resample produced.
pub fn percentile_interval(point: f64, mut stats: Vec<f64>, alpha: f64) -> IntervalEstimate {
    debug_assert!(!stats.is_empty());
    stats.sort_by(f64::total_cmp);
    let last = (stats.len() - 1) as f64;
    let lo = ((alpha / 2.0) * last).floor() as usize;
    let hi = (((1.0 - alpha / 2.0) * last).ceil() as usize).min(stats.len() - 1);
    IntervalEstimate {
        point,
        lo: stats[lo],
        hi: stats[hi],
    }
}

pub fn bootstrap_mean_ci(values: &[f64], cfg: &BootstrapConfig) -> Result<IntervalEstimate> {
    if values.is_empty() {
        return Err(Error::Degenerate("bootstrap of an empty sample".into()));
    }
    cfg.validate()?;
    let n = values.len();
    let stats = map_indexed(cfg.resamples, |i| {
        let mut rng = stream_rng(cfg.seed, i as u64);
        let sum: f64 = (0..n).map(|_| values[rng.random_range(0..n)]).sum();
        sum / n as f64
    });
    Ok(percentile_interval(mean(values), stats, cfg.alpha))
}

/// Convenience wrapper for integer absolute errors.
pub fn bootstrap_mae_ci(aes: &[u64], cfg: &BootstrapConfig) -> Result<IntervalEstimate> {
    let values: Vec<f64> = aes.iter().map(|&a| a as f64).collect();
    bootstrap_mean_ci(&values, cfg)
}

/// Both samples re-expressed as indices into their sorted distinct values.
struct RankedPair {
    distinct: usize,
    accepted: Vec<u32>,
    rejected: Vec<u32>,
}

impl RankedPair {
    fn new(accepted: &[u64], rejected: &[u64]) -> Self {
        let mut values: Vec<u64> = accepted.iter().chain(rejected).copied().collect();
        values.sort_unstable();
        values.dedup();
        let rank = |v: &u64| values.binary_search(v).expect("value present") as u32;
        RankedPair {
            distinct: values.len(),
            accepted: accepted.iter().map(rank).collect(),
            rejected: rejected.iter().map(rank).collect(),
        }
    }
}

/// Exact statistic from per-rank histograms: twice the number of
/// `accepted < rejected` pairs plus the number of tied pairs, over twice the
/// pair count.
fn effect_from_histograms(acc: &[u64], rej: &[u64], n_acc: u64, n_rej: u64) -> f64 {
    let mut rej_at_or_below = 0u64;
    let mut doubled: u128 = 0;
    for (&a, &r) in acc.iter().zip(rej) {
        rej_at_or_below += r;
        let above = n_rej - rej_at_or_below;
        doubled += a as u128 * (2 * above + r) as u128;
    }
    doubled as f64 / (2 * n_acc as u128 * n_rej as u128) as f64
}

fn histogram(ranks: &[u32], distinct: usize) -> Vec<u64> {
    let mut h = vec![0u64; distinct];
    for &r in ranks {
        h[r as usize] += 1;
    }
    h
}

fn require_partitions(accepted: &[u64], rejected: &[u64]) -> Result<()> {
    if accepted.is_empty() || rejected.is_empty() {
        return Err(Error::Degenerate(format!(
            "effect size needs two non-empty partitions (got {} accepted, {} rejected)",
            accepted.len(),
            rejected.len()
        )));
    }
    Ok(())
}

/// Probability that a random accepted image has a lower absolute error than
/// a random rejected one, ties counted one half.
pub fn common_language_effect_size(accepted: &[u64], rejected: &[u64]) -> Result<f64> {
    require_partitions(accepted, rejected)?;
    let ranked = RankedPair::new(accepted, rejected);
    Ok(effect_from_histograms(
        &histogram(&ranked.accepted, ranked.distinct),
        &histogram(&ranked.rejected, ranked.distinct),
        accepted.len() as u64,
        rejected.len() as u64,
    ))
}

/// Exact effect size as the point, with a percentile interval from
/// resampling both partitions independently at their own sizes.
pub fn bootstrap_effect_size_ci(
    accepted: &[u64],
    rejected: &[u64],
    cfg: &BootstrapConfig,
) -> Result<IntervalEstimate> {
    require_partitions(accepted, rejected)?;
    cfg.validate()?;
    let ranked = RankedPair::new(accepted, rejected);
    let (n_acc, n_rej) = (accepted.len(), rejected.len());
    let point = effect_from_histograms(
        &histogram(&ranked.accepted, ranked.distinct),
        &histogram(&ranked.rejected, ranked.distinct),
        n_acc as u64,
        n_rej as u64,
    );
    let stats = map_indexed(cfg.resamples, |i| {
        let mut rng = stream_rng(cfg.seed, i as u64);
        let mut acc = vec![0u64; ranked.distinct];
        let mut rej = vec![0u64; ranked.distinct];
        for _ in 0..n_acc {
            acc[ranked.accepted[rng.random_range(0..n_acc)] as usize] += 1;
        }
        for _ in 0..n_rej {
            rej[ranked.rejected[rng.random_range(0..n_rej)] as usize] += 1;
        }
        effect_from_histograms(&acc, &rej, n_acc as u64, n_rej as u64)
    });
    Ok(percentile_interval(point, stats, cfg.alpha))
}

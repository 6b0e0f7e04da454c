//! Seeded synthetic detector output.
//!
//! Each image draws a ground-truth count, detects each true object with
//! probability `detection_rate` at a score from `true_score`, then adds
//! spurious boxes. Scores are rounded to six decimals so a written dataset
//! reloads bit-identically.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Beta, Distribution as _, Poisson, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ImageRecord, SeasonId};
use crate::parallel::{derive_seed, map_indexed, stream_rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Distribution {
    Uniform { low: f64, high: f64 },
    Beta { alpha: f64, beta: f64 },
    Poisson { lambda: f64 },
    Constant { value: f64 },
}

enum Sampler {
    Uniform(Uniform<f64>),
    Beta(Beta<f64>),
    Poisson(Poisson<f64>),
    Constant(f64),
}

impl Sampler {
    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            Sampler::Uniform(d) => d.sample(rng),
            Sampler::Beta(d) => d.sample(rng),
            Sampler::Poisson(d) => d.sample(rng),
            Sampler::Constant(v) => *v,
        }
    }
}

impl Distribution {
    fn sampler(&self, what: &str) -> Result<Sampler> {
        let bad = |msg: String| Error::Validation(format!("{what}: {msg}"));
        Ok(match *self {
            Distribution::Uniform { low, high } => Sampler::Uniform(
                Uniform::new_inclusive(low, high).map_err(|e| bad(format!("uniform: {e}")))?,
            ),
            Distribution::Beta { alpha, beta } => {
                Sampler::Beta(Beta::new(alpha, beta).map_err(|e| bad(format!("beta: {e}")))?)
            }
            Distribution::Poisson { lambda } => {
                Sampler::Poisson(Poisson::new(lambda).map_err(|e| bad(format!("poisson: {e}")))?)
            }
            Distribution::Constant { value } if value.is_finite() => Sampler::Constant(value),
            Distribution::Constant { value } => return Err(bad(format!("constant {value}"))),
        })
    }

    fn support(&self) -> (f64, f64) {
        match *self {
            Distribution::Uniform { low, high } => (low, high),
            Distribution::Beta { .. } => (0.0, 1.0),
            Distribution::Poisson { .. } => (0.0, f64::INFINITY),
            Distribution::Constant { value } => (value, value),
        }
    }

    fn score_sampler(&self, what: &str) -> Result<Sampler> {
        let (lo, hi) = self.support();
        if lo < 0.0 || hi > 1.0 {
            return Err(Error::Validation(format!(
                "{what}: score distribution must stay within [0, 1]"
            )));
        }
        self.sampler(what)
    }

    fn count_sampler(&self, what: &str) -> Result<Sampler> {
        if self.support().0 < 0.0 {
            return Err(Error::Validation(format!(
                "{what}: count distribution must be non-negative"
            )));
        }
        self.sampler(what)
    }
}

fn default_detection_rate() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Population {
    pub name: String,
    pub season: SeasonId,
    pub image_count: usize,
    pub gt_count: Distribution,
    pub true_score: Distribution,
    #[serde(default = "default_detection_rate")]
    pub detection_rate: f64,
    pub spurious_count: Distribution,
    pub spurious_score: Distribution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    #[serde(default)]
    pub seed: u64,
    pub populations: Vec<Population>,
}

impl GeneratorConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Validation(format!("{}: {e}", path.display())))
    }
}

struct PopulationSampler {
    gt_count: Sampler,
    true_score: Sampler,
    spurious_count: Sampler,
    spurious_score: Sampler,
}

impl PopulationSampler {
    fn new(p: &Population) -> Result<Self> {
        let what = |field: &str| format!("population {:?} {field}", p.name);
        if !(0.0..=1.0).contains(&p.detection_rate) {
            return Err(Error::Validation(format!(
                "{} must lie in [0, 1]",
                what("detection_rate")
            )));
        }
        Ok(PopulationSampler {
            gt_count: p.gt_count.count_sampler(&what("gt_count"))?,
            true_score: p.true_score.score_sampler(&what("true_score"))?,
            spurious_count: p.spurious_count.count_sampler(&what("spurious_count"))?,
            spurious_score: p.spurious_score.score_sampler(&what("spurious_score"))?,
        })
    }
}

fn count<R: Rng>(s: &Sampler, rng: &mut R) -> u64 {
    s.sample(rng).round().max(0.0) as u64
}

fn score<R: Rng>(s: &Sampler, rng: &mut R) -> f64 {
    (s.sample(rng).clamp(0.0, 1.0) * 1e6).round() / 1e6
}

pub fn generate_synthetic(cfg: &GeneratorConfig) -> Result<Vec<ImageRecord>> {
    let mut names = HashSet::new();
    for p in &cfg.populations {
        if p.name.is_empty() || !names.insert(p.name.as_str()) {
            return Err(Error::Validation(format!(
                "population names must be non-empty and unique ({:?})",
                p.name
            )));
        }
    }
    let samplers = cfg
        .populations
        .iter()
        .map(PopulationSampler::new)
        .collect::<Result<Vec<_>>>()?;

    let mut out = Vec::new();
    for (pi, (pop, sampler)) in cfg.populations.iter().zip(&samplers).enumerate() {
        let pop_seed = derive_seed(cfg.seed, pi as u64);
        let images = map_indexed(pop.image_count, |i| {
            let mut rng = stream_rng(pop_seed, i as u64);
            let gt = count(&sampler.gt_count, &mut rng);
            let mut scores = Vec::new();
            for _ in 0..gt {
                if rng.random_bool(pop.detection_rate) {
                    scores.push(score(&sampler.true_score, &mut rng));
                }
            }
            for _ in 0..count(&sampler.spurious_count, &mut rng) {
                scores.push(score(&sampler.spurious_score, &mut rng));
            }
            ImageRecord::new(format!("{}-{i:05}", pop.name), pop.season, scores, gt)
        });
        for im in images {
            out.push(im?);
        }
    }
    Ok(out)
}

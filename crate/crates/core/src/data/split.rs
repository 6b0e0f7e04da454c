//! Seasonal development/test splits.
//!
//! The target season is shuffled once and cut into a development pool and a
//! test set. A historic split develops on earlier seasons only; a
//! present-aware split adds the target season's development pool. With the
//! same seed both kinds share the same test set.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ImageRecord, SeasonId};
use crate::parallel::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    Historic,
    PresentAware,
}

impl FromStr for SplitKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "historic" | "h" => Ok(SplitKind::Historic),
            "present" | "present_aware" | "p" => Ok(SplitKind::PresentAware),
            _ => Err(Error::Usage(format!(
                "split kind must be historic|present, got {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Val,
    Test,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Train => "train",
            Role::Val => "val",
            Role::Test => "test",
        })
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Role::Train),
            "val" => Ok(Role::Val),
            "test" => Ok(Role::Test),
            _ => Err(Error::Usage(format!(
                "role must be train|val|test, got {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    /// Share of the target season placed in the development pool.
    pub dev_of_current: f64,
    /// Share of the development set used for training.
    pub train_of_dev: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            dev_of_current: 0.8,
            train_of_dev: 0.8,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("dev_of_current", self.dev_of_current),
            ("train_of_dev", self.train_of_dev),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Usage(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeasonalSplit {
    pub target: SeasonId,
    pub kind: SplitKind,
    /// Images from later seasons, and a historic split's development pool,
    /// are left unassigned.
    pub assignment: BTreeMap<String, Role>,
}

impl SeasonalSplit {
    pub fn ids(&self, role: Role) -> impl Iterator<Item = &str> {
        self.assignment
            .iter()
            .filter(move |(_, r)| **r == role)
            .map(|(id, _)| id.as_str())
    }

    pub fn select(&self, images: &[ImageRecord], role: Role) -> Vec<ImageRecord> {
        select_role(&self.assignment, images, role)
    }
}

/// Images assigned `role`, in dataset order.
pub(crate) fn select_role(
    assignment: &BTreeMap<String, Role>,
    images: &[ImageRecord],
    role: Role,
) -> Vec<ImageRecord> {
    images
        .iter()
        .filter(|im| assignment.get(im.image_id()) == Some(&role))
        .cloned()
        .collect()
}

fn shuffled(mut ids: Vec<String>, seed: u64) -> Vec<String> {
    ids.sort();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    ids
}

fn cut(len: usize, share: f64) -> usize {
    ((share * len as f64 + 1e-9).floor() as usize).min(len)
}

pub fn build_split(
    images: &[ImageRecord],
    target: SeasonId,
    kind: SplitKind,
    ratios: SplitRatios,
    seed: u64,
) -> Result<SeasonalSplit> {
    ratios.validate()?;
    let ids_where = |pred: &dyn Fn(SeasonId) -> bool| -> Vec<String> {
        images
            .iter()
            .filter(|im| pred(im.season()))
            .map(|im| im.image_id().to_string())
            .collect()
    };
    let current = ids_where(&|s| s == target);
    let prior = ids_where(&|s| s < target);
    if current.is_empty() {
        return Err(Error::Split(format!(
            "no images from target season {target}"
        )));
    }
    if kind == SplitKind::Historic && prior.is_empty() {
        return Err(Error::Split(format!(
            "historic split needs images from seasons before {target}"
        )));
    }

    let current = shuffled(current, derive_seed(seed, 0));
    let n_pool = cut(current.len(), ratios.dev_of_current);
    let (pool, test) = current.split_at(n_pool);

    let mut dev = prior;
    if kind == SplitKind::PresentAware {
        dev.extend(pool.iter().cloned());
    }
    let dev = shuffled(dev, derive_seed(seed, 1));
    let n_train = cut(dev.len(), ratios.train_of_dev);

    let mut assignment = BTreeMap::new();
    for (i, id) in dev.into_iter().enumerate() {
        assignment.insert(id, if i < n_train { Role::Train } else { Role::Val });
    }
    for id in test {
        assignment.insert(id.clone(), Role::Test);
    }
    Ok(SeasonalSplit {
        target,
        kind,
        assignment,
    })
}

#[derive(Serialize, Deserialize)]
struct ManifestRow {
    image_id: String,
    role: Role,
}

/// CSV `image_id,role`, rows sorted by image id.
pub fn write_manifest(path: &Path, assignment: &BTreeMap<String, Role>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(file);
    for (image_id, role) in assignment {
        w.serialize(ManifestRow {
            image_id: image_id.clone(),
            role: *role,
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<BTreeMap<String, Role>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let mut out = BTreeMap::new();
    for row in r.deserialize() {
        let row: ManifestRow = row?;
        if out.insert(row.image_id.clone(), row.role).is_some() {
            return Err(Error::Validation(format!(
                "{}: image {:?} listed twice",
                path.display(),
                row.image_id
            )));
        }
    }
    Ok(out)
}

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize, Serializer};
use serde_json::value::RawValue;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::model::ImageRecord;

fn six_decimals<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    RawValue::from_string(format!("{v:.6}"))
        .map_err(serde::ser::Error::custom)?
        .serialize(s)
}

/// One detector box on the wire. Geometry fields ride along untouched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxRecord {
    #[serde(serialize_with = "six_decimals")]
    pub score: f64,
    #[serde(flatten)]
    pub geometry: BTreeMap<String, Value>,
}

/// Wire form of an [`ImageRecord`]: one JSON object per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub image_id: String,
    pub season: String,
    pub boxes: Vec<BoxRecord>,
    pub gt_count: u64,
    #[serde(flatten, skip_serializing)]
    pub unknown: BTreeMap<String, Value>,
}

impl DetectionRecord {
    pub fn to_image(&self) -> Result<ImageRecord> {
        ImageRecord::new(
            self.image_id.clone(),
            self.season.parse()?,
            self.boxes.iter().map(|b| b.score).collect(),
            self.gt_count,
        )
    }

    pub fn from_image(image: &ImageRecord) -> Self {
        DetectionRecord {
            image_id: image.image_id().to_string(),
            season: image.season().to_string(),
            boxes: image
                .scores()
                .iter()
                .map(|&score| BoxRecord {
                    score,
                    geometry: BTreeMap::new(),
                })
                .collect(),
            gt_count: image.gt_count(),
            unknown: BTreeMap::new(),
        }
    }
}

/// Parses and validates JSON Lines; blank lines are skipped.
pub fn parse_dataset<R: BufRead>(
    reader: R,
    path: &Path,
) -> Result<Vec<(DetectionRecord, ImageRecord)>> {
    let line_err = |line: usize, message: String| Error::Line {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: DetectionRecord =
            serde_json::from_str(&line).map_err(|e| line_err(lineno, e.to_string()))?;
        if !record.unknown.is_empty() {
            let keys: Vec<&str> = record.unknown.keys().map(String::as_str).collect();
            log::warn!(
                "{}:{lineno}: ignoring unknown fields {keys:?}",
                path.display()
            );
        }
        let image = record
            .to_image()
            .map_err(|e| line_err(lineno, e.to_string()))?;
        if !seen.insert(record.image_id.clone()) {
            return Err(line_err(
                lineno,
                format!("duplicate image_id {:?}", record.image_id),
            ));
        }
        out.push((record, image));
    }
    Ok(out)
}

pub fn read_detections(path: &Path) -> Result<Vec<DetectionRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_dataset(BufReader::new(file), path)?
        .into_iter()
        .map(|(r, _)| r)
        .collect())
}

pub fn load_dataset(path: &Path) -> Result<Vec<ImageRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_dataset(BufReader::new(file), path)?
        .into_iter()
        .map(|(_, im)| im)
        .collect())
}

pub fn write_detections(path: &Path, records: &[DetectionRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_dataset(path: &Path, images: &[ImageRecord]) -> Result<()> {
    let records: Vec<_> = images.iter().map(DetectionRecord::from_image).collect();
    write_detections(path, &records)
}

//! Dataset files, seasonal splits and synthetic scenarios.

mod io;
mod split;
mod synth;

pub use io::{
    load_dataset, parse_dataset, read_detections, write_dataset, write_detections, BoxRecord,
    DetectionRecord,
};
pub(crate) use split::select_role;
pub use split::{
    build_split, read_manifest, write_manifest, Role, SeasonalSplit, SplitKind, SplitRatios,
};
pub use synth::{generate_synthetic, Distribution, GeneratorConfig, Population};

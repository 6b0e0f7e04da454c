//! Command-line front end.
//!
//! Every subcommand writes into an `--out` directory: its CSV/JSON artifacts
//! plus `manifest.json` recording resolved parameters, input digests and the
//! emitted files. Real-valued fields are printed with six decimals, so
//! repeated runs are byte-identical.
//!
//! Exit status: 0 success, 1 usage error, 2 data or config validation error,
//! 3 degenerate computation (e.g. an empty selection).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Serialize, Serializer};
use serde_json::value::RawValue;
use sha2::{Digest, Sha256};

use crate::calibration::{
    calibrate, evaluate_level, optimal_confidence, sweep_confidence, unit_grid, CalibrationConfig,
    CalibrationReport, MedianSweepPoint, SweepPoint,
};
use crate::data::{
    build_split, generate_synthetic, load_dataset, read_manifest, write_dataset, write_manifest,
    GeneratorConfig, Role, SplitKind, SplitRatios,
};
use crate::error::{Error, Result};
use crate::model::{EmptyMedian, ImageRecord, LevelKind, RejectionLevel};
use crate::oracle::{oracle_curve, OracleCurve, OracleMode};
use crate::stats::BootstrapConfig;

pub const THREADS_ENV: &str = "REJECT_GATE_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "reject-gate",
    version,
    about = "Calibrate and evaluate confidence-based image rejection"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// MAE across box-confidence thresholds, no rejection.
    Sweep(SweepArgs),
    /// Choose median cutoffs (absolute, relative, global) for box thresholds.
    Calibrate(CalibrateArgs),
    /// Evaluate fixed rejection levels.
    Evaluate(EvaluateArgs),
    /// Oracle rejector curves.
    Oracle(OracleArgs),
    /// Build a historic or present-aware seasonal split manifest.
    Split(SplitArgs),
    /// Generate a synthetic dataset from a JSON config.
    Generate(GenerateArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Dataset in JSON Lines.
    #[arg(long)]
    pub data: PathBuf,
    /// Split manifest (`image_id,role`). Without one the whole file is used.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BootstrapArgs {
    /// Bootstrap resamples per interval.
    #[arg(long, default_value_t = 1000)]
    pub bootstrap: usize,
    /// Interval miss rate (0.05 for 95% intervals).
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl BootstrapArgs {
    fn config(&self) -> Result<BootstrapConfig> {
        BootstrapConfig::new(self.bootstrap, self.alpha, self.seed)
    }
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// `ROLE` or `MANIFEST:ROLE`.
    #[arg(long, default_value = "val")]
    pub split: String,
    #[arg(long, default_value_t = 0.01)]
    pub grid_step: f64,
    #[command(flatten)]
    pub bootstrap: BootstrapArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value = "val")]
    pub split: String,
    /// Comma-separated box thresholds; `auto` selects the MAE-optimal one.
    #[arg(long, default_value = "auto")]
    pub conf_threshold: String,
    #[arg(long, default_value_t = 0.01)]
    pub grid_step: f64,
    #[command(flatten)]
    pub bootstrap: BootstrapArgs,
    /// Median assigned to images with no surviving boxes.
    #[arg(long, default_value = "zero")]
    pub empty_median: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// `CONF,MEDIAN[,a|r|g]` or `[CONF, MEDIAN]_k`. Repeatable.
    #[arg(long, required = true)]
    pub level: Vec<String>,
    #[command(flatten)]
    pub bootstrap: BootstrapArgs,
    #[arg(long, default_value = "zero")]
    pub empty_median: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// `ROLE` or `MANIFEST:ROLE`; repeat for one curve file per split.
    #[arg(long, default_values_t = vec!["test".to_string()])]
    pub split: Vec<String>,
    /// `aware` (fixed box threshold) or `best` (per-image best threshold).
    #[arg(long)]
    pub mode: String,
    /// Box threshold for aware mode.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Restrict best mode to these comma-separated thresholds.
    #[arg(long)]
    pub threshold_set: Option<String>,
    /// Comma-separated rejected fractions in [0, 1).
    #[arg(
        long,
        default_value = "0,0.05,0.1,0.15,0.2,0.25,0.3,0.35,0.4,0.45,0.5,0.55,0.6,0.65,0.7,0.75,0.8,0.85,0.9,0.95"
    )]
    pub fractions: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub target_season: String,
    /// `historic` or `present`.
    #[arg(long)]
    pub kind: String,
    /// `DEV_OF_CURRENT,TRAIN_OF_DEV`.
    #[arg(long, default_value = "0.8,0.8")]
    pub ratios: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

/// A real number serialized with exactly six decimals.
#[derive(Debug, Clone, Copy)]
pub struct Fixed6(pub f64);

impl Serialize for Fixed6 {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        RawValue::from_string(fmt6(self.0))
            .map_err(serde::ser::Error::custom)?
            .serialize(s)
    }
}

pub fn fmt6(v: f64) -> String {
    format!("{v:.6}")
}

fn parse_list(text: &str, what: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::Usage(format!("{what}: cannot parse {t:?} as a number")))
        })
        .collect()
}

fn parse_level(text: &str) -> Result<(RejectionLevel, Option<LevelKind>)> {
    let bad = || {
        Error::Usage(format!(
            "level {text:?}: expected CONF,MEDIAN[,a|r|g] or [CONF, MEDIAN]_k"
        ))
    };
    let (body, kind) = match text.trim().strip_prefix('[') {
        Some(rest) => {
            let (inner, suffix) = rest.split_once(']').ok_or_else(bad)?;
            let kind = match suffix {
                "" => None,
                s => Some(s.strip_prefix('_').ok_or_else(bad)?),
            };
            (inner.to_string(), kind.map(str::to_string))
        }
        None => {
            let parts: Vec<&str> = text.split(',').collect();
            match parts.as_slice() {
                [c, m] => (format!("{c},{m}"), None),
                [c, m, k] => (format!("{c},{m}"), Some(k.trim().to_string())),
                _ => return Err(bad()),
            }
        }
    };
    let values = parse_list(&body, "level").map_err(|_| bad())?;
    let [conf, median] = values[..] else {
        return Err(bad());
    };
    let kind = match kind.as_deref() {
        None => None,
        Some("a") => Some(LevelKind::Absolute),
        Some("r") => Some(LevelKind::Relative),
        Some("g") => Some(LevelKind::Global),
        Some(_) => return Err(bad()),
    };
    let level = RejectionLevel::new(conf, median, kind.unwrap_or(LevelKind::Global))?;
    Ok((level, kind))
}

fn level_notation(level: &RejectionLevel, kind: Option<LevelKind>) -> String {
    let full = level.to_string();
    match kind {
        Some(_) => full,
        None => full[..full.rfind('_').expect("notation has a subscript")].to_string(),
    }
}

#[derive(Debug, Clone, PartialEq)]
struct SplitSelector {
    manifest: Option<PathBuf>,
    role: Role,
}

impl SplitSelector {
    fn parse(text: &str, default_manifest: Option<&Path>) -> Result<Self> {
        match text.rsplit_once(':') {
            Some((path, role)) => Ok(SplitSelector {
                manifest: Some(PathBuf::from(path)),
                role: role.parse()?,
            }),
            None => Ok(SplitSelector {
                manifest: default_manifest.map(Path::to_path_buf),
                role: text.parse()?,
            }),
        }
    }

    fn label(&self) -> String {
        match &self.manifest {
            Some(p) => format!(
                "{}_{}",
                p.file_stem().and_then(|s| s.to_str()).unwrap_or("manifest"),
                self.role
            ),
            None => "all".to_string(),
        }
    }
}

fn digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Loaded images, restricted to a split when a manifest is present.
struct Selection {
    images: Vec<ImageRecord>,
    inputs: BTreeMap<String, String>,
}

fn select(data: &Path, selector: &SplitSelector) -> Result<Selection> {
    let all = load_dataset(data)?;
    let mut inputs = BTreeMap::new();
    inputs.insert(data.display().to_string(), digest(data)?);
    let images = match &selector.manifest {
        None => all,
        Some(m) => {
            inputs.insert(m.display().to_string(), digest(m)?);
            let assignment = read_manifest(m)?;
            crate::data::select_role(&assignment, &all, selector.role)
        }
    };
    if images.is_empty() {
        return Err(Error::Degenerate(format!(
            "split {} selects no images",
            selector.label()
        )));
    }
    Ok(Selection { images, inputs })
}

#[derive(Serialize)]
struct RunManifest<P: Serialize, S: Serialize> {
    tool: &'static str,
    version: &'static str,
    subcommand: &'static str,
    parameters: P,
    inputs: BTreeMap<String, String>,
    outputs: Vec<String>,
    summary: S,
}

struct OutDir {
    dir: PathBuf,
    files: Vec<String>,
}

impl OutDir {
    fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(OutDir {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.path(name);
        fs::write(&path, contents).map_err(|e| Error::io(&path, e))
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, &text)
    }

    fn finish<P: Serialize, S: Serialize>(
        mut self,
        subcommand: &'static str,
        parameters: P,
        inputs: BTreeMap<String, String>,
        summary: S,
    ) -> Result<()> {
        let manifest = RunManifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            subcommand,
            parameters,
            inputs,
            outputs: std::mem::take(&mut self.files),
            summary,
        };
        let path = self.dir.join("manifest.json");
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

#[derive(Serialize)]
struct BootstrapParams {
    resamples: usize,
    alpha: Fixed6,
    seed: u64,
}

impl From<&BootstrapConfig> for BootstrapParams {
    fn from(cfg: &BootstrapConfig) -> Self {
        BootstrapParams {
            resamples: cfg.resamples,
            alpha: Fixed6(cfg.alpha),
            seed: cfg.seed,
        }
    }
}

#[derive(Serialize)]
struct ImageCount {
    n_images: usize,
}

fn fixed_list(values: &[f64]) -> Vec<Fixed6> {
    values.iter().copied().map(Fixed6).collect()
}

pub fn confidence_sweep_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from("threshold,mae,mae_lo,mae_hi,n_images\n");
    for p in points {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            fmt6(p.threshold),
            fmt6(p.mae.point),
            fmt6(p.mae.lo),
            fmt6(p.mae.hi),
            p.n_images
        );
    }
    out
}

pub fn median_sweep_csv(points: &[MedianSweepPoint]) -> String {
    let mut out =
        String::from("median,effect,effect_lo,effect_hi,rejected_fraction,n_accepted,n_rejected\n");
    for p in points {
        let (e, lo, hi) = match p.effect {
            Some(ci) => (fmt6(ci.point), fmt6(ci.lo), fmt6(ci.hi)),
            None => Default::default(),
        };
        let _ = writeln!(
            out,
            "{},{e},{lo},{hi},{},{},{}",
            fmt6(p.median),
            fmt6(p.rejected_fraction),
            p.n_accepted,
            p.n_rejected
        );
    }
    out
}

pub fn oracle_csv(curve: &OracleCurve) -> String {
    let mut out = String::from("fraction,mae,n_kept\n");
    for p in &curve.points {
        let _ = writeln!(out, "{},{},{}", fmt6(p.fraction), fmt6(p.mae), p.n_kept);
    }
    out
}

fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    #[derive(Serialize)]
    struct Params {
        split: String,
        grid_step: Fixed6,
        bootstrap: BootstrapParams,
    }
    #[derive(Serialize)]
    struct Summary {
        n_images: usize,
        optimal_threshold: Fixed6,
    }

    let selector = SplitSelector::parse(&args.split, args.data.manifest.as_deref())?;
    let grid = unit_grid(args.grid_step)?;
    let cfg = args.bootstrap.config()?;
    let sel = select(&args.data.data, &selector)?;
    let points = sweep_confidence(&sel.images, &grid, &cfg)?;
    let best = optimal_confidence(&points)?;

    let mut out = OutDir::create(&args.out)?;
    out.write("sweep.csv", &confidence_sweep_csv(&points))?;
    out.finish(
        "sweep",
        Params {
            split: selector.label(),
            grid_step: Fixed6(args.grid_step),
            bootstrap: (&cfg).into(),
        },
        sel.inputs,
        Summary {
            n_images: sel.images.len(),
            optimal_threshold: Fixed6(best),
        },
    )
}

#[derive(Serialize)]
struct LevelOut {
    notation: String,
    kind: LevelKind,
    conf_threshold: Fixed6,
    median_threshold: Fixed6,
    effect: Fixed6,
    effect_lo: Fixed6,
    effect_hi: Fixed6,
    rejected_fraction: Fixed6,
    n_accepted: usize,
    n_rejected: usize,
}

impl LevelOut {
    fn new(report: &CalibrationReport, level: &RejectionLevel) -> Self {
        let p = report.point_for(level);
        let effect = p.effect.expect("selected points have a defined effect");
        LevelOut {
            notation: level.to_string(),
            kind: level.kind(),
            conf_threshold: Fixed6(level.conf_threshold()),
            median_threshold: Fixed6(level.median_threshold()),
            effect: Fixed6(effect.point),
            effect_lo: Fixed6(effect.lo),
            effect_hi: Fixed6(effect.hi),
            rejected_fraction: Fixed6(p.rejected_fraction),
            n_accepted: p.n_accepted,
            n_rejected: p.n_rejected,
        }
    }
}

#[derive(Serialize)]
struct ReportOut {
    conf_threshold: Fixed6,
    conf_source: &'static str,
    median_sweep: String,
    is_global: bool,
    levels: Vec<String>,
    absolute: LevelOut,
    relative: LevelOut,
}

fn cmd_calibrate(args: &CalibrateArgs) -> Result<()> {
    #[derive(Serialize)]
    struct Params<'a> {
        split: String,
        conf_threshold: &'a str,
        grid_step: Fixed6,
        empty_median: EmptyMedian,
        bootstrap: BootstrapParams,
    }
    #[derive(Serialize)]
    struct Used {
        value: Fixed6,
        source: &'static str,
    }
    #[derive(Serialize)]
    struct Summary {
        n_images: usize,
        conf_thresholds: Vec<Used>,
    }
    #[derive(Serialize)]
    struct Calibration {
        reports: Vec<ReportOut>,
    }

    let selector = SplitSelector::parse(&args.split, args.data.manifest.as_deref())?;
    let grid = unit_grid(args.grid_step)?;
    let bootstrap = args.bootstrap.config()?;
    let empty_median: EmptyMedian = args.empty_median.parse()?;
    let requested: Vec<Option<f64>> = args
        .conf_threshold
        .split(',')
        .map(|t| match t.trim() {
            "auto" => Ok(None),
            v => parse_list(v, "conf-threshold").map(|l| Some(l[0])),
        })
        .collect::<Result<_>>()?;
    if requested.iter().filter(|r| r.is_none()).count() > 1 {
        return Err(Error::Usage(
            "`auto` may appear once in --conf-threshold".into(),
        ));
    }
    let sel = select(&args.data.data, &selector)?;

    let mut out = OutDir::create(&args.out)?;
    let mut reports = Vec::new();
    let mut used = Vec::new();
    for conf in requested {
        let cfg = CalibrationConfig {
            conf_threshold: conf,
            confidence_grid: grid.clone(),
            median_grid: grid.clone(),
            bootstrap,
            empty_median,
        };
        let report = calibrate(&sel.images, &cfg)?;
        if let Some(sweep) = &report.confidence_sweep {
            out.write("confidence_sweep.csv", &confidence_sweep_csv(sweep))?;
        }
        let sweep_file = format!("median_sweep_{}.csv", fmt6(report.conf_threshold));
        if out.files.contains(&sweep_file) {
            return Err(Error::Usage(format!(
                "confidence threshold {} requested twice",
                fmt6(report.conf_threshold)
            )));
        }
        out.write(&sweep_file, &median_sweep_csv(&report.median_sweep.points))?;
        let source = if conf.is_some() { "given" } else { "auto" };
        used.push(Used {
            value: Fixed6(report.conf_threshold),
            source,
        });
        reports.push(ReportOut {
            conf_threshold: Fixed6(report.conf_threshold),
            conf_source: source,
            median_sweep: sweep_file,
            is_global: report.is_global,
            levels: report.levels().iter().map(|l| l.to_string()).collect(),
            absolute: LevelOut::new(&report, &report.absolute),
            relative: LevelOut::new(&report, &report.relative),
        });
    }
    out.write_json("calibration.json", &Calibration { reports })?;
    out.finish(
        "calibrate",
        Params {
            split: selector.label(),
            conf_threshold: &args.conf_threshold,
            grid_step: Fixed6(args.grid_step),
            empty_median,
            bootstrap: (&bootstrap).into(),
        },
        sel.inputs,
        Summary {
            n_images: sel.images.len(),
            conf_thresholds: used,
        },
    )
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    #[derive(Serialize)]
    struct Params<'a> {
        split: String,
        levels: &'a [String],
        empty_median: EmptyMedian,
        bootstrap: BootstrapParams,
    }
    #[derive(Serialize)]
    struct Row {
        level: String,
        conf_threshold: Fixed6,
        median_threshold: Fixed6,
        mae: Fixed6,
        mae_lo: Fixed6,
        mae_hi: Fixed6,
        ungated_mae: Fixed6,
        rejected_fraction: Fixed6,
        n_accepted: usize,
        n_rejected: usize,
    }
    #[derive(Serialize)]
    struct Evaluation {
        levels: Vec<Row>,
    }

    let selector = SplitSelector::parse(&args.split, args.data.manifest.as_deref())?;
    let cfg = args.bootstrap.config()?;
    let empty_median: EmptyMedian = args.empty_median.parse()?;
    let levels = args
        .level
        .iter()
        .map(|l| parse_level(l))
        .collect::<Result<Vec<_>>>()?;
    let sel = select(&args.data.data, &selector)?;

    let mut rows = Vec::new();
    for (level, kind) in &levels {
        let ev = evaluate_level(&sel.images, level, &cfg, empty_median).map_err(|e| match e {
            Error::Degenerate(_) => Error::Degenerate(format!(
                "level {} rejects all {} images",
                level_notation(level, *kind),
                sel.images.len()
            )),
            e => e,
        })?;
        rows.push(Row {
            level: level_notation(level, *kind),
            conf_threshold: Fixed6(level.conf_threshold()),
            median_threshold: Fixed6(level.median_threshold()),
            mae: Fixed6(ev.mae.point),
            mae_lo: Fixed6(ev.mae.lo),
            mae_hi: Fixed6(ev.mae.hi),
            ungated_mae: Fixed6(ev.ungated_mae),
            rejected_fraction: Fixed6(ev.rejected_fraction),
            n_accepted: ev.n_accepted,
            n_rejected: ev.n_rejected,
        });
    }
    let mut out = OutDir::create(&args.out)?;
    out.write_json("evaluation.json", &Evaluation { levels: rows })?;
    out.finish(
        "evaluate",
        Params {
            split: selector.label(),
            levels: &args.level,
            empty_median,
            bootstrap: (&cfg).into(),
        },
        sel.inputs,
        ImageCount {
            n_images: sel.images.len(),
        },
    )
}

fn cmd_oracle(args: &OracleArgs) -> Result<()> {
    #[derive(Serialize)]
    #[serde(tag = "mode", rename_all = "lowercase")]
    enum ModeOut {
        Aware { threshold: Fixed6 },
        Best { threshold_set: Option<Vec<Fixed6>> },
    }
    #[derive(Serialize)]
    struct Params<'a> {
        splits: &'a [String],
        oracle: ModeOut,
        fractions: Vec<Fixed6>,
    }

    let mode = match args.mode.as_str() {
        "aware" => OracleMode::ConfidenceAware {
            threshold: args
                .threshold
                .ok_or_else(|| Error::Usage("--mode aware requires --threshold".into()))?,
        },
        "best" => OracleMode::BestCase {
            candidates: args
                .threshold_set
                .as_deref()
                .map(|s| parse_list(s, "threshold-set"))
                .transpose()?,
        },
        m => {
            return Err(Error::Usage(format!(
                "--mode must be aware|best, got {m:?}"
            )))
        }
    };
    let fractions = parse_list(&args.fractions, "fractions")?;
    crate::oracle::validate_fractions(&fractions)?;
    let selectors = args
        .split
        .iter()
        .map(|s| SplitSelector::parse(s, args.data.manifest.as_deref()))
        .collect::<Result<Vec<_>>>()?;
    let mut labels: Vec<String> = selectors.iter().map(SplitSelector::label).collect();
    labels.sort();
    if labels.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Usage(
            "each --split must select a distinct manifest/role".into(),
        ));
    }

    let mut curves = Vec::new();
    let mut inputs = BTreeMap::new();
    for selector in &selectors {
        let sel = select(&args.data.data, selector)?;
        inputs.extend(sel.inputs);
        curves.push((
            selector.label(),
            oracle_curve(&sel.images, &mode, &fractions)?,
        ));
    }
    let mut out = OutDir::create(&args.out)?;
    let mut summary = BTreeMap::new();
    for (label, curve) in &curves {
        out.write(&format!("oracle_{label}.csv"), &oracle_csv(curve))?;
        summary.insert(
            label.clone(),
            ImageCount {
                n_images: curve.points[0].n_kept,
            },
        );
    }
    let oracle = match &mode {
        OracleMode::ConfidenceAware { threshold } => ModeOut::Aware {
            threshold: Fixed6(*threshold),
        },
        OracleMode::BestCase { candidates } => ModeOut::Best {
            threshold_set: candidates.as_deref().map(fixed_list),
        },
    };
    out.finish(
        "oracle",
        Params {
            splits: &args.split,
            oracle,
            fractions: fixed_list(&fractions),
        },
        inputs,
        summary,
    )
}

fn cmd_split(args: &SplitArgs) -> Result<()> {
    #[derive(Serialize)]
    struct Ratios {
        dev_of_current: Fixed6,
        train_of_dev: Fixed6,
    }
    #[derive(Serialize)]
    struct Params {
        target_season: String,
        kind: SplitKind,
        ratios: Ratios,
        seed: u64,
    }
    #[derive(Serialize)]
    struct Summary {
        counts: BTreeMap<String, usize>,
    }

    let target = args
        .target_season
        .parse()
        .map_err(|e: Error| Error::Usage(e.to_string()))?;
    let kind: SplitKind = args.kind.parse()?;
    let [dev_of_current, train_of_dev] = parse_list(&args.ratios, "ratios")?[..] else {
        return Err(Error::Usage(
            "--ratios expects DEV_OF_CURRENT,TRAIN_OF_DEV".into(),
        ));
    };
    let ratios = SplitRatios {
        dev_of_current,
        train_of_dev,
    };
    ratios.validate()?;
    let images = load_dataset(&args.data)?;
    let split = build_split(&images, target, kind, ratios, args.seed)?;

    let mut out = OutDir::create(&args.out)?;
    let path = out.path("split.csv");
    write_manifest(&path, &split.assignment)?;
    let counts = [Role::Train, Role::Val, Role::Test]
        .into_iter()
        .map(|role| (role.to_string(), split.ids(role).count()))
        .collect();
    let mut inputs = BTreeMap::new();
    inputs.insert(args.data.display().to_string(), digest(&args.data)?);
    out.finish(
        "split",
        Params {
            target_season: target.to_string(),
            kind,
            ratios: Ratios {
                dev_of_current: Fixed6(dev_of_current),
                train_of_dev: Fixed6(train_of_dev),
            },
            seed: args.seed,
        },
        inputs,
        Summary { counts },
    )
}

fn cmd_generate(args: &GenerateArgs) -> Result<()> {
    #[derive(Serialize)]
    struct Params {
        seed: u64,
    }

    let mut cfg = GeneratorConfig::from_path(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let images = generate_synthetic(&cfg)?;
    let mut out = OutDir::create(&args.out)?;
    let path = out.path("dataset.jsonl");
    write_dataset(&path, &images)?;
    let mut inputs = BTreeMap::new();
    inputs.insert(args.config.display().to_string(), digest(&args.config)?);
    out.finish(
        "generate",
        Params { seed: cfg.seed },
        inputs,
        ImageCount {
            n_images: images.len(),
        },
    )
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Sweep(a) => cmd_sweep(a),
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Oracle(a) => cmd_oracle(a),
        Command::Split(a) => cmd_split(a),
        Command::Generate(a) => cmd_generate(a),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn level_literals() {
        let (l, k) = parse_level("0.17,0.22").unwrap();
        assert_eq!(
            (l.conf_threshold(), l.median_threshold(), k),
            (0.17, 0.22, None)
        );
        assert_eq!(level_notation(&l, k), "[0.17, 0.22]");
        let (l, k) = parse_level("[0.17, 0.22]_g").unwrap();
        assert_eq!(k, Some(LevelKind::Global));
        assert_eq!(level_notation(&l, k), "[0.17, 0.22]_g");
        assert_eq!(
            parse_level("0.3,0.5,a").unwrap().1,
            Some(LevelKind::Absolute)
        );
        for bad in [
            "0.3",
            "0.3,0.5,0.1,0.2",
            "0.3,x",
            "1.5,0.2",
            "[0.1, 0.2]_z",
            "0.1,0.2,q",
        ] {
            assert!(parse_level(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn split_selectors() {
        let s = SplitSelector::parse("val", None).unwrap();
        assert_eq!(s.label(), "all");
        let s = SplitSelector::parse("val", Some(Path::new("out/k19h.csv"))).unwrap();
        assert_eq!(s.label(), "k19h_val");
        let s = SplitSelector::parse("a/s20p.csv:test", None).unwrap();
        assert_eq!(s.label(), "s20p_test");
        assert!(SplitSelector::parse("validation", None).is_err());
    }

    #[test]
    fn fixed_formatting() {
        assert_eq!(fmt6(4.0 / 3.0), "1.333333");
        assert_eq!(serde_json::to_string(&Fixed6(0.5)).unwrap(), "0.500000");
        assert_eq!(
            serde_json::to_string_pretty(&vec![Fixed6(2.0)]).unwrap(),
            "[\n  2.000000\n]"
        );
    }
}

//! Experiment runner: one TOML config, one method chosen by name, one run
//! directory holding per-seed JSON reports, `aggregate.csv` and the resolved
//! config with every default written out.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::data::{
    generate_clip_dataset, generate_seg_dataset, split_dataset, write_pgm, Manifest, SegFrame, Source, Split,
    SplitFractions, SplitItem, SyntheticClipSpec, SyntheticSegSpec,
};
use crate::dist::{run_dist, DistConfig};
use crate::encore::{predict_frames, generate_pseudo_mask, evaluate_segmentation, train_encore, EncoreConfig};
use crate::error::{Error, Result};
use crate::metrics::{iqr, median};
use crate::models::{evaluate, train_supervised, ClipModelSpec, Example, SegModelSpec, TrainConfig};
use crate::semivt::{train_semivt, SemiVtConfig};
use crate::types::VideoClip;

pub const AGGREGATE_FILE: &str = "aggregate.csv";
pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.toml";
pub const DETERMINISTIC_ENV: &str = "SSLV_DETERMINISTIC";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub method: String,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub dataset: SyntheticClipSpec,
    pub split: SplitFractions,
    pub model: ClipModelSpec,
    pub supervised: TrainConfig,
    pub dist: DistConfig,
    pub semivt: SemiVtConfig,
    pub segmentation: SegmentationSection,
    pub encore: EncoreConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentationSection {
    pub dataset: SyntheticSegSpec,
    pub split: SplitFractions,
    pub model: SegModelSpec,
    /// Write each unlabeled frame's final pseudo-mask as PGM.
    pub export_pseudo_masks: bool,
}

impl Default for SegmentationSection {
    fn default() -> Self {
        Self {
            dataset: SyntheticSegSpec::default(),
            split: SplitFractions {
                labeled: 0.1,
                val: 0.0,
                test: 0.25,
            },
            model: SegModelSpec::default(),
            export_pseudo_masks: false,
        }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            method: "supervised".into(),
            seeds: vec![0],
            output_dir: PathBuf::from("runs/default"),
            dataset: SyntheticClipSpec::default(),
            split: SplitFractions::default(),
            model: ClipModelSpec::default(),
            supervised: TrainConfig::default(),
            dist: DistConfig::default(),
            semivt: SemiVtConfig::default(),
            segmentation: SegmentationSection::default(),
            encore: EncoreConfig::default(),
        }
    }
}

fn config_err<T>(e: impl std::fmt::Display) -> Result<T> {
    Err(Error::Config(e.to_string()))
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).or_else(config_err)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).or_else(config_err)
    }

    /// Every problem a run would hit before training, as [`Error::Config`].
    pub fn validate(&self) -> Result<()> {
        let check = |r: Result<()>| r.or_else(|e| config_err(e.to_string().trim_start_matches("invalid input: ")));
        method_by_name(&self.method).map(|_| ()).or_else(config_err)?;
        if self.seeds.is_empty() {
            return config_err("seeds must not be empty");
        }
        check(self.dataset.validate())?;
        check(self.model.validate())?;
        if self.model.num_classes != self.dataset.num_classes {
            return config_err(format!(
                "model has {} classes, dataset has {}",
                self.model.num_classes, self.dataset.num_classes
            ));
        }
        if self.model.frame_shape != [self.dataset.height, self.dataset.width, 3] {
            return config_err("model frame_shape must match the dataset frame size");
        }
        check(self.supervised.validate())?;
        check(self.dist.train.validate())?;
        check(self.semivt.validate())?;
        check(self.segmentation.dataset.validate())?;
        check(self.segmentation.model.validate())?;
        check(self.encore.validate())?;
        Ok(())
    }
}

/// One aggregate CSV row. Empty cells mean "not applicable".
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: String,
    pub seed: u64,
    pub stage: Option<usize>,
    pub split: String,
    pub accuracy: Option<f64>,
    pub macro_f1: Option<f64>,
    pub dice: Option<f64>,
    pub pseudo_precision: Option<f64>,
}

impl AggregateRow {
    fn new(method: &str, seed: u64) -> Self {
        Self {
            method: method.to_string(),
            seed,
            stage: None,
            split: "test".into(),
            accuracy: None,
            macro_f1: None,
            dice: None,
            pseudo_precision: None,
        }
    }

    /// Accuracy, or Dice for segmentation rows.
    pub fn primary_metric(&self) -> Option<f64> {
        self.accuracy.or(self.dice)
    }
}

pub struct SeedOutput {
    pub rows: Vec<AggregateRow>,
    pub details: serde_json::Value,
}

/// A method runnable for one seed of an experiment.
pub trait Method: Send + Sync {
    fn name(&self) -> &'static str;

    fn run_seed(&self, config: &ExperimentConfig, seed: u64, seed_dir: &Path) -> Result<SeedOutput>;
}

pub struct MethodEntry {
    pub name: &'static str,
    pub build: fn() -> Box<dyn Method>,
}

pub static METHODS: &[MethodEntry] = &[
    MethodEntry {
        name: "supervised",
        build: || Box::new(Supervised),
    },
    MethodEntry {
        name: "dist",
        build: || Box::new(Dist),
    },
    MethodEntry {
        name: "semivt",
        build: || Box::new(SemiVt),
    },
    MethodEntry {
        name: "encore",
        build: || Box::new(Encore),
    },
];

pub fn method_by_name(name: &str) -> Result<Box<dyn Method>> {
    match METHODS.iter().find(|m| m.name == name) {
        Some(m) => Ok((m.build)()),
        None => {
            let known: Vec<&str> = METHODS.iter().map(|m| m.name).collect();
            Err(Error::InvalidInput(format!("unknown method `{name}` (known: {})", known.join(", "))))
        }
    }
}

/// Clips of one seed's split, borrowed from the generated dataset.
pub struct ClipSplits<'a> {
    pub labeled: Vec<Example<'a>>,
    pub val: Vec<Example<'a>>,
    pub test: Vec<Example<'a>>,
    pub unlabeled: Vec<&'a VideoClip>,
    /// Hidden labels of the unlabeled clips.
    pub truth: HashMap<String, usize>,
}

pub fn split_clips<'a>(clips: &'a [VideoClip], fractions: &SplitFractions, seed: u64) -> Result<(Manifest, ClipSplits<'a>)> {
    let items: Vec<SplitItem> = clips
        .iter()
        .enumerate()
        .map(|(i, c)| SplitItem {
            clip_id: c.clip_id.clone(),
            label: c.label,
            source: Source::Seed(i as u64),
        })
        .collect();
    let manifest = split_dataset(&items, fractions, seed)?;
    let by_id: HashMap<&str, &VideoClip> = clips.iter().map(|c| (c.clip_id.as_str(), c)).collect();
    let examples = |split: Split| -> Result<Vec<Example<'a>>> {
        manifest
            .entries()
            .iter()
            .filter(|e| e.split == split)
            .map(|e| {
                let label = e.label.ok_or_else(|| Error::InvalidInput(format!("{} has no label", e.clip_id)))?;
                Ok(Example {
                    clip: by_id[e.clip_id.as_str()],
                    label,
                })
            })
            .collect()
    };
    let unlabeled: Vec<&VideoClip> = manifest
        .entries()
        .iter()
        .filter(|e| e.split == Split::Unlabeled)
        .map(|e| by_id[e.clip_id.as_str()])
        .collect();
    let truth = unlabeled
        .iter()
        .filter_map(|c| c.label.map(|l| (c.clip_id.clone(), l)))
        .collect();
    let splits = ClipSplits {
        labeled: examples(Split::Labeled)?,
        val: examples(Split::Val)?,
        test: examples(Split::Test)?,
        unlabeled,
        truth,
    };
    Ok((manifest, splits))
}

/// Labeled, unlabeled and test frames of one seed's segmentation split.
pub fn split_frames<'a>(
    frames: &'a [SegFrame],
    fractions: &SplitFractions,
    seed: u64,
) -> Result<(Vec<&'a SegFrame>, Vec<&'a SegFrame>, Vec<&'a SegFrame>)> {
    let items: Vec<SplitItem> = frames
        .iter()
        .enumerate()
        .map(|(i, f)| SplitItem {
            clip_id: f.frame_id.clone(),
            label: None,
            source: Source::Seed(i as u64),
        })
        .collect();
    let manifest = split_dataset(&items, fractions, seed)?;
    let pick = |split: Split| frames.iter().zip(manifest.entries()).filter(|(_, e)| e.split == split).map(|(f, _)| f).collect();
    Ok((pick(Split::Labeled), pick(Split::Unlabeled), pick(Split::Test)))
}

fn clip_row(method: &str, seed: u64, report: &crate::types::MetricReport) -> AggregateRow {
    AggregateRow {
        accuracy: Some(report.accuracy),
        macro_f1: Some(report.macro_f1),
        ..AggregateRow::new(method, seed)
    }
}

pub struct Supervised;

impl Method for Supervised {
    fn name(&self) -> &'static str {
        "supervised"
    }

    fn run_seed(&self, config: &ExperimentConfig, seed: u64, _: &Path) -> Result<SeedOutput> {
        let (clips, _) = generate_clip_dataset(&config.dataset)?;
        let (_, s) = split_clips(&clips, &config.split, seed)?;
        let run = train_supervised(&config.model, &s.labeled, &config.supervised, seed)?;
        let report = evaluate(&run.model, &s.test)?;
        Ok(SeedOutput {
            rows: vec![clip_row(self.name(), seed, &report)],
            details: json!({ "loss_curve": run.loss_curve, "test": report }),
        })
    }
}

pub struct Dist;

impl Method for Dist {
    fn name(&self) -> &'static str {
        "dist"
    }

    fn run_seed(&self, config: &ExperimentConfig, seed: u64, _: &Path) -> Result<SeedOutput> {
        let (clips, _) = generate_clip_dataset(&config.dataset)?;
        let (_, s) = split_clips(&clips, &config.split, seed)?;
        let out = run_dist(&config.model, &s.labeled, &s.unlabeled, &s.test, &s.truth, &config.dist, seed)?;
        let rows = out
            .stages
            .iter()
            .map(|st| {
                let mut row = match &st.student_metrics {
                    Some(m) => clip_row(self.name(), seed, m),
                    None => AggregateRow::new(self.name(), seed),
                };
                row.stage = Some(st.stage);
                row.pseudo_precision = st.pseudo_precision;
                row
            })
            .collect();
        Ok(SeedOutput {
            rows,
            details: json!({ "stages": out.stages }),
        })
    }
}

pub struct SemiVt;

impl Method for SemiVt {
    fn name(&self) -> &'static str {
        "semivt"
    }

    fn run_seed(&self, config: &ExperimentConfig, seed: u64, _: &Path) -> Result<SeedOutput> {
        let (clips, _) = generate_clip_dataset(&config.dataset)?;
        let (_, s) = split_clips(&clips, &config.split, seed)?;
        let out = train_semivt(&config.model, &s.labeled, &s.unlabeled, &s.val, &config.semivt, seed)?;
        let report = evaluate(&out.student, &s.test)?;
        Ok(SeedOutput {
            rows: vec![clip_row(self.name(), seed, &report)],
            details: json!({ "epochs": out.epochs, "test": report }),
        })
    }
}

pub struct Encore;

impl Method for Encore {
    fn name(&self) -> &'static str {
        "encore"
    }

    fn run_seed(&self, config: &ExperimentConfig, seed: u64, seed_dir: &Path) -> Result<SeedOutput> {
        let seg = &config.segmentation;
        let frames = generate_seg_dataset(&seg.dataset)?;
        let (labeled, unlabeled, test) = split_frames(&frames, &seg.split, seed)?;
        let out = train_encore(&seg.model, &labeled, &unlabeled, &config.encore, seed)?;
        let dice = evaluate_segmentation(&out.model, &test)?;
        if seg.export_pseudo_masks {
            if let Some(profile) = &out.profile {
                let dir = seed_dir.join("pseudo_masks");
                fs::create_dir_all(&dir)?;
                for (pred, f) in predict_frames(&out.model, &unlabeled)?.iter().zip(&unlabeled) {
                    let mask = generate_pseudo_mask(pred, profile, &f.frame_id)?;
                    write_pgm(&mask.to_bytes(), f.height, f.width, &dir.join(format!("{}.pgm", f.frame_id)))?;
                }
            }
        }
        Ok(SeedOutput {
            rows: vec![AggregateRow {
                dice: Some(dice),
                ..AggregateRow::new(self.name(), seed)
            }],
            details: json!({
                "recalibrations": out.recalibrations,
                "profile": out.profile,
                "test_foreground_dice": dice,
            }),
        })
    }
}

#[derive(Debug)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub rows: Vec<AggregateRow>,
    /// Seeds that failed, with their error messages.
    pub failures: Vec<(u64, String)>,
}

pub fn deterministic_mode() -> bool {
    std::env::var(DETERMINISTIC_ENV).is_ok_and(|v| v == "1")
}

pub fn write_aggregate(rows: &[AggregateRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_aggregate(path: &Path) -> Result<Vec<AggregateRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Runs every seed into `out` (or `config.output_dir`). Failed seeds are
/// recorded in their JSON report and in the summary; the others still land
/// in the aggregate.
pub fn run_experiment(config: &ExperimentConfig, out: Option<&Path>) -> Result<RunSummary> {
    config.validate()?;
    let method = method_by_name(&config.method)?;
    let dir = out.unwrap_or(&config.output_dir).to_path_buf();
    fs::create_dir_all(&dir)?;
    fs::write(dir.join(RESOLVED_CONFIG_FILE), config.to_toml()?)?;

    let run_one = |&seed: &u64| -> (u64, Result<SeedOutput>) {
        let seed_dir = dir.join(format!("seed_{seed}"));
        let result = fs::create_dir_all(&seed_dir)
            .map_err(Error::from)
            .and_then(|_| method.run_seed(config, seed, &seed_dir));
        (seed, result)
    };
    let results: Vec<(u64, Result<SeedOutput>)> = if deterministic_mode() {
        config.seeds.iter().map(run_one).collect()
    } else {
        config.seeds.par_iter().map(run_one).collect()
    };

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (seed, result) in results {
        let report = match result {
            Ok(output) => {
                let report = json!({
                    "method": config.method,
                    "seed": seed,
                    "status": "ok",
                    "rows": output.rows,
                    "details": output.details,
                });
                rows.extend(output.rows);
                report
            }
            Err(e) => {
                failures.push((seed, e.to_string()));
                json!({ "method": config.method, "seed": seed, "status": "failed", "error": e.to_string() })
            }
        };
        fs::write(dir.join(format!("seed_{seed}.json")), serde_json::to_string_pretty(&report)?)?;
    }
    write_aggregate(&rows, &dir.join(AGGREGATE_FILE))?;
    Ok(RunSummary { dir, rows, failures })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub method: String,
    pub n_seeds: usize,
    pub median: f64,
    pub iqr: f64,
    /// Median of paired per-seed deltas against the baseline.
    pub median_delta: Option<f64>,
    #[serde(skip)]
    pub deltas: BTreeMap<u64, f64>,
}

/// Final-stage primary metric per seed of one run directory.
fn final_metrics(dir: &Path) -> Result<(String, BTreeMap<u64, f64>)> {
    let path = dir.join(AGGREGATE_FILE);
    if !path.is_file() {
        return Err(Error::InvalidInput(format!("no {AGGREGATE_FILE} in run directory {}", dir.display())));
    }
    let rows = read_aggregate(&path)?;
    let method = match rows.first() {
        Some(r) => r.method.clone(),
        None => return Err(Error::InvalidInput(format!("{} has no rows", path.display()))),
    };
    let mut best: BTreeMap<u64, (Option<usize>, f64)> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.split == "test") {
        if let Some(v) = r.primary_metric() {
            let entry = best.entry(r.seed).or_insert((r.stage, v));
            if r.stage >= entry.0 {
                *entry = (r.stage, v);
            }
        }
    }
    Ok((method, best.into_iter().map(|(s, (_, v))| (s, v)).collect()))
}

/// Median and IQR per run, plus paired per-seed deltas against `baseline`
/// (a method name or directory name; default the first run).
pub fn compare_runs(dirs: &[PathBuf], baseline: Option<&str>) -> Result<Vec<ComparisonRow>> {
    if dirs.len() < 2 {
        return Err(Error::InvalidInput("compare needs at least two run directories".into()));
    }
    let runs = dirs.iter().map(|d| final_metrics(d)).collect::<Result<Vec<_>>>()?;
    let base_idx = match baseline {
        None => 0,
        Some(name) => dirs
            .iter()
            .zip(&runs)
            .position(|(d, (m, _))| m == name || d.file_name().is_some_and(|f| f == name))
            .ok_or_else(|| Error::InvalidInput(format!("baseline `{name}` matches no run")))?,
    };
    let base = &runs[base_idx].1;
    runs.iter()
        .map(|(method, per_seed)| {
            let values: Vec<f64> = per_seed.values().copied().collect();
            if values.is_empty() {
                return Err(Error::InvalidInput(format!("run `{method}` has no metric values")));
            }
            let deltas: BTreeMap<u64, f64> = per_seed
                .iter()
                .filter_map(|(s, v)| base.get(s).map(|b| (*s, v - b)))
                .collect();
            let delta_values: Vec<f64> = deltas.values().copied().collect();
            Ok(ComparisonRow {
                method: method.clone(),
                n_seeds: values.len(),
                median: median(&values)?,
                iqr: iqr(&values)?,
                median_delta: if delta_values.is_empty() { None } else { Some(median(&delta_values)?) },
                deltas,
            })
        })
        .collect()
}

pub fn write_comparison(rows: &[ComparisonRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = ExperimentConfig::default();
        let text = c.to_toml().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), c);
        assert!(text.contains("[encore.grid]"));
    }

    #[test]
    fn config_errors_are_config_errors() {
        for bad in ["method = \"mixmatch\"", "seeds = []", "bogus = 1", "[model]\nnum_classes = 7"] {
            assert!(matches!(ExperimentConfig::from_toml(bad), Err(Error::Config(_))), "{bad}");
        }
    }

    #[test]
    fn registry_lists_every_method() {
        for m in METHODS {
            assert_eq!(method_by_name(m.name).unwrap().name(), m.name);
        }
    }
}

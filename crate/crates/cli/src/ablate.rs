//! Seeded ablation sweeps over synthetic worlds.
//!
//! A sweep file looks like
//!
//! ```toml
//! seeds = [0, 1, 2]
//!
//! [scenario]
//! preset = "noisy"
//! embed_noise = 0.15
//!
//! [sweep]
//! metric = ["cosine", "bisoftmax"]
//! backdrops = ["on", "off"]
//! ```
//!
//! Every combination of the swept axes is run on every seed and produces
//! one CSV row. Axes left out keep their default value.

use std::io::Write;
use std::thread;

use quasitrack_core::contrastive::{optimize_embeddings, LossConfig, LossVariant, OptimizeOptions};
use quasitrack_core::metrics::evaluate;
use quasitrack_core::synth::{
    feature_world, generate, histories_to_set, iou_baseline_track, subsample, FeatureWorldConfig, WorldConfig,
};
use quasitrack_core::tracker::{run_sequence, SimilarityMetric, TrackerConfig};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AblateError {
    #[error("invalid sweep: {0}")]
    Spec(String),
    #[error(transparent)]
    Core(#[from] quasitrack_core::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Toggle {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossName {
    SinglePositive,
    NaiveMulti,
    AccumulatedMulti,
}

impl LossName {
    pub fn variant(self) -> LossVariant {
        match self {
            LossName::SinglePositive => LossVariant::SinglePositive,
            LossName::NaiveMulti => LossVariant::NaiveMulti,
            LossName::AccumulatedMulti => LossVariant::AccumulatedMulti,
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            LossName::SinglePositive => "single_positive",
            LossName::NaiveMulti => "naive_multi",
            LossName::AccumulatedMulti => "accumulated_multi",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Baseline {
    /// The appearance tracker.
    Appearance,
    /// Greedy IoU linking between consecutive frames.
    Iou,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub metric: Option<Vec<SimilarityMetric>>,
    pub backdrops: Option<Vec<Toggle>>,
    pub duplicate_removal: Option<Vec<Toggle>>,
    pub loss: Option<Vec<LossName>>,
    pub subsample: Option<Vec<usize>>,
    pub baseline: Option<Vec<Baseline>>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSpec {
    pub steps: usize,
    pub learning_rate: f64,
    pub output_dim: usize,
    pub eval_pairs: usize,
}

impl Default for TrainingSpec {
    fn default() -> Self {
        Self { steps: 600, learning_rate: 0.05, output_dim: 8, eval_pairs: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSpec {
    /// `preset` (clean, noisy or moving) plus world settings that override it.
    pub scenario: toml::Table,
    /// Explicit seeds; otherwise `runs` consecutive seeds from the base seed.
    pub seeds: Option<Vec<u64>>,
    pub runs: usize,
    pub sweep: Sweep,
    pub iou_threshold: f64,
    /// Linking threshold of the IoU baseline.
    pub baseline_iou: f64,
    pub training: TrainingSpec,
}

impl Default for AblationSpec {
    fn default() -> Self {
        Self {
            scenario: toml::Table::new(),
            seeds: None,
            runs: 10,
            sweep: Sweep::default(),
            iou_threshold: 0.5,
            baseline_iou: 0.3,
            training: TrainingSpec::default(),
        }
    }
}

impl AblationSpec {
    pub fn parse(text: &str) -> Result<Self, AblateError> {
        toml::from_str(text).map_err(|e| AblateError::Spec(e.to_string()))
    }

    /// Sets one sweep axis from `key=v1,v2,...`.
    pub fn set_axis(&mut self, assignment: &str) -> Result<(), AblateError> {
        let (key, values) = assignment
            .split_once('=')
            .ok_or_else(|| AblateError::Spec(format!("expected key=values, got {assignment:?}")))?;
        let array: Vec<toml::Value> = values
            .split(',')
            .map(|v| v.trim().parse::<i64>().map_or_else(|_| toml::Value::String(v.trim().into()), toml::Value::Integer))
            .collect();
        let mut table = toml::Table::try_from(&self.sweep).map_err(|e| AblateError::Spec(e.to_string()))?;
        table.insert(key.trim().into(), toml::Value::Array(array));
        self.sweep = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| AblateError::Spec(e.to_string()))?;
        Ok(())
    }

    /// The world for `seed`: the preset overlaid with the scenario keys.
    pub fn world(&self, seed: u64) -> Result<WorldConfig, AblateError> {
        let mut overrides = self.scenario.clone();
        let preset = match overrides.remove("preset") {
            None => "noisy".to_string(),
            Some(toml::Value::String(s)) => s,
            Some(v) => return Err(AblateError::Spec(format!("preset must be a string, got {v}"))),
        };
        let base = match preset.as_str() {
            "clean" => WorldConfig::clean(seed),
            "noisy" => WorldConfig::noisy(seed),
            "moving" => WorldConfig::moving(seed),
            other => return Err(AblateError::Spec(format!("unknown preset {other:?}"))),
        };
        let mut table = toml::Table::try_from(&base).map_err(|e| AblateError::Spec(e.to_string()))?;
        for (k, v) in overrides {
            table.insert(k, v);
        }
        table.insert("seed".into(), toml::Value::Integer(seed as i64));
        let cfg: WorldConfig =
            toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| AblateError::Spec(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn seed_list(&self, base_seed: u64) -> Vec<u64> {
        match &self.seeds {
            Some(s) => s.clone(),
            None => (0..self.runs as u64).map(|i| base_seed.wrapping_add(i)).collect(),
        }
    }

    /// Every combination of the swept axes, in a fixed order.
    pub fn configurations(&self) -> Vec<Configuration> {
        let s = &self.sweep;
        let or = |v: &Option<Vec<Toggle>>| v.clone().unwrap_or_else(|| vec![Toggle::On]);
        let mut out = Vec::new();
        for &baseline in s.baseline.as_deref().unwrap_or(&[Baseline::Appearance]) {
            for &metric in s.metric.as_deref().unwrap_or(&[SimilarityMetric::BiSoftmax]) {
                for backdrops in or(&s.backdrops) {
                    for duplicate_removal in or(&s.duplicate_removal) {
                        let losses: Vec<Option<LossName>> = match &s.loss {
                            Some(v) => v.iter().map(|&l| Some(l)).collect(),
                            None => vec![None],
                        };
                        for loss in losses {
                            for &k in s.subsample.as_deref().unwrap_or(&[1]) {
                                out.push(Configuration { baseline, metric, backdrops, duplicate_removal, loss, subsample: k });
                            }
                        }
                    }
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), AblateError> {
        self.world(0)?;
        if self.sweep.subsample.iter().flatten().any(|&k| k == 0) {
            return Err(AblateError::Spec("subsample factors must be positive".into()));
        }
        if self.seeds.as_ref().map_or(self.runs == 0, Vec::is_empty) {
            return Err(AblateError::Spec("no seeds to run".into()));
        }
        Ok(())
    }
}

fn metric_name(m: SimilarityMetric) -> &'static str {
    match m {
        SimilarityMetric::BiSoftmax => "bisoftmax",
        SimilarityMetric::Cosine => "cosine",
    }
}

fn toggle_name(t: Toggle) -> &'static str {
    match t {
        Toggle::On => "on",
        Toggle::Off => "off",
    }
}

fn baseline_name(b: Baseline) -> &'static str {
    match b {
        Baseline::Appearance => "appearance",
        Baseline::Iou => "iou",
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Configuration {
    pub baseline: Baseline,
    pub metric: SimilarityMetric,
    pub backdrops: Toggle,
    pub duplicate_removal: Toggle,
    pub loss: Option<LossName>,
    pub subsample: usize,
}

impl Configuration {
    pub fn tracker_config(&self, base: &TrackerConfig) -> TrackerConfig {
        let mut cfg = base.clone();
        cfg.metric = self.metric;
        cfg.backdrop_frames = match self.backdrops {
            Toggle::On => base.backdrop_frames.max(1),
            Toggle::Off => 0,
        };
        if self.duplicate_removal == Toggle::Off {
            cfg.nms_threshold = 1.0;
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub config: Configuration,
    pub seed: u64,
    pub mota: Option<f64>,
    pub idf1: Option<f64>,
    pub hota: Option<f64>,
    pub idsw: usize,
    /// Cross-frame nearest-neighbor identity accuracy of the trained head,
    /// when the loss axis is swept.
    pub accuracy: Option<f64>,
}

fn train_accuracy(spec: &AblationSpec, loss: LossName, seed: u64) -> Result<f64, AblateError> {
    let t = &spec.training;
    let world = feature_world(&FeatureWorldConfig { seed, eval_pairs: t.eval_pairs, ..FeatureWorldConfig::default() })?;
    let cfg = LossConfig { variant: loss.variant(), ..LossConfig::default() };
    let opts = OptimizeOptions { steps: t.steps, learning_rate: t.learning_rate, output_dim: t.output_dim, seed };
    let out = optimize_embeddings(&world.pairs, &cfg, &opts)?;
    Ok(world.accuracy(&out.head)?)
}

fn run_seed(spec: &AblationSpec, base: &TrackerConfig, configs: &[Configuration], seed: u64) -> Result<Vec<AblationRow>, AblateError> {
    let scenario = generate(&spec.world(seed)?)?;
    let mut rows = Vec::with_capacity(configs.len());
    for c in configs {
        let sub = subsample(&scenario, c.subsample);
        let pred = match c.baseline {
            Baseline::Iou => iou_baseline_track(&sub, spec.baseline_iou),
            Baseline::Appearance => histories_to_set(&run_sequence(&c.tracker_config(base), sub.detection_stream())?),
        };
        let s = evaluate(&sub.gt, &pred, spec.iou_threshold);
        let accuracy = c.loss.map(|l| train_accuracy(spec, l, seed)).transpose()?;
        rows.push(AblationRow {
            config: *c,
            seed,
            mota: s.mota,
            idf1: s.idf1,
            hota: s.hota.map(|h| h.hota),
            idsw: s.idsw,
            accuracy,
        });
    }
    Ok(rows)
}

/// Runs the sweep. Seeds run on separate threads; the row order is fixed:
/// configurations in sweep order, then seeds.
pub fn run(spec: &AblationSpec, base: &TrackerConfig, base_seed: u64) -> Result<Vec<AblationRow>, AblateError> {
    spec.validate()?;
    base.validate()?;
    let configs = spec.configurations();
    let seeds = spec.seed_list(base_seed);
    let shared: &[Configuration] = &configs;
    let per_seed: Vec<Result<Vec<AblationRow>, AblateError>> = thread::scope(|scope| {
        let handles: Vec<_> = seeds.iter().map(|&seed| scope.spawn(move || run_seed(spec, base, shared, seed))).collect();
        handles.into_iter().map(|h| h.join().expect("ablation worker panicked")).collect()
    });
    let per_seed: Vec<Vec<AblationRow>> = per_seed.into_iter().collect::<Result<_, _>>()?;
    let mut rows = Vec::with_capacity(configs.len() * seeds.len());
    for c in 0..configs.len() {
        for s in &per_seed {
            rows.push(s[c].clone());
        }
    }
    Ok(rows)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x}"))
}

pub const CSV_HEADER: [&str; 12] = [
    "baseline",
    "metric",
    "backdrops",
    "duplicate_removal",
    "loss",
    "subsample",
    "seed",
    "mota",
    "idf1",
    "hota",
    "idsw",
    "accuracy",
];

pub fn write_csv<W: Write>(out: W, rows: &[AblationRow]) -> Result<(), AblateError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        let c = &r.config;
        w.write_record([
            baseline_name(c.baseline).to_string(),
            metric_name(c.metric).to_string(),
            toggle_name(c.backdrops).to_string(),
            toggle_name(c.duplicate_removal).to_string(),
            c.loss.map_or("", LossName::as_str).to_string(),
            c.subsample.to_string(),
            r.seed.to_string(),
            opt(r.mota),
            opt(r.idf1),
            opt(r.hota),
            r.idsw.to_string(),
            opt(r.accuracy),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Mean of `f` over the rows matching `pick`.
pub fn mean(rows: &[AblationRow], pick: impl Fn(&Configuration) -> bool, f: impl Fn(&AblationRow) -> Option<f64>) -> Option<f64> {
    let v: Vec<f64> = rows.iter().filter(|r| pick(&r.config)).filter_map(f).collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

//! Experiment configuration: one TOML file drives every command. Each CLI
//! flag mirrors a config key and wins over it, so ablations and one-off
//! reruns are config deltas rather than code edits.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attacks::{AttackBudget, PipelineName};
use crate::data::DataSpec;
use crate::error::{LabError, Result};
use crate::models::{Arch, TrainConfig};
use crate::transforms::{PositionMode, SampleConfig, ShuffleConfig};

/// A numeric config value that may be written as a plain number or as a
/// fraction string such as `"2/255"`, the natural unit for pixel budgets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scalar {
    Number(f64),
    Text(String),
}

impl Scalar {
    pub fn value(&self) -> Result<f64> {
        match self {
            Scalar::Number(x) => Ok(*x),
            Scalar::Text(s) => parse_fraction(s),
        }
    }
}

impl From<f64> for Scalar {
    fn from(x: f64) -> Self {
        Scalar::Number(x)
    }
}

/// Parse `"a/b"` or a plain decimal string into an f64.
pub fn parse_fraction(text: &str) -> Result<f64> {
    let parse = |part: &str| {
        part.trim()
            .parse::<f64>()
            .map_err(|_| LabError::Config(format!("cannot parse number {:?}", part.trim())))
    };
    match text.split_once('/') {
        Some((numerator, denominator)) => {
            let d = parse(denominator)?;
            if d == 0.0 {
                return Err(LabError::Config(format!("zero denominator in {text:?}")));
            }
            Ok(parse(numerator)? / d)
        }
        None => parse(text),
    }
}

fn default_image_size() -> (usize, usize) {
    (32, 32)
}

/// `[dataset]` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub num_images: usize,
    #[serde(default = "default_image_size")]
    pub image_size: (usize, usize),
    #[serde(default)]
    pub seed: u64,
}

impl DatasetSection {
    pub fn to_spec(&self) -> DataSpec {
        DataSpec { num_images: self.num_images, image_size: self.image_size, seed: self.seed }
    }
}

fn default_epochs() -> usize {
    TrainConfig::default().epochs
}
fn default_batch_size() -> usize {
    TrainConfig::default().batch_size
}
fn default_learning_rate() -> f64 {
    TrainConfig::default().learning_rate
}
fn default_embed_dim() -> usize {
    TrainConfig::default().embed_dim
}
fn default_augment() -> bool {
    TrainConfig::default().augment
}

/// One `[[models]]` entry: a tag naming the checkpoint plus its training
/// recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub tag: String,
    pub arch: Arch,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_embed_dim")]
    pub embed_dim: usize,
    #[serde(default = "default_augment")]
    pub augment: bool,
}

impl ModelSection {
    pub fn to_train_config(&self) -> TrainConfig {
        TrainConfig {
            arch: self.arch,
            seed: self.seed,
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            embed_dim: self.embed_dim,
            augment: self.augment,
        }
    }
}

/// `[budget]` section; every field defaults to the standard budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BudgetSection {
    pub image_radius: Scalar,
    pub step_size: Scalar,
    pub iterations: usize,
    pub momentum: Scalar,
    pub text_radius: usize,
    pub candidates_per_word: usize,
    pub loss_mix: Scalar,
    pub shuffle_draws: usize,
    pub shuffle_position: String,
    pub sample_count: usize,
    pub sample_radius: Scalar,
}

impl Default for BudgetSection {
    fn default() -> Self {
        Self {
            image_radius: Scalar::Text("2/255".into()),
            step_size: Scalar::Text("0.5/255".into()),
            iterations: 10,
            momentum: 1.0.into(),
            text_radius: 1,
            candidates_per_word: 10,
            loss_mix: 0.5.into(),
            shuffle_draws: 20,
            shuffle_position: "random".into(),
            sample_count: 20,
            sample_radius: Scalar::Text("1/255".into()),
        }
    }
}

impl BudgetSection {
    /// Resolve into an attack budget. Seeds are placeholders: the crafting
    /// layer rederives them per pair from the run's root seed.
    pub fn to_budget(&self) -> Result<AttackBudget> {
        let budget = AttackBudget {
            image_radius: self.image_radius.value()?,
            step_size: self.step_size.value()?,
            iterations: self.iterations,
            momentum: self.momentum.value()?,
            text_radius: self.text_radius,
            candidates_per_word: self.candidates_per_word,
            loss_mix: self.loss_mix.value()?,
            shuffle: ShuffleConfig::new(
                self.shuffle_draws,
                PositionMode::parse(&self.shuffle_position)?,
                0,
            ),
            sample: SampleConfig::new(self.sample_count, self.sample_radius.value()?, 0)?,
        };
        budget.validate()?;
        Ok(budget)
    }
}

fn default_amplification() -> f64 {
    40.0
}
fn default_triptych_pairs() -> usize {
    4
}

/// `[report]` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportSection {
    /// Multiplier for the rendered perturbation panel, centered at
    /// mid-gray: `clamp(0.5 + amplification·(adv − orig))`.
    pub amplification: f64,
    /// How many test pairs get a side-by-side image panel per attack arm.
    pub triptych_pairs: usize,
}

impl Default for ReportSection {
    fn default() -> Self {
        Self { amplification: default_amplification(), triptych_pairs: default_triptych_pairs() }
    }
}

/// Which budget knob an ablation sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    ShuffleDraws,
    ShufflePosition,
    LossMix,
    Momentum,
    SampleRadius,
    SampleCount,
}

impl SweepParameter {
    pub fn as_str(&self) -> &'static str {
        match self {
            SweepParameter::ShuffleDraws => "shuffle_draws",
            SweepParameter::ShufflePosition => "shuffle_position",
            SweepParameter::LossMix => "loss_mix",
            SweepParameter::Momentum => "momentum",
            SweepParameter::SampleRadius => "sample_radius",
            SweepParameter::SampleCount => "sample_count",
        }
    }

    /// Parameters that leave the image loop untouched; sweeps over them
    /// can reuse one crafted image per pair across all values.
    pub fn text_stage_only(&self) -> bool {
        matches!(
            self,
            SweepParameter::LossMix | SweepParameter::SampleRadius | SweepParameter::SampleCount
        )
    }
}

impl std::fmt::Display for SweepParameter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One swept value: numeric for counts and weights, text for fractions
/// ("1/255") and position modes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SweepValue {
    Number(f64),
    Text(String),
}

impl SweepValue {
    /// Stable label used in file names, CSV cells, and plot captions.
    pub fn label(&self) -> String {
        match self {
            SweepValue::Number(x) => format!("{x}"),
            SweepValue::Text(s) => s.clone(),
        }
    }

    /// Numeric x-coordinate for plots; categorical values have none.
    pub fn numeric(&self) -> Option<f64> {
        match self {
            SweepValue::Number(x) => Some(*x),
            SweepValue::Text(s) => parse_fraction(s).ok(),
        }
    }
}

fn non_negative_count(x: f64) -> Result<usize> {
    if x.is_finite() && x >= 0.0 && x.fract() == 0.0 {
        Ok(x as usize)
    } else {
        Err(LabError::Config(format!("expected a non-negative integer, got {x}")))
    }
}

/// Apply one swept value to a base budget; the result is validated.
pub fn apply_sweep(
    budget: &AttackBudget,
    parameter: SweepParameter,
    value: &SweepValue,
) -> Result<AttackBudget> {
    let mut swept = *budget;
    let number = || {
        value.numeric().ok_or_else(|| {
            LabError::Config(format!(
                "sweep value {:?} is not numeric for parameter {parameter}",
                value.label()
            ))
        })
    };
    match parameter {
        SweepParameter::ShuffleDraws => swept.shuffle.draws = non_negative_count(number()?)?,
        SweepParameter::SampleCount => swept.sample.count = non_negative_count(number()?)?,
        SweepParameter::LossMix => swept.loss_mix = number()?,
        SweepParameter::Momentum => swept.momentum = number()?,
        SweepParameter::SampleRadius => swept.sample.radius = number()?,
        SweepParameter::ShufflePosition => {
            swept.shuffle.position = match value {
                SweepValue::Text(s) => PositionMode::parse(s)?,
                SweepValue::Number(_) => {
                    return Err(LabError::Config(
                        "shuffle_position sweep values must be mode names".into(),
                    ))
                }
            }
        }
    }
    swept.validate()?;
    Ok(swept)
}

fn default_ablation_pipeline() -> PipelineName {
    PipelineName::Lssa
}

/// `[ablation]` section: sweep one budget parameter for one attack arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationSpec {
    pub parameter: SweepParameter,
    pub values: Vec<SweepValue>,
    #[serde(default = "default_ablation_pipeline")]
    pub pipeline: PipelineName,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs/lab")
}

/// The whole experiment: dataset, models, budget, attack arms, seeds, and
/// reporting knobs. Loaded from TOML and validated before any compute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub pipelines: Vec<PipelineName>,
    /// Model tags attacks are crafted on; defaults to the first model.
    #[serde(default)]
    pub sources: Vec<String>,
    pub dataset: DatasetSection,
    pub models: Vec<ModelSection>,
    #[serde(default)]
    pub budget: BudgetSection,
    #[serde(default)]
    pub report: ReportSection,
    #[serde(default)]
    pub ablation: Option<AblationSpec>,
}

fn path_safe(tag: &str) -> bool {
    !tag.is_empty()
        && tag.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.')
}

impl ExperimentConfig {
    /// Read and validate a config file. Missing sources default to the
    /// first model tag.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            LabError::Config(format!("cannot read config file {}: {e}", path.display()))
        })?;
        Self::from_toml(&text, path)
    }

    pub fn from_toml(text: &str, origin: &Path) -> Result<Self> {
        let mut cfg: ExperimentConfig = toml::from_str(text)
            .map_err(|e| LabError::Config(format!("{}: {e}", origin.display())))?;
        if cfg.sources.is_empty() {
            if let Some(first) = cfg.models.first() {
                cfg.sources = vec![first.tag.clone()];
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Command-line overrides; flags win over config keys.
    pub fn apply_overrides(&mut self, seed: Option<u64>, out: Option<PathBuf>) {
        if let Some(s) = seed {
            self.seeds = vec![s];
        }
        if let Some(dir) = out {
            self.out_dir = dir;
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(LabError::Config("seeds must be nonempty".into()));
        }
        let mut seen_seeds = std::collections::BTreeSet::new();
        for &s in &self.seeds {
            if !seen_seeds.insert(s) {
                return Err(LabError::Config(format!("duplicate seed {s}")));
            }
        }
        let mut seen_arms = std::collections::BTreeSet::new();
        for p in &self.pipelines {
            if !seen_arms.insert(p.as_str()) {
                return Err(LabError::Config(format!("duplicate pipeline {p}")));
            }
        }
        if self.models.is_empty() {
            return Err(LabError::Config("at least one model is required".into()));
        }
        let mut tags = std::collections::BTreeSet::new();
        for m in &self.models {
            if !path_safe(&m.tag) {
                return Err(LabError::Config(format!(
                    "model tag {:?} must be a nonempty [A-Za-z0-9._-]+ name",
                    m.tag
                )));
            }
            if !tags.insert(m.tag.as_str()) {
                return Err(LabError::Config(format!("duplicate model tag {:?}", m.tag)));
            }
            if m.epochs == 0 {
                return Err(LabError::Config(format!("model {:?} has zero epochs", m.tag)));
            }
            if m.batch_size < 2 {
                return Err(LabError::Config(format!(
                    "model {:?} needs batch_size ≥ 2 for in-batch negatives",
                    m.tag
                )));
            }
            if !(m.learning_rate.is_finite() && m.learning_rate > 0.0) {
                return Err(LabError::Config(format!(
                    "model {:?} has a non-positive learning rate",
                    m.tag
                )));
            }
            if m.embed_dim < 2 {
                return Err(LabError::Config(format!("model {:?} needs embed_dim ≥ 2", m.tag)));
            }
        }
        if self.sources.is_empty() {
            return Err(LabError::Config("sources must name at least one model".into()));
        }
        for s in &self.sources {
            if !tags.contains(s.as_str()) {
                return Err(LabError::Config(format!(
                    "source {s:?} does not match any model tag"
                )));
            }
        }
        if self.dataset.num_images == 0 {
            return Err(LabError::Config("dataset needs at least one image".into()));
        }
        let budget = self.budget.to_budget()?;
        if !(self.report.amplification.is_finite() && self.report.amplification > 0.0) {
            return Err(LabError::Config(format!(
                "report amplification must be a positive number, got {}",
                self.report.amplification
            )));
        }
        if let Some(ablation) = &self.ablation {
            if ablation.values.is_empty() {
                return Err(LabError::Config("ablation values must be nonempty".into()));
            }
            for value in &ablation.values {
                apply_sweep(&budget, ablation.parameter, value)?;
            }
        }
        Ok(())
    }

    /// The resolved attack budget (seed fields are placeholders).
    pub fn attack_budget(&self) -> Result<AttackBudget> {
        self.budget.to_budget()
    }

    pub fn model(&self, tag: &str) -> Result<&ModelSection> {
        self.models
            .iter()
            .find(|m| m.tag == tag)
            .ok_or_else(|| LabError::Config(format!("no model tagged {tag:?}")))
    }
}

//! On-disk layout of a run directory, the freshness rule commands use to
//! decide whether to recompute, and the attack-run store (per-pair arrays
//! plus a JSON index).

use std::path::{Path, PathBuf};
use std::time::SystemTime;

use serde::{Deserialize, Serialize};

use crate::attacks::{AttackBudget, AttackOutcome, PipelineName};
use crate::data::Vocabulary;
use crate::error::{LabError, Result};
use crate::grid::ImageGrid;
use crate::harness::config::SweepParameter;
use crate::npy;

pub const ATTACK_SCHEMA_VERSION: u32 = 1;

/// Paths of every artifact under one run directory.
///
/// ```text
/// <out>/
///   dataset/                        manifest, PNGs, captions, vocab
///   checkpoints/<tag>.ckpt
///   attacks/<source>/<arm>/seed_<k>/outcomes.json + pair_<id>.npy
///   eval/seed_<k>/<source>__<arm>__<target>.json
///   eval/clean_metrics.csv, eval/transfer_matrix.csv
///   ablation/<parameter>/...        per-value reports, sweep CSVs, plots
///   report/                         tables, triptychs, caption diffs
/// ```
#[derive(Debug, Clone)]
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.root.join("dataset")
    }

    pub fn dataset_manifest(&self) -> PathBuf {
        self.dataset_dir().join("manifest.json")
    }

    pub fn checkpoint_dir(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn checkpoint(&self, tag: &str) -> PathBuf {
        self.checkpoint_dir().join(format!("{tag}.ckpt"))
    }

    pub fn attack_dir(&self, source: &str, arm: PipelineName, seed: u64) -> PathBuf {
        self.root.join("attacks").join(source).join(arm.as_str()).join(format!("seed_{seed}"))
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.root.join("eval")
    }

    pub fn eval_report(&self, seed: u64, source: &str, arm: PipelineName, target: &str) -> PathBuf {
        self.eval_dir()
            .join(format!("seed_{seed}"))
            .join(format!("{source}__{}__{target}.json", arm.as_str()))
    }

    pub fn clean_metrics_csv(&self) -> PathBuf {
        self.eval_dir().join("clean_metrics.csv")
    }

    pub fn matrix_csv(&self) -> PathBuf {
        self.eval_dir().join("transfer_matrix.csv")
    }

    pub fn ablation_dir(&self, parameter: SweepParameter) -> PathBuf {
        self.root.join("ablation").join(parameter.as_str())
    }

    pub fn sweep_value_dir(&self, parameter: SweepParameter, index: usize, label: &str) -> PathBuf {
        self.ablation_dir(parameter).join(format!("value_{index}_{}", slug(label)))
    }

    pub fn sweep_report(
        &self,
        parameter: SweepParameter,
        index: usize,
        label: &str,
        seed: u64,
        target: &str,
    ) -> PathBuf {
        self.sweep_value_dir(parameter, index, label)
            .join(format!("seed_{seed}"))
            .join(format!("{target}.json"))
    }

    pub fn sweep_csv(&self, parameter: SweepParameter) -> PathBuf {
        self.ablation_dir(parameter).join("sweep.csv")
    }

    pub fn sweep_plot(&self, parameter: SweepParameter, target: &str) -> PathBuf {
        self.ablation_dir(parameter).join(format!("sweep_{target}.png"))
    }

    pub fn sweep_plot_csv(&self, parameter: SweepParameter, target: &str) -> PathBuf {
        self.ablation_dir(parameter).join(format!("sweep_{target}.csv"))
    }

    pub fn report_dir(&self) -> PathBuf {
        self.root.join("report")
    }
}

/// File name for one adversarial image inside an attack run directory.
pub fn adversarial_image_path(dir: &Path, pair_id: u32) -> PathBuf {
    dir.join(format!("pair_{pair_id:05}.npy"))
}

fn slug(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect()
}

/// True when any output is missing or any input is strictly newer than the
/// oldest output. Missing inputs do not veto a rebuild; the rebuild itself
/// will fail with a precise missing-artifact error.
pub fn needs_rebuild(inputs: &[PathBuf], outputs: &[PathBuf]) -> Result<bool> {
    let mut oldest_output: Option<SystemTime> = None;
    for path in outputs {
        match std::fs::metadata(path) {
            Ok(meta) => {
                let t = meta.modified()?;
                oldest_output = Some(oldest_output.map_or(t, |o| o.min(t)));
            }
            Err(_) => return Ok(true),
        }
    }
    let Some(oldest) = oldest_output else { return Ok(true) };
    for path in inputs {
        if let Ok(meta) = std::fs::metadata(path) {
            if meta.modified()? > oldest {
                return Ok(true);
            }
        }
    }
    Ok(false)
}

/// Serialized form of one attack outcome; the image lives in a sibling
/// `.npy` file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutcomeRecord {
    pub pair_id: u32,
    pub caption_ids: Vec<u32>,
    pub caption_text: String,
    pub shuffle_seed: u64,
    pub sample_seed: u64,
    pub loss_trace: Vec<f64>,
}

/// Index file of one (source, arm, root seed) attack run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackRunIndex {
    pub schema_version: u32,
    pub source: String,
    pub pipeline: PipelineName,
    pub root_seed: u64,
    pub budget: AttackBudget,
    pub outcomes: Vec<OutcomeRecord>,
}

pub fn outcome_index_path(dir: &Path) -> PathBuf {
    dir.join("outcomes.json")
}

/// Persist one crafted run: one `.npy` per adversarial image, then the
/// JSON index (written last, so a complete index implies complete arrays).
pub fn save_attack_run(
    dir: &Path,
    source: &str,
    pipeline: PipelineName,
    root_seed: u64,
    budget: &AttackBudget,
    outcomes: &[(u32, AttackOutcome)],
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut records = Vec::with_capacity(outcomes.len());
    for (pair_id, outcome) in outcomes {
        npy::write_array3(
            &adversarial_image_path(dir, *pair_id),
            outcome.adversarial_image.as_array().view(),
        )?;
        records.push(OutcomeRecord {
            pair_id: *pair_id,
            caption_ids: outcome.adversarial_caption.ids().to_vec(),
            caption_text: outcome.adversarial_caption.text().to_string(),
            shuffle_seed: outcome.shuffle_seed,
            sample_seed: outcome.sample_seed,
            loss_trace: outcome.loss_trace.clone(),
        });
    }
    let index = AttackRunIndex {
        schema_version: ATTACK_SCHEMA_VERSION,
        source: source.to_string(),
        pipeline,
        root_seed,
        budget: *budget,
        outcomes: records,
    };
    let mut json = serde_json::to_string_pretty(&index)
        .map_err(|e| LabError::Format(format!("attack index encode failed: {e}")))?;
    json.push('\n');
    std::fs::write(outcome_index_path(dir), json)?;
    Ok(())
}

/// Read just a run's JSON index, without touching the image arrays.
pub fn load_attack_index(dir: &Path) -> Result<AttackRunIndex> {
    read_index(dir)
}

fn read_index(dir: &Path) -> Result<AttackRunIndex> {
    let path = outcome_index_path(dir);
    let text = std::fs::read_to_string(&path).map_err(|_| LabError::MissingArtifact {
        path: path.clone(),
        hint: "craft the adversarial pairs first (attack)".into(),
    })?;
    let index: AttackRunIndex = serde_json::from_str(&text)
        .map_err(|e| LabError::Format(format!("{}: {e}", path.display())))?;
    if index.schema_version != ATTACK_SCHEMA_VERSION {
        return Err(LabError::VersionMismatch {
            found: index.schema_version,
            supported: ATTACK_SCHEMA_VERSION,
        });
    }
    Ok(index)
}

/// Load a stored run back into attack outcomes.
pub fn load_attack_run(
    dir: &Path,
    vocab: &Vocabulary,
) -> Result<(AttackRunIndex, Vec<(u32, AttackOutcome)>)> {
    let index = read_index(dir)?;
    let mut outcomes = Vec::with_capacity(index.outcomes.len());
    for record in &index.outcomes {
        let image_path = adversarial_image_path(dir, record.pair_id);
        if !image_path.is_file() {
            return Err(LabError::MissingArtifact {
                path: image_path,
                hint: "adversarial image listed in outcomes.json is absent".into(),
            });
        }
        let image = ImageGrid::new(npy::read_array3(&image_path)?);
        let caption = vocab.sequence(record.caption_ids.clone())?;
        outcomes.push((
            record.pair_id,
            AttackOutcome {
                adversarial_image: image,
                adversarial_caption: caption,
                loss_trace: record.loss_trace.clone(),
                shuffle_seed: record.shuffle_seed,
                sample_seed: record.sample_seed,
            },
        ));
    }
    Ok((index, outcomes))
}

/// A stored run is reusable when its index matches the requested run
/// exactly, every image file exists, and no input is newer than it.
pub fn attack_run_reusable(
    dir: &Path,
    source: &str,
    pipeline: PipelineName,
    root_seed: u64,
    budget: &AttackBudget,
    expected_pairs: usize,
    inputs: &[PathBuf],
) -> Result<bool> {
    let Ok(index) = read_index(dir) else { return Ok(false) };
    if index.source != source
        || index.pipeline != pipeline
        || index.root_seed != root_seed
        || index.budget != *budget
        || index.outcomes.len() != expected_pairs
    {
        return Ok(false);
    }
    let mut outputs = vec![outcome_index_path(dir)];
    outputs.extend(index.outcomes.iter().map(|r| adversarial_image_path(dir, r.pair_id)));
    Ok(!needs_rebuild(inputs, &outputs)?)
}

/// Write a text artifact, creating parent directories.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}

//! Source→target transfer evaluation: craft adversarial pairs once per
//! source model and attack, score them against every target model, and
//! assemble comparable reports.

use serde::{Deserialize, Serialize};

use crate::attacks::{craft_for_pairs, AttackBudget, AttackOutcome, PipelineName};
use crate::data::Dataset;
use crate::error::{LabError, Result};
use crate::models::EncoderPair;

use super::index::{
    adversarial_index, attack_success_rate, build_index, pair_rank, recall_at_k, Asr, Direction,
    RetrievalIndex,
};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Recall at the three reported cutoffs. On galleries smaller than a
/// cutoff the cutoff saturates at the gallery size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecallTriple {
    pub r1: f64,
    pub r5: f64,
    pub r10: f64,
}

/// Before/after recall and attack success for one retrieval direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirectionMetrics {
    pub clean: RecallTriple,
    pub adversarial: RecallTriple,
    pub asr_r1: Asr,
    pub asr_r5: Asr,
    pub asr_r10: Asr,
}

/// Per-pair ranks before and after the attack, under the target model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub pair_id: u32,
    pub clean_text_rank: usize,
    pub adv_text_rank: usize,
    pub clean_image_rank: usize,
    pub adv_image_rank: usize,
    pub adversarial_caption: String,
    pub caption_changed: bool,
}

/// One cell of the transfer matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub schema_version: u32,
    pub source: String,
    pub target: String,
    pub attack: PipelineName,
    pub white_box: bool,
    pub seeds: Vec<u64>,
    pub budget: AttackBudget,
    pub text_retrieval: DirectionMetrics,
    pub image_retrieval: DirectionMetrics,
    pub per_pair: Vec<PairRecord>,
}

impl TransferReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)
            .map_err(|e| LabError::Format(format!("report serialization failed: {e}")))?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let report: TransferReport = serde_json::from_str(text)
            .map_err(|e| LabError::Format(format!("report parse failed: {e}")))?;
        if report.schema_version != REPORT_SCHEMA_VERSION {
            return Err(LabError::VersionMismatch {
                found: report.schema_version,
                supported: REPORT_SCHEMA_VERSION,
            });
        }
        Ok(report)
    }

    pub fn csv_header() -> &'static str {
        "source,target,attack,white_box,seeds,\
         tr_r1_clean,tr_r5_clean,tr_r10_clean,tr_r1_adv,tr_r5_adv,tr_r10_adv,\
         tr_asr_r1,tr_asr_r5,tr_asr_r10,\
         ir_r1_clean,ir_r5_clean,ir_r10_clean,ir_r1_adv,ir_r5_adv,ir_r10_adv,\
         ir_asr_r1,ir_asr_r5,ir_asr_r10"
    }

    pub fn csv_row(&self) -> String {
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        let dir = |m: &DirectionMetrics| {
            format!(
                "{:.2},{:.2},{:.2},{:.2},{:.2},{:.2},{},{},{}",
                m.clean.r1,
                m.clean.r5,
                m.clean.r10,
                m.adversarial.r1,
                m.adversarial.r5,
                m.adversarial.r10,
                m.asr_r1,
                m.asr_r5,
                m.asr_r10
            )
        };
        format!(
            "{},{},{},{},{},{},{}",
            self.source,
            self.target,
            self.attack,
            self.white_box,
            seeds.join(";"),
            dir(&self.text_retrieval),
            dir(&self.image_retrieval)
        )
    }

    /// Collapse per-seed reports for the same cell into one report whose
    /// rates are the medians. Per-pair records come from the first seed.
    pub fn median_over_seeds(reports: &[TransferReport]) -> Result<TransferReport> {
        let first = reports
            .first()
            .ok_or_else(|| LabError::Config("median over an empty report list".into()))?;
        if reports.iter().any(|r| {
            r.source != first.source || r.target != first.target || r.attack != first.attack
        }) {
            return Err(LabError::Config(
                "median_over_seeds mixes different transfer cells".into(),
            ));
        }
        let seeds: Vec<u64> = reports.iter().flat_map(|r| r.seeds.iter().copied()).collect();
        let pick = |f: &dyn Fn(&TransferReport) -> f64| median(reports.iter().map(f).collect());
        let pick_asr = |f: &dyn Fn(&TransferReport) -> Asr| {
            let defined: Vec<f64> = reports.iter().filter_map(|r| f(r).value()).collect();
            if defined.is_empty() {
                Asr::Undefined
            } else {
                Asr::Rate(median(defined))
            }
        };
        let dir = |get: &dyn Fn(&TransferReport) -> &DirectionMetrics| DirectionMetrics {
            clean: RecallTriple {
                r1: pick(&|r| get(r).clean.r1),
                r5: pick(&|r| get(r).clean.r5),
                r10: pick(&|r| get(r).clean.r10),
            },
            adversarial: RecallTriple {
                r1: pick(&|r| get(r).adversarial.r1),
                r5: pick(&|r| get(r).adversarial.r5),
                r10: pick(&|r| get(r).adversarial.r10),
            },
            asr_r1: pick_asr(&|r| get(r).asr_r1),
            asr_r5: pick_asr(&|r| get(r).asr_r5),
            asr_r10: pick_asr(&|r| get(r).asr_r10),
        };
        Ok(TransferReport {
            schema_version: REPORT_SCHEMA_VERSION,
            source: first.source.clone(),
            target: first.target.clone(),
            attack: first.attack,
            white_box: first.white_box,
            seeds,
            budget: first.budget,
            text_retrieval: dir(&|r| &r.text_retrieval),
            image_retrieval: dir(&|r| &r.image_retrieval),
            per_pair: first.per_pair.clone(),
        })
    }
}

/// Median of a nonempty list; even-length lists average the middle two.
pub fn median(mut values: Vec<f64>) -> f64 {
    assert!(!values.is_empty(), "median of nothing");
    values.sort_by(|a, b| a.partial_cmp(b).expect("comparable rates"));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn recall_triple(index: &RetrievalIndex, ids: &[u32], direction: Direction) -> Result<RecallTriple> {
    let g = index.gallery_len(direction);
    Ok(RecallTriple {
        r1: recall_at_k(index, ids, 1, direction)?,
        r5: recall_at_k(index, ids, 5.min(g), direction)?,
        r10: recall_at_k(index, ids, 10.min(g), direction)?,
    })
}

fn direction_metrics(
    clean: &RetrievalIndex,
    adv: &RetrievalIndex,
    ids: &[u32],
    direction: Direction,
) -> Result<DirectionMetrics> {
    let g = clean.gallery_len(direction);
    Ok(DirectionMetrics {
        clean: recall_triple(clean, ids, direction)?,
        adversarial: recall_triple(adv, ids, direction)?,
        asr_r1: attack_success_rate(clean, adv, ids, 1, direction)?,
        asr_r5: attack_success_rate(clean, adv, ids, 5.min(g), direction)?,
        asr_r10: attack_success_rate(clean, adv, ids, 10.min(g), direction)?,
    })
}

#[allow(clippy::too_many_arguments)]
fn assemble_report(
    source: &str,
    target: &str,
    attack: PipelineName,
    budget: &AttackBudget,
    seed: u64,
    ids: &[u32],
    clean: &RetrievalIndex,
    adv: &RetrievalIndex,
    outcomes: &[(u32, AttackOutcome)],
    dataset: &Dataset,
) -> Result<TransferReport> {
    let mut per_pair = Vec::with_capacity(outcomes.len());
    for (id, outcome) in outcomes {
        let original = &dataset.pair(*id)?.captions[0];
        per_pair.push(PairRecord {
            pair_id: *id,
            clean_text_rank: pair_rank(clean, *id, Direction::TextRetrieval)?,
            adv_text_rank: pair_rank(adv, *id, Direction::TextRetrieval)?,
            clean_image_rank: pair_rank(clean, *id, Direction::ImageRetrieval)?,
            adv_image_rank: pair_rank(adv, *id, Direction::ImageRetrieval)?,
            adversarial_caption: outcome.adversarial_caption.text().to_string(),
            caption_changed: outcome.adversarial_caption.ids() != original.ids(),
        });
    }
    Ok(TransferReport {
        schema_version: REPORT_SCHEMA_VERSION,
        source: source.to_string(),
        target: target.to_string(),
        attack,
        white_box: source == target,
        seeds: vec![seed],
        budget: *budget,
        text_retrieval: direction_metrics(clean, adv, ids, Direction::TextRetrieval)?,
        image_retrieval: direction_metrics(clean, adv, ids, Direction::ImageRetrieval)?,
        per_pair,
    })
}

/// Score one crafted attack run against one target model, reusing a
/// prebuilt clean index for that target. `white_box` in the report is
/// derived from tag equality.
#[allow(clippy::too_many_arguments)]
pub fn score_transfer(
    source: &str,
    target_tag: &str,
    target: &EncoderPair,
    attack: PipelineName,
    budget: &AttackBudget,
    seed: u64,
    ids: &[u32],
    clean: &RetrievalIndex,
    outcomes: &[(u32, AttackOutcome)],
    dataset: &Dataset,
) -> Result<TransferReport> {
    let adv = adversarial_index(target, clean, outcomes)?;
    assemble_report(source, target_tag, attack, budget, seed, ids, clean, &adv, outcomes, dataset)
}

/// Full matrix for one root seed: adversarial pairs are crafted once per
/// (source, attack) and then scored against every target, including the
/// white-box diagonal. Reports come back in source → attack → target order.
pub fn transfer_matrix(
    models: &[(String, EncoderPair)],
    attacks: &[PipelineName],
    dataset: &Dataset,
    query_ids: &[u32],
    budget: &AttackBudget,
    seed: u64,
) -> Result<Vec<TransferReport>> {
    if models.len() < 2 {
        return Err(LabError::Config(
            "a transfer matrix needs at least two models".into(),
        ));
    }
    budget.validate()?;
    let clean: Vec<RetrievalIndex> = models
        .iter()
        .map(|(_, pair)| build_index(pair, dataset, query_ids))
        .collect::<Result<_>>()?;
    let items = dataset.subset(query_ids)?;

    let mut reports = Vec::with_capacity(models.len() * models.len() * attacks.len());
    for (source_tag, source) in models {
        for &attack in attacks {
            let outcomes =
                craft_for_pairs(source, &dataset.vocab, &items, attack, budget, seed)?;
            for ((target_tag, target), base) in models.iter().zip(&clean) {
                let adv = adversarial_index(target, base, &outcomes)?;
                reports.push(assemble_report(
                    source_tag, target_tag, attack, budget, seed, query_ids, base, &adv,
                    &outcomes, dataset,
                )?);
            }
        }
    }
    Ok(reports)
}

//! The six harness commands: gen-data, train, attack, eval, ablate,
//! report. Every command reads and writes artifacts under the configured
//! run directory, recomputes when outputs are missing or stale, and emits
//! byte-stable files so identical configs reproduce identical runs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::attacks::{craft_for_pairs, craft_text_sweep, AttackBudget, PipelineName};
use crate::data::store::peek_manifest;
use crate::data::{generate_dataset, load_dataset, save_dataset, Dataset};
use crate::error::{LabError, Result};
use crate::eval::{build_index, recall_at_k, score_transfer, Direction, RetrievalIndex, TransferReport};
use crate::grid::ImageGrid;
use crate::harness::artifacts::{
    adversarial_image_path, attack_run_reusable, load_attack_index, load_attack_run,
    needs_rebuild, save_attack_run, write_text, Layout,
};
use crate::harness::config::{apply_sweep, ExperimentConfig, SweepParameter, SweepValue};
use crate::harness::plot::{render_line_plot, save_triptych, PlotPoint};
use crate::models::{
    load_checkpoint, save_checkpoint, train_contrastive, CheckpointMeta, DualEncoder,
    EncoderPair, RegressionProbe,
};
use crate::npy;

/// Generate the dataset, or keep it when the stored one already matches
/// the configured spec.
pub fn cmd_gen_data(cfg: &ExperimentConfig) -> Result<()> {
    let layout = Layout::new(&cfg.out_dir);
    let dir = layout.dataset_dir();
    let spec = cfg.dataset.to_spec();

    match peek_manifest(&dir) {
        Ok(manifest) => {
            if manifest.seed == spec.seed
                && manifest.count == spec.num_images
                && manifest.image_size == [spec.image_size.0, spec.image_size.1]
            {
                println!("gen-data: dataset up to date in {}", dir.display());
                return Ok(());
            }
            // The spec changed; this is our dataset directory, rebuild it.
            std::fs::remove_dir_all(&dir)?;
        }
        Err(_) => {
            let occupied =
                dir.is_dir() && std::fs::read_dir(&dir).map_or(false, |mut d| d.next().is_some());
            if occupied {
                return Err(LabError::Config(format!(
                    "{} is non-empty but holds no readable dataset manifest; refusing to overwrite",
                    dir.display()
                )));
            }
        }
    }

    let dataset = generate_dataset(&spec)?;
    save_dataset(&dataset, &dir)?;
    println!(
        "gen-data: wrote {} pairs ({} train / {} test) to {}",
        dataset.pairs().len(),
        dataset.train_ids().len(),
        dataset.test_ids().len(),
        dir.display()
    );
    Ok(())
}

/// Train every configured model on the train split; checkpoints that were
/// trained under the same recipe on the same dataset are kept.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<()> {
    let layout = Layout::new(&cfg.out_dir);
    let dataset = load_dataset(&layout.dataset_dir())?;
    let fingerprint = dataset.vocab.fingerprint();
    std::fs::create_dir_all(layout.checkpoint_dir())?;

    for entry in &cfg.models {
        let path = layout.checkpoint(&entry.tag);
        let want = entry.to_train_config();
        let fresh = !needs_rebuild(&[layout.dataset_manifest()], &[path.clone()])?;
        if fresh {
            if let Ok((_, meta)) = load_checkpoint(&path, Some(&fingerprint)) {
                if meta.training.as_ref().map(|t| t.config) == Some(want) {
                    println!("train: {} up to date", entry.tag);
                    continue;
                }
            }
        }

        let (pair, summary) = train_contrastive(&dataset, &want)?;
        let probe_id = dataset
            .test_ids()
            .first()
            .copied()
            .ok_or_else(|| LabError::Config("dataset has an empty test split".into()))?;
        let probe = RegressionProbe {
            pair_id: probe_id,
            embedding: pair.encode_image(&dataset.pair(probe_id)?.image)?.to_vec(),
        };
        let meta = CheckpointMeta { training: Some(summary.clone()), regression: Some(probe) };
        save_checkpoint(&pair, &meta, &path)?;

        let index = build_index(&pair, &dataset, dataset.test_ids())?;
        let r1 = recall_at_k(&index, dataset.test_ids(), 1, Direction::TextRetrieval)?;
        println!(
            "train: {} → {} (final loss {:.4}, test TR R@1 {:.1})",
            entry.tag,
            path.display(),
            summary.final_loss,
            r1
        );
    }
    Ok(())
}

/// Craft adversarial pairs on every configured source model, for every
/// attack arm and root seed, over the test split.
pub fn cmd_attack(cfg: &ExperimentConfig) -> Result<()> {
    let layout = Layout::new(&cfg.out_dir);
    let dataset = load_dataset(&layout.dataset_dir())?;
    let fingerprint = dataset.vocab.fingerprint();
    let items = dataset.subset(dataset.test_ids())?;
    let budget = cfg.attack_budget()?;

    for source in &cfg.sources {
        let ckpt = layout.checkpoint(source);
        let (pair, _) = load_checkpoint(&ckpt, Some(&fingerprint))?;
        let inputs = vec![layout.dataset_manifest(), ckpt.clone()];
        for &arm in &cfg.pipelines {
            for &seed in &cfg.seeds {
                let dir = layout.attack_dir(source, arm, seed);
                if attack_run_reusable(&dir, source, arm, seed, &budget, items.len(), &inputs)? {
                    println!("attack: {source}/{arm}/seed_{seed} up to date");
                    continue;
                }
                let outcomes = craft_for_pairs(&pair, &dataset.vocab, &items, arm, &budget, seed)?;
                save_attack_run(&dir, source, arm, seed, &budget, &outcomes)?;
                println!("attack: {source}/{arm}/seed_{seed}: {} pairs", outcomes.len());
            }
        }
    }
    Ok(())
}

fn load_models(
    cfg: &ExperimentConfig,
    layout: &Layout,
    fingerprint: &str,
) -> Result<Vec<(String, EncoderPair)>> {
    cfg.models
        .iter()
        .map(|entry| {
            let (pair, _) = load_checkpoint(&layout.checkpoint(&entry.tag), Some(fingerprint))?;
            Ok((entry.tag.clone(), pair))
        })
        .collect()
}

fn clean_indices(
    models: &[(String, EncoderPair)],
    dataset: &Dataset,
    ids: &[u32],
) -> Result<Vec<RetrievalIndex>> {
    models.iter().map(|(_, pair)| build_index(pair, dataset, ids)).collect()
}

fn clean_metrics_csv(
    models: &[(String, EncoderPair)],
    indices: &[RetrievalIndex],
    ids: &[u32],
) -> Result<String> {
    let mut csv = String::from("model,direction,r1,r5,r10\n");
    for ((tag, _), index) in models.iter().zip(indices) {
        for direction in [Direction::TextRetrieval, Direction::ImageRetrieval] {
            let g = index.gallery_len(direction);
            csv.push_str(&format!(
                "{tag},{},{:.2},{:.2},{:.2}\n",
                direction.as_str(),
                recall_at_k(index, ids, 1, direction)?,
                recall_at_k(index, ids, 5.min(g), direction)?,
                recall_at_k(index, ids, 10.min(g), direction)?,
            ));
        }
    }
    Ok(csv)
}

/// Score every stored attack run against every model, write one report
/// per (source, arm, seed, target), and aggregate the transfer matrix as
/// medians over seeds.
pub fn cmd_eval(cfg: &ExperimentConfig) -> Result<()> {
    let layout = Layout::new(&cfg.out_dir);
    let dataset = load_dataset(&layout.dataset_dir())?;
    let fingerprint = dataset.vocab.fingerprint();
    let ids = dataset.test_ids().to_vec();
    let models = load_models(cfg, &layout, &fingerprint)?;
    let clean = clean_indices(&models, &dataset, &ids)?;
    let budget = cfg.attack_budget()?;

    write_text(&layout.clean_metrics_csv(), &clean_metrics_csv(&models, &clean, &ids)?)?;

    let mut matrix = String::from(TransferReport::csv_header());
    matrix.push('\n');
    for source in &cfg.sources {
        for &arm in &cfg.pipelines {
            let mut per_target: Vec<Vec<TransferReport>> =
                models.iter().map(|_| Vec::with_capacity(cfg.seeds.len())).collect();
            for &seed in &cfg.seeds {
                let dir = layout.attack_dir(source, arm, seed);
                let (index_meta, outcomes) = load_attack_run(&dir, &dataset.vocab)?;
                if index_meta.budget != budget {
                    return Err(LabError::Config(format!(
                        "stored attack run {} was crafted under a different budget; re-run attack",
                        dir.display()
                    )));
                }
                for (slot, ((tag, pair), base)) in
                    per_target.iter_mut().zip(models.iter().zip(&clean))
                {
                    let report = score_transfer(
                        source, tag, pair, arm, &budget, seed, &ids, base, &outcomes, &dataset,
                    )?;
                    write_text(&layout.eval_report(seed, source, arm, tag), &report.to_json()?)?;
                    slot.push(report);
                }
            }
            for reports in &per_target {
                let merged = TransferReport::median_over_seeds(reports)?;
                matrix.push_str(&merged.csv_row());
                matrix.push('\n');
            }
            println!(
                "eval: {source}/{arm}: {} targets × {} seeds",
                models.len(),
                cfg.seeds.len()
            );
        }
    }
    write_text(&layout.matrix_csv(), &matrix)?;
    println!("eval: wrote {}", layout.matrix_csv().display());
    Ok(())
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let variance = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, variance.sqrt())
}

/// Everything that determines a sweep's outputs; a stored sweep whose
/// fingerprint matches is reusable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SweepMeta {
    parameter: SweepParameter,
    labels: Vec<String>,
    pipeline: PipelineName,
    source: String,
    seeds: Vec<u64>,
    budget: AttackBudget,
}

/// Sweep one budget parameter for one attack arm: craft per value and
/// seed on the first source model, score against every model, and
/// aggregate mean±std per value with a line plot per target.
pub fn cmd_ablate(cfg: &ExperimentConfig) -> Result<()> {
    let plan = cfg
        .ablation
        .as_ref()
        .ok_or_else(|| LabError::Config("config has no [ablation] section".into()))?;
    let layout = Layout::new(&cfg.out_dir);
    let dataset = load_dataset(&layout.dataset_dir())?;
    let fingerprint = dataset.vocab.fingerprint();
    let ids = dataset.test_ids().to_vec();
    let items = dataset.subset(&ids)?;

    let source = cfg.sources[0].clone();
    let source_ckpt = layout.checkpoint(&source);
    let (source_pair, _) = load_checkpoint(&source_ckpt, Some(&fingerprint))?;
    let models = load_models(cfg, &layout, &fingerprint)?;
    let clean = clean_indices(&models, &dataset, &ids)?;

    let base = cfg.attack_budget()?;
    let budgets: Vec<AttackBudget> = plan
        .values
        .iter()
        .map(|v| apply_sweep(&base, plan.parameter, v))
        .collect::<Result<_>>()?;
    let labels: Vec<String> = plan.values.iter().map(SweepValue::label).collect();

    let meta = SweepMeta {
        parameter: plan.parameter,
        labels: labels.clone(),
        pipeline: plan.pipeline,
        source: source.clone(),
        seeds: cfg.seeds.clone(),
        budget: base,
    };
    let meta_path = layout.ablation_dir(plan.parameter).join("sweep_meta.json");
    let mut outputs = vec![meta_path.clone(), layout.sweep_csv(plan.parameter)];
    for (tag, _) in &models {
        outputs.push(layout.sweep_plot(plan.parameter, tag));
        outputs.push(layout.sweep_plot_csv(plan.parameter, tag));
    }
    let stored: Option<SweepMeta> = std::fs::read_to_string(&meta_path)
        .ok()
        .and_then(|text| serde_json::from_str(&text).ok());
    if stored.as_ref() == Some(&meta)
        && !needs_rebuild(&[layout.dataset_manifest(), source_ckpt.clone()], &outputs)?
    {
        println!("ablate: {} sweep up to date", plan.parameter);
        return Ok(());
    }

    // cells[value][target] = per-seed reports
    let mut cells: Vec<Vec<Vec<TransferReport>>> =
        budgets.iter().map(|_| models.iter().map(|_| Vec::new()).collect()).collect();
    for &seed in &cfg.seeds {
        let per_value = if plan.parameter.text_stage_only() && plan.pipeline == PipelineName::Lssa
        {
            craft_text_sweep(&source_pair, &dataset.vocab, &items, &budgets, seed)?
        } else {
            budgets
                .iter()
                .map(|b| craft_for_pairs(&source_pair, &dataset.vocab, &items, plan.pipeline, b, seed))
                .collect::<Result<_>>()?
        };
        for ((value_idx, outcomes), budget) in per_value.iter().enumerate().zip(&budgets) {
            for (slot, ((tag, pair), base_index)) in
                cells[value_idx].iter_mut().zip(models.iter().zip(&clean))
            {
                let report = score_transfer(
                    &source, tag, pair, plan.pipeline, budget, seed, &ids, base_index, outcomes,
                    &dataset,
                )?;
                let path =
                    layout.sweep_report(plan.parameter, value_idx, &labels[value_idx], seed, tag);
                write_text(&path, &report.to_json()?)?;
                slot.push(report);
            }
        }
        println!("ablate: {} seed_{seed}: {} values scored", plan.parameter, budgets.len());
    }

    let fmt_cell = |values: &[f64]| -> (String, String) {
        if values.is_empty() {
            ("undefined".into(), "undefined".into())
        } else {
            let (mean, std) = mean_std(values);
            (format!("{mean:.2}"), format!("{std:.2}"))
        }
    };

    let seeds_label =
        cfg.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(";");
    let mut sweep = String::from(
        "parameter,value,target,tr_r1_asr_mean,tr_r1_asr_std,ir_r1_asr_mean,ir_r1_asr_std,seeds\n",
    );
    for (value_idx, label) in labels.iter().enumerate() {
        for (target_idx, (tag, _)) in models.iter().enumerate() {
            let reports = &cells[value_idx][target_idx];
            let tr: Vec<f64> =
                reports.iter().filter_map(|r| r.text_retrieval.asr_r1.value()).collect();
            let ir: Vec<f64> =
                reports.iter().filter_map(|r| r.image_retrieval.asr_r1.value()).collect();
            let (tr_mean, tr_std) = fmt_cell(&tr);
            let (ir_mean, ir_std) = fmt_cell(&ir);
            sweep.push_str(&format!(
                "{},{label},{tag},{tr_mean},{tr_std},{ir_mean},{ir_std},{seeds_label}\n",
                plan.parameter
            ));
        }
    }
    write_text(&layout.sweep_csv(plan.parameter), &sweep)?;

    for (target_idx, (tag, _)) in models.iter().enumerate() {
        let mut plot_csv = String::from("value,tr_r1_asr_mean,tr_r1_asr_std\n");
        let mut points = Vec::new();
        for (value_idx, value) in plan.values.iter().enumerate() {
            let reports = &cells[value_idx][target_idx];
            let tr: Vec<f64> =
                reports.iter().filter_map(|r| r.text_retrieval.asr_r1.value()).collect();
            let (mean_label, std_label) = fmt_cell(&tr);
            plot_csv.push_str(&format!("{},{mean_label},{std_label}\n", value.label()));
            if !tr.is_empty() {
                let (mean, std) = mean_std(&tr);
                let x = value.numeric().unwrap_or(value_idx as f64);
                points.push(PlotPoint { x, y: mean, spread: std });
            }
        }
        write_text(&layout.sweep_plot_csv(plan.parameter, tag), &plot_csv)?;
        if !points.is_empty() {
            points.sort_by(|a, b| a.x.partial_cmp(&b.x).expect("finite x coordinates"));
            render_line_plot(&points, &layout.sweep_plot(plan.parameter, tag))?;
        }
    }

    let mut meta_json = serde_json::to_string_pretty(&meta)
        .map_err(|e| LabError::Format(format!("sweep meta encode failed: {e}")))?;
    meta_json.push('\n');
    write_text(&meta_path, &meta_json)?;
    println!("ablate: wrote {}", layout.sweep_csv(plan.parameter).display());
    Ok(())
}

/// The five-arm ladder from plain sequential attack to the full method.
pub const LADDER_ARMS: [PipelineName; 5] = [
    PipelineName::SgaIt,
    PipelineName::SgaItSampled,
    PipelineName::SgaItShuffled,
    PipelineName::SgaItShuffledSampled,
    PipelineName::Lssa,
];

fn starred_cell(report: &TransferReport) -> String {
    let star = if report.white_box { "*" } else { "" };
    format!("{}/{}{star}", report.text_retrieval.asr_r1, report.image_retrieval.asr_r1)
}

fn markdown_table(header: &[String], rows: &[Vec<String>]) -> String {
    let mut md = format!("| {} |\n", header.join(" | "));
    md.push_str(&format!("|{}\n", " --- |".repeat(header.len())));
    for row in rows {
        md.push_str(&format!("| {} |\n", row.join(" | ")));
    }
    md
}

/// Assemble the human-readable bundle: transfer tables with starred
/// white-box cells, perturbation triptychs, caption diffs, and the
/// ablation-ladder table.
pub fn cmd_report(cfg: &ExperimentConfig) -> Result<()> {
    let layout = Layout::new(&cfg.out_dir);
    let report_dir = layout.report_dir();
    std::fs::create_dir_all(&report_dir)?;
    let dataset = load_dataset(&layout.dataset_dir())?;

    let clean_path = layout.clean_metrics_csv();
    let clean_csv = std::fs::read_to_string(&clean_path).map_err(|_| LabError::MissingArtifact {
        path: clean_path.clone(),
        hint: "score the models first (eval)".into(),
    })?;
    write_text(&report_dir.join("baseline_metrics.csv"), &clean_csv)?;

    if cfg.pipelines.is_empty() {
        println!("report: baseline metrics only (no attack arms configured)");
        return Ok(());
    }

    let targets: Vec<String> = cfg.models.iter().map(|m| m.tag.clone()).collect();

    // Median-over-seeds report per (source, arm, target), from the
    // per-seed eval artifacts.
    let mut medians: BTreeMap<(String, &'static str, String), TransferReport> = BTreeMap::new();
    for source in &cfg.sources {
        for &arm in &cfg.pipelines {
            for target in &targets {
                let mut reports = Vec::with_capacity(cfg.seeds.len());
                for &seed in &cfg.seeds {
                    let path = layout.eval_report(seed, source, arm, target);
                    let text =
                        std::fs::read_to_string(&path).map_err(|_| LabError::MissingArtifact {
                            path: path.clone(),
                            hint: "score the attacks first (eval)".into(),
                        })?;
                    reports.push(TransferReport::from_json(&text)?);
                }
                medians.insert(
                    (source.clone(), arm.as_str(), target.clone()),
                    TransferReport::median_over_seeds(&reports)?,
                );
            }
        }
    }

    // (a) Transfer tables: one row per (source, attack), one column per
    // target; cells are "TR-ASR/IR-ASR" at R@1, starred when white-box.
    let mut header: Vec<String> = vec!["source".into(), "attack".into()];
    header.extend(targets.iter().cloned());
    let mut rows = Vec::new();
    for source in &cfg.sources {
        for &arm in &cfg.pipelines {
            let mut row = vec![source.clone(), arm.to_string()];
            for target in &targets {
                let report = &medians[&(source.clone(), arm.as_str(), target.clone())];
                row.push(starred_cell(report));
            }
            rows.push(row);
        }
    }
    let mut table_csv = format!("{}\n", header.join(","));
    for row in &rows {
        table_csv.push_str(&format!("{}\n", row.join(",")));
    }
    write_text(&report_dir.join("transfer_table.csv"), &table_csv)?;
    write_text(&report_dir.join("transfer_table.md"), &markdown_table(&header, &rows))?;

    // (d) Ablation ladder: fixed arm order, rows only for arms this run
    // actually has.
    let ladder: Vec<PipelineName> =
        LADDER_ARMS.into_iter().filter(|arm| cfg.pipelines.contains(arm)).collect();
    if !ladder.is_empty() {
        let mut header: Vec<String> = vec!["attack".into()];
        header.extend(targets.iter().cloned());
        let mut rows = Vec::new();
        for source in &cfg.sources {
            for &arm in &ladder {
                let mut row = vec![format!("{source}:{arm}")];
                for target in &targets {
                    let report = &medians[&(source.clone(), arm.as_str(), target.clone())];
                    let star = if report.white_box { "*" } else { "" };
                    row.push(format!("{}{star}", report.text_retrieval.asr_r1));
                }
                rows.push(row);
            }
        }
        let mut ladder_csv = format!("{}\n", header.join(","));
        for row in &rows {
            ladder_csv.push_str(&format!("{}\n", row.join(",")));
        }
        write_text(&report_dir.join("ladder.csv"), &ladder_csv)?;
        write_text(&report_dir.join("ladder.md"), &markdown_table(&header, &rows))?;
    }

    // (b) Triptychs and (c) caption diffs, from the first seed's artifacts.
    let seed = cfg.seeds[0];
    let mut diffs = String::from("# Caption changes\n");
    for source in &cfg.sources {
        for &arm in &cfg.pipelines {
            let dir = layout.attack_dir(source, arm, seed);
            let index = load_attack_index(&dir)?;
            for record in index.outcomes.iter().take(cfg.report.triptych_pairs) {
                let image_path = adversarial_image_path(&dir, record.pair_id);
                if !image_path.is_file() {
                    return Err(LabError::MissingArtifact {
                        path: image_path,
                        hint: "adversarial image listed in outcomes.json is absent".into(),
                    });
                }
                let adversarial = ImageGrid::new(npy::read_array3(&image_path)?);
                let original = &dataset.pair(record.pair_id)?.image;
                let out = report_dir
                    .join("triptychs")
                    .join(format!("{source}__{arm}__pair_{:05}.png", record.pair_id));
                save_triptych(&out, original, &adversarial, cfg.report.amplification)?;
            }

            diffs.push_str(&format!("\n## {source} / {arm} (seed {seed})\n\n"));
            let mut changed = 0usize;
            for record in &index.outcomes {
                let original = &dataset.pair(record.pair_id)?.captions[0];
                if record.caption_ids != original.ids() {
                    changed += 1;
                    diffs.push_str(&format!(
                        "- pair {}: `{}` → `{}`\n",
                        record.pair_id,
                        original.text(),
                        record.caption_text
                    ));
                }
            }
            if changed == 0 {
                diffs.push_str("- no caption changes\n");
            }
        }
    }
    write_text(&report_dir.join("caption_diffs.md"), &diffs)?;

    println!("report: wrote {}", report_dir.display());
    Ok(())
}

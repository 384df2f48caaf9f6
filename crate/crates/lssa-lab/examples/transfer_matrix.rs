//! Micro transfer experiment in-process: craft attacks on one model,
//! score them against another, print the matrix.
//!
//!     cargo run --release --example transfer_matrix

use lssa_lab::attacks::{craft_for_pairs, AttackBudget, PipelineName};
use lssa_lab::data::{generate_dataset, DataSpec};
use lssa_lab::eval::{build_index, score_transfer};
use lssa_lab::models::{train_contrastive, Arch, TrainConfig};

fn main() -> lssa_lab::Result<()> {
    let dataset =
        generate_dataset(&DataSpec { num_images: 45, image_size: (16, 16), seed: 0 })?;
    let train = |seed| {
        train_contrastive(
            &dataset,
            &TrainConfig {
                arch: Arch::Conv,
                seed,
                epochs: 100,
                batch_size: 15,
                learning_rate: 1e-2,
                embed_dim: 32,
                augment: true,
            },
        )
    };
    let (source, _) = train(0)?;
    let (other, _) = train(1)?;

    let ids = dataset.test_ids().to_vec();
    let items = dataset.subset(&ids)?;
    let budget = AttackBudget::standard(0);

    println!("source,target,attack,tr_asr_r1,ir_asr_r1");
    for arm in [PipelineName::MiFgsm, PipelineName::Lssa] {
        let outcomes = craft_for_pairs(&source, &dataset.vocab, &items, arm, &budget, 0)?;
        for (tag, model) in [("white_box", &source), ("transfer", &other)] {
            let clean = build_index(model, &dataset, &ids)?;
            let report = score_transfer(
                "source", tag, model, arm, &budget, 0, &ids, &clean, &outcomes, &dataset,
            )?;
            println!(
                "source,{tag},{arm},{},{}",
                report.text_retrieval.asr_r1, report.image_retrieval.asr_r1,
            );
        }
    }
    Ok(())
}

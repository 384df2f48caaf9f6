//! Train a tiny conv dual encoder and report retrieval quality.
//!
//!     cargo run --release --example train_dual_encoder

use lssa_lab::data::{generate_dataset, DataSpec};
use lssa_lab::eval::{build_index, recall_at_k, Direction};
use lssa_lab::models::{train_contrastive, Arch, TrainConfig};

fn main() -> lssa_lab::Result<()> {
    let dataset =
        generate_dataset(&DataSpec { num_images: 60, image_size: (16, 16), seed: 0 })?;
    let cfg = TrainConfig {
        arch: Arch::Conv,
        seed: 0,
        epochs: 120,
        batch_size: 20,
        learning_rate: 1e-2,
        embed_dim: 32,
        augment: true,
    };

    let start = std::time::Instant::now();
    let (pair, summary) = train_contrastive(&dataset, &cfg)?;
    println!(
        "trained {:?} for {} epochs in {:.1?}; loss {:.3} → {:.3}",
        cfg.arch,
        cfg.epochs,
        start.elapsed(),
        summary.epoch_losses.first().unwrap_or(&f64::NAN),
        summary.final_loss,
    );

    for (split, ids) in [("train", dataset.train_ids()), ("test", dataset.test_ids())] {
        let index = build_index(&pair, &dataset, ids)?;
        let tr = recall_at_k(&index, ids, 1, Direction::TextRetrieval)?;
        let ir = recall_at_k(&index, ids, 1, Direction::ImageRetrieval)?;
        println!("{split:5}: TR R@1 {tr:5.1}   IR R@1 {ir:5.1}");
    }
    Ok(())
}

//! Craft one adversarial image–caption pair with the full attack and
//! inspect what changed.
//!
//!     cargo run --release --example craft_adversarial_pair

use lssa_lab::attacks::{run_pipeline, AttackBudget, AttackInput, PipelineName};
use lssa_lab::data::{generate_dataset, DataSpec};
use lssa_lab::models::{train_contrastive, Arch, TrainConfig};

fn main() -> lssa_lab::Result<()> {
    let dataset =
        generate_dataset(&DataSpec { num_images: 45, image_size: (16, 16), seed: 3 })?;
    let cfg = TrainConfig {
        arch: Arch::Conv,
        seed: 0,
        epochs: 80,
        batch_size: 15,
        learning_rate: 1e-2,
        embed_dim: 32,
        augment: true,
    };
    let (model, _) = train_contrastive(&dataset, &cfg)?;

    let item = dataset.pair(dataset.test_ids()[0])?;
    let input = AttackInput { image: item.image.clone(), captions: item.captions.clone() };
    let budget = AttackBudget::standard(42);
    let outcome = run_pipeline(PipelineName::Lssa, &model, &dataset.vocab, &input, &budget)?;

    println!("objective along the image loop (higher = further from the captions):");
    for (i, value) in outcome.loss_trace.iter().enumerate() {
        println!("  iter {i:2}: {value:.5}");
    }
    println!(
        "\nL∞ distance {:.6} (budget {:.6})",
        outcome.adversarial_image.linf_distance(&item.image),
        budget.image_radius,
    );
    println!("caption before: {}", item.captions[0].text());
    println!("caption after:  {}", outcome.adversarial_caption.text());
    Ok(())
}

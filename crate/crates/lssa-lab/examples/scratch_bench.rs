//! Scratch quality probe (temporary).

use lssa_lab::data::{generate_dataset, DataSpec};
use lssa_lab::eval::{build_index, recall_at_k, Direction};
use lssa_lab::models::{train_contrastive, Arch, TrainConfig};

fn main() {
    let spec = DataSpec { num_images: 300, image_size: (16, 16), seed: 0 };
    let dataset = generate_dataset(&spec).unwrap();
    for (arch, epochs, lr, augment) in [
        (Arch::Conv, 400, 1e-2, false),
        (Arch::Conv, 600, 1e-2, false),
        (Arch::Conv, 600, 1e-2, true),
        (Arch::Conv, 1200, 1e-2, true),
        (Arch::Conv, 1200, 5e-3, true),
    ] {
        let cfg = TrainConfig {
            arch,
            seed: 0,
            epochs,
            batch_size: 50,
            learning_rate: lr,
            embed_dim: 48,
            augment,
        };
        let t0 = std::time::Instant::now();
        let (pair, summary) = train_contrastive(&dataset, &cfg).unwrap();
        let test = build_index(&pair, &dataset, dataset.test_ids()).unwrap();
        let train = build_index(&pair, &dataset, dataset.train_ids()).unwrap();
        let tr_test =
            recall_at_k(&test, dataset.test_ids(), 1, Direction::TextRetrieval).unwrap();
        let tr_train =
            recall_at_k(&train, dataset.train_ids(), 1, Direction::TextRetrieval).unwrap();
        let ir_test =
            recall_at_k(&test, dataset.test_ids(), 1, Direction::ImageRetrieval).unwrap();
        println!(
            "{arch:?} epochs {epochs:4} lr {lr:.0e} aug {augment:5}: loss {:.3} \
             train R@1 {tr_train:5.1} test TR {tr_test:5.1} IR {ir_test:5.1} ({:.0?})",
            summary.final_loss,
            t0.elapsed()
        );
    }
}

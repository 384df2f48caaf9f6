//! Generate a small synthetic caption–image corpus and poke at it.
//!
//!     cargo run --release --example generate_dataset

use lssa_lab::data::{generate_dataset, save_dataset, DataSpec};

fn main() -> lssa_lab::Result<()> {
    let spec = DataSpec { num_images: 24, image_size: (16, 16), seed: 7 };
    let dataset = generate_dataset(&spec)?;

    println!(
        "{} pairs at {}×{} px, vocab of {} tokens, split {} train / {} test",
        dataset.pairs().len(),
        dataset.image_size.0,
        dataset.image_size.1,
        dataset.vocab.len(),
        dataset.train_ids().len(),
        dataset.test_ids().len(),
    );

    let item = dataset.pair(0)?;
    println!("\npair 0 captions:");
    for caption in &item.captions {
        println!("  {}", caption.text());
    }
    let px = item.image.get(0, 8, 8);
    println!("\ncenter pixel red channel: {px} (every value is k/255 for integer k)");

    let out = std::env::temp_dir().join("lssa-lab-example-dataset");
    save_dataset(&dataset, &out)?;
    println!("saved to {} (manifest.json + npy + captions)", out.display());
    Ok(())
}

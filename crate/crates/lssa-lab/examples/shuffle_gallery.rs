//! Save a gallery of locally and globally shuffled copies of one image —
//! the input diversity the gradient batch averages over.
//!
//!     cargo run --release --example shuffle_gallery

use rand::seq::SliceRandom;
use rand::SeedableRng;

use lssa_lab::data::{generate_dataset, DataSpec};
use lssa_lab::transforms::{draw_shuffled_batch, global_shuffle, PositionMode, ShuffleConfig};

fn save_png(image: &lssa_lab::ImageGrid, path: &std::path::Path) -> lssa_lab::Result<()> {
    let (_, h, w) = image.dims();
    let mut out = image::RgbImage::new(w as u32, h as u32);
    for (x, y, px) in out.enumerate_pixels_mut() {
        for c in 0..3 {
            px.0[c] = (image.get(c, y as usize, x as usize) * 255.0).round() as u8;
        }
    }
    out.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| lssa_lab::LabError::Format(format!("png encode failed: {e}")))?;
    Ok(())
}

fn main() -> lssa_lab::Result<()> {
    let dataset =
        generate_dataset(&DataSpec { num_images: 6, image_size: (32, 32), seed: 11 })?;
    let item = dataset.pair(0)?;
    let dir = std::env::temp_dir().join("lssa-lab-shuffle-gallery");
    std::fs::create_dir_all(&dir)?;
    save_png(&item.image, &dir.join("original.png"))?;

    // Local: permute the four subblocks of one random quadrant per draw.
    let config = ShuffleConfig::new(6, PositionMode::Random, 5);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    for (i, copy) in draw_shuffled_batch(&item.image, &config, &mut rng)?.iter().enumerate() {
        save_png(copy, &dir.join(format!("local_{i}.png")))?;
    }

    // Global: permute all four quadrants of the whole image.
    let mut perm: Vec<usize> = (0..4).collect();
    for i in 0..3 {
        perm.shuffle(&mut rng);
        let copy = global_shuffle(&item.image, (2, 2), &perm)?;
        save_png(&copy, &dir.join(format!("global_{i}.png")))?;
    }

    println!("caption: {}", item.captions[0].text());
    println!("wrote originals + 6 local + 3 global shuffles to {}", dir.display());
    Ok(())
}

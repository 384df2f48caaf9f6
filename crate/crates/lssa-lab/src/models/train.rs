//! Contrastive training of an encoder pair on the synthetic dataset.
//!
//! Symmetric in-batch objective: each batch pairs every image with one of
//! its captions and treats all other batch members as negatives, both
//! image→text and text→image. Deterministic given the config seed.

use ndarray::{Array2, Array3};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::render::BACKGROUND;
use crate::data::Dataset;
use crate::error::{LabError, Result};
use crate::grid::ImageGrid;
use crate::models::loss::contrastive_loss;
use crate::models::optim::Adam;
use crate::models::params::GradBuffer;
use crate::models::{Arch, EncoderPair, ModelConfig};
use crate::rng::SeedPath;

pub const TEMPERATURE: f64 = 0.1;
pub const MAX_TEXT_LEN: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub arch: Arch,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub embed_dim: usize,
    /// Mirror half the batch images and shift by up to one pixel. The
    /// caption grammar is insensitive to both (left/right relations are
    /// symmetric), so this only regularizes the encoders.
    #[serde(default = "default_augment")]
    pub augment: bool,
}

fn default_augment() -> bool {
    true
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            arch: Arch::Conv,
            seed: 0,
            epochs: 30,
            batch_size: 16,
            learning_rate: 3e-3,
            embed_dim: 32,
            augment: true,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(LabError::Config(
                "contrastive training needs batch_size ≥ 2 (in-batch negatives)".into(),
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(LabError::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Optionally mirrored, shifted copy of a training image; out-of-frame
/// pixels take the canvas color.
fn augment_image(image: &ImageGrid, flip: bool, shift: (isize, isize)) -> ImageGrid {
    let (channels, h, w) = image.dims();
    let src = image.as_array();
    let out = Array3::from_shape_fn((channels, h, w), |(c, row, col)| {
        let col = if flip { w - 1 - col } else { col };
        let r = row as isize - shift.0;
        let s = col as isize - shift.1;
        if r >= 0 && r < h as isize && s >= 0 && s < w as isize {
            src[(c, r as usize, s as usize)]
        } else {
            BACKGROUND[c] as f64 / 255.0
        }
    });
    ImageGrid::new(out)
}

/// Per-run record of what training did.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainSummary {
    pub epoch_losses: Vec<f64>,
    pub final_loss: f64,
    pub temperature: f64,
    pub config: TrainConfig,
}

/// Train a fresh pair on the dataset's train split.
pub fn train_contrastive(
    dataset: &Dataset,
    cfg: &TrainConfig,
) -> Result<(EncoderPair, TrainSummary)> {
    cfg.validate()?;
    if dataset.train_ids().is_empty() {
        return Err(LabError::Config("dataset has an empty train split".into()));
    }

    let config = ModelConfig {
        arch: cfg.arch,
        embed_dim: cfg.embed_dim,
        image_size: dataset.image_size,
        vocab_size: dataset.vocab.len(),
        max_text_len: MAX_TEXT_LEN,
        seed: cfg.seed,
    };
    let mut pair = EncoderPair::init(config, dataset.vocab.fingerprint())?;

    let mut adam_img = Adam::new(cfg.learning_rate, pair.image_params().len());
    let mut adam_txt = Adam::new(cfg.learning_rate, pair.text_params().len());
    let mut img_grads = GradBuffer::zeros_like(pair.image_params());
    let mut txt_grads = GradBuffer::zeros_like(pair.text_params());

    let mut rng = SeedPath::root(cfg.seed)
        .child("train")
        .child(cfg.arch.tag())
        .rng();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut order: Vec<u32> = dataset.train_ids().to_vec();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;

        for batch_ids in order.chunks(cfg.batch_size) {
            if batch_ids.len() < 2 {
                continue; // a 1-element batch has no negatives
            }
            let b = batch_ids.len();
            let d = cfg.embed_dim;

            let mut img_embs = Array2::<f64>::zeros((b, d));
            let mut txt_embs = Array2::<f64>::zeros((b, d));
            let mut img_caches = Vec::with_capacity(b);
            let mut txt_caches = Vec::with_capacity(b);
            for (i, &id) in batch_ids.iter().enumerate() {
                let pair_data = dataset.pair(id)?;
                let caption = &pair_data.captions[rng.gen_range(0..5usize)];
                let augmented;
                let image = if cfg.augment {
                    let flip = rng.gen_bool(0.5);
                    let shift = (rng.gen_range(-1..=1), rng.gen_range(-1..=1));
                    augmented = augment_image(&pair_data.image, flip, shift);
                    &augmented
                } else {
                    &pair_data.image
                };
                let (ie, ic) = pair.encode_image_cached(image)?;
                let (te, tc) = pair.encode_text_cached(caption)?;
                img_embs.row_mut(i).assign(&ie);
                txt_embs.row_mut(i).assign(&te);
                img_caches.push(ic);
                txt_caches.push(tc);
            }

            let (value, d_img, d_txt) = contrastive_loss(&img_embs, &txt_embs, TEMPERATURE)?;
            if !value.is_finite() {
                return Err(LabError::Numerical(format!(
                    "training diverged at epoch {epoch}, batch {batches}: loss {value}"
                )));
            }

            img_grads.reset();
            txt_grads.reset();
            for i in 0..b {
                pair.image_param_grads(&img_caches[i], &d_img.row(i).to_owned(), &mut img_grads);
                pair.text_param_grads(&txt_caches[i], &d_txt.row(i).to_owned(), &mut txt_grads);
            }
            {
                let (ip, tp) = pair.params_mut();
                adam_img.step(ip.values_mut(), img_grads.values())?;
                adam_txt.step(tp.values_mut(), txt_grads.values())?;
            }

            epoch_loss += value;
            batches += 1;
        }
        epoch_losses.push(epoch_loss / batches.max(1) as f64);
    }

    let final_loss = epoch_losses.last().copied().unwrap_or(f64::NAN);
    let summary = TrainSummary {
        epoch_losses,
        final_loss,
        temperature: TEMPERATURE,
        config: *cfg,
    };
    Ok((pair, summary))
}

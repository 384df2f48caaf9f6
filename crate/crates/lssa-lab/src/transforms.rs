//! Input-diversity transformations used by the attack loops.
//!
//! The central one is the local shuffle: pick one of the four h/2 × w/2
//! quadrants and permute its four h/4 × w/4 subblocks, leaving the other
//! three quarters of the image untouched. A global shuffle (permuting
//! blocks of the whole image) and bilinear rescale-and-back resampling are
//! provided as baselines, and `sample_neighbors` draws the L∞ neighborhood
//! samples the text attack scores candidates against.
//!
//! All transforms are pure; randomized ones take an explicit rng so batches
//! replay exactly.

use ndarray::s;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{LabError, Result};
use crate::grid::ImageGrid;

/// Which quadrant the local shuffle touches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionMode {
    /// Draw a quadrant uniformly per sample.
    Random,
    TopLeft,
    TopRight,
    BottomLeft,
    BottomRight,
}

impl PositionMode {
    /// Row-major quadrant index for the fixed modes.
    pub fn fixed_quadrant(self) -> Option<usize> {
        match self {
            PositionMode::Random => None,
            PositionMode::TopLeft => Some(0),
            PositionMode::TopRight => Some(1),
            PositionMode::BottomLeft => Some(2),
            PositionMode::BottomRight => Some(3),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "random" => PositionMode::Random,
            "top_left" => PositionMode::TopLeft,
            "top_right" => PositionMode::TopRight,
            "bottom_left" => PositionMode::BottomLeft,
            "bottom_right" => PositionMode::BottomRight,
            other => {
                return Err(LabError::Config(format!(
                    "unknown shuffle position mode {other:?} \
                     (expected random|top_left|top_right|bottom_left|bottom_right)"
                )))
            }
        })
    }
}

/// How many shuffled copies to draw per attack iteration, and where.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ShuffleConfig {
    /// Shuffled samples per iteration (the attack's gradient batch size).
    pub draws: usize,
    pub position: PositionMode,
    /// Root for deriving the shuffle stream when no rng is threaded in.
    pub seed: u64,
}

impl ShuffleConfig {
    pub fn new(draws: usize, position: PositionMode, seed: u64) -> Self {
        Self { draws, position, seed }
    }
}

/// L∞ neighborhood sampling around an adversarial image.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SampleConfig {
    /// Neighbor count per text-attack scoring pass.
    pub count: usize,
    /// Half-width of the per-pixel uniform noise, in [0,1] pixel scale.
    pub radius: f64,
    pub seed: u64,
}

impl SampleConfig {
    pub fn new(count: usize, radius: f64, seed: u64) -> Result<Self> {
        if !radius.is_finite() || radius < 0.0 {
            return Err(LabError::Config(format!(
                "neighbor sampling radius must be finite and ≥ 0, got {radius}"
            )));
        }
        Ok(Self { count, radius, seed })
    }
}

fn check_perm<const K: usize>(perm: &[usize; K]) -> Result<()> {
    let mut seen = [false; K];
    for &p in perm {
        if p >= K || seen[p] {
            return Err(LabError::Config(format!(
                "{perm:?} is not a permutation of 0..{K}"
            )));
        }
        seen[p] = true;
    }
    Ok(())
}

fn check_perm_dyn(perm: &[usize], k: usize) -> Result<()> {
    let mut seen = vec![false; k];
    if perm.len() != k {
        return Err(LabError::Config(format!(
            "permutation has {} entries, block grid has {k}",
            perm.len()
        )));
    }
    for &p in perm {
        if p >= k || seen[p] {
            return Err(LabError::Config(format!(
                "{perm:?} is not a permutation of 0..{k}"
            )));
        }
        seen[p] = true;
    }
    Ok(())
}

/// Permute the four h/4 × w/4 subblocks of one h/2 × w/2 quadrant.
///
/// Quadrants and subblocks are indexed row-major; slot `k` of the output
/// quadrant receives input subblock `perm[k]`. Pixels outside the chosen
/// quadrant pass through untouched.
pub fn local_shuffle(v: &ImageGrid, quadrant: usize, perm: &[usize; 4]) -> Result<ImageGrid> {
    let (c, h, w) = v.dims();
    if h % 4 != 0 || w % 4 != 0 {
        return Err(LabError::ShapeMismatch {
            expected: "height and width divisible by 4".into(),
            got: format!("{c}×{h}×{w}"),
        });
    }
    if quadrant >= 4 {
        return Err(LabError::Config(format!(
            "quadrant index {quadrant} out of range 0..4"
        )));
    }
    check_perm(perm)?;

    let (qh, qw) = (h / 2, w / 2);
    let (sh, sw) = (h / 4, w / 4);
    let (q_row, q_col) = (quadrant / 2, quadrant % 2);
    let (top, left) = (q_row * qh, q_col * qw);

    let mut out = v.as_array().to_owned();
    for slot in 0..4 {
        let src = perm[slot];
        let (sr, sc) = (src / 2, src % 2);
        let (dr, dc) = (slot / 2, slot % 2);
        let block = v
            .as_array()
            .slice(s![
                ..,
                top + sr * sh..top + (sr + 1) * sh,
                left + sc * sw..left + (sc + 1) * sw
            ])
            .to_owned();
        out.slice_mut(s![
            ..,
            top + dr * sh..top + (dr + 1) * sh,
            left + dc * sw..left + (dc + 1) * sw
        ])
        .assign(&block);
    }
    Ok(ImageGrid::new(out))
}

/// Partition the whole image into `rows × cols` blocks and permute them.
///
/// Same slot convention as [`local_shuffle`]: output block `k` receives
/// input block `perm[k]` (row-major). This is the "disrupt everything"
/// baseline the local shuffle is compared against.
pub fn global_shuffle(v: &ImageGrid, grid: (usize, usize), perm: &[usize]) -> Result<ImageGrid> {
    let (c, h, w) = v.dims();
    let (rows, cols) = grid;
    if rows == 0 || cols == 0 || h % rows != 0 || w % cols != 0 {
        return Err(LabError::ShapeMismatch {
            expected: format!("dimensions divisible by a {rows}×{cols} block grid"),
            got: format!("{c}×{h}×{w}"),
        });
    }
    check_perm_dyn(perm, rows * cols)?;

    let (bh, bw) = (h / rows, w / cols);
    let mut out = v.as_array().to_owned();
    for slot in 0..rows * cols {
        let src = perm[slot];
        let (sr, sc) = (src / cols, src % cols);
        let (dr, dc) = (slot / cols, slot % cols);
        let block = v
            .as_array()
            .slice(s![.., sr * bh..(sr + 1) * bh, sc * bw..(sc + 1) * bw])
            .to_owned();
        out.slice_mut(s![.., dr * bh..(dr + 1) * bh, dc * bw..(dc + 1) * bw])
            .assign(&block);
    }
    Ok(ImageGrid::new(out))
}

/// Draw `cfg.draws` independently shuffled copies of `v`.
///
/// For [`PositionMode::Random`] each sample first draws its quadrant
/// uniformly from the four, then a permutation uniformly from the 24;
/// fixed modes draw only the permutation.
pub fn draw_shuffled_batch<R: Rng>(
    v: &ImageGrid,
    cfg: &ShuffleConfig,
    rng: &mut R,
) -> Result<Vec<ImageGrid>> {
    let mut batch = Vec::with_capacity(cfg.draws);
    for _ in 0..cfg.draws {
        let quadrant = match cfg.position.fixed_quadrant() {
            Some(q) => q,
            None => rng.gen_range(0..4usize),
        };
        let mut perm = [0usize, 1, 2, 3];
        perm.shuffle(rng);
        batch.push(local_shuffle(v, quadrant, &perm)?);
    }
    Ok(batch)
}

/// Bilinear resample to `(new_h, new_w)`.
///
/// Half-pixel-center convention; exact pass-through when the size is
/// unchanged, and constants stay constant.
fn resize_bilinear(v: &ImageGrid, new_h: usize, new_w: usize) -> ImageGrid {
    let (c, h, w) = v.dims();
    let src = v.as_array();
    let mut out = ndarray::Array3::<f64>::zeros((c, new_h, new_w));
    let scale_h = h as f64 / new_h as f64;
    let scale_w = w as f64 / new_w as f64;
    for oy in 0..new_h {
        let sy = ((oy as f64 + 0.5) * scale_h - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let fy = sy - y0 as f64;
        for ox in 0..new_w {
            let sx = ((ox as f64 + 0.5) * scale_w - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let fx = sx - x0 as f64;
            for ch in 0..c {
                let top = src[[ch, y0, x0]] * (1.0 - fx) + src[[ch, y0, x1]] * fx;
                let bot = src[[ch, y1, x0]] * (1.0 - fx) + src[[ch, y1, x1]] * fx;
                out[[ch, oy, ox]] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    ImageGrid::new(out)
}

/// Resample `v` to each scale and back to its native size, yielding one
/// shape-compatible augmented copy per scale.
pub fn resize_set(v: &ImageGrid, scales: &[f64]) -> Result<Vec<ImageGrid>> {
    let (_, h, w) = v.dims();
    let mut out = Vec::with_capacity(scales.len());
    for &scale in scales {
        if !scale.is_finite() || scale <= 0.0 {
            return Err(LabError::Config(format!("resize scale must be > 0, got {scale}")));
        }
        let sh = (scale * h as f64).round() as usize;
        let sw = (scale * w as f64).round() as usize;
        if sh < 4 || sw < 4 {
            return Err(LabError::Config(format!(
                "scale {scale} shrinks {h}×{w} below the 4 px minimum"
            )));
        }
        if sh == h && sw == w {
            out.push(v.clone());
        } else {
            out.push(resize_bilinear(&resize_bilinear(v, sh, sw), h, w));
        }
    }
    Ok(out)
}

/// Draw `cfg.count` neighbors of `v_adv`: per-pixel Uniform(−radius, +radius)
/// noise, clamped back into [0,1]. Every neighbor stays within `radius` of
/// `v_adv` in L∞.
pub fn sample_neighbors<R: Rng>(
    v_adv: &ImageGrid,
    cfg: &SampleConfig,
    rng: &mut R,
) -> Vec<ImageGrid> {
    if cfg.count == 0 {
        return Vec::new();
    }
    let noise = Uniform::new_inclusive(-cfg.radius, cfg.radius);
    (0..cfg.count)
        .map(|_| {
            let perturbed = v_adv.as_array().map(|&x| {
                let u = noise.sample(rng);
                (x + u).clamp(0.0, 1.0)
            });
            ImageGrid::new(perturbed)
        })
        .collect()
}

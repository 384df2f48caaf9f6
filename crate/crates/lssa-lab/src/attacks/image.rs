//! Momentum sign-ascent on the image under an L∞ ball, with the gradient
//! averaged over a batch of shuffled copies of the current iterate.

use ndarray::Array3;
use rand::seq::SliceRandom;

use crate::data::TokenSequence;
use crate::error::{LabError, Result};
use crate::grid::ImageGrid;
use crate::models::{encode_text_set, loss, DualEncoder, LossSpec};
use crate::rng::SeedPath;
use crate::transforms::{draw_shuffled_batch, global_shuffle};

use super::AttackBudget;

/// Which spatial destruction the gradient batch uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShuffleKind {
    /// Permute the 2×2 subblocks of one quadrant (per config).
    Local,
    /// Permute the blocks of a whole-image grid.
    Global { grid: (usize, usize) },
}

/// Accumulated ascent direction across iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentumState {
    velocity: Array3<f64>,
}

impl MomentumState {
    pub fn zeros(dims: (usize, usize, usize)) -> Self {
        Self { velocity: Array3::zeros(dims) }
    }

    pub fn velocity(&self) -> &Array3<f64> {
        &self.velocity
    }
}

/// Decayed running sum of L1-normalized gradients:
/// `v' = momentum · v + mean_j(g_j / ‖g_j‖₁)`. A gradient with zero L1 norm
/// contributes a zero term rather than a division blow-up.
pub fn momentum_update(
    state: &MomentumState,
    gradients: &[Array3<f64>],
    momentum: f64,
) -> Result<MomentumState> {
    if gradients.is_empty() {
        return Err(LabError::Config("momentum update needs at least one gradient".into()));
    }
    let dims = state.velocity.dim();
    let mut velocity = &state.velocity * momentum;
    let weight = 1.0 / gradients.len() as f64;
    for g in gradients {
        if g.dim() != dims {
            return Err(LabError::ShapeMismatch {
                expected: format!("{dims:?}"),
                got: format!("{:?}", g.dim()),
            });
        }
        let norm: f64 = g.iter().map(|x| x.abs()).sum();
        if norm > 0.0 {
            velocity.zip_mut_with(g, |v, &x| *v += weight * x / norm);
        }
    }
    Ok(MomentumState { velocity })
}

/// Strict sign with `sign(0) = 0`; `f64::signum` maps 0 to 1, which would
/// waste budget on dead coordinates.
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// One ascent step: move along `sign(velocity)`, project back into the L∞
/// ball around the original, then into valid pixel range.
pub fn ascent_step(
    current: &ImageGrid,
    velocity: &Array3<f64>,
    step_size: f64,
    original: &ImageGrid,
    radius: f64,
) -> Result<ImageGrid> {
    if current.dims() != original.dims() || velocity.dim() != current.dims() {
        return Err(LabError::ShapeMismatch {
            expected: format!("{:?}", original.dims()),
            got: format!("{:?} step over {:?}", velocity.dim(), current.dims()),
        });
    }
    let mut out = current.as_array().clone();
    ndarray::Zip::from(&mut out)
        .and(velocity)
        .and(original.as_array())
        .for_each(|x, &v, &orig| {
            let moved = *x + step_size * sign(v);
            *x = moved.clamp(orig - radius, orig + radius).clamp(0.0, 1.0);
        });
    Ok(ImageGrid::new(out))
}

fn ensure_finite(value: f64, iteration: usize) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(LabError::Numerical(format!(
            "attack loss became non-finite at iteration {iteration}"
        )))
    }
}

/// Run the full image loop and return the adversarial image plus the
/// objective at every iterate (length `iterations + 1`).
///
/// With zero shuffle draws the gradient comes from the unshuffled iterate
/// and no randomness is consumed, so the loop degrades exactly to plain
/// (momentum) sign ascent.
pub fn image_attack<M: DualEncoder + ?Sized>(
    model: &M,
    original: &ImageGrid,
    caption_set: &[TokenSequence],
    budget: &AttackBudget,
    kind: ShuffleKind,
) -> Result<(ImageGrid, Vec<f64>)> {
    budget.validate()?;
    let text_embeddings = encode_text_set(model, caption_set)?;
    let spec = LossSpec::default();
    let mut rng = SeedPath::root(budget.shuffle.seed).child("shuffle").rng();
    let mut current = original.clone();
    let mut state = MomentumState::zeros(original.dims());
    let mut trace = Vec::with_capacity(budget.iterations + 1);

    let objective = |v: &ImageGrid| -> Result<f64> {
        let e = model.encode_image(v)?;
        loss(&spec, e.view(), text_embeddings.view())
    };
    trace.push(ensure_finite(objective(&current)?, 0)?);

    for i in 0..budget.iterations {
        let gradients = if budget.shuffle.draws == 0 {
            let (value, g) = model.loss_and_input_gradient(&current, text_embeddings.view())?;
            ensure_finite(value, i)?;
            vec![g]
        } else {
            let copies = match kind {
                ShuffleKind::Local => draw_shuffled_batch(&current, &budget.shuffle, &mut rng)?,
                ShuffleKind::Global { grid } => {
                    let blocks: Vec<usize> = (0..grid.0 * grid.1).collect();
                    (0..budget.shuffle.draws)
                        .map(|_| {
                            let mut perm = blocks.clone();
                            perm.shuffle(&mut rng);
                            global_shuffle(&current, grid, &perm)
                        })
                        .collect::<Result<Vec<_>>>()?
                }
            };
            let mut grads = Vec::with_capacity(copies.len());
            for copy in &copies {
                let (value, g) = model.loss_and_input_gradient(copy, text_embeddings.view())?;
                ensure_finite(value, i)?;
                grads.push(g);
            }
            grads
        };
        state = momentum_update(&state, &gradients, budget.momentum)?;
        current = ascent_step(
            &current,
            state.velocity(),
            budget.step_size,
            original,
            budget.image_radius,
        )?;
        trace.push(ensure_finite(objective(&current)?, i + 1)?);
    }
    Ok((current, trace))
}

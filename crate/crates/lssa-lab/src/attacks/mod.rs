//! Retrieval attacks: the momentum sign-ascent image loop, the exact
//! single-substitution text attack, and the named pipelines that compose
//! them (separate, sequential, and shuffle-and-sample variants).

pub mod image;
pub mod pipeline;
pub mod text;

use crate::data::TokenSequence;
use crate::error::{LabError, Result};
use crate::grid::ImageGrid;
use crate::transforms::{PositionMode, SampleConfig, ShuffleConfig};

pub use image::{ascent_step, image_attack, momentum_update, MomentumState, ShuffleKind};
pub use pipeline::{craft_for_pairs, craft_text_sweep, run_pipeline, AttackInput, PipelineName};
pub use text::{text_attack, text_candidates, text_objective};

/// Every perturbation hyperparameter of one attack run, validated as a unit.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AttackBudget {
    /// L∞ image budget ε_v, in [0,1] pixel scale.
    pub image_radius: f64,
    /// Sign-ascent step size α.
    pub step_size: f64,
    /// Iteration count T.
    pub iterations: usize,
    /// Momentum decay μ.
    pub momentum: f64,
    /// Max substituted words ε_t (0 or 1).
    pub text_radius: usize,
    /// Candidate substitutions per word W.
    pub candidates_per_word: usize,
    /// Loss mixing weight λ between the original-image term and the
    /// neighbor mean in the text objective.
    pub loss_mix: f64,
    /// Shuffled-copy batch for the image loop (N and where to shuffle).
    pub shuffle: ShuffleConfig,
    /// Neighborhood sampling for the text stage (M and ε₀).
    pub sample: SampleConfig,
}

impl AttackBudget {
    /// The standard run: ε_v=2/255, α=0.5/255, T=10, μ=1, N=20, M=20,
    /// ε₀=ε_v/2, λ=0.5, ε_t=1, W=10.
    pub fn standard(seed: u64) -> Self {
        Self {
            image_radius: 2.0 / 255.0,
            step_size: 0.5 / 255.0,
            iterations: 10,
            momentum: 1.0,
            text_radius: 1,
            candidates_per_word: 10,
            loss_mix: 0.5,
            shuffle: ShuffleConfig::new(20, PositionMode::Random, seed),
            sample: SampleConfig::new(20, 1.0 / 255.0, seed).expect("valid radius"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(LabError::Config(msg));
        if !self.image_radius.is_finite() || self.image_radius < 0.0 {
            return fail(format!("image radius must be ≥ 0, got {}", self.image_radius));
        }
        if self.iterations > 0 && !(self.step_size.is_finite() && self.step_size > 0.0) {
            return fail(format!(
                "step size must be > 0 when iterating, got {}",
                self.step_size
            ));
        }
        if !self.momentum.is_finite() || self.momentum < 0.0 {
            return fail(format!("momentum must be ≥ 0, got {}", self.momentum));
        }
        if !(0.0..=1.0).contains(&self.loss_mix) {
            return fail(format!("loss mix must lie in [0,1], got {}", self.loss_mix));
        }
        if self.text_radius > 1 {
            return fail(format!("text radius must be 0 or 1, got {}", self.text_radius));
        }
        if self.candidates_per_word == 0 {
            return fail("candidates per word must be ≥ 1".into());
        }
        if !self.sample.radius.is_finite() || self.sample.radius < 0.0 {
            return fail(format!("sampling radius must be ≥ 0, got {}", self.sample.radius));
        }
        Ok(())
    }

    pub fn with_shuffle_draws(mut self, draws: usize) -> Self {
        self.shuffle.draws = draws;
        self
    }

    pub fn with_momentum(mut self, momentum: f64) -> Self {
        self.momentum = momentum;
        self
    }

    pub fn with_loss_mix(mut self, loss_mix: f64) -> Self {
        self.loss_mix = loss_mix;
        self
    }

    pub fn with_sample_count(mut self, count: usize) -> Self {
        self.sample.count = count;
        self
    }
}

/// What an attack produced, plus enough to replay it.
#[derive(Debug, Clone)]
pub struct AttackOutcome {
    pub adversarial_image: ImageGrid,
    pub adversarial_caption: TokenSequence,
    /// Attack objective at each image iterate (length T+1: initial through final).
    pub loss_trace: Vec<f64>,
    pub shuffle_seed: u64,
    pub sample_seed: u64,
}

impl AttackOutcome {
    /// Enforce the output contract: budgets respected, pixels in range.
    pub fn validate(&self, original: &ImageGrid, caption: &TokenSequence, budget: &AttackBudget) -> Result<()> {
        let dist = self.adversarial_image.linf_distance(original);
        if dist > budget.image_radius + 1e-9 {
            return Err(LabError::Numerical(format!(
                "adversarial image exceeds the L∞ budget: {dist} > {}",
                budget.image_radius
            )));
        }
        self.adversarial_image.validate_unit_range()?;
        let word_dist = self.adversarial_caption.word_distance(caption);
        if word_dist > budget.text_radius {
            return Err(LabError::Numerical(format!(
                "adversarial caption changed {word_dist} words, budget allows {}",
                budget.text_radius
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
pub(crate) mod stub {
    //! Hand-built encoders for oracle tests: embeddings are looked up, not
    //! computed, so objective values can be arranged exactly.

    use ndarray::{Array1, Array2, Array3, ArrayView2};

    use crate::data::TokenSequence;
    use crate::error::{LabError, Result};
    use crate::grid::ImageGrid;
    use crate::models::{loss_and_embedding_grad, DualEncoder, LossSpec};

    /// Maps images to embeddings by their [0,0,0] pixel and texts by their
    /// exact id sequence. Unmapped inputs are an error.
    pub struct TableEncoder {
        pub dim: usize,
        pub image_rows: Vec<(f64, Array1<f64>)>,
        pub text_rows: Vec<(Vec<u32>, Array1<f64>)>,
        pub token_table: Array2<f64>,
    }

    impl TableEncoder {
        fn lookup_image(&self, v: &ImageGrid) -> Result<Array1<f64>> {
            let key = v.get(0, 0, 0);
            self.image_rows
                .iter()
                .find(|(k, _)| (k - key).abs() < 1e-9)
                .map(|(_, e)| e.clone())
                .ok_or_else(|| LabError::Numerical(format!("stub has no image for key {key}")))
        }
    }

    impl DualEncoder for TableEncoder {
        fn embed_dim(&self) -> usize {
            self.dim
        }

        fn encode_image(&self, v: &ImageGrid) -> Result<Array1<f64>> {
            self.lookup_image(v)
        }

        fn encode_text(&self, t: &TokenSequence) -> Result<Array1<f64>> {
            self.text_rows
                .iter()
                .find(|(k, _)| k.as_slice() == t.ids())
                .map(|(_, e)| e.clone())
                .ok_or_else(|| {
                    LabError::Numerical(format!("stub has no text for ids {:?}", t.ids()))
                })
        }

        fn loss_and_input_gradient(
            &self,
            v: &ImageGrid,
            text_embeddings: ArrayView2<f64>,
        ) -> Result<(f64, Array3<f64>)> {
            let e = self.lookup_image(v)?;
            let (value, _) =
                loss_and_embedding_grad(&LossSpec::default(), e.view(), text_embeddings)?;
            Ok((value, Array3::zeros(v.dims())))
        }

        fn token_embeddings(&self) -> Array2<f64> {
            self.token_table.clone()
        }
    }

    /// Always reports the same input gradient; for momentum arithmetic tests.
    pub struct ConstantGradient {
        pub gradient: Array3<f64>,
        pub loss: f64,
    }

    impl DualEncoder for ConstantGradient {
        fn embed_dim(&self) -> usize {
            2
        }

        fn encode_image(&self, _v: &ImageGrid) -> Result<Array1<f64>> {
            Ok(Array1::from_vec(vec![1.0, 0.0]))
        }

        fn encode_text(&self, _t: &TokenSequence) -> Result<Array1<f64>> {
            Ok(Array1::from_vec(vec![1.0, 0.0]))
        }

        fn loss_and_input_gradient(
            &self,
            _v: &ImageGrid,
            _text_embeddings: ArrayView2<f64>,
        ) -> Result<(f64, Array3<f64>)> {
            Ok((self.loss, self.gradient.clone()))
        }

        fn token_embeddings(&self) -> Array2<f64> {
            Array2::zeros((4, 2))
        }
    }
}

//! Dual-encoder retrieval models: two image architectures and a text
//! encoder sharing one embedding space, plus training, checkpointing, and
//! the input-gradient oracle the attacks are built on.

pub mod checkpoint;
pub mod conv_net;
pub mod loss;
pub mod optim;
pub mod params;
pub mod patch_net;
pub mod text_net;
pub mod train;

use ndarray::{Array1, Array2, Array3, ArrayView2, ArrayView3};

use crate::data::TokenSequence;
use crate::error::{LabError, Result};
use crate::grid::ImageGrid;
use crate::rng::SeedPath;
use params::{GradBuffer, ParamStore};

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta, RegressionProbe};
pub use loss::{cosine, loss, loss_and_embedding_grad, LossKind, LossSpec, Reduction};
pub use train::{train_contrastive, TrainConfig, TrainSummary};

/// Image-encoder architecture family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    Conv,
    Patch,
}

impl Arch {
    pub fn tag(self) -> &'static str {
        match self {
            Arch::Conv => "conv",
            Arch::Patch => "patch",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "conv" => Ok(Arch::Conv),
            "patch" => Ok(Arch::Patch),
            other => Err(LabError::Config(format!(
                "unknown architecture {other:?} (expected conv|patch)"
            ))),
        }
    }
}

/// Everything needed to rebuild a model's shape (not its weights).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModelConfig {
    pub arch: Arch,
    pub embed_dim: usize,
    pub image_size: (usize, usize),
    pub vocab_size: usize,
    pub max_text_len: usize,
    pub seed: u64,
}

impl ModelConfig {
    fn validate(&self) -> Result<()> {
        let (h, w) = self.image_size;
        let div = match self.arch {
            Arch::Conv => 2,
            Arch::Patch => patch_net::PATCH,
        };
        if h % div != 0 || w % div != 0 {
            return Err(LabError::Config(format!(
                "{} encoder needs image sides divisible by {div}, got {h}×{w}",
                self.arch.tag()
            )));
        }
        if self.embed_dim < 2 {
            return Err(LabError::Config("embedding dimension must be ≥ 2".into()));
        }
        if self.vocab_size == 0 || self.max_text_len == 0 {
            return Err(LabError::Config("vocab and text length must be nonzero".into()));
        }
        Ok(())
    }
}

/// The minimal model surface the attacks and the evaluator consume.
/// Trained pairs implement it; tests substitute hand-built stubs.
pub trait DualEncoder: Sync {
    fn embed_dim(&self) -> usize;
    fn encode_image(&self, v: &ImageGrid) -> Result<Array1<f64>>;
    fn encode_text(&self, t: &TokenSequence) -> Result<Array1<f64>>;
    /// Attack objective J (mean cosine dissimilarity against the given
    /// text embeddings, one per row) and its gradient in the image.
    fn loss_and_input_gradient(
        &self,
        v: &ImageGrid,
        text_embeddings: ArrayView2<f64>,
    ) -> Result<(f64, Array3<f64>)>;
    /// Token-embedding table (vocab × dim), for candidate ranking.
    fn token_embeddings(&self) -> Array2<f64>;
}

pub(crate) enum ImageCache {
    Conv(conv_net::Cache),
    Patch(patch_net::Cache),
}

impl ImageCache {
    fn embedding(&self) -> &Array1<f64> {
        match self {
            ImageCache::Conv(c) => c.embedding(),
            ImageCache::Patch(c) => c.embedding(),
        }
    }
}

/// An aligned image/text encoder pair.
#[derive(Debug, Clone)]
pub struct EncoderPair {
    config: ModelConfig,
    image_params: ParamStore,
    text_params: ParamStore,
    vocab_fingerprint: String,
}

impl EncoderPair {
    /// Fresh pair with seed-derived initialization.
    pub fn init(config: ModelConfig, vocab_fingerprint: String) -> Result<Self> {
        config.validate()?;
        let mut image_params = match config.arch {
            Arch::Conv => conv_net::layout(config.embed_dim, config.image_size),
            Arch::Patch => patch_net::layout(config.embed_dim, config.image_size),
        };
        let mut text_params =
            text_net::layout(config.embed_dim, config.vocab_size, config.max_text_len);
        let base = SeedPath::root(config.seed).child("init").child(config.arch.tag());
        image_params.init_xavier(&mut base.child("image").rng());
        text_params.init_xavier(&mut base.child("text").rng());
        Ok(Self { config, image_params, text_params, vocab_fingerprint })
    }

    pub(crate) fn from_parts(
        config: ModelConfig,
        image_values: Vec<f64>,
        text_values: Vec<f64>,
        vocab_fingerprint: String,
    ) -> Result<Self> {
        let mut pair = Self::init(config, vocab_fingerprint)?;
        pair.image_params.load_values(image_values)?;
        pair.text_params.load_values(text_values)?;
        Ok(pair)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn arch(&self) -> Arch {
        self.config.arch
    }

    pub fn vocab_fingerprint(&self) -> &str {
        &self.vocab_fingerprint
    }

    pub(crate) fn image_params(&self) -> &ParamStore {
        &self.image_params
    }

    pub(crate) fn text_params(&self) -> &ParamStore {
        &self.text_params
    }

    pub(crate) fn params_mut(&mut self) -> (&mut ParamStore, &mut ParamStore) {
        (&mut self.image_params, &mut self.text_params)
    }

    fn check_image(&self, v: &ImageGrid) -> Result<()> {
        let (c, h, w) = v.dims();
        if c != 3 || (h, w) != self.config.image_size {
            return Err(LabError::ShapeMismatch {
                expected: format!(
                    "3×{}×{} image",
                    self.config.image_size.0, self.config.image_size.1
                ),
                got: format!("{c}×{h}×{w}"),
            });
        }
        Ok(())
    }

    fn check_text(&self, t: &TokenSequence) -> Result<()> {
        if t.is_empty() {
            return Err(LabError::Config("cannot encode an empty token sequence".into()));
        }
        if t.len() > self.config.max_text_len {
            return Err(LabError::ShapeMismatch {
                expected: format!("≤ {} tokens", self.config.max_text_len),
                got: format!("{}", t.len()),
            });
        }
        if let Some(&bad) = t.ids().iter().find(|&&id| id as usize >= self.config.vocab_size) {
            return Err(LabError::ShapeMismatch {
                expected: format!("token ids < {}", self.config.vocab_size),
                got: format!("{bad}"),
            });
        }
        Ok(())
    }

    fn image_forward(&self, v: ArrayView3<f64>) -> ImageCache {
        match self.config.arch {
            Arch::Conv => ImageCache::Conv(conv_net::forward(&self.image_params, v)),
            Arch::Patch => ImageCache::Patch(patch_net::forward(&self.image_params, v)),
        }
    }

    fn image_backward(
        &self,
        cache: &ImageCache,
        d_embedding: &Array1<f64>,
        grads: Option<&mut GradBuffer>,
        want_input: bool,
    ) -> Option<Array3<f64>> {
        match cache {
            ImageCache::Conv(c) => {
                conv_net::backward(&self.image_params, c, d_embedding, grads, want_input)
            }
            ImageCache::Patch(c) => {
                patch_net::backward(&self.image_params, c, d_embedding, grads, want_input)
            }
        }
    }

    pub(crate) fn encode_image_cached(&self, v: &ImageGrid) -> Result<(Array1<f64>, ImageCache)> {
        self.check_image(v)?;
        let cache = self.image_forward(v.as_array().view());
        Ok((cache.embedding().clone(), cache))
    }

    pub(crate) fn encode_text_cached(
        &self,
        t: &TokenSequence,
    ) -> Result<(Array1<f64>, text_net::Cache)> {
        self.check_text(t)?;
        let cache = text_net::forward(&self.text_params, t.ids());
        Ok((cache.embedding().clone(), cache))
    }

    pub(crate) fn image_param_grads(
        &self,
        cache: &ImageCache,
        d_embedding: &Array1<f64>,
        grads: &mut GradBuffer,
    ) {
        self.image_backward(cache, d_embedding, Some(grads), false);
    }

    pub(crate) fn text_param_grads(
        &self,
        cache: &text_net::Cache,
        d_embedding: &Array1<f64>,
        grads: &mut GradBuffer,
    ) {
        text_net::backward(&self.text_params, cache, d_embedding, grads);
    }
}

impl DualEncoder for EncoderPair {
    fn embed_dim(&self) -> usize {
        self.config.embed_dim
    }

    fn encode_image(&self, v: &ImageGrid) -> Result<Array1<f64>> {
        Ok(self.encode_image_cached(v)?.0)
    }

    fn encode_text(&self, t: &TokenSequence) -> Result<Array1<f64>> {
        Ok(self.encode_text_cached(t)?.0)
    }

    fn loss_and_input_gradient(
        &self,
        v: &ImageGrid,
        text_embeddings: ArrayView2<f64>,
    ) -> Result<(f64, Array3<f64>)> {
        self.check_image(v)?;
        let cache = self.image_forward(v.as_array().view());
        let spec = LossSpec::default();
        let (value, d_emb) =
            loss_and_embedding_grad(&spec, cache.embedding().view(), text_embeddings)?;
        let grad = self
            .image_backward(&cache, &d_emb, None, true)
            .expect("input gradient requested");
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(LabError::Numerical("input gradient is not finite".into()));
        }
        Ok((value, grad))
    }

    fn token_embeddings(&self) -> Array2<f64> {
        text_net::token_table(&self.text_params).to_owned()
    }
}

/// Loss J between an image and a caption set, via the model's encoders.
pub fn pair_loss(
    pair: &EncoderPair,
    spec: &LossSpec,
    v: &ImageGrid,
    t_set: &[TokenSequence],
) -> Result<f64> {
    let e_img = pair.encode_image(v)?;
    let e_txt = encode_text_set(pair, t_set)?;
    loss(spec, e_img.view(), e_txt.view())
}

/// ∂J/∂v for an image against a caption set: the attack's gradient oracle.
pub fn input_gradient(
    pair: &EncoderPair,
    spec: &LossSpec,
    v: &ImageGrid,
    t_set: &[TokenSequence],
) -> Result<Array3<f64>> {
    let _ = spec; // single loss kind today; field kept for config symmetry
    let e_txt = encode_text_set(pair, t_set)?;
    Ok(pair.loss_and_input_gradient(v, e_txt.view())?.1)
}

/// Stack the embeddings of a caption set, one per row.
pub fn encode_text_set<M: DualEncoder + ?Sized>(
    model: &M,
    t_set: &[TokenSequence],
) -> Result<Array2<f64>> {
    if t_set.is_empty() {
        return Err(LabError::Config("caption set must be nonempty".into()));
    }
    let d = model.embed_dim();
    let mut out = Array2::<f64>::zeros((t_set.len(), d));
    for (i, t) in t_set.iter().enumerate() {
        let e = model.encode_text(t)?;
        out.row_mut(i).assign(&e);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Vocabulary;
    use ndarray::Array3;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn test_config(arch: Arch, seed: u64) -> ModelConfig {
        ModelConfig {
            arch,
            embed_dim: 16,
            image_size: (16, 16),
            vocab_size: Vocabulary::builtin().len(),
            max_text_len: 12,
            seed,
        }
    }

    fn fresh_pair(arch: Arch, seed: u64) -> EncoderPair {
        EncoderPair::init(test_config(arch, seed), Vocabulary::builtin().fingerprint()).unwrap()
    }

    fn random_image(rng: &mut ChaCha8Rng, size: usize) -> ImageGrid {
        ImageGrid::new(Array3::from_shape_fn((3, size, size), |_| rng.gen_range(0.2..0.8)))
    }

    fn random_captions(rng: &mut ChaCha8Rng, n: usize) -> Vec<TokenSequence> {
        let vocab = Vocabulary::builtin();
        (0..n)
            .map(|_| {
                let ids: Vec<u32> =
                    (0..7).map(|_| rng.gen_range(1..vocab.len() as u32)).collect();
                vocab.sequence(ids).unwrap()
            })
            .collect()
    }

    #[test]
    fn encoding_is_deterministic_and_finite() {
        for arch in [Arch::Conv, Arch::Patch] {
            let pair = fresh_pair(arch, 3);
            let zeros = ImageGrid::zeros(3, 16, 16);
            let a = pair.encode_image(&zeros).unwrap();
            let b = pair.encode_image(&zeros).unwrap();
            assert_eq!(a, b);
            assert!(a.iter().all(|v| v.is_finite()));
            assert!((a.dot(&a) - 1.0).abs() < 1e-9, "unit norm");

            let vocab = Vocabulary::builtin();
            let t = vocab.tokenize("a red circle above a blue square").unwrap();
            let x = pair.encode_text(&t).unwrap();
            let y = pair.encode_text(&t).unwrap();
            assert_eq!(x, y);
            assert_eq!(x.len(), pair.embed_dim());
        }
    }

    #[test]
    fn text_preconditions_are_enforced() {
        let pair = fresh_pair(Arch::Conv, 0);
        let vocab = Vocabulary::builtin();
        let empty = vocab.sequence(vec![]).unwrap();
        assert!(pair.encode_text(&empty).is_err());
        let long = vocab.sequence(vec![1; 13]).unwrap();
        assert!(pair.encode_text(&long).is_err());
        let wrong_shape = ImageGrid::zeros(3, 32, 32);
        assert!(pair.encode_image(&wrong_shape).is_err());
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let spec = LossSpec::default();
        for arch in [Arch::Conv, Arch::Patch] {
            let pair = fresh_pair(arch, 7);
            let mut rng = ChaCha8Rng::seed_from_u64(41);
            let v = random_image(&mut rng, 16);
            let t_set = random_captions(&mut rng, 3);
            let grad = input_gradient(&pair, &spec, &v, &t_set).unwrap();
            assert_eq!(grad.dim(), (3, 16, 16));

            let h = 1e-3;
            let mut checked = 0;
            while checked < 100 {
                let (c, y, x) = (
                    rng.gen_range(0..3),
                    rng.gen_range(0..16),
                    rng.gen_range(0..16),
                );
                let mut vp = v.clone();
                let mut vm = v.clone();
                vp.set(c, y, x, vp.get(c, y, x) + h);
                vm.set(c, y, x, vm.get(c, y, x) - h);
                let fp = pair_loss(&pair, &spec, &vp, &t_set).unwrap();
                let fm = pair_loss(&pair, &spec, &vm, &t_set).unwrap();
                let fd = (fp - fm) / (2.0 * h);
                let an = grad[[c, y, x]];
                let tol = 1e-3 * fd.abs().max(an.abs()) + 1e-7;
                assert!(
                    (fd - an).abs() <= tol,
                    "{arch:?} coord ({c},{y},{x}): fd {fd} vs analytic {an}"
                );
                checked += 1;
            }
        }
    }

    #[test]
    fn saturated_constant_model_has_exactly_zero_gradient() {
        let mut pair = fresh_pair(Arch::Conv, 5);
        {
            let (img, _) = pair.params_mut();
            let range = img.range("conv1_b");
            for v in &mut img.values_mut()[range] {
                *v = 400.0; // tanh saturates to exactly 1.0; derivative is exactly 0
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let v = random_image(&mut rng, 16);
        let t_set = random_captions(&mut rng, 2);
        let grad = input_gradient(&pair, &LossSpec::default(), &v, &t_set).unwrap();
        assert!(grad.iter().all(|&g| g == 0.0), "saturated model must be constant in v");
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact_and_guarded() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let pair = fresh_pair(Arch::Patch, 9);
        let meta = CheckpointMeta { training: None, regression: None };
        save_checkpoint(&pair, &meta, &path).unwrap();

        let (loaded, _) = load_checkpoint(&path, Some(pair.vocab_fingerprint())).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let v = random_image(&mut rng, 16);
        let a = pair.encode_image(&v).unwrap();
        let b = loaded.encode_image(&v).unwrap();
        assert_eq!(a, b, "round-tripped weights must encode identically");

        match load_checkpoint(&path, Some("deadbeef")) {
            Err(LabError::VocabMismatch { checkpoint, dataset }) => {
                assert_eq!(dataset, "deadbeef");
                assert_eq!(checkpoint, pair.vocab_fingerprint());
            }
            other => panic!("expected vocab mismatch, got {other:?}"),
        }

        // Corrupt the version word (offset 8).
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[8] = 99;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_checkpoint(&path, None),
            Err(LabError::VersionMismatch { found: 99, supported: 1 })
        ));
    }

    #[test]
    fn training_is_deterministic_and_trains() {
        use crate::data::{generate_dataset, DataSpec};
        let dataset =
            generate_dataset(&DataSpec { num_images: 12, image_size: (16, 16), seed: 21 })
                .unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 4,
            embed_dim: 16,
            ..TrainConfig::default()
        };
        let (a, sa) = train_contrastive(&dataset, &cfg).unwrap();
        let (b, sb) = train_contrastive(&dataset, &cfg).unwrap();
        assert_eq!(a.image_params().values(), b.image_params().values());
        assert_eq!(sa, sb);
        assert_eq!(sa.epoch_losses.len(), 2);
        assert!(sa.final_loss.is_finite());

        // Zero epochs: initialized pair, no loss history.
        let cfg0 = TrainConfig { epochs: 0, ..cfg };
        let (_, s0) = train_contrastive(&dataset, &cfg0).unwrap();
        assert!(s0.epoch_losses.is_empty());

        let cfg_other = TrainConfig { seed: 1, ..cfg };
        let (c, _) = train_contrastive(&dataset, &cfg_other).unwrap();
        assert_ne!(a.image_params().values(), c.image_params().values());
    }
}

//! Named end-to-end attack pipelines. Each one composes the image loop and
//! the text search differently; the weaker baselines are configured as
//! special cases of the same machinery so results compare like for like.

use rayon::prelude::*;

use crate::data::{CaptionedImage, TokenSequence, Vocabulary};
use crate::error::{LabError, Result};
use crate::grid::ImageGrid;
use crate::models::DualEncoder;
use crate::rng::SeedPath;

use super::image::{image_attack, ShuffleKind};
use super::text::text_attack;
use super::{AttackBudget, AttackOutcome};

/// Which attack recipe to run.
///
/// The sequential baselines (`SgaTit`, `SgaIt`, `SgaItSampled`) keep the
/// image loop free of shuffling and momentum so the ladder up to the full
/// shuffle-and-sample attack isolates one ingredient per rung.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineName {
    /// Plain projected sign ascent on the image; caption untouched.
    Pgd,
    /// Momentum sign ascent on the image; caption untouched.
    #[serde(rename = "mifgsm")]
    MiFgsm,
    /// Image and text attacked independently against the originals.
    Sep,
    /// Caption set attacked first, image attacked against the adversarial
    /// captions, then a final text pass against the adversarial image.
    SgaTit,
    /// Image first, then a text pass against the adversarial image.
    SgaIt,
    /// As `SgaIt`, but the text pass scores a sampled neighborhood of the
    /// adversarial image mixed with the original.
    SgaItSampled,
    /// As `SgaIt`, but the image loop uses the locally shuffled gradient
    /// batch (still without momentum); the shuffle rung of the ladder.
    SgaItShuffled,
    /// Shuffled image loop and sampled text pass together, one rung below
    /// the full attack (which adds momentum).
    SgaItShuffledSampled,
    /// Full attack: locally shuffled gradient batches with momentum, then
    /// the sampled text pass.
    Lssa,
    /// Ablation of `Lssa` that shuffles whole image quadrants instead of
    /// subblocks within one quadrant.
    LssaGlobalShuffle,
}

impl PipelineName {
    pub const ALL: [PipelineName; 10] = [
        PipelineName::Pgd,
        PipelineName::MiFgsm,
        PipelineName::Sep,
        PipelineName::SgaTit,
        PipelineName::SgaIt,
        PipelineName::SgaItSampled,
        PipelineName::SgaItShuffled,
        PipelineName::SgaItShuffledSampled,
        PipelineName::Lssa,
        PipelineName::LssaGlobalShuffle,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            PipelineName::Pgd => "pgd",
            PipelineName::MiFgsm => "mifgsm",
            PipelineName::Sep => "sep",
            PipelineName::SgaTit => "sga_tit",
            PipelineName::SgaIt => "sga_it",
            PipelineName::SgaItSampled => "sga_it_sampled",
            PipelineName::SgaItShuffled => "sga_it_shuffled",
            PipelineName::SgaItShuffledSampled => "sga_it_shuffled_sampled",
            PipelineName::Lssa => "lssa",
            PipelineName::LssaGlobalShuffle => "lssa_global_shuffle",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        PipelineName::ALL
            .into_iter()
            .find(|p| p.as_str() == name)
            .ok_or_else(|| {
                let known: Vec<&str> = PipelineName::ALL.iter().map(|p| p.as_str()).collect();
                LabError::Config(format!(
                    "unknown pipeline '{name}', expected one of: {}",
                    known.join(", ")
                ))
            })
    }
}

impl std::fmt::Display for PipelineName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One image with its paired captions; the first caption is the one the
/// text stage perturbs, the whole set guides the image stage.
#[derive(Debug, Clone)]
pub struct AttackInput {
    pub image: ImageGrid,
    pub captions: Vec<TokenSequence>,
}

impl AttackInput {
    fn target_caption(&self) -> Result<&TokenSequence> {
        self.captions
            .first()
            .ok_or_else(|| LabError::Config("attack input needs at least one caption".into()))
    }
}

/// Run one named pipeline against one image–caption pair and validate the
/// outcome against the budget before returning it.
pub fn run_pipeline<M: DualEncoder + ?Sized>(
    name: PipelineName,
    model: &M,
    vocab: &Vocabulary,
    input: &AttackInput,
    budget: &AttackBudget,
) -> Result<AttackOutcome> {
    budget.validate()?;
    let target = input.target_caption()?;
    let image = &input.image;

    // Baseline image stages drop the shuffle batch (and momentum where the
    // method predates it); text-only stages pin the mix weight and the
    // neighborhood so each named method means the same thing every run.
    let plain = budget.with_shuffle_draws(0).with_momentum(0.0);
    let text_vs_original = budget.with_loss_mix(1.0).with_sample_count(0);
    let text_vs_adversarial = budget.with_loss_mix(0.0).with_sample_count(0);

    let (adversarial_image, loss_trace, adversarial_caption) = match name {
        PipelineName::Pgd => {
            let (v, trace) = image_attack(model, image, &input.captions, &plain, ShuffleKind::Local)?;
            (v, trace, target.clone())
        }
        PipelineName::MiFgsm => {
            let b = budget.with_shuffle_draws(0);
            let (v, trace) = image_attack(model, image, &input.captions, &b, ShuffleKind::Local)?;
            (v, trace, target.clone())
        }
        PipelineName::Sep => {
            let (v, trace) = image_attack(model, image, &input.captions, &plain, ShuffleKind::Local)?;
            let t = text_attack(model, vocab, image, image, target, &text_vs_original)?;
            (v, trace, t)
        }
        PipelineName::SgaTit => {
            let adversarial_set: Vec<TokenSequence> = input
                .captions
                .iter()
                .map(|t| text_attack(model, vocab, image, image, t, &text_vs_original))
                .collect::<Result<_>>()?;
            let (v, trace) =
                image_attack(model, image, &adversarial_set, &plain, ShuffleKind::Local)?;
            let t = text_attack(model, vocab, image, &v, target, &text_vs_adversarial)?;
            (v, trace, t)
        }
        PipelineName::SgaIt => {
            let (v, trace) = image_attack(model, image, &input.captions, &plain, ShuffleKind::Local)?;
            let t = text_attack(model, vocab, image, &v, target, &text_vs_adversarial)?;
            (v, trace, t)
        }
        PipelineName::SgaItSampled => {
            let (v, trace) = image_attack(model, image, &input.captions, &plain, ShuffleKind::Local)?;
            let t = text_attack(model, vocab, image, &v, target, budget)?;
            (v, trace, t)
        }
        PipelineName::SgaItShuffled => {
            let b = budget.with_momentum(0.0);
            let (v, trace) = image_attack(model, image, &input.captions, &b, ShuffleKind::Local)?;
            let t = text_attack(model, vocab, image, &v, target, &text_vs_adversarial)?;
            (v, trace, t)
        }
        PipelineName::SgaItShuffledSampled => {
            let b = budget.with_momentum(0.0);
            let (v, trace) = image_attack(model, image, &input.captions, &b, ShuffleKind::Local)?;
            let t = text_attack(model, vocab, image, &v, target, budget)?;
            (v, trace, t)
        }
        PipelineName::Lssa => {
            let (v, trace) = image_attack(model, image, &input.captions, budget, ShuffleKind::Local)?;
            let t = text_attack(model, vocab, image, &v, target, budget)?;
            (v, trace, t)
        }
        PipelineName::LssaGlobalShuffle => {
            let (v, trace) = image_attack(
                model,
                image,
                &input.captions,
                budget,
                ShuffleKind::Global { grid: (2, 2) },
            )?;
            let t = text_attack(model, vocab, image, &v, target, budget)?;
            (v, trace, t)
        }
    };

    let outcome = AttackOutcome {
        adversarial_image,
        adversarial_caption,
        loss_trace,
        shuffle_seed: budget.shuffle.seed,
        sample_seed: budget.sample.seed,
    };
    outcome.validate(image, target, budget)?;
    Ok(outcome)
}

/// Attack every listed pair, deriving each pair's shuffle and sampling
/// seeds from `root → "attack" → pipeline → pair_id`. Pairs are processed
/// in parallel; because every pair's randomness is self-contained, the
/// result is identical to a serial run.
pub fn craft_for_pairs<M: DualEncoder + ?Sized>(
    model: &M,
    vocab: &Vocabulary,
    pairs: &[&CaptionedImage],
    name: PipelineName,
    budget: &AttackBudget,
    root_seed: u64,
) -> Result<Vec<(u32, AttackOutcome)>> {
    pairs
        .par_iter()
        .map(|item| {
            let path = SeedPath::root(root_seed)
                .child("attack")
                .child(name.as_str())
                .child(item.pair_id);
            let mut b = *budget;
            b.shuffle.seed = path.child("shuffle").seed_u64();
            b.sample.seed = path.child("sample").seed_u64();
            let input =
                AttackInput { image: item.image.clone(), captions: item.captions.clone() };
            let outcome = run_pipeline(name, model, vocab, &input, &b)?;
            Ok((item.pair_id, outcome))
        })
        .collect()
}

/// True when two budgets drive the image loop identically, so one crafted
/// image can serve both.
fn same_image_stage(a: &AttackBudget, b: &AttackBudget) -> bool {
    a.image_radius == b.image_radius
        && a.step_size == b.step_size
        && a.iterations == b.iterations
        && a.momentum == b.momentum
        && a.shuffle.draws == b.shuffle.draws
        && a.shuffle.position == b.shuffle.position
}

/// Run the full pipeline once per budget for budgets that differ only in
/// their text-stage parameters (mix weight, neighbor count, neighbor
/// radius), reusing one crafted image per pair. Element `k` of the result
/// is bit-identical to `craft_for_pairs` under `budgets[k]`, because the
/// text stage's randomness depends only on its own derived seed.
pub fn craft_text_sweep<M: DualEncoder + ?Sized>(
    model: &M,
    vocab: &Vocabulary,
    pairs: &[&CaptionedImage],
    budgets: &[AttackBudget],
    root_seed: u64,
) -> Result<Vec<Vec<(u32, AttackOutcome)>>> {
    let first = budgets
        .first()
        .ok_or_else(|| LabError::Config("a text sweep needs at least one budget".into()))?;
    for b in budgets {
        b.validate()?;
        if !same_image_stage(b, first) {
            return Err(LabError::Config(
                "text sweep budgets must agree on every image-stage parameter".into(),
            ));
        }
    }

    let crafted: Vec<(u32, Vec<AttackOutcome>)> = pairs
        .par_iter()
        .map(|item| {
            let path = SeedPath::root(root_seed)
                .child("attack")
                .child(PipelineName::Lssa.as_str())
                .child(item.pair_id);
            let shuffle_seed = path.child("shuffle").seed_u64();
            let sample_seed = path.child("sample").seed_u64();
            let target = item.captions.first().ok_or_else(|| {
                LabError::Config("attack input needs at least one caption".into())
            })?;

            let mut image_budget = *first;
            image_budget.shuffle.seed = shuffle_seed;
            image_budget.sample.seed = sample_seed;
            let (image, trace) = image_attack(
                model,
                &item.image,
                &item.captions,
                &image_budget,
                ShuffleKind::Local,
            )?;

            let outcomes = budgets
                .iter()
                .map(|b| {
                    let mut tb = *b;
                    tb.shuffle.seed = shuffle_seed;
                    tb.sample.seed = sample_seed;
                    let caption = text_attack(model, vocab, &item.image, &image, target, &tb)?;
                    let outcome = AttackOutcome {
                        adversarial_image: image.clone(),
                        adversarial_caption: caption,
                        loss_trace: trace.clone(),
                        shuffle_seed,
                        sample_seed,
                    };
                    outcome.validate(&item.image, target, &tb)?;
                    Ok(outcome)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((item.pair_id, outcomes))
        })
        .collect::<Result<_>>()?;

    let mut per_budget: Vec<Vec<(u32, AttackOutcome)>> = budgets
        .iter()
        .map(|_| Vec::with_capacity(pairs.len()))
        .collect();
    for (pair_id, outcomes) in crafted {
        for (slot, outcome) in per_budget.iter_mut().zip(outcomes) {
            slot.push((pair_id, outcome));
        }
    }
    Ok(per_budget)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Arch, EncoderPair, ModelConfig};
    use ndarray::Array3;

    fn fixture() -> (EncoderPair, Vocabulary, AttackInput) {
        let vocab = Vocabulary::builtin();
        let config = ModelConfig {
            arch: Arch::Conv,
            embed_dim: 8,
            image_size: (8, 8),
            vocab_size: vocab.len(),
            max_text_len: 12,
            seed: 21,
        };
        let pair = EncoderPair::init(config, vocab.fingerprint()).unwrap();
        let image = ImageGrid::new(Array3::from_shape_fn((3, 8, 8), |(c, r, col)| {
            ((c * 11 + r * 5 + col) % 37) as f64 / 41.0
        }));
        let captions = vec![
            vocab.tokenize("a red circle above a blue square").unwrap(),
            vocab.tokenize("there is a green triangle here").unwrap(),
            vocab.tokenize("the circle is red in color").unwrap(),
        ];
        (pair, vocab, AttackInput { image, captions })
    }

    fn small_budget(seed: u64) -> AttackBudget {
        let mut b = AttackBudget::standard(seed);
        b.iterations = 3;
        b.shuffle.draws = 2;
        b.sample.count = 2;
        b
    }

    #[test]
    fn every_pipeline_respects_the_budget() {
        let (pair, vocab, input) = fixture();
        let budget = small_budget(5);
        for name in PipelineName::ALL {
            let out = run_pipeline(name, &pair, &vocab, &input, &budget).unwrap();
            assert!(
                out.adversarial_image.linf_distance(&input.image) <= budget.image_radius + 1e-9,
                "{name} broke the image budget"
            );
            out.adversarial_image.validate_unit_range().unwrap();
            assert!(out.adversarial_caption.word_distance(&input.captions[0]) <= 1);
            assert_eq!(out.loss_trace.len(), budget.iterations + 1);
        }
    }

    #[test]
    fn image_only_pipelines_leave_the_caption_alone() {
        let (pair, vocab, input) = fixture();
        let budget = small_budget(6);
        for name in [PipelineName::Pgd, PipelineName::MiFgsm] {
            let out = run_pipeline(name, &pair, &vocab, &input, &budget).unwrap();
            assert_eq!(out.adversarial_caption.ids(), input.captions[0].ids());
        }
    }

    #[test]
    fn full_attack_collapses_to_the_separate_baseline() {
        let (pair, vocab, input) = fixture();
        let mut budget = small_budget(7);
        budget.shuffle.draws = 0;
        budget.momentum = 0.0;
        budget.sample.count = 0;
        budget.loss_mix = 1.0;
        let collapsed = run_pipeline(PipelineName::Lssa, &pair, &vocab, &input, &budget).unwrap();
        let sep = run_pipeline(PipelineName::Sep, &pair, &vocab, &input, &budget).unwrap();
        assert!(collapsed.adversarial_image.bit_equal(&sep.adversarial_image));
        assert_eq!(collapsed.adversarial_caption.ids(), sep.adversarial_caption.ids());
        assert_eq!(collapsed.loss_trace, sep.loss_trace);
    }

    #[test]
    fn full_attack_without_shuffling_matches_momentum_baseline_image() {
        let (pair, vocab, input) = fixture();
        let budget = small_budget(8).with_shuffle_draws(0);
        let collapsed = run_pipeline(PipelineName::Lssa, &pair, &vocab, &input, &budget).unwrap();
        let momentum = run_pipeline(PipelineName::MiFgsm, &pair, &vocab, &input, &budget).unwrap();
        assert!(collapsed.adversarial_image.bit_equal(&momentum.adversarial_image));
    }

    #[test]
    fn sampled_sequential_with_zero_draws_is_the_plain_sequential() {
        let (pair, vocab, input) = fixture();
        let budget = small_budget(9).with_sample_count(0).with_loss_mix(0.0);
        let sampled =
            run_pipeline(PipelineName::SgaItSampled, &pair, &vocab, &input, &budget).unwrap();
        let plain = run_pipeline(PipelineName::SgaIt, &pair, &vocab, &input, &budget).unwrap();
        assert!(sampled.adversarial_image.bit_equal(&plain.adversarial_image));
        assert_eq!(sampled.adversarial_caption.ids(), plain.adversarial_caption.ids());
    }

    #[test]
    fn shuffled_sequential_without_draws_is_the_plain_sequential() {
        let (pair, vocab, input) = fixture();
        let budget = small_budget(11).with_shuffle_draws(0);
        let shuffled =
            run_pipeline(PipelineName::SgaItShuffled, &pair, &vocab, &input, &budget).unwrap();
        let plain = run_pipeline(PipelineName::SgaIt, &pair, &vocab, &input, &budget).unwrap();
        assert!(shuffled.adversarial_image.bit_equal(&plain.adversarial_image));
        assert_eq!(shuffled.adversarial_caption.ids(), plain.adversarial_caption.ids());
    }

    #[test]
    fn full_attack_without_momentum_is_the_shuffled_sampled_rung() {
        let (pair, vocab, input) = fixture();
        let budget = small_budget(12).with_momentum(0.0);
        let full = run_pipeline(PipelineName::Lssa, &pair, &vocab, &input, &budget).unwrap();
        let rung =
            run_pipeline(PipelineName::SgaItShuffledSampled, &pair, &vocab, &input, &budget)
                .unwrap();
        assert!(full.adversarial_image.bit_equal(&rung.adversarial_image));
        assert_eq!(full.adversarial_caption.ids(), rung.adversarial_caption.ids());
        assert_eq!(full.loss_trace, rung.loss_trace);
    }

    fn sweep_pairs(input: &AttackInput) -> Vec<CaptionedImage> {
        (0..2u32)
            .map(|k| {
                let mut image = input.image.clone();
                image.set(0, 0, 0, 0.1 + 0.3 * f64::from(k));
                CaptionedImage { pair_id: 40 + k, image, captions: input.captions.clone() }
            })
            .collect()
    }

    #[test]
    fn text_sweep_matches_independent_runs_per_budget() {
        let (pair, vocab, input) = fixture();
        let base = small_budget(13);
        let budgets =
            [base, base.with_loss_mix(1.0).with_sample_count(0), base.with_loss_mix(0.0)];
        let items = sweep_pairs(&input);
        let refs: Vec<&CaptionedImage> = items.iter().collect();

        let swept = craft_text_sweep(&pair, &vocab, &refs, &budgets, 3).unwrap();
        assert_eq!(swept.len(), budgets.len());
        for (budget, outcomes) in budgets.iter().zip(&swept) {
            let solo =
                craft_for_pairs(&pair, &vocab, &refs, PipelineName::Lssa, budget, 3).unwrap();
            assert_eq!(outcomes.len(), solo.len());
            for ((id_a, a), (id_b, b)) in outcomes.iter().zip(&solo) {
                assert_eq!(id_a, id_b);
                assert!(a.adversarial_image.bit_equal(&b.adversarial_image));
                assert_eq!(a.adversarial_caption.ids(), b.adversarial_caption.ids());
                assert_eq!(a.loss_trace, b.loss_trace);
            }
        }
    }

    #[test]
    fn text_sweep_rejects_diverging_image_stages() {
        let (pair, vocab, input) = fixture();
        let base = small_budget(14);
        let items = sweep_pairs(&input);
        let refs: Vec<&CaptionedImage> = items.iter().collect();
        let err = craft_text_sweep(&pair, &vocab, &refs, &[base, base.with_momentum(0.5)], 1)
            .unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert_eq!(craft_text_sweep(&pair, &vocab, &refs, &[], 1).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn pipeline_names_round_trip() {
        for name in PipelineName::ALL {
            assert_eq!(PipelineName::parse(name.as_str()).unwrap(), name);
        }
        assert!(PipelineName::parse("sga").is_err());
        let json = serde_json::to_string(&PipelineName::SgaItSampled).unwrap();
        assert_eq!(json, "\"sga_it_sampled\"");
    }

    #[test]
    fn empty_caption_set_is_a_config_error() {
        let (pair, vocab, input) = fixture();
        let empty = AttackInput { image: input.image.clone(), captions: vec![] };
        let err = run_pipeline(PipelineName::Pgd, &pair, &vocab, &empty, &small_budget(1))
            .unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn outcomes_are_deterministic_per_seed() {
        let (pair, vocab, input) = fixture();
        let a = run_pipeline(PipelineName::Lssa, &pair, &vocab, &input, &small_budget(3)).unwrap();
        let b = run_pipeline(PipelineName::Lssa, &pair, &vocab, &input, &small_budget(3)).unwrap();
        assert!(a.adversarial_image.bit_equal(&b.adversarial_image));
        assert_eq!(a.adversarial_caption.ids(), b.adversarial_caption.ids());
        assert_eq!(a.loss_trace, b.loss_trace);
    }
}

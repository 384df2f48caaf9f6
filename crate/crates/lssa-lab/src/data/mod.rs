//! Synthetic image–caption dataset: generation, persistence, loading.
//!
//! Each pair is a rendered shape scene with five distinct grammar captions.
//! Captions are unique across the whole dataset (not just within a pair),
//! which keeps retrieval well-posed: no two gallery entries are
//! indistinguishable by content. Scenes are unique too. Generation is a
//! pure function of the spec.

pub mod grammar;
pub mod render;
pub mod scene;
pub mod store;
pub mod vocab;

use std::collections::HashSet;

use rand::seq::SliceRandom;

use crate::error::{LabError, Result};
use crate::grid::ImageGrid;
use crate::rng::SeedPath;

pub use store::{load_dataset, save_dataset, Manifest};
pub use vocab::{TokenSequence, Vocabulary, WordClass};

/// Parameters of dataset generation.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DataSpec {
    pub num_images: usize,
    /// (height, width); both must be ≥ 12 px to fit the 3×3 cell layout,
    /// and divisible by 4 if the shuffle transforms will run on them.
    pub image_size: (usize, usize),
    pub seed: u64,
}

/// One image with its five captions.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptionedImage {
    pub pair_id: u32,
    pub image: ImageGrid,
    /// Exactly five, all tokens in the vocabulary.
    pub captions: Vec<TokenSequence>,
}

/// The full corpus plus its train/test split.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub seed: u64,
    pub image_size: (usize, usize),
    pub vocab: Vocabulary,
    pairs: Vec<CaptionedImage>,
    train_ids: Vec<u32>,
    test_ids: Vec<u32>,
}

impl Dataset {
    /// Build from parts, enforcing the structural invariants: five captions
    /// per pair, dense pair ids, disjoint covering splits.
    pub fn assemble(
        seed: u64,
        image_size: (usize, usize),
        vocab: Vocabulary,
        pairs: Vec<CaptionedImage>,
        train_ids: Vec<u32>,
        test_ids: Vec<u32>,
    ) -> Result<Self> {
        for (i, p) in pairs.iter().enumerate() {
            if p.pair_id != i as u32 {
                return Err(LabError::Format(format!(
                    "pair ids must be dense: slot {i} holds id {}",
                    p.pair_id
                )));
            }
            if p.captions.len() != 5 {
                return Err(LabError::Format(format!(
                    "pair {} has {} captions, want 5",
                    p.pair_id,
                    p.captions.len()
                )));
            }
        }
        let train: HashSet<u32> = train_ids.iter().copied().collect();
        let test: HashSet<u32> = test_ids.iter().copied().collect();
        if train.len() != train_ids.len() || test.len() != test_ids.len() {
            return Err(LabError::Format("split lists contain duplicates".into()));
        }
        if !train.is_disjoint(&test) || train.len() + test.len() != pairs.len() {
            return Err(LabError::Format(
                "train/test must be disjoint and cover all pair ids".into(),
            ));
        }
        if let Some(&bad) = train.union(&test).find(|&&id| id as usize >= pairs.len()) {
            return Err(LabError::Format(format!("split references unknown pair {bad}")));
        }
        Ok(Self { seed, image_size, vocab, pairs, train_ids, test_ids })
    }

    pub fn pairs(&self) -> &[CaptionedImage] {
        &self.pairs
    }

    pub fn pair(&self, pair_id: u32) -> Result<&CaptionedImage> {
        self.pairs.get(pair_id as usize).ok_or_else(|| {
            LabError::Format(format!("pair id {pair_id} out of range"))
        })
    }

    pub fn train_ids(&self) -> &[u32] {
        &self.train_ids
    }

    pub fn test_ids(&self) -> &[u32] {
        &self.test_ids
    }

    pub fn subset(&self, ids: &[u32]) -> Result<Vec<&CaptionedImage>> {
        ids.iter().map(|&id| self.pair(id)).collect()
    }
}

/// Generate a dataset: unique scenes, globally unique captions, and a
/// deterministic first-third/rest test/train split.
pub fn generate_dataset(spec: &DataSpec) -> Result<Dataset> {
    if spec.num_images == 0 {
        return Err(LabError::Config("num_images must be ≥ 1".into()));
    }
    let (h, w) = spec.image_size;
    if h < 12 || w < 12 {
        return Err(LabError::Config(format!(
            "{h}×{w} is too small to render 3×3 cells (need ≥ 12 px per side)"
        )));
    }

    let vocab = Vocabulary::builtin();
    let mut rng = SeedPath::root(spec.seed).child("data").rng();
    let mut used_captions: HashSet<String> = HashSet::new();
    let mut used_scenes: HashSet<String> = HashSet::new();
    let mut pairs = Vec::with_capacity(spec.num_images);

    for pair_id in 0..spec.num_images as u32 {
        let mut found = false;
        for _attempt in 0..1000 {
            let scene = scene::sample_scene(&mut rng, spec.image_size)?;
            if used_scenes.contains(&scene.signature()) {
                continue;
            }
            // Prefer two-object captions for every slot so retrieval
            // queries and galleries identify their pair; generic
            // single-object and count captions only fill what's left.
            let (mut specific, mut generic) = grammar::caption_candidate_groups(&scene);
            specific.shuffle(&mut rng);
            generic.shuffle(&mut rng);
            let fresh: Vec<String> = specific
                .into_iter()
                .chain(generic)
                .filter(|c| !used_captions.contains(c))
                .take(5)
                .collect();
            if fresh.len() < 5 {
                continue;
            }
            used_scenes.insert(scene.signature());
            for c in &fresh {
                used_captions.insert(c.clone());
            }
            let captions = fresh
                .iter()
                .map(|c| vocab.tokenize(c))
                .collect::<Result<Vec<_>>>()?;
            pairs.push(CaptionedImage {
                pair_id,
                image: render::render_scene(&scene),
                captions,
            });
            found = true;
            break;
        }
        if !found {
            return Err(LabError::Config(format!(
                "caption space exhausted after {pair_id} images; reduce num_images"
            )));
        }
    }

    let test_count = spec.num_images / 3;
    let test_ids: Vec<u32> = (0..test_count as u32).collect();
    let train_ids: Vec<u32> = (test_count as u32..spec.num_images as u32).collect();
    Dataset::assemble(spec.seed, spec.image_size, vocab, pairs, train_ids, test_ids)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> DataSpec {
        DataSpec { num_images: 12, image_size: (32, 32), seed: 7 }
    }

    #[test]
    fn rejects_degenerate_specs() {
        assert!(generate_dataset(&DataSpec { num_images: 0, image_size: (32, 32), seed: 1 }).is_err());
        assert!(generate_dataset(&DataSpec { num_images: 4, image_size: (8, 32), seed: 1 }).is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_dataset(&small_spec()).unwrap();
        let b = generate_dataset(&small_spec()).unwrap();
        assert_eq!(a, b);
        let c = generate_dataset(&DataSpec { seed: 8, ..small_spec() }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn captions_are_grammar_members_and_globally_unique() {
        let d = generate_dataset(&DataSpec { num_images: 40, image_size: (32, 32), seed: 3 }).unwrap();
        let mut seen = HashSet::new();
        for pair in d.pairs() {
            assert_eq!(pair.captions.len(), 5);
            for cap in &pair.captions {
                assert!(grammar::parses(&d.vocab, cap.ids()), "bad caption {}", cap.text());
                assert!(seen.insert(cap.text().to_string()), "duplicate {}", cap.text());
            }
        }
        assert_eq!(seen.len(), 200);
    }

    #[test]
    fn split_is_disjoint_and_covers() {
        let d = generate_dataset(&DataSpec { num_images: 30, image_size: (32, 32), seed: 5 }).unwrap();
        assert_eq!(d.test_ids().len(), 10);
        assert_eq!(d.train_ids().len(), 20);
        let all: HashSet<u32> = d.train_ids().iter().chain(d.test_ids()).copied().collect();
        assert_eq!(all.len(), 30);
    }

    #[test]
    fn save_load_round_trip_is_exact() {
        let d = generate_dataset(&small_spec()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = save_dataset(&d, dir.path()).unwrap();
        assert_eq!(manifest.count, 12);
        let loaded = load_dataset(dir.path()).unwrap();
        assert_eq!(d, loaded);
    }

    #[test]
    fn corruption_and_version_skew_are_detected() {
        let d = generate_dataset(&small_spec()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&d, dir.path()).unwrap();

        // Flip one byte of an image: checksum error naming the file.
        let img_path = store::image_path(dir.path(), 3);
        let mut bytes = std::fs::read(&img_path).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0xff;
        std::fs::write(&img_path, &bytes).unwrap();
        match load_dataset(dir.path()) {
            Err(LabError::ChecksumMismatch { path }) => {
                assert!(path.ends_with("images/000003.png"), "wrong file: {path:?}")
            }
            other => panic!("expected checksum error, got {other:?}"),
        }

        // Rewrite cleanly, then bump the manifest version: version error.
        save_dataset(&d, dir.path()).unwrap();
        let mpath = dir.path().join("manifest.json");
        let text = std::fs::read_to_string(&mpath)
            .unwrap()
            .replace("\"schema_version\": 1", "\"schema_version\": 2");
        std::fs::write(&mpath, text).unwrap();
        match load_dataset(dir.path()) {
            Err(LabError::VersionMismatch { found, supported }) => {
                assert_eq!((found, supported), (2, 1));
            }
            other => panic!("expected version error, got {other:?}"),
        }

        // Missing manifest: artifact error.
        std::fs::remove_file(&mpath).unwrap();
        assert!(matches!(
            load_dataset(dir.path()),
            Err(LabError::MissingArtifact { .. })
        ));
    }
}

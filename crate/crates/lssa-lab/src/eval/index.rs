//! Retrieval indices and the rank-based metrics computed over them.
//!
//! An index pins a model's view of one dataset split: clean gallery
//! embeddings on both sides plus one query embedding per pair and
//! direction. Attacks only ever replace the query rows, so clean and
//! adversarial indices are directly comparable.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayView1};
use rayon::prelude::*;

use crate::attacks::AttackOutcome;
use crate::data::Dataset;
use crate::error::{LabError, Result};
use crate::models::{DualEncoder, EncoderPair};

/// Which way retrieval runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Image query against the caption gallery.
    TextRetrieval,
    /// Caption query against the image gallery.
    ImageRetrieval,
}

impl Direction {
    pub fn as_str(&self) -> &'static str {
        match self {
            Direction::TextRetrieval => "tr",
            Direction::ImageRetrieval => "ir",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "tr" => Ok(Direction::TextRetrieval),
            "ir" => Ok(Direction::ImageRetrieval),
            other => Err(LabError::Config(format!(
                "unknown retrieval direction '{other}', expected 'tr' or 'ir'"
            ))),
        }
    }
}

/// Attack success rate; undefined when no query was correct to begin with.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(from = "Option<f64>", into = "Option<f64>")]
pub enum Asr {
    Rate(f64),
    Undefined,
}

impl Asr {
    pub fn value(&self) -> Option<f64> {
        match self {
            Asr::Rate(r) => Some(*r),
            Asr::Undefined => None,
        }
    }
}

impl From<Option<f64>> for Asr {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Asr::Undefined, Asr::Rate)
    }
}

impl From<Asr> for Option<f64> {
    fn from(a: Asr) -> Self {
        a.value()
    }
}

impl std::fmt::Display for Asr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Asr::Rate(r) => write!(f, "{r:.2}"),
            Asr::Undefined => f.write_str("undefined"),
        }
    }
}

/// One model's embeddings over one split: clean galleries on both sides,
/// plus per-pair query embeddings (clean, or adversarial after
/// [`adversarial_index`]). All rows are L2-normalized by the encoders, so
/// dot products are cosine similarities.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalIndex {
    pair_ids: Vec<u32>,
    id_to_row: BTreeMap<u32, usize>,
    /// One row per pair: the image used as the retrieval query.
    image_queries: Array2<f64>,
    /// One row per pair: the first caption, used as the retrieval query.
    caption_queries: Array2<f64>,
    /// One row per pair: the clean image gallery.
    image_gallery: Array2<f64>,
    /// One row per caption across the split: the clean caption gallery.
    caption_gallery: Array2<f64>,
    /// Owning pair id of each caption gallery row.
    caption_owner: Vec<u32>,
    vocab_fingerprint: String,
}

impl RetrievalIndex {
    pub fn pair_ids(&self) -> &[u32] {
        &self.pair_ids
    }

    /// Gallery size a query in this direction ranks against.
    pub fn gallery_len(&self, direction: Direction) -> usize {
        match direction {
            Direction::TextRetrieval => self.caption_gallery.nrows(),
            Direction::ImageRetrieval => self.image_gallery.nrows(),
        }
    }

    fn row(&self, pair_id: u32) -> Result<usize> {
        self.id_to_row.get(&pair_id).copied().ok_or_else(|| {
            LabError::Config(format!("pair {pair_id} is not part of this index"))
        })
    }
}

/// Embed the clean split under one model. Queries start out identical to
/// the gallery entries (first caption as the text query).
pub fn build_index(pair: &EncoderPair, dataset: &Dataset, ids: &[u32]) -> Result<RetrievalIndex> {
    if ids.is_empty() {
        return Err(LabError::Config("cannot index an empty split".into()));
    }
    if pair.vocab_fingerprint() != dataset.vocab.fingerprint() {
        return Err(LabError::VocabMismatch {
            checkpoint: pair.vocab_fingerprint().to_string(),
            dataset: dataset.vocab.fingerprint(),
        });
    }
    let items = dataset.subset(ids)?;
    let dim = pair.config().embed_dim;

    let embedded: Vec<(Array1<f64>, Vec<Array1<f64>>)> = items
        .par_iter()
        .map(|item| {
            let image = pair.encode_image(&item.image)?;
            let captions = item
                .captions
                .iter()
                .map(|t| pair.encode_text(t))
                .collect::<Result<Vec<_>>>()?;
            Ok((image, captions))
        })
        .collect::<Result<Vec<_>>>()?;

    let n = ids.len();
    let captions_total: usize = embedded.iter().map(|(_, c)| c.len()).sum();
    let mut image_queries = Array2::zeros((n, dim));
    let mut caption_queries = Array2::zeros((n, dim));
    let mut image_gallery = Array2::zeros((n, dim));
    let mut caption_gallery = Array2::zeros((captions_total, dim));
    let mut caption_owner = Vec::with_capacity(captions_total);
    let mut id_to_row = BTreeMap::new();

    let mut caption_row = 0;
    for (row, (&id, (image, captions))) in ids.iter().zip(&embedded).enumerate() {
        id_to_row.insert(id, row);
        image_queries.row_mut(row).assign(image);
        image_gallery.row_mut(row).assign(image);
        caption_queries.row_mut(row).assign(&captions[0]);
        for c in captions {
            caption_gallery.row_mut(caption_row).assign(c);
            caption_owner.push(id);
            caption_row += 1;
        }
    }
    if id_to_row.len() != n {
        return Err(LabError::Config("split ids contain duplicates".into()));
    }

    Ok(RetrievalIndex {
        pair_ids: ids.to_vec(),
        id_to_row,
        image_queries,
        caption_queries,
        image_gallery,
        caption_gallery,
        caption_owner,
        vocab_fingerprint: dataset.vocab.fingerprint(),
    })
}

/// Same galleries as `base`, with the query rows of the listed pairs
/// replaced by the target model's embeddings of the attack outputs.
pub fn adversarial_index(
    pair: &EncoderPair,
    base: &RetrievalIndex,
    outcomes: &[(u32, AttackOutcome)],
) -> Result<RetrievalIndex> {
    if pair.vocab_fingerprint() != base.vocab_fingerprint {
        return Err(LabError::VocabMismatch {
            checkpoint: pair.vocab_fingerprint().to_string(),
            dataset: base.vocab_fingerprint.clone(),
        });
    }
    let embedded: Vec<(u32, Array1<f64>, Array1<f64>)> = outcomes
        .par_iter()
        .map(|(id, outcome)| {
            let image = pair.encode_image(&outcome.adversarial_image)?;
            let text = pair.encode_text(&outcome.adversarial_caption)?;
            Ok((*id, image, text))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut index = base.clone();
    for (id, image, text) in embedded {
        let row = index.row(id)?;
        index.image_queries.row_mut(row).assign(&image);
        index.caption_queries.row_mut(row).assign(&text);
    }
    Ok(index)
}

/// 1-based rank of the best own gallery item for one query. Ties resolve
/// toward the lower gallery row, so ranks are deterministic.
pub fn pair_rank(index: &RetrievalIndex, pair_id: u32, direction: Direction) -> Result<usize> {
    let row = index.row(pair_id)?;
    let (query, gallery, owned): (ArrayView1<f64>, &Array2<f64>, Vec<usize>) = match direction {
        Direction::TextRetrieval => (
            index.image_queries.row(row),
            &index.caption_gallery,
            index
                .caption_owner
                .iter()
                .enumerate()
                .filter(|(_, &o)| o == pair_id)
                .map(|(i, _)| i)
                .collect(),
        ),
        Direction::ImageRetrieval => (index.caption_queries.row(row), &index.image_gallery, vec![row]),
    };
    debug_assert!(!owned.is_empty());

    let sims: Vec<f64> = gallery.rows().into_iter().map(|g| query.dot(&g)).collect();
    // Best own row: highest similarity, then lowest row index.
    let &best = owned
        .iter()
        .min_by(|&&a, &&b| {
            sims[b].partial_cmp(&sims[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
        })
        .expect("every pair owns at least one gallery item");
    let ahead = sims
        .iter()
        .enumerate()
        .filter(|&(j, &s)| s > sims[best] || (s == sims[best] && j < best))
        .count();
    Ok(ahead + 1)
}

/// Fraction (as a percentage) of queries whose own item ranks in the top k.
pub fn recall_at_k(
    index: &RetrievalIndex,
    query_ids: &[u32],
    k: usize,
    direction: Direction,
) -> Result<f64> {
    if k == 0 {
        return Err(LabError::Config("recall needs k ≥ 1".into()));
    }
    let gallery = index.gallery_len(direction);
    if k > gallery {
        return Err(LabError::Config(format!(
            "k = {k} exceeds the {gallery}-item gallery"
        )));
    }
    if query_ids.is_empty() {
        return Err(LabError::Config("recall over an empty query set".into()));
    }
    let mut hits = 0usize;
    for &id in query_ids {
        if pair_rank(index, id, direction)? <= k {
            hits += 1;
        }
    }
    Ok(100.0 * hits as f64 / query_ids.len() as f64)
}

/// Share of originally-correct queries (at rank k) that the attack made
/// incorrect. Queries already wrong before the attack are excluded; if
/// every query was wrong, the rate is undefined rather than zero.
pub fn attack_success_rate(
    clean: &RetrievalIndex,
    adversarial: &RetrievalIndex,
    query_ids: &[u32],
    k: usize,
    direction: Direction,
) -> Result<Asr> {
    if clean.pair_ids != adversarial.pair_ids {
        return Err(LabError::Config(
            "clean and adversarial indices cover different pairs".into(),
        ));
    }
    let mut eligible = 0usize;
    let mut flipped = 0usize;
    for &id in query_ids {
        if pair_rank(clean, id, direction)? <= k {
            eligible += 1;
            if pair_rank(adversarial, id, direction)? > k {
                flipped += 1;
            }
        }
    }
    if eligible == 0 {
        return Ok(Asr::Undefined);
    }
    Ok(Asr::Rate(100.0 * flipped as f64 / eligible as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_dataset, DataSpec};
    use crate::grid::ImageGrid;
    use crate::models::{train_contrastive, Arch, ModelConfig, TrainConfig};

    fn small_dataset(seed: u64, n: usize) -> Dataset {
        generate_dataset(&DataSpec { num_images: n, image_size: (16, 16), seed }).unwrap()
    }

    fn untrained(dataset: &Dataset, seed: u64) -> EncoderPair {
        let config = ModelConfig {
            arch: Arch::Conv,
            embed_dim: 16,
            image_size: dataset.image_size,
            vocab_size: dataset.vocab.len(),
            max_text_len: 12,
            seed,
        };
        EncoderPair::init(config, dataset.vocab.fingerprint()).unwrap()
    }

    /// Hand-built index: one caption per pair, explicit embedding rows.
    fn literal_index(
        queries_img: Array2<f64>,
        queries_cap: Array2<f64>,
        gallery_img: Array2<f64>,
        gallery_cap: Array2<f64>,
    ) -> RetrievalIndex {
        let n = gallery_img.nrows();
        let ids: Vec<u32> = (0..n as u32).collect();
        RetrievalIndex {
            pair_ids: ids.clone(),
            id_to_row: ids.iter().map(|&i| (i, i as usize)).collect(),
            image_queries: queries_img,
            caption_queries: queries_cap,
            image_gallery: gallery_img,
            caption_gallery: gallery_cap,
            caption_owner: ids,
            vocab_fingerprint: "literal".into(),
        }
    }

    fn basis(n: usize, hot: &[usize]) -> Array2<f64> {
        let mut a = Array2::zeros((hot.len(), n));
        for (row, &h) in hot.iter().enumerate() {
            a[(row, h)] = 1.0;
        }
        a
    }

    #[test]
    fn empty_split_is_rejected() {
        let dataset = small_dataset(0, 9);
        let pair = untrained(&dataset, 1);
        let err = build_index(&pair, &dataset, &[]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn vocabulary_mismatch_is_rejected() {
        let dataset = small_dataset(0, 9);
        let mut config = untrained(&dataset, 1).config().clone();
        config.seed = 2;
        let imposter = EncoderPair::init(config, "deadbeef".into()).unwrap();
        let err = build_index(&imposter, &dataset, dataset.test_ids()).unwrap_err();
        assert!(matches!(err, LabError::VocabMismatch { .. }));
    }

    #[test]
    fn index_is_deterministic() {
        let dataset = small_dataset(3, 9);
        let pair = untrained(&dataset, 4);
        let a = build_index(&pair, &dataset, dataset.test_ids()).unwrap();
        let b = build_index(&pair, &dataset, dataset.test_ids()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gallery_rows_are_unit_norm() {
        let dataset = small_dataset(3, 9);
        let pair = untrained(&dataset, 4);
        let index = build_index(&pair, &dataset, dataset.test_ids()).unwrap();
        for row in index.caption_gallery.rows() {
            assert!((row.dot(&row) - 1.0).abs() < 1e-9);
        }
        for row in index.image_gallery.rows() {
            assert!((row.dot(&row) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn recall_matches_a_full_sort_reimplementation() {
        let dataset = small_dataset(5, 12);
        let pair = untrained(&dataset, 6);
        let ids = dataset.test_ids().to_vec();
        let index = build_index(&pair, &dataset, &ids).unwrap();

        for direction in [Direction::TextRetrieval, Direction::ImageRetrieval] {
            let gallery_len = index.gallery_len(direction);
            for k in 1..=gallery_len {
                let got = recall_at_k(&index, &ids, k, direction).unwrap();
                // Oracle: argsort all similarities, look for an owned item.
                let mut hits = 0;
                for &id in &ids {
                    let row = index.row(id).unwrap();
                    let (q, g): (ArrayView1<f64>, &Array2<f64>) = match direction {
                        Direction::TextRetrieval => {
                            (index.image_queries.row(row), &index.caption_gallery)
                        }
                        Direction::ImageRetrieval => {
                            (index.caption_queries.row(row), &index.image_gallery)
                        }
                    };
                    let mut order: Vec<usize> = (0..g.nrows()).collect();
                    let sims: Vec<f64> = g.rows().into_iter().map(|r| q.dot(&r)).collect();
                    order.sort_by(|&a, &b| {
                        sims[b].partial_cmp(&sims[a]).unwrap().then(a.cmp(&b))
                    });
                    let owned = |j: usize| match direction {
                        Direction::TextRetrieval => index.caption_owner[j] == id,
                        Direction::ImageRetrieval => j == row,
                    };
                    if order[..k].iter().any(|&j| owned(j)) {
                        hits += 1;
                    }
                }
                let oracle = 100.0 * hits as f64 / ids.len() as f64;
                assert_eq!(got, oracle, "k={k} {direction:?}");
            }
        }
    }

    #[test]
    fn recall_is_monotone_in_k_and_saturates() {
        let dataset = small_dataset(5, 12);
        let pair = untrained(&dataset, 6);
        let ids = dataset.test_ids().to_vec();
        let index = build_index(&pair, &dataset, &ids).unwrap();
        for direction in [Direction::TextRetrieval, Direction::ImageRetrieval] {
            let gallery_len = index.gallery_len(direction);
            let mut last = 0.0;
            for k in 1..=gallery_len {
                let r = recall_at_k(&index, &ids, k, direction).unwrap();
                assert!(r >= last, "recall dropped at k={k}");
                last = r;
            }
            assert_eq!(last, 100.0);
            assert!(recall_at_k(&index, &ids, gallery_len + 1, direction).is_err());
            assert!(recall_at_k(&index, &ids, 0, direction).is_err());
        }
    }

    #[test]
    fn second_ranked_pair_counts_only_from_k2() {
        let queries = basis(2, &[0, 1]);
        // Own caption is each query's second-best match.
        let gallery_cap = basis(2, &[1, 0]);
        let index = literal_index(queries.clone(), queries.clone(), queries.clone(), gallery_cap);
        let ids = [0, 1];
        assert_eq!(recall_at_k(&index, &ids, 1, Direction::TextRetrieval).unwrap(), 0.0);
        assert_eq!(recall_at_k(&index, &ids, 2, Direction::TextRetrieval).unwrap(), 100.0);
        assert_eq!(pair_rank(&index, 0, Direction::TextRetrieval).unwrap(), 2);
    }

    #[test]
    fn trained_model_outranks_a_random_one() {
        let dataset = small_dataset(11, 24);
        let config = TrainConfig {
            seed: 11,
            epochs: 25,
            batch_size: 8,
            embed_dim: 16,
            ..TrainConfig::default()
        };
        let (trained, _) = train_contrastive(&dataset, &config).unwrap();
        let random = untrained(&dataset, 99);
        let ids = dataset.test_ids().to_vec();
        let mean_rank = |pair: &EncoderPair| {
            let index = build_index(pair, &dataset, &ids).unwrap();
            let total: usize = ids
                .iter()
                .map(|&id| pair_rank(&index, id, Direction::TextRetrieval).unwrap())
                .sum();
            total as f64 / ids.len() as f64
        };
        assert!(
            mean_rank(&trained) < mean_rank(&random),
            "training should pull the paired caption up the ranking"
        );
    }

    #[test]
    fn asr_restricts_to_originally_correct_queries() {
        let n = 10;
        let eye: Vec<usize> = (0..n).collect();
        let gallery = basis(n, &eye);
        // Clean: pairs 0..8 retrieve correctly, 8 and 9 point elsewhere.
        let clean_hot: Vec<usize> = (0..n).map(|i| if i < 8 { i } else { (i + 1) % n }).collect();
        // Adversarial: six of the correct eight flip; 6 and 7 stay correct;
        // the two originally-wrong queries change targets (still wrong).
        let adv_hot: Vec<usize> =
            (0..n).map(|i| if i < 6 || i >= 8 { (i + 2) % n } else { i }).collect();
        let adv_hot_alt: Vec<usize> =
            (0..n).map(|i| if i < 6 { (i + 2) % n } else if i < 8 { i } else { (i + 3) % n }).collect();

        let clean = literal_index(
            gallery.clone(),
            basis(n, &clean_hot),
            gallery.clone(),
            gallery.clone(),
        );
        let adv = literal_index(gallery.clone(), basis(n, &adv_hot), gallery.clone(), gallery.clone());
        let adv_alt =
            literal_index(gallery.clone(), basis(n, &adv_hot_alt), gallery.clone(), gallery.clone());

        let ids: Vec<u32> = (0..n as u32).collect();
        let asr = attack_success_rate(&clean, &adv, &ids, 1, Direction::ImageRetrieval).unwrap();
        assert_eq!(asr, Asr::Rate(75.0));
        // Changing only originally-wrong queries leaves the rate alone.
        let asr_alt =
            attack_success_rate(&clean, &adv_alt, &ids, 1, Direction::ImageRetrieval).unwrap();
        assert_eq!(asr, asr_alt);
    }

    #[test]
    fn asr_identical_indices_and_empty_eligible_set() {
        let n = 4;
        let eye: Vec<usize> = (0..n).collect();
        let gallery = basis(n, &eye);
        let correct = literal_index(gallery.clone(), gallery.clone(), gallery.clone(), gallery.clone());
        let ids: Vec<u32> = (0..n as u32).collect();
        assert_eq!(
            attack_success_rate(&correct, &correct, &ids, 1, Direction::ImageRetrieval).unwrap(),
            Asr::Rate(0.0)
        );

        // Nobody correct to begin with: the rate is undefined, not zero.
        let wrong_hot: Vec<usize> = (0..n).map(|i| (i + 1) % n).collect();
        let wrong = literal_index(
            gallery.clone(),
            basis(n, &wrong_hot),
            gallery.clone(),
            gallery.clone(),
        );
        let asr =
            attack_success_rate(&wrong, &correct, &ids, 1, Direction::ImageRetrieval).unwrap();
        assert_eq!(asr, Asr::Undefined);
        assert_eq!(asr.to_string(), "undefined");
        assert_eq!(serde_json::to_string(&asr).unwrap(), "null");
    }

    #[test]
    fn asr_matches_a_per_query_diff() {
        let dataset = small_dataset(13, 12);
        let pair = untrained(&dataset, 5);
        let ids = dataset.test_ids().to_vec();
        let clean = build_index(&pair, &dataset, &ids).unwrap();

        // Synthetic outcomes: push every image toward gray, swap one word.
        let outcomes: Vec<(u32, AttackOutcome)> = ids
            .iter()
            .map(|&id| {
                let item = dataset.pair(id).unwrap();
                let adv_img = ImageGrid::new(item.image.as_array().mapv(|x| {
                    (x * 0.98 + 0.01).clamp(0.0, 1.0)
                }));
                let caption = &item.captions[0];
                let swapped = caption
                    .ids()
                    .iter()
                    .position(|&t| dataset.vocab.class(t).unwrap().substitutable())
                    .map(|pos| {
                        let id0 = caption.ids()[pos];
                        let other = dataset
                            .vocab
                            .class_members(dataset.vocab.class(id0).unwrap())
                            .into_iter()
                            .find(|&c| c != id0)
                            .unwrap();
                        caption.with_substitution(&dataset.vocab, pos, other).unwrap()
                    })
                    .unwrap_or_else(|| caption.clone());
                let outcome = AttackOutcome {
                    adversarial_image: adv_img,
                    adversarial_caption: swapped,
                    loss_trace: vec![],
                    shuffle_seed: 0,
                    sample_seed: 0,
                };
                (id, outcome)
            })
            .collect();
        let adv = adversarial_index(&pair, &clean, &outcomes).unwrap();

        for direction in [Direction::TextRetrieval, Direction::ImageRetrieval] {
            let got = attack_success_rate(&clean, &adv, &ids, 1, direction).unwrap();
            let mut eligible = 0;
            let mut flipped = 0;
            for &id in &ids {
                if pair_rank(&clean, id, direction).unwrap() == 1 {
                    eligible += 1;
                    if pair_rank(&adv, id, direction).unwrap() > 1 {
                        flipped += 1;
                    }
                }
            }
            let want = if eligible == 0 {
                Asr::Undefined
            } else {
                Asr::Rate(100.0 * flipped as f64 / eligible as f64)
            };
            assert_eq!(got, want, "{direction:?}");
        }
    }

    #[test]
    fn symmetric_index_makes_both_directions_agree() {
        // One caption per image with identical embeddings on both sides:
        // text retrieval and image retrieval become the same problem.
        let rows = Array2::from_shape_fn((6, 4), |(i, j)| {
            let x = ((i * 7 + j * 3 + 1) % 11) as f64 - 5.0;
            x / 10.0
        });
        let normed = {
            let mut a = rows.clone();
            for mut r in a.rows_mut() {
                let n = r.dot(&r).sqrt();
                r.mapv_inplace(|x| x / n);
            }
            a
        };
        let index =
            literal_index(normed.clone(), normed.clone(), normed.clone(), normed.clone());
        let ids: Vec<u32> = (0..6).collect();
        for k in 1..=6 {
            let tr = recall_at_k(&index, &ids, k, Direction::TextRetrieval).unwrap();
            let ir = recall_at_k(&index, &ids, k, Direction::ImageRetrieval).unwrap();
            assert_eq!(tr, ir, "k={k}");
        }
    }
}

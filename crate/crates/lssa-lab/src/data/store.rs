//! On-disk dataset format: PNG images, a captions TSV, a vocab table, and
//! a manifest with schema version and per-file SHA-256 checksums.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::data::vocab::Vocabulary;
use crate::data::{CaptionedImage, Dataset};
use crate::error::{LabError, Result};
use crate::grid::ImageGrid;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub seed: u64,
    pub count: usize,
    pub image_size: [usize; 2],
    pub train: Vec<u32>,
    pub test: Vec<u32>,
    /// Relative path → SHA-256 hex digest, for every file but the manifest.
    pub checksums: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

/// Write an image as 8-bit RGB PNG. Values must already be exact k/255
/// multiples (the renderer guarantees this), so the write is lossless.
pub fn save_png(path: &Path, img: &ImageGrid) -> Result<()> {
    let (c, h, w) = img.dims();
    if c != 3 {
        return Err(LabError::ShapeMismatch {
            expected: "3-channel image".into(),
            got: format!("{c} channels"),
        });
    }
    img.validate_unit_range()?;
    let mut buf = Vec::with_capacity(3 * h * w);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..3 {
                buf.push((img.get(ch, y, x) * 255.0).round() as u8);
            }
        }
    }
    let rgb = image::RgbImage::from_raw(w as u32, h as u32, buf)
        .expect("buffer sized from dims");
    rgb.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| LabError::Format(format!("{}: png encode failed: {e}", path.display())))?;
    Ok(())
}

pub fn load_png(path: &Path) -> Result<ImageGrid> {
    let dyn_img = image::open(path).map_err(|e| {
        LabError::Format(format!("{}: png decode failed: {e}", path.display()))
    })?;
    let rgb = dyn_img.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut out = ndarray::Array3::<f64>::zeros((3, h, w));
    for (x, y, px) in rgb.enumerate_pixels() {
        for c in 0..3 {
            out[[c, y as usize, x as usize]] = px.0[c] as f64 / 255.0;
        }
    }
    Ok(ImageGrid::new(out))
}

fn image_rel_path(pair_id: u32) -> String {
    format!("images/{pair_id:06}.png")
}

/// Persist a dataset; returns the manifest that was written.
pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<Manifest> {
    std::fs::create_dir_all(dir.join("images"))?;

    let mut checksums = BTreeMap::new();
    for pair in dataset.pairs() {
        let rel = image_rel_path(pair.pair_id);
        let path = dir.join(&rel);
        save_png(&path, &pair.image)?;
        checksums.insert(rel, sha256_file(&path)?);
    }

    let mut tsv = String::new();
    for pair in dataset.pairs() {
        for (k, caption) in pair.captions.iter().enumerate() {
            tsv.push_str(&format!("{}\t{}\t{}\n", pair.pair_id, k, caption.text()));
        }
    }
    std::fs::write(dir.join("captions.tsv"), &tsv)?;
    checksums.insert("captions.tsv".into(), sha256_hex(tsv.as_bytes()));

    dataset.vocab.save(&dir.join("vocab.txt"))?;
    checksums.insert("vocab.txt".into(), sha256_file(&dir.join("vocab.txt"))?);

    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        seed: dataset.seed,
        count: dataset.pairs().len(),
        image_size: [dataset.image_size.0, dataset.image_size.1],
        train: dataset.train_ids().to_vec(),
        test: dataset.test_ids().to_vec(),
        checksums,
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| LabError::Format(format!("manifest encode failed: {e}")))?;
    std::fs::write(dir.join("manifest.json"), json)?;
    Ok(manifest)
}

fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&path).map_err(|_| LabError::MissingArtifact {
        path: path.clone(),
        hint: "generate the dataset first (gen-data)".into(),
    })?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| LabError::Format(format!("{}: {e}", path.display())))?;
    if manifest.schema_version != SCHEMA_VERSION {
        return Err(LabError::VersionMismatch {
            found: manifest.schema_version,
            supported: SCHEMA_VERSION,
        });
    }
    Ok(manifest)
}

/// Load and fully validate a dataset directory.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = read_manifest(dir)?;

    for (rel, expected) in &manifest.checksums {
        let path = dir.join(rel);
        if !path.is_file() {
            return Err(LabError::MissingArtifact {
                path,
                hint: "file listed in manifest.json is absent".into(),
            });
        }
        if &sha256_file(&path)? != expected {
            return Err(LabError::ChecksumMismatch { path });
        }
    }

    let vocab = Vocabulary::load(&dir.join("vocab.txt"))?;

    let tsv_path = dir.join("captions.tsv");
    let tsv = std::fs::read_to_string(&tsv_path)?;
    let mut captions: BTreeMap<u32, Vec<(u32, String)>> = BTreeMap::new();
    for (lineno, line) in tsv.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut cols = line.splitn(3, '\t');
        let (Some(id_col), Some(idx_col), Some(text)) = (cols.next(), cols.next(), cols.next())
        else {
            return Err(LabError::Format(format!(
                "{}:{}: expected pair_id<TAB>index<TAB>text",
                tsv_path.display(),
                lineno + 1
            )));
        };
        let pair_id: u32 = id_col.parse().map_err(|_| {
            LabError::Format(format!("{}:{}: bad pair id", tsv_path.display(), lineno + 1))
        })?;
        let idx: u32 = idx_col.parse().map_err(|_| {
            LabError::Format(format!("{}:{}: bad caption index", tsv_path.display(), lineno + 1))
        })?;
        let text = text.to_string();
        captions.entry(pair_id).or_default().push((idx, text));
    }

    let mut pairs = Vec::with_capacity(manifest.count);
    for pair_id in 0..manifest.count as u32 {
        let rel = image_rel_path(pair_id);
        let image = load_png(&dir.join(&rel))?;
        let mut caps = captions.remove(&pair_id).ok_or_else(|| {
            LabError::Format(format!("captions.tsv has no rows for pair {pair_id}"))
        })?;
        caps.sort_by_key(|(idx, _)| *idx);
        if caps.len() != 5 || caps.iter().enumerate().any(|(k, (idx, _))| *idx != k as u32) {
            return Err(LabError::Format(format!(
                "pair {pair_id} must have caption indices 0..5"
            )));
        }
        let captions = caps
            .into_iter()
            .map(|(_, text)| vocab.tokenize(&text))
            .collect::<Result<Vec<_>>>()?;
        pairs.push(CaptionedImage { pair_id, image, captions });
    }
    if !captions.is_empty() {
        return Err(LabError::Format(format!(
            "captions.tsv references unknown pair ids: {:?}",
            captions.keys().collect::<Vec<_>>()
        )));
    }

    Dataset::assemble(
        manifest.seed,
        (manifest.image_size[0], manifest.image_size[1]),
        vocab,
        pairs,
        manifest.train.clone(),
        manifest.test.clone(),
    )
}

/// Load only the manifest (for quick artifact checks).
pub fn peek_manifest(dir: &Path) -> Result<Manifest> {
    read_manifest(dir)
}

pub fn image_path(dir: &Path, pair_id: u32) -> PathBuf {
    dir.join(image_rel_path(pair_id))
}

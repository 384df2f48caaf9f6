//! Loss functions: the attack objective (mean cosine dissimilarity over a
//! caption set) and the symmetric contrastive objective used for training.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{LabError, Result};

const NORM_FLOOR: f64 = 1e-12;

/// What the attacks maximize; one variant today, named so configs read well.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    CosineDissimilarity,
}

/// How per-caption losses combine over a caption set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    #[default]
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize, Default)]
pub struct LossSpec {
    pub kind: LossKind,
    pub reduction: Reduction,
}

fn checked_norm(v: ArrayView1<f64>, side: &str) -> Result<f64> {
    let n = v.dot(&v).sqrt();
    if !n.is_finite() || n < NORM_FLOOR {
        return Err(LabError::Numerical(format!(
            "{side} embedding has zero (or non-finite) norm; cosine undefined"
        )));
    }
    Ok(n)
}

pub fn cosine(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Result<f64> {
    if a.len() != b.len() {
        return Err(LabError::ShapeMismatch {
            expected: format!("embedding of dim {}", a.len()),
            got: format!("dim {}", b.len()),
        });
    }
    let na = checked_norm(a, "image")?;
    let nb = checked_norm(b, "text")?;
    Ok(a.dot(&b) / (na * nb))
}

/// Mean over the caption set of 1 − cos(e_img, e_txt). Range [0, 2].
pub fn loss(spec: &LossSpec, e_img: ArrayView1<f64>, e_txt_set: ArrayView2<f64>) -> Result<f64> {
    let LossSpec { kind: LossKind::CosineDissimilarity, reduction: Reduction::Mean } = spec;
    if e_txt_set.nrows() == 0 {
        return Err(LabError::Config("loss needs at least one text embedding".into()));
    }
    let mut total = 0.0;
    for row in e_txt_set.outer_iter() {
        total += 1.0 - cosine(e_img, row)?;
    }
    Ok(total / e_txt_set.nrows() as f64)
}

/// Loss value together with its gradient in the image embedding.
pub fn loss_and_embedding_grad(
    spec: &LossSpec,
    e_img: ArrayView1<f64>,
    e_txt_set: ArrayView2<f64>,
) -> Result<(f64, Array1<f64>)> {
    let LossSpec { kind: LossKind::CosineDissimilarity, reduction: Reduction::Mean } = spec;
    if e_txt_set.nrows() == 0 {
        return Err(LabError::Config("loss needs at least one text embedding".into()));
    }
    let na = checked_norm(e_img, "image")?;
    let mut total = 0.0;
    let mut grad = Array1::<f64>::zeros(e_img.len());
    for row in e_txt_set.outer_iter() {
        let nb = checked_norm(row, "text")?;
        let cos = e_img.dot(&row) / (na * nb);
        total += 1.0 - cos;
        // d(1−cos)/da = −( b/(‖a‖‖b‖) − cos·a/‖a‖² )
        for k in 0..grad.len() {
            grad[k] -= row[k] / (na * nb) - cos * e_img[k] / (na * na);
        }
    }
    let m = e_txt_set.nrows() as f64;
    Ok((total / m, grad / m))
}

/// Symmetric in-batch contrastive loss on unit embeddings.
///
/// Returns the scalar loss and the gradients in the image and text
/// embedding matrices (rows are the batch).
pub fn contrastive_loss(
    img: &Array2<f64>,
    txt: &Array2<f64>,
    temperature: f64,
) -> Result<(f64, Array2<f64>, Array2<f64>)> {
    let b = img.nrows();
    if b == 0 || txt.nrows() != b {
        return Err(LabError::ShapeMismatch {
            expected: format!("matching nonempty batches, images {b}"),
            got: format!("texts {}", txt.nrows()),
        });
    }
    let logits = img.dot(&txt.t()) / temperature;

    let softmax_rows = |m: &Array2<f64>| -> Array2<f64> {
        let mut out = m.clone();
        for mut row in out.outer_iter_mut() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|v| (v - max).exp());
            let sum = row.sum();
            row.mapv_inplace(|v| v / sum);
        }
        out
    };
    let p_rows = softmax_rows(&logits);
    let p_cols = softmax_rows(&logits.t().to_owned()); // row i = softmax over images for text i

    let mut value = 0.0;
    for i in 0..b {
        value -= (p_rows[[i, i]].max(NORM_FLOOR)).ln() + (p_cols[[i, i]].max(NORM_FLOOR)).ln();
    }
    value /= 2.0 * b as f64;
    if !value.is_finite() {
        return Err(LabError::Numerical("contrastive loss is not finite".into()));
    }

    // d value / d logits = ((P_rows − I) + (P_cols − I)ᵀ) / (2B)
    let mut d_logits = Array2::<f64>::zeros((b, b));
    for i in 0..b {
        for j in 0..b {
            let target = if i == j { 1.0 } else { 0.0 };
            d_logits[[i, j]] =
                (p_rows[[i, j]] - target) + (p_cols[[j, i]] - target);
        }
    }
    d_logits /= 2.0 * b as f64;

    let d_img = d_logits.dot(txt) / temperature;
    let d_txt = d_logits.t().dot(img) / temperature;
    Ok((value, d_img, d_txt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn loss_endpoints_and_hand_value() {
        let spec = LossSpec::default();
        let e = array![1.0, 0.0];
        let same = array![[1.0, 0.0]];
        let anti = array![[-1.0, 0.0]];
        let mixed = array![[0.0, 1.0], [1.0, 0.0]];
        assert!(loss(&spec, e.view(), same.view()).unwrap().abs() < 1e-12);
        assert!((loss(&spec, e.view(), anti.view()).unwrap() - 2.0).abs() < 1e-12);
        assert!((loss(&spec, e.view(), mixed.view()).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn zero_norm_is_a_singularity_error() {
        let spec = LossSpec::default();
        let e = array![0.0, 0.0];
        let t = array![[1.0, 0.0]];
        assert!(matches!(
            loss(&spec, e.view(), t.view()),
            Err(LabError::Numerical(_))
        ));
    }

    #[test]
    fn embedding_grad_matches_finite_differences() {
        let spec = LossSpec::default();
        let e = array![0.6, -0.2, 0.9];
        let t = array![[0.1, 0.8, -0.3], [0.5, 0.5, 0.5]];
        let (_, g) = loss_and_embedding_grad(&spec, e.view(), t.view()).unwrap();
        let h = 1e-6;
        for k in 0..3 {
            let mut ep = e.clone();
            let mut em = e.clone();
            ep[k] += h;
            em[k] -= h;
            let fp = loss(&spec, ep.view(), t.view()).unwrap();
            let fm = loss(&spec, em.view(), t.view()).unwrap();
            let fd = (fp - fm) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-8, "coord {k}: fd {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn contrastive_grad_matches_finite_differences() {
        let normalize = |m: &Array2<f64>| -> Array2<f64> {
            let mut out = m.clone();
            for mut row in out.outer_iter_mut() {
                let n = row.dot(&row).sqrt();
                row.mapv_inplace(|v| v / n);
            }
            out
        };
        let img = normalize(&array![[0.3, 0.7, -0.2], [0.9, -0.1, 0.4], [-0.5, 0.2, 0.8]]);
        let txt = normalize(&array![[0.4, 0.6, 0.0], [0.7, -0.3, 0.5], [-0.4, 0.1, 0.9]]);
        let (_, d_img, d_txt) = contrastive_loss(&img, &txt, 0.2).unwrap();
        let h = 1e-6;
        // Treat the (unnormalized) matrices as free variables for the check.
        for (r, c) in [(0usize, 1usize), (1, 2), (2, 0), (0, 0)] {
            let mut p = img.clone();
            p[[r, c]] += h;
            let m = {
                let mut m = img.clone();
                m[[r, c]] -= h;
                m
            };
            let fp = contrastive_loss(&p, &txt, 0.2).unwrap().0;
            let fm = contrastive_loss(&m, &txt, 0.2).unwrap().0;
            let fd = (fp - fm) / (2.0 * h);
            assert!((fd - d_img[[r, c]]).abs() < 1e-6, "img[{r},{c}]");

            let mut p = txt.clone();
            p[[r, c]] += h;
            let m = {
                let mut m = txt.clone();
                m[[r, c]] -= h;
                m
            };
            let fp = contrastive_loss(&img, &p, 0.2).unwrap().0;
            let fm = contrastive_loss(&img, &m, 0.2).unwrap().0;
            let fd = (fp - fm) / (2.0 * h);
            assert!((fd - d_txt[[r, c]]).abs() < 1e-6, "txt[{r},{c}]");
        }
    }
}

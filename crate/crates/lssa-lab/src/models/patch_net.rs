//! Patch image encoder: non-overlapping 4×4 patches through a shared
//! linear embedding, one dense mixing layer across patches, then a
//! projection and L2 normalization. The attention-free stand-in for a
//! patch-token architecture, deliberately unlike the conv stack.

use ndarray::{Array1, Array2, Array3, ArrayView3};

use crate::models::params::{GradBuffer, ParamStore};

pub const PATCH: usize = 4;
pub const PATCH_DIM: usize = 32;
pub const MIX_DIM: usize = 96;

fn patch_count(image_size: (usize, usize)) -> usize {
    (image_size.0 / PATCH) * (image_size.1 / PATCH)
}

pub fn layout(embed_dim: usize, image_size: (usize, usize)) -> ParamStore {
    let n = patch_count(image_size);
    ParamStore::builder()
        .add("patch_w", &[PATCH_DIM, 3 * PATCH * PATCH])
        .add("patch_b", &[PATCH_DIM])
        .add("mix_w", &[MIX_DIM, n * PATCH_DIM])
        .add("mix_b", &[MIX_DIM])
        .add("proj_w", &[embed_dim, MIX_DIM])
        .add("proj_b", &[embed_dim])
        .build()
}

/// Row-major patch grid; each row is a channel-major flattened 4×4 patch.
fn extract_patches(x: &ArrayView3<f64>) -> Array2<f64> {
    let (c, h, w) = x.dim();
    let (ph, pw) = (h / PATCH, w / PATCH);
    let mut out = Array2::<f64>::zeros((ph * pw, c * PATCH * PATCH));
    for py in 0..ph {
        for px in 0..pw {
            let row = py * pw + px;
            let mut k = 0;
            for ch in 0..c {
                for dy in 0..PATCH {
                    for dx in 0..PATCH {
                        out[[row, k]] = x[[ch, py * PATCH + dy, px * PATCH + dx]];
                        k += 1;
                    }
                }
            }
        }
    }
    out
}

fn scatter_patches(d_patches: &Array2<f64>, dims: (usize, usize, usize)) -> Array3<f64> {
    let (c, _, w) = dims;
    let pw = w / PATCH;
    let mut out = Array3::<f64>::zeros(dims);
    for (row, patch) in d_patches.outer_iter().enumerate() {
        let (py, px) = (row / pw, row % pw);
        let mut k = 0;
        for ch in 0..c {
            for dy in 0..PATCH {
                for dx in 0..PATCH {
                    out[[ch, py * PATCH + dy, px * PATCH + dx]] = patch[k];
                    k += 1;
                }
            }
        }
    }
    out
}

fn dense(w: &[f64], b: &[f64], x: &[f64], out_dim: usize) -> Array1<f64> {
    let in_dim = x.len();
    let mut y = Array1::<f64>::zeros(out_dim);
    for o in 0..out_dim {
        let row = &w[o * in_dim..(o + 1) * in_dim];
        y[o] = b[o] + row.iter().zip(x).map(|(a, v)| a * v).sum::<f64>();
    }
    y
}

pub struct Cache {
    dims: (usize, usize, usize),
    patches: Array2<f64>,
    patch_act: Array2<f64>,
    mix_act: Array1<f64>,
    embedding: Array1<f64>,
    norm: f64,
}

impl Cache {
    pub fn embedding(&self) -> &Array1<f64> {
        &self.embedding
    }
}

pub fn forward(p: &ParamStore, input: ArrayView3<f64>) -> Cache {
    let dims = input.dim();
    let patches = extract_patches(&input);
    let n = patches.dim().0;

    let pw = p.slice("patch_w");
    let pb = p.slice("patch_b");
    let mut patch_act = Array2::<f64>::zeros((n, PATCH_DIM));
    for (i, patch) in patches.outer_iter().enumerate() {
        let z = dense(pw, pb, patch.as_slice().expect("contiguous"), PATCH_DIM);
        for (j, v) in z.iter().enumerate() {
            patch_act[[i, j]] = v.tanh();
        }
    }

    let concat: Vec<f64> = patch_act.iter().copied().collect();
    let mix_act = dense(p.slice("mix_w"), p.slice("mix_b"), &concat, MIX_DIM).map(|v| v.tanh());

    let embed_dim = p.shape("proj_b")[0];
    let z = dense(
        p.slice("proj_w"),
        p.slice("proj_b"),
        mix_act.as_slice().expect("contiguous"),
        embed_dim,
    );
    let norm = z.dot(&z).sqrt();
    let embedding = &z / norm.max(1e-12);
    Cache { dims, patches, patch_act, mix_act, embedding, norm }
}

pub fn backward(
    p: &ParamStore,
    cache: &Cache,
    d_embedding: &Array1<f64>,
    mut grads: Option<&mut GradBuffer>,
    want_input: bool,
) -> Option<Array3<f64>> {
    let e = &cache.embedding;
    let proj = e.dot(d_embedding);
    let dz = (d_embedding - &(e * proj)) / cache.norm.max(1e-12);

    // projection layer
    let mix = cache.mix_act.as_slice().expect("contiguous");
    if let Some(g) = grads.as_mut() {
        let dw = g.slice_mut(p, "proj_w");
        for o in 0..dz.len() {
            for (k, &m) in mix.iter().enumerate() {
                dw[o * MIX_DIM + k] += dz[o] * m;
            }
        }
        let db = g.slice_mut(p, "proj_b");
        for o in 0..dz.len() {
            db[o] += dz[o];
        }
    }
    let pwm = p.slice("proj_w");
    let mut d_mix = vec![0.0; MIX_DIM];
    for o in 0..dz.len() {
        for k in 0..MIX_DIM {
            d_mix[k] += dz[o] * pwm[o * MIX_DIM + k];
        }
    }
    for (d, &a) in d_mix.iter_mut().zip(&cache.mix_act) {
        *d *= 1.0 - a * a;
    }

    // mixing layer
    let n = cache.patches.dim().0;
    let concat: Vec<f64> = cache.patch_act.iter().copied().collect();
    if let Some(g) = grads.as_mut() {
        let dw = g.slice_mut(p, "mix_w");
        for o in 0..MIX_DIM {
            for (k, &u) in concat.iter().enumerate() {
                dw[o * concat.len() + k] += d_mix[o] * u;
            }
        }
        let db = g.slice_mut(p, "mix_b");
        for o in 0..MIX_DIM {
            db[o] += d_mix[o];
        }
    }
    let mw = p.slice("mix_w");
    let mut d_concat = vec![0.0; concat.len()];
    for o in 0..MIX_DIM {
        let row = &mw[o * concat.len()..(o + 1) * concat.len()];
        for (d, &r) in d_concat.iter_mut().zip(row) {
            *d += d_mix[o] * r;
        }
    }
    let mut d_patch_act =
        Array2::from_shape_vec((n, PATCH_DIM), d_concat).expect("concat len matches");
    d_patch_act.zip_mut_with(&cache.patch_act, |g, &a| *g *= 1.0 - a * a);

    // shared patch embedding
    let patch_len = cache.patches.dim().1;
    if let Some(g) = grads.as_mut() {
        let dw = g.slice_mut(p, "patch_w");
        for i in 0..n {
            for o in 0..PATCH_DIM {
                let gum = d_patch_act[[i, o]];
                if gum == 0.0 {
                    continue;
                }
                for k in 0..patch_len {
                    dw[o * patch_len + k] += gum * cache.patches[[i, k]];
                }
            }
        }
        let db = g.slice_mut(p, "patch_b");
        for i in 0..n {
            for o in 0..PATCH_DIM {
                db[o] += d_patch_act[[i, o]];
            }
        }
    }

    if !want_input {
        return None;
    }
    let pw = p.slice("patch_w");
    let mut d_patches = Array2::<f64>::zeros((n, patch_len));
    for i in 0..n {
        for o in 0..PATCH_DIM {
            let gum = d_patch_act[[i, o]];
            if gum == 0.0 {
                continue;
            }
            let row = &pw[o * patch_len..(o + 1) * patch_len];
            for k in 0..patch_len {
                d_patches[[i, k]] += gum * row[k];
            }
        }
    }
    Some(scatter_patches(&d_patches, cache.dims))
}

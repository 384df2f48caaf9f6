//! Text encoder: token embeddings plus positional embeddings, mean-pooled
//! and projected, then L2 normalized. Just enough structure that a single
//! word substitution moves the embedding in a caption-specific direction.

use ndarray::{Array1, ArrayView2};

use crate::models::params::{GradBuffer, ParamStore};

pub const TOKEN_DIM: usize = 48;

pub fn layout(embed_dim: usize, vocab_size: usize, max_len: usize) -> ParamStore {
    ParamStore::builder()
        .add("tok_emb", &[vocab_size, TOKEN_DIM])
        .add("pos_emb", &[max_len, TOKEN_DIM])
        .add("proj_w", &[embed_dim, TOKEN_DIM])
        .add("proj_b", &[embed_dim])
        .build()
}

pub fn token_table(p: &ParamStore) -> ArrayView2<'_, f64> {
    let s = p.shape("tok_emb");
    ArrayView2::from_shape((s[0], s[1]), p.slice("tok_emb")).expect("segment shape")
}

pub struct Cache {
    ids: Vec<u32>,
    pooled: Array1<f64>,
    embedding: Array1<f64>,
    norm: f64,
}

impl Cache {
    pub fn embedding(&self) -> &Array1<f64> {
        &self.embedding
    }
}

pub fn forward(p: &ParamStore, ids: &[u32]) -> Cache {
    let tok = p.slice("tok_emb");
    let pos = p.slice("pos_emb");
    let mut pooled = Array1::<f64>::zeros(TOKEN_DIM);
    for (i, &id) in ids.iter().enumerate() {
        let t = &tok[id as usize * TOKEN_DIM..(id as usize + 1) * TOKEN_DIM];
        let q = &pos[i * TOKEN_DIM..(i + 1) * TOKEN_DIM];
        for k in 0..TOKEN_DIM {
            pooled[k] += t[k] + q[k];
        }
    }
    pooled /= ids.len() as f64;

    let embed_dim = p.shape("proj_b")[0];
    let pw = p.slice("proj_w");
    let pb = p.slice("proj_b");
    let mut z = Array1::<f64>::zeros(embed_dim);
    for o in 0..embed_dim {
        let row = &pw[o * TOKEN_DIM..(o + 1) * TOKEN_DIM];
        z[o] = pb[o]
            + row
                .iter()
                .zip(pooled.iter())
                .map(|(a, b)| a * b)
                .sum::<f64>();
    }
    let norm = z.dot(&z).sqrt();
    let embedding = &z / norm.max(1e-12);
    Cache { ids: ids.to_vec(), pooled, embedding, norm }
}

pub fn backward(p: &ParamStore, cache: &Cache, d_embedding: &Array1<f64>, grads: &mut GradBuffer) {
    let e = &cache.embedding;
    let proj = e.dot(d_embedding);
    let dz = (d_embedding - &(e * proj)) / cache.norm.max(1e-12);

    let embed_dim = dz.len();
    {
        let dw = grads.slice_mut(p, "proj_w");
        for o in 0..embed_dim {
            for k in 0..TOKEN_DIM {
                dw[o * TOKEN_DIM + k] += dz[o] * cache.pooled[k];
            }
        }
        let db = grads.slice_mut(p, "proj_b");
        for o in 0..embed_dim {
            db[o] += dz[o];
        }
    }

    let pw = p.slice("proj_w");
    let mut d_pooled = vec![0.0; TOKEN_DIM];
    for o in 0..embed_dim {
        let row = &pw[o * TOKEN_DIM..(o + 1) * TOKEN_DIM];
        for (d, &r) in d_pooled.iter_mut().zip(row) {
            *d += dz[o] * r;
        }
    }
    let scale = 1.0 / cache.ids.len() as f64;

    let d_tok = grads.slice_mut(p, "tok_emb");
    for &id in &cache.ids {
        let row = &mut d_tok[id as usize * TOKEN_DIM..(id as usize + 1) * TOKEN_DIM];
        for (r, &d) in row.iter_mut().zip(&d_pooled) {
            *r += d * scale;
        }
    }
    let d_pos = grads.slice_mut(p, "pos_emb");
    for i in 0..cache.ids.len() {
        let row = &mut d_pos[i * TOKEN_DIM..(i + 1) * TOKEN_DIM];
        for (r, &d) in row.iter_mut().zip(&d_pooled) {
            *r += d * scale;
        }
    }
}

/// Embedding-table row L2 distances from `token_id`, ascending by distance
/// then id; excludes the token itself. Used to rank substitution candidates.
pub fn nearest_tokens(table: ArrayView2<f64>, token_id: u32, among: &[u32]) -> Vec<u32> {
    let center = table.row(token_id as usize);
    let mut scored: Vec<(f64, u32)> = among
        .iter()
        .filter(|&&id| id != token_id)
        .map(|&id| {
            let row = table.row(id as usize);
            let d2 = center
                .iter()
                .zip(row.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
            (d2, id)
        })
        .collect();
    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    scored.into_iter().map(|(_, id)| id).collect()
}

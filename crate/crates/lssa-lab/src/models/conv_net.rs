//! Convolutional image encoder: 3×3 conv + tanh, 2×2 mean-pool, a second
//! 3×3 conv + tanh at half resolution, then a linear projection over the
//! full feature map and L2 normalization. The second stage stays unpooled
//! so small shape detail survives into the projection.
//!
//! Activations are tanh throughout — smooth everywhere, so input gradients
//! check cleanly against finite differences (ReLU kinks and max-pool ties
//! would not).

use ndarray::{Array1, Array3, ArrayView1, ArrayView3, ArrayView4};

use crate::models::params::{GradBuffer, ParamStore};

pub const CONV1_CHANNELS: usize = 8;
pub const CONV2_CHANNELS: usize = 16;
const KERNEL: usize = 3;
const PAD: usize = 1;

pub fn layout(embed_dim: usize, image_size: (usize, usize)) -> ParamStore {
    let (h, w) = image_size;
    let flat = CONV2_CHANNELS * (h / 2) * (w / 2);
    ParamStore::builder()
        .add("conv1_w", &[CONV1_CHANNELS, 3, KERNEL, KERNEL])
        .add("conv1_b", &[CONV1_CHANNELS])
        .add("conv2_w", &[CONV2_CHANNELS, CONV1_CHANNELS, KERNEL, KERNEL])
        .add("conv2_b", &[CONV2_CHANNELS])
        .add("proj_w", &[embed_dim, flat])
        .add("proj_b", &[embed_dim])
        .build()
}

fn view4<'a>(p: &'a ParamStore, name: &str) -> ArrayView4<'a, f64> {
    ArrayView4::from_shape(
        {
            let s = p.shape(name);
            (s[0], s[1], s[2], s[3])
        },
        p.slice(name),
    )
    .expect("segment shape")
}

fn view1<'a>(p: &'a ParamStore, name: &str) -> ArrayView1<'a, f64> {
    ArrayView1::from_shape(p.shape(name)[0], p.slice(name)).expect("segment shape")
}

fn conv_forward(x: &Array3<f64>, w: ArrayView4<f64>, b: ArrayView1<f64>) -> Array3<f64> {
    let (cin, h, wd) = x.dim();
    let cout = w.dim().0;
    let mut y = Array3::<f64>::zeros((cout, h, wd));
    for o in 0..cout {
        for i in 0..h {
            for j in 0..wd {
                let mut acc = b[o];
                for c in 0..cin {
                    for ky in 0..KERNEL {
                        let yy = i + ky;
                        if yy < PAD || yy >= h + PAD {
                            continue;
                        }
                        for kx in 0..KERNEL {
                            let xx = j + kx;
                            if xx < PAD || xx >= wd + PAD {
                                continue;
                            }
                            acc += w[[o, c, ky, kx]] * x[[c, yy - PAD, xx - PAD]];
                        }
                    }
                }
                y[[o, i, j]] = acc;
            }
        }
    }
    y
}

/// Gradients of a conv layer. `dx` is skipped when the caller only trains
/// parameters, `dw`/`db` when the caller only needs the input gradient.
fn conv_backward(
    x: &Array3<f64>,
    w: ArrayView4<f64>,
    dy: &Array3<f64>,
    want_dx: bool,
    mut dw: Option<(&mut [f64], &mut [f64])>,
) -> Option<Array3<f64>> {
    let (cin, h, wd) = x.dim();
    let cout = w.dim().0;
    let mut dx = want_dx.then(|| Array3::<f64>::zeros((cin, h, wd)));
    for o in 0..cout {
        for i in 0..h {
            for j in 0..wd {
                let g = dy[[o, i, j]];
                if g == 0.0 {
                    continue;
                }
                if let Some((_, db)) = dw.as_mut() {
                    db[o] += g;
                }
                for c in 0..cin {
                    for ky in 0..KERNEL {
                        let yy = i + ky;
                        if yy < PAD || yy >= h + PAD {
                            continue;
                        }
                        for kx in 0..KERNEL {
                            let xx = j + kx;
                            if xx < PAD || xx >= wd + PAD {
                                continue;
                            }
                            let (sy, sx) = (yy - PAD, xx - PAD);
                            if let Some(dx) = dx.as_mut() {
                                dx[[c, sy, sx]] += g * w[[o, c, ky, kx]];
                            }
                            if let Some((dw, _)) = dw.as_mut() {
                                let idx = ((o * cin + c) * KERNEL + ky) * KERNEL + kx;
                                dw[idx] += g * x[[c, sy, sx]];
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}

fn pool2_forward(x: &Array3<f64>) -> Array3<f64> {
    let (c, h, w) = x.dim();
    let mut y = Array3::<f64>::zeros((c, h / 2, w / 2));
    for ch in 0..c {
        for i in 0..h / 2 {
            for j in 0..w / 2 {
                y[[ch, i, j]] = 0.25
                    * (x[[ch, 2 * i, 2 * j]]
                        + x[[ch, 2 * i, 2 * j + 1]]
                        + x[[ch, 2 * i + 1, 2 * j]]
                        + x[[ch, 2 * i + 1, 2 * j + 1]]);
            }
        }
    }
    y
}

fn pool2_backward(dy: &Array3<f64>) -> Array3<f64> {
    let (c, h, w) = dy.dim();
    let mut dx = Array3::<f64>::zeros((c, h * 2, w * 2));
    for ch in 0..c {
        for i in 0..h {
            for j in 0..w {
                let g = 0.25 * dy[[ch, i, j]];
                dx[[ch, 2 * i, 2 * j]] = g;
                dx[[ch, 2 * i, 2 * j + 1]] = g;
                dx[[ch, 2 * i + 1, 2 * j]] = g;
                dx[[ch, 2 * i + 1, 2 * j + 1]] = g;
            }
        }
    }
    dx
}

pub struct Cache {
    input: Array3<f64>,
    act1: Array3<f64>,
    pooled1: Array3<f64>,
    act2: Array3<f64>,
    embedding: Array1<f64>,
    norm: f64,
}

impl Cache {
    pub fn embedding(&self) -> &Array1<f64> {
        &self.embedding
    }
}

pub fn forward(p: &ParamStore, input: ArrayView3<f64>) -> Cache {
    let input = input.to_owned();
    let act1 = conv_forward(&input, view4(p, "conv1_w"), view1(p, "conv1_b")).map(|v| v.tanh());
    let pooled1 = pool2_forward(&act1);
    let act2 = conv_forward(&pooled1, view4(p, "conv2_w"), view1(p, "conv2_b")).map(|v| v.tanh());

    let embed_dim = p.shape("proj_b")[0];
    let flat_len = act2.len();
    let flat = act2.as_slice().expect("contiguous");
    let pw = p.slice("proj_w");
    let pb = p.slice("proj_b");
    let mut z = Array1::<f64>::zeros(embed_dim);
    for o in 0..embed_dim {
        let row = &pw[o * flat_len..(o + 1) * flat_len];
        z[o] = pb[o] + row.iter().zip(flat).map(|(a, b)| a * b).sum::<f64>();
    }
    let norm = z.dot(&z).sqrt();
    let embedding = &z / norm.max(1e-12);
    Cache { input, act1, pooled1, act2, embedding, norm }
}

/// Backpropagate from the embedding gradient. Writes parameter gradients
/// when `grads` is given; returns the input gradient when `want_input`.
pub fn backward(
    p: &ParamStore,
    cache: &Cache,
    d_embedding: &Array1<f64>,
    mut grads: Option<&mut GradBuffer>,
    want_input: bool,
) -> Option<Array3<f64>> {
    // through L2 normalization: dz = (de − e (e·de)) / ‖z‖
    let e = &cache.embedding;
    let proj = e.dot(d_embedding);
    let dz = (d_embedding - &(e * proj)) / cache.norm.max(1e-12);

    let flat_len = cache.act2.len();
    let flat = cache.act2.as_slice().expect("contiguous");
    let pw = p.slice("proj_w");
    let embed_dim = dz.len();

    if let Some(g) = grads.as_mut() {
        let dw = g.slice_mut(p, "proj_w");
        for o in 0..embed_dim {
            let row = &mut dw[o * flat_len..(o + 1) * flat_len];
            for (r, &f) in row.iter_mut().zip(flat) {
                *r += dz[o] * f;
            }
        }
        let db = g.slice_mut(p, "proj_b");
        for o in 0..embed_dim {
            db[o] += dz[o];
        }
    }

    let mut d_flat = vec![0.0; flat_len];
    for o in 0..embed_dim {
        let row = &pw[o * flat_len..(o + 1) * flat_len];
        for (d, &r) in d_flat.iter_mut().zip(row) {
            *d += dz[o] * r;
        }
    }
    let mut d_act2 =
        Array3::from_shape_vec(cache.act2.dim(), d_flat).expect("flat len matches");
    d_act2.zip_mut_with(&cache.act2, |g, &a| *g *= 1.0 - a * a);

    let d_pooled1 = {
        let mut dwdb = grads.as_mut().map(|g| {
            // split disjoint segment ranges out of one buffer
            let r_w = p.range("conv2_w");
            let r_b = p.range("conv2_b");
            (r_w, r_b, g)
        });
        match dwdb.as_mut() {
            Some((r_w, r_b, g)) => {
                let (dw_slice, db_slice) = disjoint_slices(g, r_w.clone(), r_b.clone());
                conv_backward(
                    &cache.pooled1,
                    view4(p, "conv2_w"),
                    &d_act2,
                    true,
                    Some((dw_slice, db_slice)),
                )
            }
            None => conv_backward(&cache.pooled1, view4(p, "conv2_w"), &d_act2, true, None),
        }
        .expect("dx requested")
    };

    let mut d_act1 = pool2_backward(&d_pooled1);
    d_act1.zip_mut_with(&cache.act1, |g, &a| *g *= 1.0 - a * a);

    match grads {
        Some(g) => {
            let r_w = p.range("conv1_w");
            let r_b = p.range("conv1_b");
            let (dw_slice, db_slice) = disjoint_slices(g, r_w, r_b);
            conv_backward(
                &cache.input,
                view4(p, "conv1_w"),
                &d_act1,
                want_input,
                Some((dw_slice, db_slice)),
            )
        }
        None => conv_backward(&cache.input, view4(p, "conv1_w"), &d_act1, want_input, None),
    }
}

/// Two non-overlapping mutable segment views of one gradient buffer.
fn disjoint_slices(
    g: &mut GradBuffer,
    a: std::ops::Range<usize>,
    b: std::ops::Range<usize>,
) -> (&mut [f64], &mut [f64]) {
    assert!(a.end <= b.start || b.end <= a.start, "segments overlap");
    let values = g.values_mut();
    if a.end <= b.start {
        let (lo, hi) = values.split_at_mut(b.start);
        (&mut lo[a], &mut hi[..b.len()])
    } else {
        let (lo, hi) = values.split_at_mut(a.start);
        let b_slice = &mut lo[b];
        (&mut hi[..a.len()], b_slice)
    }
}

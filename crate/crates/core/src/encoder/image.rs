use ndarray::{s, Array1, Array2, ArrayView2, ArrayViewMut2, Axis};

use super::{
    check_finite, ln_backward, ln_forward, slice2, slice2_mut, EncoderConfig, LnCache, ParamSet,
    Real,
};
use crate::error::{Error, Result};
use crate::imagery::{Image, TilePixels, CHANNELS, TILE_PX};

/// One pre-norm transformer block: attention then a ReLU feed-forward, each
/// with a residual connection.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<A> {
    pub ln1_g: Array1<A>,
    pub ln1_b: Array1<A>,
    /// `D x 3D`, columns ordered Q | K | V, heads contiguous inside each.
    pub w_qkv: Array2<A>,
    pub b_qkv: Array1<A>,
    pub w_o: Array2<A>,
    pub b_o: Array1<A>,
    pub ln2_g: Array1<A>,
    pub ln2_b: Array1<A>,
    pub w_fc1: Array2<A>,
    pub b_fc1: Array1<A>,
    pub w_fc2: Array2<A>,
    pub b_fc2: Array1<A>,
}

/// Patch-transformer parameters. Token 0 is the summary token; tokens
/// `1..=N` are patches in row-major grid order.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageEncoder<A> {
    pub config: EncoderConfig,
    /// `patch_dim x D`.
    pub w_patch: Array2<A>,
    pub b_patch: Array1<A>,
    pub cls: Array1<A>,
    /// `(N + 1) x D`.
    pub pos: Array2<A>,
    pub layers: Vec<Layer<A>>,
    pub lnf_g: Array1<A>,
    pub lnf_b: Array1<A>,
    pub w_out: Array2<A>,
    pub b_out: Array1<A>,
}

/// Head-averaged attention of the summary token over the image patches in
/// the last layer, renormalized to sum to one.
pub type AttentionMap = Vec<f64>;

/// Writes the patch rows of one tile into `out` (`N x patch_dim`). Rows are
/// patches in row-major grid order; each row is `(py, px, channel)` ordered.
fn patchify_with<A: Real, T: Copy>(
    data: &[T],
    patch_px: usize,
    mut out: ArrayViewMut2<A>,
    f: impl Fn(T) -> A,
) {
    let g = TILE_PX / patch_px;
    let row_len = patch_px * CHANNELS;
    for gy in 0..g {
        for gx in 0..g {
            let mut row = out.row_mut(gy * g + gx);
            let dst = row.as_slice_mut().expect("contiguous patch row");
            for py in 0..patch_px {
                let src = ((gy * patch_px + py) * TILE_PX + gx * patch_px) * CHANNELS;
                for (d, s) in dst[py * row_len..(py + 1) * row_len]
                    .iter_mut()
                    .zip(&data[src..src + row_len])
                {
                    *d = f(*s);
                }
            }
        }
    }
}

/// Patch matrix of an 8-bit tile, values in `[0, 1]`.
pub fn patchify<A: Real>(px: &TilePixels, patch_px: usize, out: ArrayViewMut2<A>) {
    let scale = A::one() / A::of(255.0);
    patchify_with(px.raw(), patch_px, out, |v: u8| A::of(f64::from(v)) * scale);
}

/// Patch matrix of a real-valued 256x256 image.
pub fn patchify_image<A: Real>(img: &Image, patch_px: usize, out: ArrayViewMut2<A>) -> Result<()> {
    if img.height() != TILE_PX || img.width() != TILE_PX {
        return Err(Error::Domain(format!(
            "encoder input must be {TILE_PX}x{TILE_PX}, got {}x{}",
            img.height(),
            img.width()
        )));
    }
    patchify_with(img.as_slice(), patch_px, out, A::of);
    Ok(())
}

pub(crate) struct LayerCache<A> {
    ln1: LnCache<A>,
    y1: Array2<A>,
    qkv: Array2<A>,
    /// Softmax rows per (sample, head), `T x T`.
    probs: Vec<Array2<A>>,
    o: Array2<A>,
    ln2: LnCache<A>,
    z: Array2<A>,
    pre: Array2<A>,
    h: Array2<A>,
}

/// Activations kept from a forward pass for the backward pass.
pub struct ForwardCache<A> {
    batch: usize,
    layers: Vec<LayerCache<A>>,
    lnf: LnCache<A>,
    c: Array2<A>,
}

impl<A: Real> ImageEncoder<A> {
    /// Encodes a batch. `patches` stacks `N` patch rows per sample, so it has
    /// shape `(B * N, patch_dim)`. Returns `B x D` embeddings, attention maps
    /// and the cache for [`ImageEncoder::backward`].
    pub fn forward(
        &self,
        patches: ArrayView2<A>,
    ) -> Result<(Array2<A>, Vec<AttentionMap>, ForwardCache<A>)> {
        let cfg = &self.config;
        let (n, t, d) = (cfg.n_patches(), cfg.n_tokens(), cfg.embed_dim);
        if patches.ncols() != cfg.patch_dim() || patches.nrows() % n != 0 || patches.nrows() == 0 {
            return Err(Error::Domain(format!(
                "patch matrix {:?} incompatible with {} patches of {} values",
                patches.dim(),
                n,
                cfg.patch_dim()
            )));
        }
        let batch = patches.nrows() / n;

        let emb = patches.dot(&self.w_patch) + &self.b_patch;
        let mut x = Array2::<A>::zeros((batch * t, d));
        for b in 0..batch {
            let mut cls_row = x.row_mut(b * t);
            cls_row.assign(&(&self.cls + &self.pos.row(0)));
            x.slice_mut(s![b * t + 1..(b + 1) * t, ..])
                .assign(&(&emb.slice(s![b * n..(b + 1) * n, ..]) + &self.pos.slice(s![1.., ..])));
        }
        check_finite(&x, "patch embedding")?;

        let mut caches = Vec::with_capacity(self.layers.len());
        for (li, layer) in self.layers.iter().enumerate() {
            let (next, cache) = layer_forward(layer, cfg, batch, &x);
            check_finite(&next, &format!("layer {li}"))?;
            caches.push(cache);
            x = next;
        }

        let cls_rows = x.select(Axis(0), &(0..batch).map(|b| b * t).collect::<Vec<_>>());
        let (c, lnf) = ln_forward(&cls_rows, &self.lnf_g, &self.lnf_b);
        let out = c.dot(&self.w_out) + &self.b_out;
        check_finite(&out, "output head")?;

        let last = caches.last().expect("at least one layer");
        let heads = cfg.heads;
        let maps = (0..batch)
            .map(|b| {
                let mut m = vec![0.0; n];
                for h in 0..heads {
                    let p = &last.probs[b * heads + h];
                    for (i, v) in m.iter_mut().enumerate() {
                        *v += p[[0, i + 1]].as_f64();
                    }
                }
                let total: f64 = m.iter().sum();
                m.iter_mut().for_each(|v| *v /= total);
                m
            })
            .collect();

        Ok((
            out,
            maps,
            ForwardCache {
                batch,
                layers: caches,
                lnf,
                c,
            },
        ))
    }

    /// Embeddings only.
    pub fn encode(&self, patches: ArrayView2<A>) -> Result<Array2<A>> {
        Ok(self.forward(patches)?.0)
    }

    /// Gradients of all parameters given `d_out` (`B x D`), the upstream
    /// gradient of the embeddings.
    pub fn backward(&self, patches: ArrayView2<A>, cache: &ForwardCache<A>, d_out: &Array2<A>) -> Self {
        let cfg = &self.config;
        let (n, t, d) = (cfg.n_patches(), cfg.n_tokens(), cfg.embed_dim);
        let batch = cache.batch;
        let mut g = self.zeros_like();

        g.w_out = cache.c.t().dot(d_out);
        g.b_out = d_out.sum_axis(Axis(0));
        let dc = d_out.dot(&self.w_out.t());
        let d_cls_rows = ln_backward(&dc, &cache.lnf, &self.lnf_g, &mut g.lnf_g, &mut g.lnf_b);

        let mut dx = Array2::<A>::zeros((batch * t, d));
        for b in 0..batch {
            dx.row_mut(b * t).assign(&d_cls_rows.row(b));
        }

        for (li, layer) in self.layers.iter().enumerate().rev() {
            dx = layer_backward(layer, cfg, batch, &cache.layers[li], &dx, &mut g.layers[li]);
        }

        let mut d_emb = Array2::<A>::zeros((batch * n, d));
        for b in 0..batch {
            g.cls += &dx.row(b * t);
            let block = dx.slice(s![b * t..(b + 1) * t, ..]);
            g.pos += &block;
            d_emb
                .slice_mut(s![b * n..(b + 1) * n, ..])
                .assign(&block.slice(s![1.., ..]));
        }
        g.w_patch = patches.t().dot(&d_emb);
        g.b_patch = d_emb.sum_axis(Axis(0));
        g
    }
}

fn layer_forward<A: Real>(
    l: &Layer<A>,
    cfg: &EncoderConfig,
    batch: usize,
    x: &Array2<A>,
) -> (Array2<A>, LayerCache<A>) {
    let (t, d, heads, dh) = (cfg.n_tokens(), cfg.embed_dim, cfg.heads, cfg.head_dim());
    let scale = A::one() / A::of(dh as f64).sqrt();

    let (y1, ln1) = ln_forward(x, &l.ln1_g, &l.ln1_b);
    let qkv = y1.dot(&l.w_qkv) + &l.b_qkv;
    let mut o = Array2::<A>::zeros((batch * t, d));
    let mut probs = Vec::with_capacity(batch * heads);
    for b in 0..batch {
        let rows = b * t..(b + 1) * t;
        for h in 0..heads {
            let q = qkv.slice(s![rows.clone(), h * dh..(h + 1) * dh]);
            let k = qkv.slice(s![rows.clone(), d + h * dh..d + (h + 1) * dh]);
            let v = qkv.slice(s![rows.clone(), 2 * d + h * dh..2 * d + (h + 1) * dh]);
            let mut p = q.dot(&k.t()) * scale;
            for mut row in p.rows_mut() {
                let max = row.iter().copied().fold(A::neg_infinity(), A::max);
                row.mapv_inplace(|v| (v - max).exp());
                let sum = row.iter().copied().sum::<A>();
                row.mapv_inplace(|v| v / sum);
            }
            o.slice_mut(s![rows.clone(), h * dh..(h + 1) * dh])
                .assign(&p.dot(&v));
            probs.push(p);
        }
    }
    let x_mid = x + &(o.dot(&l.w_o) + &l.b_o);
    let (z, ln2) = ln_forward(&x_mid, &l.ln2_g, &l.ln2_b);
    let pre = z.dot(&l.w_fc1) + &l.b_fc1;
    let hact = pre.mapv(|v| v.max(A::zero()));
    let out = &x_mid + &(hact.dot(&l.w_fc2) + &l.b_fc2);
    (
        out,
        LayerCache {
            ln1,
            y1,
            qkv,
            probs,
            o,
            ln2,
            z,
            pre,
            h: hact,
        },
    )
}

fn layer_backward<A: Real>(
    l: &Layer<A>,
    cfg: &EncoderConfig,
    batch: usize,
    c: &LayerCache<A>,
    dout: &Array2<A>,
    g: &mut Layer<A>,
) -> Array2<A> {
    let (t, d, heads, dh) = (cfg.n_tokens(), cfg.embed_dim, cfg.heads, cfg.head_dim());
    let scale = A::one() / A::of(dh as f64).sqrt();

    // feed-forward branch
    g.w_fc2 = c.h.t().dot(dout);
    g.b_fc2 = dout.sum_axis(Axis(0));
    let mut dpre = dout.dot(&l.w_fc2.t());
    ndarray::Zip::from(&mut dpre)
        .and(&c.pre)
        .for_each(|dv, &p| {
            if p <= A::zero() {
                *dv = A::zero();
            }
        });
    g.w_fc1 = c.z.t().dot(&dpre);
    g.b_fc1 = dpre.sum_axis(Axis(0));
    let dz = dpre.dot(&l.w_fc1.t());
    let mut dx_mid = ln_backward(&dz, &c.ln2, &l.ln2_g, &mut g.ln2_g, &mut g.ln2_b);
    dx_mid += dout;

    // attention branch
    g.w_o = c.o.t().dot(&dx_mid);
    g.b_o = dx_mid.sum_axis(Axis(0));
    let d_o = dx_mid.dot(&l.w_o.t());
    let mut dqkv = Array2::<A>::zeros((batch * t, 3 * d));
    for b in 0..batch {
        let rows = b * t..(b + 1) * t;
        for h in 0..heads {
            let p = &c.probs[b * heads + h];
            let q = c.qkv.slice(s![rows.clone(), h * dh..(h + 1) * dh]);
            let k = c.qkv.slice(s![rows.clone(), d + h * dh..d + (h + 1) * dh]);
            let v = c.qkv.slice(s![rows.clone(), 2 * d + h * dh..2 * d + (h + 1) * dh]);
            let dob = d_o.slice(s![rows.clone(), h * dh..(h + 1) * dh]);
            let dp = dob.dot(&v.t());
            let dv = p.t().dot(&dob);
            let mut ds = Array2::<A>::zeros((t, t));
            for i in 0..t {
                let dot: A = (0..t).map(|j| dp[[i, j]] * p[[i, j]]).sum();
                for j in 0..t {
                    ds[[i, j]] = p[[i, j]] * (dp[[i, j]] - dot) * scale;
                }
            }
            let dq = ds.dot(&k);
            let dk = ds.t().dot(&q);
            dqkv.slice_mut(s![rows.clone(), h * dh..(h + 1) * dh]).assign(&dq);
            dqkv.slice_mut(s![rows.clone(), d + h * dh..d + (h + 1) * dh])
                .assign(&dk);
            dqkv.slice_mut(s![rows.clone(), 2 * d + h * dh..2 * d + (h + 1) * dh])
                .assign(&dv);
        }
    }
    g.w_qkv = c.y1.t().dot(&dqkv);
    g.b_qkv = dqkv.sum_axis(Axis(0));
    let dy1 = dqkv.dot(&l.w_qkv.t());
    let mut dx = ln_backward(&dy1, &c.ln1, &l.ln1_g, &mut g.ln1_g, &mut g.ln1_b);
    dx += &dx_mid;
    dx
}

fn slice1<A>(a: &Array1<A>) -> &[A] {
    a.as_slice().expect("standard layout")
}

fn slice1_mut<A>(a: &mut Array1<A>) -> &mut [A] {
    a.as_slice_mut().expect("standard layout")
}

impl<A: Real> ParamSet<A> for ImageEncoder<A> {
    fn names(&self) -> Vec<String> {
        let mut v: Vec<String> = ["w_patch", "b_patch", "cls", "pos"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for i in 0..self.layers.len() {
            for n in [
                "ln1_g", "ln1_b", "w_qkv", "b_qkv", "w_o", "b_o", "ln2_g", "ln2_b", "w_fc1",
                "b_fc1", "w_fc2", "b_fc2",
            ] {
                v.push(format!("layer{i}.{n}"));
            }
        }
        v.extend(["lnf_g", "lnf_b", "w_out", "b_out"].iter().map(|s| s.to_string()));
        v
    }

    fn tensors(&self) -> Vec<&[A]> {
        let mut v = vec![
            slice2(&self.w_patch),
            slice1(&self.b_patch),
            slice1(&self.cls),
            slice2(&self.pos),
        ];
        for l in &self.layers {
            v.extend([
                slice1(&l.ln1_g),
                slice1(&l.ln1_b),
                slice2(&l.w_qkv),
                slice1(&l.b_qkv),
                slice2(&l.w_o),
                slice1(&l.b_o),
                slice1(&l.ln2_g),
                slice1(&l.ln2_b),
                slice2(&l.w_fc1),
                slice1(&l.b_fc1),
                slice2(&l.w_fc2),
                slice1(&l.b_fc2),
            ]);
        }
        v.extend([
            slice1(&self.lnf_g),
            slice1(&self.lnf_b),
            slice2(&self.w_out),
            slice1(&self.b_out),
        ]);
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut [A]> {
        let mut v = vec![
            slice2_mut(&mut self.w_patch),
            slice1_mut(&mut self.b_patch),
            slice1_mut(&mut self.cls),
            slice2_mut(&mut self.pos),
        ];
        for l in &mut self.layers {
            v.extend([
                slice1_mut(&mut l.ln1_g),
                slice1_mut(&mut l.ln1_b),
                slice2_mut(&mut l.w_qkv),
                slice1_mut(&mut l.b_qkv),
                slice2_mut(&mut l.w_o),
                slice1_mut(&mut l.b_o),
                slice1_mut(&mut l.ln2_g),
                slice1_mut(&mut l.ln2_b),
                slice2_mut(&mut l.w_fc1),
                slice1_mut(&mut l.b_fc1),
                slice2_mut(&mut l.w_fc2),
                slice1_mut(&mut l.b_fc2),
            ]);
        }
        v.extend([
            slice1_mut(&mut self.lnf_g),
            slice1_mut(&mut self.lnf_b),
            slice2_mut(&mut self.w_out),
            slice1_mut(&mut self.b_out),
        ]);
        v
    }
}

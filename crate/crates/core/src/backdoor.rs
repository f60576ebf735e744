//! Attention-guided patch replacement: low-attention ("non-causal") patches
//! are overwritten with the mean of their causal 8-neighbors before economic
//! training.

use std::path::Path;

use ndarray::{Array2, ArrayViewMut2};

use crate::encoder::{patchify, ImageEncoder, Real};
use crate::error::{Error, Result};
use crate::imagery::{Image, TilePixels, CHANNELS, TILE_PX};

/// Default fraction of patches marked non-causal.
pub const DEFAULT_Q: f64 = 0.30;
/// Tiles encoded together when computing attention maps.
const ATTENTION_BATCH: usize = 32;

/// How non-causal patches are chosen from an attention map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PartitionRule {
    /// The `ceil(q * g^2)` lowest-scoring patches.
    Quantile(f64),
    /// Every patch scoring strictly below a fixed threshold.
    Threshold(f64),
}

impl PartitionRule {
    /// True when the rule can never mark a patch non-causal.
    pub fn is_identity(&self) -> bool {
        match *self {
            PartitionRule::Quantile(q) => q == 0.0,
            PartitionRule::Threshold(t) => t <= 0.0,
        }
    }
}

/// Causal mask over a `grid x grid` patch layout, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchPartition {
    pub grid: usize,
    pub causal: Vec<bool>,
}

impl PatchPartition {
    pub fn all_causal(grid: usize) -> Self {
        PatchPartition {
            grid,
            causal: vec![true; grid * grid],
        }
    }

    pub fn non_causal(&self) -> Vec<usize> {
        (0..self.causal.len()).filter(|&i| !self.causal[i]).collect()
    }

    pub fn n_non_causal(&self) -> usize {
        self.causal.iter().filter(|c| !**c).count()
    }

    /// Causal 8-neighbors of patch `i` in row-major order.
    pub fn causal_neighbors(&self, i: usize) -> Vec<usize> {
        let g = self.grid as isize;
        let (r, c) = ((i / self.grid) as isize, (i % self.grid) as isize);
        let mut out = Vec::with_capacity(8);
        for dr in -1..=1 {
            for dc in -1..=1 {
                if dr == 0 && dc == 0 {
                    continue;
                }
                let (nr, nc) = (r + dr, c + dc);
                if nr < 0 || nc < 0 || nr >= g || nc >= g {
                    continue;
                }
                let j = (nr * g + nc) as usize;
                if self.causal[j] {
                    out.push(j);
                }
            }
        }
        out
    }

    /// For every non-causal patch, the causal patches averaged into it:
    /// its causal neighbors, or every causal patch when it has none.
    pub fn sources(&self) -> Vec<(usize, Vec<usize>)> {
        let all: Vec<usize> = (0..self.causal.len()).filter(|&i| self.causal[i]).collect();
        if all.is_empty() {
            return Vec::new();
        }
        self.non_causal()
            .into_iter()
            .map(|i| {
                let n = self.causal_neighbors(i);
                (i, if n.is_empty() { all.clone() } else { n })
            })
            .collect()
    }
}

fn grid_of(len: usize) -> Result<usize> {
    let g = (len as f64).sqrt().round() as usize;
    if g == 0 || g * g != len {
        return Err(Error::Domain(format!(
            "attention map of length {len} is not a square grid"
        )));
    }
    Ok(g)
}

/// Number of non-causal patches for quantile `q` over `n` patches. A tiny
/// slack keeps products such as `0.3 * 10` from rounding up past the integer.
pub fn non_causal_count(q: f64, n: usize) -> usize {
    ((q * n as f64 - 1e-9).ceil().max(0.0) as usize).min(n)
}

pub fn partition_patches(attention: &[f64], rule: PartitionRule) -> Result<PatchPartition> {
    let grid = grid_of(attention.len())?;
    if let Some(v) = attention.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(Error::Domain(format!("invalid attention score {v}")));
    }
    let mut causal = vec![true; attention.len()];
    match rule {
        PartitionRule::Quantile(q) => {
            if !(0.0..1.0).contains(&q) {
                return Err(Error::Domain(format!("q = {q} not in [0, 1)")));
            }
            let mut order: Vec<usize> = (0..attention.len()).collect();
            order.sort_by(|&a, &b| attention[a].total_cmp(&attention[b]).then(a.cmp(&b)));
            for &i in order.iter().take(non_causal_count(q, attention.len())) {
                causal[i] = false;
            }
        }
        PartitionRule::Threshold(t) => {
            for (c, a) in causal.iter_mut().zip(attention) {
                *c = *a >= t;
            }
        }
    }
    Ok(PatchPartition { grid, causal })
}

/// Replaces each non-causal patch with the pixel-wise mean of its source
/// patches (see [`PatchPartition::sources`]), read from the original image.
pub fn adjust_image(img: &Image, partition: &PatchPartition) -> Result<Image> {
    if img.height() != img.width() || partition.grid == 0 || img.height() % partition.grid != 0 {
        return Err(Error::Domain(format!(
            "{}x{} image cannot be split into a {}x{} patch grid",
            img.height(),
            img.width(),
            partition.grid,
            partition.grid
        )));
    }
    let p = img.height() / partition.grid;
    let g = partition.grid;
    let mut out = img.clone();
    let mut acc = vec![0.0f64; p * p * CHANNELS];
    for (target, sources) in partition.sources() {
        acc.fill(0.0);
        for &s in &sources {
            let (sy, sx) = ((s / g) * p, (s % g) * p);
            for y in 0..p {
                for x in 0..p {
                    for c in 0..CHANNELS {
                        acc[(y * p + x) * CHANNELS + c] += img.get(sy + y, sx + x, c);
                    }
                }
            }
        }
        let k = sources.len() as f64;
        let (ty, tx) = ((target / g) * p, (target % g) * p);
        for y in 0..p {
            for x in 0..p {
                for c in 0..CHANNELS {
                    out.set(ty + y, tx + x, c, acc[(y * p + x) * CHANNELS + c] / k);
                }
            }
        }
    }
    Ok(out)
}

/// Same replacement applied to a patch matrix (`N x patch_dim`, rows in
/// grid order), as fed to an encoder.
pub fn adjust_patch_rows<A: Real>(mut rows: ArrayViewMut2<A>, partition: &PatchPartition) {
    let sources = partition.sources();
    if sources.is_empty() {
        return;
    }
    let original = rows.to_owned();
    for (target, src) in sources {
        let mut acc = vec![0.0f64; original.ncols()];
        for &s in &src {
            for (a, v) in acc.iter_mut().zip(original.row(s)) {
                *a += v.as_f64();
            }
        }
        let k = src.len() as f64;
        for (dst, a) in rows.row_mut(target).iter_mut().zip(&acc) {
            *dst = A::of(a / k);
        }
    }
}

/// Partitions for a tile set, computed once from a frozen encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjustedDataset {
    pub rule: PartitionRule,
    pub partitions: Vec<PatchPartition>,
}

impl AdjustedDataset {
    /// Adjusted image of tile `i` (the tile list must be the one passed to
    /// [`adjust_dataset`]).
    pub fn image(&self, i: usize, tile: &TilePixels) -> Result<Image> {
        adjust_image(&tile.to_image(), &self.partitions[i])
    }

    /// Writes `<tile_id>.png` for every adjusted tile.
    pub fn write_pngs(&self, tiles: &[(&str, &TilePixels)], dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (i, (id, px)) in tiles.iter().enumerate() {
            self.image(i, px)?.write_png(&dir.join(format!("{id}.png")))?;
        }
        Ok(())
    }
}

/// Attention maps of `encoder` for every tile, in input order.
pub fn attention_maps<A: Real>(
    tiles: &[&TilePixels],
    encoder: &ImageEncoder<A>,
) -> Result<Vec<Vec<f64>>> {
    let cfg = encoder.config;
    let n = cfg.n_patches();
    let mut maps = Vec::with_capacity(tiles.len());
    for chunk in tiles.chunks(ATTENTION_BATCH) {
        let mut x = Array2::<A>::zeros((chunk.len() * n, cfg.patch_dim()));
        for (b, px) in chunk.iter().enumerate() {
            patchify(
                px,
                cfg.patch_px,
                x.slice_mut(ndarray::s![b * n..(b + 1) * n, ..]),
            );
        }
        let (_, m, _) = encoder.forward(x.view())?;
        maps.extend(m);
    }
    Ok(maps)
}

/// Computes every tile's partition from the frozen morphological encoder.
/// With an identity rule no encoder pass is made and all patches stay causal.
pub fn adjust_dataset<A: Real>(
    tiles: &[&TilePixels],
    morph_encoder: &ImageEncoder<A>,
    rule: PartitionRule,
) -> Result<AdjustedDataset> {
    let grid = morph_encoder.config.grid();
    let partitions = if rule.is_identity() {
        vec![PatchPartition::all_causal(grid); tiles.len()]
    } else {
        attention_maps(tiles, morph_encoder)?
            .iter()
            .map(|m| partition_patches(m, rule))
            .collect::<Result<_>>()?
    };
    Ok(AdjustedDataset { rule, partitions })
}

/// Patch indices (for `patch_px` patches) covered at least half by the pixel
/// rectangle `(x0, y0, x1, y1)`.
pub fn patches_covered(rect: (usize, usize, usize, usize), patch_px: usize) -> Vec<usize> {
    let g = TILE_PX / patch_px;
    let (x0, y0, x1, y1) = rect;
    let mut out = Vec::new();
    for r in 0..g {
        for c in 0..g {
            let ox = (x1.min((c + 1) * patch_px)).saturating_sub(x0.max(c * patch_px));
            let oy = (y1.min((r + 1) * patch_px)).saturating_sub(y0.max(r * patch_px));
            if 2 * ox * oy >= patch_px * patch_px {
                out.push(r * g + c);
            }
        }
    }
    out
}

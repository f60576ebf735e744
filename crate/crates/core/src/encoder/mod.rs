//! Tiny patch-transformer image encoders, the POI encoder and the linear
//! projection heads, with hand-written backward passes.
//!
//! All modules are generic over [`Real`] so tests can run in `f64` and
//! training in `f32`.

mod image;
mod init;
mod poi;
mod projection;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{Array2, LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive};

pub use image::{patchify, patchify_image, AttentionMap, ForwardCache, ImageEncoder, Layer};
pub use init::init_params;
pub use poi::{PoiCache, PoiEncoder};
pub use projection::Projection;

use crate::error::{Error, Result};
use crate::imagery::TILE_PX;

/// Floating-point element type of encoder parameters and activations.
pub trait Real:
    LinalgScalar
    + Float
    + FromPrimitive
    + ScalarOperand
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Send
    + Sync
    + Debug
    + Display
    + 'static
{
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("representable constant")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite conversion")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Architecture hyperparameters of an image encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EncoderConfig {
    pub patch_px: usize,
    pub embed_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            patch_px: 32,
            embed_dim: 64,
            layers: 2,
            heads: 4,
            mlp_ratio: 2,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_px == 0 || TILE_PX % self.patch_px != 0 {
            return Err(Error::Config(format!(
                "patch size {} does not divide {TILE_PX}",
                self.patch_px
            )));
        }
        if self.embed_dim == 0 || self.heads == 0 || self.embed_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "embed dim {} not divisible by {} heads",
                self.embed_dim, self.heads
            )));
        }
        if self.layers == 0 || self.mlp_ratio == 0 {
            return Err(Error::Config("layers and mlp_ratio must be positive".into()));
        }
        Ok(())
    }

    /// Patches per side.
    pub fn grid(&self) -> usize {
        TILE_PX / self.patch_px
    }

    pub fn n_patches(&self) -> usize {
        self.grid() * self.grid()
    }

    /// Patches plus the summary token.
    pub fn n_tokens(&self) -> usize {
        self.n_patches() + 1
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_px * self.patch_px * crate::imagery::CHANNELS
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }
}

/// A collection of parameter tensors with a fixed declaration order, used by
/// the optimizer and the checkpoint format.
pub trait ParamSet<A: Real>: Clone {
    fn names(&self) -> Vec<String>;
    fn tensors(&self) -> Vec<&[A]>;
    fn tensors_mut(&mut self) -> Vec<&mut [A]>;

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(A::zero());
        }
        z
    }

    fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Element-wise `self += other`.
    fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
    }

    fn to_f64(&self) -> Vec<Vec<f64>> {
        self.tensors()
            .iter()
            .map(|t| t.iter().map(|v| v.as_f64()).collect())
            .collect()
    }

    /// Overwrites every tensor from `f64` values in declaration order.
    fn load_f64(&mut self, values: &[Vec<f64>]) -> Result<()> {
        let mut tensors = self.tensors_mut();
        if tensors.len() != values.len() {
            return Err(Error::Format(format!(
                "expected {} tensors, found {}",
                tensors.len(),
                values.len()
            )));
        }
        for (i, (t, v)) in tensors.iter_mut().zip(values).enumerate() {
            if t.len() != v.len() {
                return Err(Error::Format(format!(
                    "tensor {i}: expected {} values, found {}",
                    t.len(),
                    v.len()
                )));
            }
            for (x, y) in t.iter_mut().zip(v) {
                *x = A::of(*y);
            }
        }
        Ok(())
    }
}

pub(crate) fn slice2<A>(a: &Array2<A>) -> &[A] {
    a.as_slice().expect("standard layout")
}

pub(crate) fn slice2_mut<A>(a: &mut Array2<A>) -> &mut [A] {
    a.as_slice_mut().expect("standard layout")
}

pub(crate) fn check_finite<A: Real>(a: &Array2<A>, what: &str) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(format!("non-finite activations in {what}")))
    }
}

/// Row-wise layer normalization: `y = (x - mean) / sqrt(var + eps) * g + b`.
pub(crate) const LN_EPS: f64 = 1e-5;

pub(crate) struct LnCache<A> {
    pub xhat: Array2<A>,
    pub inv_std: Vec<A>,
}

pub(crate) fn ln_forward<A: Real>(
    x: &Array2<A>,
    g: &ndarray::Array1<A>,
    b: &ndarray::Array1<A>,
) -> (Array2<A>, LnCache<A>) {
    let (rows, d) = x.dim();
    let dn = A::of(d as f64);
    let eps = A::of(LN_EPS);
    let mut xhat = Array2::zeros((rows, d));
    let mut y = Array2::zeros((rows, d));
    let mut inv_std = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = x.row(r);
        let mean = row.iter().copied().sum::<A>() / dn;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<A>() / dn;
        let is = A::one() / (var + eps).sqrt();
        inv_std.push(is);
        for k in 0..d {
            let h = (row[k] - mean) * is;
            xhat[[r, k]] = h;
            y[[r, k]] = h * g[k] + b[k];
        }
    }
    (y, LnCache { xhat, inv_std })
}

/// Returns `dx` and accumulates `dg`, `db`.
pub(crate) fn ln_backward<A: Real>(
    dy: &Array2<A>,
    cache: &LnCache<A>,
    g: &ndarray::Array1<A>,
    dg: &mut ndarray::Array1<A>,
    db: &mut ndarray::Array1<A>,
) -> Array2<A> {
    let (rows, d) = dy.dim();
    let dn = A::of(d as f64);
    let mut dx = Array2::zeros((rows, d));
    let mut dxhat = vec![A::zero(); d];
    for r in 0..rows {
        let mut mean_dxhat = A::zero();
        let mut mean_dxhat_xhat = A::zero();
        for k in 0..d {
            let v = dy[[r, k]];
            let h = cache.xhat[[r, k]];
            dg[k] += v * h;
            db[k] += v;
            dxhat[k] = v * g[k];
            mean_dxhat += dxhat[k];
            mean_dxhat_xhat += dxhat[k] * h;
        }
        mean_dxhat /= dn;
        mean_dxhat_xhat /= dn;
        let is = cache.inv_std[r];
        for k in 0..d {
            dx[[r, k]] = is * (dxhat[k] - mean_dxhat - cache.xhat[[r, k]] * mean_dxhat_xhat);
        }
    }
    dx
}

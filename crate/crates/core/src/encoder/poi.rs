use ndarray::{Array1, Array2, ArrayView2, Axis};

use super::init::Init;
use super::{check_finite, slice2, slice2_mut, ParamSet, Real};
use crate::error::{Error, Result};
use crate::traitsets::{PoiEmbeddingTable, N_CATEGORIES};

/// Learnable POI category table plus a two-layer ReLU perceptron mapping the
/// gravity vector to the image-embedding space.
#[derive(Debug, Clone, PartialEq)]
pub struct PoiEncoder<A> {
    /// `4 x D_p`, one row per category.
    pub table: Array2<A>,
    pub w1: Array2<A>,
    pub b1: Array1<A>,
    pub w2: Array2<A>,
    pub b2: Array1<A>,
}

pub struct PoiCache<A> {
    coefs: Option<Array2<A>>,
    gravity: Array2<A>,
    pre: Array2<A>,
    h: Array2<A>,
}

impl<A: Real> PoiEncoder<A> {
    pub fn init(poi_dim: usize, embed_dim: usize, seed: u64) -> Self {
        let mut init = Init::new(seed);
        PoiEncoder {
            table: init.uniform2(N_CATEGORIES, poi_dim, 1.0),
            w1: init.linear(poi_dim, embed_dim),
            b1: Array1::zeros(embed_dim),
            w2: init.linear(embed_dim, embed_dim),
            b2: Array1::zeros(embed_dim),
        }
    }

    pub fn poi_dim(&self) -> usize {
        self.table.ncols()
    }

    pub fn embedding_table(&self) -> PoiEmbeddingTable {
        PoiEmbeddingTable {
            dim: self.poi_dim(),
            data: self.table.iter().map(|v| v.as_f64()).collect(),
        }
    }

    /// Gravity vectors `sum_j c_j p_j` for a `B x 4` matrix of coefficients.
    pub fn gravity(&self, coefs: ArrayView2<A>) -> Array2<A> {
        coefs.dot(&self.table)
    }

    /// Encodes `B x D_p` gravity vectors.
    pub fn encode_gravity(&self, gravity: ArrayView2<A>) -> Result<(Array2<A>, PoiCache<A>)> {
        if gravity.ncols() != self.poi_dim() {
            return Err(Error::Domain(format!(
                "gravity vectors have {} columns, encoder expects {}",
                gravity.ncols(),
                self.poi_dim()
            )));
        }
        let gravity = gravity.to_owned();
        check_finite(&gravity, "POI encoder input")?;
        let pre = gravity.dot(&self.w1) + &self.b1;
        let h = pre.mapv(|v| v.max(A::zero()));
        let out = h.dot(&self.w2) + &self.b2;
        check_finite(&out, "POI encoder output")?;
        Ok((
            out,
            PoiCache {
                coefs: None,
                gravity,
                pre,
                h,
            },
        ))
    }

    /// Encodes from gravity coefficients (`B x 4`), so the table receives
    /// gradients too.
    pub fn forward(&self, coefs: ArrayView2<A>) -> Result<(Array2<A>, PoiCache<A>)> {
        if coefs.ncols() != N_CATEGORIES {
            return Err(Error::Domain(format!(
                "expected {N_CATEGORIES} gravity coefficients, got {}",
                coefs.ncols()
            )));
        }
        let (out, mut cache) = self.encode_gravity(self.gravity(coefs).view())?;
        cache.coefs = Some(coefs.to_owned());
        Ok((out, cache))
    }

    /// First-layer pre-activations of the last forward pass.
    pub fn pre_activations<'a>(&self, cache: &'a PoiCache<A>) -> &'a Array2<A> {
        &cache.pre
    }

    pub fn backward(&self, cache: &PoiCache<A>, d_out: &Array2<A>) -> Self {
        let mut g = self.zeros_like();
        g.w2 = cache.h.t().dot(d_out);
        g.b2 = d_out.sum_axis(Axis(0));
        let mut dpre = d_out.dot(&self.w2.t());
        ndarray::Zip::from(&mut dpre).and(&cache.pre).for_each(|d, &p| {
            if p <= A::zero() {
                *d = A::zero();
            }
        });
        g.w1 = cache.gravity.t().dot(&dpre);
        g.b1 = dpre.sum_axis(Axis(0));
        if let Some(coefs) = &cache.coefs {
            let dg = dpre.dot(&self.w1.t());
            g.table = coefs.t().dot(&dg);
        }
        g
    }
}

impl<A: Real> ParamSet<A> for PoiEncoder<A> {
    fn names(&self) -> Vec<String> {
        ["poi_table", "poi_w1", "poi_b1", "poi_w2", "poi_b2"]
            .iter()
            .map(|s| s.to_string())
            .collect()
    }

    fn tensors(&self) -> Vec<&[A]> {
        vec![
            slice2(&self.table),
            self.w1.as_slice().expect("standard layout"),
            self.b1.as_slice().expect("standard layout"),
            slice2(&self.w2),
            self.b2.as_slice().expect("standard layout"),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [A]> {
        vec![
            slice2_mut(&mut self.table),
            self.w1.as_slice_mut().expect("standard layout"),
            self.b1.as_slice_mut().expect("standard layout"),
            slice2_mut(&mut self.w2),
            self.b2.as_slice_mut().expect("standard layout"),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn jittered(seed: u64) -> PoiEncoder<f64> {
        let mut enc = PoiEncoder::<f64>::init(6, 5, seed);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed + 100);
        for t in enc.tensors_mut() {
            for v in t.iter_mut() {
                *v += rng.random_range(-0.2..0.2);
            }
        }
        enc
    }

    #[test]
    fn zero_input_zero_bias_gives_zero() {
        let enc = PoiEncoder::<f64>::init(6, 5, 1);
        let (out, _) = enc.encode_gravity(Array2::zeros((2, 6)).view()).unwrap();
        assert!(out.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn pre_activations_scale_linearly() {
        let mut enc = jittered(2);
        enc.b1.fill(0.0);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let g = Array2::from_shape_fn((3, 6), |_| rng.random_range(-1.0..1.0));
        let (_, c1) = enc.encode_gravity(g.view()).unwrap();
        let (_, c2) = enc.encode_gravity((&g * 2.0).view()).unwrap();
        for (a, b) in enc.pre_activations(&c1).iter().zip(enc.pre_activations(&c2)) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_layer_by_layer_oracle() {
        let enc = jittered(4);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let g = Array2::from_shape_fn((4, 6), |_| rng.random_range(-2.0..2.0));
        let (out, _) = enc.encode_gravity(g.view()).unwrap();
        for b in 0..4 {
            let mut h = vec![0.0; 5];
            for (k, hk) in h.iter_mut().enumerate() {
                let mut s = enc.b1[k];
                for i in 0..6 {
                    s += g[[b, i]] * enc.w1[[i, k]];
                }
                *hk = s.max(0.0);
            }
            for k in 0..5 {
                let mut s = enc.b2[k];
                for (i, hi) in h.iter().enumerate() {
                    s += hi * enc.w2[[i, k]];
                }
                assert!((s - out[[b, k]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let enc = jittered(6);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let coefs = Array2::from_shape_fn((3, 4), |_| rng.random_range(0.1..3.0));
        let w = Array2::from_shape_fn((3, 5), |_| rng.random_range(-1.0..1.0));
        let loss = |e: &PoiEncoder<f64>| (&e.forward(coefs.view()).unwrap().0 * &w).sum();
        let (_, cache) = enc.forward(coefs.view()).unwrap();
        let grad = enc.backward(&cache, &w);
        let h = 1e-6;
        for (ti, t) in grad.tensors().iter().enumerate() {
            for (idx, an) in t.iter().enumerate() {
                let mut p = enc.clone();
                p.tensors_mut()[ti][idx] += h;
                let mut m = enc.clone();
                m.tensors_mut()[ti][idx] -= h;
                let fd = (loss(&p) - loss(&m)) / (2.0 * h);
                assert!((fd - an).abs() < 1e-6 * fd.abs().max(1.0), "tensor {ti}[{idx}]");
            }
        }
    }
}

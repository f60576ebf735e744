use ndarray::{Array2, ArrayView2};

use super::init::Init;
use super::{slice2, slice2_mut, ParamSet, Real};
use crate::error::{Error, Result};

/// Linear map `W` (`k x D`) from embeddings to `k` scores, no bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection<A> {
    pub weight: Array2<A>,
}

impl<A: Real> Projection<A> {
    pub fn init(outputs: usize, embed_dim: usize, seed: u64) -> Self {
        let mut init = Init::new(seed);
        Projection {
            weight: init.uniform2(outputs, embed_dim, 1.0 / (embed_dim as f64).sqrt()),
        }
    }

    pub fn outputs(&self) -> usize {
        self.weight.nrows()
    }

    /// Scores `E W^T` for a `B x D` embedding matrix.
    pub fn project(&self, emb: ArrayView2<A>) -> Result<Array2<A>> {
        if emb.ncols() != self.weight.ncols() {
            return Err(Error::Domain(format!(
                "embedding dim {} does not match projection input {}",
                emb.ncols(),
                self.weight.ncols()
            )));
        }
        Ok(emb.dot(&self.weight.t()))
    }

    /// Returns `(dW, dE)` for upstream score gradients `d_scores` (`B x k`).
    pub fn backward(&self, emb: ArrayView2<A>, d_scores: &Array2<A>) -> (Self, Array2<A>) {
        let dw = d_scores.t().dot(&emb);
        let de = d_scores.dot(&self.weight);
        (Projection { weight: dw }, de)
    }
}

impl<A: Real> ParamSet<A> for Projection<A> {
    fn names(&self) -> Vec<String> {
        vec!["head".to_string()]
    }

    fn tensors(&self) -> Vec<&[A]> {
        vec![slice2(&self.weight)]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [A]> {
        vec![slice2_mut(&mut self.weight)]
    }
}

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{EncoderConfig, ImageEncoder, Layer, Real};

/// Bound for summary-token and positional-table entries.
pub(crate) const EMBED_INIT_BOUND: f64 = 0.02;

pub(crate) struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub(crate) fn new(seed: u64) -> Self {
        Init {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub(crate) fn uniform2<A: Real>(&mut self, rows: usize, cols: usize, bound: f64) -> Array2<A> {
        Array2::from_shape_simple_fn((rows, cols), || A::of(self.rng.random_range(-bound..=bound)))
    }

    pub(crate) fn uniform1<A: Real>(&mut self, len: usize, bound: f64) -> Array1<A> {
        Array1::from_shape_simple_fn(len, || A::of(self.rng.random_range(-bound..=bound)))
    }

    /// Weight matrix `fan_in x fan_out` with entries in `±1/sqrt(fan_in)`.
    pub(crate) fn linear<A: Real>(&mut self, fan_in: usize, fan_out: usize) -> Array2<A> {
        self.uniform2(fan_in, fan_out, 1.0 / (fan_in as f64).sqrt())
    }
}

/// Seeded initialization: linear weights uniform in `±1/sqrt(fan_in)`,
/// biases zero, layer-norm gains one, summary token and positions uniform
/// in `±0.02`. Bit-reproducible for a given `config.seed`.
pub fn init_params<A: Real>(config: &EncoderConfig) -> ImageEncoder<A> {
    let mut init = Init::new(config.seed);
    let d = config.embed_dim;
    let hidden = d * config.mlp_ratio;
    let w_patch = init.linear(config.patch_dim(), d);
    let cls = init.uniform1(d, EMBED_INIT_BOUND);
    let pos = init.uniform2(config.n_tokens(), d, EMBED_INIT_BOUND);
    let layers = (0..config.layers)
        .map(|_| Layer {
            ln1_g: Array1::ones(d),
            ln1_b: Array1::zeros(d),
            w_qkv: init.linear(d, 3 * d),
            b_qkv: Array1::zeros(3 * d),
            w_o: init.linear(d, d),
            b_o: Array1::zeros(d),
            ln2_g: Array1::ones(d),
            ln2_b: Array1::zeros(d),
            w_fc1: init.linear(d, hidden),
            b_fc1: Array1::zeros(hidden),
            w_fc2: init.linear(hidden, d),
            b_fc2: Array1::zeros(d),
        })
        .collect();
    let w_out = init.linear(d, d);
    ImageEncoder {
        config: *config,
        w_patch,
        b_patch: Array1::zeros(d),
        cls,
        pos,
        layers,
        lnf_g: Array1::ones(d),
        lnf_b: Array1::zeros(d),
        w_out,
        b_out: Array1::zeros(d),
    }
}

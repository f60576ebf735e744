//! Training objectives with analytic gradients: image-to-POI InfoNCE, the
//! radius multi-label BCE, their weighted sum, and negative Pearson
//! correlation.
//!
//! Losses work in `f64` on small batch matrices; encoders convert at the
//! boundary.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

pub const TAU_INIT: f64 = 0.07;
pub const TAU_MIN: f64 = 0.01;
pub const TAU_MAX: f64 = 100.0;
/// Prediction standard deviation below which a Pearson batch is degenerate.
pub const PEARSON_STD_FLOOR: f64 = 1e-12;
const NORM_FLOOR: f64 = 1e-12;

/// Learnable contrastive temperature, stored as `ln tau`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Temperature {
    pub log_tau: f64,
}

impl Default for Temperature {
    fn default() -> Self {
        Temperature {
            log_tau: TAU_INIT.ln(),
        }
    }
}

impl Temperature {
    pub fn tau(&self) -> f64 {
        self.log_tau.clamp(TAU_MIN.ln(), TAU_MAX.ln()).exp()
    }

    /// Keeps `tau` inside `[TAU_MIN, TAU_MAX]`.
    pub fn clamp(&mut self) {
        self.log_tau = self.log_tau.clamp(TAU_MIN.ln(), TAU_MAX.ln());
    }

    fn is_clamped(&self) -> bool {
        self.log_tau < TAU_MIN.ln() || self.log_tau > TAU_MAX.ln()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveLoss {
    pub loss: f64,
    /// Per-row losses, in batch order.
    pub rows: Vec<f64>,
    pub d_img: Array2<f64>,
    pub d_poi: Array2<f64>,
    pub d_log_tau: f64,
}

fn normalize_rows(e: ArrayView2<f64>, what: &str) -> Result<(Array2<f64>, Vec<f64>)> {
    let mut u = e.to_owned();
    let mut norms = Vec::with_capacity(e.nrows());
    for (i, mut row) in u.rows_mut().into_iter().enumerate() {
        let n = row.dot(&row).sqrt();
        if !(n > NORM_FLOOR) || !n.is_finite() {
            return Err(Error::Numeric(format!("{what} embedding {i} has norm {n}")));
        }
        row /= n;
        norms.push(n);
    }
    Ok((u, norms))
}

/// Gradient through `u = e / |e|`.
fn normalize_backward(u: &Array2<f64>, norms: &[f64], du: &Array2<f64>) -> Array2<f64> {
    let mut de = du.clone();
    for (i, mut row) in de.rows_mut().into_iter().enumerate() {
        let ui = u.row(i);
        let proj = ui.dot(&du.row(i));
        row.zip_mut_with(&ui, |d, &uv| *d = (*d - uv * proj) / norms[i]);
    }
    de
}

/// Mean over rows of `-log softmax_j(cos(e_i, p_j) / tau)[i]`, the image to
/// POI direction only.
pub fn contrastive_loss(
    e_img: ArrayView2<f64>,
    e_poi: ArrayView2<f64>,
    temperature: Temperature,
) -> Result<ContrastiveLoss> {
    let b = e_img.nrows();
    if b == 0 {
        return Err(Error::Domain("contrastive loss needs a non-empty batch".into()));
    }
    if e_poi.dim() != e_img.dim() {
        return Err(Error::Domain(format!(
            "image embeddings {:?} and POI embeddings {:?} differ in shape",
            e_img.dim(),
            e_poi.dim()
        )));
    }
    let (u, nu) = normalize_rows(e_img, "image")?;
    let (v, nv) = normalize_rows(e_poi, "POI")?;
    let tau = temperature.tau();
    let sim = u.dot(&v.t());
    let bf = b as f64;

    let mut rows = Vec::with_capacity(b);
    let mut dz = Array2::<f64>::zeros((b, b));
    for i in 0..b {
        let z = sim.row(i).mapv(|s| s / tau);
        let max = z.fold(f64::NEG_INFINITY, |a, &x| a.max(x));
        let sum: f64 = z.iter().map(|&x| (x - max).exp()).sum();
        let lse = max + sum.ln();
        rows.push(lse - z[i]);
        for j in 0..b {
            let p = (z[j] - lse).exp();
            dz[[i, j]] = (p - if i == j { 1.0 } else { 0.0 }) / bf;
        }
    }
    let loss = rows.iter().sum::<f64>() / bf;

    let ds = &dz / tau;
    let du = ds.dot(&v);
    let dv = ds.t().dot(&u);
    let d_log_tau = if temperature.is_clamped() {
        0.0
    } else {
        -(&dz * &sim).sum() / tau
    };
    Ok(ContrastiveLoss {
        loss,
        rows,
        d_img: normalize_backward(&u, &nu, &du),
        d_poi: normalize_backward(&v, &nv, &dv),
        d_log_tau,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossWithGrad {
    pub loss: f64,
    pub grad: Array2<f64>,
}

/// Mean binary cross-entropy over all `B x K` entries, via
/// `max(z, 0) - z y + ln(1 + exp(-|z|))`.
pub fn precondition_loss(logits: ArrayView2<f64>, labels: ArrayView2<f64>) -> Result<LossWithGrad> {
    if logits.dim() != labels.dim() {
        return Err(Error::Domain(format!(
            "logits {:?} and labels {:?} differ in shape",
            logits.dim(),
            labels.dim()
        )));
    }
    if logits.is_empty() {
        return Err(Error::Domain("precondition loss needs a non-empty batch".into()));
    }
    if let Some(y) = labels.iter().find(|&&y| y != 0.0 && y != 1.0) {
        return Err(Error::Domain(format!("label {y} is not 0 or 1")));
    }
    let n = logits.len() as f64;
    let mut loss = 0.0;
    let mut grad = Array2::zeros(logits.dim());
    ndarray::Zip::from(&mut grad)
        .and(&logits)
        .and(&labels)
        .for_each(|g, &z, &y| {
            loss += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
            *g = (sigmoid(z) - y) / n;
        });
    Ok(LossWithGrad { loss: loss / n, grad })
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `L_c + lambda * L_p`. Gradients combine the same way.
pub fn combined_access_loss(l_c: f64, l_p: f64, lambda: f64) -> f64 {
    l_c + lambda * l_p
}

#[derive(Debug, Clone, PartialEq)]
pub struct PearsonLoss {
    /// `-R`, or 0 for a degenerate batch.
    pub loss: f64,
    pub grad: Array1<f64>,
    /// Predictions had (near) zero spread; the step should be skipped.
    pub degenerate: bool,
}

/// Negative Pearson correlation between predictions and targets, with
/// gradient `-(t_hat - R p_hat) / (B sigma_p)` where hats are standardized
/// vectors and `sigma_p` the population standard deviation.
pub fn pearson_loss(pred: ArrayView1<f64>, target: ArrayView1<f64>) -> Result<PearsonLoss> {
    let b = pred.len();
    if b != target.len() {
        return Err(Error::Domain(format!(
            "{b} predictions for {} targets",
            target.len()
        )));
    }
    if b < 2 {
        return Err(Error::Domain("Pearson loss needs at least 2 samples".into()));
    }
    let bf = b as f64;
    let pc = &pred - pred.sum() / bf;
    let tc = &target - target.sum() / bf;
    let sp = (pc.dot(&pc) / bf).sqrt();
    let st = (tc.dot(&tc) / bf).sqrt();
    if !(st > 0.0) {
        return Err(Error::UndefinedMetric(
            "Pearson loss with zero target variance".into(),
        ));
    }
    if !(sp >= PEARSON_STD_FLOOR) {
        return Ok(PearsonLoss {
            loss: 0.0,
            grad: Array1::zeros(b),
            degenerate: true,
        });
    }
    let ph = &pc / sp;
    let th = &tc / st;
    let r = ph.dot(&th) / bf;
    let grad = (&ph * r - &th) / (bf * sp);
    Ok(PearsonLoss {
        loss: -r,
        grad,
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Axis};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
        rand_chacha::ChaCha8Rng::seed_from_u64(seed)
    }

    fn random(r: &mut rand_chacha::ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| r.random_range(-1.0..1.0))
    }

    #[test]
    fn contrastive_single_row_is_zero() {
        let e = array![[1.0, 2.0, 3.0]];
        let p = array![[-1.0, 0.5, 0.0]];
        let l = contrastive_loss(e.view(), p.view(), Temperature::default()).unwrap();
        assert_eq!(l.loss, 0.0);
    }

    #[test]
    fn contrastive_orthogonal_pairs() {
        let e = array![[1.0, 0.0], [0.0, 1.0]];
        let l = contrastive_loss(e.view(), e.view(), Temperature { log_tau: 0.0 }).unwrap();
        let expected = (1.0 + (-1.0f64).exp()).ln();
        assert!((l.loss - expected).abs() < 1e-15);
        assert!((expected - 0.3133).abs() < 1e-4);
    }

    #[test]
    fn contrastive_errors() {
        let e = Array2::<f64>::zeros((0, 3));
        assert!(matches!(
            contrastive_loss(e.view(), e.view(), Temperature::default()),
            Err(Error::Domain(_))
        ));
        let e = array![[0.0, 0.0], [1.0, 0.0]];
        assert!(matches!(
            contrastive_loss(e.view(), e.view(), Temperature::default()),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn contrastive_matches_log_sum_exp_oracle() {
        let mut r = rng(1);
        for _ in 0..20 {
            let b = r.random_range(1..7);
            let e = random(&mut r, b, 5);
            let p = random(&mut r, b, 5);
            let t = Temperature { log_tau: r.random_range(-3.0..1.0) };
            let l = contrastive_loss(e.view(), p.view(), t).unwrap();
            let tau = t.log_tau.exp();
            let mut total = 0.0;
            for i in 0..b {
                let ni = e.row(i).dot(&e.row(i)).sqrt();
                let logits: Vec<f64> = (0..b)
                    .map(|j| {
                        let nj = p.row(j).dot(&p.row(j)).sqrt();
                        e.row(i).dot(&p.row(j)) / (ni * nj) / tau
                    })
                    .collect();
                let denom: f64 = logits.iter().map(|z| z.exp()).sum();
                total += -(logits[i].exp() / denom).ln();
            }
            assert!((l.loss - total / b as f64).abs() < 1e-10);
        }
    }

    #[test]
    fn contrastive_gradients_match_fd() {
        let mut r = rng(2);
        let h = 1e-6;
        for _ in 0..10 {
            let b = r.random_range(2..6);
            let e = random(&mut r, b, 4);
            let p = random(&mut r, b, 4);
            let t = Temperature { log_tau: r.random_range(-2.0..0.5) };
            let l = contrastive_loss(e.view(), p.view(), t).unwrap();
            let f = |e: &Array2<f64>, p: &Array2<f64>, t: f64| {
                contrastive_loss(e.view(), p.view(), Temperature { log_tau: t }).unwrap().loss
            };
            for idx in 0..e.len() {
                let (i, k) = (idx / 4, idx % 4);
                let mut ep = e.clone();
                ep[[i, k]] += h;
                let mut em = e.clone();
                em[[i, k]] -= h;
                let fd = (f(&ep, &p, t.log_tau) - f(&em, &p, t.log_tau)) / (2.0 * h);
                assert!((fd - l.d_img[[i, k]]).abs() < 1e-6 * fd.abs().max(1.0));
                let mut pp = p.clone();
                pp[[i, k]] += h;
                let mut pm = p.clone();
                pm[[i, k]] -= h;
                let fd = (f(&e, &pp, t.log_tau) - f(&e, &pm, t.log_tau)) / (2.0 * h);
                assert!((fd - l.d_poi[[i, k]]).abs() < 1e-6 * fd.abs().max(1.0));
            }
            let fd = (f(&e, &p, t.log_tau + h) - f(&e, &p, t.log_tau - h)) / (2.0 * h);
            assert!((fd - l.d_log_tau).abs() < 1e-6 * fd.abs().max(1.0));
        }
    }

    #[test]
    fn temperature_clamped() {
        let t = Temperature { log_tau: 10.0 };
        assert!((t.tau() - TAU_MAX).abs() < 1e-12);
        let mut t = Temperature { log_tau: -10.0 };
        assert!((t.tau() - TAU_MIN).abs() < 1e-15);
        t.clamp();
        assert!((t.log_tau - TAU_MIN.ln()).abs() < 1e-15);
        assert!((Temperature::default().tau() - 0.07).abs() < 1e-15);
    }

    #[test]
    fn precondition_examples() {
        let z = Array2::zeros((3, 4));
        let y = Array2::from_shape_fn((3, 4), |(i, j)| ((i + j) % 2) as f64);
        let l = precondition_loss(z.view(), y.view()).unwrap();
        assert!((l.loss - 2f64.ln()).abs() < 1e-15);

        let l = precondition_loss(array![[40.0]].view(), array![[1.0]].view()).unwrap();
        assert!(l.loss.is_finite() && l.loss < 1e-17);
        let l = precondition_loss(array![[-800.0]].view(), array![[1.0]].view()).unwrap();
        assert_eq!(l.loss, 800.0);

        assert!(precondition_loss(array![[0.0]].view(), array![[0.5]].view()).is_err());
    }

    #[test]
    fn precondition_matches_direct_oracle_and_fd() {
        let mut r = rng(3);
        for _ in 0..20 {
            let b = r.random_range(1..6);
            let z = random(&mut r, b, 4) * 6.0;
            let y = Array2::from_shape_fn((b, 4), |_| if r.random::<bool>() { 1.0 } else { 0.0 });
            let l = precondition_loss(z.view(), y.view()).unwrap();
            let direct: f64 = z
                .iter()
                .zip(y.iter())
                .map(|(&z, &y)| {
                    let s = 1.0 / (1.0 + (-z).exp());
                    -(y * s.ln() + (1.0 - y) * (1.0 - s).ln())
                })
                .sum::<f64>()
                / (4 * b) as f64;
            assert!((l.loss - direct).abs() < 1e-10);
            let h = 1e-6;
            for idx in 0..z.len() {
                let (i, k) = (idx / 4, idx % 4);
                let mut zp = z.clone();
                zp[[i, k]] += h;
                let mut zm = z.clone();
                zm[[i, k]] -= h;
                let fd = (precondition_loss(zp.view(), y.view()).unwrap().loss
                    - precondition_loss(zm.view(), y.view()).unwrap().loss)
                    / (2.0 * h);
                assert!((fd - l.grad[[i, k]]).abs() < 1e-6 * fd.abs().max(1.0));
            }
        }
    }

    #[test]
    fn combined_examples() {
        assert_eq!(combined_access_loss(0.7, 5.0, 0.0), 0.7);
        assert!((combined_access_loss(1.0, 2.0, 0.1) - 1.2).abs() < 1e-15);
    }

    #[test]
    fn pearson_examples() {
        let t = array![1.0, 3.0, 2.0, 7.0, -1.0];
        let p = &t * 2.0 + 3.0;
        assert!((pearson_loss(p.view(), t.view()).unwrap().loss + 1.0).abs() < 1e-12);
        let p = -&t;
        assert!((pearson_loss(p.view(), t.view()).unwrap().loss - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pearson_degenerate_and_errors() {
        let t = array![1.0, 2.0, 3.0];
        let l = pearson_loss(array![4.0, 4.0, 4.0].view(), t.view()).unwrap();
        assert!(l.degenerate && l.loss == 0.0 && l.grad.iter().all(|g| *g == 0.0));
        assert!(pearson_loss(array![1.0].view(), array![2.0].view()).is_err());
        assert!(matches!(
            pearson_loss(t.view(), array![5.0, 5.0, 5.0].view()),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn pearson_gradient_matches_fd() {
        let mut r = rng(4);
        let h = 1e-6;
        for _ in 0..20 {
            let p = Array1::from_shape_fn(8, |_| r.random_range(-1.0..1.0));
            let t = Array1::from_shape_fn(8, |_| r.random_range(-1.0..1.0));
            let l = pearson_loss(p.view(), t.view()).unwrap();
            for i in 0..8 {
                let mut pp = p.clone();
                pp[i] += h;
                let mut pm = p.clone();
                pm[i] -= h;
                let fd = (pearson_loss(pp.view(), t.view()).unwrap().loss
                    - pearson_loss(pm.view(), t.view()).unwrap().loss)
                    / (2.0 * h);
                let rel = (fd - l.grad[i]).abs() / fd.abs().max(l.grad[i].abs()).max(1e-8);
                assert!(rel < 1e-6, "{fd} vs {}", l.grad[i]);
            }
        }
    }

    proptest! {
        #[test]
        fn pearson_invariant_to_positive_affine_targets(
            v in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 3..12),
            a in 0.1f64..10.0,
            c in -10.0f64..10.0,
        ) {
            let p = Array1::from_iter(v.iter().map(|x| x.0));
            let t = Array1::from_iter(v.iter().map(|x| x.1));
            let base = pearson_loss(p.view(), t.view());
            prop_assume!(base.is_ok());
            let base = base.unwrap();
            prop_assume!(!base.degenerate);
            let moved = pearson_loss(p.view(), (&t * a + c).view()).unwrap();
            prop_assert!((base.loss - moved.loss).abs() < 1e-9);
            // gradient direction is invariant under positive scaling of predictions
            let scaled = pearson_loss((&p * a).view(), t.view()).unwrap();
            for (g1, g2) in base.grad.iter().zip(scaled.grad.iter()) {
                prop_assert!((g1 - a * g2).abs() < 1e-9 * g1.abs().max(1.0));
            }
        }

        #[test]
        fn contrastive_mean_permutation_invariant(seed in 0u64..1000) {
            let mut r = rng(seed);
            let b = 5;
            let e = random(&mut r, b, 3);
            let p = random(&mut r, b, 3);
            let perm = [2usize, 4, 0, 1, 3];
            let ep = e.select(Axis(0), &perm);
            let pp = p.select(Axis(0), &perm);
            let a = contrastive_loss(e.view(), p.view(), Temperature::default()).unwrap();
            let c = contrastive_loss(ep.view(), pp.view(), Temperature::default()).unwrap();
            prop_assert!((a.loss - c.loss).abs() < 1e-12);
            for (i, &k) in perm.iter().enumerate() {
                prop_assert!((c.rows[i] - a.rows[k]).abs() < 1e-12);
            }
        }

        #[test]
        fn combined_linear_in_lambda(lc in -5.0f64..5.0, lp in -5.0f64..5.0, l1 in 0.0f64..3.0, l2 in 0.0f64..3.0) {
            let lhs = combined_access_loss(lc, lp, l1 + l2);
            let rhs = combined_access_loss(lc, lp, l1) + combined_access_loss(lc, lp, l2) - lc;
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }
    }
}

//! Evaluates the three training objectives on random batches and compares
//! their analytic gradients with central differences.

use ndarray::{Array1, Array2};
use povmap::losses::{contrastive_loss, pearson_loss, precondition_loss, Temperature};
use rand::{Rng, SeedableRng};

fn main() -> povmap::Result<()> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let (b, d) = (6, 5);
    let img = Array2::from_shape_fn((b, d), |_| rng.random_range(-1.0..1.0));
    let poi = Array2::from_shape_fn((b, d), |_| rng.random_range(-1.0..1.0));
    let t = Temperature::default();
    let c = contrastive_loss(img.view(), poi.view(), t)?;
    println!("contrastive loss {:.6} at tau {:.3}, dL/dlog_tau {:+.6}", c.loss, t.tau(), c.d_log_tau);

    let h = 1e-6;
    let mut worst = 0.0f64;
    for i in 0..b {
        for j in 0..d {
            let mut up = img.clone();
            up[[i, j]] += h;
            let mut down = img.clone();
            down[[i, j]] -= h;
            let fd = (contrastive_loss(up.view(), poi.view(), t)?.loss
                - contrastive_loss(down.view(), poi.view(), t)?.loss)
                / (2.0 * h);
            worst = worst.max((fd - c.d_img[[i, j]]).abs());
        }
    }
    println!("  max |analytic - central difference| over image embeddings: {worst:.2e}");

    let logits = Array2::from_shape_fn((b, 4), |_| rng.random_range(-3.0..3.0));
    let labels = Array2::from_shape_fn((b, 4), |_| if rng.random_bool(0.4) { 1.0 } else { 0.0 });
    let p = precondition_loss(logits.view(), labels.view())?;
    println!("precondition BCE {:.6}, combined (lambda 0.1) {:.6}", p.loss, c.loss + 0.1 * p.loss);

    let target = Array1::from_shape_fn(b, |_| rng.random_range(0.0..5.0));
    let pred = target.mapv(|v| 2.0 * v + rng.random_range(-1.0..1.0));
    let r = pearson_loss(pred.view(), target.view())?;
    println!("pearson loss {:.6} (degenerate: {})", r.loss, r.degenerate);
    let exact = pearson_loss(target.mapv(|v| 3.0 * v - 1.0).view(), target.view())?;
    println!("affine prediction gives {:.15}", exact.loss);
    Ok(())
}

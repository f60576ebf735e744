//! Runs a freshly initialized patch transformer over one synthetic tile and
//! prints its embedding and CLS attention map.

use ndarray::Array2;
use povmap::encoder::{init_params, patchify, EncoderConfig, ImageEncoder};
use povmap::ingest::{synth_city, SynthParams};

fn main() -> povmap::Result<()> {
    let city = synth_city(SynthParams {
        seed: 5,
        n_districts: 2,
        tiles_per_district: 4,
        confound_fraction: 0.0,
    })?;
    let cfg = EncoderConfig::default();
    let enc: ImageEncoder<f64> = init_params(&cfg);
    let n = cfg.n_patches();

    let mut x = Array2::<f64>::zeros((2 * n, cfg.patch_dim()));
    for (b, t) in city.bundle.tiles.iter().take(2).enumerate() {
        patchify(&t.pixels, cfg.patch_px, x.slice_mut(ndarray::s![b * n..(b + 1) * n, ..]));
    }
    let (emb, maps, _) = enc.forward(x.view())?;
    println!(
        "{} patches of {} values -> {} x {} embeddings",
        n,
        cfg.patch_dim(),
        emb.nrows(),
        emb.ncols()
    );
    let first: Vec<String> = emb.row(0).iter().take(8).map(|v| format!("{v:+.3}")).collect();
    println!("tile 0 embedding[..8]: {}", first.join(" "));

    println!("tile 0 attention (x{n}, uniform = 1.00):");
    let g = cfg.grid();
    for r in 0..g {
        let row: Vec<String> = (0..g).map(|c| format!("{:.2}", maps[0][r * g + c] * n as f64)).collect();
        println!("  {}", row.join(" "));
    }
    Ok(())
}

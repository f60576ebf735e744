//! Backdoor adjustment of a few industrial tiles: partitions patches by the
//! attention of a morphology encoder and writes before/after PNGs.
//!
//! `cargo run --example backdoor_adjust -- [morph.ck] [out_dir]`
//! Without a checkpoint a freshly initialized encoder is used.

use std::path::Path;

use povmap::backdoor::{adjust_dataset, PartitionRule, DEFAULT_Q};
use povmap::encoder::{init_params, EncoderConfig, ImageEncoder};
use povmap::imagery::TilePixels;
use povmap::ingest::{synth_city, SynthParams};
use povmap::training::Checkpoint;

fn main() -> povmap::Result<()> {
    let mut args = std::env::args().skip(1);
    let ck = args.next().filter(|s| !s.is_empty());
    let out = args.next().unwrap_or_else(|| "backdoor_out".to_string());
    let city = synth_city(SynthParams {
        seed: 7,
        n_districts: 4,
        tiles_per_district: 10,
        confound_fraction: 0.2,
    })?;
    let enc: ImageEncoder<f32> = match &ck {
        Some(p) => Checkpoint::load(Path::new(p))?.image_encoder()?,
        None => init_params(&EncoderConfig::default()),
    };
    let picked: Vec<usize> = city
        .ledger
        .tiles
        .iter()
        .enumerate()
        .filter(|(_, t)| t.industrial)
        .map(|(i, _)| i)
        .take(4)
        .collect();
    let tiles: Vec<&TilePixels> = picked.iter().map(|&i| &city.bundle.tiles[i].pixels).collect();
    let adjusted = adjust_dataset(&tiles, &enc, PartitionRule::Quantile(DEFAULT_Q))?;

    let g = enc.config.grid();
    for (k, &i) in picked.iter().enumerate() {
        let t = &city.bundle.tiles[i];
        let p = &adjusted.partitions[k];
        println!("{} ({} patches replaced):", t.tile_id, p.n_non_causal());
        for r in 0..g {
            let row: String = (0..g).map(|c| if p.causal[r * g + c] { '.' } else { 'x' }).collect();
            println!("  {row}");
        }
    }
    let dir = Path::new(&out);
    let named: Vec<(&str, &TilePixels)> = picked
        .iter()
        .map(|&i| (city.bundle.tiles[i].tile_id.as_str(), &city.bundle.tiles[i].pixels))
        .collect();
    adjusted.write_pngs(&named, &dir.join("adjusted"))?;
    for (id, px) in &named {
        px.write_png(&dir.join(format!("{id}.png")))?;
    }
    println!("wrote originals and adjusted tiles to {}", dir.display());
    Ok(())
}

//! Generates a synthetic city bundle and prints what was planted.
//!
//! `cargo run --example synth_city -- [out_dir]`

use povmap::ingest::{poverty_headcount, synth_city, write_bundle, SynthParams};

fn main() -> povmap::Result<()> {
    let city = synth_city(SynthParams {
        seed: 7,
        n_districts: 6,
        tiles_per_district: 16,
        confound_fraction: 0.2,
    })?;
    let b = &city.bundle;
    println!(
        "{} tiles, {} POIs, {} buildings, raster {}x{}",
        b.tiles.len(),
        b.pois.len(),
        b.buildings.len(),
        b.nightlight.rows,
        b.nightlight.cols
    );
    for (d, lat) in b.districts.iter().zip(&city.ledger.districts) {
        println!(
            "district {:>2}: poverty {:.3}  headcount {:>6}  industrial tiles {}",
            d.district_id,
            d.poverty_rate,
            poverty_headcount(d),
            lat.industrial_tiles
        );
    }
    if let Some(out) = std::env::args().nth(1) {
        write_bundle(b, &out)?;
        city.ledger.write_json(&std::path::Path::new(&out).join("ledger.json"))?;
        println!("wrote bundle to {out}");
    }
    Ok(())
}

//! Builds the accessibility, morphology and nightlight training sets of a
//! small synthetic city.

use povmap::ingest::{synth_city, SynthParams};
use povmap::traitsets::{build_all, DEFAULT_GAMMA_M};

fn main() -> povmap::Result<()> {
    let city = synth_city(SynthParams {
        seed: 3,
        n_districts: 4,
        tiles_per_district: 8,
        confound_fraction: 0.25,
    })?;
    let sets = build_all(&city.bundle, DEFAULT_GAMMA_M)?;
    println!("{:<18} {:>9} {:>9} {:>9} {:>9}  within 2 km", "tile", "d0 (m)", "FA (m²)", "NI", "log NI");
    for ((a, m), e) in sets.access.iter().zip(&sets.morph).zip(&sets.econ).take(10) {
        let labels: String = a.multilabel.iter().map(|&b| if b { '1' } else { '0' }).collect();
        println!(
            "{:<18} {:>9.1} {:>9.1} {:>9.2} {:>9.3}  {labels}",
            a.tile_id, a.distances.d[0], m.floor_area, e.nightlight, e.log_ni
        );
    }
    if let Some(dir) = std::env::args().nth(1) {
        std::fs::create_dir_all(&dir).map_err(|e| povmap::Error::io(&dir, e))?;
        povmap::traitsets::write_csvs(&sets, std::path::Path::new(&dir))?;
        println!("wrote access.csv, morph.csv, econ.csv to {dir}");
    }
    Ok(())
}

//! Ablation report on a small synthetic city: trains quickly, pools
//! districts and writes report.csv, summary.md and the SVG figures.
//!
//! `cargo run --release --example evaluation_report -- [out_dir]`

use povmap::evalreport::Variant;
use povmap::ingest::{synth_city, SynthParams};
use povmap::pipeline::{district_blocks, evaluate, train_bundle};
use povmap::training::TrainConfig;

fn main() -> povmap::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "report".to_string());
    let city = synth_city(SynthParams {
        seed: 11,
        n_districts: 12,
        tiles_per_district: 12,
        confound_fraction: 0.2,
    })?;
    let cfg = TrainConfig {
        epochs: 4,
        learning_rate: 3e-4,
        ..TrainConfig::default()
    };
    let (trained, _) = train_bundle(&city.bundle, &cfg, &Variant::ALL)?;
    let (blocks, warnings) = district_blocks(&city.bundle, &trained)?;
    let mut report = evaluate(&blocks, &Variant::ALL, 0, cfg.pairs())?;
    report.warnings.extend(warnings);
    report.write(std::path::Path::new(&out))?;
    print!("{}", report.summary_markdown());
    Ok(())
}

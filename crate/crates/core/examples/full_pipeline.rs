//! The reference run: seed-7 city with 20 districts of 100 tiles, all
//! modules trained for 30 epochs, 50 repeated 80/20 splits.
//!
//! `cargo run --release --example full_pipeline -- [out_dir] [epochs]`

use std::path::Path;
use std::time::Instant;

use povmap::evalreport::Variant;
use povmap::ingest::{synth_city, write_bundle, SynthParams};
use povmap::pipeline::{district_blocks, evaluate, train_bundle};
use povmap::training::TrainConfig;

fn main() -> povmap::Result<()> {
    env_logger::init();
    let mut args = std::env::args().skip(1);
    let out = args.next().unwrap_or_else(|| "reference_run".to_string());
    let epochs = args.next().map_or(30, |s| s.parse().expect("epochs"));
    let out = Path::new(&out);
    let start = Instant::now();

    let city = synth_city(SynthParams {
        seed: 7,
        n_districts: 20,
        tiles_per_district: 100,
        confound_fraction: 0.2,
    })?;
    write_bundle(&city.bundle, out.join("bundle"))?;
    let cfg = TrainConfig {
        epochs,
        ..TrainConfig::default()
    };
    let (trained, logs) = train_bundle(&city.bundle, &cfg, &Variant::ALL)?;
    for (name, log) in &logs {
        log.write_csv(&out.join(format!("{name}_log.csv")))?;
    }
    povmap::cli::save_checkpoints(&trained, &out.join("checkpoints"))?;
    println!("trained in {:.0}s", start.elapsed().as_secs_f64());

    let (blocks, warnings) = district_blocks(&city.bundle, &trained)?;
    let mut report = evaluate(&blocks, &Variant::ALL, 0, cfg.pairs())?;
    report.warnings.extend(warnings);
    report.write(&out.join("report"))?;
    for v in &report.variants {
        println!("{:<11} Pearson {:.4} ± {:.4}", v.name, v.metrics.pearson.mean, v.metrics.pearson.sd);
    }
    println!("total {:.0}s, report in {}", start.elapsed().as_secs_f64(), out.join("report").display());
    Ok(())
}

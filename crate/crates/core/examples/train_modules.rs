//! Trains the accessibility, morphology and economic encoders on a small
//! synthetic city and saves their checkpoints.
//!
//! `cargo run --release --example train_modules -- [epochs] [out_dir]`

use std::path::Path;

use povmap::evalreport::Variant;
use povmap::ingest::{synth_city, SynthParams};
use povmap::pipeline::train_bundle;
use povmap::training::TrainConfig;

fn main() -> povmap::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().map_or(5, |s| s.parse().expect("epochs"));
    let out = args.next().unwrap_or_else(|| "checkpoints".to_string());
    let city = synth_city(SynthParams {
        seed: 7,
        n_districts: 6,
        tiles_per_district: 20,
        confound_fraction: 0.2,
    })?;
    let cfg = TrainConfig {
        epochs,
        learning_rate: 3e-4,
        ..TrainConfig::default()
    };
    let (trained, logs) = train_bundle(&city.bundle, &cfg, &Variant::ALL)?;
    for (name, log) in &logs {
        let first = log.epoch_mean(0).unwrap_or(f64::NAN);
        let last = log.epoch_mean(epochs as u64 - 1).unwrap_or(f64::NAN);
        println!("{name:<10} loss {first:+.4} -> {last:+.4}  {}", log.note.as_deref().unwrap_or(""));
        std::fs::create_dir_all(&out).map_err(|e| povmap::Error::io(&out, e))?;
        log.write_csv(&Path::new(&out).join(format!("{name}_log.csv")))?;
    }
    povmap::cli::save_checkpoints(&trained, Path::new(&out))?;
    for (name, ck) in [("morph", &trained.morph), ("econ", &trained.econ)] {
        if let Some(ck) = ck {
            println!("{name}: step {} epoch {} config hash {}", ck.step, ck.epoch, ck.hash_hex());
        }
    }
    println!("checkpoints in {out}");
    Ok(())
}

//! Command-line front end. Exit codes: 0 ok, 2 usage or invalid input,
//! 3 io or unreadable files, 4 numeric failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::evalreport::Variant;
use crate::ingest::{load_bundle, synth_city, write_bundle, SynthParams};
use crate::pipeline::{district_blocks, evaluate, train_bundle, transfer_matrices, TrainedCity};
use crate::traitsets::{build_all, write_csvs};
use crate::training::{aligned_tiles, train, Checkpoint, ModuleData, ModuleKind, TrainConfig, TrainOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Parser, Debug)]
#[command(name = "povmap", version, about = "Urban poverty mapping from satellite tiles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic city bundle with planted poverty.
    Synth {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        districts: usize,
        #[arg(long, default_value_t = 100)]
        tiles_per_district: usize,
        #[arg(long, default_value_t = 0.2)]
        confound: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the access, morph and econ training CSVs for a bundle.
    Build {
        #[arg(long)]
        bundle: PathBuf,
        /// Radius (m) for the POI multi-label targets.
        #[arg(long, default_value_t = crate::traitsets::DEFAULT_GAMMA_M)]
        gamma: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one encoder; writes `<name>.ck` and `<name>_log.csv` into --out.
    Train {
        #[arg(long, value_parser = ["access", "morph", "econ"])]
        module: String,
        #[arg(long)]
        bundle: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Frozen morphological checkpoint used for the backdoor adjustment.
        #[arg(long)]
        morph_checkpoint: Option<PathBuf>,
        /// Continue from an end-of-epoch checkpoint with the same config.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop after this many completed epochs.
        #[arg(long)]
        stop_after_epoch: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pool districts and run the repeated-split evaluation.
    Evaluate {
        #[arg(long)]
        bundle: PathBuf,
        /// Directory holding access.ck, morph.ck, econ.ck, econ_proxy.ck.
        #[arg(long)]
        checkpoints: PathBuf,
        #[arg(long, default_value = "full,noaccess,nomorph,noecon,nobackdoor,proxy")]
        variants: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cross-city transfer matrix for the full model and the nightlight proxy.
    Transfer {
        /// Comma-separated bundle directories.
        #[arg(long, value_delimiter = ',')]
        bundles: Vec<PathBuf>,
        /// Comma-separated checkpoint directories, one per bundle. Missing
        /// checkpoints are trained with the given config.
        #[arg(long, value_delimiter = ',')]
        checkpoints: Vec<PathBuf>,
        #[arg(long, default_value = "full,proxy")]
        variants: String,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Training configuration: a key=value file plus flag overrides.
#[derive(Args, Debug, Clone, Default)]
struct ConfigArgs {
    /// Flat key=value file; '#' starts a comment.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lambda1: Option<f64>,
    /// Fraction of low-attention patches replaced (0 = nightlight proxy).
    #[arg(long)]
    q: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long, value_parser = ["f32", "f64"])]
    precision: Option<String>,
    /// Any other config key, as key=value (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                TrainConfig::from_text(&text)?
            }
            None => TrainConfig::default(),
        };
        let mut overrides: Vec<(String, String)> = Vec::new();
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                overrides.push((k.to_string(), v));
            }
        };
        put("seed", self.seed.map(|v| v.to_string()));
        put("epochs", self.epochs.map(|v| v.to_string()));
        put("learning_rate", self.learning_rate.map(|v| v.to_string()));
        put("batch_size", self.batch_size.map(|v| v.to_string()));
        put("lambda1", self.lambda1.map(|v| v.to_string()));
        put("q", self.q.map(|v| v.to_string()));
        put("gamma_m", self.gamma.map(|v| v.to_string()));
        put("precision", self.precision.clone());
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects key=value, got `{kv}`")))?;
            overrides.push((k.trim().to_string(), v.to_string()));
        }
        for (k, v) in overrides {
            cfg.set(&k, &v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. } | Error::Format(_) => EXIT_IO,
        Error::Numeric(_) => EXIT_NUMERIC,
        _ => EXIT_USAGE,
    }
}

/// File stem a trained checkpoint is saved under.
pub fn checkpoint_stem(kind: ModuleKind, cfg: &TrainConfig) -> &'static str {
    if kind == ModuleKind::Econ && cfg.partition_rule().is_identity() {
        "econ_proxy"
    } else {
        kind.as_str()
    }
}

fn create_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

/// Loads whatever checkpoints exist in `dir`.
pub fn load_checkpoints(dir: &Path) -> Result<TrainedCity> {
    let load = |stem: &str| -> Result<Option<Checkpoint>> {
        let p = dir.join(format!("{stem}.ck"));
        if p.exists() {
            Checkpoint::load(&p).map(Some)
        } else {
            Ok(None)
        }
    };
    Ok(TrainedCity {
        access: load("access")?,
        morph: load("morph")?,
        econ: load("econ")?,
        econ_proxy: load("econ_proxy")?,
    })
}

pub fn save_checkpoints(city: &TrainedCity, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    for (stem, ck) in [
        ("access", &city.access),
        ("morph", &city.morph),
        ("econ", &city.econ),
        ("econ_proxy", &city.econ_proxy),
    ] {
        if let Some(ck) = ck {
            ck.save(&dir.join(format!("{stem}.ck")))?;
        }
    }
    Ok(())
}

fn check_variants(city: &TrainedCity, variants: &[Variant], dir: &Path) -> Result<()> {
    use crate::evalreport::Block;
    for v in variants {
        for b in v.blocks() {
            let (present, stem) = match b {
                Block::Morph => (city.morph.is_some(), "morph"),
                Block::Access => (city.access.is_some(), "access"),
                Block::Econ => (city.econ.is_some() && city.morph.is_some(), "econ (and morph)"),
                Block::EconProxy => (city.econ_proxy.is_some(), "econ_proxy"),
            };
            if !present {
                return Err(Error::Config(format!(
                    "variant `{v}` needs the {stem} checkpoint in {}",
                    dir.display()
                )));
            }
        }
    }
    Ok(())
}

fn cmd_train(
    module: &str,
    bundle: &Path,
    cfg: &ConfigArgs,
    morph_checkpoint: Option<&Path>,
    resume: Option<&Path>,
    stop_after_epoch: Option<usize>,
    out: &Path,
) -> Result<()> {
    let kind: ModuleKind = module.parse()?;
    let cfg = cfg.resolve()?;
    let bundle = load_bundle(bundle)?;
    let sets = build_all(&bundle, cfg.gamma_m)?;
    let morph = morph_checkpoint.map(Checkpoint::load).transpose()?;
    let resume = resume.map(Checkpoint::load).transpose()?;
    let (tiles, data) = match kind {
        ModuleKind::Access => (
            aligned_tiles(&bundle, sets.access.iter().map(|s| &s.tile_id))?,
            ModuleData::Access(&sets.access),
        ),
        ModuleKind::Morph => (
            aligned_tiles(&bundle, sets.morph.iter().map(|s| &s.tile_id))?,
            ModuleData::Morph(&sets.morph),
        ),
        ModuleKind::Econ => (
            aligned_tiles(&bundle, sets.econ.iter().map(|s| &s.tile_id))?,
            ModuleData::Econ {
                samples: &sets.econ,
                morph: morph.as_ref(),
            },
        ),
    };
    let outcome = train(
        &tiles,
        data,
        &cfg,
        TrainOptions {
            resume: resume.as_ref(),
            stop_after_epoch,
        },
    )?;
    create_dir(out)?;
    let stem = checkpoint_stem(kind, &cfg);
    outcome.checkpoint.save(&out.join(format!("{stem}.ck")))?;
    outcome.log.write_csv(&out.join(format!("{stem}_log.csv")))?;
    println!(
        "{stem}: {} steps, {} epochs, config hash {}",
        outcome.checkpoint.step,
        outcome.checkpoint.epoch,
        outcome.checkpoint.hash_hex()
    );
    for w in &outcome.log.warnings {
        eprintln!("warning: {w}");
    }
    Ok(())
}

fn config_echo(city: &TrainedCity, extra: &[(&str, String)]) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = extra.iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
    for (stem, ck) in [
        ("access", &city.access),
        ("morph", &city.morph),
        ("econ", &city.econ),
        ("econ_proxy", &city.econ_proxy),
    ] {
        if let Some(ck) = ck {
            out.push((format!("{stem}.config_hash"), ck.hash_hex()));
            for line in ck.config_text.lines() {
                if let Some((k, v)) = line.split_once('=') {
                    out.push((format!("{stem}.{k}"), v.to_string()));
                }
            }
        }
    }
    out
}

fn cmd_evaluate(bundle: &Path, checkpoints: &Path, variants: &str, seed: u64, out: &Path) -> Result<()> {
    let variants = Variant::parse_list(variants)?;
    let city = load_checkpoints(checkpoints)?;
    check_variants(&city, &variants, checkpoints)?;
    let bundle_data = load_bundle(bundle)?;
    let (blocks, warnings) = district_blocks(&bundle_data, &city)?;
    let names: Vec<&str> = variants.iter().map(|v| v.as_str()).collect();
    let echo = config_echo(
        &city,
        &[("seed", seed.to_string()), ("variants", names.join(","))],
    );
    let mut report = evaluate(&blocks, &variants, seed, echo)?;
    report.warnings.extend(warnings);
    create_dir(out)?;
    let mut features = Vec::new();
    for (i, id) in blocks.ids.iter().enumerate() {
        let mut r = Vec::new();
        for b in [&blocks.morph, &blocks.access, &blocks.econ].into_iter().flatten() {
            r.extend(b.row(i).iter().copied());
        }
        features.push(crate::district::DistrictFeature {
            district_id: *id,
            r,
            n_tiles: bundle_data.tiles.iter().filter(|t| t.district_id == Some(*id)).count(),
        });
    }
    crate::district::write_features_csv(&features, &out.join("district_features.csv"))?;
    report.write(out)?;
    for v in &report.variants {
        println!(
            "{:<11} pearson {:.4} ± {:.4}  spearman {:.4}  r2 {:.4}",
            v.name, v.metrics.pearson.mean, v.metrics.pearson.sd, v.metrics.spearman.mean, v.metrics.r2.mean
        );
    }
    Ok(())
}

fn cmd_transfer(
    bundles: &[PathBuf],
    checkpoints: &[PathBuf],
    variants: &str,
    cfg: &ConfigArgs,
    out: &Path,
) -> Result<()> {
    if bundles.len() < 2 {
        return Err(Error::Config(format!(
            "transfer needs at least 2 bundles, got {}",
            bundles.len()
        )));
    }
    if !checkpoints.is_empty() && checkpoints.len() != bundles.len() {
        return Err(Error::Config("give one checkpoint directory per bundle".into()));
    }
    let variants = Variant::parse_list(variants)?;
    let train_cfg = cfg.resolve()?;
    let mut loaded = Vec::new();
    for (i, b) in bundles.iter().enumerate() {
        let bundle = load_bundle(b)?;
        let name = b
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| format!("city{i}"));
        let mut city = match checkpoints.get(i) {
            Some(dir) => load_checkpoints(dir)?,
            None => TrainedCity::default(),
        };
        if check_variants(&city, &variants, b).is_err() {
            log::info!("training {name}");
            let (trained, _) = train_bundle(&bundle, &train_cfg, &variants)?;
            city = trained;
            if let Some(dir) = checkpoints.get(i) {
                save_checkpoints(&city, dir)?;
            }
        }
        loaded.push((name, bundle, city));
    }
    create_dir(out)?;
    let cities: Vec<(String, &crate::ingest::CityBundle, &TrainedCity)> =
        loaded.iter().map(|(n, b, c)| (n.clone(), b, c)).collect();
    let mut report = crate::evalreport::EvalReport {
        config: train_cfg.pairs(),
        ..Default::default()
    };
    for m in transfer_matrices(&cities, &variants, train_cfg.seed)? {
        println!("{}: mean off-diagonal Pearson {:.4}", m.variant, m.off_diagonal_mean());
        report.transfer.push(m);
    }
    report.write(out)
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth {
            seed,
            districts,
            tiles_per_district,
            confound,
            out,
        } => {
            let city = synth_city(SynthParams {
                seed,
                n_districts: districts,
                tiles_per_district,
                confound_fraction: confound,
            })?;
            write_bundle(&city.bundle, &out)?;
            city.ledger.write_json(&out.join("ledger.json"))?;
            println!("wrote {} tiles in {} districts to {}", city.bundle.tiles.len(), districts, out.display());
            Ok(())
        }
        Command::Build { bundle, gamma, out } => {
            let b = load_bundle(&bundle)?;
            let sets = build_all(&b, gamma)?;
            create_dir(&out)?;
            write_csvs(&sets, &out)?;
            println!("wrote access.csv, morph.csv, econ.csv ({} tiles) to {}", sets.morph.len(), out.display());
            Ok(())
        }
        Command::Train {
            module,
            bundle,
            cfg,
            morph_checkpoint,
            resume,
            stop_after_epoch,
            out,
        } => cmd_train(
            &module,
            &bundle,
            &cfg,
            morph_checkpoint.as_deref(),
            resume.as_deref(),
            stop_after_epoch,
            &out,
        ),
        Command::Evaluate {
            bundle,
            checkpoints,
            variants,
            seed,
            out,
        } => cmd_evaluate(&bundle, &checkpoints, &variants, seed, &out),
        Command::Transfer {
            bundles,
            checkpoints,
            variants,
            cfg,
            out,
        } => cmd_transfer(&bundles, &checkpoints, &variants, &cfg, &out),
    }
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

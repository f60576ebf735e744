use super::*;
use crate::ingest::{synth_city, SynthParams};
use crate::traitsets::build_all;

fn tiny_config() -> TrainConfig {
    TrainConfig {
        learning_rate: 1e-3,
        batch_size: 8,
        epochs: 2,
        seed: 3,
        patch_px: 64,
        embed_dim: 16,
        layers: 1,
        heads: 2,
        poi_dim: 4,
        precision: Precision::F64,
        ..TrainConfig::default()
    }
}

struct Fixture {
    bundle: CityBundle,
    sets: crate::traitsets::TraitSets,
}

fn fixture() -> Fixture {
    let city = synth_city(SynthParams {
        seed: 11,
        n_districts: 3,
        tiles_per_district: 8,
        confound_fraction: 0.2,
    })
    .unwrap();
    let sets = build_all(&city.bundle, 2000.0).unwrap();
    Fixture {
        bundle: city.bundle,
        sets,
    }
}

#[test]
fn config_text_round_trips() {
    let mut cfg = tiny_config();
    cfg.backdoor_threshold = Some(0.0123);
    cfg.learning_rate = 3.3e-5;
    let back = TrainConfig::from_text(&cfg.to_text()).unwrap();
    assert_eq!(back, cfg);
}

#[test]
fn config_rejects_unknown_and_bad_values() {
    assert!(matches!(TrainConfig::from_text("bogus=1"), Err(Error::Config(_))));
    assert!(matches!(TrainConfig::from_text("epochs=two"), Err(Error::Config(_))));
    assert!(matches!(TrainConfig::from_text("precision=f16"), Err(Error::Config(_))));
    let cfg = TrainConfig { q: 1.0, ..TrainConfig::default() };
    assert!(matches!(cfg.validate(), Err(Error::Config(_))));
}

#[test]
fn config_hash_depends_on_module_and_values() {
    let a = tiny_config();
    let b = TrainConfig { seed: 4, ..tiny_config() };
    let ha = config_hash(ModuleKind::Morph, &a.to_text());
    assert_eq!(ha, config_hash(ModuleKind::Morph, &a.to_text()));
    assert_ne!(ha, config_hash(ModuleKind::Econ, &a.to_text()));
    assert_ne!(ha, config_hash(ModuleKind::Morph, &b.to_text()));
}

#[test]
fn module_seeds_differ() {
    let cfg = tiny_config();
    let seeds: Vec<u64> = ModuleKind::ALL.iter().map(|&m| cfg.encoder_config(m).seed).collect();
    assert_ne!(seeds[0], seeds[1]);
    assert_ne!(seeds[1], seeds[2]);
}

#[test]
fn morph_training_checkpoint_round_trip() {
    let f = fixture();
    let tiles = aligned_tiles(&f.bundle, f.sets.morph.iter().map(|s| &s.tile_id)).unwrap();
    let out = train_morph(&tiles, &f.sets.morph, &tiny_config()).unwrap();
    assert_eq!(out.checkpoint.epoch, 2);
    assert!(out.log.rows.iter().all(|r| r.loss.is_finite()));

    let bytes = out.checkpoint.to_bytes();
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back, out.checkpoint);

    let mut bad = bytes.clone();
    bad[20] ^= 1;
    assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Format(_))));
    assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]), Err(Error::Format(_))));

    let enc = back.image_encoder::<f64>().unwrap();
    let e = embed_tiles(&enc, &tiles[..3], None).unwrap();
    assert_eq!(e.dim(), (3, 16));
}

#[test]
fn resumed_run_is_bit_identical() {
    let f = fixture();
    let tiles = aligned_tiles(&f.bundle, f.sets.access.iter().map(|s| &s.tile_id)).unwrap();
    let cfg = tiny_config();
    let data = ModuleData::Access(&f.sets.access);
    let full = train(&tiles, data, &cfg, TrainOptions::default()).unwrap();
    let half = train(
        &tiles,
        data,
        &cfg,
        TrainOptions { stop_after_epoch: Some(1), ..Default::default() },
    )
    .unwrap();
    assert_eq!(half.checkpoint.epoch, 1);
    let resumed = train(
        &tiles,
        data,
        &cfg,
        TrainOptions { resume: Some(&half.checkpoint), ..Default::default() },
    )
    .unwrap();
    assert_eq!(resumed.checkpoint.tensors, full.checkpoint.tensors);
    assert_eq!(resumed.checkpoint.step, full.checkpoint.step);
    assert!(full.checkpoint.temperature().is_ok());

    let other = TrainConfig { seed: 9, ..cfg };
    let err = train(
        &tiles,
        data,
        &other,
        TrainOptions { resume: Some(&half.checkpoint), ..Default::default() },
    );
    assert!(matches!(err, Err(Error::Config(_))));
}

#[test]
fn econ_needs_morph_checkpoint_unless_proxy() {
    let f = fixture();
    let tiles = aligned_tiles(&f.bundle, f.sets.econ.iter().map(|s| &s.tile_id)).unwrap();
    let cfg = TrainConfig { epochs: 1, ..tiny_config() };
    assert!(matches!(
        train_econ(&tiles, &f.sets.econ, None, &cfg),
        Err(Error::Config(_))
    ));
    let proxy = TrainConfig { q: 0.0, ..cfg };
    let out = train_econ(&tiles, &f.sets.econ, None, &proxy).unwrap();
    assert!(out.log.note.as_deref().unwrap().contains("nightlight-proxy"));
}

#[test]
fn constant_targets_are_skipped_with_warning() {
    let f = fixture();
    let mut samples = f.sets.morph.clone();
    samples.iter_mut().for_each(|s| s.log_fa = 1.0);
    let tiles = aligned_tiles(&f.bundle, samples.iter().map(|s| &s.tile_id)).unwrap();
    let out = train_morph(&tiles, &samples, &TrainConfig { epochs: 1, ..tiny_config() }).unwrap();
    assert!(out.log.rows.is_empty());
    assert!(out.log.warnings[0].contains("degenerate"));
    assert_eq!(out.checkpoint.step, 0);
}

#[test]
fn mismatched_inputs_are_rejected() {
    let f = fixture();
    let tiles = aligned_tiles(&f.bundle, f.sets.morph.iter().map(|s| &s.tile_id)).unwrap();
    assert!(matches!(
        train_morph(&tiles[..3], &f.sets.morph, &tiny_config()),
        Err(Error::Config(_))
    ));
    assert!(matches!(
        aligned_tiles(&f.bundle, ["nope"]),
        Err(Error::Dataset(_))
    ));
}

#[test]
fn log_csv_has_header_and_note() {
    let dir = tempfile::tempdir().unwrap();
    let log = TrainLog {
        note: Some("nightlight-proxy mode".into()),
        rows: vec![LogRow { step: 1, epoch: 0, loss: 0.5, wall_s: 0.25 }],
        ..Default::default()
    };
    let p = dir.path().join("log.csv");
    log.write_csv(&p).unwrap();
    let text = std::fs::read_to_string(&p).unwrap();
    assert_eq!(text, "# nightlight-proxy mode\nstep,epoch,loss,wall_time_s\n1,0,0.5,0.250\n");
}

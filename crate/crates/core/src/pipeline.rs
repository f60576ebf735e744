//! End-to-end orchestration: train the encoders of a city, pool district
//! features, and run the evaluation protocol.

use ndarray::Array2;

use crate::backdoor::{adjust_dataset, PatchPartition};
use crate::district::{make_splits, pool_districts, ForestParams};
use crate::encoder::ImageEncoder;
use crate::error::{Error, Result};
use crate::evalreport::{
    ablate, out_of_fold, paired_ttest, pca_explained, quartile_analysis, DistrictBlocks,
    EvalReport, TransferMatrix, Variant,
};
use crate::imagery::TilePixels;
use crate::ingest::{poverty_headcount, CityBundle};
use crate::rng;
use crate::traitsets::{build_all, TraitSets};
use crate::training::{
    aligned_tiles, embed_tiles, train_access, train_econ, train_morph, Checkpoint, ModuleKind,
    Precision, TrainConfig, TrainLog,
};

/// Checkpoints of one city. `econ_proxy` is the economic encoder trained
/// without adjustment (`q = 0`).
#[derive(Debug, Clone, Default)]
pub struct TrainedCity {
    pub access: Option<Checkpoint>,
    pub morph: Option<Checkpoint>,
    pub econ: Option<Checkpoint>,
    pub econ_proxy: Option<Checkpoint>,
}

impl TrainedCity {
    fn get(&self, kind: ModuleKind) -> Option<&Checkpoint> {
        match kind {
            ModuleKind::Access => self.access.as_ref(),
            ModuleKind::Morph => self.morph.as_ref(),
            ModuleKind::Econ => self.econ.as_ref(),
        }
    }
}

/// Which checkpoints a variant list needs.
pub fn required_modules(variants: &[Variant]) -> (bool, bool, bool, bool) {
    use crate::evalreport::Block;
    let has = |b: Block| variants.iter().any(|v| v.blocks().contains(&b));
    let econ = has(Block::Econ);
    (has(Block::Access), has(Block::Morph) || econ, econ, has(Block::EconProxy))
}

/// Trains every module needed by `variants` on `bundle`.
pub fn train_city(
    bundle: &CityBundle,
    sets: &TraitSets,
    cfg: &TrainConfig,
    variants: &[Variant],
) -> Result<(TrainedCity, Vec<(String, TrainLog)>)> {
    let (need_access, need_morph, need_econ, need_proxy) = required_modules(variants);
    let mut logs = Vec::new();
    let mut city = TrainedCity::default();
    if need_access {
        let tiles = aligned_tiles(bundle, sets.access.iter().map(|s| &s.tile_id))?;
        let out = train_access(&tiles, &sets.access, cfg)?;
        logs.push(("access".to_string(), out.log));
        city.access = Some(out.checkpoint);
    }
    let econ_tiles = aligned_tiles(bundle, sets.econ.iter().map(|s| &s.tile_id))?;
    if need_morph {
        let tiles = aligned_tiles(bundle, sets.morph.iter().map(|s| &s.tile_id))?;
        let out = train_morph(&tiles, &sets.morph, cfg)?;
        logs.push(("morph".to_string(), out.log));
        city.morph = Some(out.checkpoint);
    }
    if need_econ {
        let out = train_econ(&econ_tiles, &sets.econ, city.morph.as_ref(), cfg)?;
        logs.push(("econ".to_string(), out.log));
        city.econ = Some(out.checkpoint);
    }
    if need_proxy {
        let proxy = TrainConfig {
            q: 0.0,
            backdoor_threshold: None,
            ..cfg.clone()
        };
        let out = train_econ(&econ_tiles, &sets.econ, None, &proxy)?;
        logs.push(("econ_proxy".to_string(), out.log));
        city.econ_proxy = Some(out.checkpoint);
    }
    Ok((city, logs))
}

/// Builds trait sets and trains all modules for `variants`.
pub fn train_bundle(
    bundle: &CityBundle,
    cfg: &TrainConfig,
    variants: &[Variant],
) -> Result<(TrainedCity, Vec<(String, TrainLog)>)> {
    let sets = build_all(bundle, cfg.gamma_m)?;
    train_city(bundle, &sets, cfg, variants)
}

fn precision_of(ck: &Checkpoint) -> Result<Precision> {
    Ok(TrainConfig::from_text(&ck.config_text)?.precision)
}

fn embed_with<A: crate::encoder::Real>(
    ck: &Checkpoint,
    tiles: &[&TilePixels],
    partitions: Option<&[PatchPartition]>,
) -> Result<Array2<f64>> {
    let enc: ImageEncoder<A> = ck.image_encoder()?;
    embed_tiles(&enc, tiles, partitions)
}

/// Tile embeddings of `ck` in its training precision.
pub fn embed(ck: &Checkpoint, tiles: &[&TilePixels], partitions: Option<&[PatchPartition]>) -> Result<Array2<f64>> {
    match precision_of(ck)? {
        Precision::F32 => embed_with::<f32>(ck, tiles, partitions),
        Precision::F64 => embed_with::<f64>(ck, tiles, partitions),
    }
}

/// Backdoor partitions of `tiles` under `morph` with the rule stored in `econ`.
pub fn econ_partitions(
    morph: &Checkpoint,
    econ: &Checkpoint,
    tiles: &[&TilePixels],
) -> Result<Option<Vec<PatchPartition>>> {
    let rule = TrainConfig::from_text(&econ.config_text)?.partition_rule();
    if rule.is_identity() {
        return Ok(None);
    }
    let adjusted = match precision_of(morph)? {
        Precision::F32 => adjust_dataset(tiles, &morph.image_encoder::<f32>()?, rule)?,
        Precision::F64 => adjust_dataset(tiles, &morph.image_encoder::<f64>()?, rule)?,
    };
    Ok(Some(adjusted.partitions))
}

/// Pooled district blocks of `bundle` under the checkpoints of `trained`
/// (which may come from another city). The economic encoder sees
/// backdoor-adjusted tiles, matching its training input.
pub fn district_blocks(bundle: &CityBundle, trained: &TrainedCity) -> Result<(DistrictBlocks, Vec<String>)> {
    let tiles: Vec<&TilePixels> = bundle.tiles.iter().map(|t| &t.pixels).collect();
    let tile_district: Vec<Option<u32>> = bundle.tiles.iter().map(|t| t.district_id).collect();
    let mut districts: Vec<u32> = bundle.districts.iter().map(|d| d.district_id).collect();
    districts.sort_unstable();

    let mut warnings = Vec::new();
    let mut pooled = |emb: Option<Array2<f64>>| -> Result<Option<(Vec<u32>, Array2<f64>)>> {
        let Some(e) = emb else { return Ok(None) };
        let (f, w) = pool_districts(&districts, &tile_district, &[e.view()])?;
        warnings.extend(w);
        let ids = f.iter().map(|d| d.district_id).collect();
        Ok(Some((ids, crate::district::feature_matrix(&f)?)))
    };

    let plain = |kind: ModuleKind| -> Result<Option<Array2<f64>>> {
        trained.get(kind).map(|ck| embed(ck, &tiles, None)).transpose()
    };
    let morph = pooled(plain(ModuleKind::Morph)?)?;
    let access = pooled(plain(ModuleKind::Access)?)?;
    let econ = match (&trained.econ, &trained.morph) {
        (Some(e), Some(m)) => {
            let parts = econ_partitions(m, e, &tiles)?;
            pooled(Some(embed(e, &tiles, parts.as_deref())?))?
        }
        (Some(e), None) => {
            if econ_partitions_needed(e)? {
                return Err(Error::Config(
                    "economic checkpoint uses adjustment but no morph checkpoint was given".into(),
                ));
            }
            pooled(Some(embed(e, &tiles, None)?))?
        }
        (None, _) => None,
    };
    let proxy = pooled(trained.econ_proxy.as_ref().map(|ck| embed(ck, &tiles, None)).transpose()?)?;

    let ids = [&morph, &access, &econ, &proxy]
        .iter()
        .find_map(|b| b.as_ref().map(|(ids, _)| ids.clone()))
        .ok_or_else(|| Error::Config("no checkpoints to pool".into()))?;
    let targets = ids
        .iter()
        .map(|id| {
            bundle
                .district(*id)
                .map(|d| poverty_headcount(d) as f64)
                .ok_or_else(|| Error::Dataset(format!("district {id} missing")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((
        DistrictBlocks {
            ids,
            targets,
            morph: morph.map(|b| b.1),
            access: access.map(|b| b.1),
            econ: econ.map(|b| b.1),
            econ_proxy: proxy.map(|b| b.1),
        },
        warnings,
    ))
}

fn econ_partitions_needed(econ: &Checkpoint) -> Result<bool> {
    Ok(!TrainConfig::from_text(&econ.config_text)?.partition_rule().is_identity())
}

/// Runs the split protocol over `variants` and assembles the report.
pub fn evaluate(
    blocks: &DistrictBlocks,
    variants: &[Variant],
    seed: u64,
    config: Vec<(String, String)>,
) -> Result<EvalReport> {
    let plan = make_splits(&blocks.ids, rng::derive_seed(seed, rng::SPLITS))?;
    let forest = ForestParams::default();
    let results = ablate(blocks, variants, &plan, rng::derive_seed(seed, rng::FOREST), forest)?;

    let mut report = EvalReport {
        config,
        ..Default::default()
    };
    if let Some(full) = results.iter().find(|r| r.name == Variant::Full.as_str()) {
        for other in results.iter().filter(|r| r.name != full.name) {
            let t = paired_ttest(&full.pearsons(), &other.pearsons())?;
            report.ttests.push((full.name.clone(), other.name.clone(), t));
        }
    }
    if blocks.ids.len() >= 8 {
        for r in &results {
            if r.name == Variant::Full.as_str() || r.name == Variant::Proxy.as_str() {
                let oof = out_of_fold(r, &plan, &blocks.ids);
                report
                    .quartiles
                    .push((r.name.clone(), quartile_analysis(&blocks.targets, &oof)?));
            }
        }
    } else {
        report
            .warnings
            .push(format!("quartile analysis skipped: {} districts", blocks.ids.len()));
    }
    for (name, b) in [("morph", &blocks.morph), ("access", &blocks.access), ("econ", &blocks.econ)] {
        if let Some(b) = b {
            if b.nrows() >= 2 {
                report.pca.push((name.to_string(), pca_explained(b.view())?));
            }
        }
    }
    report.variants = results;
    Ok(report)
}

/// Cross-city transfer: encoders of city `s` pool city `t`, and the forest is
/// fit and scored on `t`'s splits. Cells hold mean test Pearson; one matrix
/// per variant.
pub fn transfer_matrices(
    cities: &[(String, &CityBundle, &TrainedCity)],
    variants: &[Variant],
    seed: u64,
) -> Result<Vec<TransferMatrix>> {
    if cities.len() < 2 {
        return Err(Error::Config(format!(
            "transfer needs at least 2 cities, got {}",
            cities.len()
        )));
    }
    let n = cities.len();
    let mut cells = vec![vec![vec![f64::NAN; n]; n]; variants.len()];
    for (s, (_, _, trained)) in cities.iter().enumerate() {
        for (t, (_, bundle, _)) in cities.iter().enumerate() {
            let (blocks, _) = district_blocks(bundle, trained)?;
            let plan = make_splits(&blocks.ids, rng::derive_seed(seed, rng::SPLITS))?;
            let r = ablate(
                &blocks,
                variants,
                &plan,
                rng::derive_seed(seed, rng::FOREST),
                ForestParams::default(),
            )?;
            for (v, res) in r.iter().enumerate() {
                cells[v][s][t] = res.metrics.pearson.mean;
            }
        }
    }
    Ok(variants
        .iter()
        .zip(cells)
        .map(|(v, pearson)| TransferMatrix {
            variant: v.as_str().to_string(),
            cities: cities.iter().map(|c| c.0.clone()).collect(),
            pearson,
        })
        .collect())
}

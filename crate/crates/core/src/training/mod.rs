//! Optimization loops for the three trait encoders.

mod checkpoint;
mod optim;

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use ndarray::{s, Array1, Array2};
use rand::seq::SliceRandom;

pub use checkpoint::{config_hash, Checkpoint, NamedTensor};
pub use optim::AdamW;

use crate::backdoor::{adjust_dataset, adjust_patch_rows, PartitionRule, PatchPartition};
use crate::encoder::{
    init_params, patchify, EncoderConfig, ImageEncoder, ParamSet, PoiEncoder, Projection, Real,
};
use crate::error::{Error, Result};
use crate::imagery::TilePixels;
use crate::ingest::CityBundle;
use crate::losses::{
    combined_access_loss, contrastive_loss, pearson_loss, precondition_loss, Temperature,
};
use crate::rng;
use crate::traitsets::{AccessSample, EconSample, MorphSample, N_CATEGORIES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModuleKind {
    Access,
    Morph,
    Econ,
}

impl ModuleKind {
    pub const ALL: [ModuleKind; 3] = [ModuleKind::Access, ModuleKind::Morph, ModuleKind::Econ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModuleKind::Access => "access",
            ModuleKind::Morph => "morph",
            ModuleKind::Econ => "econ",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    fn init_stream(self) -> &'static str {
        match self {
            ModuleKind::Access => rng::INIT_ACCESS,
            ModuleKind::Morph => rng::INIT_MORPH,
            ModuleKind::Econ => rng::INIT_ECON,
        }
    }

    /// Number of projection-head outputs.
    pub fn head_outputs(self) -> usize {
        match self {
            ModuleKind::Access => N_CATEGORIES,
            _ => 1,
        }
    }
}

impl fmt::Display for ModuleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModuleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "access" => Ok(ModuleKind::Access),
            "morph" => Ok(ModuleKind::Morph),
            "econ" => Ok(ModuleKind::Econ),
            other => Err(Error::Config(format!(
                "unknown module `{other}` (expected access, morph or econ)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    fn as_str(self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }
}

/// Optimization and architecture settings shared by the three modules.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub lambda1: f64,
    /// Fraction of patches replaced before economic training.
    pub q: f64,
    /// Fixed attention threshold; when set it replaces the quantile rule.
    pub backdoor_threshold: Option<f64>,
    pub gamma_m: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub adam_eps: f64,
    pub poi_dim: usize,
    pub patch_px: usize,
    pub embed_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let enc = EncoderConfig::default();
        TrainConfig {
            learning_rate: 1e-4,
            batch_size: 32,
            epochs: 30,
            seed: 0,
            lambda1: 0.1,
            q: crate::backdoor::DEFAULT_Q,
            backdoor_threshold: None,
            gamma_m: crate::traitsets::DEFAULT_GAMMA_M,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 0.01,
            adam_eps: 1e-8,
            poi_dim: 16,
            patch_px: enc.patch_px,
            embed_dim: enc.embed_dim,
            layers: enc.layers,
            heads: enc.heads,
            mlp_ratio: enc.mlp_ratio,
            precision: Precision::F32,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate >= 0.0 && self.learning_rate.is_finite()),
            ("batch_size", self.batch_size > 0),
            ("lambda1", self.lambda1 >= 0.0 && self.lambda1.is_finite()),
            ("q", (0.0..1.0).contains(&self.q)),
            ("gamma_m", self.gamma_m > 0.0),
            ("beta1", (0.0..1.0).contains(&self.beta1)),
            ("beta2", (0.0..1.0).contains(&self.beta2)),
            ("weight_decay", self.weight_decay >= 0.0),
            ("adam_eps", self.adam_eps > 0.0),
            ("poi_dim", self.poi_dim > 0),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, ok)| !ok) {
            return Err(Error::Config(format!("`{k}` out of range")));
        }
        self.encoder_config(ModuleKind::Morph).validate()
    }

    /// Architecture with the module's derived initialization seed.
    pub fn encoder_config(&self, module: ModuleKind) -> EncoderConfig {
        EncoderConfig {
            patch_px: self.patch_px,
            embed_dim: self.embed_dim,
            layers: self.layers,
            heads: self.heads,
            mlp_ratio: self.mlp_ratio,
            seed: rng::derive_seed(self.seed, module.init_stream()),
        }
    }

    pub fn partition_rule(&self) -> PartitionRule {
        match self.backdoor_threshold {
            Some(t) => PartitionRule::Threshold(t),
            None => PartitionRule::Quantile(self.q),
        }
    }

    /// Sets one key from its text form. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "lambda1" => self.lambda1 = parse(key, value)?,
            "q" => self.q = parse(key, value)?,
            "backdoor_threshold" => {
                self.backdoor_threshold = match value.trim() {
                    "" | "none" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "gamma_m" => self.gamma_m = parse(key, value)?,
            "beta1" => self.beta1 = parse(key, value)?,
            "beta2" => self.beta2 = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "adam_eps" => self.adam_eps = parse(key, value)?,
            "poi_dim" => self.poi_dim = parse(key, value)?,
            "patch_px" => self.patch_px = parse(key, value)?,
            "embed_dim" => self.embed_dim = parse(key, value)?,
            "layers" => self.layers = parse(key, value)?,
            "heads" => self.heads = parse(key, value)?,
            "mlp_ratio" => self.mlp_ratio = parse(key, value)?,
            "precision" => {
                self.precision = match value.trim() {
                    "f32" => Precision::F32,
                    "f64" => Precision::F64,
                    other => {
                        return Err(Error::Config(format!(
                            "precision must be f32 or f64, got `{other}`"
                        )))
                    }
                }
            }
            _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Canonical `key=value` pairs; floats use shortest round-trip form.
    pub fn pairs(&self) -> Vec<(String, String)> {
        let f = |v: f64| format!("{v:?}");
        vec![
            ("learning_rate".into(), f(self.learning_rate)),
            ("batch_size".into(), self.batch_size.to_string()),
            ("epochs".into(), self.epochs.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("lambda1".into(), f(self.lambda1)),
            ("q".into(), f(self.q)),
            (
                "backdoor_threshold".into(),
                self.backdoor_threshold.map_or("none".into(), f),
            ),
            ("gamma_m".into(), f(self.gamma_m)),
            ("beta1".into(), f(self.beta1)),
            ("beta2".into(), f(self.beta2)),
            ("weight_decay".into(), f(self.weight_decay)),
            ("adam_eps".into(), f(self.adam_eps)),
            ("poi_dim".into(), self.poi_dim.to_string()),
            ("patch_px".into(), self.patch_px.to_string()),
            ("embed_dim".into(), self.embed_dim.to_string()),
            ("layers".into(), self.layers.to_string()),
            ("heads".into(), self.heads.to_string()),
            ("mlp_ratio".into(), self.mlp_ratio.to_string()),
            ("precision".into(), self.precision.as_str().into()),
        ]
    }

    pub fn to_text(&self) -> String {
        self.pairs()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key=value, got `{line}`")))?;
            cfg.set(k.trim(), v)?;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub step: u64,
    pub epoch: u64,
    pub loss: f64,
    pub wall_s: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    /// Mode line written as a `#` comment above the CSV header.
    pub note: Option<String>,
    pub rows: Vec<LogRow>,
    pub warnings: Vec<String>,
    pub skipped_batches: usize,
}

impl TrainLog {
    fn warn(&mut self, msg: String) {
        log::warn!("{msg}");
        self.warnings.push(msg);
    }

    /// Mean loss of the optimizer steps taken in `epoch`.
    pub fn epoch_mean(&self, epoch: u64) -> Option<f64> {
        let v: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.epoch == epoch)
            .map(|r| r.loss)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut s = String::new();
        if let Some(n) = &self.note {
            s.push_str(&format!("# {n}\n"));
        }
        s.push_str("step,epoch,loss,wall_time_s\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{:?},{:.3}\n", r.step, r.epoch, r.loss, r.wall_s));
        }
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: TrainLog,
}

/// Per-module training data, aligned index-for-index with the tile list.
#[derive(Clone, Copy)]
pub enum ModuleData<'a> {
    Access(&'a [AccessSample]),
    Morph(&'a [MorphSample]),
    Econ {
        samples: &'a [EconSample],
        morph: Option<&'a Checkpoint>,
    },
}

impl ModuleData<'_> {
    pub fn kind(&self) -> ModuleKind {
        match self {
            ModuleData::Access(_) => ModuleKind::Access,
            ModuleData::Morph(_) => ModuleKind::Morph,
            ModuleData::Econ { .. } => ModuleKind::Econ,
        }
    }

    fn len(&self) -> usize {
        match self {
            ModuleData::Access(s) => s.len(),
            ModuleData::Morph(s) => s.len(),
            ModuleData::Econ { samples, .. } => samples.len(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct TrainOptions<'a> {
    /// Continue from an end-of-epoch checkpoint written with the same config.
    pub resume: Option<&'a Checkpoint>,
    /// Stop after this many completed epochs (for interrupted runs).
    pub stop_after_epoch: Option<usize>,
}

pub fn train_access(tiles: &[&TilePixels], samples: &[AccessSample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    train(tiles, ModuleData::Access(samples), cfg, TrainOptions::default())
}

pub fn train_morph(tiles: &[&TilePixels], samples: &[MorphSample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    train(tiles, ModuleData::Morph(samples), cfg, TrainOptions::default())
}

/// Economic training on backdoor-adjusted tiles. The partition comes from the
/// frozen morphological encoder; with `q = 0` (no threshold) no adjustment is
/// made and the run is the nightlight-proxy baseline.
pub fn train_econ(
    tiles: &[&TilePixels],
    samples: &[EconSample],
    morph: Option<&Checkpoint>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train(tiles, ModuleData::Econ { samples, morph }, cfg, TrainOptions::default())
}

pub fn train(
    tiles: &[&TilePixels],
    data: ModuleData,
    cfg: &TrainConfig,
    opts: TrainOptions,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.len() == 0 {
        return Err(Error::Config(format!("{} training set is empty", data.kind())));
    }
    if tiles.len() != data.len() {
        return Err(Error::Config(format!(
            "{} tiles for {} samples",
            tiles.len(),
            data.len()
        )));
    }
    match cfg.precision {
        Precision::F32 => run::<f32>(tiles, data, cfg, opts),
        Precision::F64 => run::<f64>(tiles, data, cfg, opts),
    }
}

/// Pixels of the tiles named by `ids`, in that order.
pub fn aligned_tiles<'a, I, S>(bundle: &'a CityBundle, ids: I) -> Result<Vec<&'a TilePixels>>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let by_id: std::collections::HashMap<&str, &TilePixels> = bundle
        .tiles
        .iter()
        .map(|t| (t.tile_id.as_str(), &t.pixels))
        .collect();
    ids.into_iter()
        .map(|id| {
            let id = id.as_ref();
            by_id
                .get(id)
                .copied()
                .ok_or_else(|| Error::Dataset(format!("no image for tile `{id}`")))
        })
        .collect()
}

/// Encodes tiles in batches, returning `f64` embeddings (`n x D`).
pub fn embed_tiles<A: Real>(
    encoder: &ImageEncoder<A>,
    tiles: &[&TilePixels],
    partitions: Option<&[PatchPartition]>,
) -> Result<Array2<f64>> {
    let d = encoder.config.embed_dim;
    let mut out = Array2::zeros((tiles.len(), d));
    let idx: Vec<usize> = (0..tiles.len()).collect();
    for (c, chunk) in idx.chunks(32).enumerate() {
        let x = fill_batch::<A>(tiles, chunk, &encoder.config, partitions);
        let e = encoder.encode(x.view())?;
        out.slice_mut(s![c * 32..c * 32 + chunk.len(), ..])
            .assign(&e.mapv(|v| v.as_f64()));
    }
    Ok(out)
}

fn fill_batch<A: Real>(
    tiles: &[&TilePixels],
    idx: &[usize],
    cfg: &EncoderConfig,
    partitions: Option<&[PatchPartition]>,
) -> Array2<A> {
    let n = cfg.n_patches();
    let mut x = Array2::<A>::zeros((idx.len() * n, cfg.patch_dim()));
    for (b, &i) in idx.iter().enumerate() {
        let mut rows = x.slice_mut(s![b * n..(b + 1) * n, ..]);
        patchify(tiles[i], cfg.patch_px, rows.view_mut());
        if let Some(p) = partitions {
            adjust_patch_rows(rows, &p[i]);
        }
    }
    x
}

struct Model<A> {
    image: ImageEncoder<A>,
    head: Projection<A>,
    poi: Option<PoiEncoder<A>>,
    log_tau: Option<Vec<A>>,
}

impl<A: Real> Model<A> {
    fn init(kind: ModuleKind, cfg: &TrainConfig) -> Self {
        let enc_cfg = cfg.encoder_config(kind);
        let base = enc_cfg.seed;
        let head_seed = rng::derive_seed(base, "head");
        Model {
            image: init_params(&enc_cfg),
            head: Projection::init(kind.head_outputs(), cfg.embed_dim, head_seed),
            poi: (kind == ModuleKind::Access)
                .then(|| PoiEncoder::init(cfg.poi_dim, cfg.embed_dim, rng::derive_seed(base, "poi"))),
            log_tau: (kind == ModuleKind::Access).then(|| vec![A::of(Temperature::default().log_tau)]),
        }
    }

    fn names(&self) -> Vec<String> {
        let mut v: Vec<String> = self.image.names().into_iter().map(|n| format!("image.{n}")).collect();
        v.extend(self.head.names().into_iter().map(|n| format!("head.{n}")));
        if let Some(p) = &self.poi {
            v.extend(p.names().into_iter().map(|n| format!("poi.{n}")));
        }
        if self.log_tau.is_some() {
            v.push("log_tau".into());
        }
        v
    }

    fn tensors(&self) -> Vec<&[A]> {
        let mut v = self.image.tensors();
        v.extend(self.head.tensors());
        if let Some(p) = &self.poi {
            v.extend(p.tensors());
        }
        if let Some(t) = &self.log_tau {
            v.push(t.as_slice());
        }
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut [A]> {
        let mut v = self.image.tensors_mut();
        v.extend(self.head.tensors_mut());
        if let Some(p) = &mut self.poi {
            v.extend(p.tensors_mut());
        }
        if let Some(t) = &mut self.log_tau {
            v.push(t.as_mut_slice());
        }
        v
    }

    /// Temperature is excluded from weight decay.
    fn decay_mask(&self) -> Vec<bool> {
        self.names().iter().map(|n| n != "log_tau").collect()
    }

    fn temperature(&self) -> Temperature {
        Temperature {
            log_tau: self.log_tau.as_ref().map_or(0.0, |t| t[0].as_f64()),
        }
    }
}

fn to_real<A: Real>(a: &Array2<f64>) -> Array2<A> {
    a.mapv(A::of)
}

fn to_f64<A: Real>(a: &Array2<A>) -> Array2<f64> {
    a.mapv(|v| v.as_f64())
}

struct StepResult<A> {
    loss: f64,
    grads: Vec<Vec<A>>,
}

fn access_step<A: Real>(
    model: &Model<A>,
    x: &Array2<A>,
    samples: &[&AccessSample],
    lambda1: f64,
) -> Result<StepResult<A>> {
    let b = samples.len();
    let poi = model.poi.as_ref().expect("access model has a POI encoder");
    let coefs = Array2::from_shape_fn((b, N_CATEGORIES), |(i, j)| {
        A::of(samples[i].distances.gravity_coefficients()[j])
    });
    let labels = Array2::from_shape_fn((b, N_CATEGORIES), |(i, j)| samples[i].labels()[j]);

    let (e, _, cache) = model.image.forward(x.view())?;
    let (p, pcache) = poi.forward(coefs.view())?;
    let c = contrastive_loss(to_f64(&e).view(), to_f64(&p).view(), model.temperature())?;
    let logits = to_f64(&model.head.project(e.view())?);
    let pre = precondition_loss(logits.view(), labels.view())?;
    let (g_head, de_p) = model.head.backward(e.view(), &to_real(&(&pre.grad * lambda1)));
    let de = to_real::<A>(&c.d_img) + &de_p;
    let g_image = model.image.backward(x.view(), &cache, &de);
    let g_poi = poi.backward(&pcache, &to_real(&c.d_poi));

    let mut grads: Vec<Vec<A>> = g_image.tensors().iter().map(|t| t.to_vec()).collect();
    grads.extend(g_head.tensors().iter().map(|t| t.to_vec()));
    grads.extend(g_poi.tensors().iter().map(|t| t.to_vec()));
    grads.push(vec![A::of(c.d_log_tau)]);
    Ok(StepResult {
        loss: combined_access_loss(c.loss, pre.loss, lambda1),
        grads,
    })
}

/// `None` when the batch is degenerate and must be skipped.
fn pearson_step<A: Real>(
    model: &Model<A>,
    x: &Array2<A>,
    targets: &Array1<f64>,
) -> Result<Option<StepResult<A>>> {
    let (e, _, cache) = model.image.forward(x.view())?;
    let scores = model.head.project(e.view())?;
    let pred = scores.column(0).mapv(|v| v.as_f64());
    let l = pearson_loss(pred.view(), targets.view())?;
    if l.degenerate {
        return Ok(None);
    }
    let d_scores = l.grad.mapv(A::of).insert_axis(ndarray::Axis(1));
    let (g_head, de) = model.head.backward(e.view(), &d_scores);
    let g_image = model.image.backward(x.view(), &cache, &de);
    let mut grads: Vec<Vec<A>> = g_image.tensors().iter().map(|t| t.to_vec()).collect();
    grads.extend(g_head.tensors().iter().map(|t| t.to_vec()));
    Ok(Some(StepResult { loss: l.loss, grads }))
}

fn has_spread(v: &Array1<f64>) -> bool {
    v.iter().any(|&t| t != v[0])
}

fn run<A: Real>(
    tiles: &[&TilePixels],
    data: ModuleData,
    cfg: &TrainConfig,
    opts: TrainOptions,
) -> Result<TrainOutcome> {
    let kind = data.kind();
    let config_text = cfg.to_text();
    let hash = config_hash(kind, &config_text);
    let mut model = Model::<A>::init(kind, cfg);
    let shapes: Vec<usize> = model.tensors().iter().map(|t| t.len()).collect();
    let mut opt = AdamW::<A>::new(
        cfg.learning_rate,
        cfg.beta1,
        cfg.beta2,
        cfg.adam_eps,
        cfg.weight_decay,
        &shapes,
    );
    let names = model.names();
    let decay = model.decay_mask();
    let mut start_epoch = 0usize;

    if let Some(ck) = opts.resume {
        if ck.module != kind || ck.config_hash != hash {
            return Err(Error::Config(format!(
                "cannot resume: checkpoint is {} with config hash {}, run is {kind} with {}",
                ck.module,
                ck.hash_hex(),
                checkpoint::hex(&hash)
            )));
        }
        let load = |prefix: &str| -> Result<Vec<Vec<f64>>> {
            names
                .iter()
                .map(|n| {
                    ck.tensor(&format!("{prefix}.{n}"))
                        .map(<[f64]>::to_vec)
                        .ok_or_else(|| Error::Format(format!("checkpoint lacks `{prefix}.{n}`")))
                })
                .collect()
        };
        for (dst, src) in model.tensors_mut().into_iter().zip(load("param")?) {
            dst.iter_mut().zip(&src).for_each(|(d, s)| *d = A::of(*s));
        }
        for (dst, src) in opt.m.iter_mut().zip(load("adam_m")?) {
            dst.iter_mut().zip(&src).for_each(|(d, s)| *d = A::of(*s));
        }
        for (dst, src) in opt.v.iter_mut().zip(load("adam_v")?) {
            dst.iter_mut().zip(&src).for_each(|(d, s)| *d = A::of(*s));
        }
        opt.t = ck.step;
        start_epoch = ck.epoch as usize;
    }

    let mut log = TrainLog::default();
    let partitions: Option<Vec<PatchPartition>> = match data {
        ModuleData::Econ { morph, .. } => {
            let rule = cfg.partition_rule();
            if rule.is_identity() {
                log.note = Some("nightlight-proxy mode (no backdoor adjustment)".into());
                None
            } else {
                let morph = morph.ok_or_else(|| {
                    Error::Config("economic training with adjustment needs a morph checkpoint".into())
                })?;
                if morph.module != ModuleKind::Morph {
                    return Err(Error::Config(format!(
                        "expected a morph checkpoint, got {}",
                        morph.module
                    )));
                }
                let enc = morph.image_encoder::<A>()?;
                let adjusted = adjust_dataset(tiles, &enc, rule)?;
                log.note = Some(format!("backdoor-adjusted mode ({rule:?})"));
                Some(adjusted.partitions)
            }
        }
        _ => None,
    };

    let enc_cfg = cfg.encoder_config(kind);
    let n = data.len();
    let started = Instant::now();
    let end_epoch = opts.stop_after_epoch.map_or(cfg.epochs, |e| e.min(cfg.epochs));
    let mut epoch = start_epoch;
    while epoch < end_epoch {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng::indexed_stream(cfg.seed, rng::SHUFFLE, epoch as u64));
        for batch in order.chunks(cfg.batch_size) {
            let pearson = kind != ModuleKind::Access;
            if pearson && batch.len() < 2 {
                continue;
            }
            let targets: Option<Array1<f64>> = match data {
                ModuleData::Morph(s) => Some(batch.iter().map(|&i| s[i].log_fa).collect()),
                ModuleData::Econ { samples, .. } => {
                    Some(batch.iter().map(|&i| samples[i].log_ni).collect())
                }
                ModuleData::Access(_) => None,
            };
            if let Some(t) = &targets {
                if !has_spread(t) {
                    log.skipped_batches += 1;
                    continue;
                }
            }
            let x = fill_batch::<A>(tiles, batch, &enc_cfg, partitions.as_deref());
            let at = |e: Error| match e {
                Error::Numeric(m) => Error::Numeric(format!(
                    "{kind} training, epoch {epoch}, step {}: {m}",
                    opt.t + 1
                )),
                other => other,
            };
            let step = match (data, &targets) {
                (ModuleData::Access(s), _) => {
                    let batch_samples: Vec<&AccessSample> = batch.iter().map(|&i| &s[i]).collect();
                    Some(access_step(&model, &x, &batch_samples, cfg.lambda1).map_err(at)?)
                }
                (_, Some(t)) => pearson_step(&model, &x, t).map_err(at)?,
                _ => unreachable!("Pearson modules always have targets"),
            };
            let Some(step) = step else {
                log.skipped_batches += 1;
                continue;
            };
            if !step.loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "{kind} training, epoch {epoch}, step {}: loss is {}",
                    opt.t + 1,
                    step.loss
                )));
            }
            let grad_refs: Vec<&[A]> = step.grads.iter().map(Vec::as_slice).collect();
            opt.step(model.tensors_mut(), grad_refs, &decay);
            if let Some(t) = &mut model.log_tau {
                let mut temp = Temperature { log_tau: t[0].as_f64() };
                temp.clamp();
                t[0] = A::of(temp.log_tau);
            }
            log.rows.push(LogRow {
                step: opt.t,
                epoch: epoch as u64,
                loss: step.loss,
                wall_s: started.elapsed().as_secs_f64(),
            });
        }
        if let Some(m) = log.epoch_mean(epoch as u64) {
            log::info!("{kind} epoch {epoch}: mean loss {m:.5}");
        }
        epoch += 1;
    }
    if kind != ModuleKind::Access && log.rows.is_empty() && log.skipped_batches > 0 {
        log.warn(format!(
            "{kind}: every batch was degenerate ({} skipped); parameters were not updated",
            log.skipped_batches
        ));
    } else if log.skipped_batches > 0 {
        log.warn(format!("{kind}: skipped {} degenerate batches", log.skipped_batches));
    }

    let mut ck = Checkpoint {
        module: kind,
        config_text,
        config_hash: hash,
        step: opt.t,
        epoch: epoch as u64,
        tensors: Vec::new(),
    };
    let push = |ck: &mut Checkpoint, prefix: &str, values: Vec<&[A]>| {
        for (name, t) in names.iter().zip(values) {
            ck.tensors.push(NamedTensor {
                name: format!("{prefix}.{name}"),
                values: t.iter().map(|v| v.as_f64()).collect(),
            });
        }
    };
    push(&mut ck, "param", model.tensors());
    push(&mut ck, "adam_m", opt.m.iter().map(Vec::as_slice).collect());
    push(&mut ck, "adam_v", opt.v.iter().map(Vec::as_slice).collect());
    Ok(TrainOutcome { checkpoint: ck, log })
}

#[cfg(test)]
mod tests;

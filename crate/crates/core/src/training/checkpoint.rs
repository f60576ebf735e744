//! Binary checkpoint format.
//!
//! ```text
//! magic      8 bytes  "PVMAPCK1"
//! module     u8       0 access, 1 morph, 2 econ
//! config     u64 length + UTF-8 key=value lines
//! hash       32 bytes sha256 of (module, config)
//! step       u64
//! epoch      u64
//! tensors    u64 count, then per tensor:
//!            u64 name length + UTF-8 name, u64 value count + f64 values
//! ```
//! All integers and reals are little-endian.

use std::path::Path;

use sha2::{Digest, Sha256};

use super::ModuleKind;
use crate::encoder::{ImageEncoder, ParamSet, PoiEncoder, Projection, Real};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"PVMAPCK1";

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub module: ModuleKind,
    pub config_text: String,
    pub config_hash: [u8; 32],
    pub step: u64,
    pub epoch: u64,
    pub tensors: Vec<NamedTensor>,
}

pub fn config_hash(module: ModuleKind, config_text: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(module.as_str().as_bytes());
    h.update(b"\n");
    h.update(config_text.as_bytes());
    h.finalize().into()
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format("checkpoint truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u64()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Format("checkpoint string is not UTF-8".into()))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(self.module.index() as u8);
        out.extend_from_slice(&(self.config_text.len() as u64).to_le_bytes());
        out.extend_from_slice(self.config_text.as_bytes());
        out.extend_from_slice(&self.config_hash);
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u64).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u64).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.extend_from_slice(&(t.values.len() as u64).to_le_bytes());
            for v in &t.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Format("not a checkpoint file (bad magic)".into()));
        }
        let module = ModuleKind::from_index(r.take(1)?[0] as usize)
            .ok_or_else(|| Error::Format("unknown module tag in checkpoint".into()))?;
        let config_text = r.string()?;
        let config_hash: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        if config_hash != self::config_hash(module, &config_text) {
            return Err(Error::Format("checkpoint config hash does not match its config".into()));
        }
        let step = r.u64()?;
        let epoch = r.u64()?;
        let count = r.u64()? as usize;
        let mut tensors = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let name = r.string()?;
            let n = r.u64()? as usize;
            let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::Format("tensor too large".into()))?)?;
            let values = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            tensors.push(NamedTensor { name, values });
        }
        if r.pos != buf.len() {
            return Err(Error::Format("trailing bytes after checkpoint".into()));
        }
        Ok(Checkpoint {
            module,
            config_text,
            config_hash,
            step,
            epoch,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn hash_hex(&self) -> String {
        hex(&self.config_hash)
    }

    /// Value of `key` in the stored config text.
    pub fn config_value(&self, key: &str) -> Option<&str> {
        self.config_text.lines().find_map(|l| {
            let (k, v) = l.split_once('=')?;
            (k == key).then_some(v)
        })
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .map(|t| t.values.as_slice())
    }

    /// Loads the tensors named `<prefix>.<name>` into `target`.
    pub(crate) fn fill<A: Real, P: ParamSet<A>>(&self, prefix: &str, target: &mut P) -> Result<()> {
        let values = target
            .names()
            .iter()
            .map(|n| {
                let full = format!("{prefix}.{n}");
                self.tensor(&full)
                    .map(<[f64]>::to_vec)
                    .ok_or_else(|| Error::Format(format!("checkpoint lacks tensor `{full}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        target.load_f64(&values)
    }

    /// The trained image encoder.
    pub fn image_encoder<A: Real>(&self) -> Result<ImageEncoder<A>> {
        let cfg = super::TrainConfig::from_text(&self.config_text)?;
        let mut enc = crate::encoder::init_params::<A>(&cfg.encoder_config(self.module));
        self.fill("param.image", &mut enc)?;
        Ok(enc)
    }

    pub fn head<A: Real>(&self) -> Result<Projection<A>> {
        let cfg = super::TrainConfig::from_text(&self.config_text)?;
        let mut head = Projection::init(self.module.head_outputs(), cfg.embed_dim, 0);
        self.fill("param.head", &mut head)?;
        Ok(head)
    }

    pub fn poi_encoder<A: Real>(&self) -> Result<PoiEncoder<A>> {
        if self.module != ModuleKind::Access {
            return Err(Error::State(format!(
                "{} checkpoint has no POI encoder",
                self.module
            )));
        }
        let cfg = super::TrainConfig::from_text(&self.config_text)?;
        let mut poi = PoiEncoder::init(cfg.poi_dim, cfg.embed_dim, 0);
        self.fill("param.poi", &mut poi)?;
        Ok(poi)
    }

    pub fn temperature(&self) -> Result<crate::losses::Temperature> {
        let v = self
            .tensor("param.log_tau")
            .ok_or_else(|| Error::State(format!("{} checkpoint has no temperature", self.module)))?;
        Ok(crate::losses::Temperature { log_tau: v[0] })
    }
}

//! Binary checkpoints: magic, version, JSON header, little-endian payload.
//!
//! Layout: `KAGNCKPT` | u32 version | u64 header length | header JSON | payload.
//! Tensor offsets in the header are relative to the payload start.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::config::TrainConfig;
use crate::harness::metrics::History;
use crate::harness::optim::{AdamW, Moments};
use crate::harness::train::Trainer;
use crate::layers::Module;
use crate::models::{Model, ModelSpec};
use crate::peft::PeftPlan;
use crate::tensor::{DType, Real};

pub const MAGIC: &[u8; 8] = b"KAGNCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: DType,
    pub offset: u64,
    pub len: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    /// Word position, as a decimal string (it is a 128-bit value).
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| Error::Corrupt(format!("bad RNG word position `{}`", self.word_pos)))?;
        let mut r = ChaCha8Rng::from_seed(self.seed);
        r.set_stream(self.stream);
        r.set_word_pos(pos);
        Ok(r)
    }
}

/// Resumable training state stored alongside the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHeader {
    pub config: TrainConfig,
    pub step: u64,
    pub epoch: usize,
    pub optimizer_step: u64,
    pub rng: RngState,
    pub history: History,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub model: ModelSpec,
    pub dtype: DType,
    pub tensors: Vec<TensorEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peft: Option<PeftPlan>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainHeader>,
}

/// A parsed checkpoint with all tensors decoded to `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: Header,
    pub tensors: BTreeMap<String, Vec<f64>>,
}

fn encode<T: Real>(values: &[T], out: &mut Vec<u8>) {
    for &v in values {
        match T::DTYPE {
            DType::F32 => out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes()),
            DType::F64 => out.extend_from_slice(&v.as_f64().to_le_bytes()),
        }
    }
}

fn decode(bytes: &[u8], dtype: DType) -> Vec<f64> {
    match dtype {
        DType::F32 => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect(),
        DType::F64 => bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect(),
    }
}

struct PayloadWriter {
    entries: Vec<TensorEntry>,
    bytes: Vec<u8>,
}

impl PayloadWriter {
    fn push<T: Real>(&mut self, name: String, shape: &[usize], values: &[T]) {
        let offset = self.bytes.len() as u64;
        encode(values, &mut self.bytes);
        self.entries.push(TensorEntry {
            name,
            shape: shape.to_vec(),
            dtype: T::DTYPE,
            offset,
            len: self.bytes.len() as u64 - offset,
        });
    }
}

/// Writes model weights (and buffers), plus optional PEFT plan and training state.
pub fn save_checkpoint<T: Real>(
    path: &Path,
    model: &Model<T>,
    peft: Option<&PeftPlan>,
    train: Option<(&TrainHeader, &AdamW)>,
) -> Result<()> {
    let mut w = PayloadWriter {
        entries: Vec::new(),
        bytes: Vec::new(),
    };
    for (name, p) in model.params() {
        w.push(name, p.shape(), p.tensor().data());
    }
    if let Some((_, opt)) = train {
        for (name, m) in &opt.moments {
            w.push(format!("adam.m.{name}"), &[m.m.len()], &m.m);
            w.push(format!("adam.v.{name}"), &[m.v.len()], &m.v);
        }
    }
    let header = Header {
        model: model.spec.clone(),
        dtype: T::DTYPE,
        tensors: w.entries,
        peft: peft.cloned(),
        train: train.map(|(h, _)| h.clone()),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(20 + json.len() + w.bytes.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&w.bytes);
    // Write to a sibling file first so a crash never leaves a half-written checkpoint.
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&out)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

impl Checkpoint {
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::Version {
                found: version,
                expected: VERSION,
            });
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let payload_start = 20usize
            .checked_add(hlen)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::Corrupt("header extends past end of file".into()))?;
        let header: Header = serde_json::from_slice(&bytes[20..payload_start])
            .map_err(|e| Error::Corrupt(format!("unreadable header: {e}")))?;
        let payload = &bytes[payload_start..];
        let mut spans: Vec<(u64, u64)> = Vec::with_capacity(header.tensors.len());
        let mut tensors = BTreeMap::new();
        for e in &header.tensors {
            let numel: usize = e.shape.iter().product();
            if e.len != (numel * e.dtype.size()) as u64 {
                return Err(Error::Corrupt(format!("tensor `{}`: length does not match shape", e.name)));
            }
            let end = e
                .offset
                .checked_add(e.len)
                .filter(|&end| end <= payload.len() as u64)
                .ok_or_else(|| Error::Corrupt(format!("tensor `{}` extends past end of payload", e.name)))?;
            spans.push((e.offset, end));
            let data = decode(&payload[e.offset as usize..end as usize], e.dtype);
            if tensors.insert(e.name.clone(), data).is_some() {
                return Err(Error::Corrupt(format!("duplicate tensor `{}`", e.name)));
            }
        }
        spans.sort_unstable();
        if spans.windows(2).any(|w| w[0].1 > w[1].0) {
            return Err(Error::Corrupt("overlapping tensor ranges".into()));
        }
        Ok(Checkpoint { header, tensors })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&fs::read(path)?)
    }

    /// Rebuilds the model and copies every stored tensor into it. Nothing is
    /// returned unless all tensors match.
    pub fn model<T: Real>(&self) -> Result<Model<T>> {
        let mut model = self.header.model.build::<T>(0)?;
        let shapes: BTreeMap<&str, &[usize]> = self
            .header
            .tensors
            .iter()
            .map(|e| (e.name.as_str(), e.shape.as_slice()))
            .collect();
        let mut staged = Vec::new();
        for (name, p) in model.params() {
            let (Some(data), Some(shape)) = (self.tensors.get(&name), shapes.get(name.as_str())) else {
                return Err(Error::Corrupt(format!("missing tensor `{name}`")));
            };
            if *shape != p.shape() {
                return Err(Error::Corrupt(format!(
                    "tensor `{name}` has shape {shape:?}, model expects {:?}",
                    p.shape()
                )));
            }
            staged.push(data.iter().map(|&v| T::lit(v)).collect::<Vec<T>>());
        }
        for ((_, p), data) in model.params_mut().into_iter().zip(staged) {
            p.set_data(data)?;
        }
        if let Some(plan) = &self.header.peft {
            for (_, p) in model.params_mut() {
                let t = plan.trains_kind(p.kind());
                p.set_trainable(t);
            }
        }
        Ok(model)
    }

    fn optimizer(&self, train: &TrainHeader) -> Result<AdamW> {
        let mut opt = AdamW::new(train.config.optimizer.clone());
        opt.step = train.optimizer_step;
        for name in self.tensors.keys() {
            if let Some(p) = name.strip_prefix("adam.m.") {
                let v = self
                    .tensors
                    .get(&format!("adam.v.{p}"))
                    .ok_or_else(|| Error::Corrupt(format!("missing second moment of `{p}`")))?;
                opt.moments.insert(
                    p.to_string(),
                    Moments {
                        m: self.tensors[name].clone(),
                        v: v.clone(),
                    },
                );
            }
        }
        Ok(opt)
    }

    /// Restores a trainer that continues exactly where the saved one stopped.
    pub fn trainer<T: Real>(&self) -> Result<Trainer<T>> {
        let train = self
            .header
            .train
            .as_ref()
            .ok_or_else(|| Error::Config("checkpoint has no training state".into()))?;
        let model = self.model::<T>()?;
        let mut t = Trainer::from_parts(model, train.config.clone(), self.header.peft.clone());
        t.optimizer = self.optimizer(train)?;
        t.rng = train.rng.restore()?;
        t.step = train.step;
        t.epoch = train.epoch;
        t.history = train.history.clone();
        Ok(t)
    }
}

impl<T: Real> Trainer<T> {
    pub fn save(&self, path: &Path) -> Result<()> {
        let header = TrainHeader {
            config: self.config.clone(),
            step: self.step,
            epoch: self.epoch,
            optimizer_step: self.optimizer.step,
            rng: RngState::capture(&self.rng),
            history: self.history.clone(),
        };
        save_checkpoint(path, &self.model, self.peft.as_ref(), Some((&header, &self.optimizer)))
    }

    pub fn resume(path: &Path) -> Result<Self> {
        Checkpoint::read(path)?.trainer()
    }
}

/// Loads model weights only.
pub fn load_model<T: Real>(path: &Path) -> Result<Model<T>> {
    Checkpoint::read(path)?.model()
}

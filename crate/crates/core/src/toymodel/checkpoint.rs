use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::config::ModelConfig;
use super::model::ToyModel;
use super::optim::{Adam, AdamConfig};
use crate::error::{Error, Result};
use crate::nn::ParamSet;
use crate::scalar::{Dtype, Scalar};

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"SCNCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;
const BYTES_CODE: u8 = 2;

fn corrupt(msg: impl Into<String>) -> Error {
    Error::CheckpointCorrupt(msg.into())
}

/// Payload of one named entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Blob {
    Float { dtype: Dtype, data: Vec<u8> },
    Bytes(Vec<u8>),
}

impl Blob {
    pub fn from_scalars<S: Scalar>(values: &[S]) -> Self {
        let mut data = Vec::with_capacity(values.len() * S::DTYPE.width());
        for v in values {
            v.write_le(&mut data);
        }
        Blob::Float {
            dtype: S::DTYPE,
            data,
        }
    }

    pub fn to_scalars<S: Scalar>(&self) -> Result<Vec<S>> {
        match self {
            Blob::Float { dtype, data } if *dtype == S::DTYPE => {
                Ok(data.chunks_exact(dtype.width()).map(S::read_le).collect())
            }
            Blob::Float { dtype, .. } => Err(corrupt(format!(
                "stored as {dtype:?}, requested {:?}",
                S::DTYPE
            ))),
            Blob::Bytes(_) => Err(corrupt("expected a float blob, found raw bytes")),
        }
    }

    fn code(&self) -> u8 {
        match self {
            Blob::Float { dtype, .. } => dtype.code(),
            Blob::Bytes(_) => BYTES_CODE,
        }
    }

    fn payload(&self) -> &[u8] {
        match self {
            Blob::Float { data, .. } | Blob::Bytes(data) => data,
        }
    }
}

/// Ordered named blobs plus the training step.
///
/// Layout: magic, `u32` version, `u64` step, `u32` entry count, then per
/// entry `u32` name length, name, `u8` kind, `u64` byte length, bytes; a
/// SHA-256 of everything before it closes the file. Integers are
/// little-endian.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Checkpoint {
    pub step: u64,
    pub entries: Vec<(String, Blob)>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|e| *e <= self.bytes.len())
            .ok_or_else(|| corrupt("truncated"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}

impl Checkpoint {
    pub fn push(&mut self, name: impl Into<String>, blob: Blob) {
        self.entries.push((name.into(), blob));
    }

    pub fn get(&self, name: &str) -> Result<&Blob> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, b)| b)
            .ok_or_else(|| corrupt(format!("missing entry `{name}`")))
    }

    pub fn bytes_of(&self, name: &str) -> Result<&[u8]> {
        match self.get(name)? {
            Blob::Bytes(b) => Ok(b),
            Blob::Float { .. } => Err(corrupt(format!("entry `{name}` is not raw bytes"))),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, blob) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(blob.code());
            out.extend_from_slice(&(blob.payload().len() as u64).to_le_bytes());
            out.extend_from_slice(blob.payload());
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)
            .map_err(|_| corrupt("file too short for a header"))?
            != CHECKPOINT_MAGIC
        {
            return Err(corrupt("bad magic bytes"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointVersion {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        if bytes.len() < 32 {
            return Err(corrupt("truncated"));
        }
        let body_len = bytes.len() - 32;
        if Sha256::digest(&bytes[..body_len]).as_slice() != &bytes[body_len..] {
            return Err(corrupt("checksum mismatch"));
        }
        let mut r = Reader {
            bytes: &bytes[..body_len],
            pos: r.pos,
        };
        let step = r.u64()?;
        let count = r.u32()?;
        let mut entries = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| corrupt("entry name is not UTF-8"))?
                .to_string();
            let code = r.take(1)?[0];
            let n = r.u64()? as usize;
            let data = r.take(n)?.to_vec();
            let blob = match code {
                0 => Blob::Float {
                    dtype: Dtype::F32,
                    data,
                },
                1 => Blob::Float {
                    dtype: Dtype::F64,
                    data,
                },
                BYTES_CODE => Blob::Bytes(data),
                other => return Err(corrupt(format!("unknown blob kind {other}"))),
            };
            if let Blob::Float { dtype, data } = &blob {
                if data.len() % dtype.width() != 0 {
                    return Err(corrupt(format!(
                        "entry `{name}` is not a whole number of values"
                    )));
                }
            }
            entries.push((name, blob));
        }
        if r.pos != body_len {
            return Err(corrupt("trailing bytes after the last entry"));
        }
        Ok(Self { step, entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Exact generator position: seed, stream and word offset.
pub fn rng_state_bytes(rng: &ChaCha8Rng) -> Vec<u8> {
    let mut out = rng.get_seed().to_vec();
    out.extend_from_slice(&rng.get_stream().to_le_bytes());
    out.extend_from_slice(&rng.get_word_pos().to_le_bytes());
    out
}

pub fn rng_from_state_bytes(bytes: &[u8]) -> Result<ChaCha8Rng> {
    if bytes.len() != 56 {
        return Err(corrupt("rng state must be 56 bytes"));
    }
    let mut rng = ChaCha8Rng::from_seed(bytes[..32].try_into().expect("32 bytes"));
    rng.set_stream(u64::from_le_bytes(
        bytes[32..40].try_into().expect("8 bytes"),
    ));
    rng.set_word_pos(u128::from_le_bytes(
        bytes[40..56].try_into().expect("16 bytes"),
    ));
    Ok(rng)
}

/// Model, optimizer, data generator position and step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState<S> {
    pub model: ToyModel<S>,
    pub optimizer: Adam<S>,
    pub rng: ChaCha8Rng,
    pub step: u64,
}

fn store<S: Scalar, P: ParamSet<S>>(ck: &mut Checkpoint, prefix: &str, p: &P) {
    p.visit(prefix, &mut |name, vals| {
        ck.push(name, Blob::from_scalars(vals))
    });
}

fn restore<S: Scalar, P: ParamSet<S>>(ck: &Checkpoint, prefix: &str, p: &mut P) -> Result<()> {
    let mut err = None;
    p.visit_mut(prefix, &mut |name, vals| {
        if err.is_some() {
            return;
        }
        match ck.get(&name).and_then(|b| b.to_scalars::<S>()) {
            Ok(v) if v.len() == vals.len() => vals.copy_from_slice(&v),
            Ok(v) => {
                err = Some(corrupt(format!(
                    "entry `{name}` has {} values, expected {}",
                    v.len(),
                    vals.len()
                )))
            }
            Err(e) => err = Some(e),
        }
    });
    err.map_or(Ok(()), Err)
}

impl<S: Scalar> TrainState<S> {
    /// Checkpoint with every weight, both Adam moments, the rng position and
    /// the configs. `extra` entries are appended as raw bytes.
    pub fn to_checkpoint(&self, extra: &[(String, Vec<u8>)]) -> Checkpoint {
        let mut ck = Checkpoint {
            step: self.step,
            entries: Vec::new(),
        };
        let model_cfg = serde_json::to_vec(&self.model.config).expect("config serializes");
        let adam_cfg = serde_json::to_vec(&self.optimizer.config).expect("config serializes");
        ck.push("config.model", Blob::Bytes(model_cfg));
        ck.push("config.optimizer", Blob::Bytes(adam_cfg));
        ck.push(
            "optimizer.steps",
            Blob::Bytes(self.optimizer.steps.to_le_bytes().to_vec()),
        );
        ck.push("rng", Blob::Bytes(rng_state_bytes(&self.rng)));
        store(&mut ck, "base", &self.model.base);
        store(&mut ck, "trainable", &self.model.trainable);
        let mut names = Vec::new();
        self.model.trainable.visit("", &mut |n, _| names.push(n));
        for (i, name) in names.iter().enumerate() {
            ck.push(
                format!("optimizer.m.{name}"),
                Blob::from_scalars(&self.optimizer.first[i]),
            );
            ck.push(
                format!("optimizer.v.{name}"),
                Blob::from_scalars(&self.optimizer.second[i]),
            );
        }
        for (name, bytes) in extra {
            ck.push(name.clone(), Blob::Bytes(bytes.clone()));
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let config: ModelConfig = serde_json::from_slice(ck.bytes_of("config.model")?)
            .map_err(|e| corrupt(format!("model config: {e}")))?;
        let adam_cfg: AdamConfig = serde_json::from_slice(ck.bytes_of("config.optimizer")?)
            .map_err(|e| corrupt(format!("optimizer config: {e}")))?;
        // shapes come from a throwaway initialization; every value is overwritten
        let mut model = ToyModel::<S>::new(config, &mut ChaCha8Rng::seed_from_u64(0))?;
        restore(ck, "base", &mut model.base)?;
        restore(ck, "trainable", &mut model.trainable)?;
        let mut optimizer = Adam::new(adam_cfg, &model.trainable)?;
        let steps = ck.bytes_of("optimizer.steps")?;
        optimizer.steps = u64::from_le_bytes(
            steps
                .try_into()
                .map_err(|_| corrupt("optimizer step counter"))?,
        );
        let mut names = Vec::new();
        model.trainable.visit("", &mut |n, _| names.push(n));
        for (i, name) in names.iter().enumerate() {
            optimizer.first[i] = ck.get(&format!("optimizer.m.{name}"))?.to_scalars()?;
            optimizer.second[i] = ck.get(&format!("optimizer.v.{name}"))?.to_scalars()?;
            if optimizer.first[i].len() != optimizer.second[i].len() {
                return Err(corrupt(format!(
                    "optimizer moments for `{name}` differ in length"
                )));
            }
        }
        Ok(Self {
            model,
            optimizer,
            rng: rng_from_state_bytes(ck.bytes_of("rng")?)?,
            step: ck.step,
        })
    }
}

pub fn save_checkpoint<S: Scalar>(
    state: &TrainState<S>,
    extra: &[(String, Vec<u8>)],
    path: &Path,
) -> Result<()> {
    state.to_checkpoint(extra).save(path)
}

pub fn load_checkpoint<S: Scalar>(path: &Path) -> Result<(TrainState<S>, Checkpoint)> {
    let ck = Checkpoint::load(path)?;
    Ok((TrainState::from_checkpoint(&ck)?, ck))
}

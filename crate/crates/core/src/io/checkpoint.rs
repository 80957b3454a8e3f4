use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::atomic::write_atomic;
use crate::error::{Error, Result};
use crate::fusion::{FusionModel, ModelConfig};
use crate::numerics::{AdamState, Tensor};

pub const MAGIC: &[u8; 4] = b"TPRS";
pub const FORMAT_VERSION: u32 = 1;

/// Position of a ChaCha8 stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    /// Decimal `u128` word position.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| Error::Format("checkpoint RNG position is not an integer".into()))?;
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

/// Trained model plus the optimiser and RNG state needed to resume.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: FusionModel,
    pub adam: Option<AdamState>,
    pub rng: Option<RngState>,
    pub best_val_loss: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorIndex {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    tensors: Vec<TensorIndex>,
    adam_steps: Option<u64>,
    rng: Option<RngState>,
    best_val_loss: f64,
}

/// SHA-256 of the canonical JSON form of a model configuration.
pub fn config_hash(cfg: &ModelConfig) -> [u8; 32] {
    let json = serde_json::to_vec(cfg).expect("model config serialises");
    Sha256::digest(&json).into()
}

fn hex(b: &[u8]) -> String {
    b.iter().map(|x| format!("{x:02x}")).collect()
}

/// Layout: magic, version (u32 LE), config hash (32 bytes), header length
/// (u64 LE), JSON header, parameter values (f64 LE) followed by the Adam first
/// and second moments when present, then a SHA-256 of everything before it.
pub fn encode_checkpoint(ck: &Checkpoint) -> Result<Vec<u8>> {
    let params = &ck.model.params;
    let header = Header {
        model: ck.model.config.clone(),
        tensors: params
            .entries()
            .iter()
            .map(|e| TensorIndex {
                name: e.name.clone(),
                shape: e.value.shape().to_vec(),
            })
            .collect(),
        adam_steps: ck.adam.as_ref().map(|a| a.step_count),
        rng: ck.rng.clone(),
        best_val_loss: ck.best_val_loss,
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&config_hash(&ck.model.config));
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    let mut blobs: Vec<&Tensor> = params.entries().iter().map(|e| &e.value).collect();
    if let Some(a) = &ck.adam {
        if a.m.len() != params.len() || a.v.len() != params.len() {
            return Err(Error::contract("optimiser state does not match the parameters"));
        }
        blobs.extend(a.m.iter());
        blobs.extend(a.v.iter());
    }
    for t in blobs {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("checkpoint is truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn tensor(&mut self, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let raw = self.take(n * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Tensor::new(shape.to_vec(), data)
    }
}

/// Decodes a checkpoint; with `expected`, refuses one written for another model configuration.
pub fn decode_checkpoint(bytes: &[u8], expected: Option<&ModelConfig>) -> Result<Checkpoint> {
    if bytes.len() < 4 + 4 + 32 + 8 + 32 || &bytes[..4] != MAGIC {
        return Err(Error::Format("not a checkpoint file (bad magic)".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    let mut r = Reader { bytes: body, pos: 4 };
    let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "checkpoint format version {version} is not supported (expected {FORMAT_VERSION})"
        )));
    }
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Format("checkpoint is truncated or corrupt (checksum mismatch)".into()));
    }
    let hash: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
    let len = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes")) as usize;
    let header: Header = serde_json::from_slice(r.take(len)?).map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
    if config_hash(&header.model) != hash {
        return Err(Error::Format("checkpoint header does not match its configuration hash".into()));
    }
    if let Some(cfg) = expected {
        let want = config_hash(cfg);
        if want != hash {
            return Err(Error::config(format!(
                "checkpoint was written for a different model configuration (hash {} vs expected {})",
                hex(&hash[..8]),
                hex(&want[..8])
            )));
        }
    }
    let mut model = FusionModel::new(header.model.clone(), &mut ChaCha8Rng::seed_from_u64(0))?;
    if model.params.len() != header.tensors.len() {
        return Err(Error::Format("checkpoint tensor count does not match the model".into()));
    }
    let ids: Vec<_> = model.params.ids().collect();
    for (id, idx) in ids.iter().zip(&header.tensors) {
        let p = model.params.get(*id);
        if model.params.name(*id) != idx.name || p.shape() != idx.shape.as_slice() {
            return Err(Error::Format(format!("checkpoint tensor '{}' does not match the model layout", idx.name)));
        }
        *model.params.get_mut(*id) = r.tensor(&idx.shape)?;
    }
    let adam = match header.adam_steps {
        Some(step_count) => {
            let m = header.tensors.iter().map(|t| r.tensor(&t.shape)).collect::<Result<_>>()?;
            let v = header.tensors.iter().map(|t| r.tensor(&t.shape)).collect::<Result<_>>()?;
            Some(AdamState { step_count, m, v })
        }
        None => None,
    };
    if r.pos != body.len() {
        return Err(Error::Format("checkpoint has trailing bytes".into()));
    }
    Ok(Checkpoint {
        model,
        adam,
        rng: header.rng,
        best_val_loss: header.best_val_loss,
    })
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    write_atomic(path, &encode_checkpoint(ck)?)
}

pub fn load_checkpoint(path: &Path, expected: Option<&ModelConfig>) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, expected).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

//! Versioned binary checkpoints: magic `LFSM1`, a JSON header, then raw
//! little-endian parameters and optimizer moments.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::encoder::{Encoder, EncoderConfig, HeadDims};
use super::optim::NadamState;
use super::{EpochMetrics, TrainConfig, TrainError};

pub const MAGIC: &[u8; 6] = b"LFSM1\n";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub encoder: Encoder,
    pub config: TrainConfig,
    pub epoch: usize,
    pub step: u64,
    pub metrics: Vec<EpochMetrics>,
    /// Frame-normalized loss of the first batch in corpus order.
    pub probe_loss: f64,
    pub optimizer: Option<NadamState>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format_version: u32,
    fingerprint: String,
    config: TrainConfig,
    epoch: usize,
    step: u64,
    metrics: Vec<EpochMetrics>,
    probe_loss_bits: u64,
    encoder: EncoderConfig,
    input_dim: usize,
    head_dims: HeadDims,
    num_params: usize,
    optimizer_step: Option<u64>,
}

impl Checkpoint {
    pub fn fingerprint(&self) -> String {
        self.config.fingerprint()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            format_version: 1,
            fingerprint: self.fingerprint(),
            config: self.config.clone(),
            epoch: self.epoch,
            step: self.step,
            metrics: self.metrics.clone(),
            probe_loss_bits: self.probe_loss.to_bits(),
            encoder: self.encoder.config.clone(),
            input_dim: self.encoder.input_dim,
            head_dims: self.encoder.head_dims(),
            num_params: self.encoder.num_params(),
            optimizer_step: self.optimizer.as_ref().map(|o| o.step),
        };
        let json = serde_json::to_vec(&header).expect("serializable header");
        let mut out = Vec::with_capacity(MAGIC.len() + 8 + json.len() + 24 * header.num_params);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        let mut put = |enc: &Encoder| {
            for t in enc.tensors() {
                for v in t {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        };
        put(&self.encoder);
        if let Some(o) = &self.optimizer {
            put(&o.m);
            put(&o.v);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TrainError> {
        let fmt = |m: &str| TrainError::Format(m.to_string());
        let rest = bytes
            .strip_prefix(MAGIC.as_slice())
            .ok_or_else(|| fmt("bad magic, not an LFSM1 checkpoint"))?;
        if rest.len() < 8 {
            return Err(fmt("truncated header length"));
        }
        let (len, rest) = rest.split_at(8);
        let len = u64::from_le_bytes(len.try_into().expect("8 bytes")) as usize;
        if rest.len() < len {
            return Err(fmt("truncated header"));
        }
        let (json, mut data) = rest.split_at(len);
        let header: Header = serde_json::from_slice(json)?;
        if header.format_version != 1 {
            return Err(fmt(&format!(
                "unsupported format version {}",
                header.format_version
            )));
        }
        if header.fingerprint != header.config.fingerprint() {
            return Err(fmt("configuration fingerprint mismatch"));
        }
        let mut take = |enc: &mut Encoder| -> Result<(), TrainError> {
            for t in enc.tensors_mut() {
                let need = t.len() * 8;
                if data.len() < need {
                    return Err(fmt("truncated parameter data"));
                }
                let (chunk, tail) = data.split_at(need);
                for (v, b) in t.iter_mut().zip(chunk.chunks_exact(8)) {
                    *v = f64::from_le_bytes(b.try_into().expect("8 bytes"));
                }
                data = tail;
            }
            Ok(())
        };
        let mut encoder =
            Encoder::zeros(header.encoder.clone(), header.input_dim, &header.head_dims);
        if encoder.num_params() != header.num_params {
            return Err(fmt("parameter count mismatch"));
        }
        take(&mut encoder)?;
        let optimizer = match header.optimizer_step {
            Some(step) => {
                let mut st = NadamState::new(&encoder);
                st.step = step;
                take(&mut st.m)?;
                take(&mut st.v)?;
                Some(st)
            }
            None => None,
        };
        if !data.is_empty() {
            return Err(fmt("trailing bytes after parameters"));
        }
        Ok(Self {
            encoder,
            config: header.config,
            epoch: header.epoch,
            step: header.step,
            metrics: header.metrics,
            probe_loss: f64::from_bits(header.probe_loss_bits),
            optimizer,
        })
    }
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<(), TrainError> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&ck.to_bytes())?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, TrainError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    Checkpoint::from_bytes(&bytes)
}

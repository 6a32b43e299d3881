//! Model checkpoints.
//!
//! Layout (little-endian): magic `DVNCCKPT`, u32 format version, then
//! length-prefixed UTF-8 strings for the model kind and the model config as
//! JSON, then the parameter count and each parameter as
//! `name, rank, dims…, f64 bits…`. A trailing section holds the quantizer
//! config, method and whether the codebook had been initialized. The
//! codebook itself is the parameter named `codebook`.

use std::io::{Read, Write};

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{GnnModel, RimModel, TransformerModel};
use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Tensor};
use crate::quantizer::{read_f64, read_u64, Discretization, Discretizer, QuantizerConfig};

const MAGIC: &[u8; 8] = b"DVNCCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct QuantizerState {
    pub config: QuantizerConfig,
    pub method: Discretization,
    pub initialized: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub config_json: String,
    pub params: Vec<(String, Tensor)>,
    pub quantizer: Option<QuantizerState>,
}

impl Checkpoint {
    fn capture(kind: &str, config: &impl Serialize, store: &ParamStore, quantizer: Option<&Discretizer>) -> Result<Self> {
        Ok(Checkpoint {
            kind: kind.to_string(),
            config_json: serde_json::to_string(config)?,
            params: store.iter().map(|(_, p)| (p.name.clone(), p.value.clone())).collect(),
            quantizer: quantizer.map(|q| QuantizerState {
                config: q.config,
                method: q.method,
                initialized: q.is_initialized(),
            }),
        })
    }

    fn config<C: DeserializeOwned>(&self, kind: &str) -> Result<C> {
        if self.kind != kind {
            return Err(Error::Format(format!("checkpoint holds a {} model, not {kind}", self.kind)));
        }
        Ok(serde_json::from_str(&self.config_json)?)
    }

    fn restore(&self, store: &mut ParamStore, quantizer: Option<&mut Discretizer>) -> Result<()> {
        let ids: Vec<_> = store.iter().map(|(id, p)| (id, p.name.clone(), p.value.shape().to_vec())).collect();
        if ids.len() != self.params.len() {
            return Err(Error::Format(format!(
                "checkpoint has {} parameters, model expects {}",
                self.params.len(),
                ids.len()
            )));
        }
        for ((id, name, shape), (cname, value)) in ids.into_iter().zip(&self.params) {
            if &name != cname || shape != value.shape() {
                return Err(Error::Format(format!(
                    "parameter `{cname}` {:?} does not match model parameter `{name}` {shape:?}",
                    value.shape()
                )));
            }
            store.set_value(id, value.clone())?;
        }
        match (quantizer, &self.quantizer) {
            (None, None) => Ok(()),
            (Some(q), Some(state)) => {
                if q.config != state.config || q.method != state.method {
                    return Err(Error::Format("quantizer section disagrees with the model config".into()));
                }
                if state.initialized {
                    let cb = crate::quantizer::Codebook::from_entries(store.value(q.codebook).clone())?;
                    q.set_codebook(store, &cb)?;
                }
                Ok(())
            }
            _ => Err(Error::Format("quantizer presence differs between checkpoint and model".into())),
        }
    }
}

fn put_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_str(w: &mut impl Write, s: &str) -> Result<()> {
    put_u64(w, s.len() as u64)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn get_str(r: &mut impl Read) -> Result<String> {
    let n = read_u64(r)? as usize;
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Format(format!("invalid UTF-8 in checkpoint: {e}")))
}

pub fn write_checkpoint(w: &mut impl Write, ck: &Checkpoint) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    put_str(w, &ck.kind)?;
    put_str(w, &ck.config_json)?;
    put_u64(w, ck.params.len() as u64)?;
    for (name, t) in &ck.params {
        put_str(w, name)?;
        put_u64(w, t.rank() as u64)?;
        for &d in t.shape() {
            put_u64(w, d as u64)?;
        }
        for v in t.data() {
            put_u64(w, v.to_bits())?;
        }
    }
    match &ck.quantizer {
        None => w.write_all(&[0])?,
        Some(q) => {
            w.write_all(&[1, q.initialized as u8])?;
            put_str(w, &serde_json::to_string(&q.config)?)?;
            put_str(w, &serde_json::to_string(&q.method)?)?;
        }
    }
    Ok(())
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<Checkpoint> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a checkpoint file (bad magic)".into()));
    }
    let mut v = [0u8; 4];
    r.read_exact(&mut v)?;
    let version = u32::from_le_bytes(v);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let kind = get_str(r)?;
    let config_json = get_str(r)?;
    let count = read_u64(r)? as usize;
    let mut params = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let name = get_str(r)?;
        let rank = read_u64(r)? as usize;
        let shape = (0..rank).map(|_| read_u64(r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| read_f64(r)).collect::<Result<Vec<_>>>()?;
        params.push((name, Tensor::new(shape, data)?));
    }
    let mut flag = [0u8; 1];
    r.read_exact(&mut flag)?;
    let quantizer = match flag[0] {
        0 => None,
        1 => {
            let mut init = [0u8; 1];
            r.read_exact(&mut init)?;
            let config: QuantizerConfig = serde_json::from_str(&get_str(r)?)?;
            config.validate()?;
            let method = serde_json::from_str(&get_str(r)?)?;
            Some(QuantizerState {
                config,
                method,
                initialized: init[0] != 0,
            })
        }
        f => return Err(Error::Format(format!("bad quantizer flag {f}"))),
    };
    Ok(Checkpoint {
        kind,
        config_json,
        params,
        quantizer,
    })
}

macro_rules! checkpointable {
    ($model:ty, $kind:literal) => {
        impl $model {
            pub fn checkpoint(&self) -> Result<Checkpoint> {
                Checkpoint::capture($kind, &self.config, &self.store, self.quantizer.as_ref())
            }

            pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
                let mut model = Self::new(ck.config($kind)?, 0)?;
                ck.restore(&mut model.store, model.quantizer.as_mut())?;
                Ok(model)
            }
        }
    };
}

checkpointable!(GnnModel, "gnn");
checkpointable!(RimModel, "rim");
checkpointable!(TransformerModel, "transformer");

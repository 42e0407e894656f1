//! Binary checkpoints: `STTS` magic, a version, a JSON header with configs
//! and loop state, then named tensors (weights, then Adam moments).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use stutter_core::model::{ModelConfig, StutterTts};
use stutter_core::optim::{AdamState, Optimizer, OptimizerKind};
use stutter_core::params::ParamStore;
use stutter_core::tensor::{DType, Real, Tensor};
use stutter_core::train::{TrainConfig, TrainState};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"STTS";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    model: ModelConfig,
    #[serde(default)]
    train: Option<TrainConfig>,
    #[serde(default)]
    state: Option<TrainState>,
    #[serde(default)]
    optimizer: Option<OptimizerHeader>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptimizerHeader {
    kind: OptimizerKind,
    learning_rate: f64,
    adam_step: Option<u64>,
}

/// Model weights plus, for training checkpoints, everything needed to resume.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<S: Real> {
    pub model: StutterTts<S>,
    pub train: Option<TrainConfig>,
    pub state: Option<TrainState>,
    pub optimizer: Option<Optimizer<S>>,
}

impl<S: Real> Checkpoint<S> {
    pub fn weights_only(model: StutterTts<S>) -> Self {
        Self {
            model,
            train: None,
            state: None,
            optimizer: None,
        }
    }
}

const ADAM_M: &str = "adam.m/";
const ADAM_V: &str = "adam.v/";

fn push_tensor<S: Real>(out: &mut Vec<u8>, name: &str, shape: &[usize], data: &[S]) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(S::DTYPE.code());
    out.push(shape.len() as u8);
    for &d in shape {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &x in data {
        x.write_le(out);
    }
}

pub fn encode<S: Real>(ck: &Checkpoint<S>) -> Vec<u8> {
    let header = Header {
        model: ck.model.config().clone(),
        train: ck.train.clone(),
        state: ck.state.clone(),
        optimizer: ck.optimizer.as_ref().map(|o| OptimizerHeader {
            kind: o.kind(),
            learning_rate: o.learning_rate(),
            adam_step: o.adam_state().map(|a| a.t),
        }),
    };
    let json = serde_json::to_vec(&header).expect("checkpoint header serializes");
    let params = ck.model.params();
    let adam = ck.optimizer.as_ref().and_then(Optimizer::adam_state);
    let count = params.len() * if adam.is_some() { 3 } else { 1 };

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(count as u32).to_le_bytes());
    for (_, name, t) in params.iter() {
        push_tensor(&mut out, name, t.shape(), t.data());
    }
    if let Some(a) = adam {
        for (prefix, bufs) in [(ADAM_M, &a.m), (ADAM_V, &a.v)] {
            for ((_, name, t), buf) in params.iter().zip(bufs) {
                push_tensor(&mut out, &format!("{prefix}{name}"), t.shape(), buf);
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(format!("truncated at byte {}", self.pos));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, String> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, String> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Stored element type of an encoded checkpoint.
pub fn dtype_of(bytes: &[u8]) -> Result<DType, String> {
    let mut r = Reader { bytes, pos: 0 };
    read_header(&mut r)?;
    r.u32()?;
    r.u16().and_then(|n| r.take(n as usize)).map(|_| ())?;
    let code = r.u8()?;
    DType::from_code(code).ok_or_else(|| format!("unknown dtype code {code}"))
}

fn read_header(r: &mut Reader) -> Result<Header, String> {
    if r.take(4)? != MAGIC {
        return Err("not a checkpoint (bad magic)".into());
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(format!("unsupported checkpoint version {version}"));
    }
    let n = r.u32()? as usize;
    serde_json::from_slice(r.take(n)?).map_err(|e| format!("header: {e}"))
}

pub fn decode<S: Real>(bytes: &[u8]) -> Result<Checkpoint<S>, String> {
    let mut r = Reader { bytes, pos: 0 };
    let header = read_header(&mut r)?;
    let count = r.u32()? as usize;
    let mut params = ParamStore::<S>::new();
    let (mut m, mut v) = (Vec::new(), Vec::new());
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?).map_err(|_| "tensor name is not UTF-8")?.to_string();
        let code = r.u8()?;
        if DType::from_code(code) != Some(S::DTYPE) {
            return Err(format!("{name}: dtype code {code}, expected {}", S::DTYPE.code()));
        }
        let rank = r.u8()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let n: usize = shape.iter().product();
        let size = S::DTYPE.size();
        let payload = r.take(n.checked_mul(size).ok_or("tensor too large")?)?;
        let data: Vec<S> = payload.chunks_exact(size).map(S::read_le).collect();
        if let Some(rest) = name.strip_prefix(ADAM_M) {
            check_moment(&params, rest, m.len(), &shape)?;
            m.push(data);
        } else if let Some(rest) = name.strip_prefix(ADAM_V) {
            check_moment(&params, rest, v.len(), &shape)?;
            v.push(data);
        } else {
            if params.id(&name).is_some() {
                return Err(format!("duplicate tensor {name}"));
            }
            params.insert(&name, Tensor::new(&shape, data).map_err(|e| format!("{name}: {e}"))?);
        }
    }
    if r.pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - r.pos));
    }
    let model = StutterTts::from_params(header.model, params).map_err(|e| e.to_string())?;
    let optimizer = match header.optimizer {
        None => None,
        Some(h) => {
            let mut o = Optimizer::new(h.kind, h.learning_rate, model.params());
            if let Some(t) = h.adam_step {
                if m.len() != model.params().len() || v.len() != model.params().len() {
                    return Err("incomplete Adam moments".into());
                }
                o.set_adam_state(AdamState { m, v, t });
            }
            Some(o)
        }
    };
    Ok(Checkpoint {
        model,
        train: header.train,
        state: header.state,
        optimizer,
    })
}

fn check_moment<S: Real>(params: &ParamStore<S>, name: &str, index: usize, shape: &[usize]) -> Result<(), String> {
    let expected = params.iter().nth(index).map(|(_, n, t)| (n, t.shape()));
    match expected {
        Some((n, s)) if n == name && s == shape => Ok(()),
        _ => Err(format!("moment tensor {name} does not line up with the weights")),
    }
}

pub fn save<S: Real>(path: &Path, ck: &Checkpoint<S>) -> Result<()> {
    fs::write(path, encode(ck)).map_err(Error::io(path))
}

pub fn load<S: Real>(path: &Path) -> Result<Checkpoint<S>> {
    let bytes = fs::read(path).map_err(Error::io(path))?;
    decode(&bytes).map_err(|m| Error::format(path, m))
}

/// A checkpoint of either precision.
#[derive(Clone, Debug)]
pub enum AnyCheckpoint {
    F32(Checkpoint<f32>),
    F64(Checkpoint<f64>),
}

pub fn load_any(path: &Path) -> Result<AnyCheckpoint> {
    let bytes = fs::read(path).map_err(Error::io(path))?;
    let fail = |m| Error::format(path, m);
    match dtype_of(&bytes).map_err(fail)? {
        DType::F32 => decode(&bytes).map(AnyCheckpoint::F32).map_err(fail),
        DType::F64 => decode(&bytes).map(AnyCheckpoint::F64).map_err(fail),
    }
}

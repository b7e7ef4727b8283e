//! Binary checkpoint container.
//!
//! Layout: the 8-byte magic `DSSLCKPT`, a little-endian `u32` format
//! version, a `u64` header length, the JSON [`CheckpointHeader`], then every
//! tensor as raw little-endian `f64` in header order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use super::encoder::EncoderSpec;
use super::method::MethodConfig;
use super::nn::Sequential;
use super::optim::OptimizerConfig;
use super::trainer::TrainState;
use super::{Result, SslError};

const MAGIC: &[u8; 8] = b"DSSLCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub method: MethodConfig,
    pub encoder: EncoderSpec,
    pub optimizer: OptimizerConfig,
    pub optimizer_steps: u64,
    pub epoch: u64,
    pub step: u64,
    pub seed: u64,
    /// Free-form echo of the run configuration.
    pub config: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

fn collect_net<'a>(prefix: &str, net: &'a Sequential, out: &mut Vec<(String, &'a ArrayD<f64>)>) {
    for (i, p) in net.params().into_iter().enumerate() {
        out.push((format!("{prefix}.param.{i}"), &p.value));
    }
    for (i, b) in net.buffers().into_iter().enumerate() {
        out.push((format!("{prefix}.buffer.{i}"), b));
    }
}

fn collect_net_mut<'a>(prefix: &str, net: &'a mut Sequential, out: &mut Vec<(String, &'a mut ArrayD<f64>)>) {
    let (params, bufs) = net.tensors_mut();
    for (i, p) in params.into_iter().enumerate() {
        out.push((format!("{prefix}.param.{i}"), &mut p.value));
    }
    for (i, b) in bufs.into_iter().enumerate() {
        out.push((format!("{prefix}.buffer.{i}"), b));
    }
}

fn tensors(state: &TrainState) -> Vec<(String, &ArrayD<f64>)> {
    let mut out = Vec::new();
    collect_net("encoder", &state.encoder, &mut out);
    collect_net("projector", &state.projector, &mut out);
    if let Some(n) = &state.predictor {
        collect_net("predictor", n, &mut out);
    }
    if let Some(n) = &state.target_encoder {
        collect_net("target_encoder", n, &mut out);
    }
    if let Some(n) = &state.target_projector {
        collect_net("target_projector", n, &mut out);
    }
    if let Some(p) = &state.prototypes {
        out.push(("prototypes".into(), &p.value));
    }
    for (i, slots) in state.optimizer.state.iter().enumerate() {
        for (j, s) in slots.iter().enumerate() {
            out.push((format!("optim.{i}.{j}"), s));
        }
    }
    out
}

fn tensors_mut(state: &mut TrainState) -> Vec<(String, &mut ArrayD<f64>)> {
    let mut out = Vec::new();
    collect_net_mut("encoder", &mut state.encoder, &mut out);
    collect_net_mut("projector", &mut state.projector, &mut out);
    if let Some(n) = &mut state.predictor {
        collect_net_mut("predictor", n, &mut out);
    }
    if let Some(n) = &mut state.target_encoder {
        collect_net_mut("target_encoder", n, &mut out);
    }
    if let Some(n) = &mut state.target_projector {
        collect_net_mut("target_projector", n, &mut out);
    }
    if let Some(p) = &mut state.prototypes {
        out.push(("prototypes".into(), &mut p.value));
    }
    for (i, slots) in state.optimizer.state.iter_mut().enumerate() {
        for (j, s) in slots.iter_mut().enumerate() {
            out.push((format!("optim.{i}.{j}"), s));
        }
    }
    out
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SslError + '_ {
    move |source| SslError::Io { path: path.to_path_buf(), source }
}

/// Writes `state` atomically (temporary file, then rename).
pub fn save_checkpoint(path: &Path, state: &TrainState, config: serde_json::Value) -> Result<()> {
    let ts = tensors(state);
    let header = CheckpointHeader {
        method: state.method.clone(),
        encoder: state.encoder_spec,
        optimizer: state.optimizer.config,
        optimizer_steps: state.optimizer.steps,
        epoch: state.epoch,
        step: state.step,
        seed: state.seed,
        config,
        tensors: ts.iter().map(|(n, t)| TensorEntry { name: n.clone(), shape: t.shape().to_vec() }).collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| SslError::Format(e.to_string()))?;
    let mut buf = Vec::with_capacity(20 + json.len() + ts.iter().map(|(_, t)| t.len() * 8).sum::<usize>());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for (_, t) in &ts {
        for v in t.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(&buf).map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))?;
    Ok(())
}

/// Reads just the header.
pub fn read_header(path: &Path) -> Result<CheckpointHeader> {
    Ok(read_raw(path)?.0)
}

fn read_raw(path: &Path) -> Result<(CheckpointHeader, Vec<u8>)> {
    let mut bytes = Vec::new();
    fs::File::open(path).and_then(|mut f| f.read_to_end(&mut bytes)).map_err(io_err(path))?;
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(SslError::Format(format!("{} is not a checkpoint", path.display())));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(SslError::Format(format!("unsupported checkpoint version {version}")));
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body = bytes.get(20..20 + len).ok_or_else(|| SslError::Format("truncated header".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(body).map_err(|e| SslError::Format(e.to_string()))?;
    let data = bytes[20 + len..].to_vec();
    Ok((header, data))
}

/// Restores a full training state.
pub fn load_checkpoint(path: &Path) -> Result<(TrainState, CheckpointHeader)> {
    let (header, data) = read_raw(path)?;
    let mut state = TrainState::new(header.method.clone(), header.encoder, header.optimizer, header.seed)?;
    let has_optim = header.tensors.iter().any(|t| t.name.starts_with("optim."));
    if has_optim {
        let slots = match header.optimizer {
            OptimizerConfig::Sgd { .. } => 1,
            OptimizerConfig::Adam { .. } => 2,
        };
        let shapes: Vec<_> = tensors(&state).iter().filter(|(n, _)| !n.contains("buffer") && !n.starts_with("target")).map(|(_, t)| t.raw_dim()).collect();
        state.optimizer.state = shapes.into_iter().map(|d| vec![ArrayD::zeros(d); slots]).collect();
    }
    state.optimizer.steps = header.optimizer_steps;
    state.epoch = header.epoch;
    state.step = header.step;
    let mut slots = tensors_mut(&mut state);
    if slots.len() != header.tensors.len() {
        return Err(SslError::Format(format!("expected {} tensors, found {}", slots.len(), header.tensors.len())));
    }
    let mut offset = 0usize;
    for ((name, dst), entry) in slots.iter_mut().zip(&header.tensors) {
        if *name != entry.name || dst.shape() != entry.shape.as_slice() {
            return Err(SslError::Format(format!("tensor {} {:?} does not match {} {:?}", entry.name, entry.shape, name, dst.shape())));
        }
        let n = dst.len();
        let raw = data.get(offset..offset + n * 8).ok_or_else(|| SslError::Format("truncated tensor data".into()))?;
        let values: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        **dst = ArrayD::from_shape_vec(IxDyn(&entry.shape), values).expect("sized");
        offset += n * 8;
    }
    drop(slots);
    Ok((state, header))
}

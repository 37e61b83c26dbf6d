//! Binary checkpoints.
//!
//! Weights (`PUNW1\0`): `u32` entry count, then per entry a `u32` name
//! length, the UTF-8 name, four `u32` extents and the `f32` payload.
//! Optimizer state (`PUNS1\0`): `u64` iteration, `f64` momentum, `f64`
//! weight decay, then the momentum buffers in the weight layout. All
//! integers and floats are little-endian.

use std::fs;
use std::path::Path;

use super::optim::{SgdConfig, SgdState};
use super::params::ModelParams;
use super::scalar::Real;
use super::tensor::{Shape, Tensor};
use crate::error::{shape_err, Error, Result};
use crate::io::write_atomic;

pub const WEIGHTS_MAGIC: &[u8; 6] = b"PUNW1\0";
pub const STATE_MAGIC: &[u8; 6] = b"PUNS1\0";

fn encode_entries<'a, S: Real + 'a>(
    out: &mut Vec<u8>,
    entries: impl ExactSizeIterator<Item = (&'a str, &'a Tensor<S>)>,
) {
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, t) in entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        for d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&(v.f64() as f32).to_le_bytes());
        }
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Length {
                expected: self.pos + n,
                found: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn decode_entries(c: &mut Cursor<'_>) -> Result<Vec<(String, Tensor<f32>)>> {
    let count = c.u32()? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let len = c.u32()? as usize;
        let name = std::str::from_utf8(c.take(len)?)
            .map_err(|_| Error::Format("parameter name is not UTF-8".into()))?
            .to_string();
        let mut shape: Shape = [0; 4];
        for d in &mut shape {
            *d = c.u32()? as usize;
        }
        let n: usize = shape.iter().product();
        let data = c
            .take(4 * n)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        out.push((name, Tensor::new(shape, data)?));
    }
    if c.pos != c.bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", c.bytes.len() - c.pos)));
    }
    Ok(out)
}

fn check_magic<'a>(bytes: &'a [u8], magic: &[u8; 6]) -> Result<Cursor<'a>> {
    if bytes.len() < 6 || &bytes[..6] != magic {
        return Err(Error::Format(format!(
            "missing {} magic",
            String::from_utf8_lossy(&magic[..5])
        )));
    }
    Ok(Cursor { bytes, pos: 6 })
}

pub fn encode_weights<S: Real>(params: &ModelParams<S>) -> Vec<u8> {
    let mut out = WEIGHTS_MAGIC.to_vec();
    encode_entries(&mut out, params.entries().iter().map(|e| (e.name.as_str(), &e.value)));
    out
}

pub fn decode_weights(bytes: &[u8]) -> Result<Vec<(String, Tensor<f32>)>> {
    decode_entries(&mut check_magic(bytes, WEIGHTS_MAGIC)?)
}

pub fn save_weights<S: Real>(params: &ModelParams<S>, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_weights(params))
}

/// Overwrites every entry of `params` from the checkpoint. Names and shapes
/// must match exactly.
pub fn load_weights_into<S: Real>(params: &mut ModelParams<S>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    apply_entries(params, decode_weights(&bytes)?)
}

fn apply_entries<S: Real>(params: &mut ModelParams<S>, entries: Vec<(String, Tensor<f32>)>) -> Result<()> {
    if entries.len() != params.len() {
        return Err(shape_err!(
            "checkpoint holds {} tensors, model expects {}",
            entries.len(),
            params.len()
        ));
    }
    for (name, t) in entries {
        params.set_value(&name, t.cast())?;
    }
    Ok(())
}

pub fn encode_state<S: Real>(params: &ModelParams<S>, state: &SgdState<S>) -> Vec<u8> {
    let mut out = STATE_MAGIC.to_vec();
    out.extend_from_slice(&state.iteration.to_le_bytes());
    out.extend_from_slice(&state.config.momentum.to_le_bytes());
    out.extend_from_slice(&state.config.weight_decay.to_le_bytes());
    encode_entries(
        &mut out,
        params
            .entries()
            .iter()
            .zip(&state.buffers)
            .map(|(e, b)| (e.name.as_str(), b)),
    );
    out
}

pub fn save_state<S: Real>(params: &ModelParams<S>, state: &SgdState<S>, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_state(params, state))
}

pub fn decode_state<S: Real>(bytes: &[u8], params: &ModelParams<S>) -> Result<SgdState<S>> {
    let mut c = check_magic(bytes, STATE_MAGIC)?;
    let iteration = c.u64()?;
    let config = SgdConfig {
        momentum: c.f64()?,
        weight_decay: c.f64()?,
    };
    let entries = decode_entries(&mut c)?;
    if entries.len() != params.len() {
        return Err(shape_err!("optimizer state does not match the model"));
    }
    let buffers = entries
        .into_iter()
        .zip(params.entries())
        .map(|((name, t), e)| {
            if name != e.name {
                Err(shape_err!("optimizer entry {name:?} where {:?} was expected", e.name))
            } else {
                Ok(t.cast())
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let state = SgdState {
        config,
        buffers,
        iteration,
    };
    state.check_compatible(params)?;
    Ok(state)
}

pub fn load_state<S: Real>(params: &ModelParams<S>, path: impl AsRef<Path>) -> Result<SgdState<S>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_state(&bytes, params)
}

//! Binary parameter dumps.
//!
//! Layout (little endian): magic `FRCKPT01`, then length-prefixed UTF-8
//! config hash and config JSON, the task index (`u32`), the entry count
//! (`u32`), and per entry: name, id (`u32`), rank (`u32`), dims (`u64`
//! each), values (`f64` each).

use std::io::{Read, Write};
use std::path::Path;

use crate::autodiff::{ParamId, Params};
use crate::error::{contract, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"FRCKPT01";

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub id: ParamId,
    pub value: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_hash: String,
    pub config_json: String,
    pub task: usize,
    pub entries: Vec<CheckpointEntry>,
}

impl Checkpoint {
    pub fn capture(config_hash: &str, config_json: &str, task: usize, model: &dyn ParamsRef) -> Self {
        let entries = model
            .param_refs()
            .into_iter()
            .map(|p| CheckpointEntry {
                name: p.name.clone(),
                id: p.id,
                value: p.value.clone(),
            })
            .collect();
        Self {
            config_hash: config_hash.to_string(),
            config_json: config_json.to_string(),
            task,
            entries,
        }
    }

    /// Copies stored values into matching parameters (by name and shape).
    pub fn restore<M: Params>(&self, model: &mut M) -> Result<()> {
        for p in model.params_mut() {
            let e = self
                .entries
                .iter()
                .find(|e| e.name == p.name)
                .ok_or_else(|| contract(format!("checkpoint lacks {}", p.name)))?;
            if e.value.shape() != p.value.shape() {
                return Err(contract(format!("shape mismatch for {}", p.name)));
            }
            p.value = e.value.clone();
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_str(&mut out, &self.config_hash);
        put_str(&mut out, &self.config_json);
        out.extend_from_slice(&(self.task as u32).to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            put_str(&mut out, &e.name);
            out.extend_from_slice(&e.id.0.to_le_bytes());
            out.extend_from_slice(&(e.value.shape().len() as u32).to_le_bytes());
            for &d in e.value.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in e.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(contract("not a checkpoint file"));
        }
        let config_hash = get_str(&mut r)?;
        let config_json = get_str(&mut r)?;
        let task = get_u32(&mut r)? as usize;
        let n = get_u32(&mut r)?;
        let mut entries = Vec::with_capacity(n as usize);
        for _ in 0..n {
            let name = get_str(&mut r)?;
            let id = ParamId(get_u32(&mut r)?);
            let rank = get_u32(&mut r)?;
            let mut shape = Vec::with_capacity(rank as usize);
            for _ in 0..rank {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                shape.push(u64::from_le_bytes(b) as usize);
            }
            let len: usize = shape.iter().product();
            let mut values = Vec::with_capacity(len);
            for _ in 0..len {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                values.push(f64::from_le_bytes(b));
            }
            entries.push(CheckpointEntry {
                name,
                id,
                value: Tensor::new(shape, values)?,
            });
        }
        if !r.is_empty() {
            return Err(contract("trailing bytes in checkpoint"));
        }
        Ok(Self {
            config_hash,
            config_json,
            task,
            entries,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Read-only parameter access for types that are captured whole.
pub trait ParamsRef {
    fn param_refs(&self) -> Vec<&crate::autodiff::Parameter>;
}

impl<T: Params> ParamsRef for T {
    fn param_refs(&self) -> Vec<&crate::autodiff::Parameter> {
        self.params()
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn get_u32(r: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_str(r: &mut &[u8]) -> Result<String> {
    let n = get_u32(r)? as usize;
    if n > r.len() {
        return Err(contract("truncated checkpoint"));
    }
    let (s, rest) = r.split_at(n);
    *r = rest;
    String::from_utf8(s.to_vec()).map_err(|_| contract("checkpoint string is not UTF-8"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Parameter;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            values in proptest::collection::vec(proptest::num::f64::ANY, 1..20),
            task in 0usize..50,
        ) {
            let n = values.len();
            let params = vec![
                Parameter::new(ParamId(0), "a", Tensor::new(vec![n], values.clone()).unwrap()),
                Parameter::new(ParamId(7), "b.c", Tensor::matrix(1, 2, vec![-0.0, 1e-300]).unwrap()),
            ];
            let ck = Checkpoint::capture("abc123", "{\"k\":1}", task, &params);
            let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
            prop_assert_eq!(back.entries.len(), 2);
            for (x, y) in ck.entries.iter().zip(&back.entries) {
                let xb: Vec<u64> = x.value.data().iter().map(|v| v.to_bits()).collect();
                let yb: Vec<u64> = y.value.data().iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(xb, yb);
                prop_assert_eq!(&x.name, &y.name);
                prop_assert_eq!(x.id, y.id);
            }
            prop_assert_eq!(back.task, task);
            prop_assert_eq!(back.config_hash, "abc123");
        }
    }

    #[test]
    fn rejects_garbage() {
        assert!(Checkpoint::from_bytes(b"nope").is_err());
        let ck = Checkpoint::capture("h", "{}", 1, &Vec::<Parameter>::new());
        let mut bytes = ck.to_bytes();
        bytes.push(0);
        assert!(Checkpoint::from_bytes(&bytes).is_err());
    }
}

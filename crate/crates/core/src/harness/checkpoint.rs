//! Checkpoint binary format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   4 bytes  55 53 48 44 ("USHD")
//! version u32      currently 1
//! layers  u32      number of affine layers
//! per layer: fan_in u32, fan_out u32
//! activation u8    0 = tanh, 1 = relu
//! dtype      u8    0 = 64-bit float
//! parameters       f64 little-endian, in flatten order
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Activation, ArchSpec, ParamVector};

pub const CHECKPOINT_MAGIC: [u8; 4] = [0x55, 0x53, 0x48, 0x44];
pub const CHECKPOINT_VERSION: u32 = 1;
const DTYPE_F64: u8 = 0;

/// Architecture descriptor and parameters as stored on disk. The 3-D input
/// shape is not part of the file; it is rebound from the experiment config
/// via [`CheckpointData::into_param_vector`].
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointData {
    pub layer_dims: Vec<(u32, u32)>,
    pub activation: Activation,
    pub values: Vec<f64>,
}

impl CheckpointData {
    /// Binds the stored parameters to an architecture, validating that the
    /// layer shapes and activation agree.
    pub fn into_param_vector(self, arch: &ArchSpec) -> Result<ParamVector> {
        let expected: Vec<(u32, u32)> = arch
            .layer_dims()
            .iter()
            .map(|&(fi, fo)| (fi as u32, fo as u32))
            .collect();
        if expected != self.layer_dims {
            return Err(Error::Checkpoint(format!(
                "layer shapes {:?} do not match the configured architecture {:?}",
                self.layer_dims, expected
            )));
        }
        if arch.activation != self.activation {
            return Err(Error::Checkpoint(format!(
                "activation {} does not match the configured {}",
                self.activation, arch.activation
            )));
        }
        ParamVector::new(arch.clone(), self.values)
    }
}

pub fn write_checkpoint(path: &Path, theta: &ParamVector) -> Result<()> {
    let arch = theta.arch();
    let dims = arch.layer_dims();
    let mut bytes =
        Vec::with_capacity(4 + 4 + 4 + dims.len() * 8 + 2 + theta.values().len() * 8);
    bytes.extend_from_slice(&CHECKPOINT_MAGIC);
    bytes.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for (fi, fo) in dims {
        bytes.extend_from_slice(&(fi as u32).to_le_bytes());
        bytes.extend_from_slice(&(fo as u32).to_le_bytes());
    }
    bytes.push(arch.activation.code());
    bytes.push(DTYPE_F64);
    for v in theta.values() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint(format!(
                "truncated while reading {what} (need {n} bytes at offset {}, file has {})",
                self.pos,
                self.bytes.len()
            )));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        let b = self.take(8, what)?;
        Ok(f64::from_le_bytes(b.try_into().expect("8 bytes")))
    }
}

pub fn read_checkpoint(path: &Path) -> Result<CheckpointData> {
    let bytes = fs::read(path)?;
    let mut cur = Cursor {
        bytes: &bytes,
        pos: 0,
    };

    let magic = cur.take(4, "magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(format!(
            "bad magic {magic:02x?}, expected {CHECKPOINT_MAGIC:02x?}"
        )));
    }
    let version = cur.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version}; this reader supports version {CHECKPOINT_VERSION}"
        )));
    }
    let layer_count = cur.u32("layer count")? as usize;
    let mut layer_dims = Vec::with_capacity(layer_count);
    for i in 0..layer_count {
        let fi = cur.u32(&format!("layer {i} fan_in"))?;
        let fo = cur.u32(&format!("layer {i} fan_out"))?;
        if fi == 0 || fo == 0 {
            return Err(Error::Checkpoint(format!(
                "layer {i} has degenerate shape {fi}x{fo}"
            )));
        }
        layer_dims.push((fi, fo));
    }
    if layer_dims.is_empty() {
        return Err(Error::Checkpoint("no layers".into()));
    }
    for w in layer_dims.windows(2) {
        if w[0].1 != w[1].0 {
            return Err(Error::Checkpoint(format!(
                "layer chain mismatch: fan_out {} feeds fan_in {}",
                w[0].1, w[1].0
            )));
        }
    }
    let activation = Activation::from_code(cur.u8("activation code")?)?;
    let dtype = cur.u8("dtype code")?;
    if dtype != DTYPE_F64 {
        return Err(Error::Checkpoint(format!(
            "unknown dtype code {dtype}, expected {DTYPE_F64} (64-bit float)"
        )));
    }

    let count: usize = layer_dims
        .iter()
        .map(|&(fi, fo)| (fi as usize + 1) * fo as usize)
        .sum();
    let mut values = Vec::with_capacity(count);
    for i in 0..count {
        let v = cur.f64(&format!("parameter {i}"))?;
        if !v.is_finite() {
            return Err(Error::Checkpoint(format!("non-finite parameter {i}")));
        }
        values.push(v);
    }
    if cur.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after parameters",
            bytes.len() - cur.pos
        )));
    }
    Ok(CheckpointData {
        layer_dims,
        activation,
        values,
    })
}

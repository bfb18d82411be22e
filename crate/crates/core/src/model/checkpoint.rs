//! Checkpoint archive: a magic header, a JSON metadata document (config
//! snapshot, epoch, validation loss, format version), and named parameter
//! arrays with explicit shapes and little-endian f32 values.
//!
//! Model state is kept on the f32 grid in memory, so save followed by load
//! reproduces parameters and running statistics bit-exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::Model;

const MAGIC: &[u8; 4] = b"CMPA";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Meta {
    format_version: u32,
    config_text: String,
    epoch: usize,
    val_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config_text: String,
    pub epoch: usize,
    pub val_loss: f64,
    pub arrays: Vec<NamedArray>,
}

fn named(name: String, shape: Vec<usize>, iter: impl Iterator<Item = f64>) -> NamedArray {
    NamedArray {
        name,
        shape,
        data: iter.map(|v| v as f32).collect(),
    }
}

impl Model {
    /// Snapshot every parameter and running statistic as named f32 arrays.
    pub fn to_checkpoint(&self, config_text: String, epoch: usize, val_loss: f64) -> Checkpoint {
        let mut arrays = Vec::new();
        for (i, block) in self.blocks.iter().enumerate() {
            let (co, ci, k) = block.conv.weight.dim();
            arrays.push(named(
                format!("encoder.conv{i}.weight"),
                vec![co, ci, k],
                block.conv.weight.iter().copied(),
            ));
            arrays.push(named(
                format!("encoder.conv{i}.bias"),
                vec![co],
                block.conv.bias.iter().copied(),
            ));
            for (suffix, arr) in [
                ("gamma", &block.bn.gamma),
                ("beta", &block.bn.beta),
                ("running_mean", &block.bn.running_mean),
                ("running_var", &block.bn.running_var),
            ] {
                arrays.push(named(
                    format!("encoder.bn{i}.{suffix}"),
                    vec![arr.len()],
                    arr.iter().copied(),
                ));
            }
        }
        let (h, c) = self.head.fc1.weight.dim();
        arrays.push(named(
            "head.fc1.weight".into(),
            vec![h, c],
            self.head.fc1.weight.iter().copied(),
        ));
        arrays.push(named(
            "head.fc1.bias".into(),
            vec![h],
            self.head.fc1.bias.iter().copied(),
        ));
        let (o, h2) = self.head.fc2.weight.dim();
        arrays.push(named(
            "head.fc2.weight".into(),
            vec![o, h2],
            self.head.fc2.weight.iter().copied(),
        ));
        arrays.push(named(
            "head.fc2.bias".into(),
            vec![o],
            self.head.fc2.bias.iter().copied(),
        ));
        Checkpoint {
            config_text,
            epoch,
            val_loss,
            arrays,
        }
    }

    /// Rebuild a model from a checkpoint, validating every array shape
    /// against the supplied encoder configuration.
    pub fn from_checkpoint(
        config: &super::EncoderConfig,
        ckpt: &Checkpoint,
    ) -> Result<Model> {
        let mut model = Model::new_seeded(config.clone(), 0)?;
        let fill = |name: &str, target: &mut [f64], shape: &[usize]| -> Result<()> {
            let arr = ckpt
                .arrays
                .iter()
                .find(|a| a.name == name)
                .ok_or_else(|| Error::Shape(format!("checkpoint is missing array '{name}'")))?;
            if arr.shape != shape {
                return Err(Error::Shape(format!(
                    "array '{name}' has shape {:?}, expected {:?}",
                    arr.shape, shape
                )));
            }
            if arr.data.len() != target.len() {
                return Err(Error::Shape(format!(
                    "array '{name}' has {} values, expected {}",
                    arr.data.len(),
                    target.len()
                )));
            }
            for (dst, &src) in target.iter_mut().zip(&arr.data) {
                *dst = src as f64;
            }
            Ok(())
        };
        for i in 0..model.blocks.len() {
            let (co, ci, k) = model.blocks[i].conv.weight.dim();
            let mut w = std::mem::take(&mut model.blocks[i].conv.weight);
            fill(
                &format!("encoder.conv{i}.weight"),
                w.as_slice_mut().unwrap(),
                &[co, ci, k],
            )?;
            model.blocks[i].conv.weight = w;
            let co_len = model.blocks[i].conv.bias.len();
            let mut b = std::mem::take(&mut model.blocks[i].conv.bias);
            fill(
                &format!("encoder.conv{i}.bias"),
                b.as_slice_mut().unwrap(),
                &[co_len],
            )?;
            model.blocks[i].conv.bias = b;
            for suffix in ["gamma", "beta", "running_mean", "running_var"] {
                let arr = match suffix {
                    "gamma" => &mut model.blocks[i].bn.gamma,
                    "beta" => &mut model.blocks[i].bn.beta,
                    "running_mean" => &mut model.blocks[i].bn.running_mean,
                    _ => &mut model.blocks[i].bn.running_var,
                };
                let len = arr.len();
                let mut a = std::mem::take(arr);
                fill(
                    &format!("encoder.bn{i}.{suffix}"),
                    a.as_slice_mut().unwrap(),
                    &[len],
                )?;
                match suffix {
                    "gamma" => model.blocks[i].bn.gamma = a,
                    "beta" => model.blocks[i].bn.beta = a,
                    "running_mean" => model.blocks[i].bn.running_mean = a,
                    _ => model.blocks[i].bn.running_var = a,
                }
            }
        }
        let (h, c) = model.head.fc1.weight.dim();
        let mut w1 = std::mem::take(&mut model.head.fc1.weight);
        fill("head.fc1.weight", w1.as_slice_mut().unwrap(), &[h, c])?;
        model.head.fc1.weight = w1;
        let mut b1 = std::mem::take(&mut model.head.fc1.bias);
        fill("head.fc1.bias", b1.as_slice_mut().unwrap(), &[h])?;
        model.head.fc1.bias = b1;
        let (o, h2) = model.head.fc2.weight.dim();
        let mut w2 = std::mem::take(&mut model.head.fc2.weight);
        fill("head.fc2.weight", w2.as_slice_mut().unwrap(), &[o, h2])?;
        model.head.fc2.weight = w2;
        let mut b2 = std::mem::take(&mut model.head.fc2.bias);
        fill("head.fc2.bias", b2.as_slice_mut().unwrap(), &[o])?;
        model.head.fc2.bias = b2;
        Ok(model)
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let meta = Meta {
        format_version: FORMAT_VERSION,
        config_text: ckpt.config_text.clone(),
        epoch: ckpt.epoch,
        val_loss: ckpt.val_loss,
    };
    let meta_json =
        serde_json::to_vec(&meta).map_err(|e| Error::Runtime(format!("meta encode: {e}")))?;
    let mut bytes = Vec::with_capacity(meta_json.len() + 64);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(meta_json.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&meta_json);
    bytes.extend_from_slice(&(ckpt.arrays.len() as u32).to_le_bytes());
    for arr in &ckpt.arrays {
        let name = arr.name.as_bytes();
        bytes.extend_from_slice(&(name.len() as u16).to_le_bytes());
        bytes.extend_from_slice(name);
        bytes.push(arr.shape.len() as u8);
        for &d in &arr.shape {
            bytes.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &arr.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    crate::report::write_atomic(path, &bytes)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Parse(format!(
                "{}: truncated checkpoint",
                self.path.display()
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut cur = Cursor {
        bytes: &bytes,
        pos: 0,
        path,
    };
    if cur.take(4)? != MAGIC {
        return Err(Error::Parse(format!(
            "{}: not a checkpoint file (bad magic)",
            path.display()
        )));
    }
    let version = cur.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Parse(format!(
            "{}: unsupported checkpoint format version {version}",
            path.display()
        )));
    }
    let meta_len = cur.u32()? as usize;
    let meta: Meta = serde_json::from_slice(cur.take(meta_len)?)
        .map_err(|e| Error::Parse(format!("{}: corrupt metadata: {e}", path.display())))?;
    let n_arrays = cur.u32()? as usize;
    let mut arrays = Vec::with_capacity(n_arrays);
    for _ in 0..n_arrays {
        let name_len = cur.u16()? as usize;
        let name = String::from_utf8(cur.take(name_len)?.to_vec())
            .map_err(|e| Error::Parse(format!("{}: bad array name: {e}", path.display())))?;
        let ndim = cur.u8()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(cur.u32()? as usize);
        }
        let count: usize = shape.iter().product();
        let raw = cur.take(count * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        arrays.push(NamedArray { name, shape, data });
    }
    if cur.pos != bytes.len() {
        return Err(Error::Parse(format!(
            "{}: trailing bytes after checkpoint payload",
            path.display()
        )));
    }
    Ok(Checkpoint {
        config_text: meta.config_text,
        epoch: meta.epoch,
        val_loss: meta.val_loss,
        arrays,
    })
}

//! Checkpoint container. Layout: magic "SRIRCKPT", version u32 LE, entry
//! count u32 LE, then per entry {name length u32, UTF-8 name, ndim u32,
//! dims u64 LE each, f32 LE data}; finally a u64 LE byte length and a UTF-8
//! JSON metadata block (σ_data, normalization statistics, architecture
//! hyperparameters).

use crate::error::{Error, Result};
use crate::nn::{Param, ParamSet};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 8] = b"SRIRCKPT";
pub const VERSION: u32 = 1;

pub struct Checkpoint {
    pub entries: Vec<(String, Tensor<f32>)>,
    pub metadata: serde_json::Value,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, tensor) in &self.entries {
            let nb = name.as_bytes();
            buf.extend_from_slice(&(nb.len() as u32).to_le_bytes());
            buf.extend_from_slice(nb);
            buf.extend_from_slice(&(tensor.shape().len() as u32).to_le_bytes());
            for &d in tensor.shape() {
                buf.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in tensor.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let meta = serde_json::to_vec(&self.metadata)?;
        buf.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        buf.extend_from_slice(&meta);

        let tmp = path.with_extension("ckpt.tmp~");
        {
            let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
            f.write_all(&buf).map_err(|e| Error::io(&tmp, e))?;
            f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        }
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .map_err(|e| Error::io(path, e))?
            .read_to_end(&mut bytes)
            .map_err(|e| Error::io(path, e))?;
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
            if *pos + n > bytes.len() {
                return Err(Error::Checkpoint(format!(
                    "truncated checkpoint {path:?} at byte {pos}"
                )));
            }
            let s = &bytes[*pos..*pos + n];
            *pos += n;
            Ok(s)
        };
        if take(&mut pos, 8)? != MAGIC {
            return Err(Error::Checkpoint(format!("{path:?}: bad magic")));
        }
        let version = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "{path:?}: unsupported version {version}"
            )));
        }
        let count = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
            let name = String::from_utf8(take(&mut pos, name_len)?.to_vec())
                .map_err(|e| Error::Checkpoint(format!("{path:?}: bad entry name: {e}")))?;
            let ndim = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize);
            }
            let n: usize = shape.iter().product();
            let raw = take(&mut pos, 4 * n)?;
            let data: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            entries.push((name, Tensor::from_vec(&shape, data)?));
        }
        let meta_len = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize;
        let metadata = serde_json::from_slice(take(&mut pos, meta_len)?)?;
        Ok(Checkpoint { entries, metadata })
    }

    pub fn entry_map(self) -> HashMap<String, Tensor<f32>> {
        self.entries.into_iter().collect()
    }
}

/// Snapshot a model's parameters (converted to f32) with metadata.
pub fn checkpoint_from<T: Scalar>(
    model: &mut dyn ParamSet<T>,
    metadata: serde_json::Value,
) -> Checkpoint {
    let mut entries = Vec::new();
    model.visit("", &mut |name, p: &mut Param<T>| {
        entries.push((name, Tensor::<f32>::from_f64(&p.w.to_f64())));
    });
    Checkpoint { entries, metadata }
}

/// Load parameters by name into a model, checking shapes and completeness.
pub fn load_into<T: Scalar>(model: &mut dyn ParamSet<T>, ckpt: Checkpoint) -> Result<()> {
    let mut map = ckpt.entry_map();
    let mut missing = Vec::new();
    let mut mismatch = Vec::new();
    model.visit("", &mut |name, p: &mut Param<T>| {
        match map.remove(&name) {
            None => missing.push(name),
            Some(t) => {
                if t.shape() != p.w.shape() {
                    mismatch.push(format!(
                        "{name}: {:?} vs {:?}",
                        t.shape(),
                        p.w.shape()
                    ));
                } else {
                    p.w = Tensor::from_f64(&t.to_f64());
                }
            }
        }
    });
    if !missing.is_empty() || !mismatch.is_empty() {
        return Err(Error::Checkpoint(format!(
            "parameter mismatch; missing: {missing:?}, shape conflicts: {mismatch:?}"
        )));
    }
    Ok(())
}

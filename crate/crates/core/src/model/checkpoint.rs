//! Checkpoint file io.
//!
//! Layout: magic `PFCK`, format version u32, length-prefixed JSON header
//! (config + architecture), then named parameter arrays as
//! `u32 name_len, name, u32 rank, u64 dims..., f32 little-endian data`.
//! The loader rejects unknown versions and any array whose shape disagrees
//! with the config.

use super::config::ModelConfig;
use super::params::{Arch, ModelParams};
use crate::autodiff::Array;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"PFCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    arch: Arch,
}

pub fn save_checkpoint(path: &Path, cfg: &ModelConfig, params: &ModelParams<f32>) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    let header = serde_json::to_vec(&Header { config: cfg.clone(), arch: params.arch })?;
    w.write_all(&(header.len() as u32).to_le_bytes())?;
    w.write_all(&header)?;
    w.write_all(&(params.n_arrays() as u32).to_le_bytes())?;
    let mut io_err: Option<std::io::Error> = None;
    params.for_each(&mut |name, a| {
        if io_err.is_some() {
            return;
        }
        let mut write = || -> std::io::Result<()> {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(a.rank() as u32).to_le_bytes())?;
            for &d in a.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for &v in a.data() {
                w.write_all(&v.to_le_bytes())?;
            }
            Ok(())
        };
        if let Err(e) = write() {
            io_err = Some(e);
        }
    });
    if let Some(e) = io_err {
        return Err(e.into());
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelConfig, ModelParams<f32>)> {
    let display = path.display().to_string();
    let bad = |msg: &str| Error::bad_file(&display, msg);
    let mut r = BufReader::new(std::fs::File::open(path)?);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("not a checkpoint file (bad magic)"));
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(&format!("unknown checkpoint version {version}")));
    }
    let header_len = read_u32(&mut r)? as usize;
    let mut header = vec![0u8; header_len];
    r.read_exact(&mut header)?;
    let header: Header = serde_json::from_slice(&header)?;
    header.config.validate()?;

    let n_arrays = read_u32(&mut r)? as usize;
    let mut arrays: HashMap<String, Array<f32>> = HashMap::with_capacity(n_arrays);
    for _ in 0..n_arrays {
        let name_len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| bad("array name is not UTF-8"))?;
        let rank = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            shape.push(u64::from_le_bytes(b) as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = vec![0f32; numel];
        let mut buf = [0u8; 4];
        for v in data.iter_mut() {
            r.read_exact(&mut buf)?;
            *v = f32::from_le_bytes(buf);
        }
        if arrays.insert(name.clone(), Array::new(shape, data)).is_some() {
            return Err(bad(&format!("duplicate array {name:?}")));
        }
    }

    let mut params = ModelParams::<f32>::zeros(&header.config, header.arch);
    let mut problem: Option<String> = None;
    params.for_each_mut(&mut |name, slot| {
        if problem.is_some() {
            return;
        }
        match arrays.remove(name) {
            Some(a) if a.shape() == slot.shape() => *slot = a,
            Some(a) => {
                problem = Some(format!(
                    "array {name:?} has shape {:?}, config implies {:?}",
                    a.shape(),
                    slot.shape()
                ))
            }
            None => problem = Some(format!("missing array {name:?}")),
        }
    });
    if let Some(msg) = problem {
        return Err(bad(&msg));
    }
    if let Some(extra) = arrays.keys().next() {
        return Err(bad(&format!("unexpected array {extra:?}")));
    }
    Ok((header.config, params))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

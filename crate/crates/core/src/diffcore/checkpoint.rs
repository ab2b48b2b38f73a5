//! Binary checkpoint: versioned header, named parameters with their Adam
//! state, then named auxiliary tensors (hidden states). Little-endian.
//!
//! ```text
//! magic "LNCNCKPT" | u32 version | u32 n_params
//!   per param: name | tensor value | tensor m | tensor v | u64 step
//! u32 n_extras
//!   per extra: name | tensor
//! name   = u32 len, utf-8 bytes
//! tensor = u32 rank, u64 dims[rank], f64 data[numel]
//! ```

use std::collections::BTreeMap;
use std::io::{Read, Write};

use super::{params::Param, DiffError, ParamStore, Result, Tensor};

const MAGIC: &[u8; 8] = b"LNCNCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_u32(w: &mut impl Write, v: u32) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn put_u64(w: &mut impl Write, v: u64) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn put_name(w: &mut impl Write, name: &str) -> Result<()> {
    put_u32(w, name.len() as u32)?;
    Ok(w.write_all(name.as_bytes())?)
}

fn put_tensor(w: &mut impl Write, t: &Tensor) -> Result<()> {
    put_u32(w, t.shape().len() as u32)?;
    for &d in t.shape() {
        put_u64(w, d as u64)?;
    }
    for x in t.data() {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn get_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn get_name(r: &mut impl Read) -> Result<String> {
    let len = get_u32(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| DiffError::Checkpoint(e.to_string()))
}

fn get_tensor(r: &mut impl Read) -> Result<Tensor> {
    let rank = get_u32(r)? as usize;
    if rank > 8 {
        return Err(DiffError::Checkpoint(format!("implausible rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(get_u64(r)? as usize);
    }
    let numel: usize = shape.iter().product();
    let mut data = Vec::with_capacity(numel);
    let mut b = [0u8; 8];
    for _ in 0..numel {
        r.read_exact(&mut b)?;
        data.push(f64::from_le_bytes(b));
    }
    Tensor::new(shape, data)
}

pub fn write_checkpoint(w: &mut impl Write, store: &ParamStore, extras: &BTreeMap<String, Tensor>) -> Result<()> {
    w.write_all(MAGIC)?;
    put_u32(w, CHECKPOINT_VERSION)?;
    put_u32(w, store.len() as u32)?;
    for (name, p) in store.iter_params() {
        put_name(w, name)?;
        put_tensor(w, &p.value)?;
        put_tensor(w, &p.first_moment)?;
        put_tensor(w, &p.second_moment)?;
        put_u64(w, p.step)?;
    }
    put_u32(w, extras.len() as u32)?;
    for (name, t) in extras {
        put_name(w, name)?;
        put_tensor(w, t)?;
    }
    Ok(())
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<(ParamStore, BTreeMap<String, Tensor>)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(DiffError::Checkpoint("bad magic".into()));
    }
    let version = get_u32(r)?;
    if version != CHECKPOINT_VERSION {
        return Err(DiffError::Checkpoint(format!("unsupported version {version}")));
    }
    let mut store = ParamStore::new();
    for _ in 0..get_u32(r)? {
        let name = get_name(r)?;
        let value = get_tensor(r)?;
        let first_moment = get_tensor(r)?;
        let second_moment = get_tensor(r)?;
        let step = get_u64(r)?;
        if first_moment.shape() != value.shape() || second_moment.shape() != value.shape() {
            return Err(DiffError::Checkpoint(format!("moment shape mismatch for {name}")));
        }
        if store.contains(&name) {
            return Err(DiffError::DuplicateParameter(name));
        }
        store.insert_param(
            name,
            Param {
                value,
                first_moment,
                second_moment,
                step,
            },
        );
    }
    let mut extras = BTreeMap::new();
    for _ in 0..get_u32(r)? {
        let name = get_name(r)?;
        extras.insert(name, get_tensor(r)?);
    }
    Ok((store, extras))
}

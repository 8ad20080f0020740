//! Binary checkpoint format.
//!
//! ```text
//! magic    8 bytes  "CTXRCKPT"
//! version  u32 LE
//! header   u32 LE length + UTF-8 JSON ModelConfig
//! count    u32 LE number of tensors
//! tensor*  u16 LE name length, name, u8 dtype (0 = f32, 1 = u32),
//!          u8 rank, rank x u32 LE dims, row-major LE payload
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Matrix, ModelConfig, ModelParams};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"CTXRCKPT";
const VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;
const DTYPE_U32: u8 = 1;

pub fn write_checkpoint(params: &ModelParams<f32>, w: &mut impl Write) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let header = serde_json::to_vec(&params.config)?;
    w.write_all(&(header.len() as u32).to_le_bytes())?;
    w.write_all(&header)?;
    let tensors = params.tensors();
    w.write_all(&(tensors.len() as u32 + 1).to_le_bytes())?;

    write_name(w, "item_category")?;
    w.write_all(&[DTYPE_U32, 1])?;
    w.write_all(&(params.item_category.len() as u32).to_le_bytes())?;
    for &c in &params.item_category {
        w.write_all(&c.to_le_bytes())?;
    }
    for (name, m) in tensors {
        write_name(w, &name)?;
        w.write_all(&[DTYPE_F32, 2])?;
        w.write_all(&(m.rows as u32).to_le_bytes())?;
        w.write_all(&(m.cols as u32).to_le_bytes())?;
        let mut buf = Vec::with_capacity(m.data.len() * 4);
        for v in &m.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn write_name(w: &mut impl Write, name: &str) -> Result<()> {
    w.write_all(&(name.len() as u16).to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    Ok(())
}

pub fn save_checkpoint(params: &ModelParams<f32>, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(params, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams<f32>> {
    read_checkpoint(&mut BufReader::new(File::open(path)?))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<ModelParams<f32>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let hlen = read_u32(r)? as usize;
    let mut header = vec![0u8; hlen];
    r.read_exact(&mut header)?;
    let config: ModelConfig = serde_json::from_slice(&header)?;
    config.validate()?;

    let count = read_u32(r)? as usize;
    let mut item_category = None;
    let mut mats: Vec<(String, Matrix<f32>)> = Vec::with_capacity(count);
    for _ in 0..count {
        let mut nl = [0u8; 2];
        r.read_exact(&mut nl)?;
        let mut name = vec![0u8; u16::from_le_bytes(nl) as usize];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let mut tag = [0u8; 2];
        r.read_exact(&mut tag)?;
        let dims = (0..tag[1]).map(|_| read_u32(r).map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
        let len: usize = dims.iter().product();
        let mut raw = vec![0u8; len * 4];
        r.read_exact(&mut raw)?;
        let words = raw.chunks_exact(4).map(|c| [c[0], c[1], c[2], c[3]]);
        match (tag[0], dims.as_slice()) {
            (DTYPE_U32, [_]) if name == "item_category" => {
                item_category = Some(words.map(u32::from_le_bytes).collect::<Vec<_>>());
            }
            (DTYPE_F32, &[rows, cols]) => {
                mats.push((name, Matrix { rows, cols, data: words.map(f32::from_le_bytes).collect() }));
            }
            _ => return Err(Error::Format(format!("unexpected tensor `{name}`"))),
        }
    }
    let item_category = item_category.ok_or_else(|| Error::Format("missing item_category".into()))?;
    let mut params = ModelParams::<f32>::init(&config, item_category)?;
    let slots = params.tensors_mut();
    if slots.len() != mats.len() {
        return Err(Error::Format(format!("expected {} tensors, found {}", slots.len(), mats.len())));
    }
    for ((name, slot), (got_name, m)) in slots.into_iter().zip(mats) {
        if name != got_name || slot.rows != m.rows || slot.cols != m.cols {
            return Err(Error::Format(format!(
                "tensor `{got_name}` {}x{} does not match expected `{name}` {}x{}",
                m.rows, m.cols, slot.rows, slot.cols
            )));
        }
        *slot = m;
    }
    Ok(params)
}

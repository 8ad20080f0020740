//! Binary index snapshot.
//!
//! ```text
//! magic    8 bytes  "CTXRINDX"
//! version  u32
//! count    u32 number of indexes
//! index*   u8 has_category, u32 category, u8 backend (0 exact, 1 graph),
//!          u32 max_degree, u32 ef_construction, u32 ef_search,
//!          u32 dim, f64 temperature, u32 n, n x u32 ids, n*dim x f32 vectors,
//!          graph only: u32 entry, n x (u32 degree, degree x u32 neighbors)
//! ```
//!
//! All integers and floats are little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::index::{CategoryIndex, Graph, GraphParams};
use super::multi::IndexSet;
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"CTXRINDX";
const VERSION: u32 = 1;

fn put_u32(w: &mut impl Write, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_u8(r: &mut impl Read) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

pub fn write_index(index: &CategoryIndex, w: &mut impl Write) -> Result<()> {
    w.write_all(&[index.category.is_some() as u8])?;
    put_u32(w, index.category.unwrap_or(0) as usize)?;
    let p = index.graph.as_ref().map(|g| g.params).unwrap_or(GraphParams { max_degree: 0, ef_construction: 0, ef_search: 0 });
    w.write_all(&[index.graph.is_some() as u8])?;
    put_u32(w, p.max_degree)?;
    put_u32(w, p.ef_construction)?;
    put_u32(w, p.ef_search)?;
    put_u32(w, index.dim)?;
    w.write_all(&index.temperature.to_le_bytes())?;
    put_u32(w, index.ids.len())?;
    let mut buf = Vec::with_capacity(index.ids.len() * 4 + index.vectors.len() * 4);
    index.ids.iter().for_each(|id| buf.extend_from_slice(&id.to_le_bytes()));
    index.vectors.iter().for_each(|v| buf.extend_from_slice(&v.to_le_bytes()));
    w.write_all(&buf)?;
    if let Some(g) = &index.graph {
        put_u32(w, g.entry as usize)?;
        for nbrs in &g.neighbors {
            put_u32(w, nbrs.len())?;
            for &n in nbrs {
                put_u32(w, n as usize)?;
            }
        }
    }
    Ok(())
}

pub fn read_index(r: &mut impl Read) -> Result<CategoryIndex> {
    let has_category = get_u8(r)? != 0;
    let category = get_u32(r)?;
    let backend = get_u8(r)?;
    let params = GraphParams {
        max_degree: get_u32(r)? as usize,
        ef_construction: get_u32(r)? as usize,
        ef_search: get_u32(r)? as usize,
    };
    let dim = get_u32(r)? as usize;
    let mut t = [0u8; 8];
    r.read_exact(&mut t)?;
    let temperature = f64::from_le_bytes(t);
    let n = get_u32(r)? as usize;
    let mut raw = vec![0u8; n * 4];
    r.read_exact(&mut raw)?;
    let ids = raw.chunks_exact(4).map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    let mut raw = vec![0u8; n * dim * 4];
    r.read_exact(&mut raw)?;
    let vectors = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    let graph = match backend {
        0 => None,
        1 => {
            let entry = get_u32(r)?;
            let mut neighbors = Vec::with_capacity(n);
            for _ in 0..n {
                let deg = get_u32(r)? as usize;
                let list = (0..deg).map(|_| get_u32(r)).collect::<Result<Vec<u32>>>()?;
                if list.iter().any(|&x| x as usize >= n) {
                    return Err(Error::Format("graph neighbor out of range".into()));
                }
                neighbors.push(list);
            }
            if n > 0 && entry as usize >= n {
                return Err(Error::Format("graph entry out of range".into()));
            }
            Some(Graph { params, entry, neighbors })
        }
        b => return Err(Error::Format(format!("unknown backend tag {b}"))),
    };
    Ok(CategoryIndex { category: has_category.then_some(category), dim, temperature, ids, vectors, graph })
}

pub fn write_indexes(set: &IndexSet, w: &mut impl Write) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    put_u32(w, set.len())?;
    for index in set.values() {
        write_index(index, w)?;
    }
    Ok(())
}

pub fn read_indexes(r: &mut impl Read) -> Result<IndexSet> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not an index snapshot (bad magic)".into()));
    }
    let version = get_u32(r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported index snapshot version {version}")));
    }
    let count = get_u32(r)?;
    let mut set = IndexSet::new();
    for _ in 0..count {
        let index = read_index(r)?;
        let c = index.category.ok_or_else(|| Error::Format("index without a category".into()))?;
        set.insert(c, index);
    }
    Ok(set)
}

pub fn save_indexes(set: &IndexSet, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_indexes(set, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_indexes(path: &Path) -> Result<IndexSet> {
    read_indexes(&mut BufReader::new(File::open(path)?))
}


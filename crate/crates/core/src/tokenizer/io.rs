//! Codebook binary format and the catalog SID text format.
//!
//! Codebook layout (little-endian): `b"GRCB"`, version `u32`, `L u32`, `d u32`, `K_1..K_L u32`,
//! centroid tables level-major and row-major as `f32`, then a `u32` byte length followed by the
//! fit metadata as UTF-8 JSON.

use std::io::{BufRead, Read, Write};

use super::{Codebook, FitMeta, ItemId, SemanticId};
use crate::error::{GenRecError, Result};

const MAGIC: &[u8; 4] = b"GRCB";
const VERSION: u32 = 1;

pub fn write_codebook<W: Write>(codebook: &Codebook, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(codebook.levels() as u32).to_le_bytes())?;
    w.write_all(&(codebook.dim() as u32).to_le_bytes())?;
    for &k in codebook.level_sizes() {
        w.write_all(&(k as u32).to_le_bytes())?;
    }
    for level in 0..codebook.levels() {
        for v in codebook.level_table(level) {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    let meta = serde_json::to_vec(&codebook.fit_meta)?;
    w.write_all(&(meta.len() as u32).to_le_bytes())?;
    w.write_all(&meta)?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_codebook<R: Read>(mut r: R) -> Result<Codebook> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(GenRecError::Format("not a codebook file (bad magic)".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(GenRecError::Format(format!("unsupported codebook version {version}")));
    }
    let levels = read_u32(&mut r)? as usize;
    let dim = read_u32(&mut r)? as usize;
    let sizes = (0..levels).map(|_| read_u32(&mut r).map(|k| k as usize)).collect::<Result<Vec<_>>>()?;
    let mut tables = Vec::with_capacity(levels);
    for &k in &sizes {
        let mut bytes = vec![0u8; k * dim * 4];
        r.read_exact(&mut bytes)?;
        tables.push(
            bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
        );
    }
    let meta_len = read_u32(&mut r)? as usize;
    let mut meta = vec![0u8; meta_len];
    r.read_exact(&mut meta)?;
    let fit_meta: FitMeta = serde_json::from_slice(&meta)?;
    Codebook::from_centroids(dim, tables, fit_meta)
}

/// Writes `item_id<TAB>s1,s2,s3` lines.
pub fn write_catalog_sids<W: Write>(pairs: &[(ItemId, SemanticId)], mut w: W) -> Result<()> {
    for (item, sid) in pairs {
        writeln!(w, "{item}\t{sid}")?;
    }
    Ok(())
}

pub fn read_catalog_sids<R: BufRead>(r: R) -> Result<Vec<(ItemId, SemanticId)>> {
    let mut out = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let (item, sid) = line
            .split_once('\t')
            .ok_or_else(|| GenRecError::Format(format!("catalog SID line {}: missing tab", lineno + 1)))?;
        let item = item
            .parse::<ItemId>()
            .map_err(|e| GenRecError::Format(format!("catalog SID line {}: {e}", lineno + 1)))?;
        out.push((item, sid.parse()?));
    }
    Ok(out)
}

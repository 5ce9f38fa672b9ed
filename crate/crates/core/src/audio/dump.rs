//! `GVCF` feature dumps: externally computed content features.
//!
//! Layout (little-endian): magic `GVCF`, version `u32`, frame rate `f64`,
//! frame count `u64`, dimension `u64`, then `T * d` `f32` values row-major.

use std::io::{Read, Write};
use std::path::Path;

use super::{FeatureKind, FeatureSeq};
use crate::error::{Error, Result};
use crate::numerics::NdArray;

const MAGIC: &[u8; 4] = b"GVCF";
const VERSION: u32 = 1;

pub fn write_feature_dump(f: &FeatureSeq, mut out: impl Write) -> std::io::Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&f.frame_rate().to_le_bytes())?;
    out.write_all(&(f.num_frames() as u64).to_le_bytes())?;
    out.write_all(&(f.dim() as u64).to_le_bytes())?;
    for v in f.frames().data() {
        out.write_all(&(*v as f32).to_le_bytes())?;
    }
    Ok(())
}

/// Parses a dump; `expected_dim` rejects features of the wrong width.
pub fn read_feature_dump(mut input: impl Read, expected_dim: Option<usize>) -> Result<FeatureSeq> {
    let mut bytes = Vec::new();
    input
        .read_to_end(&mut bytes)
        .map_err(|e| Error::Parse(format!("reading feature dump: {e}")))?;
    const HEADER: usize = 4 + 4 + 8 + 8 + 8;
    if bytes.len() < HEADER {
        return Err(Error::Parse(format!(
            "feature dump of {} bytes is shorter than its header",
            bytes.len()
        )));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Parse("bad feature dump magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Parse(format!("unsupported feature dump version {version}")));
    }
    let rate = f64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let t = u64::from_le_bytes(bytes[16..24].try_into().expect("8 bytes")) as usize;
    let d = u64::from_le_bytes(bytes[24..32].try_into().expect("8 bytes")) as usize;
    if t == 0 || d == 0 || !(rate > 0.0) {
        return Err(Error::Parse(format!(
            "degenerate feature dump header: T={t}, d={d}, rate={rate}"
        )));
    }
    if let Some(want) = expected_dim {
        if want != d {
            return Err(Error::Dimension(format!(
                "feature dump has {d} dims, configuration expects {want}"
            )));
        }
    }
    let body = &bytes[HEADER..];
    let expected_len = t
        .checked_mul(d)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Parse("feature dump size overflow".into()))?;
    if body.len() != expected_len {
        return Err(Error::Parse(format!(
            "feature dump body is {} bytes, header implies {expected_len}",
            body.len()
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    FeatureSeq::new(NdArray::new(&[t, d], data)?, rate, FeatureKind::Phonetic)
}

pub fn export_feature_dump(f: &FeatureSeq, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_feature_dump(f, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn import_feature_dump(path: &Path, expected_dim: Option<usize>) -> Result<FeatureSeq> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_feature_dump(std::io::BufReader::new(file), expected_dim)
}

//! `GVCK` checkpoint files.
//!
//! Layout (little-endian): magic `GVCK`, version `u32`, config blob length
//! `u64` followed by that many bytes of JSON (`{"model", "config", "meta"}`),
//! parameter count `u64`, then per parameter: name length `u32`, UTF-8 name,
//! rank `u32`, `rank` extents as `u64`, and the values as `f32`.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::numerics::{NdArray, ParamStore};

const MAGIC: &[u8; 4] = b"GVCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    /// Which model the parameters belong to, e.g. `dvae-acoustic`.
    pub model: String,
    pub config: RunConfig,
    #[serde(default)]
    pub meta: serde_json::Value,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: Vec<(String, NdArray)>,
}

impl Checkpoint {
    pub fn from_store(model: &str, config: &RunConfig, store: &ParamStore) -> Self {
        Self {
            header: CheckpointHeader {
                model: model.to_string(),
                config: config.clone(),
                meta: serde_json::Value::Null,
            },
            params: store.named_values(),
        }
    }

    pub fn expect_model(&self, model: &str) -> Result<()> {
        if self.header.model != model {
            return Err(Error::Checkpoint(format!(
                "expected a `{model}` checkpoint, found `{}`",
                self.header.model
            )));
        }
        Ok(())
    }

    pub fn write_to(&self, mut out: impl Write) -> std::io::Result<()> {
        out.write_all(MAGIC)?;
        out.write_all(&VERSION.to_le_bytes())?;
        let blob = serde_json::to_vec(&self.header).expect("header serializes");
        out.write_all(&(blob.len() as u64).to_le_bytes())?;
        out.write_all(&blob)?;
        out.write_all(&(self.params.len() as u64).to_le_bytes())?;
        for (name, value) in &self.params {
            out.write_all(&(name.len() as u32).to_le_bytes())?;
            out.write_all(name.as_bytes())?;
            out.write_all(&(value.shape().len() as u32).to_le_bytes())?;
            for &d in value.shape() {
                out.write_all(&(d as u64).to_le_bytes())?;
            }
            for &v in value.data() {
                out.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(mut input: impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        input
            .read_to_end(&mut bytes)
            .map_err(|e| Error::Parse(format!("reading checkpoint: {e}")))?;
        let mut cur = Cursor { bytes: &bytes, pos: 0 };
        if cur.take(4)? != MAGIC {
            return Err(Error::Parse("bad checkpoint magic".into()));
        }
        let version = cur.u32()?;
        if version != VERSION {
            return Err(Error::Parse(format!("unsupported checkpoint version {version}")));
        }
        let blob_len = cur.u64()? as usize;
        let header: CheckpointHeader = serde_json::from_slice(cur.take(blob_len)?)
            .map_err(|e| Error::Parse(format!("checkpoint header: {e}")))?;
        header.config.validate()?;
        let count = cur.u64()? as usize;
        let mut params = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name_len = cur.u32()? as usize;
            let name = std::str::from_utf8(cur.take(name_len)?)
                .map_err(|_| Error::Parse("parameter name is not UTF-8".into()))?
                .to_string();
            let rank = cur.u32()? as usize;
            let shape = (0..rank)
                .map(|_| cur.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let raw = cur.take(n.checked_mul(4).ok_or_else(|| Error::Parse("size overflow".into()))?)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect();
            params.push((name, NdArray::new(&shape, data)?));
        }
        if cur.pos != bytes.len() {
            return Err(Error::Parse("trailing bytes after checkpoint".into()));
        }
        Ok(Self { header, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Parse("checkpoint truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_rounds_to_f32() {
        let mut store = ParamStore::new();
        store.add("a.weight", NdArray::new(&[2, 3], vec![0.1, 0.2, 0.3, 0.4, 0.5, 1.0 / 3.0]).unwrap());
        store.add_frozen("stats", NdArray::full(&[4], 2.5));
        let ck = Checkpoint::from_store("test", &RunConfig::toy(), &store);
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"GVCK");
        let back = Checkpoint::read_from(&buf[..]).unwrap();
        assert_eq!(back.header, ck.header);
        let mut rounded = store.clone();
        rounded.round_to_f32();
        let mut loaded = store.clone();
        loaded.load_values(&back.params).unwrap();
        for (a, b) in loaded.iter().zip(rounded.iter()) {
            assert_eq!(a.value, b.value);
        }
        let mut again = Vec::new();
        back.write_to(&mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn truncated_file_rejected() {
        let store = ParamStore::new();
        let mut buf = Vec::new();
        Checkpoint::from_store("x", &RunConfig::toy(), &store)
            .write_to(&mut buf)
            .unwrap();
        buf.truncate(buf.len() - 3);
        assert!(Checkpoint::read_from(&buf[..]).is_err());
    }

    #[test]
    fn wrong_model_kind() {
        let ck = Checkpoint::from_store("lm", &RunConfig::toy(), &ParamStore::new());
        assert!(matches!(ck.expect_model("vocoder"), Err(Error::Checkpoint(_))));
    }
}

//! Token sequences and the `GVCT` token stream file.
//!
//! Layout (little-endian): magic `GVCT`, version `u32`, vocabulary `u32`,
//! token rate `f64`, count `u64`, then `count` ids as `u16`.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// 50 Hz content frames compressed ×4.
pub const PHONETIC_TOKEN_RATE: f64 = 12.5;
/// 93.75 Hz mel frames compressed ×4.
pub const ACOUSTIC_TOKEN_RATE: f64 = 23.4375;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Phonetic,
    Acoustic,
}

/// Discrete code indices with their vocabulary and rate.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSeq {
    ids: Vec<usize>,
    vocab: usize,
    rate: f64,
    kind: TokenKind,
}

impl TokenSeq {
    pub fn new(ids: Vec<usize>, vocab: usize, rate: f64, kind: TokenKind) -> Result<Self> {
        if let Some(&bad) = ids.iter().find(|&&i| i >= vocab) {
            return Err(Error::Index(format!("token {bad} for vocabulary of {vocab}")));
        }
        if !(rate > 0.0) {
            return Err(Error::Parse(format!("token rate {rate}")));
        }
        Ok(Self {
            ids,
            vocab,
            rate,
            kind,
        })
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn kind(&self) -> TokenKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.ids.len() as f64 / self.rate
    }

    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        let end = (start + len).min(self.ids.len());
        Self::new(self.ids[start.min(end)..end].to_vec(), self.vocab, self.rate, self.kind)
    }
}

const MAGIC: &[u8; 4] = b"GVCT";
const VERSION: u32 = 1;

pub fn write_tokens(t: &TokenSeq, mut out: impl Write) -> Result<()> {
    if t.vocab > u16::MAX as usize + 1 {
        return Err(Error::Index(format!(
            "vocabulary {} does not fit u16 ids",
            t.vocab
        )));
    }
    let io = |e| Error::Parse(format!("writing tokens: {e}"));
    out.write_all(MAGIC).map_err(io)?;
    out.write_all(&VERSION.to_le_bytes()).map_err(io)?;
    out.write_all(&(t.vocab as u32).to_le_bytes()).map_err(io)?;
    out.write_all(&t.rate.to_le_bytes()).map_err(io)?;
    out.write_all(&(t.ids.len() as u64).to_le_bytes()).map_err(io)?;
    for &id in &t.ids {
        out.write_all(&(id as u16).to_le_bytes()).map_err(io)?;
    }
    Ok(())
}

/// Reads a token stream; the kind is inferred from the stored rate.
pub fn read_tokens(mut input: impl Read) -> Result<TokenSeq> {
    let mut bytes = Vec::new();
    input
        .read_to_end(&mut bytes)
        .map_err(|e| Error::Parse(format!("reading tokens: {e}")))?;
    const HEADER: usize = 4 + 4 + 4 + 8 + 8;
    if bytes.len() < HEADER || &bytes[..4] != MAGIC {
        return Err(Error::Parse("not a GVCT token stream".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Parse(format!("unsupported token stream version {version}")));
    }
    let vocab = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let rate = f64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
    let count = u64::from_le_bytes(bytes[20..28].try_into().expect("8 bytes")) as usize;
    let body = &bytes[HEADER..];
    if body.len() != count * 2 {
        return Err(Error::Parse(format!(
            "token body is {} bytes, header implies {}",
            body.len(),
            count * 2
        )));
    }
    let ids = body
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]) as usize)
        .collect();
    let kind = if rate == PHONETIC_TOKEN_RATE {
        TokenKind::Phonetic
    } else {
        TokenKind::Acoustic
    };
    TokenSeq::new(ids, vocab, rate, kind)
}

pub fn save_tokens(t: &TokenSeq, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_tokens(t, &mut buf)?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_tokens(path: &Path) -> Result<TokenSeq> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_tokens(&bytes[..])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ids_must_fit_vocab() {
        assert!(matches!(
            TokenSeq::new(vec![3, 256], 256, PHONETIC_TOKEN_RATE, TokenKind::Phonetic),
            Err(Error::Index(_))
        ));
    }

    #[test]
    fn bad_magic_rejected() {
        assert!(read_tokens(&b"GVCF\x01\0\0\0"[..]).is_err());
    }

    proptest! {
        #[test]
        fn stream_round_trip(ids in proptest::collection::vec(0usize..1024, 0..200)) {
            let t = TokenSeq::new(ids, 1024, ACOUSTIC_TOKEN_RATE, TokenKind::Acoustic).unwrap();
            let mut buf = Vec::new();
            write_tokens(&t, &mut buf).unwrap();
            prop_assert_eq!(buf.len(), 28 + 2 * t.len());
            prop_assert_eq!(read_tokens(&buf[..]).unwrap(), t);
        }
    }
}

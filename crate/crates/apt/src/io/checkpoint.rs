//! Checkpoint container: a flat table of named f32 tensors with an
//! integrity hash. The same format stores model parameters, optimizer
//! moments, and trainer position, so one file resumes a run exactly.
//!
//! Layout, all little-endian:
//!   magic "APTF" | u32 version | u32 count
//!   per tensor: u32 name_len | name bytes | u32 rows | u32 cols | f32 data
//!   sha256 of everything above

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"APTF";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorEntry {
    pub name: String,
    pub rows: u32,
    pub cols: u32,
    pub values: Vec<f32>,
}

impl TensorEntry {
    pub fn new(name: impl Into<String>, rows: usize, cols: usize, values: Vec<f32>) -> Self {
        let e = TensorEntry {
            name: name.into(),
            rows: rows as u32,
            cols: cols as u32,
            values,
        };
        assert_eq!(e.values.len(), (e.rows * e.cols) as usize, "{}", e.name);
        e
    }
}

pub fn encode(entries: &[TensorEntry]) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        let name = e.name.as_bytes();
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name);
        buf.extend_from_slice(&e.rows.to_le_bytes());
        buf.extend_from_slice(&e.cols.to_le_bytes());
        for v in &e.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    buf
}

pub fn decode(bytes: &[u8]) -> Result<Vec<TensorEntry>> {
    let fail = |what: &str| Error::Checkpoint(what.to_string());
    if bytes.len() < 4 + 4 + 4 + 32 {
        return Err(fail("file too short"));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    let want = Sha256::digest(body);
    if digest != want.as_slice() {
        return Err(fail("integrity hash mismatch"));
    }
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > body.len() {
            return Err(Error::Checkpoint("truncated tensor table".into()));
        }
        let s = &body[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    let u32_at = |pos: &mut usize| -> Result<u32> {
        let b = take(pos, 4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    };
    if take(&mut pos, 4)? != MAGIC {
        return Err(fail("bad magic"));
    }
    let version = u32_at(&mut pos)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version}, this build reads {VERSION}"
        )));
    }
    let count = u32_at(&mut pos)? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = u32_at(&mut pos)? as usize;
        let name = String::from_utf8(take(&mut pos, name_len)?.to_vec())
            .map_err(|_| fail("tensor name is not utf-8"))?;
        let rows = u32_at(&mut pos)?;
        let cols = u32_at(&mut pos)?;
        let n = (rows as usize) * (cols as usize);
        let data = take(&mut pos, n * 4)?;
        let values = data
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        entries.push(TensorEntry {
            name,
            rows,
            cols,
            values,
        });
    }
    if pos != body.len() {
        return Err(fail("trailing bytes after tensor table"));
    }
    Ok(entries)
}

pub fn save(path: &Path, entries: &[TensorEntry]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, encode(entries))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Vec<TensorEntry>> {
    let bytes = fs::read(path)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<TensorEntry> {
        vec![
            TensorEntry::new("a.w", 2, 3, vec![1.0, -2.5, 3.25, 0.0, 1e-7, -4.0]),
            TensorEntry::new("b", 1, 1, vec![42.0]),
        ]
    }

    #[test]
    fn roundtrip_is_byte_identical() {
        let bytes = encode(&sample());
        let back = decode(&bytes).unwrap();
        assert_eq!(back, sample());
        assert_eq!(encode(&back), bytes);
    }

    #[test]
    fn corruption_is_detected() {
        let mut bytes = encode(&sample());
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        assert!(matches!(decode(&bytes), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn bad_magic_and_version_are_rejected() {
        let mut bytes = encode(&sample());
        bytes[0] = b'X';
        // Re-sign so only the magic is wrong.
        let body_len = bytes.len() - 32;
        let digest = sha2::Sha256::digest(&bytes[..body_len]);
        bytes[body_len..].copy_from_slice(&digest);
        assert!(decode(&bytes).is_err());
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck/model.aptf");
        save(&path, &sample()).unwrap();
        assert_eq!(load(&path).unwrap(), sample());
    }
}

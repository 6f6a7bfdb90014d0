//! Binary embedding store.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic  b"LENSEMB1"
//! dim    u32
//! count  u64
//! count × { id_len u32, id [u8; id_len] (UTF-8), values [f32; dim] }
//! ```

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::index::{EmbeddingIndex, IndexError};

pub const MAGIC: &[u8; 8] = b"LENSEMB1";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic bytes")]
    BadMagic,
    #[error("record {0}: id is not valid UTF-8")]
    BadId(u64),
    #[error("record {index}: expected dim {expected}, got {actual}")]
    DimMismatch {
        index: u64,
        expected: usize,
        actual: usize,
    },
    #[error("trailing bytes after {0} records")]
    Trailing(u64),
    #[error(transparent)]
    Index(#[from] IndexError),
}

/// Raw store contents: ids with their vectors exactly as stored.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    pub dim: u32,
    pub records: Vec<(String, Vec<f32>)>,
}

impl EmbeddingStore {
    pub fn new(dim: u32) -> Self {
        Self {
            dim,
            records: Vec::new(),
        }
    }

    pub fn from_index(index: &EmbeddingIndex) -> Self {
        let dim = index.dim().unwrap_or(0) as u32;
        Self {
            dim,
            records: index
                .iter()
                .map(|(id, e)| (id.to_string(), e.values().to_vec()))
                .collect(),
        }
    }

    pub fn push(&mut self, id: impl Into<String>, values: Vec<f32>) -> Result<(), StoreError> {
        if values.len() != self.dim as usize {
            return Err(StoreError::DimMismatch {
                index: self.records.len() as u64,
                expected: self.dim as usize,
                actual: values.len(),
            });
        }
        self.records.push((id.into(), values));
        Ok(())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), StoreError> {
        w.write_all(MAGIC)?;
        w.write_all(&self.dim.to_le_bytes())?;
        w.write_all(&(self.records.len() as u64).to_le_bytes())?;
        for (i, (id, values)) in self.records.iter().enumerate() {
            if values.len() != self.dim as usize {
                return Err(StoreError::DimMismatch {
                    index: i as u64,
                    expected: self.dim as usize,
                    actual: values.len(),
                });
            }
            w.write_all(&(id.len() as u32).to_le_bytes())?;
            w.write_all(id.as_bytes())?;
            for v in values {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, StoreError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(StoreError::BadMagic);
        }
        let dim = read_u32(&mut r)?;
        let count = read_u64(&mut r)?;
        let mut records = Vec::new();
        let mut buf = vec![0u8; dim as usize * 4];
        for index in 0..count {
            let id_len = read_u32(&mut r)? as usize;
            let mut id = vec![0u8; id_len];
            r.read_exact(&mut id)?;
            let id = String::from_utf8(id).map_err(|_| StoreError::BadId(index))?;
            r.read_exact(&mut buf)?;
            let values = buf
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            records.push((id, values));
        }
        if r.read(&mut [0u8; 1])? != 0 {
            return Err(StoreError::Trailing(count));
        }
        Ok(Self { dim, records })
    }

    pub fn save(&self, path: &Path) -> Result<(), StoreError> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self, StoreError> {
        Self::read_from(BufReader::new(File::open(path)?))
    }

    /// Ingests every record into a fresh index of this store's dimension.
    pub fn to_index(&self) -> Result<EmbeddingIndex, StoreError> {
        let mut index = EmbeddingIndex::with_dim(self.dim as usize);
        for (id, values) in &self.records {
            index.ingest(id, values)?;
        }
        Ok(index)
    }
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_exact() {
        let mut s = EmbeddingStore::new(2);
        s.push("ab", vec![1.0, -0.5]).unwrap();
        let mut bytes = Vec::new();
        s.write_to(&mut bytes).unwrap();
        let mut expected = b"LENSEMB1".to_vec();
        expected.extend(2u32.to_le_bytes());
        expected.extend(1u64.to_le_bytes());
        expected.extend(2u32.to_le_bytes());
        expected.extend(b"ab");
        expected.extend(1.0f32.to_le_bytes());
        expected.extend((-0.5f32).to_le_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn rejects_bad_magic_and_trailing_bytes() {
        assert!(matches!(
            EmbeddingStore::read_from(&b"LENSEMB2\0\0\0\0\0\0\0\0\0\0\0\0"[..]),
            Err(StoreError::BadMagic)
        ));
        let mut bytes = Vec::new();
        EmbeddingStore::new(3).write_to(&mut bytes).unwrap();
        bytes.push(7);
        assert!(matches!(EmbeddingStore::read_from(&bytes[..]), Err(StoreError::Trailing(0))));
    }

    #[test]
    fn truncated_file_is_an_error() {
        let mut s = EmbeddingStore::new(4);
        s.push("x", vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let mut bytes = Vec::new();
        s.write_to(&mut bytes).unwrap();
        bytes.truncate(bytes.len() - 2);
        assert!(matches!(EmbeddingStore::read_from(&bytes[..]), Err(StoreError::Io(_))));
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            dim in 1u32..16,
            raw in prop::collection::vec(("[a-zé_0-9]{0,12}", prop::collection::vec(any::<u32>(), 16)), 0..20),
        ) {
            let mut s = EmbeddingStore::new(dim);
            for (id, bits) in raw {
                s.push(id, bits[..dim as usize].iter().map(|b| f32::from_bits(*b)).collect()).unwrap();
            }
            let mut bytes = Vec::new();
            s.write_to(&mut bytes).unwrap();
            let back = EmbeddingStore::read_from(&bytes[..]).unwrap();
            prop_assert_eq!(back.dim, s.dim);
            prop_assert_eq!(back.records.len(), s.records.len());
            for ((ia, va), (ib, vb)) in s.records.iter().zip(&back.records) {
                prop_assert_eq!(ia, ib);
                let a: Vec<u32> = va.iter().map(|v| v.to_bits()).collect();
                let b: Vec<u32> = vb.iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(a, b);
            }
            let mut again = Vec::new();
            back.write_to(&mut again).unwrap();
            prop_assert_eq!(bytes, again);
        }
    }
}

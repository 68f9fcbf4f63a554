//! Embedding file format (`MOSE`), little-endian:
//! magic, u32 version = 1, u32 count, u32 dim, then per record
//! {u32 identity, u8 modality (0 optical / 1 sar), u8 source
//! (0 real / 1 fused), 2 padding bytes, dim x f32}.

use std::path::Path;

use crate::binio::{Reader, Writer};
use crate::data::Modality;
use crate::error::{Error, Result};
use crate::retrieval::{EmbeddingRecord, Source};

const MOSE_MAGIC: &[u8; 4] = b"MOSE";
const MOSE_VERSION: u32 = 1;

pub fn write_embeddings(path: &Path, records: &[EmbeddingRecord]) -> Result<()> {
    if records.is_empty() {
        return Err(Error::data("refusing to write an empty embedding file"));
    }
    let dim = records[0].vector.len();
    if records.iter().any(|r| r.vector.len() != dim) {
        return Err(Error::data("embedding records must share one dimension"));
    }
    let mut w = Writer::new();
    w.magic(MOSE_MAGIC);
    w.u32(MOSE_VERSION);
    w.u32(records.len() as u32);
    w.u32(dim as u32);
    for r in records {
        w.u32(r.identity);
        w.u8(match r.modality {
            Modality::Optical => 0,
            Modality::Sar => 1,
        });
        w.u8(match r.source {
            Source::Real => 0,
            Source::Fused => 1,
        });
        w.u8(0);
        w.u8(0);
        for &v in &r.vector {
            w.f32(v as f32);
        }
    }
    std::fs::write(path, w.into_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_embeddings(path: &Path) -> Result<Vec<EmbeddingRecord>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader::new(&bytes, "embedding file");
    r.magic(MOSE_MAGIC)?;
    let version = r.u32()?;
    if version != MOSE_VERSION {
        return Err(Error::data(format!("embedding file version {version} unsupported")));
    }
    let count = r.u32()? as usize;
    let dim = r.u32()? as usize;
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let identity = r.u32()?;
        if identity == 0 {
            return Err(Error::data("embedding record has identity 0"));
        }
        let modality = match r.u8()? {
            0 => Modality::Optical,
            1 => Modality::Sar,
            other => return Err(Error::data(format!("bad modality byte {other}"))),
        };
        let source = match r.u8()? {
            0 => Source::Real,
            1 => Source::Fused,
            other => return Err(Error::data(format!("bad source byte {other}"))),
        };
        r.skip(2)?;
        let mut vector = Vec::with_capacity(dim);
        for _ in 0..dim {
            let v = r.f32()? as f64;
            if !v.is_finite() {
                return Err(Error::numeric("embedding file contains non-finite values"));
            }
            vector.push(v);
        }
        records.push(EmbeddingRecord {
            vector,
            identity,
            modality,
            source,
        });
    }
    r.finish()?;
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_records_at_f32_precision() {
        let records = vec![
            EmbeddingRecord {
                vector: vec![0.25, -1.5, 3.0],
                identity: 7,
                modality: Modality::Optical,
                source: Source::Fused,
            },
            EmbeddingRecord {
                vector: vec![1.0, 0.0, -0.125],
                identity: 2,
                modality: Modality::Sar,
                source: Source::Real,
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.mose");
        write_embeddings(&path, &records).unwrap();
        let loaded = read_embeddings(&path).unwrap();
        assert_eq!(loaded.len(), 2);
        for (a, b) in records.iter().zip(&loaded) {
            assert_eq!(a.identity, b.identity);
            assert_eq!(a.modality, b.modality);
            assert_eq!(a.source, b.source);
            // The chosen values are exactly representable in f32.
            assert_eq!(a.vector, b.vector);
        }
    }

    #[test]
    fn layout_is_bit_exact() {
        let records = vec![EmbeddingRecord {
            vector: vec![1.0],
            identity: 0x0102_0304,
            modality: Modality::Sar,
            source: Source::Real,
        }];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.mose");
        write_embeddings(&path, &records).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let mut expected = Vec::new();
        expected.extend_from_slice(b"MOSE");
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&0x0102_0304u32.to_le_bytes());
        expected.push(1);
        expected.push(0);
        expected.push(0);
        expected.push(0);
        expected.extend_from_slice(&1.0f32.to_le_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn rejects_truncated_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.mose");
        std::fs::write(&path, b"MOSE\x01\x00\x00\x00").unwrap();
        assert!(read_embeddings(&path).is_err());
    }
}

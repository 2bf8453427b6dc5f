//! Binary snapshot format, little-endian throughout:
//!
//! ```text
//! magic      "MNTA"
//! version    u16
//! kind       u8        0 = checkpoint, 1 = adapter
//! dimension  u32
//! count      u64
//! name       u32 len + UTF-8
//! count × record:
//!   id         u32 len + UTF-8
//!   metadata   u32 block len, then: base_model, display_name,
//!              exemplar_prompt (each u32 len + UTF-8),
//!              flag count u16, flags (each u32 len + UTF-8)
//!   scale      f64
//!   codes      dimension × i8
//! ```

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::scalar::Scalar;

use super::collection::{Collection, IndexedDocument};
use super::quantize::QuantizedVector;
use super::{DocKind, DocumentRecord, IndexError};

pub const SNAPSHOT_MAGIC: [u8; 4] = *b"MNTA";
pub const SNAPSHOT_VERSION: u16 = 1;

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

pub fn encode_snapshot<T: Scalar>(c: &Collection<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + c.len() * (c.dimension() + 64));
    out.extend_from_slice(&SNAPSHOT_MAGIC);
    out.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
    out.push(c.kind().to_byte());
    out.extend_from_slice(&(c.dimension() as u32).to_le_bytes());
    out.extend_from_slice(&(c.len() as u64).to_le_bytes());
    put_str(&mut out, c.name());
    for doc in c.documents() {
        let r = &doc.record;
        put_str(&mut out, &r.id);
        let mut meta = Vec::new();
        put_str(&mut meta, &r.base_model);
        put_str(&mut meta, &r.display_name);
        put_str(&mut meta, &r.exemplar_prompt);
        meta.extend_from_slice(&(r.flags.len() as u16).to_le_bytes());
        for flag in &r.flags {
            put_str(&mut meta, flag);
        }
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&doc.vector.scale().as_f64().to_le_bytes());
        out.extend(doc.vector.codes().iter().map(|&c| c as u8));
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], IndexError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&end| end <= self.buf.len())
            .ok_or_else(|| IndexError::CorruptSnapshot(format!("truncated while reading {what}")))?;
        let slice = &self.buf[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u8(&mut self, what: &str) -> Result<u8, IndexError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16, IndexError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32, IndexError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64, IndexError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self, what: &str) -> Result<f64, IndexError> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self, what: &str) -> Result<String, IndexError> {
        let len = self.u32(what)? as usize;
        let bytes = self.take(len, what)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| IndexError::CorruptSnapshot(format!("{what} is not UTF-8")))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

pub fn decode_snapshot<T: Scalar>(bytes: &[u8]) -> Result<Collection<T>, IndexError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4, "magic")? != SNAPSHOT_MAGIC {
        return Err(IndexError::CorruptSnapshot("bad magic".into()));
    }
    let version = r.u16("version")?;
    if version != SNAPSHOT_VERSION {
        return Err(IndexError::VersionMismatch {
            found: version,
            supported: SNAPSHOT_VERSION,
        });
    }
    let kind_byte = r.u8("kind")?;
    let kind = DocKind::from_byte(kind_byte)
        .ok_or_else(|| IndexError::CorruptSnapshot(format!("unknown kind byte {kind_byte}")))?;
    let dimension = r.u32("dimension")? as usize;
    if dimension == 0 {
        return Err(IndexError::CorruptSnapshot("dimension is zero".into()));
    }
    let count = r.u64("record count")?;
    let name = r.string("collection name")?;
    // Each record needs at least its scale and codes.
    if count.saturating_mul(dimension as u64 + 8) > r.remaining() as u64 {
        return Err(IndexError::CorruptSnapshot(format!(
            "{count} records cannot fit in {} bytes",
            r.remaining()
        )));
    }
    let mut documents = Vec::with_capacity(count as usize);
    for i in 0..count {
        let id = r.string("record id")?;
        let meta_len = r.u32("metadata length")? as usize;
        let meta_start = r.pos;
        let base_model = r.string("base model")?;
        let display_name = r.string("display name")?;
        let exemplar_prompt = r.string("exemplar prompt")?;
        let flag_count = r.u16("flag count")?;
        let mut flags = BTreeSet::new();
        for _ in 0..flag_count {
            flags.insert(r.string("flag")?);
        }
        if r.pos - meta_start != meta_len {
            return Err(IndexError::CorruptSnapshot(format!(
                "record {i}: metadata block length mismatch"
            )));
        }
        let scale = r.f64("scale")?;
        if !(scale.is_finite() && scale > 0.0) {
            return Err(IndexError::CorruptSnapshot(format!("record {i}: invalid scale {scale}")));
        }
        let codes = r.take(dimension, "codes")?.iter().map(|&b| b as i8).collect();
        let vector = QuantizedVector::from_parts(codes, T::lit(scale))
            .map_err(|e| IndexError::CorruptSnapshot(format!("record {i}: {e}")))?;
        documents.push(IndexedDocument {
            record: DocumentRecord {
                id,
                kind,
                base_model,
                exemplar_prompt,
                display_name,
                flags,
            },
            vector,
        });
    }
    if r.remaining() != 0 {
        return Err(IndexError::CorruptSnapshot(format!("{} trailing bytes", r.remaining())));
    }
    Collection::from_parts(name, kind, dimension, documents).map_err(|e| match e {
        IndexError::DuplicateId(id) => IndexError::CorruptSnapshot(format!("duplicate id `{id}`")),
        other => IndexError::CorruptSnapshot(other.to_string()),
    })
}

pub fn save_snapshot<T: Scalar>(c: &Collection<T>, path: &Path) -> Result<(), IndexError> {
    let io = |e: std::io::Error| IndexError::Io(format!("{}: {e}", path.display()));
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io)?;
    }
    let tmp = path.with_extension("tmp");
    let mut file = fs::File::create(&tmp).map_err(io)?;
    file.write_all(&encode_snapshot(c)).map_err(io)?;
    file.sync_all().map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

pub fn load_snapshot<T: Scalar>(path: &Path) -> Result<Collection<T>, IndexError> {
    let bytes = fs::read(path).map_err(|e| IndexError::Io(format!("{}: {e}", path.display())))?;
    decode_snapshot(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::EmbeddingVector;

    fn sample() -> Collection<f32> {
        let mut b = Collection::builder("loras", DocKind::Adapter, 4);
        for i in 0..5 {
            let rec = DocumentRecord::new(format!("id-{i}"), DocKind::Adapter, format!("exemplar {i} ✓"))
                .unwrap()
                .with_display_name(format!("Adapter {i}"))
                .with_base_model("sd15")
                .with_flag(if i % 2 == 0 { "nsfw" } else { "anime" });
            let v = EmbeddingVector::new(vec![i as f32, -1.0, 0.25, 3.0]).unwrap();
            b.add_embedding(rec, &v).unwrap();
        }
        b.build().unwrap()
    }

    #[test]
    fn round_trip_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/loras.mnta");
        let c = sample();
        save_snapshot(&c, &path).unwrap();
        let loaded: Collection<f32> = load_snapshot(&path).unwrap();
        assert_eq!(loaded, c);
        assert_eq!(encode_snapshot(&loaded), std::fs::read(&path).unwrap());
    }

    #[test]
    fn header_layout() {
        let bytes = encode_snapshot(&sample());
        assert_eq!(&bytes[..4], b"MNTA");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
        assert_eq!(bytes[6], 1);
        assert_eq!(u32::from_le_bytes(bytes[7..11].try_into().unwrap()), 4);
        assert_eq!(u64::from_le_bytes(bytes[11..19].try_into().unwrap()), 5);
    }

    #[test]
    fn every_truncation_is_corrupt() {
        let bytes = encode_snapshot(&sample());
        for len in 0..bytes.len() {
            let err = decode_snapshot::<f32>(&bytes[..len]).unwrap_err();
            assert!(matches!(err, IndexError::CorruptSnapshot(_)), "len {len}: {err:?}");
        }
    }

    #[test]
    fn future_version_rejected() {
        let mut bytes = encode_snapshot(&sample());
        bytes[4..6].copy_from_slice(&2u16.to_le_bytes());
        assert_eq!(
            decode_snapshot::<f32>(&bytes).unwrap_err(),
            IndexError::VersionMismatch { found: 2, supported: 1 }
        );
    }

    #[test]
    fn bad_magic_and_trailing_bytes_rejected() {
        let mut bytes = encode_snapshot(&sample());
        bytes.push(0);
        assert!(matches!(decode_snapshot::<f32>(&bytes), Err(IndexError::CorruptSnapshot(_))));
        bytes[0] = b'X';
        assert!(matches!(decode_snapshot::<f32>(&bytes), Err(IndexError::CorruptSnapshot(_))));
    }

    #[test]
    fn loads_as_other_width() {
        let bytes = encode_snapshot(&sample());
        let wide: Collection<f64> = decode_snapshot(&bytes).unwrap();
        assert_eq!(wide.len(), 5);
        assert_eq!(wide.documents()[2].vector.codes(), sample().documents()[2].vector.codes());
    }
}

//! The library signature database and its on-disk image.
//!
//! A `.sigdb` file is little-endian and length-prefixed:
//!
//! ```text
//! magic          8 bytes   "TPLSIGDB"
//! format_version u32
//! record_count   u64
//! records        record_count × record
//! checksum       32 bytes  SHA-256 of everything above
//!
//! record  := str group, str artifact, str version,
//!            [u8;16] source_bundle_digest, [u8;16] t1,
//!            u32 class_count, u32 n_roots, n_roots × str,
//!            u32 n_methods, n_methods × (str method_ref, [u8;16] coarse,
//!                                       u32 opcode_len, str fine_digest)
//! str     := u32 byte length, UTF-8 bytes
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bundle::{write_bundle, ProgramBundle};
use crate::decouple::{split_skinny_deps, SplitWarning};
use crate::features::{t1, CtphDigest, MethodFeature, ModuleFeatures};
use crate::hash::Hash128;

pub const MAGIC: &[u8; 8] = b"TPLSIGDB";
pub const FORMAT_VERSION: u32 = 1;

/// `(group, artifact, version)` coordinates of one library version.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LibraryKey {
    pub group: String,
    pub artifact: String,
    pub version: String,
}

impl LibraryKey {
    pub fn new(group: impl Into<String>, artifact: impl Into<String>, version: impl Into<String>) -> LibraryKey {
        LibraryKey {
            group: group.into(),
            artifact: artifact.into(),
            version: version.into(),
        }
    }

    /// `(group, artifact)` without the version.
    pub fn library(&self) -> (&str, &str) {
        (&self.group, &self.artifact)
    }
}

impl fmt::Display for LibraryKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.group, self.artifact, self.version)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LibraryRecord {
    pub key: LibraryKey,
    pub features: ModuleFeatures,
    pub source_bundle_digest: Hash128,
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("library {key} is already stored (source digest {existing_digest})")]
    Duplicate { key: LibraryKey, existing_digest: Hash128 },
    #[error("only library bundles can be added to the signature database")]
    NotALibrary,
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a signature database (bad magic)")]
    BadMagic,
    #[error("unsupported signature database format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("signature database is truncated")]
    Truncated,
    #[error("signature database is corrupt: {0}")]
    Corrupt(String),
}

/// Stored library versions plus the lookup indexes the matcher uses.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SignatureDb {
    records: BTreeMap<LibraryKey, LibraryRecord>,
    index_t1: BTreeMap<Hash128, BTreeSet<LibraryKey>>,
    index_pkg: BTreeMap<String, BTreeSet<LibraryKey>>,
    index_class_count: BTreeMap<usize, BTreeSet<LibraryKey>>,
}

impl SignatureDb {
    pub fn new() -> SignatureDb {
        SignatureDb::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> impl Iterator<Item = &LibraryRecord> {
        self.records.values()
    }

    pub fn get(&self, key: &LibraryKey) -> Option<&LibraryRecord> {
        self.records.get(key)
    }

    pub fn method_count(&self) -> usize {
        self.records.values().map(|r| r.features.method_count()).sum()
    }

    /// Adds the host-library candidate of a library bundle. Classes of a fat
    /// bundle's declared dependencies are left out of the record.
    pub fn add_bundle(&mut self, bundle: &ProgramBundle) -> Result<Vec<SplitWarning>, StoreError> {
        let meta = bundle.library_meta().ok_or(StoreError::NotALibrary)?;
        let key = LibraryKey::new(&meta.group_id, &meta.artifact_id, &meta.version);
        if let Some(existing) = self.records.get(&key) {
            return Err(StoreError::Duplicate {
                key,
                existing_digest: existing.source_bundle_digest,
            });
        }
        let (candidates, warnings) = split_skinny_deps(bundle);
        let host = &candidates[0];
        let record = LibraryRecord {
            key,
            features: ModuleFeatures::from_classes(host.classes.iter().copied()),
            source_bundle_digest: Hash128::of(write_bundle(bundle).as_bytes()),
        };
        self.insert(record)?;
        Ok(warnings)
    }

    pub fn insert(&mut self, record: LibraryRecord) -> Result<(), StoreError> {
        if let Some(existing) = self.records.get(&record.key) {
            return Err(StoreError::Duplicate {
                key: record.key.clone(),
                existing_digest: existing.source_bundle_digest,
            });
        }
        self.index(&record);
        self.records.insert(record.key.clone(), record);
        Ok(())
    }

    fn index(&mut self, record: &LibraryRecord) {
        let key = &record.key;
        let f = &record.features;
        self.index_t1.entry(f.t1).or_default().insert(key.clone());
        for root in &f.package_roots {
            self.index_pkg.entry(root.clone()).or_default().insert(key.clone());
        }
        self.index_class_count
            .entry(f.class_count)
            .or_default()
            .insert(key.clone());
    }

    /// Recomputes every index from the records alone.
    pub fn rebuild_indexes(&mut self) {
        self.index_t1.clear();
        self.index_pkg.clear();
        self.index_class_count.clear();
        let records: Vec<LibraryRecord> = self.records.values().cloned().collect();
        for r in &records {
            self.index(r);
        }
    }

    /// Keys whose features share this T1.
    pub fn query_t1(&self, t1: &Hash128) -> Vec<&LibraryKey> {
        self.index_t1.get(t1).map(|s| s.iter().collect()).unwrap_or_default()
    }

    /// Keys of records whose package roots contain `root`. A narrowing hint
    /// only; it never decides a match by itself.
    pub fn query_pkg(&self, root: &str) -> Vec<&LibraryKey> {
        self.index_pkg.get(root).map(|s| s.iter().collect()).unwrap_or_default()
    }

    /// Keys of records with a class count in `lo..=hi`.
    pub fn query_class_count(&self, lo: usize, hi: usize) -> impl Iterator<Item = &LibraryKey> {
        self.index_class_count
            .range(lo..=hi)
            .flat_map(|(_, keys)| keys.iter())
    }

    /// Checks that every index entry resolves to a record and that the
    /// indexes equal a fresh rebuild.
    pub fn check_consistency(&self) -> Result<(), String> {
        let all = self
            .index_t1
            .values()
            .chain(self.index_pkg.values())
            .chain(self.index_class_count.values());
        for keys in all {
            for k in keys {
                if !self.records.contains_key(k) {
                    return Err(format!("index references missing record {k}"));
                }
            }
        }
        let mut rebuilt = self.clone();
        rebuilt.rebuild_indexes();
        if rebuilt != *self {
            return Err("indexes differ from a rebuild".into());
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ImageWriter::default();
        w.bytes(MAGIC);
        w.u32(FORMAT_VERSION);
        w.u64(self.records.len() as u64);
        for r in self.records.values() {
            w.str(&r.key.group);
            w.str(&r.key.artifact);
            w.str(&r.key.version);
            w.bytes(r.source_bundle_digest.as_bytes());
            w.bytes(r.features.t1.as_bytes());
            w.u32(r.features.class_count as u32);
            w.u32(r.features.package_roots.len() as u32);
            for root in &r.features.package_roots {
                w.str(root);
            }
            w.u32(r.features.methods.len() as u32);
            for m in &r.features.methods {
                w.str(&m.method_ref);
                w.bytes(m.coarse.as_bytes());
                w.u32(m.opcode_len);
                w.str(&m.fine.to_string());
            }
        }
        let checksum = Sha256::digest(&w.buf);
        w.bytes(&checksum);
        w.buf
    }

    pub fn from_bytes(data: &[u8]) -> Result<SignatureDb, StoreError> {
        if data.len() < MAGIC.len() {
            return Err(if MAGIC.starts_with(data) { StoreError::Truncated } else { StoreError::BadMagic });
        }
        if &data[..MAGIC.len()] != MAGIC {
            return Err(StoreError::BadMagic);
        }
        let mut r = ImageReader { data, pos: MAGIC.len() };
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(StoreError::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        if data.len() < MAGIC.len() + 12 + 32 {
            return Err(StoreError::Truncated);
        }
        let (body, checksum) = data.split_at(data.len() - 32);
        let count = r.u64()?;
        let mut db = SignatureDb::new();
        let mut r = ImageReader { data: body, pos: r.pos };
        for _ in 0..count {
            let key = LibraryKey::new(r.str()?, r.str()?, r.str()?);
            let source_bundle_digest = r.hash()?;
            let stored_t1 = r.hash()?;
            let class_count = r.u32()? as usize;
            let mut package_roots = BTreeSet::new();
            for _ in 0..r.u32()? {
                package_roots.insert(r.str()?);
            }
            let n_methods = r.u32()? as usize;
            let mut methods = Vec::with_capacity(n_methods.min(1 << 16));
            for _ in 0..n_methods {
                let method_ref = r.str()?;
                let coarse = r.hash()?;
                let opcode_len = r.u32()?;
                let fine: CtphDigest = r
                    .str()?
                    .parse()
                    .map_err(|e| StoreError::Corrupt(format!("{key}: {e}")))?;
                methods.push(MethodFeature {
                    method_ref,
                    coarse,
                    fine,
                    opcode_len,
                });
            }
            let features = ModuleFeatures {
                t1: t1(methods.iter().map(|m| &m.coarse)),
                methods,
                class_count,
                package_roots,
            };
            if features.t1 != stored_t1 {
                return Err(StoreError::Corrupt(format!("{key}: T1 does not match its coarse set")));
            }
            db.insert(LibraryRecord {
                key,
                features,
                source_bundle_digest,
            })
            .map_err(|e| StoreError::Corrupt(e.to_string()))?;
        }
        if r.pos != body.len() {
            return Err(StoreError::Corrupt("trailing bytes after the last record".into()));
        }
        if Sha256::digest(body).as_slice() != checksum {
            return Err(StoreError::Corrupt("checksum mismatch".into()));
        }
        Ok(db)
    }

    pub fn save(&self, path: &Path) -> Result<(), StoreError> {
        let io = |source| StoreError::Io {
            path: path.display().to_string(),
            source,
        };
        let tmp = path.with_extension("sigdb.tmp");
        let mut f = std::fs::File::create(&tmp).map_err(io)?;
        f.write_all(&self.to_bytes()).map_err(io)?;
        f.sync_all().map_err(io)?;
        std::fs::rename(&tmp, path).map_err(io)
    }

    pub fn load(path: &Path) -> Result<SignatureDb, StoreError> {
        let data = std::fs::read(path).map_err(|source| StoreError::Io {
            path: path.display().to_string(),
            source,
        })?;
        SignatureDb::from_bytes(&data)
    }

    /// One JSON object per record, in key order.
    pub fn export_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for r in self.records.values() {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[derive(Default)]
struct ImageWriter {
    buf: Vec<u8>,
}

impl ImageWriter {
    fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.bytes(s.as_bytes());
    }
}

struct ImageReader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl ImageReader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], StoreError> {
        let end = self.pos.checked_add(n).ok_or(StoreError::Truncated)?;
        if end > self.data.len() {
            return Err(StoreError::Truncated);
        }
        let out = &self.data[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u32(&mut self) -> Result<u32, StoreError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, StoreError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn hash(&mut self) -> Result<Hash128, StoreError> {
        Ok(Hash128(self.take(16)?.try_into().unwrap()))
    }
    fn str(&mut self) -> Result<String, StoreError> {
        let n = self.u32()? as usize;
        let bytes = self.take(n)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| StoreError::Corrupt("invalid UTF-8 string".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::parse_bundle;

    fn lib(version: &str, extra_op: &str) -> ProgramBundle {
        parse_bundle(&format!(
            "@bundle library
@meta group_id=com.squareup
@meta artifact_id=okio
@meta version={version}
@class com/squareup/okio/Buffer pkg=com/squareup/okio
@method read entry=0
@block 0:
  load_local
  if_eqz
@block 1:
  {extra_op}
  return
@block 2:
  return_void
@edge 0 1
@edge 0 2
"
        ))
        .unwrap()
    }

    #[test]
    fn two_versions_two_records() {
        let mut db = SignatureDb::new();
        db.add_bundle(&lib("2.0.0", "add")).unwrap();
        db.add_bundle(&lib("2.3.0", "sub")).unwrap();
        assert_eq!(db.len(), 2);
        assert_eq!(db.query_pkg("com/squareup").len(), 2);
        assert!(db.query_pkg("org/unknown").is_empty());
        db.check_consistency().unwrap();
    }

    #[test]
    fn duplicate_coordinates_are_rejected() {
        let mut db = SignatureDb::new();
        db.add_bundle(&lib("2.0.0", "add")).unwrap();
        match db.add_bundle(&lib("2.0.0", "sub")) {
            Err(StoreError::Duplicate { key, .. }) => assert_eq!(key.to_string(), "com.squareup:okio:2.0.0"),
            other => panic!("expected duplicate error, got {other:?}"),
        }
        assert_eq!(db.len(), 1);
    }

    #[test]
    fn empty_round_trip() {
        let db = SignatureDb::new();
        assert_eq!(SignatureDb::from_bytes(&db.to_bytes()).unwrap(), db);
    }

    #[test]
    fn truncation_and_tampering_are_errors() {
        let mut db = SignatureDb::new();
        db.add_bundle(&lib("2.0.0", "add")).unwrap();
        let bytes = db.to_bytes();
        for cut in [0, 4, 8, 12, 20, bytes.len() / 2, bytes.len() - 1] {
            assert!(SignatureDb::from_bytes(&bytes[..cut]).is_err(), "cut at {cut}");
        }
        let mut flipped = bytes.clone();
        let mid = flipped.len() / 2;
        flipped[mid] ^= 0x40;
        assert!(SignatureDb::from_bytes(&flipped).is_err());

        let mut versioned = bytes;
        versioned[8] = 9;
        assert!(matches!(
            SignatureDb::from_bytes(&versioned),
            Err(StoreError::VersionMismatch { found: 9, expected: FORMAT_VERSION })
        ));
        assert!(matches!(SignatureDb::from_bytes(b"NOTADB\0\0\0\0"), Err(StoreError::BadMagic)));
    }

    #[test]
    fn app_bundles_are_refused() {
        let app = parse_bundle("@bundle app\n@meta app_package=com.foo\n").unwrap();
        assert!(matches!(SignatureDb::new().add_bundle(&app), Err(StoreError::NotALibrary)));
    }
}

//! On-disk adapter store with an LRU cache and storage accounting.
//!
//! File layout (little-endian):
//!
//! ```text
//! "PLRA" | version u16 | user_id (u16 len + UTF-8) | base fingerprint [32]
//! rank u32 | alpha f32 | target count u32
//! per target: name (u16 len + UTF-8) | d u32 | k u32 | A f32[d*r] | B f32[r*k]
//! CRC32 u32 over everything before it
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{self, Write};
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use lru::LruCache;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::lora::{AdapterMatrix, LoraAdapter, Site};

pub const MAGIC: &[u8; 4] = b"PLRA";
pub const FORMAT_VERSION: u16 = 1;
pub const DEFAULT_CACHE_CAPACITY: usize = 64;
const EXTENSION: &str = "plra";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("user id must be non-empty and at most 65535 bytes")]
    InvalidUserId,
    #[error("no adapter stored for user `{0}`")]
    NotFound(String),
    #[error("an adapter for user `{0}` already exists; pass overwrite to replace it")]
    Conflict(String),
    #[error("{path}: corrupt adapter file ({reason})")]
    Corrupt { path: PathBuf, reason: String },
    #[error("adapter for user `{0}` was trained against a different base model")]
    WrongBaseModel(String),
    #[error("storage: {0}")]
    Io(#[from] io::Error),
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u16).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

/// Serializes an adapter in the store's file format.
pub fn encode_adapter(user_id: &str, adapter: &LoraAdapter) -> Vec<u8> {
    let mut out = Vec::with_capacity(encoded_len(user_id, adapter));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    put_str(&mut out, user_id);
    out.extend_from_slice(&adapter.base_fingerprint);
    out.extend_from_slice(&(adapter.rank as u32).to_le_bytes());
    out.extend_from_slice(&adapter.alpha.to_le_bytes());
    out.extend_from_slice(&(adapter.matrices.len() as u32).to_le_bytes());
    for m in &adapter.matrices {
        put_str(&mut out, &m.site.to_string());
        out.extend_from_slice(&(m.d() as u32).to_le_bytes());
        out.extend_from_slice(&(m.k() as u32).to_le_bytes());
        for x in m.a.iter().chain(m.b.iter()) {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

/// Exact file size: header, `4·Σ r(d+k)` matrix bytes, and the checksum.
pub fn encoded_len(user_id: &str, adapter: &LoraAdapter) -> usize {
    let header = 4 + 2 + 2 + user_id.len() + 32 + 4 + 4 + 4;
    let per_target: usize = adapter
        .matrices
        .iter()
        .map(|m| 2 + m.site.to_string().len() + 4 + 4)
        .sum();
    header + per_target + 4 * adapter.param_count() + 4
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or("truncated")?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u16(&mut self) -> Result<u16, String> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f32(&mut self) -> Result<f32, String> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn string(&mut self) -> Result<String, String> {
        let n = self.u16()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| "invalid UTF-8".to_string())
    }
    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Array2<f32>, String> {
        let data = (0..rows * cols)
            .map(|_| self.f32())
            .collect::<Result<Vec<_>, _>>()?;
        Array2::from_shape_vec((rows, cols), data).map_err(|e| e.to_string())
    }
}

/// Parses and checksum-verifies a file, returning its user id and adapter.
pub fn decode_adapter(bytes: &[u8]) -> Result<(String, LoraAdapter), String> {
    if bytes.len() < 4 {
        return Err("truncated".into());
    }
    let (body, crc) = bytes.split_at(bytes.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(crc.try_into().unwrap()) {
        return Err("checksum mismatch".into());
    }
    let mut r = Reader {
        bytes: body,
        pos: 0,
    };
    if r.take(4)? != MAGIC {
        return Err("bad magic".into());
    }
    let version = r.u16()?;
    if version != FORMAT_VERSION {
        return Err(format!("unsupported format version {version}"));
    }
    let user_id = r.string()?;
    let base_fingerprint: [u8; 32] = r.take(32)?.try_into().unwrap();
    let rank = r.u32()? as usize;
    let alpha = r.f32()?;
    let n = r.u32()? as usize;
    let mut matrices = Vec::with_capacity(n.min(1024));
    for _ in 0..n {
        let site: Site = r
            .string()?
            .parse()
            .map_err(|e: crate::lora::LoraError| e.to_string())?;
        let d = r.u32()? as usize;
        let k = r.u32()? as usize;
        let a = r.matrix(d, rank)?;
        let b = r.matrix(rank, k)?;
        matrices.push(AdapterMatrix { site, a, b });
    }
    if r.pos != body.len() {
        return Err("trailing bytes".into());
    }
    Ok((
        user_id,
        LoraAdapter {
            rank,
            alpha,
            matrices,
            base_fingerprint,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SaveReceipt {
    pub path: PathBuf,
    pub bytes: u64,
    pub checksum: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CatalogEntry {
    pub path: PathBuf,
    pub bytes: u64,
    pub base_fingerprint: [u8; 32],
}

/// Per-user adapter files under one directory. Holds at most one adapter
/// per user and offers no API that reads several users' adapters at once.
pub struct AdapterStore {
    root: PathBuf,
    catalog: RwLock<BTreeMap<String, CatalogEntry>>,
    cache: Mutex<LruCache<String, Arc<LoraAdapter>>>,
    user_locks: Mutex<HashMap<String, Arc<RwLock<()>>>>,
    file_reads: AtomicU64,
    crash_before_rename: AtomicBool,
}

impl std::fmt::Debug for AdapterStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AdapterStore")
            .field("root", &self.root)
            .finish_non_exhaustive()
    }
}

fn file_name(user_id: &str) -> String {
    let hex: String = user_id.bytes().map(|b| format!("{b:02x}")).collect();
    format!("{hex}.{EXTENSION}")
}

impl AdapterStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<AdapterStore, StoreError> {
        AdapterStore::with_capacity(root, DEFAULT_CACHE_CAPACITY)
    }

    /// Opens (creating if needed) a store and rebuilds the catalog from
    /// the directory. Leftover temp files from interrupted saves are
    /// removed.
    pub fn with_capacity(
        root: impl Into<PathBuf>,
        cache_capacity: usize,
    ) -> Result<AdapterStore, StoreError> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        let mut catalog = BTreeMap::new();
        for entry in fs::read_dir(&root)? {
            let path = entry?.path();
            match path.extension().and_then(|e| e.to_str()) {
                Some("tmp") => fs::remove_file(&path)?,
                Some(EXTENSION) => {
                    let bytes = fs::read(&path)?;
                    let (user, adapter) =
                        decode_adapter(&bytes).map_err(|reason| StoreError::Corrupt {
                            path: path.clone(),
                            reason,
                        })?;
                    catalog.insert(
                        user,
                        CatalogEntry {
                            path,
                            bytes: bytes.len() as u64,
                            base_fingerprint: adapter.base_fingerprint,
                        },
                    );
                }
                _ => {}
            }
        }
        let cap = NonZeroUsize::new(cache_capacity.max(1)).unwrap();
        Ok(AdapterStore {
            root,
            catalog: RwLock::new(catalog),
            cache: Mutex::new(LruCache::new(cap)),
            user_locks: Mutex::new(HashMap::new()),
            file_reads: AtomicU64::new(0),
            crash_before_rename: AtomicBool::new(false),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn user_lock(&self, user_id: &str) -> Arc<RwLock<()>> {
        self.user_locks
            .lock()
            .unwrap()
            .entry(user_id.to_string())
            .or_default()
            .clone()
    }

    /// Adapter files read from disk by `load_adapter` so far.
    pub fn file_reads(&self) -> u64 {
        self.file_reads.load(Ordering::Relaxed)
    }

    /// Fault injection: make the next saves stop after writing the temp
    /// file, as if the process died before the rename.
    pub fn inject_crash_before_rename(&self, on: bool) {
        self.crash_before_rename.store(on, Ordering::Relaxed);
    }

    pub fn contains(&self, user_id: &str) -> bool {
        self.catalog.read().unwrap().contains_key(user_id)
    }

    pub fn len(&self) -> usize {
        self.catalog.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn entry(&self, user_id: &str) -> Option<CatalogEntry> {
        self.catalog.read().unwrap().get(user_id).cloned()
    }

    pub fn save_adapter(
        &self,
        user_id: &str,
        adapter: &LoraAdapter,
        overwrite: bool,
    ) -> Result<SaveReceipt, StoreError> {
        if user_id.is_empty() || user_id.len() > u16::MAX as usize {
            return Err(StoreError::InvalidUserId);
        }
        let lock = self.user_lock(user_id);
        let _guard = lock.write().unwrap();
        if !overwrite && self.contains(user_id) {
            return Err(StoreError::Conflict(user_id.to_string()));
        }
        let bytes = encode_adapter(user_id, adapter);
        let checksum = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
        let path = self.root.join(file_name(user_id));
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        if self.crash_before_rename.load(Ordering::Relaxed) {
            return Err(StoreError::Io(io::Error::other(
                "injected crash before rename",
            )));
        }
        fs::rename(&tmp, &path)?;
        self.cache.lock().unwrap().pop(user_id);
        self.catalog.write().unwrap().insert(
            user_id.to_string(),
            CatalogEntry {
                path: path.clone(),
                bytes: bytes.len() as u64,
                base_fingerprint: adapter.base_fingerprint,
            },
        );
        Ok(SaveReceipt {
            path,
            bytes: bytes.len() as u64,
            checksum,
        })
    }

    /// Loads a user's adapter, checking it belongs to `base_fingerprint`.
    pub fn load_adapter(
        &self,
        user_id: &str,
        base_fingerprint: &[u8; 32],
    ) -> Result<Arc<LoraAdapter>, StoreError> {
        let lock = self.user_lock(user_id);
        let _guard = lock.read().unwrap();
        let entry = self
            .entry(user_id)
            .ok_or_else(|| StoreError::NotFound(user_id.to_string()))?;
        let cached = self.cache.lock().unwrap().get(user_id).cloned();
        let adapter = match cached {
            Some(a) => a,
            None => {
                self.file_reads.fetch_add(1, Ordering::Relaxed);
                let bytes = fs::read(&entry.path)?;
                let corrupt = |reason: String| StoreError::Corrupt {
                    path: entry.path.clone(),
                    reason,
                };
                let (owner, adapter) = decode_adapter(&bytes).map_err(corrupt)?;
                if owner != user_id {
                    return Err(corrupt(format!("file belongs to user `{owner}`")));
                }
                let adapter = Arc::new(adapter);
                self.cache
                    .lock()
                    .unwrap()
                    .put(user_id.to_string(), adapter.clone());
                adapter
            }
        };
        if adapter.base_fingerprint != *base_fingerprint {
            return Err(StoreError::WrongBaseModel(user_id.to_string()));
        }
        Ok(adapter)
    }

    pub fn storage_report(&self, extrapolation_counts: &[u64]) -> StorageReport {
        let sizes: Vec<u64> = self
            .catalog
            .read()
            .unwrap()
            .values()
            .map(|e| e.bytes)
            .collect();
        StorageReport::from_sizes(&sizes, extrapolation_counts)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Extrapolation {
    pub users: u64,
    pub projected_bytes: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorageReport {
    pub user_count: u64,
    pub total_bytes: u64,
    pub mean_bytes: f64,
    pub extrapolations: Vec<Extrapolation>,
}

impl StorageReport {
    /// Report over a catalog given as per-adapter byte sizes.
    pub fn from_sizes(sizes: &[u64], extrapolation_counts: &[u64]) -> StorageReport {
        let total_bytes: u64 = sizes.iter().sum();
        let mean_bytes = if sizes.is_empty() {
            0.0
        } else {
            total_bytes as f64 / sizes.len() as f64
        };
        StorageReport {
            user_count: sizes.len() as u64,
            total_bytes,
            mean_bytes,
            extrapolations: extrapolation_counts
                .iter()
                .map(|&users| Extrapolation {
                    users,
                    projected_bytes: project(mean_bytes, users),
                })
                .collect(),
        }
    }
}

/// Bytes needed to hold one artifact of `bytes_per_user` for every user.
pub fn project(bytes_per_user: f64, users: u64) -> f64 {
    bytes_per_user * users as f64
}

/// Decimal (SI) rendering with thousands separators, e.g. `45,000 TB`.
pub fn format_bytes(bytes: f64) -> String {
    const UNITS: [(&str, f64); 5] = [
        ("TB", 1e12),
        ("GB", 1e9),
        ("MB", 1e6),
        ("KB", 1e3),
        ("B", 1.0),
    ];
    let (unit, scale) = UNITS
        .iter()
        .find(|(_, s)| bytes >= *s)
        .copied()
        .unwrap_or(("B", 1.0));
    let v = bytes / scale;
    let text = if (v - v.round()).abs() < 1e-9 {
        format!("{}", v.round() as u64)
    } else {
        format!("{v:.2}")
    };
    let (int, frac) = text
        .split_once('.')
        .map_or((text.as_str(), None), |(i, f)| (i, Some(f)));
    let mut grouped = String::new();
    for (i, ch) in int.chars().enumerate() {
        if i > 0 && (int.len() - i) % 3 == 0 {
            grouped.push(',');
        }
        grouped.push(ch);
    }
    match frac {
        Some(f) => format!("{grouped}.{f} {unit}"),
        None => format!("{grouped} {unit}"),
    }
}

//! In-memory caches at two levels of the load path.
//!
//! [`SerializedCache`] keeps on-store file bytes, so later epochs skip the
//! backend but still decompress and deserialize. [`SampleCache`] keeps decoded
//! tensors at the load point, so later epochs skip both.

use std::collections::HashMap;
use std::io::{self, Read};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, OnceLock};

use crate::model::Tensor;
use crate::storage::{Storage, StorageError};

/// Per-sample bookkeeping charged against the budget by the sample cache.
pub const SAMPLE_OVERHEAD_BYTES: u64 = 64;

#[derive(Debug, Clone)]
struct CachedFile {
    bytes: Arc<Vec<u8>>,
    complete: bool,
}

#[derive(Debug)]
pub struct SerializedCache {
    budget: u64,
    used: AtomicU64,
    overflowed: AtomicBool,
    files: Mutex<HashMap<PathBuf, CachedFile>>,
}

impl SerializedCache {
    pub fn new(budget: u64) -> Arc<SerializedCache> {
        Arc::new(SerializedCache {
            budget,
            used: AtomicU64::new(0),
            overflowed: AtomicBool::new(false),
            files: Mutex::default(),
        })
    }

    pub fn overflowed(&self) -> bool {
        self.overflowed.load(Ordering::Relaxed)
    }

    pub fn bytes(&self) -> u64 {
        self.used.load(Ordering::Relaxed)
    }

    fn reserve(&self, n: u64) -> bool {
        if self.overflowed() {
            return false;
        }
        if self.used.fetch_add(n, Ordering::Relaxed) + n > self.budget {
            self.overflow();
            return false;
        }
        true
    }

    fn overflow(&self) {
        self.overflowed.store(true, Ordering::Relaxed);
        self.files.lock().unwrap().clear();
    }

    /// Opens `path`, serving cached bytes when present. With `populate`,
    /// bytes read from the backend are kept for later opens.
    pub fn open(
        self: &Arc<Self>,
        storage: &Arc<dyn Storage>,
        path: &Path,
        populate: bool,
    ) -> Result<Box<dyn Read + Send>, StorageError> {
        let hit = self.files.lock().unwrap().get(path).cloned();
        if let Some(f) = hit {
            let head = ArcCursor { bytes: Arc::clone(&f.bytes), pos: 0 };
            if f.complete {
                return Ok(Box::new(head));
            }
            let tail = LazyTail {
                storage: Arc::clone(storage),
                path: path.to_path_buf(),
                offset: f.bytes.len() as u64,
                inner: None,
            };
            return Ok(Box::new(head.chain(tail)));
        }
        let inner = storage.open_read(path)?;
        if !populate || self.overflowed() {
            return Ok(inner);
        }
        Ok(Box::new(Tee {
            inner,
            buf: Some(Vec::new()),
            cache: Arc::clone(self),
            storage: Arc::clone(storage),
            path: path.to_path_buf(),
            complete: false,
        }))
    }

    fn store(&self, path: PathBuf, bytes: Vec<u8>, complete: bool) {
        if self.overflowed() {
            return;
        }
        self.files.lock().unwrap().insert(
            path,
            CachedFile {
                bytes: Arc::new(bytes),
                complete,
            },
        );
    }
}

struct ArcCursor {
    bytes: Arc<Vec<u8>>,
    pos: usize,
}

impl Read for ArcCursor {
    fn read(&mut self, out: &mut [u8]) -> io::Result<usize> {
        let rest = &self.bytes[self.pos..];
        let n = rest.len().min(out.len());
        out[..n].copy_from_slice(&rest[..n]);
        self.pos += n;
        Ok(n)
    }
}

struct LazyTail {
    storage: Arc<dyn Storage>,
    path: PathBuf,
    offset: u64,
    inner: Option<Box<dyn Read + Send>>,
}

impl Read for LazyTail {
    fn read(&mut self, out: &mut [u8]) -> io::Result<usize> {
        if self.inner.is_none() {
            let r = self
                .storage
                .open_read_at(&self.path, self.offset)
                .map_err(io::Error::other)?;
            self.inner = Some(r);
        }
        self.inner.as_mut().unwrap().read(out)
    }
}

struct Tee {
    inner: Box<dyn Read + Send>,
    buf: Option<Vec<u8>>,
    cache: Arc<SerializedCache>,
    storage: Arc<dyn Storage>,
    path: PathBuf,
    complete: bool,
}

impl Read for Tee {
    fn read(&mut self, out: &mut [u8]) -> io::Result<usize> {
        let n = self.inner.read(out)?;
        if n == 0 && !out.is_empty() {
            self.complete = true;
        }
        if let Some(buf) = &mut self.buf {
            if self.cache.reserve(n as u64) {
                buf.extend_from_slice(&out[..n]);
            } else {
                self.buf = None;
            }
        }
        Ok(n)
    }
}

impl Drop for Tee {
    fn drop(&mut self) {
        if let Some(buf) = self.buf.take() {
            // Readers may stop right after the last record without seeing EOF.
            let complete = self.complete || self.storage.size(&self.path).ok() == Some(buf.len() as u64);
            self.cache.store(std::mem::take(&mut self.path), buf, complete);
        }
    }
}

/// Decoded tensors indexed by load position.
#[derive(Debug)]
pub struct SampleCache {
    slots: Vec<OnceLock<Arc<Tensor>>>,
    budget: u64,
    used: AtomicU64,
    overflowed: AtomicBool,
}

impl SampleCache {
    pub fn new(samples: u64, budget: u64) -> SampleCache {
        SampleCache {
            slots: (0..samples).map(|_| OnceLock::new()).collect(),
            budget,
            used: AtomicU64::new(0),
            overflowed: AtomicBool::new(false),
        }
    }

    pub fn insert(&self, index: u64, t: &Arc<Tensor>) {
        if self.overflowed.load(Ordering::Relaxed) {
            return;
        }
        let Some(slot) = self.slots.get(index as usize) else {
            return;
        };
        let n = t.byte_len() as u64 + SAMPLE_OVERHEAD_BYTES;
        if self.used.fetch_add(n, Ordering::Relaxed) + n > self.budget {
            self.overflowed.store(true, Ordering::Relaxed);
            return;
        }
        let _ = slot.set(Arc::clone(t));
    }

    pub fn get(&self, index: u64) -> Option<Arc<Tensor>> {
        self.slots.get(index as usize)?.get().cloned()
    }

    pub fn len(&self) -> u64 {
        self.slots.len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn overflowed(&self) -> bool {
        self.overflowed.load(Ordering::Relaxed)
    }

    pub fn is_complete(&self) -> bool {
        !self.overflowed() && self.slots.iter().all(|s| s.get().is_some())
    }

    pub fn bytes(&self) -> u64 {
        self.used.load(Ordering::Relaxed)
    }
}

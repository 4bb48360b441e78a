//! Storage backends and the fio-style probe.
//!
//! Two backends share the [`Storage`] trait. [`LocalFs`] passes straight through
//! to the filesystem. [`SimulatedStore`] keeps its bytes on the local
//! filesystem too, but charges wall-clock delay for every open and every chunk
//! so that I/O-vs-CPU trade-offs reproduce on any machine:
//!
//! * a shared bandwidth clock (all workers together never exceed `bandwidth`),
//! * an optional per-stream ceiling (one open file never exceeds `stream_bandwidth`),
//! * an optional shared IOPS clock (opens and chunk transfers are operations),
//! * a fixed latency for every read open.
//!
//! The local filesystem's page cache is not dropped between runs, so cold-read
//! semantics hold only on the simulated backend, which charges every byte.

use std::fmt;
use std::fs::{self, File};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Barrier};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::throttle::{sleep_until, LocalClock, RateClock};

#[derive(Debug, Error)]
pub enum StorageError {
    #[error("{0}: not found")]
    NotFound(PathBuf),
    #[error("storage full")]
    StorageFull,
    #[error("i/o failure on {path}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("invalid backend configuration: {0}")]
    InvalidConfig(String),
}

impl StorageError {
    pub fn io(path: &Path, source: io::Error) -> StorageError {
        if source.kind() == io::ErrorKind::NotFound {
            return StorageError::NotFound(path.to_path_buf());
        }
        if source.kind() == io::ErrorKind::StorageFull || source.raw_os_error() == Some(28) {
            return StorageError::StorageFull;
        }
        StorageError::IoFailure {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Recovers a storage error that travelled through an `io::Error`.
    pub fn from_io(path: &Path, err: io::Error) -> StorageError {
        if err.get_ref().is_some_and(|e| e.is::<StorageError>()) {
            return *err.into_inner().unwrap().downcast::<StorageError>().unwrap();
        }
        StorageError::io(path, err)
    }
}

/// Cumulative I/O traffic through a backend.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct IoCounters {
    pub bytes_read: u64,
    pub bytes_written: u64,
    pub opens: u64,
    /// Chunk transfers on the read path.
    pub read_ops: u64,
    /// Time spent inside read calls, summed over threads.
    pub read_seconds: f64,
}

impl IoCounters {
    /// Traffic since `earlier`.
    pub fn since(&self, earlier: &IoCounters) -> IoCounters {
        IoCounters {
            bytes_read: self.bytes_read - earlier.bytes_read,
            bytes_written: self.bytes_written - earlier.bytes_written,
            opens: self.opens - earlier.opens,
            read_ops: self.read_ops - earlier.read_ops,
            read_seconds: self.read_seconds - earlier.read_seconds,
        }
    }
}

#[derive(Debug, Default)]
struct Counters {
    bytes_read: AtomicU64,
    bytes_written: AtomicU64,
    opens: AtomicU64,
    read_ops: AtomicU64,
    read_nanos: AtomicU64,
}

impl Counters {
    fn snapshot(&self) -> IoCounters {
        IoCounters {
            bytes_read: self.bytes_read.load(Ordering::Relaxed),
            bytes_written: self.bytes_written.load(Ordering::Relaxed),
            opens: self.opens.load(Ordering::Relaxed),
            read_ops: self.read_ops.load(Ordering::Relaxed),
            read_seconds: self.read_nanos.load(Ordering::Relaxed) as f64 * 1e-9,
        }
    }

    fn record_read(&self, bytes: usize, elapsed: Duration) {
        self.bytes_read.fetch_add(bytes as u64, Ordering::Relaxed);
        self.read_ops.fetch_add(1, Ordering::Relaxed);
        self.read_nanos
            .fetch_add(elapsed.as_nanos() as u64, Ordering::Relaxed);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    LocalFs,
    Simulated,
}

/// Backend selection and, for the simulated store, its performance profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Aggregate bytes/s shared by all workers.
    #[serde(default)]
    pub bandwidth: f64,
    /// Ceiling for a single open file, bytes/s.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stream_bandwidth: Option<f64>,
    /// Seconds charged per read open.
    #[serde(default)]
    pub open_latency: f64,
    /// Shared operations/s over opens and chunk transfers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iops_cap: Option<f64>,
    /// Transfer granularity in bytes.
    #[serde(default = "default_chunk")]
    pub chunk: u64,
    /// Total bytes the store accepts before reporting `StorageFull`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacity: Option<u64>,
}

fn default_chunk() -> u64 {
    1 << 20
}

impl BackendConfig {
    pub fn local_fs() -> BackendConfig {
        BackendConfig {
            kind: BackendKind::LocalFs,
            bandwidth: 0.0,
            stream_bandwidth: None,
            open_latency: 0.0,
            iops_cap: None,
            chunk: default_chunk(),
            capacity: None,
        }
    }

    /// Bandwidth-only simulated store.
    pub fn simulated(bandwidth: f64) -> BackendConfig {
        BackendConfig {
            kind: BackendKind::Simulated,
            bandwidth,
            ..BackendConfig::local_fs()
        }
    }

    /// HDD-backed network store profile: 910 MB/s with eight readers,
    /// 219 MB/s for one. Opening costs 29 ms and every file costs at least
    /// two operations, so 0.2 MB files read 33x slower than one large file
    /// with one reader and 22x slower with eight.
    pub fn cluster_profile() -> BackendConfig {
        BackendConfig {
            kind: BackendKind::Simulated,
            bandwidth: 910e6,
            stream_bandwidth: Some(219e6),
            open_latency: 0.029,
            iops_cap: Some(404.0),
            chunk: 4 << 20,
            capacity: None,
        }
    }

    /// The cluster profile with bandwidths scaled down 10x, so files a tenth
    /// the size keep the sequential-to-small-file ratios.
    pub fn desk_profile() -> BackendConfig {
        BackendConfig {
            bandwidth: 91e6,
            stream_bandwidth: Some(21.9e6),
            chunk: default_chunk(),
            ..BackendConfig::cluster_profile()
        }
    }

    pub fn with_open_latency(mut self, seconds: f64) -> BackendConfig {
        self.open_latency = seconds;
        self
    }

    pub fn with_stream_bandwidth(mut self, bytes_per_sec: f64) -> BackendConfig {
        self.stream_bandwidth = Some(bytes_per_sec);
        self
    }

    pub fn with_iops_cap(mut self, ops: f64) -> BackendConfig {
        self.iops_cap = Some(ops);
        self
    }

    pub fn with_capacity(mut self, bytes: u64) -> BackendConfig {
        self.capacity = Some(bytes);
        self
    }

    pub fn validate(&self) -> Result<(), StorageError> {
        let bad = |m: &str| Err(StorageError::InvalidConfig(m.to_string()));
        if self.kind == BackendKind::Simulated {
            if !(self.bandwidth > 0.0 && self.bandwidth.is_finite()) {
                return bad("simulated bandwidth must be positive");
            }
            if self.chunk == 0 {
                return bad("simulated chunk must be positive");
            }
        }
        if !(self.open_latency >= 0.0 && self.open_latency.is_finite()) {
            return bad("open latency must be non-negative");
        }
        if let Some(s) = self.stream_bandwidth {
            if !(s > 0.0 && s.is_finite()) {
                return bad("stream bandwidth must be positive");
            }
        }
        if let Some(i) = self.iops_cap {
            if !(i > 0.0 && i.is_finite()) {
                return bad("iops cap must be positive");
            }
        }
        Ok(())
    }

    /// Opens a backend rooted at `root`, creating the directory if needed.
    pub fn open(&self, root: &Path) -> Result<Arc<dyn Storage>, StorageError> {
        self.validate()?;
        fs::create_dir_all(root).map_err(|e| StorageError::io(root, e))?;
        Ok(match self.kind {
            BackendKind::LocalFs => Arc::new(LocalFs::with_capacity(root, self.capacity)),
            BackendKind::Simulated => Arc::new(SimulatedStore::new(root, self.clone())?),
        })
    }
}

/// Byte store addressed by paths relative to its root.
pub trait Storage: Send + Sync + fmt::Debug {
    fn root(&self) -> &Path;

    fn config(&self) -> BackendConfig;

    fn open_read(&self, path: &Path) -> Result<Box<dyn Read + Send>, StorageError>;

    /// Opens `path` positioned at `offset`.
    fn open_read_at(&self, path: &Path, offset: u64) -> Result<Box<dyn Read + Send>, StorageError>;

    /// Creates or truncates `path`, creating parent directories.
    fn open_write(&self, path: &Path) -> Result<Box<dyn Write + Send>, StorageError>;

    fn size(&self, path: &Path) -> Result<u64, StorageError> {
        let full = self.root().join(path);
        fs::metadata(&full)
            .map(|m| m.len())
            .map_err(|e| StorageError::io(path, e))
    }

    fn exists(&self, path: &Path) -> bool {
        self.root().join(path).exists()
    }

    fn remove_all(&self, path: &Path) -> Result<(), StorageError> {
        let full = self.root().join(path);
        match fs::remove_dir_all(&full) {
            Ok(()) => Ok(()),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(()),
            Err(e) => Err(StorageError::io(path, e)),
        }
    }

    fn counters(&self) -> IoCounters;

    /// Drops simulated backlog so the next run starts cold and unqueued.
    fn reset_clocks(&self) {}
}

fn create_file(root: &Path, path: &Path) -> Result<File, StorageError> {
    let full = root.join(path);
    if let Some(parent) = full.parent() {
        fs::create_dir_all(parent).map_err(|e| StorageError::io(path, e))?;
    }
    File::create(&full).map_err(|e| StorageError::io(path, e))
}

fn open_file(root: &Path, path: &Path, offset: u64) -> Result<File, StorageError> {
    let mut f = File::open(root.join(path)).map_err(|e| StorageError::io(path, e))?;
    if offset > 0 {
        f.seek(SeekFrom::Start(offset))
            .map_err(|e| StorageError::io(path, e))?;
    }
    Ok(f)
}

#[derive(Debug)]
struct Quota {
    capacity: Option<u64>,
    used: AtomicU64,
}

impl Quota {
    fn charge(&self, bytes: usize) -> io::Result<()> {
        if let Some(cap) = self.capacity {
            let used = self.used.fetch_add(bytes as u64, Ordering::Relaxed) + bytes as u64;
            if used > cap {
                return Err(io::Error::other(StorageError::StorageFull));
            }
        }
        Ok(())
    }
}

/// Plain filesystem passthrough with traffic counters.
#[derive(Debug)]
pub struct LocalFs {
    root: PathBuf,
    counters: Arc<Counters>,
    quota: Arc<Quota>,
}

impl LocalFs {
    pub fn new(root: impl Into<PathBuf>) -> LocalFs {
        LocalFs::with_capacity(root, None)
    }

    fn with_capacity(root: impl Into<PathBuf>, capacity: Option<u64>) -> LocalFs {
        LocalFs {
            root: root.into(),
            counters: Arc::default(),
            quota: Arc::new(Quota {
                capacity,
                used: AtomicU64::new(0),
            }),
        }
    }
}

struct CountingReader<R> {
    inner: R,
    counters: Arc<Counters>,
}

impl<R: Read> Read for CountingReader<R> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let t = Instant::now();
        let n = self.inner.read(buf)?;
        self.counters.record_read(n, t.elapsed());
        Ok(n)
    }
}

struct CountingWriter<W> {
    inner: W,
    counters: Arc<Counters>,
    quota: Arc<Quota>,
}

impl<W: Write> Write for CountingWriter<W> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.quota.charge(n)?;
        self.counters
            .bytes_written
            .fetch_add(n as u64, Ordering::Relaxed);
        Ok(n)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

impl Storage for LocalFs {
    fn root(&self) -> &Path {
        &self.root
    }

    fn config(&self) -> BackendConfig {
        BackendConfig {
            capacity: self.quota.capacity,
            ..BackendConfig::local_fs()
        }
    }

    fn open_read(&self, path: &Path) -> Result<Box<dyn Read + Send>, StorageError> {
        self.open_read_at(path, 0)
    }

    fn open_read_at(&self, path: &Path, offset: u64) -> Result<Box<dyn Read + Send>, StorageError> {
        let f = open_file(&self.root, path, offset)?;
        self.counters.opens.fetch_add(1, Ordering::Relaxed);
        Ok(Box::new(CountingReader {
            inner: f,
            counters: Arc::clone(&self.counters),
        }))
    }

    fn open_write(&self, path: &Path) -> Result<Box<dyn Write + Send>, StorageError> {
        let f = create_file(&self.root, path)?;
        Ok(Box::new(CountingWriter {
            inner: f,
            counters: Arc::clone(&self.counters),
            quota: Arc::clone(&self.quota),
        }))
    }

    fn counters(&self) -> IoCounters {
        self.counters.snapshot()
    }
}

#[derive(Debug)]
struct Throttle {
    bandwidth: RateClock,
    iops: Option<RateClock>,
    stream_bandwidth: Option<f64>,
    open_latency: Duration,
    chunk: usize,
}

impl Throttle {
    /// Books one chunk transfer and returns when it may complete.
    fn transfer(&self, bytes: usize, stream: &mut Option<LocalClock>) -> Instant {
        let mut deadline = self.bandwidth.reserve(bytes as f64);
        if let Some(iops) = &self.iops {
            deadline = deadline.max(iops.reserve(1.0));
        }
        if let Some(clock) = stream {
            deadline = deadline.max(clock.reserve(bytes as f64));
        }
        deadline
    }

    fn stream_clock(&self) -> Option<LocalClock> {
        self.stream_bandwidth.map(LocalClock::new)
    }
}

/// Filesystem-backed store that charges simulated transfer time.
#[derive(Debug)]
pub struct SimulatedStore {
    root: PathBuf,
    config: BackendConfig,
    counters: Arc<Counters>,
    throttle: Arc<Throttle>,
    quota: Arc<Quota>,
}

impl SimulatedStore {
    pub fn new(root: impl Into<PathBuf>, config: BackendConfig) -> Result<SimulatedStore, StorageError> {
        config.validate()?;
        if config.kind != BackendKind::Simulated {
            return Err(StorageError::InvalidConfig(
                "SimulatedStore needs a simulated config".into(),
            ));
        }
        let throttle = Throttle {
            bandwidth: RateClock::new(config.bandwidth),
            iops: config.iops_cap.map(RateClock::new),
            stream_bandwidth: config.stream_bandwidth,
            open_latency: Duration::from_secs_f64(config.open_latency),
            chunk: config.chunk.min(usize::MAX as u64) as usize,
        };
        Ok(SimulatedStore {
            root: root.into(),
            counters: Arc::default(),
            throttle: Arc::new(throttle),
            quota: Arc::new(Quota {
                capacity: config.capacity,
                used: AtomicU64::new(0),
            }),
            config,
        })
    }
}

struct SimReader {
    file: File,
    throttle: Arc<Throttle>,
    counters: Arc<Counters>,
    stream: Option<LocalClock>,
    buf: Vec<u8>,
    pos: usize,
    filled: usize,
}

impl SimReader {
    fn fill(&mut self) -> io::Result<()> {
        let t = Instant::now();
        self.buf.resize(self.throttle.chunk, 0);
        let mut n = 0;
        while n < self.buf.len() {
            match self.file.read(&mut self.buf[n..]) {
                Ok(0) => break,
                Ok(k) => n += k,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e),
            }
        }
        if n > 0 {
            sleep_until(self.throttle.transfer(n, &mut self.stream));
        }
        self.pos = 0;
        self.filled = n;
        self.counters.record_read(n, t.elapsed());
        Ok(())
    }
}

impl Read for SimReader {
    fn read(&mut self, out: &mut [u8]) -> io::Result<usize> {
        if self.pos == self.filled {
            self.fill()?;
            if self.filled == 0 {
                return Ok(0);
            }
        }
        let n = out.len().min(self.filled - self.pos);
        out[..n].copy_from_slice(&self.buf[self.pos..self.pos + n]);
        self.pos += n;
        Ok(n)
    }
}

struct SimWriter {
    file: File,
    throttle: Arc<Throttle>,
    counters: Arc<Counters>,
    quota: Arc<Quota>,
    stream: Option<LocalClock>,
    buf: Vec<u8>,
}

impl SimWriter {
    fn drain(&mut self) -> io::Result<()> {
        if self.buf.is_empty() {
            return Ok(());
        }
        self.quota.charge(self.buf.len())?;
        sleep_until(self.throttle.transfer(self.buf.len(), &mut self.stream));
        self.file.write_all(&self.buf)?;
        self.counters
            .bytes_written
            .fetch_add(self.buf.len() as u64, Ordering::Relaxed);
        self.buf.clear();
        Ok(())
    }
}

impl Write for SimWriter {
    fn write(&mut self, data: &[u8]) -> io::Result<usize> {
        let room = self.throttle.chunk - self.buf.len();
        let n = data.len().min(room);
        self.buf.extend_from_slice(&data[..n]);
        if self.buf.len() == self.throttle.chunk {
            self.drain()?;
        }
        Ok(n)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.drain()?;
        self.file.flush()
    }
}

impl Drop for SimWriter {
    fn drop(&mut self) {
        let _ = self.drain();
    }
}

impl Storage for SimulatedStore {
    fn root(&self) -> &Path {
        &self.root
    }

    fn config(&self) -> BackendConfig {
        self.config.clone()
    }

    fn open_read(&self, path: &Path) -> Result<Box<dyn Read + Send>, StorageError> {
        self.open_read_at(path, 0)
    }

    fn open_read_at(&self, path: &Path, offset: u64) -> Result<Box<dyn Read + Send>, StorageError> {
        let file = open_file(&self.root, path, offset)?;
        let mut deadline = Instant::now() + self.throttle.open_latency;
        if let Some(iops) = &self.throttle.iops {
            deadline = deadline.max(iops.reserve(1.0));
        }
        sleep_until(deadline);
        self.counters.opens.fetch_add(1, Ordering::Relaxed);
        Ok(Box::new(SimReader {
            file,
            throttle: Arc::clone(&self.throttle),
            counters: Arc::clone(&self.counters),
            stream: self.throttle.stream_clock(),
            buf: Vec::new(),
            pos: 0,
            filled: 0,
        }))
    }

    fn open_write(&self, path: &Path) -> Result<Box<dyn Write + Send>, StorageError> {
        let file = create_file(&self.root, path)?;
        Ok(Box::new(SimWriter {
            file,
            throttle: Arc::clone(&self.throttle),
            counters: Arc::clone(&self.counters),
            quota: Arc::clone(&self.quota),
            stream: self.throttle.stream_clock(),
            buf: Vec::with_capacity(self.throttle.chunk.min(1 << 24)),
        }))
    }

    fn counters(&self) -> IoCounters {
        self.counters.snapshot()
    }

    fn reset_clocks(&self) {
        self.throttle.bandwidth.reset();
        if let Some(iops) = &self.throttle.iops {
            iops.reset();
        }
    }
}

/// One row of a storage probe, named after the fio table columns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub workers: u32,
    pub files_per_worker: u32,
    /// Aggregate read bytes/s.
    pub bandwidth: f64,
    /// Opens plus chunk transfers per second.
    pub iops: f64,
    pub bytes: u64,
    pub seconds: f64,
}

const PROBE_DIR: &str = "_probe";

/// Measures read bandwidth for `workers` parallel readers, each reading
/// `files_per_worker` files that together hold `bytes_per_worker` bytes.
///
/// One file per worker is the sequential workload; many small files per
/// worker is the random-access workload.
pub fn probe_storage(
    storage: &Arc<dyn Storage>,
    workers: u32,
    files_per_worker: u32,
    bytes_per_worker: u64,
) -> Result<ProbeReport, StorageError> {
    if workers == 0 || files_per_worker == 0 {
        return Err(StorageError::InvalidConfig(
            "probe needs at least one worker and one file".into(),
        ));
    }
    let dir = PathBuf::from(PROBE_DIR).join(format!("w{workers}-f{files_per_worker}"));
    let file_bytes = (bytes_per_worker / files_per_worker as u64).max(1);
    let path_of = |w: u32, f: u32| dir.join(format!("{w:03}")).join(format!("{f:06}.bin"));

    // Lay out the workload in parallel; writes are charged but not measured.
    let written: Result<Vec<()>, StorageError> = thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let storage = Arc::clone(storage);
                let path_of = &path_of;
                s.spawn(move || -> Result<(), StorageError> {
                    let block = vec![0xA5u8; file_bytes.min(1 << 20) as usize];
                    for f in 0..files_per_worker {
                        let path = path_of(w, f);
                        let mut out = storage.open_write(&path)?;
                        let mut left = file_bytes;
                        while left > 0 {
                            let n = left.min(block.len() as u64) as usize;
                            out.write_all(&block[..n])
                                .map_err(|e| StorageError::from_io(&path, e))?;
                            left -= n as u64;
                        }
                        out.flush().map_err(|e| StorageError::from_io(&path, e))?;
                    }
                    Ok(())
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    written?;

    storage.reset_clocks();
    let before = storage.counters();
    let barrier = Barrier::new(workers as usize + 1);
    let (start, read): (Instant, Result<Vec<u64>, StorageError>) = thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let storage = Arc::clone(storage);
                let path_of = &path_of;
                let barrier = &barrier;
                s.spawn(move || -> Result<u64, StorageError> {
                    barrier.wait();
                    let mut buf = vec![0u8; 1 << 16];
                    let mut total = 0u64;
                    for f in 0..files_per_worker {
                        let path = path_of(w, f);
                        let mut r = storage.open_read(&path)?;
                        loop {
                            let n = r.read(&mut buf).map_err(|e| StorageError::from_io(&path, e))?;
                            if n == 0 {
                                break;
                            }
                            total += n as u64;
                        }
                    }
                    Ok(total)
                })
            })
            .collect();
        barrier.wait();
        let start = Instant::now();
        (start, handles.into_iter().map(|h| h.join().unwrap()).collect())
    });
    let seconds = start.elapsed().as_secs_f64();
    let bytes: u64 = read?.iter().sum();
    let delta = storage.counters().since(&before);
    storage.remove_all(&dir)?;
    Ok(ProbeReport {
        workers,
        files_per_worker,
        bandwidth: bytes as f64 / seconds,
        iops: (delta.opens + delta.read_ops) as f64 / seconds,
        bytes,
        seconds,
    })
}

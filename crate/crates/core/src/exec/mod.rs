//! Online execution engine.
//!
//! One epoch streams every sample from the materialized containers (or the raw
//! source files) through the online steps into a sink that only touches the
//! tensor shape. Shard readers feed bounded per-shard queues; a dispatcher
//! merges them round-robin, optionally through a shuffle buffer, and hands out
//! one sample at a time to `parallelism` workers. Workers deserialize, run the
//! online steps and deliver to the sink.

pub mod cache;
pub mod cpu;
pub mod shuffle;
pub mod steps;

use std::hint::black_box;
use std::io::{BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Instant;

use crossbeam_channel::{bounded, Receiver, Sender};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{CacheMode, Compression, ExecMode, ModelError, Pipeline, StepSpec, Strategy, Tensor};
use crate::recordio::{ContainerReader, RecordError, RecordParts, WriteStats};
use crate::storage::{IoCounters, Storage, StorageError};
use crate::workloads::{DatasetDescriptor, Layout, WorkloadError};

pub use cache::{SampleCache, SerializedCache, SAMPLE_OVERHEAD_BYTES};
pub use cpu::{Cpu, CpuModel};
pub use shuffle::{shuffle_stream, ShuffleBuffer};
pub use steps::{execute_step, step_rng, transform, StepError};

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("materialized data missing at {0}")]
    MaterializationMissing(PathBuf),
    #[error("invalid run config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Step(#[from] StepError),
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("manifest: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error("run cancelled")]
    Cancelled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub epochs: u32,
    /// Samples per epoch; the whole dataset when unset.
    #[serde(default)]
    pub sample_limit: Option<u64>,
    pub parallelism: u32,
    #[serde(default)]
    pub cache_mode: CacheMode,
    pub memory_budget: u64,
    #[serde(default)]
    pub shuffle_buffer: usize,
    #[serde(default)]
    pub rng_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            epochs: 1,
            sample_limit: None,
            parallelism: 1,
            cache_mode: CacheMode::NoCache,
            memory_budget: 1 << 30,
            shuffle_buffer: 0,
            rng_seed: 0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ExecError> {
        if self.epochs == 0 {
            return Err(ExecError::InvalidConfig("epochs must be at least 1".into()));
        }
        if self.parallelism == 0 {
            return Err(ExecError::InvalidConfig("parallelism must be at least 1".into()));
        }
        if self.memory_budget == 0 {
            return Err(ExecError::InvalidConfig("memory budget must be positive".into()));
        }
        Ok(())
    }

    /// This config with the strategy's online options applied.
    pub fn for_strategy(&self, s: &Strategy) -> RunConfig {
        RunConfig {
            parallelism: s.parallelism,
            cache_mode: s.cache_mode,
            shuffle_buffer: s.shuffle_buffer,
            ..self.clone()
        }
    }
}

/// Fixed per-sample costs of the loading framework.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EngineCosts {
    /// Serial scheduling overhead per sample, in CPU nanoseconds.
    pub dispatch_ns: f64,
    /// Parse cost per loaded byte, in CPU nanoseconds.
    pub deserialize_ns_per_byte: f64,
}

impl Default for EngineCosts {
    /// About 100 us per sample and 2.5 ns per byte: the per-sample and
    /// per-byte overheads of a Python-driven input pipeline reading
    /// serialized records.
    fn default() -> Self {
        EngineCosts {
            dispatch_ns: 100_000.0,
            deserialize_ns_per_byte: 2.5,
        }
    }
}

impl EngineCosts {
    pub fn free() -> EngineCosts {
        EngineCosts {
            dispatch_ns: 0.0,
            deserialize_ns_per_byte: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CacheOutcome {
    Disabled,
    Populated,
    Served,
    Overflowed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: u32,
    pub samples: u64,
    pub wall_seconds: f64,
    pub throughput: f64,
    pub io: IoCounters,
    pub cache: CacheOutcome,
    /// Worker time inside online steps, summed over workers.
    pub step_seconds: f64,
    /// Worker time spent loading and deserializing, summed over workers.
    pub deserialize_seconds: f64,
}

/// Order-insensitive and order-sensitive digests of an epoch's outputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputDigest {
    pub count: u64,
    /// Lane-wise sum of per-tensor hashes.
    pub multiset: String,
    /// Hash over per-tensor hashes in sink order.
    pub sequence: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Capture {
    #[default]
    None,
    Digest,
    /// Digest plus every output tensor in sink order.
    Collect,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub epoch: u32,
    pub worker: u32,
    pub step: String,
    pub start_ns: u64,
    pub end_ns: u64,
}

/// Tab-separated `epoch, worker, step, start_ns, end_ns`, one line per event.
pub fn write_trace(events: &[TraceEvent], mut out: impl Write) -> std::io::Result<()> {
    for e in events {
        writeln!(out, "{}\t{}\t{}\t{}\t{}", e.epoch, e.worker, e.step, e.start_ns, e.end_ns)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    pub epochs: Vec<EpochStats>,
    pub digests: Vec<OutputDigest>,
    pub tensors: Vec<Vec<Tensor>>,
    pub warnings: Vec<String>,
    pub trace: Vec<TraceEvent>,
}

/// Record containers produced by materialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactManifest {
    pub split_index: usize,
    pub compression: Compression,
    pub shards: u32,
    pub samples: u64,
    pub write: WriteStats,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Short digest of the source and the offline steps of `split`.
pub fn pipeline_key(pipeline: &Pipeline, split: usize) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(&pipeline.source).expect("descriptor serializes"));
    h.update(serde_json::to_vec(pipeline.offline_steps(split)).expect("steps serialize"));
    hex::encode(&h.finalize()[..8])
}

/// Directory holding the materialized containers of `strategy`.
pub fn artifact_dir(pipeline: &Pipeline, strategy: &Strategy) -> PathBuf {
    PathBuf::from("artifacts")
        .join(pipeline_key(pipeline, strategy.split_index))
        .join(strategy.artifact_id(pipeline))
}

pub fn load_manifest(storage: &dyn Storage, dir: &Path) -> Result<ArtifactManifest, ExecError> {
    let path = dir.join(MANIFEST_FILE);
    if !storage.exists(&path) {
        return Err(ExecError::MaterializationMissing(dir.to_path_buf()));
    }
    let mut s = String::new();
    storage
        .open_read(&path)?
        .read_to_string(&mut s)
        .map_err(|e| StorageError::from_io(&path, e))?;
    Ok(serde_json::from_str(&s)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContainerSet {
    pub paths: Vec<PathBuf>,
    pub compression: Compression,
    pub samples: u64,
    /// Encoded tensor bytes before framing and compression.
    pub payload_bytes: u64,
    pub stored_bytes: u64,
}

/// Where an epoch reads its samples from.
#[derive(Debug, Clone, PartialEq)]
pub enum OnlineSource {
    /// One raw file per sample.
    Files(DatasetDescriptor),
    Containers(ContainerSet),
}

impl OnlineSource {
    /// Source of `strategy`: the raw dataset at split 0, its artifact otherwise.
    pub fn for_strategy(storage: &dyn Storage, pipeline: &Pipeline, strategy: &Strategy) -> Result<OnlineSource, ExecError> {
        let desc = &pipeline.source;
        if strategy.split_index > 0 {
            let dir = artifact_dir(pipeline, strategy);
            let m = load_manifest(storage, &dir)?;
            return Ok(OnlineSource::Containers(ContainerSet {
                paths: m.write.paths.clone(),
                compression: m.compression,
                samples: m.samples,
                payload_bytes: m.write.payload_bytes,
                stored_bytes: m.write.bytes,
            }));
        }
        if !desc.is_generated(storage) {
            return Err(ExecError::MaterializationMissing(desc.root.clone()));
        }
        Ok(match desc.layout {
            Layout::ManySmallFiles => OnlineSource::Files(desc.clone()),
            Layout::Containers => OnlineSource::Containers(ContainerSet {
                paths: desc.container_paths(),
                compression: Compression::None,
                samples: desc.sample_count,
                payload_bytes: desc.total_bytes() + desc.sample_count * (2 + 8),
                stored_bytes: desc.stored_bytes(storage)?,
            }),
        })
    }

    pub fn samples(&self) -> u64 {
        match self {
            OnlineSource::Files(d) => d.sample_count,
            OnlineSource::Containers(c) => c.samples,
        }
    }

    pub fn stored_bytes(&self) -> u64 {
        match self {
            OnlineSource::Files(d) => d.total_bytes(),
            OnlineSource::Containers(c) => c.stored_bytes,
        }
    }

    /// Decoded bytes of all samples, as kept by a sample cache.
    pub fn decoded_bytes(&self) -> u64 {
        match self {
            OnlineSource::Files(d) => d.total_bytes(),
            OnlineSource::Containers(c) => c.payload_bytes,
        }
    }
}

/// The online part of a strategy.
#[derive(Debug, Clone)]
pub struct OnlinePlan {
    pub source: OnlineSource,
    pub steps: Vec<StepSpec>,
    /// Pipeline index of `steps[0]`; seeds per-step randomness.
    pub first_step: usize,
}

impl OnlinePlan {
    pub fn for_strategy(storage: &dyn Storage, pipeline: &Pipeline, strategy: &Strategy) -> Result<OnlinePlan, ExecError> {
        strategy.validate(pipeline)?;
        Ok(OnlinePlan {
            source: OnlineSource::for_strategy(storage, pipeline, strategy)?,
            steps: pipeline.online_steps(strategy.split_index).to_vec(),
            first_step: strategy.split_index,
        })
    }
}

/// Runs online epochs against one storage backend.
#[derive(Debug, Clone)]
pub struct Engine {
    storage: Arc<dyn Storage>,
    cpu: CpuModel,
    costs: EngineCosts,
    capture: Capture,
    trace: bool,
    cancel: Option<Arc<AtomicBool>>,
}

enum Item {
    Record(RecordParts),
    File(u64),
    Cached,
}

struct Work {
    index: u64,
    item: Item,
}

enum Feed {
    Files { next: u64 },
    Cached { next: u64 },
    Records { rxs: Vec<Option<Receiver<Result<RecordParts, RecordError>>>>, next: usize, live: usize },
    Done,
}

impl Feed {
    fn next(&mut self) -> Option<Result<Item, ExecError>> {
        match self {
            Feed::Files { next } => {
                let i = *next;
                *next += 1;
                Some(Ok(Item::File(i)))
            }
            Feed::Cached { next } => {
                *next += 1;
                Some(Ok(Item::Cached))
            }
            Feed::Records { rxs, next, live } => {
                while *live > 0 {
                    let i = *next;
                    *next = (*next + 1) % rxs.len();
                    let Some(rx) = &rxs[i] else { continue };
                    match rx.recv() {
                        Ok(Ok(p)) => return Some(Ok(Item::Record(p))),
                        Ok(Err(e)) => {
                            rxs[i] = None;
                            *live -= 1;
                            return Some(Err(e.into()));
                        }
                        Err(_) => {
                            rxs[i] = None;
                            *live -= 1;
                        }
                    }
                }
                None
            }
            Feed::Done => None,
        }
    }
}

struct Dispatcher {
    feed: Feed,
    shuffle: Option<ShuffleBuffer<Work, ChaCha8Rng>>,
    pulled: u64,
    target: u64,
}

impl Dispatcher {
    fn next(&mut self) -> Option<Result<Work, ExecError>> {
        loop {
            if self.pulled < self.target {
                match self.feed.next() {
                    Some(Ok(item)) => {
                        let w = Work {
                            index: self.pulled,
                            item,
                        };
                        self.pulled += 1;
                        match &mut self.shuffle {
                            None => return Some(Ok(w)),
                            Some(buf) => {
                                if let Some(out) = buf.push(w) {
                                    return Some(Ok(out));
                                }
                            }
                        }
                    }
                    Some(Err(e)) => return Some(Err(e)),
                    None => self.target = self.pulled,
                }
            } else {
                return self.shuffle.as_mut().and_then(|b| b.pop()).map(Ok);
            }
        }
    }
}

#[derive(Default)]
struct SinkState {
    count: u64,
    lanes: [u64; 4],
    sequence: Sha256,
    tensors: Vec<Tensor>,
}

impl SinkState {
    fn digest(&self) -> OutputDigest {
        let mut m = Vec::with_capacity(32);
        for l in self.lanes {
            m.extend_from_slice(&l.to_le_bytes());
        }
        OutputDigest {
            count: self.count,
            multiset: hex::encode(m),
            sequence: hex::encode(self.sequence.clone().finalize()),
        }
    }
}

#[derive(Default)]
struct WorkerTally {
    samples: u64,
    step_seconds: f64,
    load_seconds: f64,
    trace: Vec<TraceEvent>,
}

enum SampleCacheState {
    Off,
    Filling(Arc<SampleCache>),
    Full(Arc<SampleCache>),
}

struct EpochCtx<'a> {
    plan: &'a OnlinePlan,
    cfg: &'a RunConfig,
    cpu: &'a Cpu,
    epoch: u32,
    target: u64,
    serialized: Option<&'a Arc<SerializedCache>>,
    samples: &'a SampleCacheState,
    origin: Instant,
}

impl Engine {
    pub fn new(storage: Arc<dyn Storage>, cpu: CpuModel) -> Engine {
        Engine {
            storage,
            cpu,
            costs: EngineCosts::default(),
            capture: Capture::None,
            trace: false,
            cancel: None,
        }
    }

    pub fn with_costs(mut self, costs: EngineCosts) -> Engine {
        self.costs = costs;
        self
    }

    pub fn with_capture(mut self, capture: Capture) -> Engine {
        self.capture = capture;
        self
    }

    pub fn with_trace(mut self, on: bool) -> Engine {
        self.trace = on;
        self
    }

    pub fn with_cancel(mut self, flag: Arc<AtomicBool>) -> Engine {
        self.cancel = Some(flag);
        self
    }

    pub fn storage(&self) -> &Arc<dyn Storage> {
        &self.storage
    }

    fn cancelled(&self) -> bool {
        self.cancel.as_ref().is_some_and(|c| c.load(Ordering::Relaxed))
    }

    pub fn run(&self, plan: &OnlinePlan, cfg: &RunConfig) -> Result<RunOutput, ExecError> {
        cfg.validate()?;
        let cpu = Cpu::new(self.cpu);
        let available = plan.source.samples();
        let target = cfg.sample_limit.map_or(available, |l| l.min(available));
        let share = if available == 0 { 0.0 } else { target as f64 / available as f64 };
        let mut out = RunOutput::default();

        let mut overflowed = false;
        let mut serialized = None;
        let mut samples = SampleCacheState::Off;
        match cfg.cache_mode {
            CacheMode::NoCache => {}
            CacheMode::SerializedCache => {
                let projected = (plan.source.stored_bytes() as f64 * share).ceil() as u64;
                if projected > cfg.memory_budget {
                    overflowed = true;
                    out.warnings.push(format!(
                        "serialized cache disabled: {projected} bytes exceed the {} byte budget",
                        cfg.memory_budget
                    ));
                } else {
                    serialized = Some(SerializedCache::new(cfg.memory_budget));
                }
            }
            CacheMode::SampleCache => {
                let projected = (plan.source.decoded_bytes() as f64 * share).ceil() as u64
                    + target * SAMPLE_OVERHEAD_BYTES;
                if projected > cfg.memory_budget {
                    overflowed = true;
                    out.warnings.push(format!(
                        "sample cache disabled: {projected} bytes exceed the {} byte budget",
                        cfg.memory_budget
                    ));
                } else {
                    samples = SampleCacheState::Filling(Arc::new(SampleCache::new(target, cfg.memory_budget)));
                }
            }
        }

        let origin = Instant::now();
        for epoch in 0..cfg.epochs {
            if self.cancelled() {
                return Err(ExecError::Cancelled);
            }
            let ctx = EpochCtx {
                plan,
                cfg,
                cpu: &cpu,
                epoch,
                target,
                serialized: serialized.as_ref(),
                samples: &samples,
                origin,
            };
            let (mut stats, sink, trace) = self.run_epoch(&ctx)?;
            stats.cache = match cfg.cache_mode {
                CacheMode::NoCache => CacheOutcome::Disabled,
                _ if overflowed => CacheOutcome::Overflowed,
                CacheMode::SerializedCache => {
                    let s = serialized.as_ref().expect("enabled");
                    if s.overflowed() {
                        CacheOutcome::Overflowed
                    } else if epoch == 0 {
                        CacheOutcome::Populated
                    } else {
                        CacheOutcome::Served
                    }
                }
                CacheMode::SampleCache => match &samples {
                    SampleCacheState::Full(_) => CacheOutcome::Served,
                    SampleCacheState::Filling(c) if !c.overflowed() => CacheOutcome::Populated,
                    _ => CacheOutcome::Overflowed,
                },
            };
            if let Some(s) = &serialized {
                if s.overflowed() && !overflowed {
                    overflowed = true;
                    out.warnings.push("serialized cache exceeded its budget; reading from the backend".into());
                }
            }
            samples = match samples {
                SampleCacheState::Filling(c) if c.is_complete() => SampleCacheState::Full(c),
                SampleCacheState::Filling(c) if c.overflowed() => {
                    overflowed = true;
                    out.warnings.push("sample cache exceeded its budget; reading from the backend".into());
                    SampleCacheState::Off
                }
                other => other,
            };
            out.epochs.push(stats);
            if self.capture != Capture::None {
                out.digests.push(sink.digest());
                if self.capture == Capture::Collect {
                    out.tensors.push(sink.tensors);
                }
            }
            out.trace.extend(trace);
        }
        Ok(out)
    }

    fn run_epoch(&self, ctx: &EpochCtx<'_>) -> Result<(EpochStats, SinkState, Vec<TraceEvent>), ExecError> {
        let cfg = ctx.cfg;
        let plan = ctx.plan;
        let served = matches!(ctx.samples, SampleCacheState::Full(_));
        let filling = match ctx.samples {
            SampleCacheState::Filling(c) => Some(c),
            _ => None,
        };

        let mut readers: Vec<(Sender<Result<RecordParts, RecordError>>, PathBuf)> = Vec::new();
        let feed = match (&plan.source, served) {
            (_, true) => Feed::Cached { next: 0 },
            (OnlineSource::Files(_), false) => Feed::Files { next: 0 },
            (OnlineSource::Containers(set), false) => {
                let mut rxs = Vec::new();
                for p in &set.paths {
                    let (tx, rx) = bounded(2);
                    readers.push((tx, p.clone()));
                    rxs.push(Some(rx));
                }
                Feed::Records {
                    live: rxs.len(),
                    rxs,
                    next: 0,
                }
            }
        };
        let dispatcher = Mutex::new(Dispatcher {
            feed,
            shuffle: (cfg.shuffle_buffer > 0).then(|| {
                ShuffleBuffer::new(
                    cfg.shuffle_buffer,
                    ChaCha8Rng::seed_from_u64(cfg.rng_seed.wrapping_add(ctx.epoch as u64)),
                )
            }),
            pulled: 0,
            target: ctx.target,
        });
        let sink = Mutex::new(SinkState::default());
        let stop = AtomicBool::new(false);
        let failure: Mutex<Option<ExecError>> = Mutex::new(None);

        let before = self.storage.counters();
        let started = Instant::now();
        let mut wall = 0.0;
        let mut tallies = Vec::new();
        thread::scope(|s| {
            let compression = match &plan.source {
                OnlineSource::Containers(set) => set.compression,
                OnlineSource::Files(_) => Compression::None,
            };
            for (tx, path) in readers.drain(..) {
                let storage = &self.storage;
                let serialized = ctx.serialized;
                s.spawn(move || {
                    let run = || -> Result<(), RecordError> {
                        let raw = match serialized {
                            Some(c) => c.open(storage, &path, true)?,
                            None => storage.open_read(&path)?,
                        };
                        let mut r = ContainerReader::new(BufReader::with_capacity(256 << 10, raw), compression)?;
                        while let Some(p) = r.next_record_parts()? {
                            if tx.send(Ok(p)).is_err() {
                                break;
                            }
                        }
                        Ok(())
                    };
                    if let Err(e) = run() {
                        let _ = tx.send(Err(e));
                    }
                });
            }

            let handles: Vec<_> = (0..cfg.parallelism)
                .map(|worker| {
                    let dispatcher = &dispatcher;
                    let sink = &sink;
                    let stop = &stop;
                    let failure = &failure;
                    s.spawn(move || {
                        let r = self.worker_loop(ctx, worker, dispatcher, sink, stop, filling);
                        match r {
                            Ok(t) => t,
                            Err(e) => {
                                stop.store(true, Ordering::Relaxed);
                                failure.lock().unwrap().get_or_insert(e);
                                WorkerTally::default()
                            }
                        }
                    })
                })
                .collect();
            tallies = handles.into_iter().map(|h| h.join().expect("worker panicked")).collect();
            wall = started.elapsed().as_secs_f64();
            dispatcher.lock().unwrap().feed = Feed::Done;
        });
        if let Some(e) = failure.into_inner().unwrap() {
            return Err(e);
        }
        let io = self.storage.counters().since(&before);
        let samples: u64 = tallies.iter().map(|t| t.samples).sum();
        let stats = EpochStats {
            epoch: ctx.epoch,
            samples,
            wall_seconds: wall,
            throughput: if wall > 0.0 { samples as f64 / wall } else { 0.0 },
            io,
            cache: CacheOutcome::Disabled,
            step_seconds: tallies.iter().map(|t| t.step_seconds).sum(),
            deserialize_seconds: tallies.iter().map(|t| t.load_seconds).sum(),
        };
        let mut trace: Vec<TraceEvent> = tallies.into_iter().flat_map(|t| t.trace).collect();
        trace.sort_by_key(|e| (e.start_ns, e.worker));
        Ok((stats, sink.into_inner().unwrap(), trace))
    }

    fn worker_loop(
        &self,
        ctx: &EpochCtx<'_>,
        worker: u32,
        dispatcher: &Mutex<Dispatcher>,
        sink: &Mutex<SinkState>,
        stop: &AtomicBool,
        filling: Option<&Arc<SampleCache>>,
    ) -> Result<WorkerTally, ExecError> {
        let cpu = ctx.cpu;
        let mut wcpu = cpu.worker();
        let mut tally = WorkerTally::default();
        let ns_since = |t: Instant| t.duration_since(ctx.origin).as_nanos() as u64;
        loop {
            if stop.load(Ordering::Relaxed) || self.cancelled() {
                break;
            }
            let next = dispatcher.lock().unwrap().next();
            let work = match next {
                None => break,
                Some(r) => r?,
            };
            cpu.dispatch(&mut wcpu, self.costs.dispatch_ns);

            let t_load = Instant::now();
            let loaded: Arc<Tensor> = match work.item {
                Item::Record(payload) => {
                    let ns = payload.len() as f64 * self.costs.deserialize_ns_per_byte;
                    Arc::new(cpu.run(&mut wcpu, ns, ExecMode::Parallel, || payload.into_tensor())?)
                }
                Item::File(i) => {
                    let OnlineSource::Files(desc) = &ctx.plan.source else {
                        unreachable!("file items come from file sources")
                    };
                    let path = desc.sample_path(i);
                    let mut r = match ctx.serialized {
                        Some(c) => c.open(&self.storage, &path, true)?,
                        None => self.storage.open_read(&path)?,
                    };
                    let mut bytes = Vec::with_capacity(desc.sample_bytes() as usize);
                    r.read_to_end(&mut bytes)
                        .map_err(|e| StorageError::from_io(&path, e))?;
                    let ns = bytes.len() as f64 * self.costs.deserialize_ns_per_byte;
                    Arc::new(cpu.run(&mut wcpu, ns, ExecMode::Parallel, || desc.tensor_from_raw(bytes))?)
                }
                Item::Cached => match ctx.samples {
                    SampleCacheState::Full(c) => c.get(work.index).expect("complete cache"),
                    _ => unreachable!("cached items need a full cache"),
                },
            };
            if let Some(c) = filling {
                c.insert(work.index, &loaded);
            }
            let t_loaded = Instant::now();
            tally.load_seconds += (t_loaded - t_load).as_secs_f64();
            if self.trace {
                tally.trace.push(TraceEvent {
                    epoch: ctx.epoch,
                    worker,
                    step: "load".into(),
                    start_ns: ns_since(t_load),
                    end_ns: ns_since(t_loaded),
                });
            }

            let mut cur = loaded;
            for (k, step) in ctx.plan.steps.iter().enumerate() {
                let t0 = Instant::now();
                let input = Arc::try_unwrap(cur).unwrap_or_else(|a| (*a).clone());
                let ns = steps::step_cost_ns(step, input.byte_len());
                let mut rng = step_rng(ctx.cfg.rng_seed, ctx.epoch, work.index, ctx.plan.first_step + k);
                cur = Arc::new(cpu.run(&mut wcpu, ns, step.exec_mode, || transform(step, input, &mut rng))?);
                let t1 = Instant::now();
                tally.step_seconds += (t1 - t0).as_secs_f64();
                if self.trace {
                    tally.trace.push(TraceEvent {
                        epoch: ctx.epoch,
                        worker,
                        step: step.name.clone(),
                        start_ns: ns_since(t0),
                        end_ns: ns_since(t1),
                    });
                }
            }

            black_box(cur.shape().len());
            if self.capture != Capture::None {
                let h = cur.content_hash();
                let mut s = sink.lock().unwrap();
                s.count += 1;
                for (lane, chunk) in s.lanes.iter_mut().zip(h.chunks_exact(8)) {
                    *lane = lane.wrapping_add(u64::from_le_bytes(chunk.try_into().unwrap()));
                }
                s.sequence.update(h);
                if self.capture == Capture::Collect {
                    s.tensors.push((*cur).clone());
                }
            }
            tally.samples += 1;
        }
        Ok(tally)
    }
}

/// Runs the online part of a materialized `strategy` with the strategy's
/// parallelism, cache mode and shuffle buffer.
pub fn run_online(
    strategy: &Strategy,
    pipeline: &Pipeline,
    storage: &Arc<dyn Storage>,
    cfg: &RunConfig,
    cpu: CpuModel,
) -> Result<RunOutput, ExecError> {
    let plan = OnlinePlan::for_strategy(storage.as_ref(), pipeline, strategy)?;
    Engine::new(Arc::clone(storage), cpu).run(&plan, &cfg.for_strategy(strategy))
}

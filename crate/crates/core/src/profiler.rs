//! Profiling campaigns: materialize each strategy's offline steps, replay
//! its online steps for a number of repeats, and collect the results.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use crossbeam_channel::bounded;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::exec::cpu::{self, Cpu, CpuModel};
use crate::exec::steps::{step_cost_ns, step_rng, transform, StepError};
use crate::exec::{
    artifact_dir, ArtifactManifest, EngineCosts, Engine, EpochStats, ExecError, OnlinePlan, RunConfig, MANIFEST_FILE,
};
use crate::model::{ModelError, Pipeline, Strategy, Tensor};
use crate::recordio::{self, ContainerStream, RecordError, ShardedWriter};
use crate::storage::{BackendConfig, IoCounters, Storage, StorageError};
use crate::workloads::{Layout, WorkloadError};

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("source dataset missing at {0}; run generate first")]
    SourceMissing(PathBuf),
    #[error("empty strategy grid")]
    EmptyGrid,
    #[error("invalid profile config: {0}")]
    InvalidConfig(String),
    #[error("all {count} strategies failed; first error: {first}")]
    AllStrategiesFailed { count: usize, first: String },
    #[error("cancelled")]
    Cancelled,
    #[error(transparent)]
    Exec(#[from] ExecError),
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
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl ProfileError {
    pub fn is_cancelled(&self) -> bool {
        matches!(self, ProfileError::Cancelled | ProfileError::Exec(ExecError::Cancelled))
    }
}

/// Which epochs a repeat's throughput is taken from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpochSelector {
    #[default]
    First,
    Last,
    Mean,
}

impl EpochSelector {
    pub fn select(self, epochs: &[EpochStats]) -> &[EpochStats] {
        match self {
            EpochSelector::First => &epochs[..epochs.len().min(1)],
            EpochSelector::Last => &epochs[epochs.len().saturating_sub(1)..],
            EpochSelector::Mean => epochs,
        }
    }

    pub fn throughput(self, epochs: &[EpochStats]) -> f64 {
        let sel = self.select(epochs);
        if sel.is_empty() {
            return 0.0;
        }
        sel.iter().map(|e| e.throughput).sum::<f64>() / sel.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileConfig {
    pub run: RunConfig,
    pub runs_total: u32,
    #[serde(default)]
    pub epoch_selector: EpochSelector,
    #[serde(default)]
    pub cpu: CpuModel,
    #[serde(default)]
    pub costs: EngineCosts,
    /// Remove each strategy's containers after profiling it.
    #[serde(default)]
    pub cleanup: bool,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        ProfileConfig {
            run: RunConfig::default(),
            runs_total: 1,
            epoch_selector: EpochSelector::First,
            cpu: CpuModel::Host,
            costs: EngineCosts::default(),
            cleanup: false,
        }
    }
}

impl ProfileConfig {
    pub fn validate(&self) -> Result<(), ProfileError> {
        if self.runs_total == 0 {
            return Err(ProfileError::InvalidConfig("runs_total must be at least 1".into()));
        }
        if let CpuModel::Virtual { cores: 0 } = self.cpu {
            return Err(ProfileError::InvalidConfig("virtual cpu needs at least one core".into()));
        }
        self.run.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterializeStats {
    pub seconds: f64,
    /// On-store bytes of the strategy's input to the online phase.
    pub bytes: u64,
    pub records: u64,
    pub payload_bytes: u64,
    /// Backend write counter delta over materialization.
    pub io: IoCounters,
    /// Containers directory; unset at split 0.
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatStats {
    pub repeat: u32,
    pub throughput: f64,
    pub epochs: Vec<EpochStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRecord {
    pub strategy_id: String,
    pub label: String,
    pub strategy: Strategy,
    pub preprocessing_seconds: f64,
    pub storage_bytes: u64,
    /// Mean over repeats of the selected epochs' throughput.
    pub throughput_sps: f64,
    /// Sample standard deviation over repeats.
    pub throughput_stddev: f64,
    pub samples_per_epoch: u64,
    pub epoch_selector: EpochSelector,
    pub materialize: MaterializeStats,
    pub repeats: Vec<RepeatStats>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl ProfileRecord {
    /// Mean backend read rate over the selected epochs of every repeat.
    pub fn read_rate(&self) -> f64 {
        let (mut bytes, mut secs) = (0.0, 0.0);
        for r in &self.repeats {
            for e in self.epoch_selector.select(&r.epochs) {
                bytes += e.io.bytes_read as f64;
                secs += e.wall_seconds;
            }
        }
        if secs > 0.0 {
            bytes / secs
        } else {
            0.0
        }
    }

    pub fn bytes_per_sample(&self) -> f64 {
        self.storage_bytes as f64 / self.materialize.records.max(1) as f64
    }
}

pub fn mean_and_stddev(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyFailure {
    pub strategy_id: String,
    pub strategy: Strategy,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignMetadata {
    pub tool_version: String,
    pub created_unix: u64,
    pub config_digest: String,
    pub backend: BackendConfig,
    pub cpu: CpuModel,
    /// Host nanoseconds per checksum-loop iteration.
    pub calibration_ns_per_iter: f64,
    pub config: ProfileConfig,
    pub pipeline: Pipeline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Campaign {
    pub metadata: CampaignMetadata,
    pub records: Vec<ProfileRecord>,
    #[serde(default)]
    pub failures: Vec<StrategyFailure>,
    #[serde(default)]
    pub cancelled: bool,
}

/// Runs strategies against one backend.
#[derive(Debug, Clone)]
pub struct Profiler {
    storage: Arc<dyn Storage>,
    config: ProfileConfig,
    cancel: Arc<AtomicBool>,
}

enum SourceFeed {
    Files { next: u64, count: u64 },
    Records(ContainerStream),
}

impl Profiler {
    pub fn new(storage: Arc<dyn Storage>, config: ProfileConfig) -> Profiler {
        Profiler {
            storage,
            config,
            cancel: Arc::new(AtomicBool::new(false)),
        }
    }

    pub fn with_cancel(mut self, flag: Arc<AtomicBool>) -> Profiler {
        self.cancel = flag;
        self
    }

    pub fn config(&self) -> &ProfileConfig {
        &self.config
    }

    pub fn storage(&self) -> &Arc<dyn Storage> {
        &self.storage
    }

    fn cancelled(&self) -> bool {
        self.cancel.load(Ordering::Relaxed)
    }

    /// Runs the offline steps of `strategy` over the source and writes the
    /// result as record containers. Split 0 writes nothing.
    pub fn materialize(&self, strategy: &Strategy, pipeline: &Pipeline) -> Result<MaterializeStats, ProfileError> {
        strategy.validate(pipeline)?;
        let storage = &self.storage;
        let desc = &pipeline.source;
        if !desc.is_generated(storage.as_ref()) {
            return Err(ProfileError::SourceMissing(desc.root.clone()));
        }
        if strategy.split_index == 0 {
            return Ok(MaterializeStats {
                seconds: 0.0,
                bytes: desc.stored_bytes(storage.as_ref())?,
                records: desc.sample_count,
                payload_bytes: desc.total_bytes(),
                io: IoCounters::default(),
                dir: None,
            });
        }

        let dir = artifact_dir(pipeline, strategy);
        storage.remove_all(&dir)?;
        let steps = pipeline.offline_steps(strategy.split_index);
        let cpu = Cpu::new(self.config.cpu);
        let seed = self.config.run.rng_seed;
        let before = storage.counters();
        let started = Instant::now();

        let feed = Mutex::new(match desc.layout {
            Layout::ManySmallFiles => SourceFeed::Files {
                next: 0,
                count: desc.sample_count,
            },
            Layout::Containers => SourceFeed::Records(recordio::read_container(
                storage,
                &desc.container_paths(),
                crate::model::Compression::None,
            )?),
        });
        let counter = AtomicU64::new(0);
        let stop = AtomicBool::new(false);
        let failure: Mutex<Option<ProfileError>> = Mutex::new(None);
        let fail = |e: ProfileError| {
            stop.store(true, Ordering::Relaxed);
            failure.lock().unwrap().get_or_insert(e);
        };
        let mut writer = ShardedWriter::create(Arc::clone(storage), &dir, strategy.compression, strategy.shards)?;

        thread::scope(|s| {
            let (tx, rx) = bounded::<(u64, Vec<u8>)>(2 * strategy.parallelism as usize);
            for _ in 0..strategy.parallelism {
                let tx = tx.clone();
                let (feed, counter, stop, fail, cpu) = (&feed, &counter, &stop, &fail, &cpu);
                s.spawn(move || {
                    let mut wcpu = cpu.worker();
                    let mut work = || -> Result<(), ProfileError> {
                        loop {
                            if stop.load(Ordering::Relaxed) || self.cancelled() {
                                return Ok(());
                            }
                            let (index, tensor) = {
                                let mut f = feed.lock().unwrap();
                                match &mut *f {
                                    SourceFeed::Files { next, count } => {
                                        if *next >= *count {
                                            return Ok(());
                                        }
                                        *next += 1;
                                        (*next - 1, None)
                                    }
                                    SourceFeed::Records(stream) => match stream.next() {
                                        None => return Ok(()),
                                        Some(t) => (counter.fetch_add(1, Ordering::Relaxed), Some(t?)),
                                    },
                                }
                            };
                            let mut t = match tensor {
                                Some(t) => t,
                                None => self.read_source_file(pipeline, index)?,
                            };
                            for (k, step) in steps.iter().enumerate() {
                                let ns = step_cost_ns(step, t.byte_len());
                                let mut rng = step_rng(seed, 0, index, k);
                                t = cpu.run(&mut wcpu, ns, step.exec_mode, || transform(step, t, &mut rng))?;
                            }
                            if tx.send((index, recordio::encode_tensor(&t))).is_err() {
                                return Ok(());
                            }
                        }
                    };
                    if let Err(e) = work() {
                        fail(e);
                    }
                });
            }
            drop(tx);

            // Restore source order before writing.
            let mut pending = BTreeMap::new();
            let mut next = 0u64;
            for (i, payload) in rx {
                pending.insert(i, payload);
                while let Some(p) = pending.remove(&next) {
                    if let Err(e) = writer.write_payload(&p) {
                        fail(e.into());
                        return;
                    }
                    next += 1;
                }
            }
        });
        if let Some(e) = failure.into_inner().unwrap() {
            return Err(e);
        }
        if self.cancelled() {
            return Err(ProfileError::Cancelled);
        }
        let stats = writer.finish()?;
        let seconds = started.elapsed().as_secs_f64();
        let io = storage.counters().since(&before);

        let manifest = ArtifactManifest {
            split_index: strategy.split_index,
            compression: strategy.compression,
            shards: strategy.shards,
            samples: stats.records,
            write: stats.clone(),
        };
        let path = dir.join(MANIFEST_FILE);
        let mut w = storage.open_write(&path)?;
        w.write_all(&serde_json::to_vec_pretty(&manifest)?)
            .and_then(|_| w.flush())
            .map_err(|e| StorageError::from_io(&path, e))?;
        drop(w);

        Ok(MaterializeStats {
            seconds,
            bytes: stats.bytes,
            records: stats.records,
            payload_bytes: stats.payload_bytes,
            io,
            dir: Some(dir),
        })
    }

    fn read_source_file(&self, pipeline: &Pipeline, index: u64) -> Result<Tensor, ProfileError> {
        let desc = &pipeline.source;
        let path = desc.sample_path(index);
        let mut bytes = Vec::with_capacity(desc.sample_bytes() as usize);
        self.storage
            .open_read(&path)?
            .read_to_end(&mut bytes)
            .map_err(|e| StorageError::from_io(&path, e))?;
        Ok(desc.tensor_from_raw(bytes)?)
    }

    /// Materializes once, then replays the online steps `runs_total` times,
    /// each with a fresh engine and cold backend clocks.
    pub fn profile_strategy(&self, strategy: &Strategy, pipeline: &Pipeline) -> Result<ProfileRecord, ProfileError> {
        self.config.validate()?;
        let mat = self.materialize(strategy, pipeline)?;
        let plan = OnlinePlan::for_strategy(self.storage.as_ref(), pipeline, strategy)?;
        let run = self.config.run.for_strategy(strategy);
        let mut repeats = Vec::new();
        let mut warnings: Vec<String> = Vec::new();
        for repeat in 0..self.config.runs_total {
            if self.cancelled() {
                return Err(ProfileError::Cancelled);
            }
            self.storage.reset_clocks();
            let engine = Engine::new(Arc::clone(&self.storage), self.config.cpu)
                .with_costs(self.config.costs)
                .with_cancel(Arc::clone(&self.cancel));
            let out = engine.run(&plan, &run)?;
            for w in out.warnings {
                if !warnings.contains(&w) {
                    warnings.push(w);
                }
            }
            repeats.push(RepeatStats {
                repeat,
                throughput: self.config.epoch_selector.throughput(&out.epochs),
                epochs: out.epochs,
            });
        }
        if self.config.cleanup {
            if let Some(dir) = &mat.dir {
                self.storage.remove_all(dir)?;
            }
        }
        let tps: Vec<f64> = repeats.iter().map(|r| r.throughput).collect();
        let (mean, sd) = mean_and_stddev(&tps);
        Ok(ProfileRecord {
            strategy_id: strategy.id(pipeline),
            label: pipeline.strategy_label(strategy.split_index),
            strategy: strategy.clone(),
            preprocessing_seconds: mat.seconds,
            storage_bytes: mat.bytes,
            throughput_sps: mean,
            throughput_stddev: sd,
            samples_per_epoch: repeats.first().and_then(|r| r.epochs.first()).map_or(0, |e| e.samples),
            epoch_selector: self.config.epoch_selector,
            materialize: mat,
            repeats,
            warnings,
        })
    }

    /// Profiles every strategy in turn. Failures are recorded and the
    /// campaign continues; cancellation returns the results so far.
    pub fn profile_campaign(&self, pipeline: &Pipeline, strategies: &[Strategy]) -> Result<Campaign, ProfileError> {
        if strategies.is_empty() {
            return Err(ProfileError::EmptyGrid);
        }
        self.config.validate()?;
        pipeline.validate()?;
        let mut campaign = Campaign {
            metadata: self.metadata(pipeline, strategies),
            records: Vec::new(),
            failures: Vec::new(),
            cancelled: false,
        };
        for s in strategies {
            if self.cancelled() {
                campaign.cancelled = true;
                break;
            }
            let id = s.id(pipeline);
            log::info!("profiling {id}");
            match self.profile_strategy(s, pipeline) {
                Ok(r) => campaign.records.push(r),
                Err(e) if e.is_cancelled() => {
                    campaign.cancelled = true;
                    break;
                }
                Err(e) => {
                    log::warn!("{id} failed: {e}");
                    campaign.failures.push(StrategyFailure {
                        strategy_id: id,
                        strategy: s.clone(),
                        error: e.to_string(),
                    });
                }
            }
        }
        if campaign.records.is_empty() && !campaign.cancelled {
            return Err(ProfileError::AllStrategiesFailed {
                count: campaign.failures.len(),
                first: campaign.failures[0].error.clone(),
            });
        }
        Ok(campaign)
    }

    fn metadata(&self, pipeline: &Pipeline, strategies: &[Strategy]) -> CampaignMetadata {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.config).expect("config serializes"));
        h.update(serde_json::to_vec(pipeline).expect("pipeline serializes"));
        h.update(serde_json::to_vec(strategies).expect("strategies serialize"));
        h.update(serde_json::to_vec(&self.storage.config()).expect("backend serializes"));
        CampaignMetadata {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            created_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
            config_digest: hex::encode(&h.finalize()[..8]),
            backend: self.storage.config(),
            cpu: self.config.cpu,
            calibration_ns_per_iter: cpu::calibration(),
            config: self.config.clone(),
            pipeline: pipeline.clone(),
        }
    }
}

pub fn materialize(
    strategy: &Strategy,
    pipeline: &Pipeline,
    storage: &Arc<dyn Storage>,
    config: &ProfileConfig,
) -> Result<MaterializeStats, ProfileError> {
    Profiler::new(Arc::clone(storage), config.clone()).materialize(strategy, pipeline)
}

pub fn profile_strategy(
    strategy: &Strategy,
    pipeline: &Pipeline,
    storage: &Arc<dyn Storage>,
    config: &ProfileConfig,
) -> Result<ProfileRecord, ProfileError> {
    Profiler::new(Arc::clone(storage), config.clone()).profile_strategy(strategy, pipeline)
}

pub fn profile_campaign(
    pipeline: &Pipeline,
    storage: &Arc<dyn Storage>,
    strategies: &[Strategy],
    config: &ProfileConfig,
) -> Result<Campaign, ProfileError> {
    Profiler::new(Arc::clone(storage), config.clone()).profile_campaign(pipeline, strategies)
}

//! Pipeline domain types: tensors, steps, pipelines, strategies.
//!
//! A pipeline is a linear chain whose first step is always [`StepKind::Ingest`].
//! A [`Strategy`] picks a split index `m`: the first `m` steps run once offline
//! and their output is materialized into record containers; the remaining
//! steps run online every epoch. `m = 0` reads the raw source directly and
//! `m = 1` re-packs the raw samples into containers without transforming them.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::workloads::DatasetDescriptor;

/// Maximum tensor rank accepted anywhere in the crate.
pub const MAX_RANK: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("tensor payload is {actual} bytes but shape {shape:?} of {dtype:?} needs {expected}")]
    ShapeMismatch {
        dtype: DType,
        shape: Vec<u64>,
        expected: u64,
        actual: u64,
    },
    #[error("tensor rank {0} exceeds the maximum of {MAX_RANK}")]
    RankTooLarge(usize),
    #[error("duplicate step name `{0}`")]
    DuplicateStepName(String),
    #[error("ingest step must be the single step at index 0 (found at index {0})")]
    MisplacedIngest(usize),
    #[error("pipeline has no ingest step")]
    MissingIngest,
    #[error("step `{step}` has size ratio {ratio}; ratios must be positive and finite")]
    InvalidRatio { step: String, ratio: f64 },
    #[error("step `{step}` has compute cost {cost}; costs must be non-negative and finite")]
    InvalidCost { step: String, cost: f64 },
    #[error("step `{0}` is a random crop but is marked deterministic")]
    NondeterministicMarkedDeterministic(String),
    #[error("step `{0}` is deterministic but is marked non-deterministic")]
    DeterministicMarkedNondeterministic(String),
    #[error("split index {split} is illegal; the largest legal split is {max}")]
    IllegalSplit { split: usize, max: usize },
    #[error("invalid strategy: {0}")]
    InvalidStrategy(String),
}

/// Element type of a tensor. The numeric code is part of the container format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    U8,
    I16,
    I32,
    F32,
    F64,
}

impl DType {
    pub const ALL: [DType; 5] = [DType::U8, DType::I16, DType::I32, DType::F32, DType::F64];

    pub fn code(self) -> u8 {
        match self {
            DType::U8 => 0,
            DType::I16 => 1,
            DType::I32 => 2,
            DType::F32 => 3,
            DType::F64 => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<DType> {
        DType::ALL.get(code as usize).copied()
    }

    /// Bytes per element.
    pub fn width(self) -> usize {
        match self {
            DType::U8 => 1,
            DType::I16 => 2,
            DType::I32 | DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DType::U8 => "u8",
            DType::I16 => "i16",
            DType::I32 => "i32",
            DType::F32 => "f32",
            DType::F64 => "f64",
        };
        f.write_str(s)
    }
}

/// A dense row-major tensor. The unit that flows through a pipeline.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Tensor {
    dtype: DType,
    shape: Vec<u64>,
    data: Vec<u8>,
}

impl Tensor {
    pub fn new(dtype: DType, shape: Vec<u64>, data: Vec<u8>) -> Result<Self, ModelError> {
        if shape.len() > MAX_RANK {
            return Err(ModelError::RankTooLarge(shape.len()));
        }
        let expected = shape
            .iter()
            .try_fold(dtype.width() as u64, |acc, &d| acc.checked_mul(d));
        match expected {
            Some(expected) if expected == data.len() as u64 => Ok(Tensor { dtype, shape, data }),
            _ => Err(ModelError::ShapeMismatch {
                dtype,
                expected: expected.unwrap_or(u64::MAX),
                actual: data.len() as u64,
                shape,
            }),
        }
    }

    /// A rank-1 tensor over `data`. Trailing bytes that do not fill an element are an error.
    pub fn from_bytes(dtype: DType, data: Vec<u8>) -> Result<Self, ModelError> {
        let elems = (data.len() / dtype.width()) as u64;
        Tensor::new(dtype, vec![elems], data)
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn shape(&self) -> &[u64] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn byte_len(&self) -> usize {
        self.data.len()
    }

    pub fn element_count(&self) -> u64 {
        self.shape.iter().product()
    }

    /// SHA-256 over dtype, shape and payload.
    pub fn content_hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update([self.dtype.code(), self.shape.len() as u8]);
        for d in &self.shape {
            h.update(d.to_le_bytes());
        }
        h.update(&self.data);
        h.finalize().into()
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("dtype", &self.dtype)
            .field("shape", &self.shape)
            .field("bytes", &self.data.len())
            .finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    Ingest,
    Decode,
    Resize,
    Widen,
    Greyscale,
    MapCompute,
    RandomCrop,
    Aggregate,
}

impl StepKind {
    pub fn is_deterministic(self) -> bool {
        !matches!(self, StepKind::RandomCrop)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecMode {
    #[default]
    Parallel,
    /// At most one worker may be inside the step at any time.
    Exclusive,
}

/// Kind-specific step parameters. Unused fields are ignored.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StepParams {
    /// Output element type for `Decode`/`MapCompute` (defaults to the input type).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dtype: Option<DType>,
    /// Trailing channel extent for `Decode`/`MapCompute` output (`[n / c, c]`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channels: Option<u64>,
    /// Fraction of leading-dimension rows kept by `RandomCrop`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crop_fraction: Option<f64>,
    /// Window length of `Aggregate`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period: Option<u64>,
}

/// One transformation in a pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSpec {
    pub name: String,
    pub kind: StepKind,
    /// Expected output bytes per input byte.
    pub size_ratio: f64,
    /// CPU nanoseconds charged per input byte.
    #[serde(default)]
    pub compute_cost: f64,
    pub deterministic: bool,
    #[serde(default)]
    pub exec_mode: ExecMode,
    #[serde(default)]
    pub params: StepParams,
}

impl StepSpec {
    fn base(name: &str, kind: StepKind, size_ratio: f64, compute_cost: f64) -> StepSpec {
        StepSpec {
            name: name.to_string(),
            kind,
            size_ratio,
            compute_cost,
            deterministic: kind.is_deterministic(),
            exec_mode: ExecMode::Parallel,
            params: StepParams::default(),
        }
    }

    pub fn ingest(name: &str) -> StepSpec {
        StepSpec::base(name, StepKind::Ingest, 1.0, 0.0)
    }

    pub fn decode(name: &str, size_ratio: f64, compute_cost: f64) -> StepSpec {
        StepSpec::base(name, StepKind::Decode, size_ratio, compute_cost)
    }

    pub fn map_compute(name: &str, size_ratio: f64, compute_cost: f64) -> StepSpec {
        StepSpec::base(name, StepKind::MapCompute, size_ratio, compute_cost)
    }

    pub fn resize(name: &str, size_ratio: f64, compute_cost: f64) -> StepSpec {
        StepSpec::base(name, StepKind::Resize, size_ratio, compute_cost)
    }

    pub fn widen(name: &str, compute_cost: f64) -> StepSpec {
        StepSpec::base(name, StepKind::Widen, 4.0, compute_cost)
    }

    pub fn greyscale(name: &str, compute_cost: f64) -> StepSpec {
        StepSpec::base(name, StepKind::Greyscale, 1.0 / 3.0, compute_cost)
    }

    pub fn random_crop(name: &str, fraction: f64, compute_cost: f64) -> StepSpec {
        let mut s = StepSpec::base(name, StepKind::RandomCrop, fraction, compute_cost);
        s.params.crop_fraction = Some(fraction);
        s
    }

    /// RMS over non-overlapping windows of `period` elements, emitted as `f64`.
    pub fn aggregate(name: &str, period: u64, input: DType, compute_cost: f64) -> StepSpec {
        let ratio = DType::F64.width() as f64 / (period as f64 * input.width() as f64);
        let mut s = StepSpec::base(name, StepKind::Aggregate, ratio, compute_cost);
        s.params.period = Some(period);
        s
    }

    pub fn exclusive(mut self) -> StepSpec {
        self.exec_mode = ExecMode::Exclusive;
        self
    }

    pub fn with_out_dtype(mut self, dtype: DType) -> StepSpec {
        self.params.out_dtype = Some(dtype);
        self
    }

    pub fn with_channels(mut self, channels: u64) -> StepSpec {
        self.params.channels = Some(channels);
        self
    }

    pub fn with_cost(mut self, compute_cost: f64) -> StepSpec {
        self.compute_cost = compute_cost;
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.size_ratio.is_finite() && self.size_ratio > 0.0) {
            return Err(ModelError::InvalidRatio {
                step: self.name.clone(),
                ratio: self.size_ratio,
            });
        }
        if !(self.compute_cost.is_finite() && self.compute_cost >= 0.0) {
            return Err(ModelError::InvalidCost {
                step: self.name.clone(),
                cost: self.compute_cost,
            });
        }
        match (self.kind.is_deterministic(), self.deterministic) {
            (false, true) => Err(ModelError::NondeterministicMarkedDeterministic(self.name.clone())),
            (true, false) => Err(ModelError::DeterministicMarkedNondeterministic(self.name.clone())),
            _ => Ok(()),
        }
    }

    /// Rank of this step's output given the input rank.
    fn output_rank(&self, input_rank: usize) -> usize {
        match self.kind {
            StepKind::Ingest | StepKind::Aggregate => 1,
            StepKind::Decode | StepKind::MapCompute => {
                if self.params.channels.is_some() {
                    2
                } else {
                    1
                }
            }
            StepKind::Greyscale => input_rank.saturating_sub(1).max(1),
            StepKind::Resize | StepKind::Widen | StepKind::RandomCrop => input_rank,
        }
    }
}

/// A linear preprocessing chain over a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pipeline {
    pub source: DatasetDescriptor,
    pub steps: Vec<StepSpec>,
}

impl Pipeline {
    pub fn new(source: DatasetDescriptor, steps: Vec<StepSpec>) -> Result<Pipeline, ModelError> {
        let p = Pipeline { source, steps };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let mut names = HashSet::new();
        let mut saw_ingest = false;
        for (i, step) in self.steps.iter().enumerate() {
            if step.kind == StepKind::Ingest {
                if i != 0 {
                    return Err(ModelError::MisplacedIngest(i));
                }
                saw_ingest = true;
            }
            step.validate()?;
            if !names.insert(step.name.as_str()) {
                return Err(ModelError::DuplicateStepName(step.name.clone()));
            }
        }
        if !saw_ingest {
            return Err(ModelError::MissingIngest);
        }
        Ok(())
    }

    /// Largest legal split: the number of steps before the first
    /// non-deterministic one, or the full length when every step is deterministic.
    pub fn max_split(&self) -> usize {
        self.steps
            .iter()
            .position(|s| !s.deterministic)
            .unwrap_or(self.steps.len())
    }

    pub fn offline_steps(&self, split: usize) -> &[StepSpec] {
        &self.steps[..split.min(self.steps.len())]
    }

    /// Steps replayed every epoch. At split 0 this includes the ingest step.
    pub fn online_steps(&self, split: usize) -> &[StepSpec] {
        &self.steps[split.min(self.steps.len())..]
    }

    /// Name of the representation materialized at `split`.
    pub fn strategy_label(&self, split: usize) -> String {
        match split {
            0 => "unprocessed".to_string(),
            1 => "concatenated".to_string(),
            m => self
                .steps
                .get(m - 1)
                .map(|s| s.name.clone())
                .unwrap_or_else(|| format!("split-{m}")),
        }
    }

    pub fn step_index(&self, name: &str) -> Option<usize> {
        self.steps.iter().position(|s| s.name == name)
    }

    /// Copy of this pipeline with the named step removed.
    pub fn without_step(&self, name: &str) -> Pipeline {
        let mut p = self.clone();
        p.steps.retain(|s| s.name != name);
        p
    }

    /// Copy of this pipeline with `step` inserted before position `index`.
    pub fn with_step_inserted(&self, index: usize, step: StepSpec) -> Result<Pipeline, ModelError> {
        let mut p = self.clone();
        p.steps.insert(index.min(p.steps.len()), step);
        p.validate()?;
        Ok(p)
    }

    /// Expected payload bytes after the first `split` steps, without framing.
    pub fn predict_payload(&self, split: usize, source_bytes: u64) -> f64 {
        self.steps
            .iter()
            .take(split)
            .skip(1)
            .fold(source_bytes as f64, |acc, s| acc * s.size_ratio)
    }

    /// Rank of the tensors materialized at `split`.
    pub fn rank_at(&self, split: usize) -> usize {
        self.steps
            .iter()
            .take(split)
            .fold(1, |rank, s| s.output_rank(rank))
    }
}

/// Container framing bytes per record for a tensor of `rank`:
/// length + length CRC + payload CRC + dtype/rank bytes + dims.
pub fn record_framing_bytes(rank: usize) -> u64 {
    8 + 4 + 4 + 2 + 8 * rank as u64
}

/// Expected on-store size of the representation materialized at `split`.
///
/// Split 0 is the raw source. Later splits multiply the source size by the
/// size ratios of the transforms run offline and add per-record framing plus
/// one container header.
pub fn predict_storage(pipeline: &Pipeline, split: usize, source_bytes: u64) -> u64 {
    if split == 0 {
        return source_bytes;
    }
    let payload = pipeline.predict_payload(split, source_bytes);
    let framing = pipeline.source.sample_count * record_framing_bytes(pipeline.rank_at(split))
        + crate::recordio::HEADER_LEN as u64;
    payload.round() as u64 + framing
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Compression {
    #[default]
    None,
    Gzip,
    Zlib,
}

impl Compression {
    pub const ALL: [Compression; 3] = [Compression::None, Compression::Gzip, Compression::Zlib];

    pub fn code(self) -> u8 {
        match self {
            Compression::None => 0,
            Compression::Gzip => 1,
            Compression::Zlib => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Compression> {
        Compression::ALL.get(code as usize).copied()
    }

    /// File extension of a container written with this compression.
    pub fn extension(self) -> &'static str {
        match self {
            Compression::None => "prc",
            Compression::Gzip => "prc.gz",
            Compression::Zlib => "prc.zz",
        }
    }
}

impl fmt::Display for Compression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Compression::None => "none",
            Compression::Gzip => "gzip",
            Compression::Zlib => "zlib",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CacheMode {
    #[default]
    NoCache,
    /// On-store bytes kept in memory; decompression and decoding still run.
    SerializedCache,
    /// Decoded tensors kept in memory at the load point.
    SampleCache,
}

impl CacheMode {
    pub const ALL: [CacheMode; 3] = [
        CacheMode::NoCache,
        CacheMode::SerializedCache,
        CacheMode::SampleCache,
    ];
}

impl fmt::Display for CacheMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CacheMode::NoCache => "no-cache",
            CacheMode::SerializedCache => "serialized-cache",
            CacheMode::SampleCache => "sample-cache",
        })
    }
}

/// A split position plus the options used to materialize and replay it.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Strategy {
    pub split_index: usize,
    #[serde(default)]
    pub compression: Compression,
    pub shards: u32,
    pub parallelism: u32,
    #[serde(default)]
    pub cache_mode: CacheMode,
    #[serde(default)]
    pub shuffle_buffer: usize,
}

impl Strategy {
    pub fn new(split_index: usize) -> Strategy {
        Strategy {
            split_index,
            compression: Compression::None,
            shards: 1,
            parallelism: 1,
            cache_mode: CacheMode::NoCache,
            shuffle_buffer: 0,
        }
    }

    pub fn with_compression(mut self, c: Compression) -> Strategy {
        self.compression = c;
        self
    }

    pub fn with_shards(mut self, shards: u32) -> Strategy {
        self.shards = shards;
        self
    }

    pub fn with_parallelism(mut self, parallelism: u32) -> Strategy {
        self.parallelism = parallelism;
        self
    }

    pub fn with_cache(mut self, cache_mode: CacheMode) -> Strategy {
        self.cache_mode = cache_mode;
        self
    }

    pub fn with_shuffle(mut self, buffer: usize) -> Strategy {
        self.shuffle_buffer = buffer;
        self
    }

    pub fn validate(&self, pipeline: &Pipeline) -> Result<(), ModelError> {
        let max = pipeline.max_split();
        if self.split_index > max {
            return Err(ModelError::IllegalSplit {
                split: self.split_index,
                max,
            });
        }
        if self.split_index == 0 && self.compression != Compression::None {
            return Err(ModelError::InvalidStrategy(
                "split 0 materializes nothing and cannot be compressed".into(),
            ));
        }
        if self.shards == 0 {
            return Err(ModelError::InvalidStrategy("shards must be at least 1".into()));
        }
        if self.parallelism == 0 {
            return Err(ModelError::InvalidStrategy(
                "parallelism must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Stable identifier, e.g. `resized/gzip/s8/p8/no-cache/b0`.
    pub fn id(&self, pipeline: &Pipeline) -> String {
        format!(
            "{}/{}/s{}/p{}/{}/b{}",
            pipeline.strategy_label(self.split_index),
            self.compression,
            if self.split_index == 0 { 1 } else { self.shards },
            self.parallelism,
            self.cache_mode,
            self.shuffle_buffer
        )
    }

    /// Identifier of the materialized artifact; strategies that differ only in
    /// online options share it.
    pub fn artifact_id(&self, pipeline: &Pipeline) -> String {
        format!(
            "{}-{}-s{}",
            pipeline.strategy_label(self.split_index),
            self.compression,
            self.shards
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum SplitSelection {
    #[default]
    All,
    List(Vec<usize>),
}

impl Serialize for SplitSelection {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            SplitSelection::All => s.serialize_str("all"),
            SplitSelection::List(v) => v.serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for SplitSelection {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        SplitSelection::from_all_str(d)
    }
}

impl SplitSelection {
    fn from_all_str<'de, D: serde::Deserializer<'de>>(d: D) -> Result<SplitSelection, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Word(String),
            List(Vec<usize>),
        }
        match Raw::deserialize(d)? {
            Raw::Word(w) if w == "all" => Ok(SplitSelection::All),
            Raw::Word(w) => Err(serde::de::Error::custom(format!(
                "splits must be \"all\" or a list, got \"{w}\""
            ))),
            Raw::List(v) => Ok(SplitSelection::List(v)),
        }
    }
}

/// Materialization and replay options crossed with every legal split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptionGrid {
    #[serde(default)]
    pub splits: SplitSelection,
    #[serde(default = "default_compressions")]
    pub compressions: Vec<Compression>,
    #[serde(default = "default_one")]
    pub shards: Vec<u32>,
    #[serde(default = "default_one")]
    pub parallelisms: Vec<u32>,
    #[serde(default = "default_cache_modes")]
    pub cache_modes: Vec<CacheMode>,
    #[serde(default = "default_shuffle")]
    pub shuffle_buffers: Vec<usize>,
}

fn default_compressions() -> Vec<Compression> {
    vec![Compression::None]
}
fn default_one() -> Vec<u32> {
    vec![1]
}
fn default_cache_modes() -> Vec<CacheMode> {
    vec![CacheMode::NoCache]
}
fn default_shuffle() -> Vec<usize> {
    vec![0]
}

impl Default for OptionGrid {
    fn default() -> Self {
        OptionGrid {
            splits: SplitSelection::All,
            compressions: default_compressions(),
            shards: default_one(),
            parallelisms: default_one(),
            cache_modes: default_cache_modes(),
            shuffle_buffers: default_shuffle(),
        }
    }
}

impl OptionGrid {
    /// One option set: no compression, `parallelism` workers, one shard per worker.
    pub fn single(parallelism: u32) -> OptionGrid {
        OptionGrid {
            shards: vec![parallelism],
            parallelisms: vec![parallelism],
            ..OptionGrid::default()
        }
    }
}

/// Every legal split crossed with the option grid.
///
/// Split 0 has no materialized artifact, so it is paired only with
/// `Compression::None` and a single shard value.
pub fn enumerate_strategies(pipeline: &Pipeline, grid: &OptionGrid) -> Vec<Strategy> {
    let max = pipeline.max_split();
    let splits: Vec<usize> = match &grid.splits {
        SplitSelection::All => (0..=max).collect(),
        SplitSelection::List(v) => {
            let mut v: Vec<usize> = v.iter().copied().filter(|&m| m <= max).collect();
            v.sort_unstable();
            v.dedup();
            v
        }
    };
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for &m in &splits {
        for &compression in &grid.compressions {
            if m == 0 && compression != Compression::None {
                continue;
            }
            for &shards in &grid.shards {
                let shards = if m == 0 { 1 } else { shards.max(1) };
                for &parallelism in &grid.parallelisms {
                    for &cache_mode in &grid.cache_modes {
                        for &shuffle_buffer in &grid.shuffle_buffers {
                            let s = Strategy {
                                split_index: m,
                                compression,
                                shards,
                                parallelism: parallelism.max(1),
                                cache_mode,
                                shuffle_buffer,
                            };
                            if seen.insert(s.clone()) {
                                out.push(s);
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Weights of the minimized objective over normalized time, storage and throughput.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveWeights {
    pub w_p: f64,
    pub w_s: f64,
    pub w_t: f64,
}

impl ObjectiveWeights {
    pub fn new(w_p: f64, w_s: f64, w_t: f64) -> ObjectiveWeights {
        ObjectiveWeights { w_p, w_s, w_t }
    }

    pub fn is_finite(&self) -> bool {
        self.w_p.is_finite() && self.w_s.is_finite() && self.w_t.is_finite()
    }

    pub fn sum(&self) -> f64 {
        self.w_p + self.w_s + self.w_t
    }
}

impl Default for ObjectiveWeights {
    /// Throughput only.
    fn default() -> Self {
        ObjectiveWeights::new(0.0, 0.0, 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workloads::DatasetDescriptor;
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest};
    use proptest::strategy::Strategy as Gen;

    fn src() -> DatasetDescriptor {
        DatasetDescriptor::synthetic(100, 1_000_000, DType::U8)
    }

    fn pipe(steps: Vec<StepSpec>) -> Pipeline {
        Pipeline {
            source: src(),
            steps,
        }
    }

    #[test]
    fn dtype_widths_follow_codes() {
        let widths: Vec<usize> = DType::ALL.iter().map(|d| d.width()).collect();
        assert_eq!(widths, vec![1, 2, 4, 4, 8]);
        for d in DType::ALL {
            assert_eq!(DType::from_code(d.code()), Some(d));
        }
        assert_eq!(DType::from_code(5), None);
    }

    #[test]
    fn tensor_checks_payload_length_and_rank() {
        assert!(Tensor::new(DType::F32, vec![2, 3], vec![0; 24]).is_ok());
        assert!(matches!(
            Tensor::new(DType::F32, vec![2, 3], vec![0; 23]),
            Err(ModelError::ShapeMismatch { .. })
        ));
        assert!(matches!(
            Tensor::new(DType::U8, vec![1; 9], vec![0; 1]),
            Err(ModelError::RankTooLarge(9))
        ));
        // scalar
        assert!(Tensor::new(DType::F64, vec![], vec![0; 8]).is_ok());
        assert!(Tensor::new(DType::U8, vec![0, 5], vec![]).is_ok());
    }

    #[test]
    fn validate_accepts_well_formed_pipeline() {
        let p = pipe(vec![
            StepSpec::ingest("read"),
            StepSpec::decode("decoded", 3.0, 1.0),
            StepSpec::resize("resized", 0.5, 1.0),
        ]);
        assert_eq!(p.validate(), Ok(()));
    }

    #[test]
    fn validate_rejects_misplaced_ingest() {
        let p = pipe(vec![StepSpec::decode("decoded", 3.0, 1.0), StepSpec::ingest("read")]);
        assert_eq!(p.validate(), Err(ModelError::MisplacedIngest(1)));
        let p = pipe(vec![StepSpec::decode("decoded", 3.0, 1.0)]);
        assert_eq!(p.validate(), Err(ModelError::MissingIngest));
    }

    #[test]
    fn validate_rejects_zero_ratio() {
        let p = pipe(vec![StepSpec::ingest("read"), StepSpec::decode("decoded", 0.0, 1.0)]);
        assert!(matches!(p.validate(), Err(ModelError::InvalidRatio { .. })));
    }

    #[test]
    fn validate_rejects_duplicates_and_bad_determinism() {
        let p = pipe(vec![
            StepSpec::ingest("read"),
            StepSpec::decode("x", 1.0, 0.0),
            StepSpec::resize("x", 1.0, 0.0),
        ]);
        assert_eq!(p.validate(), Err(ModelError::DuplicateStepName("x".into())));

        let mut crop = StepSpec::random_crop("crop", 0.5, 0.0);
        crop.deterministic = true;
        let p = pipe(vec![StepSpec::ingest("read"), crop]);
        assert_eq!(
            p.validate(),
            Err(ModelError::NondeterministicMarkedDeterministic("crop".into()))
        );
    }

    fn splits(p: &Pipeline) -> Vec<usize> {
        let mut v: Vec<usize> = enumerate_strategies(p, &OptionGrid::default())
            .iter()
            .map(|s| s.split_index)
            .collect();
        v.dedup();
        v
    }

    #[test]
    fn enumeration_stops_at_random_crop() {
        let p = pipe(vec![
            StepSpec::ingest("read"),
            StepSpec::decode("decoded", 3.0, 1.0),
            StepSpec::random_crop("crop", 0.5, 0.0),
            StepSpec::widen("widened", 0.0),
        ]);
        assert_eq!(splits(&p), vec![0, 1, 2]);
    }

    #[test]
    fn enumeration_covers_every_split_when_deterministic() {
        let p = pipe(vec![
            StepSpec::ingest("read"),
            StepSpec::decode("decoded", 3.0, 1.0),
            StepSpec::resize("resized", 0.5, 0.0),
            StepSpec::widen("widened", 0.0),
        ]);
        assert_eq!(splits(&p), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn split_zero_admits_no_compression() {
        let p = pipe(vec![
            StepSpec::ingest("read"),
            StepSpec::decode("a", 1.0, 0.0),
            StepSpec::decode("b", 1.0, 0.0),
            StepSpec::decode("c", 1.0, 0.0),
        ]);
        let grid = OptionGrid {
            compressions: Compression::ALL.to_vec(),
            ..OptionGrid::default()
        };
        let s = enumerate_strategies(&p, &grid);
        assert_eq!(s.len(), 13);
        assert!(s
            .iter()
            .all(|s| s.split_index > 0 || s.compression == Compression::None));
        let empty = OptionGrid {
            compressions: vec![],
            ..OptionGrid::default()
        };
        assert!(enumerate_strategies(&p, &empty).is_empty());
    }

    #[test]
    fn labels_name_the_materialized_representation() {
        let p = pipe(vec![
            StepSpec::ingest("read"),
            StepSpec::decode("decoded", 3.0, 1.0),
            StepSpec::resize("resized", 0.5, 0.0),
        ]);
        let labels: Vec<String> = (0..=3).map(|m| p.strategy_label(m)).collect();
        assert_eq!(labels, ["unprocessed", "concatenated", "decoded", "resized"]);
    }

    #[test]
    fn strategy_validation() {
        let p = pipe(vec![StepSpec::ingest("read"), StepSpec::decode("d", 2.0, 0.0)]);
        assert!(Strategy::new(2).validate(&p).is_ok());
        assert!(matches!(
            Strategy::new(3).validate(&p),
            Err(ModelError::IllegalSplit { split: 3, max: 2 })
        ));
        assert!(Strategy::new(0)
            .with_compression(Compression::Gzip)
            .validate(&p)
            .is_err());
        assert!(Strategy::new(1).with_shards(0).validate(&p).is_err());
    }

    #[test]
    fn widen_quadruples_prediction() {
        // 347 GB resized representation widened to f32.
        let gb = 1_000_000_000u64;
        let mut p = pipe(vec![StepSpec::ingest("read"), StepSpec::widen("pixel-centered", 0.0)]);
        p.source.sample_count = 0;
        assert_eq!(predict_storage(&p, 2, 347 * gb), 1388 * gb + 16);
        assert_eq!(predict_storage(&p, 0, 347 * gb), 347 * gb);
    }

    #[test]
    fn prediction_applies_ratios_and_framing() {
        // [Ingest, x0.5, x4] over 100 MB, both transforms offline.
        let mut p = pipe(vec![
            StepSpec::ingest("read"),
            StepSpec::decode("half", 0.5, 0.0),
            StepSpec::decode("quad", 4.0, 0.0),
        ]);
        p.source.sample_count = 100;
        let framing = 100 * (8 + 4 + 4 + 2 + 8) + 16;
        assert_eq!(predict_storage(&p, 3, 100_000_000), 200_000_000 + framing);
        assert_eq!(predict_storage(&p, 1, 100_000_000), 100_000_000 + framing);
    }

    fn arb_step(i: usize) -> impl Gen<Value = StepSpec> {
        (0u8..7, 0.1f64..5.0).prop_map(move |(k, r)| {
            let name = format!("s{i}");
            match k {
                0 => StepSpec::decode(&name, r, 0.0),
                1 => StepSpec::resize(&name, r, 0.0),
                2 => StepSpec::widen(&name, 0.0),
                3 => StepSpec::greyscale(&name, 0.0),
                4 => StepSpec::map_compute(&name, r, 0.0),
                5 => StepSpec::random_crop(&name, r.min(1.0), 0.0),
                _ => StepSpec::aggregate(&name, 4, DType::F64, 0.0),
            }
        })
    }

    fn arb_pipeline() -> impl Gen<Value = Pipeline> {
        (1usize..8)
            .prop_flat_map(|n| (0..n).map(arb_step).collect::<Vec<_>>())
            .prop_map(|mut steps| {
                steps.insert(0, StepSpec::ingest("read"));
                Pipeline {
                    source: DatasetDescriptor::synthetic(10, 4096, DType::U8),
                    steps,
                }
            })
    }

    proptest! {
        #[test]
        fn enumeration_never_reaches_nondeterminism(p in arb_pipeline()) {
            for s in enumerate_strategies(&p, &OptionGrid::default()) {
                prop_assert!(p.offline_steps(s.split_index).iter().all(|st| st.deterministic));
                prop_assert!(s.validate(&p).is_ok());
            }
        }

        #[test]
        fn payload_prediction_is_multiplicative(p in arb_pipeline(), src in 1u64..1_000_000_000) {
            for m in 2..=p.steps.len() {
                let prev = p.predict_payload(m - 1, src);
                let cur = p.predict_payload(m, src);
                let expect = prev * p.steps[m - 1].size_ratio;
                prop_assert!((cur - expect).abs() <= 1e-9 * expect.abs().max(1.0));
            }
        }

        #[test]
        fn validation_matches_invariants(p in arb_pipeline(), flip in any::<bool>(), idx in 0usize..8) {
            let mut p = p;
            let idx = idx % p.steps.len();
            if flip {
                p.steps[idx].deterministic = !p.steps[idx].deterministic;
            }
            let expected_ok = p.steps.iter().all(|s| s.deterministic == s.kind.is_deterministic());
            prop_assert_eq!(p.validate().is_ok(), expected_ok);
        }
    }
}

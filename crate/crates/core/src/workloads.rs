//! Synthetic datasets and pipeline presets.
//!
//! Sample content is seeded per sample, so any worker can produce any sample
//! and generation is reproducible regardless of parallelism. Each 256-byte
//! block of a sample starts with random bytes and ends with zeros; the zero
//! share is the dataset's `compressibility`.

use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Instant;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{DType, Pipeline, StepSpec, Tensor};
use crate::recordio::{self, RecordError};
use crate::storage::{Storage, StorageError};

pub const DESCRIPTOR_FILE: &str = "descriptor.json";
/// Files per directory in the many-small-files layout.
pub const FILES_PER_DIR: u64 = 4096;
const BLOCK: usize = 256;

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("total size must be positive")]
    ZeroTotal,
    #[error("sample size {bytes_per_sample} exceeds total size {total}")]
    SampleLargerThanTotal { bytes_per_sample: u64, total: u64 },
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error("invalid dataset descriptor: {0}")]
    InvalidDescriptor(String),
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error("descriptor json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// One raw file per sample.
    ManySmallFiles,
    /// Samples already packed into record containers.
    Containers,
}

/// Where a dataset lives and what its samples look like.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetDescriptor {
    pub layout: Layout,
    pub sample_count: u64,
    pub bytes_per_sample: u64,
    pub dtype: DType,
    /// Directory relative to the storage root.
    pub root: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// Fraction of zero bytes in every sample.
    #[serde(default)]
    pub compressibility: f64,
    /// Container count for the `Containers` layout.
    #[serde(default = "one")]
    pub shards: u32,
}

fn one() -> u32 {
    1
}

impl DatasetDescriptor {
    pub fn synthetic(sample_count: u64, bytes_per_sample: u64, dtype: DType) -> DatasetDescriptor {
        DatasetDescriptor {
            layout: Layout::ManySmallFiles,
            sample_count,
            bytes_per_sample,
            dtype,
            root: PathBuf::from(format!("datasets/synthetic-{dtype}-{bytes_per_sample}")),
            seed: 0,
            compressibility: 0.0,
            shards: 1,
        }
    }

    /// `sample_count = round(total / bytes_per_sample)`.
    pub fn for_total(total_bytes: u64, bytes_per_sample: u64, dtype: DType) -> Result<DatasetDescriptor, WorkloadError> {
        if total_bytes == 0 || bytes_per_sample == 0 {
            return Err(WorkloadError::ZeroTotal);
        }
        if bytes_per_sample > total_bytes {
            return Err(WorkloadError::SampleLargerThanTotal {
                bytes_per_sample,
                total: total_bytes,
            });
        }
        let count = (total_bytes as f64 / bytes_per_sample as f64).round() as u64;
        Ok(DatasetDescriptor::synthetic(count, bytes_per_sample, dtype))
    }

    pub fn with_root(mut self, root: impl Into<PathBuf>) -> DatasetDescriptor {
        self.root = root.into();
        self
    }

    pub fn with_seed(mut self, seed: u64) -> DatasetDescriptor {
        self.seed = seed;
        self
    }

    pub fn with_compressibility(mut self, c: f64) -> DatasetDescriptor {
        self.compressibility = c;
        self
    }

    pub fn with_layout(mut self, layout: Layout) -> DatasetDescriptor {
        self.layout = layout;
        self
    }

    pub fn with_shards(mut self, shards: u32) -> DatasetDescriptor {
        self.shards = shards;
        self
    }

    pub fn with_sample_count(mut self, n: u64) -> DatasetDescriptor {
        self.sample_count = n;
        self
    }

    pub fn validate(&self) -> Result<(), WorkloadError> {
        let bad = |m: String| Err(WorkloadError::InvalidDescriptor(m));
        if self.sample_count == 0 {
            return bad("sample_count must be positive".into());
        }
        if self.bytes_per_sample < self.dtype.width() as u64 {
            return bad(format!(
                "bytes_per_sample {} is smaller than one {} element",
                self.bytes_per_sample, self.dtype
            ));
        }
        if !(0.0..=1.0).contains(&self.compressibility) {
            return bad(format!("compressibility {} is outside [0, 1]", self.compressibility));
        }
        if self.shards == 0 {
            return bad("shards must be positive".into());
        }
        if self.root.is_absolute() {
            return bad("root must be relative to the storage root".into());
        }
        Ok(())
    }

    /// Element count of every sample; sizes are rounded down to whole elements.
    pub fn elements_per_sample(&self) -> u64 {
        self.bytes_per_sample / self.dtype.width() as u64
    }

    pub fn sample_bytes(&self) -> u64 {
        self.elements_per_sample() * self.dtype.width() as u64
    }

    pub fn total_bytes(&self) -> u64 {
        self.sample_count * self.sample_bytes()
    }

    /// `{root}/{index / 4096:05}/{index:09}.raw`
    pub fn sample_path(&self, index: u64) -> PathBuf {
        self.root
            .join(format!("{:05}", index / FILES_PER_DIR))
            .join(format!("{index:09}.raw"))
    }

    pub fn container_paths(&self) -> Vec<PathBuf> {
        recordio::shard_paths(&self.root, self.shards, crate::model::Compression::None)
    }

    /// Deterministic content of sample `index`.
    pub fn sample_tensor(&self, index: u64) -> Tensor {
        let data = sample_content(self.seed, index, self.dtype, self.compressibility, self.sample_bytes() as usize);
        Tensor::from_bytes(self.dtype, data).expect("whole elements")
    }

    /// Parses a raw sample file back into its tensor.
    pub fn tensor_from_raw(&self, bytes: Vec<u8>) -> Result<Tensor, WorkloadError> {
        Tensor::from_bytes(self.dtype, bytes)
            .map_err(|e| WorkloadError::InvalidDescriptor(format!("raw sample: {e}")))
    }

    /// On-store size of the source, as generated.
    pub fn stored_bytes(&self, storage: &dyn Storage) -> Result<u64, WorkloadError> {
        match self.layout {
            Layout::ManySmallFiles => Ok(self.total_bytes()),
            Layout::Containers => {
                let mut total = 0;
                for p in self.container_paths() {
                    total += storage.size(&p)?;
                }
                Ok(total)
            }
        }
    }

    pub fn load(storage: &dyn Storage, root: &Path) -> Result<DatasetDescriptor, WorkloadError> {
        let path = root.join(DESCRIPTOR_FILE);
        let mut s = String::new();
        storage
            .open_read(&path)?
            .read_to_string(&mut s)
            .map_err(|e| StorageError::from_io(&path, e))?;
        let d: DatasetDescriptor = serde_json::from_str(&s)?;
        d.validate()?;
        Ok(d)
    }

    /// True when the descriptor on store matches this one.
    pub fn is_generated(&self, storage: &dyn Storage) -> bool {
        DatasetDescriptor::load(storage, &self.root).is_ok_and(|d| &d == self)
    }
}

/// Seeded sample bytes: per 256-byte block, a random prefix of
/// `round((1 - c) * 256)` bytes (whole elements) and zeros after it.
pub fn sample_content(seed: u64, index: u64, dtype: DType, compressibility: f64, len: usize) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let w = dtype.width();
    let live = (((1.0 - compressibility) * BLOCK as f64).round() as usize / w) * w;
    let mut out = vec![0u8; len];
    for block in out.chunks_mut(BLOCK) {
        let n = live.min(block.len());
        let head = &mut block[..n];
        match dtype {
            DType::F32 => {
                for e in head.chunks_exact_mut(4) {
                    e.copy_from_slice(&rng.gen_range(-1.0f32..1.0).to_le_bytes());
                }
            }
            DType::F64 => {
                for e in head.chunks_exact_mut(8) {
                    e.copy_from_slice(&rng.gen_range(-1.0f64..1.0).to_le_bytes());
                }
            }
            _ => rng.fill_bytes(head),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateStats {
    pub samples: u64,
    pub bytes: u64,
    pub seconds: f64,
}

/// Writes `desc` to `storage` with `parallelism` writer threads and stores
/// `descriptor.json` next to the data.
pub fn generate(
    storage: &Arc<dyn Storage>,
    desc: &DatasetDescriptor,
    parallelism: u32,
) -> Result<GenerateStats, WorkloadError> {
    desc.validate()?;
    let started = Instant::now();
    storage.remove_all(&desc.root)?;
    let bytes = match desc.layout {
        Layout::ManySmallFiles => {
            let next = AtomicU64::new(0);
            let written = AtomicU64::new(0);
            thread::scope(|s| -> Result<(), WorkloadError> {
                let handles: Vec<_> = (0..parallelism.max(1))
                    .map(|_| {
                        s.spawn(|| -> Result<(), WorkloadError> {
                            loop {
                                let i = next.fetch_add(1, Ordering::Relaxed);
                                if i >= desc.sample_count {
                                    return Ok(());
                                }
                                let t = desc.sample_tensor(i);
                                let path = desc.sample_path(i);
                                let mut w = storage.open_write(&path)?;
                                w.write_all(t.data())
                                    .and_then(|_| w.flush())
                                    .map_err(|e| StorageError::from_io(&path, e))?;
                                written.fetch_add(t.byte_len() as u64, Ordering::Relaxed);
                            }
                        })
                    })
                    .collect();
                handles.into_iter().try_for_each(|h| h.join().unwrap())
            })?;
            written.into_inner()
        }
        Layout::Containers => {
            let samples = (0..desc.sample_count).map(|i| desc.sample_tensor(i));
            let stats = recordio::write_container(
                storage,
                samples,
                &desc.root,
                crate::model::Compression::None,
                desc.shards,
            )?;
            stats.bytes
        }
    };
    let path = desc.root.join(DESCRIPTOR_FILE);
    let mut w = storage.open_write(&path)?;
    w.write_all(serde_json::to_string_pretty(desc)?.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| StorageError::from_io(&path, e))?;
    Ok(GenerateStats {
        samples: desc.sample_count,
        bytes,
        seconds: started.elapsed().as_secs_f64(),
    })
}

/// Generates `desc` unless an identical descriptor is already on store.
pub fn ensure_generated(
    storage: &Arc<dyn Storage>,
    desc: &DatasetDescriptor,
    parallelism: u32,
) -> Result<(), WorkloadError> {
    if !desc.is_generated(storage.as_ref()) {
        generate(storage, desc, parallelism)?;
    }
    Ok(())
}

/// `sample_count = round(total / bytes_per_sample)` samples under a root
/// named after the request.
pub fn generate_synthetic(
    storage: &Arc<dyn Storage>,
    total_bytes: u64,
    bytes_per_sample: u64,
    dtype: DType,
    layout: Layout,
    seed: u64,
    compressibility: f64,
) -> Result<DatasetDescriptor, WorkloadError> {
    let desc = DatasetDescriptor::for_total(total_bytes, bytes_per_sample, dtype)?
        .with_layout(layout)
        .with_seed(seed)
        .with_compressibility(compressibility);
    generate(storage, &desc, 4)?;
    Ok(desc)
}

/// Sample sizes of the sample-size sweep: 10 kB doubling up to 20.48 MB.
pub fn grid_sample_sizes() -> Vec<u64> {
    (0..12).map(|k| 10_000u64 << k).collect()
}

/// One dataset per (dtype, sample size) of the sweep, each `total_bytes` large.
pub fn synthetic_grid(total_bytes: u64) -> Result<Vec<DatasetDescriptor>, WorkloadError> {
    let mut out = Vec::new();
    for dtype in [DType::U8, DType::F32] {
        for bps in grid_sample_sizes() {
            if bps <= total_bytes {
                out.push(
                    DatasetDescriptor::for_total(total_bytes, bps, dtype)?
                        .with_root(format!("datasets/grid/{dtype}-{bps}")),
                );
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PresetName {
    #[serde(rename = "cv")]
    Cv,
    #[serde(rename = "cv2-jpg-like")]
    Cv2JpgLike,
    #[serde(rename = "cv2-png-like")]
    Cv2PngLike,
    #[serde(rename = "nlp")]
    Nlp,
    #[serde(rename = "nilm")]
    Nilm,
    #[serde(rename = "audio-mp3-like")]
    AudioMp3Like,
    #[serde(rename = "audio-flac-like")]
    AudioFlacLike,
    #[serde(rename = "synthetic-grid")]
    SyntheticGrid,
}

impl PresetName {
    pub const ALL: [PresetName; 8] = [
        PresetName::Cv,
        PresetName::Cv2JpgLike,
        PresetName::Cv2PngLike,
        PresetName::Nlp,
        PresetName::Nilm,
        PresetName::AudioMp3Like,
        PresetName::AudioFlacLike,
        PresetName::SyntheticGrid,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PresetName::Cv => "cv",
            PresetName::Cv2JpgLike => "cv2-jpg-like",
            PresetName::Cv2PngLike => "cv2-png-like",
            PresetName::Nlp => "nlp",
            PresetName::Nilm => "nilm",
            PresetName::AudioMp3Like => "audio-mp3-like",
            PresetName::AudioFlacLike => "audio-flac-like",
            PresetName::SyntheticGrid => "synthetic-grid",
        }
    }
}

impl fmt::Display for PresetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PresetName {
    type Err = WorkloadError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PresetName::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| WorkloadError::UnknownPreset(s.to_string()))
    }
}

/// Default dataset scale relative to the full-size datasets.
pub const DEFAULT_SCALE: f64 = 1.0 / 64.0;

/// Full-size sample count and average sample bytes per preset.
fn full_size(name: PresetName) -> (u64, u64) {
    match name {
        PresetName::Cv => (1_300_000, 114_700),
        PresetName::Cv2JpgLike => (4_890, 520_300),
        PresetName::Cv2PngLike => (4_890, 17_417_600),
        PresetName::Nlp => (181_000, 42_700),
        PresetName::Nilm => (268_000, 147_700),
        PresetName::AudioMp3Like => (13_000, 19_700),
        PresetName::AudioFlacLike => (29_000, 231_900),
        PresetName::SyntheticGrid => (1_536_000, 10_000),
    }
}

/// A preset pipeline at the default scale.
pub fn preset(name: &str) -> Result<Pipeline, WorkloadError> {
    preset_scaled(name.parse()?, DEFAULT_SCALE)
}

/// A preset pipeline whose source holds `scale` of the full sample count.
///
/// Size ratios follow the relative sizes of each dataset's representations;
/// compute costs (CPU ns per input byte) place each pipeline's bottleneck:
///
/// * `cv`: decode is the CPU hot spot, resize shrinks, widen quadruples.
/// * `cv2-jpg-like` / `cv2-png-like`: high-resolution images, heavy decode.
/// * `nlp`: exclusive HTML parsing, cheap tokenization, very heavy 760x embedding.
/// * `nilm`: float64 containers, exclusive decode, cheap aggregation.
/// * `audio-*`: decode to i16, heavy spectrogram.
/// * `synthetic-grid`: read only, the 10 kB point of the sample-size sweep.
pub fn preset_scaled(name: PresetName, scale: f64) -> Result<Pipeline, WorkloadError> {
    let (full_count, bps) = full_size(name);
    let count = ((full_count as f64 * scale).round() as u64).max(1);
    let src = |dtype: DType, c: f64| {
        DatasetDescriptor::synthetic(count, bps, dtype)
            .with_root(format!("datasets/{name}"))
            .with_compressibility(c)
    };
    let read = StepSpec::ingest("read");
    let (source, steps) = match name {
        PresetName::Cv => (
            src(DType::U8, 0.05),
            vec![
                read,
                StepSpec::decode("decoded", 5.67, 20.0).with_channels(3),
                StepSpec::resize("resized", 1.0 / 2.4, 8.0),
                StepSpec::widen("pixel-centered", 0.5),
                StepSpec::random_crop("random-cropped", 0.875, 0.2),
            ],
        ),
        PresetName::Cv2JpgLike => (
            src(DType::U8, 0.05),
            vec![
                read,
                StepSpec::decode("decoded", 25.0, 30.0).with_channels(3),
                StepSpec::resize("resized", 0.0227, 4.0),
                StepSpec::widen("pixel-centered", 0.5),
                StepSpec::random_crop("random-cropped", 0.875, 0.2),
            ],
        ),
        PresetName::Cv2PngLike => (
            src(DType::U8, 0.05),
            vec![
                read,
                StepSpec::decode("decoded", 0.75, 40.0).with_channels(3),
                StepSpec::resize("resized", 0.0227, 4.0),
                StepSpec::widen("pixel-centered", 0.5),
                StepSpec::random_crop("random-cropped", 0.875, 0.2),
            ],
        ),
        PresetName::Nlp => (
            src(DType::U8, 0.05),
            vec![
                read,
                StepSpec::decode("decoded", 0.077, 2_000.0).exclusive(),
                StepSpec::map_compute("bpe-encoded", 1.09, 40.0).with_out_dtype(DType::I32),
                StepSpec::map_compute("embedded", 760.0, 4_000.0)
                    .with_out_dtype(DType::F32)
                    .with_channels(768),
            ],
        ),
        PresetName::Nilm => (
            src(DType::F64, 0.05).with_layout(Layout::Containers),
            vec![
                read,
                StepSpec::decode("decoded", 6.93, 30.0)
                    .exclusive()
                    .with_out_dtype(DType::F64)
                    .with_channels(2),
                StepSpec::aggregate("aggregated", 85, DType::F64, 2.0),
            ],
        ),
        PresetName::AudioMp3Like => (
            src(DType::U8, 0.05),
            vec![
                read,
                StepSpec::decode("decoded", 4.0, 60.0).with_out_dtype(DType::I16),
                StepSpec::map_compute("spectrogram-encoded", 1.0, 200.0)
                    .with_out_dtype(DType::F32)
                    .with_channels(80),
            ],
        ),
        PresetName::AudioFlacLike => (
            src(DType::U8, 0.05),
            vec![
                read,
                StepSpec::decode("decoded", 1.7, 40.0).with_out_dtype(DType::I16),
                StepSpec::map_compute("spectrogram-encoded", 1.0, 200.0)
                    .with_out_dtype(DType::F32)
                    .with_channels(80),
            ],
        ),
        PresetName::SyntheticGrid => (src(DType::U8, 0.0), vec![read]),
    };
    Ok(Pipeline::new(source, steps).expect("presets are valid"))
}

/// Read followed by a windowed RMS over float32 samples, the scaling study
/// workload. `exclusive` models an implementation that does not scale.
pub fn rms_pipeline(source: DatasetDescriptor, period: u64, cost: f64, exclusive: bool) -> Pipeline {
    let rms = StepSpec::aggregate("rms", period, source.dtype, cost);
    let rms = if exclusive { rms.exclusive() } else { rms };
    Pipeline::new(source, vec![StepSpec::ingest("read"), rms]).expect("valid rms pipeline")
}

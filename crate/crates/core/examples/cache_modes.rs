//! Second-epoch throughput with no cache, a serialized cache and a sample cache.

use std::sync::Arc;

use presto::exec::RunConfig;
use presto::model::{CacheMode, DType, Pipeline, StepSpec, Strategy};
use presto::profiler::{EpochSelector, ProfileConfig, Profiler};
use presto::storage::{BackendConfig, LocalFs, Storage};
use presto::workloads::{self, DatasetDescriptor};
use presto::CpuModel;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let source = DatasetDescriptor::synthetic(32, 1_000_000, DType::U8).with_compressibility(0.05);
    let p = Pipeline::new(source, vec![StepSpec::ingest("read"), StepSpec::decode("decoded", 1.0, 5.0)])?;
    let local: Arc<dyn Storage> = Arc::new(LocalFs::new(dir.path()));
    workloads::ensure_generated(&local, &p.source, 4)?;

    let store = BackendConfig::desk_profile().open(dir.path())?;
    let cfg = ProfileConfig {
        run: RunConfig {
            epochs: 2,
            ..RunConfig::default()
        },
        epoch_selector: EpochSelector::Last,
        cpu: CpuModel::Virtual { cores: 4 },
        ..ProfileConfig::default()
    };
    let profiler = Profiler::new(store, cfg);
    for mode in CacheMode::ALL {
        let s = Strategy::new(p.max_split()).with_parallelism(4).with_shards(4).with_cache(mode);
        let r = profiler.profile_strategy(&s, &p)?;
        let e = &r.repeats[0].epochs;
        println!(
            "{mode:?}: epoch 1 {:.0} SPS, epoch 2 {:.0} SPS, epoch 2 read {} bytes",
            e[0].throughput, e[1].throughput, e[1].io.bytes_read
        );
    }
    Ok(())
}

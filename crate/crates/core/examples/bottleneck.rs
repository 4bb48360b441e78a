//! Decide whether a strategy is limited by storage or by compute.

use std::sync::Arc;

use presto::analysis::{classify_bottleneck, theoretical_max_throughput, DEFAULT_IO_THRESHOLD};
use presto::model::Strategy;
use presto::profiler::{ProfileConfig, Profiler};
use presto::storage::{probe_storage, BackendConfig, LocalFs, Storage};
use presto::workloads::{self, PresetName};
use presto::CpuModel;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let mut p = workloads::preset_scaled(PresetName::Cv, 1.0)?;
    p.source = p.source.with_sample_count(60);
    let local: Arc<dyn Storage> = Arc::new(LocalFs::new(dir.path()));
    workloads::ensure_generated(&local, &p.source, 4)?;

    let store = BackendConfig::desk_profile().open(dir.path())?;
    let probe = probe_storage(&store, 8, 1, 8_000_000)?;
    let cfg = ProfileConfig {
        cpu: CpuModel::Virtual { cores: 8 },
        ..ProfileConfig::default()
    };
    let profiler = Profiler::new(store, cfg);
    println!("probe: {:.1} MB/s", probe.bandwidth / 1e6);
    for m in 0..=p.max_split() {
        let r = profiler.profile_strategy(&Strategy::new(m).with_parallelism(8).with_shards(8), &p)?;
        let bound = theoretical_max_throughput(probe.bandwidth, r.bytes_per_sample())?;
        let v = classify_bottleneck(&r, Some(&probe), DEFAULT_IO_THRESHOLD)?;
        println!(
            "{:<16} {:>7.0} SPS  bound {:>7.0}  {:?} ({:.0}% of probe)",
            r.label, r.throughput_sps, bound, v.verdict, v.utilization * 100.0
        );
    }
    Ok(())
}

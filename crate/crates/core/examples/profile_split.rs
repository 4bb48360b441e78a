//! Profile every split of a small image pipeline on a desk-class backend.

use std::sync::Arc;

use presto::exec::RunConfig;
use presto::model::Strategy;
use presto::profiler::{ProfileConfig, Profiler};
use presto::storage::{BackendConfig, LocalFs, Storage};
use presto::workloads::{self, PresetName};
use presto::CpuModel;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let mut p = workloads::preset_scaled(PresetName::Cv, 1.0)?;
    p.source = p.source.with_sample_count(80);

    let local: Arc<dyn Storage> = Arc::new(LocalFs::new(dir.path()));
    workloads::ensure_generated(&local, &p.source, 4)?;

    let store = BackendConfig::desk_profile().open(dir.path())?;
    let cfg = ProfileConfig {
        run: RunConfig::default(),
        cpu: CpuModel::Virtual { cores: 8 },
        ..ProfileConfig::default()
    };
    let profiler = Profiler::new(store, cfg);
    println!("{:<16} {:>10} {:>12} {:>10}", "strategy", "prep s", "storage MB", "SPS");
    for m in 0..=p.max_split() {
        let s = Strategy::new(m).with_parallelism(8).with_shards(8);
        let r = profiler.profile_strategy(&s, &p)?;
        println!(
            "{:<16} {:>10.2} {:>12.1} {:>10.0}",
            r.label,
            r.preprocessing_seconds,
            r.storage_bytes as f64 / 1e6,
            r.throughput_sps
        );
    }
    Ok(())
}

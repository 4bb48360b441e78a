//! Speedup of a heavy per-sample step with shared vs exclusive execution.

use std::sync::Arc;

use presto::analysis::speedup;
use presto::model::{DType, Strategy};
use presto::profiler::{ProfileConfig, Profiler};
use presto::storage::{LocalFs, Storage};
use presto::workloads::{self, rms_pipeline, DatasetDescriptor};
use presto::CpuModel;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let store: Arc<dyn Storage> = Arc::new(LocalFs::new(dir.path()));
    let source = DatasetDescriptor::synthetic(16, 1_000_000, DType::F32);
    workloads::ensure_generated(&store, &source, 4)?;

    let cfg = ProfileConfig {
        cpu: CpuModel::Virtual { cores: 8 },
        ..ProfileConfig::default()
    };
    let profiler = Profiler::new(Arc::clone(&store), cfg);
    for exclusive in [false, true] {
        let p = rms_pipeline(source.clone(), 500, 50.0, exclusive);
        let secs = |n| -> Result<f64, Box<dyn std::error::Error>> {
            let r = profiler.profile_strategy(&Strategy::new(0).with_parallelism(n), &p)?;
            Ok(r.repeats[0].epochs[0].wall_seconds)
        };
        let base = secs(1)?;
        let line: Vec<String> = [2, 4, 8]
            .iter()
            .map(|&n| Ok(format!("n={n}: {:.2}x", speedup(base, secs(n)?)?)))
            .collect::<Result<_, Box<dyn std::error::Error>>>()?;
        println!("{}: {}", if exclusive { "exclusive" } else { "parallel " }, line.join("  "));
    }
    Ok(())
}

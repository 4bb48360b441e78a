//! Drive the online engine directly and capture output digests and a trace.

use std::sync::Arc;

use presto::exec::{write_trace, Capture, Engine, OnlinePlan, RunConfig};
use presto::model::Strategy;
use presto::storage::{LocalFs, Storage};
use presto::workloads::{self, PresetName};
use presto::CpuModel;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let store: Arc<dyn Storage> = Arc::new(LocalFs::new(dir.path()));
    let mut p = workloads::preset_scaled(PresetName::Cv, 1.0)?;
    p.source = p.source.with_sample_count(16);
    workloads::ensure_generated(&store, &p.source, 4)?;

    let s = Strategy::new(0).with_parallelism(4).with_shuffle(8);
    let plan = OnlinePlan::for_strategy(store.as_ref(), &p, &s)?;
    let cfg = RunConfig {
        epochs: 2,
        ..RunConfig::default()
    }
    .for_strategy(&s);
    let out = Engine::new(Arc::clone(&store), CpuModel::Host)
        .with_capture(Capture::Digest)
        .with_trace(true)
        .run(&plan, &cfg)?;
    for (e, d) in out.epochs.iter().zip(&out.digests) {
        println!("epoch {}: {} samples, {:.0} SPS, digest {}", e.epoch, e.samples, e.throughput, &d.multiset[..16]);
    }
    write_trace(&out.trace[..8.min(out.trace.len())], std::io::stdout())?;
    Ok(())
}

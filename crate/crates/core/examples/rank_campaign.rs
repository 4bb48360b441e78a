//! Run a small campaign and rank it under different objective weights.

use std::sync::Arc;

use presto::analysis::{render_table, score_and_rank};
use presto::model::{enumerate_strategies, Compression, ObjectiveWeights, OptionGrid};
use presto::profiler::{ProfileConfig, Profiler};
use presto::storage::{BackendConfig, LocalFs, Storage};
use presto::workloads::{self, PresetName};
use presto::CpuModel;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let mut p = workloads::preset_scaled(PresetName::Cv, 1.0)?;
    p.source = p.source.with_sample_count(48);
    let local: Arc<dyn Storage> = Arc::new(LocalFs::new(dir.path()));
    workloads::ensure_generated(&local, &p.source, 4)?;

    let grid = OptionGrid {
        compressions: vec![Compression::None, Compression::Gzip],
        ..OptionGrid::single(4)
    };
    let strategies = enumerate_strategies(&p, &grid);
    let cfg = ProfileConfig {
        cpu: CpuModel::Virtual { cores: 4 },
        ..ProfileConfig::default()
    };
    let campaign = Profiler::new(BackendConfig::desk_profile().open(dir.path())?, cfg).profile_campaign(&p, &strategies)?;

    for w in [
        ObjectiveWeights::new(0.0, 0.0, 1.0),
        ObjectiveWeights::new(0.0, 1.0, 0.0),
        ObjectiveWeights::new(1.0, 1.0, 1.0),
    ] {
        let ranking = score_and_rank(&campaign.records, w)?;
        println!("weights {:?} -> {}", (w.w_p, w.w_s, w.w_t), ranking.chosen);
        print!("{}", render_table(&ranking));
    }
    Ok(())
}

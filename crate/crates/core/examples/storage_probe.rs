//! Sequential vs many-small-files read bandwidth on a throttled backend.

use presto::storage::{probe_storage, BackendConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let store = BackendConfig::desk_profile().open(dir.path())?;
    println!("{:>8} {:>8} {:>12} {:>10}", "workers", "files", "MB/s", "IOPS");
    for (workers, files) in [(1, 1), (1, 200), (8, 1), (8, 200)] {
        let r = probe_storage(&store, workers, files, 8_000_000)?;
        println!("{:>8} {:>8} {:>12.1} {:>10.0}", r.workers, r.files_per_worker, r.bandwidth / 1e6, r.iops);
    }
    Ok(())
}

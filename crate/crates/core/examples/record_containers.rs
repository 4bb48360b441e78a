//! Write tensors into sharded, compressed containers and read them back.

use std::path::Path;
use std::sync::Arc;

use presto::model::{Compression, DType, Tensor};
use presto::recordio;
use presto::storage::{LocalFs, Storage};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let store: Arc<dyn Storage> = Arc::new(LocalFs::new(dir.path()));

    let tensors: Vec<Tensor> = (0..1000u32)
        .map(|i| {
            let data: Vec<u8> = (0..256u32).map(|j| ((i * 7 + j) % 13) as u8).collect();
            Tensor::new(DType::U8, vec![16, 16], data).unwrap()
        })
        .collect();

    for c in Compression::ALL {
        let stats = recordio::write_container(&store, &tensors, Path::new(&format!("out-{c}")), c, 4)?;
        let back: Vec<Tensor> = recordio::read_container(&store, &stats.paths, c)?.collect::<Result<_, _>>()?;
        assert_eq!(back, tensors);
        println!(
            "{c:>5}: {} records in {} shards, {} bytes on disk, saving {:.1}%",
            stats.records,
            stats.paths.len(),
            stats.bytes,
            recordio::space_saving(stats.payload_bytes, stats.bytes)? * 100.0
        );
    }
    Ok(())
}

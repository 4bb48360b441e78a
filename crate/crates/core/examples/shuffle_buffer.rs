//! Bounded-buffer shuffling: small buffers only reorder locally.

use presto::exec::shuffle_stream;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    for k in [1, 4, 64, 10_000] {
        let out: Vec<u32> = shuffle_stream(0..10_000u32, k, ChaCha8Rng::seed_from_u64(7)).collect();
        let displacement: f64 = out
            .iter()
            .enumerate()
            .map(|(i, &v)| (i as f64 - v as f64).abs())
            .sum::<f64>()
            / out.len() as f64;
        println!("buffer {k:>6}: first {:?}, mean displacement {displacement:.1}", &out[..6]);
    }
}

//! Builds the 4-word, K=2, M=3 toy mapping, prints each word's sub-vector
//! indices and the pool usage, then shows the partitioned and hashed
//! schemes on the same vocabulary.
//!
//! ```text
//! cargo run --example mapping_toy
//! ```

use slimlm::embedding::{embed_forward, param_count, EmbeddingPool};
use slimlm::mapping::{Scheme, SubVectorMapping};

fn main() -> slimlm::Result<()> {
    let toy = SubVectorMapping::balanced(4, 2, 3, 5)?;
    println!("balanced V=4 K=2 M=3");
    for w in 0..4 {
        println!("  word {w} -> {:?}", toy.row(w));
    }
    println!("  usage {:?}", toy.usage_histogram());

    // Pool row `a` holds the values (a, a + 0.5), so an embedding reads back
    // its indices directly.
    let mut pool = EmbeddingPool::zeros(3, 2);
    for (a, mut row) in pool.data.rows_mut().into_iter().enumerate() {
        row[0] = a as f64;
        row[1] = a as f64 + 0.5;
    }
    println!("  embedding of word 0: {:?}", embed_forward(&pool, &toy, 0)?);

    for scheme in [Scheme::Partitioned, Scheme::Hashed] {
        let map = SubVectorMapping::build(scheme, 6, 2, 4, 5)?;
        println!("{scheme} V=6 K=2 M=4 partition_valid={}", map.partition_valid());
        for w in 0..6 {
            println!("  word {w} -> {:?}", map.row(w));
        }
    }

    let c = param_count(10_000, 512, 8, 4096)?;
    println!(
        "V=10000 N=512 K=8 M=4096: {} shared vs {} dense parameters (ratio {:.4})",
        c.compressed, c.uncompressed, c.ratio
    );
    Ok(())
}

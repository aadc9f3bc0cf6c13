//! Compares the two-step partial-dot-product output layer against the
//! per-word evaluation: same logits, far fewer operations.
//!
//! ```text
//! cargo run --release --example dp_softmax -- [V] [H] [K] [M]
//! ```

use ndarray::Array2;
use slimlm::embedding::EmbeddingPool;
use slimlm::mapping::{Scheme, SubVectorMapping};
use slimlm::rng::SplitMix64;
use slimlm::softmax::{softmax, FlopCounter, OutputLayer};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<usize> = std::env::args().skip(1).map(|a| a.parse()).collect::<Result<_, _>>()?;
    let get = |i: usize, default: usize| args.get(i).copied().unwrap_or(default);
    let (v, h, k, m) = (get(0, 10_000), get(1, 256), get(2, 8), get(3, 1024));

    let mapping = SubVectorMapping::build(Scheme::Partitioned, v, k, m, 1)?;
    let mut rng = SplitMix64::new(2);
    let pool = Array2::from_shape_simple_fn((m, h / k), || rng.symmetric(0.1));
    let layer = OutputLayer::new(EmbeddingPool::from_data(pool)?, mapping)?;
    let hidden: Vec<f64> = (0..h).map(|_| rng.symmetric(1.0)).collect();

    let mut dp_flops = FlopCounter::default();
    let dp = layer.logits_dp_counted(&hidden, &mut dp_flops)?;
    let mut naive_flops = FlopCounter::default();
    let naive = layer.logits_naive_counted(&hidden, &mut naive_flops)?;

    let diff = dp.iter().zip(&naive).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
    println!("V={v} H={h} K={k} M={m}");
    println!("  dp:    {} MACs + {} adds", dp_flops.macs, dp_flops.adds);
    println!("  naive: {} MACs", naive_flops.macs);
    println!("  max |dp - naive| = {diff:.3e}");

    let p = softmax(&dp);
    let best = (0..v).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap_or(0);
    println!("  most likely word {best} with p={:.5}", p[best]);
    Ok(())
}

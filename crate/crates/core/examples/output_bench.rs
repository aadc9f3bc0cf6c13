//! Times the three output-layer variants on one configuration.
//!
//! ```text
//! cargo run --release --example output_bench -- [V H K M]
//! ```

use slimlm::bench::{run_bench, BenchSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<usize> = std::env::args()
        .skip(1)
        .map(|a| a.parse())
        .collect::<Result<_, _>>()?;
    let spec = match args[..] {
        [v, h, k, m] => BenchSpec::new(v, h, k, m),
        [] => BenchSpec::new(50_000, 512, 8, 4096),
        _ => return Err("expected V H K M".into()),
    };
    let r = run_bench(&spec)?;
    println!(
        "V={} H={} K={} M={}, batch of {} tokens, max relative difference {:.2e}",
        spec.vocab, spec.hidden, spec.parts, spec.pool, spec.batch, r.max_rel_diff
    );
    for v in &r.variants {
        println!(
            "{:>16}  median {:>10.6} s  min {:>10.6} s  flops {:>12}  param bytes {:>11}",
            v.variant.as_str(),
            v.time.median,
            v.time.min,
            v.flops,
            v.param_bytes
        );
    }
    if let Some((step1, step2)) = r.se_dp_steps {
        println!(
            "se_dp steps: partial products {:.6} s, summation {:.6} s",
            step1.median, step2.median
        );
    }
    Ok(())
}

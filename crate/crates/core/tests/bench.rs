use slimlm::bench::{k_scaling, spearman, BenchSpec, Variant};

#[test]
fn se_dp_time_tracks_analytic_flops_over_k() {
    let base = BenchSpec {
        reps: 9,
        warmup: 3,
        ..BenchSpec::new(20_000, 512, 1, 4096)
    };
    let ks = [1, 2, 4, 8, 16, 32, 64, 128, 256];
    let rows = k_scaling(&base, &ks).unwrap();
    for &(k, _, flops) in &rows {
        let spec = BenchSpec { parts: k, ..base.clone() };
        assert_eq!(flops, spec.flops(Variant::SeDp));
    }
    let times: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let flops: Vec<f64> = rows.iter().map(|r| r.2 as f64).collect();
    let rho = spearman(&times, &flops);
    assert!(rho >= 0.9, "spearman {rho:.3}: {rows:?}");
}

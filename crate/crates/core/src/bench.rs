//! Output-layer timing: dense softmax vs. on-the-fly hashed weights vs. the
//! two-step partial-product evaluation.
//!
//! All three variants see the same effective `V × H` weights. The pool is
//! addressed through a hashed mapping, so entry `(w, j)` of the weight matrix
//! is `pool[hashed_index(seed, w, j / d, M / K)][j % d]`:
//!
//! * `dense` materializes that matrix during setup and runs one gemm;
//! * `hash_on_the_fly` never stores it, recomputing the hash for every
//!   weight element it touches;
//! * `se_dp` uses [`OutputLayer::logits_batch`].

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use ndarray::{Array2, ArrayView2};

use crate::embedding::EmbeddingPool;
use crate::error::{Error, Result};
use crate::mapping::{hashed_index, SubVectorMapping};
use crate::rng::{sub_seed, SplitMix64};
use crate::softmax::{FlopCounter, Output, OutputLayer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Variant {
    Dense,
    HashOnTheFly,
    SeDp,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Dense, Variant::HashOnTheFly, Variant::SeDp];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Dense => "dense",
            Variant::HashOnTheFly => "hash_on_the_fly",
            Variant::SeDp => "se_dp",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown benchmark variant '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchSpec {
    pub vocab: usize,
    pub hidden: usize,
    pub parts: usize,
    pub pool: usize,
    /// Hidden vectors (tokens) per measured call.
    pub batch: usize,
    pub reps: usize,
    pub warmup: usize,
    pub variants: Vec<Variant>,
    pub seed: u64,
}

impl BenchSpec {
    pub fn new(vocab: usize, hidden: usize, parts: usize, pool: usize) -> Self {
        BenchSpec {
            vocab,
            hidden,
            parts,
            pool,
            batch: 20,
            reps: 5,
            warmup: 3,
            variants: Variant::ALL.to_vec(),
            seed: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("V", self.vocab),
            ("H", self.hidden),
            ("K", self.parts),
            ("M", self.pool),
            ("batch", self.batch),
            ("reps", self.reps),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("benchmark {name} must be positive")));
        }
        if self.hidden % self.parts != 0 {
            return Err(Error::Config(format!(
                "K={} does not divide H={}",
                self.parts, self.hidden
            )));
        }
        if self.pool % self.parts != 0 {
            return Err(Error::Config(format!(
                "K={} does not divide M={}",
                self.parts, self.pool
            )));
        }
        if self.variants.is_empty() {
            return Err(Error::Config("no benchmark variants selected".into()));
        }
        Ok(())
    }

    /// Analytic operation count (multiply-adds plus additions) per call.
    pub fn flops(&self, variant: Variant) -> u64 {
        let (v, h, k, m, b) = (
            self.vocab as u64,
            self.hidden as u64,
            self.parts as u64,
            self.pool as u64,
            self.batch as u64,
        );
        match variant {
            Variant::Dense | Variant::HashOnTheFly => b * v * h,
            Variant::SeDp => b * (m * h / k + v * (k - 1)),
        }
    }

    /// Bytes of parameters (and index tables) read per call.
    pub fn param_bytes(&self, variant: Variant) -> u64 {
        let pool = (self.pool * (self.hidden / self.parts) * 8) as u64;
        match variant {
            Variant::Dense => (self.vocab * self.hidden * 8) as u64,
            Variant::HashOnTheFly => pool,
            Variant::SeDp => pool + (self.vocab * self.parts * 4) as u64,
        }
    }
}

/// Wall-time statistics in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Timing {
    pub min: f64,
    pub median: f64,
    pub mean: f64,
}

impl Timing {
    pub fn of(samples: &[f64]) -> Self {
        assert!(!samples.is_empty(), "no timing samples");
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        let n = s.len();
        let median = if n % 2 == 1 {
            s[n / 2]
        } else {
            0.5 * (s[n / 2 - 1] + s[n / 2])
        };
        Timing {
            min: s[0],
            median,
            mean: s.iter().sum::<f64>() / n as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariantResult {
    pub variant: Variant,
    pub time: Timing,
    pub flops: u64,
    pub param_bytes: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchResult {
    pub spec: BenchSpec,
    pub variants: Vec<VariantResult>,
    /// Largest relative logit difference between any variant and the first.
    pub max_rel_diff: f64,
    /// `se_dp` partial products and summation timed separately.
    pub se_dp_steps: Option<(Timing, Timing)>,
}

impl BenchResult {
    pub fn get(&self, variant: Variant) -> Option<&VariantResult> {
        self.variants.iter().find(|r| r.variant == variant)
    }
}

/// Benchmark fixture: pool, mapping, random hidden batch, and the
/// materialized matrix when `dense` is requested.
pub struct BenchSetup {
    pub layer: OutputLayer,
    pub hidden: Array2<f64>,
    pub dense: Option<Array2<f64>>,
}

impl BenchSetup {
    pub fn new(spec: &BenchSpec) -> Result<Self> {
        spec.validate()?;
        let mapping = SubVectorMapping::hashed(
            spec.vocab,
            spec.parts,
            spec.pool,
            sub_seed(spec.seed, "map-out"),
        )?;
        let d = spec.hidden / spec.parts;
        let mut rng = SplitMix64::new(sub_seed(spec.seed, "init"));
        let pool = Array2::from_shape_simple_fn((spec.pool, d), || rng.symmetric(1.0));
        let hidden = Array2::from_shape_simple_fn((spec.batch, spec.hidden), || rng.symmetric(1.0));
        let layer = OutputLayer::new(EmbeddingPool::from_data(pool)?, mapping)?;
        let dense = spec.variants.contains(&Variant::Dense).then(|| {
            let mut w = Array2::zeros((spec.vocab, spec.hidden));
            for (i, row) in w.outer_iter_mut().enumerate() {
                layer.word_vector(i, row);
            }
            w
        });
        Ok(BenchSetup {
            layer,
            hidden,
            dense,
        })
    }

    pub fn logits(&self, variant: Variant) -> Array2<f64> {
        match variant {
            Variant::Dense => {
                let w = self.dense.as_ref().expect("dense matrix not materialized");
                self.hidden.dot(&w.t())
            }
            Variant::HashOnTheFly => hash_on_the_fly(&self.layer, self.hidden.view()),
            Variant::SeDp => self.layer.logits_batch(self.hidden.view()),
        }
    }
}

/// Logits with every weight element re-derived from the hash when used.
pub fn hash_on_the_fly(layer: &OutputLayer, h: ArrayView2<f64>) -> Array2<f64> {
    let (v, hd) = (layer.vocab_size(), layer.hidden_dim());
    let (d, k) = (layer.sub_dim(), layer.parts());
    let part = layer.mapping.pool_size() / k;
    let seed = layer.mapping.seed();
    let batch = h.nrows();
    let ht = h.t().as_standard_layout().into_owned();
    let pool = &layer.pool.data;
    let mut z = Array2::zeros((batch, v));
    let mut acc = vec![0.0; batch];
    for w in 0..v {
        acc.iter_mut().for_each(|a| *a = 0.0);
        for j in 0..hd {
            let weight = pool[[hashed_index(seed, w, j / d, part), j % d]];
            for (a, &x) in acc.iter_mut().zip(ht.row(j)) {
                *a += x * weight;
            }
        }
        for (b, &a) in acc.iter().enumerate() {
            z[[b, w]] = a;
        }
    }
    debug_assert_eq!(k * d, hd);
    z
}

/// Largest `|a - b|` relative to the largest `|b|`.
pub fn max_relative_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(f64::MIN_POSITIVE);
    a.iter()
        .zip(b)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
        / scale
}

fn time_calls(warmup: usize, reps: usize, mut f: impl FnMut()) -> Timing {
    for _ in 0..warmup {
        f();
    }
    let samples: Vec<f64> = (0..reps)
        .map(|_| {
            let t = Instant::now();
            f();
            t.elapsed().as_secs_f64().max(1e-9)
        })
        .collect();
    Timing::of(&samples)
}

pub const AGREEMENT_TOL: f64 = 1e-10;

/// Runs every requested variant, checks that their logits agree, and times
/// them with setup excluded.
pub fn run_bench(spec: &BenchSpec) -> Result<BenchResult> {
    let setup = BenchSetup::new(spec)?;
    let mut reference: Option<Array2<f64>> = None;
    let mut max_rel_diff = 0.0f64;
    let mut variants = Vec::new();
    for &variant in &spec.variants {
        let z = setup.logits(variant);
        match &reference {
            None => reference = Some(z),
            Some(r) => max_rel_diff = max_rel_diff.max(max_relative_diff(&z, r)),
        }
        let time = time_calls(spec.warmup, spec.reps, || {
            std::hint::black_box(setup.logits(variant));
        });
        variants.push(VariantResult {
            variant,
            time,
            flops: spec.flops(variant),
            param_bytes: spec.param_bytes(variant),
        });
    }
    if max_rel_diff > AGREEMENT_TOL {
        return Err(Error::BenchMismatch(max_rel_diff));
    }
    let se_dp_steps = spec.variants.contains(&Variant::SeDp).then(|| {
        let u = setup.layer.partials_batch(setup.hidden.view());
        let step1 = time_calls(spec.warmup, spec.reps, || {
            std::hint::black_box(setup.layer.partials_batch(setup.hidden.view()));
        });
        let step2 = time_calls(spec.warmup, spec.reps, || {
            std::hint::black_box(setup.layer.sum_partials_batch(u.view()));
        });
        (step1, step2)
    });
    Ok(BenchResult {
        spec: spec.clone(),
        variants,
        max_rel_diff,
        se_dp_steps,
    })
}

/// Instrumented operation count of the per-vector `se_dp` path over the
/// benchmark's hidden batch.
pub fn counted_flops(setup: &BenchSetup) -> Result<FlopCounter> {
    let mut flops = FlopCounter::default();
    for h in setup.hidden.outer_iter() {
        setup.layer.logits_dp_counted(h.as_slice().expect("contiguous"), &mut flops)?;
    }
    Ok(flops)
}

pub const CSV_HEADER: &str = "V,H,K,M,variant,median_s,mean_s,min_s,flops,param_bytes";

pub fn to_csv(results: &[BenchResult]) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for r in results {
        let s = &r.spec;
        for v in &r.variants {
            out.push_str(&format!(
                "{},{},{},{},{},{:e},{:e},{:e},{},{}\n",
                s.vocab,
                s.hidden,
                s.parts,
                s.pool,
                v.variant,
                v.time.median,
                v.time.mean,
                v.time.min,
                v.flops,
                v.param_bytes
            ));
        }
    }
    out
}

pub fn emit_csv(results: &[BenchResult], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_csv(results)).map_err(|e| Error::file(path, e))
}

/// One parsed CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub vocab: usize,
    pub hidden: usize,
    pub parts: usize,
    pub pool: usize,
    pub variant: Variant,
    pub time: Timing,
    pub flops: u64,
    pub param_bytes: u64,
}

pub fn parse_csv(text: &str) -> Result<Vec<CsvRow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == CSV_HEADER => {}
        _ => {
            return Err(Error::Parse {
                what: "benchmark csv",
                line: 1,
                reason: "missing header".into(),
            })
        }
    }
    lines
        .map(|(i, line)| {
            let err = |reason: String| Error::Parse {
                what: "benchmark csv",
                line: i + 1,
                reason,
            };
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 10 {
                return Err(err(format!("expected 10 fields, got {}", f.len())));
            }
            let int = |s: &str| s.parse::<u64>().map_err(|e| err(format!("'{s}': {e}")));
            let real = |s: &str| s.parse::<f64>().map_err(|e| err(format!("'{s}': {e}")));
            Ok(CsvRow {
                vocab: int(f[0])? as usize,
                hidden: int(f[1])? as usize,
                parts: int(f[2])? as usize,
                pool: int(f[3])? as usize,
                variant: f[4].parse().map_err(|e: Error| err(e.to_string()))?,
                time: Timing {
                    median: real(f[5])?,
                    mean: real(f[6])?,
                    min: real(f[7])?,
                },
                flops: int(f[8])?,
                param_bytes: int(f[9])?,
            })
        })
        .collect()
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut cov = 0.0;
    let (mut vx, mut vy) = (0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    cov / (vx * vy).sqrt()
}

fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// `se_dp` median time and analytic flops for each `K`, other dimensions
/// fixed.
pub fn k_scaling(base: &BenchSpec, ks: &[usize]) -> Result<Vec<(usize, f64, u64)>> {
    ks.iter()
        .map(|&k| {
            let spec = BenchSpec {
                parts: k,
                variants: vec![Variant::SeDp],
                ..base.clone()
            };
            let r = run_bench(&spec)?;
            Ok((k, r.variants[0].time.median, spec.flops(Variant::SeDp)))
        })
        .collect()
}

//! Fixed word → sub-vector assignment tables.
//!
//! A [`SubVectorMapping`] assigns each of `V` words a row of `K` indices into
//! a pool of `M` shared sub-vectors. Three construction schemes exist:
//!
//! * **Balanced**: copies of `0..M` shuffled into `K·V` slots, so every pool
//!   index is used either `⌊K·V/M⌋` or `⌈K·V/M⌉` times.
//! * **Partitioned**: the pool is split into `K` contiguous ranges of size
//!   `M/K`; position `p` of every word draws from range `p` only, balanced
//!   within each range. This is what the dynamic-programming softmax needs.
//! * **Hashed**: same partition layout, but the index inside a range comes
//!   from [`slot_hash`] instead of a shuffle. No balance guarantee.
//!
//! Tables are built once and never mutated.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::rng::{slot_hash, SplitMix64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    Balanced,
    Partitioned,
    Hashed,
}

impl Scheme {
    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Balanced => "balanced",
            Scheme::Partitioned => "partitioned",
            Scheme::Hashed => "hashed",
        }
    }

    /// Whether position `p` is restricted to partition `p` of the pool.
    pub fn is_partitioned(self) -> bool {
        !matches!(self, Scheme::Balanced)
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "balanced" => Ok(Scheme::Balanced),
            "partitioned" => Ok(Scheme::Partitioned),
            "hashed" => Ok(Scheme::Hashed),
            other => Err(Error::MappingParams(format!("unknown scheme '{other}'"))),
        }
    }
}

/// The `V × K` table of pool indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubVectorMapping {
    vocab_size: usize,
    parts_per_word: usize,
    pool_size: usize,
    scheme: Scheme,
    seed: u64,
    table: Vec<u32>,
}

fn check_nonzero(v: usize, k: usize, m: usize) -> Result<()> {
    if v == 0 || k == 0 || m == 0 {
        return Err(Error::MappingParams(format!(
            "V, K and M must be positive (V={v}, K={k}, M={m})"
        )));
    }
    if m > u32::MAX as usize {
        return Err(Error::MappingParams(format!("M={m} exceeds u32 index range")));
    }
    Ok(())
}

/// `slots` indices drawn from `0..pool` with usage counts differing by at
/// most one, in shuffled order.
fn balanced_slots(slots: usize, pool: usize, rng: &mut SplitMix64) -> Vec<u32> {
    let full_copies = slots / pool;
    let remainder = slots % pool;
    let mut list = Vec::with_capacity(slots);
    for _ in 0..full_copies {
        list.extend(0..pool as u32);
    }
    if remainder > 0 {
        // The partial copy is a random subset, so truncation never drops an
        // index twice.
        let mut partial: Vec<u32> = (0..pool as u32).collect();
        rng.shuffle(&mut partial);
        list.extend_from_slice(&partial[..remainder]);
    }
    rng.shuffle(&mut list);
    list
}

impl SubVectorMapping {
    /// Balanced shuffle over the whole pool.
    pub fn balanced(v: usize, k: usize, m: usize, seed: u64) -> Result<Self> {
        check_nonzero(v, k, m)?;
        let slots = k
            .checked_mul(v)
            .ok_or_else(|| Error::MappingParams("K·V overflows".into()))?;
        if m > slots {
            return Err(Error::MappingParams(format!(
                "pool size M={m} exceeds the K·V={slots} slots"
            )));
        }
        let mut rng = SplitMix64::new(seed);
        let table = balanced_slots(slots, m, &mut rng);
        Ok(SubVectorMapping {
            vocab_size: v,
            parts_per_word: k,
            pool_size: m,
            scheme: Scheme::Balanced,
            seed,
            table,
        })
    }

    /// Balanced shuffle independently inside each of the `K` partitions.
    pub fn partitioned(v: usize, k: usize, m: usize, seed: u64) -> Result<Self> {
        check_nonzero(v, k, m)?;
        if m % k != 0 {
            return Err(Error::MappingParams(format!("K={k} does not divide M={m}")));
        }
        let part = m / k;
        if part > v {
            return Err(Error::MappingParams(format!(
                "partition size M/K={part} exceeds V={v}"
            )));
        }
        let mut rng = SplitMix64::new(seed);
        let mut table = vec![0u32; v * k];
        for p in 0..k {
            let column = balanced_slots(v, part, &mut rng);
            let offset = (p * part) as u32;
            for (w, idx) in column.into_iter().enumerate() {
                table[w * k + p] = offset + idx;
            }
        }
        Ok(SubVectorMapping {
            vocab_size: v,
            parts_per_word: k,
            pool_size: m,
            scheme: Scheme::Partitioned,
            seed,
            table,
        })
    }

    /// `table[w][p] = p·(M/K) + slot_hash(seed, w, p) mod (M/K)`.
    pub fn hashed(v: usize, k: usize, m: usize, seed: u64) -> Result<Self> {
        check_nonzero(v, k, m)?;
        if m % k != 0 {
            return Err(Error::MappingParams(format!("K={k} does not divide M={m}")));
        }
        let part = m / k;
        let mut table = Vec::with_capacity(v * k);
        for w in 0..v {
            for p in 0..k {
                table.push(hashed_index(seed, w, p, part) as u32);
            }
        }
        Ok(SubVectorMapping {
            vocab_size: v,
            parts_per_word: k,
            pool_size: m,
            scheme: Scheme::Hashed,
            seed,
            table,
        })
    }

    pub fn build(scheme: Scheme, v: usize, k: usize, m: usize, seed: u64) -> Result<Self> {
        match scheme {
            Scheme::Balanced => Self::balanced(v, k, m, seed),
            Scheme::Partitioned => Self::partitioned(v, k, m, seed),
            Scheme::Hashed => Self::hashed(v, k, m, seed),
        }
    }

    /// Wraps an explicit row-major table after checking every invariant of
    /// `scheme`.
    pub fn from_table(
        v: usize,
        k: usize,
        m: usize,
        scheme: Scheme,
        seed: u64,
        table: Vec<u32>,
    ) -> Result<Self> {
        check_nonzero(v, k, m)?;
        if table.len() != v * k {
            return Err(Error::MappingParams(format!(
                "table has {} entries, expected V·K={}",
                table.len(),
                v * k
            )));
        }
        let mapping = SubVectorMapping {
            vocab_size: v,
            parts_per_word: k,
            pool_size: m,
            scheme,
            seed,
            table,
        };
        mapping.validate()?;
        Ok(mapping)
    }

    fn validate(&self) -> Result<()> {
        if let Some(&bad) = self.table.iter().find(|&&i| i as usize >= self.pool_size) {
            return Err(Error::MappingParams(format!(
                "index {bad} out of range for M={}",
                self.pool_size
            )));
        }
        let k = self.parts_per_word;
        if self.scheme.is_partitioned() {
            if self.pool_size % k != 0 {
                return Err(Error::MappingParams(format!(
                    "K={k} does not divide M={}",
                    self.pool_size
                )));
            }
            let part = self.pool_size / k;
            for (slot, &idx) in self.table.iter().enumerate() {
                if idx as usize / part != slot % k {
                    return Err(Error::MappingParams(format!(
                        "word {} position {} uses index {idx} outside its partition",
                        slot / k,
                        slot % k
                    )));
                }
            }
        }
        match self.scheme {
            Scheme::Balanced => {
                let hist = self.usage_histogram();
                let (lo, hi) = min_max(&hist);
                if hi - lo > 1 {
                    return Err(Error::MappingParams(format!(
                        "balanced table has usage spread {lo}..{hi}"
                    )));
                }
            }
            Scheme::Partitioned => {
                let hist = self.usage_histogram();
                for chunk in hist.chunks(self.pool_size / k) {
                    let (lo, hi) = min_max(chunk);
                    if hi - lo > 1 {
                        return Err(Error::MappingParams(format!(
                            "partition has usage spread {lo}..{hi}"
                        )));
                    }
                }
            }
            Scheme::Hashed => {}
        }
        Ok(())
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn parts_per_word(&self) -> usize {
        self.parts_per_word
    }

    pub fn pool_size(&self) -> usize {
        self.pool_size
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Size of each partition, `M/K`, for partitioned schemes.
    pub fn partition_size(&self) -> Option<usize> {
        self.scheme
            .is_partitioned()
            .then(|| self.pool_size / self.parts_per_word)
    }

    /// The `K` pool indices of `word`.
    #[inline]
    pub fn row(&self, word: usize) -> &[u32] {
        let k = self.parts_per_word;
        &self.table[word * k..(word + 1) * k]
    }

    pub fn try_row(&self, word: usize) -> Result<&[u32]> {
        if word >= self.vocab_size {
            return Err(Error::WordOutOfRange {
                word,
                vocab_size: self.vocab_size,
            });
        }
        Ok(self.row(word))
    }

    /// Row-major `V × K` table.
    pub fn table(&self) -> &[u32] {
        &self.table
    }

    /// Number of slots using each pool index.
    pub fn usage_histogram(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.pool_size];
        for &i in &self.table {
            counts[i as usize] += 1;
        }
        counts
    }

    /// Every pool index used exactly once.
    pub fn is_bijective(&self) -> bool {
        self.pool_size == self.table.len() && self.usage_histogram().iter().all(|&c| c == 1)
    }

    /// Partition-membership check, independent of how the table was built.
    pub fn partition_valid(&self) -> bool {
        let k = self.parts_per_word;
        if self.pool_size % k != 0 {
            return false;
        }
        let part = self.pool_size / k;
        self.table
            .iter()
            .enumerate()
            .all(|(slot, &idx)| idx as usize / part == slot % k)
    }

    /// Text form: header `V K M scheme seed`, then one row of `K` indices
    /// per word.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{} {} {} {} {}\n",
            self.vocab_size, self.parts_per_word, self.pool_size, self.scheme, self.seed
        );
        for w in 0..self.vocab_size {
            let row = self.row(w);
            for (p, idx) in row.iter().enumerate() {
                if p > 0 {
                    out.push(' ');
                }
                out.push_str(&idx.to_string());
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let err = |line: usize, reason: String| Error::Parse {
            what: "mapping",
            line,
            reason,
        };
        let mut lines = text.split('\n');
        let header = lines.next().ok_or_else(|| err(1, "empty file".into()))?;
        let fields: Vec<&str> = header.split(' ').collect();
        if fields.len() != 5 {
            return Err(err(1, format!("expected 5 header fields, got {}", fields.len())));
        }
        let num = |s: &str| -> Result<usize> {
            s.parse::<usize>()
                .map_err(|e| err(1, format!("bad count '{s}': {e}")))
        };
        let (v, k, m) = (num(fields[0])?, num(fields[1])?, num(fields[2])?);
        let scheme: Scheme = fields[3].parse().map_err(|e: Error| err(1, e.to_string()))?;
        let seed: u64 = fields[4]
            .parse()
            .map_err(|e| err(1, format!("bad seed '{}': {e}", fields[4])))?;

        let mut table = Vec::with_capacity(v.saturating_mul(k));
        let mut rows = 0usize;
        for (i, line) in lines.enumerate() {
            let lineno = i + 2;
            if line.is_empty() {
                // Only the trailing newline may produce an empty line.
                if rows == v {
                    continue;
                }
                return Err(err(lineno, "empty row".into()));
            }
            if rows == v {
                return Err(err(lineno, format!("more than V={v} rows")));
            }
            let before = table.len();
            for tok in line.split(' ') {
                let idx: u32 = tok
                    .parse()
                    .map_err(|e| err(lineno, format!("bad index '{tok}': {e}")))?;
                if idx as usize >= m {
                    return Err(err(lineno, format!("index {idx} ≥ M={m}")));
                }
                table.push(idx);
            }
            if table.len() - before != k {
                return Err(err(
                    lineno,
                    format!("expected {k} indices, got {}", table.len() - before),
                ));
            }
            rows += 1;
        }
        if rows != v {
            return Err(err(rows + 2, format!("header says V={v} rows, found {rows}")));
        }
        Self::from_table(v, k, m, scheme, seed, table)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = fs::File::create(path).map_err(|e| Error::file(path, e))?;
        f.write_all(self.to_text().as_bytes())
            .map_err(|e| Error::file(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::from_text(&text)
    }
}

/// Index used by the hashed scheme for `(word, position)`; also evaluated on
/// the fly by the benchmark.
#[inline]
pub fn hashed_index(seed: u64, word: usize, position: usize, partition: usize) -> usize {
    position * partition + (slot_hash(seed, word as u64, position as u64) % partition as u64) as usize
}

fn min_max(counts: &[usize]) -> (usize, usize) {
    let lo = counts.iter().copied().min().unwrap_or(0);
    let hi = counts.iter().copied().max().unwrap_or(0);
    (lo, hi)
}

/// Summary of a usage histogram.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UsageSummary {
    pub min: usize,
    pub max: usize,
    pub mean: f64,
}

impl UsageSummary {
    pub fn of(mapping: &SubVectorMapping) -> Self {
        let hist = mapping.usage_histogram();
        let (min, max) = min_max(&hist);
        let mean = hist.iter().sum::<usize>() as f64 / hist.len() as f64;
        UsageSummary { min, max, mean }
    }
}

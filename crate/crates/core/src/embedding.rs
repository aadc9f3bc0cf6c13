//! Compressed input embeddings: a word's vector is the concatenation of the
//! `K` pool rows named by its mapping row.

use ndarray::{s, Array2, ArrayView1, ArrayViewMut1};

use crate::error::{Error, Result};
use crate::mapping::SubVectorMapping;

/// `M × d` matrix of shared sub-vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingPool {
    pub data: Array2<f64>,
}

impl EmbeddingPool {
    pub fn zeros(pool_size: usize, sub_dim: usize) -> Self {
        EmbeddingPool {
            data: Array2::zeros((pool_size, sub_dim)),
        }
    }

    pub fn from_data(data: Array2<f64>) -> Result<Self> {
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("embedding pool".into()));
        }
        Ok(EmbeddingPool { data })
    }

    pub fn pool_size(&self) -> usize {
        self.data.nrows()
    }

    pub fn sub_dim(&self) -> usize {
        self.data.ncols()
    }

    fn check(&self, mapping: &SubVectorMapping) -> Result<()> {
        if self.pool_size() != mapping.pool_size() {
            return Err(Error::Dimension(format!(
                "pool has {} rows, mapping expects M={}",
                self.pool_size(),
                mapping.pool_size()
            )));
        }
        Ok(())
    }
}

/// Accumulated gradient for an [`EmbeddingPool`].
pub type PoolGradient = EmbeddingPool;

/// Writes the embedding of `word` into `out` (length `K·d`).
#[inline]
pub(crate) fn gather_into(
    pool: &EmbeddingPool,
    mapping: &SubVectorMapping,
    word: usize,
    mut out: ArrayViewMut1<f64>,
) {
    let d = pool.sub_dim();
    for (p, &idx) in mapping.row(word).iter().enumerate() {
        out.slice_mut(s![p * d..(p + 1) * d])
            .assign(&pool.data.row(idx as usize));
    }
}

/// Adds slice `p` of `upstream` into pool row `table[word][p]`.
#[inline]
pub(crate) fn scatter_add(
    grad: &mut PoolGradient,
    mapping: &SubVectorMapping,
    word: usize,
    upstream: ArrayView1<f64>,
) {
    let d = grad.sub_dim();
    for (p, &idx) in mapping.row(word).iter().enumerate() {
        let mut row = grad.data.row_mut(idx as usize);
        row += &upstream.slice(s![p * d..(p + 1) * d]);
    }
}

/// `[a_{table[w][0]}, …, a_{table[w][K-1]}]`.
pub fn embed_forward(
    pool: &EmbeddingPool,
    mapping: &SubVectorMapping,
    word: usize,
) -> Result<Vec<f64>> {
    pool.check(mapping)?;
    mapping.try_row(word)?;
    let mut out = ndarray::Array1::zeros(pool.sub_dim() * mapping.parts_per_word());
    gather_into(pool, mapping, word, out.view_mut());
    Ok(out.to_vec())
}

/// Accumulates `upstream` (length `N`) into the `K` rows used by `word`.
pub fn embed_backward(
    grad: &mut PoolGradient,
    mapping: &SubVectorMapping,
    word: usize,
    upstream: &[f64],
) -> Result<()> {
    grad.check(mapping)?;
    mapping.try_row(word)?;
    let n = grad.sub_dim() * mapping.parts_per_word();
    if upstream.len() != n {
        return Err(Error::Dimension(format!(
            "upstream has length {}, expected N={n}",
            upstream.len()
        )));
    }
    scatter_add(grad, mapping, word, ArrayView1::from(upstream));
    Ok(())
}

/// Parameter accounting for one embedding layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamCount {
    pub compressed: usize,
    pub uncompressed: usize,
    pub ratio: f64,
}

/// `M·N/K` shared parameters against `V·N` dense ones. The mapping table is
/// not counted.
pub fn param_count(v: usize, n: usize, k: usize, m: usize) -> Result<ParamCount> {
    if k == 0 || n % k != 0 {
        return Err(Error::Dimension(format!("K={k} does not divide N={n}")));
    }
    Ok(ParamCount {
        compressed: m * (n / k),
        uncompressed: v * n,
        ratio: m as f64 / (k * v) as f64,
    })
}

/// Input embedding layer: a pool plus its fixed mapping.
#[derive(Debug, Clone, PartialEq)]
pub struct SlimEmbedding {
    pub pool: EmbeddingPool,
    pub mapping: SubVectorMapping,
}

impl SlimEmbedding {
    pub fn new(pool: EmbeddingPool, mapping: SubVectorMapping) -> Result<Self> {
        pool.check(&mapping)?;
        Ok(SlimEmbedding { pool, mapping })
    }

    pub fn dim(&self) -> usize {
        self.pool.sub_dim() * self.mapping.parts_per_word()
    }

    pub fn vocab_size(&self) -> usize {
        self.mapping.vocab_size()
    }

    /// Embeds a batch of words into the rows of a `B × N` matrix.
    pub fn forward_batch(&self, words: &[usize]) -> Array2<f64> {
        let mut out = Array2::zeros((words.len(), self.dim()));
        for (b, &w) in words.iter().enumerate() {
            gather_into(&self.pool, &self.mapping, w, out.row_mut(b));
        }
        out
    }

    pub fn backward_batch(&self, grad: &mut PoolGradient, words: &[usize], upstream: &Array2<f64>) {
        for (b, &w) in words.iter().enumerate() {
            scatter_add(grad, &self.mapping, w, upstream.row(b));
        }
    }

    /// Materialized `V × N` matrix.
    pub fn dense(&self) -> Array2<f64> {
        let words: Vec<usize> = (0..self.vocab_size()).collect();
        self.forward_batch(&words)
    }
}

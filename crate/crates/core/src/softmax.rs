//! Output layers and losses.
//!
//! [`OutputLayer`] is the compressed softmax layer: word `w`'s output vector
//! is `e_w = [a_{w,0}, …, a_{w,K-1}]` where sub-vector `a_{w,p}` comes from
//! partition `p` of the pool. Because the context slice `h_p` only ever meets
//! sub-vectors of partition `p`, all logits follow from the `M` distinct
//! partial dot products:
//!
//! 1. `u_a = h_p · a` for every pool row `a` of partition `p`, which is `K`
//!    dense `(M/K × d)·d` products, `M·d` multiply-adds in total;
//! 2. `z_w = Σ_p u_{table[w][p]}`, which is `V·(K-1)` additions.
//!
//! [`DenseOutput`] is the ordinary `V × H` layer, used as the uncompressed
//! baseline. Both implement [`Output`], which is all the trainer and the NCE
//! loss need.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, Axis};

use crate::embedding::{gather_into, EmbeddingPool, PoolGradient};
use crate::error::{Error, Result};
use crate::mapping::SubVectorMapping;
use crate::rng::SplitMix64;

/// Multiply-add and addition counts recorded by the instrumented paths.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct FlopCounter {
    pub macs: u64,
    pub adds: u64,
}

/// Batch lanes summed together in the batched DP step.
const LANES: usize = 8;

/// Compressed output layer over a position-partitioned mapping.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputLayer {
    pub pool: EmbeddingPool,
    pub mapping: SubVectorMapping,
}

impl OutputLayer {
    pub fn new(pool: EmbeddingPool, mapping: SubVectorMapping) -> Result<Self> {
        if !mapping.scheme().is_partitioned() {
            return Err(Error::Unpartitioned(mapping.scheme().as_str()));
        }
        if pool.pool_size() != mapping.pool_size() {
            return Err(Error::Dimension(format!(
                "pool has {} rows, mapping expects M={}",
                pool.pool_size(),
                mapping.pool_size()
            )));
        }
        Ok(OutputLayer { pool, mapping })
    }

    pub fn parts(&self) -> usize {
        self.mapping.parts_per_word()
    }

    pub fn sub_dim(&self) -> usize {
        self.pool.sub_dim()
    }

    fn partition(&self) -> usize {
        self.mapping.pool_size() / self.parts()
    }

    fn check_hidden(&self, len: usize) -> Result<()> {
        let h = self.hidden_dim();
        if len != h {
            return Err(Error::Dimension(format!("hidden vector has length {len}, expected H={h}")));
        }
        Ok(())
    }

    /// Reference logits: one gather and one `H`-length dot product per word.
    pub fn logits_naive(&self, h: &[f64]) -> Result<Vec<f64>> {
        self.logits_naive_counted(h, &mut FlopCounter::default())
    }

    pub fn logits_naive_counted(&self, h: &[f64], flops: &mut FlopCounter) -> Result<Vec<f64>> {
        self.check_hidden(h.len())?;
        let d = self.sub_dim();
        let mut z = Vec::with_capacity(self.vocab_size());
        for w in 0..self.vocab_size() {
            let mut acc = 0.0;
            for (p, &idx) in self.mapping.row(w).iter().enumerate() {
                let a = self.pool.data.row(idx as usize);
                for j in 0..d {
                    acc += h[p * d + j] * a[j];
                }
            }
            flops.macs += (d * self.parts()) as u64;
            z.push(acc);
        }
        Ok(z)
    }

    /// Two-step dynamic-programming logits.
    pub fn logits_dp(&self, h: &[f64]) -> Result<Vec<f64>> {
        self.logits_dp_counted(h, &mut FlopCounter::default())
    }

    pub fn logits_dp_counted(&self, h: &[f64], flops: &mut FlopCounter) -> Result<Vec<f64>> {
        self.check_hidden(h.len())?;
        let partial = self.partial_products(ArrayView1::from(h), flops);
        let mut z = vec![0.0; self.vocab_size()];
        self.sum_partials(partial.view(), &mut z, flops);
        Ok(z)
    }

    /// Step 1: `u_a = h_p · a` for all `M` pool rows.
    pub fn partial_products(&self, h: ArrayView1<f64>, flops: &mut FlopCounter) -> Array1<f64> {
        let (d, part) = (self.sub_dim(), self.partition());
        let mut u = Array1::zeros(self.mapping.pool_size());
        for p in 0..self.parts() {
            let block = self.pool.data.slice(s![p * part..(p + 1) * part, ..]);
            let hp = h.slice(s![p * d..(p + 1) * d]);
            u.slice_mut(s![p * part..(p + 1) * part]).assign(&block.dot(&hp));
            flops.macs += (part * d) as u64;
        }
        u
    }

    /// Step 2: `z_w = Σ_p u_{table[w][p]}`.
    pub fn sum_partials(&self, u: ArrayView1<f64>, z: &mut [f64], flops: &mut FlopCounter) {
        let owned;
        let u = match u.as_slice() {
            Some(u) => u,
            None => {
                owned = u.to_vec();
                &owned[..]
            }
        };
        let k = self.parts();
        let table = self.mapping.table();
        for (w, zw) in z.iter_mut().enumerate() {
            let row = &table[w * k..(w + 1) * k];
            let mut acc = u[row[0] as usize];
            for &idx in &row[1..] {
                acc += u[idx as usize];
            }
            *zw = acc;
        }
        flops.adds += (self.vocab_size() * (k - 1)) as u64;
    }

    /// Step 1 for a `B × H` batch: `B × M` partial products, one gemm per
    /// partition.
    pub fn partials_batch(&self, h: ArrayView2<f64>) -> Array2<f64> {
        let (d, part, k) = (self.sub_dim(), self.partition(), self.parts());
        let mut u = Array2::zeros((h.nrows(), self.mapping.pool_size()));
        for p in 0..k {
            let block = self.pool.data.slice(s![p * part..(p + 1) * part, ..]);
            let hp = h.slice(s![.., p * d..(p + 1) * d]);
            u.slice_mut(s![.., p * part..(p + 1) * part])
                .assign(&hp.dot(&block.t()));
        }
        u
    }

    /// Step 2 for a batch of partial-product rows. Works on a transposed
    /// `M × B` copy padded to blocks of [`LANES`] so each word sums `K`
    /// short contiguous rows in registers.
    pub fn sum_partials_batch(&self, u: ArrayView2<f64>) -> Array2<f64> {
        let (b, m, v, k) = (u.nrows(), u.ncols(), self.vocab_size(), self.parts());
        let blocks = b.div_ceil(LANES);
        let stride = blocks * LANES;
        let mut ut = vec![0.0; m * stride];
        for (a, col) in u.axis_iter(Axis(1)).enumerate() {
            for (dst, x) in ut[a * stride..].iter_mut().zip(col) {
                *dst = *x;
            }
        }
        let mut z = Array2::zeros((b, v));
        let table = self.mapping.table();
        for (w, row) in table.chunks_exact(k).enumerate() {
            for blk in 0..blocks {
                let mut acc = [0.0; LANES];
                for &idx in row {
                    let start = idx as usize * stride + blk * LANES;
                    let src: &[f64; LANES] = ut[start..start + LANES].try_into().expect("block");
                    for (a, x) in acc.iter_mut().zip(src) {
                        *a += x;
                    }
                }
                for (j, a) in acc.iter().enumerate().take(b - blk * LANES) {
                    z[[blk * LANES + j, w]] = *a;
                }
            }
        }
        z
    }

    /// Gradient of `Σ_w grad_z[w]·z_w` with respect to `h` and the pool,
    /// via per-row aggregation `G_a = Σ_{(w,p): table[w][p]=a} grad_z[w]`.
    pub fn output_backward(
        &self,
        h: &[f64],
        grad_z: &[f64],
        grad_pool: &mut PoolGradient,
    ) -> Result<Vec<f64>> {
        self.check_hidden(h.len())?;
        if grad_z.len() != self.vocab_size() {
            return Err(Error::Dimension(format!(
                "grad_z has length {}, expected V={}",
                grad_z.len(),
                self.vocab_size()
            )));
        }
        self.check_grad(grad_pool)?;
        let hb = ArrayView2::from_shape((1, h.len()), h).expect("row");
        let gz = ArrayView2::from_shape((1, grad_z.len()), grad_z).expect("row");
        let gh = self.backward_batch(hb, gz, &mut grad_pool.data);
        Ok(gh.row(0).to_vec())
    }

    fn check_grad(&self, grad: &PoolGradient) -> Result<()> {
        if grad.data.dim() != self.pool.data.dim() {
            return Err(Error::Dimension(format!(
                "pool gradient shape {:?} differs from pool {:?}",
                grad.data.dim(),
                self.pool.data.dim()
            )));
        }
        Ok(())
    }

    /// Per-row aggregated upstream gradient `G` (`B × M`).
    fn aggregate(&self, grad_z: ArrayView2<f64>) -> Array2<f64> {
        let k = self.parts();
        let table = self.mapping.table();
        let mut agg = Array2::zeros((grad_z.nrows(), self.mapping.pool_size()));
        for (gz, mut g) in grad_z.outer_iter().zip(agg.outer_iter_mut()) {
            let g = g.as_slice_mut().expect("contiguous");
            for (w, &v) in gz.iter().enumerate() {
                for &idx in &table[w * k..(w + 1) * k] {
                    g[idx as usize] += v;
                }
            }
        }
        agg
    }
}

/// A trainable projection from hidden states to vocabulary logits.
pub trait Output {
    fn vocab_size(&self) -> usize;
    fn hidden_dim(&self) -> usize;
    fn weights(&self) -> &Array2<f64>;
    fn weights_mut(&mut self) -> &mut Array2<f64>;

    /// `B × H` hidden states to `B × V` logits.
    fn logits_batch(&self, h: ArrayView2<f64>) -> Array2<f64>;

    /// Accumulates the weight gradient of `Σ grad_z ⊙ z` into `grad` and
    /// returns the gradient with respect to `h`.
    fn backward_batch(&self, h: ArrayView2<f64>, grad_z: ArrayView2<f64>, grad: &mut Array2<f64>)
        -> Array2<f64>;

    /// Output vector `e_w`.
    fn word_vector(&self, w: usize, out: ArrayViewMut1<f64>);

    /// Adds `coef · e_w` to `grad_h` and `coef · h` into the rows of `grad`
    /// that make up `e_w`.
    fn accumulate_word(
        &self,
        w: usize,
        coef: f64,
        h: ArrayView1<f64>,
        grad_h: ArrayViewMut1<f64>,
        grad: &mut Array2<f64>,
    );

    fn score(&self, h: ArrayView1<f64>, w: usize) -> f64 {
        let mut e = Array1::zeros(self.hidden_dim());
        self.word_vector(w, e.view_mut());
        h.dot(&e)
    }
}

impl Output for OutputLayer {
    fn vocab_size(&self) -> usize {
        self.mapping.vocab_size()
    }

    fn hidden_dim(&self) -> usize {
        self.sub_dim() * self.parts()
    }

    fn weights(&self) -> &Array2<f64> {
        &self.pool.data
    }

    fn weights_mut(&mut self) -> &mut Array2<f64> {
        &mut self.pool.data
    }

    fn logits_batch(&self, h: ArrayView2<f64>) -> Array2<f64> {
        self.sum_partials_batch(self.partials_batch(h).view())
    }

    fn backward_batch(
        &self,
        h: ArrayView2<f64>,
        grad_z: ArrayView2<f64>,
        grad: &mut Array2<f64>,
    ) -> Array2<f64> {
        let (d, part, k) = (self.sub_dim(), self.partition(), self.parts());
        let agg = self.aggregate(grad_z);
        let mut grad_h = Array2::zeros((h.nrows(), self.hidden_dim()));
        for p in 0..k {
            let rows = s![p * part..(p + 1) * part, ..];
            let g = agg.slice(s![.., p * part..(p + 1) * part]);
            let hp = h.slice(s![.., p * d..(p + 1) * d]);
            grad_h
                .slice_mut(s![.., p * d..(p + 1) * d])
                .assign(&g.dot(&self.pool.data.slice(rows)));
            let mut gp = grad.slice_mut(rows);
            gp += &g.t().dot(&hp);
        }
        grad_h
    }

    fn word_vector(&self, w: usize, out: ArrayViewMut1<f64>) {
        gather_into(&self.pool, &self.mapping, w, out);
    }

    fn accumulate_word(
        &self,
        w: usize,
        coef: f64,
        h: ArrayView1<f64>,
        mut grad_h: ArrayViewMut1<f64>,
        grad: &mut Array2<f64>,
    ) {
        let d = self.sub_dim();
        for (p, &idx) in self.mapping.row(w).iter().enumerate() {
            let idx = idx as usize;
            let cols = s![p * d..(p + 1) * d];
            grad_h
                .slice_mut(cols)
                .scaled_add(coef, &self.pool.data.row(idx));
            grad.row_mut(idx).scaled_add(coef, &h.slice(cols));
        }
    }
}

/// Uncompressed `V × H` output matrix; row `w` is `e_w`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseOutput {
    pub weight: Array2<f64>,
}

impl DenseOutput {
    pub fn zeros(vocab_size: usize, hidden: usize) -> Self {
        DenseOutput {
            weight: Array2::zeros((vocab_size, hidden)),
        }
    }
}

impl Output for DenseOutput {
    fn vocab_size(&self) -> usize {
        self.weight.nrows()
    }

    fn hidden_dim(&self) -> usize {
        self.weight.ncols()
    }

    fn weights(&self) -> &Array2<f64> {
        &self.weight
    }

    fn weights_mut(&mut self) -> &mut Array2<f64> {
        &mut self.weight
    }

    fn logits_batch(&self, h: ArrayView2<f64>) -> Array2<f64> {
        h.dot(&self.weight.t())
    }

    fn backward_batch(
        &self,
        h: ArrayView2<f64>,
        grad_z: ArrayView2<f64>,
        grad: &mut Array2<f64>,
    ) -> Array2<f64> {
        *grad += &grad_z.t().dot(&h);
        grad_z.dot(&self.weight)
    }

    fn word_vector(&self, w: usize, mut out: ArrayViewMut1<f64>) {
        out.assign(&self.weight.row(w));
    }

    fn accumulate_word(
        &self,
        w: usize,
        coef: f64,
        h: ArrayView1<f64>,
        mut grad_h: ArrayViewMut1<f64>,
        grad: &mut Array2<f64>,
    ) {
        grad_h.scaled_add(coef, &self.weight.row(w));
        grad.row_mut(w).scaled_add(coef, &h);
    }
}

/// `log Σ exp(z)` with max subtraction.
pub fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + z.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

/// Normalized probabilities `exp(z_w) / Σ exp(z)`.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(z);
    z.iter().map(|&x| (x - lse).exp()).collect()
}

/// Cross-entropy `-log p(target)` and its gradient `p - onehot(target)`.
pub fn softmax_xent(z: &[f64], target: usize) -> Result<(f64, Vec<f64>)> {
    if target >= z.len() {
        return Err(Error::WordOutOfRange {
            word: target,
            vocab_size: z.len(),
        });
    }
    let lse = log_sum_exp(z);
    let mut grad: Vec<f64> = z.iter().map(|&x| (x - lse).exp()).collect();
    grad[target] -= 1.0;
    Ok((lse - z[target], grad))
}

/// Row-wise [`softmax_xent`] over `B × V` logits, overwriting `z` with
/// `scale · (p - onehot)`. Returns the summed loss.
pub fn softmax_xent_batch(z: &mut Array2<f64>, targets: &[usize], scale: f64) -> f64 {
    let mut total = 0.0;
    for (mut row, &t) in z.axis_iter_mut(Axis(0)).zip(targets) {
        let r = row.as_slice_mut().expect("contiguous");
        let lse = log_sum_exp(r);
        total += lse - r[t];
        for x in r.iter_mut() {
            *x = scale * (*x - lse).exp();
        }
        r[t] -= scale;
    }
    total
}

/// `log(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Smoothed unigram noise distribution with cumulative-table sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseTable {
    probs: Vec<f64>,
    cumulative: Vec<f64>,
}

impl NoiseTable {
    /// `prob_w ∝ counts_w^power`. Zero counts stay at probability zero.
    pub fn new(counts: &[f64], power: f64) -> Result<Self> {
        if counts.iter().any(|&c| !(c >= 0.0) || !c.is_finite()) {
            return Err(Error::Dimension("noise counts must be finite and non-negative".into()));
        }
        let weights: Vec<f64> = counts
            .iter()
            .map(|&c| if c > 0.0 { c.powf(power) } else { 0.0 })
            .collect();
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Dimension("noise counts are all zero".into()));
        }
        let probs: Vec<f64> = weights.iter().map(|&w| w / total).collect();
        let mut cumulative = Vec::with_capacity(probs.len());
        let mut acc = 0.0;
        for &p in &probs {
            acc += p;
            cumulative.push(acc);
        }
        // Pin the top of the last nonzero bucket so every draw lands somewhere.
        let last = probs.iter().rposition(|&p| p > 0.0).expect("positive total");
        for c in &mut cumulative[last..] {
            *c = 1.0;
        }
        Ok(NoiseTable { probs, cumulative })
    }

    pub fn from_counts(counts: &[usize], power: f64) -> Result<Self> {
        let c: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
        Self::new(&c, power)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, w: usize) -> f64 {
        self.probs[w]
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn sample(&self, rng: &mut SplitMix64) -> usize {
        let u = rng.next_f64();
        self.cumulative.partition_point(|&c| c <= u)
    }
}

/// Result of one NCE term.
#[derive(Debug, Clone)]
pub struct NceOutcome {
    pub loss: f64,
    pub samples: Vec<usize>,
}

/// NCE loss for one context vector with `num_noise` draws, treating `z_w` as
/// a self-normalized log score. Adds `scale ·` the gradient into `grad_h`
/// and `grad` (only the rows behind the `k + 1` touched words change).
#[allow(clippy::too_many_arguments)]
pub fn nce_loss<O: Output + ?Sized>(
    layer: &O,
    h: ArrayView1<f64>,
    target: usize,
    noise: &NoiseTable,
    num_noise: usize,
    rng: &mut SplitMix64,
    scale: f64,
    mut grad_h: ArrayViewMut1<f64>,
    grad: &mut Array2<f64>,
) -> Result<NceOutcome> {
    if target >= layer.vocab_size() {
        return Err(Error::WordOutOfRange {
            word: target,
            vocab_size: layer.vocab_size(),
        });
    }
    if noise.is_empty() || noise.len() != layer.vocab_size() {
        return Err(Error::Dimension(format!(
            "noise table covers {} words, layer has {}",
            noise.len(),
            layer.vocab_size()
        )));
    }
    if num_noise == 0 {
        return Err(Error::Dimension("NCE needs at least one noise sample".into()));
    }
    let k = num_noise as f64;
    let samples: Vec<usize> = (0..num_noise).map(|_| noise.sample(rng)).collect();

    let delta = |w: usize| layer.score(h, w) - (k * noise.prob(w)).ln();
    let dt = delta(target);
    let mut loss = softplus(-dt);
    layer.accumulate_word(target, scale * (sigmoid(dt) - 1.0), h, grad_h.view_mut(), grad);
    for &x in &samples {
        let dx = delta(x);
        loss += softplus(dx);
        layer.accumulate_word(x, scale * sigmoid(dx), h, grad_h.view_mut(), grad);
    }
    Ok(NceOutcome { loss, samples })
}

//! Multi-layer LSTM with dropout on the non-recurrent connections and full
//! backpropagation through time.
//!
//! Each layer holds one fused affine map from `[D(x); h_prev]` (width `2n`)
//! to the four gate pre-activations (width `4n`), column blocks ordered
//! `(i, f, o, g)`. Everything is batched: a "vector" is a `B × n` matrix.

use ndarray::linalg::general_mat_mul;
use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::softmax::sigmoid;

#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayerParams {
    /// `2n × 4n`.
    pub weight: Array2<f64>,
    /// `4n`.
    pub bias: Array1<f64>,
}

impl LstmLayerParams {
    pub fn zeros(n: usize) -> Self {
        LstmLayerParams {
            weight: Array2::zeros((2 * n, 4 * n)),
            bias: Array1::zeros(4 * n),
        }
    }

    pub fn hidden(&self) -> usize {
        self.bias.len() / 4
    }
}

/// Per-layer recurrent state, each `B × n`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<Array2<f64>>,
    pub c: Vec<Array2<f64>>,
}

impl LstmState {
    pub fn zeros(layers: usize, batch: usize, n: usize) -> Self {
        LstmState {
            h: vec![Array2::zeros((batch, n)); layers],
            c: vec![Array2::zeros((batch, n)); layers],
        }
    }
}

/// Inverted dropout: entries are `0` or `1/keep_prob`.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    pub scale: Array2<f64>,
    pub keep_prob: f64,
}

impl DropoutMask {
    pub fn sample(rows: usize, cols: usize, keep_prob: f64, rng: &mut SplitMix64) -> Self {
        let inv = 1.0 / keep_prob;
        let scale = Array2::from_shape_simple_fn((rows, cols), || {
            if rng.next_f64() < keep_prob {
                inv
            } else {
                0.0
            }
        });
        DropoutMask { scale, keep_prob }
    }

    pub fn apply(&self, x: ArrayView2<f64>) -> Array2<f64> {
        &x * &self.scale
    }
}

/// Samples a mask unless nothing would be dropped.
pub fn maybe_mask(
    rows: usize,
    cols: usize,
    drop_prob: f64,
    rng: &mut SplitMix64,
) -> Option<DropoutMask> {
    (drop_prob > 0.0).then(|| DropoutMask::sample(rows, cols, 1.0 - drop_prob, rng))
}

/// Activations kept from the forward pass.
#[derive(Debug, Clone)]
pub struct CellCache {
    /// `[D(x), h_prev]`, `B × 2n`.
    xh: Array2<f64>,
    /// Post-activation gates `(i, f, o, g)`, `B × 4n`.
    gates: Array2<f64>,
    c_prev: Array2<f64>,
    tanh_c: Array2<f64>,
    mask: Option<Array2<f64>>,
}

/// `xh · W + b`. Very small batches skip the gemm, whose packing of `W`
/// would dominate.
fn affine(xh: ArrayView2<f64>, params: &LstmLayerParams) -> Array2<f64> {
    if xh.nrows() > 4 {
        let mut gates = xh.dot(&params.weight);
        gates += &params.bias;
        return gates;
    }
    let mut gates = Array2::zeros((xh.nrows(), params.weight.ncols()));
    for (x, mut g) in xh.outer_iter().zip(gates.outer_iter_mut()) {
        g.assign(&params.bias);
        for (&xi, w) in x.iter().zip(params.weight.outer_iter()) {
            g.scaled_add(xi, &w);
        }
    }
    gates
}

fn cell_forward(
    params: &LstmLayerParams,
    x: ArrayView2<f64>,
    h_prev: ArrayView2<f64>,
    c_prev: ArrayView2<f64>,
    mask: Option<&DropoutMask>,
) -> (Array2<f64>, Array2<f64>, CellCache) {
    let n = params.hidden();
    let batch = x.nrows();
    let x = match mask {
        Some(m) => m.apply(x),
        None => x.to_owned(),
    };
    let xh = concatenate![Axis(1), x, h_prev];
    let mut gates = affine(xh.view(), params);

    let mut c = Array2::zeros((batch, n));
    let mut tanh_c = Array2::zeros((batch, n));
    let mut h = Array2::zeros((batch, n));
    for b in 0..batch {
        let g = gates.row_mut(b).into_slice().expect("contiguous");
        for v in &mut g[..3 * n] {
            *v = sigmoid(*v);
        }
        for v in &mut g[3 * n..] {
            *v = v.tanh();
        }
        for j in 0..n {
            let (i, f, o, gg) = (g[j], g[n + j], g[2 * n + j], g[3 * n + j]);
            let cj = f * c_prev[[b, j]] + i * gg;
            let tc = cj.tanh();
            c[[b, j]] = cj;
            tanh_c[[b, j]] = tc;
            h[[b, j]] = o * tc;
        }
    }
    let cache = CellCache {
        xh,
        gates,
        c_prev: c_prev.to_owned(),
        tanh_c,
        mask: mask.map(|m| m.scale.clone()),
    };
    (h, c, cache)
}

/// Gradients leaving one cell step.
#[derive(Debug, Clone)]
pub struct CellGrads {
    pub x: Array2<f64>,
    pub h_prev: Array2<f64>,
    pub c_prev: Array2<f64>,
}

fn cell_backward(
    params: &LstmLayerParams,
    cache: &CellCache,
    grad_h: ArrayView2<f64>,
    grad_c: ArrayView2<f64>,
    grads: &mut LstmLayerParams,
) -> CellGrads {
    let n = params.hidden();
    let batch = grad_h.nrows();
    let mut dpre = Array2::zeros((batch, 4 * n));
    let mut dc_prev = Array2::zeros((batch, n));
    for b in 0..batch {
        let g = cache.gates.row(b);
        let g = g.as_slice().expect("contiguous");
        let d = dpre.row_mut(b).into_slice().expect("contiguous");
        for j in 0..n {
            let (i, f, o, gg) = (g[j], g[n + j], g[2 * n + j], g[3 * n + j]);
            let tc = cache.tanh_c[[b, j]];
            let dh = grad_h[[b, j]];
            let dc = grad_c[[b, j]] + dh * o * (1.0 - tc * tc);
            d[j] = dc * gg * i * (1.0 - i);
            d[n + j] = dc * cache.c_prev[[b, j]] * f * (1.0 - f);
            d[2 * n + j] = dh * tc * o * (1.0 - o);
            d[3 * n + j] = dc * i * (1.0 - gg * gg);
            dc_prev[[b, j]] = dc * f;
        }
    }
    general_mat_mul(1.0, &cache.xh.t(), &dpre, 1.0, &mut grads.weight);
    grads.bias += &dpre.sum_axis(Axis(0));
    let dxh = dpre.dot(&params.weight.t());
    let mut dx = dxh.slice(s![.., ..n]).to_owned();
    if let Some(mask) = &cache.mask {
        dx *= mask;
    }
    CellGrads {
        x: dx,
        h_prev: dxh.slice(s![.., n..]).to_owned(),
        c_prev: dc_prev,
    }
}

fn check_cell_dims(
    params: &LstmLayerParams,
    x: ArrayView2<f64>,
    h_prev: ArrayView2<f64>,
    c_prev: ArrayView2<f64>,
) -> Result<()> {
    let n = params.hidden();
    if params.weight.dim() != (2 * n, 4 * n) {
        return Err(Error::Dimension(format!(
            "weight is {:?}, expected ({}, {})",
            params.weight.dim(),
            2 * n,
            4 * n
        )));
    }
    let batch = x.nrows();
    for (name, dim) in [("x", x.dim()), ("h_prev", h_prev.dim()), ("c_prev", c_prev.dim())] {
        if dim != (batch, n) {
            return Err(Error::Dimension(format!(
                "{name} is {dim:?}, expected ({batch}, {n})"
            )));
        }
    }
    Ok(())
}

/// One LSTM step: `(i,f,o,g) = (σ,σ,σ,tanh)(T[D(x); h_prev])`,
/// `c = f⊙c_prev + i⊙g`, `h = o⊙tanh(c)`.
pub fn lstm_cell_forward(
    params: &LstmLayerParams,
    x: ArrayView2<f64>,
    h_prev: ArrayView2<f64>,
    c_prev: ArrayView2<f64>,
    mask: Option<&DropoutMask>,
) -> Result<(Array2<f64>, Array2<f64>, CellCache)> {
    check_cell_dims(params, x, h_prev, c_prev)?;
    if let Some(m) = mask {
        if m.scale.dim() != x.dim() {
            return Err(Error::Dimension("dropout mask shape differs from input".into()));
        }
    }
    let finite = |m: &ArrayView2<f64>| m.iter().all(|v| v.is_finite());
    if !(finite(&x) && finite(&h_prev) && finite(&c_prev)) {
        return Err(Error::NonFinite("LSTM cell input".into()));
    }
    Ok(cell_forward(params, x, h_prev, c_prev, mask))
}

/// Reverse-mode step; parameter gradients are added into `grads`.
pub fn lstm_cell_backward(
    params: &LstmLayerParams,
    cache: &CellCache,
    grad_h: ArrayView2<f64>,
    grad_c: ArrayView2<f64>,
    grads: &mut LstmLayerParams,
) -> Result<CellGrads> {
    let n = params.hidden();
    let batch = cache.xh.nrows();
    if cache.xh.ncols() != 2 * n
        || grad_h.dim() != (batch, n)
        || grad_c.dim() != (batch, n)
        || grads.weight.dim() != params.weight.dim()
        || grads.bias.len() != params.bias.len()
    {
        return Err(Error::Dimension("cell backward shapes do not match the cache".into()));
    }
    Ok(cell_backward(params, cache, grad_h, grad_c, grads))
}

/// Dropout masks for one time step: one per layer input plus one on the
/// top hidden state before the output layer.
#[derive(Debug, Clone, Default)]
pub struct StepMasks {
    pub inputs: Vec<Option<DropoutMask>>,
    pub output: Option<DropoutMask>,
}

impl StepMasks {
    /// Embedding→LSTM drops with `drop_embed`; every other non-recurrent
    /// connection drops with `drop_other`.
    pub fn sample(
        layers: usize,
        batch: usize,
        n: usize,
        drop_embed: f64,
        drop_other: f64,
        rng: &mut SplitMix64,
    ) -> Self {
        let inputs = (0..layers)
            .map(|l| {
                let p = if l == 0 { drop_embed } else { drop_other };
                maybe_mask(batch, n, p, rng)
            })
            .collect();
        let output = maybe_mask(batch, n, drop_other, rng);
        StepMasks { inputs, output }
    }
}

/// Everything `stack_backward` needs from a window.
#[derive(Debug, Clone)]
pub struct StackCache {
    cells: Vec<Vec<CellCache>>,
    output_masks: Vec<Option<Array2<f64>>>,
}

impl StackCache {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmStack {
    pub layers: Vec<LstmLayerParams>,
}

impl LstmStack {
    pub fn zeros(layers: usize, n: usize) -> Self {
        LstmStack {
            layers: vec![LstmLayerParams::zeros(n); layers],
        }
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn hidden(&self) -> usize {
        self.layers[0].hidden()
    }

    pub fn zero_grads(&self) -> Vec<LstmLayerParams> {
        self.layers
            .iter()
            .map(|l| LstmLayerParams::zeros(l.hidden()))
            .collect()
    }

    /// Runs the window `inputs` (`T` matrices of `B × n`) from `state`.
    /// `masks` is either empty (no dropout) or one entry per time step.
    /// Returns the (dropped-out) top hidden states and the final state.
    pub fn stack_forward(
        &self,
        inputs: &[Array2<f64>],
        state: &LstmState,
        masks: &[StepMasks],
    ) -> Result<(Vec<Array2<f64>>, LstmState, StackCache)> {
        let n = self.hidden();
        if !masks.is_empty() && masks.len() != inputs.len() {
            return Err(Error::Dimension(format!(
                "{} mask steps for {} inputs",
                masks.len(),
                inputs.len()
            )));
        }
        if state.h.len() != self.num_layers() || state.c.len() != self.num_layers() {
            return Err(Error::Dimension("state layer count differs from stack".into()));
        }
        let mut state = state.clone();
        let mut tops = Vec::with_capacity(inputs.len());
        let mut cells = Vec::with_capacity(inputs.len());
        let mut output_masks = Vec::with_capacity(inputs.len());
        for (t, x) in inputs.iter().enumerate() {
            if x.ncols() != n || x.nrows() != state.h[0].nrows() {
                return Err(Error::Dimension(format!(
                    "input at step {t} is {:?}, expected ({}, {n})",
                    x.dim(),
                    state.h[0].nrows()
                )));
            }
            let step = masks.get(t);
            let mut layer_in = x.clone();
            let mut step_cells = Vec::with_capacity(self.num_layers());
            for (l, params) in self.layers.iter().enumerate() {
                let mask = step.and_then(|m| m.inputs.get(l)).and_then(Option::as_ref);
                let (h, c, cache) =
                    cell_forward(params, layer_in.view(), state.h[l].view(), state.c[l].view(), mask);
                state.h[l] = h.clone();
                state.c[l] = c;
                step_cells.push(cache);
                layer_in = h;
            }
            let out_mask = step.and_then(|m| m.output.as_ref());
            let top = match out_mask {
                Some(m) => m.apply(layer_in.view()),
                None => layer_in,
            };
            tops.push(top);
            cells.push(step_cells);
            output_masks.push(out_mask.map(|m| m.scale.clone()));
        }
        Ok((tops, state, StackCache { cells, output_masks }))
    }

    /// Backpropagates `grad_tops` through the window. State gradients past
    /// the window start are dropped. Returns the gradients with respect to
    /// the embedded inputs; parameter gradients are added into `grads`.
    pub fn stack_backward(
        &self,
        cache: &StackCache,
        grad_tops: &[Array2<f64>],
        grads: &mut [LstmLayerParams],
    ) -> Result<Vec<Array2<f64>>> {
        if grad_tops.len() != cache.len() {
            return Err(Error::Dimension(format!(
                "{} upstream steps for a window of {}",
                grad_tops.len(),
                cache.len()
            )));
        }
        if grads.len() != self.num_layers() {
            return Err(Error::Dimension("gradient layer count differs from stack".into()));
        }
        let n = self.hidden();
        let layers = self.num_layers();
        let batch = grad_tops.first().map_or(0, |g| g.nrows());
        let mut dh_next = vec![Array2::<f64>::zeros((batch, n)); layers];
        let mut dc_next = vec![Array2::<f64>::zeros((batch, n)); layers];
        let mut grad_inputs = vec![Array2::zeros((batch, n)); cache.len()];
        for t in (0..cache.len()).rev() {
            let mut upstream = match &cache.output_masks[t] {
                Some(m) => &grad_tops[t] * m,
                None => grad_tops[t].clone(),
            };
            for l in (0..layers).rev() {
                upstream += &dh_next[l];
                let g = cell_backward(
                    &self.layers[l],
                    &cache.cells[t][l],
                    upstream.view(),
                    dc_next[l].view(),
                    &mut grads[l],
                );
                dh_next[l] = g.h_prev;
                dc_next[l] = g.c_prev;
                upstream = g.x;
            }
            grad_inputs[t] = upstream;
        }
        Ok(grad_inputs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_layer(n: usize, rng: &mut SplitMix64) -> LstmLayerParams {
        LstmLayerParams {
            weight: Array2::from_shape_simple_fn((2 * n, 4 * n), || rng.symmetric(0.5)),
            bias: Array1::from_shape_simple_fn(4 * n, || rng.symmetric(0.5)),
        }
    }

    fn random_mat(r: usize, c: usize, rng: &mut SplitMix64) -> Array2<f64> {
        Array2::from_shape_simple_fn((r, c), || rng.symmetric(1.0))
    }

    #[test]
    fn zero_params_zero_state() {
        let p = LstmLayerParams::zeros(3);
        let x = Array2::from_elem((2, 3), 0.7);
        let z = Array2::zeros((2, 3));
        let (h, c, cache) = lstm_cell_forward(&p, x.view(), z.view(), z.view(), None).unwrap();
        assert!(h.iter().all(|&v| v == 0.0));
        assert!(c.iter().all(|&v| v == 0.0));
        let g = cache.gates.row(0);
        assert!(g.iter().take(9).all(|&v| v == 0.5));
        assert!(g.iter().skip(9).all(|&v| v == 0.0));
    }

    #[test]
    fn zero_params_carry_half_the_cell() {
        let p = LstmLayerParams::zeros(2);
        let x = Array2::zeros((1, 2));
        let c_prev = Array2::from_shape_vec((1, 2), vec![1.0, -3.0]).unwrap();
        let (h, c, _) = lstm_cell_forward(&p, x.view(), x.view(), c_prev.view(), None).unwrap();
        for j in 0..2 {
            let v = c_prev[[0, j]];
            assert_eq!(c[[0, j]], 0.5 * v);
            assert!((h[[0, j]] - 0.5 * (0.5 * v).tanh()).abs() < 1e-16);
        }
    }

    #[test]
    fn gates_stay_in_range() {
        let mut rng = SplitMix64::new(1);
        let mut p = random_layer(4, &mut rng);
        p.weight.mapv_inplace(|v| v * 40.0);
        let x = random_mat(3, 4, &mut rng);
        let h = random_mat(3, 4, &mut rng);
        let c = random_mat(3, 4, &mut rng);
        let (_, _, cache) = lstm_cell_forward(&p, x.view(), h.view(), c.view(), None).unwrap();
        for row in cache.gates.outer_iter() {
            for (j, &v) in row.iter().enumerate() {
                if j < 12 {
                    assert!((0.0..=1.0).contains(&v));
                } else {
                    assert!((-1.0..=1.0).contains(&v));
                }
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let p = LstmLayerParams::zeros(2);
        let ok = Array2::zeros((1, 2));
        let bad = Array2::zeros((1, 3));
        assert!(lstm_cell_forward(&p, bad.view(), ok.view(), ok.view(), None).is_err());
        let nan = Array2::from_elem((1, 2), f64::NAN);
        assert!(matches!(
            lstm_cell_forward(&p, nan.view(), ok.view(), ok.view(), None),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut rng = SplitMix64::new(2);
        let p = random_layer(3, &mut rng);
        let x = random_mat(2, 3, &mut rng);
        let (_, _, cache) = lstm_cell_forward(&p, x.view(), x.view(), x.view(), None).unwrap();
        let mut grads = LstmLayerParams::zeros(3);
        let z = Array2::zeros((2, 3));
        let g = lstm_cell_backward(&p, &cache, z.view(), z.view(), &mut grads).unwrap();
        assert!(g.x.iter().chain(g.h_prev.iter()).chain(g.c_prev.iter()).all(|&v| v == 0.0));
        assert!(grads.weight.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_cell_closed_form() {
        // n = 1: weight rows are [x, h], columns (i, f, o, g).
        let p = LstmLayerParams {
            weight: Array2::from_shape_vec((2, 4), vec![0.3, -0.2, 0.5, 0.7, 0.1, 0.4, -0.6, 0.2])
                .unwrap(),
            bias: Array1::from(vec![0.05, -0.1, 0.2, 0.0]),
        };
        let (x, hp, cp) = (0.8, -0.4, 0.25);
        let xm = Array2::from_elem((1, 1), x);
        let hm = Array2::from_elem((1, 1), hp);
        let cm = Array2::from_elem((1, 1), cp);
        let (h, c, cache) = lstm_cell_forward(&p, xm.view(), hm.view(), cm.view(), None).unwrap();

        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let pre = |col: usize| p.weight[[0, col]] * x + p.weight[[1, col]] * hp + p.bias[col];
        let (i, f, o, g) = (sig(pre(0)), sig(pre(1)), sig(pre(2)), pre(3).tanh());
        let c_ref = f * cp + i * g;
        let h_ref = o * c_ref.tanh();
        assert!((c[[0, 0]] - c_ref).abs() < 1e-15);
        assert!((h[[0, 0]] - h_ref).abs() < 1e-15);

        // dh/dx by the chain rule, written out per gate.
        let tc = c_ref.tanh();
        let dc_dx = cp * f * (1.0 - f) * p.weight[[0, 1]]
            + g * i * (1.0 - i) * p.weight[[0, 0]]
            + i * (1.0 - g * g) * p.weight[[0, 3]];
        let dh_dx = o * (1.0 - o) * p.weight[[0, 2]] * tc + o * (1.0 - tc * tc) * dc_dx;
        let dh_dcp = o * (1.0 - tc * tc) * f;

        let mut grads = LstmLayerParams::zeros(1);
        let one = Array2::from_elem((1, 1), 1.0);
        let zero = Array2::zeros((1, 1));
        let g_out = lstm_cell_backward(&p, &cache, one.view(), zero.view(), &mut grads).unwrap();
        assert!((g_out.x[[0, 0]] - dh_dx).abs() < 1e-14);
        assert!((g_out.c_prev[[0, 0]] - dh_dcp).abs() < 1e-14);
        // dh/dbias_o = o(1-o)·tanh(c).
        assert!((grads.bias[2] - o * (1.0 - o) * tc).abs() < 1e-14);
    }

    #[test]
    fn single_layer_stack_is_repeated_cells() {
        let mut rng = SplitMix64::new(3);
        let stack = LstmStack {
            layers: vec![random_layer(3, &mut rng)],
        };
        let inputs: Vec<_> = (0..4).map(|_| random_mat(2, 3, &mut rng)).collect();
        let state = LstmState::zeros(1, 2, 3);
        let (tops, fin, _) = stack.stack_forward(&inputs, &state, &[]).unwrap();
        let (mut h, mut c) = (state.h[0].clone(), state.c[0].clone());
        for (t, x) in inputs.iter().enumerate() {
            let (h2, c2, _) =
                lstm_cell_forward(&stack.layers[0], x.view(), h.view(), c.view(), None).unwrap();
            h = h2;
            c = c2;
            assert_eq!(tops[t], h);
        }
        assert_eq!(fin.h[0], h);
        assert_eq!(fin.c[0], c);
    }

    #[test]
    fn keep_all_masks_match_no_dropout() {
        let mut rng = SplitMix64::new(4);
        let stack = LstmStack {
            layers: vec![random_layer(3, &mut rng), random_layer(3, &mut rng)],
        };
        let inputs: Vec<_> = (0..3).map(|_| random_mat(2, 3, &mut rng)).collect();
        let state = LstmState::zeros(2, 2, 3);
        let masks: Vec<_> = (0..3)
            .map(|_| StepMasks::sample(2, 2, 3, 0.0, 0.0, &mut rng))
            .collect();
        assert!(masks[0].inputs.iter().all(Option::is_none));
        let keep_one: Vec<_> = (0..3)
            .map(|_| StepMasks {
                inputs: vec![
                    Some(DropoutMask::sample(2, 3, 1.0, &mut rng)),
                    Some(DropoutMask::sample(2, 3, 1.0, &mut rng)),
                ],
                output: Some(DropoutMask::sample(2, 3, 1.0, &mut rng)),
            })
            .collect();
        let (a, _, _) = stack.stack_forward(&inputs, &state, &[]).unwrap();
        let (b, _, _) = stack.stack_forward(&inputs, &state, &masks).unwrap();
        let (c, _, _) = stack.stack_forward(&inputs, &state, &keep_one).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn dropout_expectation_is_identity() {
        let mut rng = SplitMix64::new(5);
        let keep = 0.7;
        let draws = 20_000;
        let mut sum = 0.0;
        for _ in 0..draws {
            let m = DropoutMask::sample(1, 1, keep, &mut rng);
            sum += m.scale[[0, 0]];
        }
        let mean = sum / draws as f64;
        // Var of a Bernoulli(keep)/keep is (1-keep)/keep.
        let sigma = ((1.0 - keep) / keep / draws as f64).sqrt();
        assert!((mean - 1.0).abs() < 3.0 * sigma, "mean {mean}");
        let m = DropoutMask::sample(10, 10, keep, &mut rng);
        assert!(m.scale.iter().all(|&v| v == 0.0 || v == 1.0 / keep));
    }

    #[test]
    fn zero_upstream_stack_backward() {
        let mut rng = SplitMix64::new(6);
        let stack = LstmStack {
            layers: vec![random_layer(2, &mut rng), random_layer(2, &mut rng)],
        };
        let inputs: Vec<_> = (0..3).map(|_| random_mat(1, 2, &mut rng)).collect();
        let (_, _, cache) = stack
            .stack_forward(&inputs, &LstmState::zeros(2, 1, 2), &[])
            .unwrap();
        let mut grads = stack.zero_grads();
        let up = vec![Array2::zeros((1, 2)); 3];
        let gi = stack.stack_backward(&cache, &up, &mut grads).unwrap();
        assert!(gi.iter().all(|g| g.iter().all(|&v| v == 0.0)));
        assert!(grads.iter().all(|g| g.weight.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn window_of_one_is_cell_backward() {
        let mut rng = SplitMix64::new(7);
        let stack = LstmStack {
            layers: vec![random_layer(3, &mut rng)],
        };
        let x = random_mat(2, 3, &mut rng);
        let mut state = LstmState::zeros(1, 2, 3);
        state.h[0] = random_mat(2, 3, &mut rng);
        state.c[0] = random_mat(2, 3, &mut rng);
        let (_, _, cache) = stack.stack_forward(&[x.clone()], &state, &[]).unwrap();
        let up = random_mat(2, 3, &mut rng);
        let mut g_stack = stack.zero_grads();
        let gi = stack.stack_backward(&cache, &[up.clone()], &mut g_stack).unwrap();

        let (_, _, cell) =
            lstm_cell_forward(&stack.layers[0], x.view(), state.h[0].view(), state.c[0].view(), None)
                .unwrap();
        let mut g_cell = LstmLayerParams::zeros(3);
        let zero = Array2::zeros((2, 3));
        let g = lstm_cell_backward(&stack.layers[0], &cell, up.view(), zero.view(), &mut g_cell)
            .unwrap();
        assert_eq!(gi[0], g.x);
        assert_eq!(g_stack[0], g_cell);
    }

    #[test]
    fn mismatched_masks_rejected() {
        let stack = LstmStack::zeros(1, 2);
        let inputs = vec![Array2::zeros((1, 2)); 2];
        let masks = vec![StepMasks::default()];
        assert!(stack
            .stack_forward(&inputs, &LstmState::zeros(1, 1, 2), &masks)
            .is_err());
    }
}

#![allow(dead_code)]

use ndarray::{Array1, Array2};
use slimlm::corpus::{batchify, TokenStream, Window};
use slimlm::embedding::{embed_backward, embed_forward, EmbeddingPool};
use slimlm::lstm::{lstm_cell_backward, lstm_cell_forward, DropoutMask, LstmLayerParams, LstmStack, StepMasks};
use slimlm::mapping::{Scheme, SubVectorMapping};
use slimlm::model::{Gradients, LossKind, Model, ModelConfig, Objective, Sharing};
use slimlm::rng::SplitMix64;
use slimlm::softmax::{NoiseTable, OutputLayer};

pub const STEP: f64 = 1e-5;

/// Outcome of a central-difference gradient check.
#[derive(Debug, Clone, Copy, Default)]
pub struct FdReport {
    pub checked: usize,
    pub within_1e6: usize,
    pub worst: f64,
}

impl FdReport {
    pub fn merge(self, other: FdReport) -> FdReport {
        FdReport {
            checked: self.checked + other.checked,
            within_1e6: self.within_1e6 + other.within_1e6,
            worst: self.worst.max(other.worst),
        }
    }

    pub fn fraction_ok(&self) -> f64 {
        self.within_1e6 as f64 / self.checked as f64
    }

    pub fn passes(&self) -> bool {
        self.checked > 0 && self.fraction_ok() >= 0.99 && self.worst < 1e-4
    }

    pub fn assert_passes(&self, what: &str) {
        assert!(self.passes(), "{what}: {self:?}");
    }
}

/// `|a - n| / max(|a|, |n|)`, with differences below `1e-10` in absolute
/// terms counted as exact.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff < 1e-10 {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs())
}

/// Checks `analytic[i]` against `(f(i, +h) - f(i, -h)) / 2h` for the given
/// coordinates, where `f(i, δ)` is the loss with coordinate `i` shifted by `δ`.
pub fn fd_check(analytic: &[f64], coords: &[usize], mut f: impl FnMut(usize, f64) -> f64) -> FdReport {
    let mut r = FdReport::default();
    for &i in coords {
        let numeric = (f(i, STEP) - f(i, -STEP)) / (2.0 * STEP);
        let e = rel_err(analytic[i], numeric);
        r.checked += 1;
        if e < 1e-6 {
            r.within_1e6 += 1;
        }
        r.worst = r.worst.max(e);
    }
    r
}

/// All of `0..len` when small, else `max` distinct random coordinates.
pub fn sample_coords(len: usize, max: usize, rng: &mut SplitMix64) -> Vec<usize> {
    let mut all: Vec<usize> = (0..len).collect();
    if len <= max {
        return all;
    }
    rng.shuffle(&mut all);
    all.truncate(max);
    all
}

pub fn random_matrix(rows: usize, cols: usize, scale: f64, rng: &mut SplitMix64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.symmetric(scale))
}

fn dot(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    (a * b).sum()
}

/// Embedding pool gradient for `Σ_w r_w · e_w` over a few words.
pub fn grad_embed(seed: u64) -> FdReport {
    let mut rng = SplitMix64::new(seed);
    let (v, k, d) = (6 + rng.below(10) as usize, 1 + rng.below(4) as usize, 1 + rng.below(4) as usize);
    let m = k + rng.below((k * v - k + 1) as u64) as usize;
    let mapping = SubVectorMapping::balanced(v, k, m, seed).unwrap();
    let pool = EmbeddingPool::from_data(random_matrix(m, d, 1.0, &mut rng)).unwrap();
    let words: Vec<usize> = (0..4).map(|_| rng.below(v as u64) as usize).collect();
    let ups: Vec<Vec<f64>> = words
        .iter()
        .map(|_| (0..k * d).map(|_| rng.symmetric(1.0)).collect())
        .collect();
    let loss = |p: &EmbeddingPool| -> f64 {
        words
            .iter()
            .zip(&ups)
            .map(|(&w, r)| {
                let e = embed_forward(p, &mapping, w).unwrap();
                e.iter().zip(r).map(|(a, b)| a * b).sum::<f64>()
            })
            .sum()
    };
    let mut grad = EmbeddingPool::zeros(m, d);
    for (&w, r) in words.iter().zip(&ups) {
        embed_backward(&mut grad, &mapping, w, r).unwrap();
    }
    let analytic = grad.data.as_slice().unwrap().to_vec();
    let coords = sample_coords(analytic.len(), 200, &mut rng);
    fd_check(&analytic, &coords, |i, delta| {
        let mut p = pool.clone();
        p.data.as_slice_mut().unwrap()[i] += delta;
        loss(&p)
    })
}

/// Pool and context gradients of `Σ r ⊙ z` for the compressed output layer.
pub fn grad_output(seed: u64) -> FdReport {
    let mut rng = SplitMix64::new(seed);
    let k = [1, 2, 4][rng.below(3) as usize];
    let (v, d) = (5 + rng.below(20) as usize, 1 + rng.below(4) as usize);
    let m = k * (1 + rng.below(v as u64) as usize);
    let scheme = if rng.below(2) == 0 { Scheme::Partitioned } else { Scheme::Hashed };
    let mapping = SubVectorMapping::build(scheme, v, k, m, seed).unwrap();
    let layer = OutputLayer::new(
        EmbeddingPool::from_data(random_matrix(m, d, 1.0, &mut rng)).unwrap(),
        mapping,
    )
    .unwrap();
    let h: Vec<f64> = (0..k * d).map(|_| rng.symmetric(1.0)).collect();
    let r: Vec<f64> = (0..v).map(|_| rng.symmetric(1.0)).collect();
    let loss = |l: &OutputLayer, h: &[f64]| -> f64 {
        l.logits_dp(h).unwrap().iter().zip(&r).map(|(a, b)| a * b).sum()
    };
    let mut grad = EmbeddingPool::zeros(m, d);
    let grad_h = layer.output_backward(&h, &r, &mut grad).unwrap();

    let analytic = grad.data.as_slice().unwrap().to_vec();
    let coords = sample_coords(analytic.len(), 200, &mut rng);
    let pool_report = fd_check(&analytic, &coords, |i, delta| {
        let mut l = layer.clone();
        l.pool.data.as_slice_mut().unwrap()[i] += delta;
        loss(&l, &h)
    });
    let coords: Vec<usize> = (0..h.len()).collect();
    let h_report = fd_check(&grad_h, &coords, |i, delta| {
        let mut h2 = h.clone();
        h2[i] += delta;
        loss(&layer, &h2)
    });
    pool_report.merge(h_report)
}

/// All five gradients of one cell under `Σ rh ⊙ h + Σ rc ⊙ c`, with a
/// dropout mask on the input.
pub fn grad_cell(seed: u64) -> FdReport {
    let mut rng = SplitMix64::new(seed);
    let (n, b) = (1 + rng.below(6) as usize, 1 + rng.below(4) as usize);
    let params = LstmLayerParams {
        weight: random_matrix(2 * n, 4 * n, 0.5, &mut rng),
        bias: Array1::from_shape_simple_fn(4 * n, || rng.symmetric(0.5)),
    };
    let x = random_matrix(b, n, 1.0, &mut rng);
    let h0 = random_matrix(b, n, 1.0, &mut rng);
    let c0 = random_matrix(b, n, 1.0, &mut rng);
    let mask = DropoutMask::sample(b, n, 0.7, &mut rng);
    let rh = random_matrix(b, n, 1.0, &mut rng);
    let rc = random_matrix(b, n, 1.0, &mut rng);

    let loss = |p: &LstmLayerParams, x: &Array2<f64>, h0: &Array2<f64>, c0: &Array2<f64>| -> f64 {
        let (h, c, _) = lstm_cell_forward(p, x.view(), h0.view(), c0.view(), Some(&mask)).unwrap();
        dot(&h, &rh) + dot(&c, &rc)
    };
    let (_, _, cache) = lstm_cell_forward(&params, x.view(), h0.view(), c0.view(), Some(&mask)).unwrap();
    let mut grads = LstmLayerParams::zeros(n);
    let g = lstm_cell_backward(&params, &cache, rh.view(), rc.view(), &mut grads).unwrap();

    let mut report = FdReport::default();
    let w = grads.weight.as_slice().unwrap().to_vec();
    let coords = sample_coords(w.len(), 150, &mut rng);
    report = report.merge(fd_check(&w, &coords, |i, d| {
        let mut p = params.clone();
        p.weight.as_slice_mut().unwrap()[i] += d;
        loss(&p, &x, &h0, &c0)
    }));
    let bias = grads.bias.to_vec();
    report = report.merge(fd_check(&bias, &(0..bias.len()).collect::<Vec<_>>(), |i, d| {
        let mut p = params.clone();
        p.bias[i] += d;
        loss(&p, &x, &h0, &c0)
    }));
    for (which, analytic) in [(0, &g.x), (1, &g.h_prev), (2, &g.c_prev)] {
        let a = analytic.as_slice().unwrap().to_vec();
        report = report.merge(fd_check(&a, &(0..a.len()).collect::<Vec<_>>(), |i, d| {
            let (mut x2, mut h2, mut c2) = (x.clone(), h0.clone(), c0.clone());
            let target = [&mut x2, &mut h2, &mut c2];
            let [tx, th, tc] = target;
            let m = match which {
                0 => tx,
                1 => th,
                _ => tc,
            };
            m.as_slice_mut().unwrap()[i] += d;
            loss(&params, &x2, &h2, &c2)
        }));
    }
    report
}

/// Layer weights and inputs of a multi-layer stack over several steps, with
/// dropout, under `Σ_t r_t ⊙ top_t`.
pub fn grad_stack(seed: u64) -> FdReport {
    let mut rng = SplitMix64::new(seed);
    let (layers, n, b, steps) = (
        1 + rng.below(3) as usize,
        1 + rng.below(5) as usize,
        1 + rng.below(3) as usize,
        1 + rng.below(5) as usize,
    );
    let mut stack = LstmStack::zeros(layers, n);
    for l in &mut stack.layers {
        l.weight = random_matrix(2 * n, 4 * n, 0.5, &mut rng);
        l.bias = Array1::from_shape_simple_fn(4 * n, || rng.symmetric(0.5));
    }
    let inputs: Vec<Array2<f64>> = (0..steps).map(|_| random_matrix(b, n, 1.0, &mut rng)).collect();
    let masks: Vec<StepMasks> = (0..steps)
        .map(|_| StepMasks::sample(layers, b, n, 0.2, 0.3, &mut rng))
        .collect();
    let rs: Vec<Array2<f64>> = (0..steps).map(|_| random_matrix(b, n, 1.0, &mut rng)).collect();
    let mut state = slimlm::lstm::LstmState::zeros(layers, b, n);
    for l in 0..layers {
        state.h[l] = random_matrix(b, n, 1.0, &mut rng);
        state.c[l] = random_matrix(b, n, 1.0, &mut rng);
    }
    let loss = |s: &LstmStack, inputs: &[Array2<f64>]| -> f64 {
        let (tops, _, _) = s.stack_forward(inputs, &state, &masks).unwrap();
        tops.iter().zip(&rs).map(|(t, r)| dot(t, r)).sum()
    };
    let (_, _, cache) = stack.stack_forward(&inputs, &state, &masks).unwrap();
    let mut grads = stack.zero_grads();
    let grad_in = stack.stack_backward(&cache, &rs, &mut grads).unwrap();

    let mut report = FdReport::default();
    for l in 0..layers {
        let w = grads[l].weight.as_slice().unwrap().to_vec();
        let coords = sample_coords(w.len(), 100, &mut rng);
        report = report.merge(fd_check(&w, &coords, |i, d| {
            let mut s = stack.clone();
            s.layers[l].weight.as_slice_mut().unwrap()[i] += d;
            loss(&s, &inputs)
        }));
        let bias = grads[l].bias.to_vec();
        report = report.merge(fd_check(&bias, &(0..bias.len()).collect::<Vec<_>>(), |i, d| {
            let mut s = stack.clone();
            s.layers[l].bias[i] += d;
            loss(&s, &inputs)
        }));
    }
    for t in 0..steps {
        let a = grad_in[t].as_slice().unwrap().to_vec();
        report = report.merge(fd_check(&a, &(0..a.len()).collect::<Vec<_>>(), |i, d| {
            let mut x = inputs.clone();
            x[t].as_slice_mut().unwrap()[i] += d;
            loss(&stack, &x)
        }));
    }
    report
}

/// A random window over a random stream for a model of `vocab` words.
pub fn random_window(vocab: usize, batch: usize, steps: usize, rng: &mut SplitMix64) -> Window {
    let ids: Vec<usize> = (0..batch * (steps + 1) + 1).map(|_| rng.below(vocab as u64) as usize).collect();
    batchify(&TokenStream { ids }, batch, steps).unwrap().swap_remove(0)
}

pub fn small_model(seed: u64, output: Option<Sharing>, input_scheme: Scheme) -> Model {
    let mut rng = SplitMix64::new(seed);
    let (v, hidden) = (12, 8);
    let k_in = [1, 2, 4][rng.below(3) as usize];
    let m_in = k_in * v / 2;
    Model::init(ModelConfig {
        layers: 2,
        hidden,
        vocab_size: v,
        input: Sharing::new(input_scheme, k_in, m_in),
        output,
        dropout_embed: 0.0,
        dropout: 0.0,
        loss: LossKind::Full,
        seed,
    })
    .unwrap()
}

/// Full-model gradient of the mean cross-entropy on one window.
pub fn grad_model(seed: u64, output: Option<Sharing>, input_scheme: Scheme) -> FdReport {
    let mut model = small_model(seed, output, input_scheme);
    // Larger weights than the init range keep the check away from the
    // nearly-linear regime.
    let mut rng = SplitMix64::new(seed ^ 0xabcdef);
    for t in model.tensors_mut() {
        for x in t.iter_mut() {
            *x = rng.symmetric(0.5);
        }
    }
    let window = random_window(model.vocab_size(), 3, 4, &mut rng);
    let state = model.zero_state(3);
    let (_, grads) = model.loss_and_gradients(&window, &state).unwrap();
    let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.to_vec()).collect();
    let mut report = FdReport::default();
    for (ti, a) in analytic.iter().enumerate() {
        let coords = sample_coords(a.len(), 60, &mut rng);
        report = report.merge(fd_check(a, &coords, |i, d| {
            let mut m = model.clone();
            m.tensors_mut()[ti][i] += d;
            m.loss_and_gradients(&window, &state).unwrap().0
        }));
    }
    report
}

/// Mean cross-entropy of `window` computed with plain loops over a dense
/// embedding matrix `embed` (`V × n`), the stack's weights, and a dense
/// output matrix (`V × n`), starting from zero state.
pub fn reference_window_loss(
    embed: &Array2<f64>,
    stack: &LstmStack,
    output: &Array2<f64>,
    window: &Window,
) -> f64 {
    let sigmoid = |x: f64| 1.0 / (1.0 + (-x).exp());
    let n = embed.ncols();
    let lanes = window.inputs[0].len();
    let layers = stack.layers.len();
    let mut total = 0.0;
    let mut count = 0;
    for lane in 0..lanes {
        let mut h = vec![vec![0.0; n]; layers];
        let mut c = vec![vec![0.0; n]; layers];
        for t in 0..window.steps() {
            let mut x: Vec<f64> = embed.row(window.inputs[t][lane]).to_vec();
            for (l, p) in stack.layers.iter().enumerate() {
                let xh: Vec<f64> = x.iter().chain(&h[l]).copied().collect();
                let mut gates = vec![0.0; 4 * n];
                for (j, g) in gates.iter_mut().enumerate() {
                    let mut acc = p.bias[j];
                    for (i, v) in xh.iter().enumerate() {
                        acc += v * p.weight[[i, j]];
                    }
                    *g = acc;
                }
                for j in 0..n {
                    let (i_g, f_g, o_g) = (sigmoid(gates[j]), sigmoid(gates[n + j]), sigmoid(gates[2 * n + j]));
                    let g_g = gates[3 * n + j].tanh();
                    c[l][j] = f_g * c[l][j] + i_g * g_g;
                    h[l][j] = o_g * c[l][j].tanh();
                }
                x = h[l].clone();
            }
            let z: Vec<f64> = output
                .outer_iter()
                .map(|row| row.iter().zip(&x).map(|(a, b)| a * b).sum())
                .collect();
            let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - z[window.targets[t][lane]];
            count += 1;
        }
    }
    total / count as f64
}

/// Bijective-input, dense-output model with random weights, and the largest
/// difference between its window losses and the reference over `windows`
/// random windows.
pub fn uncompressed_equivalence(seed: u64, windows: usize) -> f64 {
    let mut rng = SplitMix64::new(seed);
    let v = 5 + rng.below(30) as usize;
    let k = [1, 2, 4][rng.below(3) as usize];
    let n = k * (1 + rng.below(4) as usize);
    let mut model = Model::init(ModelConfig {
        layers: 1 + rng.below(2) as usize,
        hidden: n,
        vocab_size: v,
        input: Sharing::uncompressed(k, v),
        output: None,
        dropout_embed: 0.3,
        dropout: 0.3,
        loss: LossKind::Full,
        seed,
    })
    .unwrap();
    assert!(model.input.mapping.is_bijective());
    for t in model.tensors_mut() {
        for x in t.iter_mut() {
            *x = rng.symmetric(0.5);
        }
    }
    let embed = model.input.dense();
    let output = model.output.as_output().weights().clone();
    let mut worst = 0.0f64;
    for _ in 0..windows {
        let batch = 1 + rng.below(4) as usize;
        let steps = 1 + rng.below(6) as usize;
        let w = random_window(v, batch, steps, &mut rng);
        let (loss, _) = model.loss_and_gradients(&w, &model.zero_state(batch)).unwrap();
        let reference = reference_window_loss(&embed, &model.stack, &output, &w);
        worst = worst.max((loss - reference).abs());
    }
    worst
}

/// Full-model gradient of the mean NCE loss on one window, with the noise
/// draws replayed from the same generator state for every evaluation.
pub fn grad_model_nce(seed: u64, output: Option<Sharing>) -> FdReport {
    let mut model = small_model(seed, output, Scheme::Balanced);
    let mut rng = SplitMix64::new(seed ^ 0x5ca1e);
    for t in model.tensors_mut() {
        for x in t.iter_mut() {
            *x = rng.symmetric(0.5);
        }
    }
    let counts: Vec<usize> = (0..model.vocab_size()).map(|w| 1 + w % 5).collect();
    let noise = NoiseTable::from_counts(&counts, 0.75).unwrap();
    let window = random_window(model.vocab_size(), 3, 4, &mut rng);
    let state = model.zero_state(3);
    let noise_rng = SplitMix64::new(seed);
    let loss = |m: &Model, grads: Option<&mut Gradients>| {
        let mut r = noise_rng.clone();
        let objective = Objective::Nce {
            noise: &noise,
            k: 5,
            rng: &mut r,
        };
        m.run_window(&window, &state, &[], objective, grads).unwrap().mean()
    };
    let mut grads = model.zero_grads();
    loss(&model, Some(&mut grads));
    let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.to_vec()).collect();
    let mut report = FdReport::default();
    for (ti, a) in analytic.iter().enumerate() {
        let coords = sample_coords(a.len(), 60, &mut rng);
        report = report.merge(fd_check(a, &coords, |i, d| {
            let mut m = model.clone();
            m.tensors_mut()[ti][i] += d;
            loss(&m, None)
        }));
    }
    report
}

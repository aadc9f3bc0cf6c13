//! Model assembly: compressed input embedding → LSTM stack → output layer.

use std::fmt;
use std::str::FromStr;

use ndarray::{concatenate, Array1, Array2, Axis};

use crate::corpus::{TokenStream, Window, EOS_ID};
use crate::embedding::{EmbeddingPool, SlimEmbedding};
use crate::error::{Error, Result};
use crate::lstm::{LstmLayerParams, LstmStack, LstmState, StepMasks};
use crate::mapping::{Scheme, SubVectorMapping};
use crate::rng::{sub_seed, SplitMix64};
use crate::softmax::{log_sum_exp, nce_loss, softmax_xent_batch, DenseOutput, NoiseTable, Output, OutputLayer};

/// Half-width of the uniform weight initialization.
pub const INIT_SCALE: f64 = 0.05;

/// Sharing parameters of one embedding layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sharing {
    pub scheme: Scheme,
    pub k: usize,
    pub m: usize,
}

impl Sharing {
    pub fn new(scheme: Scheme, k: usize, m: usize) -> Self {
        Sharing { scheme, k, m }
    }

    /// `M = K·V` with the balanced scheme: every slot gets its own row.
    pub fn uncompressed(k: usize, vocab_size: usize) -> Self {
        Sharing::new(Scheme::Balanced, k, k * vocab_size)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Full,
    Nce { k: usize },
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossKind::Full => f.write_str("full"),
            LossKind::Nce { .. } => f.write_str("nce"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub layers: usize,
    pub hidden: usize,
    pub vocab_size: usize,
    pub input: Sharing,
    /// `None` selects the dense output layer.
    pub output: Option<Sharing>,
    /// Dropout probability on the embedding → first LSTM layer connection.
    pub dropout_embed: f64,
    /// Dropout probability on every other non-recurrent connection.
    pub dropout: f64,
    pub loss: LossKind,
    pub seed: u64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.layers == 0 || self.hidden == 0 {
            return bad("layers and hidden must be positive".into());
        }
        if self.vocab_size < 2 {
            return bad(format!("vocabulary of {} words", self.vocab_size));
        }
        if self.input.k == 0 || self.hidden % self.input.k != 0 {
            return bad(format!("K_in={} does not divide hidden={}", self.input.k, self.hidden));
        }
        if let Some(out) = self.output {
            if out.k == 0 || self.hidden % out.k != 0 {
                return bad(format!("K_out={} does not divide hidden={}", out.k, self.hidden));
            }
            if !out.scheme.is_partitioned() {
                return Err(Error::Unpartitioned(out.scheme.as_str()));
            }
            if out.m % out.k != 0 {
                return bad(format!("K_out={} does not divide M_out={}", out.k, out.m));
            }
        }
        for (name, p) in [("dropout_embed", self.dropout_embed), ("dropout", self.dropout)] {
            if !(0.0..1.0).contains(&p) {
                return bad(format!("{name}={p} outside [0, 1)"));
            }
        }
        if let LossKind::Nce { k: 0 } = self.loss {
            return bad("nce_k must be positive".into());
        }
        Ok(())
    }
}

/// Dense or compressed output projection.
#[derive(Debug, Clone, PartialEq)]
pub enum OutputKind {
    Dense(DenseOutput),
    Slim(OutputLayer),
}

impl OutputKind {
    pub fn as_output(&self) -> &dyn Output {
        match self {
            OutputKind::Dense(d) => d,
            OutputKind::Slim(s) => s,
        }
    }

    pub fn as_output_mut(&mut self) -> &mut dyn Output {
        match self {
            OutputKind::Dense(d) => d,
            OutputKind::Slim(s) => s,
        }
    }

    pub fn mapping(&self) -> Option<&SubVectorMapping> {
        match self {
            OutputKind::Dense(_) => None,
            OutputKind::Slim(s) => Some(&s.mapping),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub input: SlimEmbedding,
    pub stack: LstmStack,
    pub output: OutputKind,
}

/// Gradient buffers shaped like a [`Model`]'s parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub embed: Array2<f64>,
    pub layers: Vec<LstmLayerParams>,
    pub output: Array2<f64>,
}

impl Gradients {
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = vec![self.embed.as_slice().expect("standard layout")];
        for l in &self.layers {
            out.push(l.weight.as_slice().expect("standard layout"));
            out.push(l.bias.as_slice().expect("standard layout"));
        }
        out.push(self.output.as_slice().expect("standard layout"));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = vec![self.embed.as_slice_mut().expect("standard layout")];
        for l in &mut self.layers {
            out.push(l.weight.as_slice_mut().expect("standard layout"));
            out.push(l.bias.as_slice_mut().expect("standard layout"));
        }
        out.push(self.output.as_slice_mut().expect("standard layout"));
        out
    }

    pub fn norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|g| *g *= factor);
        }
    }
}

/// Training objective for one window.
pub enum Objective<'a> {
    Full,
    Nce {
        noise: &'a NoiseTable,
        k: usize,
        rng: &'a mut SplitMix64,
    },
}

/// Sum of per-token losses over a window plus the state after it.
#[derive(Debug, Clone)]
pub struct WindowLoss {
    pub loss_sum: f64,
    pub tokens: usize,
    pub state: LstmState,
}

impl WindowLoss {
    pub fn mean(&self) -> f64 {
        self.loss_sum / self.tokens as f64
    }
}

fn uniform_matrix(rows: usize, cols: usize, rng: &mut SplitMix64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.symmetric(INIT_SCALE))
}

impl Model {
    /// Builds mappings from derived sub-seeds and draws every weight from
    /// `U(-0.05, 0.05)`.
    pub fn init(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let (v, n) = (config.vocab_size, config.hidden);
        let mut rng = SplitMix64::new(sub_seed(config.seed, "init"));

        let input_map = SubVectorMapping::build(
            config.input.scheme,
            v,
            config.input.k,
            config.input.m,
            sub_seed(config.seed, "map-in"),
        )?;
        let layers = (0..config.layers)
            .map(|_| LstmLayerParams {
                weight: uniform_matrix(2 * n, 4 * n, &mut rng),
                bias: Array1::from_shape_simple_fn(4 * n, || rng.symmetric(INIT_SCALE)),
            })
            .collect();
        let stack = LstmStack { layers };

        let output = match config.output {
            None => OutputKind::Dense(DenseOutput {
                weight: uniform_matrix(v, n, &mut rng),
            }),
            Some(out) => {
                let mapping =
                    SubVectorMapping::build(out.scheme, v, out.k, out.m, sub_seed(config.seed, "map-out"))?;
                let pool = EmbeddingPool::from_data(uniform_matrix(out.m, n / out.k, &mut rng))?;
                OutputKind::Slim(OutputLayer::new(pool, mapping)?)
            }
        };
        // Input pool last: recurrent and output weights do not depend on its shape.
        let pool = EmbeddingPool::from_data(uniform_matrix(config.input.m, n / config.input.k, &mut rng))?;
        let input = SlimEmbedding::new(pool, input_map)?;
        Ok(Model {
            config,
            input,
            stack,
            output,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    pub fn hidden(&self) -> usize {
        self.config.hidden
    }

    pub fn zero_state(&self, batch: usize) -> LstmState {
        LstmState::zeros(self.config.layers, batch, self.config.hidden)
    }

    pub fn zero_grads(&self) -> Gradients {
        Gradients {
            embed: Array2::zeros(self.input.pool.data.dim()),
            layers: self.stack.zero_grads(),
            output: Array2::zeros(self.output.as_output().weights().dim()),
        }
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = vec![self.input.pool.data.as_slice().expect("standard layout")];
        for l in &self.stack.layers {
            out.push(l.weight.as_slice().expect("standard layout"));
            out.push(l.bias.as_slice().expect("standard layout"));
        }
        out.push(self.output.as_output().weights().as_slice().expect("standard layout"));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = vec![self.input.pool.data.as_slice_mut().expect("standard layout")];
        for l in &mut self.stack.layers {
            out.push(l.weight.as_slice_mut().expect("standard layout"));
            out.push(l.bias.as_slice_mut().expect("standard layout"));
        }
        out.push(
            self.output
                .as_output_mut()
                .weights_mut()
                .as_slice_mut()
                .expect("standard layout"),
        );
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Dropout masks for a window of `steps × batch`.
    pub fn sample_masks(&self, steps: usize, batch: usize, rng: &mut SplitMix64) -> Vec<StepMasks> {
        let c = &self.config;
        if c.dropout == 0.0 && c.dropout_embed == 0.0 {
            return Vec::new();
        }
        (0..steps)
            .map(|_| StepMasks::sample(c.layers, batch, c.hidden, c.dropout_embed, c.dropout, rng))
            .collect()
    }

    /// Forward pass over `window` from `state`. When `grads` is given, the
    /// gradient of the mean token loss is accumulated into it.
    pub fn run_window(
        &self,
        window: &Window,
        state: &LstmState,
        masks: &[StepMasks],
        objective: Objective<'_>,
        grads: Option<&mut Gradients>,
    ) -> Result<WindowLoss> {
        let inputs: Vec<Array2<f64>> = window
            .inputs
            .iter()
            .map(|words| self.input.forward_batch(words))
            .collect();
        let (tops, new_state, cache) = self.stack.stack_forward(&inputs, state, masks)?;
        let tokens = window.tokens();
        let scale = 1.0 / tokens as f64;
        let output = self.output.as_output();
        let Some(grads) = grads else {
            return self.window_loss_only(&tops, window, new_state, objective, tokens);
        };

        let mut loss_sum = 0.0;
        let mut grad_tops = Vec::with_capacity(tops.len());
        let mut objective = objective;
        for (h, targets) in tops.iter().zip(&window.targets) {
            match &mut objective {
                Objective::Full => {
                    let mut z = output.logits_batch(h.view());
                    loss_sum += softmax_xent_batch(&mut z, targets, scale);
                    grad_tops.push(output.backward_batch(h.view(), z.view(), &mut grads.output));
                }
                Objective::Nce { noise, k, rng } => {
                    let mut gh = Array2::zeros(h.dim());
                    for (b, &t) in targets.iter().enumerate() {
                        let out = nce_loss(
                            output,
                            h.row(b),
                            t,
                            noise,
                            *k,
                            rng,
                            scale,
                            gh.row_mut(b),
                            &mut grads.output,
                        )?;
                        loss_sum += out.loss;
                    }
                    grad_tops.push(gh);
                }
            }
        }
        if !loss_sum.is_finite() {
            return Err(Error::NonFinite(format!("window loss {loss_sum}")));
        }
        let grad_inputs = self.stack.stack_backward(&cache, &grad_tops, &mut grads.layers)?;
        let mut embed_grad = EmbeddingPool {
            data: std::mem::take(&mut grads.embed),
        };
        for (words, g) in window.inputs.iter().zip(&grad_inputs) {
            self.input.backward_batch(&mut embed_grad, words, g);
        }
        grads.embed = embed_grad.data;
        Ok(WindowLoss {
            loss_sum,
            tokens,
            state: new_state,
        })
    }

    fn window_loss_only(
        &self,
        tops: &[Array2<f64>],
        window: &Window,
        state: LstmState,
        objective: Objective<'_>,
        tokens: usize,
    ) -> Result<WindowLoss> {
        let output = self.output.as_output();
        let mut loss_sum = 0.0;
        let mut objective = objective;
        let mut gh = Array1::zeros(self.hidden());
        let mut scratch = Array2::zeros(output.weights().dim());
        for (h, targets) in tops.iter().zip(&window.targets) {
            match &mut objective {
                Objective::Full => {
                    let mut z = output.logits_batch(h.view());
                    loss_sum += softmax_xent_batch(&mut z, targets, 0.0);
                }
                Objective::Nce { noise, k, rng } => {
                    for (b, &t) in targets.iter().enumerate() {
                        let out =
                            nce_loss(output, h.row(b), t, noise, *k, rng, 0.0, gh.view_mut(), &mut scratch)?;
                        loss_sum += out.loss;
                    }
                }
            }
        }
        Ok(WindowLoss {
            loss_sum,
            tokens,
            state,
        })
    }

    /// Mean full-softmax loss and its gradient over `window` without dropout.
    pub fn loss_and_gradients(&self, window: &Window, state: &LstmState) -> Result<(f64, Gradients)> {
        let mut grads = self.zero_grads();
        let out = self.run_window(window, state, &[], Objective::Full, Some(&mut grads))?;
        Ok((out.mean(), grads))
    }

    /// Natural-log probabilities of each token of `stream`, each conditioned
    /// on its predecessors, with `<eos>` as the context for the first token.
    /// Dropout is off and the state runs across the whole stream.
    pub fn log_probs(&self, stream: &TokenStream) -> Result<Vec<f64>> {
        const CHUNK: usize = 64;
        let output = self.output.as_output();
        let mut state = self.zero_state(1);
        let mut out = Vec::with_capacity(stream.len());
        let mut prev = EOS_ID;
        for chunk in stream.ids.chunks(CHUNK) {
            let mut inputs = Vec::with_capacity(chunk.len());
            for &w in chunk {
                if w >= self.vocab_size() {
                    return Err(Error::WordOutOfRange {
                        word: w,
                        vocab_size: self.vocab_size(),
                    });
                }
                inputs.push(self.input.forward_batch(&[prev]));
                prev = w;
            }
            let (tops, next, _) = self.stack.stack_forward(&inputs, &state, &[])?;
            state = next;
            let views: Vec<_> = tops.iter().map(|h| h.view()).collect();
            let hs = concatenate(Axis(0), &views).expect("equal widths");
            let z = output.logits_batch(hs.view());
            for (zt, &w) in z.outer_iter().zip(chunk) {
                let zt = zt.as_slice().expect("standard layout");
                out.push(zt[w] - log_sum_exp(zt));
            }
        }
        Ok(out)
    }

    /// `exp(-(1/T) Σ log p(w_i | w_<i))` under the normalized softmax.
    pub fn evaluate_ppl(&self, stream: &TokenStream) -> Result<f64> {
        if stream.is_empty() {
            return Err(Error::Corpus("cannot evaluate an empty stream".into()));
        }
        let lp = self.log_probs(stream)?;
        Ok(perplexity(&lp))
    }
}

/// `exp` of the mean negative log-probability.
pub fn perplexity(log_probs: &[f64]) -> f64 {
    (-log_probs.iter().sum::<f64>() / log_probs.len() as f64).exp()
}

impl FromStr for LossKind {
    type Err = Error;

    /// `full`, `nce` (k = 20) or `nce:<k>`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(LossKind::Full),
            "nce" => Ok(LossKind::Nce { k: 20 }),
            _ => match s.strip_prefix("nce:").map(str::parse) {
                Some(Ok(k)) => Ok(LossKind::Nce { k }),
                _ => Err(Error::Config(format!("unknown loss '{s}'"))),
            },
        }
    }
}

//! Optimization: truncated BPTT steps, gradient clipping, SGD/Adagrad, and
//! the epoch loop with validation-driven learning-rate halving.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use crate::checkpoint::Checkpoint;
use crate::corpus::{batchify, TokenStream, Window};
use crate::error::{Error, Result};
use crate::lstm::LstmState;
use crate::model::{Gradients, LossKind, Model, Objective};
use crate::rng::{sub_seed, SplitMix64};
use crate::softmax::NoiseTable;

pub const ADAGRAD_EPS: f64 = 1e-10;
pub const NOISE_POWER: f64 = 0.75;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adagrad,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adagrad => "adagrad",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adagrad" => Ok(OptimizerKind::Adagrad),
            _ => Err(Error::Config(format!("unknown optimizer '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    /// Factor applied to the SGD learning rate after a non-improving epoch.
    pub lr_decay: f64,
    pub optimizer: OptimizerKind,
    /// Global-norm clip threshold; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub batch_size: usize,
    pub bptt_len: usize,
    pub max_epochs: usize,
    /// Validate every this many epochs (the last epoch is always validated).
    pub eval_interval: usize,
    /// Record per-epoch wall time in the log; zero otherwise.
    pub log_timing: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1.0,
            lr_decay: 0.5,
            optimizer: OptimizerKind::Sgd,
            clip_norm: Some(5.0),
            batch_size: 20,
            bptt_len: 35,
            max_epochs: 15,
            eval_interval: 1,
            log_timing: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be finite and non-negative");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("lr_decay must be in (0, 1]");
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return bad("clip must be positive (or none)");
            }
        }
        if self.batch_size == 0 || self.bptt_len == 0 || self.eval_interval == 0 {
            return bad("batch, bptt and eval_interval must be positive");
        }
        Ok(())
    }
}

/// Per-parameter optimizer memory (Adagrad squared-gradient sums).
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub accum: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, model: &Model) -> Self {
        let accum = match kind {
            OptimizerKind::Sgd => Vec::new(),
            OptimizerKind::Adagrad => model.tensors().iter().map(|t| vec![0.0; t.len()]).collect(),
        };
        OptimizerState { kind, accum }
    }

    pub fn apply(&mut self, model: &mut Model, grads: &Gradients, lr: f64) {
        let params = model.tensors_mut();
        let grads = grads.tensors();
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.into_iter().zip(grads) {
                    for (p, g) in p.iter_mut().zip(g) {
                        *p -= lr * g;
                    }
                }
            }
            OptimizerKind::Adagrad => {
                for ((p, g), acc) in params.into_iter().zip(grads).zip(&mut self.accum) {
                    for ((p, g), a) in p.iter_mut().zip(g).zip(acc.iter_mut()) {
                        *a += g * g;
                        *p -= lr * g / (a.sqrt() + ADAGRAD_EPS);
                    }
                }
            }
        }
    }
}

/// Rescales `grads` to norm `max_norm` if it is larger. Returns the norm
/// before clipping.
pub fn clip_gradients(grads: &mut Gradients, max_norm: Option<f64>) -> f64 {
    let norm = grads.norm();
    if let Some(max) = max_norm {
        if norm > max {
            grads.scale(max / norm);
        }
    }
    norm
}

/// Mutable state threaded through training steps.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub optimizer: OptimizerState,
    pub lr: f64,
    pub hidden: LstmState,
    pub dropout_rng: SplitMix64,
    pub noise_rng: SplitMix64,
    pub noise: Option<NoiseTable>,
}

impl TrainState {
    /// `noise_counts` feeds the NCE noise table (ignored for full softmax).
    pub fn new(model: &Model, cfg: &TrainConfig, noise_counts: &[usize]) -> Result<Self> {
        let noise = match model.config.loss {
            LossKind::Full => None,
            LossKind::Nce { .. } => Some(NoiseTable::from_counts(noise_counts, NOISE_POWER)?),
        };
        Ok(TrainState {
            optimizer: OptimizerState::new(cfg.optimizer, model),
            lr: cfg.lr,
            hidden: model.zero_state(cfg.batch_size),
            dropout_rng: SplitMix64::new(sub_seed(model.config.seed, "dropout")),
            noise_rng: SplitMix64::new(sub_seed(model.config.seed, "noise")),
            noise,
        })
    }

    pub fn reset_hidden(&mut self, model: &Model, batch: usize) {
        self.hidden = model.zero_state(batch);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub loss: f64,
    pub grad_norm: f64,
}

/// Forward, backward, clip and update on one window. The hidden state is
/// carried into `state.hidden` for the next window.
pub fn train_step(
    model: &mut Model,
    window: &Window,
    state: &mut TrainState,
    cfg: &TrainConfig,
) -> Result<StepReport> {
    let batch = window.inputs.first().map_or(0, Vec::len);
    let masks = model.sample_masks(window.steps(), batch, &mut state.dropout_rng);
    let mut grads = model.zero_grads();
    let objective = match (model.config.loss, &state.noise) {
        (LossKind::Full, _) => Objective::Full,
        (LossKind::Nce { k }, Some(noise)) => Objective::Nce {
            noise,
            k,
            rng: &mut state.noise_rng,
        },
        (LossKind::Nce { .. }, None) => {
            return Err(Error::Config("NCE training without a noise table".into()))
        }
    };
    let out = model.run_window(window, &state.hidden, &masks, objective, Some(&mut grads))?;
    let loss = out.mean();
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("training loss {loss}")));
    }
    let grad_norm = clip_gradients(&mut grads, cfg.clip_norm);
    if !grad_norm.is_finite() {
        return Err(Error::NonFinite(format!("gradient norm {grad_norm}")));
    }
    state.optimizer.apply(model, &grads, state.lr);
    state.hidden = out.state;
    Ok(StepReport { loss, grad_norm })
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_ppl: Option<f64>,
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub const HEADER: &'static str = "epoch,train_loss,valid_ppl,lr,seconds";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::HEADER);
        for r in &self.rows {
            let ppl = r.valid_ppl.map(|p| format!("{p:.6}")).unwrap_or_default();
            out.push_str(&format!(
                "{},{:.8},{},{},{:.3}\n",
                r.epoch, r.train_loss, ppl, r.lr, r.seconds
            ));
        }
        out
    }
}

/// Token streams a training run reads.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub train: TokenStream,
    pub valid: TokenStream,
}

impl TrainData {
    /// Per-id frequencies of the training split.
    pub fn unigram_counts(&self, vocab_size: usize) -> Vec<usize> {
        let mut counts = vec![0usize; vocab_size];
        for &w in &self.train.ids {
            counts[w] += 1;
        }
        counts
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Model with the best validation perplexity seen.
    pub best: Checkpoint,
    pub log: TrainLog,
    /// Validation perplexity of the model before any update.
    pub initial_valid_ppl: f64,
}

/// Epoch loop: stateful truncated BPTT over the training lanes, validation
/// after each epoch, SGD learning rate multiplied by `lr_decay` whenever
/// validation fails to improve, best model retained.
pub fn train(
    model: Model,
    data: &TrainData,
    cfg: &TrainConfig,
    vocab_hash: u64,
    mut on_epoch: impl FnMut(&LogRow),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut model = model;
    let windows = batchify(&data.train, cfg.batch_size, cfg.bptt_len)?;
    let counts = data.unigram_counts(model.vocab_size());
    let mut state = TrainState::new(&model, cfg, &counts)?;

    let initial_valid_ppl = model.evaluate_ppl(&data.valid)?;
    let mut best = Checkpoint::new(model.clone(), cfg.clone(), state.optimizer.clone(), vocab_hash);
    best.best_valid_ppl = initial_valid_ppl;
    let mut best_ppl = f64::INFINITY;
    let mut log = TrainLog::default();

    for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        state.reset_hidden(&model, cfg.batch_size);
        let epoch_lr = state.lr;
        let (mut loss_sum, mut tokens) = (0.0, 0usize);
        for w in &windows {
            let report = train_step(&mut model, w, &mut state, cfg)?;
            loss_sum += report.loss * w.tokens() as f64;
            tokens += w.tokens();
        }
        let validate = epoch % cfg.eval_interval == 0 || epoch == cfg.max_epochs;
        let valid_ppl = if validate {
            let ppl = model.evaluate_ppl(&data.valid)?;
            if ppl < best_ppl {
                best_ppl = ppl;
                best = Checkpoint::new(model.clone(), cfg.clone(), state.optimizer.clone(), vocab_hash);
                best.epoch = epoch;
                best.best_valid_ppl = ppl;
                best.lr = state.lr;
            } else if cfg.optimizer == OptimizerKind::Sgd {
                state.lr *= cfg.lr_decay;
            }
            Some(ppl)
        } else {
            None
        };
        let row = LogRow {
            epoch,
            train_loss: loss_sum / tokens as f64,
            valid_ppl,
            lr: epoch_lr,
            seconds: if cfg.log_timing {
                started.elapsed().as_secs_f64()
            } else {
                0.0
            },
        };
        on_epoch(&row);
        log.rows.push(row);
    }
    Ok(TrainOutcome {
        best,
        log,
        initial_valid_ppl,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mapping::Scheme;
    use crate::model::{ModelConfig, Sharing};

    fn toy_model(loss: LossKind) -> Model {
        Model::init(ModelConfig {
            layers: 1,
            hidden: 6,
            vocab_size: 9,
            input: Sharing::new(Scheme::Balanced, 3, 12),
            output: Some(Sharing::new(Scheme::Partitioned, 2, 6)),
            dropout_embed: 0.0,
            dropout: 0.0,
            loss,
            seed: 4,
        })
        .unwrap()
    }

    fn toy_window() -> Window {
        let stream = TokenStream {
            ids: (0..30).map(|i| (i * 5 + 1) % 9).collect(),
        };
        batchify(&stream, 2, 6).unwrap().remove(0)
    }

    fn cfg() -> TrainConfig {
        TrainConfig {
            batch_size: 2,
            bptt_len: 6,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_lr_keeps_parameters() {
        let mut m = toy_model(LossKind::Full);
        let before = m.clone();
        let w = toy_window();
        let c = TrainConfig { lr: 0.0, ..cfg() };
        let mut st = TrainState::new(&m, &c, &[1; 9]).unwrap();
        let r = train_step(&mut m, &w, &mut st, &c).unwrap();
        assert_eq!(m, before);
        let (eval, _) = before.loss_and_gradients(&w, &before.zero_state(2)).unwrap();
        assert_eq!(r.loss, eval);
    }

    #[test]
    fn small_step_decreases_loss() {
        let mut m = toy_model(LossKind::Full);
        let w = toy_window();
        let c = TrainConfig { lr: 0.1, ..cfg() };
        let mut st = TrainState::new(&m, &c, &[1; 9]).unwrap();
        let before = train_step(&mut m, &w, &mut st, &c).unwrap().loss;
        let (after, _) = m.loss_and_gradients(&w, &m.zero_state(2)).unwrap();
        assert!(after < before, "{after} !< {before}");
    }

    #[test]
    fn inactive_clip_is_identity() {
        let w = toy_window();
        let run = |clip| {
            let mut m = toy_model(LossKind::Full);
            let c = TrainConfig { clip_norm: clip, ..cfg() };
            let mut st = TrainState::new(&m, &c, &[1; 9]).unwrap();
            train_step(&mut m, &w, &mut st, &c).unwrap();
            m
        };
        assert_eq!(run(None), run(Some(1e300)));
    }

    #[test]
    fn clipping_bounds_the_norm() {
        let m = toy_model(LossKind::Full);
        let (_, mut g) = m.loss_and_gradients(&toy_window(), &m.zero_state(2)).unwrap();
        g.scale(1e3);
        let pre = clip_gradients(&mut g, Some(0.5));
        assert!(pre > 0.5);
        assert!(g.norm() <= 0.5 + 1e-12);
    }

    #[test]
    fn adagrad_first_step_is_sign_times_lr() {
        let mut m = toy_model(LossKind::Full);
        let before = m.clone();
        let w = toy_window();
        let c = TrainConfig {
            lr: 0.01,
            optimizer: OptimizerKind::Adagrad,
            clip_norm: None,
            ..cfg()
        };
        let (_, g) = before.loss_and_gradients(&w, &before.zero_state(2)).unwrap();
        let mut st = TrainState::new(&m, &c, &[1; 9]).unwrap();
        train_step(&mut m, &w, &mut st, &c).unwrap();
        for ((p1, p0), g) in m.tensors().iter().zip(before.tensors()).zip(g.tensors()) {
            for ((a, b), g) in p1.iter().zip(p0).zip(g) {
                let expected = b - 0.01 * g / (g.abs() + ADAGRAD_EPS);
                assert!((a - expected).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn nce_step_runs_and_needs_noise() {
        let mut m = toy_model(LossKind::Nce { k: 3 });
        let w = toy_window();
        let c = cfg();
        let mut st = TrainState::new(&m, &c, &[1, 2, 3, 4, 5, 6, 7, 8, 9]).unwrap();
        let r = train_step(&mut m, &w, &mut st, &c).unwrap();
        assert!(r.loss.is_finite() && r.loss > 0.0);
        st.noise = None;
        assert!(train_step(&mut m, &w, &mut st, &c).is_err());
    }

    #[test]
    fn zero_epochs_returns_initial_model() {
        let m = toy_model(LossKind::Full);
        let data = TrainData {
            train: TokenStream {
                ids: (0..60).map(|i| i % 9).collect(),
            },
            valid: TokenStream {
                ids: (0..20).map(|i| (i * 2) % 9).collect(),
            },
        };
        let c = TrainConfig { max_epochs: 0, ..cfg() };
        let out = train(m.clone(), &data, &c, 0, |_| {}).unwrap();
        assert_eq!(out.best.model, m);
        assert!(out.log.rows.is_empty());
        assert_eq!(out.log.to_csv(), "epoch,train_loss,valid_ppl,lr,seconds\n");
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { lr: -1.0, ..cfg() }.validate().is_err());
        assert!(TrainConfig { clip_norm: Some(0.0), ..cfg() }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..cfg() }.validate().is_err());
        assert!(cfg().validate().is_ok());
    }
}

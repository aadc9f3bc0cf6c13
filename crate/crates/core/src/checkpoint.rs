//! Self-contained model files.
//!
//! Layout (all integers and reals little-endian):
//!
//! ```text
//! b"SLIMLM1\n"
//! u64 × 8      L, n, V, K_in, M_in, K_out, M_out, flags
//!              flags bit 0: compressed output layer (else K_out = M_out = 0)
//!              flags bit 1: optimizer accumulators follow the parameters
//! u64 + bytes  input mapping, mapping text format
//! u64 + bytes  output mapping (only with flags bit 0)
//! u64 + bytes  metadata, `key = value` text
//! f64 …        parameters row-major: input pool, then per layer weight and
//!              bias, then the output matrix
//! f64 …        optimizer accumulators in the same order (flags bit 1)
//! ```

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::config::KvConfig;
use crate::embedding::{EmbeddingPool, SlimEmbedding};
use crate::error::{Error, Result};
use crate::lstm::{LstmLayerParams, LstmStack};
use crate::mapping::SubVectorMapping;
use crate::model::{LossKind, Model, ModelConfig, OutputKind, Sharing};
use crate::softmax::{DenseOutput, OutputLayer};
use crate::train::{OptimizerKind, OptimizerState, TrainConfig};

pub const MAGIC: &[u8; 8] = b"SLIMLM1\n";

const FLAG_SLIM_OUTPUT: u64 = 1;
const FLAG_OPTIMIZER: u64 = 1 << 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub train: TrainConfig,
    pub optimizer: OptimizerState,
    /// Epochs completed when the snapshot was taken.
    pub epoch: usize,
    pub best_valid_ppl: f64,
    /// Learning rate in effect at snapshot time.
    pub lr: f64,
    /// Fingerprint of the vocabulary the model was trained with.
    pub vocab_hash: u64,
}

impl Checkpoint {
    pub fn new(model: Model, train: TrainConfig, optimizer: OptimizerState, vocab_hash: u64) -> Self {
        let lr = train.lr;
        Checkpoint {
            model,
            train,
            optimizer,
            epoch: 0,
            best_valid_ppl: f64::INFINITY,
            lr,
            vocab_hash,
        }
    }

    fn metadata(&self) -> KvConfig {
        let c = &self.model.config;
        let t = &self.train;
        let mut kv = KvConfig::new();
        kv.set("dropout_embed", c.dropout_embed);
        kv.set("dropout", c.dropout);
        kv.set(
            "loss",
            match c.loss {
                LossKind::Full => "full".to_string(),
                LossKind::Nce { k } => format!("nce:{k}"),
            },
        );
        kv.set("seed", c.seed);
        kv.set("lr", t.lr);
        kv.set("lr_decay", t.lr_decay);
        kv.set("optimizer", t.optimizer);
        kv.set("clip", t.clip_norm.map_or("none".to_string(), |c| c.to_string()));
        kv.set("batch", t.batch_size);
        kv.set("bptt", t.bptt_len);
        kv.set("max_epochs", t.max_epochs);
        kv.set("eval_interval", t.eval_interval);
        kv.set("log_timing", t.log_timing);
        kv.set("epoch", self.epoch);
        kv.set("best_valid_ppl", self.best_valid_ppl);
        kv.set("current_lr", self.lr);
        kv.set("vocab_hash", self.vocab_hash);
        kv
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let m = &self.model;
        let c = &m.config;
        let out_map = m.output.mapping();
        let mut flags = 0;
        if out_map.is_some() {
            flags |= FLAG_SLIM_OUTPUT;
        }
        if !self.optimizer.accum.is_empty() {
            flags |= FLAG_OPTIMIZER;
        }
        let (k_out, m_out) = out_map.map_or((0, 0), |o| (o.parts_per_word(), o.pool_size()));

        let mut buf = MAGIC.to_vec();
        for v in [
            c.layers,
            c.hidden,
            c.vocab_size,
            c.input.k,
            c.input.m,
            k_out,
            m_out,
        ] {
            buf.extend_from_slice(&(v as u64).to_le_bytes());
        }
        buf.extend_from_slice(&flags.to_le_bytes());
        let mut blob = |bytes: &[u8]| {
            buf.extend_from_slice(&(bytes.len() as u64).to_le_bytes());
            buf.extend_from_slice(bytes);
        };
        blob(m.input.mapping.to_text().as_bytes());
        if let Some(o) = out_map {
            blob(o.to_text().as_bytes());
        }
        blob(self.metadata().to_text().as_bytes());
        for t in m.tensors() {
            for x in t {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        for t in &self.optimizer.accum {
            for x in t {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Checkpoint("bad magic; not a model file".into()));
        }
        let mut header = [0usize; 7];
        for h in &mut header {
            *h = r.count()?;
        }
        let [layers, hidden, vocab_size, k_in, m_in, k_out, m_out] = header;
        let flags = r.u64()?;
        if flags & !(FLAG_SLIM_OUTPUT | FLAG_OPTIMIZER) != 0 {
            return Err(Error::Checkpoint(format!("unknown flags {flags:#x}")));
        }
        let input_map = SubVectorMapping::from_text(r.text()?)?;
        let output_map = if flags & FLAG_SLIM_OUTPUT != 0 {
            Some(SubVectorMapping::from_text(r.text()?)?)
        } else {
            None
        };
        let meta = KvConfig::parse(r.text()?)?;

        if input_map.vocab_size() != vocab_size
            || input_map.parts_per_word() != k_in
            || input_map.pool_size() != m_in
        {
            return Err(Error::Checkpoint("input mapping disagrees with header".into()));
        }
        if let Some(o) = &output_map {
            if o.vocab_size() != vocab_size || o.parts_per_word() != k_out || o.pool_size() != m_out {
                return Err(Error::Checkpoint("output mapping disagrees with header".into()));
            }
        }

        let config = ModelConfig {
            layers,
            hidden,
            vocab_size,
            input: Sharing::new(input_map.scheme(), k_in, m_in),
            output: output_map
                .as_ref()
                .map(|o| Sharing::new(o.scheme(), k_out, m_out)),
            dropout_embed: meta.parse_required("dropout_embed")?,
            dropout: meta.parse_required("dropout")?,
            loss: meta.parse_required("loss")?,
            seed: meta.parse_required("seed")?,
        };
        config.validate()?;
        let clip = meta.require("clip")?;
        let train = TrainConfig {
            lr: meta.parse_required("lr")?,
            lr_decay: meta.parse_required("lr_decay")?,
            optimizer: meta.parse_required("optimizer")?,
            clip_norm: if clip == "none" {
                None
            } else {
                Some(meta.parse_required("clip")?)
            },
            batch_size: meta.parse_required("batch")?,
            bptt_len: meta.parse_required("bptt")?,
            max_epochs: meta.parse_required("max_epochs")?,
            eval_interval: meta.parse_required("eval_interval")?,
            log_timing: meta.parse_required("log_timing")?,
        };

        let n = hidden;
        let input = SlimEmbedding::new(EmbeddingPool::from_data(r.matrix(m_in, n / k_in)?)?, input_map)?;
        let mut stack_layers = Vec::with_capacity(layers);
        for _ in 0..layers {
            let weight = r.matrix(2 * n, 4 * n)?;
            let bias = Array1::from(r.reals(4 * n)?);
            stack_layers.push(LstmLayerParams { weight, bias });
        }
        let output = match output_map {
            Some(map) => OutputKind::Slim(OutputLayer::new(
                EmbeddingPool::from_data(r.matrix(m_out, n / k_out)?)?,
                map,
            )?),
            None => OutputKind::Dense(DenseOutput {
                weight: r.matrix(vocab_size, n)?,
            }),
        };
        let model = Model {
            config,
            input,
            stack: LstmStack { layers: stack_layers },
            output,
        };

        let accum = if flags & FLAG_OPTIMIZER != 0 {
            let sizes: Vec<usize> = model.tensors().iter().map(|t| t.len()).collect();
            sizes.into_iter().map(|len| r.reals(len)).collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        let optimizer = OptimizerState {
            kind: train.optimizer,
            accum,
        };
        if optimizer.kind == OptimizerKind::Adagrad && optimizer.accum.is_empty() {
            return Err(Error::Checkpoint("adagrad checkpoint without accumulators".into()));
        }
        Ok(Checkpoint {
            model,
            train,
            optimizer,
            epoch: meta.parse_required("epoch")?,
            best_valid_ppl: meta.parse_required("best_valid_ppl")?,
            lr: meta.parse_required("current_lr")?,
            vocab_hash: meta.parse_required("vocab_hash")?,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::file(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&fs::read(path).map_err(|e| Error::file(path, e))?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn count(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Checkpoint("count overflows usize".into()))
    }

    fn text(&mut self) -> Result<&'a str> {
        let len = self.count()?;
        std::str::from_utf8(self.take(len)?)
            .map_err(|e| Error::Checkpoint(format!("invalid UTF-8 section: {e}")))
    }

    fn reals(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Array2<f64>> {
        let data = self.reals(rows * cols)?;
        Array2::from_shape_vec((rows, cols), data).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}

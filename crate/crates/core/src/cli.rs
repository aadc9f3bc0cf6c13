//! Command-line front end: `train`, `eval`, `bench`, `map` and `sweep`.
//!
//! Runs are described by a flat `key = value` config (see [`KvConfig`]);
//! flags override file entries. Recognised keys:
//!
//! | key | default | |
//! |---|---|---|
//! | `train`, `valid`, `test` | | corpus paths, one sentence per line (`test` optional) |
//! | `out` | `out` | output directory |
//! | `seed` | `1` | master seed |
//! | `layers`, `hidden` | `2`, `128` | |
//! | `k_in`, `scheme_in` | `1`, `balanced` | |
//! | `m_in` or `ratio_in` | `ratio_in = 1` | pool size, or `M/(K·V)` |
//! | `k_out`, `scheme_out` | `1`, `partitioned` | `scheme_out = dense` forces a dense layer |
//! | `m_out` or `ratio_out` | dense output | |
//! | `dropout`, `dropout_embed` | `0`, `0` | |
//! | `loss`, `nce_k` | `full`, `20` | `full` or `nce` |
//! | `optimizer`, `lr`, `lr_decay`, `clip` | `sgd`, `1`, `0.5`, `5` | `clip = none` disables clipping |
//! | `batch`, `bptt`, `max_epochs`, `eval_interval` | `20`, `35`, `15`, `1` | |
//! | `min_count`, `max_vocab` | `1`, unlimited | |
//! | `log_timing` | `true` | `false` writes 0 in the `seconds` column |

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::bench::{self, BenchSpec, Variant};
use crate::checkpoint::Checkpoint;
use crate::config::KvConfig;
use crate::corpus::{encode, read_lines, TokenStream, Vocabulary};
use crate::error::{Error, Result};
use crate::mapping::{Scheme, SubVectorMapping, UsageSummary};
use crate::model::{LossKind, Model, ModelConfig, Sharing};
use crate::train::{train, TrainConfig, TrainData};

pub const CHECKPOINT_FILE: &str = "model.bin";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const LOG_FILE: &str = "train_log.csv";
pub const MAP_IN_FILE: &str = "map_in.txt";
pub const MAP_OUT_FILE: &str = "map_out.txt";
pub const EFFECTIVE_CFG: &str = "effective.cfg";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const SWEEP_HEADER: &str = "value,best_valid_ppl,test_ppl,params";

#[derive(Debug, Parser)]
#[command(name = "slimlm", version, about = "LSTM language models with shared sub-vector embeddings")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write checkpoint, vocabulary, mappings and log.
    Train(RunArgs),
    /// Print the perplexity of a checkpoint on a corpus.
    Eval(EvalArgs),
    /// Time the output-layer variants.
    Bench(BenchArgs),
    /// Generate or inspect mapping files.
    #[command(subcommand)]
    Map(MapCommand),
    /// Train one model per value of a sharing parameter.
    Sweep(SweepArgs),
}

/// Config file plus per-key overrides.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub valid: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub k_in: Option<usize>,
    #[arg(long)]
    pub m_in: Option<usize>,
    #[arg(long)]
    pub k_out: Option<usize>,
    #[arg(long)]
    pub m_out: Option<usize>,
    #[arg(long)]
    pub scheme_in: Option<String>,
    #[arg(long)]
    pub scheme_out: Option<String>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    /// `full` or `nce`.
    #[arg(long)]
    pub loss: Option<String>,
    #[arg(long)]
    pub nce_k: Option<usize>,
    #[arg(long)]
    pub optimizer: Option<String>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Global gradient-norm bound, or `none`.
    #[arg(long)]
    pub clip: Option<String>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub bptt: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub dropout_embed: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overwrite an existing checkpoint in the output directory.
    #[arg(long)]
    pub force: bool,
    /// Extra `key=value` overrides.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl RunArgs {
    /// Config file (if any) with the flags applied on top.
    pub fn to_config(&self) -> Result<KvConfig> {
        let mut kv = match &self.config {
            Some(p) => KvConfig::load(p)?,
            None => KvConfig::new(),
        };
        let path = |p: &PathBuf| p.display().to_string();
        let overrides: [(&str, Option<String>); 24] = [
            ("train", self.train.as_ref().map(path)),
            ("valid", self.valid.as_ref().map(path)),
            ("test", self.test.as_ref().map(path)),
            ("seed", self.seed.map(|v| v.to_string())),
            ("k_in", self.k_in.map(|v| v.to_string())),
            ("m_in", self.m_in.map(|v| v.to_string())),
            ("k_out", self.k_out.map(|v| v.to_string())),
            ("m_out", self.m_out.map(|v| v.to_string())),
            ("scheme_in", self.scheme_in.clone()),
            ("scheme_out", self.scheme_out.clone()),
            ("hidden", self.hidden.map(|v| v.to_string())),
            ("layers", self.layers.map(|v| v.to_string())),
            ("loss", self.loss.clone()),
            ("nce_k", self.nce_k.map(|v| v.to_string())),
            ("optimizer", self.optimizer.clone()),
            ("lr", self.lr.map(|v| v.to_string())),
            ("clip", self.clip.clone()),
            ("batch", self.batch.map(|v| v.to_string())),
            ("bptt", self.bptt.map(|v| v.to_string())),
            ("max_epochs", self.max_epochs.map(|v| v.to_string())),
            ("dropout", self.dropout.map(|v| v.to_string())),
            ("dropout_embed", self.dropout_embed.map(|v| v.to_string())),
            ("out", self.out.as_ref().map(path)),
            ("force", self.force.then(|| "true".to_string())),
        ];
        for (key, value) in overrides {
            if let Some(v) = value {
                // Explicit pool sizes and ratios exclude each other.
                match key {
                    "m_in" => kv.remove("ratio_in"),
                    "m_out" => kv.remove("ratio_out"),
                    _ => {}
                }
                kv.set(key, v);
            }
        }
        for entry in &self.set {
            let (k, v) = entry
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got '{entry}'")))?;
            kv.set(k.trim(), v.trim());
        }
        Ok(kv)
    }
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub corpus: PathBuf,
    /// Vocabulary file; defaults to `vocab.txt` beside the checkpoint.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Evaluate even if the vocabulary fingerprint does not match.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 50_000)]
    pub vocab: usize,
    #[arg(long, default_value_t = 512)]
    pub hidden: usize,
    #[arg(long, short = 'k', default_value_t = 8)]
    pub parts: usize,
    #[arg(long, short = 'm', default_value_t = 4096)]
    pub pool: usize,
    #[arg(long, default_value_t = 20)]
    pub batch: usize,
    #[arg(long, default_value_t = 5)]
    pub reps: usize,
    #[arg(long, default_value_t = 3)]
    pub warmup: usize,
    /// Comma-separated subset of dense, hash_on_the_fly, se_dp.
    #[arg(long, value_delimiter = ',')]
    pub variants: Vec<String>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Also time se_dp alone for each of these K values.
    #[arg(long, value_delimiter = ',')]
    pub k_sweep: Vec<usize>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum MapCommand {
    /// Write a mapping file.
    Gen {
        #[arg(long)]
        vocab: usize,
        #[arg(long, short = 'k')]
        parts: usize,
        #[arg(long, short = 'm')]
        pool: usize,
        #[arg(long, default_value = "balanced")]
        scheme: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarise a mapping file.
    Inspect { path: PathBuf },
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// One of m_in, m_out, k_in, k_out, ratio_in, ratio_out.
    #[arg(long)]
    pub vary: String,
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<String>,
}

/// Model, optimizer and data settings resolved from a config.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub train_path: PathBuf,
    pub valid_path: PathBuf,
    pub test_path: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub min_count: usize,
    pub max_vocab: Option<usize>,
    pub force: bool,
}

/// Pool size for a target compression ratio `M/(K·V)`, at least `K` and a
/// multiple of `K` when `multiple_of_k`.
pub fn pool_for_ratio(ratio: f64, k: usize, vocab: usize, multiple_of_k: bool) -> Result<usize> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::Config(format!("ratio {ratio} outside (0, 1]")));
    }
    let slots = (k * vocab) as f64;
    let mut m = ((ratio * slots).round() as usize).max(k);
    if multiple_of_k {
        m = m.div_ceil(k) * k;
    }
    Ok(m.min(k * vocab))
}

fn sharing(kv: &KvConfig, side: &str, vocab: usize) -> Result<Option<Sharing>> {
    let scheme_key = format!("scheme_{side}");
    let (m_key, ratio_key) = (format!("m_{side}"), format!("ratio_{side}"));
    let scheme_text = kv.get(&scheme_key);
    let dense_default = side == "out" && !kv.contains(&m_key) && !kv.contains(&ratio_key);
    if scheme_text == Some("dense") || (dense_default && scheme_text.is_none()) {
        if side == "in" {
            return Err(Error::Config("scheme_in cannot be dense; use ratio_in = 1".into()));
        }
        return Ok(None);
    }
    let default_scheme = if side == "in" { Scheme::Balanced } else { Scheme::Partitioned };
    let scheme: Scheme = kv.get_or(&scheme_key, default_scheme)?;
    let k: usize = kv.get_or(&format!("k_{side}"), 1)?;
    if k == 0 {
        return Err(Error::Config(format!("k_{side} must be positive")));
    }
    let m = match kv.get(&m_key) {
        Some(_) => kv.parse_required(&m_key)?,
        None => pool_for_ratio(kv.get_or(&ratio_key, 1.0)?, k, vocab, scheme.is_partitioned())?,
    };
    Ok(Some(Sharing::new(scheme, k, m)))
}

impl RunConfig {
    /// Resolves `kv` for a vocabulary of `vocab_size` words.
    pub fn resolve(kv: &KvConfig, vocab_size: usize) -> Result<Self> {
        let loss = match kv.get_or("loss", "full".to_string())?.as_str() {
            "full" => LossKind::Full,
            "nce" => LossKind::Nce {
                k: kv.get_or("nce_k", 20)?,
            },
            other => other.parse()?,
        };
        let model = ModelConfig {
            layers: kv.get_or("layers", 2)?,
            hidden: kv.get_or("hidden", 128)?,
            vocab_size,
            input: sharing(kv, "in", vocab_size)?.expect("input sharing"),
            output: sharing(kv, "out", vocab_size)?,
            dropout_embed: kv.get_or("dropout_embed", 0.0)?,
            dropout: kv.get_or("dropout", 0.0)?,
            loss,
            seed: kv.get_or("seed", 1)?,
        };
        model.validate()?;
        let d = TrainConfig::default();
        let clip_norm = match kv.get("clip") {
            None => d.clip_norm,
            Some("none") => None,
            Some(_) => Some(kv.parse_required("clip")?),
        };
        let train = TrainConfig {
            lr: kv.get_or("lr", d.lr)?,
            lr_decay: kv.get_or("lr_decay", d.lr_decay)?,
            optimizer: kv.get_or("optimizer", d.optimizer)?,
            clip_norm,
            batch_size: kv.get_or("batch", d.batch_size)?,
            bptt_len: kv.get_or("bptt", d.bptt_len)?,
            max_epochs: kv.get_or("max_epochs", d.max_epochs)?,
            eval_interval: kv.get_or("eval_interval", d.eval_interval)?,
            log_timing: kv.get_or("log_timing", d.log_timing)?,
        };
        train.validate()?;
        let max_vocab = match kv.get("max_vocab") {
            None => None,
            Some(_) => Some(kv.parse_required("max_vocab")?),
        };
        Ok(RunConfig {
            model,
            train,
            train_path: kv.require("train")?.into(),
            valid_path: kv.require("valid")?.into(),
            test_path: kv.get("test").map(PathBuf::from),
            out_dir: kv.get("out").unwrap_or("out").into(),
            min_count: kv.get_or("min_count", 1)?,
            max_vocab,
            force: kv.get_or("force", false)?,
        })
    }

    /// Every setting, fully resolved, in a fixed order.
    pub fn effective(&self) -> KvConfig {
        let (m, t) = (&self.model, &self.train);
        let mut kv = KvConfig::new();
        kv.set("train", self.train_path.display());
        kv.set("valid", self.valid_path.display());
        if let Some(p) = &self.test_path {
            kv.set("test", p.display());
        }
        kv.set("out", self.out_dir.display());
        kv.set("seed", m.seed);
        kv.set("vocab_size", m.vocab_size);
        kv.set("min_count", self.min_count);
        if let Some(v) = self.max_vocab {
            kv.set("max_vocab", v);
        }
        kv.set("layers", m.layers);
        kv.set("hidden", m.hidden);
        kv.set("scheme_in", m.input.scheme);
        kv.set("k_in", m.input.k);
        kv.set("m_in", m.input.m);
        match m.output {
            Some(o) => {
                kv.set("scheme_out", o.scheme);
                kv.set("k_out", o.k);
                kv.set("m_out", o.m);
            }
            None => kv.set("scheme_out", "dense"),
        }
        kv.set("dropout", m.dropout);
        kv.set("dropout_embed", m.dropout_embed);
        match m.loss {
            LossKind::Full => kv.set("loss", "full"),
            LossKind::Nce { k } => {
                kv.set("loss", "nce");
                kv.set("nce_k", k);
            }
        }
        kv.set("optimizer", t.optimizer);
        kv.set("lr", t.lr);
        kv.set("lr_decay", t.lr_decay);
        kv.set("clip", t.clip_norm.map_or("none".to_string(), |c| c.to_string()));
        kv.set("batch", t.batch_size);
        kv.set("bptt", t.bptt_len);
        kv.set("max_epochs", t.max_epochs);
        kv.set("eval_interval", t.eval_interval);
        kv.set("log_timing", t.log_timing);
        kv
    }
}

/// What a finished training run reports.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub out_dir: PathBuf,
    pub best_valid_ppl: f64,
    pub test_ppl: Option<f64>,
    pub params: usize,
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::file(path, e))
}

/// Trains from a config and writes every artifact into the output
/// directory. Epoch progress goes to `progress`.
pub fn cmd_train(kv: &KvConfig, progress: &mut dyn Write) -> Result<TrainSummary> {
    let train_lines = read_lines(kv.require("train")?)?;
    let valid_lines = read_lines(kv.require("valid")?)?;
    let min_count = kv.get_or("min_count", 1)?;
    let max_vocab = match kv.get("max_vocab") {
        None => None,
        Some(_) => Some(kv.parse_required("max_vocab")?),
    };
    let vocab = Vocabulary::build(&train_lines, min_count, max_vocab)?;
    let run = RunConfig::resolve(kv, vocab.len())?;
    let test = match &run.test_path {
        Some(p) => Some(encode(&read_lines(p)?, &vocab)),
        None => None,
    };

    let out = &run.out_dir;
    fs::create_dir_all(out).map_err(|e| Error::file(out, e))?;
    let ckpt_path = out.join(CHECKPOINT_FILE);
    if ckpt_path.exists() && !run.force {
        return Err(Error::Config(format!(
            "{} exists; pass --force to overwrite",
            ckpt_path.display()
        )));
    }
    write(&out.join(EFFECTIVE_CFG), run.effective().to_text())?;
    vocab.save(out.join(VOCAB_FILE))?;

    let model = Model::init(run.model.clone())?;
    model.input.mapping.save(out.join(MAP_IN_FILE))?;
    if let Some(m) = model.output.mapping() {
        m.save(out.join(MAP_OUT_FILE))?;
    }
    let params = model.num_params();
    let data = TrainData {
        train: encode(&train_lines, &vocab),
        valid: encode(&valid_lines, &vocab),
    };
    let outcome = train(model, &data, &run.train, vocab.fingerprint(), |row| {
        let ppl = row.valid_ppl.map_or("-".to_string(), |p| format!("{p:.4}"));
        // Progress output is best effort.
        let _ = writeln!(
            progress,
            "epoch {} train_loss={:.4} valid_ppl={} lr={} seconds={:.1}",
            row.epoch, row.train_loss, ppl, row.lr, row.seconds
        );
    })?;
    write(&out.join(LOG_FILE), outcome.log.to_csv())?;
    outcome.best.save(&ckpt_path)?;

    let test_ppl = match &test {
        Some(stream) => Some(outcome.best.model.evaluate_ppl(stream)?),
        None => None,
    };
    Ok(TrainSummary {
        out_dir: out.clone(),
        best_valid_ppl: outcome.best.best_valid_ppl,
        test_ppl,
        params,
    })
}

/// Loads the vocabulary that belongs to `checkpoint`.
pub fn checkpoint_vocab(checkpoint: &Path, explicit: Option<&Path>) -> Result<Vocabulary> {
    let path = match explicit {
        Some(p) => p.to_path_buf(),
        None => checkpoint
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(VOCAB_FILE),
    };
    Vocabulary::load(path)
}

/// Perplexity of a checkpoint on a corpus file. A vocabulary whose
/// fingerprint differs from the one recorded at training time is an error
/// unless `force` is set, in which case a warning goes to `warn`.
pub fn cmd_eval(args: &EvalArgs, warn: &mut dyn Write) -> Result<f64> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let vocab = checkpoint_vocab(&args.checkpoint, args.vocab.as_deref())?;
    if vocab.fingerprint() != ckpt.vocab_hash {
        let msg = format!(
            "vocabulary fingerprint {:016x} does not match checkpoint {:016x}",
            vocab.fingerprint(),
            ckpt.vocab_hash
        );
        if !args.force {
            return Err(Error::Checkpoint(format!("{msg} (use --force to evaluate anyway)")));
        }
        let _ = writeln!(warn, "warning: {msg}");
    }
    if vocab.len() != ckpt.model.vocab_size() {
        return Err(Error::Checkpoint(format!(
            "vocabulary has {} words, model expects {}",
            vocab.len(),
            ckpt.model.vocab_size()
        )));
    }
    let stream: TokenStream = encode(&read_lines(&args.corpus)?, &vocab);
    ckpt.model.evaluate_ppl(&stream)
}

pub fn format_ppl(ppl: f64) -> String {
    format!("ppl={ppl:.4}")
}

/// Text printed by `map inspect`.
pub fn inspect_mapping(m: &SubVectorMapping) -> String {
    let u = UsageSummary::of(m);
    format!(
        "V={} K={} M={} scheme={} seed={}\nusage min={} max={} mean={:.4}\npartition_valid={}\n",
        m.vocab_size(),
        m.parts_per_word(),
        m.pool_size(),
        m.scheme(),
        m.seed(),
        u.min,
        u.max,
        u.mean,
        m.partition_valid()
    )
}

pub fn cmd_map(cmd: &MapCommand) -> Result<String> {
    match cmd {
        MapCommand::Gen {
            vocab,
            parts,
            pool,
            scheme,
            seed,
            out,
        } => {
            let m = SubVectorMapping::build(scheme.parse()?, *vocab, *parts, *pool, *seed)?;
            m.save(out)?;
            Ok(format!("wrote {}\n", out.display()))
        }
        MapCommand::Inspect { path } => Ok(inspect_mapping(&SubVectorMapping::load(path)?)),
    }
}

pub fn bench_spec(args: &BenchArgs) -> Result<BenchSpec> {
    let variants = if args.variants.is_empty() {
        Variant::ALL.to_vec()
    } else {
        args.variants
            .iter()
            .map(|v| v.parse())
            .collect::<Result<_>>()?
    };
    let spec = BenchSpec {
        batch: args.batch,
        reps: args.reps,
        warmup: args.warmup,
        variants,
        seed: args.seed,
        ..BenchSpec::new(args.vocab, args.hidden, args.parts, args.pool)
    };
    spec.validate()?;
    Ok(spec)
}

pub fn cmd_bench(args: &BenchArgs, out: &mut dyn Write) -> Result<()> {
    let spec = bench_spec(args)?;
    let result = bench::run_bench(&spec)?;
    let mut report = bench::to_csv(std::slice::from_ref(&result));
    if let Some((s1, s2)) = result.se_dp_steps {
        report.push_str(&format!(
            "# se_dp step medians: partial products {:e} s, summation {:e} s\n",
            s1.median, s2.median
        ));
    }
    if !args.k_sweep.is_empty() {
        let rows = bench::k_scaling(&spec, &args.k_sweep)?;
        report.push_str("# K,se_dp_median_s,flops\n");
        for (k, t, f) in &rows {
            report.push_str(&format!("# {k},{t:e},{f}\n"));
        }
        let (t, f): (Vec<f64>, Vec<f64>) = rows.iter().map(|r| (r.1, r.2 as f64)).unzip();
        report.push_str(&format!("# spearman={:.4}\n", bench::spearman(&t, &f)));
    }
    write!(out, "{report}")?;
    if let Some(p) = &args.csv {
        bench::emit_csv(&[result], p)?;
    }
    Ok(())
}

pub const SWEEP_KEYS: [&str; 6] = ["m_in", "m_out", "k_in", "k_out", "ratio_in", "ratio_out"];

/// One row of the combined sweep CSV; `None` fields mark a failed child.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: String,
    pub best_valid_ppl: Option<f64>,
    pub test_ppl: Option<f64>,
    pub params: Option<usize>,
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let opt = |v: Option<String>| v.unwrap_or_default();
    let mut out = format!("{SWEEP_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.value,
            opt(r.best_valid_ppl.map(|p| format!("{p:.6}"))),
            opt(r.test_ppl.map(|p| format!("{p:.6}"))),
            opt(r.params.map(|p| p.to_string()))
        ));
    }
    out
}

/// Trains one child per value in `<out>/<key>=<value>/`, writes
/// `<out>/sweep.csv`, and keeps going past failed children (reported to
/// `progress`). All children share the master seed.
pub fn cmd_sweep(
    base: &KvConfig,
    key: &str,
    values: &[String],
    progress: &mut dyn Write,
) -> Result<Vec<SweepRow>> {
    if !SWEEP_KEYS.contains(&key) {
        return Err(Error::Config(format!(
            "cannot sweep '{key}'; expected one of {}",
            SWEEP_KEYS.join(", ")
        )));
    }
    if values.is_empty() {
        return Err(Error::Config("empty sweep".into()));
    }
    let out: PathBuf = base.get("out").unwrap_or("out").into();
    fs::create_dir_all(&out).map_err(|e| Error::file(&out, e))?;
    let mut rows = Vec::new();
    for value in values {
        let mut kv = base.clone();
        let counterpart = match key {
            "m_in" => Some("ratio_in"),
            "ratio_in" => Some("m_in"),
            "m_out" => Some("ratio_out"),
            "ratio_out" => Some("m_out"),
            _ => None,
        };
        if let Some(c) = counterpart {
            kv.remove(c);
        }
        kv.set(key, value);
        kv.set("out", out.join(format!("{key}={value}")).display());
        let _ = writeln!(progress, "== {key} = {value}");
        let row = match cmd_train(&kv, progress) {
            Ok(s) => SweepRow {
                value: value.clone(),
                best_valid_ppl: Some(s.best_valid_ppl),
                test_ppl: s.test_ppl,
                params: Some(s.params),
            },
            Err(e) => {
                let _ = writeln!(progress, "error: {key}={value}: {e}");
                SweepRow {
                    value: value.clone(),
                    best_valid_ppl: None,
                    test_ppl: None,
                    params: None,
                }
            }
        };
        rows.push(row);
        write(&out.join(SWEEP_FILE), sweep_csv(&rows))?;
    }
    Ok(rows)
}

/// Runs a parsed command line, printing results to stdout and progress to
/// stderr.
pub fn run(cli: Cli) -> Result<()> {
    let stdout = &mut std::io::stdout();
    let stderr = &mut std::io::stderr();
    match cli.command {
        Command::Train(args) => {
            let s = cmd_train(&args.to_config()?, stderr)?;
            println!("best_valid_ppl={:.4}", s.best_valid_ppl);
            if let Some(t) = s.test_ppl {
                println!("test_ppl={t:.4}");
            }
            println!("params={}", s.params);
            println!("out={}", s.out_dir.display());
        }
        Command::Eval(args) => println!("{}", format_ppl(cmd_eval(&args, stderr)?)),
        Command::Bench(args) => cmd_bench(&args, stdout)?,
        Command::Map(cmd) => print!("{}", cmd_map(&cmd)?),
        Command::Sweep(args) => {
            let rows = cmd_sweep(&args.run.to_config()?, &args.vary, &args.values, stderr)?;
            print!("{}", sweep_csv(&rows));
            let failed = rows.iter().filter(|r| r.best_valid_ppl.is_none()).count();
            if failed > 0 {
                return Err(Error::Config(format!("{failed} sweep run(s) failed")));
            }
        }
    }
    Ok(())
}

/// Process entry point; returns the exit code.
pub fn main() -> i32 {
    match run(Cli::parse()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

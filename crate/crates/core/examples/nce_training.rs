//! Trains the same small model once with the full softmax and once with
//! noise-contrastive estimation, and compares validation perplexity. Both
//! use a shared output layer (K = 4, pool of V/2 rows).
//!
//! ```text
//! cargo run --release --example nce_training
//! ```

use slimlm::corpus::{encode, Vocabulary};
use slimlm::model::{LossKind, Model, ModelConfig, Sharing};
use slimlm::synth::{MarkovSpec, SyntheticCorpus};
use slimlm::train::{train, OptimizerKind, TrainConfig, TrainData};

fn main() -> slimlm::Result<()> {
    let spec = MarkovSpec {
        words: 300,
        ..MarkovSpec::default()
    };
    let corpus = SyntheticCorpus::generate(spec, 1, 20_000, 2_000, 0);
    let vocab = Vocabulary::build(&corpus.train, 1, None)?;
    let data = TrainData {
        train: encode(&corpus.train, &vocab),
        valid: encode(&corpus.valid, &vocab),
    };
    let v = vocab.len();
    for loss in [LossKind::Full, LossKind::Nce { k: 20 }] {
        let model = Model::init(ModelConfig {
            layers: 1,
            hidden: 64,
            vocab_size: v,
            input: Sharing::new(slimlm::Scheme::Balanced, 4, v),
            output: Some(Sharing::new(slimlm::Scheme::Partitioned, 4, (v / 2).div_ceil(4) * 4)),
            dropout_embed: 0.0,
            dropout: 0.0,
            loss,
            seed: 1,
        })?;
        let initial = model.evaluate_ppl(&data.valid)?;
        let cfg = TrainConfig {
            optimizer: OptimizerKind::Adagrad,
            lr: 0.3,
            max_epochs: 6,
            ..TrainConfig::default()
        };
        let outcome = train(model, &data, &cfg, vocab.fingerprint(), |row| {
            println!("  {loss:?} epoch {} valid ppl {:.3}", row.epoch, row.valid_ppl.unwrap_or(f64::NAN));
        })?;
        println!("{loss:?}: initial {initial:.1} -> best {:.3}", outcome.best.best_valid_ppl);
    }
    Ok(())
}

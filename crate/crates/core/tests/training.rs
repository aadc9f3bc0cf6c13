mod common;

use slimlm::checkpoint::Checkpoint;
use slimlm::corpus::{encode, Vocabulary};
use slimlm::mapping::Scheme;
use slimlm::model::{LossKind, Model, ModelConfig, Sharing};
use slimlm::synth::{MarkovSpec, SyntheticCorpus};
use slimlm::train::{train, OptimizerKind, TrainConfig, TrainData};

fn corpus(tokens: usize, words: usize) -> (Vocabulary, TrainData, slimlm::TokenStream) {
    let spec = MarkovSpec {
        words,
        ..MarkovSpec::default()
    };
    let c = SyntheticCorpus::generate(spec, 21, tokens, tokens / 10, tokens / 10);
    let vocab = Vocabulary::build(&c.train, 1, None).unwrap();
    let data = TrainData {
        train: encode(&c.train, &vocab),
        valid: encode(&c.valid, &vocab),
    };
    let test = encode(&c.test, &vocab);
    (vocab, data, test)
}

fn small(v: usize, loss: LossKind) -> ModelConfig {
    ModelConfig {
        layers: 1,
        hidden: 16,
        vocab_size: v,
        input: Sharing::new(Scheme::Balanced, 4, 2 * v),
        output: Some(Sharing::new(Scheme::Partitioned, 2, v)),
        dropout_embed: 0.1,
        dropout: 0.1,
        loss,
        seed: 5,
    }
}

fn cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        lr: 0.1,
        optimizer: OptimizerKind::Adagrad,
        batch_size: 10,
        bptt_len: 10,
        max_epochs: epochs,
        log_timing: false,
        ..TrainConfig::default()
    }
}

/// `(train_loss, valid_ppl)` per epoch of a 2-epoch run on a 10K-token
/// corpus, recorded once from this implementation.
const GOLDEN: [(f64, f64); 2] = [
    (2.70488318789785698, 10.00970418802432249),
    (2.28026308145001133, 8.68753253150524252),
];

#[test]
fn golden_two_epoch_trajectory() {
    let (vocab, data, _) = corpus(10_000, 100);
    let model = Model::init(small(vocab.len(), LossKind::Full)).unwrap();
    let out = train(model, &data, &cfg(2), vocab.fingerprint(), |_| {}).unwrap();
    assert_eq!(out.log.rows.len(), 2);
    for (row, (loss, ppl)) in out.log.rows.iter().zip(GOLDEN) {
        assert!((row.train_loss - loss).abs() <= 1e-9 * loss, "{row:?}");
        assert!((row.valid_ppl.unwrap() - ppl).abs() <= 1e-9 * ppl, "{row:?}");
    }
}

#[test]
fn checkpoint_round_trip_preserves_perplexity_bits() {
    let (vocab, data, test) = corpus(3_000, 60);
    let model = Model::init(small(vocab.len(), LossKind::Full)).unwrap();
    let out = train(model, &data, &cfg(1), vocab.fingerprint(), |_| {}).unwrap();
    let before = out.best.model.evaluate_ppl(&test).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.bin");
    out.best.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back, out.best);
    assert_eq!(back.model.evaluate_ppl(&test).unwrap().to_bits(), before.to_bits());
}

#[test]
fn nce_training_beats_initial_model() {
    let (vocab, data, _) = corpus(5_000, 60);
    let model = Model::init(small(vocab.len(), LossKind::Nce { k: 10 })).unwrap();
    let out = train(model, &data, &cfg(2), vocab.fingerprint(), |_| {}).unwrap();
    assert!(
        out.best.best_valid_ppl < out.initial_valid_ppl,
        "{} vs initial {}",
        out.best.best_valid_ppl,
        out.initial_valid_ppl
    );
}

#[test]
fn sgd_halves_lr_after_a_bad_epoch() {
    let (vocab, data, _) = corpus(3_000, 60);
    let model = Model::init(small(vocab.len(), LossKind::Full)).unwrap();
    // A learning rate this large makes validation worse quickly.
    let c = TrainConfig {
        lr: 40.0,
        optimizer: OptimizerKind::Sgd,
        clip_norm: Some(50.0),
        ..cfg(4)
    };
    let out = train(model, &data, &c, 0, |_| {}).unwrap();
    let rows = &out.log.rows;
    for pair in rows.windows(2) {
        let best_so_far = rows
            .iter()
            .take_while(|r| r.epoch <= pair[0].epoch)
            .filter_map(|r| r.valid_ppl)
            .fold(f64::INFINITY, f64::min);
        let improved = pair[0].valid_ppl.unwrap() <= best_so_far;
        let expect = if improved { pair[0].lr } else { pair[0].lr * 0.5 };
        assert_eq!(pair[1].lr, expect, "{rows:?}");
    }
    let best = rows.iter().filter_map(|r| r.valid_ppl).fold(f64::INFINITY, f64::min);
    assert_eq!(out.best.best_valid_ppl, best);
}

#[test]
fn uncompressed_model_matches_dense_reference() {
    for seed in 0..10 {
        let worst = common::uncompressed_equivalence(seed, 10);
        assert!(worst <= 1e-12, "seed {seed}: {worst:e}");
    }
}

//! Trains a small compressed-input, compressed-output model on a generated
//! corpus, then reloads the checkpoint and scores the test split.
//!
//! ```text
//! cargo run --release --example train_tiny -- [OUT_DIR]
//! ```

use std::fs;
use std::path::PathBuf;

use slimlm::cli::{cmd_eval, cmd_train, EvalArgs, CHECKPOINT_FILE};
use slimlm::config::KvConfig;
use slimlm::synth::{MarkovSpec, SyntheticCorpus};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).map_or_else(|| std::env::temp_dir().join("slimlm_tiny"), PathBuf::from);
    fs::create_dir_all(&out)?;
    let spec = MarkovSpec {
        words: 200,
        ..MarkovSpec::default()
    };
    let corpus = SyntheticCorpus::generate(spec, 3, 20_000, 2_000, 2_000);
    for (name, lines) in [("train", &corpus.train), ("valid", &corpus.valid), ("test", &corpus.test)] {
        fs::write(out.join(format!("{name}.txt")), lines.join("\n") + "\n")?;
    }

    let kv = KvConfig::parse(&format!(
        "train = {0}/train.txt\nvalid = {0}/valid.txt\ntest = {0}/test.txt\nout = {0}/run\n\
         layers = 1\nhidden = 32\nk_in = 4\nratio_in = 0.25\nk_out = 4\nratio_out = 0.25\n\
         optimizer = adagrad\nlr = 0.1\nbatch = 20\nbptt = 20\nmax_epochs = 3\nforce = true\n",
        out.display()
    ))?;
    let summary = cmd_train(&kv, &mut std::io::stdout())?;
    println!(
        "{} parameters, best valid ppl {:.3}, test ppl {:.3}",
        summary.params,
        summary.best_valid_ppl,
        summary.test_ppl.unwrap_or(f64::NAN)
    );

    let reloaded = cmd_eval(
        &EvalArgs {
            checkpoint: summary.out_dir.join(CHECKPOINT_FILE),
            corpus: out.join("test.txt"),
            vocab: None,
            force: false,
        },
        &mut std::io::stderr(),
    )?;
    println!("reloaded checkpoint test ppl {reloaded:.3}");
    Ok(())
}

//! Writes a synthetic Markov corpus as `train.txt`, `valid.txt` and
//! `test.txt`, ready for `slimlm train`.
//!
//! ```text
//! cargo run --release --example synthetic_corpus -- DIR [TRAIN_TOKENS] [VOCAB] [SEED]
//! ```

use std::fs;
use std::path::PathBuf;

use slimlm::synth::{MarkovSpec, SyntheticCorpus};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().ok_or("usage: synthetic_corpus DIR [TOKENS] [VOCAB] [SEED]")?);
    let tokens: usize = args.next().map_or(Ok(100_000), |a| a.parse())?;
    let words: usize = args.next().map_or(Ok(1000), |a| a.parse())?;
    let seed: u64 = args.next().map_or(Ok(7), |a| a.parse())?;
    let spec = MarkovSpec {
        words,
        ..MarkovSpec::default()
    };
    let corpus = SyntheticCorpus::generate(spec, seed, tokens, tokens / 10, tokens / 10);
    fs::create_dir_all(&dir)?;
    for (name, lines) in [("train", &corpus.train), ("valid", &corpus.valid), ("test", &corpus.test)] {
        let path = dir.join(format!("{name}.txt"));
        fs::write(&path, lines.join("\n") + "\n")?;
        println!("{} ({} lines)", path.display(), lines.len());
    }
    Ok(())
}

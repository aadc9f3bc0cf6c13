//! Sweeps the input compression ratio on a generated corpus and prints the
//! resulting `sweep.csv`.
//!
//! ```text
//! cargo run --release --example ratio_sweep -- [OUT_DIR]
//! ```

use std::fs;
use std::path::PathBuf;

use slimlm::cli::{cmd_sweep, sweep_csv};
use slimlm::config::KvConfig;
use slimlm::synth::{MarkovSpec, SyntheticCorpus};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).map_or_else(|| std::env::temp_dir().join("slimlm_sweep"), PathBuf::from);
    fs::create_dir_all(&out)?;
    let spec = MarkovSpec {
        words: 300,
        ..MarkovSpec::default()
    };
    let corpus = SyntheticCorpus::generate(spec, 5, 20_000, 2_000, 2_000);
    for (name, lines) in [("train", &corpus.train), ("valid", &corpus.valid), ("test", &corpus.test)] {
        fs::write(out.join(format!("{name}.txt")), lines.join("\n") + "\n")?;
    }
    let kv = KvConfig::parse(&format!(
        "train = {0}/train.txt\nvalid = {0}/valid.txt\ntest = {0}/test.txt\nout = {0}/runs\n\
         layers = 1\nhidden = 32\nk_in = 4\noptimizer = adagrad\nlr = 0.1\nmax_epochs = 2\nforce = true\n",
        out.display()
    ))?;
    let values: Vec<String> = ["1", "0.25", "0.0625"].iter().map(|s| s.to_string()).collect();
    let rows = cmd_sweep(&kv, "ratio_in", &values, &mut std::io::stderr())?;
    print!("{}", sweep_csv(&rows));
    Ok(())
}

//! Synthetic corpora with word-specific next-word structure.
//!
//! Words `w0 … w{V-1}` follow a Zipfian unigram distribution. Every word
//! owns a small set of preferred successors; most transitions pick one of
//! them, the rest fall back to the unigram. A model that cannot tell words
//! apart at its input (for example, whole embeddings shared between words)
//! loses exactly this structure, which makes the corpus useful for
//! comparing sharing schemes.

use crate::rng::SplitMix64;
use crate::softmax::NoiseTable;

#[derive(Debug, Clone)]
pub struct MarkovSpec {
    pub words: usize,
    pub successors: usize,
    /// Probability of following the current word's successor list.
    pub follow_prob: f64,
    pub zipf_exponent: f64,
    pub min_sentence: usize,
    pub max_sentence: usize,
}

impl Default for MarkovSpec {
    fn default() -> Self {
        MarkovSpec {
            words: 1000,
            successors: 4,
            follow_prob: 0.9,
            zipf_exponent: 1.0,
            min_sentence: 5,
            max_sentence: 20,
        }
    }
}

/// A sampled Markov source.
#[derive(Debug, Clone)]
pub struct MarkovSource {
    spec: MarkovSpec,
    unigram: NoiseTable,
    successors: Vec<Vec<usize>>,
    successor_weights: NoiseTable,
}

impl MarkovSource {
    pub fn new(spec: MarkovSpec, seed: u64) -> Self {
        assert!(spec.words >= 2 && spec.successors >= 1);
        assert!(spec.min_sentence >= 1 && spec.max_sentence >= spec.min_sentence);
        let weights: Vec<f64> = (0..spec.words)
            .map(|r| 1.0 / ((r + 1) as f64).powf(spec.zipf_exponent))
            .collect();
        let unigram = NoiseTable::new(&weights, 1.0).expect("positive weights");
        let mut rng = SplitMix64::new(seed);
        let successors = (0..spec.words)
            .map(|_| (0..spec.successors).map(|_| unigram.sample(&mut rng)).collect())
            .collect();
        // Successor preference decays geometrically with list position.
        let sw: Vec<f64> = (0..spec.successors).map(|i| 0.5f64.powi(i as i32)).collect();
        let successor_weights = NoiseTable::new(&sw, 1.0).expect("positive weights");
        MarkovSource {
            spec,
            unigram,
            successors,
            successor_weights,
        }
    }

    /// Sentences of space-separated `w<id>` tokens totalling about `tokens`
    /// words (end markers not included).
    pub fn sentences(&self, tokens: usize, seed: u64) -> Vec<String> {
        let mut rng = SplitMix64::new(seed);
        let mut lines = Vec::new();
        let mut emitted = 0;
        let mut prev = self.unigram.sample(&mut rng);
        let span = (self.spec.max_sentence - self.spec.min_sentence + 1) as u64;
        while emitted < tokens {
            let len = self.spec.min_sentence + rng.below(span) as usize;
            let mut words = Vec::with_capacity(len);
            for _ in 0..len {
                let next = if rng.next_f64() < self.spec.follow_prob {
                    self.successors[prev][self.successor_weights.sample(&mut rng)]
                } else {
                    self.unigram.sample(&mut rng)
                };
                words.push(format!("w{next}"));
                prev = next;
            }
            emitted += len;
            lines.push(words.join(" "));
        }
        lines
    }
}

/// Train/valid/test splits drawn from one source.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub train: Vec<String>,
    pub valid: Vec<String>,
    pub test: Vec<String>,
}

impl SyntheticCorpus {
    pub fn generate(spec: MarkovSpec, seed: u64, train: usize, valid: usize, test: usize) -> Self {
        let source = MarkovSource::new(spec, seed);
        SyntheticCorpus {
            train: source.sentences(train, seed.wrapping_add(1)),
            valid: source.sentences(valid, seed.wrapping_add(2)),
            test: source.sentences(test, seed.wrapping_add(3)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_sized() {
        let a = SyntheticCorpus::generate(MarkovSpec::default(), 3, 2000, 100, 100);
        let b = SyntheticCorpus::generate(MarkovSpec::default(), 3, 2000, 100, 100);
        assert_eq!(a.train, b.train);
        let n: usize = a.train.iter().map(|l| l.split(' ').count()).sum();
        assert!((2000..2020).contains(&n));
        assert_ne!(a.train, a.valid);
    }
}

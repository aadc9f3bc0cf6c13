//! Vocabulary construction, id encoding and stream batching.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::fnv1a;

pub const EOS: &str = "<eos>";
pub const UNK: &str = "<unk>";
pub const EOS_ID: usize = 0;
pub const UNK_ID: usize = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    counts: Vec<usize>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    fn from_parts(tokens: Vec<String>, counts: Vec<usize>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary {
            tokens,
            counts,
            index,
        }
    }

    /// Whitespace-tokenized vocabulary. Ids 0 and 1 are `<eos>` and `<unk>`;
    /// the remaining ids go to words with at least `min_count` occurrences,
    /// by descending count then first occurrence, up to `max_size` words
    /// (reserved ids not included). Everything else counts towards `<unk>`.
    pub fn build<S: AsRef<str>>(
        lines: &[S],
        min_count: usize,
        max_size: Option<usize>,
    ) -> Result<Self> {
        if lines.is_empty() {
            return Err(Error::Corpus("empty corpus".into()));
        }
        let mut order: Vec<&str> = Vec::new();
        let mut counts: HashMap<&str, usize> = HashMap::new();
        let mut unk = 0usize;
        for line in lines {
            for tok in line.as_ref().split_ascii_whitespace() {
                match tok {
                    UNK => unk += 1,
                    // A literal end marker is the same event as a line end.
                    EOS => {}
                    _ => {
                        let c = counts.entry(tok).or_insert(0);
                        if *c == 0 {
                            order.push(tok);
                        }
                        *c += 1;
                    }
                }
            }
        }
        let eos = lines.len()
            + lines
                .iter()
                .map(|l| l.as_ref().split_ascii_whitespace().filter(|&t| t == EOS).count())
                .sum::<usize>();

        // `order` is first-occurrence order, so a stable sort breaks ties by it.
        let mut ranked: Vec<&str> = order;
        ranked.sort_by(|a, b| counts[b].cmp(&counts[a]));

        let mut tokens = vec![EOS.to_string(), UNK.to_string()];
        let mut kept_counts = vec![eos, 0];
        for (rank, tok) in ranked.iter().enumerate() {
            let c = counts[tok];
            if c >= min_count && max_size.map_or(true, |m| rank < m) {
                tokens.push(tok.to_string());
                kept_counts.push(c);
            } else {
                unk += c;
            }
        }
        kept_counts[UNK_ID] = unk;
        Ok(Self::from_parts(tokens, kept_counts))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    /// One `token count` line per id.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (t, c) in self.tokens.iter().zip(&self.counts) {
            out.push_str(t);
            out.push(' ');
            out.push_str(&c.to_string());
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut tokens = Vec::new();
        let mut counts = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let err = |reason: String| Error::Parse {
                what: "vocabulary",
                line: i + 1,
                reason,
            };
            let (tok, count) = line
                .rsplit_once(' ')
                .ok_or_else(|| err("expected `token count`".into()))?;
            let count = count
                .parse()
                .map_err(|e| err(format!("bad count '{count}': {e}")))?;
            tokens.push(tok.to_string());
            counts.push(count);
        }
        if tokens.len() < 2 || tokens[EOS_ID] != EOS || tokens[UNK_ID] != UNK {
            return Err(Error::Parse {
                what: "vocabulary",
                line: 1,
                reason: format!("ids {EOS_ID} and {UNK_ID} must be {EOS} and {UNK}"),
            });
        }
        let vocab = Self::from_parts(tokens, counts);
        if vocab.index.len() != vocab.tokens.len() {
            return Err(Error::Parse {
                what: "vocabulary",
                line: 1,
                reason: "duplicate tokens".into(),
            });
        }
        Ok(vocab)
    }

    /// FNV-1a of the text serialization; stored in checkpoints.
    pub fn fingerprint(&self) -> u64 {
        fnv1a(self.to_text().as_bytes())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::file(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_text(&fs::read_to_string(path).map_err(|e| Error::file(path, e))?)
    }
}

/// Flat id sequence for one split.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenStream {
    pub ids: Vec<usize>,
}

impl TokenStream {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Maps every line to ids and terminates it with `<eos>`.
pub fn encode<S: AsRef<str>>(lines: &[S], vocab: &Vocabulary) -> TokenStream {
    let mut ids = Vec::new();
    for line in lines {
        ids.extend(line.as_ref().split_ascii_whitespace().map(|t| vocab.id(t)));
        ids.push(EOS_ID);
    }
    TokenStream { ids }
}

pub fn read_lines(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    Ok(text.lines().map(str::to_string).collect())
}

/// One truncated-BPTT window, indexed `[t][lane]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Window {
    pub inputs: Vec<Vec<usize>>,
    pub targets: Vec<Vec<usize>>,
}

impl Window {
    pub fn steps(&self) -> usize {
        self.inputs.len()
    }

    pub fn tokens(&self) -> usize {
        self.inputs.iter().map(Vec::len).sum()
    }
}

/// Splits `stream` into `batch_size` contiguous lanes (tail dropped) and
/// tiles them with windows of at most `bptt_len` steps.
pub fn batchify(stream: &TokenStream, batch_size: usize, bptt_len: usize) -> Result<Vec<Window>> {
    if batch_size == 0 || bptt_len == 0 {
        return Err(Error::Corpus("batch size and bptt length must be positive".into()));
    }
    if stream.len() < 2 * batch_size {
        return Err(Error::Corpus(format!(
            "stream of {} tokens is too short for {batch_size} lanes",
            stream.len()
        )));
    }
    let lane_len = stream.len() / batch_size;
    let lane = |b: usize| &stream.ids[b * lane_len..(b + 1) * lane_len];
    let mut windows = Vec::new();
    let mut start = 0;
    while start + 1 < lane_len {
        let steps = bptt_len.min(lane_len - 1 - start);
        let mut inputs = Vec::with_capacity(steps);
        let mut targets = Vec::with_capacity(steps);
        for t in 0..steps {
            inputs.push((0..batch_size).map(|b| lane(b)[start + t]).collect());
            targets.push((0..batch_size).map(|b| lane(b)[start + t + 1]).collect());
        }
        windows.push(Window { inputs, targets });
        start += steps;
    }
    Ok(windows)
}

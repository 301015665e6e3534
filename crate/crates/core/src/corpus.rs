//! Corpus ingestion: vocabularies, context-value registries and integer
//! encoding of labeled sentences.
//!
//! A corpus file is UTF-8 with one example per line. Fields are separated by
//! a single TAB: the context values come first and the text is the last
//! field.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenize::Tokenizer;

pub const UNK_TOKEN: &str = "<unk>";
pub const BOS_TOKEN: &str = "<s>";
pub const EOS_TOKEN: &str = "</s>";

pub const UNK_ID: u32 = 0;
pub const BOS_ID: u32 = 1;
pub const EOS_ID: u32 = 2;
const NUM_SPECIALS: usize = 3;

/// One parsed corpus line.
#[derive(Clone, Debug, PartialEq)]
pub struct RawLine {
    /// 1-based line number in the source file.
    pub line: usize,
    pub contexts: Vec<String>,
    pub tokens: Vec<String>,
}

#[derive(Clone, Debug, Default)]
pub struct RawCorpus {
    pub lines: Vec<RawLine>,
}

impl RawCorpus {
    pub fn read(path: impl AsRef<Path>, tokenizer: &dyn Tokenizer) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| Error::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self::parse(&text, tokenizer))
    }

    /// Parses corpus text. Blank lines are skipped.
    pub fn parse(text: &str, tokenizer: &dyn Tokenizer) -> Self {
        let mut lines = Vec::new();
        for (i, raw) in text.split('\n').enumerate() {
            let raw = raw.strip_suffix('\r').unwrap_or(raw);
            if raw.is_empty() {
                continue;
            }
            let mut fields: Vec<&str> = raw.split('\t').collect();
            let body = fields.pop().unwrap_or_default();
            lines.push(RawLine {
                line: i + 1,
                contexts: fields.into_iter().map(str::to_string).collect(),
                tokens: tokenizer.tokenize(body),
            });
        }
        Self { lines }
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }
}

/// Number of sentences a line of `len` content tokens becomes after splitting.
pub fn sentence_count(len: usize, max_len: Option<usize>) -> usize {
    match max_len {
        Some(m) if len > m => len.div_ceil(m),
        _ => 1,
    }
}

/// Splits content tokens into chunks of at most `max_len`, each wrapped in
/// sentence-boundary tokens. An empty input yields one boundary-only sequence.
pub fn split_long_utterances(token_ids: &[u32], max_len: usize) -> Vec<Vec<u32>> {
    assert!(max_len >= 1, "max_len must be at least 1");
    let wrap = |chunk: &[u32]| {
        let mut seq = Vec::with_capacity(chunk.len() + 2);
        seq.push(BOS_ID);
        seq.extend_from_slice(chunk);
        seq.push(EOS_ID);
        seq
    };
    if token_ids.is_empty() {
        return vec![wrap(&[])];
    }
    token_ids.chunks(max_len).map(wrap).collect()
}

/// Token/id bijection with occurrence counts.
///
/// Ids 0, 1 and 2 are the UNK, sentence-begin and sentence-end tokens. Counts
/// are over predicted positions: every content token (out-of-vocabulary ones
/// credited to UNK) plus one end token per sentence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    counts: Vec<u64>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl Vocabulary {
    pub fn specials_only() -> Self {
        Self::from_tokens(vec![])
    }

    /// Vocabulary with the given non-special tokens, in order, all counts zero.
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let mut all: Vec<String> = [UNK_TOKEN, BOS_TOKEN, EOS_TOKEN]
            .iter()
            .map(|s| s.to_string())
            .collect();
        all.extend(tokens.into_iter().filter(|t| !is_special(t)));
        let counts = vec![0; all.len()];
        let mut vocab = Self {
            tokens: all,
            counts,
            index: HashMap::new(),
        };
        vocab.reindex();
        vocab
    }

    /// Keeps every token seen at least `min_count` times. Ids of retained
    /// tokens are ordered by descending count, then lexicographically.
    pub fn build(corpus: &RawCorpus, min_count: u64, max_len: Option<usize>) -> Result<Self> {
        if min_count < 1 {
            return Err(Error::Config("min_count must be at least 1".into()));
        }
        let mut freq: HashMap<&str, u64> = HashMap::new();
        for line in &corpus.lines {
            for tok in &line.tokens {
                *freq.entry(tok.as_str()).or_default() += 1;
            }
        }
        let mut kept: Vec<(&str, u64)> = freq
            .into_iter()
            .filter(|&(t, c)| c >= min_count && !is_special(t))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let mut vocab = Self::from_tokens(kept.into_iter().map(|(t, _)| t.to_string()).collect());
        if corpus.is_empty() {
            log::warn!("empty corpus: vocabulary holds only special tokens");
        }
        vocab.recount(corpus, max_len);
        Ok(vocab)
    }

    /// Recomputes counts from `corpus` without changing the token set.
    pub fn recount(&mut self, corpus: &RawCorpus, max_len: Option<usize>) {
        self.counts.iter_mut().for_each(|c| *c = 0);
        for line in &corpus.lines {
            for tok in &line.tokens {
                let id = self.id(tok) as usize;
                self.counts[id] += 1;
            }
            self.counts[EOS_ID as usize] += sentence_count(line.tokens.len(), max_len) as u64;
        }
    }

    fn reindex(&mut self) {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    /// Id of `token`, falling back to UNK.
    pub fn id(&self, token: &str) -> u32 {
        self.get(token).unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn count(&self, id: u32) -> u64 {
        self.counts[id as usize]
    }

    /// Unigram distribution over ids from the retained counts. Falls back to
    /// uniform over non-BOS ids when every count is zero.
    pub fn unigram(&self) -> Vec<f64> {
        let total: u64 = self.counts.iter().sum();
        if total == 0 {
            let n = (self.len() - 1) as f64;
            return (0..self.len())
                .map(|i| if i as u32 == BOS_ID { 0.0 } else { 1.0 / n })
                .collect();
        }
        self.counts
            .iter()
            .map(|&c| c as f64 / total as f64)
            .collect()
    }

    /// Fraction of corpus content tokens that map to UNK.
    pub fn oov_rate(&self, corpus: &RawCorpus) -> f64 {
        let (mut oov, mut total) = (0usize, 0usize);
        for line in &corpus.lines {
            for t in &line.tokens {
                total += 1;
                if self.get(t).is_none() {
                    oov += 1;
                }
            }
        }
        if total == 0 {
            0.0
        } else {
            oov as f64 / total as f64
        }
    }

    /// One token per line; line number is the id.
    pub fn write_tokens(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = fs::File::create(path)?;
        for t in &self.tokens {
            writeln!(out, "{t}")?;
        }
        Ok(())
    }

    pub fn read_tokens(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| Error::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let tokens: Vec<&str> = text.strip_suffix('\n').unwrap_or(&text).split('\n').collect();
        if tokens.len() < NUM_SPECIALS
            || tokens[..NUM_SPECIALS] != [UNK_TOKEN, BOS_TOKEN, EOS_TOKEN]
        {
            return Err(Error::Invalid(format!(
                "{}: vocabulary must start with {UNK_TOKEN}, {BOS_TOKEN}, {EOS_TOKEN}",
                path.display()
            )));
        }
        Ok(Self::from_tokens(
            tokens[NUM_SPECIALS..].iter().map(|s| s.to_string()).collect(),
        ))
    }

    /// Restores the lookup index after deserialization.
    pub(crate) fn rebuild_index(&mut self) {
        self.reindex();
    }
}

fn is_special(t: &str) -> bool {
    t == UNK_TOKEN || t == BOS_TOKEN || t == EOS_TOKEN
}

/// Retained values of one context variable. The UNK bucket id is the number
/// of retained values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextVariable {
    pub name: String,
    values: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl ContextVariable {
    pub fn new(name: impl Into<String>, values: Vec<String>) -> Self {
        let mut var = Self {
            name: name.into(),
            values,
            index: HashMap::new(),
        };
        var.reindex();
        var
    }

    fn reindex(&mut self) {
        self.index = self
            .values
            .iter()
            .enumerate()
            .map(|(i, v)| (v.clone(), i as u32))
            .collect();
    }

    pub fn unk_id(&self) -> u32 {
        self.values.len() as u32
    }

    /// Number of ids including the UNK bucket.
    pub fn cardinality(&self) -> usize {
        self.values.len() + 1
    }

    pub fn get(&self, value: &str) -> Option<u32> {
        self.index.get(value).copied()
    }

    pub fn id(&self, value: &str) -> u32 {
        self.get(value).unwrap_or_else(|| self.unk_id())
    }

    pub fn value(&self, id: u32) -> &str {
        self.values
            .get(id as usize)
            .map(String::as_str)
            .unwrap_or(UNK_TOKEN)
    }

    pub fn values(&self) -> &[String] {
        &self.values
    }
}

/// Builds the value map for context field `variable_index`. A value is kept
/// when it labels at least `threshold` sentences (counted after splitting);
/// kept values are numbered in lexicographic order.
pub fn build_context_registry(
    corpus: &RawCorpus,
    variable_index: usize,
    threshold: usize,
    name: impl Into<String>,
    max_len: Option<usize>,
) -> Result<ContextVariable> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for line in &corpus.lines {
        let value = line.contexts.get(variable_index).ok_or(Error::FieldCount {
            line: line.line,
            expected: variable_index + 1,
            found: line.contexts.len(),
        })?;
        *counts.entry(value.as_str()).or_default() += sentence_count(line.tokens.len(), max_len);
    }
    let mut kept: Vec<String> = counts
        .into_iter()
        .filter(|&(_, c)| c >= threshold)
        .map(|(v, _)| v.to_string())
        .collect();
    kept.sort();
    Ok(ContextVariable::new(name, kept))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextValueRegistry {
    pub variables: Vec<ContextVariable>,
}

impl ContextValueRegistry {
    /// Registry for every context field in `corpus`. `names` defaults to
    /// `v0, v1, ...` when shorter than the number of fields.
    pub fn build(
        corpus: &RawCorpus,
        names: &[String],
        threshold: usize,
        max_len: Option<usize>,
    ) -> Result<Self> {
        let n = corpus.lines.first().map_or(names.len(), |l| l.contexts.len());
        let variables = (0..n)
            .map(|i| {
                let name = names.get(i).cloned().unwrap_or_else(|| format!("v{i}"));
                build_context_registry(corpus, i, threshold, name, max_len)
            })
            .collect::<Result<_>>()?;
        Ok(Self { variables })
    }

    pub fn len(&self) -> usize {
        self.variables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variables.is_empty()
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.variables.iter().map(ContextVariable::cardinality).collect()
    }

    pub fn variable_index(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v.name == name)
    }

    /// `variable<TAB>value<TAB>id` lines, UNK buckets included.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = fs::File::create(path)?;
        for var in &self.variables {
            for (i, v) in var.values.iter().enumerate() {
                writeln!(out, "{}\t{}\t{}", var.name, v, i)?;
            }
            writeln!(out, "{}\t{}\t{}", var.name, UNK_TOKEN, var.unk_id())?;
        }
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| Error::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut variables: Vec<(String, Vec<(u32, String)>)> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split('\t').collect();
            let [name, value, id] = parts[..] else {
                return Err(Error::Invalid(format!(
                    "{}:{}: expected variable<TAB>value<TAB>id",
                    path.display(),
                    i + 1
                )));
            };
            let id: u32 = id
                .parse()
                .map_err(|_| Error::Invalid(format!("{}:{}: bad id", path.display(), i + 1)))?;
            if variables.last().is_none_or(|(n, _)| n != name) {
                variables.push((name.to_string(), Vec::new()));
            }
            variables.last_mut().unwrap().1.push((id, value.to_string()));
        }
        let variables = variables
            .into_iter()
            .map(|(name, mut entries)| {
                entries.sort_by_key(|e| e.0);
                let unk = entries.pop().filter(|(_, v)| v == UNK_TOKEN).ok_or_else(|| {
                    Error::Invalid(format!("variable {name}: missing {UNK_TOKEN} bucket"))
                })?;
                if unk.0 as usize != entries.len()
                    || entries.iter().enumerate().any(|(i, e)| e.0 as usize != i)
                {
                    return Err(Error::Invalid(format!("variable {name}: ids not contiguous")));
                }
                Ok(ContextVariable::new(
                    name,
                    entries.into_iter().map(|e| e.1).collect(),
                ))
            })
            .collect::<Result<_>>()?;
        Ok(Self { variables })
    }

    pub(crate) fn rebuild_index(&mut self) {
        self.variables.iter_mut().for_each(ContextVariable::reindex);
    }
}

/// An integer-encoded sentence with its context ids.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EncodedExample {
    pub context_ids: Vec<u32>,
    /// Begins with the sentence-begin id and ends with the sentence-end id.
    pub token_ids: Vec<u32>,
}

impl EncodedExample {
    /// Number of predicted positions (content tokens plus the end token).
    pub fn num_targets(&self) -> usize {
        self.token_ids.len().saturating_sub(1)
    }
}

/// Maps parsed lines to encoded examples against a fixed vocabulary and
/// registry. Unknown tokens and values fall back to their UNK ids.
pub struct Encoder<'a> {
    pub vocab: &'a Vocabulary,
    pub registry: &'a ContextValueRegistry,
    pub max_len: Option<usize>,
}

impl<'a> Encoder<'a> {
    pub fn new(
        vocab: &'a Vocabulary,
        registry: &'a ContextValueRegistry,
        max_len: Option<usize>,
    ) -> Self {
        Self {
            vocab,
            registry,
            max_len,
        }
    }

    pub fn encode_line(&self, line: &RawLine) -> Result<Vec<EncodedExample>> {
        if line.contexts.len() != self.registry.len() {
            return Err(Error::FieldCount {
                line: line.line,
                expected: self.registry.len(),
                found: line.contexts.len(),
            });
        }
        let context_ids: Vec<u32> = self
            .registry
            .variables
            .iter()
            .zip(&line.contexts)
            .map(|(var, v)| var.id(v))
            .collect();
        let ids: Vec<u32> = line.tokens.iter().map(|t| self.vocab.id(t)).collect();
        let max_len = self.max_len.unwrap_or(usize::MAX).max(1);
        Ok(split_long_utterances(&ids, max_len)
            .into_iter()
            .map(|token_ids| EncodedExample {
                context_ids: context_ids.clone(),
                token_ids,
            })
            .collect())
    }

    /// Encoded examples in corpus order.
    pub fn encode_stream<'c>(
        &'c self,
        corpus: &'c RawCorpus,
    ) -> impl Iterator<Item = Result<EncodedExample>> + 'c {
        corpus.lines.iter().flat_map(move |line| match self.encode_line(line) {
            Ok(v) => v.into_iter().map(Ok).collect::<Vec<_>>(),
            Err(e) => vec![Err(e)],
        })
    }

    pub fn encode_all(&self, corpus: &RawCorpus) -> Result<Vec<EncodedExample>> {
        self.encode_stream(corpus).collect()
    }
}

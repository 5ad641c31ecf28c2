use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::{Document, Payload, TokenSequence};
use crate::error::{Error, Result};

/// On-disk tokenizer declaration. BPE paths are resolved relative to the
/// directory holding the spec file.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TokenizerSpec {
    Byte,
    Whitespace { vocab_size: u32 },
    Bpe { vocab: PathBuf, merges: PathBuf },
}

impl TokenizerSpec {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut spec: TokenizerSpec = serde_json::from_str(&text)
            .map_err(|e| Error::Tokenizer(format!("{}: {e}", path.display())))?;
        if let TokenizerSpec::Bpe { vocab, merges } = &mut spec {
            let base = path.parent().unwrap_or(Path::new("."));
            *vocab = base.join(&*vocab);
            *merges = base.join(&*merges);
        }
        Ok(spec)
    }

    pub fn build(&self) -> Result<Tokenizer> {
        match self {
            TokenizerSpec::Byte => Ok(Tokenizer::Byte),
            TokenizerSpec::Whitespace { vocab_size } => Ok(Tokenizer::Whitespace {
                vocab_size: *vocab_size,
            }),
            TokenizerSpec::Bpe { vocab, merges } => {
                Ok(Tokenizer::Bpe(BpeTokenizer::from_files(vocab, merges)?))
            }
        }
    }
}

#[derive(Debug, Clone)]
pub enum Tokenizer {
    /// Identity over UTF-8 bytes, vocabulary 256.
    Byte,
    /// Whitespace-separated decimal token IDs. Used by tests and for
    /// pre-tokenized plain-text dumps.
    Whitespace { vocab_size: u32 },
    Bpe(BpeTokenizer),
}

impl Tokenizer {
    pub fn vocab_size(&self) -> u32 {
        match self {
            Tokenizer::Byte => 256,
            Tokenizer::Whitespace { vocab_size } => *vocab_size,
            Tokenizer::Bpe(bpe) => bpe.vocab_size(),
        }
    }

    pub fn tokenize(&self, document: &Document) -> Result<TokenSequence> {
        let vocab = self.vocab_size();
        let token_ids = match &document.payload {
            Payload::Tokens(ids) => ids.clone(),
            Payload::Text(text) => match self {
                Tokenizer::Byte => text.bytes().map(u32::from).collect(),
                Tokenizer::Whitespace { .. } => text
                    .split_whitespace()
                    .map(|t| {
                        t.parse::<u32>().map_err(|_| {
                            Error::Tokenizer(format!(
                                "{}: {t:?} is not a token id",
                                document.doc_id
                            ))
                        })
                    })
                    .collect::<Result<_>>()?,
                Tokenizer::Bpe(bpe) => bpe.encode(text)?,
            },
        };
        if let Some(&bad) = token_ids.iter().find(|&&id| id >= vocab) {
            return Err(Error::Tokenizer(format!(
                "{}: token id {bad} overflows vocabulary size {vocab}",
                document.doc_id
            )));
        }
        Ok(TokenSequence {
            doc_id: document.doc_id.clone(),
            token_ids,
        })
    }
}

/// Minimal merge-rank BPE over whitespace-delimited words.
///
/// `vocab` maps symbol strings to IDs; `merges` lists one `left right` pair per
/// line in priority order. Symbols missing from the vocabulary map to `<unk>`
/// when the vocabulary defines it, and are an error otherwise.
#[derive(Debug, Clone)]
pub struct BpeTokenizer {
    vocab: HashMap<String, u32>,
    ranks: HashMap<(String, String), usize>,
    unk: Option<u32>,
    vocab_size: u32,
}

impl BpeTokenizer {
    pub fn new(vocab: HashMap<String, u32>, merges: Vec<(String, String)>) -> Self {
        let unk = vocab.get("<unk>").copied();
        let vocab_size = vocab.values().max().map_or(0, |m| m + 1);
        let ranks = merges
            .into_iter()
            .enumerate()
            .map(|(rank, pair)| (pair, rank))
            .collect();
        Self {
            vocab,
            ranks,
            unk,
            vocab_size,
        }
    }

    pub fn from_files(vocab: &Path, merges: &Path) -> Result<Self> {
        let vocab_text = fs::read_to_string(vocab).map_err(|e| Error::io(vocab, e))?;
        let vocab_map: HashMap<String, u32> = serde_json::from_str(&vocab_text)
            .map_err(|e| Error::Tokenizer(format!("{}: {e}", vocab.display())))?;
        let merges_text = fs::read_to_string(merges).map_err(|e| Error::io(merges, e))?;
        let mut pairs = Vec::new();
        for (i, line) in merges_text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with("#version") {
                continue;
            }
            let mut parts = line.split_whitespace();
            match (parts.next(), parts.next(), parts.next()) {
                (Some(a), Some(b), None) => pairs.push((a.to_string(), b.to_string())),
                _ => {
                    return Err(Error::Tokenizer(format!(
                        "{}:{}: expected two symbols",
                        merges.display(),
                        i + 1
                    )))
                }
            }
        }
        Ok(Self::new(vocab_map, pairs))
    }

    pub fn vocab_size(&self) -> u32 {
        self.vocab_size
    }

    pub fn encode(&self, text: &str) -> Result<Vec<u32>> {
        let mut ids = Vec::new();
        for word in text.split_whitespace() {
            for symbol in self.merge_word(word) {
                match self.vocab.get(&symbol).copied().or(self.unk) {
                    Some(id) => ids.push(id),
                    None => {
                        return Err(Error::Tokenizer(format!(
                            "symbol {symbol:?} not in vocabulary and no <unk> token"
                        )))
                    }
                }
            }
        }
        Ok(ids)
    }

    fn merge_word(&self, word: &str) -> Vec<String> {
        let mut symbols: Vec<String> = word.chars().map(String::from).collect();
        loop {
            // Lowest rank wins; leftmost on equal rank.
            let best = symbols
                .windows(2)
                .enumerate()
                .filter_map(|(i, w)| {
                    self.ranks
                        .get(&(w[0].clone(), w[1].clone()))
                        .map(|&rank| (rank, i))
                })
                .min();
            let Some((_, i)) = best else { break };
            let right = symbols.remove(i + 1);
            symbols[i].push_str(&right);
        }
        symbols
    }
}

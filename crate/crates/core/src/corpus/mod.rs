//! Document ingestion, tokenization and the fixed-length chunk store.

mod chunk_store;
mod ingest;
mod tokenizer;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use chunk_store::{
    read_chunks, write_chunks, ChunkRef, ChunkStoreReader, ChunkStoreWriter, HEADER_LEN, MAGIC,
    MAX_DOC_ID_LEN, METADATA_LEN, TOKEN_WIDTH, VERSION,
};
pub use ingest::{ingest_documents, DocumentStream, InputFormat};
pub use tokenizer::{BpeTokenizer, Tokenizer, TokenizerSpec};

use crate::error::Error;

/// Source category of a document. Selection budgets and z-score statistics are
/// kept per category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Arxiv,
    Book,
    Code,
    Other,
}

impl Category {
    pub const ALL: [Category; 4] = [
        Category::Arxiv,
        Category::Book,
        Category::Code,
        Category::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Arxiv => "arxiv",
            Category::Book => "book",
            Category::Code => "code",
            Category::Other => "other",
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Category::Arxiv => 0,
            Category::Book => 1,
            Category::Code => 2,
            Category::Other => 3,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        Category::ALL.get(code as usize).copied()
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "arxiv" => Ok(Category::Arxiv),
            "book" => Ok(Category::Book),
            "code" => Ok(Category::Code),
            "other" => Ok(Category::Other),
            _ => Err(Error::Config(format!(
                "unknown category {s:?} (expected arxiv, book, code or other)"
            ))),
        }
    }
}

/// Document body: raw text, or token IDs produced by an external tokenizer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Payload {
    Text(String),
    Tokens(Vec<u32>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub doc_id: String,
    pub category: Category,
    pub payload: Payload,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub doc_id: String,
    pub token_ids: Vec<u32>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }
}

/// One window of exactly `L` tokens cut from a source document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenChunk {
    pub doc_id: String,
    pub category: Category,
    /// Position of this window in the sampler's emission order.
    pub chunk_index: u32,
    /// Token offset of the window inside the source sequence.
    pub window_start: u64,
    pub token_ids: Vec<u32>,
}

impl TokenChunk {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }
}

//! Binary container for fixed-length token chunks.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! header   32 bytes   magic "LATNCHNK" | version u32 | window u32 | token width u32
//!                     | reserved u32 | chunk count u64
//! record   256 + 4·L  category u8 | 3 reserved | chunk_index u32 | window_start u64
//!                     | doc_id length u16 | doc_id bytes, zero padded to 256
//!                     | L token ids (u32)
//! ```
//!
//! Records have a fixed size, so chunk `i` lives at
//! `HEADER_LEN + i · record_len` and can be read without scanning.

use std::fs::File;
use std::io::{BufWriter, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use super::{Category, TokenChunk};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 8] = *b"LATNCHNK";
pub const VERSION: u32 = 1;
pub const TOKEN_WIDTH: u32 = 4;
pub const HEADER_LEN: usize = 32;
pub const METADATA_LEN: usize = 256;
const DOC_ID_OFFSET: usize = 18;
pub const MAX_DOC_ID_LEN: usize = METADATA_LEN - DOC_ID_OFFSET;

fn record_len(window: usize) -> usize {
    METADATA_LEN + window * TOKEN_WIDTH as usize
}

fn store_err(path: &Path, message: impl Into<String>) -> Error {
    Error::ChunkStore {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Single-writer sink. The chunk count in the header is patched by
/// [`ChunkStoreWriter::finish`]; a store that was never finished reads back as
/// a length mismatch.
pub struct ChunkStoreWriter {
    path: PathBuf,
    out: BufWriter<File>,
    window: usize,
    count: u64,
    record: Vec<u8>,
}

impl ChunkStoreWriter {
    pub fn create(path: impl AsRef<Path>, window: usize) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        if window == 0 || window > u32::MAX as usize {
            return Err(store_err(&path, format!("invalid window length {window}")));
        }
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut writer = Self {
            out: BufWriter::new(file),
            path,
            window,
            count: 0,
            record: Vec::with_capacity(record_len(window)),
        };
        let header = writer.header();
        writer
            .out
            .write_all(&header)
            .map_err(|e| Error::io(&writer.path, e))?;
        Ok(writer)
    }

    fn header(&self) -> [u8; HEADER_LEN] {
        let mut h = [0u8; HEADER_LEN];
        h[0..8].copy_from_slice(&MAGIC);
        h[8..12].copy_from_slice(&VERSION.to_le_bytes());
        h[12..16].copy_from_slice(&(self.window as u32).to_le_bytes());
        h[16..20].copy_from_slice(&TOKEN_WIDTH.to_le_bytes());
        h[24..32].copy_from_slice(&self.count.to_le_bytes());
        h
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn push(&mut self, chunk: &TokenChunk) -> Result<()> {
        if chunk.token_ids.len() != self.window {
            return Err(store_err(
                &self.path,
                format!(
                    "chunk {}#{} has {} tokens, store window is {}",
                    chunk.doc_id,
                    chunk.chunk_index,
                    chunk.token_ids.len(),
                    self.window
                ),
            ));
        }
        let id = chunk.doc_id.as_bytes();
        if id.len() > MAX_DOC_ID_LEN {
            return Err(store_err(
                &self.path,
                format!(
                    "doc_id of {} bytes exceeds the {MAX_DOC_ID_LEN}-byte limit",
                    id.len()
                ),
            ));
        }
        let rec = &mut self.record;
        rec.clear();
        rec.push(chunk.category.code());
        rec.extend_from_slice(&[0; 3]);
        rec.extend_from_slice(&chunk.chunk_index.to_le_bytes());
        rec.extend_from_slice(&chunk.window_start.to_le_bytes());
        rec.extend_from_slice(&(id.len() as u16).to_le_bytes());
        rec.extend_from_slice(id);
        rec.resize(METADATA_LEN, 0);
        for &t in &chunk.token_ids {
            rec.extend_from_slice(&t.to_le_bytes());
        }
        self.out
            .write_all(rec)
            .map_err(|e| Error::io(&self.path, e))?;
        self.count += 1;
        Ok(())
    }

    /// Patches the chunk count into the header and flushes. Returns the count.
    pub fn finish(mut self) -> Result<u64> {
        let header = self.header();
        let path = self.path.clone();
        let io = |e| Error::io(&path, e);
        self.out.flush().map_err(io)?;
        let file = self.out.get_mut();
        file.seek(SeekFrom::Start(0)).map_err(io)?;
        file.write_all(&header).map_err(io)?;
        file.sync_all().map_err(io)?;
        Ok(self.count)
    }
}

/// Read-only view over a chunk store. Reads are positional, so one reader can
/// be shared across threads.
/// Chunk metadata as stored, without the token payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkRef {
    pub doc_id: String,
    pub category: Category,
    pub chunk_index: u32,
    pub window_start: u64,
}

#[derive(Debug)]
pub struct ChunkStoreReader {
    path: PathBuf,
    file: File,
    window: usize,
    count: u64,
}

impl ChunkStoreReader {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        Self::open_inner(path.as_ref(), None)
    }

    /// Opens a store and fails if its window length differs from `window`.
    pub fn open_expecting(path: impl AsRef<Path>, window: usize) -> Result<Self> {
        Self::open_inner(path.as_ref(), Some(window))
    }

    fn open_inner(path: &Path, expected_window: Option<usize>) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let file_len = file.metadata().map_err(|e| Error::io(path, e))?.len();
        let mut header = [0u8; HEADER_LEN];
        if file_len < HEADER_LEN as u64 {
            return Err(store_err(
                path,
                format!("truncated header: expected {HEADER_LEN} bytes, found {file_len}"),
            ));
        }
        read_exact_at(&file, &mut header, 0).map_err(|e| Error::io(path, e))?;
        if header[0..8] != MAGIC {
            return Err(store_err(path, "not a chunk store (bad magic)"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(header[o..o + 4].try_into().unwrap());
        let version = u32_at(8);
        if version != VERSION {
            return Err(store_err(
                path,
                format!("unsupported version: expected {VERSION}, found {version}"),
            ));
        }
        let window = u32_at(12) as usize;
        let width = u32_at(16);
        if width != TOKEN_WIDTH {
            return Err(store_err(
                path,
                format!("token width mismatch: expected {TOKEN_WIDTH}, found {width}"),
            ));
        }
        if let Some(expected) = expected_window {
            if window != expected {
                return Err(store_err(
                    path,
                    format!("window length mismatch: expected {expected}, found {window}"),
                ));
            }
        }
        if window == 0 {
            return Err(store_err(path, "window length 0 in header"));
        }
        let count = u64::from_le_bytes(header[24..32].try_into().unwrap());
        let expected_len = (record_len(window) as u64)
            .checked_mul(count)
            .and_then(|n| n.checked_add(HEADER_LEN as u64));
        if expected_len != Some(file_len) {
            let expected = expected_len.map_or("overflow".to_string(), |n| n.to_string());
            return Err(store_err(
                path,
                format!(
                    "length mismatch: header declares {count} chunks of window {window}, \
                     expected {expected} bytes, found {file_len} bytes"
                ),
            ));
        }
        Ok(Self {
            path: path.to_path_buf(),
            file,
            window,
            count,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn len(&self) -> usize {
        self.count as usize
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    fn check_index(&self, index: usize) -> Result<()> {
        if index >= self.len() {
            return Err(store_err(
                &self.path,
                format!("chunk index {index} out of range (store holds {})", self.count),
            ));
        }
        Ok(())
    }

    fn decode_metadata(&self, index: usize, buf: &[u8]) -> Result<ChunkRef> {
        let category = Category::from_code(buf[0]).ok_or_else(|| {
            store_err(&self.path, format!("record {index}: bad category code {}", buf[0]))
        })?;
        let chunk_index = u32::from_le_bytes(buf[4..8].try_into().unwrap());
        let window_start = u64::from_le_bytes(buf[8..16].try_into().unwrap());
        let id_len = u16::from_le_bytes(buf[16..18].try_into().unwrap()) as usize;
        if id_len > MAX_DOC_ID_LEN {
            return Err(store_err(
                &self.path,
                format!("record {index}: doc_id length {id_len} exceeds {MAX_DOC_ID_LEN}"),
            ));
        }
        let doc_id = std::str::from_utf8(&buf[DOC_ID_OFFSET..DOC_ID_OFFSET + id_len])
            .map_err(|_| store_err(&self.path, format!("record {index}: doc_id not UTF-8")))?
            .to_string();
        Ok(ChunkRef {
            doc_id,
            category,
            chunk_index,
            window_start,
        })
    }

    fn offset(&self, index: usize) -> u64 {
        (HEADER_LEN + index * record_len(self.window)) as u64
    }

    /// Metadata of chunk `index` without its tokens.
    pub fn get_ref(&self, index: usize) -> Result<ChunkRef> {
        self.check_index(index)?;
        let mut buf = vec![0u8; METADATA_LEN];
        read_exact_at(&self.file, &mut buf, self.offset(index)).map_err(|e| Error::io(&self.path, e))?;
        self.decode_metadata(index, &buf)
    }

    pub fn get(&self, index: usize) -> Result<TokenChunk> {
        self.check_index(index)?;
        let mut buf = vec![0u8; record_len(self.window)];
        read_exact_at(&self.file, &mut buf, self.offset(index)).map_err(|e| Error::io(&self.path, e))?;
        let meta = self.decode_metadata(index, &buf)?;
        let token_ids = buf[METADATA_LEN..]
            .chunks_exact(4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Ok(TokenChunk {
            doc_id: meta.doc_id,
            category: meta.category,
            chunk_index: meta.chunk_index,
            window_start: meta.window_start,
            token_ids,
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = Result<TokenChunk>> + '_ {
        (0..self.len()).map(move |i| self.get(i))
    }
}

#[cfg(unix)]
fn read_exact_at(file: &File, buf: &mut [u8], offset: u64) -> std::io::Result<()> {
    use std::os::unix::fs::FileExt;
    file.read_exact_at(buf, offset)
}

#[cfg(windows)]
fn read_exact_at(file: &File, mut buf: &mut [u8], mut offset: u64) -> std::io::Result<()> {
    use std::os::windows::fs::FileExt;
    while !buf.is_empty() {
        match file.seek_read(buf, offset)? {
            0 => return Err(std::io::ErrorKind::UnexpectedEof.into()),
            n => {
                buf = &mut buf[n..];
                offset += n as u64;
            }
        }
    }
    Ok(())
}

/// Writes all chunks to a new store with window `window`.
pub fn write_chunks<'a>(
    path: impl AsRef<Path>,
    window: usize,
    chunks: impl IntoIterator<Item = &'a TokenChunk>,
) -> Result<u64> {
    let mut writer = ChunkStoreWriter::create(path, window)?;
    for chunk in chunks {
        writer.push(chunk)?;
    }
    writer.finish()
}

pub fn read_chunks(path: impl AsRef<Path>) -> Result<Vec<TokenChunk>> {
    let reader = ChunkStoreReader::open(path)?;
    reader.iter().collect()
}

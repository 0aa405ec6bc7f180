//! The `.emb` binary layout. All integers and floats are little-endian.
//!
//! ```text
//! magic    4 bytes   "GLEM"
//! version  u32       FORMAT_VERSION
//! rows     u64
//! dim      u32
//! flags    u8        bit 0: rows are unit-normalized
//! ids      rows × (u32 byte length, UTF-8 bytes)
//! values   rows × dim × f32, row-major
//! ```
//!
//! Values are computed in `f64` and stored as `f32`.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{EmbeddingSet, StoreError};
use crate::matrix::Matrix;

pub const MAGIC: [u8; 4] = *b"GLEM";
pub const FORMAT_VERSION: u32 = 1;

const FLAG_NORMALIZED: u8 = 0b1;

pub fn encode_embeddings<W: Write>(set: &EmbeddingSet, mut w: W) -> io::Result<()> {
    w.write_all(&MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(set.len() as u64).to_le_bytes())?;
    let dim = u32::try_from(set.dim()).map_err(|_| io::Error::other("dimension exceeds u32"))?;
    w.write_all(&dim.to_le_bytes())?;
    w.write_all(&[if set.is_normalized() { FLAG_NORMALIZED } else { 0 }])?;
    for id in set.ids() {
        let len = u32::try_from(id.len()).map_err(|_| io::Error::other("id longer than u32::MAX bytes"))?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(id.as_bytes())?;
    }
    for &v in set.matrix().as_slice() {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    w.flush()
}

fn read_array<const N: usize, R: Read>(r: &mut R, what: &'static str) -> Result<[u8; N], StoreError> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => StoreError::TruncatedFile(what),
        _ => StoreError::Io(e),
    })?;
    Ok(buf)
}

pub fn decode_embeddings<R: Read>(mut r: R) -> Result<EmbeddingSet, StoreError> {
    let magic = read_array::<4, _>(&mut r, "magic")?;
    if magic != MAGIC {
        return Err(StoreError::BadMagic(magic));
    }
    let version = u32::from_le_bytes(read_array(&mut r, "version")?);
    if version != FORMAT_VERSION {
        return Err(StoreError::VersionMismatch { found: version, expected: FORMAT_VERSION });
    }
    let rows = u64::from_le_bytes(read_array(&mut r, "row count")?) as usize;
    let dim = u32::from_le_bytes(read_array(&mut r, "dimension")?) as usize;
    let [flags] = read_array::<1, _>(&mut r, "flags")?;

    // Capacities are bounded so a corrupt header cannot trigger a huge allocation.
    let mut ids = Vec::with_capacity(rows.min(1 << 20));
    for i in 0..rows {
        let len = u32::from_le_bytes(read_array(&mut r, "id length")?) as usize;
        let mut bytes = Vec::with_capacity(len.min(1 << 16));
        (&mut r).take(len as u64).read_to_end(&mut bytes)?;
        if bytes.len() != len {
            return Err(StoreError::TruncatedFile("id bytes"));
        }
        ids.push(String::from_utf8(bytes).map_err(|_| StoreError::InvalidUtf8(i))?);
    }

    let mut data = Vec::with_capacity((rows * dim).min(1 << 24));
    for row in 0..rows {
        for _ in 0..dim {
            let v = f32::from_le_bytes(read_array(&mut r, "values")?);
            if !v.is_finite() {
                return Err(StoreError::NonFinite { row });
            }
            data.push(v as f64);
        }
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(StoreError::TrailingBytes(rest.len()));
    }

    let matrix = Matrix::new(rows, dim, data).expect("shape and finiteness checked while decoding");
    if flags & FLAG_NORMALIZED != 0 {
        EmbeddingSet::new_normalized(ids, matrix)
    } else {
        EmbeddingSet::new(ids, matrix)
    }
}

pub fn write_embeddings(set: &EmbeddingSet, path: impl AsRef<Path>) -> Result<(), StoreError> {
    let file = File::create(path)?;
    encode_embeddings(set, BufWriter::new(file))?;
    Ok(())
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingSet, StoreError> {
    decode_embeddings(BufReader::new(File::open(path)?))
}

//! Embedders, cosine similarity and the binary vector file.
//!
//! Vector file layout (all integers little-endian):
//!
//! ```text
//! header  : b"MALV" | version u32 | dimension u32 | count u64 | backend_id (u32 len + UTF-8)
//! record  : chunk_id (u32 len + UTF-8) | dimension x f32
//! ```

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::backend::{BackendError, HttpClient};

pub const VECTOR_MAGIC: &[u8; 4] = b"MALV";
pub const VECTOR_FORMAT_VERSION: u32 = 1;

/// Turns texts into dense vectors of a fixed dimension.
pub trait Embedder: Send + Sync {
    fn backend_id(&self) -> &str;
    fn dimension(&self) -> usize;
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, BackendError>;
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Seeded 64-bit FNV-1a. Stable across runs and platforms.
pub fn stable_hash(seed: u64, bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET ^ seed;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Hashed bag of lowercased whitespace tokens, L2-normalized.
///
/// Gives lexical similarity without a model, and the same vector for the same
/// text everywhere. Text with no tokens maps to the zero vector.
#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    dimension: usize,
    seed: u64,
    backend_id: String,
}

impl HashingEmbedder {
    pub const DEFAULT_DIMENSION: usize = 256;
    pub const DEFAULT_SEED: u64 = 0x6d61_6c72_6167_0001;

    pub fn new(dimension: usize, seed: u64) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        HashingEmbedder {
            dimension,
            seed,
            backend_id: format!("hashing-bow:{dimension}:{seed:016x}"),
        }
    }

    pub fn embed_one(&self, text: &str) -> Vec<f32> {
        let mut counts = vec![0f64; self.dimension];
        for token in text.split_whitespace() {
            let token = token.to_lowercase();
            let bucket = stable_hash(self.seed, token.as_bytes()) % self.dimension as u64;
            counts[bucket as usize] += 1.0;
        }
        let norm = counts.iter().map(|c| c * c).sum::<f64>().sqrt();
        if norm == 0.0 {
            return vec![0.0; self.dimension];
        }
        counts.iter().map(|c| (c / norm) as f32).collect()
    }
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self::new(Self::DEFAULT_DIMENSION, Self::DEFAULT_SEED)
    }
}

impl Embedder for HashingEmbedder {
    fn backend_id(&self) -> &str {
        &self.backend_id
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, BackendError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

/// Embedder backed by an embeddings endpoint.
#[derive(Debug, Clone)]
pub struct HttpEmbedder {
    client: HttpClient,
    dimension: usize,
    backend_id: String,
}

impl HttpEmbedder {
    pub fn new(client: HttpClient, dimension: usize) -> Self {
        let backend_id = format!("http-embed:{}", client.settings().model);
        HttpEmbedder {
            client,
            dimension,
            backend_id,
        }
    }
}

impl Embedder for HttpEmbedder {
    fn backend_id(&self) -> &str {
        &self.backend_id
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, BackendError> {
        self.client.embed(texts)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimilarityError {
    #[error("vectors differ in dimension ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("zero-norm vector")]
    ZeroNorm,
}

pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum()
}

pub fn l2_norm(v: &[f32]) -> f64 {
    dot(v, v).sqrt()
}

/// `q·c / (‖q‖‖c‖)`, clamped to `[-1, 1]`.
pub fn cosine_similarity(q: &[f32], c: &[f32]) -> Result<f64, SimilarityError> {
    if q.len() != c.len() {
        return Err(SimilarityError::DimensionMismatch(q.len(), c.len()));
    }
    let (nq, nc) = (l2_norm(q), l2_norm(c));
    if nq == 0.0 || nc == 0.0 {
        return Err(SimilarityError::ZeroNorm);
    }
    Ok((dot(q, c) / (nq * nc)).clamp(-1.0, 1.0))
}

/// Scales `v` to unit length. Returns `None` for a zero or non-finite vector.
pub fn normalize(v: &[f32]) -> Option<Vec<f32>> {
    let n = l2_norm(v);
    if n == 0.0 || !n.is_finite() {
        return None;
    }
    Some(v.iter().map(|&x| (f64::from(x) / n) as f32).collect())
}

/// Unit-normalized vectors stored row-major, one per chunk id.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorStore {
    pub backend_id: String,
    pub dimension: usize,
    ids: Vec<String>,
    data: Vec<f32>,
}

impl VectorStore {
    pub fn new(backend_id: impl Into<String>, dimension: usize) -> Self {
        VectorStore {
            backend_id: backend_id.into(),
            dimension,
            ids: Vec::new(),
            data: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    /// Appends an already-normalized vector.
    pub fn push(&mut self, chunk_id: String, vector: &[f32]) {
        assert_eq!(vector.len(), self.dimension, "vector dimension mismatch");
        self.ids.push(chunk_id);
        self.data.extend_from_slice(vector);
    }

    pub fn vector(&self, i: usize) -> &[f32] {
        &self.data[i * self.dimension..(i + 1) * self.dimension]
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(VECTOR_MAGIC)?;
        w.write_all(&VECTOR_FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.dimension as u32).to_le_bytes())?;
        w.write_all(&(self.ids.len() as u64).to_le_bytes())?;
        write_str(&mut w, &self.backend_id)?;
        for (i, id) in self.ids.iter().enumerate() {
            write_str(&mut w, id)?;
            for x in self.vector(i) {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> io::Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != VECTOR_MAGIC {
            return Err(invalid("not a MALV vector file"));
        }
        let version = read_u32(&mut r)?;
        if version != VECTOR_FORMAT_VERSION {
            return Err(invalid(&format!("unsupported vector file version {version}")));
        }
        let dimension = read_u32(&mut r)? as usize;
        let mut count = [0u8; 8];
        r.read_exact(&mut count)?;
        let count = u64::from_le_bytes(count) as usize;
        let backend_id = read_str(&mut r)?;
        let mut store = VectorStore::new(backend_id, dimension);
        let mut row = vec![0f32; dimension];
        let mut buf = [0u8; 4];
        for _ in 0..count {
            let id = read_str(&mut r)?;
            for x in row.iter_mut() {
                r.read_exact(&mut buf)?;
                *x = f32::from_le_bytes(buf);
            }
            store.push(id, &row);
        }
        Ok(store)
    }
}

fn invalid(msg: &str) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.to_string())
}

fn write_str<W: Write>(w: &mut W, s: &str) -> io::Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_str<R: Read>(r: &mut R) -> io::Result<String> {
    let len = read_u32(r)? as usize;
    let mut bytes = vec![0u8; len];
    r.read_exact(&mut bytes)?;
    String::from_utf8(bytes).map_err(|_| invalid("identifier is not UTF-8"))
}

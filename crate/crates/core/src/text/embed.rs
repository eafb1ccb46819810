//! Deterministic hashing embedders standing in for pretrained encoders.

use crate::error::{Error, Result};

/// Maps text to a fixed-length vector. Implementations must be pure.
pub trait EmbeddingProvider: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Vec<f64>;
}

pub const DEFAULT_DIM: usize = 256;
pub const WORD_PROVIDER: &str = "hash-word";
pub const CHAR_PROVIDER: &str = "hash-char3";

/// 64-bit FNV-1a; stable across platforms and releases.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn hashed(tokens: impl Iterator<Item = String>, dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    for t in tokens {
        let h = fnv1a(t.as_bytes());
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        v[(h % dim as u64) as usize] += sign;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

/// Lowercased word tokens; `#` and `@` stay attached to the word they prefix.
pub fn word_tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !(c.is_alphanumeric() || c == '#' || c == '@' || c == '_'))
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

/// Signed feature hashing of word unigrams, L2-normalised.
#[derive(Debug, Clone)]
pub struct HashWordEmbedder {
    dim: usize,
}

impl HashWordEmbedder {
    pub fn new(dim: usize) -> Self {
        HashWordEmbedder { dim }
    }
}

impl EmbeddingProvider for HashWordEmbedder {
    fn name(&self) -> &str {
        WORD_PROVIDER
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Vec<f64> {
        hashed(word_tokens(text), self.dim)
    }
}

/// Signed feature hashing of lowercase character trigrams, L2-normalised.
#[derive(Debug, Clone)]
pub struct HashCharEmbedder {
    dim: usize,
}

impl HashCharEmbedder {
    pub fn new(dim: usize) -> Self {
        HashCharEmbedder { dim }
    }
}

impl EmbeddingProvider for HashCharEmbedder {
    fn name(&self) -> &str {
        CHAR_PROVIDER
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Vec<f64> {
        let chars: Vec<char> = text.to_lowercase().chars().collect();
        if chars.is_empty() {
            return vec![0.0; self.dim];
        }
        let mut padded = Vec::with_capacity(chars.len() + 2);
        padded.push(' ');
        padded.extend(chars);
        padded.push(' ');
        let grams = padded.windows(3).map(|w| w.iter().collect::<String>()).collect::<Vec<_>>();
        hashed(grams.into_iter(), self.dim)
    }
}

/// Instantiates a registered provider by name.
pub fn provider_by_name(name: &str, dim: usize) -> Result<Box<dyn EmbeddingProvider>> {
    if dim == 0 {
        return Err(Error::Config("embedding dim must be positive".into()));
    }
    match name {
        WORD_PROVIDER => Ok(Box::new(HashWordEmbedder::new(dim))),
        CHAR_PROVIDER => Ok(Box::new(HashCharEmbedder::new(dim))),
        other => Err(Error::Bundle(format!("embedding provider `{other}` is not registered"))),
    }
}

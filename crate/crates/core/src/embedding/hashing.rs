use xxhash_rust::xxh3::xxh3_64_with_seed;

use super::{EmbeddingError, EmbeddingVector, Encoder, Result};

pub const MIN_HASH_DIMENSION: usize = 8;

/// Feature-hashing encoder: lowercased word unigrams plus character trigrams
/// of each `<word>`, hashed into `dimension` signed buckets and L2-normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashEncoder {
    dimension: usize,
    seed: u64,
}

impl HashEncoder {
    pub fn new(dimension: usize, seed: u64) -> Result<Self> {
        if dimension < MIN_HASH_DIMENSION {
            return Err(EmbeddingError::Domain(format!(
                "hash encoder needs at least {MIN_HASH_DIMENSION} dimensions, got {dimension}"
            )));
        }
        Ok(HashEncoder { dimension, seed })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

impl Encoder for HashEncoder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn name(&self) -> String {
        format!("hash-{}-{}", self.dimension, self.seed)
    }

    fn encode(&self, text: &str) -> Result<EmbeddingVector> {
        hash_encode_seeded(text, self.dimension, self.seed)
    }
}

/// [`HashEncoder`] with seed 0.
pub fn hash_encode(text: &str, dimension: usize) -> Result<EmbeddingVector> {
    HashEncoder::new(dimension, 0)?.encode(text)
}

fn add_feature(acc: &mut [f64], feature: &[u8], seed: u64) {
    let h = xxh3_64_with_seed(feature, seed);
    let bucket = (h % acc.len() as u64) as usize;
    acc[bucket] += if h >> 63 == 0 { 1.0 } else { -1.0 };
}

fn hash_encode_seeded(text: &str, dimension: usize, seed: u64) -> Result<EmbeddingVector> {
    if dimension < MIN_HASH_DIMENSION {
        return Err(EmbeddingError::Domain(format!(
            "hash encoder needs at least {MIN_HASH_DIMENSION} dimensions"
        )));
    }
    let lowered = text.to_lowercase();
    let words: Vec<&str> = lowered
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .collect();
    if words.is_empty() {
        return Err(EmbeddingError::Domain(format!(
            "text {text:?} has no word features"
        )));
    }
    let mut acc = vec![0.0f64; dimension];
    let mut buf = Vec::with_capacity(64);
    for word in &words {
        // "w:" and "c:" prefixes keep the word and trigram spaces apart
        buf.clear();
        buf.extend_from_slice(b"w:");
        buf.extend_from_slice(word.as_bytes());
        add_feature(&mut acc, &buf, seed);

        let padded: Vec<char> = std::iter::once('<')
            .chain(word.chars())
            .chain(std::iter::once('>'))
            .collect();
        for tri in padded.windows(3) {
            buf.clear();
            buf.extend_from_slice(b"c:");
            let mut tmp = [0u8; 4];
            for c in tri {
                buf.extend_from_slice(c.encode_utf8(&mut tmp).as_bytes());
            }
            add_feature(&mut acc, &buf, seed);
        }
    }
    let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        // every feature cancelled out against another
        return Err(EmbeddingError::ZeroNorm);
    }
    EmbeddingVector::new(acc.into_iter().map(|v| v / norm).collect())
}

use std::collections::HashMap;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::{Arc, RwLock};

use xxhash_rust::xxh3::xxh3_64;

use super::{EmbeddingError, EmbeddingVector, Encoder, Result};

const CACHE_MAGIC: &[u8; 4] = b"OIVC";
const CACHE_VERSION: u32 = 1;

/// Text → vector memo with a compact little-endian file format.
///
/// Vectors are stored at single precision, so everything handed out by the
/// cache has already been rounded through `f32`; a cold cache and a reloaded
/// one therefore return identical values.
#[derive(Debug)]
pub struct VectorCache {
    dimension: usize,
    entries: RwLock<HashMap<String, EmbeddingVector>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CacheReport {
    pub requested: usize,
    pub new_encodes: usize,
}

impl VectorCache {
    pub fn new(dimension: usize) -> Self {
        VectorCache {
            dimension,
            entries: RwLock::new(HashMap::new()),
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, text: &str) -> Option<EmbeddingVector> {
        self.entries.read().unwrap().get(text).cloned()
    }

    pub fn contains(&self, text: &str) -> bool {
        self.entries.read().unwrap().contains_key(text)
    }

    /// Looks a text up, failing with [`EmbeddingError::Missing`].
    pub fn require(&self, text: &str) -> Result<EmbeddingVector> {
        self.get(text)
            .ok_or_else(|| EmbeddingError::Missing(text.to_string()))
    }

    pub fn insert(&self, text: &str, vector: &EmbeddingVector) -> Result<()> {
        if vector.dimension() != self.dimension {
            return Err(EmbeddingError::Cache(format!(
                "vector of dimension {} does not fit cache of dimension {}",
                vector.dimension(),
                self.dimension
            )));
        }
        self.entries
            .write()
            .unwrap()
            .insert(text.to_string(), vector.quantized());
        Ok(())
    }

    pub fn write_to<W: Write>(&self, out: W) -> Result<()> {
        let mut out = BufWriter::new(out);
        let entries = self.entries.read().unwrap();
        let mut texts: Vec<&String> = entries.keys().collect();
        texts.sort();
        out.write_all(CACHE_MAGIC)?;
        out.write_all(&CACHE_VERSION.to_le_bytes())?;
        out.write_all(&(self.dimension as u32).to_le_bytes())?;
        out.write_all(&(texts.len() as u64).to_le_bytes())?;
        for text in texts {
            out.write_all(&xxh3_64(text.as_bytes()).to_le_bytes())?;
            out.write_all(&(text.len() as u32).to_le_bytes())?;
            out.write_all(text.as_bytes())?;
            for v in entries[text].values() {
                out.write_all(&(*v as f32).to_le_bytes())?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(input: R) -> Result<Self> {
        let mut input = BufReader::new(input);
        let bad = |msg: String| EmbeddingError::Cache(msg);
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != CACHE_MAGIC {
            return Err(bad("bad magic bytes".into()));
        }
        let mut u32buf = [0u8; 4];
        input.read_exact(&mut u32buf)?;
        let version = u32::from_le_bytes(u32buf);
        if version != CACHE_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        input.read_exact(&mut u32buf)?;
        let dimension = u32::from_le_bytes(u32buf) as usize;
        let mut u64buf = [0u8; 8];
        input.read_exact(&mut u64buf)?;
        let count = u64::from_le_bytes(u64buf);
        let mut map = HashMap::new();
        let mut fbuf = [0u8; 4];
        for _ in 0..count {
            input.read_exact(&mut u64buf)?;
            let key = u64::from_le_bytes(u64buf);
            input.read_exact(&mut u32buf)?;
            let mut text = vec![0u8; u32::from_le_bytes(u32buf) as usize];
            input.read_exact(&mut text)?;
            let text = String::from_utf8(text).map_err(|e| bad(e.to_string()))?;
            if xxh3_64(text.as_bytes()) != key {
                return Err(bad(format!("hash key mismatch for {text:?}")));
            }
            let mut values = Vec::with_capacity(dimension);
            for _ in 0..dimension {
                input.read_exact(&mut fbuf)?;
                values.push(f32::from_le_bytes(fbuf) as f64);
            }
            map.insert(text, EmbeddingVector::new(values)?);
        }
        Ok(VectorCache {
            dimension,
            entries: RwLock::new(map),
        })
    }

    /// Writes through a temporary file in the same directory and renames it
    /// into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
        let mut tmp = tempfile::NamedTempFile::new_in(dir.unwrap_or(Path::new(".")))?;
        self.write_to(tmp.as_file_mut())?;
        tmp.persist(path).map_err(|e| EmbeddingError::Io(e.error))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(std::fs::File::open(path)?)
    }

    /// Loads `path` if it exists, otherwise starts empty. An existing file
    /// with a different dimension is an error.
    pub fn open_or_new(path: &Path, dimension: usize) -> Result<Self> {
        if path.exists() {
            let cache = Self::load(path)?;
            if cache.dimension != dimension {
                return Err(EmbeddingError::Cache(format!(
                    "{} holds {}-dimensional vectors, encoder produces {}",
                    path.display(),
                    cache.dimension,
                    dimension
                )));
            }
            Ok(cache)
        } else {
            Ok(Self::new(dimension))
        }
    }
}

/// Ensures every text has a cached vector, encoding each missing distinct
/// text exactly once.
pub fn cache_embeddings<E: Encoder + ?Sized>(
    texts: &[&str],
    encoder: &E,
    cache: &VectorCache,
) -> Result<CacheReport> {
    if encoder.dimension() != cache.dimension() {
        return Err(EmbeddingError::Cache(format!(
            "encoder dimension {} does not match cache dimension {}",
            encoder.dimension(),
            cache.dimension()
        )));
    }
    let mut missing: Vec<&str> = texts
        .iter()
        .copied()
        .filter(|t| !cache.contains(t))
        .collect();
    missing.sort_unstable();
    missing.dedup();
    let vectors = encoder.encode_batch(&missing)?;
    for (text, vector) in missing.iter().zip(&vectors) {
        cache.insert(text, vector)?;
    }
    Ok(CacheReport {
        requested: texts.len(),
        new_encodes: missing.len(),
    })
}

/// Serves externally computed vectors; unknown texts are an error.
#[derive(Debug)]
pub struct PrecomputedEncoder {
    name: String,
    cache: VectorCache,
}

impl PrecomputedEncoder {
    pub fn new(name: impl Into<String>, cache: VectorCache) -> Self {
        PrecomputedEncoder {
            name: name.into(),
            cache,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self::new(
            format!("precomputed:{}", path.display()),
            VectorCache::load(path)?,
        ))
    }
}

impl Encoder for PrecomputedEncoder {
    fn dimension(&self) -> usize {
        self.cache.dimension()
    }

    fn name(&self) -> String {
        self.name.clone()
    }

    fn encode(&self, text: &str) -> Result<EmbeddingVector> {
        self.cache.require(text)
    }
}

/// Read-through wrapper: texts are encoded once and served from `cache`
/// afterwards, always at the cache's single precision.
pub struct CachedEncoder {
    inner: Arc<dyn Encoder>,
    cache: Arc<VectorCache>,
}

impl CachedEncoder {
    pub fn new(inner: Arc<dyn Encoder>, cache: Arc<VectorCache>) -> Result<Self> {
        if inner.dimension() != cache.dimension() {
            return Err(EmbeddingError::Cache(format!(
                "encoder dimension {} does not match cache dimension {}",
                inner.dimension(),
                cache.dimension()
            )));
        }
        Ok(CachedEncoder { inner, cache })
    }

    pub fn cache(&self) -> &Arc<VectorCache> {
        &self.cache
    }
}

impl std::fmt::Debug for CachedEncoder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CachedEncoder")
            .field("inner", &self.inner.name())
            .field("cached", &self.cache.len())
            .finish()
    }
}

impl Encoder for CachedEncoder {
    fn dimension(&self) -> usize {
        self.inner.dimension()
    }

    fn name(&self) -> String {
        self.inner.name()
    }

    fn encode(&self, text: &str) -> Result<EmbeddingVector> {
        if let Some(v) = self.cache.get(text) {
            return Ok(v);
        }
        self.cache.insert(text, &self.inner.encode(text)?)?;
        self.cache.require(text)
    }

    fn encode_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        cache_embeddings(texts, self.inner.as_ref(), &self.cache)?;
        texts.iter().map(|t| self.cache.require(t)).collect()
    }
}

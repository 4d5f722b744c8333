use std::io::{Read, Write};
use std::sync::Arc;

use super::{EmbeddingError, EmbeddingVector, Encoder, Result};

const CHECKPOINT_MAGIC: &[u8; 4] = b"OIAD";
const CHECKPOINT_VERSION: u32 = 1;

/// Affine map `x ↦ W x + b`, W stored row-major (`n_out` rows of `n_in`).
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterWeights {
    pub n_in: usize,
    pub n_out: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub normalize_output: bool,
}

impl AdapterWeights {
    pub fn identity(n: usize, normalize_output: bool) -> Self {
        let mut weights = vec![0.0; n * n];
        for i in 0..n {
            weights[i * n + i] = 1.0;
        }
        AdapterWeights {
            n_in: n,
            n_out: n,
            weights,
            bias: vec![0.0; n],
            normalize_output,
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.n_out * self.n_in + self.n_out
    }

    /// `W x + b` without normalization.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n_in {
            return Err(EmbeddingError::Shape {
                expected: self.n_in,
                actual: x.len(),
            });
        }
        Ok(self
            .weights
            .chunks_exact(self.n_in)
            .zip(&self.bias)
            .map(|(row, b)| super::dot(row, x) + b)
            .collect())
    }

    pub fn weight_norm(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum::<f64>().sqrt()
    }

    pub fn write_checkpoint<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(CHECKPOINT_MAGIC)?;
        out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        out.write_all(&(self.n_in as u32).to_le_bytes())?;
        out.write_all(&(self.n_out as u32).to_le_bytes())?;
        out.write_all(&[u8::from(self.normalize_output)])?;
        for v in self.weights.iter().chain(&self.bias) {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Self> {
        let bad = |msg: &str| EmbeddingError::Cache(format!("adapter checkpoint: {msg}"));
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(bad("bad magic bytes"));
        }
        let mut word = [0u8; 4];
        input.read_exact(&mut word)?;
        if u32::from_le_bytes(word) != CHECKPOINT_VERSION {
            return Err(bad("unsupported version"));
        }
        input.read_exact(&mut word)?;
        let n_in = u32::from_le_bytes(word) as usize;
        input.read_exact(&mut word)?;
        let n_out = u32::from_le_bytes(word) as usize;
        let mut flag = [0u8; 1];
        input.read_exact(&mut flag)?;
        let normalize_output = match flag[0] {
            0 => false,
            1 => true,
            _ => return Err(bad("bad normalize flag")),
        };
        let mut read_f64s = |count: usize| -> Result<Vec<f64>> {
            let mut buf = [0u8; 8];
            (0..count)
                .map(|_| {
                    input.read_exact(&mut buf)?;
                    Ok(f64::from_le_bytes(buf))
                })
                .collect()
        };
        let weights = read_f64s(n_in * n_out)?;
        let bias = read_f64s(n_out)?;
        Ok(AdapterWeights {
            n_in,
            n_out,
            weights,
            bias,
            normalize_output,
        })
    }
}

/// A frozen base encoder followed by a trainable affine adapter.
#[derive(Clone)]
pub struct AdapterEncoder {
    base: Arc<dyn Encoder>,
    params: AdapterWeights,
}

impl AdapterEncoder {
    pub fn new(base: Arc<dyn Encoder>, params: AdapterWeights) -> Result<Self> {
        if base.dimension() != params.n_in {
            return Err(EmbeddingError::Shape {
                expected: params.n_in,
                actual: base.dimension(),
            });
        }
        Ok(AdapterEncoder { base, params })
    }

    pub fn base(&self) -> &Arc<dyn Encoder> {
        &self.base
    }

    pub fn params(&self) -> &AdapterWeights {
        &self.params
    }

    /// Applies the adapter to an already-computed base embedding.
    pub fn transform(&self, base: &EmbeddingVector) -> Result<EmbeddingVector> {
        let mut out = self.params.apply(base.values())?;
        if self.params.normalize_output {
            let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(EmbeddingError::ZeroNorm);
            }
            out.iter_mut().for_each(|v| *v /= norm);
        }
        EmbeddingVector::new(out)
    }
}

impl std::fmt::Debug for AdapterEncoder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AdapterEncoder")
            .field("base", &self.base.name())
            .field("n_in", &self.params.n_in)
            .field("n_out", &self.params.n_out)
            .finish()
    }
}

impl Encoder for AdapterEncoder {
    fn dimension(&self) -> usize {
        self.params.n_out
    }

    fn name(&self) -> String {
        format!("adapter({})", self.base.name())
    }

    fn encode(&self, text: &str) -> Result<EmbeddingVector> {
        self.transform(&self.base.encode(text)?)
    }
}

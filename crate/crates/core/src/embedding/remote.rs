use serde_json::{json, Value};

use super::{EmbeddingError, EmbeddingVector, Encoder, Result};
use crate::service::HttpEndpoint;

/// Client for an OpenAI-style `/embeddings` endpoint.
#[derive(Debug, Clone)]
pub struct RemoteEncoder {
    endpoint: HttpEndpoint,
    model: String,
    dimension: usize,
}

impl RemoteEncoder {
    pub fn new(endpoint: HttpEndpoint, model: impl Into<String>, dimension: usize) -> Self {
        RemoteEncoder {
            endpoint,
            model: model.into(),
            dimension,
        }
    }

    fn request(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        let body = json!({ "model": self.model, "input": texts });
        let reply = self
            .endpoint
            .post_json("embeddings", &body)
            .map_err(|e| EmbeddingError::Remote(e.to_string()))?;
        let data = reply
            .get("data")
            .and_then(Value::as_array)
            .ok_or_else(|| EmbeddingError::Remote("response lacks a data array".into()))?;
        let mut out: Vec<Option<EmbeddingVector>> = vec![None; texts.len()];
        for (pos, item) in data.iter().enumerate() {
            let index = item
                .get("index")
                .and_then(Value::as_u64)
                .map_or(pos, |i| i as usize);
            let values: Vec<f64> = item
                .get("embedding")
                .and_then(Value::as_array)
                .ok_or_else(|| EmbeddingError::Remote("item lacks an embedding".into()))?
                .iter()
                .map(|v| v.as_f64().ok_or(EmbeddingError::NonFinite))
                .collect::<Result<_>>()?;
            if values.len() != self.dimension {
                return Err(EmbeddingError::Shape {
                    expected: self.dimension,
                    actual: values.len(),
                });
            }
            let slot = out
                .get_mut(index)
                .ok_or_else(|| EmbeddingError::Remote(format!("index {index} out of range")))?;
            *slot = Some(EmbeddingVector::new(values)?);
        }
        out.into_iter()
            .zip(texts)
            .map(|(v, t)| v.ok_or_else(|| EmbeddingError::Missing(t.to_string())))
            .collect()
    }
}

impl Encoder for RemoteEncoder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn name(&self) -> String {
        format!("remote:{}", self.model)
    }

    fn encode(&self, text: &str) -> Result<EmbeddingVector> {
        Ok(self.request(&[text])?.remove(0))
    }

    fn encode_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(64) {
            out.extend(self.request(chunk)?);
        }
        Ok(out)
    }
}

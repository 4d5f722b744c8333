use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use super::{first_sentence, ChatMessage};
use crate::ontology::{Concept, Ontology};
use crate::service::{HttpEndpoint, RetryPolicy, ServiceError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProviderError {
    #[error(transparent)]
    Service(#[from] ServiceError),
    #[error("unexpected response: {0}")]
    Response(String),
    #[error("no offline definition for concept {0}")]
    UnknownConcept(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenerationRequest {
    pub concept_id: String,
    pub synonym: String,
    pub messages: Vec<ChatMessage>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenerationResult {
    pub text: String,
    pub model: String,
    pub timestamp: u64,
    pub cache_hit: bool,
}

/// Source of synthetic definitions.
pub trait DefinitionProvider: Send + Sync {
    /// Part of the generation-cache key.
    fn model_tag(&self) -> String;

    /// True for providers that reach the network.
    fn is_remote(&self) -> bool;

    fn generate(&self, request: &GenerationRequest) -> Result<String, ProviderError>;

    /// Number of `generate` calls served so far.
    fn calls(&self) -> usize;
}

/// `"<synonym> is a disorder classified under <parent> in the reference
/// ontology."`, where the parent is the primary name of the concept's
/// smallest parent id, or "the root category" for roots.
pub fn offline_definition(concept: &Concept, synonym: &str, ontology: &Ontology) -> String {
    debug_assert!(concept.synonyms.iter().any(|s| s == synonym));
    let parent = concept
        .parent_ids
        .iter()
        .min()
        .and_then(|p| ontology.get(p))
        .map_or("the root category", |p| p.primary_name.as_str());
    format!("{synonym} is a disorder classified under {parent} in the reference ontology.")
}

/// Deterministic template provider; never touches the network.
#[derive(Debug)]
pub struct OfflineProvider {
    definitions: HashMap<(String, String), String>,
    calls: AtomicUsize,
}

impl OfflineProvider {
    pub fn new(ontology: &Ontology) -> Self {
        let definitions = ontology
            .concepts()
            .flat_map(|c| {
                c.synonyms.iter().map(move |s| {
                    (
                        (c.id.clone(), s.clone()),
                        offline_definition(c, s, ontology),
                    )
                })
            })
            .collect();
        OfflineProvider {
            definitions,
            calls: AtomicUsize::new(0),
        }
    }
}

impl DefinitionProvider for OfflineProvider {
    fn model_tag(&self) -> String {
        "offline-template-v1".to_string()
    }

    fn is_remote(&self) -> bool {
        false
    }

    fn generate(&self, request: &GenerationRequest) -> Result<String, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.definitions
            .get(&(request.concept_id.clone(), request.synonym.clone()))
            .cloned()
            .ok_or_else(|| ProviderError::UnknownConcept(request.concept_id.clone()))
    }

    fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChatCompletionConfig {
    pub base_url: String,
    pub model: String,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
    pub timeout_secs: u64,
    pub retry: RetryPolicy,
    /// Extra decoding parameters (temperature, top_p, ...) merged into the
    /// request body. Empty means service defaults.
    pub decoding: Map<String, Value>,
}

impl Default for ChatCompletionConfig {
    fn default() -> Self {
        ChatCompletionConfig {
            base_url: "https://api.openai.com/v1".to_string(),
            model: "gpt-3.5-turbo".to_string(),
            api_key_env: "OPENAI_API_KEY".to_string(),
            timeout_secs: 60,
            retry: RetryPolicy::default(),
            decoding: Map::new(),
        }
    }
}

/// Chat-completion client. Replies are cut to their first sentence.
#[derive(Debug)]
pub struct ChatCompletionProvider {
    endpoint: HttpEndpoint,
    model: String,
    decoding: Map<String, Value>,
    calls: AtomicUsize,
}

impl ChatCompletionProvider {
    pub fn new(config: &ChatCompletionConfig) -> Self {
        let api_key = std::env::var(&config.api_key_env).ok();
        Self::with_api_key(config, api_key)
    }

    pub fn with_api_key(config: &ChatCompletionConfig, api_key: Option<String>) -> Self {
        ChatCompletionProvider {
            endpoint: HttpEndpoint::new(
                config.base_url.clone(),
                api_key,
                Duration::from_secs(config.timeout_secs),
                config.retry,
            ),
            model: config.model.clone(),
            decoding: config.decoding.clone(),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn request_body(&self, messages: &[ChatMessage]) -> Value {
        let mut body = Map::new();
        body.insert("model".into(), json!(self.model));
        body.insert("messages".into(), json!(messages));
        for (k, v) in &self.decoding {
            body.insert(k.clone(), v.clone());
        }
        Value::Object(body)
    }
}

impl DefinitionProvider for ChatCompletionProvider {
    fn model_tag(&self) -> String {
        let mut tag = self.model.clone();
        if !self.decoding.is_empty() {
            tag.push_str(&Value::Object(self.decoding.clone()).to_string());
        }
        tag
    }

    fn is_remote(&self) -> bool {
        true
    }

    fn generate(&self, request: &GenerationRequest) -> Result<String, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let reply = self
            .endpoint
            .post_json("chat/completions", &self.request_body(&request.messages))?;
        let content = reply
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| ProviderError::Response(format!("no message content in {reply}")))?;
        let sentence = first_sentence(content);
        if sentence.is_empty() {
            return Err(ProviderError::Response("empty completion".into()));
        }
        Ok(sentence.to_string())
    }

    fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

//! Concept definitions: real ones from the ontology and synthetic ones
//! requested from a text-generation service, one per synonym.

mod cache;
mod generate;
mod provider;

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{CacheEntry, GenerationCache};
pub use generate::{generate_definitions, GenerationFailure, GenerationOptions, GenerationOutcome};
pub use provider::{
    offline_definition, ChatCompletionConfig, ChatCompletionProvider, DefinitionProvider,
    GenerationRequest, GenerationResult, OfflineProvider, ProviderError,
};

pub const SYSTEM_PROMPT: &str = "You are an expert in clinical and biomedical sciences.";
const USER_PROMPT_PREFIX: &str = "Could you provide a single sentence with the definition of ";
const USER_PROMPT_SUFFIX: &str = "?";

#[derive(Debug, Error)]
pub enum DefinitionError {
    #[error("cannot build a prompt for an empty synonym")]
    EmptySynonym,
    #[error("invalid definition record for {concept_id}: {reason}")]
    InvalidRecord { concept_id: String, reason: String },
    #[error("concepts left without any definition: {}", .0.join(", "))]
    Uncovered(Vec<String>),
    #[error("definition store line {line}: {message}")]
    Store { line: usize, message: String },
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DefinitionError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Real,
    Synthetic,
    Substituted,
}

/// A synonym occurrence inside a definition, as character offsets.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SynonymMention {
    pub synonym: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DefinitionRecord {
    pub concept_id: String,
    pub text: String,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_synonym: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mention: Option<SynonymMention>,
}

impl DefinitionRecord {
    pub fn real(concept_id: impl Into<String>, text: impl Into<String>) -> Self {
        DefinitionRecord {
            concept_id: concept_id.into(),
            text: text.into(),
            provenance: Provenance::Real,
            source_synonym: None,
            mention: None,
        }
    }

    pub fn synthetic(
        concept_id: impl Into<String>,
        text: impl Into<String>,
        source_synonym: impl Into<String>,
    ) -> Self {
        DefinitionRecord {
            concept_id: concept_id.into(),
            text: text.into(),
            provenance: Provenance::Synthetic,
            source_synonym: Some(source_synonym.into()),
            mention: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |reason: &str| {
            Err(DefinitionError::InvalidRecord {
                concept_id: self.concept_id.clone(),
                reason: reason.to_string(),
            })
        };
        if self.text.trim().is_empty() {
            return fail("empty text");
        }
        if self.provenance == Provenance::Synthetic && self.source_synonym.is_none() {
            return fail("synthetic record without source synonym");
        }
        if self.provenance == Provenance::Substituted && self.mention.is_none() {
            return fail("substituted record without mention");
        }
        if let Some(m) = &self.mention {
            if m.start >= m.end || m.end > self.text.chars().count() {
                return fail("mention span out of bounds");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: &str, content: impl Into<String>) -> Self {
        ChatMessage {
            role: role.to_string(),
            content: content.into(),
        }
    }
}

/// System and user messages asking for a one-sentence definition of
/// `synonym`.
pub fn build_prompt(synonym: &str) -> Result<Vec<ChatMessage>> {
    if synonym.is_empty() {
        return Err(DefinitionError::EmptySynonym);
    }
    Ok(vec![
        ChatMessage::new("system", SYSTEM_PROMPT),
        ChatMessage::new(
            "user",
            format!("{USER_PROMPT_PREFIX}{synonym}{USER_PROMPT_SUFFIX}"),
        ),
    ])
}

/// Flattens a message list into the string used as cache key.
pub fn prompt_text(messages: &[ChatMessage]) -> String {
    messages
        .iter()
        .map(|m| format!("{}: {}", m.role, m.content))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Text up to and including the first period that is followed by whitespace
/// or the end of the text. Text without such a period is returned trimmed.
pub fn first_sentence(text: &str) -> &str {
    let text = text.trim();
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if c == '.' && chars.peek().is_none_or(|(_, n)| n.is_whitespace()) {
            return &text[..=i];
        }
    }
    text
}

pub fn write_store<W: Write>(records: &[DefinitionRecord], mut out: W) -> Result<()> {
    for record in records {
        serde_json::to_writer(&mut out, record).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_store<R: BufRead>(input: R) -> Result<Vec<DefinitionRecord>> {
    let mut records = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: DefinitionRecord =
            serde_json::from_str(&line).map_err(|e| DefinitionError::Store {
                line: i + 1,
                message: e.to_string(),
            })?;
        record.validate().map_err(|e| DefinitionError::Store {
            line: i + 1,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

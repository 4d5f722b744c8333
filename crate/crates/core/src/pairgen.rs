//! Positive pairs built by swapping the one synonym a definition mentions for
//! another synonym of the same concept.

use std::collections::HashSet;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::definitions::{DefinitionRecord, Provenance, SynonymMention};
use crate::ontology::{Concept, Ontology};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PairError {
    #[error("replacement {0:?} equals the mentioned synonym")]
    NoOpSubstitution(String),
    #[error("mention {start}..{end} of {synonym:?} does not fit the definition text")]
    InvalidMention {
        synonym: String,
        start: usize,
        end: usize,
    },
    #[error("concept {0} has no parent to borrow a synonym from")]
    RootSingleSynonym(String),
    #[error("concept {0} does not have exactly one synonym")]
    NotSingleSynonym(String),
    #[error("pair file line {line}: {message}")]
    Store { line: usize, message: String },
    #[error("{0}")]
    Io(String),
}

impl From<std::io::Error> for PairError {
    fn from(e: std::io::Error) -> Self {
        PairError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, PairError>;

/// `(anchor, positive)` where the positive is the anchor with its synonym
/// mention replaced.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PositivePair {
    pub concept_id: String,
    pub anchor: DefinitionRecord,
    pub positive: DefinitionRecord,
    pub substituted_synonym: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PairOptions {
    /// Also pair two substituted variants of the same anchor.
    pub variant_pairs: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PairOutcome {
    /// Anchor → variant pairs; the reported total.
    pub pairs: Vec<PositivePair>,
    /// Variant → variant pairs, only with [`PairOptions::variant_pairs`].
    pub variant_pairs: Vec<PositivePair>,
    pub eligible_definitions: usize,
    pub warnings: Vec<String>,
}

fn chars_eq_ci(a: char, b: char) -> bool {
    a == b || a.to_lowercase().eq(b.to_lowercase())
}

fn str_eq_ci(a: &str, b: &str) -> bool {
    a.chars().count() == b.chars().count()
        && a.chars().zip(b.chars()).all(|(x, y)| chars_eq_ci(x, y))
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric()
}

/// Every case-insensitive, word-bounded occurrence of `synonym`, as char spans.
fn occurrences(text: &[char], synonym: &[char]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    if synonym.is_empty() || synonym.len() > text.len() {
        return out;
    }
    for start in 0..=text.len() - synonym.len() {
        let end = start + synonym.len();
        if !text[start..end]
            .iter()
            .zip(synonym)
            .all(|(&a, &b)| chars_eq_ci(a, b))
        {
            continue;
        }
        let left_ok = start == 0 || !is_word_char(text[start - 1]);
        let right_ok = end == text.len() || !is_word_char(text[end]);
        if left_ok && right_ok {
            out.push((start, end));
        }
    }
    out
}

/// The mention of the single synonym that occurs exactly once in `text`.
/// Overlapping matches resolve to the longest; zero or several surviving
/// matches yield `None`.
pub fn find_single_mention(text: &str, synonyms: &[String]) -> Option<SynonymMention> {
    let chars: Vec<char> = text.chars().collect();
    let mut matches: Vec<(usize, usize, usize)> = Vec::new();
    for (idx, synonym) in synonyms.iter().enumerate() {
        let syn: Vec<char> = synonym.chars().collect();
        matches.extend(
            occurrences(&chars, &syn)
                .into_iter()
                .map(|(s, e)| (s, e, idx)),
        );
    }
    matches.sort_by(|a, b| {
        (b.1 - b.0)
            .cmp(&(a.1 - a.0))
            .then(a.0.cmp(&b.0))
            .then(a.2.cmp(&b.2))
    });
    let mut kept: Vec<(usize, usize, usize)> = Vec::new();
    for m in matches {
        if kept.iter().all(|k| m.1 <= k.0 || m.0 >= k.1) {
            kept.push(m);
        }
    }
    match kept.as_slice() {
        [(start, end, idx)] => Some(SynonymMention {
            synonym: synonyms[*idx].clone(),
            start: *start,
            end: *end,
        }),
        _ => None,
    }
}

fn byte_offset(text: &str, char_offset: usize) -> Option<usize> {
    if char_offset == text.chars().count() {
        return Some(text.len());
    }
    text.char_indices().nth(char_offset).map(|(b, _)| b)
}

/// Byte range of a mention, checked against the text.
fn mention_bytes(text: &str, mention: &SynonymMention) -> Result<(usize, usize)> {
    let invalid = || PairError::InvalidMention {
        synonym: mention.synonym.clone(),
        start: mention.start,
        end: mention.end,
    };
    if mention.start >= mention.end {
        return Err(invalid());
    }
    let start = byte_offset(text, mention.start).ok_or_else(invalid)?;
    let end = byte_offset(text, mention.end).ok_or_else(invalid)?;
    if !str_eq_ci(&text[start..end], &mention.synonym) {
        return Err(invalid());
    }
    Ok((start, end))
}

/// The surface form of a mention as written in `text`.
pub fn mention_surface<'a>(text: &'a str, mention: &SynonymMention) -> Result<&'a str> {
    let (s, e) = mention_bytes(text, mention)?;
    Ok(&text[s..e])
}

/// Replaces the mentioned span with `replacement` (verbatim casing).
pub fn substitute(
    definition: &DefinitionRecord,
    mention: &SynonymMention,
    replacement: &str,
) -> Result<DefinitionRecord> {
    if str_eq_ci(replacement, &mention.synonym) {
        return Err(PairError::NoOpSubstitution(replacement.to_string()));
    }
    let (start, end) = mention_bytes(&definition.text, mention)?;
    let mut text = String::with_capacity(definition.text.len() + replacement.len());
    text.push_str(&definition.text[..start]);
    text.push_str(replacement);
    text.push_str(&definition.text[end..]);
    Ok(DefinitionRecord {
        concept_id: definition.concept_id.clone(),
        text,
        provenance: Provenance::Substituted,
        source_synonym: definition.source_synonym.clone(),
        mention: Some(SynonymMention {
            synonym: replacement.to_string(),
            start: mention.start,
            end: mention.start + replacement.chars().count(),
        }),
    })
}

/// `"<own synonym> <parent synonym>"` for a single-synonym concept, using
/// the smallest synonym of its smallest parent id.
pub fn synthesize_extra_synonym(concept: &Concept, ontology: &Ontology) -> Result<String> {
    if concept.synonyms.len() != 1 {
        return Err(PairError::NotSingleSynonym(concept.id.clone()));
    }
    let parent = concept
        .parent_ids
        .iter()
        .min()
        .and_then(|p| ontology.get(p))
        .ok_or_else(|| PairError::RootSingleSynonym(concept.id.clone()))?;
    let parent_synonym = parent
        .synonyms
        .iter()
        .min()
        .expect("normalized concepts keep at least one synonym");
    Ok(format!("{} {}", concept.synonyms[0], parent_synonym))
}

/// Checks that `pair.positive` equals `pair.anchor` outside the mention span
/// and that substituting back restores the anchor.
pub fn check_pair(pair: &PositivePair) -> std::result::Result<(), String> {
    let anchor_mention = pair
        .anchor
        .mention
        .as_ref()
        .ok_or("anchor lacks a mention")?;
    let positive_mention = pair
        .positive
        .mention
        .as_ref()
        .ok_or("positive lacks a mention")?;
    if pair.anchor.concept_id != pair.concept_id || pair.positive.concept_id != pair.concept_id {
        return Err("concept ids differ".into());
    }
    if pair.anchor.text == pair.positive.text {
        return Err("anchor and positive are identical".into());
    }
    let (a0, a1) = mention_bytes(&pair.anchor.text, anchor_mention).map_err(|e| e.to_string())?;
    let (p0, p1) =
        mention_bytes(&pair.positive.text, positive_mention).map_err(|e| e.to_string())?;
    if pair.anchor.text[..a0] != pair.positive.text[..p0] {
        return Err("prefix differs".into());
    }
    if pair.anchor.text[a1..] != pair.positive.text[p1..] {
        return Err("suffix differs".into());
    }
    let original = &pair.anchor.text[a0..a1];
    let restored =
        substitute(&pair.positive, positive_mention, original).map_err(|e| e.to_string())?;
    if restored.text != pair.anchor.text {
        return Err("back-substitution does not restore the anchor".into());
    }
    Ok(())
}

/// Synonyms available for substitution, including the borrowed parent
/// synonym for single-synonym concepts.
fn substitution_synonyms(
    concept: &Concept,
    ontology: &Ontology,
    warnings: &mut Vec<String>,
) -> Vec<String> {
    let mut synonyms = concept.synonyms.clone();
    if synonyms.len() == 1 {
        match synthesize_extra_synonym(concept, ontology) {
            Ok(extra) => synonyms.push(extra),
            Err(e) => warnings.push(format!("skipping {}: {e}", concept.id)),
        }
    }
    synonyms
}

pub fn generate_pairs(
    ontology: &Ontology,
    definitions: &[DefinitionRecord],
    options: PairOptions,
) -> PairOutcome {
    let mut warnings = Vec::new();
    let mut pairs = Vec::new();
    let mut variant_pairs = Vec::new();
    let mut eligible = 0;
    let synonyms_of: std::collections::HashMap<&str, Vec<String>> = ontology
        .concepts()
        .map(|c| {
            (
                c.id.as_str(),
                substitution_synonyms(c, ontology, &mut warnings),
            )
        })
        .collect();

    for definition in definitions {
        if definition.provenance == Provenance::Substituted {
            continue;
        }
        let Some(synonyms) = synonyms_of.get(definition.concept_id.as_str()) else {
            warnings.push(format!(
                "definition of unknown concept {} ignored",
                definition.concept_id
            ));
            continue;
        };
        let Some(mention) = find_single_mention(&definition.text, synonyms) else {
            continue;
        };
        eligible += 1;
        let mut anchor = definition.clone();
        anchor.mention = Some(mention.clone());
        let mut variants = Vec::new();
        for replacement in synonyms {
            let Ok(positive) = substitute(&anchor, &mention, replacement) else {
                continue;
            };
            variants.push(positive.clone());
            pairs.push(PositivePair {
                concept_id: anchor.concept_id.clone(),
                anchor: anchor.clone(),
                positive,
                substituted_synonym: replacement.clone(),
            });
        }
        if options.variant_pairs {
            for (i, first) in variants.iter().enumerate() {
                for second in &variants[i + 1..] {
                    let first_mention = first.mention.as_ref().expect("variants carry mentions");
                    let replacement = &second
                        .mention
                        .as_ref()
                        .expect("variants carry mentions")
                        .synonym;
                    if let Ok(positive) = substitute(first, first_mention, replacement) {
                        variant_pairs.push(PositivePair {
                            concept_id: first.concept_id.clone(),
                            anchor: first.clone(),
                            positive,
                            substituted_synonym: replacement.clone(),
                        });
                    }
                }
            }
        }
    }
    PairOutcome {
        pairs: sort_and_dedup(pairs),
        variant_pairs: sort_and_dedup(variant_pairs),
        eligible_definitions: eligible,
        warnings,
    }
}

fn sort_and_dedup(mut pairs: Vec<PositivePair>) -> Vec<PositivePair> {
    pairs.sort_by(|a, b| {
        (
            &a.concept_id,
            &a.anchor.text,
            &a.substituted_synonym,
            &a.positive.text,
            a.anchor.provenance,
        )
            .cmp(&(
                &b.concept_id,
                &b.anchor.text,
                &b.substituted_synonym,
                &b.positive.text,
                b.anchor.provenance,
            ))
    });
    let mut seen = HashSet::new();
    pairs.retain(|p| {
        seen.insert((
            p.concept_id.clone(),
            p.anchor.text.clone(),
            p.positive.text.clone(),
        ))
    });
    pairs
}

pub fn write_pairs<W: Write>(pairs: &[PositivePair], mut out: W) -> Result<()> {
    for pair in pairs {
        serde_json::to_writer(&mut out, pair).map_err(|e| PairError::Io(e.to_string()))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_pairs<R: BufRead>(input: R) -> Result<Vec<PositivePair>> {
    let mut pairs = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        pairs.push(serde_json::from_str(&line).map_err(|e| PairError::Store {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(pairs)
}

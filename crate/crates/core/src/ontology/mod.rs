//! Concept store, synonym filtering and the is-a taxonomy.

mod normalize;
mod parse;
mod taxonomy;

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use normalize::{
    levenshtein, normalize_synonyms, same_words_reordered, strip_parenthesized,
    LEVENSHTEIN_THRESHOLD,
};
pub use parse::{parse_ontology, OntologyFormat};
pub use taxonomy::{TaxonomyIndex, CLOSURE_LIMIT};

#[derive(Debug, Error)]
pub enum OntologyError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("duplicate concept id {0}")]
    DuplicateId(String),
    #[error("concept with empty id at line {0}")]
    EmptyId(usize),
    #[error("concept {child} names unknown parent {parent}")]
    DanglingParent { child: String, parent: String },
    #[error("is-a cycle through edge {child} -> {parent}")]
    Cycle { child: String, parent: String },
    #[error("concept {0} has no usable synonym")]
    DegenerateConcept(String),
    #[error("unknown concept id {0}")]
    UnknownConcept(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, OntologyError>;

/// An ontology node. `synonyms[0]` is always the primary name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Concept {
    pub id: String,
    pub primary_name: String,
    pub synonyms: Vec<String>,
    pub real_definitions: Vec<String>,
    pub parent_ids: Vec<String>,
    pub obsolete: bool,
}

impl Concept {
    pub fn new(id: impl Into<String>, name: impl Into<String>) -> Self {
        let name = name.into();
        Concept {
            id: id.into(),
            primary_name: name.clone(),
            synonyms: vec![name],
            real_definitions: Vec::new(),
            parent_ids: Vec::new(),
            obsolete: false,
        }
    }

    pub fn with_synonyms<I, S>(mut self, synonyms: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.synonyms.extend(synonyms.into_iter().map(Into::into));
        self
    }

    pub fn with_parents<I, S>(mut self, parents: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.parent_ids.extend(parents.into_iter().map(Into::into));
        self
    }

    pub fn with_definition(mut self, text: impl Into<String>) -> Self {
        self.real_definitions.push(text.into());
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OntologyStats {
    pub concepts: usize,
    pub synonyms: usize,
    pub is_a_edges: usize,
    pub concepts_with_definitions: usize,
    pub definition_coverage: f64,
}

impl fmt::Display for OntologyStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "concepts:                  {}", self.concepts)?;
        writeln!(f, "synonyms:                  {}", self.synonyms)?;
        writeln!(f, "is-a relations:            {}", self.is_a_edges)?;
        writeln!(
            f,
            "concepts with definitions: {} ({:.2}%)",
            self.concepts_with_definitions,
            self.definition_coverage * 100.0
        )
    }
}

/// Immutable, validated concept store. Obsolete concepts never make it in.
#[derive(Debug, Clone)]
pub struct Ontology {
    concepts: BTreeMap<String, Concept>,
    taxonomy: Arc<TaxonomyIndex>,
    stats: OntologyStats,
}

impl Ontology {
    /// Validates and indexes a concept list. Obsolete concepts are dropped, as
    /// are parent links pointing at obsolete concepts.
    pub fn from_concepts(concepts: Vec<Concept>) -> Result<Self> {
        let obsolete: std::collections::HashSet<String> = concepts
            .iter()
            .filter(|c| c.obsolete)
            .map(|c| c.id.clone())
            .collect();
        let mut map = BTreeMap::new();
        for (i, mut concept) in concepts.into_iter().enumerate() {
            if concept.id.is_empty() {
                return Err(OntologyError::EmptyId(i + 1));
            }
            if concept.obsolete {
                continue;
            }
            concept.parent_ids.retain(|p| !obsolete.contains(p));
            let mut seen = std::collections::HashSet::new();
            concept.parent_ids.retain(|p| seen.insert(p.clone()));
            if concept.synonyms.is_empty() || concept.synonyms.iter().all(|s| s.trim().is_empty()) {
                return Err(OntologyError::DegenerateConcept(concept.id));
            }
            if map.contains_key(&concept.id) {
                return Err(OntologyError::DuplicateId(concept.id));
            }
            map.insert(concept.id.clone(), concept);
        }
        for concept in map.values() {
            for parent in &concept.parent_ids {
                if !map.contains_key(parent) {
                    return Err(OntologyError::DanglingParent {
                        child: concept.id.clone(),
                        parent: parent.clone(),
                    });
                }
            }
        }
        let taxonomy = TaxonomyIndex::build(&map)?;
        let stats = compute_stats(&map, &taxonomy);
        Ok(Ontology {
            concepts: map,
            taxonomy: Arc::new(taxonomy),
            stats,
        })
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Concept> {
        self.concepts.get(id)
    }

    pub fn concept(&self, id: &str) -> Result<&Concept> {
        self.get(id)
            .ok_or_else(|| OntologyError::UnknownConcept(id.to_string()))
    }

    /// Concepts in ascending id order.
    pub fn concepts(&self) -> impl Iterator<Item = &Concept> {
        self.concepts.values()
    }

    pub fn taxonomy(&self) -> &TaxonomyIndex {
        &self.taxonomy
    }

    pub fn taxonomy_arc(&self) -> Arc<TaxonomyIndex> {
        Arc::clone(&self.taxonomy)
    }

    pub fn stats(&self) -> OntologyStats {
        self.stats
    }

    /// Applies the synonym filter to every concept.
    pub fn normalized(&self, seed: u64) -> Result<Ontology> {
        let concepts = self
            .concepts
            .values()
            .map(|c| normalize_synonyms(c, seed))
            .collect::<Result<Vec<_>>>()?;
        Ontology::from_concepts(concepts)
    }

    /// Writes the internal line-delimited format, one concept per line.
    pub fn write_internal<W: Write>(&self, mut out: W) -> Result<()> {
        for concept in self.concepts.values() {
            let line = parse::InternalRecord::from(concept);
            serde_json::to_writer(&mut out, &line).map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

fn compute_stats(concepts: &BTreeMap<String, Concept>, taxonomy: &TaxonomyIndex) -> OntologyStats {
    let with_defs = concepts
        .values()
        .filter(|c| !c.real_definitions.is_empty())
        .count();
    OntologyStats {
        concepts: concepts.len(),
        synonyms: concepts.values().map(|c| c.synonyms.len()).sum(),
        is_a_edges: taxonomy.edge_count(),
        concepts_with_definitions: with_defs,
        definition_coverage: if concepts.is_empty() {
            0.0
        } else {
            with_defs as f64 / concepts.len() as f64
        },
    }
}

//! Taxonomy-aware hard-negative mining.
//!
//! For a positive pair of concept C, every indexed definition of a concept
//! that is neither C nor an ancestor or descendant of C is scored by its mean
//! cosine similarity to the anchor and the positive; the K best become the
//! pair's hard negatives. Ordering is total: score descending, then concept id,
//! then text.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::definitions::{DefinitionRecord, Provenance};
use crate::embedding::{
    cache_embeddings, cosine_with_norms, CacheReport, EmbeddingError, EmbeddingVector, Encoder,
    VectorCache,
};
use crate::ontology::TaxonomyIndex;
use crate::pairgen::PositivePair;

#[derive(Debug, Error)]
pub enum MiningError {
    #[error("candidate pool is empty")]
    EmptyPool,
    #[error("concept {0} is not in the taxonomy")]
    UnknownConcept(String),
    #[error("indexing failed: {0}")]
    Embedding(#[from] EmbeddingError),
    #[error("sample file line {line}: {message}")]
    Store { line: usize, message: String },
    #[error("could not build worker pool: {0}")]
    Pool(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, MiningError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardNegative {
    pub concept_id: String,
    pub text: String,
    pub score: f64,
}

/// `(anchor, positive, hard negatives...)` for one positive pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub concept_id: String,
    pub anchor: String,
    pub positive: String,
    pub hard_negatives: Vec<HardNegative>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MiningWarning {
    pub pair_index: usize,
    pub concept_id: String,
    pub requested: usize,
    pub found: usize,
}

#[derive(Debug, Clone)]
struct Candidate {
    concept_id: String,
    node: usize,
    text: String,
    vector: EmbeddingVector,
    squared_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct IndexOptions {
    /// Also index substituted variants.
    pub include_variants: bool,
}

/// Embedded candidate definitions, sorted by (concept id, text).
#[derive(Debug, Clone)]
pub struct CandidateIndex {
    entries: Vec<Candidate>,
    dimension: usize,
    taxonomy: Arc<TaxonomyIndex>,
}

impl CandidateIndex {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn taxonomy(&self) -> &TaxonomyIndex {
        &self.taxonomy
    }

    /// (concept id, text, vector) triples in index order.
    pub fn entries(&self) -> impl Iterator<Item = (&str, &str, &EmbeddingVector)> {
        self.entries
            .iter()
            .map(|c| (c.concept_id.as_str(), c.text.as_str(), &c.vector))
    }
}

/// Indexes base definitions (real and synthetic) through the vector cache.
pub fn build_candidate_index(
    definitions: &[DefinitionRecord],
    encoder: &dyn Encoder,
    cache: &VectorCache,
    taxonomy: Arc<TaxonomyIndex>,
    options: IndexOptions,
) -> Result<(CandidateIndex, CacheReport)> {
    let distinct: BTreeSet<(&str, &str)> = definitions
        .iter()
        .filter(|d| options.include_variants || d.provenance != Provenance::Substituted)
        .map(|d| (d.concept_id.as_str(), d.text.as_str()))
        .collect();
    if distinct.is_empty() {
        return Err(MiningError::EmptyPool);
    }
    let texts: Vec<&str> = distinct.iter().map(|(_, t)| *t).collect();
    let report = cache_embeddings(&texts, encoder, cache)?;
    let entries = distinct
        .into_iter()
        .map(|(concept_id, text)| {
            let node = taxonomy
                .node_index(concept_id)
                .ok_or_else(|| MiningError::UnknownConcept(concept_id.to_string()))?;
            let vector = cache.require(text)?;
            Ok(Candidate {
                concept_id: concept_id.to_string(),
                node,
                text: text.to_string(),
                squared_norm: vector.squared_norm(),
                vector,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((
        CandidateIndex {
            entries,
            dimension: encoder.dimension(),
            taxonomy,
        },
        report,
    ))
}

/// Selects the `k` best-scoring eligible candidates for one pair.
pub fn mine_hard_negatives(
    pair: &PositivePair,
    anchor: &EmbeddingVector,
    positive: &EmbeddingVector,
    index: &CandidateIndex,
    k: usize,
) -> Result<(TrainingSample, Option<usize>)> {
    let mut sample = TrainingSample {
        concept_id: pair.concept_id.clone(),
        anchor: pair.anchor.text.clone(),
        positive: pair.positive.text.clone(),
        hard_negatives: Vec::new(),
    };
    if k == 0 {
        return Ok((sample, None));
    }
    let node = index
        .taxonomy
        .node_index(&pair.concept_id)
        .ok_or_else(|| MiningError::UnknownConcept(pair.concept_id.clone()))?;
    let (aa, pp) = (anchor.squared_norm(), positive.squared_norm());
    let mut scored: Vec<(f64, usize)> = Vec::new();
    for (i, c) in index.entries.iter().enumerate() {
        if index.taxonomy.related_at(node, c.node) {
            continue;
        }
        let to_anchor = cosine_with_norms(c.vector.values(), anchor.values(), c.squared_norm, aa)?;
        let to_positive =
            cosine_with_norms(c.vector.values(), positive.values(), c.squared_norm, pp)?;
        scored.push(((to_anchor + to_positive) / 2.0, i));
    }
    // entries are already in (concept id, text) order, so the index breaks ties
    let order = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
    if scored.len() > k {
        scored.select_nth_unstable_by(k - 1, order);
        scored.truncate(k);
    }
    scored.sort_by(order);
    sample.hard_negatives = scored
        .into_iter()
        .map(|(score, i)| HardNegative {
            concept_id: index.entries[i].concept_id.clone(),
            text: index.entries[i].text.clone(),
            score,
        })
        .collect();
    let shortfall = (sample.hard_negatives.len() < k).then_some(sample.hard_negatives.len());
    Ok((sample, shortfall))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MiningOptions {
    /// Hard negatives per pair.
    pub k: usize,
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
}

impl Default for MiningOptions {
    fn default() -> Self {
        MiningOptions {
            k: 1,
            threads: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiningReport {
    pub pairs: usize,
    pub samples: usize,
    pub k: usize,
    pub index_size: usize,
    pub new_encodes: usize,
    pub warnings: Vec<MiningWarning>,
}

#[derive(Debug, Clone)]
pub struct MiningOutcome {
    pub samples: Vec<TrainingSample>,
    pub report: MiningReport,
}

/// One sample per pair, in pair order, independent of the thread count.
pub fn mine_all(
    pairs: &[PositivePair],
    index: &CandidateIndex,
    encoder: &dyn Encoder,
    cache: &VectorCache,
    options: MiningOptions,
) -> Result<MiningOutcome> {
    let texts: Vec<&str> = pairs
        .iter()
        .flat_map(|p| [p.anchor.text.as_str(), p.positive.text.as_str()])
        .collect();
    let cache_report = cache_embeddings(&texts, encoder, cache)?;
    let run = || -> Result<Vec<(TrainingSample, Option<usize>)>> {
        pairs
            .par_iter()
            .map(|pair| {
                let anchor = cache.require(&pair.anchor.text)?;
                let positive = cache.require(&pair.positive.text)?;
                mine_hard_negatives(pair, &anchor, &positive, index, options.k)
            })
            .collect()
    };
    let mined = match options.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| MiningError::Pool(e.to_string()))?
            .install(run)?,
        None => run()?,
    };
    let mut samples = Vec::with_capacity(mined.len());
    let mut warnings = Vec::new();
    for (pair_index, (sample, shortfall)) in mined.into_iter().enumerate() {
        if let Some(found) = shortfall {
            warnings.push(MiningWarning {
                pair_index,
                concept_id: sample.concept_id.clone(),
                requested: options.k,
                found,
            });
        }
        samples.push(sample);
    }
    Ok(MiningOutcome {
        report: MiningReport {
            pairs: pairs.len(),
            samples: samples.len(),
            k: options.k,
            index_size: index.len(),
            new_encodes: cache_report.new_encodes,
            warnings,
        },
        samples,
    })
}

pub fn write_samples<W: Write>(samples: &[TrainingSample], mut out: W) -> Result<()> {
    for sample in samples {
        serde_json::to_writer(&mut out, sample).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_samples<R: BufRead>(input: R) -> Result<Vec<TrainingSample>> {
    let mut samples = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        samples.push(serde_json::from_str(&line).map_err(|e| MiningError::Store {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(samples)
}

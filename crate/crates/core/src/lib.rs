//! Ontology-driven knowledge infusion for text embeddings.
//!
//! The pipeline reads an is-a ontology, filters concept synonyms, collects
//! real and generated concept definitions, builds positive pairs by synonym
//! substitution, mines taxonomy-aware hard negatives, fine-tunes a linear
//! adapter over a frozen encoder with the InfoNCE objective and evaluates the
//! result on sentence-similarity benchmarks.

pub mod definitions;
pub mod embedding;
pub mod evaluation;
pub mod hardneg;
pub mod ontology;
pub mod pairgen;
pub mod pipeline;
pub mod service;
pub mod trainer;

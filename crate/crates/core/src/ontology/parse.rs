use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, Read};

use serde::{Deserialize, Serialize};

use super::{Concept, Ontology, OntologyError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OntologyFormat {
    /// OBO-Graphs JSON (`graphs[].nodes` / `graphs[].edges`).
    OboGraphsJson,
    /// One JSON object per line: id, name, synonyms, definitions, parents, obsolete.
    InternalJson,
}

impl std::str::FromStr for OntologyFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "obo-graphs-json" | "obographs" => Ok(OntologyFormat::OboGraphsJson),
            "internal-json" | "internal" | "jsonl" => Ok(OntologyFormat::InternalJson),
            other => Err(format!("unknown ontology format {other:?}")),
        }
    }
}

pub fn parse_ontology<R: Read>(source: R, format: OntologyFormat) -> Result<Ontology> {
    let concepts = match format {
        OntologyFormat::InternalJson => read_internal(std::io::BufReader::new(source))?,
        OntologyFormat::OboGraphsJson => read_obo_graphs(source)?,
    };
    Ontology::from_concepts(concepts)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(super) struct InternalRecord {
    id: String,
    name: String,
    #[serde(default)]
    synonyms: Vec<String>,
    #[serde(default)]
    definitions: Vec<String>,
    #[serde(default)]
    parents: Vec<String>,
    #[serde(default)]
    obsolete: bool,
}

impl From<&Concept> for InternalRecord {
    fn from(c: &Concept) -> Self {
        InternalRecord {
            id: c.id.clone(),
            name: c.primary_name.clone(),
            synonyms: c.synonyms.iter().skip(1).cloned().collect(),
            definitions: c.real_definitions.clone(),
            parents: c.parent_ids.clone(),
            obsolete: c.obsolete,
        }
    }
}

impl From<InternalRecord> for Concept {
    fn from(r: InternalRecord) -> Self {
        // The name always leads; a repeated name in `synonyms` is dropped.
        let mut synonyms = vec![r.name.clone()];
        synonyms.extend(r.synonyms.into_iter().filter(|s| *s != r.name));
        Concept {
            id: r.id,
            primary_name: r.name,
            synonyms,
            real_definitions: r.definitions,
            parent_ids: r.parents,
            obsolete: r.obsolete,
        }
    }
}

fn read_internal<R: BufRead>(source: R) -> Result<Vec<Concept>> {
    let mut concepts = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: InternalRecord =
            serde_json::from_str(&line).map_err(|e| OntologyError::Parse {
                line: i + 1,
                column: e.column(),
                message: e.to_string(),
            })?;
        concepts.push(record.into());
    }
    Ok(concepts)
}

#[derive(Deserialize)]
struct GraphDocument {
    graphs: Vec<Graph>,
}

#[derive(Deserialize)]
struct Graph {
    #[serde(default)]
    nodes: Vec<Node>,
    #[serde(default)]
    edges: Vec<Edge>,
}

#[derive(Deserialize)]
struct Node {
    id: String,
    lbl: Option<String>,
    #[serde(rename = "type")]
    kind: Option<String>,
    meta: Option<Meta>,
}

#[derive(Deserialize, Default)]
struct Meta {
    definition: Option<DefinitionValue>,
    #[serde(default)]
    synonyms: Vec<SynonymValue>,
    #[serde(default)]
    deprecated: bool,
}

#[derive(Deserialize)]
struct DefinitionValue {
    val: String,
}

#[derive(Deserialize)]
struct SynonymValue {
    pred: String,
    val: String,
}

#[derive(Deserialize)]
struct Edge {
    sub: String,
    pred: String,
    obj: String,
}

const OBO_PREFIX: &str = "http://purl.obolibrary.org/obo/";

/// `http://purl.obolibrary.org/obo/MONDO_0000001` → `MONDO:0000001`. Other ids
/// pass through unchanged.
fn compact_id(iri: &str) -> String {
    match iri.strip_prefix(OBO_PREFIX) {
        Some(local) => match local.split_once('_') {
            Some((prefix, rest)) => format!("{prefix}:{rest}"),
            None => local.to_string(),
        },
        None => iri.to_string(),
    }
}

fn is_subclass_predicate(pred: &str) -> bool {
    matches!(
        pred,
        "is_a"
            | "subClassOf"
            | "rdfs:subClassOf"
            | "http://www.w3.org/2000/01/rdf-schema#subClassOf"
    )
}

/// Reads labelled CLASS nodes with their exact synonyms and is-a edges.
/// Edges touching nodes outside that set (properties, external classes,
/// deprecated terms) are ignored.
fn read_obo_graphs<R: Read>(source: R) -> Result<Vec<Concept>> {
    let doc: GraphDocument = serde_json::from_reader(source).map_err(|e| OntologyError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let mut concepts: BTreeMap<String, Concept> = BTreeMap::new();
    let mut deprecated: HashSet<String> = HashSet::new();
    let mut edges = Vec::new();
    for graph in doc.graphs {
        for node in graph.nodes {
            if node.kind.as_deref().is_some_and(|k| k != "CLASS") {
                continue;
            }
            let Some(label) = node.lbl else { continue };
            let id = compact_id(&node.id);
            let meta = node.meta.unwrap_or_default();
            let mut concept = Concept::new(id.clone(), label.clone());
            concept.obsolete = meta.deprecated || label.starts_with("obsolete ");
            if concept.obsolete {
                deprecated.insert(id.clone());
            }
            concept.synonyms.extend(
                meta.synonyms
                    .into_iter()
                    .filter(|s| s.pred == "hasExactSynonym" && s.val != label)
                    .map(|s| s.val),
            );
            if let Some(def) = meta.definition {
                concept.real_definitions.push(def.val);
            }
            if concepts.insert(id.clone(), concept).is_some() {
                return Err(OntologyError::DuplicateId(id));
            }
        }
        edges.extend(graph.edges);
    }
    for edge in edges {
        if !is_subclass_predicate(&edge.pred) {
            continue;
        }
        let (sub, obj) = (compact_id(&edge.sub), compact_id(&edge.obj));
        if !concepts.contains_key(&obj) || deprecated.contains(&obj) {
            continue;
        }
        if let Some(child) = concepts.get_mut(&sub) {
            if !child.parent_ids.contains(&obj) {
                child.parent_ids.push(obj);
            }
        }
    }
    Ok(concepts.into_values().collect())
}

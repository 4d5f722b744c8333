//! Staged, resumable pipeline over a work directory.
//!
//! Each stage reads files produced by earlier stages, writes its outputs
//! atomically and records a manifest with content digests. A stage whose
//! config and input digests match its last manifest, and whose outputs are
//! intact, is skipped.

mod config;

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use config::{
    DatasetConfig, DefinitionsConfig, EmbeddingConfig, EncoderKind, EvaluationConfig, FilterConfig,
    IngestConfig, MiningConfig, PipelineConfig, ProviderKind, DEFAULT_SEED,
};

use crate::definitions::{
    generate_definitions, read_store, write_store, ChatCompletionProvider, DefinitionError,
    DefinitionProvider, DefinitionRecord, GenerationCache, GenerationOptions, OfflineProvider,
    Provenance,
};
use crate::embedding::{
    AdapterEncoder, AdapterWeights, CachedEncoder, EmbeddingError, Encoder, HashEncoder,
    PrecomputedEncoder, RemoteEncoder, VectorCache,
};
use crate::evaluation::{
    evaluate, format_table, load_sts, load_subset, EvalError, StsPair, TableRow,
};
use crate::hardneg::{
    build_candidate_index, mine_all, read_samples, write_samples, IndexOptions, MiningError,
    MiningOptions,
};
use crate::ontology::{parse_ontology, Ontology, OntologyError, OntologyFormat, OntologyStats};
use crate::pairgen::{generate_pairs, read_pairs, write_pairs, PairError};
use crate::service::HttpEndpoint;
use crate::trainer::{train, write_log, TrainError, TrainerConfig};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("missing {what}; run {producer} (expected at {})", path.display())]
    MissingInput {
        what: &'static str,
        producer: Stage,
        path: PathBuf,
    },
    #[error("missing {what} at {}", path.display())]
    MissingExternal { what: &'static str, path: PathBuf },
    #[error("offline mode: {0}")]
    Offline(String),
    #[error(transparent)]
    Ontology(#[from] OntologyError),
    #[error(transparent)]
    Definitions(#[from] DefinitionError),
    #[error(transparent)]
    Pairs(#[from] PairError),
    #[error(transparent)]
    Mining(#[from] MiningError),
    #[error(transparent)]
    Training(#[from] TrainError),
    #[error(transparent)]
    Evaluation(#[from] EvalError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("{}: {source}", path.display())]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, PipelineError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    Ingest,
    FilterSynonyms,
    GenDefinitions,
    GenPairs,
    MineNegatives,
    Train,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Ingest,
        Stage::FilterSynonyms,
        Stage::GenDefinitions,
        Stage::GenPairs,
        Stage::MineNegatives,
        Stage::Train,
        Stage::Evaluate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::FilterSynonyms => "filter-synonyms",
            Stage::GenDefinitions => "gen-definitions",
            Stage::GenPairs => "gen-pairs",
            Stage::MineNegatives => "mine-negatives",
            Stage::Train => "train",
            Stage::Evaluate => "evaluate",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| format!("unknown stage {s:?}"))
    }
}

/// File layout under the work directory.
#[derive(Debug, Clone)]
pub struct WorkPaths {
    root: PathBuf,
}

impl WorkPaths {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        WorkPaths { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn file(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn ontology(&self) -> PathBuf {
        self.file("ontology.jsonl")
    }

    pub fn ontology_stats(&self) -> (PathBuf, PathBuf) {
        (
            self.file("ontology.stats.json"),
            self.file("ontology.stats.txt"),
        )
    }

    pub fn filtered(&self) -> PathBuf {
        self.file("ontology.filtered.jsonl")
    }

    pub fn filtered_stats(&self) -> (PathBuf, PathBuf) {
        (
            self.file("ontology.filtered.stats.json"),
            self.file("ontology.filtered.stats.txt"),
        )
    }

    pub fn definitions(&self) -> PathBuf {
        self.file("definitions.jsonl")
    }

    pub fn generation_cache(&self) -> PathBuf {
        self.root.join("cache").join("generations.jsonl")
    }

    pub fn pairs(&self) -> PathBuf {
        self.file("pairs.jsonl")
    }

    pub fn variant_pairs(&self) -> PathBuf {
        self.file("pairs.variants.jsonl")
    }

    pub fn samples(&self) -> PathBuf {
        self.file("samples.jsonl")
    }

    pub fn mining_report(&self) -> PathBuf {
        self.file("mining.report.json")
    }

    pub fn vector_cache(&self, encoder_name: &str) -> PathBuf {
        let safe: String = encoder_name
            .chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() || c == '-' || c == '.' {
                    c
                } else {
                    '_'
                }
            })
            .collect();
        self.root.join("cache").join(format!("vectors-{safe}.oivc"))
    }

    pub fn adapter(&self) -> PathBuf {
        self.file("adapter.oiad")
    }

    pub fn train_log(&self) -> PathBuf {
        self.file("train.log.jsonl")
    }

    pub fn report_json(&self) -> PathBuf {
        self.file("report.json")
    }

    pub fn report_txt(&self) -> PathBuf {
        self.file("report.txt")
    }

    pub fn manifest(&self, stage: Stage) -> PathBuf {
        self.root.join("manifests").join(format!("{stage}.json"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: String,
    pub tool_version: String,
    pub seed: u64,
    pub config_digest: String,
    pub inputs: BTreeMap<String, FileDigest>,
    pub outputs: BTreeMap<String, FileDigest>,
    pub counts: BTreeMap<String, u64>,
    #[serde(default)]
    pub extra: BTreeMap<String, Value>,
    pub wall_time_ms: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageOutcome {
    pub manifest: StageManifest,
    pub skipped: bool,
}

/// Scores of the base encoder and of the trained adapter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSummary {
    pub model: String,
    pub rows: Vec<TableRow>,
    pub notes: Vec<String>,
}

impl EvaluationSummary {
    pub fn table(&self) -> String {
        format_table(&self.rows)
    }

    pub fn render(&self) -> String {
        let mut out = self.table();
        for note in &self.notes {
            out.push_str("note: ");
            out.push_str(note);
            out.push('\n');
        }
        for row in &self.rows {
            for report in &row.reports {
                for w in &report.warnings {
                    out.push_str(&format!("warning ({}_{}): {w}\n", row.model, row.variant));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct PipelineReport {
    pub stages: Vec<StageOutcome>,
    pub evaluation: EvaluationSummary,
    /// Requests sent to a remote definition provider during this run.
    pub remote_provider_calls: u64,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file = File::open(path).map_err(|source| PipelineError::File {
        path: path.to_path_buf(),
        source,
    })?;
    let mut hasher = Sha256::new();
    std::io::copy(&mut file, &mut hasher)?;
    Ok(hex(&hasher.finalize()))
}

fn sha256_bytes(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic<F>(path: &Path, fill: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> Result<()>,
{
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let tmp = tempfile::NamedTempFile::new_in(dir)?;
    let mut writer = BufWriter::new(tmp);
    fill(&mut writer)?;
    let tmp = writer.into_inner().map_err(|e| e.into_error())?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        w.write_all(b"\n")?;
        Ok(())
    })
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|source| PipelineError::File {
            path: path.to_path_buf(),
            source,
        })
}

struct Input {
    role: &'static str,
    what: &'static str,
    path: PathBuf,
    producer: Option<Stage>,
    required: bool,
}

struct Plan {
    inputs: Vec<Input>,
    outputs: Vec<(&'static str, PathBuf)>,
    config: Value,
    seed: u64,
}

#[derive(Default)]
struct StageResult {
    counts: BTreeMap<String, u64>,
    extra: BTreeMap<String, Value>,
}

impl StageResult {
    fn count(&mut self, key: &str, value: usize) {
        self.counts.insert(key.to_string(), value as u64);
    }

    fn note(&mut self, key: &str, value: impl Serialize) -> Result<()> {
        self.extra
            .insert(key.to_string(), serde_json::to_value(value)?);
        Ok(())
    }
}

struct EncoderSetup {
    raw: Arc<dyn Encoder>,
    cache: Arc<VectorCache>,
    cache_path: Option<PathBuf>,
}

impl EncoderSetup {
    fn cached(&self) -> Result<Arc<dyn Encoder>> {
        Ok(Arc::new(CachedEncoder::new(
            self.raw.clone(),
            self.cache.clone(),
        )?))
    }

    fn save(&self) -> Result<()> {
        if let Some(path) = &self.cache_path {
            fs::create_dir_all(path.parent().unwrap_or(Path::new(".")))?;
            self.cache.save(path)?;
        }
        Ok(())
    }
}

pub struct Pipeline {
    config: PipelineConfig,
    paths: WorkPaths,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        if config.offline && config.embedding.kind == EncoderKind::Remote {
            return Err(PipelineError::Offline(
                "the remote embedding encoder is configured".into(),
            ));
        }
        let paths = WorkPaths::new(&config.work_dir);
        Ok(Pipeline { config, paths })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn paths(&self) -> &WorkPaths {
        &self.paths
    }

    pub fn manifest(&self, stage: Stage) -> Result<Option<StageManifest>> {
        let path = self.paths.manifest(stage);
        if !path.exists() {
            return Ok(None);
        }
        Ok(Some(serde_json::from_reader(open(&path)?)?))
    }

    fn provider_kind(&self) -> ProviderKind {
        if self.config.offline {
            ProviderKind::Offline
        } else {
            self.config.definitions.provider
        }
    }

    fn selection_dataset(&self) -> Option<&DatasetConfig> {
        self.config
            .evaluation
            .selection
            .as_deref()
            .and_then(|name| self.config.evaluation.dataset(name))
    }

    fn plan(&self, stage: Stage) -> Plan {
        let p = &self.paths;
        let c = &self.config;
        let produced = |role, what, path: PathBuf, producer| Input {
            role,
            what,
            path,
            producer: Some(producer),
            required: true,
        };
        let filtered = || {
            produced(
                "ontology",
                "filtered ontology",
                p.filtered(),
                Stage::FilterSynonyms,
            )
        };
        let definitions = || {
            produced(
                "definitions",
                "definition store",
                p.definitions(),
                Stage::GenDefinitions,
            )
        };
        let embedding = json!({
            "kind": c.embedding.kind,
            "dimension": c.embedding.dimension,
            "hash_seed": c.embedding.hash_seed,
            "model": c.embedding.model,
            "vectors": c.embedding.vectors,
        });
        match stage {
            Stage::Ingest => Plan {
                inputs: vec![Input {
                    role: "source",
                    what: "source ontology",
                    path: c.ingest.ontology.clone(),
                    producer: None,
                    required: true,
                }],
                outputs: vec![
                    ("ontology", p.ontology()),
                    ("stats_json", p.ontology_stats().0),
                    ("stats_txt", p.ontology_stats().1),
                ],
                config: json!({ "format": c.ingest.format }),
                seed: c.seed,
            },
            Stage::FilterSynonyms => Plan {
                inputs: vec![produced(
                    "ontology",
                    "ingested ontology",
                    p.ontology(),
                    Stage::Ingest,
                )],
                outputs: vec![
                    ("ontology", p.filtered()),
                    ("stats_json", p.filtered_stats().0),
                    ("stats_txt", p.filtered_stats().1),
                ],
                config: json!({ "seed": c.filter_seed() }),
                seed: c.filter_seed(),
            },
            Stage::GenDefinitions => {
                let kind = self.provider_kind();
                let chat = (kind == ProviderKind::Chat).then(|| {
                    json!({ "model": c.definitions.chat.model, "decoding": c.definitions.chat.decoding })
                });
                Plan {
                    inputs: vec![filtered()],
                    outputs: vec![("definitions", p.definitions())],
                    config: json!({ "provider": kind, "chat": chat }),
                    seed: c.seed,
                }
            }
            Stage::GenPairs => {
                let mut outputs = vec![("pairs", p.pairs())];
                if c.pairs.variant_pairs {
                    outputs.push(("variant_pairs", p.variant_pairs()));
                }
                Plan {
                    inputs: vec![filtered(), definitions()],
                    outputs,
                    config: serde_json::to_value(c.pairs).unwrap_or_default(),
                    seed: c.seed,
                }
            }
            Stage::MineNegatives => Plan {
                inputs: vec![
                    filtered(),
                    definitions(),
                    produced("pairs", "pair file", p.pairs(), Stage::GenPairs),
                ],
                outputs: vec![("samples", p.samples()), ("report", p.mining_report())],
                config: json!({
                    "embedding": embedding,
                    "k": c.mining.k,
                    "include_variants": c.mining.include_variants,
                }),
                seed: c.seed,
            },
            Stage::Train => {
                let mut inputs = vec![produced(
                    "samples",
                    "sample file",
                    p.samples(),
                    Stage::MineNegatives,
                )];
                if let Some(sel) = self.selection_dataset() {
                    inputs.push(Input {
                        role: "selection",
                        what: "selection dataset",
                        path: sel.path.clone(),
                        producer: None,
                        required: false,
                    });
                }
                Plan {
                    inputs,
                    outputs: vec![("adapter", p.adapter()), ("log", p.train_log())],
                    config: json!({
                        "embedding": embedding,
                        "normalize_output": c.embedding.normalize_output,
                        "train": c.train,
                        "selection": c.evaluation.selection,
                    }),
                    seed: c.train.seed,
                }
            }
            Stage::Evaluate => {
                let mut inputs = vec![produced(
                    "adapter",
                    "adapter checkpoint",
                    p.adapter(),
                    Stage::Train,
                )];
                for d in &c.evaluation.datasets {
                    inputs.push(Input {
                        role: "dataset",
                        what: "evaluation dataset",
                        path: d.path.clone(),
                        producer: None,
                        required: true,
                    });
                    if let Some(s) = &d.subset {
                        inputs.push(Input {
                            role: "subset",
                            what: "subset annotation",
                            path: s.clone(),
                            producer: None,
                            required: true,
                        });
                    }
                }
                Plan {
                    inputs,
                    outputs: vec![
                        ("report_json", p.report_json()),
                        ("report_txt", p.report_txt()),
                    ],
                    config: json!({ "embedding": embedding, "evaluation": c.evaluation }),
                    seed: c.seed,
                }
            }
        }
    }

    /// Runs one stage, or returns its last manifest when nothing changed.
    pub fn run_stage(&self, stage: Stage, force: bool) -> Result<StageOutcome> {
        let plan = self.plan(stage);
        let mut inputs = BTreeMap::new();
        for (i, input) in plan.inputs.iter().enumerate() {
            if !input.path.exists() {
                if !input.required {
                    continue;
                }
                return Err(match input.producer {
                    Some(producer) => PipelineError::MissingInput {
                        what: input.what,
                        producer,
                        path: input.path.clone(),
                    },
                    None => PipelineError::MissingExternal {
                        what: input.what,
                        path: input.path.clone(),
                    },
                });
            }
            let key = if plan.inputs.iter().filter(|x| x.role == input.role).count() > 1 {
                format!("{}.{i}", input.role)
            } else {
                input.role.to_string()
            };
            inputs.insert(
                key,
                FileDigest {
                    path: input.path.clone(),
                    sha256: sha256_file(&input.path)?,
                },
            );
        }
        let config_digest = sha256_bytes(
            serde_json::to_string(&json!({
                "stage": stage.name(),
                "version": env!("CARGO_PKG_VERSION"),
                "config": plan.config,
            }))?
            .as_bytes(),
        );

        if !force {
            if let Some(previous) = self.manifest(stage)? {
                if previous.config_digest == config_digest
                    && previous.inputs == inputs
                    && self.outputs_intact(&previous, &plan)?
                {
                    return Ok(StageOutcome {
                        manifest: previous,
                        skipped: true,
                    });
                }
            }
        }

        fs::create_dir_all(self.paths.root())?;
        let started = Instant::now();
        let result = match stage {
            Stage::Ingest => self.ingest()?,
            Stage::FilterSynonyms => self.filter_synonyms()?,
            Stage::GenDefinitions => self.gen_definitions()?,
            Stage::GenPairs => self.gen_pairs()?,
            Stage::MineNegatives => self.mine_negatives()?,
            Stage::Train => self.train()?,
            Stage::Evaluate => self.evaluate()?,
        };
        let mut outputs = BTreeMap::new();
        for (role, path) in &plan.outputs {
            outputs.insert(
                role.to_string(),
                FileDigest {
                    path: path.clone(),
                    sha256: sha256_file(path)?,
                },
            );
        }
        let manifest = StageManifest {
            stage: stage.name().to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: plan.seed,
            config_digest,
            inputs,
            outputs,
            counts: result.counts,
            extra: result.extra,
            wall_time_ms: started.elapsed().as_millis() as u64,
        };
        write_json(&self.paths.manifest(stage), &manifest)?;
        Ok(StageOutcome {
            manifest,
            skipped: false,
        })
    }

    fn outputs_intact(&self, manifest: &StageManifest, plan: &Plan) -> Result<bool> {
        if manifest.outputs.len() != plan.outputs.len() {
            return Ok(false);
        }
        for (role, path) in &plan.outputs {
            match manifest.outputs.get(*role) {
                Some(d) if d.path == *path && path.exists() => {
                    if sha256_file(path)? != d.sha256 {
                        return Ok(false);
                    }
                }
                _ => return Ok(false),
            }
        }
        Ok(true)
    }

    /// Every stage in order, then the evaluation summary.
    pub fn run_all(&self, force: bool) -> Result<PipelineReport> {
        let mut stages = Vec::new();
        let mut remote_provider_calls = 0;
        for stage in Stage::ALL {
            let outcome = self.run_stage(stage, force)?;
            if stage == Stage::GenDefinitions && !outcome.skipped {
                remote_provider_calls = outcome
                    .manifest
                    .counts
                    .get("remote_provider_calls")
                    .copied()
                    .unwrap_or(0);
            }
            stages.push(outcome);
        }
        let evaluation = serde_json::from_reader(open(&self.paths.report_json())?)?;
        Ok(PipelineReport {
            stages,
            evaluation,
            remote_provider_calls,
        })
    }

    /// Stats of the filtered ontology, or of the ingested one before
    /// filtering.
    pub fn stats(&self) -> Result<OntologyStats> {
        for path in [self.paths.filtered(), self.paths.ontology()] {
            if path.exists() {
                return Ok(load_internal(&path)?.stats());
            }
        }
        Err(PipelineError::MissingInput {
            what: "ingested ontology",
            producer: Stage::Ingest,
            path: self.paths.ontology(),
        })
    }

    fn encoder(&self) -> Result<EncoderSetup> {
        let e = &self.config.embedding;
        let raw: Arc<dyn Encoder> = match e.kind {
            EncoderKind::Hash => Arc::new(HashEncoder::new(e.dimension, e.hash_seed)?),
            EncoderKind::Remote => {
                if self.config.offline {
                    return Err(PipelineError::Offline(
                        "the remote embedding encoder is configured".into(),
                    ));
                }
                let endpoint = HttpEndpoint::new(
                    e.base_url.clone(),
                    std::env::var(&e.api_key_env).ok(),
                    e.timeout(),
                    e.retry,
                );
                Arc::new(RemoteEncoder::new(endpoint, e.model.clone(), e.dimension))
            }
            EncoderKind::Precomputed => {
                let path = e.vectors.as_ref().expect("validated");
                if !path.exists() {
                    return Err(PipelineError::MissingExternal {
                        what: "precomputed vector file",
                        path: path.clone(),
                    });
                }
                let pre = PrecomputedEncoder::load(path)?;
                let dim = pre.dimension();
                return Ok(EncoderSetup {
                    raw: Arc::new(pre),
                    cache: Arc::new(VectorCache::new(dim)),
                    cache_path: None,
                });
            }
        };
        let path = self.paths.vector_cache(&raw.name());
        let cache = VectorCache::open_or_new(&path, raw.dimension())?;
        Ok(EncoderSetup {
            raw,
            cache: Arc::new(cache),
            cache_path: Some(path),
        })
    }

    fn ingest(&self) -> Result<StageResult> {
        let format: OntologyFormat = self.config.ingest.format()?;
        let ontology = parse_ontology(open(&self.config.ingest.ontology)?, format)?;
        write_ontology(
            &ontology,
            &self.paths.ontology(),
            self.paths.ontology_stats(),
        )?;
        let stats = ontology.stats();
        let mut r = StageResult::default();
        r.count("concepts", stats.concepts);
        r.count("synonyms", stats.synonyms);
        r.count("is_a_edges", stats.is_a_edges);
        r.count("concepts_with_definitions", stats.concepts_with_definitions);
        Ok(r)
    }

    fn filter_synonyms(&self) -> Result<StageResult> {
        let ontology = load_internal(&self.paths.ontology())?;
        let filtered = ontology.normalized(self.config.filter_seed())?;
        write_ontology(
            &filtered,
            &self.paths.filtered(),
            self.paths.filtered_stats(),
        )?;
        let mut r = StageResult::default();
        r.count("concepts", filtered.len());
        r.count("synonyms_before", ontology.stats().synonyms);
        r.count("synonyms_after", filtered.stats().synonyms);
        Ok(r)
    }

    fn gen_definitions(&self) -> Result<StageResult> {
        let ontology = load_internal(&self.paths.filtered())?;
        let provider: Box<dyn DefinitionProvider> = match self.provider_kind() {
            ProviderKind::Offline => Box::new(OfflineProvider::new(&ontology)),
            ProviderKind::Chat => {
                Box::new(ChatCompletionProvider::new(&self.config.definitions.chat))
            }
        };
        let cache_path = self.paths.generation_cache();
        fs::create_dir_all(cache_path.parent().unwrap_or(Path::new(".")))?;
        let cache = GenerationCache::open(&cache_path)?;
        let outcome = generate_definitions(
            &ontology,
            provider.as_ref(),
            &cache,
            GenerationOptions {
                concurrency: self.config.definitions.concurrency,
            },
        )?;
        write_atomic(&self.paths.definitions(), |w| {
            Ok(write_store(&outcome.records, w)?)
        })?;
        let mut r = StageResult::default();
        r.count("records", outcome.records.len());
        r.count(
            "real",
            outcome
                .records
                .iter()
                .filter(|d| d.provenance == Provenance::Real)
                .count(),
        );
        r.count("synthetic", outcome.synthetic_count());
        r.count("failures", outcome.failures.len());
        r.count("provider_calls", outcome.provider_calls);
        r.count("cache_hits", outcome.cache_hits);
        r.count(
            "remote_provider_calls",
            if provider.is_remote() {
                outcome.provider_calls
            } else {
                0
            },
        );
        r.note("model", provider.model_tag())?;
        r.note("failures", &outcome.failures)?;
        Ok(r)
    }

    fn gen_pairs(&self) -> Result<StageResult> {
        let ontology = load_internal(&self.paths.filtered())?;
        let definitions = read_store(open(&self.paths.definitions())?)?;
        let outcome = generate_pairs(&ontology, &definitions, self.config.pairs);
        write_atomic(&self.paths.pairs(), |w| Ok(write_pairs(&outcome.pairs, w)?))?;
        if self.config.pairs.variant_pairs {
            write_atomic(&self.paths.variant_pairs(), |w| {
                Ok(write_pairs(&outcome.variant_pairs, w)?)
            })?;
        }
        let mut r = StageResult::default();
        r.count("pairs", outcome.pairs.len());
        r.count("variant_pairs", outcome.variant_pairs.len());
        r.count("eligible_definitions", outcome.eligible_definitions);
        r.note("warnings", &outcome.warnings)?;
        Ok(r)
    }

    fn mine_negatives(&self) -> Result<StageResult> {
        let ontology = load_internal(&self.paths.filtered())?;
        let mut definitions: Vec<DefinitionRecord> = read_store(open(&self.paths.definitions())?)?;
        let pairs = read_pairs(open(&self.paths.pairs())?)?;
        if self.config.mining.include_variants {
            definitions.extend(
                pairs
                    .iter()
                    .filter(|p| p.positive.provenance == Provenance::Substituted)
                    .map(|p| p.positive.clone()),
            );
        }
        let setup = self.encoder()?;
        let (index, index_report) = build_candidate_index(
            &definitions,
            setup.raw.as_ref(),
            &setup.cache,
            ontology.taxonomy_arc(),
            IndexOptions {
                include_variants: self.config.mining.include_variants,
            },
        )?;
        let outcome = mine_all(
            &pairs,
            &index,
            setup.raw.as_ref(),
            &setup.cache,
            MiningOptions {
                k: self.config.mining.k,
                threads: self.config.mining.threads,
            },
        )?;
        setup.save()?;
        write_atomic(&self.paths.samples(), |w| {
            Ok(write_samples(&outcome.samples, w)?)
        })?;
        write_json(&self.paths.mining_report(), &outcome.report)?;
        let mut r = StageResult::default();
        r.count("pairs", outcome.report.pairs);
        r.count("samples", outcome.report.samples);
        r.count("index_size", outcome.report.index_size);
        r.count(
            "new_encodes",
            index_report.new_encodes + outcome.report.new_encodes,
        );
        r.count("shortfalls", outcome.report.warnings.len());
        r.note("encoder", setup.raw.name())?;
        Ok(r)
    }

    fn train(&self) -> Result<StageResult> {
        let samples = read_samples(open(&self.paths.samples())?)?;
        let setup = self.encoder()?;
        let base = setup.cached()?;
        let dim = base.dimension();
        let adapter = AdapterEncoder::new(
            base,
            AdapterWeights::identity(dim, self.config.embedding.normalize_output),
        )?;
        let mut warnings = Vec::new();
        let selection: Option<Vec<StsPair>> = match self.selection_dataset() {
            None => None,
            Some(d) => match open(&d.path).and_then(|f| Ok(load_sts(f)?)) {
                Ok(set) => Some(set),
                Err(e) => {
                    warnings.push(format!("selection dataset {} unreadable: {e}", d.name));
                    None
                }
            },
        };
        let outcome = train(&samples, adapter, &self.config.train, selection.as_deref())?;
        setup.save()?;
        warnings.extend(outcome.warnings.iter().cloned());
        write_atomic(&self.paths.adapter(), |w| {
            Ok(outcome.adapter.params().write_checkpoint(w)?)
        })?;
        write_atomic(&self.paths.train_log(), |w| Ok(write_log(&outcome.log, w)?))?;
        let mut r = StageResult::default();
        r.count("samples", samples.len());
        r.count("steps", outcome.steps);
        r.count("epochs", outcome.epoch_scores.len());
        r.count("selected_epoch", outcome.selected_epoch);
        r.note("learning_rate", self.config.train.learning_rate)?;
        r.note("parity_learning_rate", TrainerConfig::PARITY_LEARNING_RATE)?;
        r.note("epoch_scores", &outcome.epoch_scores)?;
        r.note("warnings", &warnings)?;
        Ok(r)
    }

    fn evaluate(&self) -> Result<StageResult> {
        let setup = self.encoder()?;
        let base = setup.cached()?;
        let weights = AdapterWeights::read_checkpoint(open(&self.paths.adapter())?)?;
        let adapter = AdapterEncoder::new(base.clone(), weights)?;
        let model = self
            .config
            .evaluation
            .model_name
            .clone()
            .unwrap_or_else(|| setup.raw.name());
        let mut orig = Vec::new();
        let mut kinf = Vec::new();
        for d in &self.config.evaluation.datasets {
            let data = load_sts(open(&d.path)?)?;
            let subset = match &d.subset {
                Some(path) => Some(load_subset(open(path)?, &d.name, &data)?),
                None => None,
            };
            orig.push(evaluate(base.as_ref(), &d.name, &data, subset.as_ref())?);
            kinf.push(evaluate(&adapter, &d.name, &data, subset.as_ref())?);
        }
        setup.save()?;
        let mut notes = Vec::new();
        if let Some(sel) = self.selection_dataset() {
            notes.push(format!(
                "{} picks the training epoch and is also evaluated here",
                sel.name
            ));
        }
        if self.config.evaluation.datasets.is_empty() {
            notes.push("no evaluation datasets configured".to_string());
        }
        let summary = EvaluationSummary {
            model: model.clone(),
            rows: vec![
                TableRow {
                    model: model.clone(),
                    variant: "orig".into(),
                    reports: orig,
                },
                TableRow {
                    model,
                    variant: "kinf".into(),
                    reports: kinf,
                },
            ],
            notes,
        };
        write_json(&self.paths.report_json(), &summary)?;
        write_atomic(&self.paths.report_txt(), |w| {
            Ok(w.write_all(summary.render().as_bytes())?)
        })?;
        let mut r = StageResult::default();
        r.count("datasets", self.config.evaluation.datasets.len());
        Ok(r)
    }
}

fn load_internal(path: &Path) -> Result<Ontology> {
    Ok(parse_ontology(open(path)?, OntologyFormat::InternalJson)?)
}

fn write_ontology(ontology: &Ontology, path: &Path, stats: (PathBuf, PathBuf)) -> Result<()> {
    write_atomic(path, |w| Ok(ontology.write_internal(w)?))?;
    write_json(&stats.0, &ontology.stats())?;
    write_atomic(&stats.1, |w| Ok(write!(w, "{}", ontology.stats())?))
}

/// Runs every stage of `config` in order.
pub fn run_pipeline(config: PipelineConfig) -> Result<PipelineReport> {
    Pipeline::new(config)?.run_all(false)
}

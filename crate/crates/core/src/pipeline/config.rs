use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{PipelineError, Result};
use crate::definitions::ChatCompletionConfig;
use crate::ontology::OntologyFormat;
use crate::pairgen::PairOptions;
use crate::service::RetryPolicy;
use crate::trainer::TrainerConfig;

pub const DEFAULT_SEED: u64 = 42;

fn default_work_dir() -> PathBuf {
    PathBuf::from("work")
}

fn default_seed() -> u64 {
    DEFAULT_SEED
}

/// Everything a pipeline run needs. Relative paths are resolved against the
/// directory holding the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default = "default_work_dir")]
    pub work_dir: PathBuf,
    /// Default for every stage seed not set explicitly.
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Forces the offline definition provider and forbids remote encoders.
    #[serde(default)]
    pub offline: bool,
    pub ingest: IngestConfig,
    #[serde(default)]
    pub filter: FilterConfig,
    #[serde(default)]
    pub definitions: DefinitionsConfig,
    #[serde(default)]
    pub pairs: PairOptions,
    #[serde(default)]
    pub embedding: EmbeddingConfig,
    #[serde(default)]
    pub mining: MiningConfig,
    #[serde(default)]
    pub train: TrainerConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestConfig {
    pub ontology: PathBuf,
    /// `internal` (line-delimited JSON) or `obo-graphs-json`.
    #[serde(default = "default_format")]
    pub format: String,
}

fn default_format() -> String {
    "internal".to_string()
}

impl IngestConfig {
    pub fn format(&self) -> Result<OntologyFormat> {
        OntologyFormat::from_str(&self.format).map_err(PipelineError::Config)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    #[default]
    Offline,
    Chat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DefinitionsConfig {
    pub provider: ProviderKind,
    pub concurrency: usize,
    pub chat: ChatCompletionConfig,
}

impl Default for DefinitionsConfig {
    fn default() -> Self {
        DefinitionsConfig {
            provider: ProviderKind::Offline,
            concurrency: 4,
            chat: ChatCompletionConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    #[default]
    Hash,
    Remote,
    Precomputed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub kind: EncoderKind,
    pub dimension: usize,
    pub hash_seed: u64,
    /// Normalize adapter outputs.
    pub normalize_output: bool,
    pub base_url: String,
    pub model: String,
    pub api_key_env: String,
    pub timeout_secs: u64,
    pub retry: RetryPolicy,
    /// Vector cache file for the `precomputed` kind.
    pub vectors: Option<PathBuf>,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            kind: EncoderKind::Hash,
            dimension: 256,
            hash_seed: 0,
            normalize_output: true,
            base_url: "https://api.openai.com/v1".to_string(),
            model: "text-embedding-3-small".to_string(),
            api_key_env: "OPENAI_API_KEY".to_string(),
            timeout_secs: 60,
            retry: RetryPolicy::default(),
            vectors: None,
        }
    }
}

impl EmbeddingConfig {
    pub fn timeout(&self) -> Duration {
        Duration::from_secs(self.timeout_secs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MiningConfig {
    pub k: usize,
    pub threads: Option<usize>,
    pub include_variants: bool,
}

impl Default for MiningConfig {
    fn default() -> Self {
        MiningConfig {
            k: 1,
            threads: None,
            include_variants: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub name: String,
    pub path: PathBuf,
    /// Sidecar of subset pair ids.
    #[serde(default)]
    pub subset: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Row label in the report; defaults to the encoder name.
    pub model_name: Option<String>,
    pub datasets: Vec<DatasetConfig>,
    /// Dataset used to pick the best training epoch.
    pub selection: Option<String>,
}

impl EvaluationConfig {
    pub fn dataset(&self, name: &str) -> Option<&DatasetConfig> {
        self.datasets.iter().find(|d| d.name == name)
    }
}

impl PipelineConfig {
    /// Minimal config over one ontology file, everything else defaulted.
    pub fn new(ontology: impl Into<PathBuf>, work_dir: impl Into<PathBuf>) -> Self {
        PipelineConfig {
            work_dir: work_dir.into(),
            seed: DEFAULT_SEED,
            offline: false,
            ingest: IngestConfig {
                ontology: ontology.into(),
                format: default_format(),
            },
            filter: FilterConfig::default(),
            definitions: DefinitionsConfig::default(),
            pairs: PairOptions::default(),
            embedding: EmbeddingConfig::default(),
            mining: MiningConfig::default(),
            train: TrainerConfig {
                seed: DEFAULT_SEED,
                ..TrainerConfig::default()
            },
            evaluation: EvaluationConfig::default(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    /// Parses a TOML config. A `[train]` table without its own `seed`
    /// inherits the top-level one.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let raw: toml::Table =
            toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        let train_seed_set = raw
            .get("train")
            .and_then(toml::Value::as_table)
            .is_some_and(|t| t.contains_key("seed"));
        let mut config: PipelineConfig =
            toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        if !train_seed_set {
            config.train.seed = config.seed;
        }
        config.resolve_paths(base_dir);
        config.validate()?;
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.work_dir);
        fix(&mut self.ingest.ontology);
        if let Some(v) = self.embedding.vectors.as_mut() {
            fix(v);
        }
        for d in &mut self.evaluation.datasets {
            fix(&mut d.path);
            if let Some(s) = d.subset.as_mut() {
                fix(s);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.ingest.format()?;
        self.train
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        if self.definitions.concurrency == 0 {
            return Err(PipelineError::Config(
                "definitions.concurrency must be positive".into(),
            ));
        }
        if self.embedding.kind == EncoderKind::Precomputed && self.embedding.vectors.is_none() {
            return Err(PipelineError::Config(
                "embedding.vectors is required for precomputed embeddings".into(),
            ));
        }
        if let Some(sel) = &self.evaluation.selection {
            if self.evaluation.dataset(sel).is_none() {
                return Err(PipelineError::Config(format!(
                    "selection dataset {sel:?} is not listed under evaluation.datasets"
                )));
            }
        }
        let mut names: Vec<&str> = self
            .evaluation
            .datasets
            .iter()
            .map(|d| d.name.as_str())
            .collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(PipelineError::Config(
                "duplicate evaluation dataset name".into(),
            ));
        }
        Ok(())
    }

    /// Overrides every seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.filter.seed = Some(seed);
        self.train.seed = seed;
        self
    }

    pub fn with_offline(mut self, offline: bool) -> Self {
        self.offline |= offline;
        self
    }

    pub fn filter_seed(&self) -> u64 {
        self.filter.seed.unwrap_or(self.seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_and_defaults() {
        let config = PipelineConfig::from_toml(
            "seed = 7\n[ingest]\nontology = \"toy.jsonl\"\n",
            Path::new("/data"),
        )
        .unwrap();
        assert_eq!(config.ingest.ontology, PathBuf::from("/data/toy.jsonl"));
        assert_eq!(config.work_dir, PathBuf::from("/data/work"));
        assert_eq!(config.train.seed, 7);
        assert_eq!(config.filter_seed(), 7);
        assert_eq!(config.train.batch_size, 24);
        assert_eq!(config.embedding.kind, EncoderKind::Hash);
    }

    #[test]
    fn explicit_train_seed_wins() {
        let text = "seed = 7\n[ingest]\nontology = \"a\"\n[train]\nseed = 9\nlearning_rate = 0.5\n";
        let config = PipelineConfig::from_toml(text, Path::new(".")).unwrap();
        assert_eq!(config.train.seed, 9);
        assert_eq!(config.train.learning_rate, 0.5);
        assert_eq!(config.clone().with_seed(3).train.seed, 3);
    }

    #[test]
    fn rejects_bad_configs() {
        let bad = [
            "[ingest]\nontology = \"a\"\nformat = \"owl\"\n",
            "[ingest]\nontology = \"a\"\n[train]\ntemperature = 0\n",
            "[ingest]\nontology = \"a\"\n[embedding]\nkind = \"precomputed\"\n",
            "[ingest]\nontology = \"a\"\n[evaluation]\nselection = \"BIOSSES\"\n",
            "[ingest]\nontology = \"a\"\nunknown = 1\n",
            "seed = 1\n",
        ];
        for text in bad {
            assert!(
                matches!(
                    PipelineConfig::from_toml(text, Path::new(".")),
                    Err(PipelineError::Config(_))
                ),
                "{text}"
            );
        }
    }

    #[test]
    fn datasets_resolve_relative_to_config() {
        let text = r#"
[ingest]
ontology = "o.jsonl"
[evaluation]
selection = "BIOSSES"
[[evaluation.datasets]]
name = "BIOSSES"
path = "sts/biosses.tsv"
subset = "sts/biosses.dis"
"#;
        let config = PipelineConfig::from_toml(text, Path::new("/cfg")).unwrap();
        let d = config.evaluation.dataset("BIOSSES").unwrap();
        assert_eq!(d.path, PathBuf::from("/cfg/sts/biosses.tsv"));
        assert_eq!(d.subset.as_deref(), Some(Path::new("/cfg/sts/biosses.dis")));
    }
}

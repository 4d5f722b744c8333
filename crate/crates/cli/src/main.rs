use std::fs::File;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use ontoinfuse::ontology::{parse_ontology, OntologyFormat};
use ontoinfuse::pipeline::{Pipeline, PipelineConfig, ProviderKind, Stage, StageOutcome};

/// Ontology-driven knowledge infusion for text embeddings.
#[derive(Debug, Parser)]
#[command(name = "ontoinfuse", version)]
struct Cli {
    /// Pipeline config file (TOML).
    #[arg(long, global = true, default_value = "ontoinfuse.toml")]
    config: PathBuf,
    /// Override every seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Offline providers only; remote services are never contacted.
    #[arg(long, global = true)]
    offline: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct StageArgs {
    /// Rerun even when inputs and config are unchanged.
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Provider {
    Offline,
    Chat,
}

#[derive(Debug, Args)]
struct DefinitionArgs {
    #[arg(long, value_enum)]
    provider: Option<Provider>,
    /// Maximum provider requests in flight.
    #[arg(long)]
    concurrency: Option<usize>,
    /// Retries per request after the first attempt.
    #[arg(long)]
    retries: Option<u32>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse the source ontology into the internal format.
    Ingest(StageArgs),
    /// Clean and deduplicate concept synonyms.
    FilterSynonyms(StageArgs),
    /// Collect real and generated concept definitions.
    GenDefinitions {
        #[command(flatten)]
        stage: StageArgs,
        #[command(flatten)]
        definitions: DefinitionArgs,
    },
    /// Build positive pairs by synonym substitution.
    GenPairs(StageArgs),
    /// Attach taxonomy-aware hard negatives to every pair.
    MineNegatives(StageArgs),
    /// Fine-tune the adapter.
    Train(StageArgs),
    /// Score the base encoder and the adapter on the configured datasets.
    Evaluate(StageArgs),
    /// Run every stage in order.
    Pipeline {
        #[command(flatten)]
        stage: StageArgs,
        #[command(flatten)]
        definitions: DefinitionArgs,
    },
    /// Print ontology statistics.
    Stats {
        /// Ontology file to inspect instead of the pipeline's work directory.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Format of --input: internal or obo-graphs-json.
        #[arg(long, default_value = "internal")]
        format: String,
        #[arg(long)]
        json: bool,
    },
}

fn load_config(cli: &Cli, definitions: Option<&DefinitionArgs>) -> Result<PipelineConfig> {
    let mut config = PipelineConfig::load(&cli.config)
        .with_context(|| format!("loading {}", cli.config.display()))?;
    if let Some(seed) = cli.seed {
        config = config.with_seed(seed);
    }
    config = config.with_offline(cli.offline);
    if let Some(d) = definitions {
        if let Some(p) = d.provider {
            config.definitions.provider = match p {
                Provider::Offline => ProviderKind::Offline,
                Provider::Chat => ProviderKind::Chat,
            };
        }
        if let Some(c) = d.concurrency {
            config.definitions.concurrency = c;
        }
        if let Some(r) = d.retries {
            config.definitions.chat.retry.max_retries = r;
        }
    }
    config.validate()?;
    Ok(config)
}

fn print_outcome(outcome: &StageOutcome) {
    let m = &outcome.manifest;
    let counts: Vec<String> = m.counts.iter().map(|(k, v)| format!("{k}={v}")).collect();
    if outcome.skipped {
        println!("{:<16} up to date   {}", m.stage, counts.join(" "));
    } else {
        println!(
            "{:<16} {:>6} ms    {}",
            m.stage,
            m.wall_time_ms,
            counts.join(" ")
        );
    }
    if let Some(warnings) = m.extra.get("warnings").and_then(|w| w.as_array()) {
        for w in warnings {
            println!(
                "  warning: {}",
                w.as_str().map_or_else(|| w.to_string(), str::to_string)
            );
        }
    }
}

fn run_single(
    cli: &Cli,
    stage: Stage,
    args: &StageArgs,
    definitions: Option<&DefinitionArgs>,
) -> Result<()> {
    let pipeline = Pipeline::new(load_config(cli, definitions)?)?;
    let outcome = pipeline
        .run_stage(stage, args.force)
        .with_context(|| format!("stage {stage} failed"))?;
    print_outcome(&outcome);
    if stage == Stage::Evaluate {
        print!(
            "{}",
            std::fs::read_to_string(pipeline.paths().report_txt())?
        );
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Ingest(a) => run_single(cli, Stage::Ingest, a, None),
        Command::FilterSynonyms(a) => run_single(cli, Stage::FilterSynonyms, a, None),
        Command::GenDefinitions { stage, definitions } => {
            run_single(cli, Stage::GenDefinitions, stage, Some(definitions))
        }
        Command::GenPairs(a) => run_single(cli, Stage::GenPairs, a, None),
        Command::MineNegatives(a) => run_single(cli, Stage::MineNegatives, a, None),
        Command::Train(a) => run_single(cli, Stage::Train, a, None),
        Command::Evaluate(a) => run_single(cli, Stage::Evaluate, a, None),
        Command::Pipeline { stage, definitions } => {
            let pipeline = Pipeline::new(load_config(cli, Some(definitions))?)?;
            for s in Stage::ALL {
                let outcome = pipeline
                    .run_stage(s, stage.force)
                    .with_context(|| format!("stage {s} failed"))?;
                print_outcome(&outcome);
            }
            println!();
            print!(
                "{}",
                std::fs::read_to_string(pipeline.paths().report_txt())?
            );
            Ok(())
        }
        Command::Stats {
            input,
            format,
            json,
        } => {
            let stats = match input {
                Some(path) => {
                    let format: OntologyFormat = format.parse().map_err(anyhow::Error::msg)?;
                    let file =
                        File::open(path).with_context(|| format!("opening {}", path.display()))?;
                    parse_ontology(file, format)?.stats()
                }
                None => Pipeline::new(load_config(cli, None)?)?.stats()?,
            };
            if *json {
                println!("{}", serde_json::to_string_pretty(&stats)?);
            } else {
                print!("{stats}");
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

//! Operator CLI: load, sample, derive, synthesize, export, verify, stats.
//!
//! Configuration precedence is flags > config file (`--config`, TOML) >
//! environment (LLM endpoint only). Exit codes: 0 success, 1 validation
//! failure, 2 integrity failure. Errors print as `error[CODE]: message`.

use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use kg2tool::error::{Error, ErrorClass, Result};
use kg2tool::instruction::{ExportFormat, DEFAULT_REVIEW_PROB};
use kg2tool::patterns::{PatternTag, ALL_PATTERNS};
use kg2tool::pipeline::{
    run_gen_apis, run_sample, run_stats, run_synth, run_verify, LlmSettings, SynthOptions,
};
use kg2tool::sampler::DEFAULT_ANSWER_CAP;
use kg2tool::translate::TranslationMode;

#[derive(Parser)]
#[command(
    name = "kg2tool",
    version,
    about = "Synthesizes tool-use instruction data from a knowledge graph"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample instantiated queries and dump them as JSONL
    Sample(SampleArgs),
    /// Derive API descriptors from the graph's relation types
    GenApis(GenApisArgs),
    /// End-to-end synthesis: sample, translate, execute, build, export
    Synth(SynthArgs),
    /// Replay-audit an exported dataset against the knowledge graph
    Verify(VerifyArgs),
    /// Report graph statistics and dataset manifest consistency
    Stats(StatsArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Triple file (TSV: head<TAB>relation<TAB>tail)
    #[arg(long)]
    kg: Option<PathBuf>,
    /// TOML config file; flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct SampleArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Comma-separated pattern tags (default: all 14)
    #[arg(long)]
    patterns: Option<String>,
    /// Samples per pattern
    #[arg(long)]
    per_pattern: Option<usize>,
    /// Master seed (required; there is no wall-clock default)
    #[arg(long)]
    seed: Option<u64>,
    /// Reject samples whose answer set exceeds this size
    #[arg(long)]
    answer_cap: Option<usize>,
    /// Worker threads (default: available parallelism)
    #[arg(long)]
    workers: Option<usize>,
    /// Output JSONL path
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenApisArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// API naming mode
    #[arg(long, value_parser = parse_translator)]
    translator: Option<TranslationMode>,
    /// Output JSONL path
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Comma-separated pattern tags (default: all 14)
    #[arg(long)]
    patterns: Option<String>,
    /// Query–solution pairs per pattern
    #[arg(long)]
    per_pattern: Option<usize>,
    /// Master seed (required; there is no wall-clock default)
    #[arg(long)]
    seed: Option<u64>,
    /// Question and API naming mode
    #[arg(long, value_parser = parse_translator)]
    translator: Option<TranslationMode>,
    /// Distractor tools added to each record's toolset
    #[arg(long)]
    distractors: Option<usize>,
    /// Reject samples whose answer set exceeds this size
    #[arg(long)]
    answer_cap: Option<usize>,
    /// Probability of a review record per step
    #[arg(long)]
    review_prob: Option<f64>,
    /// Export format
    #[arg(long, value_parser = parse_format)]
    format: Option<ExportFormat>,
    /// Output JSONL path (manifest written alongside)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: available parallelism)
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Exported dataset to audit
    #[arg(long)]
    out: Option<PathBuf>,
    /// Export format of the dataset
    #[arg(long, value_parser = parse_format)]
    format: Option<ExportFormat>,
}

#[derive(Args)]
struct StatsArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Exported dataset whose manifest to cross-check (optional)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Export format of the dataset
    #[arg(long, value_parser = parse_format)]
    format: Option<ExportFormat>,
}

fn parse_translator(s: &str) -> std::result::Result<TranslationMode, String> {
    match s {
        "template" => Ok(TranslationMode::Template),
        "llm" => Ok(TranslationMode::Llm),
        other => Err(format!("unknown translator {other:?} (template | llm)")),
    }
}

fn parse_format(s: &str) -> std::result::Result<ExportFormat, String> {
    ExportFormat::from_str(s)
}

/// TOML config file mirroring the flag names.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    kg: Option<PathBuf>,
    patterns: Option<Vec<String>>,
    per_pattern: Option<usize>,
    seed: Option<u64>,
    translator: Option<String>,
    distractors: Option<usize>,
    answer_cap: Option<usize>,
    review_prob: Option<f64>,
    format: Option<String>,
    out: Option<PathBuf>,
    workers: Option<usize>,
    #[serde(default)]
    llm: LlmConfigFile,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct LlmConfigFile {
    base_url: Option<String>,
    model: Option<String>,
    api_key: Option<String>,
    timeout_secs: Option<u64>,
}

fn load_config(path: &Option<PathBuf>) -> Result<ConfigFile> {
    match path {
        None => Ok(ConfigFile::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|source| Error::Io {
                path: p.clone(),
                source,
            })?;
            toml::from_str(&text).map_err(|e| Error::Config {
                field: "config".into(),
                message: e.to_string(),
            })
        }
    }
}

fn require<T>(flag: Option<T>, file: Option<T>, field: &str) -> Result<T> {
    flag.or(file).ok_or_else(|| Error::Config {
        field: field.into(),
        message: "required (set the flag or the config file)".into(),
    })
}

fn parse_patterns(flag: Option<String>, file: Option<Vec<String>>) -> Result<Vec<PatternTag>> {
    let raw: Vec<String> = match (flag, file) {
        (Some(s), _) => s.split(',').map(|p| p.trim().to_string()).collect(),
        (None, Some(v)) => v,
        (None, None) => return Ok(ALL_PATTERNS.to_vec()),
    };
    if raw.len() == 1 && raw[0] == "all" {
        return Ok(ALL_PATTERNS.to_vec());
    }
    raw.iter()
        .map(|p| {
            p.parse::<PatternTag>().map_err(|e| Error::Config {
                field: "patterns".into(),
                message: e,
            })
        })
        .collect()
}

fn parse_translator_opt(
    flag: Option<TranslationMode>,
    file: Option<String>,
) -> Result<TranslationMode> {
    if let Some(t) = flag {
        return Ok(t);
    }
    match file.as_deref() {
        None => Ok(TranslationMode::Template),
        Some(s) => parse_translator(s).map_err(|e| Error::Config {
            field: "translator".into(),
            message: e,
        }),
    }
}

fn parse_format_opt(flag: Option<ExportFormat>, file: Option<String>) -> Result<ExportFormat> {
    if let Some(f) = flag {
        return Ok(f);
    }
    match file.as_deref() {
        None => Ok(ExportFormat::ShareGptJsonl),
        Some(s) => ExportFormat::from_str(s).map_err(|e| Error::Config {
            field: "format".into(),
            message: e,
        }),
    }
}

fn llm_settings(file: LlmConfigFile) -> LlmSettings {
    // Config file beats environment; flags for the endpoint do not exist
    // (secrets stay out of argv).
    let env = LlmSettings::from_env();
    LlmSettings {
        base_url: file.base_url.or(env.base_url),
        model: file.model.or(env.model),
        api_key: file.api_key.or(env.api_key),
        timeout_secs: file.timeout_secs.or(env.timeout_secs),
    }
}

fn default_workers() -> usize {
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
}

fn emit<T: serde::Serialize>(summary: &T) -> Result<()> {
    use std::io::Write;
    let text = serde_json::to_string_pretty(summary)?;
    // Ignore broken pipes so `kg2tool ... | head` exits cleanly.
    let _ = writeln!(std::io::stdout(), "{text}");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Sample(args) => {
            let file = load_config(&args.common.config)?;
            let kg = require(args.common.kg, file.kg, "kg")?;
            let patterns = parse_patterns(args.patterns, file.patterns)?;
            let per_pattern = require(args.per_pattern, file.per_pattern, "per-pattern")?;
            let seed = require(args.seed, file.seed, "seed")?;
            let answer_cap = args
                .answer_cap
                .or(file.answer_cap)
                .unwrap_or(DEFAULT_ANSWER_CAP);
            let workers = args
                .workers
                .or(file.workers)
                .unwrap_or_else(default_workers);
            let out = require(args.out, file.out, "out")?;
            let summary = run_sample(&kg, &patterns, per_pattern, seed, answer_cap, workers, &out)?;
            emit(&summary)
        }
        Command::GenApis(args) => {
            let file = load_config(&args.common.config)?;
            let kg = require(args.common.kg, file.kg, "kg")?;
            let translator = parse_translator_opt(args.translator, file.translator)?;
            let out = require(args.out, file.out, "out")?;
            let llm = llm_settings(file.llm);
            let summary = run_gen_apis(&kg, translator, &llm, None, &out)?;
            emit(&summary)
        }
        Command::Synth(args) => {
            let file = load_config(&args.common.config)?;
            let opts = SynthOptions {
                kg: require(args.common.kg, file.kg, "kg")?,
                patterns: parse_patterns(args.patterns, file.patterns)?,
                per_pattern: require(args.per_pattern, file.per_pattern, "per-pattern")?,
                seed: require(args.seed, file.seed, "seed")?,
                translator: parse_translator_opt(args.translator, file.translator)?,
                distractors: args.distractors.or(file.distractors).unwrap_or(3),
                answer_cap: args
                    .answer_cap
                    .or(file.answer_cap)
                    .unwrap_or(DEFAULT_ANSWER_CAP),
                review_prob: args
                    .review_prob
                    .or(file.review_prob)
                    .unwrap_or(DEFAULT_REVIEW_PROB),
                format: parse_format_opt(args.format, file.format)?,
                out: require(args.out, file.out, "out")?,
                workers: args
                    .workers
                    .or(file.workers)
                    .unwrap_or_else(default_workers),
                llm: llm_settings(file.llm),
            };
            let summary = run_synth(&opts, None)?;
            emit(&summary)
        }
        Command::Verify(args) => {
            let file = load_config(&args.common.config)?;
            let kg = require(args.common.kg, file.kg, "kg")?;
            let dataset = require(args.out, file.out, "out")?;
            let format = parse_format_opt(args.format, file.format)?;
            let summary = run_verify(&kg, &dataset, format)?;
            emit(&summary)
        }
        Command::Stats(args) => {
            let file = load_config(&args.common.config)?;
            let kg = require(args.common.kg, file.kg, "kg")?;
            let format = parse_format_opt(args.format, file.format)?;
            let dataset = args.out.or(file.out);
            let summary = run_stats(&kg, dataset.as_deref().map(|p| (p, format)))?;
            emit(&summary)
        }
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version print normally; usage errors are
            // validation failures.
            if e.use_stderr() {
                eprint!("{e}");
                std::process::exit(1);
            }
            print!("{e}");
            std::process::exit(0);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error[{}]: {}", e.code(), e);
        std::process::exit(match e.class() {
            ErrorClass::Validation => 1,
            ErrorClass::Integrity => 2,
        });
    }
}

//! End-to-end runs: sample → derive → translate → execute → build → export,
//! plus the audit, dump, and stats entry points the CLI exposes.
//!
//! Determinism contract: every randomized stage draws from a stream
//! derived from `(seed, stage, pattern, index)`, work is sharded by
//! pattern and by sample index, and results are merged in input order —
//! so output bytes do not depend on the worker count.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::api::{build_toolset, ApiIndex, Toolkit};
use crate::audit::{audit_records, AuditSummary};
use crate::error::{Error, Result};
use crate::fol::text::format_fol;
use crate::instruction::{
    assemble_dataset, build_records, export, import, Dataset, ExportFormat, InstructionRecord,
    Manifest, QuerySolutionPair,
};
use crate::kg::{KnowledgeGraph, LoadMode};
use crate::llm::{ChatTransport, EndpointConfig, LlmClient};
use crate::patterns::PatternTag;
use crate::rng::derive_indexed_rng;
use crate::sampler::{sample_batch, BatchStats, InstantiatedSample, DEFAULT_ATTEMPT_FACTOR};
use crate::solution::{execute_chain, plan_chain, verify_replay};
use crate::translate::{translate_llm, translate_template, TranslationMode, TranslationRequest};

/// LLM endpoint configuration (flags > config file > environment).
#[derive(Debug, Clone, Default, Serialize)]
pub struct LlmSettings {
    pub base_url: Option<String>,
    pub model: Option<String>,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    pub timeout_secs: Option<u64>,
}

impl LlmSettings {
    pub fn from_env() -> LlmSettings {
        LlmSettings {
            base_url: std::env::var(crate::llm::ENV_BASE_URL).ok(),
            model: std::env::var(crate::llm::ENV_MODEL).ok(),
            api_key: std::env::var(crate::llm::ENV_API_KEY).ok(),
            timeout_secs: std::env::var(crate::llm::ENV_TIMEOUT_SECS)
                .ok()
                .and_then(|s| s.parse().ok()),
        }
    }

    fn timeout(&self) -> std::time::Duration {
        std::time::Duration::from_secs(
            self.timeout_secs
                .unwrap_or(crate::llm::DEFAULT_TIMEOUT_SECS),
        )
    }
}

/// Effective configuration of a synthesis run.
#[derive(Debug, Clone)]
pub struct SynthOptions {
    pub kg: PathBuf,
    pub patterns: Vec<PatternTag>,
    pub per_pattern: usize,
    pub seed: u64,
    pub translator: TranslationMode,
    pub distractors: usize,
    pub answer_cap: usize,
    pub review_prob: f64,
    pub format: ExportFormat,
    pub out: PathBuf,
    pub workers: usize,
    pub llm: LlmSettings,
}

impl SynthOptions {
    pub fn validate(&self) -> Result<()> {
        let fail = |field: &str, message: String| {
            Err(Error::Config {
                field: field.into(),
                message,
            })
        };
        if self.patterns.is_empty() {
            return fail("patterns", "at least one pattern tag is required".into());
        }
        let mut seen = self.patterns.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.patterns.len() {
            return fail("patterns", "duplicate pattern tags".into());
        }
        if self.per_pattern == 0 {
            return fail("per-pattern", "must be at least 1".into());
        }
        if self.answer_cap == 0 {
            return fail("answer-cap", "must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.review_prob) {
            return fail(
                "review-prob",
                format!("{} is not in [0, 1]", self.review_prob),
            );
        }
        if self.workers == 0 {
            return fail("workers", "must be at least 1".into());
        }
        Ok(())
    }

    /// Echo of the effective config for the manifest.
    fn echo(&self) -> serde_json::Value {
        serde_json::json!({
            "kg": self.kg.display().to_string(),
            "patterns": self.patterns.iter().map(|t| t.as_str()).collect::<Vec<_>>(),
            "per_pattern": self.per_pattern,
            "seed": self.seed,
            "translator": self.translator,
            "distractors": self.distractors,
            "answer_cap": self.answer_cap,
            "review_prob": self.review_prob,
            "format": self.format.as_str(),
            "out": self.out.display().to_string(),
            "workers": self.workers,
            "llm": self.llm,
        })
    }
}

#[derive(Debug, Serialize)]
pub struct SynthSummary {
    pub export_path: PathBuf,
    pub manifest_path: PathBuf,
    pub dataset_sha256: String,
    pub record_count: usize,
    pub sampling: BTreeMap<String, BatchStats>,
    #[serde(skip)]
    pub manifest: Manifest,
}

fn build_client(
    settings: &LlmSettings,
    transport: Option<Arc<dyn ChatTransport>>,
) -> Result<LlmClient> {
    match transport {
        Some(t) => {
            let endpoint = EndpointConfig {
                base_url: settings
                    .base_url
                    .clone()
                    .unwrap_or_else(|| "test://".into()),
                model: settings.model.clone().unwrap_or_else(|| "test".into()),
                api_key: settings.api_key.clone(),
                timeout: settings.timeout(),
            };
            Ok(LlmClient::with_transport(endpoint, t))
        }
        None => LlmClient::from_parts(
            settings.base_url.clone(),
            settings.model.clone(),
            settings.api_key.clone(),
            settings.timeout(),
        ),
    }
}

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config {
            field: "workers".into(),
            message: e.to_string(),
        })
}

pub fn manifest_path_for(out: &Path) -> PathBuf {
    PathBuf::from(format!("{}.manifest.json", out.display()))
}

/// Full synthesis: sample, translate, execute, verify, build, export.
///
/// `transport` substitutes the HTTP layer (tests inject counting doubles);
/// in template mode no client is ever constructed, so offline runs make
/// zero network calls by construction.
pub fn run_synth(
    opts: &SynthOptions,
    transport: Option<Arc<dyn ChatTransport>>,
) -> Result<SynthSummary> {
    opts.validate()?;
    let (g, _) = KnowledgeGraph::load_triples(&opts.kg, LoadMode::Strict)?;
    let client = match opts.translator {
        TranslationMode::Template => None,
        TranslationMode::Llm => Some(build_client(&opts.llm, transport)?),
    };
    let toolkit = Toolkit::derive(&g, client.as_ref());
    let api_index = ApiIndex::from_toolkit(&toolkit);

    let pool = thread_pool(opts.workers)?;
    let per_pattern: Vec<(PatternTag, Vec<InstructionRecord>, BatchStats)> =
        pool.install(|| {
            opts.patterns
                .par_iter()
                .map(|&tag| {
                    let max_attempts = opts.per_pattern.saturating_mul(DEFAULT_ATTEMPT_FACTOR);
                    let (samples, stats) = sample_batch(
                        &g,
                        tag,
                        opts.per_pattern,
                        opts.seed,
                        max_attempts,
                        opts.answer_cap,
                    )?;
                    let nested: Vec<Vec<InstructionRecord>> = samples
                        .par_iter()
                        .enumerate()
                        .map(|(idx, sample)| {
                            pair_records(
                                &g,
                                &toolkit,
                                &api_index,
                                tag,
                                idx,
                                sample,
                                opts,
                                client.as_ref(),
                            )
                        })
                        .collect::<Result<_>>()?;
                    Ok((tag, nested.into_iter().flatten().collect(), stats))
                })
                .collect::<Result<_>>()
        })?;

    let mut pools: BTreeMap<PatternTag, Vec<InstructionRecord>> = BTreeMap::new();
    let mut sampling: BTreeMap<String, BatchStats> = BTreeMap::new();
    for (tag, records, stats) in per_pattern {
        pools.insert(tag, records);
        sampling.insert(tag.to_string(), stats);
    }
    let mut dataset: Dataset = assemble_dataset(pools, None, opts.seed, g.digest(), opts.echo())?;
    let digest = export(&mut dataset, opts.format, &opts.out)?;
    let manifest_path = manifest_path_for(&opts.out);
    let manifest_json = serde_json::to_string_pretty(&dataset.manifest)?;
    std::fs::write(&manifest_path, format!("{manifest_json}\n")).map_err(|source| Error::Io {
        path: manifest_path.clone(),
        source,
    })?;
    Ok(SynthSummary {
        export_path: opts.out.clone(),
        manifest_path,
        dataset_sha256: digest,
        record_count: dataset.manifest.record_count,
        sampling,
        manifest: dataset.manifest,
    })
}

#[allow(clippy::too_many_arguments)]
fn pair_records(
    g: &KnowledgeGraph,
    toolkit: &Toolkit,
    api_index: &ApiIndex,
    tag: PatternTag,
    idx: usize,
    sample: &InstantiatedSample,
    opts: &SynthOptions,
    client: Option<&LlmClient>,
) -> Result<Vec<InstructionRecord>> {
    let chain = plan_chain(g, &sample.query, api_index)?;
    let mut path = execute_chain(g, &chain, api_index)?;

    let mut used: Vec<String> = Vec::new();
    for step in &chain.steps {
        if !used.contains(&step.api) {
            used.push(step.api.clone());
        }
    }
    let mut toolset_rng = derive_indexed_rng(opts.seed, "toolset", tag.as_str(), idx);
    let toolset = build_toolset(&used, toolkit, opts.distractors, &mut toolset_rng)?;

    let descriptions: Vec<String> = sample
        .query
        .bindings()
        .relations
        .iter()
        .map(|dr| {
            api_index
                .name_for(*dr)
                .ok()
                .and_then(|name| toolkit.by_name(name))
                .map(|a| a.description.clone())
                .unwrap_or_default()
        })
        .collect();
    let request = TranslationRequest::build(g, &sample.query, api_index, &descriptions)?;
    let nl = match client {
        Some(c) => translate_llm(&request, c),
        None => translate_template(&request),
    };
    path.query = nl.question.clone();

    let report = verify_replay(g, &path, api_index)?;
    if !report.pass() {
        return Err(Error::Integrity {
            location: format!("{tag}-{idx:05}"),
            message: "replay audit failed for a freshly executed path".into(),
        });
    }
    let pair = QuerySolutionPair {
        pattern: tag,
        sample_id: format!("{tag}-{idx:05}"),
        nl,
        path,
        toolset,
        verified: true,
    };
    let mut record_rng = derive_indexed_rng(opts.seed, "records", tag.as_str(), idx);
    build_records(g, &pair, opts.review_prob, &mut record_rng)
}

#[derive(Debug, Serialize)]
pub struct VerifySummary {
    pub dataset: PathBuf,
    pub audit: AuditSummary,
}

/// Replay-audit an exported dataset against its knowledge graph.
pub fn run_verify(kg: &Path, dataset: &Path, format: ExportFormat) -> Result<VerifySummary> {
    let (g, _) = KnowledgeGraph::load_triples(kg, LoadMode::Strict)?;
    let records = import(dataset, format)?;
    let audit = audit_records(&g, &records)?;
    Ok(VerifySummary {
        dataset: dataset.to_path_buf(),
        audit,
    })
}

#[derive(Debug, Serialize)]
pub struct SampleSummary {
    pub out: PathBuf,
    pub samples: usize,
    pub sampling: BTreeMap<String, BatchStats>,
}

#[derive(Serialize)]
struct SampleDumpLine<'a> {
    pattern: &'a str,
    fol: String,
    anchors: Vec<&'a str>,
    relations: Vec<serde_json::Value>,
    root: &'a str,
    subgraph: Vec<[&'a str; 3]>,
    seed: u64,
    attempt: usize,
}

/// Samples instantiated queries and writes a line-delimited dump for
/// inspection and replay.
pub fn run_sample(
    kg: &Path,
    patterns: &[PatternTag],
    per_pattern: usize,
    seed: u64,
    answer_cap: usize,
    workers: usize,
    out: &Path,
) -> Result<SampleSummary> {
    let (g, _) = KnowledgeGraph::load_triples(kg, LoadMode::Strict)?;
    let pool = thread_pool(workers)?;
    let batches: Vec<(PatternTag, Vec<InstantiatedSample>, BatchStats)> = pool.install(|| {
        patterns
            .par_iter()
            .map(|&tag| {
                let (samples, stats) = sample_batch(
                    &g,
                    tag,
                    per_pattern,
                    seed,
                    per_pattern.saturating_mul(DEFAULT_ATTEMPT_FACTOR),
                    answer_cap,
                )?;
                Ok((tag, samples, stats))
            })
            .collect::<Result<_>>()
    })?;
    let mut buffer = String::new();
    let mut count = 0usize;
    let mut sampling = BTreeMap::new();
    for (tag, samples, stats) in &batches {
        sampling.insert(tag.to_string(), stats.clone());
        for s in samples {
            let line = SampleDumpLine {
                pattern: tag.as_str(),
                fol: format_fol(&g, &s.query),
                anchors: s
                    .query
                    .bindings()
                    .anchors
                    .iter()
                    .map(|&e| g.entity_label(e))
                    .collect(),
                relations: s
                    .query
                    .bindings()
                    .relations
                    .iter()
                    .map(|dr| {
                        serde_json::json!({
                            "relation": g.relation_label(dr.relation),
                            "direction": dr.direction,
                        })
                    })
                    .collect(),
                root: g.entity_label(s.root),
                subgraph: s
                    .subgraph
                    .iter()
                    .map(|t| {
                        [
                            g.entity_label(t.head),
                            g.relation_label(t.relation),
                            g.entity_label(t.tail),
                        ]
                    })
                    .collect(),
                seed: s.provenance.seed,
                attempt: s.provenance.attempt,
            };
            buffer.push_str(&serde_json::to_string(&line)?);
            buffer.push('\n');
            count += 1;
        }
    }
    std::fs::write(out, buffer).map_err(|source| Error::Io {
        path: out.to_path_buf(),
        source,
    })?;
    Ok(SampleSummary {
        out: out.to_path_buf(),
        samples: count,
        sampling,
    })
}

#[derive(Debug, Serialize)]
pub struct GenApisSummary {
    pub out: PathBuf,
    pub apis: usize,
    pub collisions: usize,
    pub degraded: usize,
}

/// Derives the full API table and writes descriptor JSONL.
pub fn run_gen_apis(
    kg: &Path,
    translator: TranslationMode,
    llm: &LlmSettings,
    transport: Option<Arc<dyn ChatTransport>>,
    out: &Path,
) -> Result<GenApisSummary> {
    let (g, _) = KnowledgeGraph::load_triples(kg, LoadMode::Strict)?;
    let client = match translator {
        TranslationMode::Template => None,
        TranslationMode::Llm => Some(build_client(llm, transport)?),
    };
    let toolkit = Toolkit::derive(&g, client.as_ref());
    let mut buffer = String::new();
    for api in toolkit.apis() {
        buffer.push_str(&serde_json::to_string(&api.wire())?);
        buffer.push('\n');
    }
    std::fs::write(out, buffer).map_err(|source| Error::Io {
        path: out.to_path_buf(),
        source,
    })?;
    Ok(GenApisSummary {
        out: out.to_path_buf(),
        apis: toolkit.apis().len(),
        collisions: toolkit.collisions,
        degraded: toolkit.apis().iter().filter(|a| a.degraded).count(),
    })
}

#[derive(Debug, Serialize)]
pub struct StatsSummary {
    pub kg: crate::kg::KgStats,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<DatasetStats>,
}

#[derive(Debug, Serialize)]
pub struct DatasetStats {
    pub manifest: Manifest,
    pub recounted_records: usize,
    pub manifest_consistent: bool,
}

/// Graph statistics, plus a manifest cross-check when a dataset is given.
pub fn run_stats(kg: &Path, dataset: Option<(&Path, ExportFormat)>) -> Result<StatsSummary> {
    let (g, _) = KnowledgeGraph::load_triples(kg, LoadMode::Strict)?;
    let dataset_stats = match dataset {
        None => None,
        Some((path, format)) => {
            let manifest_text =
                std::fs::read_to_string(manifest_path_for(path)).map_err(|source| Error::Io {
                    path: manifest_path_for(path),
                    source,
                })?;
            let manifest: Manifest = serde_json::from_str(&manifest_text)?;
            let records = import(path, format)?;
            let mut per_pattern: BTreeMap<String, usize> = BTreeMap::new();
            let mut per_kind: BTreeMap<String, usize> = BTreeMap::new();
            for r in &records {
                *per_pattern.entry(r.meta.pattern.to_string()).or_default() += 1;
                *per_kind
                    .entry(r.meta.kind.as_str().to_string())
                    .or_default() += 1;
            }
            let consistent = records.len() == manifest.record_count
                && per_pattern == manifest.records_per_pattern
                && per_kind == manifest.records_per_kind;
            Some(DatasetStats {
                manifest,
                recounted_records: records.len(),
                manifest_consistent: consistent,
            })
        }
    };
    Ok(StatsSummary {
        kg: g.stats(),
        dataset: dataset_stats,
    })
}

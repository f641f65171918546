//! Dialogue-format instruction records and dataset export.
//!
//! One verified query–solution pair expands into: a full trajectory
//! record, a planning record, and a reason/retrieve/understand record per
//! step, plus review records for a random subset of steps (a shown tool
//! response, possibly corrupted, to be judged pass or fail). Every record
//! opens with a system prompt embedding its toolset and carries metadata
//! (pattern, sample id, FOL text, API bindings) that makes the exported
//! line auditable against the source graph.
//!
//! The user-turn text layouts in this module are deliberately rigid: the
//! dataset audit rebuilds them from a fresh execution of the recorded
//! query and compares byte-for-byte.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::api::{ApiBinding, Toolset};
use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph};
use crate::patterns::PatternTag;
use crate::rng::derive_rng;
use crate::set::EntitySet;
use crate::solution::{SolutionPath, SolutionStep};
use crate::translate::{NlQuery, TranslationMode};

pub const SYSTEM_PROMPT_TEMPLATE: &str = include_str!("../assets/system_prompt.txt");

/// Default probability of emitting a review record per step.
pub const DEFAULT_REVIEW_PROB: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Trajectory,
    Plan,
    Reason,
    Retrieve,
    Understand,
    Review,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Trajectory => "trajectory",
            TaskKind::Plan => "plan",
            TaskKind::Reason => "reason",
            TaskKind::Retrieve => "retrieve",
            TaskKind::Understand => "understand",
            TaskKind::Review => "review",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    System,
    User,
    Assistant,
    ToolResponse,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub text: String,
}

/// Provenance and audit anchors for one record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub pattern: PatternTag,
    pub sample_id: String,
    pub kind: TaskKind,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub step: Option<usize>,
    pub fol: String,
    pub translation: TranslationMode,
    /// The record's toolset, in system-prompt order.
    pub apis: Vec<ApiBinding>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub review_pass: Option<bool>,
}

/// One training sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstructionRecord {
    /// First turn is always the system prompt.
    pub turns: Vec<Turn>,
    /// Expected assistant output for single-turn kinds; `None` for
    /// trajectories (their targets are inline assistant turns).
    pub label: Option<String>,
    pub meta: RecordMeta,
}

/// A verified query–solution pair ready for record building.
#[derive(Debug, Clone)]
pub struct QuerySolutionPair {
    pub pattern: PatternTag,
    pub sample_id: String,
    pub nl: NlQuery,
    pub path: SolutionPath,
    pub toolset: Toolset,
    /// Set by a successful replay audit; record building refuses pairs
    /// that were never verified.
    pub verified: bool,
}

pub fn render_system_prompt(toolset: &Toolset) -> String {
    let tools: Vec<String> = toolset
        .apis
        .iter()
        .map(|a| serde_json::to_string(&a.wire()).expect("descriptors serialize"))
        .collect();
    SYSTEM_PROMPT_TEMPLATE.replace("{tools}", &tools.join("\n"))
}

/// Tool names listed in a rendered system prompt.
pub fn system_prompt_tool_names(prompt: &str) -> Vec<String> {
    prompt
        .lines()
        .filter(|l| l.starts_with('{'))
        .filter_map(|l| serde_json::from_str::<crate::api::WireDescriptor>(l).ok())
        .map(|d| d.name)
        .collect()
}

pub(crate) fn step_json(step: &SolutionStep) -> String {
    serde_json::to_string(step).expect("steps serialize")
}

fn context_block(steps: &[SolutionStep], upto: usize) -> String {
    (0..upto)
        .map(|j| format!("Step {}: {}", j + 1, step_json(&steps[j])))
        .collect::<Vec<_>>()
        .join("\n")
}

fn with_context(question: &str, steps: &[SolutionStep], upto: usize) -> String {
    let mut s = format!("Question: {question}\n");
    if upto > 0 {
        s.push_str(&context_block(steps, upto));
        s.push('\n');
    }
    s
}

pub(crate) fn user_plan(question: &str) -> String {
    format!("Question: {question}\nBreak the question into ordered subtasks, one per line.")
}

pub(crate) fn user_reason(question: &str, steps: &[SolutionStep], i: usize) -> String {
    format!(
        "{}What should be the goal of the next step?",
        with_context(question, steps, i)
    )
}

pub(crate) fn user_retrieve(question: &str, steps: &[SolutionStep], i: usize) -> String {
    format!(
        "{}Goal: {}\nWhich tool should be called for this step?",
        with_context(question, steps, i),
        steps[i].goal
    )
}

pub(crate) fn user_understand(question: &str, steps: &[SolutionStep], i: usize) -> String {
    format!(
        "{}Goal: {}\nTool: {}\nWhat arguments should be passed to the tool? \
         Respond with a JSON array of entity lists.",
        with_context(question, steps, i),
        steps[i].goal,
        steps[i].api
    )
}

pub(crate) fn user_review(
    question: &str,
    steps: &[SolutionStep],
    i: usize,
    shown_response: &[String],
) -> String {
    let reviewed = SolutionStep {
        goal: steps[i].goal.clone(),
        api: steps[i].api.clone(),
        args: steps[i].args.clone(),
        response: shown_response.to_vec(),
    };
    format!(
        "{}Step under review: {}\nDoes the tool response correctly accomplish the step goal? \
         Answer pass or fail.",
        with_context(question, steps, i),
        step_json(&reviewed)
    )
}

pub(crate) fn assistant_call(step: &SolutionStep) -> String {
    serde_json::to_string(&serde_json::json!({ "api": step.api, "arguments": step.args }))
        .expect("calls serialize")
}

pub(crate) fn tool_response_text(step: &SolutionStep) -> String {
    serde_json::to_string(&step.response).expect("responses serialize")
}

pub(crate) fn final_answer_text(path: &SolutionPath) -> String {
    serde_json::to_string(&serde_json::json!({ "final_answer": path.final_answer }))
        .expect("answers serialize")
}

pub(crate) fn plan_label(path: &SolutionPath) -> String {
    path.subtasks
        .iter()
        .enumerate()
        .map(|(i, s)| format!("{}. {}", i + 1, s))
        .collect::<Vec<_>>()
        .join("\n")
}

pub(crate) fn understand_label(step: &SolutionStep) -> String {
    serde_json::to_string(&step.args).expect("args serialize")
}

/// Expands one verified pair into its instruction records.
///
/// Per pair: 1 trajectory + 1 plan + per step (reason, retrieve,
/// understand), plus one review per step with probability `p_review`. A
/// review shows the true response or a corrupted one with equal odds and
/// is labeled accordingly.
pub fn build_records(
    g: &KnowledgeGraph,
    pair: &QuerySolutionPair,
    p_review: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<InstructionRecord>> {
    if !pair.verified {
        return Err(Error::Integrity {
            location: pair.sample_id.clone(),
            message: "record building requires a replay-verified pair".into(),
        });
    }
    let system = render_system_prompt(&pair.toolset);
    let apis: Vec<ApiBinding> = pair
        .toolset
        .apis
        .iter()
        .map(|a| ApiBinding::from_descriptor(g, a))
        .collect();
    let meta = |kind: TaskKind, step: Option<usize>, review_pass: Option<bool>| RecordMeta {
        pattern: pair.pattern,
        sample_id: pair.sample_id.clone(),
        kind,
        step,
        fol: pair.path.fol.clone(),
        translation: pair.nl.mode,
        apis: apis.clone(),
        review_pass,
    };
    let sys_turn = || Turn {
        role: Role::System,
        text: system.clone(),
    };
    let question = pair.nl.question.as_str();
    let steps = &pair.path.steps;
    let mut records = Vec::with_capacity(2 + 3 * steps.len() + 1);

    // Trajectory: the query as user input, each tool invocation as an
    // assistant output followed by the tool's response.
    let mut turns = vec![
        sys_turn(),
        Turn {
            role: Role::User,
            text: question.to_string(),
        },
    ];
    for step in steps {
        turns.push(Turn {
            role: Role::Assistant,
            text: assistant_call(step),
        });
        turns.push(Turn {
            role: Role::ToolResponse,
            text: tool_response_text(step),
        });
    }
    turns.push(Turn {
        role: Role::Assistant,
        text: final_answer_text(&pair.path),
    });
    records.push(InstructionRecord {
        turns,
        label: None,
        meta: meta(TaskKind::Trajectory, None, None),
    });

    records.push(InstructionRecord {
        turns: vec![
            sys_turn(),
            Turn {
                role: Role::User,
                text: user_plan(question),
            },
        ],
        label: Some(plan_label(&pair.path)),
        meta: meta(TaskKind::Plan, None, None),
    });

    for (i, step) in steps.iter().enumerate() {
        let step_no = i + 1;
        records.push(InstructionRecord {
            turns: vec![
                sys_turn(),
                Turn {
                    role: Role::User,
                    text: user_reason(question, steps, i),
                },
            ],
            label: Some(step.goal.clone()),
            meta: meta(TaskKind::Reason, Some(step_no), None),
        });
        records.push(InstructionRecord {
            turns: vec![
                sys_turn(),
                Turn {
                    role: Role::User,
                    text: user_retrieve(question, steps, i),
                },
            ],
            label: Some(step.api.clone()),
            meta: meta(TaskKind::Retrieve, Some(step_no), None),
        });
        records.push(InstructionRecord {
            turns: vec![
                sys_turn(),
                Turn {
                    role: Role::User,
                    text: user_understand(question, steps, i),
                },
            ],
            label: Some(understand_label(step)),
            meta: meta(TaskKind::Understand, Some(step_no), None),
        });
        if rng.gen_bool(p_review) {
            let corrupt = rng.gen_bool(0.5);
            let shown = if corrupt {
                corrupted_response(g, steps, i, rng)
            } else {
                step.response.clone()
            };
            let pass = shown == step.response;
            records.push(InstructionRecord {
                turns: vec![
                    sys_turn(),
                    Turn {
                        role: Role::User,
                        text: user_review(question, steps, i, &shown),
                    },
                ],
                label: Some(if pass { "pass" } else { "fail" }.to_string()),
                meta: meta(TaskKind::Review, Some(step_no), Some(pass)),
            });
        }
    }
    Ok(records)
}

/// A wrong response for a review record: a sibling step's response when
/// one differs, otherwise random entities; never equal to the truth.
fn corrupted_response(
    g: &KnowledgeGraph,
    steps: &[SolutionStep],
    i: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<String> {
    let truth = &steps[i].response;
    let siblings: Vec<&Vec<String>> = steps
        .iter()
        .enumerate()
        .filter(|(j, s)| *j != i && &s.response != truth)
        .map(|(_, s)| &s.response)
        .collect();
    if !siblings.is_empty() {
        return siblings[rng.gen_range(0..siblings.len())].clone();
    }
    loop {
        let k = rng.gen_range(1..=3usize);
        let ids: Vec<EntityId> = (0..k)
            .map(|_| EntityId(rng.gen_range(0..g.entity_count() as u32)))
            .collect();
        let labels: Vec<String> = EntitySet::from_ids(ids)
            .iter()
            .map(|e| g.entity_label(e).to_string())
            .collect();
        if &labels != truth {
            return labels;
        }
    }
}

// ---------------------------------------------------------------------------
// Dataset assembly and export
// ---------------------------------------------------------------------------

/// Counts and provenance for one assembled dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub generator_version: String,
    pub seed: u64,
    pub kg_digest: String,
    pub record_count: usize,
    pub pairs_per_pattern: BTreeMap<String, usize>,
    pub records_per_pattern: BTreeMap<String, usize>,
    pub records_per_kind: BTreeMap<String, usize>,
    /// Effective generator configuration, echoed for provenance.
    pub config: serde_json::Value,
    /// SHA-256 of the exported file; filled in at export time.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub dataset_sha256: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub records: Vec<InstructionRecord>,
    pub manifest: Manifest,
}

/// Draws records per pattern (all of them when `per_pattern` is `None`,
/// a uniform without-replacement sample otherwise) and shuffles the
/// combined dataset deterministically.
pub fn assemble_dataset(
    pools: BTreeMap<PatternTag, Vec<InstructionRecord>>,
    per_pattern: Option<usize>,
    seed: u64,
    kg_digest: &str,
    config: serde_json::Value,
) -> Result<Dataset> {
    let mut records: Vec<InstructionRecord> = Vec::new();
    for (tag, pool) in pools {
        match per_pattern {
            None => records.extend(pool),
            Some(n) => {
                if pool.len() < n {
                    return Err(Error::Config {
                        field: format!("per_pattern[{tag}]"),
                        message: format!("requested {n} records, pool has {}", pool.len()),
                    });
                }
                let mut rng = derive_rng(seed, &format!("assemble/{tag}"));
                let mut keep = vec![false; pool.len()];
                for i in rand::seq::index::sample(&mut rng, pool.len(), n) {
                    keep[i] = true;
                }
                records.extend(
                    pool.into_iter()
                        .enumerate()
                        .filter(|(i, _)| keep[*i])
                        .map(|(_, r)| r),
                );
            }
        }
    }
    // Canonical order before the seeded shuffle, so assembly bytes do not
    // depend on pool construction order.
    records.sort_by(|a, b| {
        (a.meta.pattern, &a.meta.sample_id, a.meta.kind, a.meta.step).cmp(&(
            b.meta.pattern,
            &b.meta.sample_id,
            b.meta.kind,
            b.meta.step,
        ))
    });
    let mut rng = derive_rng(seed, "assemble/shuffle");
    use rand::seq::SliceRandom;
    records.shuffle(&mut rng);

    let mut pairs: BTreeMap<String, std::collections::BTreeSet<&str>> = BTreeMap::new();
    let mut per_pattern_counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut per_kind: BTreeMap<String, usize> = BTreeMap::new();
    for r in &records {
        pairs
            .entry(r.meta.pattern.to_string())
            .or_default()
            .insert(r.meta.sample_id.as_str());
        *per_pattern_counts
            .entry(r.meta.pattern.to_string())
            .or_default() += 1;
        *per_kind
            .entry(r.meta.kind.as_str().to_string())
            .or_default() += 1;
    }
    let manifest = Manifest {
        generator_version: env!("CARGO_PKG_VERSION").to_string(),
        seed,
        kg_digest: kg_digest.to_string(),
        record_count: records.len(),
        pairs_per_pattern: pairs.into_iter().map(|(k, v)| (k, v.len())).collect(),
        records_per_pattern: per_pattern_counts,
        records_per_kind: per_kind,
        config,
        dataset_sha256: None,
    };
    Ok(Dataset { records, manifest })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExportFormat {
    ShareGptJsonl,
    AlpacaJsonl,
}

impl ExportFormat {
    pub fn as_str(self) -> &'static str {
        match self {
            ExportFormat::ShareGptJsonl => "sharegpt-jsonl",
            ExportFormat::AlpacaJsonl => "alpaca-jsonl",
        }
    }
}

impl std::str::FromStr for ExportFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "sharegpt-jsonl" => Ok(ExportFormat::ShareGptJsonl),
            "alpaca-jsonl" => Ok(ExportFormat::AlpacaJsonl),
            other => Err(format!(
                "unknown format {other:?} (sharegpt-jsonl | alpaca-jsonl)"
            )),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ShareGptTurn {
    from: String,
    value: String,
}

#[derive(Serialize, Deserialize)]
struct ShareGptLine {
    conversations: Vec<ShareGptTurn>,
    meta: RecordMeta,
}

#[derive(Serialize, Deserialize)]
struct AlpacaLine {
    system: String,
    instruction: String,
    output: String,
    meta: RecordMeta,
}

fn role_to_from(role: Role) -> &'static str {
    match role {
        Role::System => "system",
        Role::User => "human",
        Role::Assistant => "gpt",
        Role::ToolResponse => "observation",
    }
}

fn from_to_role(from: &str) -> Option<Role> {
    match from {
        "system" => Some(Role::System),
        "human" | "user" => Some(Role::User),
        "gpt" | "assistant" => Some(Role::Assistant),
        "observation" | "tool" => Some(Role::ToolResponse),
        _ => None,
    }
}

fn record_to_line(record: &InstructionRecord, format: ExportFormat) -> Result<String> {
    match format {
        ExportFormat::ShareGptJsonl => {
            let mut conversations: Vec<ShareGptTurn> = record
                .turns
                .iter()
                .map(|t| ShareGptTurn {
                    from: role_to_from(t.role).to_string(),
                    value: t.text.clone(),
                })
                .collect();
            if let Some(label) = &record.label {
                conversations.push(ShareGptTurn {
                    from: "gpt".into(),
                    value: label.clone(),
                });
            }
            Ok(serde_json::to_string(&ShareGptLine {
                conversations,
                meta: record.meta.clone(),
            })?)
        }
        ExportFormat::AlpacaJsonl => {
            let system = record
                .turns
                .first()
                .map(|t| t.text.clone())
                .unwrap_or_default();
            let instruction = record
                .turns
                .get(1)
                .map(|t| t.text.clone())
                .unwrap_or_default();
            let output = match &record.label {
                Some(label) => label.clone(),
                // Trajectories carry their continuation as serialized turns.
                None => serde_json::to_string(&record.turns[2..])?,
            };
            Ok(serde_json::to_string(&AlpacaLine {
                system,
                instruction,
                output,
                meta: record.meta.clone(),
            })?)
        }
    }
}

fn line_to_record(line: &str, format: ExportFormat) -> Result<InstructionRecord> {
    match format {
        ExportFormat::ShareGptJsonl => {
            let parsed: ShareGptLine = serde_json::from_str(line)?;
            let mut turns: Vec<Turn> = Vec::with_capacity(parsed.conversations.len());
            for t in &parsed.conversations {
                let role = from_to_role(&t.from).ok_or_else(|| Error::Integrity {
                    location: "sharegpt line".into(),
                    message: format!("unknown role {:?}", t.from),
                })?;
                turns.push(Turn {
                    role,
                    text: t.value.clone(),
                });
            }
            let label = if parsed.meta.kind == TaskKind::Trajectory {
                None
            } else {
                let last = turns.pop().ok_or_else(|| Error::Integrity {
                    location: "sharegpt line".into(),
                    message: "record has no turns".into(),
                })?;
                if last.role != Role::Assistant {
                    return Err(Error::Integrity {
                        location: "sharegpt line".into(),
                        message: "labeled record does not end with an assistant turn".into(),
                    });
                }
                Some(last.text)
            };
            Ok(InstructionRecord {
                turns,
                label,
                meta: parsed.meta,
            })
        }
        ExportFormat::AlpacaJsonl => {
            let parsed: AlpacaLine = serde_json::from_str(line)?;
            let mut turns = vec![
                Turn {
                    role: Role::System,
                    text: parsed.system,
                },
                Turn {
                    role: Role::User,
                    text: parsed.instruction,
                },
            ];
            let label = if parsed.meta.kind == TaskKind::Trajectory {
                let rest: Vec<Turn> = serde_json::from_str(&parsed.output)?;
                turns.extend(rest);
                None
            } else {
                Some(parsed.output)
            };
            Ok(InstructionRecord {
                turns,
                label,
                meta: parsed.meta,
            })
        }
    }
}

/// Writes the dataset as JSONL, returning the file digest. The manifest's
/// `dataset_sha256` is set on the passed dataset.
pub fn export(dataset: &mut Dataset, format: ExportFormat, path: &Path) -> Result<String> {
    let mut buffer = Vec::new();
    for (i, record) in dataset.records.iter().enumerate() {
        let line = record_to_line(record, format).map_err(|e| Error::RecordAudit {
            record: i,
            message: format!("unserializable record: {e}"),
        })?;
        buffer.write_all(line.as_bytes()).expect("vec write");
        buffer.push(b'\n');
    }
    std::fs::write(path, &buffer).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut hasher = Sha256::new();
    hasher.update(&buffer);
    let digest = format!("{:x}", hasher.finalize());
    dataset.manifest.dataset_sha256 = Some(digest.clone());
    Ok(digest)
}

/// Reads an exported JSONL file back into records.
pub fn import(path: &Path, format: ExportFormat) -> Result<Vec<InstructionRecord>> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        records.push(
            line_to_record(line, format).map_err(|e| Error::RecordAudit {
                record: i,
                message: format!("unparsable line: {e}"),
            })?,
        );
    }
    Ok(records)
}

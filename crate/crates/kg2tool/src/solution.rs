//! Lowering queries to API execution chains and recording solution paths.
//!
//! The chain is the post-order traversal of the query tree: leaves'
//! projections run first, combining operations follow, and the last step
//! produces the answer. An intersection with negated children lowers to a
//! single `get_negation_of` step whose final argument is the excluded set;
//! plain intersections and unions take all their inputs in one variadic
//! step, which keeps the per-pattern step counts fixed.

use serde::{Deserialize, Serialize};

use crate::api::{ApiIndex, ApiOperation, INTERSECTION_API, NEGATION_API, UNION_API};
use crate::error::{Error, Result};
use crate::fol::eval::{evaluate, project};
use crate::fol::text::format_fol;
use crate::fol::{FolNode, FolQuery};
use crate::kg::{EntityId, KnowledgeGraph};
use crate::set::EntitySet;

/// Executor truncation threshold; sampled corpora stay under the answer
/// cap, so this only fires on hand-built chains.
pub const RESPONSE_TRUNCATE_LIMIT: usize = 200;

/// Argument of a planned step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArgSlot {
    /// Anchor constant.
    Entity(EntityId),
    /// Output of an earlier step (0-based).
    Step(usize),
}

/// One planned API call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainStep {
    pub goal: String,
    pub api: String,
    pub args: Vec<ArgSlot>,
}

/// Post-order plan for one query.
#[derive(Debug, Clone)]
pub struct ExecutionChain {
    pub query: FolQuery,
    pub steps: Vec<ChainStep>,
}

/// One executed step with recorded labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolutionStep {
    pub goal: String,
    pub api: String,
    /// Each argument is an entity-label list (singleton for anchors).
    pub args: Vec<Vec<String>>,
    pub response: Vec<String>,
}

/// Replayable record of a solved query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolutionPath {
    /// Natural-language query (FOL text until a translation is attached).
    pub query: String,
    pub fol: String,
    pub subtasks: Vec<String>,
    pub steps: Vec<SolutionStep>,
    pub final_answer: Vec<String>,
}

/// Lowers an instantiated query to its API call sequence.
pub fn plan_chain(g: &KnowledgeGraph, query: &FolQuery, apis: &ApiIndex) -> Result<ExecutionChain> {
    let mut steps: Vec<ChainStep> = Vec::new();
    lower(g, query.root(), apis, &mut steps)?;
    debug_assert_eq!(steps.len(), crate::patterns::chain_len(query.pattern()));
    Ok(ExecutionChain {
        query: query.clone(),
        steps,
    })
}

fn lower(
    g: &KnowledgeGraph,
    node: &FolNode,
    apis: &ApiIndex,
    steps: &mut Vec<ChainStep>,
) -> Result<ArgSlot> {
    match node {
        FolNode::Anchor(e) => Ok(ArgSlot::Entity(*e)),
        FolNode::Projection { child, relation } => {
            let input = lower(g, child, apis, steps)?;
            let api_name = apis.name_for(*relation)?.to_string();
            let goal = format!(
                "Find the {} of {}.",
                object_phrase(&api_name),
                arg_phrase(g, input)
            );
            steps.push(ChainStep {
                goal,
                api: api_name,
                args: vec![input],
            });
            Ok(ArgSlot::Step(steps.len() - 1))
        }
        FolNode::Union(children) => {
            let mut args = Vec::with_capacity(children.len());
            for c in children {
                args.push(lower(g, c, apis, steps)?);
            }
            let goal = format!(
                "Find the entities appearing in {} or {}.",
                arg_phrase(g, args[0]),
                arg_phrase(g, args[1])
            );
            steps.push(ChainStep {
                goal,
                api: UNION_API.into(),
                args,
            });
            Ok(ArgSlot::Step(steps.len() - 1))
        }
        FolNode::Intersection(children) => {
            // Lower in listed order so the step numbering is the plain
            // post-order of the tree, but pass candidates first and the
            // excluded set last.
            let mut plain_args = Vec::new();
            let mut negated_args = Vec::new();
            for c in children {
                match c {
                    FolNode::Negation(inner) => negated_args.push(lower(g, inner, apis, steps)?),
                    plain => plain_args.push(lower(g, plain, apis, steps)?),
                }
            }
            if negated_args.is_empty() {
                let phrases: Vec<String> = plain_args.iter().map(|&a| arg_phrase(g, a)).collect();
                let goal = format!("Find the entities common to {}.", join_and(&phrases));
                steps.push(ChainStep {
                    goal,
                    api: INTERSECTION_API.into(),
                    args: plain_args,
                });
            } else {
                let cand_phrases: Vec<String> =
                    plain_args.iter().map(|&a| arg_phrase(g, a)).collect();
                let excl_phrases: Vec<String> =
                    negated_args.iter().map(|&a| arg_phrase(g, a)).collect();
                let goal = format!(
                    "Exclude the entities of {} from {}.",
                    join_and(&excl_phrases),
                    if cand_phrases.len() == 1 {
                        cand_phrases[0].clone()
                    } else {
                        format!("the entities common to {}", join_and(&cand_phrases))
                    }
                );
                let mut args = plain_args;
                args.extend(negated_args);
                steps.push(ChainStep {
                    goal,
                    api: NEGATION_API.into(),
                    args,
                });
            }
            Ok(ArgSlot::Step(steps.len() - 1))
        }
        FolNode::Negation(_) => Err(Error::InvalidQuery {
            reason: "negation outside an intersection".into(),
        }),
    }
}

fn object_phrase(api_name: &str) -> String {
    api_name
        .strip_prefix("get_")
        .unwrap_or(api_name)
        .replace('_', " ")
}

fn arg_phrase(g: &KnowledgeGraph, arg: ArgSlot) -> String {
    match arg {
        ArgSlot::Entity(e) => g.entity_label(e).to_string(),
        ArgSlot::Step(i) => format!("the results of step {}", i + 1),
    }
}

fn join_and(phrases: &[String]) -> String {
    match phrases.len() {
        0 => String::new(),
        1 => phrases[0].clone(),
        2 => format!("{} and {}", phrases[0], phrases[1]),
        _ => {
            let (last, rest) = phrases.split_last().unwrap();
            format!("{} and {}", rest.join(", "), last)
        }
    }
}

/// Applies one API call to concrete entity sets.
///
/// Relation APIs project their single argument; logical APIs fold their
/// arguments, `get_negation_of` treating the last argument as the
/// excluded set.
pub fn apply_api(
    g: &KnowledgeGraph,
    apis: &ApiIndex,
    api_name: &str,
    args: &[EntitySet],
) -> Result<EntitySet> {
    match apis.operation(api_name)? {
        ApiOperation::Project(dr) => {
            if args.len() != 1 {
                return Err(Error::Integrity {
                    location: format!("api {api_name}"),
                    message: format!("expected 1 argument, got {}", args.len()),
                });
            }
            project(g, &args[0], dr)
        }
        op => {
            if args.len() < 2 {
                return Err(Error::Integrity {
                    location: format!("api {api_name}"),
                    message: format!("expected at least 2 arguments, got {}", args.len()),
                });
            }
            match op {
                ApiOperation::Intersection => Ok(args
                    .iter()
                    .skip(1)
                    .fold(args[0].clone(), |acc, s| acc.intersection(s))),
                ApiOperation::Union => Ok(args
                    .iter()
                    .skip(1)
                    .fold(args[0].clone(), |acc, s| acc.union(s))),
                ApiOperation::Negation => {
                    let (exclude, candidates) = args.split_last().unwrap();
                    let acc = candidates
                        .iter()
                        .skip(1)
                        .fold(candidates[0].clone(), |acc, s| acc.intersection(s));
                    Ok(acc.difference(exclude))
                }
                ApiOperation::Project(_) => unreachable!(),
            }
        }
    }
}

/// Executes a planned chain over the graph, recording every argument and
/// response as entity labels.
pub fn execute_chain(
    g: &KnowledgeGraph,
    chain: &ExecutionChain,
    apis: &ApiIndex,
) -> Result<SolutionPath> {
    let mut outputs: Vec<EntitySet> = Vec::with_capacity(chain.steps.len());
    let mut steps: Vec<SolutionStep> = Vec::with_capacity(chain.steps.len());
    for (idx, step) in chain.steps.iter().enumerate() {
        let arg_sets: Vec<EntitySet> = step
            .args
            .iter()
            .map(|a| match a {
                ArgSlot::Entity(e) => EntitySet::singleton(*e),
                ArgSlot::Step(i) => outputs[*i].clone(),
            })
            .collect();
        let result = apply_api(g, apis, &step.api, &arg_sets)?;
        if result.is_empty() {
            return Err(Error::Integrity {
                location: format!("step {}", idx + 1),
                message: format!(
                    "{} returned an empty set; sampled chains never do",
                    step.api
                ),
            });
        }
        steps.push(SolutionStep {
            goal: step.goal.clone(),
            api: step.api.clone(),
            args: arg_sets.iter().map(|s| set_labels(g, s)).collect(),
            response: truncated_labels(g, &result),
        });
        outputs.push(result);
    }
    let final_set = outputs.last().expect("chains are non-empty").clone();
    let oracle = evaluate(g, &chain.query)?;
    if final_set != oracle {
        return Err(Error::Integrity {
            location: "final answer".into(),
            message: "chain result differs from direct evaluation".into(),
        });
    }
    let fol = format_fol(g, &chain.query);
    Ok(SolutionPath {
        query: fol.clone(),
        fol,
        subtasks: chain.steps.iter().map(|s| s.goal.clone()).collect(),
        steps,
        final_answer: truncated_labels(g, &final_set),
    })
}

fn set_labels(g: &KnowledgeGraph, set: &EntitySet) -> Vec<String> {
    set.iter().map(|e| g.entity_label(e).to_string()).collect()
}

fn truncated_labels(g: &KnowledgeGraph, set: &EntitySet) -> Vec<String> {
    if set.len() <= RESPONSE_TRUNCATE_LIMIT {
        return set_labels(g, set);
    }
    let mut out: Vec<String> = set
        .iter()
        .take(RESPONSE_TRUNCATE_LIMIT)
        .map(|e| g.entity_label(e).to_string())
        .collect();
    out.push(format!("<truncated; {} total>", set.len()));
    out
}

/// Per-step replay outcome.
#[derive(Debug, Clone, Serialize)]
pub struct StepOutcome {
    pub step: usize,
    pub ok: bool,
    pub detail: Option<String>,
}

/// Result of auditing one recorded path against the graph.
#[derive(Debug, Clone, Serialize)]
pub struct VerificationReport {
    pub steps: Vec<StepOutcome>,
    pub final_answer_ok: bool,
}

impl VerificationReport {
    pub fn pass(&self) -> bool {
        self.final_answer_ok && self.steps.iter().all(|s| s.ok)
    }

    pub fn mismatches(&self) -> usize {
        self.steps.iter().filter(|s| !s.ok).count() + usize::from(!self.final_answer_ok)
    }
}

/// Re-executes every recorded step on its recorded arguments and checks
/// the responses byte-for-byte; the final answer is checked against a
/// fresh evaluation of the recorded query text.
pub fn verify_replay(
    g: &KnowledgeGraph,
    path: &SolutionPath,
    apis: &ApiIndex,
) -> Result<VerificationReport> {
    let mut outcomes = Vec::with_capacity(path.steps.len());
    for (idx, step) in path.steps.iter().enumerate() {
        // Unknown API names abort the audit; everything else is a
        // per-step mismatch.
        apis.operation(&step.api)?;
        let outcome = replay_step(g, apis, step)
            .map(|computed| {
                if computed == step.response {
                    StepOutcome {
                        step: idx + 1,
                        ok: true,
                        detail: None,
                    }
                } else {
                    StepOutcome {
                        step: idx + 1,
                        ok: false,
                        detail: Some("response differs from re-execution".into()),
                    }
                }
            })
            .unwrap_or_else(|e| StepOutcome {
                step: idx + 1,
                ok: false,
                detail: Some(e.to_string()),
            });
        outcomes.push(outcome);
    }
    let final_answer_ok = match crate::fol::text::parse_fol(g, &path.fol) {
        Ok(query) => match evaluate(g, &query) {
            Ok(answers) => {
                truncated_labels(g, &answers) == path.final_answer
                    && path
                        .steps
                        .last()
                        .is_some_and(|s| s.response == path.final_answer)
            }
            Err(_) => false,
        },
        Err(_) => false,
    };
    Ok(VerificationReport {
        steps: outcomes,
        final_answer_ok,
    })
}

fn replay_step(g: &KnowledgeGraph, apis: &ApiIndex, step: &SolutionStep) -> Result<Vec<String>> {
    let mut arg_sets = Vec::with_capacity(step.args.len());
    for labels in &step.args {
        let mut ids = Vec::with_capacity(labels.len());
        for label in labels {
            ids.push(g.entity_id(label).ok_or_else(|| Error::UnknownLabel {
                kind: "entity",
                label: label.clone(),
            })?);
        }
        arg_sets.push(EntitySet::from_ids(ids));
    }
    let result = apply_api(g, apis, &step.api, &arg_sets)?;
    Ok(truncated_labels(g, &result))
}

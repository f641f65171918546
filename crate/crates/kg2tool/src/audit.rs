//! Record-level audit of exported datasets.
//!
//! Every exported record carries enough metadata (FOL text, API bindings)
//! to be checked against the source graph without trusting the generator:
//! the audit re-plans and re-executes the recorded query, rebuilds the
//! deterministic parts of every turn, and compares byte-for-byte. The
//! natural-language question itself is the one part taken on faith — its
//! semantic fidelity is not machine-checkable — so the audit extracts it
//! from the record and verifies everything around it.

use std::collections::HashMap;

use crate::api::ApiIndex;
use crate::error::{Error, Result};
use crate::fol::text::parse_fol;
use crate::instruction::{self, system_prompt_tool_names, InstructionRecord, Role, TaskKind};
use crate::kg::KnowledgeGraph;
use crate::solution::{execute_chain, plan_chain, SolutionPath, SolutionStep};

/// Outcome of a clean audit.
#[derive(Debug, Clone, serde::Serialize)]
pub struct AuditSummary {
    pub records: usize,
    pub pairs: usize,
    pub step_mismatches: usize,
}

/// Audits records in order and fails at the first inconsistent one,
/// reporting its zero-based index in the export file.
pub fn audit_records(g: &KnowledgeGraph, records: &[InstructionRecord]) -> Result<AuditSummary> {
    let mut truth_cache: HashMap<String, SolutionPath> = HashMap::new();
    let mut pairs: std::collections::HashSet<(String, String)> = std::collections::HashSet::new();
    for (idx, record) in records.iter().enumerate() {
        audit_record(g, record, &mut truth_cache).map_err(|e| Error::RecordAudit {
            record: idx,
            message: e.to_string(),
        })?;
        pairs.insert((
            record.meta.pattern.to_string(),
            record.meta.sample_id.clone(),
        ));
    }
    Ok(AuditSummary {
        records: records.len(),
        pairs: pairs.len(),
        step_mismatches: 0,
    })
}

fn truth_key(record: &InstructionRecord) -> String {
    format!(
        "{}|{}",
        record.meta.fol,
        serde_json::to_string(&record.meta.apis).expect("bindings serialize")
    )
}

/// Recomputes the solution path a record claims to describe.
fn truth_for(
    g: &KnowledgeGraph,
    record: &InstructionRecord,
    cache: &mut HashMap<String, SolutionPath>,
) -> Result<SolutionPath> {
    let key = truth_key(record);
    if let Some(path) = cache.get(&key) {
        return Ok(path.clone());
    }
    let apis = ApiIndex::from_bindings(g, &record.meta.apis)?;
    let query = parse_fol(g, &record.meta.fol)?;
    if query.pattern() != record.meta.pattern {
        return Err(audit_err(
            "metadata pattern tag does not match the FOL text",
        ));
    }
    let chain = plan_chain(g, &query, &apis)?;
    let path = execute_chain(g, &chain, &apis)?;
    cache.insert(key, path.clone());
    Ok(path)
}

fn audit_err(message: &str) -> Error {
    Error::Integrity {
        location: "record".into(),
        message: message.into(),
    }
}

fn expect_eq(what: &str, got: &str, want: &str) -> Result<()> {
    if got == want {
        Ok(())
    } else {
        Err(audit_err(&format!("{what} differs from re-derivation")))
    }
}

fn audit_record(
    g: &KnowledgeGraph,
    record: &InstructionRecord,
    cache: &mut HashMap<String, SolutionPath>,
) -> Result<()> {
    let truth = truth_for(g, record, cache)?;

    // System prompt: present, and its tool list matches the metadata
    // bindings in order (which in turn cover every step's API).
    let system = record
        .turns
        .first()
        .ok_or_else(|| audit_err("record has no turns"))?;
    if system.role != Role::System {
        return Err(audit_err("first turn is not the system prompt"));
    }
    let prompt_tools = system_prompt_tool_names(&system.text);
    let meta_names: Vec<String> = record.meta.apis.iter().map(|b| b.name.clone()).collect();
    if prompt_tools != meta_names {
        return Err(audit_err(
            "system prompt tool list does not match metadata bindings",
        ));
    }
    for step in &truth.steps {
        if !prompt_tools.iter().any(|n| n == &step.api) {
            return Err(audit_err("toolset is missing an API used by the solution"));
        }
    }

    let user = record
        .turns
        .get(1)
        .ok_or_else(|| audit_err("record has no user turn"))?;
    if user.role != Role::User {
        return Err(audit_err("second turn is not the user turn"));
    }

    match record.meta.kind {
        TaskKind::Trajectory => audit_trajectory(record, &truth),
        kind => {
            if record.turns.len() != 2 {
                return Err(audit_err("single-turn record has extra turns"));
            }
            let label = record
                .label
                .as_deref()
                .ok_or_else(|| audit_err("record has no label"))?;
            let question = extract_question(&user.text)?;
            match kind {
                TaskKind::Plan => {
                    expect_eq("user turn", &user.text, &instruction::user_plan(&question))?;
                    expect_eq("label", label, &instruction::plan_label(&truth))
                }
                TaskKind::Reason | TaskKind::Retrieve | TaskKind::Understand => {
                    let i = step_index(record, &truth)?;
                    let (expected_turn, expected_label) = match kind {
                        TaskKind::Reason => (
                            instruction::user_reason(&question, &truth.steps, i),
                            truth.steps[i].goal.clone(),
                        ),
                        TaskKind::Retrieve => (
                            instruction::user_retrieve(&question, &truth.steps, i),
                            truth.steps[i].api.clone(),
                        ),
                        _ => (
                            instruction::user_understand(&question, &truth.steps, i),
                            instruction::understand_label(&truth.steps[i]),
                        ),
                    };
                    expect_eq("user turn", &user.text, &expected_turn)?;
                    expect_eq("label", label, &expected_label)
                }
                TaskKind::Review => {
                    let i = step_index(record, &truth)?;
                    let shown = extract_reviewed_step(&user.text)?;
                    let rebuilt =
                        instruction::user_review(&question, &truth.steps, i, &shown.response);
                    expect_eq("user turn", &user.text, &rebuilt)?;
                    let pass = shown.response == truth.steps[i].response;
                    if label != if pass { "pass" } else { "fail" } {
                        return Err(audit_err("review label contradicts the shown response"));
                    }
                    if record.meta.review_pass != Some(pass) {
                        return Err(audit_err("review metadata contradicts the shown response"));
                    }
                    Ok(())
                }
                TaskKind::Trajectory => unreachable!(),
            }
        }
    }
}

fn audit_trajectory(record: &InstructionRecord, truth: &SolutionPath) -> Result<()> {
    let expected_len = 2 + 2 * truth.steps.len() + 1;
    if record.turns.len() != expected_len {
        return Err(audit_err(
            "trajectory turn count does not match the solution",
        ));
    }
    for (i, step) in truth.steps.iter().enumerate() {
        let call = &record.turns[2 + 2 * i];
        let response = &record.turns[3 + 2 * i];
        if call.role != Role::Assistant || response.role != Role::ToolResponse {
            return Err(audit_err("trajectory roles out of order"));
        }
        expect_eq("tool call", &call.text, &instruction::assistant_call(step))?;
        expect_eq(
            "tool response",
            &response.text,
            &instruction::tool_response_text(step),
        )?;
    }
    let last = record.turns.last().expect("length checked");
    if last.role != Role::Assistant {
        return Err(audit_err(
            "trajectory does not end with the assistant answer",
        ));
    }
    expect_eq(
        "final answer",
        &last.text,
        &instruction::final_answer_text(truth),
    )
}

fn extract_question(user_turn: &str) -> Result<String> {
    let first = user_turn.lines().next().unwrap_or_default();
    first
        .strip_prefix("Question: ")
        .map(str::to_string)
        .ok_or_else(|| audit_err("user turn does not open with the question"))
}

fn step_index(record: &InstructionRecord, truth: &SolutionPath) -> Result<usize> {
    let step = record
        .meta
        .step
        .ok_or_else(|| audit_err("record is missing its step index"))?;
    if step == 0 || step > truth.steps.len() {
        return Err(audit_err("step index out of range"));
    }
    Ok(step - 1)
}

fn extract_reviewed_step(user_turn: &str) -> Result<SolutionStep> {
    let marker = "Step under review: ";
    let start = user_turn
        .find(marker)
        .ok_or_else(|| audit_err("review turn is missing the reviewed step"))?
        + marker.len();
    let rest = &user_turn[start..];
    let end = rest.find('\n').unwrap_or(rest.len());
    serde_json::from_str(&rest[..end]).map_err(|_| audit_err("reviewed step is not valid JSON"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::api::{build_toolset, Toolkit};
    use crate::instruction::{build_records, QuerySolutionPair};
    use crate::patterns::PatternTag;
    use crate::rng::derive_indexed_rng;
    use crate::sampler::sample_batch;
    use crate::solution::verify_replay;
    use crate::translate::{translate_template, TranslationRequest};

    fn records_for(g: &KnowledgeGraph, tag: PatternTag, n: usize) -> Vec<InstructionRecord> {
        let toolkit = Toolkit::derive(g, None);
        let apis = ApiIndex::from_toolkit(&toolkit);
        let (samples, _) = sample_batch(g, tag, n, 71, n * 300, 100).unwrap();
        let mut out = Vec::new();
        for (idx, s) in samples.iter().enumerate() {
            let chain = plan_chain(g, &s.query, &apis).unwrap();
            let mut path = execute_chain(g, &chain, &apis).unwrap();
            let mut used: Vec<String> = chain.steps.iter().map(|st| st.api.clone()).collect();
            used.dedup();
            let mut trng = derive_indexed_rng(71, "toolset", tag.as_str(), idx);
            let toolset = build_toolset(&used, &toolkit, 2, &mut trng).unwrap();
            let descriptions: Vec<String> = s
                .query
                .bindings()
                .relations
                .iter()
                .map(|dr| {
                    let name = apis.name_for(*dr).unwrap();
                    toolkit.by_name(name).unwrap().description.clone()
                })
                .collect();
            let req = TranslationRequest::build(g, &s.query, &apis, &descriptions).unwrap();
            let nl = translate_template(&req);
            path.query = nl.question.clone();
            let verified = verify_replay(g, &path, &apis).unwrap().pass();
            let pair = QuerySolutionPair {
                pattern: tag,
                sample_id: format!("{tag}-{idx:05}"),
                nl,
                path,
                toolset,
                verified,
            };
            let mut rrng = derive_indexed_rng(71, "records", tag.as_str(), idx);
            out.extend(build_records(g, &pair, 0.6, &mut rrng).unwrap());
        }
        out
    }

    #[test]
    fn clean_records_pass_the_audit() {
        let g = crate::testutil::random_graph(1200, 61);
        for tag in [
            PatternTag::OneP,
            PatternTag::Ip,
            PatternTag::Pni,
            PatternTag::Up,
        ] {
            let records = records_for(&g, tag, 3);
            let summary = audit_records(&g, &records).unwrap();
            assert_eq!(summary.pairs, 3);
            assert_eq!(summary.step_mismatches, 0);
        }
    }

    #[test]
    fn tampered_response_fails_at_that_record() {
        let g = crate::testutil::random_graph(1200, 62);
        let mut records = records_for(&g, PatternTag::TwoP, 2);
        // Find a trajectory record and flip one byte of a tool response.
        let idx = records
            .iter()
            .position(|r| r.meta.kind == TaskKind::Trajectory)
            .unwrap();
        let turn = records[idx]
            .turns
            .iter_mut()
            .find(|t| t.role == Role::ToolResponse)
            .unwrap();
        let mut bytes = turn.text.clone().into_bytes();
        let flip = bytes
            .iter()
            .position(|&b| b.is_ascii_alphanumeric())
            .unwrap();
        bytes[flip] = if bytes[flip] == b'x' { b'y' } else { b'x' };
        turn.text = String::from_utf8(bytes).unwrap();

        let err = audit_records(&g, &records).unwrap_err();
        match err {
            Error::RecordAudit { record, .. } => assert_eq!(record, idx),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn tampered_label_and_metadata_are_caught() {
        let g = crate::testutil::random_graph(1200, 63);
        let base = records_for(&g, PatternTag::TwoIn, 2);

        let mut tampered = base.clone();
        let idx = tampered
            .iter()
            .position(|r| r.meta.kind == TaskKind::Retrieve)
            .unwrap();
        tampered[idx].label = Some("get_nothing_of_nobody".into());
        assert!(matches!(
            audit_records(&g, &tampered),
            Err(Error::RecordAudit { record, .. }) if record == idx
        ));

        let mut tampered = base.clone();
        let idx = tampered
            .iter()
            .position(|r| r.meta.kind == TaskKind::Review)
            .unwrap();
        let flipped = !tampered[idx].meta.review_pass.unwrap();
        tampered[idx].meta.review_pass = Some(flipped);
        assert!(matches!(
            audit_records(&g, &tampered),
            Err(Error::RecordAudit { record, .. }) if record == idx
        ));

        // Tampering the FOL text breaks the final-answer linkage.
        let mut tampered = base.clone();
        tampered[0].meta.fol = "q =?a : nope(X, a)".into();
        assert!(audit_records(&g, &tampered).is_err());

        // Tampering a logical binding name is caught, not panicked on.
        let mut tampered = base;
        let Some(binding) = tampered[0]
            .meta
            .apis
            .iter_mut()
            .find(|b| b.relation.is_none())
        else {
            panic!("toolsets built here always include a logical API");
        };
        binding.name = "get_everything_of".into();
        assert!(matches!(
            audit_records(&g, &tampered),
            Err(Error::RecordAudit { record: 0, .. })
        ));
    }

    #[test]
    fn review_records_survive_the_audit_with_corruption() {
        let g = crate::testutil::random_graph(1500, 64);
        let records = records_for(&g, PatternTag::ThreeIn, 4);
        let reviews = records
            .iter()
            .filter(|r| r.meta.kind == TaskKind::Review)
            .count();
        assert!(reviews > 0, "expected some review records");
        audit_records(&g, &records).unwrap();
    }
}

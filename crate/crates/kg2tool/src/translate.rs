//! Natural-language rendering of instantiated queries.
//!
//! Two modes. Template mode is total and deterministic: one fill-in
//! question shape per pattern, phrased over humanized API names and anchor
//! labels. LLM mode prompts a chat endpoint with the query rewritten over
//! API names (raw graph relations are hard to read) and validates the
//! reply structurally; semantic fidelity is not machine-checked, which is
//! why the FOL form travels with every record.

use serde::{Deserialize, Serialize};

use crate::api::ApiIndex;
use crate::error::Result;
use crate::fol::FolQuery;
use crate::kg::KnowledgeGraph;
use crate::llm::{ChatExchange, LlmClient};
use crate::patterns::{self, PatternTag, SlotTerm};

pub const TRANSLATE_PROMPT: &str = include_str!("../assets/fol_translate_prompt.txt");

/// Longest acceptable LLM question, in characters.
pub const MAX_QUESTION_CHARS: usize = 400;
const LLM_ATTEMPTS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TranslationMode {
    Llm,
    Template,
}

/// A query ready for translation: pattern, API-form FOL text, and the
/// API name/description pair for every relation slot.
#[derive(Debug, Clone)]
pub struct TranslationRequest {
    pub pattern: PatternTag,
    /// FOL text with relation symbols replaced by API names, arguments in
    /// input→output order.
    pub fol_api_form: String,
    /// `(name, description)` per relation slot.
    pub relation_apis: Vec<(String, String)>,
    /// Anchor labels per anchor slot.
    pub anchor_labels: Vec<String>,
}

impl TranslationRequest {
    /// Builds the request for an instantiated query. `descriptions`
    /// supplies one description per relation slot (they come from the
    /// record's toolset).
    pub fn build(
        g: &KnowledgeGraph,
        query: &FolQuery,
        apis: &ApiIndex,
        descriptions: &[String],
    ) -> Result<TranslationRequest> {
        let tag = query.pattern();
        let mut relation_apis = Vec::with_capacity(query.bindings().relations.len());
        for (slot, dr) in query.bindings().relations.iter().enumerate() {
            let name = apis.name_for(*dr)?.to_string();
            let description = descriptions.get(slot).cloned().unwrap_or_default();
            relation_apis.push((name, description));
        }
        let anchor_labels: Vec<String> = query
            .bindings()
            .anchors
            .iter()
            .map(|&e| g.entity_label(e).to_string())
            .collect();
        let fol_api_form = api_form(tag, &relation_apis, &anchor_labels);
        Ok(TranslationRequest {
            pattern: tag,
            fol_api_form,
            relation_apis,
            anchor_labels,
        })
    }
}

/// The query text shown to the LLM: catalog atoms with API names as
/// relation symbols, ASCII connectives.
fn api_form(tag: PatternTag, relation_apis: &[(String, String)], anchors: &[String]) -> String {
    let free = patterns::free_var(tag);
    let bound = patterns::bound_vars(tag);
    let term = |t: SlotTerm| -> String {
        match t {
            SlotTerm::Free => free.to_string(),
            SlotTerm::Bound(i) => bound[i].to_string(),
            SlotTerm::Anchor(s) => anchors[s].clone(),
        }
    };
    let atoms = patterns::pattern_atoms(tag);
    let atom_text = |a: &patterns::TemplateAtom| {
        format!(
            "{}{}({}, {})",
            if a.negated { "!" } else { "" },
            relation_apis[a.rel_slot].0,
            term(a.src),
            term(a.dst)
        )
    };
    let union: Vec<String> = atoms.iter().filter(|a| a.in_union).map(atom_text).collect();
    let plain: Vec<String> = atoms
        .iter()
        .filter(|a| !a.in_union)
        .map(atom_text)
        .collect();
    let body = if union.is_empty() {
        plain.join(" & ")
    } else if plain.is_empty() {
        union.join(" | ")
    } else {
        let mut s = format!("({})", union.join(" | "));
        for p in &plain {
            s.push_str(" & ");
            s.push_str(p);
        }
        s
    };
    let prefix = if bound.is_empty() {
        String::new()
    } else {
        format!(
            "exists {} : ",
            bound
                .iter()
                .map(char::to_string)
                .collect::<Vec<_>>()
                .join(", ")
        )
    };
    format!("q =?{free} : {prefix}{body}")
}

/// Structural validity of a question string.
pub fn question_is_valid(q: &str) -> bool {
    let q = q.trim();
    !q.is_empty() && q.chars().count() <= MAX_QUESTION_CHARS && !q.contains('\n')
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NlQuery {
    pub question: String,
    pub mode: TranslationMode,
}

fn phrase(api_name: &str) -> String {
    api_name
        .strip_prefix("get_")
        .unwrap_or(api_name)
        .replace('_', " ")
}

/// Deterministic pattern-specific question templates.
pub fn translate_template(req: &TranslationRequest) -> NlQuery {
    let p = |i: usize| phrase(&req.relation_apis[i].0);
    let a = |i: usize| req.anchor_labels[i].clone();
    let question = match req.pattern {
        PatternTag::OneP => format!("What is the {} {}?", p(0), a(0)),
        PatternTag::TwoP => format!("What is the {} of the {} {}?", p(1), p(0), a(0)),
        PatternTag::ThreeP => {
            format!(
                "What is the {} of the {} of the {} {}?",
                p(2),
                p(1),
                p(0),
                a(0)
            )
        }
        PatternTag::TwoI => {
            format!(
                "Which entities are both {} of {} and {} of {}?",
                p(0),
                a(0),
                p(1),
                a(1)
            )
        }
        PatternTag::ThreeI => format!(
            "Which entities are the {} of {}, the {} of {}, and the {} of {}?",
            p(0),
            a(0),
            p(1),
            a(1),
            p(2),
            a(2)
        ),
        PatternTag::Pi => format!(
            "Which entities are both the {} of the {} {} and the {} of {}?",
            p(1),
            p(0),
            a(0),
            p(2),
            a(1)
        ),
        PatternTag::Ip => format!(
            "What is the {} of the entities that are both {} of {} and {} of {}?",
            p(2),
            p(0),
            a(0),
            p(1),
            a(1)
        ),
        PatternTag::TwoU => {
            format!(
                "Which entities are the {} of {} or the {} of {}?",
                p(0),
                a(0),
                p(1),
                a(1)
            )
        }
        PatternTag::Up => format!(
            "What is the {} of the entities that are {} of {} or {} of {}?",
            p(2),
            p(0),
            a(0),
            p(1),
            a(1)
        ),
        PatternTag::TwoIn => format!(
            "Which entities are the {} of {} but not the {} of {}?",
            p(0),
            a(0),
            p(1),
            a(1)
        ),
        PatternTag::ThreeIn => format!(
            "Which entities are the {} of {} and the {} of {} but not the {} of {}?",
            p(0),
            a(0),
            p(1),
            a(1),
            p(2),
            a(2)
        ),
        PatternTag::Inp => format!(
            "What is the {} of the entities that are {} of {} but not {} of {}?",
            p(2),
            p(0),
            a(0),
            p(1),
            a(1)
        ),
        PatternTag::Pin => format!(
            "Which entities are the {} of the {} {} but not the {} of {}?",
            p(1),
            p(0),
            a(0),
            p(2),
            a(1)
        ),
        PatternTag::Pni => format!(
            "Which entities are the {} of {} but not the {} of the {} {}?",
            p(2),
            a(1),
            p(1),
            p(0),
            a(0)
        ),
    };
    NlQuery {
        question,
        mode: TranslationMode::Template,
    }
}

/// LLM translation with validation and template fallback.
pub fn translate_llm(req: &TranslationRequest, client: &LlmClient) -> NlQuery {
    let apis_block: String = req
        .relation_apis
        .iter()
        .map(|(name, desc)| format!("{name}: {desc}"))
        .collect::<Vec<_>>()
        .join("\n");
    let prompt = TRANSLATE_PROMPT
        .replace("{apis}", &apis_block)
        .replace("{pattern}", req.pattern.as_str())
        .replace("{fol}", &req.fol_api_form);
    for _ in 0..LLM_ATTEMPTS {
        let Ok(text) = client.chat(&ChatExchange::new(None, &prompt)) else {
            continue;
        };
        let question = text.trim().to_string();
        if question_is_valid(&question) {
            return NlQuery {
                question,
                mode: TranslationMode::Llm,
            };
        }
    }
    translate_template(req)
}

/// Relation-slot description lookup helper for building requests from a
/// toolset-less context (tests, the `sample` dump).
pub fn slot_descriptions(query: &FolQuery, apis: &ApiIndex) -> Vec<String> {
    query
        .bindings()
        .relations
        .iter()
        .map(|dr| {
            apis.name_for(*dr)
                .map(|n| format!("Returns the {}.", phrase(n)))
                .unwrap_or_default()
        })
        .collect()
}

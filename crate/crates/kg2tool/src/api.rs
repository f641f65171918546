//! Callable-tool descriptors derived from relation types.
//!
//! Each relation yields two APIs: the forward reading (head entities in,
//! tail entities out, named `get_<tail>_of_<head>`) and the inverse
//! reading (named `get_<head>_with_<tail>` by the offline template; an
//! LLM can rewrite it into something more natural). Three fixed logical
//! APIs execute intersection, union, and relative complement. Template
//! derivation is pure, so the full toolkit is reproducible offline.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{DirectedRelation, Direction, KnowledgeGraph, RelationId};
use crate::llm::{ChatExchange, LlmClient};

pub const API_GEN_PROMPT: &str = include_str!("../assets/api_gen_prompt.txt");
const LLM_NAME_ATTEMPTS: usize = 3;

pub const INTERSECTION_API: &str = "get_intersection_of";
pub const UNION_API: &str = "get_union_of";
pub const NEGATION_API: &str = "get_negation_of";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DerivationMode {
    Template,
    Llm,
}

/// Where a descriptor came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Provenance {
    Relation {
        relation: RelationId,
        direction: Direction,
    },
    Logical,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiParameter {
    pub name: String,
    #[serde(rename = "type")]
    pub semantic_type: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiReturn {
    #[serde(rename = "type")]
    pub semantic_type: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiDescriptor {
    pub name: String,
    pub description: String,
    pub parameters: Vec<ApiParameter>,
    pub returns: ApiReturn,
    pub provenance: Provenance,
    pub mode: DerivationMode,
    /// True when a fallback produced the name (unparseable relation path
    /// or rejected LLM output).
    pub degraded: bool,
}

/// Exported shape of a descriptor: name, description, parameters, returns,
/// in that byte-stable field order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireDescriptor {
    pub name: String,
    pub description: String,
    pub parameters: Vec<ApiParameter>,
    pub returns: ApiReturn,
}

impl ApiDescriptor {
    pub fn wire(&self) -> WireDescriptor {
        WireDescriptor {
            name: self.name.clone(),
            description: self.description.clone(),
            parameters: self.parameters.clone(),
            returns: self.returns.clone(),
        }
    }
}

/// `^[a-z][a-z0-9_]*$`
pub fn valid_api_name(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c.is_ascii_lowercase() => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

fn sanitize_token(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut last_underscore = true;
    for c in raw.chars() {
        let c = c.to_ascii_lowercase();
        if c.is_ascii_lowercase() || c.is_ascii_digit() {
            out.push(c);
            last_underscore = false;
        } else if !last_underscore {
            out.push('_');
            last_underscore = true;
        }
    }
    while out.ends_with('_') {
        out.pop();
    }
    while out.starts_with(|c: char| c.is_ascii_digit() || c == '_') {
        out.remove(0);
    }
    out
}

/// Head/tail type tokens from a URL-style relation path: the last segment
/// names the tail type, the one before it the head type.
fn type_tokens(relation: &str) -> Option<(String, String)> {
    let segments: Vec<&str> = relation.split('/').filter(|s| !s.is_empty()).collect();
    if segments.len() < 2 {
        return None;
    }
    let head = sanitize_token(segments[segments.len() - 2]);
    let tail = sanitize_token(segments[segments.len() - 1]);
    if head.is_empty() || tail.is_empty() {
        return None;
    }
    Some((head, tail))
}

fn humanize(token: &str) -> String {
    token.replace('_', " ")
}

/// Deterministic descriptor for one relation reading.
pub fn derive_api_template(
    g: &KnowledgeGraph,
    relation: RelationId,
    direction: Direction,
) -> ApiDescriptor {
    let label = g.relation_label(relation);
    let (name, description, input_desc, return_desc, degraded) = match type_tokens(label) {
        Some((head, tail)) => match direction {
            Direction::Forward => (
                format!("get_{tail}_of_{head}"),
                format!(
                    "Returns the {} of the given {}.",
                    humanize(&tail),
                    humanize(&head)
                ),
                format!("Input {} entities.", humanize(&head)),
                format!("The {} entities reached.", humanize(&tail)),
                false,
            ),
            Direction::Inverse => (
                format!("get_{head}_with_{tail}"),
                format!(
                    "Returns the {} whose {} includes the given entities.",
                    humanize(&head),
                    humanize(&tail)
                ),
                format!("Input {} entities.", humanize(&tail)),
                format!("The {} entities reached.", humanize(&head)),
                false,
            ),
        },
        None => {
            // No usable path segments: sanitized full-path fallback.
            let base = {
                let s = sanitize_token(label);
                if s.is_empty() {
                    "relation".to_string()
                } else {
                    s
                }
            };
            match direction {
                Direction::Forward => (
                    format!("get_{base}"),
                    format!("Returns the entities related to the input via {label}."),
                    "Input entities.".to_string(),
                    "The related entities.".to_string(),
                    true,
                ),
                Direction::Inverse => (
                    format!("get_{base}_inverse"),
                    format!("Returns the entities relating to the input via {label}."),
                    "Input entities.".to_string(),
                    "The related entities.".to_string(),
                    true,
                ),
            }
        }
    };
    ApiDescriptor {
        name,
        description,
        parameters: vec![ApiParameter {
            name: "entities".into(),
            semantic_type: "entity_list".into(),
            description: input_desc,
        }],
        returns: ApiReturn {
            semantic_type: "entity_list".into(),
            description: return_desc,
        },
        provenance: Provenance::Relation {
            relation,
            direction,
        },
        mode: DerivationMode::Template,
        degraded,
    }
}

#[derive(Deserialize)]
struct LlmApiAnswer {
    name: String,
    description: String,
}

/// LLM-named descriptor; falls back to the template after rejected
/// attempts and flags the result.
pub fn derive_api_llm(
    g: &KnowledgeGraph,
    relation: RelationId,
    direction: Direction,
    client: &LlmClient,
) -> ApiDescriptor {
    let label = g.relation_label(relation);
    let prompt = API_GEN_PROMPT.replace("{relation}", label).replace(
        "{direction}",
        match direction {
            Direction::Forward => "forward",
            Direction::Inverse => "reverse",
        },
    );
    for _ in 0..LLM_NAME_ATTEMPTS {
        let Ok(text) = client.chat(&ChatExchange::new(None, &prompt)) else {
            continue;
        };
        let Some(parsed) = parse_llm_answer(&text) else {
            continue;
        };
        if !valid_api_name(&parsed.name) || parsed.description.trim().is_empty() {
            continue;
        }
        let mut api = derive_api_template(g, relation, direction);
        api.name = parsed.name;
        api.description = parsed.description.trim().to_string();
        api.mode = DerivationMode::Llm;
        api.degraded = false;
        return api;
    }
    let mut fallback = derive_api_template(g, relation, direction);
    fallback.degraded = true;
    fallback
}

fn parse_llm_answer(text: &str) -> Option<LlmApiAnswer> {
    let trimmed = text.trim();
    let start = trimmed.find('{')?;
    let end = trimmed.rfind('}')?;
    serde_json::from_str(&trimmed[start..=end]).ok()
}

/// The three fixed logical-operation descriptors, in stable order.
pub fn logical_apis() -> [ApiDescriptor; 3] {
    let set_param = |name: &str, description: &str| ApiParameter {
        name: name.into(),
        semantic_type: "entity_list".into(),
        description: description.into(),
    };
    [
        ApiDescriptor {
            name: INTERSECTION_API.into(),
            description: "Returns the entities common to both input sets.".into(),
            parameters: vec![
                set_param("set_a", "First entity set."),
                set_param("set_b", "Second entity set."),
            ],
            returns: ApiReturn {
                semantic_type: "entity_list".into(),
                description: "Entities present in every input set.".into(),
            },
            provenance: Provenance::Logical,
            mode: DerivationMode::Template,
            degraded: false,
        },
        ApiDescriptor {
            name: UNION_API.into(),
            description: "Returns the entities present in either input set.".into(),
            parameters: vec![
                set_param("set_a", "First entity set."),
                set_param("set_b", "Second entity set."),
            ],
            returns: ApiReturn {
                semantic_type: "entity_list".into(),
                description: "Entities present in at least one input set.".into(),
            },
            provenance: Provenance::Logical,
            mode: DerivationMode::Template,
            degraded: false,
        },
        ApiDescriptor {
            name: NEGATION_API.into(),
            description: "Returns the candidate entities that are not in the excluded set.".into(),
            parameters: vec![
                set_param("candidates", "Candidate entity set."),
                set_param("exclude", "Entities to remove from the candidates."),
            ],
            returns: ApiReturn {
                semantic_type: "entity_list".into(),
                description: "Candidates minus the excluded entities.".into(),
            },
            provenance: Provenance::Logical,
            mode: DerivationMode::Template,
            degraded: false,
        },
    ]
}

/// Full API table for a graph: every relation in both directions plus the
/// three logical APIs, with name collisions suffixed `_2`, `_3`, … in
/// first-come order.
pub struct Toolkit {
    apis: Vec<ApiDescriptor>,
    by_name: HashMap<String, usize>,
    by_relation: HashMap<DirectedRelation, usize>,
    pub collisions: usize,
}

impl Toolkit {
    pub fn derive(g: &KnowledgeGraph, client: Option<&LlmClient>) -> Toolkit {
        let mut toolkit = Toolkit {
            apis: Vec::with_capacity(g.relation_count() * 2 + 3),
            by_name: HashMap::new(),
            by_relation: HashMap::new(),
            collisions: 0,
        };
        for relation in g.relation_ids_iter() {
            for direction in [Direction::Forward, Direction::Inverse] {
                let api = match client {
                    Some(c) => derive_api_llm(g, relation, direction, c),
                    None => derive_api_template(g, relation, direction),
                };
                toolkit.insert(api);
            }
        }
        for api in logical_apis() {
            toolkit.insert(api);
        }
        toolkit
    }

    fn insert(&mut self, mut api: ApiDescriptor) {
        if self.by_name.contains_key(&api.name) {
            self.collisions += 1;
            let base = api.name.clone();
            let mut n = 2;
            while self.by_name.contains_key(&format!("{base}_{n}")) {
                n += 1;
            }
            api.name = format!("{base}_{n}");
        }
        let idx = self.apis.len();
        self.by_name.insert(api.name.clone(), idx);
        if let Provenance::Relation {
            relation,
            direction,
        } = api.provenance
        {
            self.by_relation.insert(
                DirectedRelation {
                    relation,
                    direction,
                },
                idx,
            );
        }
        self.apis.push(api);
    }

    pub fn apis(&self) -> &[ApiDescriptor] {
        &self.apis
    }

    pub fn by_name(&self, name: &str) -> Option<&ApiDescriptor> {
        self.by_name.get(name).map(|&i| &self.apis[i])
    }

    pub fn for_relation(&self, dr: DirectedRelation) -> Result<&ApiDescriptor> {
        self.by_relation
            .get(&dr)
            .map(|&i| &self.apis[i])
            .ok_or_else(|| Error::MissingApi {
                relation: format!("{:?}", dr.relation),
                direction: dr.direction.to_string(),
            })
    }
}

/// What executing an API means.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApiOperation {
    Project(DirectedRelation),
    Intersection,
    Union,
    Negation,
}

/// Name ↔ operation lookup used by planning, execution, and replay.
///
/// Built either from a full [`Toolkit`] or from the per-record API
/// bindings carried in exported metadata, so audits do not depend on
/// regenerating names (which an LLM may have chosen).
#[derive(Debug, Clone, Default)]
pub struct ApiIndex {
    ops: HashMap<String, ApiOperation>,
    names: HashMap<DirectedRelation, String>,
}

impl ApiIndex {
    pub fn from_toolkit(toolkit: &Toolkit) -> ApiIndex {
        let mut index = ApiIndex::default();
        for api in toolkit.apis() {
            index
                .add(&api.name, api.provenance)
                .expect("toolkit descriptors are well-formed");
        }
        index
    }

    /// Rebuilds the lookup from exported bindings; relation labels must
    /// resolve in `g` and logical names must be the three fixed ones.
    pub fn from_bindings(g: &KnowledgeGraph, bindings: &[ApiBinding]) -> Result<ApiIndex> {
        let mut index = ApiIndex::default();
        for b in bindings {
            match (&b.relation, b.direction) {
                (Some(label), Some(direction)) => {
                    let relation = g.relation_id(label).ok_or_else(|| Error::UnknownLabel {
                        kind: "relation",
                        label: label.clone(),
                    })?;
                    index.add(
                        &b.name,
                        Provenance::Relation {
                            relation,
                            direction,
                        },
                    )?;
                }
                _ => index.add(&b.name, Provenance::Logical)?,
            }
        }
        Ok(index)
    }

    fn add(&mut self, name: &str, provenance: Provenance) -> Result<()> {
        let op = match provenance {
            Provenance::Relation {
                relation,
                direction,
            } => {
                let dr = DirectedRelation {
                    relation,
                    direction,
                };
                self.names.entry(dr).or_insert_with(|| name.to_string());
                ApiOperation::Project(dr)
            }
            Provenance::Logical => match name {
                INTERSECTION_API => ApiOperation::Intersection,
                UNION_API => ApiOperation::Union,
                NEGATION_API => ApiOperation::Negation,
                other => {
                    return Err(Error::UnknownLabel {
                        kind: "api",
                        label: other.to_string(),
                    })
                }
            },
        };
        self.ops.insert(name.to_string(), op);
        Ok(())
    }

    /// Always knows the three logical operations, even when the bindings
    /// omit them.
    pub fn operation(&self, name: &str) -> Result<ApiOperation> {
        if let Some(op) = self.ops.get(name) {
            return Ok(*op);
        }
        match name {
            INTERSECTION_API => Ok(ApiOperation::Intersection),
            UNION_API => Ok(ApiOperation::Union),
            NEGATION_API => Ok(ApiOperation::Negation),
            _ => Err(Error::UnknownLabel {
                kind: "api",
                label: name.to_string(),
            }),
        }
    }

    pub fn name_for(&self, dr: DirectedRelation) -> Result<&str> {
        self.names
            .get(&dr)
            .map(String::as_str)
            .ok_or_else(|| Error::MissingApi {
                relation: format!("{:?}", dr.relation),
                direction: dr.direction.to_string(),
            })
    }
}

/// Name plus provenance, carried in record metadata so an exported
/// dataset can be audited without regenerating API names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiBinding {
    pub name: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub relation: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub direction: Option<Direction>,
}

impl ApiBinding {
    pub fn from_descriptor(g: &KnowledgeGraph, api: &ApiDescriptor) -> ApiBinding {
        match api.provenance {
            Provenance::Relation {
                relation,
                direction,
            } => ApiBinding {
                name: api.name.clone(),
                relation: Some(g.relation_label(relation).to_string()),
                direction: Some(direction),
            },
            Provenance::Logical => ApiBinding {
                name: api.name.clone(),
                relation: None,
                direction: None,
            },
        }
    }
}

/// The tool list shown to the assistant for one record: the APIs its
/// solution uses plus `k` distractors, shuffled deterministically.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Toolset {
    pub apis: Vec<ApiDescriptor>,
}

impl Toolset {
    pub fn contains(&self, name: &str) -> bool {
        self.apis.iter().any(|a| a.name == name)
    }
}

/// Builds the toolset for one solution path.
///
/// `used` is the list of API names the path calls, in first-use order.
pub fn build_toolset(
    used: &[String],
    toolkit: &Toolkit,
    k_distractors: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Toolset> {
    let mut apis: Vec<ApiDescriptor> = Vec::with_capacity(used.len() + k_distractors);
    for name in used {
        let api = toolkit.by_name(name).ok_or_else(|| Error::MissingApi {
            relation: name.clone(),
            direction: "n/a".into(),
        })?;
        if !apis.iter().any(|a| a.name == api.name) {
            apis.push(api.clone());
        }
    }
    let pool: Vec<&ApiDescriptor> = toolkit
        .apis()
        .iter()
        .filter(|a| !apis.iter().any(|u| u.name == a.name))
        .collect();
    if pool.len() < k_distractors {
        return Err(Error::DistractorPool {
            requested: k_distractors,
            available: pool.len(),
        });
    }
    for &chosen in pool.choose_multiple(rng, k_distractors) {
        apis.push(chosen.clone());
    }
    apis.shuffle(rng);
    Ok(Toolset { apis })
}

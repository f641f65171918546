//! Crate-wide error type with machine-parseable codes.
//!
//! Every error maps to a short stable code (printed by the CLI as
//! `error[CODE]: message`) and to one of two exit classes: validation
//! failures (exit 1) and integrity failures (exit 2).

use std::path::PathBuf;

use thiserror::Error;

/// Exit class used by the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad input, bad config, unsatisfiable request.
    Validation,
    /// Data that should have been internally consistent is not.
    Integrity,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: malformed triple line (expected head<TAB>relation<TAB>tail)")]
    MalformedTriple { path: PathBuf, line: usize },

    #[error("triple file {path} contains no triples")]
    EmptyTripleFile { path: PathBuf },

    #[error("unknown {kind} id {id}")]
    UnknownId { kind: &'static str, id: u32 },

    #[error("unknown {kind} label {label:?}")]
    UnknownLabel { kind: &'static str, label: String },

    #[error("structurally invalid query: {reason}")]
    InvalidQuery { reason: String },

    #[error("syntax error at byte {position}: {message}")]
    FolSyntax { position: usize, message: String },

    #[error("graph too large for exhaustive evaluation: {entities} entities (limit {limit})")]
    BruteForceGuard { entities: usize, limit: usize },

    #[error("instantiation failed at stage {stage}")]
    Instantiation { stage: String },

    #[error(
        "sample shortfall for pattern {pattern}: requested {requested}, got {got} \
         after {attempts} attempts ({duplicates} duplicates rejected)"
    )]
    SampleShortfall {
        pattern: String,
        requested: usize,
        got: usize,
        attempts: usize,
        duplicates: usize,
    },

    #[error("no API derived for relation {relation:?} ({direction})")]
    MissingApi { relation: String, direction: String },

    #[error("distractor pool too small: need {requested}, pool has {available}")]
    DistractorPool { requested: usize, available: usize },

    #[error("LLM endpoint not configured (offline mode); use the template fallback")]
    LlmOffline,

    #[error("LLM request failed after {attempts} attempts: {message}")]
    LlmExhausted { attempts: usize, message: String },

    #[error("malformed LLM response: {message}")]
    LlmMalformed { message: String },

    #[error("invalid configuration: {field}: {message}")]
    Config { field: String, message: String },

    #[error("integrity failure at {location}: {message}")]
    Integrity { location: String, message: String },

    #[error("record {record}: {message}")]
    RecordAudit { record: usize, message: String },

    #[error("{0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    /// Short stable code for scripting against CLI output.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Io { .. } => "E_IO",
            Error::MalformedTriple { .. } => "E_KG_PARSE",
            Error::EmptyTripleFile { .. } => "E_KG_EMPTY",
            Error::UnknownId { .. } => "E_UNKNOWN_ID",
            Error::UnknownLabel { .. } => "E_UNKNOWN_LABEL",
            Error::InvalidQuery { .. } => "E_QUERY_SHAPE",
            Error::FolSyntax { .. } => "E_FOL_SYNTAX",
            Error::BruteForceGuard { .. } => "E_ORACLE_GUARD",
            Error::Instantiation { .. } => "E_INSTANTIATE",
            Error::SampleShortfall { .. } => "E_SHORTFALL",
            Error::MissingApi { .. } => "E_NO_API",
            Error::DistractorPool { .. } => "E_DISTRACTORS",
            Error::LlmOffline => "E_LLM_OFFLINE",
            Error::LlmExhausted { .. } => "E_LLM_RETRIES",
            Error::LlmMalformed { .. } => "E_LLM_RESPONSE",
            Error::Config { .. } => "E_CONFIG",
            Error::Integrity { .. } => "E_INTEGRITY",
            Error::RecordAudit { .. } => "E_AUDIT",
            Error::Serde(_) => "E_SERDE",
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Integrity { .. } | Error::RecordAudit { .. } => ErrorClass::Integrity,
            _ => ErrorClass::Validation,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

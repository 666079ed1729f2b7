//! Crate-wide error type shared by all pipelines.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },

    #[error("backend unavailable after {attempts} attempts: {reason}")]
    BackendUnavailable { attempts: u32, reason: String },

    #[error("replay miss for request digest {digest}")]
    ReplayMiss { digest: String },

    #[error("provider error: {0}")]
    Provider(String),

    #[error("transcript digest collision for {digest}")]
    DigestCollision { digest: String },

    #[error("extraction failed for {paper_id}: {reason}")]
    ExtractionFailed { paper_id: String, reason: String },

    #[error("generality QC failed: {0}")]
    QcFailed(String),

    #[error("validation failed for proposal {proposal_id}: {reason}")]
    ValidationFailed { proposal_id: String, reason: String },

    #[error("topic detection failed: {0}")]
    TopicDetectionFailed(String),

    #[error("review failed for persona {persona_id}: {reason}")]
    ReviewFailed { persona_id: String, reason: String },

    #[error("synthesis failed: {0}")]
    SynthesisFailed(String),

    #[error("forge phase {phase} failed: {reason}")]
    PhaseFailed { phase: u8, reason: String },

    #[error("all forge runs failed: {causes:?}")]
    ForgeFailed { causes: Vec<String> },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("corpus error: {0}")]
    Corpus(String),

    #[error("run persistence failed: {0}")]
    Persist(String),

    #[error("unparseable agent output for {role}: {reason}")]
    Unparseable { role: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

//! Pure domain types and the verdict/statistics algebra shared by every
//! pipeline. Nothing in this module performs I/O or talks to a model.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Where a problem statement came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemSource {
    PaperExtraction,
    Expansion,
    Manual,
    TelemetryStub,
}

/// The three frontier-expansion modes of the recursive problem generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExpansionMode {
    Vertical,
    Lateral,
    Foundational,
}

impl ExpansionMode {
    pub const ALL: [ExpansionMode; 3] = [
        ExpansionMode::Vertical,
        ExpansionMode::Lateral,
        ExpansionMode::Foundational,
    ];
}

/// Parent pointer carried by problems produced through frontier expansion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lineage {
    pub parent_id: String,
    pub mode: ExpansionMode,
}

/// A canonical [CONTEXT]/[SYMPTOM]/[CONSTRAINT] problem record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemStatement {
    pub id: String,
    pub source: ProblemSource,
    pub context: String,
    pub symptom: String,
    pub constraint: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generality_score: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lineage: Option<Lineage>,
}

impl ProblemStatement {
    /// Checks the structural invariants: non-empty canonical fields, score
    /// range, and lineage present iff the problem came from expansion.
    pub fn validate(&self) -> Result<()> {
        for (name, text) in [
            ("context", &self.context),
            ("symptom", &self.symptom),
            ("constraint", &self.constraint),
        ] {
            if text.trim().is_empty() {
                return Err(Error::Invalid {
                    what: "ProblemStatement",
                    reason: format!("{name} is empty"),
                });
            }
        }
        if let Some(score) = self.generality_score {
            if !(1..=10).contains(&score) {
                return Err(Error::Invalid {
                    what: "ProblemStatement",
                    reason: format!("generality_score {score} outside [1,10]"),
                });
            }
        }
        let expanded = self.source == ProblemSource::Expansion;
        if expanded != self.lineage.is_some() {
            return Err(Error::Invalid {
                what: "ProblemStatement",
                reason: "lineage must be present iff source = expansion".into(),
            });
        }
        Ok(())
    }
}

/// One architect-agent output for a problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MechanismProposal {
    pub id: String,
    pub problem_id: String,
    pub title: String,
    pub mechanism: String,
    pub rationale: String,
    pub evaluation_plan: String,
    pub temperature: f64,
}

impl MechanismProposal {
    pub fn validate(&self) -> Result<()> {
        for (name, text) in [
            ("title", &self.title),
            ("mechanism", &self.mechanism),
            ("rationale", &self.rationale),
            ("evaluation_plan", &self.evaluation_plan),
        ] {
            if text.trim().is_empty() {
                return Err(Error::Invalid {
                    what: "MechanismProposal",
                    reason: format!("{name} is empty"),
                });
            }
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(Error::Invalid {
                what: "MechanismProposal",
                reason: format!("temperature {} outside [0.0, 2.0]", self.temperature),
            });
        }
        Ok(())
    }
}

/// Similarity of a candidate mechanism to the known solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SimilarityClass {
    ExactMatch,
    FunctionalEquivalent,
    DifferentApproach,
}

impl SimilarityClass {
    pub const ALL: [SimilarityClass; 3] = [
        SimilarityClass::ExactMatch,
        SimilarityClass::FunctionalEquivalent,
        SimilarityClass::DifferentApproach,
    ];
}

/// Standalone quality of a candidate mechanism.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum QualityClass {
    IscaWorthy,
    Incremental,
    Flawed,
}

impl QualityClass {
    pub const ALL: [QualityClass; 3] = [
        QualityClass::IscaWorthy,
        QualityClass::Incremental,
        QualityClass::Flawed,
    ];
}

/// Outcome derived from the two judgment axes. Always computed via
/// [`classify_verdict`], never parsed from model text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    RediscoverySuccess,
    AlternativeSuccess,
    Fail,
}

/// The dual-axis verdict rule: quality gates everything, similarity picks
/// between rediscovery and alternative success.
pub fn classify_verdict(sim: SimilarityClass, qual: QualityClass) -> Verdict {
    match (sim, qual) {
        (SimilarityClass::ExactMatch, QualityClass::IscaWorthy)
        | (SimilarityClass::FunctionalEquivalent, QualityClass::IscaWorthy) => {
            Verdict::RediscoverySuccess
        }
        (SimilarityClass::DifferentApproach, QualityClass::IscaWorthy) => {
            Verdict::AlternativeSuccess
        }
        _ => Verdict::Fail,
    }
}

/// Aggregate verdict counts with rates derived on read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub n_total: usize,
    pub n_rediscovery: usize,
    pub n_alternative: usize,
    pub n_fail: usize,
    pub viable_rate: f64,
    pub rediscovery_rate: f64,
    pub alternative_rate: f64,
}

/// Counts partition the input; rates are 0 for an empty list.
pub fn aggregate_stats(verdicts: &[Verdict]) -> RunStats {
    let n_total = verdicts.len();
    let n_rediscovery = verdicts
        .iter()
        .filter(|v| **v == Verdict::RediscoverySuccess)
        .count();
    let n_alternative = verdicts
        .iter()
        .filter(|v| **v == Verdict::AlternativeSuccess)
        .count();
    let n_fail = n_total - n_rediscovery - n_alternative;
    let rate = |n: usize| {
        if n_total == 0 {
            0.0
        } else {
            n as f64 / n_total as f64
        }
    };
    RunStats {
        n_total,
        n_rediscovery,
        n_alternative,
        n_fail,
        viable_rate: rate(n_rediscovery + n_alternative),
        rediscovery_rate: rate(n_rediscovery),
        alternative_rate: rate(n_alternative),
    }
}

/// Evenly spaced temperature sweep from `lo` to `hi` inclusive.
pub fn temperature_ladder(n: usize, lo: f64, hi: f64) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::Invalid {
            what: "temperature_ladder",
            reason: "n must be >= 1".into(),
        });
    }
    if lo > hi {
        return Err(Error::Invalid {
            what: "temperature_ladder",
            reason: format!("lo {lo} > hi {hi}"),
        });
    }
    if !(0.0..=2.0).contains(&lo) || !(0.0..=2.0).contains(&hi) {
        return Err(Error::Invalid {
            what: "temperature_ladder",
            reason: "endpoints must lie in [0.0, 2.0]".into(),
        });
    }
    if n == 1 {
        if lo != hi {
            return Err(Error::Invalid {
                what: "temperature_ladder",
                reason: "n = 1 requires lo = hi".into(),
            });
        }
        return Ok(vec![lo]);
    }
    let step = (hi - lo) / (n - 1) as f64;
    let mut out: Vec<f64> = (0..n).map(|i| lo + step * i as f64).collect();
    // pin endpoints against float drift
    out[0] = lo;
    out[n - 1] = hi;
    Ok(out)
}

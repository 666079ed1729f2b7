//! Clean-room ideation pipeline: extract a problem from the opening window
//! of a paper, QC its generality, check for solution leakage, generate
//! mechanism proposals across a temperature sweep, judge them on the dual
//! similarity/quality axes, and expand the problem frontier.

use serde::{Deserialize, Serialize};

use crate::backend::{AgentRequest, Client};
use crate::error::{Error, Result};
use crate::kernel::{
    aggregate_stats, classify_verdict, temperature_ladder, ExpansionMode, Lineage,
    MechanismProposal, ProblemSource, ProblemStatement, QualityClass, RunStats, SimilarityClass,
    Verdict,
};
use crate::parse;

pub const DEFAULT_PROBLEM_WINDOW: usize = 12_000;
pub const DEFAULT_GENERALITY_THRESHOLD: u8 = 7;
pub const DEFAULT_LEAK_NGRAM_WORDS: usize = 8;

const EXTRACTOR_SYSTEM: &str = "\
You extract architectural problems from the opening pages of research papers.\n\
You see ONLY the excerpt provided; treat it as the entire document.\n\
Identify the core architectural bottleneck while strictly redacting any \
proposed solutions.\n\
Reply with exactly three labeled blocks and nothing else:\n\
[CONTEXT]\nThe system configuration and workload characteristics under which \
the problem manifests.\n\
[SYMPTOM]\nThe observed performance bottleneck with quantitative evidence \
(utilization rates, latency breakdowns, throughput limits).\n\
[CONSTRAINT]\nWhat prevents naive solutions from working.";

const GENERALITY_SYSTEM: &str = "\
You are a quality-control reviewer of architectural problem statements.\n\
Score how generally the symptom is formulated on a 1-10 scale (10 = applies \
to a broad class of systems, 1 = tied to one paper's exact setup).\n\
Reply with:\nSCORE: <1-10>\nCRITIQUE: <one paragraph>";

const REPAIR_SYSTEM: &str = "\
You repair over-specific architectural problem statements, rewriting them so \
the symptom describes a general class of systems while preserving the \
quantitative evidence.\n\
Reply with exactly three labeled blocks:\n[CONTEXT]\n...\n[SYMPTOM]\n...\n[CONSTRAINT]\n...";

const LEAK_JUDGE_SYSTEM: &str = "\
You check whether a problem statement reveals the solution mechanism of the \
paper it was extracted from.\n\
Answer only whether the problem text discloses the mechanism.\n\
Reply with:\nVERDICT: NO_REVEAL or VERDICT: REVEALS_MECHANISM\nfollowed by a \
one-sentence justification.";

const ARCHITECT_SYSTEM: &str = "\
[EXPERIMENTAL CONTEXT]\n\
You are an AI agent testing \"Automated Architectural Invention\".\n\
You are a Distinguished Researcher aiming for an ISCA/MICRO paper.\n\
You are receiving a problem description from a \"Clean Room\".\n\
\n\
[YOUR TASK]\n\
1. Analyze the root cause.\n\
2. Propose a NOVEL hardware micro-architecture mechanism to solve it.\n\
   - Do NOT propose incremental tuning.\n\
   - Be specific about hardware structures (tables, buffers, logic).\n\
3. Outline the experimental design.\n\
\n\
[OUTPUT REQUIREMENTS]\n\
Title: (Catchy, Academic)\n\
Mechanism: How does it work? (Specific hardware details)\n\
Why it Works: First-principles reasoning.\n\
Evaluation Plan: Baselines and Metrics.";

const VALIDATOR_SYSTEM: &str = "\
[EXPERIMENTAL CONTEXT]\n\
You are a Senior Technical Reviewer for a top Computer Architecture \
conference (ISCA/MICRO). We are conducting a scientific experiment on \
\"Automated Discovery\". An AI agent (The Candidate) has attempted to invent \
a novel architectural mechanism based ONLY on a problem description, without \
seeing the solution.\n\
\n\
[YOUR TASK]\n\
Evaluate the [CANDIDATE SOLUTION] against the [GROUND TRUTH PAPER] on two \
independent axes.\n\
\n\
Axis 1 - Similarity:\n\
- EXACT_MATCH: Functionally identical mechanism.\n\
- FUNCTIONAL_EQUIVALENT: Different implementation, but exploits the exact \
same architectural insight.\n\
- DIFFERENT_APPROACH: Solves the problem using a completely different \
architectural lever.\n\
\n\
Axis 2 - Quality:\n\
- ISCA_WORTHY: A novel, non-obvious mechanism that is physically realizable \
and likely to work.\n\
- INCREMENTAL: A valid engineering fix but lacks research novelty.\n\
- FLAWED: The mechanism violates hardware constraints, causality, or simply \
would not work.\n\
\n\
Reply with:\nSIMILARITY: <label>\nQUALITY: <label>\nJUSTIFICATION: <paragraph>";

const GENIUS_VERTICAL_SYSTEM: &str = "\
[ROLE]\n\
You are a \"Chief Systems Architect\" at a hyperscale cloud provider.\n\
You think in terms of Amdahl's Law, utilization rates, and system \
bottlenecks. You are paranoid: you know that solving one bottleneck just \
exposes the next one.\n\
\n\
[YOUR TASK]\n\
Assume \"The Fix\" works perfectly and is deployed at scale.\n\
Identify the IMMEDIATE NEXT SYSTEM BOTTLENECK that will emerge.\n\
\n\
[GUIDANCE - Apply Amdahl's Law]\n\
- If Compute is fixed, look at Memory Bandwidth\n\
- If Bandwidth is fixed, look at Latency or Synchronization\n\
- If Performance is fixed, look at Power Density or Reliability\n\
- If the chip is perfect, look at the Interconnect or the Compiler\n\
- If software is optimized, look at the Operating System or Runtime\n\
\n\
[OUTPUT REQUIREMENTS]\n\
Reply with exactly three labeled blocks:\n[CONTEXT]\n...\n[SYMPTOM]\n(with \
quantitative evidence)\n[CONSTRAINT]\n...";

const GENIUS_LATERAL_SYSTEM: &str = "\
[ROLE]\n\
You are a \"Polymath Applied Mathematician\".\n\
You do not care about hardware details (buffers, wires, caches).\n\
You care about Abstract Structural Isomorphisms.\n\
You see patterns that repeat across biology, finance, physics, and computing.\n\
\n\
[YOUR TASK]\n\
Identify a DIFFERENT DOMAIN that suffers from a mathematically identical \
problem. Explain how the \"Solution Mechanism\" could be ported to that \
domain.\n\
\n\
[GUIDANCE - Look for Mathematical Patterns]\n\
- Sparsity: Genomics (sequence alignment), Finance (sparse matrices)\n\
- All-to-All Communication: Physics (N-body), Databases (distributed joins)\n\
- Tail Latency: Quant Finance (order books), Web Services (microservices)\n\
- Entropy/Compression: Video Encoding, Network Traffic Shaping\n\
- Synchronization: Distributed Consensus, Multi-Agent Robotics\n\
\n\
[OUTPUT REQUIREMENTS]\n\
Reply with exactly three labeled blocks:\n[CONTEXT]\n...\n[SYMPTOM]\n(with \
quantitative evidence)\n[CONSTRAINT]\n...";

const GENIUS_FOUNDATIONAL_SYSTEM: &str = "\
[ROLE]\n\
You are a \"Contrarian Physicist\" and First-Principles Thinker.\n\
You hate complexity. You believe most \"architectural fixes\" are just \
band-aids on broken algorithms.\n\
You question the premise of the problem itself.\n\
\n\
[YOUR TASK]\n\
Attack the assumption. Why are we solving this problem at all?\n\
Propose a research direction that ELIMINATES THE NEED for this optimization \
entirely.\n\
\n\
[GUIDANCE - Question the Premise]\n\
- \"Don't optimize the cache; remove data movement\" -> Compute-in-memory\n\
- \"Don't accelerate multiply; change math to additions\" -> Log number systems\n\
- \"Don't fix branch predictor; use predication\" -> Dataflow architectures\n\
- \"Don't compress data; change representation\" -> Sparse formats\n\
\n\
[OUTPUT REQUIREMENTS]\n\
Reply with exactly three labeled blocks:\n[CONTEXT]\n...\n[SYMPTOM]\n(with \
quantitative evidence)\n[CONSTRAINT]\n...";

/// Input cell for problem extraction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExtractionInput {
    pub paper_id: String,
    pub text: String,
    /// Character count approximating the paper's opening pages; only this
    /// prefix may ever reach an extraction or generation prompt.
    pub problem_window: usize,
    pub ground_truth_available: bool,
}

impl ExtractionInput {
    pub fn validate(&self) -> Result<()> {
        if self.problem_window == 0 || self.problem_window > self.text.len() {
            return Err(Error::Invalid {
                what: "ExtractionInput",
                reason: format!(
                    "problem_window {} outside (0, {}]",
                    self.problem_window,
                    self.text.len()
                ),
            });
        }
        Ok(())
    }

    fn window(&self) -> &str {
        // avoid splitting a UTF-8 code point
        let mut end = self.problem_window.min(self.text.len());
        while !self.text.is_char_boundary(end) {
            end -= 1;
        }
        &self.text[..end]
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneralityReport {
    pub score: u8,
    pub critique: String,
    pub repaired: bool,
    pub below_threshold: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LeakStage {
    Lexical,
    Judge,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LeakReport {
    pub clean: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stage: Option<LeakStage>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub evidence: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

/// Dual-axis judgment; the verdict field is always locally derived.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationJudgment {
    pub proposal_id: String,
    pub similarity: SimilarityClass,
    pub quality: QualityClass,
    pub verdict: Verdict,
    pub justification: String,
}

impl ValidationJudgment {
    pub fn new(
        proposal_id: String,
        similarity: SimilarityClass,
        quality: QualityClass,
        justification: String,
    ) -> Self {
        ValidationJudgment {
            proposal_id,
            similarity,
            quality,
            verdict: classify_verdict(similarity, quality),
            justification,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrontierExpansion {
    pub parent_problem_id: String,
    pub mode: ExpansionMode,
    pub new_problem: ProblemStatement,
}

/// Sends a request, parses, and on parse failure re-prompts exactly once
/// with a format reminder appended.
pub(crate) fn call_with_reparse<T>(
    client: &Client,
    request: &AgentRequest,
    reminder: &str,
    parser: impl Fn(&str) -> std::result::Result<T, String>,
) -> Result<(T, String)> {
    let response = client.complete(request)?;
    match parser(&response.text) {
        Ok(value) => Ok((value, response.text)),
        Err(first_reason) => {
            let mut retry = request.clone();
            retry.user_prompt = format!("{}\n\n[FORMAT REMINDER]\n{}", request.user_prompt, reminder);
            let response = client.complete(&retry)?;
            parser(&response.text)
                .map(|value| (value, response.text.clone()))
                .map_err(|second_reason| Error::Unparseable {
                    role: request.role_name.clone(),
                    reason: format!("{first_reason}; after re-prompt: {second_reason}"),
                })
        }
    }
}

fn parse_problem_blocks(text: &str) -> std::result::Result<(String, String, String), String> {
    let sections = parse::bracket_sections(text, &["CONTEXT", "SYMPTOM", "CONSTRAINT"]);
    let get = |key: &str| -> std::result::Result<String, String> {
        sections
            .get(key)
            .filter(|s| !s.trim().is_empty())
            .cloned()
            .ok_or_else(|| format!("missing [{}] block", key.to_ascii_uppercase()))
    };
    Ok((get("context")?, get("symptom")?, get("constraint")?))
}

/// Extracts a canonical problem from the windowed paper text. Only the
/// window ever reaches the prompt.
pub fn extract_problem(
    input: &ExtractionInput,
    run_label: &str,
    client: &Client,
) -> Result<ProblemStatement> {
    input.validate()?;
    let user_prompt = format!(
        "[PAPER EXCERPT] (paper {}, cell {})\n{}",
        input.paper_id,
        run_label,
        input.window()
    );
    let request = AgentRequest::new("extractor", EXTRACTOR_SYSTEM, &user_prompt)
        .with_tag(&format!("extract:{}:{}", input.paper_id, run_label));
    let parsed = call_with_reparse(
        client,
        &request,
        "Reply with exactly the three blocks [CONTEXT], [SYMPTOM], [CONSTRAINT].",
        parse_problem_blocks,
    );
    let ((context, symptom, constraint), _) = parsed.map_err(|e| Error::ExtractionFailed {
        paper_id: input.paper_id.clone(),
        reason: e.to_string(),
    })?;
    let problem = ProblemStatement {
        id: format!("{}-{}", input.paper_id, run_label),
        source: ProblemSource::PaperExtraction,
        context,
        symptom,
        constraint,
        generality_score: None,
        lineage: None,
    };
    problem.validate()?;
    Ok(problem)
}

fn problem_blocks(problem: &ProblemStatement) -> String {
    format!(
        "[CONTEXT]\n{}\n[SYMPTOM]\n{}\n[CONSTRAINT]\n{}",
        problem.context, problem.symptom, problem.constraint
    )
}

fn score_generality(problem: &ProblemStatement, client: &Client) -> Result<(u8, String)> {
    let request = AgentRequest::new("generality-scorer", GENERALITY_SYSTEM, &problem_blocks(problem))
        .with_tag(&format!("qc:{}", problem.id));
    let ((score, critique), _) = call_with_reparse(
        client,
        &request,
        "Reply with SCORE: <1-10> and CRITIQUE: <paragraph>.",
        |text| {
            let score: u8 = parse::keyed_value(text, "SCORE")
                .ok_or("missing SCORE")?
                .split_whitespace()
                .next()
                .ok_or("empty SCORE")?
                .parse()
                .map_err(|e| format!("bad SCORE: {e}"))?;
            if !(1..=10).contains(&score) {
                return Err(format!("SCORE {score} outside [1,10]"));
            }
            let critique = parse::keyed_value(text, "CRITIQUE").unwrap_or_default();
            Ok((score, critique))
        },
    )
    .map_err(|e| Error::QcFailed(e.to_string()))?;
    Ok((score, critique))
}

/// Scores symptom generality; below the threshold one repair round is
/// invoked and the repaired problem re-scored.
pub fn qc_generality(
    problem: &ProblemStatement,
    threshold: u8,
    client: &Client,
) -> Result<(ProblemStatement, GeneralityReport)> {
    let (score, critique) = score_generality(problem, client)?;
    if score >= threshold {
        let mut out = problem.clone();
        out.generality_score = Some(score);
        return Ok((
            out,
            GeneralityReport {
                score,
                critique,
                repaired: false,
                below_threshold: false,
            },
        ));
    }
    let repair_prompt = format!(
        "{}\n\n[QC CRITIQUE]\nScore {score}: {critique}\nRewrite the problem so the \
         symptom is general.",
        problem_blocks(problem)
    );
    let request = AgentRequest::new("problem-repairer", REPAIR_SYSTEM, &repair_prompt)
        .with_tag(&format!("repair:{}", problem.id));
    let ((context, symptom, constraint), _) = call_with_reparse(
        client,
        &request,
        "Reply with exactly the three blocks [CONTEXT], [SYMPTOM], [CONSTRAINT].",
        parse_problem_blocks,
    )
    .map_err(|e| Error::QcFailed(e.to_string()))?;
    let mut repaired = problem.clone();
    repaired.context = context;
    repaired.symptom = symptom;
    repaired.constraint = constraint;
    let (final_score, final_critique) = score_generality(&repaired, client)?;
    repaired.generality_score = Some(final_score);
    Ok((
        repaired,
        GeneralityReport {
            score: final_score,
            critique: final_critique,
            repaired: true,
            below_threshold: final_score < threshold,
        },
    ))
}

fn word_ngrams(text: &str, n: usize) -> Vec<Vec<String>> {
    let words: Vec<String> = text
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_ascii_lowercase())
        .collect();
    if words.len() < n {
        return Vec::new();
    }
    words.windows(n).map(|w| w.to_vec()).collect()
}

/// Two-stage leakage check: lexical n-gram overlap against the
/// post-window (potentially solution-bearing) text, then a judge call.
/// Judge failure degrades to lexical-only with a warning.
pub fn check_leakage(
    problem: &ProblemStatement,
    full_paper_text: &str,
    problem_window: usize,
    ngram_words: usize,
    client: &Client,
) -> Result<LeakReport> {
    let mut end = problem_window.min(full_paper_text.len());
    while !full_paper_text.is_char_boundary(end) {
        end -= 1;
    }
    let solution_text = &full_paper_text[end..];
    let solution_grams: std::collections::HashSet<Vec<String>> =
        word_ngrams(solution_text, ngram_words).into_iter().collect();
    let fields = format!("{} {} {}", problem.context, problem.symptom, problem.constraint);
    for gram in word_ngrams(&fields, ngram_words) {
        if solution_grams.contains(&gram) {
            return Ok(LeakReport {
                clean: false,
                stage: Some(LeakStage::Lexical),
                evidence: Some(gram.join(" ")),
                warning: None,
            });
        }
    }

    let judge_prompt = format!(
        "[PROBLEM STATEMENT]\n{}\n\n[PAPER SOLUTION SECTIONS]\n{}",
        problem_blocks(problem),
        solution_text
    );
    let request = AgentRequest::new("leakage-judge", LEAK_JUDGE_SYSTEM, &judge_prompt)
        .with_tag(&format!("leak:{}", problem.id));
    match client.complete(&request) {
        Ok(response) => {
            let upper = response.text.to_ascii_uppercase();
            if upper.contains("REVEALS_MECHANISM") || upper.contains("REVEALS MECHANISM") {
                Ok(LeakReport {
                    clean: false,
                    stage: Some(LeakStage::Judge),
                    evidence: Some(response.text.trim().to_string()),
                    warning: None,
                })
            } else if upper.contains("NO_REVEAL") || upper.contains("NO REVEAL") {
                Ok(LeakReport {
                    clean: true,
                    stage: None,
                    evidence: None,
                    warning: None,
                })
            } else {
                Ok(LeakReport {
                    clean: true,
                    stage: None,
                    evidence: None,
                    warning: Some("judge verdict unparseable; lexical-only result".into()),
                })
            }
        }
        Err(e) => Ok(LeakReport {
            clean: true,
            stage: None,
            evidence: None,
            warning: Some(format!("judge unavailable; lexical-only result: {e}")),
        }),
    }
}

/// One generation slot: a proposal or an isolated failure record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProposalSlot {
    pub slot: usize,
    pub temperature: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub proposal: Option<MechanismProposal>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

/// Generates one independent proposal per temperature. Slot failures are
/// isolated; other slots proceed.
pub fn generate_mechanisms(
    problem: &ProblemStatement,
    temps: &[f64],
    client: &Client,
) -> Vec<ProposalSlot> {
    temps
        .iter()
        .enumerate()
        .map(|(slot, &temperature)| {
            let user_prompt = format!(
                "[PERFORMANCE REPORT] (proposal slot {slot})\n{}",
                problem_blocks(problem)
            );
            let request = AgentRequest::new("architect", ARCHITECT_SYSTEM, &user_prompt)
                .with_temperature(temperature)
                .with_tag(&format!("generate:{}:{}", problem.id, slot));
            let parsed = call_with_reparse(
                client,
                &request,
                "Reply with the labeled fields Title:, Mechanism:, Why it Works:, \
                 Evaluation Plan:.",
                |text| {
                    let sections = parse::colon_sections(
                        text,
                        &["Title", "Mechanism", "Why it Works", "Evaluation Plan"],
                    );
                    let get = |key: &str| {
                        sections
                            .get(key)
                            .filter(|s| !s.trim().is_empty())
                            .cloned()
                            .ok_or_else(|| format!("missing field {key}"))
                    };
                    Ok((
                        get("title")?,
                        get("mechanism")?,
                        get("why it works")?,
                        get("evaluation plan")?,
                    ))
                },
            );
            match parsed {
                Ok(((title, mechanism, rationale, evaluation_plan), _)) => {
                    let proposal = MechanismProposal {
                        id: format!("{}-p{}", problem.id, slot),
                        problem_id: problem.id.clone(),
                        title,
                        mechanism,
                        rationale,
                        evaluation_plan,
                        temperature,
                    };
                    match proposal.validate() {
                        Ok(()) => ProposalSlot {
                            slot,
                            temperature,
                            proposal: Some(proposal),
                            failure: None,
                        },
                        Err(e) => ProposalSlot {
                            slot,
                            temperature,
                            proposal: None,
                            failure: Some(format!("generation-failed: {e}")),
                        },
                    }
                }
                Err(e) => ProposalSlot {
                    slot,
                    temperature,
                    proposal: None,
                    failure: Some(format!("generation-failed: {e}")),
                },
            }
        })
        .collect()
}

fn parse_similarity(label: &str) -> std::result::Result<SimilarityClass, String> {
    let upper = label.to_ascii_uppercase();
    if upper.contains("EXACT_MATCH") || upper.contains("EXACT MATCH") {
        Ok(SimilarityClass::ExactMatch)
    } else if upper.contains("FUNCTIONAL") {
        Ok(SimilarityClass::FunctionalEquivalent)
    } else if upper.contains("DIFFERENT") {
        Ok(SimilarityClass::DifferentApproach)
    } else {
        Err(format!("unknown similarity label: {label}"))
    }
}

fn parse_quality(label: &str) -> std::result::Result<QualityClass, String> {
    let upper = label.to_ascii_uppercase();
    if upper.contains("ISCA") {
        Ok(QualityClass::IscaWorthy)
    } else if upper.contains("INCREMENTAL") {
        Ok(QualityClass::Incremental)
    } else if upper.contains("FLAWED") || upper.contains("NAIVE") {
        Ok(QualityClass::Flawed)
    } else {
        Err(format!("unknown quality label: {label}"))
    }
}

/// Judges a proposal against the full ground-truth paper. The verdict is
/// computed locally from the parsed axes, never trusted from the model text.
pub fn validate_proposal(
    proposal: &MechanismProposal,
    ground_truth_paper_text: &str,
    client: &Client,
) -> Result<ValidationJudgment> {
    let user_prompt = format!(
        "[CANDIDATE SOLUTION]\nTitle: {}\nMechanism: {}\nWhy it Works: {}\nEvaluation Plan: {}\n\n\
         [GROUND TRUTH PAPER]\n{}",
        proposal.title,
        proposal.mechanism,
        proposal.rationale,
        proposal.evaluation_plan,
        ground_truth_paper_text
    );
    let request = AgentRequest::new("validator", VALIDATOR_SYSTEM, &user_prompt)
        .with_tag(&format!("validate:{}", proposal.id));
    let ((similarity, quality, justification), _) = call_with_reparse(
        client,
        &request,
        "Reply with SIMILARITY: <label>, QUALITY: <label>, JUSTIFICATION: <paragraph>.",
        |text| {
            let similarity =
                parse_similarity(&parse::keyed_value(text, "SIMILARITY").ok_or("missing SIMILARITY")?)?;
            let quality =
                parse_quality(&parse::keyed_value(text, "QUALITY").ok_or("missing QUALITY")?)?;
            let justification = parse::keyed_value(text, "JUSTIFICATION").unwrap_or_default();
            Ok((similarity, quality, justification))
        },
    )
    .map_err(|e| Error::ValidationFailed {
        proposal_id: proposal.id.clone(),
        reason: e.to_string(),
    })?;
    Ok(ValidationJudgment::new(
        proposal.id.clone(),
        similarity,
        quality,
        justification,
    ))
}

/// One frontier expansion slot; per-mode failures are isolated.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExpansionSlot {
    pub mode: ExpansionMode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub expansion: Option<FrontierExpansion>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

/// Expands a solved problem into exactly one new problem per mode.
pub fn expand_frontier(
    problem: &ProblemStatement,
    winning_proposal: &MechanismProposal,
    client: &Client,
) -> Vec<ExpansionSlot> {
    ExpansionMode::ALL
        .into_iter()
        .map(|mode| {
            let (role, system) = match mode {
                ExpansionMode::Vertical => ("genius-vertical", GENIUS_VERTICAL_SYSTEM),
                ExpansionMode::Lateral => ("genius-lateral", GENIUS_LATERAL_SYSTEM),
                ExpansionMode::Foundational => ("genius-foundational", GENIUS_FOUNDATIONAL_SYSTEM),
            };
            let user_prompt = format!(
                "[SOLVED PROBLEM]\n{}\n\n[THE FIX]\nTitle: {}\nMechanism: {}",
                problem_blocks(problem),
                winning_proposal.title,
                winning_proposal.mechanism
            );
            let request = AgentRequest::new(role, system, &user_prompt)
                .with_tag(&format!("expand:{}:{:?}", problem.id, mode));
            let parsed = call_with_reparse(
                client,
                &request,
                "Reply with exactly the three blocks [CONTEXT], [SYMPTOM], [CONSTRAINT].",
                parse_problem_blocks,
            );
            match parsed {
                Ok(((context, symptom, constraint), _)) => {
                    let suffix = match mode {
                        ExpansionMode::Vertical => "xv",
                        ExpansionMode::Lateral => "xl",
                        ExpansionMode::Foundational => "xf",
                    };
                    let new_problem = ProblemStatement {
                        id: format!("{}-{}", problem.id, suffix),
                        source: ProblemSource::Expansion,
                        context,
                        symptom,
                        constraint,
                        generality_score: None,
                        lineage: Some(Lineage {
                            parent_id: problem.id.clone(),
                            mode,
                        }),
                    };
                    ExpansionSlot {
                        mode,
                        expansion: Some(FrontierExpansion {
                            parent_problem_id: problem.id.clone(),
                            mode,
                            new_problem,
                        }),
                        failure: None,
                    }
                }
                Err(e) => ExpansionSlot {
                    mode,
                    expansion: None,
                    failure: Some(e.to_string()),
                },
            }
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdeationConfig {
    #[serde(default = "default_runs_per_paper")]
    pub runs_per_paper: usize,
    #[serde(default = "default_n_proposals")]
    pub n_proposals: usize,
    #[serde(default = "default_temp_lo")]
    pub temp_lo: f64,
    #[serde(default = "default_temp_hi")]
    pub temp_hi: f64,
    /// Depth 1 produces expansions without re-enqueuing them.
    #[serde(default = "default_recursion_depth")]
    pub recursion_depth: usize,
    #[serde(default = "default_generality_threshold")]
    pub generality_threshold: u8,
    #[serde(default = "default_leak_ngram_words")]
    pub leak_ngram_words: usize,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
}

fn default_runs_per_paper() -> usize {
    1
}
fn default_n_proposals() -> usize {
    5
}
fn default_temp_lo() -> f64 {
    0.5
}
fn default_temp_hi() -> f64 {
    0.9
}
fn default_recursion_depth() -> usize {
    1
}
fn default_generality_threshold() -> u8 {
    DEFAULT_GENERALITY_THRESHOLD
}
fn default_leak_ngram_words() -> usize {
    DEFAULT_LEAK_NGRAM_WORDS
}
fn default_parallelism() -> usize {
    4
}

impl Default for IdeationConfig {
    fn default() -> Self {
        IdeationConfig {
            runs_per_paper: default_runs_per_paper(),
            n_proposals: default_n_proposals(),
            temp_lo: default_temp_lo(),
            temp_hi: default_temp_hi(),
            recursion_depth: default_recursion_depth(),
            generality_threshold: default_generality_threshold(),
            leak_ngram_words: default_leak_ngram_words(),
            parallelism: default_parallelism(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CellStatus {
    Complete,
    ExtractionFailed,
    Leaked,
    QcFailed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProposalOutcome {
    pub slot: usize,
    pub temperature: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub proposal: Option<MechanismProposal>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub judgment: Option<ValidationJudgment>,
    pub verdict: Verdict,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellReport {
    pub paper_id: String,
    pub run_index: usize,
    pub status: CellStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub problem: Option<ProblemStatement>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generality: Option<GeneralityReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub leak: Option<LeakReport>,
    pub proposals: Vec<ProposalOutcome>,
    pub expansions: Vec<ExpansionSlot>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdeationReport {
    pub stats: RunStats,
    pub cells: Vec<CellReport>,
    /// Expanded problems queued for the next depth (not re-enqueued once the
    /// recursion depth is exhausted).
    pub frontier: Vec<ProblemStatement>,
}

fn run_cell(input: &ExtractionInput, run_index: usize, config: &IdeationConfig, client: &Client) -> CellReport {
    let run_label = format!("r{run_index}");
    let empty = |status: CellStatus, error: Option<String>| CellReport {
        paper_id: input.paper_id.clone(),
        run_index,
        status,
        problem: None,
        generality: None,
        leak: None,
        proposals: Vec::new(),
        expansions: Vec::new(),
        error,
    };

    let problem = match extract_problem(input, &run_label, client) {
        Ok(p) => p,
        Err(e) => return empty(CellStatus::ExtractionFailed, Some(e.to_string())),
    };
    let (problem, generality) = match qc_generality(&problem, config.generality_threshold, client) {
        Ok(pair) => pair,
        Err(e) => {
            let mut cell = empty(CellStatus::QcFailed, Some(e.to_string()));
            cell.problem = Some(problem);
            return cell;
        }
    };
    let leak = if input.ground_truth_available {
        let report = match check_leakage(
            &problem,
            &input.text,
            input.problem_window,
            config.leak_ngram_words,
            client,
        ) {
            Ok(r) => r,
            Err(e) => LeakReport {
                clean: true,
                stage: None,
                evidence: None,
                warning: Some(format!("leak check errored: {e}")),
            },
        };
        if !report.clean {
            let mut cell = empty(CellStatus::Leaked, None);
            cell.problem = Some(problem);
            cell.generality = Some(generality);
            cell.leak = Some(report);
            return cell;
        }
        Some(report)
    } else {
        None
    };

    let temps = match temperature_ladder(config.n_proposals, config.temp_lo, config.temp_hi) {
        Ok(t) => t,
        Err(e) => return empty(CellStatus::QcFailed, Some(e.to_string())),
    };
    let slots = generate_mechanisms(&problem, &temps, client);
    let proposals: Vec<ProposalOutcome> = slots
        .into_iter()
        .map(|slot| match slot.proposal {
            Some(proposal) if input.ground_truth_available => {
                match validate_proposal(&proposal, &input.text, client) {
                    Ok(judgment) => ProposalOutcome {
                        slot: slot.slot,
                        temperature: slot.temperature,
                        verdict: judgment.verdict,
                        proposal: Some(proposal),
                        judgment: Some(judgment),
                        failure: None,
                    },
                    Err(e) => ProposalOutcome {
                        slot: slot.slot,
                        temperature: slot.temperature,
                        verdict: Verdict::Fail,
                        proposal: Some(proposal),
                        judgment: None,
                        failure: Some(e.to_string()),
                    },
                }
            }
            Some(proposal) => ProposalOutcome {
                slot: slot.slot,
                temperature: slot.temperature,
                verdict: Verdict::Fail,
                proposal: Some(proposal),
                judgment: None,
                failure: Some("no ground truth available for validation".into()),
            },
            None => ProposalOutcome {
                slot: slot.slot,
                temperature: slot.temperature,
                verdict: Verdict::Fail,
                proposal: None,
                judgment: None,
                failure: slot.failure,
            },
        })
        .collect();

    // best proposal drives expansion: rediscovery beats alternative beats fail,
    // ties broken by slot order
    let winner = proposals
        .iter()
        .filter(|p| p.proposal.is_some() && p.verdict != Verdict::Fail)
        .min_by_key(|p| match p.verdict {
            Verdict::RediscoverySuccess => 0,
            Verdict::AlternativeSuccess => 1,
            Verdict::Fail => 2,
        });
    let expansions = match winner {
        Some(w) => expand_frontier(&problem, w.proposal.as_ref().unwrap(), client),
        None => Vec::new(),
    };

    CellReport {
        paper_id: input.paper_id.clone(),
        run_index,
        status: CellStatus::Complete,
        problem: Some(problem),
        generality: Some(generality),
        leak,
        proposals,
        expansions,
        error: None,
    }
}

/// Orchestrates extract -> qc -> leakage -> generate -> validate -> expand
/// per (paper, run) cell. Cells run concurrently; the report ordering is
/// deterministic regardless of completion order.
pub fn run_ideation(
    corpus: &[ExtractionInput],
    client: &Client,
    config: &IdeationConfig,
) -> Result<IdeationReport> {
    if corpus.is_empty() {
        return Err(Error::Corpus("empty ideation corpus".into()));
    }
    let mut cells: Vec<(usize, &ExtractionInput, usize)> = Vec::new();
    let mut ordered: Vec<&ExtractionInput> = corpus.iter().collect();
    ordered.sort_by(|a, b| a.paper_id.cmp(&b.paper_id));
    for input in ordered {
        for run_index in 0..config.runs_per_paper {
            cells.push((cells.len(), input, run_index));
        }
    }
    let mut reports = crate::backend::parallel_map(config.parallelism, cells, |_, (_, input, run)| {
        run_cell(input, run, config, client)
    });
    reports.sort_by(|a, b| a.paper_id.cmp(&b.paper_id).then(a.run_index.cmp(&b.run_index)));

    // frontier problems queued for the next recursion depth
    let mut frontier: Vec<ProblemStatement> = Vec::new();
    if config.recursion_depth > 1 {
        for cell in &reports {
            for slot in &cell.expansions {
                if let Some(expansion) = &slot.expansion {
                    frontier.push(expansion.new_problem.clone());
                }
            }
        }
    }

    let verdicts: Vec<Verdict> = reports
        .iter()
        .filter(|c| c.status == CellStatus::Complete)
        .flat_map(|c| c.proposals.iter().map(|p| p.verdict))
        .collect();
    Ok(IdeationReport {
        stats: aggregate_stats(&verdicts),
        cells: reports,
        frontier,
    })
}

/// Markdown rendering of an ideation report; every number shown here also
/// appears in the JSON artifact.
pub fn render_markdown(report: &IdeationReport, partial: bool) -> String {
    let mut out = String::new();
    if partial {
        out.push_str("# PARTIAL RUN\n\n");
    }
    out.push_str("# Ideation Report\n\n");
    let s = &report.stats;
    out.push_str("| metric | value |\n|---|---|\n");
    out.push_str(&format!("| n_total | {} |\n", s.n_total));
    out.push_str(&format!("| n_rediscovery | {} |\n", s.n_rediscovery));
    out.push_str(&format!("| n_alternative | {} |\n", s.n_alternative));
    out.push_str(&format!("| n_fail | {} |\n", s.n_fail));
    out.push_str(&format!("| viable_rate | {} |\n", s.viable_rate));
    out.push_str(&format!("| rediscovery_rate | {} |\n", s.rediscovery_rate));
    out.push_str(&format!("| alternative_rate | {} |\n\n", s.alternative_rate));
    out.push_str("| paper | run | status | verdicts |\n|---|---|---|---|\n");
    for cell in &report.cells {
        let verdicts: Vec<String> = cell.proposals.iter().map(|p| format!("{:?}", p.verdict)).collect();
        out.push_str(&format!(
            "| {} | {} | {:?} | {} |\n",
            cell.paper_id,
            cell.run_index,
            cell.status,
            verdicts.join(", ")
        ));
    }
    out
}

//! Three-phase construction of executable first-principles performance
//! models: specification with a verify-repair loop, implementation with dual
//! parallel verifiers and sandboxed execution, and interpretation with an
//! explicit magic-gap section. The full pipeline runs three times and a
//! selector agent picks the best run on a correctness/insight rubric.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backend::{parallel_map, AgentRequest, Client};
use crate::error::{Error, Result};
use crate::ideation::call_with_reparse;
use crate::parse;
use crate::sandbox::{ExecutionReport, Sandbox};

/// Hard iteration bound for the phase-1 and phase-2 loops.
pub const MAX_LOOP: u32 = 3;
/// Number of independent ensemble runs.
pub const ENSEMBLE_RUNS: usize = 3;

pub const SPEC_SYSTEM: &str = "\
You are a performance-modeling specification agent. From the source document, \
extract every mathematical relationship, variable, constraint, and piece of \
calibration data needed to build a first-principles performance model. Do not \
invent formulas that are not supported by the document.

Respond with a single JSON object inside a ```json code fence:
{
  \"variables\": [{\"symbol\": \"...\", \"meaning\": \"...\", \"units\": \"...\"}],
  \"relationships\": [\"lhs = expression over declared symbols\"],
  \"constraints\": [\"...\"],
  \"calibration_data\": [{\"source\": \"...\", \"values\": [1.0]}]
}
Every relationship may reference declared variable symbols only.";

pub const SPEC_VERIFIER_SYSTEM: &str = "\
You are a specification auditor. Check the model specification for \
completeness, missing variables, and hallucinated formulas that do not follow \
from the source document.

Respond with exactly APPROVED on the first line if the specification is sound. \
Otherwise respond with REJECTED on the first line followed by one issue per \
line, each starting with \"- \".";

pub const SPEC_REPAIR_SYSTEM: &str = "\
You are a specification repair agent. Fix the identified issues in the model \
specification without discarding sound content. Respond in the same ```json \
fenced format as the original specification.";

pub const IMPLEMENTER_SYSTEM: &str = "\
You are a modeling engineer. Implement the specification as one self-contained \
program that computes the model from first principles and prints its results \
to stdout. The program must not read files, use the network, or depend on \
external data; all inputs come from the specification's calibration data. No \
hardcoded magic numbers: every constant must be traceable to a declared \
variable or calibration value.

Respond with the complete program in a single fenced code block.";

pub const FUNCTIONAL_VERIFIER_SYSTEM: &str = "\
You are a functional verifier. Given the program and its captured execution \
output, judge whether the program ran correctly and its outputs are internally \
consistent with the specification's relationships.

Respond with exactly APPROVED on the first line, or REJECTED followed by one \
issue per line starting with \"- \".";

pub const DIRECTIVE_VERIFIER_SYSTEM: &str = "\
You are a directive verifier enforcing scientific standards: no hardcoded \
magic numbers, every formula derived from the specification, calibration data \
cited where used, and no results fabricated to match expectations.

Respond with exactly APPROVED on the first line, or REJECTED followed by one \
issue per line starting with \"- \".";

pub const CODE_REPAIR_SYSTEM: &str = "\
You are a code repair agent. Fix the identified issues in the model program \
while preserving its self-contained, first-principles character. Respond with \
the complete repaired program in a single fenced code block.";

pub const INTERPRETER_SYSTEM: &str = "\
You are a model interpreter. Explain what the executed model shows, using the \
sections below. In \"Magic Gaps\", identify any places where the document's \
claimed performance exceeds what the model can account for; write \
\"none identified\" if there are none.

Respond in markdown with exactly these sections:
## Model Structure
## Assumptions
## Findings
## Magic Gaps";

pub const SELECTOR_SYSTEM: &str = "\
You are a selector agent. Score each of the three independent modeling runs on \
two 0-10 axes: correctness (fidelity to the source document and internal \
consistency) and insight (depth and usefulness of the findings).

Respond with exactly:
RUN 1: correctness=<0-10> insight=<0-10>
RUN 2: correctness=<0-10> insight=<0-10>
RUN 3: correctness=<0-10> insight=<0-10>
JUSTIFICATION: <one paragraph>";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Variable {
    pub symbol: String,
    pub meaning: String,
    pub units: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Calibration {
    pub source: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelSpec {
    pub paper_id: String,
    pub variables: Vec<Variable>,
    pub relationships: Vec<String>,
    pub constraints: Vec<String>,
    pub calibration_data: Vec<Calibration>,
}

impl ModelSpec {
    /// Lexical check: every identifier appearing in a relationship must be a
    /// declared variable symbol. Numbers and operators are ignored.
    pub fn validate(&self) -> Result<()> {
        if self.variables.is_empty() {
            return Err(Error::Invalid {
                what: "ModelSpec".into(),
                reason: "no variables declared".into(),
            });
        }
        if self.relationships.is_empty() {
            return Err(Error::Invalid {
                what: "ModelSpec".into(),
                reason: "no relationships declared".into(),
            });
        }
        let symbols: std::collections::BTreeSet<&str> =
            self.variables.iter().map(|v| v.symbol.as_str()).collect();
        let ident = regex::Regex::new(r"[A-Za-z_][A-Za-z0-9_]*").unwrap();
        for relationship in &self.relationships {
            for m in ident.find_iter(relationship) {
                if !symbols.contains(m.as_str()) {
                    return Err(Error::Invalid {
                        what: "ModelSpec".into(),
                        reason: format!(
                            "relationship '{relationship}' references undeclared '{}'",
                            m.as_str()
                        ),
                    });
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerifierId {
    Spec,
    Functional,
    Directive,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifierReport {
    pub verifier_id: VerifierId,
    pub approved: bool,
    pub issues: Vec<String>,
}

impl VerifierReport {
    pub fn validate(&self) -> Result<()> {
        if self.approved && !self.issues.is_empty() {
            return Err(Error::Invalid {
                what: "VerifierReport".into(),
                reason: "approved report carries issues".into(),
            });
        }
        Ok(())
    }

    fn parse(verifier_id: VerifierId, text: &str) -> Self {
        let first = text
            .lines()
            .map(str::trim)
            .find(|l| !l.is_empty())
            .unwrap_or("");
        if first.eq_ignore_ascii_case("APPROVED") {
            return VerifierReport {
                verifier_id,
                approved: true,
                issues: Vec::new(),
            };
        }
        let mut issues: Vec<String> = text
            .lines()
            .filter_map(|l| l.trim().strip_prefix("- "))
            .map(|s| s.to_string())
            .collect();
        if issues.is_empty() {
            // Conservative default: anything that is not an approval is a
            // rejection, including unevaluable output.
            issues.push(format!("unevaluable verifier output: {}", text.trim()));
        }
        VerifierReport {
            verifier_id,
            approved: false,
            issues,
        }
    }
}

/// Substrings whose presence in a program suggests external data access.
/// Advisory only: the sandbox is the actual enforcement boundary.
const IO_MARKERS: &[&str] = &[
    "open(",
    "urllib",
    "requests",
    "socket",
    "subprocess",
    "http://",
    "https://",
];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub spec_id: String,
    pub program_text: String,
    pub execution_report: ExecutionReport,
    /// Lexical hits suggesting file/network access; recorded, not enforced.
    pub io_advisory: Vec<String>,
}

fn io_scan(program_text: &str) -> Vec<String> {
    IO_MARKERS
        .iter()
        .filter(|m| program_text.contains(*m))
        .map(|m| m.to_string())
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Interpretation {
    pub model_structure: String,
    pub assumptions: String,
    pub findings: String,
    pub magic_gap: String,
}

impl Interpretation {
    /// Whether the magic-gap section flags a gap (anything other than an
    /// explicit "none identified").
    pub fn has_gap(&self) -> bool {
        !self
            .magic_gap
            .trim()
            .to_ascii_lowercase()
            .starts_with("none identified")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForgeRun {
    pub run_index: usize,
    pub spec: Option<ModelSpec>,
    pub spec_approved: bool,
    pub artifact: Option<ModelArtifact>,
    pub artifact_approved: bool,
    /// Both phase-2 verifier reports for every iteration, in order.
    pub verifier_history: Vec<Vec<VerifierReport>>,
    pub interpretation: Option<Interpretation>,
    /// (phase-1 iterations, phase-2 iterations), each bounded by [`MAX_LOOP`].
    pub loop_counts: (u32, u32),
    pub failure: Option<String>,
}

impl ForgeRun {
    pub fn succeeded(&self) -> bool {
        self.failure.is_none() && self.interpretation.is_some()
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=ENSEMBLE_RUNS).contains(&self.run_index) {
            return Err(Error::Invalid {
                what: "ForgeRun".into(),
                reason: format!("run_index {} out of range", self.run_index),
            });
        }
        if self.loop_counts.0 > MAX_LOOP || self.loop_counts.1 > MAX_LOOP {
            return Err(Error::Invalid {
                what: "ForgeRun".into(),
                reason: format!("loop_counts {:?} exceed bound {MAX_LOOP}", self.loop_counts),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
pub struct RunScore {
    pub run_index: usize,
    pub correctness: u32,
    pub insight: u32,
}

impl RunScore {
    pub fn combined(&self) -> u32 {
        self.correctness + self.insight
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsemblePick {
    pub chosen_run_index: Option<usize>,
    pub rubric_scores: Vec<RunScore>,
    pub justification: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForgeConfig {
    /// Continue to phase 2 with a specification the verifier never approved.
    /// Default off: shipping an unverified model silently would defeat the
    /// anti-hallucination intent of the verify-repair loop.
    pub proceed_unapproved: bool,
}

impl Default for ForgeConfig {
    fn default() -> Self {
        ForgeConfig {
            proceed_unapproved: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForgeReport {
    pub paper_id: String,
    pub runs: Vec<ForgeRun>,
    pub pick: EnsemblePick,
}

fn spec_json(spec: &ModelSpec) -> String {
    serde_json::to_string_pretty(spec).expect("spec serializes")
}

fn parse_spec(paper_id: &str, text: &str) -> std::result::Result<ModelSpec, String> {
    let value = parse::embedded_json(text).ok_or("no JSON object found")?;
    #[derive(Deserialize)]
    struct Raw {
        variables: Vec<Variable>,
        relationships: Vec<String>,
        #[serde(default)]
        constraints: Vec<String>,
        #[serde(default)]
        calibration_data: Vec<Calibration>,
    }
    let raw: Raw = serde_json::from_value(value).map_err(|e| format!("bad spec JSON: {e}"))?;
    let spec = ModelSpec {
        paper_id: paper_id.to_string(),
        variables: raw.variables,
        relationships: raw.relationships,
        constraints: raw.constraints,
        calibration_data: raw.calibration_data,
    };
    spec.validate().map_err(|e| e.to_string())?;
    Ok(spec)
}

const SPEC_REMINDER: &str = "Respond with one ```json fenced object with keys \
variables, relationships, constraints, calibration_data.";

/// Phase 1: specify, verify, and repair until approved or the loop bound is
/// hit. Returns the last specification, the number of verify iterations, and
/// the approval status. Unapproved-after-bound is a recorded outcome.
pub fn phase1_specify(
    paper_id: &str,
    paper_text: &str,
    client: &Client,
    run_label: &str,
) -> Result<(ModelSpec, u32, bool)> {
    if paper_text.trim().is_empty() {
        return Err(Error::Invalid {
            what: "paper_text".into(),
            reason: "empty".into(),
        });
    }
    let user = format!("[SOURCE DOCUMENT] ({run_label})\n{paper_text}");
    let request = AgentRequest::new("spec-agent", SPEC_SYSTEM, &user);
    let (mut spec, _) = call_with_reparse(client, &request, SPEC_REMINDER, |text| {
        parse_spec(paper_id, text)
    })
    .map_err(|e| phase_failed(1, e))?;

    for iteration in 1..=MAX_LOOP {
        let verify = AgentRequest::new(
            "spec-verifier",
            SPEC_VERIFIER_SYSTEM,
            &format!(
                "[SPECIFICATION] ({run_label}, iteration {iteration})\n{}\n\n\
                 [SOURCE DOCUMENT]\n{paper_text}",
                spec_json(&spec)
            ),
        );
        let response = client.complete(&verify)?;
        let report = VerifierReport::parse(VerifierId::Spec, &response.text);
        if report.approved {
            return Ok((spec, iteration, true));
        }
        if iteration == MAX_LOOP {
            return Ok((spec, iteration, false));
        }
        let repair = AgentRequest::new(
            "spec-repairer",
            SPEC_REPAIR_SYSTEM,
            &format!(
                "[SPECIFICATION] ({run_label})\n{}\n\n[ISSUES]\n{}\n\n\
                 [SOURCE DOCUMENT]\n{paper_text}",
                spec_json(&spec),
                bullet_list(&report.issues)
            ),
        );
        let (repaired, _) = call_with_reparse(client, &repair, SPEC_REMINDER, |text| {
            parse_spec(paper_id, text)
        })
        .map_err(|e| phase_failed(1, e))?;
        spec = repaired;
    }
    unreachable!("loop returns within bound");
}

fn bullet_list(items: &[String]) -> String {
    items
        .iter()
        .map(|i| format!("- {i}"))
        .collect::<Vec<_>>()
        .join("\n")
}

fn phase_failed(phase: u8, err: Error) -> Error {
    match err {
        Error::Unparseable { reason, .. } => Error::PhaseFailed { phase, reason },
        other => other,
    }
}

const CODE_REMINDER: &str = "Respond with the complete program in one fenced code block.";

fn parse_program(text: &str) -> std::result::Result<String, String> {
    let program = parse::code_block(text);
    if program.trim().is_empty() {
        return Err("no code block found".into());
    }
    Ok(program)
}

/// Phase 2: implement, execute in the sandbox, and submit to two concurrent
/// verifiers; repair until both approve or the loop bound is hit. A sandbox
/// crash or timeout is a functional rejection, not a pipeline error. Returns
/// the last artifact, iteration count, approval status, and the full
/// per-iteration verifier history.
pub fn phase2_implement(
    spec: &ModelSpec,
    client: &Client,
    sandbox: &dyn Sandbox,
    run_dir: &Path,
    run_label: &str,
) -> Result<(ModelArtifact, u32, bool, Vec<Vec<VerifierReport>>)> {
    let mut history: Vec<Vec<VerifierReport>> = Vec::new();
    let mut pending_issues: Vec<String> = Vec::new();
    let mut program = String::new();

    for iteration in 1..=MAX_LOOP {
        let (role, system, user) = if iteration == 1 {
            (
                "implementer",
                IMPLEMENTER_SYSTEM,
                format!("[SPECIFICATION] ({run_label})\n{}", spec_json(spec)),
            )
        } else {
            (
                "code-repairer",
                CODE_REPAIR_SYSTEM,
                format!(
                    "[PROGRAM] ({run_label}, iteration {iteration})\n{program}\n\n\
                     [ISSUES]\n{}\n\n[SPECIFICATION]\n{}",
                    bullet_list(&pending_issues),
                    spec_json(spec)
                ),
            )
        };
        let request = AgentRequest::new(role, system, &user);
        let (next_program, _) = call_with_reparse(client, &request, CODE_REMINDER, parse_program)
            .map_err(|e| phase_failed(2, e))?;
        program = next_program;

        let execution = sandbox.execute(&program, run_dir)?;

        let functional = AgentRequest::new(
            "functional-verifier",
            FUNCTIONAL_VERIFIER_SYSTEM,
            &format!(
                "[PROGRAM] ({run_label}, iteration {iteration})\n{program}\n\n\
                 [EXECUTION STDOUT]\n{}\n[EXIT STATUS] {:?} timed_out={}\n\n\
                 [SPECIFICATION]\n{}",
                execution.stdout,
                execution.exit_code,
                execution.timed_out,
                spec_json(spec)
            ),
        );
        let directive = AgentRequest::new(
            "directive-verifier",
            DIRECTIVE_VERIFIER_SYSTEM,
            &format!(
                "[PROGRAM] ({run_label}, iteration {iteration})\n{program}\n\n\
                 [SPECIFICATION]\n{}",
                spec_json(spec)
            ),
        );
        // Both verifier requests are issued concurrently; neither response is
        // consumed until the join below.
        let responses =
            parallel_map(2, vec![functional, directive], |_, req| client.complete(&req));
        let mut responses = responses.into_iter();
        let functional_text = responses.next().unwrap()?.text;
        let directive_text = responses.next().unwrap()?.text;

        let mut functional_report = VerifierReport::parse(VerifierId::Functional, &functional_text);
        if !execution.succeeded() {
            functional_report.approved = false;
            functional_report
                .issues
                .push(format!("execution failed: {}", execution.failure_summary()));
        }
        let directive_report = VerifierReport::parse(VerifierId::Directive, &directive_text);
        let approved = functional_report.approved && directive_report.approved;
        pending_issues = functional_report
            .issues
            .iter()
            .chain(directive_report.issues.iter())
            .cloned()
            .collect();
        history.push(vec![functional_report, directive_report]);

        if approved || iteration == MAX_LOOP {
            let artifact = ModelArtifact {
                spec_id: spec.paper_id.clone(),
                io_advisory: io_scan(&program),
                program_text: program,
                execution_report: execution,
            };
            return Ok((artifact, iteration, approved, history));
        }
    }
    unreachable!("loop returns within bound");
}

const INTERPRET_REMINDER: &str = "Respond with markdown sections \
## Model Structure, ## Assumptions, ## Findings, ## Magic Gaps (all non-empty; \
use \"none identified\" for an empty gap section).";

fn parse_interpretation(text: &str) -> std::result::Result<Interpretation, String> {
    let sections = parse::markdown_sections(text);
    let get = |name: &str| -> std::result::Result<String, String> {
        sections
            .iter()
            .find(|(heading, _)| heading.eq_ignore_ascii_case(name))
            .map(|(_, body)| body.trim().to_string())
            .filter(|body| !body.is_empty())
            .ok_or_else(|| format!("missing section '{name}'"))
    };
    Ok(Interpretation {
        model_structure: get("Model Structure")?,
        assumptions: get("Assumptions")?,
        findings: get("Findings")?,
        magic_gap: get("Magic Gaps")?,
    })
}

/// Phase 3: interpret an artifact that executed successfully.
pub fn phase3_interpret(
    artifact: &ModelArtifact,
    spec: &ModelSpec,
    client: &Client,
    run_label: &str,
) -> Result<Interpretation> {
    if !artifact.execution_report.succeeded() {
        return Err(Error::Invalid {
            what: "ModelArtifact".into(),
            reason: "interpretation requires a successful execution".into(),
        });
    }
    let request = AgentRequest::new(
        "interpreter",
        INTERPRETER_SYSTEM,
        &format!(
            "[SPECIFICATION] ({run_label})\n{}\n\n[PROGRAM]\n{}\n\n[EXECUTION STDOUT]\n{}",
            spec_json(spec),
            artifact.program_text,
            artifact.execution_report.stdout
        ),
    );
    let (interpretation, _) =
        call_with_reparse(client, &request, INTERPRET_REMINDER, parse_interpretation)
            .map_err(|e| phase_failed(3, e))?;
    Ok(interpretation)
}

fn run_once(
    run_index: usize,
    paper_id: &str,
    paper_text: &str,
    client: &Client,
    sandbox: &dyn Sandbox,
    config: &ForgeConfig,
    run_dir: &Path,
) -> ForgeRun {
    let label = format!("run {run_index}");
    let mut run = ForgeRun {
        run_index,
        spec: None,
        spec_approved: false,
        artifact: None,
        artifact_approved: false,
        verifier_history: Vec::new(),
        interpretation: None,
        loop_counts: (0, 0),
        failure: None,
    };
    let (spec, p1_loops, spec_approved) =
        match phase1_specify(paper_id, paper_text, client, &label) {
            Ok(out) => out,
            Err(e) => {
                run.failure = Some(e.to_string());
                return run;
            }
        };
    run.loop_counts.0 = p1_loops;
    run.spec_approved = spec_approved;
    run.spec = Some(spec.clone());
    if !spec_approved && !config.proceed_unapproved {
        run.failure = Some("specification unapproved after repair loop; halting".into());
        return run;
    }

    let (artifact, p2_loops, artifact_approved, history) =
        match phase2_implement(&spec, client, sandbox, run_dir, &label) {
            Ok(out) => out,
            Err(e) => {
                run.failure = Some(e.to_string());
                return run;
            }
        };
    run.loop_counts.1 = p2_loops;
    run.artifact_approved = artifact_approved;
    run.verifier_history = history;
    let executed_ok = artifact.execution_report.succeeded();
    run.artifact = Some(artifact);
    if !artifact_approved {
        run.failure = Some("implementation unapproved after repair loop".into());
        return run;
    }
    if !executed_ok {
        run.failure = Some("final artifact did not execute successfully".into());
        return run;
    }

    let artifact_ref = run.artifact.as_ref().expect("artifact just set");
    match phase3_interpret(artifact_ref, &spec, client, &label) {
        Ok(interpretation) => run.interpretation = Some(interpretation),
        Err(e) => run.failure = Some(e.to_string()),
    }
    run
}

fn run_summary(run: &ForgeRun) -> String {
    match (&run.failure, &run.spec, &run.interpretation) {
        (Some(cause), _, _) => format!("RUN {} FAILED: {cause}", run.run_index),
        (None, Some(spec), Some(interp)) => format!(
            "RUN {}\nRelationships: {}\nFindings: {}\nMagic Gaps: {}",
            run.run_index,
            spec.relationships.join("; "),
            interp.findings,
            interp.magic_gap
        ),
        _ => format!("RUN {} (incomplete)", run.run_index),
    }
}

fn parse_selector(text: &str) -> std::result::Result<(Vec<RunScore>, String), String> {
    let line = regex::Regex::new(r"(?m)^RUN\s+(\d+):\s*correctness=(\d+)\s+insight=(\d+)")
        .unwrap();
    let mut scores = Vec::new();
    for caps in line.captures_iter(text) {
        let run_index: usize = caps[1].parse().map_err(|_| "bad run index")?;
        scores.push(RunScore {
            run_index,
            correctness: caps[2].parse().map_err(|_| "bad correctness")?,
            insight: caps[3].parse().map_err(|_| "bad insight")?,
        });
    }
    if scores.len() != ENSEMBLE_RUNS {
        return Err(format!("expected {ENSEMBLE_RUNS} RUN score lines, got {}", scores.len()));
    }
    let justification = parse::keyed_value(text, "JUSTIFICATION")
        .ok_or("missing JUSTIFICATION line")?;
    Ok((scores, justification))
}

/// Runs the full three-phase pipeline three times, scores the runs with the
/// selector, and persists artifacts under `work_dir` as
/// `run-N/{spec.json, model.src, execution.log, verifiers.json,
/// interpretation.md}` plus a top-level `pick.json`.
pub fn run_forge(
    paper_id: &str,
    paper_text: &str,
    client: &Client,
    sandbox: &dyn Sandbox,
    config: &ForgeConfig,
    work_dir: &Path,
) -> Result<ForgeReport> {
    std::fs::create_dir_all(work_dir)?;
    let runs = parallel_map(ENSEMBLE_RUNS, (1..=ENSEMBLE_RUNS).collect(), |_, run_index| {
        run_once(
            run_index,
            paper_id,
            paper_text,
            client,
            sandbox,
            config,
            &work_dir.join(format!("run-{run_index}")),
        )
    });

    if runs.iter().all(|r| !r.succeeded()) {
        let causes = runs
            .iter()
            .map(|r| {
                format!(
                    "run {}: {}",
                    r.run_index,
                    r.failure.as_deref().unwrap_or("incomplete")
                )
            })
            .collect::<Vec<_>>();
        return Err(Error::ForgeFailed { causes });
    }

    let selector = AgentRequest::new(
        "selector",
        SELECTOR_SYSTEM,
        &format!(
            "[CANDIDATE RUNS] ({paper_id})\n{}",
            runs.iter().map(run_summary).collect::<Vec<_>>().join("\n\n")
        ),
    );
    let ((mut scores, justification), _) = call_with_reparse(
        client,
        &selector,
        "Respond with three RUN lines and a JUSTIFICATION line exactly as instructed.",
        parse_selector,
    )?;
    // Failed runs score zero and cannot be picked, whatever the model said.
    for score in scores.iter_mut() {
        let succeeded = runs
            .iter()
            .any(|r| r.run_index == score.run_index && r.succeeded());
        if !succeeded {
            score.correctness = 0;
            score.insight = 0;
        }
    }
    scores.sort_by_key(|s| s.run_index);
    let chosen_run_index = scores
        .iter()
        .filter(|s| {
            runs.iter()
                .any(|r| r.run_index == s.run_index && r.succeeded())
        })
        .max_by(|a, b| {
            a.combined()
                .cmp(&b.combined())
                // ties break toward the lower run index
                .then(b.run_index.cmp(&a.run_index))
        })
        .map(|s| s.run_index);

    let report = ForgeReport {
        paper_id: paper_id.to_string(),
        runs,
        pick: EnsemblePick {
            chosen_run_index,
            rubric_scores: scores,
            justification,
        },
    };
    persist_forge(&report, work_dir)?;
    Ok(report)
}

fn persist_forge(report: &ForgeReport, work_dir: &Path) -> Result<()> {
    for run in &report.runs {
        let dir = work_dir.join(format!("run-{}", run.run_index));
        std::fs::create_dir_all(&dir)?;
        if let Some(spec) = &run.spec {
            std::fs::write(dir.join("spec.json"), serde_json::to_string_pretty(spec)?)?;
        }
        if let Some(artifact) = &run.artifact {
            std::fs::write(dir.join("model.src"), &artifact.program_text)?;
            std::fs::write(
                dir.join("execution.log"),
                format!(
                    "exit_code={:?} timed_out={}\n--- stdout ---\n{}\n--- stderr ---\n{}",
                    artifact.execution_report.exit_code,
                    artifact.execution_report.timed_out,
                    artifact.execution_report.stdout,
                    artifact.execution_report.stderr
                ),
            )?;
        }
        std::fs::write(
            dir.join("verifiers.json"),
            serde_json::to_string_pretty(&run.verifier_history)?,
        )?;
        if let Some(interp) = &run.interpretation {
            std::fs::write(
                dir.join("interpretation.md"),
                format!(
                    "## Model Structure\n{}\n\n## Assumptions\n{}\n\n## Findings\n{}\n\n## Magic Gaps\n{}\n",
                    interp.model_structure, interp.assumptions, interp.findings, interp.magic_gap
                ),
            )?;
        }
    }
    std::fs::write(
        work_dir.join("pick.json"),
        serde_json::to_string_pretty(&report.pick)?,
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{BackendConfig, MockProvider, MockRule, RecordingProvider};
    use crate::sandbox::ScriptedSandbox;
    use std::sync::Arc;

    const SPEC_JSON: &str = "```json\n{\"variables\": [\
        {\"symbol\": \"n_ops\", \"meaning\": \"ops\", \"units\": \"count\"},\
        {\"symbol\": \"t_op\", \"meaning\": \"per-op time\", \"units\": \"ns\"},\
        {\"symbol\": \"t_total\", \"meaning\": \"latency\", \"units\": \"ns\"}],\
        \"relationships\": [\"t_total = n_ops * t_op\"],\
        \"constraints\": [\"t_op > 0\"],\
        \"calibration_data\": [{\"source\": \"table 1\", \"values\": [4.0]}]}\n```";

    const PROGRAM: &str = "```python\nn_ops = 4\nt_op = 2\nprint('t_total', n_ops * t_op)\n```";

    const INTERP: &str = "## Model Structure\nlinear\n## Assumptions\nuniform cost\n\
                          ## Findings\nclaim holds\n## Magic Gaps\nnone identified";

    fn mock_client(rules: Vec<MockRule>) -> Client {
        let mock = MockProvider::new(0, "m");
        mock.install_script(rules);
        Client::new(Arc::new(mock), 4)
    }

    fn canned_client(seed: u64) -> Client {
        Client::from_config(&BackendConfig::mock(seed)).unwrap()
    }

    fn sample_spec() -> ModelSpec {
        parse_spec("paper-1", SPEC_JSON).unwrap()
    }

    #[test]
    fn spec_lexical_check_rejects_undeclared_variable() {
        let mut spec = sample_spec();
        spec.relationships.push("t_total = bandwidth * t_op".into());
        assert!(spec.validate().is_err());
        spec.relationships.pop();
        assert!(spec.validate().is_ok());
    }

    #[test]
    fn verifier_report_invariant() {
        let report = VerifierReport {
            verifier_id: VerifierId::Spec,
            approved: true,
            issues: vec!["stray".into()],
        };
        assert!(report.validate().is_err());
        let parsed = VerifierReport::parse(VerifierId::Spec, "APPROVED");
        assert!(parsed.approved && parsed.issues.is_empty());
        let rejected = VerifierReport::parse(VerifierId::Spec, "REJECTED\n- missing t_op");
        assert!(!rejected.approved);
        assert_eq!(rejected.issues, vec!["missing t_op".to_string()]);
        let garbled = VerifierReport::parse(VerifierId::Spec, "???");
        assert!(!garbled.approved);
        assert!(garbled.issues[0].contains("unevaluable"));
    }

    #[test]
    fn phase1_approves_first_pass() {
        let client = canned_client(7);
        let (spec, loops, approved) = phase1_specify("p", "paper text", &client, "run 1").unwrap();
        assert_eq!(loops, 1);
        assert!(approved);
        spec.validate().unwrap();
    }

    #[test]
    fn phase1_reject_reject_approve_is_three_iterations() {
        let client = mock_client(vec![
            MockRule::new("spec-agent", "", SPEC_JSON),
            MockRule::new("spec-repairer", "", SPEC_JSON),
            MockRule::sequence(
                "spec-verifier",
                "",
                &["REJECTED\n- missing n_ops", "REJECTED\n- units absent", "APPROVED"],
            ),
        ]);
        let (_, loops, approved) = phase1_specify("p", "text", &client, "run 1").unwrap();
        assert_eq!(loops, 3);
        assert!(approved);
    }

    #[test]
    fn phase1_bound_enforced_and_unapproved_recorded() {
        let client = mock_client(vec![
            MockRule::new("spec-agent", "", SPEC_JSON),
            MockRule::new("spec-repairer", "", SPEC_JSON),
            MockRule::new("spec-verifier", "", "REJECTED\n- still wrong"),
        ]);
        let (_, loops, approved) = phase1_specify("p", "text", &client, "run 1").unwrap();
        assert_eq!(loops, MAX_LOOP);
        assert!(!approved);
        // 1 specify + 3 verify + 2 repair
        assert_eq!(client.transcript().len(), 6);
    }

    #[test]
    fn phase1_unparseable_spec_fails_after_reprompt() {
        let client = mock_client(vec![MockRule::new("spec-agent", "", "not a spec")]);
        let err = phase1_specify("p", "text", &client, "run 1").unwrap_err();
        assert!(matches!(err, Error::PhaseFailed { phase: 1, .. }), "{err}");
        assert_eq!(client.transcript().len(), 2);
    }

    #[test]
    fn phase2_both_approve_first_pass() {
        let client = canned_client(3);
        let sandbox = ScriptedSandbox::ok();
        let dir = tempfile::tempdir().unwrap();
        let (artifact, loops, approved, history) =
            phase2_implement(&sample_spec(), &client, &sandbox, dir.path(), "run 1").unwrap();
        assert_eq!(loops, 1);
        assert!(approved);
        assert_eq!(history.len(), 1);
        assert!(artifact.execution_report.succeeded());
    }

    #[test]
    fn phase2_directive_rejection_triggers_repair() {
        let client = mock_client(vec![
            MockRule::new("implementer", "", PROGRAM),
            MockRule::new("code-repairer", "", PROGRAM),
            MockRule::new("functional-verifier", "", "APPROVED"),
            MockRule::sequence(
                "directive-verifier",
                "",
                &["REJECTED\n- hardcoded magic numbers", "APPROVED"],
            ),
        ]);
        let sandbox = ScriptedSandbox::ok();
        let dir = tempfile::tempdir().unwrap();
        let (_, loops, approved, history) =
            phase2_implement(&sample_spec(), &client, &sandbox, dir.path(), "run 1").unwrap();
        assert_eq!(loops, 2);
        assert!(approved);
        assert!(history[0][1].issues.iter().any(|i| i.contains("hardcoded magic numbers")));
        let roles: Vec<String> = client
            .transcript()
            .entries()
            .iter()
            .map(|e| e.request.role_name.clone())
            .collect();
        assert!(roles.contains(&"code-repairer".to_string()));
    }

    #[test]
    fn phase2_timeout_is_functional_rejection() {
        let client = canned_client(4); // verifiers approve; the crash must still reject
        let timeout = crate::sandbox::ExecutionReport {
            stdout: String::new(),
            stderr: String::new(),
            exit_code: None,
            timed_out: true,
        };
        let ok = crate::sandbox::ExecutionReport {
            stdout: "t_total 8\n".into(),
            stderr: String::new(),
            exit_code: Some(0),
            timed_out: false,
        };
        let sandbox = ScriptedSandbox::new(vec![timeout, ok]);
        let dir = tempfile::tempdir().unwrap();
        let (_, loops, approved, history) =
            phase2_implement(&sample_spec(), &client, &sandbox, dir.path(), "run 1").unwrap();
        assert_eq!(loops, 2);
        assert!(approved);
        let first_functional = &history[0][0];
        assert!(!first_functional.approved);
        assert!(first_functional
            .issues
            .iter()
            .any(|i| i.contains("wall-clock")));
    }

    #[test]
    fn phase2_verifiers_run_concurrently() {
        let recording = Arc::new(RecordingProvider::new(MockProvider::new(0, "m")));
        let client = Client::new(recording.clone(), 4);
        let sandbox = ScriptedSandbox::ok();
        let dir = tempfile::tempdir().unwrap();
        phase2_implement(&sample_spec(), &client, &sandbox, dir.path(), "run 1").unwrap();
        assert!(
            recording.peak_in_flight() >= 2,
            "verifier calls never overlapped"
        );
    }

    #[test]
    fn phase3_parses_sections_and_gap_flag() {
        let client = mock_client(vec![MockRule::new("interpreter", "", INTERP)]);
        let artifact = ModelArtifact {
            spec_id: "p".into(),
            program_text: "print(1)".into(),
            execution_report: crate::sandbox::ExecutionReport {
                stdout: "1\n".into(),
                stderr: String::new(),
                exit_code: Some(0),
                timed_out: false,
            },
            io_advisory: vec![],
        };
        let interp = phase3_interpret(&artifact, &sample_spec(), &client, "run 1").unwrap();
        assert!(!interp.has_gap());

        let gap_text = INTERP.replace(
            "none identified",
            "claimed 10x speedup exceeds the model's 3x bound",
        );
        let client = mock_client(vec![MockRule::new("interpreter", "", &gap_text)]);
        let interp = phase3_interpret(&artifact, &sample_spec(), &client, "run 1").unwrap();
        assert!(interp.has_gap());
    }

    #[test]
    fn phase3_missing_section_fails_after_reprompt() {
        let no_assumptions = "## Model Structure\nx\n## Findings\ny\n## Magic Gaps\nnone identified";
        let client = mock_client(vec![MockRule::new("interpreter", "", no_assumptions)]);
        let artifact = ModelArtifact {
            spec_id: "p".into(),
            program_text: "print(1)".into(),
            execution_report: crate::sandbox::ExecutionReport {
                stdout: String::new(),
                stderr: String::new(),
                exit_code: Some(0),
                timed_out: false,
            },
            io_advisory: vec![],
        };
        let err = phase3_interpret(&artifact, &sample_spec(), &client, "run 1").unwrap_err();
        assert!(matches!(err, Error::PhaseFailed { phase: 3, .. }), "{err}");
        assert_eq!(client.transcript().len(), 2);
    }

    #[test]
    fn phase3_requires_successful_execution() {
        let client = canned_client(1);
        let artifact = ModelArtifact {
            spec_id: "p".into(),
            program_text: "x".into(),
            execution_report: crate::sandbox::ExecutionReport {
                stdout: String::new(),
                stderr: "boom".into(),
                exit_code: Some(1),
                timed_out: false,
            },
            io_advisory: vec![],
        };
        assert!(phase3_interpret(&artifact, &sample_spec(), &client, "run 1").is_err());
    }

    #[test]
    fn io_advisory_records_markers() {
        assert!(io_scan("print(1)").is_empty());
        let hits = io_scan("import requests\nopen('x')");
        assert!(hits.contains(&"requests".to_string()));
        assert!(hits.contains(&"open(".to_string()));
    }

    fn full_script(selector: &str) -> Vec<MockRule> {
        vec![
            MockRule::new("spec-agent", "", SPEC_JSON),
            MockRule::new("spec-verifier", "", "APPROVED"),
            MockRule::new("implementer", "", PROGRAM),
            MockRule::new("functional-verifier", "", "APPROVED"),
            MockRule::new("directive-verifier", "", "APPROVED"),
            MockRule::new("interpreter", "", INTERP),
            MockRule::new("selector", "", selector),
        ]
    }

    #[test]
    fn selector_picks_highest_combined_score() {
        // combined scores: 15, 18, 14
        let client = mock_client(full_script(
            "RUN 1: correctness=8 insight=7\nRUN 2: correctness=9 insight=9\n\
             RUN 3: correctness=6 insight=8\nJUSTIFICATION: run 2 is deepest.",
        ));
        let sandbox = ScriptedSandbox::ok();
        let dir = tempfile::tempdir().unwrap();
        let report = run_forge(
            "p",
            "paper text",
            &client,
            &sandbox,
            &ForgeConfig::default(),
            dir.path(),
        )
        .unwrap();
        assert_eq!(report.pick.chosen_run_index, Some(2));
        for run in &report.runs {
            run.validate().unwrap();
            assert!(run.succeeded());
        }
    }

    #[test]
    fn selector_tie_breaks_to_lower_run_index() {
        let client = mock_client(full_script(
            "RUN 1: correctness=9 insight=9\nRUN 2: correctness=9 insight=9\n\
             RUN 3: correctness=5 insight=5\nJUSTIFICATION: tie at top.",
        ));
        let sandbox = ScriptedSandbox::ok();
        let dir = tempfile::tempdir().unwrap();
        let report = run_forge(
            "p",
            "paper text",
            &client,
            &sandbox,
            &ForgeConfig::default(),
            dir.path(),
        )
        .unwrap();
        assert_eq!(report.pick.chosen_run_index, Some(1));
    }

    #[test]
    fn failed_run_is_excluded_even_if_scored_highest() {
        let mut rules = vec![
            // run 2's spec output never parses, failing that run
            MockRule::new("spec-agent", "(run 2)", "garbage"),
        ];
        rules.extend(full_script(
            "RUN 1: correctness=5 insight=5\nRUN 2: correctness=10 insight=10\n\
             RUN 3: correctness=4 insight=4\nJUSTIFICATION: run 2 looked best.",
        ));
        let client = mock_client(rules);
        let sandbox = ScriptedSandbox::ok();
        let dir = tempfile::tempdir().unwrap();
        let report = run_forge(
            "p",
            "paper text",
            &client,
            &sandbox,
            &ForgeConfig::default(),
            dir.path(),
        )
        .unwrap();
        assert_eq!(report.pick.chosen_run_index, Some(1));
        let run2_score = report
            .pick
            .rubric_scores
            .iter()
            .find(|s| s.run_index == 2)
            .unwrap();
        assert_eq!(run2_score.combined(), 0);
    }

    #[test]
    fn all_runs_failed_is_forge_failure() {
        let client = mock_client(vec![MockRule::new("spec-agent", "", "garbage")]);
        let sandbox = ScriptedSandbox::ok();
        let dir = tempfile::tempdir().unwrap();
        let err = run_forge(
            "p",
            "paper text",
            &client,
            &sandbox,
            &ForgeConfig::default(),
            dir.path(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::ForgeFailed { .. }), "{err}");
    }

    #[test]
    fn unapproved_spec_halts_by_default_but_override_proceeds() {
        let halt_client = mock_client(vec![
            MockRule::new("spec-agent", "", SPEC_JSON),
            MockRule::new("spec-repairer", "", SPEC_JSON),
            MockRule::new("spec-verifier", "", "REJECTED\n- wrong"),
        ]);
        let sandbox = ScriptedSandbox::ok();
        let dir = tempfile::tempdir().unwrap();
        let err = run_forge(
            "p",
            "text",
            &halt_client,
            &sandbox,
            &ForgeConfig::default(),
            dir.path(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::ForgeFailed { .. }));

        let mut rules = vec![
            MockRule::new("spec-agent", "", SPEC_JSON),
            MockRule::new("spec-repairer", "", SPEC_JSON),
            MockRule::new("spec-verifier", "", "REJECTED\n- wrong"),
        ];
        rules.extend(full_script(
            "RUN 1: correctness=7 insight=7\nRUN 2: correctness=6 insight=6\n\
             RUN 3: correctness=5 insight=5\nJUSTIFICATION: first.",
        ));
        let proceed_client = mock_client(rules);
        let sandbox = ScriptedSandbox::ok();
        let dir = tempfile::tempdir().unwrap();
        let report = run_forge(
            "p",
            "text",
            &proceed_client,
            &sandbox,
            &ForgeConfig {
                proceed_unapproved: true,
            },
            dir.path(),
        )
        .unwrap();
        assert!(report.runs.iter().all(|r| !r.spec_approved));
        assert_eq!(report.pick.chosen_run_index, Some(1));
    }

    #[test]
    fn ensemble_is_deterministic_under_fixed_seed() {
        let run = |dir: &Path| {
            let client = canned_client(42);
            let sandbox = ScriptedSandbox::ok();
            run_forge("p", "paper text", &client, &sandbox, &ForgeConfig::default(), dir).unwrap()
        };
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let a = run(d1.path());
        let b = run(d2.path());
        assert_eq!(
            serde_json::to_string(&a.pick).unwrap(),
            serde_json::to_string(&b.pick).unwrap()
        );
        assert_eq!(
            serde_json::to_string(&a.runs).unwrap(),
            serde_json::to_string(&b.runs).unwrap()
        );
    }

    #[test]
    fn artifacts_are_persisted_in_run_layout() {
        let client = canned_client(9);
        let sandbox = ScriptedSandbox::ok();
        let dir = tempfile::tempdir().unwrap();
        run_forge(
            "p",
            "paper text",
            &client,
            &sandbox,
            &ForgeConfig::default(),
            dir.path(),
        )
        .unwrap();
        for n in 1..=3 {
            let run_dir = dir.path().join(format!("run-{n}"));
            for file in ["spec.json", "model.src", "execution.log", "verifiers.json", "interpretation.md"] {
                assert!(run_dir.join(file).exists(), "missing run-{n}/{file}");
            }
        }
        assert!(dir.path().join("pick.json").exists());
    }
}

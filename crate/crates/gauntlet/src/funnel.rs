//! The tiered candidate-evaluation hierarchy: Tier 0 first-principles filter,
//! Tier 1 four-expert adversarial consensus, Tier 2 analytical-model hook,
//! Tier 3 forge-backed simulation, and pluggable Tier 4–5 stubs. Every
//! candidate's path is recorded in a ledger whose per-tier counts chain
//! exactly, and every failure produces structured feedback for the
//! generation side.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backend::{parallel_map, AgentRequest, Client};
use crate::error::{Error, Result};
use crate::ideation::call_with_reparse;
use crate::kernel::MechanismProposal;
use crate::modelforge::{run_forge, ForgeConfig};
use crate::sandbox::Sandbox;

pub const TIER_COUNT: usize = 6;

pub const TIER0_SYSTEM: &str = "\
You are a first-principles filter for hardware mechanism proposals. Check the \
proposal against each checklist item and fail it if any item is violated. \
Cite the violated item in your reason.

Respond with PASS or FAIL on the first line. When failing, follow with one \
reason per line, each starting with \"- \" and citing a checklist item.";

pub const EXPERT_SYSTEM_TEMPLATE: &str = "\
You are the {expert} expert on an adversarial review board. Your charter: \
{charter} Score the proposal on your dimensions (0-10 each) and decide \
whether it should advance.

Respond with exactly:
DIMENSIONS: <name>=<0-10>, <name>=<0-10>
APPROVE or REJECT
When rejecting, follow with one issue per line starting with \"- \".";

/// Default first-principles checklist items; extensible via config.
pub fn default_checklist() -> Vec<String> {
    vec![
        "the mechanism must not violate causality (no acting on information before it exists)"
            .to_string(),
        "the mechanism must not assume perfect prediction or oracle knowledge of future behavior"
            .to_string(),
        "the mechanism must not ignore critical edge cases (overflow, aliasing, contention)"
            .to_string(),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TierId(u8);

impl TierId {
    pub fn new(tier: u8) -> Result<Self> {
        if tier as usize >= TIER_COUNT {
            return Err(Error::Invalid {
                what: "TierId".into(),
                reason: format!("tier {tier} out of range 0-5"),
            });
        }
        Ok(TierId(tier))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TierDecision {
    pub candidate_id: String,
    pub tier: TierId,
    pub passed: bool,
    /// Required (non-empty) when failed; informational otherwise.
    pub feedback: String,
}

impl TierDecision {
    pub fn validate(&self) -> Result<()> {
        if !self.passed && self.feedback.trim().is_empty() {
            return Err(Error::Invalid {
                what: "TierDecision".into(),
                reason: "failed decision carries no feedback".into(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize, PartialEq, Eq)]
pub struct TierCount {
    pub entered: usize,
    pub passed: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FunnelLedger {
    pub tiers: Vec<TierCount>,
    pub decisions: Vec<TierDecision>,
    pub warnings: Vec<String>,
}

impl FunnelLedger {
    fn empty() -> Self {
        FunnelLedger {
            tiers: vec![TierCount::default(); TIER_COUNT],
            decisions: Vec::new(),
            warnings: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tiers.len() != TIER_COUNT {
            return Err(Error::Invalid {
                what: "FunnelLedger".into(),
                reason: format!("expected {TIER_COUNT} tier rows", ),
            });
        }
        for (k, count) in self.tiers.iter().enumerate() {
            if count.passed > count.entered {
                return Err(Error::Invalid {
                    what: "FunnelLedger".into(),
                    reason: format!("tier {k}: passed {} > entered {}", count.passed, count.entered),
                });
            }
            if k + 1 < TIER_COUNT && self.tiers[k + 1].entered != count.passed {
                return Err(Error::Invalid {
                    what: "FunnelLedger".into(),
                    reason: format!(
                        "chain broken: tier {} entered {} != tier {k} passed {}",
                        k + 1,
                        self.tiers[k + 1].entered,
                        count.passed
                    ),
                });
            }
        }
        for decision in &self.decisions {
            decision.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExpertId {
    Microarchitecture,
    SimulationMethodology,
    Workloads,
    SystemsIntegration,
}

impl ExpertId {
    pub const ALL: [ExpertId; 4] = [
        ExpertId::Microarchitecture,
        ExpertId::SimulationMethodology,
        ExpertId::Workloads,
        ExpertId::SystemsIntegration,
    ];

    pub fn role_name(self) -> &'static str {
        match self {
            ExpertId::Microarchitecture => "expert-microarchitecture",
            ExpertId::SimulationMethodology => "expert-simulation-methodology",
            ExpertId::Workloads => "expert-workloads",
            ExpertId::SystemsIntegration => "expert-systems-integration",
        }
    }

    fn charter(self) -> &'static str {
        match self {
            ExpertId::Microarchitecture => {
                "judge whether the mechanism is realizable in silicon at the claimed cost."
            }
            ExpertId::SimulationMethodology => {
                "judge whether the mechanism can be evaluated credibly with sound methodology."
            }
            ExpertId::Workloads => {
                "judge whether the motivating workloads and benchmarks are representative."
            }
            ExpertId::SystemsIntegration => {
                "judge whether the mechanism composes with real systems and software stacks."
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExpertScorecard {
    pub expert_id: ExpertId,
    pub dimension_scores: Vec<(String, u32)>,
    pub approve: bool,
    pub issues: Vec<String>,
}

/// A Tier-1 judgment needs exactly the four distinct experts.
pub fn validate_scorecards(cards: &[ExpertScorecard]) -> Result<()> {
    let mut ids: Vec<ExpertId> = cards.iter().map(|c| c.expert_id).collect();
    ids.sort();
    ids.dedup();
    if cards.len() != 4 || ids.len() != 4 {
        return Err(Error::Invalid {
            what: "ExpertScorecard".into(),
            reason: "Tier-1 judgment requires four distinct experts".into(),
        });
    }
    Ok(())
}

/// User-supplied analytical evaluator: proposal -> (metric estimates, pass).
/// An `Err` is treated as a hook crash with the message as diagnostics.
pub type AnalyticalHook =
    dyn Fn(&MechanismProposal) -> std::result::Result<(String, bool), String> + Send + Sync;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FunnelConfig {
    /// Per-tier enable flags; a disabled tier passes candidates through.
    pub tier_enabled: Vec<bool>,
    /// Approvals required at Tier 1 (k-of-4); default unanimity.
    pub consensus_threshold: usize,
    /// Deterministic per-tier quotas: the first N entrants pass, the rest
    /// fail. A quota replaces evaluation at that tier.
    pub quotas: Vec<Option<usize>>,
    /// Fail Tier 2 when no analytical model is registered (default: pass with
    /// a warning).
    pub strict_tier2: bool,
    pub checklist: Vec<String>,
    pub parallelism: usize,
}

impl Default for FunnelConfig {
    fn default() -> Self {
        FunnelConfig {
            tier_enabled: vec![true; TIER_COUNT],
            consensus_threshold: 4,
            quotas: vec![None; TIER_COUNT],
            strict_tier2: false,
            checklist: default_checklist(),
            parallelism: 4,
        }
    }
}

impl FunnelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tier_enabled.len() != TIER_COUNT || self.quotas.len() != TIER_COUNT {
            return Err(Error::Config(format!(
                "tier_enabled and quotas must have {TIER_COUNT} entries"
            )));
        }
        if !(1..=4).contains(&self.consensus_threshold) {
            return Err(Error::Config("consensus_threshold must be 1-4".into()));
        }
        if self.parallelism == 0 {
            return Err(Error::Config("parallelism must be >= 1".into()));
        }
        Ok(())
    }
}

/// External evaluators the funnel can call into.
pub struct FunnelDeps<'a> {
    pub hook: Option<&'a AnalyticalHook>,
    pub sandbox: Option<&'a dyn Sandbox>,
    pub forge_config: ForgeConfig,
    /// Where Tier-3 forge artifacts are written (one subdirectory per
    /// candidate).
    pub forge_dir: PathBuf,
}

impl<'a> FunnelDeps<'a> {
    pub fn minimal(forge_dir: &Path) -> Self {
        FunnelDeps {
            hook: None,
            sandbox: None,
            forge_config: ForgeConfig::default(),
            forge_dir: forge_dir.to_path_buf(),
        }
    }
}

fn proposal_text(proposal: &MechanismProposal) -> String {
    format!(
        "Title: {}\nMechanism: {}\nWhy it Works: {}\nEvaluation Plan: {}",
        proposal.title, proposal.mechanism, proposal.rationale, proposal.evaluation_plan
    )
}

fn checklist_text(checklist: &[String]) -> String {
    checklist
        .iter()
        .enumerate()
        .map(|(i, item)| format!("{}. {item}", i + 1))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Tier 0: single-call first-principles checklist filter. Unparseable judge
/// output is recorded as a conservative failure, not an error.
pub fn tier0_filter(
    proposal: &MechanismProposal,
    checklist: &[String],
    client: &Client,
) -> Result<TierDecision> {
    let request = AgentRequest::new(
        "tier0-judge",
        TIER0_SYSTEM,
        &format!(
            "[CHECKLIST]\n{}\n\n[PROPOSAL] ({})\n{}",
            checklist_text(checklist),
            proposal.id,
            proposal_text(proposal)
        ),
    );
    let response = client.complete(&request)?;
    let first = response
        .text
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .unwrap_or("");
    let (passed, feedback) = if first.eq_ignore_ascii_case("PASS") {
        (true, String::new())
    } else if first.eq_ignore_ascii_case("FAIL") {
        let reasons: Vec<&str> = response
            .text
            .lines()
            .filter_map(|l| l.trim().strip_prefix("- "))
            .collect();
        let feedback = if reasons.is_empty() {
            response.text.trim().to_string()
        } else {
            reasons.join("; ")
        };
        (false, feedback)
    } else {
        (false, "unevaluable first-principles judgment".to_string())
    };
    Ok(TierDecision {
        candidate_id: proposal.id.clone(),
        tier: TierId::new(0)?,
        passed,
        feedback,
    })
}

fn parse_scorecard(expert_id: ExpertId, text: &str) -> std::result::Result<ExpertScorecard, String> {
    let dims_line = crate::parse::keyed_value(text, "DIMENSIONS").ok_or("missing DIMENSIONS")?;
    let mut dimension_scores = Vec::new();
    for part in dims_line.split(',') {
        let (name, value) = part.split_once('=').ok_or("bad dimension entry")?;
        let score: u32 = value.trim().parse().map_err(|_| "bad dimension score")?;
        if score > 10 {
            return Err("dimension score out of 0-10 range".into());
        }
        dimension_scores.push((name.trim().to_string(), score));
    }
    let approve = text.lines().any(|l| l.trim().eq_ignore_ascii_case("APPROVE"));
    let reject = text.lines().any(|l| l.trim().eq_ignore_ascii_case("REJECT"));
    if approve == reject {
        return Err("expected exactly one of APPROVE/REJECT".into());
    }
    let issues: Vec<String> = text
        .lines()
        .filter_map(|l| l.trim().strip_prefix("- "))
        .map(|s| s.to_string())
        .collect();
    Ok(ExpertScorecard {
        expert_id,
        dimension_scores,
        approve,
        issues,
    })
}

/// Tier 1: four concurrent expert reviews with consensus gating. An expert
/// whose output stays unparseable after one re-prompt counts as
/// non-approving.
pub fn tier1_adversarial(
    proposal: &MechanismProposal,
    config: &FunnelConfig,
    client: &Client,
) -> Result<(Vec<ExpertScorecard>, TierDecision)> {
    let cards = parallel_map(4, ExpertId::ALL.to_vec(), |_, expert_id| {
        let system = EXPERT_SYSTEM_TEMPLATE
            .replace("{expert}", expert_id.role_name().trim_start_matches("expert-"))
            .replace("{charter}", expert_id.charter());
        let request = AgentRequest::new(
            expert_id.role_name(),
            &system,
            &format!("[PROPOSAL] ({})\n{}", proposal.id, proposal_text(proposal)),
        );
        match call_with_reparse(
            client,
            &request,
            "Respond with a DIMENSIONS line and APPROVE or REJECT exactly as instructed.",
            |text| parse_scorecard(expert_id, text),
        ) {
            Ok((card, _)) => Ok(card),
            Err(Error::Unparseable { reason, .. }) => Ok(ExpertScorecard {
                expert_id,
                dimension_scores: Vec::new(),
                approve: false,
                issues: vec![format!("unevaluable expert output: {reason}")],
            }),
            Err(other) => Err(other),
        }
    });
    let cards: Vec<ExpertScorecard> = cards.into_iter().collect::<Result<_>>()?;
    validate_scorecards(&cards)?;

    let approvals = cards.iter().filter(|c| c.approve).count();
    let passed = approvals >= config.consensus_threshold;
    let feedback = if passed {
        String::new()
    } else {
        cards
            .iter()
            .filter(|c| !c.approve)
            .map(|c| {
                let top = c
                    .issues
                    .first()
                    .map(String::as_str)
                    .unwrap_or("no issue stated");
                format!("{}: {top}", c.expert_id.role_name())
            })
            .collect::<Vec<_>>()
            .join("; ")
    };
    let decision = TierDecision {
        candidate_id: proposal.id.clone(),
        tier: TierId::new(1)?,
        passed,
        feedback,
    };
    Ok((cards, decision))
}

/// Tier 2: defer to the registered analytical hook; absence passes through
/// with a warning (or fails in strict mode); a hook crash fails the
/// candidate with diagnostics.
pub fn tier2_analytical(
    proposal: &MechanismProposal,
    hook: Option<&AnalyticalHook>,
    strict: bool,
) -> (TierDecision, Option<String>) {
    let tier = TierId::new(2).expect("tier 2 in range");
    match hook {
        None => {
            let feedback = "no analytical model registered".to_string();
            let decision = TierDecision {
                candidate_id: proposal.id.clone(),
                tier,
                passed: !strict,
                feedback: feedback.clone(),
            };
            (decision, Some(format!("tier 2: {feedback} (pass-through)")))
        }
        Some(hook) => match hook(proposal) {
            Ok((estimates, passed)) => (
                TierDecision {
                    candidate_id: proposal.id.clone(),
                    tier,
                    passed,
                    feedback: if passed {
                        format!("analytical estimate: {estimates}")
                    } else {
                        format!("analytical model rejected: {estimates}")
                    },
                },
                None,
            ),
            Err(diagnostics) => (
                TierDecision {
                    candidate_id: proposal.id.clone(),
                    tier,
                    passed: false,
                    feedback: format!("analytical hook crashed: {diagnostics}"),
                },
                None,
            ),
        },
    }
}

/// Tier 3: build a purpose-built model of the proposal with the forge.
/// Passes iff the ensemble pick exists, its artifact executed successfully,
/// and the interpretation's magic-gap section does not flag infeasibility.
pub fn tier3_simulate(
    proposal: &MechanismProposal,
    client: &Client,
    sandbox: &dyn Sandbox,
    forge_config: &ForgeConfig,
    work_dir: &Path,
) -> Result<TierDecision> {
    let tier = TierId::new(3)?;
    let document = format!(
        "Candidate mechanism under evaluation (problem {}).\n{}",
        proposal.problem_id,
        proposal_text(proposal)
    );
    let report = match run_forge(&proposal.id, &document, client, sandbox, forge_config, work_dir)
    {
        Ok(report) => report,
        Err(Error::ForgeFailed { causes }) => {
            return Ok(TierDecision {
                candidate_id: proposal.id.clone(),
                tier,
                passed: false,
                feedback: format!("all forge runs failed: {}", causes.join("; ")),
            });
        }
        Err(other) => return Err(other),
    };
    let chosen = report.pick.chosen_run_index.and_then(|index| {
        report.runs.iter().find(|r| r.run_index == index)
    });
    let (passed, feedback) = match chosen {
        None => (false, "forge produced no pick".to_string()),
        Some(run) => {
            let executed = run
                .artifact
                .as_ref()
                .map(|a| a.execution_report.succeeded())
                .unwrap_or(false);
            let gap = run.interpretation.as_ref().map(|i| i.has_gap()).unwrap_or(true);
            if !executed {
                (false, "picked model did not execute successfully".to_string())
            } else if gap {
                let gap_text = run
                    .interpretation
                    .as_ref()
                    .map(|i| i.magic_gap.clone())
                    .unwrap_or_default();
                (false, format!("magic gap flags the claim as infeasible: {gap_text}"))
            } else {
                (true, "forge model supports the claim".to_string())
            }
        }
    };
    Ok(TierDecision {
        candidate_id: proposal.id.clone(),
        tier,
        passed,
        feedback,
    })
}

fn stub_decision(proposal_id: &str, tier: usize, note: &str) -> TierDecision {
    TierDecision {
        candidate_id: proposal_id.to_string(),
        tier: TierId::new(tier as u8).expect("tier in range"),
        passed: true,
        feedback: note.to_string(),
    }
}

/// Runs every candidate through the tiers in order. Tier boundaries are
/// barriers; candidates within a tier are evaluated concurrently; quotas
/// short-circuit evaluation deterministically by entry order.
pub fn run_funnel(
    candidates: &[MechanismProposal],
    config: &FunnelConfig,
    client: &Client,
    deps: &FunnelDeps,
) -> Result<FunnelLedger> {
    config.validate()?;
    let mut ledger = FunnelLedger::empty();
    let mut survivors: Vec<MechanismProposal> = candidates.to_vec();

    for tier in 0..TIER_COUNT {
        ledger.tiers[tier].entered = survivors.len();
        if survivors.is_empty() {
            continue;
        }
        let decisions: Vec<TierDecision> = if !config.tier_enabled[tier] {
            ledger.warnings.push(format!("tier {tier}: disabled (pass-through)"));
            survivors
                .iter()
                .map(|p| stub_decision(&p.id, tier, "tier disabled: pass-through"))
                .collect()
        } else if let Some(quota) = config.quotas[tier] {
            survivors
                .iter()
                .enumerate()
                .map(|(i, p)| TierDecision {
                    candidate_id: p.id.clone(),
                    tier: TierId::new(tier as u8).expect("tier in range"),
                    passed: i < quota,
                    feedback: if i < quota {
                        String::new()
                    } else {
                        format!("tier {tier} quota of {quota} exhausted")
                    },
                })
                .collect()
        } else {
            match tier {
                0 => parallel_map(config.parallelism, survivors.clone(), |_, p| {
                    tier0_filter(&p, &config.checklist, client)
                })
                .into_iter()
                .collect::<Result<_>>()?,
                1 => parallel_map(config.parallelism, survivors.clone(), |_, p| {
                    tier1_adversarial(&p, config, client).map(|(_, d)| d)
                })
                .into_iter()
                .collect::<Result<_>>()?,
                2 => {
                    let mut out = Vec::new();
                    let mut warned = false;
                    for p in &survivors {
                        let (decision, warning) = tier2_analytical(p, deps.hook, config.strict_tier2);
                        if let (Some(w), false) = (warning, warned) {
                            ledger.warnings.push(w);
                            warned = true;
                        }
                        out.push(decision);
                    }
                    out
                }
                3 => match deps.sandbox {
                    None => {
                        ledger
                            .warnings
                            .push("tier 3: no simulation runtime registered (pass-through)".into());
                        survivors
                            .iter()
                            .map(|p| stub_decision(&p.id, tier, "no simulation runtime: pass-through"))
                            .collect()
                    }
                    Some(sandbox) => parallel_map(config.parallelism, survivors.clone(), |_, p| {
                        tier3_simulate(
                            &p,
                            client,
                            sandbox,
                            &deps.forge_config,
                            &deps.forge_dir.join(&p.id),
                        )
                    })
                    .into_iter()
                    .collect::<Result<_>>()?,
                },
                _ => survivors
                    .iter()
                    .map(|p| stub_decision(&p.id, tier, "not implemented: pass-through"))
                    .collect(),
            }
        };
        let passed_ids: std::collections::BTreeSet<String> = decisions
            .iter()
            .filter(|d| d.passed)
            .map(|d| d.candidate_id.clone())
            .collect();
        survivors.retain(|p| passed_ids.contains(&p.id));
        ledger.tiers[tier].passed = survivors.len();
        ledger.decisions.extend(decisions);
    }

    ledger.validate()?;
    Ok(ledger)
}

/// Writes `ledger.json` plus one `feedback/<candidate>-tier<k>.json` per
/// failed decision, for routing back to generation.
pub fn export_ledger(ledger: &FunnelLedger, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("ledger.json"), serde_json::to_string_pretty(ledger)?)?;
    let feedback_dir = dir.join("feedback");
    std::fs::create_dir_all(&feedback_dir)?;
    for decision in ledger.decisions.iter().filter(|d| !d.passed) {
        let name = format!(
            "{}-tier{}.json",
            decision.candidate_id.replace(['/', '\\'], "_"),
            decision.tier.index()
        );
        std::fs::write(
            feedback_dir.join(name),
            serde_json::to_string_pretty(decision)?,
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{BackendConfig, MockProvider, MockRule};
    use crate::sandbox::ScriptedSandbox;
    use std::sync::Arc;

    fn mock_client(rules: Vec<MockRule>) -> Client {
        let mock = MockProvider::new(0, "m");
        mock.install_script(rules);
        Client::new(Arc::new(mock), 8)
    }

    fn canned_client(seed: u64) -> Client {
        let mut config = BackendConfig::mock(seed);
        config.max_parallel = 8;
        Client::from_config(&config).unwrap()
    }

    fn proposal(id: &str) -> MechanismProposal {
        MechanismProposal {
            id: id.into(),
            problem_id: "prob-1".into(),
            title: "Adaptive residency steering".into(),
            mechanism: "A region-hash table steers line migration between tiers.".into(),
            rationale: "Reuse skew concentrates benefit in few regions.".into(),
            evaluation_plan: "Compare against static partitioning on memory-bound traces.".into(),
            temperature: 0.7,
        }
    }

    #[test]
    fn tier0_cites_perfect_prediction() {
        let client = mock_client(vec![MockRule::new(
            "tier0",
            "",
            "FAIL\n- assumes perfect prediction of future accesses (checklist item 2)",
        )]);
        let mut oracle = proposal("c1");
        oracle.mechanism = "Uses oracle knowledge of future accesses to pre-stage lines.".into();
        let decision = tier0_filter(&oracle, &default_checklist(), &client).unwrap();
        assert!(!decision.passed);
        assert!(decision.feedback.contains("perfect prediction"));
        decision.validate().unwrap();
    }

    #[test]
    fn tier0_benign_passes_and_garbled_fails_closed() {
        let client = canned_client(5);
        let decision = tier0_filter(&proposal("c1"), &default_checklist(), &client).unwrap();
        assert!(decision.passed);

        let garbled = mock_client(vec![MockRule::new("tier0", "", "hmm, maybe?")]);
        let decision = tier0_filter(&proposal("c1"), &default_checklist(), &garbled).unwrap();
        assert!(!decision.passed);
        assert!(decision.feedback.contains("unevaluable"));
    }

    #[test]
    fn tier1_unanimous_approval_passes() {
        let client = canned_client(6);
        let (cards, decision) =
            tier1_adversarial(&proposal("c1"), &FunnelConfig::default(), &client).unwrap();
        validate_scorecards(&cards).unwrap();
        assert!(cards.iter().all(|c| c.approve));
        assert!(decision.passed);
    }

    #[test]
    fn tier1_single_dissent_fails_and_names_dissenter() {
        let issue = "Are these benchmarks representative? The suite omits irregular workloads.";
        let client = mock_client(vec![
            MockRule::new(
                "expert-workloads",
                "",
                &format!("DIMENSIONS: representativeness=3\nREJECT\n- {issue}"),
            ),
            MockRule::new("expert", "", "DIMENSIONS: feasibility=8\nAPPROVE"),
        ]);
        let (cards, decision) =
            tier1_adversarial(&proposal("c1"), &FunnelConfig::default(), &client).unwrap();
        assert_eq!(cards.iter().filter(|c| c.approve).count(), 3);
        assert!(!decision.passed);
        assert!(decision.feedback.contains("expert-workloads"));
        assert!(decision.feedback.contains("representative"));
    }

    #[test]
    fn tier1_k_of_4_threshold_is_configurable() {
        let client = mock_client(vec![
            MockRule::new("expert-workloads", "", "DIMENSIONS: r=3\nREJECT\n- too narrow"),
            MockRule::new("expert", "", "DIMENSIONS: f=8\nAPPROVE"),
        ]);
        let config = FunnelConfig {
            consensus_threshold: 3,
            ..FunnelConfig::default()
        };
        let (_, decision) = tier1_adversarial(&proposal("c1"), &config, &client).unwrap();
        assert!(decision.passed);
    }

    #[test]
    fn tier1_unparseable_expert_counts_as_non_approving() {
        let client = mock_client(vec![
            MockRule::new("expert-systems-integration", "", "shrug"),
            MockRule::new("expert", "", "DIMENSIONS: f=8\nAPPROVE"),
        ]);
        let (cards, decision) =
            tier1_adversarial(&proposal("c1"), &FunnelConfig::default(), &client).unwrap();
        let systems = cards
            .iter()
            .find(|c| c.expert_id == ExpertId::SystemsIntegration)
            .unwrap();
        assert!(!systems.approve);
        assert!(!decision.passed);
    }

    #[test]
    fn tier2_hook_paths() {
        let pass_hook: Box<AnalyticalHook> =
            Box::new(|_| Ok(("2.1x estimated speedup".into(), true)));
        let (decision, warning) = tier2_analytical(&proposal("c1"), Some(&*pass_hook), false);
        assert!(decision.passed);
        assert!(decision.feedback.contains("2.1x"));
        assert!(warning.is_none());

        let crash_hook: Box<AnalyticalHook> = Box::new(|_| Err("division by zero".into()));
        let (decision, _) = tier2_analytical(&proposal("c1"), Some(&*crash_hook), false);
        assert!(!decision.passed);
        assert!(decision.feedback.contains("division by zero"));

        let (decision, warning) = tier2_analytical(&proposal("c1"), None, false);
        assert!(decision.passed);
        assert!(warning.unwrap().contains("no analytical model"));

        let (decision, _) = tier2_analytical(&proposal("c1"), None, true);
        assert!(!decision.passed);
    }

    #[test]
    fn tier3_clean_forge_passes_and_gap_fails() {
        let client = canned_client(7); // canned interpreter reports no gaps
        let sandbox = ScriptedSandbox::ok();
        let dir = tempfile::tempdir().unwrap();
        let decision = tier3_simulate(
            &proposal("c1"),
            &client,
            &sandbox,
            &ForgeConfig::default(),
            dir.path(),
        )
        .unwrap();
        assert!(decision.passed, "{}", decision.feedback);

        let gap_interp = "## Model Structure\nx\n## Assumptions\ny\n## Findings\nz\n\
                          ## Magic Gaps\nclaimed 10x exceeds the model's 2x bound";
        let rules = vec![
            MockRule::new("spec-agent", "", SPEC_JSON),
            MockRule::new("spec-verifier", "", "APPROVED"),
            MockRule::new("implementer", "", PROGRAM),
            MockRule::new("verifier", "", "APPROVED"),
            MockRule::new("interpreter", "", gap_interp),
            MockRule::new(
                "selector",
                "",
                "RUN 1: correctness=8 insight=8\nRUN 2: correctness=7 insight=7\n\
                 RUN 3: correctness=6 insight=6\nJUSTIFICATION: first.",
            ),
        ];
        let client = mock_client(rules);
        let sandbox = ScriptedSandbox::ok();
        let dir = tempfile::tempdir().unwrap();
        let decision = tier3_simulate(
            &proposal("c1"),
            &client,
            &sandbox,
            &ForgeConfig::default(),
            dir.path(),
        )
        .unwrap();
        assert!(!decision.passed);
        assert!(decision.feedback.contains("infeasible"));
    }

    const SPEC_JSON: &str = "```json\n{\"variables\": [\
        {\"symbol\": \"a\", \"meaning\": \"m\", \"units\": \"u\"},\
        {\"symbol\": \"b\", \"meaning\": \"m\", \"units\": \"u\"}],\
        \"relationships\": [\"b = a\"],\"constraints\": [],\"calibration_data\": []}\n```";
    const PROGRAM: &str = "```python\nprint('b', 1)\n```";

    #[test]
    fn tier3_all_forge_runs_failed_is_a_failed_decision() {
        let client = mock_client(vec![MockRule::new("spec-agent", "", "garbage")]);
        let sandbox = ScriptedSandbox::ok();
        let dir = tempfile::tempdir().unwrap();
        let decision = tier3_simulate(
            &proposal("c1"),
            &client,
            &sandbox,
            &ForgeConfig::default(),
            dir.path(),
        )
        .unwrap();
        assert!(!decision.passed);
        assert!(decision.feedback.contains("forge runs failed"));
    }

    #[test]
    fn funnel_quota_run_reproduces_tier_counts() {
        let candidates: Vec<MechanismProposal> =
            (0..10_000).map(|i| proposal(&format!("cand-{i:05}"))).collect();
        let config = FunnelConfig {
            quotas: vec![Some(2_000), Some(500), Some(100), Some(20), None, None],
            ..FunnelConfig::default()
        };
        let client = canned_client(0);
        let dir = tempfile::tempdir().unwrap();
        let deps = FunnelDeps::minimal(dir.path());
        let ledger = run_funnel(&candidates, &config, &client, &deps).unwrap();
        let counts: Vec<(usize, usize)> =
            ledger.tiers.iter().map(|t| (t.entered, t.passed)).collect();
        assert_eq!(
            counts,
            vec![
                (10_000, 2_000),
                (2_000, 500),
                (500, 100),
                (100, 20),
                (20, 20),
                (20, 20)
            ]
        );
        // quota tiers make no model calls
        assert_eq!(client.transcript().len(), 0);
        ledger.validate().unwrap();
    }

    #[test]
    fn funnel_monotone_fidelity_holds() {
        let candidates: Vec<MechanismProposal> =
            (0..10).map(|i| proposal(&format!("cand-{i}"))).collect();
        let config = FunnelConfig {
            quotas: vec![Some(6), Some(3), Some(2), Some(1), None, None],
            ..FunnelConfig::default()
        };
        let client = canned_client(0);
        let dir = tempfile::tempdir().unwrap();
        let ledger =
            run_funnel(&candidates, &config, &client, &FunnelDeps::minimal(dir.path())).unwrap();
        for decision in &ledger.decisions {
            let k = decision.tier.index();
            for lower in 0..k {
                let passed_lower = ledger.decisions.iter().any(|d| {
                    d.candidate_id == decision.candidate_id
                        && d.tier.index() == lower
                        && d.passed
                });
                assert!(
                    passed_lower,
                    "{} reached tier {k} without passing tier {lower}",
                    decision.candidate_id
                );
            }
        }
    }

    #[test]
    fn funnel_empty_input_yields_empty_ledger() {
        let client = canned_client(0);
        let dir = tempfile::tempdir().unwrap();
        let ledger =
            run_funnel(&[], &FunnelConfig::default(), &client, &FunnelDeps::minimal(dir.path()))
                .unwrap();
        assert!(ledger.tiers.iter().all(|t| t.entered == 0 && t.passed == 0));
        assert!(ledger.decisions.is_empty());
    }

    #[test]
    fn funnel_single_tier0_failure_exports_feedback() {
        let client = mock_client(vec![MockRule::new(
            "tier0",
            "",
            "FAIL\n- violates causality by consuming a signal before it is produced",
        )]);
        let dir = tempfile::tempdir().unwrap();
        let ledger = run_funnel(
            &[proposal("cand-a")],
            &FunnelConfig::default(),
            &client,
            &FunnelDeps::minimal(dir.path()),
        )
        .unwrap();
        assert_eq!(ledger.tiers[0], TierCount { entered: 1, passed: 0 });
        assert_eq!(ledger.decisions.len(), 1);

        let out = tempfile::tempdir().unwrap();
        export_ledger(&ledger, out.path()).unwrap();
        assert!(out.path().join("ledger.json").exists());
        let feedback = out.path().join("feedback").join("cand-a-tier0.json");
        let text = std::fs::read_to_string(feedback).unwrap();
        assert!(text.contains("causality"));
    }

    #[test]
    fn ledger_chain_invariant_detects_breaks() {
        let mut ledger = FunnelLedger::empty();
        ledger.tiers[0] = TierCount { entered: 5, passed: 3 };
        ledger.tiers[1] = TierCount { entered: 2, passed: 2 }; // should be 3
        assert!(ledger.validate().is_err());
        ledger.tiers[1].entered = 3;
        ledger.tiers[1].passed = 3;
        for k in 2..TIER_COUNT {
            ledger.tiers[k] = TierCount { entered: 3, passed: 3 };
        }
        ledger.validate().unwrap();
    }

    #[test]
    fn disabled_tier_passes_through_with_warning() {
        let config = FunnelConfig {
            tier_enabled: vec![false, true, true, true, true, true],
            quotas: vec![None, Some(1), Some(1), Some(1), None, None],
            ..FunnelConfig::default()
        };
        let client = canned_client(0);
        let dir = tempfile::tempdir().unwrap();
        let ledger = run_funnel(
            &[proposal("a"), proposal("b")],
            &config,
            &client,
            &FunnelDeps::minimal(dir.path()),
        )
        .unwrap();
        assert_eq!(ledger.tiers[0], TierCount { entered: 2, passed: 2 });
        assert!(ledger.warnings.iter().any(|w| w.contains("tier 0")));
    }
}

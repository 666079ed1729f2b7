//! Six-reviewer comprehension panel: four fixed domain-general personas plus
//! two topical personas selected against detected sub-topics, followed by a
//! synthesizer that emits a unified "Master Class" reading guide.

use serde::{Deserialize, Serialize};

use crate::backend::{parallel_map, AgentRequest, Client};
use crate::error::{Error, Result};
use crate::parse;

/// Seed persona library shipped with the engine; user-extensible data.
pub const DEFAULT_LIBRARY_JSON: &str = include_str!("../data/personas.json");

pub const MAX_TOPIC_TAGS: usize = 5;

const TOPIC_SYSTEM: &str = "\
You classify computer-architecture papers into sub-topics.\n\
Reply with:\nTOPICS: <comma-separated list of 1-5 lowercase topic tags>";

const REVIEW_SYSTEM_TEMPLATE: &str = "\
You are {display_name}, one reviewer on an adversarial panel analyzing a \
research paper.\n\
Your driving question: {charter}\n\
Work independently; you see only the paper.\n\
Produce a structured critique with exactly these markdown sections:\n\
## Mechanism\n## Methodology\n## Feasibility\n## Verdict\n\
Finish with one line:\nSTANCE: <one-sentence summary of your stance>";

const SYNTH_SYSTEM: &str = "\
You are the synthesizer for a six-reviewer panel. You receive all six \
critiques alongside the original paper and produce a unified reading guide.\n\
Identify points of agreement and tension across reviewers, distill the core \
technical insight, and give a frank assessment of limitations the authors \
downplayed.\n\
Reply with exactly these markdown sections:\n\
## Agreements\n(one bullet per point)\n\
## Tensions\n(one bullet per point)\n\
## Core Insight\n\
## Frank Limitations";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PersonaKind {
    Fixed,
    Topical,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Persona {
    pub id: String,
    pub display_name: String,
    pub kind: PersonaKind,
    pub charter: String,
    #[serde(default)]
    pub topic_tags: Vec<String>,
}

impl Persona {
    pub fn validate(&self) -> Result<()> {
        if self.charter.trim().is_empty() {
            return Err(Error::Invalid {
                what: "Persona",
                reason: format!("{}: empty charter", self.id),
            });
        }
        if self.kind == PersonaKind::Fixed && !self.topic_tags.is_empty() {
            return Err(Error::Invalid {
                what: "Persona",
                reason: format!("{}: fixed personas carry no topic tags", self.id),
            });
        }
        Ok(())
    }
}

pub fn load_library(json: &str) -> Result<Vec<Persona>> {
    let personas: Vec<Persona> = serde_json::from_str(json)?;
    for p in &personas {
        p.validate()?;
    }
    Ok(personas)
}

pub fn default_library() -> Vec<Persona> {
    load_library(DEFAULT_LIBRARY_JSON).expect("embedded persona library is valid")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Critique {
    pub persona_id: String,
    pub paper_id: String,
    pub sections: Vec<(String, String)>,
    pub stance_summary: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MasterClass {
    pub paper_id: String,
    pub agreements: Vec<String>,
    pub tensions: Vec<String>,
    pub core_insight: String,
    pub frank_limitations: String,
    pub full_text: String,
}

/// Detects 1-5 normalized lowercase topic tags for a paper.
pub fn detect_topics(paper_text: &str, client: &Client) -> Result<Vec<String>> {
    if paper_text.trim().is_empty() {
        return Err(Error::TopicDetectionFailed("empty paper text".into()));
    }
    let request = AgentRequest::new("topic-detector", TOPIC_SYSTEM, paper_text).with_tag("topics");
    let response = client.complete(&request)?;
    let line = parse::keyed_value(&response.text, "TOPICS")
        .ok_or_else(|| Error::TopicDetectionFailed("missing TOPICS line".into()))?;
    let mut tags: Vec<String> = line
        .split(',')
        .map(|t| t.trim().to_lowercase())
        .filter(|t| !t.is_empty())
        .collect();
    if tags.is_empty() {
        return Err(Error::TopicDetectionFailed("no tags parsed".into()));
    }
    tags.truncate(MAX_TOPIC_TAGS);
    Ok(tags)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PersonaSelection {
    pub personas: Vec<Persona>,
    /// True when no persona overlapped any tag and the lexicographic
    /// fallback was used.
    pub fallback: bool,
}

/// Picks the two topical personas maximizing tag overlap; ties broken by
/// lexicographic persona id. Pure function of (tags, library).
pub fn select_personas(tags: &[String], library: &[Persona]) -> Result<PersonaSelection> {
    let mut topical: Vec<&Persona> = library
        .iter()
        .filter(|p| p.kind == PersonaKind::Topical)
        .collect();
    if topical.len() < 2 {
        return Err(Error::Config(format!(
            "persona library needs >= 2 topical personas, found {}",
            topical.len()
        )));
    }
    let overlap = |p: &Persona| -> usize {
        p.topic_tags
            .iter()
            .filter(|t| tags.contains(&t.to_lowercase()))
            .count()
    };
    topical.sort_by(|a, b| overlap(b).cmp(&overlap(a)).then(a.id.cmp(&b.id)));
    let chosen: Vec<Persona> = topical[..2].iter().map(|p| (*p).clone()).collect();
    let fallback = chosen.iter().all(|p| overlap(p) == 0);
    Ok(PersonaSelection {
        personas: chosen,
        fallback,
    })
}

/// One independent persona review; the prompt carries only the paper and the
/// persona charter.
pub fn review(paper_id: &str, paper_text: &str, persona: &Persona, client: &Client) -> Result<Critique> {
    let system = REVIEW_SYSTEM_TEMPLATE
        .replace("{display_name}", &persona.display_name)
        .replace("{charter}", &persona.charter);
    let request = AgentRequest::new(&format!("reviewer:{}", persona.id), &system, paper_text)
        .with_tag(&format!("review:{}:{}", paper_id, persona.id));
    let parse_critique = |text: &str| -> std::result::Result<Critique, String> {
        let sections: Vec<(String, String)> = parse::markdown_sections(text)
            .into_iter()
            .filter(|(_, body)| !body.trim().is_empty())
            .map(|(heading, body)| {
                // drop a trailing STANCE line from the last section body
                let body = body
                    .lines()
                    .filter(|l| !l.trim().to_ascii_uppercase().starts_with("STANCE:"))
                    .collect::<Vec<_>>()
                    .join("\n")
                    .trim()
                    .to_string();
                (heading, body)
            })
            .filter(|(_, body)| !body.is_empty())
            .collect();
        if sections.is_empty() {
            return Err("no non-empty critique sections".into());
        }
        Ok(Critique {
            persona_id: persona.id.clone(),
            paper_id: paper_id.to_string(),
            sections,
            stance_summary: parse::keyed_value(text, "STANCE").unwrap_or_default(),
        })
    };
    let response = client.complete(&request)?;
    match parse_critique(&response.text) {
        Ok(c) => Ok(c),
        Err(first) => {
            let mut retry = request.clone();
            retry.user_prompt = format!(
                "{}\n\n[FORMAT REMINDER]\nUse the markdown sections ## Mechanism, \
                 ## Methodology, ## Feasibility, ## Verdict with non-empty bodies.",
                request.user_prompt
            );
            let response = client.complete(&retry)?;
            parse_critique(&response.text).map_err(|second| Error::ReviewFailed {
                persona_id: persona.id.clone(),
                reason: format!("{first}; after re-prompt: {second}"),
            })
        }
    }
}

fn bullets(body: &str) -> Vec<String> {
    let items: Vec<String> = body
        .lines()
        .filter_map(|l| l.trim().strip_prefix("- ").map(|s| s.trim().to_string()))
        .filter(|s| !s.is_empty())
        .collect();
    if items.is_empty() && !body.trim().is_empty() {
        vec![body.trim().to_string()]
    } else {
        items
    }
}

/// Builds the Master Class guide; requires exactly six critiques for the
/// same paper, checked before any model call.
pub fn synthesize(critiques: &[Critique], paper_text: &str, client: &Client) -> Result<MasterClass> {
    if critiques.len() != 6 {
        return Err(Error::Invalid {
            what: "synthesize",
            reason: format!("expected exactly 6 critiques, got {}", critiques.len()),
        });
    }
    let paper_id = critiques[0].paper_id.clone();
    if critiques.iter().any(|c| c.paper_id != paper_id) {
        return Err(Error::Invalid {
            what: "synthesize",
            reason: "critiques span multiple papers".into(),
        });
    }
    let mut user_prompt = String::new();
    for critique in critiques {
        user_prompt.push_str(&format!("[REVIEW: {}]\n", critique.persona_id));
        for (heading, body) in &critique.sections {
            user_prompt.push_str(&format!("## {heading}\n{body}\n"));
        }
        if !critique.stance_summary.is_empty() {
            user_prompt.push_str(&format!("STANCE: {}\n", critique.stance_summary));
        }
        user_prompt.push('\n');
    }
    user_prompt.push_str(&format!("[ORIGINAL PAPER]\n{paper_text}"));
    let request = AgentRequest::new("synthesizer", SYNTH_SYSTEM, &user_prompt)
        .with_tag(&format!("synthesize:{paper_id}"));
    let response = client.complete(&request)?;
    let sections = parse::markdown_sections(&response.text);
    let find = |name: &str| {
        sections
            .iter()
            .find(|(h, _)| h.eq_ignore_ascii_case(name))
            .map(|(_, b)| b.clone())
    };
    let core_insight = find("Core Insight")
        .filter(|s| !s.trim().is_empty())
        .ok_or_else(|| Error::SynthesisFailed("missing or empty Core Insight section".into()))?;
    Ok(MasterClass {
        paper_id,
        agreements: bullets(&find("Agreements").unwrap_or_default()),
        tensions: bullets(&find("Tensions").unwrap_or_default()),
        core_insight,
        frank_limitations: find("Frank Limitations").unwrap_or_default(),
        full_text: response.text,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PanelReport {
    pub paper_id: String,
    pub topics: Vec<String>,
    pub selection_fallback: bool,
    pub critiques: Vec<Critique>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub masterclass: Option<MasterClass>,
    pub failures: Vec<String>,
    pub partial: bool,
}

/// Runs the full panel: 4 fixed + 2 selected topical reviews fan out
/// concurrently; synthesis runs strictly after all six complete. A failed
/// review yields a partial-panel report with no Master Class.
pub fn run_panel(
    paper_id: &str,
    paper_text: &str,
    library: &[Persona],
    client: &Client,
) -> Result<PanelReport> {
    let fixed: Vec<&Persona> = library.iter().filter(|p| p.kind == PersonaKind::Fixed).collect();
    if fixed.len() != 4 {
        return Err(Error::Config(format!(
            "persona library must contain exactly 4 fixed personas, found {}",
            fixed.len()
        )));
    }
    let topics = detect_topics(paper_text, client)?;
    let selection = select_personas(&topics, library)?;

    let mut panel: Vec<Persona> = fixed.into_iter().cloned().collect();
    panel.extend(selection.personas.iter().cloned());
    debug_assert_eq!(panel.len(), 6);

    let outcomes = parallel_map(6, panel, |_, persona| {
        review(paper_id, paper_text, &persona, client)
    });
    let mut critiques = Vec::new();
    let mut failures = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok(c) => critiques.push(c),
            Err(e) => failures.push(e.to_string()),
        }
    }
    // synthesis barrier: all six reviews must exist
    let masterclass = if failures.is_empty() {
        Some(synthesize(&critiques, paper_text, client)?)
    } else {
        None
    };
    let partial = masterclass.is_none();
    Ok(PanelReport {
        paper_id: paper_id.to_string(),
        topics,
        selection_fallback: selection.fallback,
        critiques,
        masterclass,
        failures,
        partial,
    })
}

/// Renders masterclass.md from a panel report.
pub fn render_markdown(report: &PanelReport) -> String {
    let mut out = String::new();
    if report.partial {
        out.push_str("# PARTIAL PANEL\n\n");
        out.push_str("Synthesis was skipped because one or more reviews failed.\n\n");
        for failure in &report.failures {
            out.push_str(&format!("- {failure}\n"));
        }
        out.push('\n');
    }
    out.push_str(&format!("# Master Class: {}\n\n", report.paper_id));
    out.push_str(&format!("Detected topics: {}\n\n", report.topics.join(", ")));
    if let Some(mc) = &report.masterclass {
        out.push_str(&mc.full_text);
        out.push('\n');
    }
    out.push_str("\n---\n\n# Panel Critiques\n\n");
    for critique in &report.critiques {
        out.push_str(&format!("## Reviewer: {}\n\n", critique.persona_id));
        for (heading, body) in &critique.sections {
            out.push_str(&format!("### {heading}\n{body}\n\n"));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{BackendConfig, MockProvider, MockRule};
    use std::sync::Arc;

    fn mock_client(rules: Vec<MockRule>) -> Client {
        let mock = MockProvider::new(0, "m");
        mock.install_script(rules);
        Client::new(Arc::new(mock), 6)
    }

    fn canned_client(seed: u64) -> Client {
        Client::from_config(&BackendConfig::mock(seed)).unwrap()
    }

    fn topical(id: &str, tags: &[&str]) -> Persona {
        Persona {
            id: id.into(),
            display_name: id.into(),
            kind: PersonaKind::Topical,
            charter: "driving question".into(),
            topic_tags: tags.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn library_shape() {
        let library = default_library();
        let fixed = library.iter().filter(|p| p.kind == PersonaKind::Fixed).count();
        let topical = library.iter().filter(|p| p.kind == PersonaKind::Topical).count();
        assert_eq!(fixed, 4);
        assert!(topical >= 20, "seed library has {topical} topical personas");
    }

    #[test]
    fn topics_normalized_and_capped() {
        let client = mock_client(vec![MockRule::new(
            "topic-detector",
            "",
            "TOPICS: A, B, C, D, E, F, G",
        )]);
        let tags = detect_topics("paper", &client).unwrap();
        assert_eq!(tags, vec!["a", "b", "c", "d", "e"]);

        let single = mock_client(vec![MockRule::new("topic-detector", "", "TOPICS: prefetching")]);
        assert_eq!(detect_topics("paper", &single).unwrap(), vec!["prefetching"]);

        let bad = mock_client(vec![MockRule::new("topic-detector", "", "nothing here")]);
        assert!(detect_topics("paper", &bad).is_err());
    }

    #[test]
    fn selection_exact_overlap() {
        let library = vec![
            topical("z-match", &["caches", "prefetching"]),
            topical("a-other", &["networks"]),
            topical("m-match", &["caches"]),
        ];
        let tags = vec!["caches".to_string(), "prefetching".to_string()];
        let selection = select_personas(&tags, &library).unwrap();
        assert_eq!(selection.personas[0].id, "z-match"); // overlap 2
        assert_eq!(selection.personas[1].id, "m-match"); // overlap 1
        assert!(!selection.fallback);
    }

    #[test]
    fn selection_fallback_is_lexicographic() {
        let library = vec![
            topical("charlie", &["x"]),
            topical("alpha", &["y"]),
            topical("bravo", &["z"]),
        ];
        let selection = select_personas(&["unrelated".to_string()], &library).unwrap();
        let ids: Vec<&str> = selection.personas.iter().map(|p| p.id.as_str()).collect();
        assert_eq!(ids, vec!["alpha", "bravo"]);
        assert!(selection.fallback);
    }

    #[test]
    fn selection_tie_break_hand_enumerated() {
        // overlap scores: alpha 1, beta 1, gamma 1 -> two smallest ids win
        let library = vec![
            topical("gamma", &["caches"]),
            topical("beta", &["caches"]),
            topical("alpha", &["caches"]),
        ];
        let selection = select_personas(&["caches".to_string()], &library).unwrap();
        let ids: Vec<&str> = selection.personas.iter().map(|p| p.id.as_str()).collect();
        assert_eq!(ids, vec!["alpha", "beta"]);
    }

    #[test]
    fn selection_requires_two_topical() {
        let library = vec![topical("only", &["x"])];
        assert!(select_personas(&[], &library).is_err());
    }

    #[test]
    fn review_preserves_sections_and_rejects_empty() {
        let persona = topical("t1", &["x"]);
        let client = mock_client(vec![MockRule::new(
            "reviewer",
            "",
            "## Mechanism\nbody one\n## Methodology\nbody two\nSTANCE: skeptical",
        )]);
        let critique = review("paper-1", "text", &persona, &client).unwrap();
        assert_eq!(critique.sections.len(), 2);
        assert_eq!(critique.sections[0].0, "Mechanism");
        assert_eq!(critique.sections[1].1, "body two");
        assert_eq!(critique.stance_summary, "skeptical");

        let empty = mock_client(vec![MockRule::new("reviewer", "", "## Mechanism\n\n## Verdict\n")]);
        let err = review("paper-1", "text", &persona, &empty).unwrap_err();
        assert!(matches!(err, Error::ReviewFailed { .. }));
    }

    #[test]
    fn synthesis_cardinality_gate_before_model_call() {
        let client = mock_client(vec![]);
        let critique = Critique {
            persona_id: "p".into(),
            paper_id: "x".into(),
            sections: vec![("Mechanism".into(), "b".into())],
            stance_summary: String::new(),
        };
        let five = vec![critique; 5];
        assert!(synthesize(&five, "paper", &client).is_err());
        assert_eq!(client.transcript().len(), 0);
    }

    #[test]
    fn synthesis_surfaces_conflicts_and_agreements() {
        let critique = |id: &str, body: &str| Critique {
            persona_id: id.into(),
            paper_id: "x".into(),
            sections: vec![("Methodology".into(), body.into())],
            stance_summary: String::new(),
        };
        let critiques = vec![
            critique("a", "evaluation is fair"),
            critique("b", "evaluation is rigged"),
            critique("c", "mechanism is elegant"),
            critique("d", "mechanism is elegant"),
            critique("e", "fine"),
            critique("f", "fine"),
        ];
        let client = mock_client(vec![MockRule::new(
            "synthesizer",
            "",
            "## Agreements\n- the mechanism is elegant\n## Tensions\n- reviewers disagree on \
             evaluation fairness\n## Core Insight\nthe table is the contribution\n\
             ## Frank Limitations\npower model optimistic",
        )]);
        let mc = synthesize(&critiques, "paper", &client).unwrap();
        assert!(mc.tensions.iter().any(|t| t.contains("evaluation fairness")));
        assert!(mc.agreements.iter().any(|a| a.contains("elegant")));
        assert_eq!(mc.core_insight, "the table is the contribution");
    }

    #[test]
    fn panel_composition_and_ordering() {
        let library = default_library();
        let client = canned_client(17);
        let report = run_panel("paper-1", "a cache paper about prefetching", &library, &client).unwrap();
        assert_eq!(report.critiques.len(), 6);
        let fixed_ids: Vec<&str> = library
            .iter()
            .filter(|p| p.kind == PersonaKind::Fixed)
            .map(|p| p.id.as_str())
            .collect();
        let n_fixed = report
            .critiques
            .iter()
            .filter(|c| fixed_ids.contains(&c.persona_id.as_str()))
            .count();
        assert_eq!(n_fixed, 4);
        assert!(report.masterclass.is_some());

        // synthesis strictly after all reviews in the transcript
        let entries = client.transcript().entries();
        let synth_seq = entries
            .iter()
            .find(|e| e.role_name == "synthesizer")
            .unwrap()
            .seq;
        for entry in entries.iter().filter(|e| e.role_name.starts_with("reviewer")) {
            assert!(entry.seq < synth_seq);
        }
    }

    #[test]
    fn failed_review_yields_partial_report() {
        let library = default_library();
        // break exactly one fixed reviewer
        let client = mock_client(vec![
            MockRule::new("topic-detector", "", "TOPICS: caches"),
            MockRule::new("reviewer:microarchitecture-specialist", "", "garbage no sections"),
            MockRule::new("reviewer", "", "## Mechanism\nfine\nSTANCE: ok"),
        ]);
        let report = run_panel("paper-1", "text", &library, &client).unwrap();
        assert!(report.partial);
        assert!(report.masterclass.is_none());
        assert_eq!(report.critiques.len(), 5);
        assert_eq!(report.failures.len(), 1);
        // no synthesis request was issued
        assert!(client.transcript().entries().iter().all(|e| e.role_name != "synthesizer"));
    }

    #[test]
    fn review_independence_no_cross_contamination() {
        let library = default_library();
        let client = canned_client(23);
        let report = run_panel("paper-1", "an interconnect paper", &library, &client).unwrap();
        let entries = client.transcript().entries();
        let review_prompts: Vec<&str> = entries
            .iter()
            .filter(|e| e.role_name.starts_with("reviewer"))
            .map(|e| e.request.user_prompt.as_str())
            .collect();
        for critique in &report.critiques {
            for (_, body) in &critique.sections {
                // a long unique chunk from one critique must not appear in
                // another reviewer's outgoing prompt
                let probe: String = body.chars().take(40).collect();
                if probe.len() < 20 {
                    continue;
                }
                for prompt in &review_prompts {
                    assert!(!prompt.contains(&probe));
                }
            }
        }
    }
}

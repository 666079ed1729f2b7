//! Single command-line entry point: one subcommand per pipeline, a shared
//! TOML configuration file, and flag overrides (flags win).
//!
//! Exit-code contract: 0 complete, 1 error, 2 partial. No command touches
//! the backend before configuration and corpus validation pass.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::backend::{BackendConfig, BackendKind, Client};
use crate::error::{Error, Result};
use crate::funnel::{export_ledger, run_funnel, FunnelConfig, FunnelDeps};
use crate::ideation::{run_ideation, CellStatus, IdeationConfig};
use crate::kernel::MechanismProposal;
use crate::modelforge::{run_forge, ForgeConfig};
use crate::panel::{default_library, load_library, run_panel, Persona};
use crate::sandbox::{ProcessSandbox, Sandbox, SandboxConfig};
use crate::store::{
    emit_report, ingest_corpus, new_run_id, persist_run, stats_line, CorpusEntry, Pipeline,
    ReportFormat, ReportPayload, RunRecord, RunStatus,
};

pub const EXIT_COMPLETE: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_PARTIAL: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "gauntlet", version, about = "Multi-agent pipelines for architecture research")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Backend override; flags win over the config file.
    #[arg(long, global = true, value_enum)]
    pub backend: Option<BackendFlag>,
    /// Mock-backend seed override.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output root override.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendFlag {
    Http,
    Mock,
    Replay,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Clean-room problem extraction, mechanism generation, and validation.
    Ideate {
        /// Restrict the run to one paper id.
        #[arg(long)]
        paper: Option<String>,
    },
    /// Six-reviewer comprehension panel with a synthesized Master Class.
    Review {
        #[arg(long)]
        paper: String,
    },
    /// Three-phase executable performance-model construction.
    Forge {
        #[arg(long)]
        paper: String,
    },
    /// Tiered candidate evaluation over a JSONL candidates file.
    Funnel {
        #[arg(long)]
        candidates: PathBuf,
    },
    /// Corpus inspection.
    Corpus {
        #[command(subcommand)]
        action: CorpusAction,
    },
}

#[derive(Debug, Subcommand)]
pub enum CorpusAction {
    /// Print the paper ids in the corpus.
    List,
    /// Check every corpus entry; diagnostics are failures here.
    Validate,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct PanelSection {
    /// Persona library JSON; the built-in library is used when unset.
    pub persona_library: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ForgeSection {
    pub proceed_unapproved: bool,
    pub sandbox: SandboxConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CliConfig {
    pub corpus: PathBuf,
    pub output: PathBuf,
    pub backend: BackendConfig,
    pub ideation: IdeationConfig,
    pub panel: PanelSection,
    pub forge: ForgeSection,
    pub funnel: FunnelConfig,
}

impl Default for CliConfig {
    fn default() -> Self {
        CliConfig {
            corpus: PathBuf::from("corpus"),
            output: PathBuf::from("out"),
            backend: BackendConfig::mock(0),
            ideation: IdeationConfig::default(),
            panel: PanelSection::default(),
            forge: ForgeSection::default(),
            funnel: FunnelConfig::default(),
        }
    }
}

impl CliConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let config: CliConfig =
            toml::from_str(&raw).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Ok(config)
    }

    /// Applies flag overrides; flags win over the file.
    pub fn apply_overrides(&mut self, cli: &Cli) {
        if let Some(backend) = cli.backend {
            self.backend.kind = match backend {
                BackendFlag::Http => BackendKind::HttpOpenaiCompatible,
                BackendFlag::Mock => BackendKind::Mock,
                BackendFlag::Replay => BackendKind::Replay,
            };
            if self.backend.kind != BackendKind::HttpOpenaiCompatible {
                self.backend.base_url = None;
            }
            if self.backend.kind != BackendKind::Mock {
                self.backend.seed = None;
            } else if self.backend.seed.is_none() {
                self.backend.seed = Some(0);
            }
        }
        if let Some(seed) = cli.seed {
            self.backend.seed = Some(seed);
        }
        if let Some(out) = &cli.out {
            self.output = out.clone();
        }
    }

    /// Pre-flight validation, run before any backend is constructed.
    pub fn validate(&self, needs_corpus: bool) -> Result<()> {
        self.backend.validate()?;
        self.funnel.validate()?;
        if needs_corpus && !self.corpus.is_dir() {
            return Err(Error::Config(format!(
                "corpus path does not exist: {}",
                self.corpus.display()
            )));
        }
        if let Some(library) = &self.panel.persona_library {
            if !library.is_file() {
                return Err(Error::Config(format!(
                    "persona library does not exist: {}",
                    library.display()
                )));
            }
        }
        Ok(())
    }
}

fn load_config(cli: &Cli) -> Result<CliConfig> {
    let mut config = match &cli.config {
        Some(path) => CliConfig::load(path)?,
        None => CliConfig::default(),
    };
    config.apply_overrides(cli);
    Ok(config)
}

fn transcript_jsonl(client: &Client) -> Result<String> {
    let mut out = String::new();
    for entry in client.transcript().entries() {
        out.push_str(&serde_json::to_string(&entry)?);
        out.push('\n');
    }
    Ok(out)
}

fn status_code(status: RunStatus) -> i32 {
    match status {
        RunStatus::Complete => EXIT_COMPLETE,
        RunStatus::Partial => EXIT_PARTIAL,
        RunStatus::Failed => EXIT_ERROR,
    }
}

fn find_paper<'a>(entries: &'a [CorpusEntry], paper_id: &str) -> Result<&'a CorpusEntry> {
    entries
        .iter()
        .find(|e| e.paper_id == paper_id)
        .ok_or_else(|| Error::Corpus(format!("paper '{paper_id}' not in corpus")))
}

fn load_personas(config: &CliConfig) -> Result<Vec<Persona>> {
    match &config.panel.persona_library {
        Some(path) => load_library(&std::fs::read_to_string(path)?),
        None => Ok(default_library()),
    }
}

struct RunOutcome {
    status: RunStatus,
    payload: ReportPayload,
    extra_artifacts: Vec<(String, String)>,
    summary: String,
}

/// Persists the run (report.json, report.md, transcript, extras, marker) and
/// prints the standard run summary.
fn finish_run(
    config: &CliConfig,
    pipeline: Pipeline,
    client: &Client,
    outcome: RunOutcome,
) -> Result<i32> {
    let run_id = new_run_id();
    let report_json = emit_report(&outcome.payload, outcome.status, ReportFormat::Json)?;
    let report_md = emit_report(&outcome.payload, outcome.status, ReportFormat::Markdown)?;
    let mut artifacts: Vec<(String, String)> = vec![
        ("report.json".into(), report_json),
        ("report.md".into(), report_md),
        ("transcript.jsonl".into(), transcript_jsonl(client)?),
    ];
    artifacts.extend(outcome.extra_artifacts);
    let record = RunRecord {
        run_id: run_id.clone(),
        pipeline,
        config: serde_json::to_value(config)?,
        transcript: "transcript.jsonl".into(),
        manifest: artifacts.iter().map(|(p, _)| p.clone()).collect(),
        status: outcome.status,
    };
    let run_dir = persist_run(&config.output, &record, &artifacts)?;
    println!("run {run_id}");
    println!("{}", outcome.summary);
    println!("run directory: {}", run_dir.display());
    Ok(status_code(outcome.status))
}

pub fn cmd_ideate(config: &CliConfig, paper: Option<&str>) -> Result<i32> {
    config.validate(true)?;
    let (entries, diagnostics) = ingest_corpus(&config.corpus)?;
    for diagnostic in &diagnostics {
        eprintln!("corpus: {diagnostic}");
    }
    let selected: Vec<&CorpusEntry> = match paper {
        Some(id) => vec![find_paper(&entries, id)?],
        None => entries.iter().collect(),
    };
    if selected.is_empty() {
        return Err(Error::Corpus("no papers to process".into()));
    }
    let inputs = selected
        .iter()
        .map(|e| e.to_extraction_input())
        .collect::<Result<Vec<_>>>()?;

    let client = Client::from_config(&config.backend)?;
    let report = run_ideation(&inputs, &client, &config.ideation)?;
    let status = if report.cells.iter().all(|c| c.status == CellStatus::Complete) {
        RunStatus::Complete
    } else {
        RunStatus::Partial
    };
    let summary = format!("stats: {}", stats_line(&report.stats));
    finish_run(
        config,
        Pipeline::Ideation,
        &client,
        RunOutcome {
            status,
            payload: ReportPayload::Ideation(report),
            extra_artifacts: Vec::new(),
            summary,
        },
    )
}

pub fn cmd_review(config: &CliConfig, paper: &str) -> Result<i32> {
    config.validate(true)?;
    let (entries, _) = ingest_corpus(&config.corpus)?;
    let entry = find_paper(&entries, paper)?;
    let text = entry.load_text()?;
    let library = load_personas(config)?;

    let client = Client::from_config(&config.backend)?;
    let report = run_panel(paper, &text, &library, &client)?;
    let status = if report.partial {
        RunStatus::Partial
    } else {
        RunStatus::Complete
    };
    let summary = format!(
        "panel: {} critiques, masterclass {}",
        report.critiques.len(),
        if report.masterclass.is_some() { "synthesized" } else { "absent" }
    );
    let masterclass_md = crate::panel::render_markdown(&report);
    finish_run(
        config,
        Pipeline::Panel,
        &client,
        RunOutcome {
            status,
            payload: ReportPayload::Panel(report),
            extra_artifacts: vec![("masterclass.md".into(), masterclass_md)],
            summary,
        },
    )
}

pub fn cmd_forge(config: &CliConfig, paper: &str) -> Result<i32> {
    config.validate(true)?;
    let sandbox = ProcessSandbox::new(config.forge.sandbox.clone());
    sandbox.preflight()?;
    let (entries, _) = ingest_corpus(&config.corpus)?;
    let entry = find_paper(&entries, paper)?;
    let text = entry.load_text()?;

    let client = Client::from_config(&config.backend)?;
    let run_id = new_run_id();
    let forge_dir = config.output.join("runs").join(&run_id).join("forge");
    let forge_config = ForgeConfig {
        proceed_unapproved: config.forge.proceed_unapproved,
    };
    let report = run_forge(paper, &text, &client, &sandbox, &forge_config, &forge_dir)?;
    let status = if report.runs.iter().all(|r| r.succeeded()) {
        RunStatus::Complete
    } else {
        RunStatus::Partial
    };
    let summary = format!(
        "forge: picked run {:?} of {} runs",
        report.pick.chosen_run_index,
        report.runs.len()
    );
    // the forge already wrote its artifacts under the run directory; persist
    // the record alongside them under the same id
    let report_json = emit_report(&ReportPayload::Forge(report.clone()), status, ReportFormat::Json)?;
    let report_md =
        emit_report(&ReportPayload::Forge(report.clone()), status, ReportFormat::Markdown)?;
    let artifacts: Vec<(String, String)> = vec![
        ("report.json".into(), report_json),
        ("report.md".into(), report_md),
        ("transcript.jsonl".into(), transcript_jsonl(&client)?),
    ];
    let record = RunRecord {
        run_id: run_id.clone(),
        pipeline: Pipeline::Forge,
        config: serde_json::to_value(config)?,
        transcript: "transcript.jsonl".into(),
        manifest: artifacts.iter().map(|(p, _)| p.clone()).collect(),
        status,
    };
    let run_dir = persist_run(&config.output, &record, &artifacts)?;
    println!("run {run_id}");
    println!("{summary}");
    println!("run directory: {}", run_dir.display());
    Ok(status_code(status))
}

fn load_candidates(path: &Path) -> Result<Vec<MechanismProposal>> {
    let raw = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut candidates = Vec::new();
    for (index, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let candidate: MechanismProposal = serde_json::from_str(line).map_err(|e| {
            Error::Corpus(format!("{} line {}: {e}", path.display(), index + 1))
        })?;
        candidates.push(candidate);
    }
    Ok(candidates)
}

pub fn cmd_funnel(config: &CliConfig, candidates_path: &Path) -> Result<i32> {
    config.validate(false)?;
    let candidates = load_candidates(candidates_path)?;
    let sandbox = ProcessSandbox::new(config.forge.sandbox.clone());
    let tier3_live = config.funnel.tier_enabled.get(3).copied().unwrap_or(false)
        && config.funnel.quotas.get(3).map(|q| q.is_none()).unwrap_or(false)
        && !candidates.is_empty();
    if tier3_live {
        sandbox.preflight()?;
    }

    let client = Client::from_config(&config.backend)?;
    let run_id = new_run_id();
    let run_dir = config.output.join("runs").join(&run_id);
    let deps = FunnelDeps {
        hook: None,
        sandbox: if tier3_live {
            Some(&sandbox as &dyn Sandbox)
        } else {
            None
        },
        forge_config: ForgeConfig {
            proceed_unapproved: config.forge.proceed_unapproved,
        },
        forge_dir: run_dir.join("forge"),
    };
    let ledger = run_funnel(&candidates, &config.funnel, &client, &deps)?;
    export_ledger(&ledger, &run_dir)?;
    let summary = format!(
        "funnel: {}",
        ledger
            .tiers
            .iter()
            .enumerate()
            .map(|(k, t)| format!("t{k} {}→{}", t.entered, t.passed))
            .collect::<Vec<_>>()
            .join(", ")
    );
    let status = RunStatus::Complete;
    let payload = ReportPayload::Funnel(ledger);
    let artifacts: Vec<(String, String)> = vec![
        (
            "report.json".into(),
            emit_report(&payload, status, ReportFormat::Json)?,
        ),
        (
            "report.md".into(),
            emit_report(&payload, status, ReportFormat::Markdown)?,
        ),
        ("transcript.jsonl".into(), transcript_jsonl(&client)?),
    ];
    let record = RunRecord {
        run_id: run_id.clone(),
        pipeline: Pipeline::Funnel,
        config: serde_json::to_value(config)?,
        transcript: "transcript.jsonl".into(),
        manifest: artifacts.iter().map(|(p, _)| p.clone()).collect(),
        status,
    };
    let run_dir = persist_run(&config.output, &record, &artifacts)?;
    println!("run {run_id}");
    println!("{summary}");
    println!("run directory: {}", run_dir.display());
    Ok(status_code(status))
}

pub fn cmd_corpus(config: &CliConfig, action: &CorpusAction) -> Result<i32> {
    config.validate(true)?;
    let (entries, diagnostics) = ingest_corpus(&config.corpus)?;
    match action {
        CorpusAction::List => {
            for entry in &entries {
                println!(
                    "{}\twindow={}\tground_truth={}",
                    entry.paper_id, entry.meta.problem_window, entry.meta.ground_truth_available
                );
            }
            Ok(EXIT_COMPLETE)
        }
        CorpusAction::Validate => {
            for diagnostic in &diagnostics {
                eprintln!("corpus: {diagnostic}");
            }
            println!("{} valid entries", entries.len());
            if diagnostics.is_empty() {
                Ok(EXIT_COMPLETE)
            } else {
                Ok(EXIT_ERROR)
            }
        }
    }
}

/// Runs the parsed command and maps every error to the exit contract.
pub fn run(cli: &Cli) -> i32 {
    let config = match load_config(cli) {
        Ok(config) => config,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_ERROR;
        }
    };
    let result = match &cli.command {
        Command::Ideate { paper } => cmd_ideate(&config, paper.as_deref()),
        Command::Review { paper } => cmd_review(&config, paper),
        Command::Forge { paper } => cmd_forge(&config, paper),
        Command::Funnel { candidates } => cmd_funnel(&config, candidates),
        Command::Corpus { action } => cmd_corpus(&config, action),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}

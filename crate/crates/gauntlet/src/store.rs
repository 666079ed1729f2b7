//! Corpus ingestion, run persistence, and report emission shared by all
//! pipelines.
//!
//! Layout: `runs/{run_id}/...` with an atomic completion marker written
//! last, and `corpus/{paper_id}/{paper.txt, meta.json}`. Everything persisted
//! is plain JSON/Markdown/UTF-8 text.

use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::funnel::FunnelLedger;
use crate::ideation::{self, IdeationReport};
use crate::kernel::RunStats;
use crate::modelforge::ForgeReport;
use crate::panel::{self, PanelReport};

pub const COMPLETION_MARKER: &str = "complete.marker";
pub const DEFAULT_PROBLEM_WINDOW: usize = 12_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pipeline {
    Ideation,
    Panel,
    Forge,
    Funnel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Complete,
    Partial,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    /// Monotonic, lexicographically sortable: zero-padded unix seconds plus a
    /// 4-character random suffix.
    pub run_id: String,
    pub pipeline: Pipeline,
    /// Snapshot of the effective configuration, for audit.
    pub config: serde_json::Value,
    /// Path of the call transcript, relative to the run directory.
    pub transcript: String,
    /// Artifact paths relative to the run directory; all must exist when the
    /// run is complete.
    pub manifest: Vec<String>,
    pub status: RunStatus,
}

pub fn new_run_id() -> String {
    let secs = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let mut rng = rand::thread_rng();
    let suffix: String = (0..4)
        .map(|_| {
            let chars = b"abcdefghijklmnopqrstuvwxyz0123456789";
            chars[rng.gen_range(0..chars.len())] as char
        })
        .collect();
    format!("{secs:012}-{suffix}")
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CorpusMeta {
    #[serde(default)]
    pub paper_id: Option<String>,
    #[serde(default = "default_problem_window")]
    pub problem_window: usize,
    #[serde(default)]
    pub ground_truth_available: bool,
    #[serde(default)]
    pub tags: Vec<String>,
}

fn default_problem_window() -> usize {
    DEFAULT_PROBLEM_WINDOW
}

impl Default for CorpusMeta {
    fn default() -> Self {
        CorpusMeta {
            paper_id: None,
            problem_window: DEFAULT_PROBLEM_WINDOW,
            ground_truth_available: false,
            tags: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CorpusEntry {
    pub paper_id: String,
    pub text_path: PathBuf,
    pub meta: CorpusMeta,
}

/// Scans `corpus_dir` for `{paper_id}/{paper.txt, meta.json}` entries.
/// Malformed entries become diagnostics rather than errors; a duplicate
/// paper_id (possible when meta.json overrides the directory name) is fatal
/// and names both paths.
pub fn ingest_corpus(corpus_dir: &Path) -> Result<(Vec<CorpusEntry>, Vec<String>)> {
    if !corpus_dir.is_dir() {
        return Err(Error::Corpus(format!(
            "corpus directory not found: {}",
            corpus_dir.display()
        )));
    }
    let mut entries: Vec<CorpusEntry> = Vec::new();
    let mut diagnostics: Vec<String> = Vec::new();
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(corpus_dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    for dir in dirs {
        let text_path = dir.join("paper.txt");
        let dir_name = dir
            .file_name()
            .map(|n| n.to_string_lossy().to_string())
            .unwrap_or_default();
        let text = match std::fs::read_to_string(&text_path) {
            Ok(text) => text,
            Err(_) => {
                diagnostics.push(format!("{dir_name}: missing or unreadable paper.txt"));
                continue;
            }
        };
        if text.trim().is_empty() {
            diagnostics.push(format!("{dir_name}: paper.txt is empty"));
            continue;
        }
        let meta: CorpusMeta = match std::fs::read_to_string(dir.join("meta.json")) {
            Ok(raw) => match serde_json::from_str(&raw) {
                Ok(meta) => meta,
                Err(e) => {
                    diagnostics.push(format!("{dir_name}: malformed meta.json: {e}"));
                    continue;
                }
            },
            Err(_) => CorpusMeta::default(),
        };
        let paper_id = meta.paper_id.clone().unwrap_or(dir_name);
        if let Some(existing) = entries.iter().find(|e| e.paper_id == paper_id) {
            return Err(Error::Corpus(format!(
                "duplicate paper_id '{paper_id}' in {} and {}",
                existing.text_path.display(),
                text_path.display()
            )));
        }
        entries.push(CorpusEntry {
            paper_id,
            text_path,
            meta,
        });
    }
    if entries.is_empty() {
        diagnostics.push(format!(
            "corpus at {} contains no valid entries",
            corpus_dir.display()
        ));
    }
    entries.sort_by(|a, b| a.paper_id.cmp(&b.paper_id));
    Ok((entries, diagnostics))
}

impl CorpusEntry {
    pub fn load_text(&self) -> Result<String> {
        Ok(std::fs::read_to_string(&self.text_path)?)
    }

    pub fn to_extraction_input(&self) -> Result<ideation::ExtractionInput> {
        let text = self.load_text()?;
        let window = self.meta.problem_window.min(text.len()).max(1);
        Ok(ideation::ExtractionInput {
            paper_id: self.paper_id.clone(),
            text,
            problem_window: window,
            ground_truth_available: self.meta.ground_truth_available,
        })
    }
}

/// Write target for run persistence. Injectable so tests can observe write
/// ordering (the completion marker must come last).
pub trait ArtifactSink {
    fn write(&mut self, relative_path: &str, content: &str) -> Result<()>;
}

pub struct FsSink {
    root: PathBuf,
}

impl FsSink {
    pub fn new(root: &Path) -> Self {
        FsSink {
            root: root.to_path_buf(),
        }
    }
}

impl ArtifactSink for FsSink {
    fn write(&mut self, relative_path: &str, content: &str) -> Result<()> {
        let path = self.root.join(relative_path);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, content).map_err(|e| Error::Persist(format!(
            "writing {}: {e}",
            path.display()
        )))?;
        Ok(())
    }
}

/// Persists a run: all artifacts and the record first, the completion marker
/// last. A crash or write failure before the marker leaves a detectable
/// partial run.
pub fn persist_run(
    root: &Path,
    record: &RunRecord,
    artifacts: &[(String, String)],
) -> Result<PathBuf> {
    let run_dir = root.join("runs").join(&record.run_id);
    // pipeline artifacts (e.g. forge run directories) may already live under
    // the run directory; a persisted record is what marks the id as taken
    if run_dir.join("record.json").exists() {
        return Err(Error::Persist(format!(
            "run_id {} already exists",
            record.run_id
        )));
    }
    std::fs::create_dir_all(&run_dir)?;
    let mut sink = FsSink::new(&run_dir);
    persist_run_with(&mut sink, record, artifacts)?;
    Ok(run_dir)
}

/// Sink-generic persistence core; the marker write is guaranteed to be the
/// final write.
pub fn persist_run_with(
    sink: &mut dyn ArtifactSink,
    record: &RunRecord,
    artifacts: &[(String, String)],
) -> Result<()> {
    for (path, content) in artifacts {
        sink.write(path, content)?;
    }
    sink.write("record.json", &serde_json::to_string_pretty(record)?)?;
    if record.status != RunStatus::Failed {
        sink.write(COMPLETION_MARKER, &format!("{:?}\n", record.status))?;
    }
    Ok(())
}

pub fn load_run(root: &Path, run_id: &str) -> Result<RunRecord> {
    let path = root.join("runs").join(run_id).join("record.json");
    let raw = std::fs::read_to_string(&path)
        .map_err(|e| Error::Persist(format!("reading {}: {e}", path.display())))?;
    let record: RunRecord = serde_json::from_str(&raw)?;
    Ok(record)
}

/// Lists stored runs as (run_id, complete) pairs; a run without its
/// completion marker is partial.
pub fn list_runs(root: &Path) -> Result<Vec<(String, bool)>> {
    let runs_dir = root.join("runs");
    if !runs_dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for entry in std::fs::read_dir(&runs_dir)? {
        let entry = entry?;
        if entry.path().is_dir() {
            let run_id = entry.file_name().to_string_lossy().to_string();
            let complete = entry.path().join(COMPLETION_MARKER).exists();
            out.push((run_id, complete));
        }
    }
    out.sort();
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Markdown,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(ReportFormat::Json),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            other => Err(Error::Invalid {
                what: "report format".into(),
                reason: format!("unknown format '{other}'"),
            }),
        }
    }
}

/// The pipeline-specific payload a report is rendered from. JSON is the
/// machine-readable source of truth; markdown embeds the same numbers.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "pipeline", rename_all = "lowercase")]
pub enum ReportPayload {
    Ideation(IdeationReport),
    Panel(PanelReport),
    Forge(ForgeReport),
    Funnel(FunnelLedger),
}

pub fn emit_report(
    payload: &ReportPayload,
    status: RunStatus,
    format: ReportFormat,
) -> Result<String> {
    if status == RunStatus::Failed {
        return Err(Error::Invalid {
            what: "report".into(),
            reason: "failed runs have no report".into(),
        });
    }
    match format {
        ReportFormat::Json => Ok(serde_json::to_string_pretty(payload)?),
        ReportFormat::Markdown => Ok(render_markdown(payload, status == RunStatus::Partial)),
    }
}

fn render_markdown(payload: &ReportPayload, partial: bool) -> String {
    match payload {
        ReportPayload::Ideation(report) => ideation::render_markdown(report, partial),
        ReportPayload::Panel(report) => panel::render_markdown(report),
        ReportPayload::Forge(report) => render_forge_markdown(report, partial),
        ReportPayload::Funnel(ledger) => render_funnel_markdown(ledger, partial),
    }
}

fn render_forge_markdown(report: &ForgeReport, partial: bool) -> String {
    let mut out = String::new();
    if partial {
        out.push_str("# PARTIAL RUN\n\n");
    }
    out.push_str(&format!("# Forge Report: {}\n\n", report.paper_id));
    out.push_str("| run | phase1 loops | phase2 loops | status |\n|---|---|---|---|\n");
    for run in &report.runs {
        out.push_str(&format!(
            "| {} | {} | {} | {} |\n",
            run.run_index,
            run.loop_counts.0,
            run.loop_counts.1,
            if run.succeeded() { "ok" } else { "failed" }
        ));
    }
    out.push_str("\n| run | correctness | insight |\n|---|---|---|\n");
    for score in &report.pick.rubric_scores {
        out.push_str(&format!(
            "| {} | {} | {} |\n",
            score.run_index, score.correctness, score.insight
        ));
    }
    match report.pick.chosen_run_index {
        Some(index) => out.push_str(&format!("\nPicked run {index}: {}\n", report.pick.justification)),
        None => out.push_str("\nNo run picked.\n"),
    }
    out
}

fn render_funnel_markdown(ledger: &FunnelLedger, partial: bool) -> String {
    let mut out = String::new();
    if partial {
        out.push_str("# PARTIAL RUN\n\n");
    }
    out.push_str("# Funnel Ledger\n\n| tier | entered | passed |\n|---|---|---|\n");
    for (tier, count) in ledger.tiers.iter().enumerate() {
        out.push_str(&format!("| {tier} | {} | {} |\n", count.entered, count.passed));
    }
    if !ledger.warnings.is_empty() {
        out.push_str("\n## Warnings\n");
        for warning in &ledger.warnings {
            out.push_str(&format!("- {warning}\n"));
        }
    }
    out
}

/// Markdown summary of ideation run stats, used in CLI output.
pub fn stats_line(stats: &RunStats) -> String {
    format!(
        "n={} viable={} rediscovery={} alternative={} fail={}",
        stats.n_total,
        stats.n_rediscovery + stats.n_alternative,
        stats.n_rediscovery,
        stats.n_alternative,
        stats.n_fail
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_paper(root: &Path, id: &str, text: &str, meta: Option<&str>) {
        let dir = root.join(id);
        std::fs::create_dir_all(&dir).unwrap();
        std::fs::write(dir.join("paper.txt"), text).unwrap();
        if let Some(meta) = meta {
            std::fs::write(dir.join("meta.json"), meta).unwrap();
        }
    }

    #[test]
    fn ingest_sorts_and_reads_meta() {
        let dir = tempfile::tempdir().unwrap();
        write_paper(dir.path(), "paper-b", "body b", None);
        write_paper(
            dir.path(),
            "paper-a",
            "body a",
            Some(r#"{"problem_window": 3, "ground_truth_available": true, "tags": ["cache"]}"#),
        );
        write_paper(dir.path(), "paper-c", "body c", None);
        let (entries, diagnostics) = ingest_corpus(dir.path()).unwrap();
        assert!(diagnostics.is_empty(), "{diagnostics:?}");
        let ids: Vec<&str> = entries.iter().map(|e| e.paper_id.as_str()).collect();
        assert_eq!(ids, vec!["paper-a", "paper-b", "paper-c"]);
        assert_eq!(entries[0].meta.problem_window, 3);
        assert!(entries[0].meta.ground_truth_available);
    }

    #[test]
    fn ingest_reports_malformed_entries_without_failing() {
        let dir = tempfile::tempdir().unwrap();
        write_paper(dir.path(), "good-1", "text", None);
        write_paper(dir.path(), "good-2", "text", None);
        std::fs::create_dir_all(dir.path().join("broken")).unwrap(); // no paper.txt
        let (entries, diagnostics) = ingest_corpus(dir.path()).unwrap();
        assert_eq!(entries.len(), 2);
        assert_eq!(diagnostics.len(), 1);
        assert!(diagnostics[0].contains("broken"));
    }

    #[test]
    fn ingest_duplicate_paper_id_is_fatal_and_names_paths() {
        let dir = tempfile::tempdir().unwrap();
        write_paper(dir.path(), "dir-one", "text", Some(r#"{"paper_id": "same"}"#));
        write_paper(dir.path(), "dir-two", "text", Some(r#"{"paper_id": "same"}"#));
        let err = ingest_corpus(dir.path()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("dir-one") && msg.contains("dir-two"), "{msg}");
    }

    #[test]
    fn ingest_empty_directory_warns() {
        let dir = tempfile::tempdir().unwrap();
        let (entries, diagnostics) = ingest_corpus(dir.path()).unwrap();
        assert!(entries.is_empty());
        assert_eq!(diagnostics.len(), 1);
    }

    fn record(run_id: &str, status: RunStatus) -> RunRecord {
        RunRecord {
            run_id: run_id.into(),
            pipeline: Pipeline::Ideation,
            config: serde_json::json!({"seed": 7}),
            transcript: "transcript.jsonl".into(),
            manifest: vec!["report.json".into()],
            status,
        }
    }

    #[test]
    fn persist_and_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rec = record("000000000001-aaaa", RunStatus::Complete);
        let run_dir = persist_run(
            dir.path(),
            &rec,
            &[("report.json".into(), "{}".into())],
        )
        .unwrap();
        assert!(run_dir.join("report.json").exists());
        assert!(run_dir.join(COMPLETION_MARKER).exists());
        let loaded = load_run(dir.path(), &rec.run_id).unwrap();
        assert_eq!(loaded, rec);
    }

    #[test]
    fn duplicate_run_id_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let rec = record("000000000001-bbbb", RunStatus::Complete);
        persist_run(dir.path(), &rec, &[]).unwrap();
        assert!(persist_run(dir.path(), &rec, &[]).is_err());
    }

    #[test]
    fn run_without_marker_is_listed_partial() {
        let dir = tempfile::tempdir().unwrap();
        persist_run(dir.path(), &record("000000000001-cccc", RunStatus::Complete), &[]).unwrap();
        // simulate a crash before the marker
        let crashed = dir.path().join("runs").join("000000000002-dddd");
        std::fs::create_dir_all(&crashed).unwrap();
        std::fs::write(crashed.join("record.json"), "{}").unwrap();
        let runs = list_runs(dir.path()).unwrap();
        assert_eq!(
            runs,
            vec![
                ("000000000001-cccc".to_string(), true),
                ("000000000002-dddd".to_string(), false)
            ]
        );
    }

    /// Sink that records write order and can fail on demand.
    struct ProbeSink {
        writes: Vec<String>,
        fail_on: Option<String>,
    }

    impl ArtifactSink for ProbeSink {
        fn write(&mut self, relative_path: &str, content: &str) -> Result<()> {
            let _ = content;
            if self.fail_on.as_deref() == Some(relative_path) {
                return Err(Error::Persist("injected disk failure".into()));
            }
            self.writes.push(relative_path.to_string());
            Ok(())
        }
    }

    #[test]
    fn marker_is_written_last() {
        let mut sink = ProbeSink {
            writes: Vec::new(),
            fail_on: None,
        };
        let rec = record("000000000003-eeee", RunStatus::Complete);
        persist_run_with(
            &mut sink,
            &rec,
            &[
                ("report.json".into(), "{}".into()),
                ("report.md".into(), "#".into()),
            ],
        )
        .unwrap();
        assert_eq!(sink.writes.last().map(String::as_str), Some(COMPLETION_MARKER));
    }

    #[test]
    fn write_failure_leaves_no_marker() {
        let mut sink = ProbeSink {
            writes: Vec::new(),
            fail_on: Some("record.json".into()),
        };
        let rec = record("000000000004-ffff", RunStatus::Complete);
        let err = persist_run_with(&mut sink, &rec, &[("report.json".into(), "{}".into())]);
        assert!(err.is_err());
        assert!(!sink.writes.iter().any(|w| w == COMPLETION_MARKER));
    }

    #[test]
    fn run_ids_sort_and_look_well_formed() {
        let a = new_run_id();
        assert_eq!(a.len(), 17);
        assert_eq!(&a[12..13], "-");
        let mut ids: Vec<String> = (0..5).map(|_| new_run_id()).collect();
        let sorted = {
            let mut s = ids.clone();
            s.sort();
            s
        };
        ids.sort();
        assert_eq!(ids, sorted);
    }

    #[test]
    fn funnel_markdown_matches_json_numbers() {
        use crate::funnel::{FunnelConfig, FunnelDeps};
        let client = crate::backend::Client::from_config(&crate::backend::BackendConfig::mock(0))
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let ledger = crate::funnel::run_funnel(
            &[],
            &FunnelConfig::default(),
            &client,
            &FunnelDeps::minimal(dir.path()),
        )
        .unwrap();
        let payload = ReportPayload::Funnel(ledger);
        let json = emit_report(&payload, RunStatus::Complete, ReportFormat::Json).unwrap();
        let markdown = emit_report(&payload, RunStatus::Complete, ReportFormat::Markdown).unwrap();
        let parsed: serde_json::Value = serde_json::from_str(&json).unwrap();
        for tier in parsed["tiers"].as_array().unwrap() {
            let entered = tier["entered"].as_u64().unwrap();
            assert!(markdown.contains(&format!("| {entered} |")));
        }
    }

    #[test]
    fn partial_report_carries_banner_and_unknown_format_rejected() {
        let payload = ReportPayload::Funnel(crate::funnel::FunnelLedger {
            tiers: vec![crate::funnel::TierCount::default(); 6],
            decisions: vec![],
            warnings: vec![],
        });
        let md = emit_report(&payload, RunStatus::Partial, ReportFormat::Markdown).unwrap();
        assert!(md.starts_with("# PARTIAL"));
        assert!("yaml".parse::<ReportFormat>().is_err());
    }
}

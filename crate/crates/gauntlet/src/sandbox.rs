//! Resource-limited execution of generated model programs.
//!
//! The runtime is configuration: a command template with a `{src}`
//! placeholder, a wall-clock limit, and an address-space limit. Programs run
//! with the run directory as working directory.

use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SandboxConfig {
    /// Command template; `{src}` expands to the program path.
    #[serde(default = "default_command")]
    pub command: Vec<String>,
    #[serde(default = "default_wall_clock_secs")]
    pub wall_clock_secs: u64,
    #[serde(default = "default_memory_mib")]
    pub memory_mib: u64,
}

fn default_command() -> Vec<String> {
    vec!["python3".into(), "{src}".into()]
}
fn default_wall_clock_secs() -> u64 {
    120
}
fn default_memory_mib() -> u64 {
    1024
}

impl Default for SandboxConfig {
    fn default() -> Self {
        SandboxConfig {
            command: default_command(),
            wall_clock_secs: default_wall_clock_secs(),
            memory_mib: default_memory_mib(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExecutionReport {
    pub stdout: String,
    pub stderr: String,
    pub exit_code: Option<i32>,
    pub timed_out: bool,
}

impl ExecutionReport {
    pub fn succeeded(&self) -> bool {
        !self.timed_out && self.exit_code == Some(0)
    }

    pub fn failure_summary(&self) -> String {
        if self.timed_out {
            "wall-clock limit exceeded".to_string()
        } else {
            format!(
                "exit code {:?}; stderr: {}",
                self.exit_code,
                self.stderr.trim()
            )
        }
    }
}

pub trait Sandbox: Send + Sync {
    /// Writes the program under `run_dir` and executes it there.
    fn execute(&self, program_text: &str, run_dir: &Path) -> Result<ExecutionReport>;
}

/// OS-process sandbox: cwd pinned to the run directory, RLIMIT_AS applied,
/// kill on wall-clock overrun.
pub struct ProcessSandbox {
    config: SandboxConfig,
}

impl ProcessSandbox {
    pub fn new(config: SandboxConfig) -> Self {
        ProcessSandbox { config }
    }

    pub fn preflight(&self) -> Result<()> {
        let program = self
            .config
            .command
            .first()
            .ok_or_else(|| Error::Config("empty sandbox command".into()))?;
        // resolvable either as a path or via PATH
        let found = Path::new(program).exists()
            || std::env::var_os("PATH")
                .map(|paths| {
                    std::env::split_paths(&paths).any(|dir| dir.join(program).exists())
                })
                .unwrap_or(false);
        if !found {
            return Err(Error::Config(format!("sandbox command not found: {program}")));
        }
        Ok(())
    }

    fn program_path(&self, run_dir: &Path) -> PathBuf {
        run_dir.join("model.src")
    }
}

impl Sandbox for ProcessSandbox {
    fn execute(&self, program_text: &str, run_dir: &Path) -> Result<ExecutionReport> {
        std::fs::create_dir_all(run_dir)?;
        let src = self.program_path(run_dir);
        std::fs::write(&src, program_text)?;

        let argv: Vec<String> = self
            .config
            .command
            .iter()
            .map(|a| a.replace("{src}", &src.to_string_lossy()))
            .collect();
        if argv.is_empty() {
            return Err(Error::Config("empty sandbox command".into()));
        }
        let mut command = Command::new(&argv[0]);
        command
            .args(&argv[1..])
            .current_dir(run_dir)
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped());
        #[cfg(unix)]
        {
            use std::os::unix::process::CommandExt;
            let limit = self.config.memory_mib * 1024 * 1024;
            unsafe {
                command.pre_exec(move || {
                    let rlim = libc::rlimit {
                        rlim_cur: limit,
                        rlim_max: limit,
                    };
                    libc::setrlimit(libc::RLIMIT_AS, &rlim);
                    Ok(())
                });
            }
        }
        let mut child = command.spawn()?;
        let deadline = Instant::now() + Duration::from_secs(self.config.wall_clock_secs);
        let mut timed_out = false;
        let status = loop {
            match child.try_wait()? {
                Some(status) => break Some(status),
                None if Instant::now() >= deadline => {
                    let _ = child.kill();
                    let _ = child.wait();
                    timed_out = true;
                    break None;
                }
                None => std::thread::sleep(Duration::from_millis(10)),
            }
        };
        let mut stdout = String::new();
        let mut stderr = String::new();
        if let Some(mut out) = child.stdout.take() {
            use std::io::Read;
            let _ = out.read_to_string(&mut stdout);
        }
        if let Some(mut err) = child.stderr.take() {
            use std::io::Read;
            let _ = err.read_to_string(&mut stderr);
        }
        Ok(ExecutionReport {
            stdout,
            stderr,
            exit_code: status.and_then(|s| s.code()),
            timed_out,
        })
    }
}

/// Test sandbox returning preset reports in sequence (last repeats).
pub struct ScriptedSandbox {
    reports: std::sync::Mutex<(Vec<ExecutionReport>, usize)>,
}

impl ScriptedSandbox {
    pub fn new(reports: Vec<ExecutionReport>) -> Self {
        ScriptedSandbox {
            reports: std::sync::Mutex::new((reports, 0)),
        }
    }

    pub fn ok() -> Self {
        ScriptedSandbox::new(vec![ExecutionReport {
            stdout: "speedup=2.0\n".into(),
            stderr: String::new(),
            exit_code: Some(0),
            timed_out: false,
        }])
    }
}

impl Sandbox for ScriptedSandbox {
    fn execute(&self, program_text: &str, run_dir: &Path) -> Result<ExecutionReport> {
        std::fs::create_dir_all(run_dir)?;
        std::fs::write(run_dir.join("model.src"), program_text)?;
        let mut guard = self.reports.lock().unwrap();
        let (reports, cursor) = &mut *guard;
        let i = (*cursor).min(reports.len() - 1);
        *cursor += 1;
        Ok(reports[i].clone())
    }
}

//! Runs generated scripts in a per-trial workspace.
//!
//! [`Sandbox`] owns the policy (workspace layout, optional fresh virtual
//! environment, child environment, key injection, redaction, artifact
//! harvesting). The actual process supervision sits behind [`Executor`]:
//!
//! * [`NativeExecutor`] spawns the interpreter directly and enforces the
//!   timeout and stream caps itself.
//! * [`SupervisorExecutor`] delegates to an external supervisor script and
//!   parses the single JSON report line it prints.
//! * [`stub::ScriptedExecutor`] returns canned results without running
//!   anything.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant, SystemTime};

use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use wait_timeout::ChildExt;

use crate::extract::GeneratedScript;
use crate::genlint::redact;

pub const DEFAULT_MAX_STREAM_BYTES: usize = 1 << 20;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(300);
pub const DEFAULT_KILL_GRACE: Duration = Duration::from_secs(5);

pub const DEFAULT_ENV_ALLOWLIST: &[&str] = &[
    "PATH", "HOME", "LANG", "LC_ALL", "LC_CTYPE", "TMPDIR", "TZ", "SYSTEMROOT",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Install,
    Verify,
    VerifyRepaired,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Install => "install",
            Phase::Verify => "verify",
            Phase::VerifyRepaired => "verify_repaired",
        }
    }

    /// File name the script is written under inside the workspace.
    pub fn script_file(self) -> &'static str {
        match self {
            Phase::Install => "package_install.py",
            Phase::Verify => "verification_code.py",
            Phase::VerifyRepaired => "verification_code_updated.py",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionResult {
    pub phase: Phase,
    pub exit_code: i32,
    pub stdout: String,
    pub stderr: String,
    /// Wall-clock seconds.
    pub duration: f64,
    pub timed_out: bool,
    #[serde(default)]
    pub stdout_truncated: bool,
    #[serde(default)]
    pub stderr_truncated: bool,
    pub workspace: PathBuf,
    /// Files the script created or modified in the workspace, relative to it.
    #[serde(default)]
    pub artifacts: Vec<String>,
}

impl ExecutionResult {
    /// Nonzero exit or timeout.
    pub fn failed(&self) -> bool {
        self.exit_code != 0 || self.timed_out
    }

    /// Tail of stdout followed by stderr, bounded to `max_chars`.
    pub fn error_tail(&self, max_chars: usize) -> String {
        let mut combined = String::new();
        combined.push_str(&self.stdout);
        if !combined.is_empty() && !combined.ends_with('\n') && !self.stderr.is_empty() {
            combined.push('\n');
        }
        combined.push_str(&self.stderr);
        if self.timed_out {
            combined.push_str(&format!(
                "\nExecution timed out after {:.1} seconds and was killed.\n",
                self.duration
            ));
        }
        if combined.trim().is_empty() {
            combined = format!("Process exited with status {} and produced no output.", self.exit_code);
        }
        let count = combined.chars().count();
        if count <= max_chars {
            combined
        } else {
            combined.chars().skip(count - max_chars).collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecLimits {
    pub timeout: Duration,
    pub max_stream_bytes: usize,
    pub env_allowlist: BTreeSet<String>,
    /// Time between the terminate signal and the hard kill.
    pub kill_grace: Duration,
}

impl Default for ExecLimits {
    fn default() -> Self {
        Self {
            timeout: DEFAULT_TIMEOUT,
            max_stream_bytes: DEFAULT_MAX_STREAM_BYTES,
            env_allowlist: DEFAULT_ENV_ALLOWLIST.iter().map(|s| s.to_string()).collect(),
            kill_grace: DEFAULT_KILL_GRACE,
        }
    }
}

/// An API key. Never printed by `Debug`.
#[derive(Clone, PartialEq, Eq)]
pub struct Secret(String);

impl Secret {
    pub fn new(value: impl Into<String>) -> Self {
        Self(value.into())
    }

    pub fn expose(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for Secret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Secret(..)")
    }
}

#[derive(Debug, Error)]
pub enum SandboxError {
    #[error("workspace {path}: {message}")]
    WorkspaceError { path: PathBuf, message: String },
    #[error("could not start {program}: {source}")]
    Spawn {
        program: String,
        #[source]
        source: std::io::Error,
    },
    #[error("supervisor protocol violation: {0}")]
    SupervisorProtocol(String),
    #[error("invalid limits: {0}")]
    InvalidLimits(String),
}

/// Everything an executor needs for one run.
#[derive(Debug, Clone)]
pub struct ExecRequest<'a> {
    pub interpreter: &'a Path,
    /// Absolute, or relative to `workdir`.
    pub script_path: &'a Path,
    pub workdir: &'a Path,
    pub phase: Phase,
    pub limits: &'a ExecLimits,
    /// Complete child environment; executors clear the inherited one.
    pub env: &'a BTreeMap<String, String>,
}

pub trait Executor: Send + Sync {
    fn execute(&self, request: &ExecRequest<'_>) -> Result<ExecutionResult, SandboxError>;
}

/// Bytes read from a child stream, capped.
#[derive(Debug, Default)]
struct Captured {
    bytes: Vec<u8>,
    truncated: bool,
}

/// Reads the whole stream, keeping at most `cap` bytes, so the child never
/// blocks on a full pipe.
fn capture<R: Read + Send + 'static>(mut stream: R, cap: usize) -> thread::JoinHandle<Captured> {
    thread::spawn(move || {
        let mut out = Captured::default();
        let mut buf = [0u8; 8192];
        loop {
            match stream.read(&mut buf) {
                Ok(0) | Err(_) => break,
                Ok(n) => {
                    let room = cap.saturating_sub(out.bytes.len());
                    if n > room {
                        out.truncated = true;
                    }
                    out.bytes.extend_from_slice(&buf[..n.min(room)]);
                }
            }
        }
        out
    })
}

fn signal_group(child: &Child, signal: i32) {
    // The child leads its own process group, so this reaches grandchildren too.
    unsafe {
        libc::kill(-(child.id() as i32), signal);
    }
}

struct RawRun {
    exit_code: i32,
    timed_out: bool,
    stdout: Captured,
    stderr: Captured,
    duration: Duration,
}

fn exit_code_of(status: std::process::ExitStatus) -> i32 {
    use std::os::unix::process::ExitStatusExt;
    status
        .code()
        .or_else(|| status.signal().map(|s| 128 + s))
        .unwrap_or(-1)
}

fn run_supervised(
    mut command: Command,
    program: &str,
    timeout: Duration,
    grace: Duration,
    cap: usize,
) -> Result<RawRun, SandboxError> {
    use std::os::unix::process::CommandExt;
    command
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .process_group(0);
    let started = Instant::now();
    let mut child = command.spawn().map_err(|source| SandboxError::Spawn {
        program: program.to_string(),
        source,
    })?;
    let stdout = capture(child.stdout.take().expect("piped stdout"), cap);
    let stderr = capture(child.stderr.take().expect("piped stderr"), cap);
    let wait = |child: &mut Child, d: Duration| child.wait_timeout(d).ok().flatten();
    let (status, timed_out) = match wait(&mut child, timeout) {
        Some(status) => (status, false),
        None => {
            signal_group(&child, libc::SIGTERM);
            let status = match wait(&mut child, grace) {
                Some(status) => status,
                None => {
                    signal_group(&child, libc::SIGKILL);
                    child.wait().map_err(|source| SandboxError::Spawn {
                        program: program.to_string(),
                        source,
                    })?
                }
            };
            (status, true)
        }
    };
    // Leftover grandchildren would hold the pipes open.
    signal_group(&child, libc::SIGKILL);
    let duration = started.elapsed();
    let stdout = stdout.join().unwrap_or_default();
    let stderr = stderr.join().unwrap_or_default();
    let mut exit_code = exit_code_of(status);
    if timed_out && exit_code == 0 {
        exit_code = 128 + libc::SIGTERM;
    }
    Ok(RawRun {
        exit_code,
        timed_out,
        stdout,
        stderr,
        duration,
    })
}

fn lossy(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

/// Runs `<interpreter> <script>` directly under its own timeout and caps.
#[derive(Debug, Clone, Copy, Default)]
pub struct NativeExecutor;

impl Executor for NativeExecutor {
    fn execute(&self, request: &ExecRequest<'_>) -> Result<ExecutionResult, SandboxError> {
        let mut command = Command::new(request.interpreter);
        command
            .arg(request.script_path)
            .current_dir(request.workdir)
            .env_clear()
            .envs(request.env);
        let program = request.interpreter.display().to_string();
        let run = run_supervised(
            command,
            &program,
            request.limits.timeout,
            request.limits.kill_grace,
            request.limits.max_stream_bytes,
        )?;
        Ok(ExecutionResult {
            phase: request.phase,
            exit_code: run.exit_code,
            stdout: lossy(&run.stdout.bytes),
            stderr: lossy(&run.stderr.bytes),
            duration: run.duration.as_secs_f64(),
            timed_out: run.timed_out,
            stdout_truncated: run.stdout.truncated,
            stderr_truncated: run.stderr.truncated,
            workspace: request.workdir.to_path_buf(),
            artifacts: Vec::new(),
        })
    }
}

/// The JSON object a supervisor prints as its final stdout line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupervisorReport {
    pub exit_code: i32,
    pub timed_out: bool,
    pub duration_s: f64,
    pub stdout_b64: String,
    pub stderr_b64: String,
}

/// Parses the last non-empty line of supervisor output as a report.
pub fn parse_supervisor_report(output: &str) -> Result<SupervisorReport, SandboxError> {
    let line = output
        .lines()
        .rev()
        .find(|l| !l.trim().is_empty())
        .ok_or_else(|| SandboxError::SupervisorProtocol("no report line".into()))?;
    serde_json::from_str(line.trim())
        .map_err(|e| SandboxError::SupervisorProtocol(format!("malformed report ({e}): {line:.200}")))
}

fn decode_b64(field: &str, value: &str) -> Result<Vec<u8>, SandboxError> {
    base64::engine::general_purpose::STANDARD
        .decode(value)
        .map_err(|e| SandboxError::SupervisorProtocol(format!("{field} is not base64: {e}")))
}

/// Invokes `<interpreter> <supervisor args..> <script> --timeout <secs> --max-bytes <n>`.
#[derive(Debug, Clone)]
pub struct SupervisorExecutor {
    /// Arguments placed between the interpreter and the script path,
    /// typically the supervisor's own path.
    pub supervisor_args: Vec<String>,
}

impl SupervisorExecutor {
    pub fn new(supervisor_path: impl Into<String>) -> Self {
        Self {
            supervisor_args: vec![supervisor_path.into()],
        }
    }

    fn protocol_failure(
        request: &ExecRequest<'_>,
        run: &RawRun,
        err: &SandboxError,
    ) -> ExecutionResult {
        ExecutionResult {
            phase: request.phase,
            exit_code: -1,
            stdout: String::new(),
            stderr: format!(
                "{err}\nsupervisor exit code: {}\nsupervisor stderr:\n{}",
                run.exit_code,
                lossy(&run.stderr.bytes)
            ),
            duration: run.duration.as_secs_f64(),
            timed_out: run.timed_out,
            stdout_truncated: false,
            stderr_truncated: false,
            workspace: request.workdir.to_path_buf(),
            artifacts: Vec::new(),
        }
    }
}

impl Executor for SupervisorExecutor {
    fn execute(&self, request: &ExecRequest<'_>) -> Result<ExecutionResult, SandboxError> {
        let limits = request.limits;
        let timeout_secs = limits.timeout.as_secs_f64();
        let mut command = Command::new(request.interpreter);
        command
            .args(&self.supervisor_args)
            .arg(request.script_path)
            .arg("--timeout")
            .arg(format!("{timeout_secs}"))
            .arg("--max-bytes")
            .arg(limits.max_stream_bytes.to_string())
            .current_dir(request.workdir)
            .env_clear()
            .envs(request.env);
        // Two base64 streams plus framing.
        let report_cap = limits.max_stream_bytes.div_ceil(3) * 8 + 64 * 1024;
        let outer_timeout = limits.timeout + limits.kill_grace * 2 + Duration::from_secs(30);
        let program = request.interpreter.display().to_string();
        let run = run_supervised(command, &program, outer_timeout, limits.kill_grace, report_cap)?;
        let parsed = (|| {
            if run.stdout.truncated {
                return Err(SandboxError::SupervisorProtocol("report exceeds size bound".into()));
            }
            let report = parse_supervisor_report(&lossy(&run.stdout.bytes))?;
            let stdout = decode_b64("stdout_b64", &report.stdout_b64)?;
            let stderr = decode_b64("stderr_b64", &report.stderr_b64)?;
            Ok((report, stdout, stderr))
        })();
        let (report, stdout, stderr) = match parsed {
            Ok(parts) => parts,
            Err(err) => return Ok(Self::protocol_failure(request, &run, &err)),
        };
        let cap = limits.max_stream_bytes;
        Ok(ExecutionResult {
            phase: request.phase,
            exit_code: if report.timed_out && report.exit_code == 0 {
                128 + libc::SIGTERM
            } else {
                report.exit_code
            },
            stdout_truncated: stdout.len() >= cap,
            stderr_truncated: stderr.len() >= cap,
            stdout: lossy(&stdout[..stdout.len().min(cap)]),
            stderr: lossy(&stderr[..stderr.len().min(cap)]),
            duration: report.duration_s,
            timed_out: report.timed_out,
            workspace: request.workdir.to_path_buf(),
            artifacts: Vec::new(),
        })
    }
}

pub mod stub {
    //! Executor test double.

    use std::collections::VecDeque;
    use std::sync::Mutex;

    use super::*;

    /// One canned run. `files` are written into the workspace, as if the
    /// script had produced them.
    #[derive(Debug, Clone, Default, PartialEq)]
    pub struct StubRun {
        pub exit_code: i32,
        pub stdout: String,
        pub stderr: String,
        pub timed_out: bool,
        pub files: Vec<(String, String)>,
    }

    impl StubRun {
        pub fn ok(stdout: impl Into<String>) -> Self {
            Self {
                stdout: stdout.into(),
                ..Self::default()
            }
        }

        pub fn fail(exit_code: i32, stderr: impl Into<String>) -> Self {
            Self {
                exit_code,
                stderr: stderr.into(),
                ..Self::default()
            }
        }

        pub fn with_file(mut self, name: impl Into<String>, content: impl Into<String>) -> Self {
            self.files.push((name.into(), content.into()));
            self
        }
    }

    /// What the stub saw for each call.
    #[derive(Debug, Clone, PartialEq)]
    pub struct SeenRequest {
        pub phase: Phase,
        pub script: String,
        pub env: BTreeMap<String, String>,
    }

    /// Returns queued runs in order, then successes with empty output.
    #[derive(Debug, Default)]
    pub struct ScriptedExecutor {
        runs: Mutex<VecDeque<StubRun>>,
        seen: Mutex<Vec<SeenRequest>>,
    }

    impl ScriptedExecutor {
        pub fn new(runs: impl IntoIterator<Item = StubRun>) -> Self {
            Self {
                runs: Mutex::new(runs.into_iter().collect()),
                seen: Mutex::default(),
            }
        }

        pub fn seen(&self) -> Vec<SeenRequest> {
            self.seen.lock().expect("stub lock").clone()
        }
    }

    impl Executor for ScriptedExecutor {
        fn execute(&self, request: &ExecRequest<'_>) -> Result<ExecutionResult, SandboxError> {
            let script =
                std::fs::read_to_string(request.workdir.join(request.script_path)).unwrap_or_default();
            self.seen.lock().expect("stub lock").push(SeenRequest {
                phase: request.phase,
                script,
                env: request.env.clone(),
            });
            let run = self.runs.lock().expect("stub lock").pop_front().unwrap_or_default();
            for (name, content) in &run.files {
                let path = request.workdir.join(name);
                std::fs::write(&path, content).map_err(|e| SandboxError::WorkspaceError {
                    path,
                    message: e.to_string(),
                })?;
            }
            let exit_code = if run.timed_out && run.exit_code == 0 {
                128 + libc::SIGTERM
            } else {
                run.exit_code
            };
            Ok(ExecutionResult {
                phase: request.phase,
                exit_code,
                stdout: run.stdout,
                stderr: run.stderr,
                duration: if run.timed_out {
                    request.limits.timeout.as_secs_f64()
                } else {
                    0.0
                },
                timed_out: run.timed_out,
                stdout_truncated: false,
                stderr_truncated: false,
                workspace: request.workdir.to_path_buf(),
                artifacts: Vec::new(),
            })
        }
    }
}

/// A workspace ready for execution. Dropping it removes the virtual
/// environment; the workspace directory itself stays.
#[derive(Debug)]
pub struct PreparedWorkspace {
    pub dir: PathBuf,
    interpreter: PathBuf,
    venv: Option<tempfile::TempDir>,
}

impl PreparedWorkspace {
    pub fn interpreter(&self) -> &Path {
        &self.interpreter
    }

    pub fn env_dir(&self) -> Option<&Path> {
        self.venv.as_ref().map(|d| d.path())
    }

    /// Leaves the virtual environment on disk and returns its path.
    pub fn keep_env(self) -> Option<PathBuf> {
        self.venv.map(tempfile::TempDir::keep)
    }
}

#[derive(Clone)]
pub struct Sandbox {
    executor: Arc<dyn Executor>,
    pub interpreter: String,
    pub limits: ExecLimits,
    /// Create a fresh virtual environment per workspace.
    pub isolated_env: bool,
    pub deny_network: bool,
    /// Set in every child environment in addition to the allowlist.
    pub extra_env: BTreeMap<String, String>,
    /// Variable names the API key is injected under.
    pub api_key_env_names: Vec<String>,
}

impl fmt::Debug for Sandbox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Sandbox")
            .field("interpreter", &self.interpreter)
            .field("limits", &self.limits)
            .field("isolated_env", &self.isolated_env)
            .field("deny_network", &self.deny_network)
            .finish_non_exhaustive()
    }
}

fn mtime_snapshot(dir: &Path) -> BTreeMap<PathBuf, Option<SystemTime>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        let Ok(entries) = std::fs::read_dir(&d) else {
            continue;
        };
        for entry in entries.flatten() {
            let Ok(ft) = entry.file_type() else { continue };
            let path = entry.path();
            if ft.is_dir() {
                stack.push(path);
            } else if ft.is_file() {
                let mtime = entry.metadata().ok().and_then(|m| m.modified().ok());
                out.insert(path, mtime);
            }
        }
    }
    out
}

fn scrub_file(path: &Path, secrets: &[String]) -> std::io::Result<()> {
    let bytes = std::fs::read(path)?;
    let mut scrubbed = bytes.clone();
    for secret in secrets.iter().filter(|s| !s.is_empty()) {
        let needle = secret.as_bytes();
        let mut out = Vec::with_capacity(scrubbed.len());
        let mut i = 0;
        while i < scrubbed.len() {
            if scrubbed[i..].starts_with(needle) {
                out.extend_from_slice(b"[REDACTED]");
                i += needle.len();
            } else {
                out.push(scrubbed[i]);
                i += 1;
            }
        }
        scrubbed = out;
    }
    if scrubbed != bytes {
        std::fs::write(path, scrubbed)?;
    }
    Ok(())
}

impl Sandbox {
    pub fn new(executor: Arc<dyn Executor>) -> Self {
        Self {
            executor,
            interpreter: "python3".into(),
            limits: ExecLimits::default(),
            isolated_env: true,
            deny_network: false,
            extra_env: BTreeMap::new(),
            api_key_env_names: vec!["OPENAI_API_KEY".into()],
        }
    }

    pub fn native() -> Self {
        Self::new(Arc::new(NativeExecutor))
    }

    /// Creates `dir` and, when isolation is on, a fresh virtual environment
    /// in a private temporary directory.
    pub fn prepare(&self, dir: impl AsRef<Path>) -> Result<PreparedWorkspace, SandboxError> {
        if self.limits.timeout.is_zero() {
            return Err(SandboxError::InvalidLimits("timeout must be positive".into()));
        }
        let dir = dir.as_ref().to_path_buf();
        let ws_err = |path: &Path, message: String| SandboxError::WorkspaceError {
            path: path.to_path_buf(),
            message,
        };
        std::fs::create_dir_all(&dir).map_err(|e| ws_err(&dir, e.to_string()))?;
        if !self.isolated_env {
            return Ok(PreparedWorkspace {
                dir,
                interpreter: PathBuf::from(&self.interpreter),
                venv: None,
            });
        }
        let venv = tempfile::Builder::new()
            .prefix("autoresearch-env-")
            .tempdir()
            .map_err(|e| ws_err(&dir, e.to_string()))?;
        let output = Command::new(&self.interpreter)
            .args(["-m", "venv"])
            .arg(venv.path())
            .stdin(Stdio::null())
            .output()
            .map_err(|e| ws_err(venv.path(), format!("cannot run {}: {e}", self.interpreter)))?;
        if !output.status.success() {
            return Err(ws_err(
                venv.path(),
                format!("venv creation failed: {}", lossy(&output.stderr).trim()),
            ));
        }
        Ok(PreparedWorkspace {
            dir,
            interpreter: venv.path().join("bin").join("python"),
            venv: Some(venv),
        })
    }

    /// The complete environment a child sees.
    pub fn child_env(&self, workspace: &PreparedWorkspace, api_key: Option<&Secret>) -> BTreeMap<String, String> {
        let mut env: BTreeMap<String, String> = std::env::vars()
            .filter(|(k, _)| self.limits.env_allowlist.contains(k))
            .collect();
        if let Some(venv) = workspace.env_dir() {
            let bin = venv.join("bin");
            let path = match env.get("PATH") {
                Some(p) if !p.is_empty() => format!("{}:{p}", bin.display()),
                _ => bin.display().to_string(),
            };
            env.insert("PATH".into(), path);
            env.insert("VIRTUAL_ENV".into(), venv.display().to_string());
        }
        if self.deny_network {
            for var in ["HTTP_PROXY", "HTTPS_PROXY", "ALL_PROXY", "http_proxy", "https_proxy", "all_proxy"] {
                env.insert(var.into(), "http://127.0.0.1:9".into());
            }
            env.insert("NO_PROXY".into(), String::new());
            env.insert("PIP_NO_INDEX".into(), "1".into());
        }
        env.extend(self.extra_env.clone());
        if let Some(key) = api_key {
            for name in &self.api_key_env_names {
                env.insert(name.clone(), key.expose().to_string());
            }
        }
        env
    }

    /// Writes the script into the workspace and runs it. Captured streams
    /// and workspace files are scrubbed of the key afterwards.
    pub fn execute(
        &self,
        workspace: &PreparedWorkspace,
        script: &GeneratedScript,
        phase: Phase,
        api_key: Option<&Secret>,
    ) -> Result<ExecutionResult, SandboxError> {
        let script_path = workspace.dir.join(phase.script_file());
        std::fs::write(&script_path, &script.source).map_err(|e| SandboxError::WorkspaceError {
            path: script_path.clone(),
            message: e.to_string(),
        })?;
        let before = mtime_snapshot(&workspace.dir);
        let env = self.child_env(workspace, api_key);
        // Relative to the workdir, so tracebacks do not embed the run path.
        let request = ExecRequest {
            interpreter: workspace.interpreter(),
            script_path: Path::new(phase.script_file()),
            workdir: &workspace.dir,
            phase,
            limits: &self.limits,
            env: &env,
        };
        let mut result = self.executor.execute(&request)?;
        let after = mtime_snapshot(&workspace.dir);
        let secrets: Vec<String> = api_key.map(|k| vec![k.expose().to_string()]).unwrap_or_default();
        let mut artifacts = Vec::new();
        for (path, mtime) in &after {
            if !secrets.is_empty() {
                scrub_file(path, &secrets).map_err(|e| SandboxError::WorkspaceError {
                    path: path.clone(),
                    message: e.to_string(),
                })?;
            }
            if path != &script_path && before.get(path) != Some(mtime) {
                if let Ok(rel) = path.strip_prefix(&workspace.dir) {
                    artifacts.push(rel.to_string_lossy().into_owned());
                }
            }
        }
        result.artifacts = artifacts;
        result.stdout = redact(&result.stdout, &secrets);
        result.stderr = redact(&result.stderr, &secrets);
        Ok(result)
    }

    /// Install first; verify only if install exited cleanly. A single
    /// result means the install failed.
    pub fn run_install_then_verify(
        &self,
        workspace: &PreparedWorkspace,
        install: &GeneratedScript,
        verify: &GeneratedScript,
        api_key: Option<&Secret>,
    ) -> Result<Vec<ExecutionResult>, SandboxError> {
        let installed = self.execute(workspace, install, Phase::Install, api_key)?;
        if installed.failed() {
            return Ok(vec![installed]);
        }
        let verified = self.execute(workspace, verify, Phase::Verify, api_key)?;
        Ok(vec![installed, verified])
    }
}

//! Run-directory layout and funnel aggregation.
//!
//! Each trial gets `<outputs_dir>/<YYYY-MM-DD_HH-MM-SS>_<suffix>/`. Files are
//! written once, atomically: content goes to a temp file in the same
//! directory which is then linked into place without clobbering.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::distributions::Alphanumeric;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pipeline::{OutcomeFlags, Stage};
use crate::sandbox::Phase;

pub const PROBLEM_FILE: &str = "problem.txt";
pub const LINT_FILE: &str = "lint.json";
pub const OUTCOME_FILE: &str = "outcome.json";
pub const RECORD_FILE: &str = "record.json";
pub const WORKSPACE_DIR: &str = "workspace";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{0} already exists")]
    AlreadyExists(PathBuf),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Decode { path: PathBuf, message: String },
    #[error("no outcomes to aggregate")]
    EmptyInput,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// File a stage's output is persisted under, if it has one.
pub fn stage_file(stage: Stage) -> Option<&'static str> {
    Some(match stage {
        Stage::Candidates => "hypothesis_candidates.txt",
        Stage::Selection => "hypothesis.txt",
        Stage::Reformulation => "representation_of_hypothesis.txt",
        Stage::PlanDesign => "verification_plan.txt",
        Stage::CodeGen => "verification_code_initial.py",
        Stage::InstrFollow => "verification_code.py",
        Stage::PkgInstall => "package_install.py",
        Stage::Repair => "verification_code_updated.py",
        Stage::Execution | Stage::Reexecution => return None,
    })
}

pub fn execution_file(phase: Phase) -> String {
    format!("execution_{}.json", phase.as_str())
}

/// `YYYY-MM-DD_HH-MM-SS` plus a 4-character random suffix.
pub fn new_trial_id() -> String {
    let stamp = chrono::Local::now().format("%Y-%m-%d_%H-%M-%S");
    let suffix: String = rand::thread_rng()
        .sample_iter(&Alphanumeric)
        .take(4)
        .map(|b| char::from(b).to_ascii_lowercase())
        .collect();
    format!("{stamp}_{suffix}")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrialDir {
    pub id: String,
    pub path: PathBuf,
}

impl TrialDir {
    /// Creates a fresh trial directory under `root`, retrying on id collision.
    pub fn create(root: impl AsRef<Path>) -> Result<Self, StoreError> {
        let root = root.as_ref();
        std::fs::create_dir_all(root).map_err(io_err(root))?;
        loop {
            let id = new_trial_id();
            let path = root.join(&id);
            match std::fs::create_dir(&path) {
                Ok(()) => return Ok(Self { id, path }),
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
                Err(e) => return Err(io_err(&path)(e)),
            }
        }
    }

    pub fn workspace(&self) -> PathBuf {
        self.path.join(WORKSPACE_DIR)
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn persist_stage(&self, stage: Stage, content: &str) -> Result<PathBuf, StoreError> {
        let name = stage_file(stage).ok_or_else(|| StoreError::Decode {
            path: self.path.clone(),
            message: format!("stage {stage} has no text artifact"),
        })?;
        self.write_new(name, content.as_bytes())
    }

    pub fn persist_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf, StoreError> {
        let mut bytes = serde_json::to_vec_pretty(value).expect("artifact serializes");
        bytes.push(b'\n');
        self.write_new(name, &bytes)
    }

    pub fn write_new(&self, name: &str, bytes: &[u8]) -> Result<PathBuf, StoreError> {
        write_atomic(&self.path.join(name), bytes, || Ok(()))
    }
}

/// Writes `bytes` to `target` via a sibling temp file. `before_link` runs
/// after the data is flushed and before it becomes visible.
pub(crate) fn write_atomic(
    target: &Path,
    bytes: &[u8],
    before_link: impl FnOnce() -> std::io::Result<()>,
) -> Result<PathBuf, StoreError> {
    if target.exists() {
        return Err(StoreError::AlreadyExists(target.to_path_buf()));
    }
    let dir = target.parent().unwrap_or_else(|| Path::new("."));
    let mut tmp = tempfile::Builder::new()
        .prefix(".partial-")
        .tempfile_in(dir)
        .map_err(io_err(dir))?;
    tmp.write_all(bytes).map_err(io_err(target))?;
    tmp.as_file().sync_all().map_err(io_err(target))?;
    before_link().map_err(io_err(target))?;
    tmp.persist_noclobber(target).map_err(|e| {
        if e.error.kind() == std::io::ErrorKind::AlreadyExists {
            StoreError::AlreadyExists(target.to_path_buf())
        } else {
            io_err(target)(e.error)
        }
    })?;
    Ok(target.to_path_buf())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FunnelStats {
    pub trials: usize,
    pub hypothesis_feasible: usize,
    pub code_lint_clean: usize,
    pub verify_executable: usize,
    pub install_ok: usize,
    pub end_to_end: usize,
    pub end_to_end_rate: f64,
}

pub fn aggregate(outcomes: &[OutcomeFlags]) -> Result<FunnelStats, StoreError> {
    if outcomes.is_empty() {
        return Err(StoreError::EmptyInput);
    }
    let count = |f: fn(&OutcomeFlags) -> bool| outcomes.iter().filter(|o| f(o)).count();
    let end_to_end = count(|o| o.end_to_end);
    Ok(FunnelStats {
        trials: outcomes.len(),
        hypothesis_feasible: count(|o| o.hypothesis_feasible),
        code_lint_clean: count(|o| o.code_lint_clean),
        verify_executable: count(|o| o.verify_executable),
        install_ok: count(|o| o.install_ok),
        end_to_end,
        end_to_end_rate: end_to_end as f64 / outcomes.len() as f64,
    })
}

impl FunnelStats {
    pub fn to_table(&self) -> String {
        let rows = [
            ("trials", self.trials),
            ("hypothesis_feasible", self.hypothesis_feasible),
            ("code_lint_clean", self.code_lint_clean),
            ("verify_executable", self.verify_executable),
            ("install_ok", self.install_ok),
            ("end_to_end", self.end_to_end),
        ];
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        let mut out = String::new();
        for (name, value) in rows {
            out.push_str(&format!("{name:<width$}  {value:>5}\n"));
        }
        out.push_str(&format!(
            "{:<width$}  {:>5.2}\n",
            "end_to_end_rate", self.end_to_end_rate
        ));
        out
    }
}

/// Outcome file as written by the pipeline or shipped as a fixture.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum FlagsFile {
    List(Vec<OutcomeFlags>),
    Wrapped { outcomes: Vec<OutcomeFlags> },
}

/// Reads a JSON list of outcome flags, bare or under an `outcomes` key.
pub fn load_outcome_list(path: impl AsRef<Path>) -> Result<Vec<OutcomeFlags>, StoreError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let parsed: FlagsFile = serde_json::from_str(&text).map_err(|e| StoreError::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(match parsed {
        FlagsFile::List(v) | FlagsFile::Wrapped { outcomes: v } => v,
    })
}

/// Collects `outcome.json` from every trial directory directly under `root`,
/// in directory-name order.
pub fn collect_outcomes(root: impl AsRef<Path>) -> Result<Vec<OutcomeFlags>, StoreError> {
    let root = root.as_ref();
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)
        .map_err(io_err(root))?
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.join(OUTCOME_FILE).is_file())
        .collect();
    dirs.sort();
    dirs.iter()
        .map(|d| {
            let path = d.join(OUTCOME_FILE);
            let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
            serde_json::from_str(&text).map_err(|e| StoreError::Decode {
                path,
                message: e.to_string(),
            })
        })
        .collect()
}

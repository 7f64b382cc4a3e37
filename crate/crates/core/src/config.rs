//! TOML run configuration.
//!
//! Lookup order: an explicit path, then `AUTORESEARCH_CONFIG`, then
//! `autoresearch.toml` in the current directory. Relative paths inside the
//! file resolve against the file's own directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::genlint::Linter;
use crate::pipeline::{Pipeline, PipelineOptions};
use crate::prompts::{default_templates, PromptError, TemplateSet};
use crate::sandbox::{
    ExecLimits, Executor, NativeExecutor, Sandbox, Secret, SupervisorExecutor, DEFAULT_ENV_ALLOWLIST,
    DEFAULT_KILL_GRACE, DEFAULT_MAX_STREAM_BYTES,
};

pub const CONFIG_ENV: &str = "AUTORESEARCH_CONFIG";
pub const DEFAULT_CONFIG_FILE: &str = "autoresearch.toml";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("no configuration file: pass --config, set {CONFIG_ENV}, or create ./{DEFAULT_CONFIG_FILE}")]
    NotFound,
    #[error("configuration file {0} does not exist")]
    Missing(PathBuf),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid configuration {path}: {message}")]
    Invalid { path: PathBuf, message: String },
    #[error(transparent)]
    Templates(#[from] PromptError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecutorKind {
    #[default]
    Native,
    Supervisor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub model: String,
    pub api_base_url: String,
    /// Falls back to the built-in templates when unset.
    pub templates_dir: Option<PathBuf>,
    pub outputs_dir: PathBuf,
    pub interpreter_cmd: String,
    pub exec_timeout_secs: u64,
    pub repair_enabled: bool,
    pub reform_includes_problem: bool,

    pub problem_path: Option<PathBuf>,
    pub executor: ExecutorKind,
    /// Arguments between the interpreter and the script for the supervisor.
    pub supervisor_args: Vec<String>,
    pub isolated_env: bool,
    pub keep_env: bool,
    pub deny_network: bool,
    pub env_allowlist: Vec<String>,
    pub extra_env: BTreeMap<String, String>,
    /// Prepended to the child's `PYTHONPATH`; relative entries follow the file.
    pub python_path: Vec<PathBuf>,
    pub max_stream_bytes: usize,
    pub kill_grace_secs: u64,
    pub api_key_env_names: Vec<String>,
    pub unknown_symbols: Vec<String>,
    pub max_output_tokens: Option<u32>,
    pub request_timeout_secs: u64,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            model: "gpt-4".into(),
            api_base_url: "https://api.openai.com/v1".into(),
            templates_dir: None,
            outputs_dir: PathBuf::from("outputs"),
            interpreter_cmd: "python3".into(),
            exec_timeout_secs: 300,
            repair_enabled: true,
            reform_includes_problem: false,
            problem_path: None,
            executor: ExecutorKind::Native,
            supervisor_args: vec!["-m".into(), "sandbox_supervisor".into()],
            isolated_env: true,
            keep_env: false,
            deny_network: false,
            env_allowlist: DEFAULT_ENV_ALLOWLIST.iter().map(|s| s.to_string()).collect(),
            extra_env: BTreeMap::new(),
            python_path: Vec::new(),
            max_stream_bytes: DEFAULT_MAX_STREAM_BYTES,
            kill_grace_secs: DEFAULT_KILL_GRACE.as_secs(),
            api_key_env_names: vec!["OPENAI_API_KEY".into()],
            unknown_symbols: Vec::new(),
            max_output_tokens: None,
            request_timeout_secs: 600,
        }
    }
}

/// Picks the configuration file per the lookup order.
pub fn locate(explicit: Option<&Path>) -> Result<PathBuf, ConfigError> {
    let candidate = match explicit {
        Some(p) => p.to_path_buf(),
        None => match std::env::var_os(CONFIG_ENV).filter(|v| !v.is_empty()) {
            Some(p) => PathBuf::from(p),
            None => {
                let local = PathBuf::from(DEFAULT_CONFIG_FILE);
                if !local.is_file() {
                    return Err(ConfigError::NotFound);
                }
                local
            }
        },
    };
    if candidate.is_file() {
        Ok(candidate)
    } else {
        Err(ConfigError::Missing(candidate))
    }
}

fn resolve(base: &Path, path: &mut PathBuf) {
    if path.is_relative() {
        *path = base.join(&*path);
    }
}

impl Config {
    pub fn parse(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let mut config: Config = toml::from_str(text).map_err(|e| ConfigError::Invalid {
            path: path.to_path_buf(),
            message: e.message().to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        resolve(base, &mut config.outputs_dir);
        if let Some(dir) = config.templates_dir.as_mut() {
            resolve(base, dir);
        }
        if let Some(problem) = config.problem_path.as_mut() {
            resolve(base, problem);
        }
        for entry in &mut config.python_path {
            resolve(base, entry);
            if let Ok(abs) = std::path::absolute(&*entry) {
                *entry = abs;
            }
        }
        config.validate(path)?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, path)
    }

    fn validate(&self, path: &Path) -> Result<(), ConfigError> {
        let invalid = |message: &str| ConfigError::Invalid {
            path: path.to_path_buf(),
            message: message.to_string(),
        };
        if self.exec_timeout_secs == 0 {
            return Err(invalid("exec_timeout_secs must be positive"));
        }
        if self.model.trim().is_empty() {
            return Err(invalid("model must not be empty"));
        }
        if self.interpreter_cmd.trim().is_empty() {
            return Err(invalid("interpreter_cmd must not be empty"));
        }
        if self.max_stream_bytes == 0 {
            return Err(invalid("max_stream_bytes must be positive"));
        }
        if self.executor == ExecutorKind::Supervisor && self.supervisor_args.is_empty() {
            return Err(invalid("supervisor_args must name the supervisor"));
        }
        Ok(())
    }

    pub fn templates(&self) -> Result<TemplateSet, ConfigError> {
        match &self.templates_dir {
            Some(dir) => Ok(TemplateSet::load_dir(dir)?),
            None => Ok(default_templates()),
        }
    }

    pub fn limits(&self) -> ExecLimits {
        ExecLimits {
            timeout: Duration::from_secs(self.exec_timeout_secs),
            max_stream_bytes: self.max_stream_bytes,
            env_allowlist: self.env_allowlist.iter().cloned().collect(),
            kill_grace: Duration::from_secs(self.kill_grace_secs),
        }
    }

    pub fn executor(&self) -> Arc<dyn Executor> {
        match self.executor {
            ExecutorKind::Native => Arc::new(NativeExecutor),
            ExecutorKind::Supervisor => Arc::new(SupervisorExecutor {
                supervisor_args: self.supervisor_args.clone(),
            }),
        }
    }

    /// A sandbox over the given executor, with every other knob from here.
    pub fn sandbox_with(&self, executor: Arc<dyn Executor>) -> Sandbox {
        let mut sandbox = Sandbox::new(executor);
        sandbox.interpreter = self.interpreter_cmd.clone();
        sandbox.limits = self.limits();
        sandbox.isolated_env = self.isolated_env;
        sandbox.deny_network = self.deny_network;
        sandbox.extra_env = self.extra_env.clone();
        if !self.python_path.is_empty() {
            let mut entries: Vec<String> =
                self.python_path.iter().map(|p| p.display().to_string()).collect();
            if let Some(existing) = self.extra_env.get("PYTHONPATH").filter(|v| !v.is_empty()) {
                entries.push(existing.clone());
            }
            sandbox.extra_env.insert("PYTHONPATH".into(), entries.join(":"));
        }
        sandbox.api_key_env_names = self.api_key_env_names.clone();
        sandbox
    }

    pub fn pipeline_options(&self) -> PipelineOptions {
        PipelineOptions {
            model: self.model.clone(),
            outputs_dir: self.outputs_dir.clone(),
            repair_enabled: self.repair_enabled,
            reform_includes_problem: self.reform_includes_problem,
            max_output_tokens: self.max_output_tokens,
            keep_env: self.keep_env,
        }
    }

    pub fn pipeline_with(
        &self,
        executor: Arc<dyn Executor>,
        api_key: Option<Secret>,
    ) -> Result<Pipeline, ConfigError> {
        let mut pipeline = Pipeline::new(
            self.templates()?,
            self.pipeline_options(),
            self.sandbox_with(executor),
        )
        .with_api_key(api_key);
        pipeline.linter = Linter::default().with_unknown_symbols(self.unknown_symbols.iter().cloned());
        Ok(pipeline)
    }

    pub fn pipeline(&self, api_key: Option<Secret>) -> Result<Pipeline, ConfigError> {
        self.pipeline_with(self.executor(), api_key)
    }
}

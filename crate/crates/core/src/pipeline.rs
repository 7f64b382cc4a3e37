//! The trial state machine.
//!
//! One trial runs, strictly in order:
//!
//! ```text
//! HYP_CANDIDATES(problem) -> HYP_SELECT(problem, hypotheses)
//!   -> HYP_REFORM(hypothesis) -> PLAN_DESIGN(problem, representation)
//!   -> CODE_GEN(plan) -> INSTR_FOLLOW(code) -> PKG_INSTALL(code)
//!   -> install, verify -> [CODE_REPAIR(code, error) -> verify once more]
//! ```
//!
//! Each stage's output is on disk before the next stage starts. A failed
//! first verification gets exactly one repair attempt.

use std::fmt;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extract::{extract, ExtractError, GeneratedScript};
use crate::gateway::{ChatRequest, Gateway, GatewayError};
use crate::genlint::{has_errors, LintFinding, Linter, Rule};
use crate::prompts::{render, PromptError, Slot, SlotBindings, TemplateId, TemplateSet};
use crate::sandbox::{ExecutionResult, Phase, PreparedWorkspace, Sandbox, SandboxError, Secret};
use crate::store::{
    execution_file, StoreError, TrialDir, LINT_FILE, OUTCOME_FILE, PROBLEM_FILE, RECORD_FILE,
    WORKSPACE_DIR,
};

/// Characters of combined output handed to the repair prompt.
pub const ERROR_TAIL_CHARS: usize = 4000;

/// Phrases marking a hypothesis that needs model-training resources.
pub const INFEASIBLE_MARKERS: &[&str] = &[
    "training the model",
    "train the model",
    "retrain the model",
    "retraining the model",
    "fine-tune the model",
    "fine-tuning the model",
    "finetune the model",
    "finetuning the model",
    "training a new model",
    "train a new model",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Candidates,
    Selection,
    Reformulation,
    PlanDesign,
    CodeGen,
    InstrFollow,
    PkgInstall,
    Execution,
    Repair,
    Reexecution,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Candidates => "candidates",
            Stage::Selection => "selection",
            Stage::Reformulation => "reformulation",
            Stage::PlanDesign => "plan_design",
            Stage::CodeGen => "code_gen",
            Stage::InstrFollow => "instr_follow",
            Stage::PkgInstall => "pkg_install",
            Stage::Execution => "execution",
            Stage::Repair => "repair",
            Stage::Reexecution => "reexecution",
        }
    }

    pub fn template(self) -> Option<TemplateId> {
        Some(match self {
            Stage::Candidates => TemplateId::HypCandidates,
            Stage::Selection => TemplateId::HypSelect,
            Stage::Reformulation => TemplateId::HypReform,
            Stage::PlanDesign => TemplateId::PlanDesign,
            Stage::CodeGen => TemplateId::CodeGen,
            Stage::InstrFollow => TemplateId::InstrFollow,
            Stage::PkgInstall => TemplateId::PkgInstall,
            Stage::Repair => TemplateId::CodeRepair,
            Stage::Execution | Stage::Reexecution => return None,
        })
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResearchProblem {
    pub text: String,
    pub source_path: Option<PathBuf>,
}

impl ResearchProblem {
    pub fn new(text: impl Into<String>) -> Result<Self, TrialErrorKind> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(TrialErrorKind::EmptyProblem);
        }
        Ok(Self {
            text,
            source_path: None,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TrialErrorKind> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| {
            TrialErrorKind::Store(StoreError::Io {
                path: path.to_path_buf(),
                source,
            })
        })?;
        let mut problem = Self::new(text)?;
        problem.source_path = Some(path.to_path_buf());
        Ok(problem)
    }

    /// The bundled example problem about answers wrapped in extra sentences.
    pub fn bundled() -> Self {
        Self {
            text: include_str!("../../../fixtures/problem.txt").to_string(),
            source_path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageOutput {
    pub stage: Stage,
    pub content: String,
    pub produced_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scripts {
    pub verify: Option<GeneratedScript>,
    pub verify_updated: Option<GeneratedScript>,
    pub install: Option<GeneratedScript>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LintReport {
    pub verify_initial: Vec<LintFinding>,
    pub verify: Vec<LintFinding>,
    pub install: Vec<LintFinding>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub verify_updated: Option<Vec<LintFinding>>,
}

impl LintReport {
    /// Findings for the script whose execution decides the outcome.
    pub fn final_verify(&self) -> &[LintFinding] {
        self.verify_updated.as_deref().unwrap_or(&self.verify)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeFlags {
    pub hypothesis_feasible: bool,
    pub plan_present: bool,
    pub code_lint_clean: bool,
    pub verify_executable: bool,
    pub install_ok: bool,
    pub end_to_end: bool,
}

impl OutcomeFlags {
    /// `end_to_end => verify_executable && install_ok` and
    /// `verify_executable => plan_present`.
    pub fn is_consistent(&self) -> bool {
        (!self.end_to_end || (self.verify_executable && self.install_ok))
            && (!self.verify_executable || self.plan_present)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: String,
    pub problem: ResearchProblem,
    pub stages: Vec<StageOutput>,
    pub scripts: Scripts,
    pub install_execution: Option<ExecutionResult>,
    /// Verification runs: the first, plus the re-run after a repair.
    pub executions: Vec<ExecutionResult>,
    pub lint: LintReport,
    pub outcome: OutcomeFlags,
    pub failure: Option<String>,
}

impl TrialRecord {
    fn new(trial_id: String, problem: ResearchProblem) -> Self {
        Self {
            trial_id,
            problem,
            stages: Vec::new(),
            scripts: Scripts::default(),
            install_execution: None,
            executions: Vec::new(),
            lint: LintReport::default(),
            outcome: OutcomeFlags::default(),
            failure: None,
        }
    }

    pub fn stage(&self, stage: Stage) -> Option<&StageOutput> {
        self.stages.iter().find(|s| s.stage == stage)
    }

    pub fn stage_count(&self, stage: Stage) -> usize {
        self.stages.iter().filter(|s| s.stage == stage).count()
    }

    /// Serialization with timestamps, durations and the trial id blanked,
    /// for comparing runs.
    pub fn canonical_json(&self) -> String {
        let mut value = serde_json::to_value(self).expect("record serializes");
        crate::normalize_volatile(&mut value);
        serde_json::to_string_pretty(&value).expect("value serializes")
    }
}

pub fn is_feasible_hypothesis(text: &str) -> bool {
    let lower = text.to_lowercase();
    !text.trim().is_empty() && !INFEASIBLE_MARKERS.iter().any(|m| lower.contains(m))
}

/// Machine-checkable outcome proxies for a finished or aborted trial.
/// Only error-severity findings in `lint` count.
pub fn classify_outcome(record: &TrialRecord, lint: &[LintFinding]) -> OutcomeFlags {
    let nonempty = |stage| record.stage(stage).is_some_and(|s| !s.content.trim().is_empty());
    let hypothesis_feasible = record
        .stage(Stage::Selection)
        .is_some_and(|s| is_feasible_hypothesis(&s.content));
    let plan_present = nonempty(Stage::PlanDesign);
    let has_script = record.scripts.verify.is_some();
    let code_lint_clean = has_script && !has_errors(lint);
    let verify_executable =
        plan_present && record.executions.last().is_some_and(|e| !e.failed());
    let install_ok = record.install_execution.as_ref().is_some_and(|e| !e.failed());
    OutcomeFlags {
        hypothesis_feasible,
        plan_present,
        code_lint_clean,
        verify_executable,
        install_ok,
        end_to_end: hypothesis_feasible
            && plan_present
            && code_lint_clean
            && verify_executable
            && install_ok,
    }
}

#[derive(Debug, Error)]
pub enum StageCause {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Extraction(#[from] ExtractError),
}

#[derive(Debug, Error)]
pub enum TrialErrorKind {
    #[error("stage {stage} failed: {cause}")]
    StageFailure { stage: Stage, cause: StageCause },
    #[error("output of stage {stage} contains the API key; trial aborted")]
    SecretLeak { stage: Stage },
    #[error("research problem text is empty")]
    EmptyProblem,
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Sandbox(#[from] SandboxError),
}

/// A trial that stopped early. Whatever was produced is on disk under
/// `trial_dir` and summarized in `record`.
#[derive(Debug, Error)]
#[error("trial {}: {kind}", record.trial_id)]
pub struct TrialError {
    pub kind: TrialErrorKind,
    pub trial_dir: PathBuf,
    pub record: Box<TrialRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PipelineOptions {
    pub model: String,
    pub outputs_dir: PathBuf,
    pub repair_enabled: bool,
    pub reform_includes_problem: bool,
    pub max_output_tokens: Option<u32>,
    /// Remove the trial's virtual environment when the trial ends.
    pub keep_env: bool,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            model: "gpt-4".into(),
            outputs_dir: PathBuf::from("outputs"),
            repair_enabled: true,
            reform_includes_problem: false,
            max_output_tokens: None,
            keep_env: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Pipeline {
    pub templates: TemplateSet,
    pub options: PipelineOptions,
    pub linter: Linter,
    pub sandbox: Sandbox,
    pub api_key: Option<Secret>,
}

struct TrialRun<'a> {
    pipeline: &'a Pipeline,
    dir: TrialDir,
    record: TrialRecord,
    secrets: Vec<String>,
    workspace: Option<PreparedWorkspace>,
}

impl<'a> TrialRun<'a> {
    fn contains_secret(&self, text: &str) -> bool {
        self.secrets.iter().any(|s| text.contains(s.as_str()))
    }

    fn ask(
        &self,
        gateway: &mut Gateway,
        stage: Stage,
        bindings: &[(Slot, &str)],
    ) -> Result<String, TrialErrorKind> {
        let fail = |cause: StageCause| TrialErrorKind::StageFailure { stage, cause };
        let id = stage.template().expect("model stages have templates");
        let mut template = self.pipeline.templates.get(id).clone();
        if stage == Stage::Reformulation && self.pipeline.options.reform_includes_problem {
            template = template.with_problem_context();
        }
        let mut slots = SlotBindings::new();
        for (slot, value) in bindings {
            slots.insert(*slot, *value).map_err(|e| fail(e.into()))?;
        }
        let prompt = render(&template, &slots).map_err(|e| fail(e.into()))?;
        let mut request = ChatRequest::single_user(&self.pipeline.options.model, prompt);
        request.max_output_tokens = self.pipeline.options.max_output_tokens;
        let response = gateway.complete(&request).map_err(|e| fail(e.into()))?;
        Ok(response.content)
    }

    /// Persists a prose stage output and appends it to the record.
    fn keep(&mut self, stage: Stage, content: String) -> Result<(), TrialErrorKind> {
        if self.contains_secret(&content) {
            return Err(TrialErrorKind::SecretLeak { stage });
        }
        if crate::store::stage_file(stage).is_some() {
            self.dir.persist_stage(stage, &content)?;
        }
        self.record.stages.push(StageOutput {
            stage,
            content,
            produced_at: Utc::now(),
        });
        Ok(())
    }

    /// Extracts, lints and persists a code stage output.
    fn keep_script(
        &mut self,
        stage: Stage,
        raw: &str,
    ) -> Result<(GeneratedScript, Vec<LintFinding>), TrialErrorKind> {
        let script = extract(raw, stage).map_err(|e| TrialErrorKind::StageFailure {
            stage,
            cause: e.into(),
        })?;
        let findings = self.pipeline.linter.lint(&script, &self.secrets);
        if findings.iter().any(|f| f.rule == Rule::SecretLeak) {
            let slot = match stage {
                Stage::CodeGen => &mut self.record.lint.verify_initial,
                Stage::InstrFollow => &mut self.record.lint.verify,
                Stage::PkgInstall => &mut self.record.lint.install,
                _ => self.record.lint.verify_updated.get_or_insert_with(Vec::new),
            };
            *slot = findings;
            return Err(TrialErrorKind::SecretLeak { stage });
        }
        self.keep(stage, script.source.clone())?;
        Ok((script, findings))
    }

    /// Rewrites absolute workspace paths in the streams to the relative
    /// `workspace`, then persists the result.
    fn persist_execution(&self, result: &mut ExecutionResult) -> Result<(), TrialErrorKind> {
        let mut prefixes: Vec<String> = [
            std::path::absolute(&result.workspace).ok(),
            result.workspace.canonicalize().ok(),
        ]
        .into_iter()
        .flatten()
        .map(|p| p.display().to_string())
        .filter(|p| p.len() > 1)
        .collect();
        prefixes.sort_by_key(|p| std::cmp::Reverse(p.len()));
        prefixes.dedup();
        for prefix in &prefixes {
            result.stdout = result.stdout.replace(prefix.as_str(), WORKSPACE_DIR);
            result.stderr = result.stderr.replace(prefix.as_str(), WORKSPACE_DIR);
        }
        result.workspace = PathBuf::from(WORKSPACE_DIR);
        self.dir.persist_json(&execution_file(result.phase), result)?;
        Ok(())
    }

    fn run(&mut self, problem: &ResearchProblem, gateway: &mut Gateway) -> Result<(), TrialErrorKind> {
        if self.contains_secret(&problem.text) {
            return Err(TrialErrorKind::SecretLeak {
                stage: Stage::Candidates,
            });
        }
        self.dir.write_new(PROBLEM_FILE, problem.text.as_bytes())?;

        let candidates = self.ask(gateway, Stage::Candidates, &[(Slot::Problem, &problem.text)])?;
        self.keep(Stage::Candidates, candidates.clone())?;

        let hypothesis = self.ask(
            gateway,
            Stage::Selection,
            &[(Slot::Problem, &problem.text), (Slot::Hypotheses, &candidates)],
        )?;
        self.keep(Stage::Selection, hypothesis.clone())?;

        let mut reform_bindings = vec![(Slot::Hypothesis, hypothesis.as_str())];
        if self.pipeline.options.reform_includes_problem {
            reform_bindings.push((Slot::Problem, &problem.text));
        }
        let representation = self.ask(gateway, Stage::Reformulation, &reform_bindings)?;
        self.keep(Stage::Reformulation, representation.clone())?;

        let plan = self.ask(
            gateway,
            Stage::PlanDesign,
            &[
                (Slot::Problem, &problem.text),
                (Slot::RepresentationOfHypothesis, &representation),
            ],
        )?;
        self.keep(Stage::PlanDesign, plan.clone())?;

        let raw = self.ask(gateway, Stage::CodeGen, &[(Slot::VerificationPlan, &plan)])?;
        let (initial, findings) = self.keep_script(Stage::CodeGen, &raw)?;
        self.record.lint.verify_initial = findings;

        let raw = self.ask(gateway, Stage::InstrFollow, &[(Slot::VerificationCode, &initial.source)])?;
        let (verify, findings) = self.keep_script(Stage::InstrFollow, &raw)?;
        self.record.lint.verify = findings;
        self.record.scripts.verify = Some(verify.clone());

        let raw = self.ask(gateway, Stage::PkgInstall, &[(Slot::VerificationCode, &verify.source)])?;
        let (install, findings) = self.keep_script(Stage::PkgInstall, &raw)?;
        self.record.lint.install = findings;
        self.record.scripts.install = Some(install.clone());

        let sandbox = &self.pipeline.sandbox;
        let key = self.pipeline.api_key.as_ref();
        let workspace = self.workspace.insert(sandbox.prepare(self.dir.workspace())?);
        let mut results = sandbox.run_install_then_verify(workspace, &install, &verify, key)?;
        for r in &mut results {
            self.persist_execution(r)?;
        }
        let summary = results
            .iter()
            .map(|r| format!("{}: exit {}{}", r.phase, r.exit_code, if r.timed_out { " (timed out)" } else { "" }))
            .collect::<Vec<_>>()
            .join("\n");
        let mut results = results.into_iter();
        self.record.install_execution = results.next();
        self.record.executions.extend(results);
        self.keep(Stage::Execution, summary)?;

        let first = match self.record.executions.first() {
            Some(first) if first.failed() && self.pipeline.options.repair_enabled => first.clone(),
            _ => return Ok(()),
        };
        let error_message = first.error_tail(ERROR_TAIL_CHARS);
        let raw = self.ask(
            gateway,
            Stage::Repair,
            &[
                (Slot::VerificationCode, &verify.source),
                (Slot::ErrorMessage, &error_message),
            ],
        )?;
        let (updated, findings) = self.keep_script(Stage::Repair, &raw)?;
        self.record.lint.verify_updated = Some(findings);
        self.record.scripts.verify_updated = Some(updated.clone());

        let workspace = self.workspace.as_ref().expect("prepared above");
        let mut rerun = sandbox.execute(workspace, &updated, Phase::VerifyRepaired, key)?;
        self.persist_execution(&mut rerun)?;
        let summary = format!("{}: exit {}", rerun.phase, rerun.exit_code);
        self.record.executions.push(rerun);
        self.keep(Stage::Reexecution, summary)?;
        Ok(())
    }

    /// Writes lint, outcome and record files. Best effort after a failure.
    fn finish(&mut self) -> Result<(), StoreError> {
        if let Some(workspace) = self.workspace.take() {
            if self.pipeline.options.keep_env {
                workspace.keep_env();
            }
        }
        let outcome = classify_outcome(&self.record, self.record.lint.final_verify());
        self.record.outcome = outcome;
        self.dir.persist_json(LINT_FILE, &self.record.lint)?;
        self.dir.persist_json(OUTCOME_FILE, &outcome)?;
        self.dir.persist_json(RECORD_FILE, &self.record)?;
        Ok(())
    }
}

impl Pipeline {
    pub fn new(templates: TemplateSet, options: PipelineOptions, sandbox: Sandbox) -> Self {
        Self {
            templates,
            options,
            linter: Linter::default(),
            sandbox,
            api_key: None,
        }
    }

    pub fn with_api_key(mut self, key: Option<Secret>) -> Self {
        self.api_key = key.filter(|k| !k.expose().is_empty());
        self
    }

    pub fn run_trial(
        &self,
        problem: &ResearchProblem,
        gateway: &mut Gateway,
    ) -> Result<TrialRecord, TrialError> {
        let dir = TrialDir::create(&self.options.outputs_dir).map_err(|e| TrialError {
            kind: e.into(),
            trial_dir: self.options.outputs_dir.clone(),
            record: Box::new(TrialRecord::new(String::new(), problem.clone())),
        })?;
        let mut run = TrialRun {
            pipeline: self,
            record: TrialRecord::new(dir.id.clone(), problem.clone()),
            secrets: self.api_key.iter().map(|k| k.expose().to_string()).collect(),
            workspace: None,
            dir,
        };
        let result = run.run(problem, gateway);
        if let Err(kind) = &result {
            run.record.failure = Some(kind.to_string());
        }
        let finished = run.finish();
        let TrialRun { dir, record, .. } = run;
        match (result, finished) {
            (Ok(()), Ok(())) => Ok(record),
            (Err(kind), _) => Err(TrialError {
                kind,
                trial_dir: dir.path,
                record: Box::new(record),
            }),
            (Ok(()), Err(e)) => Err(TrialError {
                kind: e.into(),
                trial_dir: dir.path,
                record: Box::new(record),
            }),
        }
    }
}

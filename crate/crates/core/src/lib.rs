//! Orchestrator for an autonomous hypothesis generation and verification
//! pipeline driven by a chat-completion model.
//!
//! A trial takes a research problem through hypothesis candidates,
//! selection, reformulation, plan design, code generation, an
//! instruction-following pass and install-script generation, then runs the
//! scripts in a sandbox with at most one repair. Every intermediate artifact
//! lands in a per-trial run directory; outcomes aggregate into a funnel.

pub mod cli;
pub mod config;
pub mod extract;
pub mod gateway;
pub mod genlint;
pub mod pipeline;
pub mod prompts;
pub mod sandbox;
pub mod store;

pub use extract::{extract, Extraction, GeneratedScript};
pub use gateway::{ChatRequest, ChatResponse, Gateway, GatewayError, Transcript};
pub use genlint::{lint, LintFinding, Linter, Rule, Severity};
pub use pipeline::{
    classify_outcome, OutcomeFlags, Pipeline, PipelineOptions, ResearchProblem, Stage,
    TrialError, TrialRecord,
};
pub use prompts::{default_templates, render, PromptTemplate, SlotBindings, TemplateId, TemplateSet};
pub use sandbox::{ExecLimits, ExecutionResult, Phase, Sandbox, Secret};
pub use store::{aggregate, FunnelStats, TrialDir};

/// JSON keys whose values differ between otherwise identical runs.
pub const VOLATILE_KEYS: &[&str] = &["produced_at", "trial_id", "duration", "duration_s"];

/// Blanks [`VOLATILE_KEYS`] anywhere in `value`.
pub fn normalize_volatile(value: &mut serde_json::Value) {
    match value {
        serde_json::Value::Object(map) => {
            for (key, v) in map.iter_mut() {
                if VOLATILE_KEYS.contains(&key.as_str()) {
                    *v = serde_json::Value::Null;
                } else {
                    normalize_volatile(v);
                }
            }
        }
        serde_json::Value::Array(items) => items.iter_mut().for_each(normalize_volatile),
        _ => {}
    }
}

//! Stage prompt templates.
//!
//! A template body marks insertion points as `{slot_name}`. Only names from
//! the closed [`Slot`] set are markers; any other brace text, including
//! `{}` or `{x}` inside code samples, is left alone. Bound values are
//! inserted verbatim and never re-scanned.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TemplateId {
    HypCandidates,
    HypSelect,
    HypReform,
    PlanDesign,
    CodeGen,
    InstrFollow,
    PkgInstall,
    CodeRepair,
}

impl TemplateId {
    pub const ALL: [TemplateId; 8] = [
        TemplateId::HypCandidates,
        TemplateId::HypSelect,
        TemplateId::HypReform,
        TemplateId::PlanDesign,
        TemplateId::CodeGen,
        TemplateId::InstrFollow,
        TemplateId::PkgInstall,
        TemplateId::CodeRepair,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::HypCandidates => "HYP_CANDIDATES",
            TemplateId::HypSelect => "HYP_SELECT",
            TemplateId::HypReform => "HYP_REFORM",
            TemplateId::PlanDesign => "PLAN_DESIGN",
            TemplateId::CodeGen => "CODE_GEN",
            TemplateId::InstrFollow => "INSTR_FOLLOW",
            TemplateId::PkgInstall => "PKG_INSTALL",
            TemplateId::CodeRepair => "CODE_REPAIR",
        }
    }

    pub fn file_name(self) -> String {
        format!("{}.prompt", self.as_str())
    }

    fn default_body(self) -> &'static str {
        match self {
            TemplateId::HypCandidates => include_str!("../../../templates/HYP_CANDIDATES.prompt"),
            TemplateId::HypSelect => include_str!("../../../templates/HYP_SELECT.prompt"),
            TemplateId::HypReform => include_str!("../../../templates/HYP_REFORM.prompt"),
            TemplateId::PlanDesign => include_str!("../../../templates/PLAN_DESIGN.prompt"),
            TemplateId::CodeGen => include_str!("../../../templates/CODE_GEN.prompt"),
            TemplateId::InstrFollow => include_str!("../../../templates/INSTR_FOLLOW.prompt"),
            TemplateId::PkgInstall => include_str!("../../../templates/PKG_INSTALL.prompt"),
            TemplateId::CodeRepair => include_str!("../../../templates/CODE_REPAIR.prompt"),
        }
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Slot {
    Problem,
    Hypotheses,
    Hypothesis,
    RepresentationOfHypothesis,
    VerificationPlan,
    VerificationCode,
    ErrorMessage,
}

impl Slot {
    pub const ALL: [Slot; 7] = [
        Slot::Problem,
        Slot::Hypotheses,
        Slot::Hypothesis,
        Slot::RepresentationOfHypothesis,
        Slot::VerificationPlan,
        Slot::VerificationCode,
        Slot::ErrorMessage,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Slot::Problem => "problem",
            Slot::Hypotheses => "hypotheses",
            Slot::Hypothesis => "hypothesis",
            Slot::RepresentationOfHypothesis => "representation_of_hypothesis",
            Slot::VerificationPlan => "verification_plan",
            Slot::VerificationCode => "verification_code",
            Slot::ErrorMessage => "error_message",
        }
    }

    pub fn marker(self) -> String {
        format!("{{{}}}", self.as_str())
    }
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Slot {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Slot::ALL.into_iter().find(|slot| slot.as_str() == s).ok_or(())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("missing binding for slot {{{0}}}")]
    MissingSlot(Slot),
    #[error("binding {{{0}}} is not used by the template")]
    UnknownSlot(Slot),
    #[error("binding {{{0}}} is empty")]
    EmptyBinding(Slot),
    #[error("template file {path}: {message}")]
    Load { path: PathBuf, message: String },
}

/// One piece of a parsed template body.
#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Text(String),
    Marker(Slot),
}

fn parse_body(body: &str) -> Vec<Segment> {
    let mut segments = Vec::new();
    let mut text = String::new();
    let mut rest = body;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        let slot = after
            .find('}')
            .and_then(|close| after[..close].parse::<Slot>().ok().map(|s| (s, close)));
        match slot {
            Some((slot, close)) => {
                text.push_str(&rest[..open]);
                if !text.is_empty() {
                    segments.push(Segment::Text(std::mem::take(&mut text)));
                }
                segments.push(Segment::Marker(slot));
                rest = &after[close + 1..];
            }
            None => {
                text.push_str(&rest[..=open]);
                rest = after;
            }
        }
    }
    text.push_str(rest);
    if !text.is_empty() {
        segments.push(Segment::Text(text));
    }
    segments
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub id: TemplateId,
    body: String,
    segments: Vec<Segment>,
    required_slots: BTreeSet<Slot>,
}

impl PromptTemplate {
    pub fn new(id: TemplateId, body: impl Into<String>) -> Self {
        let body = body.into();
        let segments = parse_body(&body);
        let required_slots = segments
            .iter()
            .filter_map(|s| match s {
                Segment::Marker(slot) => Some(*slot),
                Segment::Text(_) => None,
            })
            .collect();
        Self {
            id,
            body,
            segments,
            required_slots,
        }
    }

    pub fn body(&self) -> &str {
        &self.body
    }

    pub fn required_slots(&self) -> &BTreeSet<Slot> {
        &self.required_slots
    }

    /// Same template with the research problem prepended as context.
    pub fn with_problem_context(&self) -> Self {
        if self.required_slots.contains(&Slot::Problem) {
            return self.clone();
        }
        Self::new(
            self.id,
            format!("Research problem:\n{}\n\n{}", Slot::Problem.marker(), self.body),
        )
    }
}

/// Slot values for one render call. Values must be non-blank.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SlotBindings(BTreeMap<Slot, String>);

impl SlotBindings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bind(mut self, slot: Slot, value: impl Into<String>) -> Result<Self, PromptError> {
        self.insert(slot, value)?;
        Ok(self)
    }

    pub fn insert(&mut self, slot: Slot, value: impl Into<String>) -> Result<(), PromptError> {
        let value = value.into();
        if value.trim().is_empty() {
            return Err(PromptError::EmptyBinding(slot));
        }
        self.0.insert(slot, value);
        Ok(())
    }

    pub fn get(&self, slot: Slot) -> Option<&str> {
        self.0.get(&slot).map(String::as_str)
    }

    pub fn slots(&self) -> impl Iterator<Item = Slot> + '_ {
        self.0.keys().copied()
    }
}

pub fn render(template: &PromptTemplate, bindings: &SlotBindings) -> Result<String, PromptError> {
    if let Some(slot) = template
        .required_slots
        .iter()
        .find(|s| bindings.get(**s).is_none())
    {
        return Err(PromptError::MissingSlot(*slot));
    }
    if let Some(slot) = bindings.slots().find(|s| !template.required_slots.contains(s)) {
        return Err(PromptError::UnknownSlot(slot));
    }
    let mut out = String::with_capacity(template.body.len());
    for segment in &template.segments {
        match segment {
            Segment::Text(t) => out.push_str(t),
            Segment::Marker(slot) => out.push_str(bindings.get(*slot).expect("checked above")),
        }
    }
    Ok(out)
}

/// All eight stage templates, keyed by id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet(BTreeMap<TemplateId, PromptTemplate>);

impl TemplateSet {
    pub fn get(&self, id: TemplateId) -> &PromptTemplate {
        self.0.get(&id).expect("template sets always hold every id")
    }

    pub fn iter(&self) -> impl Iterator<Item = &PromptTemplate> {
        self.0.values()
    }

    /// Loads `<ID>.prompt` for every id from `dir`. Every file must exist.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self, PromptError> {
        let dir = dir.as_ref();
        let mut map = BTreeMap::new();
        for id in TemplateId::ALL {
            let path = dir.join(id.file_name());
            let body = std::fs::read_to_string(&path).map_err(|e| PromptError::Load {
                path: path.clone(),
                message: e.to_string(),
            })?;
            map.insert(id, PromptTemplate::new(id, body));
        }
        Ok(Self(map))
    }
}

impl Default for TemplateSet {
    fn default() -> Self {
        default_templates()
    }
}

pub fn default_templates() -> TemplateSet {
    TemplateSet(
        TemplateId::ALL
            .into_iter()
            .map(|id| (id, PromptTemplate::new(id, id.default_body())))
            .collect(),
    )
}

//! Pulls script source out of free-form model output.
//!
//! A fence opens on a line whose trimmed text starts with three backticks
//! (anything after them is the language tag) and closes on a line whose
//! trimmed text is only backticks, at least three. An unclosed final fence
//! runs to the end of the output. Each block contributes its lines, every
//! line newline-terminated; blocks are joined with one blank line. Output
//! with no fence at all is taken whole.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pipeline::Stage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Extraction {
    Fenced,
    WholeText,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedScript {
    pub source: String,
    pub origin_stage: Stage,
    pub extraction: Extraction,
    pub block_count: usize,
    /// Language tag of each fenced block, in order; empty string when untagged.
    pub languages: Vec<String>,
}

impl GeneratedScript {
    /// Wraps already-extracted source, e.g. a script loaded from disk.
    pub fn from_source(source: impl Into<String>, origin_stage: Stage) -> Self {
        Self {
            source: source.into(),
            origin_stage,
            extraction: Extraction::WholeText,
            block_count: 0,
            languages: Vec::new(),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ExtractError {
    #[error("model output contains no code")]
    EmptyExtraction,
}

fn fence_open(line: &str) -> Option<&str> {
    line.trim_start().strip_prefix("```").map(|tag| tag.trim())
}

fn fence_close(line: &str) -> bool {
    let t = line.trim();
    t.len() >= 3 && t.bytes().all(|b| b == b'`')
}

struct Block<'a> {
    language: &'a str,
    lines: Vec<&'a str>,
}

fn fenced_blocks(output: &str) -> Vec<Block<'_>> {
    let mut blocks = Vec::new();
    let mut current: Option<Block> = None;
    for line in output.lines() {
        match current.as_mut() {
            Some(_) if fence_close(line) => blocks.push(current.take().expect("open block")),
            Some(block) => block.lines.push(line),
            None => {
                if let Some(language) = fence_open(line) {
                    current = Some(Block {
                        language,
                        lines: Vec::new(),
                    });
                }
            }
        }
    }
    blocks.extend(current);
    blocks
}

pub fn extract(model_output: &str, origin_stage: Stage) -> Result<GeneratedScript, ExtractError> {
    if model_output.trim().is_empty() {
        return Err(ExtractError::EmptyExtraction);
    }
    let blocks = fenced_blocks(model_output);
    if blocks.is_empty() {
        return Ok(GeneratedScript {
            source: model_output.to_string(),
            origin_stage,
            extraction: Extraction::WholeText,
            block_count: 0,
            languages: Vec::new(),
        });
    }
    let source = blocks
        .iter()
        .map(|b| b.lines.iter().map(|l| format!("{l}\n")).collect::<String>())
        .collect::<Vec<_>>()
        .join("\n");
    if source.trim().is_empty() {
        return Err(ExtractError::EmptyExtraction);
    }
    Ok(GeneratedScript {
        source,
        origin_stage,
        extraction: Extraction::Fenced,
        block_count: blocks.len(),
        languages: blocks.iter().map(|b| b.language.to_string()).collect(),
    })
}

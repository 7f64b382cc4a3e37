#![allow(dead_code)]

pub mod fence;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use autoresearch::config::Config;
use autoresearch::gateway::{load_transcript, Gateway};
use autoresearch::pipeline::{Pipeline, TrialError, TrialRecord};
use autoresearch::sandbox::{Executor, Secret};
use autoresearch::ResearchProblem;

pub fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn fixture(rel: &str) -> PathBuf {
    repo_root().join("fixtures").join(rel)
}

pub fn fixture_config(dir: &str, outputs: &Path) -> Config {
    let mut config = Config::load(fixture(dir).join("autoresearch.toml")).expect("fixture config");
    config.outputs_dir = outputs.to_path_buf();
    config
}

pub fn pipeline(dir: &str, outputs: &Path, key: Option<&str>) -> Pipeline {
    fixture_config(dir, outputs)
        .pipeline(key.map(Secret::new))
        .expect("fixture pipeline")
}

pub fn pipeline_with(dir: &str, outputs: &Path, executor: std::sync::Arc<dyn Executor>) -> Pipeline {
    fixture_config(dir, outputs)
        .pipeline_with(executor, None)
        .expect("fixture pipeline")
}

pub fn replay(transcript: &Path) -> Gateway {
    Gateway::replay(load_transcript(transcript).expect("transcript loads"))
}

pub fn run_replay(p: &Pipeline, transcript: &Path) -> Result<TrialRecord, TrialError> {
    p.run_trial(&ResearchProblem::bundled(), &mut replay(transcript))
}

pub fn trial_dirs(outputs: &Path) -> Vec<PathBuf> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(outputs)
        .map(|rd| rd.filter_map(Result::ok).map(|e| e.path()).filter(|p| p.is_dir()).collect())
        .unwrap_or_default();
    dirs.sort();
    dirs
}

/// Every regular file under `root`, relative path to bytes.
pub fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).expect("readable dir").flatten() {
            let path = entry.path();
            let ft = entry.file_type().expect("file type");
            if ft.is_dir() {
                stack.push(path);
            } else if ft.is_file() {
                let rel = path.strip_prefix(root).expect("under root").to_path_buf();
                out.insert(rel, std::fs::read(&path).expect("readable file"));
            }
        }
    }
    out
}

pub fn contains_bytes(haystack: &[u8], needle: &[u8]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}

/// Files under `root` whose bytes contain `needle`.
pub fn files_containing(root: &Path, needle: &[u8]) -> Vec<PathBuf> {
    tree(root)
        .into_iter()
        .filter(|(_, bytes)| contains_bytes(bytes, needle))
        .map(|(p, _)| p)
        .collect()
}

/// The run directory with JSON files' volatile fields blanked.
pub fn comparable_tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    tree(root)
        .into_iter()
        .map(|(path, bytes)| {
            if path.extension().is_some_and(|x| x == "json") {
                let mut value: serde_json::Value =
                    serde_json::from_slice(&bytes).expect("artifact JSON parses");
                autoresearch::normalize_volatile(&mut value);
                (path, serde_json::to_vec_pretty(&value).expect("serializes"))
            } else {
                (path, bytes)
            }
        })
        .collect()
}

pub fn python_available() -> bool {
    std::process::Command::new("python3")
        .arg("--version")
        .output()
        .is_ok_and(|o| o.status.success())
}

//! Regenerates replay transcripts from canned model responses.
//!
//! ```text
//! cargo run --example author_fixtures -- fixtures/worked_example fixtures/batch_50 ...
//! ```
//!
//! Each fixture directory holds an `autoresearch.toml` and a `responses/`
//! directory. Every `responses/<name>.json` (an array of strings) or
//! `responses/<name>/` (text files, taken in name order) becomes
//! `<name>.jsonl` next to the config. The trial really runs, with the
//! configured executor, so repair prompts carry the real error output.
//! Each new transcript is replayed once to check it reproduces.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use autoresearch::config::Config;
use autoresearch::gateway::{load_transcript, Gateway, TranscriptRecorder};
use autoresearch::ResearchProblem;

fn responses(dir: &Path) -> Result<Vec<(String, Vec<String>)>, String> {
    let root = dir.join("responses");
    let mut entries: Vec<PathBuf> = std::fs::read_dir(&root)
        .map_err(|e| format!("{}: {e}", root.display()))?
        .filter_map(Result::ok)
        .map(|e| e.path())
        .collect();
    entries.sort();
    let mut out = Vec::new();
    for path in entries {
        let name = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| format!("bad name {}", path.display()))?
            .to_string();
        let texts = if path.is_dir() {
            let mut files: Vec<PathBuf> = std::fs::read_dir(&path)
                .map_err(|e| e.to_string())?
                .filter_map(Result::ok)
                .map(|e| e.path())
                .filter(|p| p.is_file())
                .collect();
            files.sort();
            files
                .iter()
                .map(|f| std::fs::read_to_string(f).map_err(|e| format!("{}: {e}", f.display())))
                .collect::<Result<Vec<_>, _>>()?
        } else if path.extension().is_some_and(|x| x == "json") {
            let text = std::fs::read_to_string(&path).map_err(|e| e.to_string())?;
            serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?
        } else {
            continue;
        };
        out.push((name, texts));
    }
    Ok(out)
}

fn author(dir: &Path) -> Result<(), String> {
    let mut config = Config::load(dir.join("autoresearch.toml")).map_err(|e| e.to_string())?;
    let scratch = tempfile::tempdir().map_err(|e| e.to_string())?;
    config.outputs_dir = scratch.path().to_path_buf();
    let pipeline = config.pipeline(None).map_err(|e| e.to_string())?;
    let problem = match &config.problem_path {
        Some(p) => ResearchProblem::load(p).map_err(|e| e.to_string())?,
        None => ResearchProblem::bundled(),
    };
    for (name, texts) in responses(dir)? {
        let target = dir.join(format!("{name}.jsonl"));
        let recorder = TranscriptRecorder::create(&target).map_err(|e| e.to_string())?;
        let mut gateway = Gateway::scripted(texts).with_recorder(recorder);
        let authored = match pipeline.run_trial(&problem, &mut gateway) {
            Ok(record) => record,
            Err(err) => *err.record,
        };
        drop(gateway);

        let transcript = load_transcript(&target).map_err(|e| e.to_string())?;
        let mut replay = Gateway::replay(transcript);
        let replayed = match pipeline.run_trial(&problem, &mut replay) {
            Ok(record) => record,
            Err(err) => *err.record,
        };
        let (a, b) = (authored.canonical_json(), replayed.canonical_json());
        if a != b {
            let (x, y) = a
                .lines()
                .zip(b.lines())
                .find(|(x, y)| x != y)
                .unwrap_or(("<end>", "<end>"));
            return Err(format!(
                "{}: replay diverges from the authored run\n  authored: {x}\n  replayed: {y}",
                target.display()
            ));
        }
        let o = authored.outcome;
        println!(
            "{}: feasible={} clean={} install={} verify={} e2e={} runs={}{}",
            target.display(),
            o.hypothesis_feasible,
            o.code_lint_clean,
            o.install_ok,
            o.verify_executable,
            o.end_to_end,
            authored.executions.len(),
            authored
                .failure
                .as_deref()
                .map(|f| format!(" failure={f}"))
                .unwrap_or_default(),
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    let dirs: Vec<PathBuf> = std::env::args_os().skip(1).map(PathBuf::from).collect();
    if dirs.is_empty() {
        eprintln!("usage: author_fixtures <fixture dir>...");
        return ExitCode::from(2);
    }
    for dir in &dirs {
        if let Err(e) = author(dir) {
            eprintln!("{}: {e}", dir.display());
            return ExitCode::FAILURE;
        }
    }
    ExitCode::SUCCESS
}

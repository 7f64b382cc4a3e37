//! Acceptance checks, one PASS/FAIL line each. Runs without the external
//! supervisor: trials execute natively against the stub modules in
//! `fixtures/stubs`, or through the scripted executor.

mod common;

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use autoresearch::config::CONFIG_ENV;
use autoresearch::gateway::API_KEY_ENV;
use autoresearch::genlint::{Linter, Rule, Severity};
use autoresearch::pipeline::Stage;
use autoresearch::store::{OUTCOME_FILE, RECORD_FILE};
use autoresearch::extract::{extract, ExtractError};
use common::fence::{fence_doc, lines_in_order, Expected};
use proptest::test_runner::{Config as RunnerConfig, RngAlgorithm, TestCaseError, TestRng, TestRunner};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn cli(cwd: &Path, key: Option<&str>, args: &[&str]) -> Result<std::process::Output, String> {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_autoresearch"));
    cmd.args(args).current_dir(cwd).env_remove(CONFIG_ENV).env_remove(API_KEY_ENV);
    if let Some(key) = key {
        cmd.env(API_KEY_ENV, key);
    }
    cmd.output().map_err(|e| format!("spawn: {e}"))
}

fn fixture(rel: &str) -> String {
    common::fixture(rel).display().to_string()
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    if elapsed < limit {
        Ok(())
    } else {
        Err(format!("took {elapsed:.2?}, limit {limit:?}"))
    }
}

fn funnel() -> Check {
    let cwd = tempfile::tempdir().map_err(|e| e.to_string())?;
    let start = Instant::now();
    let out = cli(cwd.path(), None, &["report", "--flags", &fixture("funnel_50.json")])?;
    let elapsed = start.elapsed();
    ensure!(out.status.success(), "exit {:?}", out.status.code());
    let stdout = String::from_utf8_lossy(&out.stdout);
    let json = stdout.split("\n\n").next().unwrap_or_default();
    let stats: serde_json::Value = serde_json::from_str(json).map_err(|e| e.to_string())?;
    let expected = [
        ("trials", 50),
        ("hypothesis_feasible", 46),
        ("verify_executable", 17),
        ("end_to_end", 13),
    ];
    for (key, want) in expected {
        ensure!(stats[key] == want, "{key} = {}, want {want}", stats[key]);
    }
    ensure!(stats["end_to_end_rate"] == 0.26, "rate = {}", stats["end_to_end_rate"]);
    within(elapsed, Duration::from_secs(1))?;
    Ok(format!("50/46/17/13, rate 0.26 in {elapsed:.2?}"))
}

fn end_to_end_replay() -> Check {
    let cwd = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = fixture("worked_example/autoresearch.toml");
    let transcript = fixture("worked_example/transcript.jsonl");
    let start = Instant::now();
    let out = cli(
        cwd.path(),
        None,
        &["--config", &config, "--outputs", "out", "run", "--backend", "replay", "--transcript", &transcript],
    )?;
    let elapsed = start.elapsed();
    ensure!(out.status.success(), "exit {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr));
    let trials = common::trial_dirs(&cwd.path().join("out"));
    ensure!(trials.len() == 1, "{} trial dirs", trials.len());
    let dir = &trials[0];
    let hypothesis = std::fs::read_to_string(dir.join("hypothesis.txt")).map_err(|e| e.to_string())?;
    ensure!(hypothesis.contains("Provide a one-word answer"), "hypothesis lacks the phrase");
    let code = std::fs::read(dir.join("verification_code.py")).map_err(|e| e.to_string())?;
    let accepted = std::fs::read(common::fixture("accepted_verify.py")).map_err(|e| e.to_string())?;
    ensure!(code == accepted, "verification_code.py differs from accepted_verify.py");
    let outcome: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.join(OUTCOME_FILE)).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    ensure!(outcome["verify_executable"] == true, "verify_executable = {}", outcome["verify_executable"]);
    within(elapsed, Duration::from_secs(30))?;
    Ok(format!("accepted script reproduced, verify_executable=true in {elapsed:.2?}"))
}

fn repair_policy() -> Check {
    let mut notes = Vec::new();
    for (name, repaired_ok) in [("repair_success", true), ("repair_fail", false)] {
        let out = tempfile::tempdir().map_err(|e| e.to_string())?;
        let p = common::pipeline(name, out.path(), None);
        let record = common::run_replay(&p, &common::fixture(&format!("{name}/transcript.jsonl")))
            .map_err(|e| format!("{name}: {e}"))?;
        let execs = record.executions.len();
        let repairs = record.stage_count(Stage::Repair);
        ensure!(execs == 2, "{name}: {execs} executions");
        ensure!(repairs == 1, "{name}: {repairs} repair stages");
        ensure!(record.executions[0].exit_code != 0, "{name}: first run succeeded");
        ensure!(
            (record.executions[1].exit_code == 0) == repaired_ok,
            "{name}: re-execution exit {}",
            record.executions[1].exit_code
        );
        ensure!(
            record.stages.last().map(|s| s.stage) == Some(Stage::Reexecution),
            "{name}: trial continued after re-execution"
        );
        notes.push(format!("{name} e2e={}", record.outcome.end_to_end));
    }
    Ok(format!("2 executions and 1 repair each ({})", notes.join(", ")))
}

fn lint_corpus() -> Check {
    let cases: [(&str, Option<Rule>); 6] = [
        ("ellipsis_placeholder.py", Some(Rule::EllipsisPlaceholder)),
        ("stub_return.py", Some(Rule::StubReturn)),
        ("comment_only_block.py", Some(Rule::CommentOnlyBlock)),
        ("hardcoded_api_key.py", Some(Rule::HardcodedApiKey)),
        ("ttest_no_prereq.py", Some(Rule::StatTestPrereq)),
        ("accepted_verify.py", None),
    ];
    let start = Instant::now();
    let linter = Linter::default();
    let mut passed = 0;
    let mut failures = Vec::new();
    for (file, expected) in cases {
        let source = std::fs::read_to_string(common::fixture(file)).map_err(|e| format!("{file}: {e}"))?;
        let findings = linter.lint_source(&source, &[]);
        let ok = match expected {
            Some(rule) => !findings.is_empty() && findings.iter().all(|f| f.rule == rule),
            None => findings.iter().all(|f| f.severity != Severity::Error),
        };
        if ok {
            passed += 1;
        } else {
            let rules: Vec<&str> = findings.iter().map(|f| f.rule.as_str()).collect();
            failures.push(format!("{file}: {rules:?}"));
        }
    }
    let elapsed = start.elapsed();
    ensure!(failures.is_empty(), "{passed}/6: {}", failures.join("; "));
    within(elapsed, Duration::from_secs(1))?;
    Ok(format!("6/6 in {elapsed:.2?}"))
}

fn secret_hygiene() -> Check {
    let sentinel = "sk-ACCEPT-7f3e9c1d-SENTINEL";
    let cwd = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut trials = 0;
    for name in ["worked_example", "repair_success", "repair_fail"] {
        let config = fixture(&format!("{name}/autoresearch.toml"));
        let transcript = fixture(&format!("{name}/transcript.jsonl"));
        let out = cli(
            cwd.path(),
            Some(sentinel),
            &["--config", &config, "--outputs", "out", "replay", "--transcript", &transcript],
        )?;
        ensure!(out.status.code() == Some(0), "{name}: exit {:?}", out.status.code());
        trials += 1;
    }
    let config = fixture("batch_50/autoresearch.toml");
    let fixtures = fixture("batch_50");
    let out = cli(
        cwd.path(),
        Some(sentinel),
        &[
            "--config", &config, "--outputs", "out", "batch", "--n", "50", "--parallel", "8",
            "--backend", "replay", "--fixtures", &fixtures,
        ],
    )?;
    ensure!(out.status.code() == Some(0), "batch: exit {:?}", out.status.code());
    trials += 50;
    let root = cwd.path().join("out");
    ensure!(common::trial_dirs(&root).len() == trials, "expected {trials} trial dirs");
    let files = common::tree(&root).len();
    let hits = common::files_containing(&root, sentinel.as_bytes());
    ensure!(hits.is_empty(), "sentinel found in {hits:?}");
    Ok(format!("0 occurrences across {trials} trials, {files} files"))
}

fn determinism() -> Check {
    let mut compared = 0;
    for name in ["worked_example", "repair_success", "repair_fail"] {
        let transcript = common::fixture(&format!("{name}/transcript.jsonl"));
        let mut trees = Vec::new();
        for _ in 0..2 {
            let out = tempfile::tempdir().map_err(|e| e.to_string())?;
            let p = common::pipeline(name, out.path(), None);
            let record = common::run_replay(&p, &transcript).map_err(|e| format!("{name}: {e}"))?;
            trees.push(common::comparable_tree(&out.path().join(&record.trial_id)));
        }
        let (a, b) = (&trees[0], &trees[1]);
        let names_a: Vec<_> = a.keys().collect();
        let names_b: Vec<_> = b.keys().collect();
        ensure!(names_a == names_b, "{name}: file sets differ");
        if let Some((path, _)) = a.iter().find(|(path, bytes)| b.get(*path) != Some(bytes)) {
            return Err(format!("{name}: {} differs", path.display()));
        }
        ensure!(a.contains_key(Path::new(RECORD_FILE)), "{name}: no record");
        compared += a.len();
    }
    Ok(format!("{compared} artifacts identical across 3 fixtures"))
}

fn extractor() -> Check {
    let config = RunnerConfig {
        cases: 200,
        failure_persistence: None,
        ..RunnerConfig::default()
    };
    let mut runner = TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    let fenced = std::cell::Cell::new(0usize);
    let result = runner.run(&fence_doc(), |doc| {
        let text = doc.render();
        let got = extract(&text, Stage::CodeGen);
        let fail = |m: String| Err(TestCaseError::fail(m));
        match (doc.expected(), got) {
            (Expected::Empty, Err(ExtractError::EmptyExtraction)) => Ok(()),
            (Expected::Whole(whole), Ok(s)) if s.source == whole => Ok(()),
            (Expected::Fenced { source, languages }, Ok(s)) => {
                if s.source != source || s.languages != languages {
                    return fail(format!("oracle mismatch on {text:?}"));
                }
                if !lines_in_order(&s.source, &text) {
                    return fail(format!("substring property broken on {text:?}"));
                }
                fenced.set(fenced.get() + 1);
                Ok(())
            }
            (want, got) => fail(format!("{text:?}: want {want:?}, got {got:?}")),
        }
    });
    result.map_err(|e| e.to_string())?;
    Ok(format!("200/200 cases ({} fenced)", fenced.get()))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 7] = [
        ("funnel reproduction", funnel),
        ("end-to-end replay", end_to_end_replay),
        ("repair policy", repair_policy),
        ("lint corpus", lint_corpus),
        ("secret hygiene", secret_hygiene),
        ("determinism", determinism),
        ("extractor properties", extractor),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match check() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(reason) => {
                failed += 1;
                println!("FAIL  {name}: {reason}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

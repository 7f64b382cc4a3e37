mod common;

use std::path::Path;
use std::sync::{Arc, Mutex};

use autoresearch::gateway::{
    load_transcript, ChatBackend, ChatRequest, ChatResponse, FinishReason, Gateway, GatewayError,
    ScriptedBackend, TranscriptRecorder, Usage,
};
use autoresearch::genlint::Rule;
use autoresearch::pipeline::{
    Pipeline, PipelineOptions, ResearchProblem, Stage, StageCause, TrialErrorKind,
};
use autoresearch::prompts::default_templates;
use autoresearch::sandbox::stub::{ScriptedExecutor, StubRun};
use autoresearch::sandbox::{Phase, Sandbox, Secret};
use autoresearch::store::{self, RECORD_FILE};
use proptest::prelude::*;

const MODEL_STAGES: [Stage; 7] = [
    Stage::Candidates,
    Stage::Selection,
    Stage::Reformulation,
    Stage::PlanDesign,
    Stage::CodeGen,
    Stage::InstrFollow,
    Stage::PkgInstall,
];

fn stub_pipeline(outputs: &Path, runs: Vec<StubRun>) -> (Pipeline, Arc<ScriptedExecutor>) {
    let exec = Arc::new(ScriptedExecutor::new(runs));
    let mut sandbox = Sandbox::new(exec.clone());
    sandbox.isolated_env = false;
    let options = PipelineOptions {
        outputs_dir: outputs.to_path_buf(),
        ..PipelineOptions::default()
    };
    (Pipeline::new(default_templates(), options, sandbox), exec)
}

/// Serves scripted responses and keeps every prompt it was sent.
struct Spy {
    inner: ScriptedBackend,
    prompts: Arc<Mutex<Vec<String>>>,
}

impl ChatBackend for Spy {
    fn send(&mut self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        self.prompts
            .lock()
            .unwrap()
            .push(request.messages[0].content.clone());
        self.inner.send(request)
    }
}

fn spy(responses: Vec<String>) -> (Gateway, Arc<Mutex<Vec<String>>>) {
    let prompts = Arc::new(Mutex::new(Vec::new()));
    let backend = Spy {
        inner: ScriptedBackend::new(responses),
        prompts: prompts.clone(),
    };
    (Gateway::new(backend), prompts)
}

fn basic_responses(verify: &str) -> Vec<String> {
    vec![
        "1. Ask for one word.\n2. Few-shot.".into(),
        "Hypothesis: ask for one word.".into(),
        "H: W(M(g(q))) <= W(M(q))".into(),
        "1. Build prompts.\n2. Compare lengths.".into(),
        format!("```python\n{verify}```\n"),
        format!("```python\n{verify}```\n"),
        "```python\nprint('installed')\n```\n".into(),
    ]
}

#[test]
fn worked_example_replay_reproduces_accepted_script() {
    let out = tempfile::tempdir().unwrap();
    let p = common::pipeline("worked_example", out.path(), None);
    let record = common::run_replay(&p, &common::fixture("worked_example/transcript.jsonl")).unwrap();

    let stages: Vec<Stage> = record.stages.iter().map(|s| s.stage).collect();
    let mut expected = MODEL_STAGES.to_vec();
    expected.push(Stage::Execution);
    assert_eq!(stages, expected);
    assert!(record.stage(Stage::Selection).unwrap().content.contains("Provide a one-word answer"));

    let dir = out.path().join(&record.trial_id);
    let accepted = std::fs::read(common::fixture("accepted_verify.py")).unwrap();
    assert_eq!(std::fs::read(dir.join("verification_code.py")).unwrap(), accepted);
    assert!(std::fs::read_to_string(dir.join("verification_code_initial.py"))
        .unwrap()
        .contains("your-api-key"));
    assert_eq!(record.executions.len(), 1);
    assert_eq!(record.executions[0].stdout, "The hypothesis is supported.\n");
    assert_eq!(record.executions[0].artifacts, vec!["report.csv".to_string()]);
    assert!(dir.join("workspace/report.csv").is_file());
    assert!(record.outcome.end_to_end);
    assert_eq!(record.lint.verify_initial.iter().filter(|f| f.rule == Rule::HardcodedApiKey).count(), 1);
    assert!(record.lint.verify.is_empty());
}

#[test]
fn failed_verify_gets_exactly_one_repair_that_succeeds() {
    let out = tempfile::tempdir().unwrap();
    let p = common::pipeline("repair_success", out.path(), None);
    let record = common::run_replay(&p, &common::fixture("repair_success/transcript.jsonl")).unwrap();
    assert_eq!(record.executions.len(), 2);
    assert_eq!(record.executions[0].phase, Phase::Verify);
    assert_ne!(record.executions[0].exit_code, 0);
    assert_eq!(record.executions[1].phase, Phase::VerifyRepaired);
    assert_eq!(record.executions[1].exit_code, 0);
    assert_eq!(record.stage_count(Stage::Repair), 1);
    assert_eq!(record.stage_count(Stage::Reexecution), 1);
    assert!(record.outcome.verify_executable && record.outcome.end_to_end);

    let dir = out.path().join(&record.trial_id);
    let original = std::fs::read_to_string(dir.join("verification_code.py")).unwrap();
    let updated = std::fs::read_to_string(dir.join("verification_code_updated.py")).unwrap();
    assert_ne!(original, updated);
    assert_eq!(Some(original.as_str()), record.scripts.verify.as_ref().map(|s| s.source.as_str()));
}

#[test]
fn second_failure_terminates_without_another_repair() {
    let out = tempfile::tempdir().unwrap();
    let p = common::pipeline("repair_fail", out.path(), None);
    let record = common::run_replay(&p, &common::fixture("repair_fail/transcript.jsonl")).unwrap();
    assert_eq!(record.executions.len(), 2);
    assert!(record.executions.iter().all(|e| e.exit_code != 0));
    assert_eq!(record.stage_count(Stage::Repair), 1);
    assert!(!record.outcome.verify_executable);
    assert!(!record.outcome.end_to_end);
    assert_eq!(record.stages.last().unwrap().stage, Stage::Reexecution);
}

#[test]
fn repair_can_be_disabled() {
    let out = tempfile::tempdir().unwrap();
    let mut p = common::pipeline("repair_fail", out.path(), None);
    p.options.repair_enabled = false;
    let record = common::run_replay(&p, &common::fixture("repair_fail/transcript.jsonl")).unwrap();
    assert_eq!(record.executions.len(), 1);
    assert_eq!(record.stage_count(Stage::Repair), 0);
}

#[test]
fn repair_prompt_carries_the_error_tail() {
    let out = tempfile::tempdir().unwrap();
    let (p, _) = stub_pipeline(
        out.path(),
        vec![
            StubRun::ok("installed"),
            StubRun::fail(1, "Traceback (most recent call last):\nKeyError: 'R2'\n"),
            StubRun::ok("fixed"),
        ],
    );
    let mut responses = basic_responses("print(1)\n");
    responses.push("```python\nprint(2)\n```".into());
    let (mut gateway, prompts) = spy(responses);
    let record = p.run_trial(&ResearchProblem::bundled(), &mut gateway).unwrap();
    let prompts = prompts.lock().unwrap();
    assert_eq!(prompts.len(), 8);
    assert!(prompts[7].contains("KeyError: 'R2'"));
    assert!(prompts[7].contains("print(1)\n"));
    assert_eq!(record.executions.len(), 2);
}

#[test]
fn persist_before_advance_at_every_model_stage() {
    let full = load_transcript(common::fixture("worked_example/transcript.jsonl")).unwrap();
    assert_eq!(full.entries.len(), 7);
    for (cut, &failing) in MODEL_STAGES.iter().enumerate() {
        let out = tempfile::tempdir().unwrap();
        let p = common::pipeline("worked_example", out.path(), None);
        let mut truncated = full.clone();
        truncated.entries.truncate(cut);
        let err = p
            .run_trial(&ResearchProblem::bundled(), &mut Gateway::replay(truncated))
            .unwrap_err();
        match &err.kind {
            TrialErrorKind::StageFailure {
                stage,
                cause: StageCause::Gateway(GatewayError::ReplayMiss { expected, .. }),
            } => {
                assert_eq!(*stage, failing);
                assert_eq!(expected, "<exhausted>");
            }
            other => panic!("cut {cut}: unexpected {other:?}"),
        }
        for (i, stage) in MODEL_STAGES.iter().enumerate() {
            let file = err.trial_dir.join(store::stage_file(*stage).unwrap());
            assert_eq!(file.exists(), i < cut, "cut {cut}, {}", file.display());
        }
        assert_eq!(err.record.stages.len(), cut);
        let persisted: serde_json::Value =
            serde_json::from_slice(&std::fs::read(err.trial_dir.join(RECORD_FILE)).unwrap()).unwrap();
        assert!(persisted["failure"].as_str().unwrap().contains(failing.as_str()));
        assert!(!err.trial_dir.join("execution_install.json").exists());
    }
}

#[test]
fn token_limit_is_a_stage_failure() {
    struct Cut;
    impl ChatBackend for Cut {
        fn send(&mut self, _: &ChatRequest) -> Result<ChatResponse, GatewayError> {
            Ok(ChatResponse {
                content: "1. partial".into(),
                finish_reason: FinishReason::Length,
                usage: Usage::default(),
                latency_ms: 0,
            })
        }
    }
    let out = tempfile::tempdir().unwrap();
    let (p, _) = stub_pipeline(out.path(), vec![]);
    let err = p.run_trial(&ResearchProblem::bundled(), &mut Gateway::new(Cut)).unwrap_err();
    assert!(matches!(
        err.kind,
        TrialErrorKind::StageFailure {
            stage: Stage::Candidates,
            cause: StageCause::Gateway(GatewayError::TokenLimit { .. })
        }
    ));
}

#[test]
fn empty_code_output_is_extraction_failure() {
    let out = tempfile::tempdir().unwrap();
    let (p, exec) = stub_pipeline(out.path(), vec![]);
    let mut responses = basic_responses("print(1)\n");
    responses[4] = "```python\n```".into();
    let err = p
        .run_trial(&ResearchProblem::bundled(), &mut Gateway::scripted(responses))
        .unwrap_err();
    assert!(matches!(
        err.kind,
        TrialErrorKind::StageFailure {
            stage: Stage::CodeGen,
            cause: StageCause::Extraction(_)
        }
    ));
    assert!(exec.seen().is_empty());
    assert!(err.trial_dir.join("verification_plan.txt").is_file());
}

#[test]
fn key_in_generated_code_aborts_before_execution() {
    let key = "sk-SENTINEL-0042";
    let out = tempfile::tempdir().unwrap();
    let (p, exec) = stub_pipeline(out.path(), vec![]);
    let p = p.with_api_key(Some(Secret::new(key)));
    let mut responses = basic_responses("print(1)\n");
    responses[5] = format!("```python\nimport openai\nopenai.api_key = '{key}'\n```");
    let err = p
        .run_trial(&ResearchProblem::bundled(), &mut Gateway::scripted(responses))
        .unwrap_err();
    assert!(matches!(err.kind, TrialErrorKind::SecretLeak { stage: Stage::InstrFollow }));
    assert!(exec.seen().is_empty());
    assert!(!err.trial_dir.join("verification_code.py").exists());
    assert!(common::files_containing(out.path(), key.as_bytes()).is_empty());
    let lint = std::fs::read_to_string(err.trial_dir.join("lint.json")).unwrap();
    assert!(lint.contains("SECRET_LEAK"));
}

#[test]
fn key_in_prose_stage_aborts_too() {
    let key = "sk-SENTINEL-prose";
    let out = tempfile::tempdir().unwrap();
    let (p, _) = stub_pipeline(out.path(), vec![]);
    let p = p.with_api_key(Some(Secret::new(key)));
    let mut responses = basic_responses("print(1)\n");
    responses[2] = format!("Use key {key} for the model.");
    let err = p
        .run_trial(&ResearchProblem::bundled(), &mut Gateway::scripted(responses))
        .unwrap_err();
    assert!(matches!(err.kind, TrialErrorKind::SecretLeak { stage: Stage::Reformulation }));
    assert!(common::files_containing(out.path(), key.as_bytes()).is_empty());
}

#[test]
fn key_printed_or_written_at_runtime_never_reaches_disk() {
    let key = "sk-SENTINEL-runtime";
    let out = tempfile::tempdir().unwrap();
    let mut p = common::pipeline("worked_example", out.path(), Some(key));
    p.sandbox.api_key_env_names = vec!["OPENAI_API_KEY".into(), "MY_KEY".into()];
    let verify = "import os\nk = os.environ['MY_KEY']\nprint(k)\nopen('dump.txt', 'w').write(k)\n";
    let mut gateway = Gateway::scripted(basic_responses(verify));
    let record = p.run_trial(&ResearchProblem::bundled(), &mut gateway).unwrap();
    assert_eq!(record.executions[0].exit_code, 0, "{}", record.executions[0].stderr);
    assert_eq!(record.executions[0].stdout, "[REDACTED]\n");
    assert!(common::files_containing(out.path(), key.as_bytes()).is_empty());
    let dump = out.path().join(&record.trial_id).join("workspace/dump.txt");
    assert_eq!(std::fs::read_to_string(dump).unwrap(), "[REDACTED]");
}

#[test]
fn record_then_replay_is_byte_identical() {
    let work = tempfile::tempdir().unwrap();
    let first = work.path().join("first.jsonl");
    let second = work.path().join("second.jsonl");
    let (p, _) = stub_pipeline(
        &work.path().join("out"),
        [StubRun::ok("i"), StubRun::fail(1, "boom"), StubRun::ok("r")].iter().cycle().take(6).cloned().collect(),
    );
    let mut responses = basic_responses("print(1)\n");
    responses.push("```python\nprint(2)\n```".into());
    let mut gateway = Gateway::scripted(responses).with_recorder(TranscriptRecorder::create(&first).unwrap());
    let authored = p.run_trial(&ResearchProblem::bundled(), &mut gateway).unwrap();
    drop(gateway);

    let mut gateway = common::replay(&first).with_recorder(TranscriptRecorder::create(&second).unwrap());
    let replayed = p.run_trial(&ResearchProblem::bundled(), &mut gateway).unwrap();
    drop(gateway);
    assert_eq!(std::fs::read(&first).unwrap(), std::fs::read(&second).unwrap());
    assert_eq!(authored.canonical_json(), replayed.canonical_json());
    assert_ne!(authored.trial_id, replayed.trial_id);
}

#[test]
fn reformulation_sees_problem_only_when_configured() {
    for include in [false, true] {
        let out = tempfile::tempdir().unwrap();
        let (mut p, _) = stub_pipeline(out.path(), vec![]);
        p.options.reform_includes_problem = include;
        let (mut gateway, prompts) = spy(basic_responses("print(1)\n"));
        p.run_trial(&ResearchProblem::bundled(), &mut gateway).unwrap();
        let prompts = prompts.lock().unwrap();
        let problem = ResearchProblem::bundled().text;
        assert_eq!(prompts[2].contains(&problem), include);
        assert!(prompts[2].contains("Hypothesis: ask for one word."));
    }
}

fn stage_text() -> impl Strategy<Value = String> {
    // Braces and slot-like markers must pass through untouched.
    prop::collection::vec(
        prop_oneof![
            "[a-zA-Z0-9 .,:;()\\-]{1,20}",
            Just("{problem}".to_string()),
            Just("{hypothesis}".to_string()),
            Just("{{x}}".to_string()),
            Just("\n".to_string()),
        ],
        1..6,
    )
    .prop_map(|parts| format!("T{}", parts.concat()))
}

fn code_text() -> impl Strategy<Value = String> {
    "[a-z]{1,8}".prop_map(|name| format!("{name} = 1\nprint({name})\n"))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn each_prompt_contains_its_upstream_outputs(
        candidates in stage_text(),
        hypothesis in stage_text(),
        representation in stage_text(),
        plan in stage_text(),
        initial in code_text(),
        verify in code_text(),
        repaired in code_text(),
    ) {
        let out = tempfile::tempdir().unwrap();
        let (p, _) = stub_pipeline(
            out.path(),
            vec![StubRun::ok("installed"), StubRun::fail(1, "NameError: oops"), StubRun::ok("")],
        );
        let responses = vec![
            candidates.clone(),
            hypothesis.clone(),
            representation.clone(),
            plan.clone(),
            format!("```python\n{initial}```"),
            format!("```python\n{verify}```"),
            "```python\nprint('i')\n```".to_string(),
            format!("```python\n{repaired}```"),
        ];
        let (mut gateway, prompts) = spy(responses);
        let problem = ResearchProblem::bundled();
        let record = p.run_trial(&problem, &mut gateway).unwrap();
        let prompts = prompts.lock().unwrap().clone();
        prop_assert_eq!(prompts.len(), 8);
        prop_assert!(prompts[0].contains(&problem.text));
        prop_assert!(prompts[1].contains(&problem.text) && prompts[1].contains(&candidates));
        prop_assert!(prompts[2].contains(&hypothesis));
        prop_assert!(prompts[3].contains(&problem.text) && prompts[3].contains(&representation));
        prop_assert!(prompts[4].contains(&plan));
        prop_assert!(prompts[5].contains(&initial));
        prop_assert!(prompts[6].contains(&verify));
        prop_assert!(prompts[7].contains(&verify) && prompts[7].contains("NameError: oops"));
        prop_assert_eq!(record.stage_count(Stage::Repair), 1);
        prop_assert_eq!(&record.stage(Stage::Selection).unwrap().content, &hypothesis);
        let dir = out.path().join(&record.trial_id);
        prop_assert_eq!(std::fs::read_to_string(dir.join("hypothesis_candidates.txt")).unwrap(), candidates);
        prop_assert_eq!(std::fs::read_to_string(dir.join("verification_code_updated.py")).unwrap(), repaired);
    }
}

//! Command-line entry points.
//!
//! Exit codes: 0 on success, 1 when a trial aborts or `lint` finds an
//! error-severity problem, 2 on usage or configuration errors.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};

use crate::config::{self, Config};
use crate::gateway::{
    load_transcript, Gateway, GatewayError, LiveBackend, TranscriptRecorder, API_KEY_ENV,
};
use crate::genlint::{has_errors, Linter};
use crate::pipeline::{OutcomeFlags, Pipeline, ResearchProblem, TrialError};
use crate::sandbox::Secret;
use crate::store::{aggregate, collect_outcomes, load_outcome_list, StoreError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "autoresearch", version, about = "Hypothesis generation and verification pipeline")]
pub struct Cli {
    /// Configuration file (else $AUTORESEARCH_CONFIG, else ./autoresearch.toml).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Directory for trial run directories; overrides the configured one.
    #[arg(long, global = true, value_name = "DIR")]
    pub outputs: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Backend {
    Live,
    Replay,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long, value_enum, default_value = "live")]
    pub backend: Backend,
    /// Recorded transcript, required for the replay backend.
    #[arg(long, value_name = "FILE")]
    pub transcript: Option<PathBuf>,
    /// Append every model exchange to this transcript file.
    #[arg(long, value_name = "FILE")]
    pub record: Option<PathBuf>,
    /// Research problem text file; overrides the configured one.
    #[arg(long, value_name = "FILE")]
    pub problem: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one trial.
    Run(RunArgs),
    /// Run N trials.
    Batch {
        #[arg(long = "n", value_name = "N", value_parser = clap::value_parser!(u32).range(1..))]
        n: u32,
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
        parallel: u32,
        #[arg(long, value_enum, default_value = "live")]
        backend: Backend,
        /// Directory of transcripts; trial i replays the i-th in name order.
        #[arg(long, value_name = "DIR")]
        fixtures: Option<PathBuf>,
        /// Directory to record one transcript per trial into.
        #[arg(long, value_name = "DIR")]
        record: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        problem: Option<PathBuf>,
    },
    /// Lint a generated script.
    Lint {
        file: PathBuf,
    },
    /// Aggregate outcome flags into funnel statistics.
    Report {
        /// Directory of trial directories.
        #[arg(long, value_name = "DIR", conflicts_with = "flags", required_unless_present = "flags")]
        dir: Option<PathBuf>,
        /// JSON list of outcome flags.
        #[arg(long, value_name = "FILE")]
        flags: Option<PathBuf>,
    },
    /// Re-run a recorded trial offline.
    Replay {
        #[arg(long, value_name = "FILE")]
        transcript: PathBuf,
        #[arg(long, value_name = "FILE")]
        problem: Option<PathBuf>,
    },
}

/// Errors that end the process with a usage exit code.
#[derive(Debug, thiserror::Error)]
enum UsageError {
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error("{0}")]
    Other(String),
}

fn usage(message: impl Into<String>) -> UsageError {
    UsageError::Other(message.into())
}

fn synopsis() -> String {
    Cli::command().render_usage().to_string()
}

fn api_key() -> Option<Secret> {
    std::env::var(API_KEY_ENV)
        .ok()
        .filter(|k| !k.is_empty())
        .map(Secret::new)
}

struct Context {
    config: Config,
    pipeline: Pipeline,
}

#[derive(Debug, Clone, Copy)]
struct Globals<'a> {
    config: Option<&'a Path>,
    outputs: Option<&'a Path>,
}

fn context(globals: Globals<'_>) -> Result<Context, UsageError> {
    let path = config::locate(globals.config)?;
    let mut config = Config::load(&path)?;
    if let Some(outputs) = globals.outputs {
        config.outputs_dir = outputs.to_path_buf();
    }
    let pipeline = config.pipeline(api_key())?;
    Ok(Context { config, pipeline })
}

fn problem(config: &Config, flag: Option<&Path>) -> Result<ResearchProblem, UsageError> {
    match flag.or(config.problem_path.as_deref()) {
        Some(path) => ResearchProblem::load(path).map_err(|e| usage(format!("{}: {e}", path.display()))),
        None => Ok(ResearchProblem::bundled()),
    }
}

fn live_gateway(config: &Config) -> Result<Gateway, UsageError> {
    let key = api_key().ok_or_else(|| usage(GatewayError::MissingApiKey.to_string()))?;
    let timeout = Duration::from_secs(config.request_timeout_secs);
    Ok(Gateway::new(LiveBackend::new(&config.api_base_url, key.expose(), timeout)))
}

fn replay_gateway(path: &Path) -> Result<Gateway, UsageError> {
    let transcript = load_transcript(path).map_err(|e| usage(e.to_string()))?;
    Ok(Gateway::replay(transcript))
}

fn recording(gateway: Gateway, record: Option<&Path>) -> Result<Gateway, UsageError> {
    match record {
        Some(path) => {
            let recorder = TranscriptRecorder::create(path).map_err(|e| usage(e.to_string()))?;
            Ok(gateway.with_recorder(recorder))
        }
        None => Ok(gateway),
    }
}

fn print_outcome(dir: &Path, outcome: &OutcomeFlags) {
    println!("trial: {}", dir.display());
    println!(
        "{}",
        serde_json::to_string_pretty(outcome).expect("flags serialize")
    );
}

fn report_failure(err: &TrialError) {
    eprintln!("error: {err}");
    eprintln!("partial trial left in {}", err.trial_dir.display());
}

fn single_trial(ctx: &Context, problem: &ResearchProblem, gateway: &mut Gateway) -> i32 {
    match ctx.pipeline.run_trial(problem, gateway) {
        Ok(record) => {
            let dir = ctx.pipeline.options.outputs_dir.join(&record.trial_id);
            print_outcome(&dir, &record.outcome);
            EXIT_OK
        }
        Err(err) => {
            report_failure(&err);
            EXIT_FAILURE
        }
    }
}

fn cmd_run(globals: Globals<'_>, args: &RunArgs) -> Result<i32, UsageError> {
    let ctx = context(globals)?;
    let problem = problem(&ctx.config, args.problem.as_deref())?;
    let gateway = match args.backend {
        Backend::Live => {
            if args.transcript.is_some() {
                return Err(usage("--transcript only applies to --backend replay"));
            }
            live_gateway(&ctx.config)?
        }
        Backend::Replay => {
            let path = args
                .transcript
                .as_deref()
                .ok_or_else(|| usage("--backend replay needs --transcript FILE"))?;
            replay_gateway(path)?
        }
    };
    let mut gateway = recording(gateway, args.record.as_deref())?;
    Ok(single_trial(&ctx, &problem, &mut gateway))
}

fn transcripts_in(dir: &Path) -> Result<Vec<PathBuf>, UsageError> {
    let entries = std::fs::read_dir(dir).map_err(|e| usage(format!("{}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(usage(format!("no .jsonl transcripts in {}", dir.display())));
    }
    Ok(files)
}

#[allow(clippy::too_many_arguments)]
fn cmd_batch(
    globals: Globals<'_>,
    n: usize,
    parallel: usize,
    backend: Backend,
    fixtures: Option<&Path>,
    record: Option<&Path>,
    problem_flag: Option<&Path>,
) -> Result<i32, UsageError> {
    let ctx = context(globals)?;
    let problem = problem(&ctx.config, problem_flag)?;
    let transcripts = match (backend, fixtures) {
        (Backend::Replay, Some(dir)) => transcripts_in(dir)?,
        (Backend::Replay, None) => return Err(usage("--backend replay needs --fixtures DIR")),
        (Backend::Live, Some(_)) => return Err(usage("--fixtures only applies to --backend replay")),
        (Backend::Live, None) => {
            live_gateway(&ctx.config)?;
            Vec::new()
        }
    };
    if let Some(dir) = record {
        std::fs::create_dir_all(dir).map_err(|e| usage(format!("{}: {e}", dir.display())))?;
    }

    let make_gateway = |i: usize| -> Result<Gateway, String> {
        let gateway = match backend {
            Backend::Replay => replay_gateway(&transcripts[i % transcripts.len()]),
            Backend::Live => live_gateway(&ctx.config),
        }
        .map_err(|e| e.to_string())?;
        let path = record.map(|dir| dir.join(format!("trial_{:03}.jsonl", i + 1)));
        recording(gateway, path.as_deref()).map_err(|e| e.to_string())
    };

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<(usize, Result<OutcomeFlags, String>)>> = Mutex::new(Vec::new());
    let stdout = Mutex::new(std::io::stdout());
    std::thread::scope(|scope| {
        for _ in 0..parallel.min(n) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n {
                    break;
                }
                let result = make_gateway(i).and_then(|mut gateway| {
                    ctx.pipeline.run_trial(&problem, &mut gateway).map_err(|err| {
                        let mut lines = vec![err.to_string()];
                        lines.push(format!("partial trial left in {}", err.trial_dir.display()));
                        lines.join("\n")
                    })
                });
                let line = match &result {
                    Ok(record) => format!(
                        "[{}/{n}] {} end_to_end={}",
                        i + 1,
                        record.trial_id,
                        record.outcome.end_to_end
                    ),
                    Err(message) => format!("[{}/{n}] aborted: {message}", i + 1),
                };
                let _ = writeln!(stdout.lock().expect("stdout lock"), "{line}");
                let flags = result.map(|r| r.outcome);
                results.lock().expect("results lock").push((i, flags));
            });
        }
    });

    let mut results = results.into_inner().expect("results lock");
    results.sort_by_key(|(i, _)| *i);
    let aborted = results.iter().filter(|(_, r)| r.is_err()).count();
    let outcomes: Vec<OutcomeFlags> = results.into_iter().filter_map(|(_, r)| r.ok()).collect();
    if let Ok(stats) = aggregate(&outcomes) {
        print!("{}", stats.to_table());
    }
    if aborted > 0 {
        eprintln!("{aborted} of {n} trials aborted");
        return Ok(EXIT_FAILURE);
    }
    Ok(EXIT_OK)
}

fn cmd_lint(file: &Path) -> Result<i32, UsageError> {
    let source = std::fs::read_to_string(file).map_err(|e| usage(format!("{}: {e}", file.display())))?;
    let secrets: Vec<String> = api_key().map(|k| vec![k.expose().to_string()]).unwrap_or_default();
    let findings = Linter::default().lint_source(&source, &secrets);
    for f in &findings {
        println!("{}:{}: {} {}: {}", file.display(), f.line, f.severity, f.rule, f.excerpt);
    }
    Ok(if has_errors(&findings) { EXIT_FAILURE } else { EXIT_OK })
}

fn cmd_report(dir: Option<&Path>, flags: Option<&Path>) -> Result<i32, UsageError> {
    let outcomes = match (dir, flags) {
        (Some(dir), None) => collect_outcomes(dir),
        (None, Some(file)) => load_outcome_list(file),
        _ => return Err(usage("report needs exactly one of --dir or --flags")),
    };
    let stats = outcomes
        .and_then(|o| aggregate(&o))
        .map_err(|e| match e {
            StoreError::EmptyInput => usage("no outcomes to aggregate"),
            other => usage(other.to_string()),
        })?;
    println!("{}", serde_json::to_string_pretty(&stats).expect("stats serialize"));
    println!();
    print!("{}", stats.to_table());
    Ok(EXIT_OK)
}

fn dispatch(cli: Cli) -> Result<i32, UsageError> {
    let config = Globals {
        config: cli.config.as_deref(),
        outputs: cli.outputs.as_deref(),
    };
    match cli.command {
        Command::Run(args) => cmd_run(config, &args),
        Command::Batch {
            n,
            parallel,
            backend,
            fixtures,
            record,
            problem,
        } => cmd_batch(
            config,
            n as usize,
            parallel as usize,
            backend,
            fixtures.as_deref(),
            record.as_deref(),
            problem.as_deref(),
        ),
        Command::Lint { file } => cmd_lint(&file),
        Command::Report { dir, flags } => cmd_report(dir.as_deref(), flags.as_deref()),
        Command::Replay {
            transcript,
            problem,
        } => cmd_run(
            config,
            &RunArgs {
                backend: Backend::Replay,
                transcript: Some(transcript),
                record: None,
                problem,
            },
        ),
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(err) => {
            let code = if err.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = err.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            eprintln!("{}", synopsis());
            EXIT_USAGE
        }
    }
}

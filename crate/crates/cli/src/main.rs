//! `autolab`: launch, resume, inspect and replay discovery runs.
//!
//! Exit codes: 0 when the run reached `Done`, 1 when it ended `Failed`
//! (including a missing fixture), 2 for invalid inputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use autolab_core::gateway::{Backend, LiveBackend, ScriptedBackend};
use autolab_core::model::store::{
    self, FINAL_RESULTS_FILE, MAIN_TEX, NOTES_FILE, RESULTS_FILE, SCRIPT_FILE, STDERR_LOG, STDOUT_LOG,
};
use autolab_core::model::{RunConfig, RunHandle, RunLayout, SectionKind, Stage};
use autolab_core::pipeline::{check_continuity, rewind_calls, run_pipeline, RunRecord};
use autolab_core::report::figure_files;
use autolab_core::{ResearchQuery, Sandbox};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

#[derive(Debug, Parser)]
#[command(name = "autolab", version, about = "Autonomous hypothesis-discovery runs")]
struct Cli {
    /// Print a machine-readable JSON summary instead of text.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Start a run against the live model backend. The API key is read from
    /// the environment variable named by `backend.api_key_env`.
    Run(StartArgs),
    /// Start a run that replays recorded model replies; fully offline.
    MockRun {
        #[command(flatten)]
        start: StartArgs,
        /// Fixture directory of `<role>_<index>.<ext>` files, or a JSON file
        /// mapping each role to its ordered replies.
        #[arg(long)]
        fixtures: PathBuf,
    },
    /// Continue an interrupted run from its first incomplete stage.
    Resume {
        #[arg(long)]
        run_dir: PathBuf,
        /// Replay fixtures instead of calling the live backend.
        #[arg(long)]
        fixtures: Option<PathBuf>,
    },
    /// Summarise a run directory without modifying it.
    Inspect {
        #[arg(long)]
        run_dir: PathBuf,
    },
    /// Check a configuration (and optionally a query) without running.
    Validate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        query: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct StartArgs {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Research query (JSON with `text`, `constraints`, optional `n_test`).
    #[arg(long)]
    query: PathBuf,
    /// Create the run at exactly this path instead of a generated directory
    /// under the configured workspace. Must not exist yet.
    #[arg(long)]
    run_dir: Option<PathBuf>,
    /// Override the configured sandbox seed.
    #[arg(long)]
    seed: Option<u64>,
}

/// Invalid input: reported with exit code 2.
struct Invalid(String);

impl<E: std::fmt::Display> From<E> for Invalid {
    fn from(e: E) -> Self {
        Invalid(e.to_string())
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(start) => cmd_start(&start, None, cli.json),
        Command::MockRun { start, fixtures } => cmd_start(&start, Some(&fixtures), cli.json),
        Command::Resume { run_dir, fixtures } => cmd_resume(&run_dir, fixtures.as_deref(), cli.json),
        Command::Inspect { run_dir } => cmd_inspect(&run_dir, cli.json),
        Command::Validate { config, query } => cmd_validate(&config, query.as_deref(), cli.json),
    };
    match result {
        Ok(code) => code,
        Err(Invalid(message)) => {
            if cli.json {
                println!("{}", json!({ "error": message }));
            } else {
                println!("error: {message}");
            }
            ExitCode::from(2)
        }
    }
}

fn load_query(path: &Path) -> Result<ResearchQuery, Invalid> {
    let text = fs::read_to_string(path).map_err(|e| Invalid(format!("{}: {e}", path.display())))?;
    let query: ResearchQuery = serde_json::from_str(&text).map_err(|e| Invalid(format!("{}: {e}", path.display())))?;
    query.validate()?;
    Ok(query)
}

fn load_config(path: &Path) -> Result<RunConfig, Invalid> {
    RunConfig::load(path).map_err(|e| Invalid(format!("{}: {e}", path.display())))
}

fn scripted(path: &Path) -> Result<ScriptedBackend, Invalid> {
    ScriptedBackend::load(path).map_err(|e| Invalid(format!("{}: {e}", path.display())))
}

fn live(config: &RunConfig) -> Result<LiveBackend, Invalid> {
    Ok(LiveBackend::from_env(&config.backend)?)
}

fn cmd_start(args: &StartArgs, fixtures: Option<&Path>, as_json: bool) -> Result<ExitCode, Invalid> {
    let mut config = load_config(&args.config)?;
    let query = load_query(&args.query)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let backend: Box<dyn Backend> = match fixtures {
        Some(path) => Box::new(scripted(path)?),
        None => Box::new(live(&config)?),
    };
    let mut run = match &args.run_dir {
        Some(dir) => {
            let id = dir
                .file_name()
                .ok_or_else(|| Invalid(format!("{}: not a directory name", dir.display())))?
                .to_string_lossy()
                .into_owned();
            config.workspace = dir.parent().map(Path::to_path_buf).unwrap_or_default();
            if config.workspace.as_os_str().is_empty() {
                config.workspace = PathBuf::from(".");
            }
            store::new_run_with_id(config, query, &id)?
        }
        None => store::new_run(config, query)?,
    };
    execute(&mut run, backend.as_ref(), as_json)
}

fn cmd_resume(run_dir: &Path, fixtures: Option<&Path>, as_json: bool) -> Result<ExitCode, Invalid> {
    let mut run = store::open_run(run_dir)?;
    let backend: Box<dyn Backend> = match fixtures {
        Some(path) => {
            let backend = scripted(path)?;
            // calls of completed stages already consumed their fixtures
            for (role, count) in rewind_calls(&run)? {
                backend.advance(role.as_str(), count);
            }
            Box::new(backend)
        }
        None => Box::new(live(run.config())?),
    };
    execute(&mut run, backend.as_ref(), as_json)
}

fn execute(run: &mut RunHandle, backend: &dyn Backend, as_json: bool) -> Result<ExitCode, Invalid> {
    let sandbox = Sandbox::from_config(run.config());
    let record = run_pipeline(run, backend, &sandbox)?;
    let record_path = run.layout().record_path();
    if as_json {
        println!(
            "{}",
            json!({
                "run_dir": run.root(),
                "status": record.status,
                "rounds": record.rounds.len(),
                "sections": record.report.len(),
                "figures": record.figures.len(),
                "warnings": record.warnings,
                "record": record_path,
            })
        );
    } else {
        println!("run directory: {}", run.root().display());
        println!("status: {}", record.status.label());
        println!("rounds executed: {}", record.rounds.len());
        for w in &record.warnings {
            println!("warning: {w}");
        }
        println!("record: {}", record_path.display());
    }
    Ok(if record.status == Stage::Done {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn cmd_validate(config: &Path, query: Option<&Path>, as_json: bool) -> Result<ExitCode, Invalid> {
    let cfg = load_config(config)?;
    let n_test = match query {
        Some(q) => load_query(q)?.n_test.unwrap_or(cfg.n_test),
        None => cfg.n_test,
    };
    if as_json {
        println!("{}", json!({ "validated": true, "n_test": n_test, "tools": cfg.tools.tools().len() }));
    } else {
        println!("validated: n_test = {n_test}, {} tools registered", cfg.tools.tools().len());
    }
    Ok(ExitCode::SUCCESS)
}

fn read_json(path: &Path) -> Option<Value> {
    serde_json::from_str(&fs::read_to_string(path).ok()?).ok()
}

/// Read-only summary of a run directory. Never takes the run lock.
fn cmd_inspect(run_dir: &Path, as_json: bool) -> Result<ExitCode, Invalid> {
    let layout = RunLayout::new(run_dir);
    if !layout.is_run_dir() {
        return Err(Invalid(format!("{} is not a run directory", run_dir.display())));
    }
    let config = load_config(&layout.config_path())?;
    let record = layout
        .record_path()
        .is_file()
        .then(|| RunRecord::load(&layout.record_path()))
        .transpose()?;
    let stage = match &record {
        Some(r) => r.status.clone(),
        None => layout.derive_state(config.n_test)?.stage,
    };

    let mut rounds = Vec::new();
    for k in layout.round_indices()? {
        let dir = layout.round_dir(k);
        let files: BTreeMap<&str, bool> = [SCRIPT_FILE, RESULTS_FILE, FINAL_RESULTS_FILE, NOTES_FILE, STDOUT_LOG, STDERR_LOG]
            .into_iter()
            .map(|f| (f, dir.join(f).is_file()))
            .collect();
        rounds.push(json!({ "round": k, "complete": layout.round_complete(k), "files": files }));
    }
    let mut continuity = Vec::new();
    let indices = layout.round_indices()?;
    for pair in indices.windows(2) {
        let prev = read_json(&layout.round_dir(pair[0]).join(RESULTS_FILE));
        let next = read_json(&layout.round_dir(pair[1]).join(RESULTS_FILE));
        let violations = match (prev, next) {
            (Some(p), Some(n)) => check_continuity(&p, &n).violations,
            _ => vec!["results.json missing or unparseable".to_string()],
        };
        continuity.push(json!({ "from": pair[0], "to": pair[1], "violations": violations }));
    }
    let sections: Vec<&str> = SectionKind::ALL
        .iter()
        .map(|k| k.file_stem())
        .filter(|stem| layout.report_dir().join(format!("{stem}.tex")).is_file())
        .collect();
    let figures: Vec<String> = figure_files(&layout.plots_dir())?
        .iter()
        .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
        .collect();
    let transcripts: u32 = layout.transcript_counts()?.values().sum();
    let main_tex = layout.report_dir().join(MAIN_TEX).is_file();

    if as_json {
        println!(
            "{}",
            json!({
                "run_dir": run_dir,
                "stage": stage,
                "rounds": rounds,
                "continuity": continuity,
                "sections": sections,
                "main_tex": main_tex,
                "figures": figures,
                "transcripts": transcripts,
                "warnings": record.as_ref().map(|r| r.warnings.clone()).unwrap_or_default(),
            })
        );
        return Ok(ExitCode::SUCCESS);
    }
    println!("run directory: {}", run_dir.display());
    println!("stage: {}", stage.label());
    println!("rounds: {}", rounds.len());
    for r in &rounds {
        let missing: Vec<&str> = r["files"]
            .as_object()
            .into_iter()
            .flatten()
            .filter(|(_, present)| !present.as_bool().unwrap_or(false))
            .map(|(name, _)| name.as_str())
            .collect();
        let state = if r["complete"].as_bool().unwrap_or(false) { "complete" } else { "incomplete" };
        if missing.is_empty() {
            println!("  round {}: {state}", r["round"]);
        } else {
            println!("  round {}: {state}, missing {}", r["round"], missing.join(", "));
        }
    }
    for c in &continuity {
        let v = c["violations"].as_array().map_or(0, Vec::len);
        println!("continuity {} -> {}: {} violation(s)", c["from"], c["to"], v);
    }
    println!("transcripts: {transcripts}");
    println!("figures: {}", figures.len());
    println!("report sections: {} of 5 ({})", sections.len(), sections.join(", "));
    if let Some(r) = &record {
        for w in &r.warnings {
            println!("warning: {w}");
        }
    }
    Ok(ExitCode::SUCCESS)
}

//! The canonical on-disk run layout and the handle that owns a run directory.
//!
//! ```text
//! <run>/config.json  query.json  idea.json  run_record.json
//! <run>/rounds/round_<k>/{script.py, results.json, final_results.json,
//!                         notes.txt, stdout.log, stderr.log}
//! <run>/transcripts/<agent_role>_<call_index>.json
//! <run>/plots/{plot_script.py, fit_params.json, figures}
//! <run>/report/{introduction,methods,results,conclusion,outlook,main}.tex
//! ```
//!
//! Stage progress is re-derived from which of these files exist, so resuming
//! never needs a separate state file. A `.lock` file holds an advisory lock
//! while a process owns the run.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rand::Rng;
use thiserror::Error;

use super::config::RunConfig;
use super::state::{RunState, Stage};
use super::{AgentRole, ResearchIdea, ResearchQuery};
use crate::util;

pub const CONFIG_FILE: &str = "config.json";
pub const QUERY_FILE: &str = "query.json";
pub const IDEA_FILE: &str = "idea.json";
pub const RECORD_FILE: &str = "run_record.json";
pub const LOCK_FILE: &str = ".lock";
pub const ROUNDS_DIR: &str = "rounds";
pub const TRANSCRIPTS_DIR: &str = "transcripts";
pub const PLOTS_DIR: &str = "plots";
pub const REPORT_DIR: &str = "report";

pub const SCRIPT_FILE: &str = "script.py";
pub const RESULTS_FILE: &str = "results.json";
pub const FINAL_RESULTS_FILE: &str = "final_results.json";
pub const NOTES_FILE: &str = "notes.txt";
pub const STDOUT_LOG: &str = "stdout.log";
pub const STDERR_LOG: &str = "stderr.log";
pub const FAILED_ATTEMPT_DIR: &str = "failed_attempt";
/// Written into a round directory once its execution succeeded.
pub const ROUND_RECORD_FILE: &str = "round.json";
/// Written at the run root when the refinement loop stopped on the flag.
pub const STOP_FILE: &str = "refinement_stop.json";

pub const PLOT_SCRIPT_FILE: &str = "plot_script.py";
pub const FIT_PARAMS_FILE: &str = "fit_params.json";
pub const MAIN_TEX: &str = "main.tex";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("workspace {path} is not writable: {source}")]
    WorkspaceUnwritable { path: PathBuf, source: io::Error },
    #[error("run {0} already exists")]
    RunAlreadyExists(PathBuf),
    #[error("{0} is not a run directory")]
    NotARunDirectory(PathBuf),
    #[error("run {0} is locked by another process")]
    RunLocked(PathBuf),
    #[error("invalid {file}: {message}")]
    Corrupt { file: String, message: String },
    #[error(transparent)]
    Query(#[from] super::DomainError),
    #[error(transparent)]
    Config(#[from] super::config::ConfigError),
    #[error("run store I/O: {0}")]
    Io(#[from] io::Error),
}

/// Path arithmetic for one run directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunLayout {
    root: PathBuf,
}

impl RunLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config_path(&self) -> PathBuf {
        self.root.join(CONFIG_FILE)
    }

    pub fn query_path(&self) -> PathBuf {
        self.root.join(QUERY_FILE)
    }

    pub fn idea_path(&self) -> PathBuf {
        self.root.join(IDEA_FILE)
    }

    pub fn record_path(&self) -> PathBuf {
        self.root.join(RECORD_FILE)
    }

    pub fn rounds_dir(&self) -> PathBuf {
        self.root.join(ROUNDS_DIR)
    }

    pub fn round_dir(&self, round: u32) -> PathBuf {
        self.rounds_dir().join(format!("round_{round}"))
    }

    pub fn transcripts_dir(&self) -> PathBuf {
        self.root.join(TRANSCRIPTS_DIR)
    }

    pub fn transcript_path(&self, role: AgentRole, index: u32) -> PathBuf {
        self.transcripts_dir().join(format!("{}_{index}.json", role.as_str()))
    }

    pub fn plots_dir(&self) -> PathBuf {
        self.root.join(PLOTS_DIR)
    }

    pub fn report_dir(&self) -> PathBuf {
        self.root.join(REPORT_DIR)
    }

    /// Whether `dir` looks like a run directory.
    pub fn is_run_dir(&self) -> bool {
        self.config_path().is_file() && self.query_path().is_file()
    }

    /// Indices of `round_<k>` directories, ascending.
    pub fn round_indices(&self) -> io::Result<Vec<u32>> {
        let mut out = Vec::new();
        let dir = self.rounds_dir();
        if !dir.is_dir() {
            return Ok(out);
        }
        for entry in fs::read_dir(dir)? {
            let entry = entry?;
            if !entry.file_type()?.is_dir() {
                continue;
            }
            let name = entry.file_name();
            if let Some(k) = name.to_str().and_then(|n| n.strip_prefix("round_")).and_then(|n| n.parse().ok()) {
                out.push(k);
            }
        }
        out.sort_unstable();
        Ok(out)
    }

    /// Whether round `k` left a complete, parseable artifact bundle.
    pub fn round_complete(&self, round: u32) -> bool {
        let dir = self.round_dir(round);
        let parses = |name: &str| {
            fs::read(dir.join(name))
                .ok()
                .and_then(|b| serde_json::from_slice::<serde_json::Value>(&b).ok())
                .is_some()
        };
        dir.join(ROUND_RECORD_FILE).is_file()
            && parses(RESULTS_FILE)
            && parses(FINAL_RESULTS_FILE)
            && dir.join(NOTES_FILE).is_file()
    }

    /// Per-role count of persisted transcripts (max index + 1).
    pub fn transcript_counts(&self) -> io::Result<HashMap<AgentRole, u32>> {
        let mut counts = HashMap::new();
        let dir = self.transcripts_dir();
        if !dir.is_dir() {
            return Ok(counts);
        }
        for entry in fs::read_dir(dir)? {
            let name = entry?.file_name();
            let Some(stem) = name.to_str().and_then(|n| n.strip_suffix(".json")) else { continue };
            let Some((role, idx)) = stem.rsplit_once('_') else { continue };
            let (Ok(role), Ok(idx)) = (role.parse::<AgentRole>(), idx.parse::<u32>()) else { continue };
            let slot = counts.entry(role).or_insert(0);
            *slot = (*slot).max(idx + 1);
        }
        Ok(counts)
    }

    /// Reconstructs the stage from directory contents.
    pub fn derive_state(&self, n_test: u32) -> io::Result<RunState> {
        let mut state = RunState::new(n_test);
        if !self.idea_path().is_file() {
            return Ok(state);
        }
        state.stage = Stage::InitialTesting;
        let complete: Vec<u32> = self
            .round_indices()?
            .into_iter()
            .enumerate()
            .take_while(|(i, k)| *i as u32 == *k && self.round_complete(*k))
            .map(|(_, k)| k)
            .collect();
        let Some(&last) = complete.last() else { return Ok(state) };
        state.rounds_completed = last + 1;

        let report_done = crate::model::SectionKind::ALL
            .iter()
            .all(|k| self.report_dir().join(format!("{}.tex", k.file_stem())).is_file())
            && self.report_dir().join(MAIN_TEX).is_file();
        if report_done {
            state.stage = Stage::Done;
        } else if last >= n_test || self.plots_dir().join(PLOT_SCRIPT_FILE).exists() || self.stop_path().is_file() {
            state.stage = Stage::Documentation;
        } else {
            state.stage = Stage::Refinement { round: last };
        }
        Ok(state)
    }

    pub fn stop_path(&self) -> PathBuf {
        self.root.join(STOP_FILE)
    }
}

/// Exclusive owner of one run directory.
#[derive(Debug)]
pub struct RunHandle {
    layout: RunLayout,
    run_id: String,
    config: RunConfig,
    query: ResearchQuery,
    counters: Mutex<HashMap<AgentRole, u32>>,
    _lock: File,
}

/// `<UTC timestamp>-<6 hex chars>`.
pub fn generate_run_id() -> String {
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
    let suffix: u32 = rand::rng().random_range(0..0x100_0000);
    format!("{stamp}-{suffix:06x}")
}

/// Creates a fresh run under `config.workspace` with a generated id.
pub fn new_run(config: RunConfig, query: ResearchQuery) -> Result<RunHandle, StoreError> {
    new_run_with_id(config, query, &generate_run_id())
}

pub fn new_run_with_id(mut config: RunConfig, mut query: ResearchQuery, run_id: &str) -> Result<RunHandle, StoreError> {
    query.validate()?;
    // the query's budget wins; the config value is the fallback
    let n_test = query.n_test.unwrap_or(config.n_test);
    config.n_test = n_test;
    query.n_test = Some(n_test);

    let workspace = config.workspace.clone();
    let unwritable = |source| StoreError::WorkspaceUnwritable {
        path: workspace.clone(),
        source,
    };
    fs::create_dir_all(&workspace).map_err(unwritable)?;
    let root = workspace.join(run_id);
    match fs::create_dir(&root) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::AlreadyExists => return Err(StoreError::RunAlreadyExists(root)),
        Err(e) => return Err(unwritable(e)),
    }
    let layout = RunLayout::new(root);
    let lock = acquire_lock(&layout)?;
    for dir in [layout.rounds_dir(), layout.transcripts_dir(), layout.plots_dir(), layout.report_dir()] {
        fs::create_dir(dir)?;
    }
    util::write_json(&layout.config_path(), &config)?;
    util::write_json(&layout.query_path(), &query)?;

    Ok(RunHandle {
        layout,
        run_id: run_id.to_string(),
        config,
        query,
        counters: Mutex::new(HashMap::new()),
        _lock: lock,
    })
}

/// Reopens an existing run for resumption.
pub fn open_run(root: impl Into<PathBuf>) -> Result<RunHandle, StoreError> {
    let layout = RunLayout::new(root);
    if !layout.is_run_dir() {
        return Err(StoreError::NotARunDirectory(layout.root().to_path_buf()));
    }
    let lock = acquire_lock(&layout)?;
    let config = RunConfig::load(&layout.config_path())?;
    let query_text = fs::read_to_string(layout.query_path())?;
    let query: ResearchQuery = serde_json::from_str(&query_text).map_err(|e| StoreError::Corrupt {
        file: QUERY_FILE.into(),
        message: e.to_string(),
    })?;
    query.validate()?;
    let counters = layout.transcript_counts()?;
    let run_id = layout
        .root()
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(RunHandle {
        layout,
        run_id,
        config,
        query,
        counters: Mutex::new(counters),
        _lock: lock,
    })
}

fn acquire_lock(layout: &RunLayout) -> Result<File, StoreError> {
    let file = File::options()
        .create(true)
        .truncate(false)
        .write(true)
        .open(layout.root().join(LOCK_FILE))?;
    match file.try_lock() {
        Ok(()) => Ok(file),
        Err(fs::TryLockError::WouldBlock) => Err(StoreError::RunLocked(layout.root().to_path_buf())),
        Err(fs::TryLockError::Error(e)) => Err(e.into()),
    }
}

impl RunHandle {
    pub fn layout(&self) -> &RunLayout {
        &self.layout
    }

    pub fn root(&self) -> &Path {
        self.layout.root()
    }

    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn query(&self) -> &ResearchQuery {
        &self.query
    }

    pub fn n_test(&self) -> u32 {
        self.config.n_test
    }

    pub fn state(&self) -> io::Result<RunState> {
        self.layout.derive_state(self.n_test())
    }

    /// Reserves the next transcript index for `role`.
    pub fn next_call_index(&self, role: AgentRole) -> u32 {
        let mut counters = self.counters.lock().unwrap_or_else(|p| p.into_inner());
        let slot = counters.entry(role).or_insert(0);
        let idx = *slot;
        *slot += 1;
        idx
    }

    pub fn call_counts(&self) -> HashMap<AgentRole, u32> {
        self.counters.lock().unwrap_or_else(|p| p.into_inner()).clone()
    }

    /// Re-derives the per-role call counters from the transcripts on disk.
    pub fn reload_call_counts(&self) -> io::Result<()> {
        let counts = self.layout.transcript_counts()?;
        *self.counters.lock().unwrap_or_else(|p| p.into_inner()) = counts;
        Ok(())
    }

    /// Records the prompt-set digest into the persisted config.
    pub fn set_prompt_hash(&mut self, hash: &str) -> Result<(), StoreError> {
        if self.config.prompt_hash.as_deref() == Some(hash) {
            return Ok(());
        }
        self.config.prompt_hash = Some(hash.to_string());
        util::write_json(&self.layout.config_path(), &self.config)?;
        Ok(())
    }

    pub fn persist_idea(&self, idea: &ResearchIdea) -> Result<(), StoreError> {
        util::write_json(&self.layout.idea_path(), idea)?;
        Ok(())
    }

    pub fn load_idea(&self) -> Result<ResearchIdea, StoreError> {
        let text = fs::read_to_string(self.layout.idea_path())?;
        serde_json::from_str(&text).map_err(|e| StoreError::Corrupt {
            file: IDEA_FILE.into(),
            message: e.to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config_in(dir: &Path) -> RunConfig {
        let mut cfg = RunConfig::with_uniform_model("m");
        cfg.workspace = dir.to_path_buf();
        cfg
    }

    fn query() -> ResearchQuery {
        ResearchQuery::new("study peptides", vec!["use only listed tools".into()], 2).unwrap()
    }

    #[test]
    fn fresh_run_has_layout_and_ideation_state() {
        let ws = tempfile::tempdir().unwrap();
        let run = new_run(config_in(ws.path()), query()).unwrap();
        let layout = run.layout();
        assert!(layout.config_path().is_file());
        assert!(layout.query_path().is_file());
        assert!(layout.rounds_dir().is_dir());
        assert!(layout.transcripts_dir().is_dir());
        assert_eq!(run.state().unwrap().stage, Stage::Ideation);
        assert_eq!(run.n_test(), 2);
    }

    #[test]
    fn duplicate_run_id_is_rejected() {
        let ws = tempfile::tempdir().unwrap();
        let _first = new_run_with_id(config_in(ws.path()), query(), "r1").unwrap();
        let err = new_run_with_id(config_in(ws.path()), query(), "r1").unwrap_err();
        assert!(matches!(err, StoreError::RunAlreadyExists(_)));
    }

    #[test]
    fn unwritable_workspace_is_reported() {
        let ws = tempfile::tempdir().unwrap();
        let blocker = ws.path().join("file");
        fs::write(&blocker, "not a dir").unwrap();
        let err = new_run(config_in(&blocker.join("sub")), query()).unwrap_err();
        assert!(matches!(err, StoreError::WorkspaceUnwritable { .. }), "{err:?}");
    }

    #[test]
    fn second_owner_is_locked_out() {
        let ws = tempfile::tempdir().unwrap();
        let run = new_run_with_id(config_in(ws.path()), query(), "r").unwrap();
        let err = open_run(run.root()).unwrap_err();
        assert!(matches!(err, StoreError::RunLocked(_)));
        let root = run.root().to_path_buf();
        drop(run);
        assert!(open_run(root).is_ok());
    }

    #[test]
    fn run_ids_look_like_timestamps_with_suffix() {
        let id = generate_run_id();
        let (stamp, suffix) = id.rsplit_once('-').unwrap();
        assert_eq!(stamp.len(), 16);
        assert_eq!(suffix.len(), 6);
        assert!(suffix.chars().all(|c| c.is_ascii_hexdigit()));
    }

    fn write_round(layout: &RunLayout, k: u32) {
        let dir = layout.round_dir(k);
        fs::create_dir_all(&dir).unwrap();
        fs::write(dir.join(RESULTS_FILE), "{}").unwrap();
        fs::write(dir.join(FINAL_RESULTS_FILE), "{}").unwrap();
        fs::write(dir.join(NOTES_FILE), "n").unwrap();
        fs::write(dir.join(ROUND_RECORD_FILE), "{}").unwrap();
    }

    #[test]
    fn state_is_derived_from_contents() {
        let ws = tempfile::tempdir().unwrap();
        let run = new_run_with_id(config_in(ws.path()), query(), "r").unwrap();
        let layout = run.layout().clone();
        fs::write(layout.idea_path(), "{}").unwrap();
        assert_eq!(layout.derive_state(2).unwrap().stage, Stage::InitialTesting);
        write_round(&layout, 0);
        let s = layout.derive_state(2).unwrap();
        assert_eq!(s.stage, Stage::Refinement { round: 0 });
        assert_eq!(s.rounds_completed, 1);
        // a seeded but unexecuted round 1 does not count
        write_round(&layout, 1);
        fs::remove_file(layout.round_dir(1).join(ROUND_RECORD_FILE)).unwrap();
        assert_eq!(layout.derive_state(2).unwrap().stage, Stage::Refinement { round: 0 });
        write_round(&layout, 1);
        write_round(&layout, 2);
        assert_eq!(layout.derive_state(2).unwrap().stage, Stage::Documentation);
        assert_eq!(layout.derive_state(5).unwrap().stage, Stage::Refinement { round: 2 });
        fs::write(layout.stop_path(), "{}").unwrap();
        assert_eq!(layout.derive_state(5).unwrap().stage, Stage::Documentation);
        for k in crate::model::SectionKind::ALL {
            fs::write(layout.report_dir().join(format!("{}.tex", k.file_stem())), "x").unwrap();
        }
        fs::write(layout.report_dir().join(MAIN_TEX), "x").unwrap();
        assert_eq!(layout.derive_state(2).unwrap().stage, Stage::Done);
    }

    #[test]
    fn call_indices_are_per_role() {
        let ws = tempfile::tempdir().unwrap();
        let run = new_run(config_in(ws.path()), query()).unwrap();
        assert_eq!(run.next_call_index(AgentRole::Coder1), 0);
        assert_eq!(run.next_call_index(AgentRole::Coder1), 1);
        assert_eq!(run.next_call_index(AgentRole::Coder2), 0);
    }

    #[test]
    fn idea_persistence_round_trips() {
        let ws = tempfile::tempdir().unwrap();
        let run = new_run(config_in(ws.path()), query()).unwrap();
        let idea = ResearchIdea {
            idea: "i".into(),
            hypothesis: "h".into(),
            mechanism: "m".into(),
            outcome: "o".into(),
            approach: "a".into(),
            feasibility: "f".into(),
            novelty: "n".into(),
            challenge: "c\nwith \"quotes\" and ünïcode".into(),
        };
        run.persist_idea(&idea).unwrap();
        assert_eq!(run.load_idea().unwrap(), idea);
    }
}

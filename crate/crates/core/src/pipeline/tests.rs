use std::fs;
use std::path::Path;

use serde_json::{json, Value};

use super::*;
use crate::agent::{Decision, Generation, ReflectionOutcome, NO_FOLLOWUP};
use crate::gateway::{history_violations, ChatMessage, ScriptedBackend};
use crate::model::store::{
    new_run_with_id, open_run, FAILED_ATTEMPT_DIR, NOTES_FILE, PLOT_SCRIPT_FILE, RESULTS_FILE, ROUND_RECORD_FILE,
    STDERR_LOG, STDOUT_LOG,
};
use crate::model::AgentRole;
use crate::sandbox::{ExecRequest, ExecutionRecord};
use crate::toolkit::TOOL_LOG_FILE;

/// Executor whose behaviour is driven by markers in the script body:
/// `FAIL` exits 1, `ESCAPE` reports a violation, `DROP` rewrites
/// results.json without its earlier keys, `TOOL:<name>` logs a tool call.
struct FakeExecutor;

impl Executor for FakeExecutor {
    fn execute(&self, req: &ExecRequest<'_>) -> Result<ExecutionRecord, SandboxError> {
        let dir = req.work_dir;
        let body = &req.source.body;
        fs::write(dir.join(req.script_name), body)?;
        fs::write(dir.join(STDOUT_LOG), "")?;
        let failing = body.contains("FAIL");
        fs::write(dir.join(STDERR_LOG), if failing { "Traceback: boom\n" } else { "" })?;
        let mut record = ExecutionRecord {
            exit_status: i32::from(failing),
            wall_time: 0.0,
            stdout_path: dir.join(STDOUT_LOG),
            stderr_path: dir.join(STDERR_LOG),
            timed_out: false,
            violations: Vec::new(),
        };
        if failing {
            return Ok(record);
        }
        if body.contains("ESCAPE") {
            record.violations.push("created ../escape.txt outside the working directory".into());
        }
        if req.script_name == PLOT_SCRIPT_FILE {
            fs::write(dir.join("figure.png"), b"\x89PNG\r\n\x1a\n")?;
            fs::write(
                dir.join("fit_params.json"),
                json!({"figure": {"model": "linear", "params": {"slope": 1.0}, "r_squared": 0.9}}).to_string(),
            )?;
            return Ok(record);
        }
        let results_path = dir.join(RESULTS_FILE);
        let mut results: Value = fs::read_to_string(&results_path)
            .ok()
            .and_then(|t| serde_json::from_str(&t).ok())
            .unwrap_or_else(|| json!({"samples": []}));
        if body.contains("DROP") {
            results = json!({"other": []});
        } else {
            results["samples"].as_array_mut().unwrap().push(json!(req.round));
        }
        fs::write(&results_path, results.to_string())?;
        fs::write(dir.join("final_results.json"), json!({"n": results["samples"]}).to_string())?;
        let notes = fs::read_to_string(dir.join(NOTES_FILE)).unwrap_or_default();
        fs::write(dir.join(NOTES_FILE), format!("{notes}round {:?}\n", req.round))?;
        if let Some(tool) = body.lines().find_map(|l| l.strip_prefix("TOOL:")) {
            fs::write(dir.join(TOOL_LOG_FILE), json!({"seq": 1, "tool": tool}).to_string())?;
        }
        Ok(record)
    }
}

const IDEA: &str = "Idea: i\nHypothesis: h\nMechanism: m\nOutcome: o\nApproach: a\nFeasibility: f\nNovelty: n\nChallenge: c\n";
const BOX: &str = "\\begin{highlightbox}\nSummary.\n\\end{highlightbox}\nAPPROVED";

fn block(body: &str) -> String {
    format!("```python\n{body}\n```")
}

/// Fixtures with `reviews` refiner exchanges, each approving a follow-up.
fn fixtures(reviews: usize) -> Vec<(String, Vec<String>)> {
    let mut lists: Vec<(String, Vec<String>)> = vec![
        ("Scientist_1".into(), vec![IDEA.into()]),
        ("Scientist_2".into(), vec!["APPROVED".into()]),
        ("Coder_1".into(), vec![block("round")]),
        ("Coder_2".into(), vec!["APPROVED".into()]),
        ("Refiner_1".into(), (0..reviews).map(|k| block(&format!("follow {k}"))).collect()),
        ("Refiner_2".into(), vec!["APPROVED".into(); reviews]),
        ("Plot_Designer_1".into(), vec![block("plot")]),
        ("Plot_Designer_2".into(), vec!["APPROVED".into()]),
        ("Plot_Analyzer".into(), vec!["Caption: c\nInterpretation: i\nKey insights:\n- k".into()]),
    ];
    for kind in crate::model::SectionKind::ALL {
        let (w, r) = kind.roles();
        lists.push((w.as_str().into(), vec!["Draft body.".into()]));
        lists.push((r.as_str().into(), vec![BOX.into()]));
    }
    lists
}

fn set(lists: &mut [(String, Vec<String>)], role: &str, index: usize, reply: &str) {
    let entry = lists.iter_mut().find(|(r, _)| r == role).unwrap();
    if entry.1.len() <= index {
        entry.1.resize(index + 1, String::new());
    }
    entry.1[index] = reply.to_string();
}

fn new_run(dir: &Path, n_test: u32) -> RunHandle {
    let mut config = RunConfig::with_uniform_model("m");
    config.workspace = dir.to_path_buf();
    let query = ResearchQuery::new("question", vec![], n_test).unwrap();
    new_run_with_id(config, query, "run").unwrap()
}

fn run_with(lists: Vec<(String, Vec<String>)>, n_test: u32) -> (tempfile::TempDir, RunRecord, ScriptedBackend) {
    let ws = tempfile::tempdir().unwrap();
    let mut run = new_run(ws.path(), n_test);
    let backend = ScriptedBackend::from_role_lists(lists);
    let record = run_pipeline(&mut run, &backend, &FakeExecutor).unwrap();
    (ws, record, backend)
}

fn reason(record: &RunRecord) -> &str {
    match &record.status {
        Stage::Failed { reason } => reason,
        other => panic!("expected failure, got {other:?}"),
    }
}

fn generation(output: &str) -> Generation {
    Generation {
        role: AgentRole::Refiner1,
        output: output.into(),
        transcript: vec![ChatMessage::assistant(output)],
        call_index: 0,
    }
}

fn outcome(decision: Decision, reply: &str) -> ReflectionOutcome {
    ReflectionOutcome {
        decision,
        transcript: vec![],
        highlight_box: None,
        reply: reply.into(),
        role: AgentRole::Refiner2,
        call_index: 4,
    }
}

#[test]
fn refinement_decision_rules() {
    let script = block("x = 1");
    let halt = refinement_decision(&generation(&script), &outcome(Decision::Halt(NO_FOLLOWUP.into()), "NO_FOLLOWUP: done")).unwrap();
    assert_eq!(halt.outcome, RefinementOutcome::NoFollowUp);
    assert_eq!(halt.rationale, "NO_FOLLOWUP: done");

    let flagged = refinement_decision(&generation("NO_FOLLOWUP, enough data"), &outcome(Decision::Approved, "APPROVED")).unwrap();
    assert_eq!(flagged.outcome, RefinementOutcome::NoFollowUp);

    let approved = refinement_decision(&generation(&script), &outcome(Decision::Approved, "APPROVED")).unwrap();
    match approved.outcome {
        RefinementOutcome::FollowUp(s) => {
            assert_eq!(s.body, "x = 1");
            assert_eq!(s.origin.unwrap().role, AgentRole::Refiner1);
        }
        other => panic!("{other:?}"),
    }

    let revised = refinement_decision(&generation(&script), &outcome(Decision::Revised(block("y = 2")), "...")).unwrap();
    match revised.outcome {
        RefinementOutcome::FollowUp(s) => {
            assert_eq!(s.body, "y = 2");
            assert_eq!(s.origin.unwrap().role, AgentRole::Refiner2);
        }
        other => panic!("{other:?}"),
    }

    assert!(matches!(
        refinement_decision(&generation("no code here"), &outcome(Decision::Approved, "APPROVED")),
        Err(PipelineError::Sandbox(SandboxError::NoCodeBlock))
    ));
}

#[test]
fn full_budget_runs_one_plus_n_test_rounds() {
    let (ws, record, backend) = run_with(fixtures(3), 3);
    assert_eq!(record.status, Stage::Done, "{:?}", record.status);
    assert_eq!(record.rounds.len(), 4);
    assert_eq!(record.report.len(), 5);
    assert_eq!(record.figures.len(), 1);
    assert!(record.continuity.iter().all(|c| c.report.is_clean()));
    let refiner_calls = backend.call_log().iter().filter(|c| c.agent == "Refiner_1").count();
    assert_eq!(refiner_calls, 3);
    let root = ws.path().join("run");
    assert!(!root.join(crate::model::store::STOP_FILE).exists());
    let persisted = RunRecord::load(&root.join("run_record.json")).unwrap();
    assert_eq!(persisted, record);
}

#[test]
fn stop_flag_at_review_k_leaves_k_plus_one_rounds() {
    for k in 0..3usize {
        let mut lists = fixtures(3);
        set(&mut lists, "Refiner_2", k, "NO_FOLLOWUP");
        let (ws, record, _) = run_with(lists, 3);
        assert_eq!(record.status, Stage::Done);
        assert_eq!(record.rounds.len(), k + 1, "flag at review {k}");
        assert!(ws.path().join("run").join(crate::model::store::STOP_FILE).is_file());
    }
}

#[test]
fn zero_budget_never_calls_the_refiners() {
    let (_ws, record, backend) = run_with(fixtures(0), 0);
    assert_eq!(record.status, Stage::Done);
    assert_eq!(record.rounds.len(), 1);
    assert!(backend.call_log().iter().all(|c| !c.agent.starts_with("Refiner")));
}

#[test]
fn failed_script_gets_one_repair_pass() {
    let mut lists = fixtures(0);
    set(&mut lists, "Coder_1", 0, &block("FAIL"));
    set(&mut lists, "Coder_2", 1, &block("fixed"));
    let (ws, record, backend) = run_with(lists, 0);
    assert_eq!(record.status, Stage::Done, "{:?}", record.status);
    let round = ws.path().join("run/rounds/round_0");
    assert_eq!(fs::read_to_string(round.join("failed_attempt/script.py")).unwrap(), "FAIL");
    assert_eq!(fs::read_to_string(round.join("script.py")).unwrap(), "fixed");
    let rr: RoundRecord = serde_json::from_str(&fs::read_to_string(round.join(ROUND_RECORD_FILE)).unwrap()).unwrap();
    assert_eq!(rr.repair_attempts, 1);
    assert_eq!(rr.script_origin.unwrap().role, AgentRole::Coder2);
    let repair = backend.call_log().into_iter().find(|c| c.agent == "Coder_2" && c.index == 1).unwrap();
    assert!(repair.request.prompt.contains("Traceback: boom"));
    assert!(repair.request.prompt.contains("FAIL"));
}

#[test]
fn second_failure_fails_the_run() {
    let mut lists = fixtures(0);
    set(&mut lists, "Coder_1", 0, &block("FAIL"));
    set(&mut lists, "Coder_2", 1, &block("FAIL again"));
    let (ws, record, _) = run_with(lists, 0);
    assert!(reason(&record).contains("round 0 script failed"), "{}", reason(&record));
    let round = ws.path().join("run/rounds/round_0");
    assert!(round.join(FAILED_ATTEMPT_DIR).is_dir());
    assert!(!round.join(ROUND_RECORD_FILE).exists());
    assert!(record.rounds.is_empty());
}

#[test]
fn sandbox_violation_fails_the_run() {
    let mut lists = fixtures(0);
    set(&mut lists, "Coder_1", 0, &block("ESCAPE"));
    let (_ws, record, _) = run_with(lists, 0);
    assert!(reason(&record).contains("sandbox policy violated"));
}

#[test]
fn unregistered_tool_fails_the_run() {
    let mut lists = fixtures(0);
    set(&mut lists, "Coder_1", 0, &block("TOOL:launch_rockets"));
    let (_ws, record, _) = run_with(lists, 0);
    assert!(reason(&record).contains("launch_rockets"));

    let mut lists = fixtures(0);
    set(&mut lists, "Coder_1", 0, &block("TOOL:fold_protein"));
    let (_ws, record, _) = run_with(lists, 0);
    assert_eq!(record.status, Stage::Done);
}

#[test]
fn continuity_is_strict_under_fixtures() {
    let mut lists = fixtures(1);
    set(&mut lists, "Refiner_1", 0, &block("DROP"));
    let (ws, record, _) = run_with(lists, 1);
    assert!(reason(&record).contains("samples: dropped"), "{}", reason(&record));
    assert!(!ws.path().join("run/rounds/round_1").join(ROUND_RECORD_FILE).exists());
}

#[test]
fn fixture_miss_fails_and_keeps_transcripts() {
    let mut lists = fixtures(3);
    lists.retain(|(r, _)| r != "Refiner_2");
    let (ws, record, _) = run_with(lists, 3);
    assert!(reason(&record).contains("Refiner_2"));
    let transcripts = ws.path().join("run/transcripts");
    assert!(transcripts.join("Coder_1_0.json").is_file());
    assert!(transcripts.join("Refiner_1_0.json").is_file());
    assert_eq!(record.rounds.len(), 1);
}

#[test]
fn empty_registry_is_rejected() {
    let ws = tempfile::tempdir().unwrap();
    let mut config = RunConfig::with_uniform_model("m");
    config.workspace = ws.path().to_path_buf();
    config.tools = crate::model::ToolRegistry::new(vec![]).unwrap();
    let mut run = new_run_with_id(config, ResearchQuery::new("q", vec![], 0).unwrap(), "run").unwrap();
    let backend = ScriptedBackend::from_role_lists(fixtures(0));
    let record = run_pipeline(&mut run, &backend, &FakeExecutor).unwrap();
    assert!(reason(&record).contains("registry is empty"));
    assert!(backend.call_log().is_empty());
}

#[test]
fn resume_continues_without_reexecuting_rounds() {
    let ws = tempfile::tempdir().unwrap();
    let root = ws.path().join("run");
    {
        let mut run = new_run(ws.path(), 3);
        let mut partial = fixtures(3);
        // the second review is missing: rounds 0 and 1 complete, then failure
        partial.iter_mut().find(|(r, _)| r == "Refiner_2").unwrap().1.truncate(1);
        let backend = ScriptedBackend::from_role_lists(partial);
        let record = run_pipeline(&mut run, &backend, &FakeExecutor).unwrap();
        assert!(reason(&record).contains("Refiner_2"));
        assert_eq!(record.rounds.len(), 2);
    }
    let round0 = fs::read(root.join("rounds/round_0/results.json")).unwrap();
    // a half-written round left behind by a crash
    fs::create_dir(root.join("rounds/round_2")).unwrap();
    fs::write(root.join("rounds/round_2/script.py"), "partial").unwrap();

    let mut run = open_run(&root).unwrap();
    let backend = ScriptedBackend::from_role_lists(fixtures(3));
    for (role, count) in rewind_calls(&run).unwrap() {
        backend.advance(role.as_str(), count);
    }
    let record = run_pipeline(&mut run, &backend, &FakeExecutor).unwrap();
    assert_eq!(record.status, Stage::Done, "{:?}", record.status);
    assert_eq!(record.rounds.len(), 4);
    assert_eq!(fs::read(root.join("rounds/round_0/results.json")).unwrap(), round0);
    assert!(root.join("rounds/round_2.incomplete-1/script.py").is_file());
    assert!(backend.call_log().iter().all(|c| !c.agent.starts_with("Scientist") && !c.agent.starts_with("Coder")));
    let reviews: Vec<u32> = backend.call_log().iter().filter(|c| c.agent == "Refiner_1").map(|c| c.index).collect();
    assert_eq!(reviews, vec![1, 2]);
    // the interrupted review's generator transcript was set aside
    assert!(root.join("transcripts/interrupted-1/Refiner_1_1.json").is_file());
    assert!(history_violations(&backend.call_log()).is_empty());
}

#[test]
fn resume_of_a_done_run_is_a_no_op() {
    let (ws, first, _) = run_with(fixtures(1), 1);
    let mut run = open_run(ws.path().join("run")).unwrap();
    let backend = ScriptedBackend::from_role_lists(Vec::<(String, Vec<String>)>::new());
    let second = run_pipeline(&mut run, &backend, &FakeExecutor).unwrap();
    assert_eq!(second.status, Stage::Done);
    assert_eq!(second.rounds.len(), first.rounds.len());
    assert_eq!(second.report, first.report);
    assert!(backend.call_log().is_empty());
}

proptest::proptest! {
    #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]

    #[test]
    fn rounds_never_exceed_the_budget(n_test in 0u32..5, stop in proptest::option::of(0usize..5)) {
        let mut lists = fixtures(n_test as usize);
        if let Some(k) = stop.filter(|k| *k < n_test as usize) {
            set(&mut lists, "Refiner_2", k, "NO_FOLLOWUP");
        }
        let (_ws, record, backend) = run_with(lists, n_test);
        proptest::prop_assert_eq!(&record.status, &Stage::Done);
        let expected = match stop.filter(|k| *k < n_test as usize) {
            Some(k) => k + 1,
            None => n_test as usize + 1,
        };
        proptest::prop_assert_eq!(record.rounds.len(), expected);
        let reviews = backend.call_log().iter().filter(|c| c.agent == "Refiner_2").count();
        proptest::prop_assert!(reviews <= n_test as usize);
        for (i, r) in record.rounds.iter().enumerate() {
            proptest::prop_assert_eq!(r.round_index as usize, i);
        }
    }
}

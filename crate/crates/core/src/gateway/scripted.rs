//! Deterministic backend serving pre-authored replies.
//!
//! Fixtures are keyed by `(agent role, per-role call index)` rather than by
//! prompt content, so volatile prompt details never break a replay. On disk a
//! fixture set is either a directory of `<role>_<index>.<ext>` files or a JSON
//! object mapping each role to its ordered list of replies.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;
use std::sync::Mutex;

use thiserror::Error;

use super::{Backend, BackendTag, ChatMessage, ChatRequest, GatewayError, Reply};
use crate::model::{AgentKind, AgentRole};

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("fixture ({0}, {1}) defined twice")]
    Duplicate(String, u32),
    #[error("fixture file name `{0}` is not <role>_<index>.<ext>")]
    BadName(String),
    #[error("fixture file {path}: {message}")]
    Parse { path: String, message: String },
    #[error("reading fixtures: {0}")]
    Io(#[from] std::io::Error),
}

/// A fixture reply keyed by `(role, call index)`.
pub type Fixture = ((String, u32), String);

/// One call seen by the scripted backend.
#[derive(Debug, Clone, PartialEq)]
pub struct CallRecord {
    pub agent: String,
    pub index: u32,
    pub request: ChatRequest,
    /// Transcript returned to the caller; `None` for a fixture miss.
    pub transcript: Option<Vec<ChatMessage>>,
}

#[derive(Debug, Default)]
struct State {
    next: HashMap<String, u32>,
    log: Vec<CallRecord>,
}

#[derive(Debug, Default)]
pub struct ScriptedBackend {
    fixtures: BTreeMap<String, BTreeMap<u32, String>>,
    state: Mutex<State>,
}

impl ScriptedBackend {
    pub fn new<I, S>(fixtures: I) -> Result<Self, FixtureError>
    where
        I: IntoIterator<Item = ((S, u32), String)>,
        S: Into<String>,
    {
        let mut map: BTreeMap<String, BTreeMap<u32, String>> = BTreeMap::new();
        for ((role, index), reply) in fixtures {
            let role = role.into();
            let slot = map.entry(role.clone()).or_default();
            if slot.insert(index, reply).is_some() {
                return Err(FixtureError::Duplicate(role, index));
            }
        }
        Ok(Self {
            fixtures: map,
            state: Mutex::default(),
        })
    }

    /// Builds fixtures from ordered per-role reply lists.
    pub fn from_role_lists<I, R, L, T>(lists: I) -> Self
    where
        I: IntoIterator<Item = (R, L)>,
        R: Into<String>,
        L: IntoIterator<Item = T>,
        T: Into<String>,
    {
        let fixtures = lists.into_iter().map(|(role, replies)| {
            let replies = replies.into_iter().enumerate().map(|(i, r)| (i as u32, r.into())).collect();
            (role.into(), replies)
        });
        Self {
            fixtures: fixtures.collect(),
            state: Mutex::default(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, FixtureError> {
        Self::new(load_fixtures(path)?)
    }

    /// Skips the first `n` fixtures of `role`, for resuming a run whose
    /// earlier calls already happened.
    pub fn advance(&self, role: &str, n: u32) {
        let mut state = self.state.lock().unwrap_or_else(|p| p.into_inner());
        *state.next.entry(role.to_string()).or_insert(0) += n;
    }

    pub fn call_log(&self) -> Vec<CallRecord> {
        self.state.lock().unwrap_or_else(|p| p.into_inner()).log.clone()
    }

    pub fn fixture_count(&self) -> usize {
        self.fixtures.values().map(BTreeMap::len).sum()
    }
}

impl Backend for ScriptedBackend {
    fn reply(&self, request: &ChatRequest) -> Result<Reply, GatewayError> {
        let mut state = self.state.lock().unwrap_or_else(|p| p.into_inner());
        let slot = state.next.entry(request.agent.clone()).or_insert(0);
        let index = *slot;
        *slot += 1;
        let text = self.fixtures.get(&request.agent).and_then(|m| m.get(&index)).cloned();
        state.log.push(CallRecord {
            agent: request.agent.clone(),
            index,
            request: request.clone(),
            transcript: text.as_deref().map(|t| request.transcript_with(t)),
        });
        match text {
            Some(text) => Ok(Reply { text, usage: None }),
            None => Err(GatewayError::FixtureMiss {
                role: request.agent.clone(),
                index,
            }),
        }
    }

    fn tag(&self) -> BackendTag {
        BackendTag::Scripted
    }
}

/// Checks a call log against the chat-history protocol: generators and
/// standalone agents start from an empty history, and every reflector call
/// carries exactly the transcript of its partner's most recent call.
/// Returns one message per offending call.
pub fn history_violations(log: &[CallRecord]) -> Vec<String> {
    let mut violations = Vec::new();
    for (i, call) in log.iter().enumerate() {
        let label = format!("{} call {}", call.agent, call.index);
        let Ok(role) = call.agent.parse::<AgentRole>() else {
            violations.push(format!("{label}: unknown role"));
            continue;
        };
        let history = &call.request.msg_history;
        if role.kind() != AgentKind::Reflector {
            if !history.is_empty() {
                violations.push(format!("{label}: non-empty history ({} messages)", history.len()));
            }
            continue;
        }
        let partner = role.partner().map(AgentRole::as_str);
        let source = log[..i].iter().rev().find(|c| Some(c.agent.as_str()) == partner);
        match source.and_then(|c| c.transcript.as_ref()) {
            None => violations.push(format!("{label}: no completed partner call precedes it")),
            Some(transcript) => {
                let expected = serde_json::to_vec(transcript).unwrap_or_default();
                let actual = serde_json::to_vec(history).unwrap_or_default();
                if expected != actual {
                    violations.push(format!("{label}: history differs from the partner transcript"));
                }
            }
        }
    }
    violations
}

/// Reads a fixture set from a directory or a JSON file.
pub fn load_fixtures(path: &Path) -> Result<Vec<Fixture>, FixtureError> {
    if path.is_dir() {
        let mut out = Vec::new();
        let mut entries: Vec<_> = fs::read_dir(path)?.collect::<Result<_, _>>()?;
        entries.sort_by_key(|e| e.file_name());
        for entry in entries {
            if !entry.file_type()?.is_file() {
                continue;
            }
            let name = entry.file_name().to_string_lossy().into_owned();
            if name.starts_with('.') {
                continue;
            }
            let stem = name.split_once('.').map_or(name.as_str(), |(s, _)| s);
            let (role, index) = stem
                .rsplit_once('_')
                .and_then(|(r, i)| i.parse::<u32>().ok().map(|i| (r.to_string(), i)))
                .ok_or_else(|| FixtureError::BadName(name.clone()))?;
            out.push(((role, index), fs::read_to_string(entry.path())?));
        }
        Ok(out)
    } else {
        let text = fs::read_to_string(path)?;
        let lists: BTreeMap<String, Vec<String>> = serde_json::from_str(&text).map_err(|e| FixtureError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Ok(lists
            .into_iter()
            .flat_map(|(role, replies)| {
                replies
                    .into_iter()
                    .enumerate()
                    .map(move |(i, r)| ((role.clone(), i as u32), r))
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{complete, test_request};
    use proptest::prelude::*;

    #[test]
    fn serves_fixture_verbatim() {
        let backend = ScriptedBackend::new([(("Scientist_1", 0), "  exact text\n".to_string())]).unwrap();
        let resp = complete(&backend, &test_request("Scientist_1", vec![])).unwrap();
        assert_eq!(resp.text, "  exact text\n");
        assert_eq!(resp.backend_tag, BackendTag::Scripted);
    }

    #[test]
    fn history_checker_accepts_the_protocol_and_flags_deviations() {
        let backend = ScriptedBackend::from_role_lists([("Coder_1", vec!["draft"]), ("Coder_2", vec!["APPROVED", "APPROVED"])]);
        complete(&backend, &test_request("Coder_1", vec![])).unwrap();
        let transcript = backend.call_log()[0].transcript.clone().unwrap();
        complete(&backend, &test_request("Coder_2", transcript.clone())).unwrap();
        assert!(history_violations(&backend.call_log()).is_empty());

        let mut truncated = transcript;
        truncated.pop();
        complete(&backend, &test_request("Coder_2", truncated)).unwrap();
        let v = history_violations(&backend.call_log());
        assert_eq!(v.len(), 1);
        assert!(v[0].starts_with("Coder_2 call 1"), "{v:?}");

        let lone = ScriptedBackend::from_role_lists([("Scientist_2", vec!["APPROVED"]), ("Scientist_1", vec!["x"])]);
        lone.reply(&test_request("Scientist_2", vec![])).unwrap();
        lone.reply(&test_request("Scientist_1", vec![ChatMessage::assistant("x")])).unwrap();
        assert_eq!(history_violations(&lone.call_log()).len(), 2);
    }

    #[test]
    fn exhausted_role_misses() {
        let backend = ScriptedBackend::from_role_lists([("R", vec!["a", "b"])]);
        complete(&backend, &test_request("R", vec![])).unwrap();
        complete(&backend, &test_request("R", vec![])).unwrap();
        match complete(&backend, &test_request("R", vec![])) {
            Err(GatewayError::FixtureMiss { role, index }) => assert_eq!((role.as_str(), index), ("R", 2)),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(backend.call_log().len(), 3);
        assert!(backend.call_log()[2].transcript.is_none());
    }

    #[test]
    fn empty_fixture_set_always_misses() {
        let backend = ScriptedBackend::default();
        assert!(matches!(
            complete(&backend, &test_request("Anyone", vec![])),
            Err(GatewayError::FixtureMiss { index: 0, .. })
        ));
    }

    #[test]
    fn duplicate_keys_are_rejected() {
        let err = ScriptedBackend::new([(("R", 0), "a".to_string()), (("R", 0), "b".to_string())]).unwrap_err();
        assert!(matches!(err, FixtureError::Duplicate(r, 0) if r == "R"));
    }

    #[test]
    fn advance_skips_consumed_fixtures() {
        let backend = ScriptedBackend::from_role_lists([("R", vec!["a", "b"])]);
        backend.advance("R", 1);
        assert_eq!(complete(&backend, &test_request("R", vec![])).unwrap().text, "b");
    }

    #[test]
    fn replay_is_byte_identical() {
        let make = || ScriptedBackend::from_role_lists([("A", vec!["x", "y"]), ("B", vec!["z"])]);
        let run = |b: &ScriptedBackend| {
            ["A", "B", "A"]
                .iter()
                .map(|r| complete(b, &test_request(r, vec![])).unwrap().transcript)
                .collect::<Vec<_>>()
        };
        let (b1, b2) = (make(), make());
        let (t1, t2) = (run(&b1), run(&b2));
        assert_eq!(serde_json::to_vec(&t1).unwrap(), serde_json::to_vec(&t2).unwrap());
    }

    #[test]
    fn loads_directory_and_json_forms() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("Coder_1_0.md"), "first").unwrap();
        fs::write(dir.path().join("Coder_1_1.md"), "second").unwrap();
        fs::write(dir.path().join("Plot_Designer_2_0.txt"), "APPROVED").unwrap();
        let mut loaded = load_fixtures(dir.path()).unwrap();
        loaded.sort();
        assert_eq!(loaded[0], (("Coder_1".to_string(), 0), "first".to_string()));
        assert_eq!(loaded[2].0, ("Plot_Designer_2".to_string(), 0));

        let json = dir.path().join("f.json");
        fs::write(&json, r#"{"Scientist_1": ["a", "b"]}"#).unwrap();
        let backend = ScriptedBackend::load(&json).unwrap();
        assert_eq!(backend.fixture_count(), 2);

        fs::write(dir.path().join("oops.md"), "x").unwrap();
        assert!(matches!(load_fixtures(dir.path()), Err(FixtureError::BadName(_))));
    }

    proptest! {
        // Any interleaving of roles sees each role's fixtures in order.
        #[test]
        fn per_role_order_survives_interleaving(order in proptest::collection::vec(0usize..3, 0..30)) {
            let roles = ["A", "B", "C"];
            let lists: Vec<(String, Vec<String>)> = roles
                .iter()
                .map(|r| (r.to_string(), (0..30).map(|i| format!("{r}-{i}")).collect()))
                .collect();
            let backend = ScriptedBackend::from_role_lists(lists);
            let mut seen: HashMap<&str, u32> = HashMap::new();
            for &i in &order {
                let role = roles[i];
                let resp = complete(&backend, &test_request(role, vec![])).unwrap();
                let n = seen.entry(role).or_insert(0);
                prop_assert_eq!(resp.text, format!("{role}-{n}"));
                *n += 1;
            }
            let log = backend.call_log();
            prop_assert_eq!(log.len(), order.len());
            for (rec, &i) in log.iter().zip(&order) {
                prop_assert_eq!(rec.agent.as_str(), roles[i]);
            }
        }
    }
}

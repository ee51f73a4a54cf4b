//! Run configuration and its on-disk JSON format.
//!
//! Defaults applied by [`validate_config`] when a field is absent:
//!
//! | field                | default                                   |
//! |----------------------|-------------------------------------------|
//! | `workspace`          | `runs`                                    |
//! | `n_test`             | 3                                         |
//! | `script_timeout`     | 600 s                                     |
//! | `interpreter_command`| `python3`                                 |
//! | `seed`               | 0                                         |
//! | `compile_report`     | false                                     |
//! | `repair_passes`      | 1                                         |
//! | `tools`              | built-in protein toolkit registry         |
//! | binding temperature  | 1 for `Scientist_1`, 0 for every other role |
//!
//! Every role in [`AgentRole::ALL`] needs a model binding; a binding may be a
//! bare model id string or an object with `model`, `temperature` and
//! `reasoning_effort`.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::tools::ToolRegistry;
use super::AgentRole;

pub const DEFAULT_WORKSPACE: &str = "runs";
pub const DEFAULT_N_TEST: u32 = 3;
pub const DEFAULT_SCRIPT_TIMEOUT_SECS: f64 = 600.0;
pub const DEFAULT_INTERPRETER: &str = "python3";
pub const DEFAULT_SEED: u64 = 0;
pub const DEFAULT_REPAIR_PASSES: u32 = 1;
pub const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";
pub const DEFAULT_API_KEY_ENV: &str = "OPENAI_API_KEY";
pub const DEFAULT_FILE_SIZE_LIMIT: u64 = 1 << 30;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config field `{path}`: {message}")]
    Parse { path: String, message: String },
    #[error("no model binding for agent role `{0}`")]
    MissingRoleBinding(String),
    #[error("unknown agent role `{0}` in agent_models")]
    UnknownRole(String),
    #[error("temperature {0} outside [0, 2]")]
    InvalidTemperature(f64),
    #[error("script_timeout must be positive")]
    NonPositiveTimeout,
    #[error("interpreter_command is empty")]
    EmptyInterpreter,
    #[error("tool registry: {0}")]
    Registry(#[from] super::tools::RegistryError),
    #[error("reading config: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReasoningEffort {
    Low,
    Medium,
    High,
}

/// Model settings for one agent role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBinding {
    pub model: String,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning_effort: Option<ReasoningEffort>,
}

/// Live-backend connection settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSettings {
    pub base_url: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub max_attempts: u32,
    pub initial_backoff_secs: f64,
    pub request_timeout_secs: f64,
}

impl Default for BackendSettings {
    fn default() -> Self {
        Self {
            base_url: DEFAULT_BASE_URL.to_string(),
            api_key_env: DEFAULT_API_KEY_ENV.to_string(),
            max_attempts: 3,
            initial_backoff_secs: 1.0,
            request_timeout_secs: 600.0,
        }
    }
}

/// Policy flags for the script sandbox.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SandboxSettings {
    /// Deny socket access from generated scripts.
    pub no_network: bool,
    /// CPU-seconds limit; defaults to the script timeout rounded up.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cpu_time_limit_secs: Option<u64>,
    pub file_size_limit_bytes: u64,
    /// Optional isolation wrapper prepended to the interpreter command, e.g. a
    /// container runner.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub wrapper: Vec<String>,
    /// Directory holding `functions.py`; added to the interpreter's module path.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub toolkit_dir: Option<PathBuf>,
    /// Extra environment variable names passed through to scripts.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub env_allow: Vec<String>,
}

impl Default for SandboxSettings {
    fn default() -> Self {
        Self {
            no_network: true,
            cpu_time_limit_secs: None,
            file_size_limit_bytes: DEFAULT_FILE_SIZE_LIMIT,
            wrapper: Vec::new(),
            toolkit_dir: None,
            env_allow: Vec::new(),
        }
    }
}

/// Validated run configuration; serializes to `config.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub workspace: PathBuf,
    pub backend: BackendSettings,
    pub agent_models: BTreeMap<AgentRole, ModelBinding>,
    pub n_test: u32,
    /// Seconds.
    pub script_timeout: f64,
    pub interpreter_command: Vec<String>,
    pub seed: u64,
    pub compile_report: bool,
    pub repair_passes: u32,
    pub sandbox: SandboxSettings,
    pub tools: ToolRegistry,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompts_dir: Option<PathBuf>,
    /// Digest of the prompt templates used by the run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_hash: Option<String>,
}

impl RunConfig {
    pub fn binding(&self, role: AgentRole) -> &ModelBinding {
        // validate_config guarantees every role is bound
        &self.agent_models[&role]
    }

    pub fn from_json_str(text: &str) -> Result<Self, ConfigError> {
        validate_config(text)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        validate_config(&std::fs::read_to_string(path)?)
    }

    /// Configuration with every role bound to `model` and all defaults.
    pub fn with_uniform_model(model: &str) -> Self {
        let agent_models = AgentRole::ALL
            .into_iter()
            .map(|role| {
                let binding = ModelBinding {
                    model: model.to_string(),
                    temperature: default_temperature(role),
                    reasoning_effort: None,
                };
                (role, binding)
            })
            .collect();
        Self {
            workspace: PathBuf::from(DEFAULT_WORKSPACE),
            backend: BackendSettings::default(),
            agent_models,
            n_test: DEFAULT_N_TEST,
            script_timeout: DEFAULT_SCRIPT_TIMEOUT_SECS,
            interpreter_command: vec![DEFAULT_INTERPRETER.to_string()],
            seed: DEFAULT_SEED,
            compile_report: false,
            repair_passes: DEFAULT_REPAIR_PASSES,
            sandbox: SandboxSettings::default(),
            tools: crate::toolkit::builtin_registry(),
            prompts_dir: None,
            prompt_hash: None,
        }
    }
}

pub fn default_temperature(role: AgentRole) -> f64 {
    if role == AgentRole::Scientist1 {
        1.0
    } else {
        0.0
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawBinding {
    Model(String),
    Full {
        model: String,
        #[serde(default)]
        temperature: Option<f64>,
        #[serde(default)]
        reasoning_effort: Option<ReasoningEffort>,
    },
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawCommand {
    Line(String),
    Args(Vec<String>),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    workspace: Option<PathBuf>,
    #[serde(default)]
    backend: BackendSettings,
    agent_models: BTreeMap<String, RawBinding>,
    n_test: Option<u32>,
    script_timeout: Option<f64>,
    interpreter_command: Option<RawCommand>,
    seed: Option<u64>,
    compile_report: Option<bool>,
    repair_passes: Option<u32>,
    #[serde(default)]
    sandbox: SandboxSettings,
    tools: Option<ToolRegistry>,
    prompts_dir: Option<PathBuf>,
    prompt_hash: Option<String>,
}

/// Parses and validates a configuration document, filling defaults.
pub fn validate_config(text: &str) -> Result<RunConfig, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let raw: RawConfig = serde_path_to_error::deserialize(de).map_err(|err| ConfigError::Parse {
        path: err.path().to_string(),
        message: err.inner().to_string(),
    })?;

    let mut agent_models = BTreeMap::new();
    for (name, raw_binding) in raw.agent_models {
        let role: AgentRole = name.parse().map_err(|_| ConfigError::UnknownRole(name.clone()))?;
        let binding = match raw_binding {
            RawBinding::Model(model) => ModelBinding {
                model,
                temperature: default_temperature(role),
                reasoning_effort: None,
            },
            RawBinding::Full {
                model,
                temperature,
                reasoning_effort,
            } => ModelBinding {
                model,
                temperature: temperature.unwrap_or_else(|| default_temperature(role)),
                reasoning_effort,
            },
        };
        if !(0.0..=2.0).contains(&binding.temperature) {
            return Err(ConfigError::InvalidTemperature(binding.temperature));
        }
        agent_models.insert(role, binding);
    }
    if let Some(missing) = AgentRole::ALL.into_iter().find(|r| !agent_models.contains_key(r)) {
        return Err(ConfigError::MissingRoleBinding(missing.as_str().to_string()));
    }

    let script_timeout = raw.script_timeout.unwrap_or(DEFAULT_SCRIPT_TIMEOUT_SECS);
    if !(script_timeout.is_finite() && script_timeout > 0.0) {
        return Err(ConfigError::NonPositiveTimeout);
    }

    let interpreter_command = match raw.interpreter_command {
        None => vec![DEFAULT_INTERPRETER.to_string()],
        Some(RawCommand::Line(line)) => line.split_whitespace().map(str::to_string).collect(),
        Some(RawCommand::Args(args)) => args,
    };
    if interpreter_command.first().is_none_or(|c| c.trim().is_empty()) {
        return Err(ConfigError::EmptyInterpreter);
    }

    let tools = match raw.tools {
        Some(registry) if registry.is_empty() => return Err(super::tools::RegistryError::Empty.into()),
        Some(registry) => registry,
        None => crate::toolkit::builtin_registry(),
    };

    Ok(RunConfig {
        workspace: raw.workspace.unwrap_or_else(|| PathBuf::from(DEFAULT_WORKSPACE)),
        backend: raw.backend,
        agent_models,
        n_test: raw.n_test.unwrap_or(DEFAULT_N_TEST),
        script_timeout,
        interpreter_command,
        seed: raw.seed.unwrap_or(DEFAULT_SEED),
        compile_report: raw.compile_report.unwrap_or(false),
        repair_passes: raw.repair_passes.unwrap_or(DEFAULT_REPAIR_PASSES),
        sandbox: raw.sandbox,
        tools,
        prompts_dir: raw.prompts_dir,
        prompt_hash: raw.prompt_hash,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use serde_json::json;

    fn all_bindings() -> serde_json::Map<String, serde_json::Value> {
        AgentRole::ALL
            .into_iter()
            .map(|r| (r.as_str().to_string(), json!("gpt-4.1")))
            .collect()
    }

    #[test]
    fn full_config_echoes_values() {
        let mut models = all_bindings();
        models.insert("Coder_1".into(), json!({"model": "o3-mini", "temperature": 0.0, "reasoning_effort": "high"}));
        let doc = json!({
            "workspace": "/tmp/ws",
            "agent_models": models,
            "n_test": 2,
            "script_timeout": 30,
            "interpreter_command": "python3 -u",
            "seed": 7,
            "compile_report": true,
        });
        let cfg = validate_config(&doc.to_string()).unwrap();
        assert_eq!(cfg.workspace, PathBuf::from("/tmp/ws"));
        assert_eq!(cfg.n_test, 2);
        assert_eq!(cfg.script_timeout, 30.0);
        assert_eq!(cfg.interpreter_command, vec!["python3", "-u"]);
        assert_eq!(cfg.seed, 7);
        assert!(cfg.compile_report);
        let coder = cfg.binding(AgentRole::Coder1);
        assert_eq!(coder.model, "o3-mini");
        assert_eq!(coder.reasoning_effort, Some(ReasoningEffort::High));
    }

    #[test]
    fn missing_refiner_binding_is_reported() {
        let mut models = all_bindings();
        models.remove("Refiner_1");
        let doc = json!({ "agent_models": models });
        match validate_config(&doc.to_string()) {
            Err(ConfigError::MissingRoleBinding(role)) => assert_eq!(role, "Refiner_1"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn omitted_fields_take_documented_defaults() {
        let doc = json!({ "agent_models": all_bindings() });
        let cfg = validate_config(&doc.to_string()).unwrap();
        assert_eq!(cfg.script_timeout, 600.0);
        assert_eq!(cfg.n_test, 3);
        assert_eq!(cfg.interpreter_command, vec!["python3"]);
        assert_eq!(cfg.seed, 0);
        assert!(!cfg.compile_report);
        assert_eq!(cfg.repair_passes, 1);
        assert_eq!(cfg.workspace, PathBuf::from("runs"));
        assert_eq!(cfg.binding(AgentRole::Scientist1).temperature, 1.0);
        for role in AgentRole::ALL.into_iter().filter(|r| *r != AgentRole::Scientist1) {
            assert_eq!(cfg.binding(role).temperature, 0.0, "{role}");
        }
        assert!(cfg.tools.contains("fold_protein"));
    }

    #[test]
    fn rejects_bad_temperature_and_timeout() {
        let mut models = all_bindings();
        models.insert("Coder_2".into(), json!({"model": "m", "temperature": 2.5}));
        let doc = json!({ "agent_models": models });
        assert!(matches!(validate_config(&doc.to_string()), Err(ConfigError::InvalidTemperature(t)) if t == 2.5));

        let doc = json!({ "agent_models": all_bindings(), "script_timeout": 0 });
        assert!(matches!(validate_config(&doc.to_string()), Err(ConfigError::NonPositiveTimeout)));
        let doc = json!({ "agent_models": all_bindings(), "script_timeout": -5 });
        assert!(matches!(validate_config(&doc.to_string()), Err(ConfigError::NonPositiveTimeout)));
    }

    #[test]
    fn parse_errors_name_the_field() {
        let doc = json!({ "agent_models": all_bindings(), "n_test": "three" });
        let err = validate_config(&doc.to_string()).unwrap_err();
        assert!(err.to_string().contains("n_test"), "{err}");

        let doc = json!({ "agent_models": all_bindings(), "sandbox": {"no_netwrk": true} });
        let err = validate_config(&doc.to_string()).unwrap_err();
        assert!(err.to_string().contains("sandbox"), "{err}");
    }

    #[test]
    fn unknown_roles_are_rejected() {
        let mut models = all_bindings();
        models.insert("Scientist_3".into(), json!("m"));
        let doc = json!({ "agent_models": models });
        assert!(matches!(validate_config(&doc.to_string()), Err(ConfigError::UnknownRole(r)) if r == "Scientist_3"));
    }

    proptest! {
        #[test]
        fn config_round_trips_through_json(
            n_test in 0u32..10,
            timeout in 0.5f64..5000.0,
            seed in any::<u64>(),
            temp in 0.0f64..=2.0,
            compile in any::<bool>(),
        ) {
            let mut cfg = RunConfig::with_uniform_model("m");
            cfg.n_test = n_test;
            cfg.script_timeout = timeout;
            cfg.seed = seed;
            cfg.compile_report = compile;
            cfg.agent_models.get_mut(&AgentRole::Refiner2).unwrap().temperature = temp;
            cfg.prompt_hash = Some("abc".into());
            let text = serde_json::to_string_pretty(&cfg).unwrap();
            let back = validate_config(&text).unwrap();
            prop_assert_eq!(back, cfg);
        }
    }
}

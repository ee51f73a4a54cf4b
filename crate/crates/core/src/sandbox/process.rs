//! Child-process executor.
//!
//! Each script runs as the leader of its own process group with:
//!
//! - the working directory set to its round directory;
//! - a scrubbed environment ([`ALLOWED_ENV`] from the parent, the run seed
//!   and round, a private `HOME`/`TMPDIR`, plus configured pass-throughs);
//! - CPU-time and file-size rlimits;
//! - an interpreter start-up hook that refuses socket connections and file
//!   writes outside the working directory, `HOME` and `TMPDIR`.
//!
//! The hook only covers the interpreter itself, so the watched tree is also
//! digested before and after the run and any change outside the working
//! directory is reported as a violation. On timeout the whole process group
//! is killed.

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io;
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use super::{ExecRequest, ExecutionRecord, Executor, SandboxError, TIMEOUT_EXIT};
use crate::model::config::SandboxSettings;
use crate::model::store::{STDERR_LOG, STDOUT_LOG};
use crate::model::RunConfig;
use crate::toolkit::{ROUND_ENV, SEED_ENV};
use crate::util;

/// Variables copied from the parent environment when set.
pub const ALLOWED_ENV: &[&str] = &["PATH", "LANG", "LC_ALL", "TZ"];

const GUARD: &str = include_str!("sitecustomize.py");
const POLL: Duration = Duration::from_millis(10);

#[derive(Debug, Clone)]
pub struct Sandbox {
    interpreter: Vec<String>,
    timeout: Duration,
    seed: u64,
    settings: SandboxSettings,
}

impl Sandbox {
    pub fn new(interpreter: Vec<String>, timeout_secs: f64, seed: u64, settings: SandboxSettings) -> Self {
        Self {
            interpreter,
            timeout: Duration::from_secs_f64(timeout_secs.max(0.0)),
            seed,
            settings,
        }
    }

    pub fn from_config(config: &RunConfig) -> Self {
        Self::new(
            config.interpreter_command.clone(),
            config.script_timeout,
            config.seed,
            config.sandbox.clone(),
        )
    }

    pub fn timeout(&self) -> Duration {
        self.timeout
    }

    fn environment(&self, work_dir: &Path, support: &Path, round: Option<u32>) -> io::Result<Vec<(String, String)>> {
        let home = support.join("home");
        let tmp = support.join("tmp");
        let guard = support.join("guard");
        for dir in [&home, &tmp, &guard] {
            fs::create_dir_all(dir)?;
        }
        fs::write(guard.join("sitecustomize.py"), GUARD)?;

        let mut env: Vec<(String, String)> = Vec::new();
        for name in ALLOWED_ENV.iter().copied().chain(self.settings.env_allow.iter().map(String::as_str)) {
            if let Ok(value) = std::env::var(name) {
                env.push((name.to_string(), value));
            }
        }
        if !env.iter().any(|(k, _)| k == "PATH") {
            env.push(("PATH".into(), "/usr/local/bin:/usr/bin:/bin".into()));
        }
        if !env.iter().any(|(k, _)| k == "LANG") {
            env.push(("LANG".into(), "C.UTF-8".into()));
        }
        let mut module_path = vec![guard.clone()];
        if let Some(dir) = &self.settings.toolkit_dir {
            module_path.push(std::path::absolute(dir)?);
        }
        let joined = |paths: &[PathBuf]| -> io::Result<String> {
            let os = std::env::join_paths(paths).map_err(io::Error::other)?;
            Ok(os.to_string_lossy().into_owned())
        };
        let s = |p: &Path| p.to_string_lossy().into_owned();
        env.extend([
            ("HOME".into(), s(&home)),
            ("TMPDIR".into(), s(&tmp)),
            ("MPLBACKEND".into(), "Agg".into()),
            (SEED_ENV.into(), self.seed.to_string()),
            ("PYTHONPATH".into(), joined(&module_path)?),
            ("PYTHONHASHSEED".into(), "0".into()),
            ("PYTHONDONTWRITEBYTECODE".into(), "1".into()),
            ("PYTHONNOUSERSITE".into(), "1".into()),
            ("PYTHONUNBUFFERED".into(), "1".into()),
            ("AUTOLAB_WRITE_ROOTS".into(), joined(&[work_dir.to_path_buf(), home, tmp])?),
        ]);
        if let Some(round) = round {
            env.push((ROUND_ENV.into(), round.to_string()));
        }
        if self.settings.no_network {
            env.push(("AUTOLAB_NO_NETWORK".into(), "1".into()));
        }
        Ok(env)
    }

    fn cpu_limit(&self) -> u64 {
        self.settings
            .cpu_time_limit_secs
            .unwrap_or_else(|| self.timeout.as_secs_f64().ceil() as u64 + 1)
            .max(1)
    }
}

impl Executor for Sandbox {
    fn execute(&self, request: &ExecRequest<'_>) -> Result<ExecutionRecord, SandboxError> {
        let work_dir = fs::canonicalize(request.work_dir)?;
        let mut body = request.source.body.clone();
        if !body.ends_with('\n') {
            body.push('\n');
        }
        util::write_atomic(&work_dir.join(request.script_name), body.as_bytes())?;

        let support = tempfile::Builder::new().prefix("autolab-sandbox-").tempdir()?;
        let env = self.environment(&work_dir, support.path(), request.round)?;
        let watch_root = request.watch_root.map(fs::canonicalize).transpose()?;
        let before = match &watch_root {
            Some(root) => Some(util::tree_digest(root, Some(&work_dir))?),
            None => None,
        };

        let mut argv: Vec<&str> = self.settings.wrapper.iter().map(String::as_str).collect();
        argv.extend(self.interpreter.iter().map(String::as_str));
        argv.push(request.script_name);
        let stdout_path = work_dir.join(STDOUT_LOG);
        let stderr_path = work_dir.join(STDERR_LOG);

        let mut command = Command::new(argv[0]);
        command
            .args(&argv[1..])
            .current_dir(&work_dir)
            .env_clear()
            .envs(env)
            .stdin(Stdio::null())
            .stdout(File::create(&stdout_path)?)
            .stderr(File::create(&stderr_path)?)
            .process_group(0);
        let cpu = self.cpu_limit();
        let fsize = self.settings.file_size_limit_bytes;
        // SAFETY: only async-signal-safe calls (setrlimit) run between fork and exec.
        unsafe {
            command.pre_exec(move || {
                for (resource, value) in [(libc::RLIMIT_CPU, cpu), (libc::RLIMIT_FSIZE, fsize)] {
                    let limit = libc::rlimit {
                        rlim_cur: value as libc::rlim_t,
                        rlim_max: value as libc::rlim_t,
                    };
                    if libc::setrlimit(resource, &limit) != 0 {
                        return Err(io::Error::last_os_error());
                    }
                }
                Ok(())
            });
        }

        let start = Instant::now();
        let mut child = command.spawn().map_err(|source| SandboxError::SpawnFailure {
            command: argv.join(" "),
            source,
        })?;
        let pgid = child.id() as libc::pid_t;
        let status = loop {
            if let Some(status) = child.try_wait()? {
                break Some(status);
            }
            if start.elapsed() >= self.timeout {
                kill_group(pgid);
                child.wait()?;
                break None;
            }
            thread::sleep(POLL.min(self.timeout.saturating_sub(start.elapsed())).max(Duration::from_millis(1)));
        };
        let wall_time = start.elapsed().as_secs_f64();
        // reap anything the script left running in the background
        kill_group(pgid);

        let (exit_status, timed_out) = match status {
            None => (TIMEOUT_EXIT, true),
            Some(s) => (s.code().unwrap_or_else(|| 128 + s.signal().unwrap_or(0)), false),
        };

        let violations = match (&watch_root, before) {
            (Some(root), Some(before)) => {
                let after = util::tree_digest(root, Some(&work_dir))?;
                let keys: BTreeSet<&PathBuf> = before.keys().chain(after.keys()).collect();
                keys.into_iter()
                    .filter_map(|k| match (before.get(k), after.get(k)) {
                        (None, Some(_)) => Some(format!("created {} outside the working directory", k.display())),
                        (Some(_), None) => Some(format!("deleted {} outside the working directory", k.display())),
                        (Some(a), Some(b)) if a != b => {
                            Some(format!("modified {} outside the working directory", k.display()))
                        }
                        _ => None,
                    })
                    .collect()
            }
            _ => Vec::new(),
        };
        for v in &violations {
            log::warn!("sandbox: {v}");
        }

        Ok(ExecutionRecord {
            exit_status,
            wall_time,
            stdout_path,
            stderr_path,
            timed_out,
            violations,
        })
    }
}

fn kill_group(pgid: libc::pid_t) {
    // SAFETY: signalling a process group we created; ESRCH is harmless.
    unsafe {
        libc::killpg(pgid, libc::SIGKILL);
    }
}

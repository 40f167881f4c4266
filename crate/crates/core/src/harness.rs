//! Runs a workspace's test suite in a child process and classifies the result.

use std::collections::BTreeMap;
use std::io::Read;
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::path::Path;
use std::process::{Command, Stdio};
use std::sync::{mpsc, Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::clock::{self, Clock, SystemClock};

/// Unit-test profile for Python: discovers `test*.py` in the workspace and
/// strips the wall-time figure from the summary so logs are reproducible.
pub const PYTHON_UNITTEST_TEMPLATE: &str = "python3 -c \"import io,re,sys,unittest; s=io.StringIO(); \
r=unittest.TextTestRunner(stream=s,verbosity=2).run(unittest.defaultTestLoader.discover('{workspace}')); \
sys.stdout.write(re.sub(r' in [0-9.]+s', '', s.getvalue())); \
sys.exit(5 if r.testsRun == 0 else (0 if r.wasSuccessful() else 1))\"";

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);
const KILL_GRACE: Duration = Duration::from_secs(2);
const POLL_INTERVAL: Duration = Duration::from_millis(5);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestStatus {
    Passed,
    Failed,
    Error,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestRunOutcome {
    pub status: TestStatus,
    pub exit_code: i32,
    pub log: String,
    #[serde(with = "humantime_serde")]
    pub duration: Duration,
}

impl TestRunOutcome {
    pub fn passed(&self) -> bool {
        self.status == TestStatus::Passed
    }

    /// Failures the model can be asked to fix, as opposed to a broken toolchain.
    pub fn is_content_failure(&self) -> bool {
        matches!(self.status, TestStatus::Failed | TestStatus::Timeout)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunnerConfig {
    /// Command line; `{workspace}` is replaced by the workspace path.
    pub template: String,
    #[serde(with = "humantime_serde")]
    pub timeout: Duration,
    /// Variables set in the child. `PATH` is always passed through.
    pub env: BTreeMap<String, String>,
    /// Names copied from the parent environment when present.
    pub passthrough_env: Vec<String>,
    /// Log substrings that mark a nonzero exit as a test failure rather than an error.
    pub failure_markers: Vec<String>,
}

impl Default for RunnerConfig {
    fn default() -> Self {
        Self::python_unittest()
    }
}

impl RunnerConfig {
    pub fn python_unittest() -> Self {
        Self {
            template: PYTHON_UNITTEST_TEMPLATE.to_string(),
            timeout: DEFAULT_TIMEOUT,
            env: BTreeMap::from([
                ("PYTHONDONTWRITEBYTECODE".to_string(), "1".to_string()),
                ("PYTHONHASHSEED".to_string(), "0".to_string()),
            ]),
            passthrough_env: Vec::new(),
            failure_markers: [
                "FAILED (",
                "AssertionError",
                "Traceback (most recent call last)",
                "short test summary info",
            ]
            .map(String::from)
            .to_vec(),
        }
    }

    pub fn with_template(template: impl Into<String>) -> Self {
        Self {
            template: template.into(),
            ..Self::python_unittest()
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    fn argv(&self, workspace: &Path) -> Result<Vec<String>, String> {
        let parts = shlex::split(&self.template)
            .ok_or_else(|| format!("runner template cannot be split into arguments: {}", self.template))?;
        if parts.is_empty() {
            return Err("runner template is empty".into());
        }
        let ws = workspace.display().to_string();
        Ok(parts.into_iter().map(|p| p.replace("{workspace}", &ws)).collect())
    }

    fn child_env(&self) -> BTreeMap<String, String> {
        let mut env = BTreeMap::new();
        for name in std::iter::once("PATH").chain(self.passthrough_env.iter().map(String::as_str)) {
            if let Ok(value) = std::env::var(name) {
                env.insert(name.to_string(), value);
            }
        }
        env.extend(self.env.clone());
        env
    }

    fn classify(&self, exit_code: i32, log: &str) -> TestStatus {
        if exit_code == 0 {
            TestStatus::Passed
        } else if self.failure_markers.iter().any(|m| log.contains(m.as_str())) {
            TestStatus::Failed
        } else {
            TestStatus::Error
        }
    }
}

/// Anything that can run a workspace's tests.
pub trait TestHarness: Send + Sync {
    fn run(&self, workspace: &Path) -> TestRunOutcome;
}

pub struct CommandHarness {
    config: RunnerConfig,
    clock: Arc<dyn Clock>,
}

impl CommandHarness {
    pub fn new(config: RunnerConfig) -> Self {
        Self {
            config,
            clock: Arc::new(SystemClock),
        }
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn config(&self) -> &RunnerConfig {
        &self.config
    }
}

impl TestHarness for CommandHarness {
    fn run(&self, workspace: &Path) -> TestRunOutcome {
        let started = self.clock.now();
        let mut outcome = execute(workspace, &self.config);
        outcome.duration = clock::elapsed(started, self.clock.now());
        outcome
    }
}

/// Runs the configured suite once, measuring duration with the system clock.
pub fn run_tests(workspace: &Path, config: &RunnerConfig) -> TestRunOutcome {
    CommandHarness::new(config.clone()).run(workspace)
}

fn error_outcome(exit_code: i32, log: String) -> TestRunOutcome {
    TestRunOutcome {
        status: TestStatus::Error,
        exit_code,
        log,
        duration: Duration::ZERO,
    }
}

fn execute(workspace: &Path, config: &RunnerConfig) -> TestRunOutcome {
    // The child runs inside the workspace, so a relative path would not resolve there.
    let workspace = &match std::path::absolute(workspace) {
        Ok(path) => path,
        Err(e) => return error_outcome(-1, format!("cannot resolve workspace {}: {e}", workspace.display())),
    };
    let argv = match config.argv(workspace) {
        Ok(argv) => argv,
        Err(reason) => return error_outcome(-1, reason),
    };
    let (mut reader, writer) = match std::io::pipe() {
        Ok(pair) => pair,
        Err(e) => return error_outcome(-1, format!("cannot create output pipe: {e}")),
    };
    let writer_for_stderr = match writer.try_clone() {
        Ok(w) => w,
        Err(e) => return error_outcome(-1, format!("cannot duplicate output pipe: {e}")),
    };

    let mut command = Command::new(&argv[0]);
    command
        .args(&argv[1..])
        .current_dir(workspace)
        .env_clear()
        .envs(config.child_env())
        .stdin(Stdio::null())
        .stdout(writer)
        .stderr(writer_for_stderr)
        .process_group(0);
    let spawned = command.spawn();
    // The command still owns the parent's copies of the write end.
    drop(command);
    let mut child = match spawned {
        Ok(child) => child,
        Err(e) => {
            let code = if e.kind() == std::io::ErrorKind::NotFound { 127 } else { -1 };
            return error_outcome(code, format!("runner `{}` could not be started: {e}", argv[0]));
        }
    };

    let captured = Arc::new(Mutex::new(Vec::new()));
    let (done_tx, done_rx) = mpsc::channel();
    {
        let captured = Arc::clone(&captured);
        thread::spawn(move || {
            let mut chunk = [0u8; 8192];
            loop {
                match reader.read(&mut chunk) {
                    Ok(0) | Err(_) => break,
                    Ok(n) => captured.lock().expect("capture lock").extend_from_slice(&chunk[..n]),
                }
            }
            let _ = done_tx.send(());
        });
    }

    let deadline = Instant::now() + config.timeout;
    let mut timed_out = false;
    let status = loop {
        match child.try_wait() {
            Ok(Some(status)) => break Some(status),
            Ok(None) if Instant::now() >= deadline => {
                timed_out = true;
                // Negative pid signals the whole process group.
                unsafe {
                    libc::kill(-(child.id() as i32), libc::SIGKILL);
                }
                break child.wait().ok();
            }
            Ok(None) => thread::sleep(POLL_INTERVAL),
            Err(_) => break None,
        }
    };
    let _ = done_rx.recv_timeout(KILL_GRACE);
    let log = relativize(String::from_utf8_lossy(&captured.lock().expect("capture lock")).into_owned(), workspace);

    let exit_code = match status {
        Some(s) => s.code().unwrap_or_else(|| 128 + s.signal().unwrap_or(0)),
        None => -1,
    };
    let status = if timed_out {
        TestStatus::Timeout
    } else {
        config.classify(exit_code, &log)
    };
    TestRunOutcome {
        status,
        exit_code,
        log,
        duration: Duration::ZERO,
    }
}

/// Rewrites the workspace path in a log to `.`, so logs fed back to the model
/// do not depend on where the workspace lives.
fn relativize(mut log: String, workspace: &Path) -> String {
    let mut roots = vec![workspace.to_path_buf()];
    if let Ok(real) = workspace.canonicalize() {
        if real != workspace {
            roots.push(real);
        }
    }
    for root in roots {
        let text = root.display().to_string();
        if text.len() > 1 {
            log = log.replace(&text, ".");
        }
    }
    log
}

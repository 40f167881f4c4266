//! Run configuration. Command-line flags win over the TOML config file, which
//! wins over built-in defaults. `aitdd config show` prints the merged result.

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::Args;
use serde::{Deserialize, Serialize};

use aitdd_core::clock::{Clock, SystemClock};
use aitdd_core::harness::{CommandHarness, RunnerConfig, TestHarness};
use aitdd_core::provider::{ApiKey, ChatProvider, Fixture, Gateway, ModelConfig, API_KEY_ENV, BASE_URL_ENV, DEFAULT_BASE_URL};
use aitdd_core::session::{FeatureSpec, InteractionPattern};
use aitdd_core::source::DEFAULT_TEST_PREFIX;
use aitdd_core::workflow::{EngineSettings, DEFAULT_MAX_ITERATIONS};

/// Looked up in the working directory when `--config` is not given.
pub const DEFAULT_CONFIG_FILE: &str = "aitdd.toml";

/// A problem found before any session starts. Exits with status 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config_error(message: impl Into<String>) -> ConfigError {
    ConfigError(message.into())
}

#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// TOML config file (default: ./aitdd.toml when present)
    #[arg(long, env = "AITDD_CONFIG")]
    pub config: Option<PathBuf>,
    /// Feature description file
    #[arg(long)]
    pub feature: Option<PathBuf>,
    /// Directory holding the test and production files
    #[arg(long)]
    pub workspace: Option<PathBuf>,
    /// Session log path (default: <log_dir>/<session id>.jsonl)
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Replay model replies from this fixture instead of calling the model
    #[arg(long, conflicts_with = "live")]
    pub fixture: Option<PathBuf>,
    /// Call the chat-completions endpoint (needs OPENAI_API_KEY)
    #[arg(long)]
    pub live: bool,
    #[arg(long, env = BASE_URL_ENV)]
    pub base_url: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub max_context_tokens: Option<usize>,
    #[arg(long, value_parser = humantime::parse_duration)]
    pub request_timeout: Option<Duration>,
    /// Test command; `{workspace}` expands to the workspace path
    #[arg(long)]
    pub runner_template: Option<String>,
    #[arg(long, value_parser = humantime::parse_duration)]
    pub runner_timeout: Option<Duration>,
    /// Iterations a session may start, the refactor included
    #[arg(long)]
    pub max_iterations: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Live,
    Replay,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProviderFile {
    kind: Option<ProviderKind>,
    fixture: Option<PathBuf>,
    base_url: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    model_name: Option<String>,
    max_context_tokens: Option<usize>,
    temperature: Option<f64>,
    request_timeout: Option<String>,
}

/// The config file. Every key is optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    feature: Option<PathBuf>,
    workspace: Option<PathBuf>,
    log_dir: Option<PathBuf>,
    max_iterations: Option<usize>,
    test_prefix: Option<String>,
    #[serde(default)]
    provider: ProviderFile,
    #[serde(default)]
    model: ModelFile,
    runner: Option<RunnerConfig>,
}

impl ConfigFile {
    fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_error(format!("cannot read config file {}: {e}", path.display())))?;
        let mut file: ConfigFile =
            toml::from_str(&text).map_err(|e| config_error(format!("config file {}: {e}", path.display())))?;
        // Paths in the file are relative to the file.
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut file.feature, &mut file.workspace, &mut file.log_dir, &mut file.provider.fixture]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(file)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProviderSelection {
    Live { base_url: String },
    Replay { fixture: PathBuf },
}

/// Fully resolved settings for one command.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub feature: Option<PathBuf>,
    pub pattern: InteractionPattern,
    pub workspace: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log: Option<PathBuf>,
    pub log_dir: PathBuf,
    pub max_iterations: usize,
    pub test_prefix: String,
    pub provider: ProviderSelection,
    pub model: ModelConfig,
    pub runner: RunnerConfig,
}

/// What a session needs once the config has been checked.
pub struct Prepared {
    pub feature: FeatureSpec,
    pub provider: Arc<dyn ChatProvider>,
    pub harness: Arc<dyn TestHarness>,
    pub clock: Arc<dyn Clock>,
    pub settings: EngineSettings,
}

impl RunConfig {
    pub fn resolve(args: &ConfigArgs, pattern: InteractionPattern) -> Result<Self, ConfigError> {
        let file = match &args.config {
            Some(path) => ConfigFile::load(path)?,
            None if Path::new(DEFAULT_CONFIG_FILE).is_file() => ConfigFile::load(Path::new(DEFAULT_CONFIG_FILE))?,
            None => ConfigFile::default(),
        };

        let provider = if let Some(fixture) = &args.fixture {
            ProviderSelection::Replay { fixture: fixture.clone() }
        } else if args.live || file.provider.kind != Some(ProviderKind::Replay) {
            ProviderSelection::Live {
                base_url: args
                    .base_url
                    .clone()
                    .or(file.provider.base_url)
                    .unwrap_or_else(|| DEFAULT_BASE_URL.to_string()),
            }
        } else {
            let fixture = file
                .provider
                .fixture
                .ok_or_else(|| config_error("provider kind is replay but no fixture is configured"))?;
            ProviderSelection::Replay { fixture }
        };

        let mut model = ModelConfig::default();
        let m = file.model;
        if let Some(v) = args.model.clone().or(m.model_name) {
            model.model_name = v;
        }
        if let Some(v) = args.max_context_tokens.or(m.max_context_tokens) {
            model.max_context_tokens = v;
        }
        if let Some(v) = args.temperature.or(m.temperature) {
            model.temperature = v;
        }
        let file_timeout = m
            .request_timeout
            .map(|t| humantime::parse_duration(&t).map_err(|e| config_error(format!("model.request_timeout: {e}"))))
            .transpose()?;
        if let Some(v) = args.request_timeout.or(file_timeout) {
            model.request_timeout = v;
        }

        let mut runner = file.runner.unwrap_or_default();
        if let Some(t) = &args.runner_template {
            runner.template = t.clone();
        }
        if let Some(t) = args.runner_timeout {
            runner.timeout = t;
        }

        Ok(Self {
            feature: args.feature.clone().or(file.feature),
            pattern,
            workspace: args
                .workspace
                .clone()
                .or(file.workspace)
                .unwrap_or_else(|| PathBuf::from("aitdd-workspace")),
            log: args.log.clone(),
            log_dir: file.log_dir.unwrap_or_else(|| PathBuf::from("aitdd-logs")),
            max_iterations: args.max_iterations.or(file.max_iterations).unwrap_or(DEFAULT_MAX_ITERATIONS),
            test_prefix: file.test_prefix.unwrap_or_else(|| DEFAULT_TEST_PREFIX.to_string()),
            provider,
            model,
            runner,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn settings(&self) -> EngineSettings {
        EngineSettings {
            max_iterations: self.max_iterations,
            test_prefix: self.test_prefix.clone(),
        }
    }

    /// Checks everything a new session needs and builds its collaborators.
    pub fn prepare(&self) -> Result<Prepared, ConfigError> {
        let path = self
            .feature
            .as_ref()
            .ok_or_else(|| config_error("no feature file given (use --feature or set `feature` in the config file)"))?;
        let feature = FeatureSpec::load(path).map_err(|e| config_error(format!("feature file {}: {e}", path.display())))?;
        Ok(Prepared {
            feature,
            ..self.prepare_engine()?
        })
    }

    /// Like [`RunConfig::prepare`] but without a feature file, for resuming a logged session.
    pub fn prepare_engine(&self) -> Result<Prepared, ConfigError> {
        if self.max_iterations == 0 {
            return Err(config_error("max_iterations must be at least 1"));
        }
        self.model.validate().map_err(config_error)?;
        let clock: Arc<dyn Clock> = Arc::new(SystemClock);
        let provider: Arc<dyn ChatProvider> = match &self.provider {
            ProviderSelection::Replay { fixture } => {
                if !fixture.is_file() {
                    return Err(config_error(format!("replay fixture {} does not exist", fixture.display())));
                }
                let fixture =
                    Fixture::load(fixture).map_err(|e| config_error(format!("fixture {}: {e}", fixture.display())))?;
                Arc::new(Gateway::replay(self.model.clone(), fixture).with_clock(clock.clone()))
            }
            ProviderSelection::Live { base_url } => {
                let key = ApiKey::from_env()
                    .ok_or_else(|| config_error(format!("the live provider needs {API_KEY_ENV} in the environment")))?;
                let model = ModelConfig {
                    api_key: Some(key),
                    ..self.model.clone()
                };
                Arc::new(Gateway::live(model, base_url.clone()).with_clock(clock.clone()))
            }
        };
        let harness = Arc::new(CommandHarness::new(self.runner.clone()).with_clock(clock.clone()));
        Ok(Prepared {
            feature: FeatureSpec::new("resumed"),
            provider,
            harness,
            clock,
            settings: self.settings(),
        })
    }
}

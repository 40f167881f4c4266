#![allow(dead_code)]

use std::collections::VecDeque;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use proptest::prelude::*;

use aitdd_core::clock::{Clock, FixedClock};
use aitdd_core::harness::{CommandHarness, RunnerConfig, TestHarness, TestRunOutcome, TestStatus};
use aitdd_core::prompt::ConversationContext;
use aitdd_core::provider::{ChatProvider, Fixture, Gateway, ModelConfig, ProviderError, ProviderReply};
use aitdd_core::session::{CodeArtifacts, FeatureSpec, InteractionPattern, NewSession, Session, SessionId, WorkspaceLayout};
use aitdd_core::workflow::{Engine, EngineSettings};

pub fn f1_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/f1")
}

pub fn f1_feature() -> FeatureSpec {
    FeatureSpec::load(&f1_dir().join("feature.toml")).expect("F1 feature file")
}

pub fn f1_replies() -> Vec<String> {
    (1..=8)
        .map(|i| std::fs::read_to_string(f1_dir().join(format!("replies/{i:02}.md"))).expect("F1 reply"))
        .collect()
}

pub fn f1_fixture() -> Fixture {
    Fixture::load(f1_dir().join("f1.fixture.toml")).expect("F1 fixture")
}

pub fn clock() -> Arc<dyn Clock> {
    Arc::new(FixedClock::epoch())
}

pub fn python_harness() -> Arc<dyn TestHarness> {
    Arc::new(CommandHarness::new(RunnerConfig::python_unittest()).with_clock(clock()))
}

pub fn replay(fixture: Fixture) -> Arc<dyn ChatProvider> {
    Arc::new(Gateway::replay(ModelConfig::default(), fixture).with_clock(clock()))
}

pub fn new_session(workspace: &Path, feature: FeatureSpec, pattern: InteractionPattern) -> NewSession {
    let layout = WorkspaceLayout::for_feature(&feature);
    NewSession {
        id: SessionId::new("test-session"),
        artifacts: CodeArtifacts::empty(&layout),
        feature,
        pattern,
        workspace: workspace.to_path_buf(),
        layout,
    }
}

pub fn start_engine(
    root: &Path,
    feature: FeatureSpec,
    pattern: InteractionPattern,
    provider: Arc<dyn ChatProvider>,
    harness: Arc<dyn TestHarness>,
    settings: EngineSettings,
) -> Engine {
    Engine::create(
        &root.join("session.jsonl"),
        new_session(&root.join("workspace"), feature, pattern),
        provider,
        harness,
        clock(),
        settings,
    )
    .expect("engine starts")
}

/// Returns canned replies in order and remembers every context it was sent.
#[derive(Default)]
pub struct ScriptedProvider {
    replies: Mutex<VecDeque<String>>,
    pub contexts: Mutex<Vec<ConversationContext>>,
}

impl ScriptedProvider {
    pub fn new(replies: impl IntoIterator<Item = String>) -> Self {
        Self {
            replies: Mutex::new(replies.into_iter().collect()),
            contexts: Mutex::new(Vec::new()),
        }
    }

    pub fn calls(&self) -> usize {
        self.contexts.lock().unwrap().len()
    }

    pub fn sent(&self) -> Vec<ConversationContext> {
        self.contexts.lock().unwrap().clone()
    }
}

impl ChatProvider for ScriptedProvider {
    fn complete(&self, context: &ConversationContext) -> Result<ProviderReply, ProviderError> {
        self.contexts.lock().unwrap().push(context.clone());
        let text = self.replies.lock().unwrap().pop_front().ok_or(ProviderError::EmptyReply)?;
        Ok(ProviderReply {
            text,
            token_usage: None,
            latency: Duration::ZERO,
        })
    }
}

/// Reports canned outcomes in order without running anything; passes once the script runs out.
#[derive(Default)]
pub struct ScriptedHarness {
    outcomes: Mutex<VecDeque<TestStatus>>,
}

impl ScriptedHarness {
    pub fn new(outcomes: impl IntoIterator<Item = TestStatus>) -> Self {
        Self {
            outcomes: Mutex::new(outcomes.into_iter().collect()),
        }
    }
}

impl TestHarness for ScriptedHarness {
    fn run(&self, _workspace: &Path) -> TestRunOutcome {
        let status = self.outcomes.lock().unwrap().pop_front().unwrap_or(TestStatus::Passed);
        let (exit_code, log) = match status {
            TestStatus::Passed => (0, "OK".to_string()),
            TestStatus::Failed => (1, "FAILED (failures=1)".to_string()),
            TestStatus::Error => (2, "ImportError".to_string()),
            TestStatus::Timeout => (-9, "timed out".to_string()),
        };
        TestRunOutcome {
            status,
            exit_code,
            log,
            duration: Duration::ZERO,
        }
    }
}

/// A reply with one test block and one production block.
pub fn code_reply(test: &str, production: &str) -> String {
    format!("Test code:\n\n```python\n{test}```\n\nProduction code:\n\n```python\n{production}```\n")
}

#[derive(Debug, Clone, Copy)]
pub enum ReplyKind {
    Code,
    NoCode,
    Ambiguous,
}

pub fn reply(kind: ReplyKind, n: usize) -> String {
    match kind {
        ReplyKind::Code => code_reply(
            "def test_value():\n    assert value() == 1\n",
            &format!("def value():\n    # reply {n}\n    return 1\n"),
        ),
        ReplyKind::NoCode => format!("I am not sure what to change ({n})."),
        ReplyKind::Ambiguous => format!(
            "```python\ndef a():\n    return {n}\n```\n\n```python\ndef b():\n    return {n}\n```\n"
        ),
    }
}

pub fn run_random(
    statuses: Vec<TestStatus>,
    kinds: Vec<ReplyKind>,
    max_iterations: usize,
    completes: bool,
) -> (Session, Vec<ConversationContext>) {
    let dir = tempfile::tempdir().unwrap();
    let replies: Vec<String> = (0..200).map(|i| reply(kinds[i % kinds.len()], i)).collect();
    let provider = Arc::new(ScriptedProvider::new(replies));
    let mut feature = FeatureSpec::new("return one");
    feature.expected_outputs = vec![if completes { "value() == 1" } else { "never" }.to_string()];
    let mut engine = start_engine(
        dir.path(),
        feature,
        InteractionPattern::FullyAutomated,
        provider.clone(),
        Arc::new(ScriptedHarness::new(statuses)),
        EngineSettings {
            max_iterations,
            ..EngineSettings::default()
        },
    );
    let session = engine.run_fully_automated().unwrap().clone();
    (session, provider.sent())
}

pub fn status() -> impl Strategy<Value = TestStatus> {
    prop_oneof![
        3 => Just(TestStatus::Passed),
        2 => Just(TestStatus::Failed),
        1 => Just(TestStatus::Timeout),
    ]
}

pub fn kind() -> impl Strategy<Value = ReplyKind> {
    prop_oneof![6 => Just(ReplyKind::Code), 1 => Just(ReplyKind::NoCode), 1 => Just(ReplyKind::Ambiguous)]
}

pub fn random_run() -> impl Strategy<Value = (Vec<TestStatus>, Vec<ReplyKind>, usize, bool)> {
    (
        prop::collection::vec(status(), 0..40),
        prop::collection::vec(kind(), 1..8),
        1usize..8,
        any::<bool>(),
    )
}


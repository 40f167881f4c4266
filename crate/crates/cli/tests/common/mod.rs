#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use aitdd_core::clock::{Clock, FixedClock};
use aitdd_core::harness::{CommandHarness, RunnerConfig, TestHarness};
use aitdd_core::prompt::ConversationContext;
use aitdd_core::provider::{ChatProvider, ProviderError, ProviderReply};
use aitdd_core::session::{CodeArtifacts, FeatureInput, FeatureSpec, InteractionPattern, NewSession, SessionId, WorkspaceLayout};

pub fn f1_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/f1")
}

pub fn clock() -> Arc<dyn Clock> {
    Arc::new(FixedClock::epoch())
}

pub fn python_harness() -> Arc<dyn TestHarness> {
    Arc::new(CommandHarness::new(RunnerConfig::python_unittest()).with_clock(clock()))
}

pub const ADDER_FEATURE: &str = r#"description = "Develop a function add that returns the sum of two numbers"
target_class_hint = "Adder"
expected_outputs = ["3"]

[[inputs]]
name = "a"
value = "1"

[[inputs]]
name = "b"
value = "2"
"#;

pub fn adder() -> FeatureSpec {
    let mut f = FeatureSpec::new("Develop a function add that returns the sum of two numbers");
    f.inputs = vec![FeatureInput::new("a", "1"), FeatureInput::new("b", "2")];
    f.expected_outputs = vec!["3".into()];
    f.target_class_hint = Some("Adder".into());
    f
}

pub const ADDER_TEST: &str = "import unittest\nfrom adder import add\n\n\nclass TestAdder(unittest.TestCase):\n    def test_add(self):\n        self.assertEqual(add(1, 2), 3)\n";

pub fn fenced(label: &str, code: &str) -> String {
    format!("{label}\n\n```python\n{code}```\n")
}

pub fn new_session(workspace: &Path, feature: FeatureSpec, pattern: InteractionPattern) -> NewSession {
    let layout = WorkspaceLayout::for_feature(&feature);
    NewSession {
        id: SessionId::new("cli-test"),
        artifacts: CodeArtifacts::empty(&layout),
        feature,
        pattern,
        workspace: workspace.to_path_buf(),
        layout,
    }
}

/// Returns canned replies in order.
pub struct Scripted {
    replies: Mutex<Vec<String>>,
}

impl Scripted {
    pub fn new(replies: impl IntoIterator<Item = String>) -> Arc<Self> {
        let mut replies: Vec<String> = replies.into_iter().collect();
        replies.reverse();
        Arc::new(Self {
            replies: Mutex::new(replies),
        })
    }
}

impl ChatProvider for Scripted {
    fn complete(&self, _: &ConversationContext) -> Result<ProviderReply, ProviderError> {
        let text = self.replies.lock().unwrap().pop().ok_or(ProviderError::EmptyReply)?;
        Ok(ProviderReply {
            text,
            token_usage: None,
            latency: std::time::Duration::ZERO,
        })
    }
}

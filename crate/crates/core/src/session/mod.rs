//! Shared domain types and the append-only session log.

mod event;
mod feature;
mod log;
mod state;
mod store;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use event::{DeveloperDecision, LogEntry, WorkflowEvent};
pub use feature::{snake_case, FeatureError, FeatureInput, FeatureSpec};
pub use log::{load_session, load_session_file, serialize_session, LogError, SessionLog};
pub use store::{NewSession, SessionStore, StoreError};
pub use state::{
    Attempt, IterationRecord, OpenIteration, SequenceError, Session, SessionStatus, MAX_ATTEMPTS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InteractionPattern {
    Collaborative,
    FullyAutomated,
    NonAutomated,
}

impl fmt::Display for InteractionPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InteractionPattern::Collaborative => "collaborative",
            InteractionPattern::FullyAutomated => "fully-automated",
            InteractionPattern::NonAutomated => "non-automated",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    First,
    Intermediate,
    Refactor,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::First => "first",
            Phase::Intermediate => "intermediate",
            Phase::Refactor => "refactor",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SessionId(String);

impl SessionId {
    pub fn random() -> Self {
        Self(uuid::Uuid::new_v4().to_string())
    }

    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DocumentKind {
    Test,
    Production,
}

impl fmt::Display for DocumentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DocumentKind::Test => "test",
            DocumentKind::Production => "production",
        })
    }
}

/// A source file held in memory: a logical filename plus its text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceDocument {
    pub filename: String,
    pub text: String,
}

impl SourceDocument {
    pub fn new(filename: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            filename: filename.into(),
            text: text.into(),
        }
    }

    pub fn empty(filename: impl Into<String>) -> Self {
        Self::new(filename, String::new())
    }

    pub fn lines(&self) -> std::str::Lines<'_> {
        self.text.lines()
    }

    pub fn is_empty(&self) -> bool {
        self.text.is_empty()
    }
}

/// The current test and production documents of a workspace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeArtifacts {
    pub test: SourceDocument,
    pub production: SourceDocument,
}

impl CodeArtifacts {
    pub fn empty(layout: &WorkspaceLayout) -> Self {
        Self {
            test: SourceDocument::empty(&layout.test_file),
            production: SourceDocument::empty(&layout.production_file),
        }
    }

    pub fn document(&self, kind: DocumentKind) -> &SourceDocument {
        match kind {
            DocumentKind::Test => &self.test,
            DocumentKind::Production => &self.production,
        }
    }

    pub fn document_mut(&mut self, kind: DocumentKind) -> &mut SourceDocument {
        match kind {
            DocumentKind::Test => &mut self.test,
            DocumentKind::Production => &mut self.production,
        }
    }

    /// Reads both documents from `dir`; a missing file reads as empty.
    pub fn read_from(dir: &std::path::Path, layout: &WorkspaceLayout) -> std::io::Result<Self> {
        let read = |name: &str| match std::fs::read_to_string(dir.join(name)) {
            Ok(text) => Ok(SourceDocument::new(name, text)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(SourceDocument::empty(name)),
            Err(e) => Err(e),
        };
        Ok(Self {
            test: read(&layout.test_file)?,
            production: read(&layout.production_file)?,
        })
    }

    /// Writes both documents into `dir`, each through a temporary file and a rename.
    pub fn write_to(&self, dir: &std::path::Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        for doc in [&self.test, &self.production] {
            let target = dir.join(&doc.filename);
            if std::fs::read_to_string(&target).is_ok_and(|current| current == doc.text) {
                continue;
            }
            let staging = dir.join(format!(".{}.tmp", doc.filename));
            std::fs::write(&staging, &doc.text)?;
            std::fs::rename(&staging, &target)?;
        }
        Ok(())
    }
}

/// File names of the two workspace documents.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkspaceLayout {
    pub test_file: String,
    pub production_file: String,
}

impl WorkspaceLayout {
    /// `TextFormatter` gives `text_formatter.py` and `test_text_formatter.py`.
    pub fn for_feature(feature: &FeatureSpec) -> Self {
        let stem = feature
            .target_class_hint
            .as_deref()
            .map(snake_case)
            .filter(|s| !s.is_empty())
            .unwrap_or_else(|| "solution".to_string());
        Self {
            test_file: format!("test_{stem}.py"),
            production_file: format!("{stem}.py"),
        }
    }
}

use std::path::{Path, PathBuf};
use std::sync::Arc;

use thiserror::Error;

use super::event::{LogEntry, WorkflowEvent};
use super::log::{LogError, SessionLog};
use super::state::{IterationRecord, SequenceError, Session};
use super::{CodeArtifacts, FeatureSpec, InteractionPattern, SessionId, WorkspaceLayout};
use crate::clock::Clock;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error(transparent)]
    Sequence(#[from] SequenceError),
    #[error("cannot write session log: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Log(#[from] LogError),
}

/// Parameters of a new session.
#[derive(Debug, Clone)]
pub struct NewSession {
    pub id: SessionId,
    pub feature: FeatureSpec,
    pub pattern: InteractionPattern,
    pub workspace: PathBuf,
    pub layout: WorkspaceLayout,
    pub artifacts: CodeArtifacts,
}

/// A session together with the log it is persisted to. Every change goes
/// through [`SessionStore::append`], which validates, writes, then folds.
pub struct SessionStore {
    session: Session,
    log: SessionLog,
    clock: Arc<dyn Clock>,
}

impl SessionStore {
    pub fn create(path: &Path, new: NewSession, clock: Arc<dyn Clock>) -> Result<Self, StoreError> {
        let entry = LogEntry {
            seq: 1,
            at: clock.now(),
            event: WorkflowEvent::SessionStarted {
                id: new.id,
                feature: new.feature,
                pattern: new.pattern,
                workspace: new.workspace,
                layout: new.layout,
                artifacts: new.artifacts,
            },
        };
        let session = Session::start(&entry)?;
        let mut log = SessionLog::create(path)?;
        log.append(&entry)?;
        Ok(Self { session, log, clock })
    }

    pub fn reopen(path: &Path, clock: Arc<dyn Clock>) -> Result<Self, StoreError> {
        let (log, session) = SessionLog::reopen(path)?;
        Ok(Self { session, log, clock })
    }

    pub fn session(&self) -> &Session {
        &self.session
    }

    pub fn log_path(&self) -> &Path {
        self.log.path()
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    pub fn append(&mut self, event: WorkflowEvent) -> Result<&LogEntry, StoreError> {
        let entry = LogEntry {
            seq: self.session.last_seq + 1,
            at: self.clock.now(),
            event,
        };
        // Fold into a copy first so a rejected entry never reaches disk.
        let history = std::mem::take(&mut self.session.history);
        let mut next = self.session.clone();
        self.session.history = history;
        next.apply(&entry)?;
        self.log.append(&entry)?;
        let mut history = std::mem::take(&mut self.session.history);
        history.push(entry);
        next.history = history;
        self.session = next;
        Ok(self.session.history.last().expect("entry was just folded"))
    }

    /// Commits a finished iteration. Its index must follow the last one.
    pub fn append_iteration(&mut self, record: IterationRecord) -> Result<&Session, StoreError> {
        self.append(WorkflowEvent::IterationRecorded { record })?;
        Ok(&self.session)
    }
}

use std::path::PathBuf;
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::event::{DeveloperDecision, LogEntry, WorkflowEvent};
use super::{CodeArtifacts, FeatureSpec, InteractionPattern, Phase, SessionId, WorkspaceLayout};
use crate::clock;
use crate::harness::TestRunOutcome;
use crate::integrate::{IntegrationReport, Warning};
use crate::prompt::ConversationContext;
use crate::provider::ProviderReply;

/// A prompt is sent at most this many times per iteration.
pub const MAX_ATTEMPTS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Running,
    AwaitingDeveloper,
    Completed,
    Halted,
}

impl SessionStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, SessionStatus::Completed | SessionStatus::Halted)
    }
}

/// One send of the iteration's prompt and everything that followed it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attempt {
    pub number: usize,
    pub context: ConversationContext,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reply: Option<ProviderReply>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<IntegrationReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rejection: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<TestRunOutcome>,
}

impl Attempt {
    /// Finished without green tests, so the prompt may be resent.
    pub fn failed(&self) -> bool {
        self.rejection.is_some() || self.outcome.as_ref().is_some_and(|o| !o.passed())
    }

    /// The text fed back to the model after a failed attempt.
    pub fn failure_log(&self) -> Option<&str> {
        if let Some(reason) = &self.rejection {
            return Some(reason);
        }
        self.outcome.as_ref().filter(|o| !o.passed()).map(|o| o.log.as_str())
    }
}

/// The iteration in progress, before it is committed as an [`IterationRecord`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpenIteration {
    pub index: usize,
    pub phase: Phase,
    pub prompt: String,
    pub started_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub developer_edits: Option<String>,
    pub attempts: Vec<Attempt>,
    pub exhausted: bool,
}

impl OpenIteration {
    pub fn current(&self) -> Option<&Attempt> {
        self.attempts.last()
    }

    fn current_mut(&mut self, attempt: usize) -> Option<&mut Attempt> {
        self.attempts.last_mut().filter(|a| a.number == attempt)
    }

    pub fn has_passed(&self) -> bool {
        self.attempts
            .iter()
            .any(|a| a.outcome.as_ref().is_some_and(TestRunOutcome::passed))
    }

    /// Commits the iteration. Attempts whose request never got a reply are not counted.
    pub fn to_record(&self, artifacts_after: &CodeArtifacts, finished_at: DateTime<Utc>) -> IterationRecord {
        let raw_replies: Vec<String> = self
            .attempts
            .iter()
            .filter_map(|a| a.reply.as_ref().map(|r| r.text.clone()))
            .collect();
        let mut warnings: Vec<Warning> = Vec::new();
        for attempt in &self.attempts {
            if let Some(report) = &attempt.report {
                warnings.extend(report.warnings.iter().cloned());
            }
        }
        IterationRecord {
            index: self.index,
            phase: self.phase,
            prompt_sent: self.prompt.clone(),
            attempts: raw_replies.len(),
            raw_replies,
            artifacts_after: artifacts_after.clone(),
            outcome: self.attempts.last().and_then(|a| a.outcome.clone()),
            developer_edits: self.developer_edits.clone(),
            warnings,
            started_at: self.started_at,
            finished_at,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub index: usize,
    pub phase: Phase,
    pub prompt_sent: String,
    pub raw_replies: Vec<String>,
    pub attempts: usize,
    pub artifacts_after: CodeArtifacts,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<TestRunOutcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub developer_edits: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<Warning>,
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
}

impl IterationRecord {
    pub fn passed(&self) -> bool {
        self.outcome.as_ref().is_some_and(TestRunOutcome::passed)
    }

    pub fn exhausted(&self) -> bool {
        self.attempts >= MAX_ATTEMPTS && !self.passed()
    }

    fn check(&self) -> Result<(), String> {
        if self.attempts == 0 || self.attempts > MAX_ATTEMPTS {
            return Err(format!("attempts must be within 1..={MAX_ATTEMPTS}, got {}", self.attempts));
        }
        if self.raw_replies.len() != self.attempts {
            return Err(format!(
                "{} raw replies recorded for {} attempts",
                self.raw_replies.len(),
                self.attempts
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SequenceError {
    #[error("log must begin with session_started")]
    NotStarted,
    #[error("entry seq {found} does not follow seq {previous}")]
    Seq { previous: u64, found: u64 },
    #[error("iteration {found} recorded after iteration {last}; indices must be consecutive")]
    IterationIndex { last: usize, found: usize },
    #[error("{event} is not valid here: {reason}")]
    Unexpected { event: &'static str, reason: String },
}

fn unexpected(event: &WorkflowEvent, reason: impl Into<String>) -> SequenceError {
    SequenceError::Unexpected {
        event: event.name(),
        reason: reason.into(),
    }
}

/// Full state of one run, rebuilt by folding its log entries in order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub id: SessionId,
    pub feature: FeatureSpec,
    pub pattern: InteractionPattern,
    pub workspace_path: PathBuf,
    pub layout: WorkspaceLayout,
    pub status: SessionStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub halt_reason: Option<String>,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
    pub artifacts: CodeArtifacts,
    pub iterations: Vec<IterationRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub open_iteration: Option<OpenIteration>,
    pub refactor_requested: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pending_decision: Option<DeveloperDecision>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pending_edits: Option<String>,
    pub last_seq: u64,
    /// Every entry folded so far, in order. Not part of the JSON state document.
    #[serde(skip)]
    pub history: Vec<LogEntry>,
}

impl Session {
    /// Builds the session from its first log entry.
    pub fn start(entry: &LogEntry) -> Result<Self, SequenceError> {
        let WorkflowEvent::SessionStarted {
            id,
            feature,
            pattern,
            workspace,
            layout,
            artifacts,
        } = &entry.event
        else {
            return Err(SequenceError::NotStarted);
        };
        if entry.seq != 1 {
            return Err(SequenceError::Seq {
                previous: 0,
                found: entry.seq,
            });
        }
        Ok(Self {
            id: id.clone(),
            feature: feature.clone(),
            pattern: *pattern,
            workspace_path: workspace.clone(),
            layout: layout.clone(),
            status: SessionStatus::Running,
            halt_reason: None,
            created_at: entry.at,
            updated_at: entry.at,
            artifacts: artifacts.clone(),
            iterations: Vec::new(),
            open_iteration: None,
            refactor_requested: false,
            pending_decision: None,
            pending_edits: None,
            last_seq: entry.seq,
            history: vec![entry.clone()],
        })
    }

    pub fn elapsed(&self) -> Duration {
        clock::elapsed(self.created_at, self.updated_at)
    }

    pub fn next_index(&self) -> usize {
        self.iterations.len() + 1
    }

    /// Most recent model reply, from the open iteration or the last committed one.
    pub fn last_reply(&self) -> Option<&str> {
        if let Some(open) = &self.open_iteration {
            if let Some(reply) = open.attempts.iter().rev().find_map(|a| a.reply.as_ref()) {
                return Some(&reply.text);
            }
        }
        self.iterations
            .iter()
            .rev()
            .find_map(|r| r.raw_replies.last())
            .map(String::as_str)
    }

    /// Folds one entry into the session.
    pub fn apply(&mut self, entry: &LogEntry) -> Result<(), SequenceError> {
        if entry.seq != self.last_seq + 1 {
            return Err(SequenceError::Seq {
                previous: self.last_seq,
                found: entry.seq,
            });
        }
        let event = &entry.event;
        if self.status.is_terminal() {
            return Err(unexpected(event, "session already ended"));
        }
        match event {
            WorkflowEvent::SessionStarted { .. } => return Err(unexpected(event, "session already started")),
            WorkflowEvent::IterationStarted {
                iteration,
                phase,
                prompt,
                developer_edits,
            } => {
                if self.open_iteration.is_some() {
                    return Err(unexpected(event, "previous iteration still open"));
                }
                if *iteration != self.next_index() {
                    return Err(SequenceError::IterationIndex {
                        last: self.iterations.len(),
                        found: *iteration,
                    });
                }
                self.open_iteration = Some(OpenIteration {
                    index: *iteration,
                    phase: *phase,
                    prompt: prompt.clone(),
                    started_at: entry.at,
                    developer_edits: developer_edits.clone(),
                    attempts: Vec::new(),
                    exhausted: false,
                });
                self.pending_decision = None;
                self.pending_edits = None;
            }
            WorkflowEvent::PromptSent {
                iteration,
                attempt,
                context,
            } => {
                let edits = self.pending_edits.clone();
                let open = self.open_for(event, *iteration)?;
                if *attempt != open.attempts.len() + 1 || *attempt > MAX_ATTEMPTS {
                    return Err(unexpected(event, format!("attempt {attempt} out of order")));
                }
                if open.current().is_some_and(|a| !a.failed() && a.outcome.is_none()) {
                    return Err(unexpected(event, "previous attempt unfinished"));
                }
                if let Some(edits) = edits {
                    open.developer_edits = Some(match open.developer_edits.take() {
                        Some(earlier) => format!("{earlier}\n{edits}"),
                        None => edits,
                    });
                }
                open.attempts.push(Attempt {
                    number: *attempt,
                    context: context.clone(),
                    reply: None,
                    report: None,
                    rejection: None,
                    outcome: None,
                });
                self.pending_decision = None;
                self.pending_edits = None;
            }
            WorkflowEvent::ReplyReceived {
                iteration,
                attempt,
                reply,
            } => {
                let current = self.attempt_for(event, *iteration, *attempt)?;
                if current.reply.is_some() {
                    return Err(unexpected(event, "reply already received"));
                }
                current.reply = Some(reply.clone());
            }
            WorkflowEvent::Integrated {
                iteration,
                attempt,
                artifacts,
                report,
            } => {
                let current = self.attempt_for(event, *iteration, *attempt)?;
                if current.reply.is_none() || current.report.is_some() || current.rejection.is_some() {
                    return Err(unexpected(event, "attempt is not awaiting integration"));
                }
                current.report = Some(report.clone());
                self.artifacts = artifacts.clone();
            }
            WorkflowEvent::IntegrationRejected {
                iteration,
                attempt,
                reason,
            } => {
                let current = self.attempt_for(event, *iteration, *attempt)?;
                if current.reply.is_none() || current.report.is_some() || current.rejection.is_some() {
                    return Err(unexpected(event, "attempt is not awaiting integration"));
                }
                current.rejection = Some(reason.clone());
            }
            WorkflowEvent::TestsRun {
                iteration,
                attempt,
                outcome,
            } => {
                let current = self.attempt_for(event, *iteration, *attempt)?;
                if current.report.is_none() || current.outcome.is_some() {
                    return Err(unexpected(event, "attempt is not awaiting a test run"));
                }
                current.outcome = Some(outcome.clone());
            }
            WorkflowEvent::AttemptExhausted { iteration } => {
                let open = self.open_for(event, *iteration)?;
                if open.attempts.len() < MAX_ATTEMPTS {
                    return Err(unexpected(event, "attempts remain"));
                }
                open.exhausted = true;
            }
            WorkflowEvent::IterationRecorded { record } => {
                if record.index != self.next_index() {
                    return Err(SequenceError::IterationIndex {
                        last: self.iterations.len(),
                        found: record.index,
                    });
                }
                record.check().map_err(|reason| unexpected(event, reason))?;
                if let Some(open) = &self.open_iteration {
                    if open.index != record.index {
                        return Err(unexpected(event, "record does not match the open iteration"));
                    }
                }
                self.open_iteration = None;
                self.artifacts = record.artifacts_after.clone();
                self.iterations.push(record.clone());
            }
            WorkflowEvent::PhaseAdvanced { phase } => {
                if *phase == Phase::Refactor {
                    self.refactor_requested = true;
                }
            }
            WorkflowEvent::DeveloperDecisionRequested => {
                if self.pattern != InteractionPattern::Collaborative {
                    return Err(unexpected(event, "only collaborative sessions wait for a developer"));
                }
                self.status = SessionStatus::AwaitingDeveloper;
            }
            WorkflowEvent::DeveloperDecisionReceived { decision } => {
                if self.status != SessionStatus::AwaitingDeveloper {
                    return Err(unexpected(event, "session is not awaiting a developer"));
                }
                self.pending_edits = describe_edits(&self.artifacts, decision);
                if let DeveloperDecision::EditThenApprove {
                    test_source,
                    production_source,
                    ..
                } = decision
                {
                    if let Some(text) = test_source {
                        self.artifacts.test.text = text.clone();
                    }
                    if let Some(text) = production_source {
                        self.artifacts.production.text = text.clone();
                    }
                }
                self.pending_decision = Some(decision.clone());
                self.status = SessionStatus::Running;
            }
            WorkflowEvent::SessionCompleted => {
                let last = self.iterations.last();
                if self.open_iteration.is_some() || !last.is_some_and(|r| r.phase == Phase::Refactor && r.passed()) {
                    return Err(unexpected(event, "a session completes only after a passing refactor iteration"));
                }
                self.status = SessionStatus::Completed;
            }
            WorkflowEvent::SessionHalted { reason } => {
                self.status = SessionStatus::Halted;
                self.halt_reason = Some(reason.clone());
                self.pending_decision = None;
            }
        }
        self.last_seq = entry.seq;
        self.updated_at = entry.at;
        self.history.push(entry.clone());
        Ok(())
    }

    fn open_for(&mut self, event: &WorkflowEvent, iteration: usize) -> Result<&mut OpenIteration, SequenceError> {
        match self.open_iteration.as_mut() {
            Some(open) if open.index == iteration => Ok(open),
            _ => Err(unexpected(event, format!("iteration {iteration} is not open"))),
        }
    }

    fn attempt_for(
        &mut self,
        event: &WorkflowEvent,
        iteration: usize,
        attempt: usize,
    ) -> Result<&mut Attempt, SequenceError> {
        self.open_for(event, iteration)?
            .current_mut(attempt)
            .ok_or_else(|| unexpected(event, format!("attempt {attempt} is not current")))
    }
}

/// Unified diffs of the documents a decision edits, plus any replaced prompt.
pub(crate) fn describe_edits(before: &CodeArtifacts, decision: &DeveloperDecision) -> Option<String> {
    let DeveloperDecision::EditThenApprove {
        test_source,
        production_source,
        prompt,
    } = decision
    else {
        return None;
    };
    let mut parts = Vec::new();
    for (doc, edited) in [(&before.test, test_source), (&before.production, production_source)] {
        if let Some(text) = edited {
            let diff = similar::TextDiff::from_lines(doc.text.as_str(), text.as_str());
            let rendered = diff
                .unified_diff()
                .header(&format!("a/{}", doc.filename), &format!("b/{}", doc.filename))
                .to_string();
            if rendered.is_empty() {
                parts.push(format!("{}: unchanged", doc.filename));
            } else {
                parts.push(rendered.trim_end().to_string());
            }
        }
    }
    if let Some(prompt) = prompt {
        parts.push(format!("prompt replaced: {prompt}"));
    }
    (!parts.is_empty()).then(|| parts.join("\n"))
}

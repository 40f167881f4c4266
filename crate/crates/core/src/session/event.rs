use std::path::PathBuf;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{CodeArtifacts, FeatureSpec, InteractionPattern, IterationRecord, Phase, SessionId, WorkspaceLayout};
use crate::harness::TestRunOutcome;
use crate::integrate::IntegrationReport;
use crate::prompt::ConversationContext;
use crate::provider::ProviderReply;

/// What a developer may tell a paused collaborative session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DeveloperDecision {
    Approve,
    EditThenApprove {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_source: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        production_source: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        prompt: Option<String>,
    },
    RequestRegeneration,
    DeclareFeatureComplete,
    Abort,
}

impl DeveloperDecision {
    /// An edit must change at least one thing.
    pub fn is_well_formed(&self) -> bool {
        match self {
            DeveloperDecision::EditThenApprove {
                test_source,
                production_source,
                prompt,
            } => test_source.is_some() || production_source.is_some() || prompt.is_some(),
            _ => true,
        }
    }

    pub fn prompt_override(&self) -> Option<&str> {
        match self {
            DeveloperDecision::EditThenApprove { prompt, .. } => prompt.as_deref(),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DeveloperDecision::Approve => "approve",
            DeveloperDecision::EditThenApprove { .. } => "edit_then_approve",
            DeveloperDecision::RequestRegeneration => "request_regeneration",
            DeveloperDecision::DeclareFeatureComplete => "declare_feature_complete",
            DeveloperDecision::Abort => "abort",
        }
    }
}

/// One entry of the session log. Variants appear in the order the workflow
/// produces them; folding them in order rebuilds the session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum WorkflowEvent {
    SessionStarted {
        id: SessionId,
        feature: FeatureSpec,
        pattern: InteractionPattern,
        workspace: PathBuf,
        layout: WorkspaceLayout,
        artifacts: CodeArtifacts,
    },
    IterationStarted {
        iteration: usize,
        phase: Phase,
        prompt: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        developer_edits: Option<String>,
    },
    PromptSent {
        iteration: usize,
        attempt: usize,
        context: ConversationContext,
    },
    ReplyReceived {
        iteration: usize,
        attempt: usize,
        reply: ProviderReply,
    },
    Integrated {
        iteration: usize,
        attempt: usize,
        artifacts: CodeArtifacts,
        report: IntegrationReport,
    },
    IntegrationRejected {
        iteration: usize,
        attempt: usize,
        reason: String,
    },
    TestsRun {
        iteration: usize,
        attempt: usize,
        outcome: TestRunOutcome,
    },
    AttemptExhausted {
        iteration: usize,
    },
    IterationRecorded {
        record: IterationRecord,
    },
    PhaseAdvanced {
        phase: Phase,
    },
    DeveloperDecisionRequested,
    DeveloperDecisionReceived {
        decision: DeveloperDecision,
    },
    SessionCompleted,
    SessionHalted {
        reason: String,
    },
}

impl WorkflowEvent {
    pub fn name(&self) -> &'static str {
        match self {
            WorkflowEvent::SessionStarted { .. } => "session_started",
            WorkflowEvent::IterationStarted { .. } => "iteration_started",
            WorkflowEvent::PromptSent { .. } => "prompt_sent",
            WorkflowEvent::ReplyReceived { .. } => "reply_received",
            WorkflowEvent::Integrated { .. } => "integrated",
            WorkflowEvent::IntegrationRejected { .. } => "integration_rejected",
            WorkflowEvent::TestsRun { .. } => "tests_run",
            WorkflowEvent::AttemptExhausted { .. } => "attempt_exhausted",
            WorkflowEvent::IterationRecorded { .. } => "iteration_recorded",
            WorkflowEvent::PhaseAdvanced { .. } => "phase_advanced",
            WorkflowEvent::DeveloperDecisionRequested => "developer_decision_requested",
            WorkflowEvent::DeveloperDecisionReceived { .. } => "developer_decision_received",
            WorkflowEvent::SessionCompleted => "session_completed",
            WorkflowEvent::SessionHalted { .. } => "session_halted",
        }
    }
}

/// A numbered, timestamped event: one line of the log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEntry {
    pub seq: u64,
    pub at: DateTime<Utc>,
    #[serde(flatten)]
    pub event: WorkflowEvent,
}

//! The iteration state machine. Every transition is one appended log event,
//! so a session can be stopped between any two events and resumed from its log.

mod completion;

use std::path::Path;
use std::sync::Arc;

use thiserror::Error;

pub use completion::{completion_check, completion_checklist, ChecklistItem, CompletionError};

use crate::clock::Clock;
use crate::harness::{TestHarness, TestStatus};
use crate::integrate::{IntegrationMode, Integrator};
use crate::prompt::{self, ConversationContext};
use crate::provider::ChatProvider;
use crate::session::{
    CodeArtifacts, DeveloperDecision, FeatureError, InteractionPattern, LogEntry, NewSession, OpenIteration, Phase,
    Session, SessionStatus, SessionStore, StoreError, WorkflowEvent, MAX_ATTEMPTS,
};
use crate::source::DEFAULT_TEST_PREFIX;

pub const DEFAULT_MAX_ITERATIONS: usize = 15;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EngineSettings {
    /// Total iterations a session may start, the refactor iteration included.
    pub max_iterations: usize,
    pub test_prefix: String,
}

impl Default for EngineSettings {
    fn default() -> Self {
        Self {
            max_iterations: DEFAULT_MAX_ITERATIONS,
            test_prefix: DEFAULT_TEST_PREFIX.to_string(),
        }
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("workspace: {0}")]
    Workspace(#[from] std::io::Error),
    #[error(transparent)]
    Decision(#[from] DecisionError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error("the {0} pattern has no engine path; measure its workspace with the metrics command")]
    Unsupported(InteractionPattern),
}

/// A developer decision that the session cannot take in its current state.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecisionError {
    #[error("session is {status:?}, not awaiting a developer decision")]
    NotAwaiting { status: SessionStatus },
    #[error("edit_then_approve must change a document or the prompt")]
    EmptyEdit,
    #[error("{decision} is not possible now: {reason}")]
    Invalid { decision: &'static str, reason: String },
}

/// What a call to [`Engine::step`] did.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Step {
    Advanced,
    AwaitingDeveloper,
    Finished(SessionStatus),
}

enum Action {
    Wait,
    Done,
    Append(WorkflowEvent),
    CallProvider { iteration: usize, attempt: usize, context: ConversationContext },
    Integrate { iteration: usize, attempt: usize, reply: String },
    RunTests { iteration: usize, attempt: usize },
}

pub type Observer = Box<dyn Fn(&LogEntry) + Send + Sync>;

/// Drives one session. Mutation is serialized through `&mut self`.
pub struct Engine {
    store: SessionStore,
    provider: Arc<dyn ChatProvider>,
    harness: Arc<dyn TestHarness>,
    settings: EngineSettings,
    observers: Vec<Observer>,
}

impl Engine {
    pub fn create(
        log_path: &Path,
        new: NewSession,
        provider: Arc<dyn ChatProvider>,
        harness: Arc<dyn TestHarness>,
        clock: Arc<dyn Clock>,
        settings: EngineSettings,
    ) -> Result<Self, EngineError> {
        if new.pattern == InteractionPattern::NonAutomated {
            return Err(EngineError::Unsupported(new.pattern));
        }
        new.feature.validate()?;
        new.artifacts.write_to(&new.workspace)?;
        let store = SessionStore::create(log_path, new, clock)?;
        Ok(Self::assemble(store, provider, harness, settings))
    }

    /// Reopens a session from its log and restores the workspace files to the logged state.
    pub fn resume(
        log_path: &Path,
        provider: Arc<dyn ChatProvider>,
        harness: Arc<dyn TestHarness>,
        clock: Arc<dyn Clock>,
        settings: EngineSettings,
    ) -> Result<Self, EngineError> {
        let store = SessionStore::reopen(log_path, clock)?;
        let session = store.session();
        if session.pattern == InteractionPattern::NonAutomated {
            return Err(EngineError::Unsupported(session.pattern));
        }
        session.artifacts.write_to(&session.workspace_path)?;
        Ok(Self::assemble(store, provider, harness, settings))
    }

    fn assemble(
        store: SessionStore,
        provider: Arc<dyn ChatProvider>,
        harness: Arc<dyn TestHarness>,
        settings: EngineSettings,
    ) -> Self {
        Self {
            store,
            provider,
            harness,
            settings,
            observers: Vec::new(),
        }
    }

    pub fn session(&self) -> &Session {
        self.store.session()
    }

    pub fn log_path(&self) -> &Path {
        self.store.log_path()
    }

    pub fn settings(&self) -> &EngineSettings {
        &self.settings
    }

    /// Called with every entry appended from now on.
    pub fn subscribe(&mut self, observer: impl Fn(&LogEntry) + Send + Sync + 'static) {
        self.observers.push(Box::new(observer));
    }

    fn append(&mut self, event: WorkflowEvent) -> Result<(), EngineError> {
        let entry = self.store.append(event)?;
        for observer in &self.observers {
            observer(entry);
        }
        Ok(())
    }

    /// Performs the next transition, appending exactly one event, or reports why it cannot.
    pub fn step(&mut self) -> Result<Step, EngineError> {
        match self.plan() {
            Action::Done => Ok(Step::Finished(self.session().status)),
            Action::Wait => Ok(Step::AwaitingDeveloper),
            Action::Append(event) => {
                self.append(event)?;
                Ok(Step::Advanced)
            }
            Action::CallProvider {
                iteration,
                attempt,
                context,
            } => {
                let event = match self.provider.complete(&context) {
                    Ok(reply) => WorkflowEvent::ReplyReceived {
                        iteration,
                        attempt,
                        reply,
                    },
                    Err(e) => WorkflowEvent::SessionHalted {
                        reason: format!("provider error in iteration {iteration}, attempt {attempt}: {e}"),
                    },
                };
                self.append(event)?;
                Ok(Step::Advanced)
            }
            Action::Integrate {
                iteration,
                attempt,
                reply,
            } => {
                let integrator = self.integrator();
                let blocks = integrator.extract_blocks(&reply);
                let event = match integrator.integrate(&self.session().artifacts, &blocks) {
                    Ok((artifacts, report)) => WorkflowEvent::Integrated {
                        iteration,
                        attempt,
                        artifacts,
                        report,
                    },
                    Err(e) => WorkflowEvent::IntegrationRejected {
                        iteration,
                        attempt,
                        reason: e.to_string(),
                    },
                };
                self.append(event)?;
                Ok(Step::Advanced)
            }
            Action::RunTests { iteration, attempt } => {
                let session = self.session();
                session.artifacts.write_to(&session.workspace_path)?;
                let outcome = self.harness.run(&session.workspace_path);
                self.append(WorkflowEvent::TestsRun {
                    iteration,
                    attempt,
                    outcome,
                })?;
                Ok(Step::Advanced)
            }
        }
    }

    /// Steps until the session ends or waits for a developer.
    pub fn run_to_completion(&mut self) -> Result<Step, EngineError> {
        loop {
            match self.step()? {
                Step::Advanced => continue,
                other => return Ok(other),
            }
        }
    }

    /// Runs a fully automated session from its start to Completed or Halted.
    pub fn run_fully_automated(&mut self) -> Result<&Session, EngineError> {
        if self.session().pattern != InteractionPattern::FullyAutomated {
            return Err(EngineError::Unsupported(self.session().pattern));
        }
        self.run_to_completion()?;
        Ok(self.session())
    }

    /// Applies one developer decision and runs until the developer is needed again.
    pub fn run_collaborative_step(&mut self, decision: DeveloperDecision) -> Result<&Session, EngineError> {
        self.submit_decision(decision)?;
        self.run_to_completion()?;
        Ok(self.session())
    }

    fn integrator(&self) -> Integrator {
        let mode = match self.session().pattern {
            InteractionPattern::Collaborative => IntegrationMode::ProductionOnly,
            _ => IntegrationMode::Full,
        };
        Integrator {
            test_prefix: self.settings.test_prefix.clone(),
            mode,
        }
    }

    /// Checks `decision` against the current state and records it. A rejected
    /// decision leaves the session and workspace untouched.
    ///
    /// A plain approval picks up any edits the developer saved to the
    /// workspace files and is recorded as `edit_then_approve`.
    pub fn submit_decision(&mut self, decision: DeveloperDecision) -> Result<(), EngineError> {
        self.validate_decision(&decision)?;
        let decision = self.absorb_workspace_edits(decision)?;
        self.validate_decision(&decision)?;
        self.append(WorkflowEvent::DeveloperDecisionReceived { decision })?;
        let session = self.session();
        session.artifacts.write_to(&session.workspace_path)?;
        Ok(())
    }

    fn absorb_workspace_edits(&self, decision: DeveloperDecision) -> Result<DeveloperDecision, EngineError> {
        let session = self.session();
        if session.status != SessionStatus::AwaitingDeveloper {
            return Ok(decision);
        }
        let (mut test_source, mut production_source, prompt) = match decision {
            DeveloperDecision::Approve => (None, None, None),
            DeveloperDecision::EditThenApprove {
                test_source,
                production_source,
                prompt,
            } => (test_source, production_source, prompt),
            other => return Ok(other),
        };
        let on_disk = CodeArtifacts::read_from(&session.workspace_path, &session.layout)?;
        if test_source.is_none() && on_disk.test.text != session.artifacts.test.text {
            test_source = Some(on_disk.test.text);
        }
        if production_source.is_none() && on_disk.production.text != session.artifacts.production.text {
            production_source = Some(on_disk.production.text);
        }
        if test_source.is_none() && production_source.is_none() && prompt.is_none() {
            return Ok(DeveloperDecision::Approve);
        }
        Ok(DeveloperDecision::EditThenApprove {
            test_source,
            production_source,
            prompt,
        })
    }

    pub fn validate_decision(&self, decision: &DeveloperDecision) -> Result<(), DecisionError> {
        let session = self.session();
        if session.status != SessionStatus::AwaitingDeveloper {
            return Err(DecisionError::NotAwaiting { status: session.status });
        }
        if !decision.is_well_formed() {
            return Err(DecisionError::EmptyEdit);
        }
        let invalid = |reason: &str| DecisionError::Invalid {
            decision: decision.name(),
            reason: reason.to_string(),
        };
        let open = session.open_iteration.as_ref();
        match decision {
            DeveloperDecision::Abort => Ok(()),
            DeveloperDecision::RequestRegeneration => {
                let open = open.ok_or_else(|| invalid("no iteration is open"))?;
                if open.attempts.len() >= MAX_ATTEMPTS {
                    return Err(invalid("the iteration has used all of its attempts"));
                }
                Ok(())
            }
            DeveloperDecision::DeclareFeatureComplete => {
                if session.refactor_requested {
                    return Err(invalid("the refactor phase has already begun"));
                }
                let passed = match open {
                    Some(open) => open.current().and_then(|a| a.outcome.as_ref()).is_some_and(|o| o.passed()),
                    None => session.iterations.last().is_some_and(|r| r.passed()),
                };
                if !passed {
                    return Err(invalid("the latest test run has not passed"));
                }
                Ok(())
            }
            DeveloperDecision::Approve | DeveloperDecision::EditThenApprove { .. } => {
                if open.is_none() && session.next_index() > self.settings.max_iterations {
                    return Err(invalid("iteration budget exceeded"));
                }
                Ok(())
            }
        }
    }

    fn plan(&self) -> Action {
        let session = self.session();
        if session.status.is_terminal() {
            return Action::Done;
        }
        if session.status == SessionStatus::AwaitingDeveloper {
            return Action::Wait;
        }
        if let Some(open) = &session.open_iteration {
            if let Some(action) = progress_attempt(session, open) {
                return action;
            }
        }
        match session.pattern {
            InteractionPattern::Collaborative => self.plan_collaborative(session),
            _ => self.plan_automated(session),
        }
    }

    fn plan_automated(&self, session: &Session) -> Action {
        if let Some(open) = &session.open_iteration {
            let attempt = open.current().expect("progress_attempt handles an empty iteration");
            if let Some(halt) = harness_breakdown(open) {
                return halt;
            }
            if !attempt.failed() {
                return self.commit(session, open);
            }
            if open.attempts.len() < MAX_ATTEMPTS {
                return resend(open);
            }
            if !open.exhausted {
                return Action::Append(WorkflowEvent::AttemptExhausted { iteration: open.index });
            }
            return self.commit(session, open);
        }
        if let Some(end) = closing_action(session) {
            return end;
        }
        if let Some(last) = session.iterations.last() {
            if !last.passed() {
                return halt(format!(
                    "iteration {} failed after {} attempts",
                    last.index, last.attempts
                ));
            }
        }
        if session.refactor_requested {
            return self.start_iteration(session, Phase::Refactor, None);
        }
        if session.iterations.is_empty() {
            return self.start_iteration(session, Phase::First, None);
        }
        match completion_check(session, &self.settings.test_prefix) {
            Ok(true) => Action::Append(WorkflowEvent::PhaseAdvanced { phase: Phase::Refactor }),
            _ => self.start_iteration(session, Phase::Intermediate, None),
        }
    }

    fn plan_collaborative(&self, session: &Session) -> Action {
        let Some(decision) = &session.pending_decision else {
            if let Some(open) = &session.open_iteration {
                if let Some(halt) = harness_breakdown(open) {
                    return halt;
                }
            } else if let Some(end) = closing_action(session) {
                return end;
            }
            return Action::Append(WorkflowEvent::DeveloperDecisionRequested);
        };
        match decision {
            DeveloperDecision::Abort => halt("aborted by the developer".to_string()),
            DeveloperDecision::RequestRegeneration => match &session.open_iteration {
                Some(open) => resend(open),
                None => halt("regeneration requested with no open iteration".to_string()),
            },
            DeveloperDecision::Approve
            | DeveloperDecision::EditThenApprove { .. }
            | DeveloperDecision::DeclareFeatureComplete => {
                if let Some(open) = &session.open_iteration {
                    return self.commit(session, open);
                }
                if let Some(end) = closing_action(session) {
                    return end;
                }
                if matches!(decision, DeveloperDecision::DeclareFeatureComplete) && !session.refactor_requested {
                    return Action::Append(WorkflowEvent::PhaseAdvanced { phase: Phase::Refactor });
                }
                let phase = if session.refactor_requested {
                    Phase::Refactor
                } else if session.iterations.is_empty() {
                    Phase::First
                } else {
                    Phase::Intermediate
                };
                self.start_iteration(session, phase, decision.prompt_override())
            }
        }
    }

    fn commit(&self, session: &Session, open: &OpenIteration) -> Action {
        let record = open.to_record(&session.artifacts, self.store.clock().now());
        Action::Append(WorkflowEvent::IterationRecorded { record })
    }

    fn start_iteration(&self, session: &Session, phase: Phase, prompt_override: Option<&str>) -> Action {
        let iteration = session.next_index();
        if iteration > self.settings.max_iterations {
            return halt(format!(
                "iteration budget exceeded: {} iterations allowed",
                self.settings.max_iterations
            ));
        }
        let prompt = match prompt_override {
            Some(p) if !p.trim().is_empty() => p.to_string(),
            _ => match prompt::build_prompt(phase, &session.feature) {
                Ok(base) if session.pattern == InteractionPattern::Collaborative => {
                    with_documents(&base, &session.artifacts)
                }
                Ok(base) => base,
                Err(e) => return halt(format!("cannot build the {phase} prompt: {e}")),
            },
        };
        Action::Append(WorkflowEvent::IterationStarted {
            iteration,
            phase,
            prompt,
            developer_edits: session.pending_edits.clone(),
        })
    }
}

fn halt(reason: String) -> Action {
    Action::Append(WorkflowEvent::SessionHalted { reason })
}

/// The next step inside the current attempt, if the attempt is still in flight.
fn progress_attempt(session: &Session, open: &OpenIteration) -> Option<Action> {
    let Some(attempt) = open.current() else {
        return Some(Action::Append(WorkflowEvent::PromptSent {
            iteration: open.index,
            attempt: 1,
            context: prompt::assemble_context(session.last_reply(), &open.prompt),
        }));
    };
    let Some(reply) = &attempt.reply else {
        return Some(Action::CallProvider {
            iteration: open.index,
            attempt: attempt.number,
            context: attempt.context.clone(),
        });
    };
    if attempt.report.is_none() && attempt.rejection.is_none() {
        return Some(Action::Integrate {
            iteration: open.index,
            attempt: attempt.number,
            reply: reply.text.clone(),
        });
    }
    if attempt.report.is_some() && attempt.outcome.is_none() && attempt.rejection.is_none() {
        return Some(Action::RunTests {
            iteration: open.index,
            attempt: attempt.number,
        });
    }
    None
}

fn harness_breakdown(open: &OpenIteration) -> Option<Action> {
    let outcome = open.current()?.outcome.as_ref()?;
    (outcome.status == TestStatus::Error).then(|| {
        let first = outcome.log.lines().find(|l| !l.trim().is_empty()).unwrap_or("no output");
        halt(format!(
            "test harness error in iteration {} (exit {}): {first}",
            open.index, outcome.exit_code
        ))
    })
}

/// Resends the iteration's prompt, carrying the last reply and the failure log.
fn resend(open: &OpenIteration) -> Action {
    let last = open.current().expect("resend follows an attempt");
    let previous = last.reply.as_ref().map(|r| r.text.as_str());
    let prompt = match last.failure_log() {
        Some(log) => prompt::retry_prompt(&open.prompt, log),
        None => open.prompt.clone(),
    };
    Action::Append(WorkflowEvent::PromptSent {
        iteration: open.index,
        attempt: last.number + 1,
        context: prompt::assemble_context(previous, &prompt),
    })
}

/// Ends the session once its refactor iteration is committed.
fn closing_action(session: &Session) -> Option<Action> {
    let last = session.iterations.last()?;
    if last.phase != Phase::Refactor {
        return None;
    }
    Some(if last.passed() {
        Action::Append(WorkflowEvent::SessionCompleted)
    } else {
        halt(format!("tests do not pass after the refactor iteration {}", last.index))
    })
}

/// Appends both workspace documents to a collaborative prompt so the model sees the developer's code.
fn with_documents(prompt: &str, artifacts: &CodeArtifacts) -> String {
    let mut out = prompt.to_string();
    for doc in [&artifacts.test, &artifacts.production] {
        if doc.text.trim().is_empty() {
            continue;
        }
        out.push_str(&format!("\n\n{}:\n```python\n{}", doc.filename, doc.text));
        if !doc.text.ends_with('\n') {
            out.push('\n');
        }
        out.push_str("```");
    }
    out
}

use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::Context;

use aitdd_core::metrics::{compute_directory_metrics, compute_metrics, render_report, report_json};
use aitdd_core::provider::{record_fixture, Exchange};
use aitdd_core::session::{
    load_session_file, CodeArtifacts, NewSession, Session, SessionId, SessionStatus, WorkflowEvent, WorkspaceLayout,
};
use aitdd_core::workflow::Engine;

use crate::config::{ConfigError, RunConfig};
use crate::server;

fn print_report(session: &Session, json: bool) -> anyhow::Result<()> {
    let metrics = compute_metrics(&session.artifacts, Some(session))?;
    let text = if json {
        report_json(&metrics, Some(session)) + "\n"
    } else {
        render_report(&metrics, Some(session))
    };
    std::io::stdout().write_all(text.as_bytes())?;
    Ok(())
}

/// Opens the engine for a new session, or for the logged one when `resume` is given.
fn open_engine(config: &RunConfig, resume: Option<&Path>) -> anyhow::Result<Engine> {
    if let Some(log) = resume {
        if !log.is_file() {
            return Err(ConfigError(format!("session log {} does not exist", log.display())).into());
        }
        let p = config.prepare_engine()?;
        return Engine::resume(log, p.provider, p.harness, p.clock, p.settings)
            .with_context(|| format!("cannot resume {}", log.display()));
    }
    let p = config.prepare()?;
    let id = SessionId::random();
    let log = config
        .log
        .clone()
        .unwrap_or_else(|| config.log_dir.join(format!("{id}.jsonl")));
    if log.exists() {
        return Err(ConfigError(format!(
            "session log {} already exists; pass --resume to continue it",
            log.display()
        ))
        .into());
    }
    let workspace = std::path::absolute(&config.workspace)?;
    let layout = WorkspaceLayout::for_feature(&p.feature);
    let artifacts = CodeArtifacts::read_from(&workspace, &layout)
        .with_context(|| format!("cannot read workspace {}", workspace.display()))?;
    let new = NewSession {
        id,
        feature: p.feature,
        pattern: config.pattern,
        workspace,
        layout,
        artifacts,
    };
    Ok(Engine::create(&log, new, p.provider, p.harness, p.clock, p.settings)?)
}

/// One stderr line per finished iteration and at the end of the session.
fn progress(engine: &mut Engine) {
    engine.subscribe(|entry| match &entry.event {
        WorkflowEvent::IterationRecorded { record } => {
            let outcome = record
                .outcome
                .as_ref()
                .map_or("no test run".to_string(), |o| format!("{:?}", o.status).to_lowercase());
            eprintln!(
                "iteration {} ({}): {} after {} attempt(s)",
                record.index, record.phase, outcome, record.attempts
            );
        }
        WorkflowEvent::SessionHalted { reason } => eprintln!("halted: {reason}"),
        WorkflowEvent::SessionCompleted => eprintln!("completed"),
        _ => {}
    });
}

pub fn run(config: &RunConfig, resume: Option<&Path>, json: bool) -> anyhow::Result<ExitCode> {
    let mut engine = open_engine(config, resume)?;
    eprintln!("session log: {}", engine.log_path().display());
    progress(&mut engine);
    let session = engine.run_fully_automated()?;
    print_report(session, json)?;
    Ok(if session.status == SessionStatus::Completed {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

pub fn serve(config: &RunConfig, resume: Option<&Path>, bind: SocketAddr) -> anyhow::Result<ExitCode> {
    let mut engine = open_engine(config, resume)?;
    eprintln!("session log: {}", engine.log_path().display());
    progress(&mut engine);
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(bind)
            .await
            .map_err(|e| ConfigError(format!("cannot bind {bind}: {e}")))?;
        let addr = listener.local_addr()?;
        println!("listening on http://{addr}");
        std::io::stdout().flush()?;
        let state = server::AppState::new(engine);
        server::serve(listener, state, shutdown_signal()).await?;
        Ok::<_, anyhow::Error>(())
    })?;
    Ok(ExitCode::SUCCESS)
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
    eprintln!("shutting down");
}

pub fn metrics(workspace: &Path, elapsed: Option<Duration>, json: bool) -> anyhow::Result<ExitCode> {
    if !workspace.is_dir() {
        return Err(ConfigError(format!("workspace {} is not a readable directory", workspace.display())).into());
    }
    let metrics = compute_directory_metrics(workspace, elapsed)?;
    let text = if json {
        report_json(&metrics, None) + "\n"
    } else {
        render_report(&metrics, None)
    };
    std::io::stdout().write_all(text.as_bytes())?;
    Ok(ExitCode::SUCCESS)
}

/// The model exchanges of a logged session, in order.
pub fn session_exchanges(session: &Session) -> Vec<Exchange> {
    let mut out = Vec::new();
    let mut pending = None;
    for entry in &session.history {
        match &entry.event {
            WorkflowEvent::PromptSent { context, .. } => pending = Some(context.clone()),
            WorkflowEvent::ReplyReceived { reply, .. } => {
                if let Some(context) = pending.take() {
                    out.push(Exchange {
                        context,
                        reply: reply.text.clone(),
                    });
                }
            }
            _ => {}
        }
    }
    out
}

pub fn replay(log: &Path, json: bool, export_fixture: Option<&PathBuf>) -> anyhow::Result<ExitCode> {
    if !log.is_file() {
        return Err(ConfigError(format!("session log {} does not exist", log.display())).into());
    }
    let session = load_session_file(log).with_context(|| format!("cannot load {}", log.display()))?;
    if let Some(out) = export_fixture {
        let fixture = record_fixture(&session_exchanges(&session))?;
        fixture.save(out)?;
        eprintln!("wrote {} step(s) to {}", fixture.steps.len(), out.display());
    }
    print_report(&session, json)?;
    Ok(ExitCode::SUCCESS)
}

//! Local HTTP service for one collaborative session.
//!
//! Reads are served from a view folded from the same events the engine
//! appends, so they never wait on a running step. Every write goes through
//! the engine's decision guard.

use std::convert::Infallible;
use std::future::Future;
use std::sync::{Arc, Mutex, MutexGuard, RwLock, TryLockError};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::{future, stream, Stream, StreamExt};
use serde::{Deserialize, Serialize};
use tokio::sync::{broadcast, oneshot, watch};
use tokio_stream::wrappers::BroadcastStream;

use aitdd_core::integrate::Warning;
use aitdd_core::session::{DeveloperDecision, LogEntry, Phase, Session, SessionStatus};
use aitdd_core::workflow::{Engine, EngineError};

const EVENT_BUFFER: usize = 1024;

pub struct AppState {
    engine: Mutex<Engine>,
    view: Arc<RwLock<Session>>,
    events: broadcast::Sender<LogEntry>,
    failure: Mutex<Option<String>>,
}

impl AppState {
    /// Wraps `engine` and starts driving it toward its first pause.
    pub fn new(mut engine: Engine) -> Arc<Self> {
        let view = Arc::new(RwLock::new(engine.session().clone()));
        let (events, _) = broadcast::channel(EVENT_BUFFER);
        {
            let view = view.clone();
            let events = events.clone();
            engine.subscribe(move |entry| {
                // Folding and publishing under one lock keeps history plus live
                // events gap-free for new subscribers.
                let mut session = view.write().expect("view lock");
                if session.apply(entry).is_ok() {
                    let _ = events.send(entry.clone());
                }
            });
        }
        let state = Arc::new(Self {
            engine: Mutex::new(engine),
            view,
            events,
            failure: Mutex::new(None),
        });
        let driver = state.clone();
        std::thread::spawn(move || {
            let mut engine = driver.lock_engine();
            driver.advance(&mut engine);
        });
        state
    }

    fn lock_engine(&self) -> MutexGuard<'_, Engine> {
        self.engine.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn advance(&self, engine: &mut Engine) {
        if let Err(e) = engine.run_to_completion() {
            *self.failure.lock().unwrap_or_else(|p| p.into_inner()) = Some(e.to_string());
        }
    }

    pub fn session(&self) -> Session {
        self.view.read().expect("view lock").clone()
    }

    fn document(&self) -> SessionDocument {
        let session = self.session();
        let open = session.open_iteration.as_ref();
        SessionDocument {
            current_iteration: open.map(|o| o.index),
            phase: open.map(|o| o.phase),
            pending_warnings: open
                .and_then(|o| o.current())
                .and_then(|a| a.report.as_ref())
                .map(|r| r.warnings.clone())
                .unwrap_or_default(),
            event_position: session.last_seq,
            engine_error: self.failure.lock().unwrap_or_else(|p| p.into_inner()).clone(),
            session,
        }
    }
}

/// Body of `GET /session`.
#[derive(Debug, Serialize)]
pub struct SessionDocument {
    #[serde(flatten)]
    pub session: Session,
    pub current_iteration: Option<usize>,
    pub phase: Option<Phase>,
    pub pending_warnings: Vec<Warning>,
    /// Sequence number of the last event folded into this document.
    pub event_position: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub engine_error: Option<String>,
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    status: Option<SessionStatus>,
}

fn error(code: StatusCode, message: impl Into<String>, status: Option<SessionStatus>) -> Response {
    (
        code,
        Json(ErrorBody {
            error: message.into(),
            status,
        }),
    )
        .into_response()
}

pub fn router(state: Arc<AppState>, stop: watch::Receiver<bool>) -> Router {
    Router::new()
        .route("/session", get(get_session))
        .route("/session/iterations/{n}", get(get_iteration))
        .route("/session/decision", post(post_decision))
        .route(
            "/session/events",
            get(move |state, query, headers| get_events(state, query, headers, stop.clone())),
        )
        .with_state(state)
}

/// Serves until `shutdown` resolves, then closes event streams and waits for
/// any step in progress so the log ends on a whole entry.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: Arc<AppState>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let (stop_tx, stop_rx) = watch::channel(false);
    axum::serve(listener, router(state.clone(), stop_rx))
        .with_graceful_shutdown(async move {
            shutdown.await;
            let _ = stop_tx.send(true);
        })
        .await?;
    let _ = tokio::task::spawn_blocking(move || drop(state.lock_engine())).await;
    Ok(())
}

async fn get_session(State(state): State<Arc<AppState>>) -> Json<SessionDocument> {
    Json(state.document())
}

async fn get_iteration(State(state): State<Arc<AppState>>, Path(n): Path<usize>) -> Response {
    let session = state.session();
    match session.iterations.iter().find(|r| r.index == n) {
        Some(record) => Json(record).into_response(),
        None => error(
            StatusCode::NOT_FOUND,
            format!("iteration {n} has not been recorded"),
            Some(session.status),
        ),
    }
}

async fn post_decision(
    State(state): State<Arc<AppState>>,
    body: Result<Json<DeveloperDecision>, JsonRejection>,
) -> Response {
    let decision = match body {
        Ok(Json(d)) => d,
        Err(e) => return error(StatusCode::BAD_REQUEST, e.body_text(), None),
    };
    let (reply, answer) = oneshot::channel::<Response>();
    let worker = state.clone();
    tokio::task::spawn_blocking(move || {
        let mut engine = match worker.engine.try_lock() {
            Ok(engine) => engine,
            Err(TryLockError::Poisoned(p)) => p.into_inner(),
            Err(TryLockError::WouldBlock) => {
                let _ = reply.send(error(
                    StatusCode::CONFLICT,
                    "session is running, not awaiting a developer decision",
                    Some(SessionStatus::Running),
                ));
                return;
            }
        };
        match engine.submit_decision(decision) {
            Ok(()) => {
                let _ = reply.send(Json(worker.document()).into_response());
                worker.advance(&mut engine);
            }
            Err(EngineError::Decision(e)) => {
                let status = engine.session().status;
                let _ = reply.send(error(StatusCode::CONFLICT, e.to_string(), Some(status)));
            }
            Err(e) => {
                let _ = reply.send(error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string(), None));
            }
        }
    });
    answer
        .await
        .unwrap_or_else(|_| error(StatusCode::INTERNAL_SERVER_ERROR, "decision worker failed", None))
}

#[derive(Debug, Default, Deserialize)]
struct EventsQuery {
    since: Option<u64>,
}

fn sse_event(entry: &LogEntry) -> Result<Event, Infallible> {
    Ok(Event::default()
        .id(entry.seq.to_string())
        .event(entry.event.name())
        .json_data(entry)
        .expect("log entry serializes"))
}

/// Logged events after `since` (or `Last-Event-ID`), then live ones.
async fn get_events(
    State(state): State<Arc<AppState>>,
    Query(query): Query<EventsQuery>,
    headers: HeaderMap,
    mut stop: watch::Receiver<bool>,
) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let since = query.since.or_else(|| {
        headers
            .get("last-event-id")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.parse().ok())
    });
    let since = since.unwrap_or(0);
    let (history, live) = {
        let session = state.view.read().expect("view lock");
        (session.history.clone(), state.events.subscribe())
    };
    let past = stream::iter(history.into_iter().filter(move |e| e.seq > since));
    // A lagging client is cut off; it reconnects with Last-Event-ID.
    let live = BroadcastStream::new(live)
        .take_while(|r| future::ready(r.is_ok()))
        .filter_map(|r| future::ready(r.ok()));
    let events = past
        .chain(live)
        .map(|e| sse_event(&e))
        .take_until(async move {
            let _ = stop.wait_for(|stopped| *stopped).await;
        });
    Sse::new(events).keep_alive(KeepAlive::default())
}

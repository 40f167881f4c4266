mod common;

use std::sync::Arc;
use std::time::Instant;

use aitdd_core::metrics::{compute_metrics, render_report};
use aitdd_core::provider::{record_fixture, Exchange, DEFAULT_MODEL};
use aitdd_core::session::{load_session_file, InteractionPattern, Phase, SessionStatus};
use aitdd_core::workflow::{completion_checklist, EngineSettings};

use common::*;

#[test]
fn committed_fixture_matches_the_replies() {
    let dir = tempfile::tempdir().unwrap();
    let provider = Arc::new(ScriptedProvider::new(f1_replies()));
    let mut engine = start_engine(
        dir.path(),
        f1_feature(),
        InteractionPattern::FullyAutomated,
        provider.clone(),
        python_harness(),
        EngineSettings::default(),
    );
    let session = engine.run_fully_automated().unwrap();
    assert_eq!(session.status, SessionStatus::Completed, "{:?}", session.halt_reason);

    let exchanges: Vec<Exchange> = provider
        .sent()
        .into_iter()
        .zip(f1_replies())
        .map(|(context, reply)| Exchange { context, reply })
        .collect();
    let mut fixture = record_fixture(&exchanges).unwrap();
    fixture.model = Some(DEFAULT_MODEL.to_string());
    let generated = fixture.to_toml_string().unwrap();
    let path = f1_dir().join("f1.fixture.toml");
    if std::env::var_os("AITDD_BLESS").is_some() {
        std::fs::write(&path, &generated).unwrap();
    }
    let committed = std::fs::read_to_string(&path).unwrap_or_default();
    assert!(committed == generated, "F1 fixture is stale; rerun with AITDD_BLESS=1");
}

#[test]
fn replay_reproduces_the_f1_row() {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let mut engine = start_engine(
        dir.path(),
        f1_feature(),
        InteractionPattern::FullyAutomated,
        replay(f1_fixture()),
        python_harness(),
        EngineSettings::default(),
    );
    let session = engine.run_fully_automated().unwrap().clone();
    assert_eq!(session.status, SessionStatus::Completed, "{:?}", session.halt_reason);
    assert_eq!(session.iterations.len(), 8);
    assert!(session.iterations.iter().all(|r| r.attempts == 1 && r.passed()));
    assert!(session.iterations.iter().all(|r| r.warnings.is_empty()), "{:?}", session.iterations);
    let phases: Vec<Phase> = session.iterations.iter().map(|r| r.phase).collect();
    assert_eq!(phases[0], Phase::First);
    assert!(phases[1..7].iter().all(|p| *p == Phase::Intermediate));
    assert_eq!(phases[7], Phase::Refactor);

    let m = compute_metrics(&session.artifacts, Some(&session)).unwrap();
    assert_eq!(
        (m.test_functions, m.assertions, m.test_loc, m.code_loc, m.iterations),
        (1, 3, 14, 17, Some(8))
    );
    assert!(started.elapsed().as_secs_f64() < 10.0);

    // The logged session and the files on disk agree with the in-memory state.
    let reloaded = load_session_file(engine.log_path()).unwrap();
    assert_eq!(reloaded, session);
    let on_disk = aitdd_core::session::CodeArtifacts::read_from(&session.workspace_path, &session.layout).unwrap();
    assert_eq!(compute_metrics(&on_disk, Some(&session)).unwrap(), m);

    let report = render_report(&m, Some(&session));
    assert_eq!(report, render_report(&m, Some(&session)));
    assert!(report.contains("  test functions    1\n"));
    assert!(report.contains("  code LOC          17\n"));
}

#[test]
fn checklist_is_first_satisfied_at_iteration_seven() {
    let dir = tempfile::tempdir().unwrap();
    let mut engine = start_engine(
        dir.path(),
        f1_feature(),
        InteractionPattern::FullyAutomated,
        replay(f1_fixture()),
        python_harness(),
        EngineSettings::default(),
    );
    let mut seen = Vec::new();
    while engine.session().iterations.len() < 7 {
        engine.step().unwrap();
        let s = engine.session();
        if s.open_iteration.is_none() && s.iterations.len() > seen.len() {
            let all = completion_checklist(s, "test").unwrap().iter().all(|i| i.satisfied);
            seen.push(all);
        }
    }
    assert_eq!(seen, [false, false, false, false, false, false, true]);
    let first = completion_checklist(engine.session(), "test").unwrap();
    assert_eq!(
        first.iter().map(|i| i.entry.as_str()).collect::<Vec<_>>(),
        ["setLineWidth", "centerWord", "centerTwoWords"]
    );
}

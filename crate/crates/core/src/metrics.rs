//! Size and effort measures for a finished workspace, and the session report.
//!
//! LOC counts every line that is not empty or whitespace-only, so comments
//! count. Test functions and assertions come from the test document only, and
//! assertions are counted only inside test-prefixed functions.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use humantime_serde::re::humantime;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::harness::TestStatus;
use crate::session::{CodeArtifacts, Session};
use crate::source::{self, ScanError, DEFAULT_TEST_PREFIX};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SessionMetrics {
    pub test_functions: usize,
    pub assertions: usize,
    pub test_loc: usize,
    pub code_loc: usize,
    /// `None` when no timer applies, as for a bare workspace measured without one.
    #[serde(default, with = "humantime_serde")]
    pub elapsed: Option<Duration>,
    #[serde(default)]
    pub iterations: Option<usize>,
}

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("cannot scan {document}: {source}")]
    Scan {
        document: String,
        #[source]
        source: ScanError,
    },
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Measures `artifacts`; elapsed time and iteration count come from `session` when given.
pub fn compute_metrics(artifacts: &CodeArtifacts, session: Option<&Session>) -> Result<SessionMetrics, MetricsError> {
    let mut metrics = measure(&[(&artifacts.test.filename, &artifacts.test.text)], &[&artifacts.production.text])?;
    if let Some(session) = session {
        metrics.elapsed = Some(session.elapsed());
        metrics.iterations = Some(session.iterations.len());
    }
    Ok(metrics)
}

fn measure(tests: &[(&str, &str)], production: &[&str]) -> Result<SessionMetrics, MetricsError> {
    let mut m = SessionMetrics::default();
    for (name, text) in tests {
        let scan = source::scan(text).map_err(|source| MetricsError::Scan {
            document: name.to_string(),
            source,
        })?;
        m.test_functions += scan.count_test_functions(DEFAULT_TEST_PREFIX);
        m.assertions += scan.count_assertions(DEFAULT_TEST_PREFIX);
        m.test_loc += source::count_loc(text);
    }
    m.code_loc = production.iter().map(|t| source::count_loc(t)).sum();
    Ok(m)
}

fn is_test_file(name: &str) -> bool {
    name.starts_with("test_") || name.ends_with("_test.py") || name == "conftest.py"
}

/// Measures every `.py` file under `dir`, for workspaces built without the engine.
/// `test_*.py` and `*_test.py` files are tests; all other Python files are production code.
pub fn compute_directory_metrics(dir: &Path, elapsed: Option<Duration>) -> Result<SessionMetrics, MetricsError> {
    let mut files = Vec::new();
    collect_python_files(dir, &mut files)?;
    files.sort();
    let mut tests = Vec::new();
    let mut production = Vec::new();
    for path in files {
        let text = std::fs::read_to_string(&path).map_err(|source| MetricsError::Io {
            path: path.clone(),
            source,
        })?;
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        if is_test_file(&name) {
            tests.push((path.display().to_string(), text));
        } else {
            production.push(text);
        }
    }
    let test_refs: Vec<(&str, &str)> = tests.iter().map(|(n, t)| (n.as_str(), t.as_str())).collect();
    let prod_refs: Vec<&str> = production.iter().map(String::as_str).collect();
    let mut metrics = measure(&test_refs, &prod_refs)?;
    metrics.elapsed = elapsed;
    Ok(metrics)
}

fn collect_python_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), MetricsError> {
    let io = |source| MetricsError::Io {
        path: dir.to_path_buf(),
        source,
    };
    for entry in std::fs::read_dir(dir).map_err(io)? {
        let entry = entry.map_err(io)?;
        let path = entry.path();
        let name = entry.file_name();
        let name = name.to_string_lossy();
        if name.starts_with('.') || name == "__pycache__" {
            continue;
        }
        if entry.file_type().map_err(io)?.is_dir() {
            collect_python_files(&path, out)?;
        } else if name.ends_with(".py") {
            out.push(path);
        }
    }
    Ok(())
}

fn format_elapsed(elapsed: Option<Duration>) -> String {
    match elapsed {
        Some(d) => humantime::format_duration(Duration::from_secs(d.as_secs())).to_string(),
        None => "n/a".to_string(),
    }
}

fn status_word(status: Option<TestStatus>) -> &'static str {
    match status {
        Some(TestStatus::Passed) => "passed",
        Some(TestStatus::Failed) => "failed",
        Some(TestStatus::Error) => "error",
        Some(TestStatus::Timeout) => "timeout",
        None => "not run",
    }
}

/// One line per measure, as printed in the report.
pub fn metrics_table(metrics: &SessionMetrics) -> String {
    let iterations = metrics.iterations.map_or("n/a".to_string(), |n| n.to_string());
    let rows = [
        ("test functions", metrics.test_functions.to_string()),
        ("assertions", metrics.assertions.to_string()),
        ("test LOC", metrics.test_loc.to_string()),
        ("code LOC", metrics.code_loc.to_string()),
        ("time to complete", format_elapsed(metrics.elapsed)),
        ("iterations", iterations),
    ];
    let mut out = String::new();
    for (label, value) in rows {
        let _ = writeln!(out, "  {label:<18}{value}");
    }
    out
}

const COUNTING_RULES: &str = "LOC excludes empty and whitespace-only lines; comment lines count.\n\
Assertions are counted only inside test-prefixed functions.\n";

/// Plain-text report. Identical inputs give identical bytes.
pub fn render_report(metrics: &SessionMetrics, session: Option<&Session>) -> String {
    let mut out = String::new();
    match session {
        Some(s) => {
            let _ = writeln!(out, "Session {}", s.id);
            let _ = writeln!(out, "feature: {}", s.feature.description);
            let _ = writeln!(out, "pattern: {}", s.pattern);
            let _ = writeln!(out, "status: {:?}", s.status);
            if let Some(reason) = &s.halt_reason {
                let _ = writeln!(out, "halted: {reason}");
            }
        }
        None => out.push_str("Workspace metrics\n"),
    }
    out.push('\n');
    out.push_str(COUNTING_RULES);
    out.push('\n');
    out.push_str("Metrics\n");
    out.push_str(&metrics_table(metrics));

    let Some(session) = session else {
        return out;
    };
    out.push_str("\nIterations\n");
    let _ = writeln!(out, "  {:<4}{:<14}{:<10}{}", "#", "phase", "attempts", "outcome");
    for record in &session.iterations {
        let _ = writeln!(
            out,
            "  {:<4}{:<14}{:<10}{}",
            record.index,
            record.phase.to_string(),
            record.attempts,
            status_word(record.outcome.as_ref().map(|o| o.status))
        );
        for warning in &record.warnings {
            let _ = writeln!(out, "      warning: {}", warning.detail);
        }
        if let Some(edits) = &record.developer_edits {
            let _ = writeln!(out, "      developer edits: {} line(s)", edits.lines().count());
        }
    }
    if let Some(open) = &session.open_iteration {
        let _ = writeln!(
            out,
            "  {:<4}{:<14}{:<10}{}",
            open.index,
            open.phase.to_string(),
            open.attempts.len(),
            "in progress"
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportDocument<'a> {
    pub metrics: &'a SessionMetrics,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub session: Option<&'a Session>,
}

/// Machine-readable form of the report.
pub fn report_json(metrics: &SessionMetrics, session: Option<&Session>) -> String {
    serde_json::to_string_pretty(&ReportDocument { metrics, session }).expect("report serializes")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::session::{SourceDocument, WorkspaceLayout};

    fn artifacts(test: &str, production: &str) -> CodeArtifacts {
        CodeArtifacts {
            test: SourceDocument::new("test_x.py", test),
            production: SourceDocument::new("x.py", production),
        }
    }

    #[test]
    fn empty_documents_give_zero_counts() {
        let m = compute_metrics(&CodeArtifacts::empty(&WorkspaceLayout::for_feature(&crate::session::FeatureSpec::new("x"))), None).unwrap();
        assert_eq!(m, SessionMetrics::default());
        assert!(metrics_table(&m).contains("n/a"));
    }

    #[test]
    fn unterminated_string_is_an_input_error() {
        let err = compute_metrics(&artifacts("x = '''\n", ""), None).unwrap_err();
        assert!(matches!(err, MetricsError::Scan { .. }));
    }

    #[test]
    fn directory_metrics_split_tests_from_production() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("test_a.py"), "def test_a():\n    assert 1\n").unwrap();
        std::fs::write(dir.path().join("a.py"), "def a():\n\n    return 1\n").unwrap();
        std::fs::create_dir(dir.path().join("__pycache__")).unwrap();
        std::fs::write(dir.path().join("__pycache__/junk.py"), "x\n").unwrap();
        let m = compute_directory_metrics(dir.path(), None).unwrap();
        assert_eq!((m.test_functions, m.assertions, m.test_loc, m.code_loc), (1, 1, 2, 2));
        assert_eq!(m.elapsed, None);
    }

    #[test]
    fn elapsed_is_rendered_to_whole_seconds() {
        let m = SessionMetrics {
            elapsed: Some(Duration::from_millis(12 * 60_000 + 300)),
            ..SessionMetrics::default()
        };
        assert!(metrics_table(&m).contains("12m"));
        assert!(!metrics_table(&m).contains("ms"));
    }
}

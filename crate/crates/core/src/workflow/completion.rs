use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::session::Session;
use crate::source;

/// One thing the finished feature must demonstrably do.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChecklistItem {
    pub entry: String,
    pub satisfied: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CompletionError {
    #[error("completion is undefined before an iteration has passed its tests")]
    NoPassingIteration,
}

/// Checklist for the feature, judged against the test document of the last passing iteration.
///
/// With `target_functions` declared, an entry is satisfied when that name is
/// used inside some test-prefixed function. Without them, each expected output
/// must appear literally inside a test function.
pub fn completion_checklist(session: &Session, test_prefix: &str) -> Result<Vec<ChecklistItem>, CompletionError> {
    let last = session
        .iterations
        .iter()
        .rev()
        .find(|r| r.passed())
        .ok_or(CompletionError::NoPassingIteration)?;
    let scan = source::scan(&last.artifacts_after.test.text).ok();
    let feature = &session.feature;

    let items = if feature.target_functions.is_empty() {
        let body = scan.map(|s| s.test_body_text(test_prefix)).unwrap_or_default();
        feature
            .expected_outputs
            .iter()
            .map(|out| ChecklistItem {
                entry: out.clone(),
                satisfied: !out.trim().is_empty() && body.contains(out.trim()),
            })
            .collect()
    } else {
        let used = scan.map(|s| s.test_identifiers(test_prefix)).unwrap_or_default();
        feature
            .target_functions
            .iter()
            .map(|name| ChecklistItem {
                entry: name.clone(),
                satisfied: used.contains(name),
            })
            .collect()
    };
    Ok(items)
}

pub fn completion_check(session: &Session, test_prefix: &str) -> Result<bool, CompletionError> {
    Ok(completion_checklist(session, test_prefix)?.iter().all(|i| i.satisfied))
}

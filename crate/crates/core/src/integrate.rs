//! Pulls code blocks out of a model reply and folds them into the workspace.

use std::collections::BTreeSet;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::session::{CodeArtifacts, DocumentKind};
use crate::source::{self, DEFAULT_TEST_PREFIX};

static TEST_WORD_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)(?:^|[^a-z])tests?(?:[^a-z]|$)").expect("valid regex"));

static CLASS_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*class\s+[A-Za-z_]").expect("valid regex"));

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockClass {
    Test,
    Production,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractedBlock {
    pub body: String,
    pub fence_info: Option<String>,
    pub classification: BlockClass,
    /// 1-based line of the opening fence within the reply.
    pub line: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarningKind {
    TestFunctionsDecreased,
    AssertionRemoved,
    UnknownBlockIgnored,
    TestBlockIgnored,
    NoCodeBlocks,
    ScanFailed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Warning {
    pub kind: WarningKind,
    pub detail: String,
}

impl Warning {
    fn new(kind: WarningKind, detail: impl Into<String>) -> Self {
        Self {
            kind,
            detail: detail.into(),
        }
    }

    pub fn is_test_weakening(&self) -> bool {
        matches!(
            self.kind,
            WarningKind::TestFunctionsDecreased | WarningKind::AssertionRemoved
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntegrationReport {
    pub updated: BTreeSet<DocumentKind>,
    pub warnings: Vec<Warning>,
    pub previous_test_function_count: usize,
    pub new_test_function_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IntegrationError {
    #[error("reply contains {count} different {kind} blocks; cannot tell which one is the {kind} document")]
    Ambiguous { kind: DocumentKind, count: usize },
}

/// Which documents a reply is allowed to replace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntegrationMode {
    /// Test and production blocks are both applied.
    Full,
    /// Only production blocks are applied; the developer owns the tests.
    ProductionOnly,
}

#[derive(Debug, Clone)]
pub struct Integrator {
    pub test_prefix: String,
    pub mode: IntegrationMode,
}

impl Default for Integrator {
    fn default() -> Self {
        Self {
            test_prefix: DEFAULT_TEST_PREFIX.to_string(),
            mode: IntegrationMode::Full,
        }
    }
}

struct Fence {
    marker: char,
    len: usize,
    indent: usize,
    info: Option<String>,
    prose: Option<String>,
    line: usize,
    body: Vec<String>,
}

fn opening_fence(line: &str) -> Option<(char, usize, usize, Option<String>)> {
    let trimmed = line.trim_start();
    let marker = trimmed.chars().next().filter(|c| *c == '`' || *c == '~')?;
    let len = trimmed.chars().take_while(|c| *c == marker).count();
    if len < 3 {
        return None;
    }
    let info = trimmed[len * marker.len_utf8()..].trim();
    if marker == '`' && info.contains('`') {
        return None;
    }
    let indent = line.len() - trimmed.len();
    let info = (!info.is_empty()).then(|| info.to_string());
    Some((marker, len, indent, info))
}

fn closes(line: &str, fence: &Fence) -> bool {
    let trimmed = line.trim();
    trimmed.chars().count() >= fence.len && trimmed.chars().all(|c| c == fence.marker)
}

fn strip_indent(line: &str, indent: usize) -> &str {
    let removable = line
        .char_indices()
        .take(indent)
        .take_while(|(_, c)| *c == ' ')
        .count();
    &line[removable..]
}

impl Integrator {
    pub fn new(mode: IntegrationMode) -> Self {
        Self {
            mode,
            ..Self::default()
        }
    }

    /// Every fenced block in the reply, in order. An unterminated fence runs to the end.
    pub fn extract_blocks(&self, reply: &str) -> Vec<ExtractedBlock> {
        let mut blocks = Vec::new();
        let mut open: Option<Fence> = None;
        let mut last_prose: Option<String> = None;

        for (i, line) in reply.lines().enumerate() {
            if let Some(fence) = open.as_mut() {
                if closes(line, fence) {
                    let done = open.take().expect("fence is open");
                    blocks.extend(self.finish(done));
                    last_prose = None;
                } else {
                    fence.body.push(strip_indent(line, fence.indent).to_string());
                }
                continue;
            }
            if let Some((marker, len, indent, info)) = opening_fence(line) {
                open = Some(Fence {
                    marker,
                    len,
                    indent,
                    info,
                    prose: last_prose.take(),
                    line: i + 1,
                    body: Vec::new(),
                });
            } else if !line.trim().is_empty() {
                last_prose = Some(line.trim().to_string());
            }
        }
        if let Some(fence) = open {
            blocks.extend(self.finish(fence));
        }
        blocks
    }

    fn finish(&self, fence: Fence) -> Option<ExtractedBlock> {
        if fence.body.iter().all(|l| l.trim().is_empty()) {
            return None;
        }
        let mut body = fence.body.join("\n");
        body.push('\n');
        let classification = self.classify(&body, fence.info.as_deref(), fence.prose.as_deref());
        Some(ExtractedBlock {
            body,
            fence_info: fence.info,
            classification,
            line: fence.line,
        })
    }

    /// Priority: a label mentioning tests, then test functions with
    /// assertions, then plain definitions without assertions.
    pub fn classify(&self, body: &str, fence_info: Option<&str>, prose: Option<&str>) -> BlockClass {
        let labelled = [fence_info, prose]
            .into_iter()
            .flatten()
            .any(|label| TEST_WORD_RE.is_match(label));
        if labelled {
            return BlockClass::Test;
        }
        let Ok(scan) = source::scan(body) else {
            return BlockClass::Unknown;
        };
        let has_assertions = !scan.assertion_lines().is_empty();
        if has_assertions && scan.count_test_functions(&self.test_prefix) > 0 {
            return BlockClass::Test;
        }
        let has_definitions = !scan.functions.is_empty()
            || scan
                .lines
                .iter()
                .any(|l| l.statement_start && CLASS_RE.is_match(&l.code));
        if has_definitions && !has_assertions {
            BlockClass::Production
        } else {
            BlockClass::Unknown
        }
    }

    /// Replaces whole documents with the reply's blocks and reports what changed.
    pub fn integrate(
        &self,
        workspace: &CodeArtifacts,
        blocks: &[ExtractedBlock],
    ) -> Result<(CodeArtifacts, IntegrationReport), IntegrationError> {
        let mut warnings = Vec::new();
        if blocks.is_empty() {
            warnings.push(Warning::new(
                WarningKind::NoCodeBlocks,
                "reply contained no fenced code blocks",
            ));
        }

        let distinct = |class: BlockClass| -> Vec<&str> {
            let mut seen: Vec<&str> = Vec::new();
            for b in blocks.iter().filter(|b| b.classification == class) {
                if !seen.contains(&b.body.as_str()) {
                    seen.push(&b.body);
                }
            }
            seen
        };
        let tests = distinct(BlockClass::Test);
        let productions = distinct(BlockClass::Production);
        for (kind, found) in [(DocumentKind::Test, &tests), (DocumentKind::Production, &productions)] {
            if found.len() > 1 {
                return Err(IntegrationError::Ambiguous {
                    kind,
                    count: found.len(),
                });
            }
        }
        for block in blocks.iter().filter(|b| b.classification == BlockClass::Unknown) {
            warnings.push(Warning::new(
                WarningKind::UnknownBlockIgnored,
                format!("block at reply line {} is neither test nor production code; not written", block.line),
            ));
        }

        let mut next = workspace.clone();
        let mut updated = BTreeSet::new();
        if let Some(body) = tests.first() {
            if self.mode == IntegrationMode::ProductionOnly {
                warnings.push(Warning::new(
                    WarningKind::TestBlockIgnored,
                    "test block ignored: the developer owns the test document",
                ));
            } else if next.test.text != *body {
                next.test.text = body.to_string();
                updated.insert(DocumentKind::Test);
            }
        }
        if let Some(body) = productions.first() {
            if next.production.text != *body {
                next.production.text = body.to_string();
                updated.insert(DocumentKind::Production);
            }
        }

        let count = |text: &str, warnings: &mut Vec<Warning>, which: &str| match source::scan(text) {
            Ok(scan) => Some(scan),
            Err(e) => {
                warnings.push(Warning::new(WarningKind::ScanFailed, format!("{which} test document: {e}")));
                None
            }
        };
        let before = count(&workspace.test.text, &mut warnings, "previous");
        let after = if updated.contains(&DocumentKind::Test) {
            count(&next.test.text, &mut warnings, "new")
        } else {
            before.clone()
        };
        let previous_count = before.as_ref().map_or(0, |s| s.count_test_functions(&self.test_prefix));
        let new_count = after.as_ref().map_or(0, |s| s.count_test_functions(&self.test_prefix));

        if updated.contains(&DocumentKind::Test) {
            if let (Some(before), Some(after)) = (&before, &after) {
                if new_count < previous_count {
                    warnings.push(Warning::new(
                        WarningKind::TestFunctionsDecreased,
                        format!("test function count decreased {previous_count}\u{2192}{new_count}"),
                    ));
                }
                if !updated.contains(&DocumentKind::Production) {
                    let remaining: BTreeSet<String> = after.assertion_lines().into_iter().collect();
                    let mut reported = BTreeSet::new();
                    for line in before.assertion_lines() {
                        if !remaining.contains(&line) && reported.insert(line.clone()) {
                            warnings.push(Warning::new(
                                WarningKind::AssertionRemoved,
                                format!("assertion removed while production code is unchanged: {line}"),
                            ));
                        }
                    }
                }
            }
        }

        Ok((
            next,
            IntegrationReport {
                updated,
                warnings,
                previous_test_function_count: previous_count,
                new_test_function_count: new_count,
            },
        ))
    }
}

/// Extracts with the default test prefix.
pub fn extract_blocks(reply: &str) -> Vec<ExtractedBlock> {
    Integrator::default().extract_blocks(reply)
}

pub fn count_test_functions(document: &str) -> Result<usize, source::ScanError> {
    source::count_test_functions(document, DEFAULT_TEST_PREFIX)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::session::{SourceDocument, WorkspaceLayout};

    fn layout() -> WorkspaceLayout {
        WorkspaceLayout {
            test_file: "test_m.py".into(),
            production_file: "m.py".into(),
        }
    }

    fn block(body: &str, classification: BlockClass) -> ExtractedBlock {
        ExtractedBlock {
            body: body.to_string(),
            fence_info: Some("python".into()),
            classification,
            line: 1,
        }
    }

    #[test]
    fn test_block_is_recognised_by_content() {
        let reply = "Sure:\n```python\ndef test_width():\n    assert f(1) == 1\n```\n";
        let blocks = extract_blocks(reply);
        assert_eq!(blocks.len(), 1);
        assert_eq!(blocks[0].classification, BlockClass::Test);
        assert_eq!(blocks[0].body, "def test_width():\n    assert f(1) == 1\n");
        assert_eq!(blocks[0].fence_info.as_deref(), Some("python"));
    }

    #[test]
    fn class_without_assertions_is_production() {
        let reply = "Implementation:\n```python\nclass TextFormatter:\n    def setLineWidth(self, w):\n        self.w = w\n```";
        assert_eq!(extract_blocks(reply)[0].classification, BlockClass::Production);
    }

    #[test]
    fn bare_functions_are_production() {
        let reply = "```\ndef center(word, width):\n    return word.center(width)\n```";
        assert_eq!(extract_blocks(reply)[0].classification, BlockClass::Production);
    }

    #[test]
    fn prose_only_reply_has_no_blocks() {
        assert!(extract_blocks("I would start by writing a test for setLineWidth.").is_empty());
    }

    #[test]
    fn label_naming_tests_wins() {
        let reply = "**test_text_formatter.py**\n```python\nimport unittest\n```\n\n```python tests\nx = 1\n```";
        let blocks = extract_blocks(reply);
        assert!(blocks.iter().all(|b| b.classification == BlockClass::Test));
        let unlabeled = "TestCase subclasses below\n```python\nclass Foo:\n    pass\n```";
        assert_eq!(extract_blocks(unlabeled)[0].classification, BlockClass::Production);
    }

    #[test]
    fn prose_after_a_block_does_not_leak_into_the_next_label() {
        let reply = "Test code:\n```\ndef test_a():\n    assert 1\n```\n```\nclass A:\n    pass\n```";
        let blocks = extract_blocks(reply);
        assert_eq!(blocks[1].classification, BlockClass::Production);
    }

    #[test]
    fn unterminated_fence_runs_to_end() {
        let blocks = extract_blocks("```python\nclass A:\n    pass");
        assert_eq!(blocks.len(), 1);
        assert_eq!(blocks[0].body, "class A:\n    pass\n");
    }

    #[test]
    fn longer_fence_contains_shorter_one_and_indent_is_stripped() {
        let reply = "  ````markdown\n  ```python\n  x = 1\n  ```\n  ````\n";
        let blocks = extract_blocks(reply);
        assert_eq!(blocks.len(), 1);
        assert_eq!(blocks[0].body, "```python\nx = 1\n```\n");
        assert_eq!(blocks[0].classification, BlockClass::Unknown);
    }

    #[test]
    fn empty_workspace_gets_both_documents() {
        let ws = CodeArtifacts::empty(&layout());
        let blocks = [
            block("def test_a():\n    assert a() == 1\n", BlockClass::Test),
            block("def a():\n    return 1\n", BlockClass::Production),
        ];
        let (next, report) = Integrator::default().integrate(&ws, &blocks).unwrap();
        assert_eq!(report.updated, BTreeSet::from([DocumentKind::Test, DocumentKind::Production]));
        assert!(report.warnings.is_empty());
        assert_eq!(next.production.text, "def a():\n    return 1\n");
        assert_eq!(report.new_test_function_count, 1);
    }

    #[test]
    fn unknown_block_is_not_written() {
        let ws = CodeArtifacts::empty(&layout());
        let (next, report) = Integrator::default()
            .integrate(&ws, &[block("x = 1\n", BlockClass::Unknown)])
            .unwrap();
        assert_eq!(next, ws);
        assert!(report.updated.is_empty());
        assert_eq!(report.warnings[0].kind, WarningKind::UnknownBlockIgnored);
    }

    #[test]
    fn conflicting_blocks_are_ambiguous_but_duplicates_are_not() {
        let ws = CodeArtifacts::empty(&layout());
        let a = block("def a():\n    pass\n", BlockClass::Production);
        let b = block("def b():\n    pass\n", BlockClass::Production);
        assert_eq!(
            Integrator::default().integrate(&ws, &[a.clone(), b]).unwrap_err(),
            IntegrationError::Ambiguous {
                kind: DocumentKind::Production,
                count: 2
            }
        );
        assert!(Integrator::default().integrate(&ws, &[a.clone(), a]).is_ok());
    }

    #[test]
    fn fewer_test_functions_warns() {
        let mut ws = CodeArtifacts::empty(&layout());
        ws.test = SourceDocument::new(
            "test_m.py",
            "def test_a():\n    assert a()\n\ndef test_b():\n    assert b()\n\ndef test_c():\n    assert c()\n",
        );
        let fewer = block(
            "def test_a():\n    assert a()\n\ndef test_b():\n    assert b()\n",
            BlockClass::Test,
        );
        let (_, report) = Integrator::default().integrate(&ws, &[fewer]).unwrap();
        let weakening: Vec<_> = report.warnings.iter().filter(|w| w.is_test_weakening()).collect();
        assert_eq!(weakening[0].detail, "test function count decreased 3\u{2192}2");
        assert_eq!(weakening[1].kind, WarningKind::AssertionRemoved);
    }

    #[test]
    fn changed_assertion_with_new_production_is_not_weakening() {
        let mut ws = CodeArtifacts::empty(&layout());
        ws.test.text = "def test_a():\n    assert a() == 1\n".into();
        ws.production.text = "def a():\n    return 1\n".into();
        let blocks = [
            block("def test_a():\n    assert a() == 2\n", BlockClass::Test),
            block("def a():\n    return 2\n", BlockClass::Production),
        ];
        let (_, report) = Integrator::default().integrate(&ws, &blocks).unwrap();
        assert!(report.warnings.is_empty());
    }

    #[test]
    fn production_only_mode_keeps_developer_tests() {
        let mut ws = CodeArtifacts::empty(&layout());
        ws.test.text = "def test_a():\n    assert a()\n".into();
        let blocks = [
            block("def test_z():\n    assert z()\n", BlockClass::Test),
            block("def a():\n    return True\n", BlockClass::Production),
        ];
        let (next, report) = Integrator::new(IntegrationMode::ProductionOnly)
            .integrate(&ws, &blocks)
            .unwrap();
        assert_eq!(next.test, ws.test);
        assert_eq!(report.updated, BTreeSet::from([DocumentKind::Production]));
        assert_eq!(report.warnings[0].kind, WarningKind::TestBlockIgnored);
    }
}

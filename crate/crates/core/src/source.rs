//! Lightweight lexical scan of Python sources.
//!
//! Tracks strings, comments and bracket continuation closely enough to find
//! function definitions, their bodies and assertion statements. It is not a
//! parser: a file that Python rejects may still scan.

use std::collections::BTreeSet;
use std::sync::LazyLock;

use regex::Regex;
use thiserror::Error;

pub const DEFAULT_TEST_PREFIX: &str = "test";

static DEF_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^\s*(?:async\s+)?def\s+([A-Za-z_][A-Za-z0-9_]*)").expect("valid regex")
});

static ASSERT_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"^(?:assert\b|(?:self\.)?assert[A-Z_]\w*\s*\(|with\s+(?:self\.)?assert[A-Z_]\w*\s*\(|(?:with\s+)?pytest\.raises\s*\()",
    )
    .expect("valid regex")
});

static IDENT_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"[A-Za-z_][A-Za-z0-9_]*").expect("valid regex"));

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("cannot scan source at line {line}: {reason}")]
pub struct ScanError {
    pub line: usize,
    pub reason: String,
}

/// One physical line after scanning.
#[derive(Debug, Clone)]
pub struct ScannedLine {
    /// 1-based.
    pub number: usize,
    pub raw: String,
    /// Source text with comments dropped and string contents blanked.
    pub code: String,
    pub indent: usize,
    /// True when the line begins a new logical statement (not inside a
    /// string, not a bracket or backslash continuation, and not empty).
    pub statement_start: bool,
}

impl ScannedLine {
    fn statements(&self) -> impl Iterator<Item = &str> {
        self.code.split(';').map(str::trim).filter(|s| !s.is_empty())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FunctionSpan {
    pub name: String,
    /// Line number of the `def`.
    pub def_line: usize,
    /// Last line belonging to the body (inclusive).
    pub end_line: usize,
}

#[derive(Debug, Clone)]
pub struct SourceScan {
    pub lines: Vec<ScannedLine>,
    pub functions: Vec<FunctionSpan>,
}

pub fn is_blank(line: &str) -> bool {
    line.trim().is_empty()
}

/// Lines of code, where only empty or whitespace-only lines are excluded.
pub fn count_loc(text: &str) -> usize {
    text.lines().filter(|l| !is_blank(l)).count()
}

pub fn count_test_functions(text: &str, prefix: &str) -> Result<usize, ScanError> {
    Ok(scan(text)?.count_test_functions(prefix))
}

pub fn count_assertions(text: &str, prefix: &str) -> Result<usize, ScanError> {
    Ok(scan(text)?.count_assertions(prefix))
}

fn indent_width(line: &str) -> usize {
    let mut width = 0;
    for c in line.chars() {
        match c {
            ' ' => width += 1,
            '\t' => width += 8 - width % 8,
            '\x0c' => width = 0,
            _ => break,
        }
    }
    width
}

#[derive(Debug, Clone, Copy)]
struct OpenTriple {
    quote: char,
    line: usize,
}

pub fn scan(text: &str) -> Result<SourceScan, ScanError> {
    let mut lines = Vec::new();
    let mut triple: Option<OpenTriple> = None;
    let mut depth: usize = 0;
    let mut backslash_continues = false;

    for (i, raw) in text.lines().enumerate() {
        let number = i + 1;
        let starts_in_string = triple.is_some();
        let continuation = depth > 0 || backslash_continues;
        backslash_continues = false;

        let chars: Vec<char> = raw.chars().collect();
        let mut code = String::with_capacity(raw.len());
        let mut k = 0;
        while k < chars.len() {
            let c = chars[k];
            if let Some(open) = triple {
                if c == '\\' {
                    k += 2;
                    continue;
                }
                if c == open.quote && chars.get(k + 1) == Some(&c) && chars.get(k + 2) == Some(&c) {
                    triple = None;
                    code.extend([c, c, c]);
                    k += 3;
                } else {
                    k += 1;
                }
                continue;
            }
            match c {
                '#' => break,
                '"' | '\'' => {
                    if chars.get(k + 1) == Some(&c) && chars.get(k + 2) == Some(&c) {
                        triple = Some(OpenTriple { quote: c, line: number });
                        code.extend([c, c, c]);
                        k += 3;
                    } else {
                        code.push(c);
                        k += 1;
                        while k < chars.len() && chars[k] != c {
                            k += if chars[k] == '\\' { 2 } else { 1 };
                        }
                        if k < chars.len() {
                            code.push(c);
                        }
                        k += 1;
                    }
                }
                '(' | '[' | '{' => {
                    depth += 1;
                    code.push(c);
                    k += 1;
                }
                ')' | ']' | '}' => {
                    depth = depth.saturating_sub(1);
                    code.push(c);
                    k += 1;
                }
                _ => {
                    code.push(c);
                    k += 1;
                }
            }
        }
        if triple.is_none() && code.trim_end().ends_with('\\') {
            backslash_continues = true;
        }
        let statement_start = !starts_in_string && !continuation && !code.trim().is_empty();
        lines.push(ScannedLine {
            number,
            indent: indent_width(raw),
            raw: raw.to_string(),
            code,
            statement_start,
        });
    }

    if let Some(open) = triple {
        return Err(ScanError {
            line: open.line,
            reason: "unterminated triple-quoted string".into(),
        });
    }

    let functions = function_spans(&lines);
    Ok(SourceScan { lines, functions })
}

fn function_spans(lines: &[ScannedLine]) -> Vec<FunctionSpan> {
    let mut spans = Vec::new();
    for (pos, line) in lines.iter().enumerate() {
        if !line.statement_start {
            continue;
        }
        let Some(caps) = DEF_RE.captures(&line.code) else {
            continue;
        };
        let mut end_line = line.number;
        for later in &lines[pos + 1..] {
            if later.statement_start && later.indent <= line.indent {
                break;
            }
            if !is_blank(&later.raw) {
                end_line = later.number;
            }
        }
        spans.push(FunctionSpan {
            name: caps[1].to_string(),
            def_line: line.number,
            end_line,
        });
    }
    spans
}

fn is_assertion(statement: &str) -> bool {
    ASSERT_RE.is_match(statement)
}

/// Statement text following a `def ...:` header on the same line, if any.
fn inline_body(code: &str) -> Option<&str> {
    let open = code.find('(')?;
    let mut depth = 0usize;
    let mut close = None;
    for (i, c) in code[open..].char_indices() {
        match c {
            '(' => depth += 1,
            ')' => {
                depth -= 1;
                if depth == 0 {
                    close = Some(open + i);
                    break;
                }
            }
            _ => {}
        }
    }
    let close = close?;
    let rest = code[close + 1..].trim_start();
    let rest = match rest.strip_prefix("->") {
        Some(annotated) => &annotated[annotated.find(':')?..],
        None => rest,
    };
    let body = rest.strip_prefix(':')?.trim();
    (!body.is_empty()).then_some(body)
}

impl SourceScan {
    pub fn test_functions<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a FunctionSpan> {
        self.functions.iter().filter(move |f| f.name.starts_with(prefix))
    }

    pub fn count_test_functions(&self, prefix: &str) -> usize {
        self.test_functions(prefix).count()
    }

    fn test_line_numbers(&self, prefix: &str) -> BTreeSet<usize> {
        self.test_functions(prefix)
            .flat_map(|f| f.def_line..=f.end_line)
            .collect()
    }

    fn statements_on(&self, line: &ScannedLine) -> Vec<String> {
        if !line.statement_start {
            return Vec::new();
        }
        if DEF_RE.is_match(&line.code) {
            return inline_body(&line.code)
                .map(|b| b.split(';').map(|s| s.trim().to_string()).collect())
                .unwrap_or_default();
        }
        line.statements().map(str::to_owned).collect()
    }

    /// Assertion statements inside test-prefixed functions.
    pub fn count_assertions(&self, prefix: &str) -> usize {
        let covered = self.test_line_numbers(prefix);
        self.lines
            .iter()
            .filter(|l| covered.contains(&l.number))
            .map(|l| self.statements_on(l).iter().filter(|s| is_assertion(s)).count())
            .sum()
    }

    /// Trimmed raw text of every line that starts an assertion statement, anywhere in the file.
    pub fn assertion_lines(&self) -> Vec<String> {
        self.lines
            .iter()
            .filter(|l| self.statements_on(l).iter().any(|s| is_assertion(s)))
            .map(|l| l.raw.trim().to_string())
            .collect()
    }

    /// Raw text of the lines inside test-prefixed functions, comments and strings included.
    pub fn test_body_text(&self, prefix: &str) -> String {
        let covered = self.test_line_numbers(prefix);
        let mut out = String::new();
        for line in self.lines.iter().filter(|l| covered.contains(&l.number)) {
            out.push_str(&line.raw);
            out.push('\n');
        }
        out
    }

    /// Identifiers used in code (not comments or strings) inside test-prefixed functions.
    pub fn test_identifiers(&self, prefix: &str) -> BTreeSet<String> {
        let covered = self.test_line_numbers(prefix);
        self.lines
            .iter()
            .filter(|l| covered.contains(&l.number))
            .flat_map(|l| IDENT_RE.find_iter(&l.code).map(|m| m.as_str().to_string()))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_test_prefixed_functions() {
        let src = "def test_a():\n    assert 1\n\ndef test_b():\n    pass\n\ndef helper():\n    pass\n";
        assert_eq!(count_test_functions(src, "test").unwrap(), 2);
        assert_eq!(count_test_functions("", "test").unwrap(), 0);
    }

    #[test]
    fn defs_inside_strings_and_comments_are_ignored() {
        let src = "\"\"\"\ndef test_doc():\n    assert False\n\"\"\"\n# def test_comment():\nx = 'def test_str(): assert 0'\n";
        let scan = scan(src).unwrap();
        assert_eq!(scan.count_test_functions("test"), 0);
        assert!(scan.assertion_lines().is_empty());
    }

    #[test]
    fn assertions_count_only_inside_test_functions() {
        let src = "\
def helper(x):
    assert x > 0
    return x

class TestThing(unittest.TestCase):
    def setUp(self):
        self.assertTrue(True)

    def test_one(self):
        self.assertEqual(helper(1), 1)
        with self.assertRaises(ValueError):
            helper(-1)
        assert helper(2) == 2; assert True

    def test_inline(self): self.assertIsNone(None)
";
        let scan = scan(src).unwrap();
        assert_eq!(scan.count_test_functions("test"), 2);
        assert_eq!(scan.count_assertions("test"), 5);
        assert_eq!(scan.assertion_lines().len(), 6);
    }

    #[test]
    fn multiline_assertion_counts_once_and_bracket_lines_do_not_end_bodies() {
        let src = "\
def test_wrapped():
    self.assertEqual(
  center('ab'),
        '  ab  ',
    )
    assert True
";
        let scan = scan(src).unwrap();
        assert_eq!(scan.count_assertions("test"), 2);
        assert_eq!(scan.functions[0].end_line, 6);
    }

    #[test]
    fn unterminated_triple_quote_reports_its_opening_line() {
        let err = scan("x = 1\ny = '''\nabc\n").unwrap_err();
        assert_eq!(err.line, 2);
    }

    #[test]
    fn loc_excludes_blank_and_whitespace_lines() {
        let doc = "a\n\nb\n   \nc\n\t\nd\ne\n\nf\ng";
        assert_eq!(doc.lines().count(), 11);
        assert_eq!(count_loc(doc), 7);
        assert_eq!(count_loc("# comment\n"), 1);
    }

    #[test]
    fn identifiers_come_from_test_bodies_only() {
        let src = "\
def test_it():
    f = TextFormatter()
    f.setLineWidth(10)  # centerWord mentioned in a comment
    assert f.render('centerTwoWords')

def other():
    f.centerWord('x')
";
        let ids = scan(src).unwrap().test_identifiers("test");
        assert!(ids.contains("setLineWidth"));
        assert!(ids.contains("TextFormatter"));
        assert!(!ids.contains("centerWord"));
        assert!(!ids.contains("centerTwoWords"));
    }
}

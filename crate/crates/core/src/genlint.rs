//! Lexical checks for the ways generated verification scripts go wrong:
//! placeholders instead of data or logic, hard-coded or leaked keys,
//! unchecked t-tests, and API symbols that do not exist.
//!
//! Detectors work line by line over a lightly lexed view of the source
//! (comments stripped, string contents masked), so they run on scripts
//! that would not parse.

use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::extract::GeneratedScript;

pub const EXCERPT_MAX_CHARS: usize = 120;
const REDACTED: &str = "[REDACTED]";
const STAT_CHECK_WINDOW: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Rule {
    EllipsisPlaceholder,
    StubReturn,
    CommentOnlyBlock,
    HardcodedApiKey,
    SecretLeak,
    StatTestPrereq,
    UnknownApiSymbol,
}

impl Rule {
    pub fn as_str(self) -> &'static str {
        match self {
            Rule::EllipsisPlaceholder => "ELLIPSIS_PLACEHOLDER",
            Rule::StubReturn => "STUB_RETURN",
            Rule::CommentOnlyBlock => "COMMENT_ONLY_BLOCK",
            Rule::HardcodedApiKey => "HARDCODED_API_KEY",
            Rule::SecretLeak => "SECRET_LEAK",
            Rule::StatTestPrereq => "STAT_TEST_PREREQ",
            Rule::UnknownApiSymbol => "UNKNOWN_API_SYMBOL",
        }
    }

    pub fn severity(self) -> Severity {
        match self {
            Rule::StatTestPrereq => Severity::Warning,
            Rule::UnknownApiSymbol => Severity::Info,
            _ => Severity::Error,
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
    Info,
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Severity::Error => "error",
            Severity::Warning => "warning",
            Severity::Info => "info",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LintFinding {
    pub rule: Rule,
    pub severity: Severity,
    /// 1-based.
    pub line: usize,
    pub excerpt: String,
}

impl LintFinding {
    pub fn is_error(&self) -> bool {
        self.severity == Severity::Error
    }
}

pub fn has_errors(findings: &[LintFinding]) -> bool {
    findings.iter().any(LintFinding::is_error)
}

/// Symbols observed in generated code that the target libraries never had.
pub const DEFAULT_UNKNOWN_SYMBOLS: &[&str] = &[
    "openai.LanguageModel",
    "from openai import GPT3",
    "davinci-codex",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Linter {
    unknown_symbols: Vec<String>,
}

impl Default for Linter {
    fn default() -> Self {
        Self {
            unknown_symbols: DEFAULT_UNKNOWN_SYMBOLS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl Linter {
    pub fn with_unknown_symbols<I, S>(mut self, extra: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        for symbol in extra {
            let symbol = symbol.into();
            if !symbol.is_empty() && !self.unknown_symbols.contains(&symbol) {
                self.unknown_symbols.push(symbol);
            }
        }
        self
    }

    pub fn lint(&self, script: &GeneratedScript, secret_values: &[String]) -> Vec<LintFinding> {
        self.lint_source(&script.source, secret_values)
    }

    pub fn lint_source(&self, source: &str, secret_values: &[String]) -> Vec<LintFinding> {
        let lines = lex(source);
        let mut findings = Vec::new();
        ellipsis_placeholders(&lines, &mut findings);
        stub_returns(&lines, &mut findings);
        comment_only_blocks(&lines, &mut findings);
        hardcoded_api_keys(&lines, &mut findings);
        secret_leaks(&lines, secret_values, &mut findings);
        stat_test_prereqs(&lines, &mut findings);
        self.unknown_api_symbols(&lines, &mut findings);
        findings.sort_by_key(|f| (f.line, f.rule));
        findings.dedup_by(|a, b| a.line == b.line && a.rule == b.rule);
        findings
    }

    fn unknown_api_symbols(&self, lines: &[LexedLine], out: &mut Vec<LintFinding>) {
        for (idx, line) in lines.iter().enumerate() {
            if self.unknown_symbols.iter().any(|s| line.code.contains(s.as_str())) {
                out.push(finding(Rule::UnknownApiSymbol, idx, line.raw));
            }
        }
    }
}

/// Lints with the default symbol denylist.
pub fn lint(script: &GeneratedScript, secret_values: &[String]) -> Vec<LintFinding> {
    Linter::default().lint(script, secret_values)
}

/// Replaces every occurrence of each non-empty secret.
pub fn redact(text: &str, secret_values: &[String]) -> String {
    secret_values
        .iter()
        .filter(|s| !s.is_empty())
        .fold(text.to_string(), |acc, s| acc.replace(s.as_str(), REDACTED))
}

fn excerpt(text: &str) -> String {
    text.trim().chars().take(EXCERPT_MAX_CHARS).collect()
}

fn finding(rule: Rule, idx: usize, text: &str) -> LintFinding {
    LintFinding {
        rule,
        severity: rule.severity(),
        line: idx + 1,
        excerpt: excerpt(text),
    }
}

#[derive(Debug)]
struct LexedLine<'a> {
    raw: &'a str,
    /// Comment removed; string literals intact.
    code: String,
    /// Comment removed; string contents replaced by spaces, quotes kept.
    masked: String,
    has_comment: bool,
    /// Line starts inside a triple-quoted string.
    starts_in_string: bool,
}

impl LexedLine<'_> {
    fn indent(&self) -> usize {
        self.raw.len() - self.raw.trim_start().len()
    }

    fn is_blank_or_comment(&self) -> bool {
        !self.starts_in_string && self.code.trim().is_empty()
    }
}

#[derive(Clone, Copy)]
enum StringState {
    Code,
    Single(char),
    Triple(char),
}

fn lex(source: &str) -> Vec<LexedLine<'_>> {
    let mut state = StringState::Code;
    let mut out = Vec::new();
    for raw in source.lines() {
        let starts_in_string = matches!(state, StringState::Triple(_));
        let chars: Vec<char> = raw.chars().collect();
        let mut code = String::new();
        let mut masked = String::new();
        let mut has_comment = false;
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            match state {
                StringState::Code => {
                    if c == '#' {
                        has_comment = true;
                        break;
                    }
                    if c == '"' || c == '\'' {
                        if chars.get(i + 1) == Some(&c) && chars.get(i + 2) == Some(&c) {
                            code.extend([c, c, c]);
                            masked.extend([c, c, c]);
                            state = StringState::Triple(c);
                            i += 3;
                            continue;
                        }
                        state = StringState::Single(c);
                    }
                    code.push(c);
                    masked.push(c);
                }
                StringState::Single(q) => {
                    code.push(c);
                    if c == '\\' {
                        if let Some(&next) = chars.get(i + 1) {
                            code.push(next);
                            masked.push_str("  ");
                            i += 2;
                            continue;
                        }
                    }
                    if c == q {
                        masked.push(c);
                        state = StringState::Code;
                    } else {
                        masked.push(' ');
                    }
                }
                StringState::Triple(q) => {
                    if c == q && chars.get(i + 1) == Some(&q) && chars.get(i + 2) == Some(&q) {
                        code.extend([q, q, q]);
                        masked.extend([q, q, q]);
                        state = StringState::Code;
                        i += 3;
                        continue;
                    }
                    code.push(c);
                    masked.push(' ');
                }
            }
            i += 1;
        }
        // Unterminated single-quoted strings end at the line break.
        if matches!(state, StringState::Single(_)) {
            state = StringState::Code;
        }
        out.push(LexedLine {
            raw,
            code,
            masked,
            has_comment,
            starts_in_string,
        });
    }
    out
}

fn re(cell: &'static OnceLock<Regex>, pattern: &str) -> &'static Regex {
    cell.get_or_init(|| Regex::new(pattern).expect("valid lint regex"))
}

/// `...` standing where a value belongs: after `=`, `return`/`yield`, as an
/// argument or element, as a mapping value, or as a bare `[...]` list.
/// Subscripts such as `arr[..., 0]` and `...` statements are left alone.
fn ellipsis_placeholders(lines: &[LexedLine], out: &mut Vec<LintFinding>) {
    for (idx, line) in lines.iter().enumerate() {
        if line.starts_in_string {
            continue;
        }
        let m = line.masked.as_str();
        if m.match_indices("...").any(|(pos, _)| ellipsis_is_value(m, pos)) {
            out.push(finding(Rule::EllipsisPlaceholder, idx, line.raw));
        }
    }
}

fn is_ident_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

fn ellipsis_is_value(masked: &str, pos: usize) -> bool {
    let before = masked[..pos].trim_end();
    let after = masked[pos + 3..].trim_start();
    if !(after.is_empty() || after.starts_with([',', ')', ']', '}'])) {
        return false;
    }
    for keyword in ["return", "yield"] {
        if let Some(head) = before.strip_suffix(keyword) {
            return !head.ends_with(is_ident_char);
        }
    }
    let Some(prev) = before.chars().last() else {
        return false;
    };
    let head = &before[..before.len() - prev.len_utf8()];
    match prev {
        '=' => !head.ends_with(['=', '!', '<', '>']),
        ',' | '(' | '{' => true,
        '[' => !head.ends_with(|c: char| is_ident_char(c) || c == ')' || c == ']'),
        ':' => head.rfind('{') > head.rfind('}'),
        _ => false,
    }
}

/// A function whose only statement returns a string mentioning "placeholder".
fn stub_returns(lines: &[LexedLine], out: &mut Vec<LintFinding>) {
    static DEF: OnceLock<Regex> = OnceLock::new();
    static RETURN_PLACEHOLDER: OnceLock<Regex> = OnceLock::new();
    let def = re(&DEF, r"^\s*(?:async\s+)?def\s+\w+\s*\(.*\)\s*(?:->.*)?:\s*(.*)$");
    let ret = re(
        &RETURN_PLACEHOLDER,
        r#"(?i)^\s*return\s+[rbuf]*("""|'''|"|')[^"']*placeholder[^"']*("""|'''|"|')\s*$"#,
    );
    for (idx, line) in lines.iter().enumerate() {
        if line.starts_in_string {
            continue;
        }
        let Some(caps) = def.captures(&line.code) else {
            continue;
        };
        let inline = caps.get(1).map_or("", |m| m.as_str()).trim();
        if !inline.is_empty() {
            if ret.is_match(inline) {
                out.push(finding(Rule::StubReturn, idx, line.raw));
            }
            continue;
        }
        let body_indent = line.indent();
        let mut statements = Vec::new();
        for (j, body) in lines.iter().enumerate().skip(idx + 1) {
            // blank, comment, or inside a multi-line string
            if body.starts_in_string || body.is_blank_or_comment() {
                continue;
            }
            if body.indent() <= body_indent {
                break;
            }
            let text = body.code.trim();
            if statements.is_empty() && (text.starts_with("\"\"\"") || text.starts_with("'''")) {
                continue;
            }
            statements.push(j);
            if statements.len() > 1 {
                break;
            }
        }
        if let [only] = statements.as_slice() {
            if ret.is_match(&lines[*only].code) {
                out.push(finding(Rule::StubReturn, *only, lines[*only].raw));
            }
        }
    }
}

fn closing_for(open: char) -> char {
    match open {
        '[' => ']',
        '(' => ')',
        _ => '}',
    }
}

/// A bracketed literal opened at line end whose interior holds only
/// comments and blank lines, with at least one comment.
fn comment_only_blocks(lines: &[LexedLine], out: &mut Vec<LintFinding>) {
    for (idx, line) in lines.iter().enumerate() {
        if line.starts_in_string {
            continue;
        }
        let Some(open) = line.masked.trim_end().chars().last() else {
            continue;
        };
        if !matches!(open, '[' | '(' | '{') {
            continue;
        }
        let close = closing_for(open);
        let mut saw_comment = false;
        for inner in &lines[idx + 1..] {
            let code = inner.masked.trim();
            if inner.starts_in_string {
                break;
            }
            if code.is_empty() {
                saw_comment |= inner.has_comment;
                continue;
            }
            if code.starts_with(close) && saw_comment {
                out.push(finding(Rule::CommentOnlyBlock, idx, line.raw));
            }
            break;
        }
    }
}

fn looks_like_placeholder(value: &str) -> bool {
    let v = value.to_ascii_lowercase();
    [
        "your", "api-key", "api_key", "apikey", "xxx", "<", "insert", "here", "replace", "key",
        "secret", "token", "...",
    ]
    .iter()
    .any(|p| v.contains(p))
}

/// A quoted literal assigned to a name (attribute, variable, keyword
/// argument or subscript key) containing `api_key`.
fn hardcoded_api_keys(lines: &[LexedLine], out: &mut Vec<LintFinding>) {
    static ASSIGN: OnceLock<Regex> = OnceLock::new();
    let assign = re(
        &ASSIGN,
        r#"(?i)(?:[\w.]*api_?key\w*|\[\s*["'][\w.-]*api_?key[\w.-]*["']\s*\])\s*(?::\s*\w+\s*)?=\s*[rbuf]*("|')([^"']*)("|')"#,
    );
    for (idx, line) in lines.iter().enumerate() {
        if line.starts_in_string {
            continue;
        }
        let Some(caps) = assign.captures(&line.code) else {
            continue;
        };
        let value = caps.get(2).map_or("", |m| m.as_str());
        if value.is_empty() {
            continue;
        }
        let text = if looks_like_placeholder(value) {
            line.raw.to_string()
        } else {
            line.raw.replace(value, "***")
        };
        out.push(finding(Rule::HardcodedApiKey, idx, &text));
    }
}

fn secret_leaks(lines: &[LexedLine], secret_values: &[String], out: &mut Vec<LintFinding>) {
    let secrets: Vec<&String> = secret_values.iter().filter(|s| !s.is_empty()).collect();
    if secrets.is_empty() {
        return;
    }
    for (idx, line) in lines.iter().enumerate() {
        if secrets.iter().any(|s| line.raw.contains(s.as_str())) {
            let text = redact(line.raw, secret_values);
            out.push(finding(Rule::SecretLeak, idx, &text));
        }
    }
}

/// Independent-samples t-test with default two-sidedness and no
/// normality or variance check within a window of lines.
fn stat_test_prereqs(lines: &[LexedLine], out: &mut Vec<LintFinding>) {
    static CHECKS: OnceLock<Regex> = OnceLock::new();
    let checks = re(
        &CHECKS,
        r"\b(?:shapiro|normaltest|jarque_bera|anderson|kstest|levene|bartlett|fligner|lilliefors)\s*\(",
    );
    for (idx, line) in lines.iter().enumerate() {
        if line.starts_in_string || !line.code.contains("ttest_ind(") {
            continue;
        }
        let call_text: String = lines[idx..lines.len().min(idx + 4)]
            .iter()
            .map(|l| l.code.as_str())
            .collect::<Vec<_>>()
            .join(" ");
        let call = call_text
            .split_once("ttest_ind(")
            .map_or("", |(_, rest)| rest.split(')').next().unwrap_or(rest));
        if call.contains("alternative") {
            continue;
        }
        let lo = idx.saturating_sub(STAT_CHECK_WINDOW);
        let hi = lines.len().min(idx + STAT_CHECK_WINDOW + 1);
        if lines[lo..hi].iter().any(|l| checks.is_match(&l.code)) {
            continue;
        }
        out.push(finding(Rule::StatTestPrereq, idx, line.raw));
    }
}

//! Read-only SQL validation.
//!
//! A lossless tokenizer feeds a statement splitter and a head-keyword
//! classifier. A string is allowed only when it holds exactly one statement
//! and that statement is a `SELECT` (or a `WITH` whose main statement is a
//! `SELECT`). Nothing here inspects substrings: the word `delete` inside a
//! literal, a comment or a column name never affects the verdict.
//!
//! This is the first of two read-only layers; the local backend also opens
//! its database in engine-level read-only mode.

use std::fmt;

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenKind {
    Keyword,
    Identifier,
    StringLiteral,
    Number,
    Operator,
    Punctuation,
    Comment,
    Whitespace,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SqlToken {
    pub kind: TokenKind,
    pub text: String,
    /// Character (not byte) index of the token start.
    pub offset: usize,
    /// False for a string literal, quoted identifier or block comment that
    /// runs off the end of the input.
    pub complete: bool,
}

impl SqlToken {
    pub fn is_trivia(&self) -> bool {
        matches!(self.kind, TokenKind::Whitespace | TokenKind::Comment)
    }

    pub fn is_keyword(&self, word: &str) -> bool {
        self.kind == TokenKind::Keyword && self.text.eq_ignore_ascii_case(word)
    }

    pub fn is_punct(&self, p: &str) -> bool {
        self.kind == TokenKind::Punctuation && self.text == p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictReason {
    Ok,
    Empty,
    MultipleStatements,
    WriteVerb,
    DdlVerb,
    AdminVerb,
    NotASelect,
    Unparseable,
}

impl VerdictReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            VerdictReason::Ok => "ok",
            VerdictReason::Empty => "empty",
            VerdictReason::MultipleStatements => "multiple_statements",
            VerdictReason::WriteVerb => "write_verb",
            VerdictReason::DdlVerb => "ddl_verb",
            VerdictReason::AdminVerb => "admin_verb",
            VerdictReason::NotASelect => "not_a_select",
            VerdictReason::Unparseable => "unparseable",
        }
    }
}

impl fmt::Display for VerdictReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationVerdict {
    pub allowed: bool,
    pub reason: VerdictReason,
    /// Offending token text and offset; empty when allowed.
    pub detail: String,
}

impl ValidationVerdict {
    fn ok() -> Self {
        Self { allowed: true, reason: VerdictReason::Ok, detail: String::new() }
    }

    fn blocked(reason: VerdictReason, detail: impl Into<String>) -> Self {
        debug_assert!(reason != VerdictReason::Ok);
        Self { allowed: false, reason, detail: detail.into() }
    }

    /// Human-readable explanation used by the tools and the CLI.
    pub fn message(&self) -> String {
        if self.allowed {
            return "query allowed".to_string();
        }
        let what = match self.reason {
            VerdictReason::Ok => unreachable!(),
            VerdictReason::Empty => "no SQL statement found",
            VerdictReason::MultipleStatements => "only a single statement is permitted",
            VerdictReason::WriteVerb => "data modification is not permitted on this read-only database",
            VerdictReason::DdlVerb => "schema changes are not permitted on this read-only database",
            VerdictReason::AdminVerb => "administrative statements are not permitted on this read-only database",
            VerdictReason::NotASelect => {
                "only SELECT queries (optionally with WITH) are permitted on this read-only database"
            }
            VerdictReason::Unparseable => "the statement could not be parsed",
        };
        if self.detail.is_empty() {
            format!("Query blocked ({}): {}", self.reason, what)
        } else {
            format!("Query blocked ({}): {} [{}]", self.reason, what, self.detail)
        }
    }
}

const KEYWORDS: &[&str] = &[
    "ABORT",
    "ACTION",
    "ADD",
    "AFTER",
    "ALL",
    "ALTER",
    "ALWAYS",
    "ANALYZE",
    "AND",
    "AS",
    "ASC",
    "ATTACH",
    "AUTOINCREMENT",
    "BEFORE",
    "BEGIN",
    "BETWEEN",
    "BY",
    "CASCADE",
    "CASE",
    "CAST",
    "CHECK",
    "COLLATE",
    "COLUMN",
    "COMMIT",
    "CONFLICT",
    "CONSTRAINT",
    "CREATE",
    "CROSS",
    "CURRENT",
    "CURRENT_DATE",
    "CURRENT_TIME",
    "CURRENT_TIMESTAMP",
    "DATABASE",
    "DEFAULT",
    "DEFERRABLE",
    "DEFERRED",
    "DELETE",
    "DESC",
    "DETACH",
    "DISTINCT",
    "DO",
    "DROP",
    "EACH",
    "ELSE",
    "END",
    "ESCAPE",
    "EXCEPT",
    "EXCLUDE",
    "EXCLUSIVE",
    "EXISTS",
    "EXPLAIN",
    "FAIL",
    "FILTER",
    "FIRST",
    "FOLLOWING",
    "FOR",
    "FOREIGN",
    "FROM",
    "FULL",
    "GENERATED",
    "GLOB",
    "GRANT",
    "GROUP",
    "GROUPS",
    "HAVING",
    "IF",
    "IGNORE",
    "IMMEDIATE",
    "IN",
    "INDEX",
    "INDEXED",
    "INITIALLY",
    "INNER",
    "INSERT",
    "INSTEAD",
    "INTERSECT",
    "INTO",
    "IS",
    "ISNULL",
    "JOIN",
    "KEY",
    "LAST",
    "LEFT",
    "LIKE",
    "LIMIT",
    "MATCH",
    "MATERIALIZED",
    "MERGE",
    "NATURAL",
    "NO",
    "NOT",
    "NOTHING",
    "NOTNULL",
    "NULL",
    "NULLS",
    "OF",
    "OFFSET",
    "ON",
    "OR",
    "ORDER",
    "OTHERS",
    "OUTER",
    "OVER",
    "PARTITION",
    "PLAN",
    "PRAGMA",
    "PRECEDING",
    "PRIMARY",
    "QUERY",
    "RAISE",
    "RANGE",
    "RECURSIVE",
    "REFERENCES",
    "REGEXP",
    "REINDEX",
    "RELEASE",
    "RENAME",
    "REPLACE",
    "RESTRICT",
    "RETURNING",
    "REVOKE",
    "RIGHT",
    "ROLLBACK",
    "ROW",
    "ROWS",
    "SAVEPOINT",
    "SELECT",
    "SET",
    "TABLE",
    "TEMP",
    "TEMPORARY",
    "THEN",
    "TIES",
    "TO",
    "TRANSACTION",
    "TRIGGER",
    "TRUNCATE",
    "UNBOUNDED",
    "UNION",
    "UNIQUE",
    "UPDATE",
    "UPSERT",
    "USING",
    "VACUUM",
    "VALUES",
    "VIEW",
    "VIRTUAL",
    "WHEN",
    "WHERE",
    "WINDOW",
    "WITH",
    "WITHOUT",
];

fn is_keyword(word: &str) -> bool {
    let upper = word.to_ascii_uppercase();
    KEYWORDS.binary_search(&upper.as_str()).is_ok()
}

const WRITE_VERBS: &[&str] = &["INSERT", "UPDATE", "DELETE", "REPLACE", "MERGE", "UPSERT"];
const DDL_VERBS: &[&str] = &["CREATE", "DROP", "ALTER", "TRUNCATE"];
const ADMIN_VERBS: &[&str] = &[
    "ATTACH",
    "DETACH",
    "PRAGMA",
    "VACUUM",
    "REINDEX",
    "ANALYZE",
    "GRANT",
    "REVOKE",
    "BEGIN",
    "COMMIT",
    "ROLLBACK",
    "SAVEPOINT",
    "RELEASE",
    "END",
];

/// Lossless tokenization. Never fails; malformed constructs come back as
/// tokens with `complete == false`.
pub fn tokenize(sql: &str) -> Vec<SqlToken> {
    Tokenizer::new(sql).run()
}

struct Tokenizer<'a> {
    src: &'a str,
    chars: Vec<(usize, char)>,
    pos: usize,
    out: Vec<SqlToken>,
}

impl<'a> Tokenizer<'a> {
    fn new(src: &'a str) -> Self {
        Self { src, chars: src.char_indices().collect(), pos: 0, out: Vec::new() }
    }

    fn peek(&self, ahead: usize) -> Option<char> {
        self.chars.get(self.pos + ahead).map(|&(_, c)| c)
    }

    fn byte_at(&self, char_pos: usize) -> usize {
        self.chars.get(char_pos).map_or(self.src.len(), |&(b, _)| b)
    }

    fn push(&mut self, kind: TokenKind, start: usize, complete: bool) {
        let text = self.src[self.byte_at(start)..self.byte_at(self.pos)].to_string();
        self.out.push(SqlToken { kind, text, offset: start, complete });
    }

    /// Consumes a quoted run starting at the opening quote. A doubled closing
    /// quote is an escaped quote character. Returns whether it terminated.
    fn quoted(&mut self, close: char) -> bool {
        self.pos += 1;
        while let Some(c) = self.peek(0) {
            self.pos += 1;
            if c == close {
                if close != ']' && self.peek(0) == Some(close) {
                    self.pos += 1;
                    continue;
                }
                return true;
            }
        }
        false
    }

    fn run(mut self) -> Vec<SqlToken> {
        while let Some(c) = self.peek(0) {
            let start = self.pos;
            match c {
                c if c.is_whitespace() => {
                    while self.peek(0).is_some_and(char::is_whitespace) {
                        self.pos += 1;
                    }
                    self.push(TokenKind::Whitespace, start, true);
                }
                '-' if self.peek(1) == Some('-') => {
                    while self.peek(0).is_some_and(|c| c != '\n') {
                        self.pos += 1;
                    }
                    self.push(TokenKind::Comment, start, true);
                }
                '/' if self.peek(1) == Some('*') => {
                    self.pos += 2;
                    let mut done = false;
                    while let Some(c) = self.peek(0) {
                        if c == '*' && self.peek(1) == Some('/') {
                            self.pos += 2;
                            done = true;
                            break;
                        }
                        self.pos += 1;
                    }
                    self.push(TokenKind::Comment, start, done);
                }
                '\'' => {
                    let done = self.quoted('\'');
                    self.push(TokenKind::StringLiteral, start, done);
                }
                'x' | 'X' if self.peek(1) == Some('\'') => {
                    self.pos += 1;
                    let done = self.quoted('\'');
                    self.push(TokenKind::StringLiteral, start, done);
                }
                '"' | '`' => {
                    let done = self.quoted(c);
                    self.push(TokenKind::Identifier, start, done);
                }
                '[' => {
                    let done = self.quoted(']');
                    self.push(TokenKind::Identifier, start, done);
                }
                c if c.is_ascii_digit() || (c == '.' && self.peek(1).is_some_and(|d| d.is_ascii_digit())) => {
                    self.number();
                    self.push(TokenKind::Number, start, true);
                }
                c if c.is_alphabetic() || c == '_' => {
                    while self.peek(0).is_some_and(|c| c.is_alphanumeric() || c == '_' || c == '$') {
                        self.pos += 1;
                    }
                    let word = &self.src[self.byte_at(start)..self.byte_at(self.pos)];
                    let kind = if is_keyword(word) { TokenKind::Keyword } else { TokenKind::Identifier };
                    self.push(kind, start, true);
                }
                '(' | ')' | ',' | ';' | '.' => {
                    self.pos += 1;
                    self.push(TokenKind::Punctuation, start, true);
                }
                _ => {
                    self.pos += 1;
                    if let Some(next) = self.peek(0) {
                        let pair = [c, next];
                        if matches!(
                            pair,
                            ['<', '=']
                                | ['>', '=']
                                | ['<', '>']
                                | ['!', '=']
                                | ['=', '=']
                                | ['|', '|']
                                | ['<', '<']
                                | ['>', '>']
                                | ['-', '>']
                        ) {
                            self.pos += 1;
                            if pair == ['-', '>'] && self.peek(0) == Some('>') {
                                self.pos += 1;
                            }
                        }
                    }
                    self.push(TokenKind::Operator, start, true);
                }
            }
        }
        self.out
    }

    fn number(&mut self) {
        if self.peek(0) == Some('0') && matches!(self.peek(1), Some('x' | 'X')) {
            self.pos += 2;
            while self.peek(0).is_some_and(|c| c.is_ascii_hexdigit()) {
                self.pos += 1;
            }
            return;
        }
        while self.peek(0).is_some_and(|c| c.is_ascii_digit() || c == '_') {
            self.pos += 1;
        }
        if self.peek(0) == Some('.') {
            self.pos += 1;
            while self.peek(0).is_some_and(|c| c.is_ascii_digit()) {
                self.pos += 1;
            }
        }
        if matches!(self.peek(0), Some('e' | 'E')) {
            let signed = matches!(self.peek(1), Some('+' | '-'));
            let digit_at = if signed { 2 } else { 1 };
            if self.peek(digit_at).is_some_and(|c| c.is_ascii_digit()) {
                self.pos += digit_at;
                while self.peek(0).is_some_and(|c| c.is_ascii_digit()) {
                    self.pos += 1;
                }
            }
        }
    }
}

/// Splits on top-level semicolons. Literals and comments are single tokens,
/// so a semicolon inside them never splits. Segments holding only trivia
/// are dropped; the separators themselves are not included.
pub fn split_statements(tokens: &[SqlToken]) -> Vec<Vec<SqlToken>> {
    let mut out = Vec::new();
    let mut current: Vec<SqlToken> = Vec::new();
    for tok in tokens {
        if tok.is_punct(";") {
            if current.iter().any(|t| !t.is_trivia()) {
                out.push(std::mem::take(&mut current));
            } else {
                current.clear();
            }
        } else {
            current.push(tok.clone());
        }
    }
    if current.iter().any(|t| !t.is_trivia()) {
        out.push(current);
    }
    out
}

fn describe(tok: &SqlToken) -> String {
    format!("{:?} at offset {}", tok.text, tok.offset)
}

fn verb_reason(word: &str) -> Option<VerdictReason> {
    let upper = word.to_ascii_uppercase();
    let upper = upper.as_str();
    if WRITE_VERBS.contains(&upper) {
        Some(VerdictReason::WriteVerb)
    } else if DDL_VERBS.contains(&upper) {
        Some(VerdictReason::DdlVerb)
    } else if ADMIN_VERBS.contains(&upper) {
        Some(VerdictReason::AdminVerb)
    } else {
        None
    }
}

/// Classifies one statement by its head keyword. Returns the reason and,
/// when blocked, a description of the deciding token.
pub fn classify_statement(tokens: &[SqlToken]) -> (VerdictReason, String) {
    if let Some(bad) = tokens.iter().find(|t| !t.complete) {
        return (VerdictReason::Unparseable, format!("unterminated {}", describe(bad)));
    }
    let mut depth: i64 = 0;
    for tok in tokens {
        if tok.is_punct("(") {
            depth += 1;
        } else if tok.is_punct(")") {
            depth -= 1;
            if depth < 0 {
                return (VerdictReason::Unparseable, format!("unbalanced {}", describe(tok)));
            }
        }
    }
    if depth != 0 {
        return (VerdictReason::Unparseable, "unbalanced parentheses".to_string());
    }

    let significant: Vec<&SqlToken> = tokens.iter().filter(|t| !t.is_trivia()).collect();
    let Some(head) = significant.first() else {
        return (VerdictReason::Empty, String::new());
    };

    if head.is_keyword("SELECT") {
        return (VerdictReason::Ok, String::new());
    }
    if head.is_keyword("WITH") {
        return classify_with_body(&significant[1..]);
    }
    if matches!(head.kind, TokenKind::Keyword | TokenKind::Identifier) {
        if let Some(reason) = verb_reason(&head.text) {
            return (reason, describe(head));
        }
    }
    (VerdictReason::NotASelect, describe(head))
}

/// After `WITH`, the first top-level statement keyword following the CTE
/// definitions decides. CTE bodies are parenthesized, so at depth zero only
/// names, column lists, `AS`, `[NOT] MATERIALIZED`, `RECURSIVE` and commas
/// appear before the main statement head.
fn classify_with_body(rest: &[&SqlToken]) -> (VerdictReason, String) {
    let mut depth = 0i64;
    for tok in rest {
        if tok.is_punct("(") {
            depth += 1;
            continue;
        }
        if tok.is_punct(")") {
            depth -= 1;
            continue;
        }
        if depth != 0 || tok.kind != TokenKind::Keyword {
            continue;
        }
        if tok.is_keyword("SELECT") {
            return (VerdictReason::Ok, String::new());
        }
        if let Some(reason) = verb_reason(&tok.text) {
            return (reason, describe(tok));
        }
        if tok.is_keyword("VALUES") {
            return (VerdictReason::NotASelect, describe(tok));
        }
    }
    (VerdictReason::NotASelect, "WITH without a main SELECT".to_string())
}

/// Decides whether `sql` is a single read-only query. Pure and total.
pub fn validate(sql: &str) -> ValidationVerdict {
    let tokens = tokenize(sql);
    if let Some(bad) = tokens.iter().find(|t| !t.complete) {
        return ValidationVerdict::blocked(VerdictReason::Unparseable, format!("unterminated {}", describe(bad)));
    }
    let statements = split_statements(&tokens);
    match statements.len() {
        0 => ValidationVerdict::blocked(VerdictReason::Empty, ""),
        1 => match classify_statement(&statements[0]) {
            (VerdictReason::Ok, _) => ValidationVerdict::ok(),
            (reason, detail) => ValidationVerdict::blocked(reason, detail),
        },
        n => {
            let second = statements[1].iter().find(|t| !t.is_trivia()).map(describe);
            ValidationVerdict::blocked(
                VerdictReason::MultipleStatements,
                format!("{n} statements; second begins with {}", second.unwrap_or_default()),
            )
        }
    }
}

/// Validates many strings, in parallel when the `parallel` feature is on.
pub fn validate_batch(sqls: &[String]) -> Vec<ValidationVerdict> {
    crate::par::map(sqls, |s| validate(s))
}

//! The `.tm` textual format: lexer, parser, and canonical formatter.
//!
//! Grammar (items appear in any order at the top level):
//!
//! ```text
//! model      := item*
//! item       := machine | flow | trigger | event | chronology
//! machine    := "machine" IDENT "{" (machine | stage_decl)* "}"
//! stage_decl := "stage" KIND IDENT? ("@" INT)? ";"
//! flow       := "flow" LABEL ":" stage_ref ("->" stage_ref)+ ";"
//! trigger    := "trigger" (LABEL ":")? stage_ref "~>" stage_ref ";"
//! stage_ref  := IDENT ("." IDENT)* "." KIND ("[" IDENT "]")?
//! event      := "event" IDENT "{" field* "}"
//! field      := "region" ":" stage_ref ("," stage_ref)* ";"
//!             | "time" ":" INT ";" | "desc" ":" STRING ";"
//! chronology := "chronology" "{" (IDENT "->" IDENT ";")* "}"
//! ```
//!
//! `KIND` is one of `create`, `process`, `release`, `transfer`, `receive`.
//! `LABEL` is an `IDENT` or a double-quoted `STRING` (escapes: `\"`,
//! `\\`, `\n`, `\t`). `#` starts a comment running to end of line. A
//! multi-hop flow desugars into one arc per consecutive reference pair. A
//! stage referenced by a flow is declared implicitly in its machine;
//! trigger and region references must hit stages that exist by then.
//!
//! Parsing never panics: errors become diagnostics with source spans and
//! the parser resynchronizes at `;` or `}`. [`parse`] also runs the full
//! static and dynamic validators over the result, mapping their findings
//! back to source spans; the parsed document is returned if and only if
//! no error-severity diagnostic was produced.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use tm_core::event::{validate_dynamic, Chronology, TMEvent};
use tm_core::validate::validate;
use tm_core::{
    has_errors, DiagCode, Diagnostic, Site, StageKind, StageRef, TMModel, TMModelBuilder,
};

/// A half-open slice of the source text, 1-based.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SourceSpan {
    pub file: String,
    pub line: u32,
    pub column: u32,
    pub length: u32,
}

/// A validator or parser finding, tied back to the text when possible.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpannedDiagnostic {
    pub diagnostic: Diagnostic,
    pub span: Option<SourceSpan>,
}

impl SpannedDiagnostic {
    /// The one-line rendering used by the command line:
    /// `severity CODE file:line:col message`.
    pub fn render(&self, fallback_file: &str) -> String {
        let (file, line, column) = match &self.span {
            Some(s) => (s.file.as_str(), s.line, s.column),
            None => (fallback_file, 1, 1),
        };
        format!(
            "{} {} {}:{}:{} {}",
            self.diagnostic.severity,
            self.diagnostic.code.as_str(),
            file,
            line,
            column,
            self.diagnostic.message
        )
    }
}

/// Everything one `.tm` file declares: the model plus its events and
/// chronology.
#[derive(Clone, Debug)]
pub struct Document {
    pub model: TMModel,
    pub events: Vec<TMEvent>,
    pub chronology: Chronology,
}

/// Equality over everything the textual form can express; metadata and
/// machine arena layout are ignored.
pub fn document_equal(a: &Document, b: &Document) -> bool {
    tm_core::structurally_equal(&a.model, &b.model)
        && a.events == b.events
        && a.chronology == b.chronology
}

/// The outcome of [`parse`]: the document if and only if nothing reached
/// error severity, and every finding either way.
pub struct ParseResult {
    pub document: Option<Document>,
    pub diagnostics: Vec<SpannedDiagnostic>,
    spans: SpanMap,
}

impl ParseResult {
    pub fn has_errors(&self) -> bool {
        self.diagnostics
            .iter()
            .any(|d| d.diagnostic.severity == tm_core::Severity::Error)
    }

    /// Maps a diagnostic site from a later pipeline stage (for example a
    /// simulation warning) back to this file's source.
    pub fn span_for(&self, site: &Site) -> Option<SourceSpan> {
        self.spans.lookup(site)
    }
}

// ---------------------------------------------------------------------------
// Lexer
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Int(u64),
    Str(String),
    LBrace,
    RBrace,
    LBracket,
    RBracket,
    Semi,
    Colon,
    Comma,
    Dot,
    At,
    Arrow,
    TriggerArrow,
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Int(n) => format!("`{n}`"),
            Tok::Str(_) => "string".into(),
            Tok::LBrace => "`{`".into(),
            Tok::RBrace => "`}`".into(),
            Tok::LBracket => "`[`".into(),
            Tok::RBracket => "`]`".into(),
            Tok::Semi => "`;`".into(),
            Tok::Colon => "`:`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Dot => "`.`".into(),
            Tok::At => "`@`".into(),
            Tok::Arrow => "`->`".into(),
            Tok::TriggerArrow => "`~>`".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

/// Line/column/length of a token, 1-based, counted in characters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Pos {
    line: u32,
    column: u32,
    length: u32,
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    pos: Pos,
}

struct Lexer<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
    line: u32,
    column: u32,
}

impl<'a> Lexer<'a> {
    fn new(text: &'a str) -> Lexer<'a> {
        Lexer {
            chars: text.chars().peekable(),
            line: 1,
            column: 1,
        }
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.next()?;
        if c == '\n' {
            self.line += 1;
            self.column = 1;
        } else {
            self.column += 1;
        }
        Some(c)
    }

    fn here(&self, length: u32) -> Pos {
        Pos {
            line: self.line,
            column: self.column,
            length,
        }
    }

    fn run(mut self, out_diags: &mut Vec<(Diagnostic, Pos)>) -> Vec<Token> {
        let mut out = Vec::new();
        while let Some(&c) = self.chars.peek() {
            if c == '#' {
                while let Some(&c) = self.chars.peek() {
                    if c == '\n' {
                        break;
                    }
                    self.bump();
                }
                continue;
            }
            if c.is_whitespace() {
                self.bump();
                continue;
            }
            let pos = self.here(1);
            let simple = match c {
                '{' => Some(Tok::LBrace),
                '}' => Some(Tok::RBrace),
                '[' => Some(Tok::LBracket),
                ']' => Some(Tok::RBracket),
                ';' => Some(Tok::Semi),
                ':' => Some(Tok::Colon),
                ',' => Some(Tok::Comma),
                '.' => Some(Tok::Dot),
                '@' => Some(Tok::At),
                _ => None,
            };
            if let Some(tok) = simple {
                self.bump();
                out.push(Token { tok, pos });
                continue;
            }
            match c {
                '-' | '~' => {
                    self.bump();
                    if self.chars.peek() == Some(&'>') {
                        self.bump();
                        let tok = if c == '-' {
                            Tok::Arrow
                        } else {
                            Tok::TriggerArrow
                        };
                        out.push(Token {
                            tok,
                            pos: Pos { length: 2, ..pos },
                        });
                    } else {
                        out_diags.push((
                            Diagnostic::error(
                                DiagCode::Syntax,
                                Site::Model,
                                format!("stray `{c}`; expected `{c}>`"),
                            ),
                            pos,
                        ));
                    }
                }
                '"' => {
                    self.bump();
                    let mut value = String::new();
                    let mut closed = false;
                    let mut length = 1;
                    while let Some(&c) = self.chars.peek() {
                        if c == '\n' {
                            break;
                        }
                        self.bump();
                        length += 1;
                        match c {
                            '"' => {
                                closed = true;
                                break;
                            }
                            '\\' => match self.bump() {
                                Some('"') => {
                                    length += 1;
                                    value.push('"');
                                }
                                Some('\\') => {
                                    length += 1;
                                    value.push('\\');
                                }
                                Some('n') => {
                                    length += 1;
                                    value.push('\n');
                                }
                                Some('t') => {
                                    length += 1;
                                    value.push('\t');
                                }
                                Some(other) => {
                                    length += 1;
                                    out_diags.push((
                                        Diagnostic::error(
                                            DiagCode::Syntax,
                                            Site::Model,
                                            format!("unknown escape `\\{other}` in string"),
                                        ),
                                        pos,
                                    ));
                                    value.push(other);
                                }
                                None => break,
                            },
                            other => value.push(other),
                        }
                    }
                    if !closed {
                        out_diags.push((
                            Diagnostic::error(
                                DiagCode::Syntax,
                                Site::Model,
                                "unterminated string".into(),
                            ),
                            pos,
                        ));
                    }
                    out.push(Token {
                        tok: Tok::Str(value),
                        pos: Pos { length, ..pos },
                    });
                }
                c if c.is_ascii_alphabetic() => {
                    let mut word = String::new();
                    while let Some(&c) = self.chars.peek() {
                        if c.is_ascii_alphanumeric() || c == '_' {
                            word.push(c);
                            self.bump();
                        } else {
                            break;
                        }
                    }
                    out.push(Token {
                        tok: Tok::Ident(word.clone()),
                        pos: Pos {
                            length: word.chars().count() as u32,
                            ..pos
                        },
                    });
                }
                c if c.is_ascii_digit() => {
                    let mut digits = String::new();
                    while let Some(&c) = self.chars.peek() {
                        if c.is_ascii_digit() {
                            digits.push(c);
                            self.bump();
                        } else {
                            break;
                        }
                    }
                    let value = digits.parse::<u64>().unwrap_or_else(|_| {
                        out_diags.push((
                            Diagnostic::error(
                                DiagCode::Syntax,
                                Site::Model,
                                format!("number `{digits}` is too large"),
                            ),
                            pos,
                        ));
                        0
                    });
                    out.push(Token {
                        tok: Tok::Int(value),
                        pos: Pos {
                            length: digits.len() as u32,
                            ..pos
                        },
                    });
                }
                other => {
                    self.bump();
                    out_diags.push((
                        Diagnostic::error(
                            DiagCode::Syntax,
                            Site::Model,
                            format!("unexpected character `{other}`"),
                        ),
                        pos,
                    ));
                }
            }
        }
        out.push(Token {
            tok: Tok::Eof,
            pos: self.here(0),
        });
        out
    }
}

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

/// A textual stage reference before resolution.
#[derive(Clone, Debug)]
struct RawRef {
    /// Machine path as written; the last element is the machine itself.
    path: Vec<String>,
    kind: StageKind,
    disambiguator: Option<String>,
    pos: Pos,
}

impl RawRef {
    fn stage_ref(&self) -> StageRef {
        StageRef::new(
            self.path.last().expect("non-empty path"),
            self.kind,
            self.disambiguator.as_deref(),
        )
    }
}

struct RawFlow {
    thing: String,
    refs: Vec<RawRef>,
    /// One `->` position per consecutive reference pair.
    arrows: Vec<Pos>,
}

struct RawTrigger {
    label: Option<String>,
    from: RawRef,
    to: RawRef,
    arrow: Pos,
}

struct RawEvent {
    id: String,
    id_pos: Pos,
    region: Vec<RawRef>,
    time: Option<u64>,
    desc: Option<String>,
}

#[derive(Default)]
struct SpanMap {
    file: String,
    arcs: Vec<Pos>,
    triggers: Vec<Pos>,
    stages: BTreeMap<StageRef, Pos>,
    machines: BTreeMap<String, Pos>,
    events: BTreeMap<String, Pos>,
    chron_edges: Vec<Pos>,
}

impl SpanMap {
    fn span(&self, pos: Pos) -> SourceSpan {
        SourceSpan {
            file: self.file.clone(),
            line: pos.line,
            column: pos.column,
            length: pos.length,
        }
    }

    fn lookup(&self, site: &Site) -> Option<SourceSpan> {
        let pos = match site {
            Site::Flow(i) => self.arcs.get(*i).copied(),
            Site::Trigger(i) => self.triggers.get(*i).copied(),
            Site::Stage(r) => self.stages.get(r).copied(),
            Site::Machine(id) => self.machines.get(id).copied(),
            Site::Event(id) => self.events.get(id).copied(),
            Site::ChronEdge(i) => self.chron_edges.get(*i).copied(),
            Site::Model => None,
        };
        pos.map(|p| self.span(p))
    }
}

struct Parser {
    tokens: Vec<Token>,
    at: usize,
    diags: Vec<(Diagnostic, Option<Pos>)>,
    builder: TMModelBuilder,
    /// Machine id -> parent id, for path checking.
    parents: BTreeMap<String, Option<String>>,
    known_stages: BTreeSet<StageRef>,
    flows: Vec<RawFlow>,
    triggers: Vec<RawTrigger>,
    events: Vec<RawEvent>,
    chron_edges: Vec<(String, String, Pos)>,
    spans: SpanMap,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.tokens[self.at].tok
    }

    /// One token further; saturates at the trailing Eof.
    fn peek2(&self) -> &Tok {
        let i = (self.at + 1).min(self.tokens.len() - 1);
        &self.tokens[i].tok
    }

    fn pos(&self) -> Pos {
        self.tokens[self.at].pos
    }

    fn next(&mut self) -> Token {
        let t = self.tokens[self.at].clone();
        if self.at + 1 < self.tokens.len() {
            self.at += 1;
        }
        t
    }

    fn error_here(&mut self, message: String) {
        let pos = self.pos();
        self.diags.push((
            Diagnostic::error(DiagCode::Syntax, Site::Model, message),
            Some(pos),
        ));
    }

    /// Skips ahead to the next `;` (consumed) or `}` (left in place) so
    /// one mistake does not drown the rest of the file.
    fn sync(&mut self) {
        loop {
            match self.peek() {
                Tok::Semi => {
                    self.next();
                    return;
                }
                Tok::RBrace | Tok::Eof => return,
                _ => {
                    self.next();
                }
            }
        }
    }

    fn expect_semi(&mut self) -> bool {
        if matches!(self.peek(), Tok::Semi) {
            self.next();
            true
        } else {
            self.error_here(format!("expected `;`, found {}", self.peek().describe()));
            self.sync();
            false
        }
    }

    fn expect_ident(&mut self, what: &str) -> Option<(String, Pos)> {
        if let Tok::Ident(s) = self.peek() {
            let s = s.clone();
            let pos = self.pos();
            self.next();
            Some((s, pos))
        } else {
            self.error_here(format!("expected {what}, found {}", self.peek().describe()));
            None
        }
    }

    // -- statements ---------------------------------------------------------

    fn top_level(&mut self) {
        loop {
            match self.peek().clone() {
                Tok::Eof => return,
                Tok::Ident(word) => match word.as_str() {
                    "machine" => {
                        self.next();
                        self.machine(None);
                    }
                    "flow" => {
                        self.next();
                        self.flow();
                    }
                    "trigger" => {
                        self.next();
                        self.trigger();
                    }
                    "event" => {
                        self.next();
                        self.event();
                    }
                    "chronology" => {
                        self.next();
                        self.chronology();
                    }
                    _ => {
                        self.error_here(format!(
                            "expected `machine`, `flow`, `trigger`, `event`, or \
                             `chronology`, found `{word}`"
                        ));
                        self.next();
                        self.sync();
                    }
                },
                other => {
                    self.error_here(format!(
                        "expected a top-level item, found {}",
                        other.describe()
                    ));
                    self.next();
                    self.sync();
                }
            }
        }
    }

    fn machine(&mut self, parent: Option<&str>) {
        let Some((id, id_pos)) = self.expect_ident("a machine name") else {
            self.sync();
            return;
        };
        if self.parents.contains_key(&id) {
            self.diags.push((
                Diagnostic::error(
                    DiagCode::DuplicateMachine,
                    Site::Machine(id.clone()),
                    format!("machine `{id}` is already declared"),
                ),
                Some(id_pos),
            ));
            // The body still parses; its stages attach to the original.
        } else {
            self.parents.insert(id.clone(), parent.map(str::to_owned));
            self.spans.machines.insert(id.clone(), id_pos);
            self.builder
                .add_machine(parent, &id)
                .expect("parent exists and id is fresh");
        }
        if !matches!(self.peek(), Tok::LBrace) {
            self.error_here(format!("expected `{{`, found {}", self.peek().describe()));
            self.sync();
            return;
        }
        self.next();
        loop {
            match self.peek().clone() {
                Tok::RBrace => {
                    self.next();
                    return;
                }
                Tok::Eof => {
                    self.error_here(format!("machine `{id}` is missing its closing `}}`"));
                    return;
                }
                Tok::Ident(word) if word == "machine" => {
                    self.next();
                    self.machine(Some(&id));
                }
                Tok::Ident(word) if word == "stage" => {
                    self.next();
                    self.stage_decl(&id);
                }
                other => {
                    self.error_here(format!(
                        "expected `stage`, `machine`, or `}}` inside a machine, found {}",
                        other.describe()
                    ));
                    self.next();
                    self.sync();
                }
            }
        }
    }

    fn stage_decl(&mut self, machine: &str) {
        let Some((kind_word, kind_pos)) = self.expect_ident("a stage kind") else {
            self.sync();
            return;
        };
        let Some(kind) = StageKind::from_keyword(&kind_word) else {
            self.error_here_at(
                kind_pos,
                format!("`{kind_word}` is not a stage kind (create, process, release, transfer, receive)"),
            );
            self.sync();
            return;
        };
        let disambiguator = match self.peek() {
            Tok::Ident(d) => {
                let d = d.clone();
                self.next();
                Some(d)
            }
            _ => None,
        };
        let number = if matches!(self.peek(), Tok::At) {
            self.next();
            if let Tok::Int(n) = self.peek() {
                let n = *n;
                self.next();
                u32::try_from(n).ok().or_else(|| {
                    self.error_here(format!("annotation `@{n}` does not fit in 32 bits"));
                    None
                })
            } else {
                self.error_here(format!(
                    "expected a number after `@`, found {}",
                    self.peek().describe()
                ));
                self.sync();
                return;
            }
        } else {
            None
        };
        if !self.expect_semi() {
            return;
        }
        let r = StageRef::new(machine, kind, disambiguator.as_deref());
        if self.known_stages.contains(&r) {
            self.diags.push((
                Diagnostic::error(
                    DiagCode::DuplicateStage,
                    Site::Stage(r.clone()),
                    format!("stage `{r}` is already declared"),
                ),
                Some(kind_pos),
            ));
            return;
        }
        self.builder
            .add_stage(machine, kind, disambiguator.as_deref(), number)
            .expect("machine exists and stage is fresh");
        self.known_stages.insert(r.clone());
        self.spans.stages.insert(r, kind_pos);
    }

    fn error_here_at(&mut self, pos: Pos, message: String) {
        self.diags.push((
            Diagnostic::error(DiagCode::Syntax, Site::Model, message),
            Some(pos),
        ));
    }

    /// `LABEL` in flow or trigger position: a bare identifier or a string.
    fn label(&mut self) -> Option<String> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.next();
                Some(s)
            }
            Tok::Str(s) => {
                self.next();
                Some(s)
            }
            other => {
                self.error_here(format!("expected a label, found {}", other.describe()));
                None
            }
        }
    }

    fn stage_ref(&mut self) -> Option<RawRef> {
        let start = self.pos();
        let mut segments = Vec::new();
        loop {
            let (word, _) = self.expect_ident("a machine or stage name")?;
            segments.push(word);
            if matches!(self.peek(), Tok::Dot) {
                self.next();
            } else {
                break;
            }
        }
        let kind_word = segments.pop().expect("at least one segment");
        let Some(kind) = StageKind::from_keyword(&kind_word) else {
            self.error_here_at(
                start,
                format!("reference must end in a stage kind, found `{kind_word}`"),
            );
            return None;
        };
        if segments.is_empty() {
            self.error_here_at(
                start,
                format!("reference to `{kind_word}` names no machine"),
            );
            return None;
        }
        let disambiguator = if matches!(self.peek(), Tok::LBracket) {
            self.next();
            let (d, _) = self.expect_ident("a disambiguator")?;
            if matches!(self.peek(), Tok::RBracket) {
                self.next();
            } else {
                self.error_here(format!("expected `]`, found {}", self.peek().describe()));
                return None;
            }
            Some(d)
        } else {
            None
        };
        Some(RawRef {
            path: segments,
            kind,
            disambiguator,
            pos: start,
        })
    }

    fn flow(&mut self) {
        let Some(thing) = self.label() else {
            self.sync();
            return;
        };
        if !matches!(self.peek(), Tok::Colon) {
            self.error_here(format!("expected `:`, found {}", self.peek().describe()));
            self.sync();
            return;
        }
        self.next();
        let mut refs = Vec::new();
        let mut arrows = Vec::new();
        let Some(first) = self.stage_ref() else {
            self.sync();
            return;
        };
        refs.push(first);
        while matches!(self.peek(), Tok::Arrow) {
            arrows.push(self.pos());
            self.next();
            let Some(r) = self.stage_ref() else {
                self.sync();
                return;
            };
            refs.push(r);
        }
        if refs.len() < 2 {
            self.error_here(format!(
                "a flow needs at least two references, found {}",
                self.peek().describe()
            ));
            self.sync();
            return;
        }
        if !self.expect_semi() {
            return;
        }
        self.flows.push(RawFlow {
            thing,
            refs,
            arrows,
        });
    }

    fn trigger(&mut self) {
        // `trigger label: a ~> b;` or `trigger a ~> b;` — a label is an
        // identifier or string directly followed by a colon.
        let label = match (self.peek().clone(), self.peek2()) {
            (Tok::Str(s), Tok::Colon) => {
                self.next();
                self.next();
                Some(s)
            }
            (Tok::Ident(s), Tok::Colon) => {
                self.next();
                self.next();
                Some(s)
            }
            _ => None,
        };
        let Some(from) = self.stage_ref() else {
            self.sync();
            return;
        };
        if !matches!(self.peek(), Tok::TriggerArrow) {
            self.error_here(format!("expected `~>`, found {}", self.peek().describe()));
            self.sync();
            return;
        }
        let arrow = self.pos();
        self.next();
        let Some(to) = self.stage_ref() else {
            self.sync();
            return;
        };
        if !self.expect_semi() {
            return;
        }
        self.triggers.push(RawTrigger {
            label,
            from,
            to,
            arrow,
        });
    }

    fn event(&mut self) {
        let Some((id, id_pos)) = self.expect_ident("an event name") else {
            self.sync();
            return;
        };
        if !matches!(self.peek(), Tok::LBrace) {
            self.error_here(format!("expected `{{`, found {}", self.peek().describe()));
            self.sync();
            return;
        }
        self.next();
        let mut raw = RawEvent {
            id,
            id_pos,
            region: Vec::new(),
            time: None,
            desc: None,
        };
        let mut seen: BTreeSet<&'static str> = BTreeSet::new();
        loop {
            match self.peek().clone() {
                Tok::RBrace => {
                    self.next();
                    break;
                }
                Tok::Eof => {
                    self.error_here(format!("event `{}` is missing its closing `}}`", raw.id));
                    break;
                }
                Tok::Ident(word) => {
                    let field: &'static str = match word.as_str() {
                        "region" => "region",
                        "time" => "time",
                        "desc" => "desc",
                        _ => {
                            self.error_here(format!(
                                "expected `region`, `time`, or `desc`, found `{word}`"
                            ));
                            self.next();
                            self.sync();
                            continue;
                        }
                    };
                    self.next();
                    if !matches!(self.peek(), Tok::Colon) {
                        self.error_here(format!("expected `:`, found {}", self.peek().describe()));
                        self.sync();
                        continue;
                    }
                    self.next();
                    if !seen.insert(field) {
                        self.error_here(format!("event `{}` repeats its `{field}` field", raw.id));
                        self.sync();
                        continue;
                    }
                    match field {
                        "region" => loop {
                            let Some(r) = self.stage_ref() else {
                                self.sync();
                                break;
                            };
                            raw.region.push(r);
                            if matches!(self.peek(), Tok::Comma) {
                                self.next();
                            } else {
                                self.expect_semi();
                                break;
                            }
                        },
                        "time" => {
                            if let Tok::Int(n) = self.peek() {
                                raw.time = Some(*n);
                                self.next();
                                self.expect_semi();
                            } else {
                                self.error_here(format!(
                                    "expected a number, found {}",
                                    self.peek().describe()
                                ));
                                self.sync();
                            }
                        }
                        _ => {
                            if let Tok::Str(s) = self.peek() {
                                raw.desc = Some(s.clone());
                                self.next();
                                self.expect_semi();
                            } else {
                                self.error_here(format!(
                                    "expected a string, found {}",
                                    self.peek().describe()
                                ));
                                self.sync();
                            }
                        }
                    }
                }
                other => {
                    self.error_here(format!(
                        "expected an event field or `}}`, found {}",
                        other.describe()
                    ));
                    self.next();
                    self.sync();
                }
            }
        }
        self.spans
            .events
            .entry(raw.id.clone())
            .or_insert(raw.id_pos);
        self.events.push(raw);
    }

    fn chronology(&mut self) {
        if !matches!(self.peek(), Tok::LBrace) {
            self.error_here(format!("expected `{{`, found {}", self.peek().describe()));
            self.sync();
            return;
        }
        self.next();
        loop {
            match self.peek().clone() {
                Tok::RBrace => {
                    self.next();
                    return;
                }
                Tok::Eof => {
                    self.error_here("chronology is missing its closing `}`".into());
                    return;
                }
                Tok::Ident(before) => {
                    let pos = self.pos();
                    self.next();
                    if !matches!(self.peek(), Tok::Arrow) {
                        self.error_here(format!("expected `->`, found {}", self.peek().describe()));
                        self.sync();
                        continue;
                    }
                    self.next();
                    let Some((after, _)) = self.expect_ident("an event name") else {
                        self.sync();
                        continue;
                    };
                    if self.expect_semi() {
                        self.chron_edges.push((before, after, pos));
                    }
                }
                other => {
                    self.error_here(format!(
                        "expected an event name or `}}`, found {}",
                        other.describe()
                    ));
                    self.next();
                    self.sync();
                }
            }
        }
    }

    // -- resolution ---------------------------------------------------------

    /// Checks that the written machine path matches the declared nesting,
    /// walking ancestors upward from the leaf. The leaf machine not
    /// existing at all is left for the validators (a dangling reference).
    fn check_path(&mut self, raw: &RawRef) {
        let leaf = raw.path.last().expect("non-empty");
        if !self.parents.contains_key(leaf) {
            return;
        }
        let mut current = leaf.clone();
        for ancestor in raw.path.iter().rev().skip(1) {
            match self.parents.get(&current).cloned().flatten() {
                Some(parent) if &parent == ancestor => current = parent,
                _ => {
                    let written = raw.path.join(".");
                    self.diags.push((
                        Diagnostic::error(
                            DiagCode::DanglingRef,
                            Site::Stage(raw.stage_ref()),
                            format!("machine path `{written}` does not match the declared nesting"),
                        ),
                        Some(raw.pos),
                    ));
                    return;
                }
            }
        }
    }

    /// Flow references bring their stage into being if the machine exists.
    fn ensure_flow_stage(&mut self, raw: &RawRef) {
        let r = raw.stage_ref();
        if self.parents.contains_key(&r.machine) && !self.known_stages.contains(&r) {
            self.builder.ensure_stage(&r).expect("machine exists");
            self.known_stages.insert(r.clone());
            self.spans.stages.insert(r, raw.pos);
        }
    }

    fn finish(mut self, file: &str) -> ParseResult {
        for i in 0..self.flows.len() {
            for j in 0..self.flows[i].refs.len() {
                let raw = self.flows[i].refs[j].clone();
                self.check_path(&raw);
                self.ensure_flow_stage(&raw);
            }
        }
        for i in 0..self.flows.len() {
            let flow = &self.flows[i];
            for j in 0..flow.refs.len() - 1 {
                self.spans.arcs.push(flow.arrows[j]);
            }
        }
        // Split borrows: move the raw statements out before building.
        let flows = std::mem::take(&mut self.flows);
        for flow in &flows {
            for pair in flow.refs.windows(2) {
                self.builder
                    .add_flow(pair[0].stage_ref(), pair[1].stage_ref(), &flow.thing);
            }
        }
        let triggers = std::mem::take(&mut self.triggers);
        for t in &triggers {
            self.check_path(&t.from);
            self.check_path(&t.to);
            self.spans.triggers.push(t.arrow);
            self.builder
                .add_trigger(t.from.stage_ref(), t.to.stage_ref(), t.label.as_deref());
        }
        let raw_events = std::mem::take(&mut self.events);
        let mut events = Vec::new();
        for raw in &raw_events {
            for r in &raw.region {
                self.check_path(r);
            }
            events.push(TMEvent {
                id: raw.id.clone(),
                region: raw.region.iter().map(RawRef::stage_ref).collect(),
                time: raw.time,
                desc: raw.desc.clone(),
            });
        }
        let mut edges: BTreeSet<(String, String)> = BTreeSet::new();
        let mut edge_pos: BTreeMap<(String, String), Pos> = BTreeMap::new();
        for (before, after, pos) in std::mem::take(&mut self.chron_edges) {
            let key = (before, after);
            edge_pos.entry(key.clone()).or_insert(pos);
            edges.insert(key);
        }
        self.spans.chron_edges = edges.iter().map(|e| edge_pos[e]).collect();
        let chronology = Chronology {
            events: events.iter().map(|e| e.id.clone()).collect(),
            edges,
        };
        let model = self.builder.build();

        let mut diagnostics: Vec<SpannedDiagnostic> = self
            .diags
            .iter()
            .map(|(diagnostic, pos)| SpannedDiagnostic {
                diagnostic: diagnostic.clone(),
                span: pos.map(|p| self.spans.span(p)),
            })
            .collect();
        let structurally_broken = has_errors(
            &diagnostics
                .iter()
                .map(|d| d.diagnostic.clone())
                .collect::<Vec<_>>(),
        );
        if !structurally_broken {
            for diag in validate(&model) {
                let span = self.spans.lookup(&diag.site);
                diagnostics.push(SpannedDiagnostic {
                    diagnostic: diag,
                    span,
                });
            }
            for diag in validate_dynamic(&model, &events, &chronology) {
                let span = self.spans.lookup(&diag.site);
                diagnostics.push(SpannedDiagnostic {
                    diagnostic: diag,
                    span,
                });
            }
        }
        let clean = !diagnostics
            .iter()
            .any(|d| d.diagnostic.severity == tm_core::Severity::Error);
        let document = clean.then_some(Document {
            model,
            events,
            chronology,
        });
        let _ = file;
        ParseResult {
            document,
            diagnostics,
            spans: self.spans,
        }
    }
}

/// Parses one `.tm` file. `file` names the source in diagnostics and
/// provides the model name (its stem). Never panics; all trouble comes
/// back as diagnostics.
pub fn parse(text: &str, file: &str) -> ParseResult {
    let mut lex_diags = Vec::new();
    let tokens = Lexer::new(text).run(&mut lex_diags);
    let stem = Path::new(file)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut builder = TMModel::builder();
    builder.metadata(&stem, "");
    let mut parser = Parser {
        tokens,
        at: 0,
        diags: lex_diags.into_iter().map(|(d, p)| (d, Some(p))).collect(),
        builder,
        parents: BTreeMap::new(),
        known_stages: BTreeSet::new(),
        flows: Vec::new(),
        triggers: Vec::new(),
        events: Vec::new(),
        chron_edges: Vec::new(),
        spans: SpanMap {
            file: file.to_owned(),
            ..SpanMap::default()
        },
    };
    parser.top_level();
    parser.finish(file)
}

// ---------------------------------------------------------------------------
// Formatter
// ---------------------------------------------------------------------------

fn ident_shaped(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_') && StageKind::from_keyword(s).is_none()
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            other => out.push(other),
        }
    }
    out.push('"');
    out
}

fn label_text(s: &str) -> String {
    if ident_shaped(s) {
        s.to_owned()
    } else {
        quote(s)
    }
}

fn format_machine(model: &TMModel, idx: usize, depth: usize, out: &mut String) {
    let indent = "  ".repeat(depth);
    let m = &model.machines()[idx];
    let _ = writeln!(out, "{indent}machine {} {{", m.id);
    for stage in &m.stages {
        let _ = write!(out, "{indent}  stage {}", stage.kind);
        if let Some(d) = &stage.disambiguator {
            let _ = write!(out, " {d}");
        }
        if let Some(n) = stage.number {
            let _ = write!(out, " @{n}");
        }
        out.push_str(";\n");
    }
    for &child in &m.children {
        format_machine(model, child, depth + 1, out);
    }
    let _ = writeln!(out, "{indent}}}");
}

/// Canonical textual form. Deterministic and idempotent: machines keep
/// their declared order with every stage written explicitly, each arc
/// gets its own `flow` line, region references and chronology edges are
/// emitted sorted. An empty document formats to an empty string.
pub fn format(doc: &Document) -> String {
    let model = &doc.model;
    let mut chunks: Vec<String> = Vec::new();
    for &root in model.roots() {
        let mut chunk = String::new();
        format_machine(model, root, 0, &mut chunk);
        chunks.push(chunk);
    }
    if !model.arcs.is_empty() {
        let mut chunk = String::new();
        for arc in &model.arcs {
            let _ = writeln!(
                chunk,
                "flow {}: {} -> {};",
                label_text(&arc.thing),
                model.ref_dsl(&arc.from),
                model.ref_dsl(&arc.to)
            );
        }
        chunks.push(chunk);
    }
    if !model.triggers.is_empty() {
        let mut chunk = String::new();
        for t in &model.triggers {
            let _ = write!(chunk, "trigger ");
            if let Some(label) = &t.label {
                let _ = write!(chunk, "{}: ", label_text(label));
            }
            let _ = writeln!(
                chunk,
                "{} ~> {};",
                model.ref_dsl(&t.from),
                model.ref_dsl(&t.to)
            );
        }
        chunks.push(chunk);
    }
    for event in &doc.events {
        let mut chunk = String::new();
        let _ = writeln!(chunk, "event {} {{", event.id);
        let mut region: Vec<&StageRef> = event.region.iter().collect();
        region.sort_by_key(|r| model.sort_key(r));
        let refs: Vec<String> = region.iter().map(|r| model.ref_dsl(r)).collect();
        let _ = writeln!(chunk, "  region: {};", refs.join(", "));
        if let Some(t) = event.time {
            let _ = writeln!(chunk, "  time: {t};");
        }
        if let Some(d) = &event.desc {
            let _ = writeln!(chunk, "  desc: {};", quote(d));
        }
        chunk.push_str("}\n");
        chunks.push(chunk);
    }
    if !doc.chronology.edges.is_empty() {
        let mut chunk = String::new();
        chunk.push_str("chronology {\n");
        for (before, after) in &doc.chronology.edges {
            let _ = writeln!(chunk, "  {before} -> {after};");
        }
        chunk.push_str("}\n");
        chunks.push(chunk);
    }
    chunks.join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use tm_core::Severity;

    fn clean_parse(text: &str) -> Document {
        let result = parse(text, "test.tm");
        assert!(
            result.diagnostics.is_empty(),
            "unexpected diagnostics: {:#?}",
            result.diagnostics
        );
        result.document.expect("document")
    }

    const TINY: &str = "\
machine A {
  stage create;
  stage process x @3;
}
machine B {
  stage process;
}
flow s: A.create -> A.process[x];
trigger go: A.process[x] ~> B.process;
event E1 {
  region: A.create, A.process[x];
  time: 5;
  desc: \"first \\\"half\\\"\";
}
event E2 {
  region: B.process;
}
chronology {
  E1 -> E2;
}
";

    #[test]
    fn a_small_file_parses_completely() {
        let doc = clean_parse(TINY);
        assert_eq!(doc.model.metadata.name, "test");
        assert_eq!(doc.model.machines().len(), 2);
        assert_eq!(doc.model.arcs.len(), 1);
        assert_eq!(doc.model.triggers.len(), 1);
        assert_eq!(doc.model.triggers[0].label.as_deref(), Some("go"));
        assert_eq!(doc.events.len(), 2);
        assert_eq!(doc.events[0].time, Some(5));
        assert_eq!(doc.events[0].desc.as_deref(), Some("first \"half\""));
        assert_eq!(doc.chronology.edges.len(), 1);
        // The annotated stage kept its number.
        let r = StageRef::new("A", StageKind::Process, Some("x"));
        let (mi, si) = doc.model.resolve(&r).unwrap();
        assert_eq!(doc.model.machines()[mi].stages[si].number, Some(3));
    }

    #[test]
    fn formatting_is_canonical_and_idempotent() {
        let doc = clean_parse(TINY);
        let formatted = format(&doc);
        assert_eq!(
            formatted,
            "\
machine A {
  stage create;
  stage process x @3;
}

machine B {
  stage process;
}

flow s: A.create -> A.process[x];

trigger go: A.process[x] ~> B.process;

event E1 {
  region: A.create, A.process[x];
  time: 5;
  desc: \"first \\\"half\\\"\";
}

event E2 {
  region: B.process;
}

chronology {
  E1 -> E2;
}
"
        );
        let again = clean_parse(&formatted);
        assert!(document_equal(&doc, &again));
        assert_eq!(format(&again), formatted);
    }

    #[test]
    fn multi_hop_flows_desugar_in_order() {
        let doc = clean_parse(
            "machine A { stage create; }\n\
             machine B { stage process; }\n\
             flow s: A.create -> A.process -> A.release -> A.transfer;\n\
             flow t: B.create -> B.process;\n",
        );
        let arcs: Vec<(String, String)> = doc
            .model
            .arcs
            .iter()
            .map(|a| (a.from.to_string(), a.to.to_string()))
            .collect();
        assert_eq!(
            arcs,
            [
                ("A.create".into(), "A.process".into()),
                ("A.process".into(), "A.release".into()),
                ("A.release".into(), "A.transfer".into()),
                ("B.create".into(), "B.process".into()),
            ]
        );
        // Implicitly declared stages land in reference order.
        let kinds: Vec<StageKind> = doc.model.machines()[0]
            .stages
            .iter()
            .map(|s| s.kind)
            .collect();
        assert_eq!(
            kinds,
            [
                StageKind::Create,
                StageKind::Process,
                StageKind::Release,
                StageKind::Transfer
            ]
        );
    }

    #[test]
    fn semantic_findings_point_at_the_arrow() {
        let text = "machine A { stage release; stage process; }\n\
                    flow s: A.release -> A.process;\n";
        let result = parse(text, "bad.tm");
        assert!(result.document.is_none());
        let adjacency: Vec<&SpannedDiagnostic> = result
            .diagnostics
            .iter()
            .filter(|d| d.diagnostic.code == DiagCode::IllegalAdjacency)
            .collect();
        assert_eq!(adjacency.len(), 1);
        let span = adjacency[0].span.as_ref().expect("span");
        assert_eq!(span.file, "bad.tm");
        assert_eq!(span.line, 2);
        assert_eq!(span.column, 19);
        assert_eq!(span.length, 2);
        // A cross-machine arc that is not transfer-to-transfer gets its
        // own code, also pinned to the arrow.
        let text = "machine A { stage release; }\n\
                    machine B { stage transfer; }\n\
                    flow s: A.release -> B.transfer;\n";
        let result = parse(text, "bad.tm");
        let cross: Vec<&SpannedDiagnostic> = result
            .diagnostics
            .iter()
            .filter(|d| d.diagnostic.code == DiagCode::CrossMachineNonTransfer)
            .collect();
        assert_eq!(cross.len(), 1);
        let span = cross[0].span.as_ref().expect("span");
        assert_eq!((span.line, span.column), (3, 19));
    }

    #[test]
    fn errors_resynchronize_at_statement_ends() {
        let text = "machine A { stage create; }\n\
                    flow : A.create -> A.process;\n\
                    flow s: A.create -> A.process;\n";
        let result = parse(text, "recover.tm");
        // The bad statement is reported, the good one still lands.
        assert!(result
            .diagnostics
            .iter()
            .any(|d| d.diagnostic.code == DiagCode::Syntax));
        assert!(result.document.is_none());
        // Re-parse of only the good line gives one arc; the recovering
        // parse must have collected that same arc too.
        assert!(result.diagnostics.len() < 4);
    }

    #[test]
    fn duplicate_declarations_are_reported() {
        let result = parse(
            "machine A { stage create; stage create; }\nmachine A { }\n",
            "dup.tm",
        );
        let codes: Vec<DiagCode> = result
            .diagnostics
            .iter()
            .map(|d| d.diagnostic.code)
            .collect();
        assert!(codes.contains(&DiagCode::DuplicateStage));
        assert!(codes.contains(&DiagCode::DuplicateMachine));
        assert!(result.document.is_none());
    }

    #[test]
    fn machine_paths_must_match_the_nesting() {
        let text = "machine A { machine Inner { stage create; } }\n\
                    machine B { stage process; }\n\
                    flow s: B.Inner.create -> B.process;\n";
        let result = parse(text, "paths.tm");
        assert!(result
            .diagnostics
            .iter()
            .any(|d| d.diagnostic.code == DiagCode::DanglingRef
                && d.diagnostic.severity == Severity::Error));
        assert!(result.document.is_none());
        // The correct suffix path parses fine.
        let ok = parse(
            "machine A { machine Inner { stage create; } }\n\
             flow s: A.Inner.create -> Inner.process;\n",
            "paths.tm",
        );
        assert!(ok.document.is_some(), "diagnostics: {:#?}", ok.diagnostics);
    }

    #[test]
    fn unknown_machines_dangle_into_validation() {
        let result = parse(
            "machine A { stage create; }\nflow s: A.create -> Ghost.process;\n",
            "ghost.tm",
        );
        assert!(result.document.is_none());
        assert!(result
            .diagnostics
            .iter()
            .any(|d| d.diagnostic.code == DiagCode::DanglingRef));
    }

    #[test]
    fn an_empty_model_formats_to_nothing() {
        let doc = clean_parse("");
        assert_eq!(format(&doc), "");
        assert_eq!(doc.model.machines().len(), 0);
    }

    #[test]
    fn comments_and_strings_lex_cleanly() {
        let doc = clean_parse(
            "# a leading comment\n\
             machine A { # trailing\n  stage create;\n  stage process; }\n\
             flow \"two words\": A.create -> A.process;\n",
        );
        assert_eq!(doc.model.arcs[0].thing, "two words");
        let text = format(&doc);
        assert!(text.contains("flow \"two words\":"));
        assert!(!text.contains('#'));
    }

    #[test]
    fn garbage_never_panics_and_always_reports() {
        for text in [
            "machine",
            "machine {",
            "flow s A.create",
            "event { region }",
            "trigger ~>;",
            "trigger",
            "machine A { stage create; } trigger",
            "chronology { E1 -> ; }",
            "\"unterminated",
            "stage create;",
            "m@chine A {}",
            "flow s: A.create ->",
            "machine A { stage create",
        ] {
            let result = parse(text, "fuzz.tm");
            assert!(result.document.is_none(), "accepted: {text}");
            assert!(!result.diagnostics.is_empty(), "silent on: {text}");
        }
    }

    #[test]
    fn spans_stay_inside_the_text() {
        let text = "machine A { stage creat; }\nflow x: A.a -> b;\n";
        let result = parse(text, "spans.tm");
        let lines: Vec<&str> = text.lines().collect();
        for d in &result.diagnostics {
            if let Some(span) = &d.span {
                let line = lines
                    .get((span.line - 1) as usize)
                    .unwrap_or_else(|| panic!("line {} out of range", span.line));
                assert!(
                    (span.column as usize) <= line.chars().count() + 1,
                    "column {} beyond line `{line}`",
                    span.column
                );
            }
        }
    }
}

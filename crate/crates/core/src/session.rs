//! A stateful editing session: parse, select, resolve references, apply.
//!
//! The session keeps a short working memory of recently edited notes. When a
//! singular command ("the G") matches several notes, the assumer picks the
//! candidate that is uniquely present in working memory; otherwise the
//! candidates are returned and the session waits for a choice.

use std::collections::VecDeque;

use serde::Serialize;

use crate::command::{parse_command, to_query, Action, CommandAst, Query};
use crate::model::{describe_leaf, leaf_event, Music, Path, ScoreMeta, TimedEvent};
use crate::normalize::validate_normal_form;
use crate::query::{resolve_paths, select, Pattern, QueryError, Selection};
use crate::render;
use crate::transforms::{apply_operation, EditResult, OperationDescriptor, OperationKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SessionConfig {
    pub working_memory: usize,
    pub undo_capacity: usize,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            working_memory: 5,
            undo_capacity: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub enum Status {
    Applied,
    Ambiguous,
    ClarificationNeeded,
    Error,
    /// Read-only commands such as `show`.
    Info,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Candidate {
    pub index: usize,
    pub describe: String,
    pub path: Path,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Outcome {
    pub status: Status,
    pub message: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub candidates: Vec<Candidate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub echo: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ast: Option<CommandAst>,
    pub version: u64,
}

impl Outcome {
    fn new(status: Status, message: impl Into<String>, version: u64) -> Self {
        Outcome {
            status,
            message: message.into(),
            candidates: Vec::new(),
            echo: None,
            ast: None,
            version,
        }
    }

    pub fn is_applied(&self) -> bool {
        self.status == Status::Applied
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistoryEntry {
    pub command: String,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryEntry {
    pub timestamp: u64,
    pub event: TimedEvent,
}

#[derive(Debug, Clone)]
struct Pending {
    operation: OperationDescriptor,
    candidates: Vec<Path>,
    command: String,
    echo: String,
    ast: CommandAst,
}

#[derive(Debug, Clone)]
pub struct Session {
    music: Music,
    meta: ScoreMeta,
    version: u64,
    clock: u64,
    config: SessionConfig,
    working_memory: VecDeque<MemoryEntry>,
    undo_stack: VecDeque<Music>,
    pending: Option<Pending>,
    history: Vec<HistoryEntry>,
}

fn same_note(a: &TimedEvent, b: &TimedEvent) -> bool {
    a.same_timing_and_pitch(b) && a.contexts == b.contexts
}

fn kind_name(kind: OperationKind) -> &'static str {
    match kind {
        OperationKind::Transpose => "transpose",
        OperationKind::TransposeDiatonic => "transposeDiatonic",
        OperationKind::Invert => "invert",
        OperationKind::InvertAt => "invertAt",
        OperationKind::Retrograde => "retrograde",
        OperationKind::DeleteAsRest => "deleteAsRest",
        OperationKind::DeleteAndShift => "deleteAndShift",
    }
}

fn plural(n: usize, word: &str) -> String {
    if n == 1 {
        format!("1 {word}")
    } else {
        format!("{n} {word}s")
    }
}

impl Session {
    pub fn new(music: Music, meta: ScoreMeta) -> Self {
        Self::with_config(music, meta, SessionConfig::default())
    }

    pub fn with_config(music: Music, meta: ScoreMeta, config: SessionConfig) -> Self {
        Session {
            music,
            meta,
            version: 0,
            clock: 0,
            config,
            working_memory: VecDeque::new(),
            undo_stack: VecDeque::new(),
            pending: None,
            history: Vec::new(),
        }
    }

    pub fn music(&self) -> &Music {
        &self.music
    }

    pub fn meta(&self) -> &ScoreMeta {
        &self.meta
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn history(&self) -> &[HistoryEntry] {
        &self.history
    }

    pub fn working_memory(&self) -> impl Iterator<Item = &MemoryEntry> {
        self.working_memory.iter()
    }

    pub fn undo_depth(&self) -> usize {
        self.undo_stack.len()
    }

    pub fn has_pending(&self) -> bool {
        self.pending.is_some()
    }

    /// Candidates of the pending ambiguity, if any.
    pub fn pending_candidates(&self) -> Vec<Candidate> {
        self.pending
            .as_ref()
            .map(|p| self.candidates(&p.candidates))
            .unwrap_or_default()
    }

    fn candidates(&self, paths: &[Path]) -> Vec<Candidate> {
        paths
            .iter()
            .enumerate()
            .map(|(index, path)| Candidate {
                index,
                describe: self.music.get(path).map(describe_leaf).unwrap_or_default(),
                path: path.clone(),
            })
            .collect()
    }

    fn record(&mut self, command: &str, outcome: Outcome) -> Outcome {
        self.history.push(HistoryEntry {
            command: command.to_string(),
            outcome: outcome.clone(),
        });
        outcome
    }

    fn remember(&mut self, affected: &[Path]) {
        self.clock += 1;
        for path in affected {
            let Some(event) = self.music.get(path).and_then(|l| leaf_event(l, &self.meta)) else {
                continue;
            };
            if !event.is_note() {
                continue;
            }
            self.working_memory.retain(|e| !same_note(&e.event, &event));
            self.working_memory.push_front(MemoryEntry {
                timestamp: self.clock,
                event,
            });
        }
        self.working_memory.truncate(self.config.working_memory);
    }

    fn in_memory(&self, path: &Path) -> bool {
        let Some(event) = self.music.get(path).and_then(|l| leaf_event(l, &self.meta)) else {
            return false;
        };
        self.working_memory.iter().any(|e| same_note(&e.event, &event))
    }

    fn commit(&mut self, result: EditResult) {
        let old = std::mem::replace(&mut self.music, result.music);
        self.undo_stack.push_back(old);
        while self.undo_stack.len() > self.config.undo_capacity {
            self.undo_stack.pop_front();
        }
        self.version += 1;
        self.remember(&result.affected);
    }

    /// Applies `op` to `sel` and commits on success.
    fn execute(&mut self, op: &OperationDescriptor, sel: &Selection) -> Outcome {
        match apply_operation(op, sel, &self.music, &self.meta) {
            Ok(result) => {
                let n = sel.hits.len();
                self.commit(result);
                Outcome::new(
                    Status::Applied,
                    format!("{} applied to {}", kind_name(op.kind), plural(n, "note")),
                    self.version,
                )
            }
            Err(e) => Outcome::new(Status::Error, e.to_string(), self.version),
        }
    }

    /// Parses and runs one command.
    pub fn apply_command(&mut self, text: &str) -> Outcome {
        let parsed = parse_command(text);
        if let Ok(ast) = &parsed {
            if matches!(ast.action, Action::Undo | Action::Show) {
                self.pending = None;
            }
        }
        if self.pending.is_some() {
            let o = Outcome::new(
                Status::ClarificationNeeded,
                "resolve pending ambiguity first",
                self.version,
            );
            return self.record(text, o);
        }
        let ast = match parsed {
            Ok(ast) => ast,
            Err(e) => {
                let o = Outcome::new(Status::Error, e.to_string(), self.version);
                return self.record(text, o);
            }
        };
        let outcome = match ast.action {
            Action::Undo => self.undo(),
            Action::Show => match render::show(&self.music, &self.meta) {
                Ok(view) => Outcome::new(Status::Info, view, self.version),
                Err(e) => Outcome::new(Status::Error, e.to_string(), self.version),
            },
            _ => match to_query(&ast) {
                Some(q) => self.run_query(text, &q, &ast),
                None => Outcome::new(Status::Error, "cannot parse command", self.version),
            },
        };
        let outcome = Outcome {
            ast: Some(ast),
            ..outcome
        };
        self.record(text, outcome)
    }

    fn run_query(&mut self, text: &str, q: &Query, ast: &CommandAst) -> Outcome {
        let echo = q.echo();
        let sel = select(&q.pattern, &self.music).with_version(self.version);
        let with_echo = |o: Outcome| Outcome {
            echo: Some(echo.clone()),
            ..o
        };
        if sel.is_empty() {
            return with_echo(Outcome::new(Status::Error, "no match", self.version));
        }
        if !q.singular || sel.len() == 1 {
            return with_echo(self.execute(&q.operation, &sel));
        }
        // Assumer: a unique working-memory hit resolves the reference.
        let remembered: Vec<&Path> = sel.hits.iter().filter(|p| self.in_memory(p)).collect();
        if let [only] = remembered.as_slice() {
            let path = (*only).clone();
            let describe = self.music.get(&path).map(describe_leaf).unwrap_or_default();
            let one = Selection::from_paths(self.version, vec![path]);
            let o = self.execute(&q.operation, &one);
            let message = if o.is_applied() {
                format!("assumed {describe} (recently edited); {}", o.message)
            } else {
                o.message.clone()
            };
            return with_echo(Outcome { message, ..o });
        }
        let candidates = self.candidates(&sel.hits);
        self.pending = Some(Pending {
            operation: q.operation.clone(),
            candidates: sel.hits.clone(),
            command: text.to_string(),
            echo: echo.clone(),
            ast: ast.clone(),
        });
        with_echo(Outcome {
            candidates,
            ..Outcome::new(
                Status::Ambiguous,
                format!("{} match; which one?", plural(sel.len(), "note")),
                self.version,
            )
        })
    }

    /// Resolves a pending ambiguity by candidate index.
    pub fn resolve_choice(&mut self, index: usize) -> Outcome {
        let Some(pending) = self.pending.clone() else {
            let o = Outcome::new(Status::Error, "nothing to resolve", self.version);
            return self.record(&index.to_string(), o);
        };
        let Some(path) = pending.candidates.get(index).cloned() else {
            let o = Outcome {
                candidates: self.candidates(&pending.candidates),
                ..Outcome::new(
                    Status::Error,
                    format!(
                        "choice {index} out of range (0..{})",
                        pending.candidates.len() - 1
                    ),
                    self.version,
                )
            };
            return self.record(&index.to_string(), o);
        };
        let sel = Selection::from_paths(self.version, vec![path]);
        let o = self.execute(&pending.operation, &sel);
        if o.is_applied() {
            self.pending = None;
        }
        let o = Outcome {
            echo: Some(pending.echo.clone()),
            ast: Some(pending.ast.clone()),
            ..o
        };
        self.record(&format!("{} [{index}]", pending.command), o)
    }

    /// Cancels a pending ambiguity without applying anything.
    pub fn cancel_pending(&mut self) {
        self.pending = None;
    }

    pub fn undo(&mut self) -> Outcome {
        self.pending = None;
        let Some(previous) = self.undo_stack.pop_back() else {
            return Outcome::new(Status::Error, "nothing to undo", self.version);
        };
        self.music = previous;
        self.version += 1;
        let flat = crate::model::flatten(&self.music, &self.meta).unwrap_or_default();
        self.working_memory
            .retain(|e| flat.iter().any(|f| same_note(f, &e.event)));
        Outcome::new(Status::Applied, "undone", self.version)
    }

    /// Selection stamped with the current version.
    pub fn select(&self, pattern: &Pattern) -> Selection {
        select(pattern, &self.music).with_version(self.version)
    }

    /// Applies an operation to an explicit selection, rejecting stale ones.
    pub fn apply_selection(&mut self, op: &OperationDescriptor, sel: &Selection) -> Outcome {
        if self.pending.is_some() {
            return Outcome::new(
                Status::ClarificationNeeded,
                "resolve pending ambiguity first",
                self.version,
            );
        }
        if let Err(e) = resolve_paths(sel, &self.music, self.version) {
            return Outcome::new(Status::Error, e.to_string(), self.version);
        }
        let o = self.execute(op, sel);
        self.record(&op.render("selection"), o)
    }

    /// True when the current tree is in normal form.
    pub fn check_normal_form(&self) -> bool {
        validate_normal_form(&self.music, &self.meta).is_ok()
    }
}

impl From<QueryError> for Outcome {
    fn from(e: QueryError) -> Self {
        Outcome::new(Status::Error, e.to_string(), 0)
    }
}

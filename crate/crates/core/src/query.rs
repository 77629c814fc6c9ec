//! Patterns with wildcards and predicates, and `select` over music trees.
//!
//! A pattern mirrors the shape of a [`Note`], [`Rest`] or group, but each
//! scalar field holds a [`FieldPattern`] instead of a value. Selecting a
//! pattern against a tree yields the paths of matching leaves, so the caller
//! can edit the tree in place afterwards.

use std::collections::BTreeSet;
use std::fmt;

use serde::Serialize;
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::model::{beats_eq, Music, Note, PitchClass, Rest};

pub use crate::model::Path;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QueryError {
    #[error("stale selection")]
    StaleSelection,
    #[error("invalid path {0}")]
    InvalidPath(Path),
    #[error("invalid pattern at {pointer:?}: {message}")]
    InvalidPattern { pointer: String, message: String },
}

/// Constraint on one numeric field.
#[derive(Debug, Clone, Default, PartialEq)]
pub enum FieldPattern {
    #[default]
    Any,
    Eq(f64),
    Lt(f64),
    Gt(f64),
    AtLeast(f64),
    AtMost(f64),
    OneOf(Vec<f64>),
}

impl FieldPattern {
    pub fn is_any(&self) -> bool {
        matches!(self, FieldPattern::Any)
    }

    /// Evaluates against an optional field; absent values only satisfy `Any`.
    pub fn matches(&self, value: Option<f64>) -> bool {
        let Some(v) = value else {
            return self.is_any();
        };
        match self {
            FieldPattern::Any => true,
            FieldPattern::Eq(x) => beats_eq(v, *x),
            FieldPattern::Lt(x) => v < *x && !beats_eq(v, *x),
            FieldPattern::Gt(x) => v > *x && !beats_eq(v, *x),
            FieldPattern::AtLeast(x) => v >= *x || beats_eq(v, *x),
            FieldPattern::AtMost(x) => v <= *x || beats_eq(v, *x),
            FieldPattern::OneOf(xs) => xs.iter().any(|x| beats_eq(v, *x)),
        }
    }

    fn to_value(&self) -> Option<Value> {
        Some(match self {
            FieldPattern::Any => return None,
            FieldPattern::Eq(x) => num(*x),
            FieldPattern::Lt(x) => json!({"lt": num(*x)}),
            FieldPattern::Gt(x) => json!({"gt": num(*x)}),
            FieldPattern::AtLeast(x) => json!({"ge": num(*x)}),
            FieldPattern::AtMost(x) => json!({"le": num(*x)}),
            FieldPattern::OneOf(xs) => json!({"in": xs.iter().map(|x| num(*x)).collect::<Vec<_>>()}),
        })
    }

    fn from_value(v: &Value, at: &str) -> Result<Self, QueryError> {
        let number = |v: &Value, at: &str| {
            v.as_f64().ok_or_else(|| bad(at, "expected number"))
        };
        match v {
            Value::Null => Ok(FieldPattern::Any),
            Value::Number(_) => Ok(FieldPattern::Eq(number(v, at)?)),
            Value::Object(obj) if obj.len() == 1 => {
                let (k, x) = obj.iter().next().unwrap();
                let at = format!("{at}/{k}");
                match k.as_str() {
                    "eq" => Ok(FieldPattern::Eq(number(x, &at)?)),
                    "lt" => Ok(FieldPattern::Lt(number(x, &at)?)),
                    "gt" => Ok(FieldPattern::Gt(number(x, &at)?)),
                    "ge" => Ok(FieldPattern::AtLeast(number(x, &at)?)),
                    "le" => Ok(FieldPattern::AtMost(number(x, &at)?)),
                    "in" => {
                        let arr = x.as_array().ok_or_else(|| bad(&at, "expected array"))?;
                        let vals = arr
                            .iter()
                            .enumerate()
                            .map(|(i, e)| number(e, &format!("{at}/{i}")))
                            .collect::<Result<_, _>>()?;
                        Ok(FieldPattern::OneOf(vals))
                    }
                    _ => Err(bad(&at, "unknown predicate")),
                }
            }
            _ => Err(bad(at, "expected number, null or a one-key predicate object")),
        }
    }

    /// Compact rendering: `_`, a value, or a comparison like `>3`.
    fn render(&self, f: &mut fmt::Formatter<'_>, value: impl Fn(f64) -> String) -> fmt::Result {
        match self {
            FieldPattern::Any => write!(f, "_"),
            FieldPattern::Eq(x) => write!(f, "{}", value(*x)),
            FieldPattern::Lt(x) => write!(f, "<{}", value(*x)),
            FieldPattern::Gt(x) => write!(f, ">{}", value(*x)),
            FieldPattern::AtLeast(x) => write!(f, ">={}", value(*x)),
            FieldPattern::AtMost(x) => write!(f, "<={}", value(*x)),
            FieldPattern::OneOf(xs) => {
                let parts: Vec<String> = xs.iter().map(|x| value(*x)).collect();
                write!(f, "{{{}}}", parts.join("|"))
            }
        }
    }
}

fn num(x: f64) -> Value {
    if x.fract() == 0.0 && x.abs() < 1e15 {
        json!(x as i64)
    } else {
        json!(x)
    }
}

fn fmt_num(x: f64) -> String {
    if x.fract() == 0.0 && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        format!("{x}")
    }
}

fn fmt_pc(x: f64) -> String {
    if x.fract() == 0.0 && (0.0..12.0).contains(&x) {
        PitchClass::wrapping(x as i32).name().to_string()
    } else {
        fmt_num(x)
    }
}

fn bad(at: &str, message: &str) -> QueryError {
    QueryError::InvalidPattern {
        pointer: at.to_string(),
        message: message.to_string(),
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct NotePattern {
    pub pitch_class: FieldPattern,
    pub octave: FieldPattern,
    pub duration: FieldPattern,
    pub measure: FieldPattern,
    pub beat: FieldPattern,
    pub labels: BTreeSet<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RestPattern {
    pub duration: FieldPattern,
    pub measure: FieldPattern,
    pub beat: FieldPattern,
    pub labels: BTreeSet<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupKind {
    Seq,
    Par,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructPattern {
    pub kind: GroupKind,
    pub children: Vec<Pattern>,
    pub labels: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Pattern {
    Note(NotePattern),
    Rest(RestPattern),
    Struct(StructPattern),
}

impl From<NotePattern> for Pattern {
    fn from(p: NotePattern) -> Self {
        Pattern::Note(p)
    }
}

impl From<RestPattern> for Pattern {
    fn from(p: RestPattern) -> Self {
        Pattern::Rest(p)
    }
}

impl From<StructPattern> for Pattern {
    fn from(p: StructPattern) -> Self {
        Pattern::Struct(p)
    }
}

impl NotePattern {
    pub fn matches(&self, n: &Note) -> bool {
        self.pitch_class.matches(n.pitch.class.map(|c| c.value() as f64))
            && self.octave.matches(n.pitch.octave.map(|o| o.value() as f64))
            && self.duration.matches(n.duration.map(|d| d.beats()))
            && self.measure.matches(n.onset.measure.map(f64::from))
            && self.beat.matches(n.onset.beat)
            && self.labels.is_subset(&n.contexts.labels)
    }

    /// Number of non-wildcard constraints.
    pub fn constraint_count(&self) -> usize {
        [&self.pitch_class, &self.octave, &self.duration, &self.measure, &self.beat]
            .iter()
            .filter(|f| !f.is_any())
            .count()
            + self.labels.len()
    }
}

impl RestPattern {
    pub fn matches(&self, r: &Rest) -> bool {
        self.duration.matches(r.duration.map(|d| d.beats()))
            && self.measure.matches(r.onset.measure.map(f64::from))
            && self.beat.matches(r.onset.beat)
            && self.labels.is_subset(&r.contexts.labels)
    }
}

/// Tests one leaf against a leaf pattern. Struct patterns never match leaves.
pub fn match_leaf(pat: &Pattern, leaf: &Music) -> bool {
    match (pat, leaf) {
        (Pattern::Note(p), Music::Note(n)) => p.matches(n),
        (Pattern::Rest(p), Music::Rest(r)) => p.matches(r),
        _ => false,
    }
}

/// A contiguous run of children of one node matched by a struct pattern.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Run {
    pub node: Path,
    pub start: usize,
    pub len: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Selection {
    pub version: u64,
    pub hits: Vec<Path>,
    pub runs: Vec<Run>,
}

impl Selection {
    pub fn from_paths(version: u64, mut hits: Vec<Path>) -> Self {
        hits.sort();
        hits.dedup();
        Selection {
            version,
            hits,
            runs: Vec::new(),
        }
    }

    pub fn with_version(mut self, version: u64) -> Self {
        self.version = version;
        self
    }

    pub fn is_empty(&self) -> bool {
        self.hits.is_empty()
    }

    pub fn len(&self) -> usize {
        self.hits.len()
    }
}

fn node_matches(pat: &Pattern, node: &Music) -> bool {
    match pat {
        Pattern::Struct(sp) => match (sp.kind, node) {
            (GroupKind::Seq, Music::Seq(g)) | (GroupKind::Par, Music::Par(g)) => {
                sp.labels.is_subset(&g.contexts.labels)
                    && g.children.len() == sp.children.len()
                    && sp
                        .children
                        .iter()
                        .zip(&g.children)
                        .all(|(p, c)| node_matches(p, c))
            }
            _ => false,
        },
        leaf => match_leaf(leaf, node),
    }
}

fn collect_leaves(node: &Music, path: &Path, out: &mut Vec<Path>) {
    for (p, _) in node.leaves() {
        let mut full = path.0.clone();
        full.extend(p.0);
        out.push(Path(full));
    }
}

/// Finds every match of `pat` in `m`. The returned selection has version 0;
/// callers that track score versions stamp it with [`Selection::with_version`].
pub fn select(pat: &Pattern, m: &Music) -> Selection {
    match pat {
        Pattern::Note(_) | Pattern::Rest(_) => {
            let hits = m
                .leaves()
                .into_iter()
                .filter(|(_, leaf)| match_leaf(pat, leaf))
                .map(|(p, _)| p)
                .collect();
            Selection {
                version: 0,
                hits,
                runs: Vec::new(),
            }
        }
        Pattern::Struct(sp) => {
            let mut runs = Vec::new();
            let mut hits = Vec::new();
            fn walk(sp: &StructPattern, node: &Music, path: Path, runs: &mut Vec<Run>, hits: &mut Vec<Path>) {
                let (kind, g) = match node {
                    Music::Seq(g) => (GroupKind::Seq, g),
                    Music::Par(g) => (GroupKind::Par, g),
                    _ => return,
                };
                let len = sp.children.len();
                if kind == sp.kind && sp.labels.is_subset(&g.contexts.labels) && len > 0 {
                    let mut i = 0;
                    while i + len <= g.children.len() {
                        let window = &g.children[i..i + len];
                        if sp.children.iter().zip(window).all(|(p, c)| node_matches(p, c)) {
                            for (j, c) in window.iter().enumerate() {
                                collect_leaves(c, &path.child(i + j), hits);
                            }
                            runs.push(Run {
                                node: path.clone(),
                                start: i,
                                len,
                            });
                            i += len;
                        } else {
                            i += 1;
                        }
                    }
                }
                for (i, c) in g.children.iter().enumerate() {
                    walk(sp, c, path.child(i), runs, hits);
                }
            }
            walk(sp, m, Path::root(), &mut runs, &mut hits);
            hits.sort();
            hits.dedup();
            Selection { version: 0, hits, runs }
        }
    }
}

/// Resolves a selection's leaf paths against the current tree.
pub fn resolve_paths<'m>(sel: &Selection, m: &'m Music, current_version: u64) -> Result<Vec<&'m Music>, QueryError> {
    if sel.version != current_version {
        return Err(QueryError::StaleSelection);
    }
    sel.hits
        .iter()
        .map(|p| match m.get(p) {
            Some(leaf) if leaf.is_leaf() => Ok(leaf),
            _ => Err(QueryError::InvalidPath(p.clone())),
        })
        .collect()
}

// ---- JSON encoding ----

fn labels_value(labels: &BTreeSet<String>) -> Option<Value> {
    (!labels.is_empty()).then(|| json!(labels))
}

impl Pattern {
    pub fn to_json(&self) -> Value {
        let mut obj = Map::new();
        let mut put = |k: &str, f: &FieldPattern| {
            if let Some(v) = f.to_value() {
                obj.insert(k.to_string(), v);
            }
        };
        match self {
            Pattern::Note(p) => {
                put("pc", &p.pitch_class);
                put("oct", &p.octave);
                put("dur", &p.duration);
                put("measure", &p.measure);
                put("beat", &p.beat);
                if let Some(l) = labels_value(&p.labels) {
                    obj.insert("labels".into(), l);
                }
                json!({ "note": obj })
            }
            Pattern::Rest(p) => {
                put("dur", &p.duration);
                put("measure", &p.measure);
                put("beat", &p.beat);
                if let Some(l) = labels_value(&p.labels) {
                    obj.insert("labels".into(), l);
                }
                json!({ "rest": obj })
            }
            Pattern::Struct(sp) => {
                obj.insert(
                    "children".into(),
                    Value::Array(sp.children.iter().map(Pattern::to_json).collect()),
                );
                if let Some(l) = labels_value(&sp.labels) {
                    obj.insert("labels".into(), l);
                }
                let key = match sp.kind {
                    GroupKind::Seq => "seq",
                    GroupKind::Par => "par",
                };
                json!({ key: obj })
            }
        }
    }

    pub fn from_json(v: &Value) -> Result<Self, QueryError> {
        Self::from_json_at(v, "")
    }

    fn from_json_at(v: &Value, at: &str) -> Result<Self, QueryError> {
        let obj = v.as_object().filter(|o| o.len() == 1).ok_or_else(|| {
            bad(at, "expected an object with one of \"note\", \"rest\", \"seq\", \"par\"")
        })?;
        let (kind, body) = obj.iter().next().unwrap();
        let at = format!("{at}/{kind}");
        let body = body.as_object().ok_or_else(|| bad(&at, "expected object"))?;
        let allowed: &[&str] = match kind.as_str() {
            "note" => &["pc", "oct", "dur", "measure", "beat", "labels"],
            "rest" => &["dur", "measure", "beat", "labels"],
            "seq" | "par" => &["children", "labels"],
            _ => return Err(bad(&at, "unknown pattern kind")),
        };
        if let Some(k) = body.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(bad(&format!("{at}/{k}"), "unknown key"));
        }
        let field = |k: &str| -> Result<FieldPattern, QueryError> {
            body.get(k)
                .map(|v| FieldPattern::from_value(v, &format!("{at}/{k}")))
                .unwrap_or(Ok(FieldPattern::Any))
        };
        let labels = match body.get("labels") {
            None => BTreeSet::new(),
            Some(Value::Array(arr)) => arr
                .iter()
                .enumerate()
                .map(|(i, l)| {
                    l.as_str()
                        .filter(|s| !s.is_empty())
                        .map(str::to_string)
                        .ok_or_else(|| bad(&format!("{at}/labels/{i}"), "expected non-empty string"))
                })
                .collect::<Result<_, _>>()?,
            Some(_) => return Err(bad(&format!("{at}/labels"), "expected array")),
        };
        match kind.as_str() {
            "note" => Ok(Pattern::Note(NotePattern {
                pitch_class: field("pc")?,
                octave: field("oct")?,
                duration: field("dur")?,
                measure: field("measure")?,
                beat: field("beat")?,
                labels,
            })),
            "rest" => Ok(Pattern::Rest(RestPattern {
                duration: field("dur")?,
                measure: field("measure")?,
                beat: field("beat")?,
                labels,
            })),
            _ => {
                let children = body
                    .get("children")
                    .and_then(Value::as_array)
                    .filter(|a| !a.is_empty())
                    .ok_or_else(|| bad(&format!("{at}/children"), "expected non-empty array"))?
                    .iter()
                    .enumerate()
                    .map(|(i, c)| Self::from_json_at(c, &format!("{at}/children/{i}")))
                    .collect::<Result<_, _>>()?;
                Ok(Pattern::Struct(StructPattern {
                    kind: if kind == "seq" { GroupKind::Seq } else { GroupKind::Par },
                    children,
                    labels,
                }))
            }
        }
    }
}

// ---- compact notation, e.g. N((F,_), _, (1,0), ...) ----

fn fmt_labels(f: &mut fmt::Formatter<'_>, labels: &BTreeSet<String>) -> fmt::Result {
    if labels.is_empty() {
        write!(f, "...")
    } else {
        let quoted: Vec<String> = labels.iter().map(|l| format!("{l:?}")).collect();
        write!(f, "{}", quoted.join(", "))
    }
}

fn fmt_pair(f: &mut fmt::Formatter<'_>, a: &FieldPattern, b: &FieldPattern, first: fn(f64) -> String) -> fmt::Result {
    if a.is_any() && b.is_any() {
        return write!(f, "_");
    }
    write!(f, "(")?;
    a.render(f, first)?;
    write!(f, ",")?;
    b.render(f, fmt_num)?;
    write!(f, ")")
}

impl fmt::Display for NotePattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "N(")?;
        fmt_pair(f, &self.pitch_class, &self.octave, fmt_pc)?;
        write!(f, ", ")?;
        self.duration.render(f, fmt_num)?;
        write!(f, ", ")?;
        fmt_pair(f, &self.measure, &self.beat, fmt_num)?;
        write!(f, ", ")?;
        fmt_labels(f, &self.labels)?;
        write!(f, ")")
    }
}

impl fmt::Display for RestPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "R(")?;
        self.duration.render(f, fmt_num)?;
        write!(f, ", ")?;
        fmt_pair(f, &self.measure, &self.beat, fmt_num)?;
        write!(f, ", ")?;
        fmt_labels(f, &self.labels)?;
        write!(f, ")")
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Pattern::Note(p) => write!(f, "{p}"),
            Pattern::Rest(p) => write!(f, "{p}"),
            Pattern::Struct(sp) => {
                let name = match sp.kind {
                    GroupKind::Seq => "Seq",
                    GroupKind::Par => "Par",
                };
                let kids: Vec<String> = sp.children.iter().map(ToString::to_string).collect();
                write!(f, "{name}([{}], ", kids.join(", "))?;
                fmt_labels(f, &sp.labels)?;
                write!(f, ")")
            }
        }
    }
}

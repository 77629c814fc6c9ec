//! Edit operations over selections.
//!
//! Every operation works on the flat event view: selected notes are edited,
//! the rest of the score is carried over, and the result is renormalized.
//! Nothing is applied unless the whole edit validates. The returned
//! `affected` paths locate the edited leaves in the new tree.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    beats_eq, flatten_with_paths, leaf_event, ModelError, Music, Path, Pitch, PitchClass, Scale, ScoreMeta,
    TimedEvent,
};
use crate::normalize::normalize;
use crate::query::Selection;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TransformError {
    #[error("nothing selected")]
    NothingSelected,
    #[error("pitch out of range")]
    PitchOutOfRange(i32),
    #[error("retrograde collision")]
    RetrogradeCollision,
    #[error("no tonal context")]
    NoTonalContext,
    #[error("note not in scale")]
    NotInScale(String),
    #[error("empty score not allowed")]
    EmptyScore,
    #[error("invalid path {0}")]
    InvalidPath(Path),
    #[error("invalid operation: {0}")]
    InvalidOperation(String),
    #[error("{0}")]
    Model(ModelError),
}

impl From<ModelError> for TransformError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::PitchOutOfRange(n) => TransformError::PitchOutOfRange(n),
            ModelError::EmptyScore => TransformError::EmptyScore,
            other => TransformError::Model(other),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum OperationKind {
    Transpose,
    TransposeDiatonic,
    Invert,
    InvertAt,
    Retrograde,
    DeleteAsRest,
    DeleteAndShift,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PitchSpec {
    pub pc: i32,
    pub oct: i32,
}

impl PitchSpec {
    pub fn to_pitch(self) -> Result<Pitch, ModelError> {
        Pitch::from_parts(self.pc, self.oct)
    }
}

/// `{"kind":"transpose","semitones":2}`, `{"kind":"invertAt","axisPitch":{"pc":7,"oct":4}}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct OperationDescriptor {
    pub kind: OperationKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub semitones: Option<i32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degrees: Option<i32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axis_pitch: Option<PitchSpec>,
}

impl OperationDescriptor {
    fn bare(kind: OperationKind) -> Self {
        OperationDescriptor {
            kind,
            semitones: None,
            degrees: None,
            axis_pitch: None,
        }
    }

    pub fn transpose(semitones: i32) -> Self {
        OperationDescriptor {
            semitones: Some(semitones),
            ..Self::bare(OperationKind::Transpose)
        }
    }

    pub fn transpose_diatonic(degrees: i32) -> Self {
        OperationDescriptor {
            degrees: Some(degrees),
            ..Self::bare(OperationKind::TransposeDiatonic)
        }
    }

    pub fn invert() -> Self {
        Self::bare(OperationKind::Invert)
    }

    pub fn invert_at(pc: i32, oct: i32) -> Self {
        OperationDescriptor {
            axis_pitch: Some(PitchSpec { pc, oct }),
            ..Self::bare(OperationKind::InvertAt)
        }
    }

    pub fn retrograde() -> Self {
        Self::bare(OperationKind::Retrograde)
    }

    pub fn delete_as_rest() -> Self {
        Self::bare(OperationKind::DeleteAsRest)
    }

    pub fn delete_and_shift() -> Self {
        Self::bare(OperationKind::DeleteAndShift)
    }

    pub fn validate(&self) -> Result<(), TransformError> {
        let missing = |what: &str| Err(TransformError::InvalidOperation(format!("{what} required")));
        match self.kind {
            OperationKind::Transpose if self.semitones.is_none() => missing("semitones"),
            OperationKind::TransposeDiatonic if self.degrees.is_none() => missing("degrees"),
            OperationKind::InvertAt => match self.axis_pitch {
                None => missing("axisPitch"),
                Some(p) => p.to_pitch().map(|_| ()).map_err(TransformError::from),
            },
            _ => Ok(()),
        }
    }

    /// Compact call form such as `transpose(12, ` for echoing a command.
    pub fn render(&self, target: &str) -> String {
        match self.kind {
            OperationKind::Transpose => format!("transpose({}, {target})", self.semitones.unwrap_or(0)),
            OperationKind::TransposeDiatonic => {
                format!("transposeDiatonic({}, {target})", self.degrees.unwrap_or(0))
            }
            OperationKind::Invert => format!("invert({target})"),
            OperationKind::InvertAt => match self.axis_pitch.and_then(|p| p.to_pitch().ok()) {
                Some(p) => format!(
                    "invertAt(({},{}), {target})",
                    p.class.map(|c| c.name()).unwrap_or("_"),
                    p.octave.map(|o| o.value()).unwrap_or_default()
                ),
                None => format!("invertAt(_, {target})"),
            },
            OperationKind::Retrograde => format!("retro({target})"),
            OperationKind::DeleteAsRest => format!("deleteAsRest({target})"),
            OperationKind::DeleteAndShift => format!("deleteAndShift({target})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EditResult {
    pub music: Music,
    /// Leaves of the new tree that the edit produced or moved.
    pub affected: Vec<Path>,
}

/// Selected notes, in selection order, and every other note.
struct Split {
    selected: Vec<(TimedEvent, Path)>,
    others: Vec<TimedEvent>,
}

fn split(sel: &Selection, m: &Music, meta: &ScoreMeta) -> Result<Split, TransformError> {
    let leaves = m.leaves();
    let mut is_selected = vec![false; leaves.len()];
    let mut selected = Vec::new();
    for p in &sel.hits {
        let idx = leaves
            .binary_search_by(|(lp, _)| lp.cmp(p))
            .map_err(|_| TransformError::InvalidPath(p.clone()))?;
        if is_selected[idx] {
            continue;
        }
        is_selected[idx] = true;
        let leaf = leaves[idx].1;
        if let Music::Note(_) = leaf {
            let ev = leaf_event(leaf, meta).ok_or_else(|| ModelError::AbstractLeaf(p.clone()))?;
            selected.push((ev, p.clone()));
        }
    }
    if selected.is_empty() {
        return Err(TransformError::NothingSelected);
    }
    let mut others = Vec::new();
    for (i, (p, leaf)) in leaves.iter().enumerate() {
        if !is_selected[i] && matches!(leaf, Music::Note(_)) {
            others.push(leaf_event(leaf, meta).ok_or_else(|| ModelError::AbstractLeaf(p.clone()))?);
        }
    }
    Ok(Split { selected, others })
}

/// Rebuilds the tree and locates `edited` events in it.
fn rebuild(edited: Vec<TimedEvent>, others: Vec<TimedEvent>, meta: &ScoreMeta) -> Result<EditResult, TransformError> {
    for ev in &edited {
        // Validates ranges and onsets before anything is committed.
        ev.to_leaf(meta)?;
    }
    let mut all = others;
    all.extend(edited.iter().cloned());
    let music = normalize(&all, meta)?;
    let affected = locate(&music, meta, &edited)?;
    Ok(EditResult { music, affected })
}

/// Paths of leaves matching `targets` as a multiset, in document order.
pub fn locate(m: &Music, meta: &ScoreMeta, targets: &[TimedEvent]) -> Result<Vec<Path>, ModelError> {
    let flat = flatten_with_paths(m, meta)?;
    let mut used = vec![false; flat.len()];
    let mut out = Vec::new();
    for t in targets {
        let found = flat.iter().enumerate().position(|(i, (ev, _))| {
            !used[i] && ev.same_timing_and_pitch(t) && ev.contexts == t.contexts
        });
        if let Some(i) = found {
            used[i] = true;
            out.push(flat[i].1.clone());
        }
    }
    out.sort();
    Ok(out)
}

fn map_pitches(
    sel: &Selection,
    m: &Music,
    meta: &ScoreMeta,
    f: impl Fn(i32, &TimedEvent, &Path) -> Result<i32, TransformError>,
) -> Result<EditResult, TransformError> {
    let Split { selected, others } = split(sel, m, meta)?;
    let mut edited = Vec::with_capacity(selected.len());
    for (mut ev, path) in selected {
        let p = ev.pitch.ok_or(ModelError::IncompletePitch)?;
        let np = f(p, &ev, &path)?;
        Pitch::from_number(np, meta.octave_offset)?;
        ev.pitch = Some(np);
        edited.push(ev);
    }
    rebuild(edited, others, meta)
}

pub fn transpose(n: i32, sel: &Selection, m: &Music, meta: &ScoreMeta) -> Result<EditResult, TransformError> {
    map_pitches(sel, m, meta, |p, _, _| Ok(p + n))
}

pub fn invert_at(axis: Pitch, sel: &Selection, m: &Music, meta: &ScoreMeta) -> Result<EditResult, TransformError> {
    let a = axis.number(meta.octave_offset)?;
    map_pitches(sel, m, meta, |p, _, _| Ok(2 * a - p))
}

/// Pitch of the earliest selected note; ties go to the lowest pitch, then
/// document order.
pub fn first_pitch(sel: &Selection, m: &Music, meta: &ScoreMeta) -> Result<Pitch, TransformError> {
    let Split { selected, .. } = split(sel, m, meta)?;
    let first = selected
        .iter()
        .min_by(|a, b| {
            a.0.onset
                .total_cmp(&b.0.onset)
                .then(a.0.pitch.cmp(&b.0.pitch))
                .then(a.1.cmp(&b.1))
        })
        .expect("non-empty");
    Ok(Pitch::from_number(first.0.pitch.ok_or(ModelError::IncompletePitch)?, meta.octave_offset)?)
}

pub fn invert(sel: &Selection, m: &Music, meta: &ScoreMeta) -> Result<EditResult, TransformError> {
    let axis = first_pitch(sel, m, meta)?;
    invert_at(axis, sel, m, meta)
}

/// Mirrors the selected notes in time within their own span.
pub fn retrograde(sel: &Selection, m: &Music, meta: &ScoreMeta) -> Result<EditResult, TransformError> {
    let Split { selected, others } = split(sel, m, meta)?;
    let start = selected.iter().map(|(e, _)| e.onset).fold(f64::INFINITY, f64::min);
    let end = selected.iter().map(|(e, _)| e.end()).fold(f64::NEG_INFINITY, f64::max);
    let mut edited = Vec::with_capacity(selected.len());
    for (mut ev, _) in selected {
        ev.onset = start + end - ev.end();
        if others.iter().any(|o| o.same_timing_and_pitch(&ev)) {
            return Err(TransformError::RetrogradeCollision);
        }
        edited.push(ev);
    }
    rebuild(edited, others, meta)
}

fn scale_for<'m>(m: &'m Music, path: &Path) -> Option<&'m Scale> {
    let idx = path.indices();
    (0..=idx.len())
        .rev()
        .filter_map(|n| m.get(&Path(idx[..n].to_vec())))
        .find_map(|node| node.contexts().scale.as_ref())
}

/// Moves each selected note by `degrees` steps of the scale in its context.
pub fn transpose_diatonic(degrees: i32, sel: &Selection, m: &Music, meta: &ScoreMeta) -> Result<EditResult, TransformError> {
    map_pitches(sel, m, meta, |p, _, path| {
        let scale = scale_for(m, path).ok_or(TransformError::NoTonalContext)?;
        let pc = PitchClass::wrapping(p);
        let deg = scale
            .degree_of(pc)
            .ok_or_else(|| TransformError::NotInScale(pc.name().to_string()))?;
        let iv = scale.intervals();
        let len = iv.len() as i32;
        let base = p - iv[deg] as i32;
        let total = deg as i32 + degrees;
        Ok(base + 12 * total.div_euclid(len) + iv[total.rem_euclid(len) as usize] as i32)
    })
}

/// Removes the selected notes; gaps become rests on renormalization.
pub fn delete_as_rest(sel: &Selection, m: &Music, meta: &ScoreMeta) -> Result<EditResult, TransformError> {
    let Split { selected, others } = split(sel, m, meta)?;
    if others.is_empty() {
        return Err(TransformError::EmptyScore);
    }
    let music = normalize(&others, meta)?;
    let mut affected: Vec<Path> = flatten_with_paths(&music, meta)?
        .into_iter()
        .filter(|(ev, _)| {
            !ev.is_note()
                && selected
                    .iter()
                    .any(|(d, _)| ev.onset < d.end() - 1e-9 && d.onset < ev.end() - 1e-9)
        })
        .map(|(_, p)| p)
        .collect();
    affected.sort();
    Ok(EditResult { music, affected })
}

/// Removes the selected notes and closes the gap inside each sequence: a
/// child of a `Seq` whose notes are all deleted vacates its time, and later
/// children of the same `Seq` move earlier by the vacated total.
pub fn delete_and_shift(sel: &Selection, m: &Music, meta: &ScoreMeta) -> Result<EditResult, TransformError> {
    let Split { selected, others } = split(sel, m, meta)?;
    if others.is_empty() {
        return Err(TransformError::EmptyScore);
    }
    let deleted: std::collections::BTreeSet<Path> = selected.into_iter().map(|(_, p)| p).collect();

    struct Walk<'a> {
        meta: &'a ScoreMeta,
        deleted: &'a std::collections::BTreeSet<Path>,
        kept: Vec<TimedEvent>,
        moved: Vec<TimedEvent>,
    }

    impl Walk<'_> {
        fn fully_deleted(&self, node: &Music, path: &Path) -> bool {
            let mut notes = node
                .leaves()
                .into_iter()
                .filter(|(_, l)| matches!(l, Music::Note(_)))
                .peekable();
            notes.peek().is_some()
                && notes.all(|(p, _)| {
                    let mut full = path.0.clone();
                    full.extend(p.0);
                    self.deleted.contains(&Path(full))
                })
        }

        fn node_span(&self, node: &Music) -> Result<f64, ModelError> {
            let (s, e) = node.span(self.meta)?;
            Ok(e - s)
        }

        fn visit(&mut self, node: &Music, path: Path, shift: f64) -> Result<(), ModelError> {
            match node {
                Music::Note(_) => {
                    if !self.deleted.contains(&path) {
                        let mut ev = leaf_event(node, self.meta).ok_or(ModelError::AbstractLeaf(path))?;
                        if shift > 0.0 && !beats_eq(shift, 0.0) {
                            ev.onset -= shift;
                            self.moved.push(ev.clone());
                        }
                        self.kept.push(ev);
                    }
                }
                Music::Rest(_) => {}
                Music::Par(g) => {
                    for (i, c) in g.children.iter().enumerate() {
                        self.visit(c, path.child(i), shift)?;
                    }
                }
                Music::Seq(g) => {
                    let mut vacated = 0.0;
                    for (i, c) in g.children.iter().enumerate() {
                        let cp = path.child(i);
                        if !matches!(c, Music::Rest(_)) && self.fully_deleted(c, &cp) {
                            vacated += self.node_span(c)?;
                        } else {
                            self.visit(c, cp, shift + vacated)?;
                        }
                    }
                }
            }
            Ok(())
        }
    }

    let mut walk = Walk {
        meta,
        deleted: &deleted,
        kept: Vec::new(),
        moved: Vec::new(),
    };
    walk.visit(m, Path::root(), 0.0)?;
    let Walk { kept, moved, .. } = walk;
    let music = normalize(&kept, meta)?;
    let affected = locate(&music, meta, &moved)?;
    Ok(EditResult { music, affected })
}

/// Dispatches a validated descriptor.
pub fn apply_operation(
    desc: &OperationDescriptor,
    sel: &Selection,
    m: &Music,
    meta: &ScoreMeta,
) -> Result<EditResult, TransformError> {
    desc.validate()?;
    match desc.kind {
        OperationKind::Transpose => transpose(desc.semitones.unwrap_or(0), sel, m, meta),
        OperationKind::TransposeDiatonic => transpose_diatonic(desc.degrees.unwrap_or(0), sel, m, meta),
        OperationKind::Invert => invert(sel, m, meta),
        OperationKind::InvertAt => {
            let axis = desc.axis_pitch.expect("validated").to_pitch()?;
            invert_at(axis, sel, m, meta)
        }
        OperationKind::Retrograde => retrograde(sel, m, meta),
        OperationKind::DeleteAsRest => delete_as_rest(sel, m, meta),
        OperationKind::DeleteAndShift => delete_and_shift(sel, m, meta),
    }
}

//! Score primitives, grouping nodes and the flat timed-event view.
//!
//! Every field of a [`Note`] or [`Rest`] is optional so the same types serve
//! both as concrete score content and as partially specified descriptions.
//! A leaf stored in a score is *concrete*: pitch class, octave, duration,
//! measure and beat are all present.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;
use thiserror::Error;

/// Tolerance used for equality of onsets and durations, in beats.
pub const BEAT_EPSILON: f64 = 1e-9;

pub const MIN_OCTAVE: i32 = -1;
pub const MAX_OCTAVE: i32 = 10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("incomplete pitch")]
    IncompletePitch,
    #[error("pitch out of range: {0}")]
    PitchOutOfRange(i32),
    #[error("incomplete onset")]
    IncompleteOnset,
    #[error("negative time: {0}")]
    NegativeTime(f64),
    #[error("abstract leaf in concrete score at {0}")]
    AbstractLeaf(Path),
    #[error("no scale in context")]
    NoScale,
    #[error("empty score not allowed")]
    EmptyScore,
    #[error("invalid {what}: {value}")]
    InvalidValue { what: &'static str, value: String },
}

fn invalid(what: &'static str, value: impl fmt::Display) -> ModelError {
    ModelError::InvalidValue {
        what,
        value: value.to_string(),
    }
}

/// `true` when two beat values are equal within [`BEAT_EPSILON`].
pub fn beats_eq(a: f64, b: f64) -> bool {
    (a - b).abs() <= BEAT_EPSILON
}

/// Semitone class in `0..=11`, with C = 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct PitchClass(u8);

const SHARP_NAMES: [&str; 12] = [
    "C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B",
];

impl PitchClass {
    pub const C: PitchClass = PitchClass(0);

    pub fn new(value: i32) -> Result<Self, ModelError> {
        if (0..12).contains(&value) {
            Ok(PitchClass(value as u8))
        } else {
            Err(invalid("pitch class", value))
        }
    }

    /// Reduces any integer modulo 12.
    pub fn wrapping(value: i32) -> Self {
        PitchClass(value.rem_euclid(12) as u8)
    }

    pub fn value(self) -> i32 {
        self.0 as i32
    }

    /// Name spelled with sharps.
    pub fn name(self) -> &'static str {
        SHARP_NAMES[self.0 as usize]
    }
}

impl fmt::Display for PitchClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct Octave(i8);

impl Octave {
    pub fn new(value: i32) -> Result<Self, ModelError> {
        if (MIN_OCTAVE..=MAX_OCTAVE).contains(&value) {
            Ok(Octave(value as i8))
        } else {
            Err(invalid("octave", value))
        }
    }

    pub fn value(self) -> i32 {
        self.0 as i32
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct Pitch {
    pub class: Option<PitchClass>,
    pub octave: Option<Octave>,
}

impl Pitch {
    pub fn new(class: PitchClass, octave: Octave) -> Self {
        Pitch {
            class: Some(class),
            octave: Some(octave),
        }
    }

    /// Builds a concrete pitch from raw integers, validating both.
    pub fn from_parts(class: i32, octave: i32) -> Result<Self, ModelError> {
        Ok(Pitch::new(PitchClass::new(class)?, Octave::new(octave)?))
    }

    pub fn is_concrete(&self) -> bool {
        self.class.is_some() && self.octave.is_some()
    }

    /// `class + 12 * (octave + k)`.
    pub fn number(&self, k: i32) -> Result<i32, ModelError> {
        match (self.class, self.octave) {
            (Some(pc), Some(oct)) => Ok(pc.value() + 12 * (oct.value() + k)),
            _ => Err(ModelError::IncompletePitch),
        }
    }

    pub fn from_number(n: i32, k: i32) -> Result<Self, ModelError> {
        let octave = n.div_euclid(12) - k;
        let class = n.rem_euclid(12);
        match Octave::new(octave) {
            Ok(oct) => Ok(Pitch::new(PitchClass(class as u8), oct)),
            Err(_) => Err(ModelError::PitchOutOfRange(n)),
        }
    }
}

impl fmt::Display for Pitch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.class {
            Some(pc) => f.write_str(pc.name())?,
            None => f.write_str("_")?,
        }
        match self.octave {
            Some(o) => write!(f, "{}", o.value()),
            None => Ok(()),
        }
    }
}

/// Lowest and highest pitch numbers representable for a given octave offset.
pub fn pitch_number_range(k: i32) -> (i32, i32) {
    (12 * (MIN_OCTAVE + k), 12 * (MAX_OCTAVE + k) + 11)
}

/// Position as (measure, beat), both counted from zero.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Onset {
    pub measure: Option<u32>,
    pub beat: Option<f64>,
}

impl Onset {
    pub fn at(measure: u32, beat: f64) -> Self {
        Onset {
            measure: Some(measure),
            beat: Some(beat),
        }
    }

    pub fn is_concrete(&self) -> bool {
        self.measure.is_some() && self.beat.is_some()
    }

    pub fn absolute(&self, meta: &ScoreMeta) -> Result<f64, ModelError> {
        match (self.measure, self.beat) {
            (Some(m), Some(b)) => Ok(m as f64 * meta.beats_per_measure + b),
            _ => Err(ModelError::IncompleteOnset),
        }
    }

    pub fn from_absolute(beats: f64, meta: &ScoreMeta) -> Result<Self, ModelError> {
        if !beats.is_finite() {
            return Err(invalid("time", beats));
        }
        if beats < -BEAT_EPSILON {
            return Err(ModelError::NegativeTime(beats));
        }
        let beats = beats.max(0.0);
        let bpm = meta.beats_per_measure;
        let mut measure = (beats / bpm).floor();
        // Snapping to a 1e-9 grid keeps absolute -> onset -> absolute stable.
        let mut beat = ((beats - measure * bpm) * 1e9).round() / 1e9;
        // Snap values sitting a hair below a barline onto it.
        if bpm - beat <= BEAT_EPSILON {
            measure += 1.0;
            beat = 0.0;
        } else if beat < BEAT_EPSILON {
            beat = 0.0;
        }
        Ok(Onset::at(measure as u32, beat))
    }
}

/// A strictly positive length in beats.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize)]
#[serde(transparent)]
pub struct Duration(f64);

impl Duration {
    pub fn new(beats: f64) -> Result<Self, ModelError> {
        if beats.is_finite() && beats > 0.0 {
            Ok(Duration(beats))
        } else {
            Err(invalid("duration", beats))
        }
    }

    pub fn beats(self) -> f64 {
        self.0
    }
}

/// A scale as a root plus ascending semitone offsets within one octave.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Scale {
    pub root: PitchClass,
    intervals: Vec<u8>,
}

impl Scale {
    pub fn new(root: PitchClass, intervals: Vec<u8>) -> Result<Self, ModelError> {
        let ok = intervals.first() == Some(&0)
            && intervals.windows(2).all(|w| w[0] < w[1])
            && intervals.iter().all(|&i| i < 12);
        if ok {
            Ok(Scale { root, intervals })
        } else {
            Err(invalid("scale intervals", format!("{intervals:?}")))
        }
    }

    pub fn major(root: PitchClass) -> Self {
        Scale {
            root,
            intervals: vec![0, 2, 4, 5, 7, 9, 11],
        }
    }

    pub fn intervals(&self) -> &[u8] {
        &self.intervals
    }

    pub fn len(&self) -> usize {
        self.intervals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    /// Scale degree (0-based) of a pitch class, if it lies on the scale.
    pub fn degree_of(&self, pc: PitchClass) -> Option<usize> {
        let offset = (pc.value() - self.root.value()).rem_euclid(12) as u8;
        self.intervals.iter().position(|&i| i == offset)
    }
}

/// Labels and environmental information attached to leaves and groups.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Contexts {
    pub labels: BTreeSet<String>,
    pub scale: Option<Scale>,
    pub volume: Option<u8>,
    pub extra: BTreeMap<String, String>,
}

impl Contexts {
    pub fn with_label(label: impl Into<String>) -> Self {
        let mut c = Contexts::default();
        c.labels.insert(label.into());
        c
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty() && self.scale.is_none() && self.volume.is_none() && self.extra.is_empty()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.labels.iter().any(|l| l.is_empty()) {
            return Err(invalid("label", "\"\""));
        }
        if let Some(v) = self.volume {
            if v > 127 {
                return Err(invalid("volume", v));
            }
        }
        Ok(())
    }
}

/// A degree within the scale carried by its contexts.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleIndex {
    pub degree: i32,
    pub contexts: Contexts,
}

impl ScaleIndex {
    pub fn to_pitch(&self, reference: Octave, k: i32) -> Result<Pitch, ModelError> {
        let scale = self.contexts.scale.as_ref().ok_or(ModelError::NoScale)?;
        let len = scale.len() as i32;
        let base = Pitch::new(scale.root, reference).number(k)?;
        let n = base
            + 12 * self.degree.div_euclid(len)
            + scale.intervals[self.degree.rem_euclid(len) as usize] as i32;
        Pitch::from_number(n, k)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Note {
    pub pitch: Pitch,
    pub duration: Option<Duration>,
    pub onset: Onset,
    pub contexts: Contexts,
}

impl Note {
    pub fn new(pitch: Pitch, duration: Duration, onset: Onset) -> Self {
        Note {
            pitch,
            duration: Some(duration),
            onset,
            contexts: Contexts::default(),
        }
    }

    pub fn is_concrete(&self) -> bool {
        self.pitch.is_concrete() && self.duration.is_some() && self.onset.is_concrete()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Rest {
    pub duration: Option<Duration>,
    pub onset: Onset,
    pub contexts: Contexts,
}

impl Rest {
    pub fn is_concrete(&self) -> bool {
        self.duration.is_some() && self.onset.is_concrete()
    }
}

/// Children of a `Seq` or `Par` node.
#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    pub children: Vec<Music>,
    pub contexts: Contexts,
}

impl Group {
    pub fn new(children: Vec<Music>) -> Self {
        Group {
            children,
            contexts: Contexts::default(),
        }
    }
}

/// An n-ary music tree.
#[derive(Debug, Clone, PartialEq)]
pub enum Music {
    Note(Note),
    Rest(Rest),
    Seq(Group),
    Par(Group),
}

/// Child indices from the root of a tree to one of its nodes.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct Path(pub Vec<usize>);

impl Path {
    pub fn root() -> Self {
        Path(Vec::new())
    }

    pub fn child(&self, index: usize) -> Self {
        let mut v = self.0.clone();
        v.push(index);
        Path(v)
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn parent(&self) -> Option<(Path, usize)> {
        let (&last, rest) = self.0.split_last()?;
        Some((Path(rest.to_vec()), last))
    }
}

impl fmt::Display for Path {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, idx) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{idx}")?;
        }
        write!(f, "]")
    }
}

impl Music {
    pub fn seq(children: Vec<Music>) -> Self {
        Music::Seq(Group::new(children))
    }

    pub fn par(children: Vec<Music>) -> Self {
        Music::Par(Group::new(children))
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, Music::Note(_) | Music::Rest(_))
    }

    pub fn children(&self) -> &[Music] {
        match self {
            Music::Seq(g) | Music::Par(g) => &g.children,
            _ => &[],
        }
    }

    pub fn contexts(&self) -> &Contexts {
        match self {
            Music::Note(n) => &n.contexts,
            Music::Rest(r) => &r.contexts,
            Music::Seq(g) | Music::Par(g) => &g.contexts,
        }
    }

    pub fn get(&self, path: &Path) -> Option<&Music> {
        let mut node = self;
        for &i in path.indices() {
            node = node.children().get(i)?;
        }
        Some(node)
    }

    pub fn get_mut(&mut self, path: &Path) -> Option<&mut Music> {
        let mut node = self;
        for &i in path.indices() {
            node = match node {
                Music::Seq(g) | Music::Par(g) => g.children.get_mut(i)?,
                _ => return None,
            };
        }
        Some(node)
    }

    /// Leaves with their paths, in document order.
    pub fn leaves(&self) -> Vec<(Path, &Music)> {
        let mut out = Vec::new();
        fn walk<'a>(m: &'a Music, path: Path, out: &mut Vec<(Path, &'a Music)>) {
            match m {
                Music::Note(_) | Music::Rest(_) => out.push((path, m)),
                Music::Seq(g) | Music::Par(g) => {
                    for (i, c) in g.children.iter().enumerate() {
                        walk(c, path.child(i), out);
                    }
                }
            }
        }
        walk(self, Path::root(), &mut out);
        out
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            Music::Note(_) | Music::Rest(_) => 1,
            Music::Seq(g) | Music::Par(g) => g.children.iter().map(Music::leaf_count).sum(),
        }
    }

    pub fn note_count(&self) -> usize {
        match self {
            Music::Note(_) => 1,
            Music::Rest(_) => 0,
            Music::Seq(g) | Music::Par(g) => g.children.iter().map(Music::note_count).sum(),
        }
    }

    /// Checks the type-level invariants: non-empty groups, valid contexts.
    pub fn validate(&self) -> Result<(), ModelError> {
        self.contexts().validate()?;
        match self {
            Music::Seq(g) | Music::Par(g) => {
                if g.children.is_empty() {
                    return Err(invalid("group", "empty children"));
                }
                g.children.iter().try_for_each(Music::validate)
            }
            _ => Ok(()),
        }
    }

    /// Absolute start and end of this subtree in beats.
    pub fn span(&self, meta: &ScoreMeta) -> Result<(f64, f64), ModelError> {
        let events = flatten(self, meta)?;
        let start = events.iter().map(|e| e.onset).fold(f64::INFINITY, f64::min);
        let end = events.iter().map(TimedEvent::end).fold(f64::NEG_INFINITY, f64::max);
        Ok((start, end))
    }
}

/// Global score settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScoreMeta {
    #[serde(rename = "beatsPerMeasure")]
    pub beats_per_measure: f64,
    #[serde(rename = "tempoBPM")]
    pub tempo_bpm: f64,
    #[serde(rename = "octaveOffsetK")]
    pub octave_offset: i32,
}

impl Default for ScoreMeta {
    fn default() -> Self {
        ScoreMeta {
            beats_per_measure: 4.0,
            tempo_bpm: 120.0,
            octave_offset: 1,
        }
    }
}

impl ScoreMeta {
    pub fn with_meter(beats_per_measure: f64) -> Self {
        ScoreMeta {
            beats_per_measure,
            ..ScoreMeta::default()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.beats_per_measure.is_finite() && self.beats_per_measure > 0.0) {
            return Err(invalid("beatsPerMeasure", self.beats_per_measure));
        }
        if !(self.tempo_bpm.is_finite() && self.tempo_bpm > 0.0) {
            return Err(invalid("tempoBPM", self.tempo_bpm));
        }
        Ok(())
    }
}

/// A score tree together with its settings.
#[derive(Debug, Clone, PartialEq)]
pub struct Score {
    pub music: Music,
    pub meta: ScoreMeta,
}

impl Score {
    pub fn new(music: Music, meta: ScoreMeta) -> Self {
        Score { music, meta }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Rest,
    Note,
}

/// One leaf placed on an absolute beat axis.
#[derive(Debug, Clone, PartialEq)]
pub struct TimedEvent {
    pub kind: EventKind,
    pub pitch: Option<i32>,
    pub onset: f64,
    pub duration: f64,
    pub contexts: Contexts,
}

impl TimedEvent {
    pub fn note(pitch: i32, onset: f64, duration: f64) -> Self {
        TimedEvent {
            kind: EventKind::Note,
            pitch: Some(pitch),
            onset,
            duration,
            contexts: Contexts::default(),
        }
    }

    pub fn rest(onset: f64, duration: f64) -> Self {
        TimedEvent {
            kind: EventKind::Rest,
            pitch: None,
            onset,
            duration,
            contexts: Contexts::default(),
        }
    }

    pub fn end(&self) -> f64 {
        self.onset + self.duration
    }

    pub fn is_note(&self) -> bool {
        self.kind == EventKind::Note
    }

    /// Flat-view ordering: onset, then rests before notes, then pitch.
    pub fn cmp_flat(&self, other: &Self) -> Ordering {
        self.onset
            .total_cmp(&other.onset)
            .then(self.pitch.cmp(&other.pitch))
    }

    /// Canonical ordering used before normalization.
    pub fn cmp_canonical(&self, other: &Self) -> Ordering {
        self.cmp_flat(other)
            .then(self.duration.total_cmp(&other.duration))
            .then_with(|| self.contexts.cmp(&other.contexts))
    }

    /// Equal onset, pitch and duration within tolerance.
    pub fn same_timing_and_pitch(&self, other: &Self) -> bool {
        self.kind == other.kind
            && self.pitch == other.pitch
            && beats_eq(self.onset, other.onset)
            && beats_eq(self.duration, other.duration)
    }

    /// Converts back into a concrete leaf.
    pub fn to_leaf(&self, meta: &ScoreMeta) -> Result<Music, ModelError> {
        let onset = Onset::from_absolute(self.onset, meta)?;
        let duration = Duration::new(self.duration)?;
        Ok(match (self.kind, self.pitch) {
            (EventKind::Note, Some(p)) => Music::Note(Note {
                pitch: Pitch::from_number(p, meta.octave_offset)?,
                duration: Some(duration),
                onset,
                contexts: self.contexts.clone(),
            }),
            (EventKind::Note, None) => return Err(ModelError::IncompletePitch),
            (EventKind::Rest, _) => Music::Rest(Rest {
                duration: Some(duration),
                onset,
                contexts: self.contexts.clone(),
            }),
        })
    }
}

/// Event view of one concrete leaf.
pub fn leaf_event(leaf: &Music, meta: &ScoreMeta) -> Option<TimedEvent> {
    match leaf {
        Music::Note(n) if n.is_concrete() => Some(TimedEvent {
            kind: EventKind::Note,
            pitch: n.pitch.number(meta.octave_offset).ok(),
            onset: n.onset.absolute(meta).ok()?,
            duration: n.duration?.beats(),
            contexts: n.contexts.clone(),
        }),
        Music::Rest(r) if r.is_concrete() => Some(TimedEvent {
            kind: EventKind::Rest,
            pitch: None,
            onset: r.onset.absolute(meta).ok()?,
            duration: r.duration?.beats(),
            contexts: r.contexts.clone(),
        }),
        _ => None,
    }
}

/// Flat events paired with the path of the leaf they came from, in flat order.
pub fn flatten_with_paths(m: &Music, meta: &ScoreMeta) -> Result<Vec<(TimedEvent, Path)>, ModelError> {
    let mut out = Vec::with_capacity(m.leaf_count());
    for (path, leaf) in m.leaves() {
        let ev = leaf_event(leaf, meta).ok_or_else(|| ModelError::AbstractLeaf(path.clone()))?;
        out.push((ev, path));
    }
    // Stable: equal keys keep document order.
    out.sort_by(|a, b| a.0.cmp_flat(&b.0));
    Ok(out)
}

pub fn flatten(m: &Music, meta: &ScoreMeta) -> Result<Vec<TimedEvent>, ModelError> {
    Ok(flatten_with_paths(m, meta)?.into_iter().map(|(e, _)| e).collect())
}

/// Human-readable description of a concrete note, e.g. `G4, measure 0, beat 2`.
pub fn describe_leaf(leaf: &Music) -> String {
    fn beat(b: Option<f64>) -> String {
        match b {
            Some(b) if b.fract() == 0.0 => format!("{}", b as i64),
            Some(b) => format!("{b}"),
            None => "_".into(),
        }
    }
    fn measure(m: Option<u32>) -> String {
        m.map_or_else(|| "_".into(), |m| m.to_string())
    }
    match leaf {
        Music::Note(n) => format!(
            "{}, measure {}, beat {}",
            n.pitch,
            measure(n.onset.measure),
            beat(n.onset.beat)
        ),
        Music::Rest(r) => format!(
            "rest, measure {}, beat {}",
            measure(r.onset.measure),
            beat(r.onset.beat)
        ),
        Music::Seq(g) => format!("seq of {}", g.children.len()),
        Music::Par(g) => format!("par of {}", g.children.len()),
    }
}

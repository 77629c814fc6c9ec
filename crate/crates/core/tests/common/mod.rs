#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::rngs::StdRng;
use rand::Rng;
use scoretalk_core::model::{
    Contexts, Duration, Group, Music, Note, Onset, Path, Pitch, Rest, ScoreMeta, TimedEvent,
};
use scoretalk_core::normalize::normalize;
use scoretalk_core::query::{FieldPattern, GroupKind, NotePattern, Pattern, RestPattern, StructPattern};

pub const LABELS: [&str; 2] = ["Part A", "Part B"];

pub fn meta() -> ScoreMeta {
    ScoreMeta::default()
}

/// Up to `max_len` notes on a quarter-beat grid, pitches 36..=84.
pub fn random_events(rng: &mut StdRng, max_len: usize, labelled: bool) -> Vec<TimedEvent> {
    let n = rng.random_range(1..=max_len);
    (0..n)
        .map(|_| {
            let mut ev = TimedEvent::note(
                rng.random_range(36..=84),
                rng.random_range(0..64) as f64 / 4.0,
                rng.random_range(1..=8) as f64 / 4.0,
            );
            if labelled && rng.random_bool(0.5) {
                ev.contexts = Contexts::with_label(LABELS[rng.random_range(0..LABELS.len())]);
            }
            ev
        })
        .collect()
}

/// Same as [`random_events`] with identical (pitch, onset, duration, labels)
/// duplicates removed.
pub fn random_distinct_events(rng: &mut StdRng, max_len: usize, labelled: bool) -> Vec<TimedEvent> {
    let mut seen = BTreeSet::new();
    random_events(rng, max_len, labelled)
        .into_iter()
        .filter(|e| seen.insert(key(e)))
        .collect()
}

/// Comparable identity of an event on a 1e-6 beat grid.
pub type Key = (bool, Option<i32>, i64, i64, Vec<String>);

pub fn key(e: &TimedEvent) -> Key {
    (
        e.is_note(),
        e.pitch,
        (e.onset * 1e6).round() as i64,
        (e.duration * 1e6).round() as i64,
        e.contexts.labels.iter().cloned().collect(),
    )
}

pub fn note_keys(events: &[TimedEvent]) -> Vec<Key> {
    let mut keys: Vec<Key> = events.iter().filter(|e| e.is_note()).map(key).collect();
    keys.sort();
    keys
}

/// Depth-first leaf walk with an explicit stack.
pub fn walk_leaves(m: &Music) -> Vec<(Path, &Music)> {
    let mut out = Vec::new();
    let mut stack = vec![(Vec::new(), m)];
    while let Some((path, node)) = stack.pop() {
        match node {
            Music::Note(_) | Music::Rest(_) => out.push((Path(path), node)),
            Music::Seq(g) | Music::Par(g) => {
                for (i, c) in g.children.iter().enumerate().rev() {
                    let mut p = path.clone();
                    p.push(i);
                    stack.push((p, c));
                }
            }
        }
    }
    out
}

/// Flat events computed straight from leaf fields.
pub fn leaf_events(m: &Music, meta: &ScoreMeta) -> Vec<TimedEvent> {
    walk_leaves(m)
        .into_iter()
        .map(|(_, leaf)| match leaf {
            Music::Note(n) => {
                let pn = n.pitch.class.unwrap().value() + 12 * (n.pitch.octave.unwrap().value() + meta.octave_offset);
                TimedEvent {
                    contexts: n.contexts.clone(),
                    ..TimedEvent::note(pn, absolute(&n.onset, meta), n.duration.unwrap().beats())
                }
            }
            Music::Rest(r) => TimedEvent {
                contexts: r.contexts.clone(),
                ..TimedEvent::rest(absolute(&r.onset, meta), r.duration.unwrap().beats())
            },
            _ => unreachable!(),
        })
        .collect()
}

pub fn absolute(o: &Onset, meta: &ScoreMeta) -> f64 {
    o.measure.unwrap() as f64 * meta.beats_per_measure + o.beat.unwrap()
}

fn span(m: &Music, meta: &ScoreMeta) -> (f64, f64) {
    leaf_events(m, meta)
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(s, e), ev| (s.min(ev.onset), e.max(ev.end())))
}

/// Structural rules of the normal form, checked independently of the
/// library's own validator.
pub fn check_structure(m: &Music, meta: &ScoreMeta) -> Result<(), String> {
    fn visit(m: &Music, meta: &ScoreMeta, root: bool, parent_seq: bool) -> Result<(), String> {
        match m {
            Music::Note(_) => Ok(()),
            Music::Rest(_) if parent_seq => Ok(()),
            Music::Rest(_) => Err("rest outside a sequence".into()),
            Music::Par(g) => {
                if g.children.len() < 2 {
                    return Err("singleton par".into());
                }
                if !root {
                    let evs: Vec<_> = g.children.iter().map(|c| leaf_events(c, meta)).collect();
                    let first = &evs[0];
                    for (c, e) in g.children.iter().zip(&evs) {
                        if e.len() != 1 || !matches!(c, Music::Note(_)) {
                            return Err("chord child is not a note".into());
                        }
                        if (e[0].onset - first[0].onset).abs() > 1e-9 || (e[0].duration - first[0].duration).abs() > 1e-9 {
                            return Err("chord is not uniform".into());
                        }
                    }
                }
                g.children.iter().try_for_each(|c| visit(c, meta, false, false))
            }
            Music::Seq(g) => {
                if g.children.len() < 2 {
                    return Err("singleton seq".into());
                }
                if matches!(g.children.first(), Some(Music::Rest(_))) || matches!(g.children.last(), Some(Music::Rest(_))) {
                    return Err("rest at sequence edge".into());
                }
                for w in g.children.windows(2) {
                    if matches!(w[0], Music::Rest(_)) && matches!(w[1], Music::Rest(_)) {
                        return Err("adjacent rests".into());
                    }
                    let (_, end) = span(&w[0], meta);
                    let (start, _) = span(&w[1], meta);
                    if (end - start).abs() > 1e-9 {
                        return Err(format!("gap or overlap in sequence: {end} vs {start}"));
                    }
                }
                if g.children.iter().any(|c| matches!(c, Music::Seq(_))) {
                    return Err("nested sequence".into());
                }
                g.children.iter().try_for_each(|c| visit(c, meta, false, true))
            }
        }
    }
    visit(m, meta, true, false)
}

pub fn melody(meta: &ScoreMeta, pitches: &[i32]) -> Music {
    let evs: Vec<_> = pitches
        .iter()
        .enumerate()
        .map(|(i, &p)| TimedEvent::note(p, i as f64, 1.0))
        .collect();
    normalize(&evs, meta).unwrap()
}

/// C C G G A A G as quarter notes from measure 0 beat 0.
pub fn twinkle() -> Music {
    melody(&meta(), &[60, 60, 67, 67, 69, 69, 67])
}

/// Two measures with exactly one F and a C on the first beat of measure 1.
pub const CONVERSATION_PITCHES: [i32; 8] = [60, 62, 64, 65, 60, 67, 64, 72];

pub fn conversation_melody() -> Music {
    melody(&meta(), &CONVERSATION_PITCHES)
}

// ---- random trees and patterns for the query oracle ----

fn random_contexts(rng: &mut StdRng) -> Contexts {
    let mut c = Contexts::default();
    for l in LABELS {
        if rng.random_bool(0.3) {
            c.labels.insert(l.to_string());
        }
    }
    c
}

fn random_leaf(rng: &mut StdRng) -> Music {
    let onset = Onset::at(rng.random_range(0..4), rng.random_range(0..16) as f64 / 4.0);
    let duration = Some(Duration::new(rng.random_range(1..=8) as f64 / 4.0).unwrap());
    let contexts = random_contexts(rng);
    if rng.random_bool(0.8) {
        Music::Note(Note {
            pitch: Pitch::from_parts(rng.random_range(0..12), rng.random_range(2..7)).unwrap(),
            duration,
            onset,
            contexts,
        })
    } else {
        Music::Rest(Rest {
            duration,
            onset,
            contexts,
        })
    }
}

/// An arbitrary tree of concrete leaves; not necessarily in normal form.
pub fn random_tree(rng: &mut StdRng, depth: u32) -> Music {
    if depth == 0 || rng.random_bool(0.3) {
        return random_leaf(rng);
    }
    let n = rng.random_range(1..=5);
    let children = (0..n).map(|_| random_tree(rng, depth - 1)).collect();
    let g = Group {
        children,
        contexts: random_contexts(rng),
    };
    if rng.random_bool(0.5) {
        Music::Seq(g)
    } else {
        Music::Par(g)
    }
}

fn random_field(rng: &mut StdRng, lo: i32, hi: i32, scale: f64) -> FieldPattern {
    let v = |rng: &mut StdRng| rng.random_range(lo..=hi) as f64 / scale;
    match rng.random_range(0..10) {
        0..=3 => FieldPattern::Any,
        4 | 5 => FieldPattern::Eq(v(rng)),
        6 => FieldPattern::Lt(v(rng)),
        7 => FieldPattern::Gt(v(rng)),
        8 => {
            if rng.random_bool(0.5) {
                FieldPattern::AtLeast(v(rng))
            } else {
                FieldPattern::AtMost(v(rng))
            }
        }
        _ => FieldPattern::OneOf((0..3).map(|_| v(rng)).collect()),
    }
}

fn random_labels(rng: &mut StdRng) -> BTreeSet<String> {
    LABELS
        .iter()
        .filter(|_| rng.random_bool(0.15))
        .map(|l| l.to_string())
        .collect()
}

pub fn random_leaf_pattern(rng: &mut StdRng) -> Pattern {
    if rng.random_bool(0.85) {
        Pattern::Note(NotePattern {
            pitch_class: random_field(rng, 0, 11, 1.0),
            octave: random_field(rng, 2, 6, 1.0),
            duration: random_field(rng, 1, 8, 4.0),
            measure: random_field(rng, 0, 3, 1.0),
            beat: random_field(rng, 0, 15, 4.0),
            labels: random_labels(rng),
        })
    } else {
        Pattern::Rest(RestPattern {
            duration: random_field(rng, 1, 8, 4.0),
            measure: random_field(rng, 0, 3, 1.0),
            beat: random_field(rng, 0, 15, 4.0),
            labels: random_labels(rng),
        })
    }
}

pub fn random_pattern(rng: &mut StdRng) -> Pattern {
    if rng.random_bool(0.8) {
        return random_leaf_pattern(rng);
    }
    let n = rng.random_range(1..=3);
    Pattern::Struct(StructPattern {
        kind: if rng.random_bool(0.5) { GroupKind::Seq } else { GroupKind::Par },
        children: (0..n).map(|_| random_leaf_pattern(rng)).collect(),
        labels: random_labels(rng),
    })
}

fn field_ok(f: &FieldPattern, v: f64) -> bool {
    let eq = |x: f64| (v - x).abs() <= 1e-9;
    match f {
        FieldPattern::Any => true,
        FieldPattern::Eq(x) => eq(*x),
        FieldPattern::Lt(x) => v < *x && !eq(*x),
        FieldPattern::Gt(x) => v > *x && !eq(*x),
        FieldPattern::AtLeast(x) => v > *x || eq(*x),
        FieldPattern::AtMost(x) => v < *x || eq(*x),
        FieldPattern::OneOf(xs) => xs.iter().any(|x| eq(*x)),
    }
}

/// Direct evaluation of a leaf pattern against a leaf.
pub fn oracle_leaf_match(p: &Pattern, leaf: &Music) -> bool {
    match (p, leaf) {
        (Pattern::Note(p), Music::Note(n)) => {
            field_ok(&p.pitch_class, n.pitch.class.unwrap().value() as f64)
                && field_ok(&p.octave, n.pitch.octave.unwrap().value() as f64)
                && field_ok(&p.duration, n.duration.unwrap().beats())
                && field_ok(&p.measure, n.onset.measure.unwrap() as f64)
                && field_ok(&p.beat, n.onset.beat.unwrap())
                && p.labels.iter().all(|l| n.contexts.labels.contains(l))
        }
        (Pattern::Rest(p), Music::Rest(r)) => {
            field_ok(&p.duration, r.duration.unwrap().beats())
                && field_ok(&p.measure, r.onset.measure.unwrap() as f64)
                && field_ok(&p.beat, r.onset.beat.unwrap())
                && p.labels.iter().all(|l| r.contexts.labels.contains(l))
        }
        _ => false,
    }
}

/// Brute-force selection: leaf patterns filter every leaf; struct patterns
/// scan every group's children left to right, taking each window that
/// matches and skipping past it.
pub fn oracle_select(p: &Pattern, m: &Music) -> Vec<Path> {
    let mut hits: Vec<Path> = match p {
        Pattern::Struct(sp) => {
            let mut hits = Vec::new();
            let mut stack = vec![(Vec::<usize>::new(), m)];
            while let Some((path, node)) = stack.pop() {
                let (kind, g) = match node {
                    Music::Seq(g) => (GroupKind::Seq, g),
                    Music::Par(g) => (GroupKind::Par, g),
                    _ => continue,
                };
                for (i, c) in g.children.iter().enumerate() {
                    let mut cp = path.clone();
                    cp.push(i);
                    stack.push((cp, c));
                }
                if kind != sp.kind || !sp.labels.iter().all(|l| g.contexts.labels.contains(l)) {
                    continue;
                }
                let k = sp.children.len();
                let mut i = 0;
                while i + k <= g.children.len() {
                    let ok = (0..k).all(|j| oracle_leaf_match(&sp.children[j], &g.children[i + j]));
                    if ok {
                        for j in 0..k {
                            let mut cp = path.clone();
                            cp.push(i + j);
                            for (lp, _) in walk_leaves(&g.children[i + j]) {
                                let mut full = cp.clone();
                                full.extend(lp.0);
                                hits.push(Path(full));
                            }
                        }
                        i += k;
                    } else {
                        i += 1;
                    }
                }
            }
            hits
        }
        leaf => walk_leaves(m)
            .into_iter()
            .filter(|(_, l)| oracle_leaf_match(leaf, l))
            .map(|(p, _)| p)
            .collect(),
    };
    hits.sort();
    hits.dedup();
    hits
}

/// Whitespace, TeX escapes and context ellipses removed, for comparing
/// rendered calls against the printed notation.
pub fn canonical_call(s: &str) -> String {
    s.replace("\\_", "_")
        .chars()
        .filter(|c| !c.is_whitespace())
        .collect::<String>()
        .replace(",...", "")
}

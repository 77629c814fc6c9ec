//! Normal-form construction from a flat set of note events.
//!
//! The grouping runs in four greedy passes over the canonically ordered
//! notes (onset, pitch, duration, contexts):
//!
//! 1. notes sharing onset and duration become a chord (`Par`);
//! 2. structures where one ends exactly where the next begins are chained
//!    into a `Seq`, always starting from the earliest unconsumed structure
//!    and, at a junction with several candidates, taking the one with the
//!    lowest pitch;
//! 3. chains that are disjoint in time are joined into a single `Seq`, with
//!    explicit rests filling each gap;
//! 4. whatever is still parallel is wrapped in one global `Par`.
//!
//! Singleton groups never appear in the output. Events are first partitioned
//! by their label set so that separately labelled parts are grouped
//! independently and only meet in the global `Par`.

use std::collections::{BTreeMap, BTreeSet};

use crate::model::{
    beats_eq, flatten, Contexts, Group, ModelError, Music, ScoreMeta, TimedEvent, BEAT_EPSILON,
};

type Labels = BTreeSet<String>;

#[derive(Debug, Clone)]
struct Block {
    start: f64,
    end: f64,
    lowest: i32,
    items: Vec<Music>,
}

impl Block {
    fn into_music(mut self, labels: &Labels) -> Music {
        if self.items.len() == 1 {
            self.items.pop().unwrap()
        } else {
            Music::Seq(Group {
                children: self.items,
                contexts: label_contexts(labels),
            })
        }
    }
}

fn label_contexts(labels: &Labels) -> Contexts {
    Contexts {
        labels: labels.clone(),
        ..Contexts::default()
    }
}

/// Builds the normal-form tree for a set of events. Rest events are ignored.
pub fn normalize(events: &[TimedEvent], meta: &ScoreMeta) -> Result<Music, ModelError> {
    let mut parts: BTreeMap<Labels, Vec<&TimedEvent>> = BTreeMap::new();
    for ev in events.iter().filter(|e| e.is_note()) {
        if !(ev.duration.is_finite() && ev.duration > 0.0) {
            return Err(ModelError::InvalidValue {
                what: "duration",
                value: ev.duration.to_string(),
            });
        }
        parts.entry(ev.contexts.labels.clone()).or_default().push(ev);
    }
    if parts.is_empty() {
        return Err(ModelError::EmptyScore);
    }

    let mut top: Vec<(Block, Labels)> = Vec::new();
    for (labels, mut notes) in parts {
        notes.sort_by(|a, b| a.cmp_canonical(b));
        let chords = group_chords(&notes, &labels, meta)?;
        let chains = chain_adjacent(chords);
        for block in join_with_rests(chains, &labels, meta)? {
            top.push((block, labels.clone()));
        }
    }

    top.sort_by(|a, b| {
        a.0.start
            .total_cmp(&b.0.start)
            .then(a.0.lowest.cmp(&b.0.lowest))
            .then(a.1.cmp(&b.1))
    });
    if top.len() == 1 {
        let (block, labels) = top.pop().unwrap();
        return Ok(block.into_music(&labels));
    }
    let shared = top
        .iter()
        .map(|(_, l)| l.clone())
        .reduce(|acc, l| acc.intersection(&l).cloned().collect())
        .unwrap_or_default();
    let children = top
        .into_iter()
        .map(|(block, labels)| block.into_music(&labels))
        .collect();
    Ok(Music::Par(Group {
        children,
        contexts: label_contexts(&shared),
    }))
}

/// Re-derives the normal form from the notes of an existing tree.
pub fn renormalize(m: &Music, meta: &ScoreMeta) -> Result<Music, ModelError> {
    let events = flatten(m, meta)?;
    normalize(&events, meta)
}

/// Step 1: notes with identical onset and duration form one chord.
fn group_chords(
    notes: &[&TimedEvent],
    labels: &Labels,
    meta: &ScoreMeta,
) -> Result<Vec<Block>, ModelError> {
    let mut blocks = Vec::new();
    let mut i = 0;
    while i < notes.len() {
        let onset = notes[i].onset;
        let mut j = i;
        while j < notes.len() && beats_eq(notes[j].onset, onset) {
            j += 1;
        }
        // Within one onset, bucket by duration keeping pitch order.
        let mut buckets: Vec<Vec<&TimedEvent>> = Vec::new();
        for ev in &notes[i..j] {
            match buckets
                .iter_mut()
                .find(|b| beats_eq(b[0].duration, ev.duration))
            {
                Some(b) => b.push(ev),
                None => buckets.push(vec![ev]),
            }
        }
        for bucket in buckets {
            let lowest = bucket.iter().filter_map(|e| e.pitch).min().unwrap_or(0);
            let start = bucket[0].onset;
            let end = start + bucket[0].duration;
            let mut leaves = bucket
                .iter()
                .map(|e| e.to_leaf(meta))
                .collect::<Result<Vec<_>, _>>()?;
            let item = if leaves.len() == 1 {
                leaves.pop().unwrap()
            } else {
                Music::Par(Group {
                    children: leaves,
                    contexts: label_contexts(labels),
                })
            };
            blocks.push(Block {
                start,
                end,
                lowest,
                items: vec![item],
            });
        }
        i = j;
    }
    blocks.sort_by(|a, b| {
        a.start
            .total_cmp(&b.start)
            .then(a.lowest.cmp(&b.lowest))
            .then(a.end.total_cmp(&b.end))
    });
    Ok(blocks)
}

/// Step 2: chain exactly adjacent structures.
fn chain_adjacent(blocks: Vec<Block>) -> Vec<Block> {
    let mut used = vec![false; blocks.len()];
    let mut chains = Vec::new();
    for head in 0..blocks.len() {
        if used[head] {
            continue;
        }
        used[head] = true;
        let mut chain = blocks[head].clone();
        loop {
            // Blocks are sorted by (start, lowest): the first unused one
            // starting at the current end has the lowest pitch.
            let next = (0..blocks.len())
                .find(|&k| !used[k] && beats_eq(blocks[k].start, chain.end));
            let Some(k) = next else { break };
            used[k] = true;
            chain.end = blocks[k].end;
            chain.items.extend(blocks[k].items.iter().cloned());
        }
        chains.push(chain);
    }
    chains
}

/// Step 3: join disjoint chains in time order, filling gaps with rests.
fn join_with_rests(
    chains: Vec<Block>,
    labels: &Labels,
    meta: &ScoreMeta,
) -> Result<Vec<Block>, ModelError> {
    let mut used = vec![false; chains.len()];
    let mut out = Vec::new();
    for head in 0..chains.len() {
        if used[head] {
            continue;
        }
        used[head] = true;
        let mut seq = chains[head].clone();
        loop {
            let next = (0..chains.len())
                .filter(|&k| !used[k] && chains[k].start >= seq.end - BEAT_EPSILON)
                .min_by(|&a, &b| {
                    chains[a]
                        .start
                        .total_cmp(&chains[b].start)
                        .then(chains[a].lowest.cmp(&chains[b].lowest))
                        .then(a.cmp(&b))
                });
            let Some(k) = next else { break };
            used[k] = true;
            let gap = chains[k].start - seq.end;
            if gap > BEAT_EPSILON {
                let mut rest = TimedEvent::rest(seq.end, gap);
                rest.contexts = label_contexts(labels);
                seq.items.push(rest.to_leaf(meta)?);
            }
            seq.items.extend(chains[k].items.iter().cloned());
            seq.end = chains[k].end;
        }
        out.push(seq);
    }
    Ok(out)
}

/// Reasons a tree is not in normal form.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NormalFormViolation {
    #[error("{0}")]
    Model(#[from] ModelError),
    #[error("singleton group at {0}")]
    Singleton(String),
    #[error("chord at {0} has children with differing onset or duration")]
    NonUniformChord(String),
    #[error("sequence at {0} is not gap-free and ordered")]
    BrokenSequence(String),
    #[error("misplaced node at {0}: {1}")]
    Misplaced(String, &'static str),
    #[error("tree differs from the normal form of its notes")]
    NotCanonical,
}

/// Checks the structural invariants of a normalized tree and that it is a
/// fixed point of [`renormalize`].
pub fn validate_normal_form(m: &Music, meta: &ScoreMeta) -> Result<(), NormalFormViolation> {
    check_node(m, meta, &crate::model::Path::root(), None)?;
    if renormalize(m, meta)? != *m {
        return Err(NormalFormViolation::NotCanonical);
    }
    Ok(())
}

#[derive(Clone, Copy, PartialEq)]
enum Parent {
    Seq,
    Par,
}

fn check_node(
    m: &Music,
    meta: &ScoreMeta,
    path: &crate::model::Path,
    parent: Option<Parent>,
) -> Result<(), NormalFormViolation> {
    let at = path.to_string();
    match m {
        Music::Note(_) => Ok(()),
        Music::Rest(_) => {
            if parent != Some(Parent::Seq) {
                return Err(NormalFormViolation::Misplaced(at, "rest outside a sequence"));
            }
            Ok(())
        }
        Music::Par(g) => {
            if g.children.len() < 2 {
                return Err(NormalFormViolation::Singleton(at));
            }
            let is_chord = g.children.iter().all(|c| matches!(c, Music::Note(_)));
            if parent.is_some() {
                if !is_chord {
                    return Err(NormalFormViolation::Misplaced(at, "nested non-chord par"));
                }
                let events = flatten(m, meta)?;
                let first = &events[0];
                if !events
                    .iter()
                    .all(|e| beats_eq(e.onset, first.onset) && beats_eq(e.duration, first.duration))
                {
                    return Err(NormalFormViolation::NonUniformChord(at));
                }
            }
            for (i, c) in g.children.iter().enumerate() {
                if matches!(c, Music::Rest(_)) {
                    return Err(NormalFormViolation::Misplaced(path.child(i).to_string(), "rest in par"));
                }
                check_node(c, meta, &path.child(i), Some(Parent::Par))?;
            }
            Ok(())
        }
        Music::Seq(g) => {
            if g.children.len() < 2 {
                return Err(NormalFormViolation::Singleton(at));
            }
            if parent == Some(Parent::Seq) {
                return Err(NormalFormViolation::Misplaced(at, "nested sequence"));
            }
            if matches!(g.children.first(), Some(Music::Rest(_)))
                || matches!(g.children.last(), Some(Music::Rest(_)))
            {
                return Err(NormalFormViolation::Misplaced(at, "sequence starts or ends with a rest"));
            }
            let mut prev_end: Option<f64> = None;
            let mut prev_rest = false;
            for (i, c) in g.children.iter().enumerate() {
                if matches!(c, Music::Seq(_)) {
                    return Err(NormalFormViolation::Misplaced(path.child(i).to_string(), "nested sequence"));
                }
                let is_rest = matches!(c, Music::Rest(_));
                if is_rest && prev_rest {
                    return Err(NormalFormViolation::BrokenSequence(at));
                }
                prev_rest = is_rest;
                check_node(c, meta, &path.child(i), Some(Parent::Seq))?;
                let (start, end) = c.span(meta)?;
                if let Some(pe) = prev_end {
                    if !beats_eq(pe, start) {
                        return Err(NormalFormViolation::BrokenSequence(at));
                    }
                }
                prev_end = Some(end);
            }
            Ok(())
        }
    }
}

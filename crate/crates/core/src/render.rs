//! Text views of a score: an ASCII piano roll and an event table.

use std::collections::BTreeSet;
use std::fmt::Write;

use crate::model::{flatten, ModelError, Music, Pitch, ScoreMeta};

const CELLS_PER_BEAT: f64 = 4.0;

fn cell(beats: f64) -> usize {
    (beats * CELLS_PER_BEAT + 1e-6).floor().max(0.0) as usize
}

fn cell_end(beats: f64) -> usize {
    (beats * CELLS_PER_BEAT - 1e-6).ceil().max(0.0) as usize
}

fn pitch_name(n: i32, meta: &ScoreMeta) -> String {
    Pitch::from_number(n, meta.octave_offset).map_or_else(|_| n.to_string(), |p| p.to_string())
}

/// One row per pitch present (highest first), one column per quarter beat.
/// `o` marks an onset, `-` a held note, `|` a barline.
pub fn piano_roll(m: &Music, meta: &ScoreMeta) -> Result<String, ModelError> {
    let events = flatten(m, meta)?;
    let notes: Vec<_> = events.iter().filter(|e| e.is_note()).collect();
    let pitches: BTreeSet<i32> = notes.iter().filter_map(|e| e.pitch).collect();
    let width = notes.iter().map(|e| cell_end(e.end())).max().unwrap_or(0);
    let per_measure = meta.beats_per_measure * CELLS_PER_BEAT;
    let barlines = per_measure.fract() == 0.0 && per_measure >= 1.0;
    let per_measure = per_measure as usize;
    let is_bar = |c: usize| barlines && c.is_multiple_of(per_measure);

    let mut out = String::new();
    // Measure numbers sit just after each barline.
    let mut header = String::from("      ");
    let mut pending: Vec<char> = Vec::new();
    for c in 0..width {
        if is_bar(c) {
            header.push('|');
            pending = (c / per_measure).to_string().chars().rev().collect();
        }
        header.push(pending.pop().unwrap_or(' '));
    }
    let _ = writeln!(out, "{}", header.trim_end());
    for &p in pitches.iter().rev() {
        let mut row = vec![b'.'; width];
        for e in notes.iter().filter(|e| e.pitch == Some(p)) {
            let (s, t) = (cell(e.onset), cell_end(e.end()).max(cell(e.onset) + 1));
            for (i, slot) in row.iter_mut().enumerate().take(t.min(width)).skip(s) {
                if i == s {
                    *slot = b'o';
                } else if *slot == b'.' {
                    *slot = b'-';
                }
            }
        }
        let mut line = format!("{:<5} ", pitch_name(p, meta));
        for (c, b) in row.iter().enumerate() {
            if is_bar(c) {
                line.push('|');
            }
            line.push(*b as char);
        }
        if barlines {
            line.push('|');
        }
        let _ = writeln!(out, "{line}");
    }
    Ok(out)
}

/// Flat event listing in flat order.
pub fn event_table(m: &Music, meta: &ScoreMeta) -> Result<String, ModelError> {
    let mut out = String::from("kind  pitch  measure  beat    dur     labels\n");
    for e in flatten(m, meta)? {
        let onset = crate::model::Onset::from_absolute(e.onset, meta)?;
        let labels: Vec<&str> = e.contexts.labels.iter().map(String::as_str).collect();
        let _ = writeln!(
            out,
            "{:<5} {:<6} {:<8} {:<7} {:<7} {}",
            if e.is_note() { "note" } else { "rest" },
            e.pitch.map_or_else(|| "-".to_string(), |p| pitch_name(p, meta)),
            onset.measure.unwrap_or_default(),
            fmt_beats(onset.beat.unwrap_or_default()),
            fmt_beats(e.duration),
            labels.join(", ")
        );
    }
    Ok(out)
}

fn fmt_beats(b: f64) -> String {
    let s = format!("{b:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    s.to_string()
}

/// Piano roll followed by the event table.
pub fn show(m: &Music, meta: &ScoreMeta) -> Result<String, ModelError> {
    Ok(format!("{}\n{}", piano_roll(m, meta)?, event_table(m, meta)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TimedEvent;
    use crate::normalize::normalize;

    #[test]
    fn roll_marks_onsets_and_holds() {
        let meta = ScoreMeta::default();
        let m = normalize(
            &[TimedEvent::note(60, 0.0, 1.0), TimedEvent::note(64, 1.0, 0.5), TimedEvent::note(60, 4.0, 1.0)],
            &meta,
        )
        .unwrap();
        let roll = piano_roll(&m, &meta).unwrap();
        let lines: Vec<&str> = roll.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[1], "E4    |....o-..........|....|");
        assert_eq!(lines[2], "C4    |o---............|o---|");
    }

    #[test]
    fn table_lists_rests() {
        let meta = ScoreMeta::default();
        let m = normalize(&[TimedEvent::note(60, 0.0, 1.0), TimedEvent::note(62, 2.0, 1.0)], &meta).unwrap();
        let table = event_table(&m, &meta).unwrap();
        assert_eq!(table.lines().count(), 4);
        assert!(table.lines().nth(2).unwrap().starts_with("rest"));
    }
}

//! Standard MIDI File reading (formats 0 and 1) and writing (format 0).

use std::collections::{HashMap, VecDeque};

use super::{IngestError, IngestReport, Ingested, SourceFormat};
use crate::model::{flatten, Contexts, Music, ScoreMeta, TimedEvent};

/// Ticks per quarter note used for export and for quantizing imports.
pub const EXPORT_DIVISION: u16 = 480;
const QUANTUM: f64 = EXPORT_DIVISION as f64;

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

fn malformed(msg: impl Into<String>) -> IngestError {
    IngestError::MalformedMidi(msg.into())
}

impl<'a> Reader<'a> {
    fn new(data: &'a [u8]) -> Self {
        Reader { data, pos: 0 }
    }

    fn is_empty(&self) -> bool {
        self.pos >= self.data.len()
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], IngestError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.data.len())
            .ok_or_else(|| malformed(format!("truncated data at byte {}", self.pos)))?;
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, IngestError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, IngestError> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn vlq(&mut self) -> Result<u32, IngestError> {
        let mut value: u32 = 0;
        for _ in 0..4 {
            let b = self.u8()?;
            value = (value << 7) | (b & 0x7f) as u32;
            if b & 0x80 == 0 {
                return Ok(value);
            }
        }
        Err(malformed("variable-length quantity longer than 4 bytes"))
    }
}

fn write_vlq(out: &mut Vec<u8>, mut value: u32) {
    let mut buf = [0u8; 4];
    let mut n = 0;
    loop {
        buf[n] = (value & 0x7f) as u8;
        n += 1;
        value >>= 7;
        if value == 0 {
            break;
        }
    }
    for i in (0..n).rev() {
        out.push(if i > 0 { buf[i] | 0x80 } else { buf[i] });
    }
}

#[derive(Debug, Clone, Copy)]
struct RawNote {
    start: u64,
    end: u64,
    key: u8,
    velocity: u8,
}

#[derive(Default)]
struct TrackState {
    notes: Vec<RawNote>,
    tempo: Option<(u64, u32)>,
    time_signatures: Vec<(u64, u8, u8)>,
    unmatched: usize,
}

fn quantize(ticks: u64, division: u16) -> f64 {
    (ticks as f64 * QUANTUM / division as f64).round() / QUANTUM
}

fn read_track(data: &[u8], state: &mut TrackState) -> Result<(), IngestError> {
    let mut r = Reader::new(data);
    let mut tick: u64 = 0;
    let mut running: Option<u8> = None;
    let mut open: HashMap<(u8, u8), VecDeque<(u64, u8)>> = HashMap::new();
    while !r.is_empty() {
        tick += r.vlq()? as u64;
        let mut status = r.u8()?;
        let first_data = if status < 0x80 {
            let s = running.ok_or_else(|| malformed("data byte without running status"))?;
            let d = status;
            status = s;
            Some(d)
        } else {
            None
        };
        match status {
            0xff => {
                running = None;
                let kind = r.u8()?;
                let len = r.vlq()? as usize;
                let payload = r.take(len)?;
                match kind {
                    0x2f => break,
                    0x51 if len == 3 => {
                        let us = u32::from_be_bytes([0, payload[0], payload[1], payload[2]]);
                        if state.tempo.is_none_or(|(t, _)| tick < t) && us > 0 {
                            state.tempo = Some((tick, us));
                        }
                    }
                    0x58 if len >= 2 => state.time_signatures.push((tick, payload[0], payload[1])),
                    _ => {}
                }
            }
            0xf0 | 0xf7 => {
                running = None;
                let len = r.vlq()? as usize;
                r.take(len)?;
            }
            0x80..=0xef => {
                running = Some(status);
                let d1 = match first_data {
                    Some(d) => d,
                    None => r.u8()?,
                };
                let kind = status & 0xf0;
                let channel = status & 0x0f;
                if kind == 0xc0 || kind == 0xd0 {
                    continue;
                }
                let d2 = r.u8()?;
                match kind {
                    0x90 if d2 > 0 => open.entry((channel, d1)).or_default().push_back((tick, d2)),
                    0x80 | 0x90 => {
                        if let Some((start, velocity)) =
                            open.get_mut(&(channel, d1)).and_then(VecDeque::pop_front)
                        {
                            state.notes.push(RawNote {
                                start,
                                end: tick,
                                key: d1,
                                velocity,
                            });
                        }
                    }
                    _ => {}
                }
            }
            other => return Err(malformed(format!("unexpected status byte {other:#04x}"))),
        }
    }
    let mut leftovers: Vec<((u8, u8), (u64, u8))> = open
        .into_iter()
        .flat_map(|(k, q)| q.into_iter().map(move |v| (k, v)))
        .collect();
    leftovers.sort();
    for ((_, key), (start, velocity)) in leftovers {
        state.unmatched += 1;
        state.notes.push(RawNote {
            start,
            end: tick,
            key,
            velocity,
        });
    }
    Ok(())
}

pub fn parse_midi(bytes: &[u8]) -> Result<Ingested, IngestError> {
    let mut r = Reader::new(bytes);
    if r.take(4).map_err(|_| malformed("missing header"))? != b"MThd" {
        return Err(malformed("missing MThd header"));
    }
    let header_len = r.u32()? as usize;
    if header_len < 6 {
        return Err(malformed("header chunk too short"));
    }
    let header = r.take(header_len)?;
    let format = u16::from_be_bytes([header[0], header[1]]);
    let tracks = u16::from_be_bytes([header[2], header[3]]);
    let division = u16::from_be_bytes([header[4], header[5]]);
    if format > 1 {
        return Err(IngestError::UnsupportedSmfFormat(format));
    }
    if division & 0x8000 != 0 || division == 0 {
        return Err(malformed("SMPTE or zero time division is not supported"));
    }

    let mut state = TrackState::default();
    let mut seen = 0;
    while seen < tracks {
        let id = r.take(4).map_err(|_| malformed("missing track chunk"))?;
        let len = r.u32()? as usize;
        let body = r.take(len)?;
        if id == b"MTrk" {
            read_track(body, &mut state)?;
            seen += 1;
        }
    }

    let mut warnings = Vec::new();
    let mut meta = ScoreMeta::default();
    if let Some((_, us)) = state.tempo {
        meta.tempo_bpm = 60_000_000.0 / us as f64;
    }
    state.time_signatures.sort_by_key(|t| t.0);
    if let Some(&(_, nn, dd)) = state.time_signatures.first() {
        if nn > 0 && dd < 16 {
            meta.beats_per_measure = nn as f64 * 4.0 / 2f64.powi(dd as i32);
        }
        for &(tick, n2, d2) in &state.time_signatures[1..] {
            if (n2, d2) != (nn, dd) {
                warnings.push(format!("ignored time signature change at tick {tick}"));
            }
        }
    }
    if state.unmatched > 0 {
        warnings.push(format!(
            "{} note-on event(s) without note-off closed at track end",
            state.unmatched
        ));
    }

    let mut events = Vec::with_capacity(state.notes.len());
    let mut zero = 0;
    for n in &state.notes {
        let onset = quantize(n.start, division);
        let duration = quantize(n.end, division) - onset;
        if duration <= 0.0 {
            zero += 1;
            continue;
        }
        let mut ev = TimedEvent::note(n.key as i32, onset, duration);
        ev.contexts = Contexts {
            volume: Some(n.velocity),
            ..Contexts::default()
        };
        events.push(ev);
    }
    if zero > 0 {
        warnings.push(format!("{zero} zero-length note(s) skipped"));
    }
    events.sort_by(|a, b| a.cmp_canonical(b));

    Ok(Ingested {
        report: IngestReport {
            source_format: SourceFormat::Midi,
            event_count: events.len(),
            warnings,
            meta,
        },
        events,
        meta,
    })
}

fn time_signature(beats_per_measure: f64) -> (u8, u8) {
    for dd in 2..=6u8 {
        let nn = beats_per_measure * 2f64.powi(dd as i32) / 4.0;
        if (nn - nn.round()).abs() < 1e-9 && (1.0..=255.0).contains(&nn) {
            return (nn.round() as u8, dd);
        }
    }
    (beats_per_measure.round().clamp(1.0, 255.0) as u8, 2)
}

/// Writes a format-0 file at 480 ticks per quarter note.
///
/// Overlapping notes of the same pitch are spread across channels so that
/// re-reading pairs each note-off with the right note-on.
pub fn export_midi(m: &Music, meta: &ScoreMeta) -> Result<Vec<u8>, IngestError> {
    let events: Vec<TimedEvent> = flatten(m, meta)?.into_iter().filter(|e| e.is_note()).collect();
    for e in &events {
        let p = e.pitch.unwrap_or(-1);
        if !(0..=127).contains(&p) {
            return Err(IngestError::UnrepresentablePitch(p));
        }
    }

    // (tick, is_on, channel, key, velocity)
    let mut messages: Vec<(u64, bool, u8, u8, u8)> = Vec::with_capacity(events.len() * 2);
    let mut busy: HashMap<(u8, u8), u64> = HashMap::new();
    for e in &events {
        let key = e.pitch.unwrap() as u8;
        let start = (e.onset * QUANTUM).round().max(0.0) as u64;
        let end = ((e.end() * QUANTUM).round() as u64).max(start + 1);
        let channel = (0u8..16)
            .filter(|&c| c != 9)
            .find(|&c| busy.get(&(c, key)).is_none_or(|&until| until <= start))
            .ok_or(IngestError::UnrepresentablePitch(key as i32))?;
        busy.insert((channel, key), end);
        let velocity = e.contexts.volume.unwrap_or(80).max(1);
        messages.push((start, true, channel, key, velocity));
        messages.push((end, false, channel, key, 0));
    }
    messages.sort_by_key(|&(tick, on, ch, key, _)| (tick, on, ch, key));

    let mut track = Vec::new();
    let tempo = (60_000_000.0 / meta.tempo_bpm).round().clamp(1.0, 0xff_ffff as f64) as u32;
    track.extend_from_slice(&[0x00, 0xff, 0x51, 0x03]);
    track.extend_from_slice(&tempo.to_be_bytes()[1..]);
    let (nn, dd) = time_signature(meta.beats_per_measure);
    track.extend_from_slice(&[0x00, 0xff, 0x58, 0x04, nn, dd, 24, 8]);
    let mut last = 0u64;
    for (tick, on, ch, key, vel) in messages {
        write_vlq(&mut track, (tick - last) as u32);
        last = tick;
        if on {
            track.extend_from_slice(&[0x90 | ch, key, vel]);
        } else {
            track.extend_from_slice(&[0x80 | ch, key, 0]);
        }
    }
    track.extend_from_slice(&[0x00, 0xff, 0x2f, 0x00]);

    let mut out = Vec::with_capacity(track.len() + 22);
    out.extend_from_slice(b"MThd");
    out.extend_from_slice(&6u32.to_be_bytes());
    out.extend_from_slice(&0u16.to_be_bytes());
    out.extend_from_slice(&1u16.to_be_bytes());
    out.extend_from_slice(&EXPORT_DIVISION.to_be_bytes());
    out.extend_from_slice(b"MTrk");
    out.extend_from_slice(&(track.len() as u32).to_be_bytes());
    out.extend_from_slice(&track);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn smf(format: u16, division: u16, tracks: &[Vec<u8>]) -> Vec<u8> {
        let mut out = b"MThd".to_vec();
        out.extend_from_slice(&6u32.to_be_bytes());
        out.extend_from_slice(&format.to_be_bytes());
        out.extend_from_slice(&(tracks.len() as u16).to_be_bytes());
        out.extend_from_slice(&division.to_be_bytes());
        for t in tracks {
            out.extend_from_slice(b"MTrk");
            out.extend_from_slice(&(t.len() as u32).to_be_bytes());
            out.extend_from_slice(t);
        }
        out
    }

    #[test]
    fn vlq_roundtrip() {
        for v in [0u32, 0x7f, 0x80, 0x2000, 0x3fff, 0x4000, 0x0fff_ffff] {
            let mut buf = Vec::new();
            write_vlq(&mut buf, v);
            assert_eq!(Reader::new(&buf).vlq().unwrap(), v);
        }
    }

    #[test]
    fn single_note() {
        // note-on 60 at 0, note-off at 480 via running status + zero velocity
        let track = vec![0x00, 0x90, 60, 100, 0x83, 0x60, 60, 0, 0x00, 0xff, 0x2f, 0x00];
        let parsed = parse_midi(&smf(0, 480, &[track])).unwrap();
        assert_eq!(parsed.events.len(), 1);
        let e = &parsed.events[0];
        assert_eq!((e.pitch, e.onset, e.duration), (Some(60), 0.0, 1.0));
        assert_eq!(e.contexts.volume, Some(100));
        assert_eq!(parsed.meta, ScoreMeta::default());
    }

    #[test]
    fn empty_track() {
        let parsed = parse_midi(&smf(1, 96, &[vec![0x00, 0xff, 0x2f, 0x00]])).unwrap();
        assert!(parsed.events.is_empty());
        assert_eq!(parsed.meta, ScoreMeta::default());
        assert_eq!(parsed.report.event_count, 0);
    }

    #[test]
    fn meta_events_fill_score_meta() {
        let track = vec![
            0x00, 0xff, 0x51, 0x03, 0x09, 0x27, 0xc0, // 600000us = 100 bpm
            0x00, 0xff, 0x58, 0x04, 3, 2, 24, 8, // 3/4
            0x00, 0x90, 62, 64, 0x60, 0x80, 62, 0, // 96 ticks at division 96
            0x00, 0xff, 0x2f, 0x00,
        ];
        let parsed = parse_midi(&smf(0, 96, &[track])).unwrap();
        assert_eq!(parsed.meta.beats_per_measure, 3.0);
        assert!((parsed.meta.tempo_bpm - 100.0).abs() < 1e-9);
        assert_eq!(parsed.events[0].duration, 1.0);
    }

    #[test]
    fn unmatched_note_closes_at_track_end() {
        let track = vec![0x00, 0x90, 60, 100, 0x83, 0x60, 0xff, 0x2f, 0x00];
        let parsed = parse_midi(&smf(0, 480, &[track])).unwrap();
        assert_eq!(parsed.events[0].duration, 1.0);
        assert_eq!(parsed.report.warnings.len(), 1);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            parse_midi(&smf(2, 480, &[])),
            Err(IngestError::UnsupportedSmfFormat(2))
        ));
        let mut truncated = smf(0, 480, &[vec![0x00, 0x90, 60, 100, 0x83, 0x60, 60, 0]]);
        truncated.truncate(truncated.len() - 3);
        assert!(matches!(parse_midi(&truncated), Err(IngestError::MalformedMidi(_))));
        assert!(matches!(parse_midi(b"RIFF"), Err(IngestError::MalformedMidi(_))));
        assert!(matches!(parse_midi(b""), Err(IngestError::MalformedMidi(_))));
    }

    #[test]
    fn time_signature_encoding() {
        assert_eq!(time_signature(4.0), (4, 2));
        assert_eq!(time_signature(3.0), (3, 2));
        assert_eq!(time_signature(1.5), (3, 3));
        assert_eq!(time_signature(3.5), (7, 3));
    }

    #[test]
    fn export_rejects_unrepresentable_pitch() {
        let meta = ScoreMeta::default();
        let m = TimedEvent::note(130, 0.0, 1.0).to_leaf(&meta).unwrap();
        assert!(matches!(export_midi(&m, &meta), Err(IngestError::UnrepresentablePitch(130))));
    }

    #[test]
    fn same_pitch_overlaps_survive_export() {
        let meta = ScoreMeta::default();
        let m = Music::par(vec![
            TimedEvent::note(60, 0.0, 3.0).to_leaf(&meta).unwrap(),
            TimedEvent::note(60, 1.0, 1.0).to_leaf(&meta).unwrap(),
        ]);
        let back = parse_midi(&export_midi(&m, &meta).unwrap()).unwrap();
        let got: Vec<(f64, f64)> = back.events.iter().map(|e| (e.onset, e.duration)).collect();
        assert_eq!(got, vec![(0.0, 3.0), (1.0, 1.0)]);
    }
}

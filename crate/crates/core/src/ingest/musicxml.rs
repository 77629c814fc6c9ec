//! Reader for uncompressed `score-partwise` MusicXML.
//!
//! Supported: part-list, part, measure, attributes (divisions, time), note
//! (pitch, duration, rest, chord, tie), backup and forward. Other measure
//! content is skipped with a warning. Tied notes are merged into one event.

use std::collections::{BTreeMap, HashMap};

use roxmltree::{Document, Node};

use super::{IngestError, IngestReport, Ingested, SourceFormat};
use crate::model::{beats_eq, Contexts, ScoreMeta, TimedEvent};

fn child<'a, 'i>(node: Node<'a, 'i>, name: &str) -> Option<Node<'a, 'i>> {
    node.children().find(|c| c.has_tag_name(name))
}

fn child_text<'a>(node: Node<'a, '_>, name: &str) -> Option<&'a str> {
    child(node, name).and_then(|c| c.text()).map(str::trim)
}

fn xml_err(msg: impl Into<String>) -> IngestError {
    IngestError::Xml(msg.into())
}

fn parse_num(node: Node, name: &str) -> Result<Option<f64>, IngestError> {
    match child_text(node, name) {
        None => Ok(None),
        Some(t) => t
            .parse::<f64>()
            .map(Some)
            .map_err(|_| xml_err(format!("invalid <{name}> value {t:?}"))),
    }
}

fn step_class(step: &str) -> Option<i32> {
    Some(match step {
        "C" => 0,
        "D" => 2,
        "E" => 4,
        "F" => 5,
        "G" => 7,
        "A" => 9,
        "B" => 11,
        _ => return None,
    })
}

/// Tie markers on a note: (stop, start).
fn tie_flags(note: Node) -> (bool, bool) {
    let notated = child(note, "notations")
        .into_iter()
        .flat_map(|n| n.children().filter(|c| c.has_tag_name("tied")));
    let types: Vec<&str> = note
        .children()
        .filter(|c| c.has_tag_name("tie"))
        .chain(notated)
        .filter_map(|t| t.attribute("type"))
        .collect();
    (types.contains(&"stop"), types.contains(&"start"))
}

struct PartReader<'m> {
    label: String,
    meta: &'m mut ScoreMeta,
    meter_set: &'m mut bool,
    tempo_set: &'m mut bool,
    skipped: &'m mut BTreeMap<String, usize>,
    events: Vec<TimedEvent>,
    divisions: Option<f64>,
    position: f64,
    last_onset: f64,
    open_ties: HashMap<i32, usize>,
}

impl PartReader<'_> {
    fn attributes(&mut self, attrs: Node) -> Result<(), IngestError> {
        if let Some(d) = parse_num(attrs, "divisions")? {
            if d <= 0.0 {
                return Err(xml_err("divisions must be positive"));
            }
            self.divisions = Some(d);
        }
        if let Some(time) = child(attrs, "time") {
            let beats: f64 = child_text(time, "beats")
                .and_then(|b| b.split('+').map(|x| x.trim().parse::<f64>().ok()).sum())
                .ok_or_else(|| xml_err("invalid <time><beats>"))?;
            let beat_type = parse_num(time, "beat-type")?.ok_or_else(|| xml_err("missing <beat-type>"))?;
            let bpm = beats * 4.0 / beat_type;
            if !(bpm.is_finite() && bpm > 0.0) {
                return Err(xml_err("invalid time signature"));
            }
            if *self.meter_set {
                if !beats_eq(bpm, self.meta.beats_per_measure) {
                    return Err(IngestError::UnsupportedMeterChange);
                }
            } else {
                self.meta.beats_per_measure = bpm;
                *self.meter_set = true;
            }
        }
        Ok(())
    }

    fn beats(&self, node: Node) -> Result<f64, IngestError> {
        let divisions = self.divisions.ok_or(IngestError::MissingDivisions)?;
        let d = parse_num(node, "duration")?
            .ok_or_else(|| xml_err(format!("<{}> without <duration>", node.tag_name().name())))?;
        Ok(d / divisions)
    }

    fn note(&mut self, note: Node) -> Result<(), IngestError> {
        if child(note, "grace").is_some() || child(note, "cue").is_some() {
            *self.skipped.entry("grace/cue note".into()).or_default() += 1;
            return Ok(());
        }
        let duration = self.beats(note)?;
        let is_chord = child(note, "chord").is_some();
        let onset = if is_chord { self.last_onset } else { self.position };
        if !is_chord {
            self.position += duration;
        }
        self.last_onset = onset;

        if child(note, "rest").is_some() {
            return Ok(());
        }
        let Some(pitch) = child(note, "pitch") else {
            *self.skipped.entry("unpitched note".into()).or_default() += 1;
            return Ok(());
        };
        let step = child_text(pitch, "step").ok_or_else(|| xml_err("<pitch> without <step>"))?;
        let class = step_class(step).ok_or_else(|| xml_err(format!("invalid step {step:?}")))?;
        let alter = parse_num(pitch, "alter")?.unwrap_or(0.0);
        if alter.fract() != 0.0 {
            *self.skipped.entry("microtonal alter (rounded)".into()).or_default() += 1;
        }
        let octave = parse_num(pitch, "octave")?.ok_or_else(|| xml_err("<pitch> without <octave>"))?;
        let number = class + alter.round() as i32 + 12 * (octave as i32 + self.meta.octave_offset);

        let (tie_stop, tie_start) = tie_flags(note);
        if tie_stop {
            if let Some(&idx) = self.open_ties.get(&number) {
                let ev = &mut self.events[idx];
                if beats_eq(ev.end(), onset) {
                    ev.duration += duration;
                    if !tie_start {
                        self.open_ties.remove(&number);
                    }
                    return Ok(());
                }
            }
        }
        if duration <= 0.0 {
            return Ok(());
        }
        let mut ev = TimedEvent::note(number, onset, duration);
        ev.contexts = Contexts::with_label(self.label.clone());
        self.events.push(ev);
        if tie_start {
            self.open_ties.insert(number, self.events.len() - 1);
        }
        Ok(())
    }

    fn measure(&mut self, measure: Node) -> Result<(), IngestError> {
        for item in measure.children().filter(Node::is_element) {
            match item.tag_name().name() {
                "attributes" => self.attributes(item)?,
                "note" => self.note(item)?,
                "backup" => {
                    self.position = (self.position - self.beats(item)?).max(0.0);
                }
                "forward" => self.position += self.beats(item)?,
                other => {
                    if let Some(tempo) = item
                        .descendants()
                        .find(|d| d.has_tag_name("sound"))
                        .and_then(|s| s.attribute("tempo"))
                        .and_then(|t| t.parse::<f64>().ok())
                    {
                        if !*self.tempo_set && tempo > 0.0 {
                            self.meta.tempo_bpm = tempo;
                            *self.tempo_set = true;
                        }
                    }
                    *self.skipped.entry(format!("<{other}>")).or_default() += 1;
                }
            }
        }
        Ok(())
    }
}

pub fn parse_musicxml(text: &str) -> Result<Ingested, IngestError> {
    let opts = roxmltree::ParsingOptions { allow_dtd: true, ..Default::default() };
    let doc = Document::parse_with_options(text, opts).map_err(|e| xml_err(e.to_string()))?;
    let root = doc.root_element();
    if root.tag_name().name() != "score-partwise" {
        return Err(xml_err(format!(
            "expected <score-partwise> root, found <{}>",
            root.tag_name().name()
        )));
    }

    let mut names = HashMap::new();
    if let Some(list) = child(root, "part-list") {
        for sp in list.children().filter(|c| c.has_tag_name("score-part")) {
            if let Some(id) = sp.attribute("id") {
                let name = child_text(sp, "part-name")
                    .filter(|n| !n.is_empty())
                    .unwrap_or(id)
                    .to_string();
                names.insert(id.to_string(), name);
            }
        }
    }

    let mut meta = ScoreMeta::default();
    let mut meter_set = false;
    let mut tempo_set = false;
    let mut skipped = BTreeMap::new();
    let mut events = Vec::new();
    for (i, part) in root.children().filter(|c| c.has_tag_name("part")).enumerate() {
        let id = part.attribute("id").map(str::to_string).unwrap_or_else(|| format!("P{}", i + 1));
        let label = names.get(&id).cloned().unwrap_or(id);
        let mut reader = PartReader {
            label,
            meta: &mut meta,
            meter_set: &mut meter_set,
            tempo_set: &mut tempo_set,
            skipped: &mut skipped,
            events: Vec::new(),
            divisions: None,
            position: 0.0,
            last_onset: 0.0,
            open_ties: HashMap::new(),
        };
        for measure in part.children().filter(|c| c.has_tag_name("measure")) {
            reader.measure(measure)?;
        }
        events.append(&mut reader.events);
    }
    events.sort_by(|a, b| a.cmp_canonical(b));

    let warnings = skipped
        .into_iter()
        .map(|(what, n)| format!("skipped {what} ({n}x)"))
        .collect();
    Ok(Ingested {
        report: IngestReport {
            source_format: SourceFormat::MusicXml,
            event_count: events.len(),
            warnings,
            meta,
        },
        events,
        meta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(measures: &str) -> String {
        format!(
            r#"<?xml version="1.0"?>
<score-partwise version="3.1">
  <part-list><score-part id="P1"><part-name>Melody</part-name></score-part></part-list>
  <part id="P1">{measures}</part>
</score-partwise>"#
        )
    }

    const ATTRS: &str = "<attributes><divisions>1</divisions><time><beats>4</beats><beat-type>4</beat-type></time></attributes>";

    fn note(step: &str, octave: i32, dur: u32, extra: &str) -> String {
        format!("<note>{extra}<pitch><step>{step}</step><octave>{octave}</octave></pitch><duration>{dur}</duration></note>")
    }

    #[test]
    fn minimal_document() {
        let xml = doc(&format!("<measure number=\"1\">{ATTRS}{}</measure>", note("C", 4, 4, "")));
        let parsed = parse_musicxml(&xml).unwrap();
        assert_eq!(parsed.events.len(), 1);
        let e = &parsed.events[0];
        assert_eq!((e.pitch, e.onset, e.duration), (Some(60), 0.0, 4.0));
        assert!(e.contexts.labels.contains("Melody"));
        assert_eq!(parsed.meta.beats_per_measure, 4.0);
    }

    #[test]
    fn accepts_doctype() {
        let xml = doc(&format!("<measure number=\"1\">{ATTRS}{}</measure>", note("C", 4, 4, ""))).replacen(
            "?>",
            "?>\n<!DOCTYPE score-partwise PUBLIC \"-//Recordare//DTD MusicXML 3.1 Partwise//EN\" \"http://www.musicxml.org/dtds/partwise.dtd\">",
            1,
        );
        assert_eq!(parse_musicxml(&xml).unwrap().events.len(), 1);
    }

    #[test]
    fn chord_shares_onset() {
        let xml = doc(&format!(
            "<measure>{ATTRS}{}{}{}</measure>",
            note("C", 4, 1, ""),
            note("E", 4, 1, ""),
            note("G", 4, 1, "<chord/>")
        ));
        let parsed = parse_musicxml(&xml).unwrap();
        let onsets: Vec<(i32, f64)> = parsed.events.iter().map(|e| (e.pitch.unwrap(), e.onset)).collect();
        assert_eq!(onsets, vec![(60, 0.0), (64, 1.0), (67, 1.0)]);
    }

    #[test]
    fn tie_across_barline_merges() {
        let xml = doc(&format!(
            "<measure>{ATTRS}{}{}</measure><measure>{}</measure>",
            note("C", 4, 2, ""),
            note("D", 4, 2, "<tie type=\"start\"/>"),
            note("D", 4, 2, "<tie type=\"stop\"/>"),
        ));
        let parsed = parse_musicxml(&xml).unwrap();
        assert_eq!(parsed.events.len(), 2);
        assert_eq!(parsed.events[1].onset, 2.0);
        assert_eq!(parsed.events[1].duration, 4.0);
    }

    #[test]
    fn alter_and_rests() {
        let xml = doc(&format!(
            "<measure>{ATTRS}<note><rest/><duration>1</duration></note><note><pitch><step>B</step><alter>-1</alter><octave>3</octave></pitch><duration>1</duration></note><note><pitch><step>B</step><alter>1</alter><octave>3</octave></pitch><duration>1</duration></note></measure>"
        ));
        let parsed = parse_musicxml(&xml).unwrap();
        let got: Vec<(i32, f64)> = parsed.events.iter().map(|e| (e.pitch.unwrap(), e.onset)).collect();
        assert_eq!(got, vec![(58, 1.0), (60, 2.0)]);
    }

    #[test]
    fn backup_and_forward() {
        let xml = doc(&format!(
            "<measure>{ATTRS}{}<backup><duration>4</duration></backup><forward><duration>2</duration></forward>{}</measure>",
            note("C", 5, 4, ""),
            note("C", 3, 2, ""),
        ));
        let parsed = parse_musicxml(&xml).unwrap();
        let got: Vec<(i32, f64)> = parsed.events.iter().map(|e| (e.pitch.unwrap(), e.onset)).collect();
        assert_eq!(got, vec![(72, 0.0), (48, 2.0)]);
    }

    #[test]
    fn errors() {
        let xml = doc(&format!("<measure>{}</measure>", note("C", 4, 4, "")));
        assert!(matches!(parse_musicxml(&xml), Err(IngestError::MissingDivisions)));

        let xml = doc(&format!(
            "<measure>{ATTRS}{}</measure><measure><attributes><time><beats>3</beats><beat-type>4</beat-type></time></attributes></measure>",
            note("C", 4, 4, "")
        ));
        assert!(matches!(parse_musicxml(&xml), Err(IngestError::UnsupportedMeterChange)));

        assert!(matches!(parse_musicxml("<score-timewise/>"), Err(IngestError::Xml(_))));
        assert!(matches!(parse_musicxml("<not xml"), Err(IngestError::Xml(_))));
    }

    #[test]
    fn unsupported_elements_warn() {
        let xml = doc(&format!(
            "<measure>{ATTRS}<direction><direction-type><words>dolce</words></direction-type><sound tempo=\"90\"/></direction>{}</measure>",
            note("C", 4, 4, "")
        ));
        let parsed = parse_musicxml(&xml).unwrap();
        assert_eq!(parsed.report.warnings, vec!["skipped <direction> (1x)".to_string()]);
        assert_eq!(parsed.meta.tempo_bpm, 90.0);
    }
}

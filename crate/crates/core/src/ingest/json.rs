//! JSON encoding of score trees.
//!
//! Leaves are written as
//! `{"type":"note","pc":0,"oct":4,"measure":0,"beat":0.0,"dur":1.0,"contexts":{}}`
//! (rests drop `pc`/`oct`), groups as `{"type":"seq","children":[...],"contexts":{}}`.
//! Key order is fixed and context keys are sorted, so output is byte-stable.
//! A file wraps the tree as `{"meta":{...},"score":{...}}`.

use std::collections::{BTreeMap, BTreeSet};

use serde_json::{json, Map, Value};

use super::IngestError;
use crate::model::{
    Contexts, Duration, Group, Music, Note, Octave, Onset, Pitch, PitchClass, Rest, Scale,
    ScoreMeta, TimedEvent,
};

pub fn contexts_to_value(c: &Contexts) -> Value {
    let mut obj = Map::new();
    if !c.extra.is_empty() {
        let extra: Map<String, Value> = c
            .extra
            .iter()
            .map(|(k, v)| (k.clone(), Value::String(v.clone())))
            .collect();
        obj.insert("extra".into(), Value::Object(extra));
    }
    if !c.labels.is_empty() {
        obj.insert("labels".into(), json!(c.labels));
    }
    if let Some(scale) = &c.scale {
        obj.insert(
            "scale".into(),
            json!({"root": scale.root.value(), "intervals": scale.intervals()}),
        );
    }
    if let Some(v) = c.volume {
        obj.insert("volume".into(), json!(v));
    }
    Value::Object(obj)
}

fn opt_f64(v: Option<f64>) -> Value {
    v.map_or(Value::Null, Value::from)
}

pub fn music_to_value(m: &Music) -> Value {
    let mut obj = Map::new();
    match m {
        Music::Note(n) => {
            obj.insert("type".into(), json!("note"));
            obj.insert("pc".into(), json!(n.pitch.class.map(|p| p.value())));
            obj.insert("oct".into(), json!(n.pitch.octave.map(|o| o.value())));
            obj.insert("measure".into(), json!(n.onset.measure));
            obj.insert("beat".into(), opt_f64(n.onset.beat));
            obj.insert("dur".into(), opt_f64(n.duration.map(Duration::beats)));
            obj.insert("contexts".into(), contexts_to_value(&n.contexts));
        }
        Music::Rest(r) => {
            obj.insert("type".into(), json!("rest"));
            obj.insert("measure".into(), json!(r.onset.measure));
            obj.insert("beat".into(), opt_f64(r.onset.beat));
            obj.insert("dur".into(), opt_f64(r.duration.map(Duration::beats)));
            obj.insert("contexts".into(), contexts_to_value(&r.contexts));
        }
        Music::Seq(g) | Music::Par(g) => {
            let kind = if matches!(m, Music::Seq(_)) { "seq" } else { "par" };
            obj.insert("type".into(), json!(kind));
            obj.insert(
                "children".into(),
                Value::Array(g.children.iter().map(music_to_value).collect()),
            );
            obj.insert("contexts".into(), contexts_to_value(&g.contexts));
        }
    }
    Value::Object(obj)
}

pub fn meta_to_value(meta: &ScoreMeta) -> Value {
    json!({
        "beatsPerMeasure": meta.beats_per_measure,
        "tempoBPM": meta.tempo_bpm,
        "octaveOffsetK": meta.octave_offset,
    })
}

pub fn score_to_value(m: &Music, meta: &ScoreMeta) -> Value {
    json!({"meta": meta_to_value(meta), "score": music_to_value(m)})
}

pub fn export_json(m: &Music, meta: &ScoreMeta) -> String {
    let mut s = serde_json::to_string_pretty(&score_to_value(m, meta)).expect("values serialize");
    s.push('\n');
    s
}

/// Flat event list as rendered by clients: one object per leaf.
pub fn events_to_value(events: &[TimedEvent], meta: &ScoreMeta) -> Value {
    Value::Array(
        events
            .iter()
            .map(|e| {
                let onset = Onset::from_absolute(e.onset, meta).unwrap_or_default();
                json!({
                    "kind": e.kind,
                    "pitch": e.pitch,
                    "onset": e.onset,
                    "duration": e.duration,
                    "measure": onset.measure,
                    "beat": onset.beat,
                    "contexts": contexts_to_value(&e.contexts),
                })
            })
            .collect(),
    )
}

pub fn import_json(text: &str) -> Result<(Music, ScoreMeta), IngestError> {
    let value: Value = serde_json::from_str(text).map_err(|e| IngestError::InvalidJson {
        pointer: String::new(),
        message: e.to_string(),
    })?;
    value_to_score(&value)
}

pub fn value_to_score(value: &Value) -> Result<(Music, ScoreMeta), IngestError> {
    let obj = as_object(value, "")?;
    if obj.contains_key("type") {
        let m = value_to_music(value, "")?;
        return Ok((m, ScoreMeta::default()));
    }
    check_keys(obj, &["meta", "score"], "")?;
    let meta = match obj.get("meta") {
        Some(v) => value_to_meta(v, "/meta")?,
        None => ScoreMeta::default(),
    };
    let score = obj.get("score").ok_or_else(|| bad("/score", "missing"))?;
    let m = value_to_music(score, "/score")?;
    Ok((m, meta))
}

fn bad(pointer: &str, message: impl Into<String>) -> IngestError {
    IngestError::InvalidJson {
        pointer: pointer.to_string(),
        message: message.into(),
    }
}

fn as_object<'a>(v: &'a Value, at: &str) -> Result<&'a Map<String, Value>, IngestError> {
    v.as_object().ok_or_else(|| bad(at, "expected object"))
}

fn check_keys(obj: &Map<String, Value>, allowed: &[&str], at: &str) -> Result<(), IngestError> {
    match obj.keys().find(|k| !allowed.contains(&k.as_str())) {
        Some(k) => Err(bad(&format!("{at}/{k}"), "unknown key")),
        None => Ok(()),
    }
}

fn opt_int(obj: &Map<String, Value>, key: &str, at: &str) -> Result<Option<i64>, IngestError> {
    match obj.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => v
            .as_i64()
            .map(Some)
            .ok_or_else(|| bad(&format!("{at}/{key}"), "expected integer")),
    }
}

fn opt_num(obj: &Map<String, Value>, key: &str, at: &str) -> Result<Option<f64>, IngestError> {
    match obj.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => v
            .as_f64()
            .map(Some)
            .ok_or_else(|| bad(&format!("{at}/{key}"), "expected number")),
    }
}

fn value_to_meta(v: &Value, at: &str) -> Result<ScoreMeta, IngestError> {
    let obj = as_object(v, at)?;
    check_keys(obj, &["beatsPerMeasure", "tempoBPM", "octaveOffsetK"], at)?;
    let d = ScoreMeta::default();
    let meta = ScoreMeta {
        beats_per_measure: opt_num(obj, "beatsPerMeasure", at)?.unwrap_or(d.beats_per_measure),
        tempo_bpm: opt_num(obj, "tempoBPM", at)?.unwrap_or(d.tempo_bpm),
        octave_offset: opt_int(obj, "octaveOffsetK", at)?.unwrap_or(d.octave_offset as i64) as i32,
    };
    meta.validate().map_err(|e| bad(at, e.to_string()))?;
    Ok(meta)
}

pub fn value_to_contexts(v: Option<&Value>, at: &str) -> Result<Contexts, IngestError> {
    let Some(v) = v else {
        return Ok(Contexts::default());
    };
    let obj = as_object(v, at)?;
    check_keys(obj, &["extra", "labels", "scale", "volume"], at)?;
    let mut c = Contexts::default();
    if let Some(extra) = obj.get("extra") {
        let at = format!("{at}/extra");
        let mut map = BTreeMap::new();
        for (k, v) in as_object(extra, &at)? {
            let s = v
                .as_str()
                .ok_or_else(|| bad(&format!("{at}/{k}"), "expected string"))?;
            map.insert(k.clone(), s.to_string());
        }
        c.extra = map;
    }
    if let Some(labels) = obj.get("labels") {
        let at = format!("{at}/labels");
        let arr = labels.as_array().ok_or_else(|| bad(&at, "expected array"))?;
        let mut set = BTreeSet::new();
        for (i, l) in arr.iter().enumerate() {
            match l.as_str() {
                Some(s) if !s.is_empty() => {
                    set.insert(s.to_string());
                }
                _ => return Err(bad(&format!("{at}/{i}"), "expected non-empty string")),
            }
        }
        c.labels = set;
    }
    if let Some(scale) = obj.get("scale") {
        let at = format!("{at}/scale");
        let sobj = as_object(scale, &at)?;
        check_keys(sobj, &["root", "intervals"], &at)?;
        let root = opt_int(sobj, "root", &at)?.ok_or_else(|| bad(&format!("{at}/root"), "missing"))?;
        let root = PitchClass::new(root as i32).map_err(|e| bad(&format!("{at}/root"), e.to_string()))?;
        let intervals = sobj
            .get("intervals")
            .and_then(Value::as_array)
            .ok_or_else(|| bad(&format!("{at}/intervals"), "expected array"))?
            .iter()
            .map(|x| x.as_u64().filter(|&n| n < 12).map(|n| n as u8))
            .collect::<Option<Vec<u8>>>()
            .ok_or_else(|| bad(&format!("{at}/intervals"), "expected integers 0-11"))?;
        c.scale = Some(Scale::new(root, intervals).map_err(|e| bad(&at, e.to_string()))?);
    }
    if let Some(vol) = opt_int(obj, "volume", at)? {
        if !(0..=127).contains(&vol) {
            return Err(bad(&format!("{at}/volume"), "expected 0-127"));
        }
        c.volume = Some(vol as u8);
    }
    Ok(c)
}

fn leaf_fields(
    obj: &Map<String, Value>,
    at: &str,
) -> Result<(Onset, Option<Duration>, Contexts), IngestError> {
    let measure = match opt_int(obj, "measure", at)? {
        Some(m) if m < 0 => return Err(bad(&format!("{at}/measure"), "expected non-negative")),
        m => m.map(|m| m as u32),
    };
    let beat = match opt_num(obj, "beat", at)? {
        Some(b) if b < 0.0 => return Err(bad(&format!("{at}/beat"), "expected non-negative")),
        b => b,
    };
    let duration = opt_num(obj, "dur", at)?
        .map(|d| Duration::new(d).map_err(|e| bad(&format!("{at}/dur"), e.to_string())))
        .transpose()?;
    let contexts = value_to_contexts(obj.get("contexts"), &format!("{at}/contexts"))?;
    Ok((Onset { measure, beat }, duration, contexts))
}

pub fn value_to_music(v: &Value, at: &str) -> Result<Music, IngestError> {
    let obj = as_object(v, at)?;
    let kind = obj
        .get("type")
        .and_then(Value::as_str)
        .ok_or_else(|| bad(&format!("{at}/type"), "expected \"note\", \"rest\", \"seq\" or \"par\""))?;
    match kind {
        "note" => {
            check_keys(obj, &["type", "pc", "oct", "measure", "beat", "dur", "contexts"], at)?;
            let class = opt_int(obj, "pc", at)?
                .map(|p| PitchClass::new(p as i32).map_err(|e| bad(&format!("{at}/pc"), e.to_string())))
                .transpose()?;
            let octave = opt_int(obj, "oct", at)?
                .map(|o| Octave::new(o as i32).map_err(|e| bad(&format!("{at}/oct"), e.to_string())))
                .transpose()?;
            let (onset, duration, contexts) = leaf_fields(obj, at)?;
            Ok(Music::Note(Note {
                pitch: Pitch { class, octave },
                duration,
                onset,
                contexts,
            }))
        }
        "rest" => {
            check_keys(obj, &["type", "measure", "beat", "dur", "contexts"], at)?;
            let (onset, duration, contexts) = leaf_fields(obj, at)?;
            Ok(Music::Rest(Rest {
                duration,
                onset,
                contexts,
            }))
        }
        "seq" | "par" => {
            check_keys(obj, &["type", "children", "contexts"], at)?;
            let arr = obj
                .get("children")
                .and_then(Value::as_array)
                .ok_or_else(|| bad(&format!("{at}/children"), "expected array"))?;
            if arr.is_empty() {
                return Err(bad(&format!("{at}/children"), "must not be empty"));
            }
            let children = arr
                .iter()
                .enumerate()
                .map(|(i, c)| value_to_music(c, &format!("{at}/children/{i}")))
                .collect::<Result<Vec<_>, _>>()?;
            let contexts = value_to_contexts(obj.get("contexts"), &format!("{at}/contexts"))?;
            let g = Group { children, contexts };
            Ok(if kind == "seq" { Music::Seq(g) } else { Music::Par(g) })
        }
        other => Err(bad(&format!("{at}/type"), format!("unknown node type {other:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c4() -> Music {
        TimedEvent::note(60, 0.0, 1.0).to_leaf(&ScoreMeta::default()).unwrap()
    }

    #[test]
    fn note_layout_is_fixed() {
        let v = music_to_value(&c4());
        assert_eq!(
            serde_json::to_string(&v).unwrap(),
            r#"{"type":"note","pc":0,"oct":4,"measure":0,"beat":0.0,"dur":1.0,"contexts":{}}"#
        );
    }

    #[test]
    fn contexts_sorted() {
        let mut c = Contexts {
            volume: Some(90),
            ..Default::default()
        };
        c.labels.insert("Part B".into());
        c.labels.insert("Part A".into());
        c.extra.insert("z".into(), "1".into());
        c.extra.insert("a".into(), "2".into());
        c.scale = Some(Scale::major(PitchClass::C));
        assert_eq!(
            serde_json::to_string(&contexts_to_value(&c)).unwrap(),
            r#"{"extra":{"a":"2","z":"1"},"labels":["Part A","Part B"],"scale":{"root":0,"intervals":[0,2,4,5,7,9,11]},"volume":90}"#
        );
        assert_eq!(value_to_contexts(Some(&contexts_to_value(&c)), "").unwrap(), c);
    }

    #[test]
    fn parses_schema_instance() {
        let text = r#"{"type":"note","pc":0,"oct":4,"measure":0,"beat":0.0,"dur":1.0,"contexts":{}}"#;
        let (m, meta) = import_json(text).unwrap();
        assert_eq!(m, c4());
        assert_eq!(meta, ScoreMeta::default());
    }

    #[test]
    fn roundtrip_with_meta() {
        let m = Music::seq(vec![c4(), TimedEvent::note(62, 1.0, 1.0).to_leaf(&ScoreMeta::default()).unwrap()]);
        let meta = ScoreMeta::with_meter(3.0);
        let text = export_json(&m, &meta);
        assert_eq!(import_json(&text).unwrap(), (m.clone(), meta));
        assert_eq!(export_json(&m, &meta), text);
    }

    #[test]
    fn errors_name_the_path() {
        let text = r#"{"score":{"type":"seq","children":[{"type":"note","pc":0,"octave":4}]}}"#;
        match import_json(text) {
            Err(IngestError::InvalidJson { pointer, .. }) => {
                assert_eq!(pointer, "/score/children/0/octave")
            }
            other => panic!("unexpected {other:?}"),
        }
        let text = r#"{"type":"note","pc":12}"#;
        match import_json(text) {
            Err(IngestError::InvalidJson { pointer, .. }) => assert_eq!(pointer, "/pc"),
            other => panic!("unexpected {other:?}"),
        }
        let text = r#"{"type":"par","children":[]}"#;
        assert!(matches!(import_json(text), Err(IngestError::InvalidJson { .. })));
        assert!(matches!(import_json("{"), Err(IngestError::InvalidJson { .. })));
    }
}

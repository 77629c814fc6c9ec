//! Reading and writing scores: MIDI, MusicXML and the JSON tree format.

mod json;
mod midi;
mod musicxml;

use std::fmt;
use std::path::Path as FsPath;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

pub use json::{
    contexts_to_value, events_to_value, export_json, import_json, meta_to_value, music_to_value,
    score_to_value, value_to_contexts, value_to_music, value_to_score,
};
pub use midi::{export_midi, parse_midi, EXPORT_DIVISION};
pub use musicxml::parse_musicxml;

use crate::model::{ModelError, Music, ScoreMeta, TimedEvent};
use crate::normalize::normalize;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("malformed MIDI: {0}")]
    MalformedMidi(String),
    #[error("unsupported SMF format {0}")]
    UnsupportedSmfFormat(u16),
    #[error("missing divisions")]
    MissingDivisions,
    #[error("unsupported meter change")]
    UnsupportedMeterChange,
    #[error("invalid MusicXML: {0}")]
    Xml(String),
    #[error("invalid score JSON at {pointer:?}: {message}")]
    InvalidJson { pointer: String, message: String },
    #[error("unrepresentable pitch {0}")]
    UnrepresentablePitch(i32),
    #[error("unsupported file extension: {0:?}")]
    UnsupportedExtension(String),
    #[error("{0}")]
    Model(#[from] ModelError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceFormat {
    Midi,
    MusicXml,
    Json,
}

impl SourceFormat {
    pub fn from_path(path: &FsPath) -> Result<Self, IngestError> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .unwrap_or_default();
        match ext.as_str() {
            "mid" | "midi" => Ok(SourceFormat::Midi),
            "xml" | "musicxml" => Ok(SourceFormat::MusicXml),
            "json" => Ok(SourceFormat::Json),
            _ => Err(IngestError::UnsupportedExtension(ext)),
        }
    }
}

impl FromStr for SourceFormat {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "midi" | "mid" => Ok(SourceFormat::Midi),
            "musicxml" | "xml" => Ok(SourceFormat::MusicXml),
            "json" => Ok(SourceFormat::Json),
            other => Err(IngestError::UnsupportedExtension(other.to_string())),
        }
    }
}

impl fmt::Display for SourceFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SourceFormat::Midi => "midi",
            SourceFormat::MusicXml => "musicxml",
            SourceFormat::Json => "json",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct IngestReport {
    pub source_format: SourceFormat,
    pub event_count: usize,
    pub warnings: Vec<String>,
    pub meta: ScoreMeta,
}

/// Raw result of reading an event-based format, before normalization.
#[derive(Debug, Clone)]
pub struct Ingested {
    pub events: Vec<TimedEvent>,
    pub meta: ScoreMeta,
    pub report: IngestReport,
}

/// Reads any supported format into a normalized score.
///
/// MIDI and MusicXML go through [`normalize`]; JSON trees are taken as given
/// after type validation.
pub fn load_score(bytes: &[u8], format: SourceFormat) -> Result<(Music, ScoreMeta, IngestReport), IngestError> {
    match format {
        SourceFormat::Json => {
            let text = std::str::from_utf8(bytes).map_err(|e| IngestError::InvalidJson {
                pointer: String::new(),
                message: e.to_string(),
            })?;
            let (music, meta) = import_json(text)?;
            music.validate()?;
            let report = IngestReport {
                source_format: SourceFormat::Json,
                event_count: music.note_count(),
                warnings: Vec::new(),
                meta,
            };
            Ok((music, meta, report))
        }
        SourceFormat::Midi | SourceFormat::MusicXml => {
            let ingested = if format == SourceFormat::Midi {
                parse_midi(bytes)?
            } else {
                let text = String::from_utf8_lossy(bytes);
                parse_musicxml(&text)?
            };
            let music = normalize(&ingested.events, &ingested.meta)?;
            Ok((music, ingested.meta, ingested.report))
        }
    }
}

pub fn read_score_file(path: &FsPath) -> Result<(Music, ScoreMeta, IngestReport), IngestError> {
    let format = SourceFormat::from_path(path)?;
    let bytes = std::fs::read(path)?;
    load_score(&bytes, format)
}

/// Serializes to JSON or MIDI depending on `format`.
pub fn save_score(m: &Music, meta: &ScoreMeta, format: SourceFormat) -> Result<Vec<u8>, IngestError> {
    match format {
        SourceFormat::Json => Ok(export_json(m, meta).into_bytes()),
        SourceFormat::Midi => export_midi(m, meta),
        SourceFormat::MusicXml => Err(IngestError::UnsupportedExtension("musicxml export".into())),
    }
}

pub fn write_score_file(path: &FsPath, m: &Music, meta: &ScoreMeta) -> Result<(), IngestError> {
    let bytes = save_score(m, meta, SourceFormat::from_path(path)?)?;
    std::fs::write(path, bytes)?;
    Ok(())
}

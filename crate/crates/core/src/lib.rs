//! Score-level symbolic music engine: a hierarchical music tree, ingest from
//! MIDI/MusicXML/JSON, pattern queries, transforms and a small English
//! command language with a stateful session.

pub mod model;
pub mod normalize;
pub mod ingest;
pub mod query;
pub mod transforms;
pub mod command;
pub mod render;
pub mod session;
pub mod batch;

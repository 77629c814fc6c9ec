//! Bulk operations over many independent scores or patterns.
//!
//! With the `parallel` feature (on by default) these run on the rayon pool;
//! the `_seq` variants are always available and give identical results.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::model::{ModelError, Music, ScoreMeta, TimedEvent};
use crate::normalize::normalize;
use crate::query::{select, Pattern, Selection};

pub fn normalize_many_seq(sets: &[Vec<TimedEvent>], meta: &ScoreMeta) -> Vec<Result<Music, ModelError>> {
    sets.iter().map(|s| normalize(s, meta)).collect()
}

pub fn select_many_seq(patterns: &[Pattern], scores: &[Music]) -> Vec<Vec<Selection>> {
    scores
        .iter()
        .map(|m| patterns.iter().map(|p| select(p, m)).collect())
        .collect()
}

#[cfg(feature = "parallel")]
pub fn normalize_many(sets: &[Vec<TimedEvent>], meta: &ScoreMeta) -> Vec<Result<Music, ModelError>> {
    sets.par_iter().map(|s| normalize(s, meta)).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn normalize_many(sets: &[Vec<TimedEvent>], meta: &ScoreMeta) -> Vec<Result<Music, ModelError>> {
    normalize_many_seq(sets, meta)
}

/// Every pattern against every score; `out[i][j]` is pattern `j` on score `i`.
#[cfg(feature = "parallel")]
pub fn select_many(patterns: &[Pattern], scores: &[Music]) -> Vec<Vec<Selection>> {
    scores
        .par_iter()
        .map(|m| patterns.iter().map(|p| select(p, m)).collect())
        .collect()
}

#[cfg(not(feature = "parallel"))]
pub fn select_many(patterns: &[Pattern], scores: &[Music]) -> Vec<Vec<Selection>> {
    select_many_seq(patterns, scores)
}

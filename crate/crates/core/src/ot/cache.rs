use std::sync::Arc;

use dashmap::DashMap;

use super::{app_distance, OtResult, SolverConfig};
use crate::error::Result;
use crate::store::ScreenSet;

type Key = (String, String, u64);

/// Concurrent memo of app-pair transport results keyed by
/// `(query id, target id, solver fingerprint)`.
#[derive(Debug, Default)]
pub struct OtCache {
    entries: DashMap<Key, Arc<OtResult>>,
}

impl OtCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, a: &str, b: &str, config: &SolverConfig) -> Option<Arc<OtResult>> {
        self.entries
            .get(&(a.to_owned(), b.to_owned(), config.fingerprint()))
            .map(|e| Arc::clone(&e))
    }

    /// Returns the cached result or computes it. Two threads racing on the
    /// same key may both compute; the first insert wins and both observe it.
    pub fn get_or_compute(
        &self,
        a: &ScreenSet,
        b: &ScreenSet,
        config: &SolverConfig,
    ) -> Result<Arc<OtResult>> {
        let key = (a.id.clone(), b.id.clone(), config.fingerprint());
        if let Some(hit) = self.entries.get(&key) {
            return Ok(Arc::clone(&hit));
        }
        let fresh = Arc::new(app_distance(a, b, config)?);
        Ok(Arc::clone(&self.entries.entry(key).or_insert(fresh)))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn clear(&self) {
        self.entries.clear();
    }
}

//! Query result storage shared by all oracle calls of a run.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::{Condvar, Mutex};

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// One persisted answer. On disk: `{"choice": n}`, `{"abstain": true}` or `{"name": "..."}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CachedAnswer {
    Choice { choice: usize },
    Abstain { abstain: bool },
    Name { name: String },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub hits: u64,
    /// Calls that actually reached the oracle.
    pub dispatches: u64,
    pub failures: u64,
    /// Estimated prompt tokens sent to the oracle.
    pub dispatched_tokens: u64,
}

#[derive(Debug, Default)]
struct Inner {
    entries: BTreeMap<String, CachedAnswer>,
    pending: HashSet<String>,
    stats: CacheStats,
}

/// Thread-safe key → answer map. Concurrent misses on one key wait for a single dispatch.
#[derive(Debug, Default)]
pub struct CacheStore {
    inner: Mutex<Inner>,
    ready: Condvar,
}

impl CacheStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Loads a persisted store; a missing file yields an empty store.
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Ok(Self::new());
        }
        let entries: BTreeMap<String, CachedAnswer> = serde_json::from_str(&fs::read_to_string(path)?)?;
        Ok(Self {
            inner: Mutex::new(Inner {
                entries,
                ..Default::default()
            }),
            ready: Condvar::new(),
        })
    }

    /// Writes the entries to a sibling temp file, then renames it over `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let body = serde_json::to_string_pretty(&self.entries())?;
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        fs::create_dir_all(dir)?;
        let mut tmp = tempfile_in(dir)?;
        tmp.1.write_all(body.as_bytes())?;
        tmp.1.sync_all()?;
        drop(tmp.1);
        fs::rename(&tmp.0, path)?;
        Ok(())
    }

    pub fn entries(&self) -> BTreeMap<String, CachedAnswer> {
        self.inner.lock().unwrap().entries.clone()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, key: &str) -> bool {
        self.inner.lock().unwrap().entries.contains_key(key)
    }

    pub fn stats(&self) -> CacheStats {
        self.inner.lock().unwrap().stats
    }

    pub fn reset_stats(&self) {
        self.inner.lock().unwrap().stats = CacheStats::default();
    }

    /// Returns the stored answer for `key`, or runs `dispatch` once and stores its result.
    /// A `None` from `dispatch` is a failure and is not stored.
    pub fn resolve(
        &self,
        key: &str,
        tokens: u64,
        dispatch: impl FnOnce() -> Option<CachedAnswer>,
    ) -> Option<CachedAnswer> {
        let mut g = self.inner.lock().unwrap();
        loop {
            if let Some(v) = g.entries.get(key) {
                let v = v.clone();
                g.stats.hits += 1;
                return Some(v);
            }
            if g.pending.contains(key) {
                g = self.ready.wait(g).unwrap();
                continue;
            }
            break;
        }
        g.pending.insert(key.to_owned());
        g.stats.dispatches += 1;
        g.stats.dispatched_tokens += tokens;
        drop(g);

        let result = dispatch();

        let mut g = self.inner.lock().unwrap();
        g.pending.remove(key);
        match &result {
            Some(v) => {
                g.entries.insert(key.to_owned(), v.clone());
            }
            None => g.stats.failures += 1,
        }
        drop(g);
        self.ready.notify_all();
        result
    }
}

impl PartialEq for CacheStore {
    fn eq(&self, other: &Self) -> bool {
        self.entries() == other.entries()
    }
}

fn tempfile_in(dir: &Path) -> std::io::Result<(std::path::PathBuf, fs::File)> {
    let pid = std::process::id();
    for n in 0u32.. {
        let p = dir.join(format!(".cache-{pid}-{n}.tmp"));
        match fs::OpenOptions::new().write(true).create_new(true).open(&p) {
            Ok(f) => return Ok((p, f)),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e),
        }
    }
    unreachable!()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    #[test]
    fn hit_after_miss() {
        let c = CacheStore::new();
        let calls = AtomicUsize::new(0);
        for _ in 0..3 {
            let v = c.resolve("k", 5, || {
                calls.fetch_add(1, Ordering::SeqCst);
                Some(CachedAnswer::Choice { choice: 2 })
            });
            assert_eq!(v, Some(CachedAnswer::Choice { choice: 2 }));
        }
        assert_eq!(calls.load(Ordering::SeqCst), 1);
        let s = c.stats();
        assert_eq!((s.hits, s.dispatches, s.dispatched_tokens), (2, 1, 5));
    }

    #[test]
    fn failures_are_not_stored() {
        let c = CacheStore::new();
        assert_eq!(c.resolve("k", 1, || None), None);
        assert!(!c.contains("k"));
        assert_eq!(c.stats().failures, 1);
    }

    #[test]
    fn concurrent_misses_coalesce() {
        let c = Arc::new(CacheStore::new());
        let calls = Arc::new(AtomicUsize::new(0));
        std::thread::scope(|s| {
            for _ in 0..8 {
                let c = Arc::clone(&c);
                let calls = Arc::clone(&calls);
                s.spawn(move || {
                    c.resolve("same", 1, || {
                        calls.fetch_add(1, Ordering::SeqCst);
                        std::thread::sleep(std::time::Duration::from_millis(30));
                        Some(CachedAnswer::Name { name: "x".into() })
                    })
                });
            }
        });
        assert_eq!(calls.load(Ordering::SeqCst), 1);
        assert_eq!(c.stats().dispatches, 1);
    }

    #[test]
    fn persist_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/cache.json");
        let c = CacheStore::new();
        c.resolve("a", 1, || Some(CachedAnswer::Choice { choice: 1 }));
        c.resolve("b", 1, || Some(CachedAnswer::Abstain { abstain: true }));
        c.resolve("c", 1, || Some(CachedAnswer::Name { name: "Change PIN".into() }));
        c.save(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"choice\": 1"));
        assert!(text.contains("\"abstain\": true"));
        let back = CacheStore::load(&path).unwrap();
        assert_eq!(back, c);
        assert!(CacheStore::load(&dir.path().join("missing.json")).unwrap().is_empty());
    }
}

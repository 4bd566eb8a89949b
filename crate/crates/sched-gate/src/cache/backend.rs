//! Cache storage. The trait keeps the gateway open to an external key-value
//! store; the required implementation is an in-memory map with exact
//! least-frequently-used eviction and a key-level fallback expiry.

use std::collections::{BTreeSet, HashMap};
use std::sync::{Arc, Mutex};

use thiserror::Error;

use super::{CacheEntry, CacheKey};

#[derive(Debug, Error)]
#[error("cache backend: {0}")]
pub struct BackendError(pub String);

pub trait CacheBackend: Send + Sync {
    /// Entry for `key`, unless absent or past its fallback expiry. An error
    /// must be treated by callers as a miss.
    fn get(&self, key: &CacheKey, now: f64) -> Result<Option<Arc<CacheEntry>>, BackendError>;

    /// Store an entry; the key disappears `fallback_ttl` seconds after this
    /// write (reads do not extend it).
    fn put(
        &self,
        key: &CacheKey,
        entry: CacheEntry,
        fallback_ttl: f64,
        now: f64,
    ) -> Result<(), BackendError>;

    fn len(&self) -> usize;
}

struct Slot {
    entry: Arc<CacheEntry>,
    expires_at: f64,
    freq: u64,
    seq: u64,
}

#[derive(Default)]
struct State {
    slots: HashMap<CacheKey, Slot>,
    /// Eviction order: lowest frequency first, then lowest sequence number
    /// (FIFO among equally popular keys).
    order: BTreeSet<(u64, u64, CacheKey)>,
    next_seq: u64,
}

impl State {
    fn remove(&mut self, key: &CacheKey) -> Option<Slot> {
        let slot = self.slots.remove(key)?;
        self.order.remove(&(slot.freq, slot.seq, key.clone()));
        Some(slot)
    }

    fn purge_expired(&mut self, now: f64) {
        let expired: Vec<CacheKey> = self
            .slots
            .iter()
            .filter(|(_, slot)| now >= slot.expires_at)
            .map(|(k, _)| k.clone())
            .collect();
        for key in expired {
            self.remove(&key);
        }
    }
}

pub struct MemoryBackend {
    capacity: usize,
    state: Mutex<State>,
}

impl MemoryBackend {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "cache capacity must be positive");
        Self {
            capacity,
            state: Mutex::new(State::default()),
        }
    }
}

impl CacheBackend for MemoryBackend {
    fn get(&self, key: &CacheKey, now: f64) -> Result<Option<Arc<CacheEntry>>, BackendError> {
        let mut state = self.state.lock().unwrap();
        let Some(slot) = state.slots.get(key) else {
            return Ok(None);
        };
        if now >= slot.expires_at {
            state.remove(key);
            return Ok(None);
        }
        let (old_freq, seq) = (slot.freq, slot.seq);
        let entry = slot.entry.clone();
        state.order.remove(&(old_freq, seq, key.clone()));
        state.order.insert((old_freq + 1, seq, key.clone()));
        state.slots.get_mut(key).unwrap().freq = old_freq + 1;
        Ok(Some(entry))
    }

    fn put(
        &self,
        key: &CacheKey,
        entry: CacheEntry,
        fallback_ttl: f64,
        now: f64,
    ) -> Result<(), BackendError> {
        let mut state = self.state.lock().unwrap();
        let expires_at = now + fallback_ttl;

        if let Some(slot) = state.slots.get_mut(key) {
            // Overwrite keeps the key's popularity.
            slot.entry = Arc::new(entry);
            slot.expires_at = expires_at;
            return Ok(());
        }

        if state.slots.len() >= self.capacity {
            state.purge_expired(now);
        }
        while state.slots.len() >= self.capacity {
            let victim = match state.order.iter().next() {
                Some((_, _, key)) => key.clone(),
                None => break,
            };
            state.remove(&victim);
        }

        let seq = state.next_seq;
        state.next_seq += 1;
        state.order.insert((1, seq, key.clone()));
        state.slots.insert(
            key.clone(),
            Slot {
                entry: Arc::new(entry),
                expires_at,
                freq: 1,
                seq,
            },
        );
        Ok(())
    }

    fn len(&self) -> usize {
        self.state.lock().unwrap().slots.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cache::AcceptClass;

    fn key(name: &str) -> CacheKey {
        CacheKey {
            user: None,
            method: "GET".into(),
            path: format!("/slurm/v1/{name}"),
            query: String::new(),
            accept: AcceptClass::Json,
        }
    }

    fn entry(at: f64) -> CacheEntry {
        CacheEntry::new(at, at + 10.0, 200, vec![], bytes::Bytes::from_static(b"{}"))
    }

    #[test]
    fn get_returns_what_was_put() {
        let backend = MemoryBackend::new(4);
        backend.put(&key("a"), entry(100.0), 1000.0, 100.0).unwrap();
        let got = backend.get(&key("a"), 101.0).unwrap().unwrap();
        assert_eq!(got.generated_at, 100.0);
        assert!(backend.get(&key("b"), 101.0).unwrap().is_none());
    }

    #[test]
    fn fallback_expiry_is_fixed_at_write_time() {
        let backend = MemoryBackend::new(4);
        backend.put(&key("a"), entry(0.0), 100.0, 0.0).unwrap();
        // Reads inside the window do not extend it.
        assert!(backend.get(&key("a"), 99.0).unwrap().is_some());
        assert!(backend.get(&key("a"), 99.9).unwrap().is_some());
        assert!(backend.get(&key("a"), 100.0).unwrap().is_none());
        assert_eq!(backend.len(), 0, "expired key is gone");
    }

    #[test]
    fn capacity_is_never_exceeded() {
        let backend = MemoryBackend::new(3);
        for i in 0..10 {
            backend.put(&key(&format!("k{i}")), entry(0.0), 1000.0, 0.0).unwrap();
            assert!(backend.len() <= 3);
        }
    }

    #[test]
    fn least_frequently_used_keys_are_evicted() {
        let backend = MemoryBackend::new(4);
        let now = 0.0;
        for name in ["k1", "k2", "k3", "k4"] {
            backend.put(&key(name), entry(now), 1000.0, now).unwrap();
        }
        // Skew the frequencies: k1 hottest, k4 untouched.
        for _ in 0..5 {
            backend.get(&key("k1"), now).unwrap();
        }
        for _ in 0..3 {
            backend.get(&key("k2"), now).unwrap();
        }
        backend.get(&key("k3"), now).unwrap();

        backend.put(&key("k5"), entry(now), 1000.0, now).unwrap();
        assert!(backend.get(&key("k4"), now).unwrap().is_none(), "k4 was least used");
        assert!(backend.get(&key("k1"), now).unwrap().is_some());
        assert!(backend.get(&key("k3"), now).unwrap().is_some());
    }

    #[test]
    fn ties_break_fifo() {
        let backend = MemoryBackend::new(2);
        backend.put(&key("first"), entry(0.0), 1000.0, 0.0).unwrap();
        backend.put(&key("second"), entry(0.0), 1000.0, 0.0).unwrap();
        // Equal frequency (1 each): the older insertion goes first.
        backend.put(&key("third"), entry(0.0), 1000.0, 0.0).unwrap();
        assert!(backend.get(&key("first"), 0.0).unwrap().is_none());
        assert!(backend.get(&key("second"), 0.0).unwrap().is_some());
    }

    #[test]
    fn expired_keys_are_purged_before_evicting_live_ones() {
        let backend = MemoryBackend::new(2);
        backend.put(&key("dying"), entry(0.0), 5.0, 0.0).unwrap();
        backend.put(&key("hot"), entry(0.0), 1000.0, 0.0).unwrap();
        for _ in 0..10 {
            backend.get(&key("hot"), 1.0).unwrap();
        }
        // At t=10 "dying" is past its fallback expiry; the new key must
        // displace it, not the hot live key, even though "dying" also has
        // the lower frequency here.
        backend.put(&key("new"), entry(10.0), 1000.0, 10.0).unwrap();
        assert!(backend.get(&key("hot"), 10.0).unwrap().is_some());
        assert!(backend.get(&key("new"), 10.0).unwrap().is_some());
    }

    #[test]
    fn overwrite_keeps_frequency_and_resets_expiry() {
        let backend = MemoryBackend::new(2);
        backend.put(&key("a"), entry(0.0), 10.0, 0.0).unwrap();
        for _ in 0..4 {
            backend.get(&key("a"), 1.0).unwrap();
        }
        backend.put(&key("a"), entry(8.0), 10.0, 8.0).unwrap();
        // New expiry window runs from the overwrite.
        assert!(backend.get(&key("a"), 17.0).unwrap().is_some());
        // Popularity survived: a fresh key plus one more insert evicts the
        // newcomer, not "a".
        backend.put(&key("b"), entry(8.0), 10.0, 8.0).unwrap();
        backend.put(&key("c"), entry(8.0), 10.0, 8.0).unwrap();
        assert!(backend.get(&key("a"), 8.0).unwrap().is_some());
        assert!(backend.get(&key("b"), 8.0).unwrap().is_none());
    }
}

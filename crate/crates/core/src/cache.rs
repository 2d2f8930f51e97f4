//! Thread-safe LRU cache that hands out shared references instead of copies.
//!
//! Recency is refreshed on both `get` and `put`.

use std::collections::{BTreeMap, HashMap};

use parking_lot::Mutex;
use thiserror::Error;

use crate::value::Handle;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CacheError {
    #[error("cache capacity must be at least 1")]
    ZeroCapacity,
}

#[derive(Debug, Clone)]
pub struct CacheEntry<V> {
    pub key: String,
    pub value: V,
    pub last_access: u64,
}

struct State<V> {
    entries: HashMap<String, CacheEntry<V>>,
    /// last_access -> key; the first entry is the least recently used.
    order: BTreeMap<u64, String>,
    clock: u64,
}

pub struct LruCache<V> {
    capacity: usize,
    state: Mutex<State<V>>,
}

/// The cache the middleware uses for event payloads.
pub type HandleCache = LruCache<Handle>;

impl<V: Clone> LruCache<V> {
    pub fn new(capacity: usize) -> Result<Self, CacheError> {
        if capacity == 0 {
            return Err(CacheError::ZeroCapacity);
        }
        Ok(LruCache {
            capacity,
            state: Mutex::new(State {
                entries: HashMap::with_capacity(capacity),
                order: BTreeMap::new(),
                clock: 0,
            }),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.state.lock().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Inserts or replaces `key`, marking it most recent. Returns the key
    /// evicted to stay within capacity, if any.
    pub fn put(&self, key: impl Into<String>, value: V) -> Option<String> {
        let key = key.into();
        let mut st = self.state.lock();
        st.clock += 1;
        let now = st.clock;
        if let Some(entry) = st.entries.get_mut(&key) {
            let old = std::mem::replace(&mut entry.last_access, now);
            entry.value = value;
            st.order.remove(&old);
            st.order.insert(now, key);
            return None;
        }
        st.order.insert(now, key.clone());
        st.entries.insert(
            key.clone(),
            CacheEntry {
                key,
                value,
                last_access: now,
            },
        );
        if st.entries.len() > self.capacity {
            let (_, victim) = st.order.pop_first().expect("non-empty order");
            st.entries.remove(&victim);
            return Some(victim);
        }
        None
    }

    /// Returns the stored value (an `Arc` clone for handles) and refreshes its recency.
    pub fn get(&self, key: &str) -> Option<V> {
        let mut st = self.state.lock();
        st.clock += 1;
        let now = st.clock;
        let entry = st.entries.get_mut(key)?;
        let old = std::mem::replace(&mut entry.last_access, now);
        let value = entry.value.clone();
        st.order.remove(&old);
        st.order.insert(now, key.to_string());
        Some(value)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.state.lock().entries.contains_key(key)
    }

    pub fn remove(&self, key: &str) -> Option<V> {
        let mut st = self.state.lock();
        let entry = st.entries.remove(key)?;
        st.order.remove(&entry.last_access);
        Some(entry.value)
    }

    /// Keys from least to most recently used.
    pub fn keys_by_recency(&self) -> Vec<String> {
        self.state.lock().order.values().cloned().collect()
    }

    pub fn entry(&self, key: &str) -> Option<CacheEntry<V>> {
        self.state.lock().entries.get(key).cloned()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evicts_least_recent() {
        let c = LruCache::new(2).unwrap();
        assert_eq!(c.put("a", 1), None);
        assert_eq!(c.put("b", 2), None);
        assert_eq!(c.get("a"), Some(1));
        assert_eq!(c.put("c", 3), Some("b".to_string()));
        assert_eq!(c.get("b"), None);
        assert_eq!(c.keys_by_recency(), vec!["a", "c"]);
    }

    #[test]
    fn update_does_not_evict() {
        let c = LruCache::new(2).unwrap();
        c.put("a", 1);
        c.put("b", 2);
        assert_eq!(c.put("a", 10), None);
        assert_eq!(c.get("a"), Some(10));
        assert_eq!(c.len(), 2);
    }

    #[test]
    fn zero_capacity() {
        assert_eq!(LruCache::<u8>::new(0).err(), Some(CacheError::ZeroCapacity));
    }

    #[test]
    fn handles_come_back_identical() {
        let c = HandleCache::new(4).unwrap();
        let h = Handle::new("frame", vec![1u8; 64]);
        c.put("frame", h.clone());
        assert!(c.get("frame").unwrap().ptr_eq(&h));
        assert!(c.get("absent").is_none());
    }

    #[test]
    fn access_clock_strictly_increases() {
        let c = LruCache::new(3).unwrap();
        c.put("a", ());
        let t0 = c.entry("a").unwrap().last_access;
        c.get("a");
        let t1 = c.entry("a").unwrap().last_access;
        c.put("a", ());
        let t2 = c.entry("a").unwrap().last_access;
        assert!(t0 < t1 && t1 < t2);
    }
}

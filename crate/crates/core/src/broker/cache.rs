use std::collections::{BTreeMap, HashMap};
use std::time::Duration;

use sha2::{Digest, Sha256};

use crate::canonical;
use crate::policy::{Decision, PolicyVersion, RequestContext};
use crate::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CacheSettings {
    pub enabled: bool,
    pub ttl: Duration,
    pub capacity: usize,
}

impl Default for CacheSettings {
    fn default() -> Self {
        CacheSettings {
            enabled: false,
            ttl: Duration::from_secs(30),
            capacity: 1024,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub(crate) struct CacheKey {
    version: PolicyVersion,
    subject: String,
    claims_hash: [u8; 32],
    resource: String,
    action: String,
}

impl CacheKey {
    pub(crate) fn new(version: &PolicyVersion, ctx: &RequestContext) -> Self {
        let claims = canonical::to_canonical_bytes(&ctx.claims).expect("claims serialize");
        CacheKey {
            version: version.clone(),
            subject: ctx.subject.to_string(),
            claims_hash: Sha256::digest(claims).into(),
            resource: ctx.resource.clone(),
            action: ctx.action.clone(),
        }
    }
}

struct Entry {
    decision: Decision,
    expires_at: Timestamp,
    last_used: u64,
}

/// Bounded LRU of policy decisions. Stores decisions only, never credentials.
pub(crate) struct DecisionCache {
    settings: CacheSettings,
    entries: HashMap<CacheKey, Entry>,
    recency: BTreeMap<u64, CacheKey>,
    tick: u64,
    hits: u64,
    misses: u64,
}

impl DecisionCache {
    pub(crate) fn new(settings: CacheSettings) -> Self {
        DecisionCache {
            settings,
            entries: HashMap::new(),
            recency: BTreeMap::new(),
            tick: 0,
            hits: 0,
            misses: 0,
        }
    }

    pub(crate) fn enabled(&self) -> bool {
        self.settings.enabled && self.settings.capacity > 0
    }

    pub(crate) fn get(&mut self, key: &CacheKey, now: Timestamp) -> Option<Decision> {
        if !self.enabled() {
            return None;
        }
        self.tick += 1;
        let tick = self.tick;
        let Some(entry) = self.entries.get_mut(key) else {
            self.misses += 1;
            return None;
        };
        if now >= entry.expires_at {
            let stale = entry.last_used;
            self.entries.remove(key);
            self.recency.remove(&stale);
            self.misses += 1;
            return None;
        }
        self.recency.remove(&entry.last_used);
        entry.last_used = tick;
        self.recency.insert(tick, key.clone());
        self.hits += 1;
        Some(entry.decision.clone())
    }

    /// `valid_until` bounds the entry further, e.g. at the next policy
    /// time-window edge.
    pub(crate) fn insert(
        &mut self,
        key: CacheKey,
        decision: Decision,
        now: Timestamp,
        valid_until: Option<Timestamp>,
    ) {
        if !self.enabled() {
            return;
        }
        let mut expires_at = now + self.settings.ttl;
        if let Some(limit) = valid_until {
            expires_at = expires_at.min(limit);
        }
        if expires_at <= now {
            return;
        }
        self.tick += 1;
        if let Some(old) = self.entries.remove(&key) {
            self.recency.remove(&old.last_used);
        }
        while self.entries.len() >= self.settings.capacity {
            let Some((_, oldest)) = self.recency.pop_first() else {
                break;
            };
            self.entries.remove(&oldest);
        }
        self.recency.insert(self.tick, key.clone());
        self.entries.insert(
            key,
            Entry {
                decision,
                expires_at,
                last_used: self.tick,
            },
        );
    }

    pub(crate) fn clear(&mut self) {
        self.entries.clear();
        self.recency.clear();
    }

    pub(crate) fn len(&self) -> usize {
        self.entries.len()
    }

    pub(crate) fn stats(&self) -> (u64, u64) {
        (self.hits, self.misses)
    }
}

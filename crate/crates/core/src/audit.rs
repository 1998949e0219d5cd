//! Append-only, hash-chained audit log.
//!
//! Each event's `this_hash` is `SHA-256(prev_hash || canonical(seq, timestamp,
//! kind, request_id, payload))`, where `canonical(..)` is the canonical JSON
//! object with exactly those five keys. Event 0 chains from 32 zero bytes.
//!
//! On disk the log is one canonical JSON object per line (keys `kind`,
//! `payload`, `prev_hash`, `request_id`, `seq`, `this_hash`, `timestamp`;
//! hashes as lowercase hex), followed by `\n`. A sibling `<log>.head` file
//! holds `{"count":N,"head_hash":"<hex>"}` and is rewritten after every
//! append, so dropping events from the end of the log is detectable.

use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::canonical;
use crate::Timestamp;

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("audit storage failure: {0}")]
    Storage(#[from] io::Error),
    #[error("audit chain broken at seq {first_bad_seq}")]
    ChainBroken { first_bad_seq: u64 },
    #[error("audit head file does not match the log: {0}")]
    HeadMismatch(String),
    #[error("malformed audit filter: {0}")]
    MalformedFilter(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Decision,
    Approval,
    Issuance,
    PolicyChange,
    BundleChange,
    Anomaly,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Decision => "decision",
            EventKind::Approval => "approval",
            EventKind::Issuance => "issuance",
            EventKind::PolicyChange => "policy_change",
            EventKind::BundleChange => "bundle_change",
            EventKind::Anomaly => "anomaly",
        }
    }
}

impl FromStr for EventKind {
    type Err = AuditError;

    fn from_str(s: &str) -> Result<Self, AuditError> {
        [
            EventKind::Decision,
            EventKind::Approval,
            EventKind::Issuance,
            EventKind::PolicyChange,
            EventKind::BundleChange,
            EventKind::Anomaly,
        ]
        .into_iter()
        .find(|k| k.as_str() == s)
        .ok_or_else(|| AuditError::MalformedFilter(format!("unknown event kind {s:?}")))
    }
}

/// A 256-bit chain digest, hex on the wire.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct ChainDigest(pub [u8; 32]);

impl ChainDigest {
    pub const ZERO: ChainDigest = ChainDigest([0; 32]);

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(text: &str) -> Option<Self> {
        let mut out = [0u8; 32];
        hex::decode_to_slice(text, &mut out).ok()?;
        Some(ChainDigest(out))
    }
}

impl fmt::Debug for ChainDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ChainDigest({})", self.to_hex())
    }
}

impl fmt::Display for ChainDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for ChainDigest {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for ChainDigest {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        // only the lowercase form is canonical
        if text.bytes().any(|b| b.is_ascii_uppercase()) {
            return Err(serde::de::Error::custom("digest must be lowercase hex"));
        }
        ChainDigest::from_hex(&text)
            .ok_or_else(|| serde::de::Error::custom("digest must be 64 hex characters"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditEvent {
    pub seq: u64,
    pub timestamp: Timestamp,
    pub kind: EventKind,
    pub request_id: Option<String>,
    pub payload: Value,
    pub prev_hash: ChainDigest,
    pub this_hash: ChainDigest,
}

impl AuditEvent {
    /// Recomputes this event's hash from its content and `prev_hash`.
    pub fn compute_hash(&self) -> ChainDigest {
        chain_hash(
            &self.prev_hash,
            self.seq,
            self.timestamp,
            self.kind,
            self.request_id.as_deref(),
            &self.payload,
        )
    }

    /// The on-disk line, without the trailing newline.
    pub fn to_line(&self) -> String {
        canonical::to_canonical_string(self).expect("audit event serializes")
    }

    pub fn subject(&self) -> Option<&str> {
        self.payload.get("subject").and_then(Value::as_str)
    }
}

fn chain_hash(
    prev: &ChainDigest,
    seq: u64,
    timestamp: Timestamp,
    kind: EventKind,
    request_id: Option<&str>,
    payload: &Value,
) -> ChainDigest {
    let body = canonical::to_canonical_bytes(&json!({
        "seq": seq,
        "timestamp": timestamp,
        "kind": kind,
        "request_id": request_id,
        "payload": payload,
    }))
    .expect("event body serializes");
    let mut hasher = Sha256::new();
    hasher.update(prev.0);
    hasher.update(&body);
    ChainDigest(hasher.finalize().into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChainStatus {
    Ok { count: u64 },
    Broken { first_bad_seq: u64 },
}

impl ChainStatus {
    pub fn is_ok(&self) -> bool {
        matches!(self, ChainStatus::Ok { .. })
    }
}

/// Checks sequence numbers, links and hashes from genesis onwards.
pub fn verify_chain(events: &[AuditEvent]) -> ChainStatus {
    let mut prev = ChainDigest::ZERO;
    for (i, event) in events.iter().enumerate() {
        let i = i as u64;
        if event.seq != i || event.prev_hash != prev || event.compute_hash() != event.this_hash {
            return ChainStatus::Broken { first_bad_seq: i };
        }
        prev = event.this_hash;
    }
    ChainStatus::Ok {
        count: events.len() as u64,
    }
}

/// Parses and verifies raw log bytes. A line that fails to parse, is not in
/// canonical form, or breaks the chain marks its position as the first bad seq.
pub fn verify_log_bytes(bytes: &[u8]) -> (ChainStatus, Vec<AuditEvent>) {
    let mut verifier = ChainVerifier::new();
    let events = verifier.push_bytes(bytes);
    (verifier.status(), events)
}

/// Incremental form of [`verify_log_bytes`], for checking a log as it grows.
/// Once a line fails, every later line is ignored.
#[derive(Debug, Clone)]
pub struct ChainVerifier {
    verified: u64,
    prev: ChainDigest,
    broken: Option<u64>,
}

impl Default for ChainVerifier {
    fn default() -> Self {
        Self::new()
    }
}

impl ChainVerifier {
    pub fn new() -> Self {
        ChainVerifier {
            verified: 0,
            prev: ChainDigest::ZERO,
            broken: None,
        }
    }

    /// Verifies the next line, given without its trailing newline.
    pub fn push_line(&mut self, line: &[u8]) -> Option<AuditEvent> {
        if self.broken.is_some() {
            return None;
        }
        let seq = self.verified;
        let event = std::str::from_utf8(line)
            .ok()
            .and_then(|text| {
                serde_json::from_str::<AuditEvent>(text)
                    .ok()
                    .filter(|e| e.to_line() == text)
            })
            .filter(|e| {
                e.seq == seq && e.prev_hash == self.prev && e.compute_hash() == e.this_hash
            });
        match &event {
            Some(e) => {
                self.prev = e.this_hash;
                self.verified += 1;
            }
            None => self.broken = Some(seq),
        }
        event
    }

    /// Verifies newline-terminated lines; a non-empty unterminated tail
    /// counts as a line. Returns the events that verified.
    pub fn push_bytes(&mut self, bytes: &[u8]) -> Vec<AuditEvent> {
        let mut events = Vec::new();
        for line in split_lines(bytes) {
            match self.push_line(line) {
                Some(e) => events.push(e),
                None => break,
            }
        }
        events
    }

    pub fn status(&self) -> ChainStatus {
        match self.broken {
            Some(first_bad_seq) => ChainStatus::Broken { first_bad_seq },
            None => ChainStatus::Ok {
                count: self.verified,
            },
        }
    }
}

/// Lines terminated by `\n`; a non-empty unterminated tail counts as a line.
fn split_lines(bytes: &[u8]) -> impl Iterator<Item = &[u8]> {
    let trimmed = bytes.strip_suffix(b"\n").unwrap_or(bytes);
    let empty = bytes.is_empty();
    trimmed.split(|&b| b == b'\n').filter(move |_| !empty)
}

/// Externally persisted pointer to the end of the chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainHead {
    pub count: u64,
    pub head_hash: ChainDigest,
}

impl ChainHead {
    pub fn of(events: &[AuditEvent]) -> Self {
        ChainHead {
            count: events.len() as u64,
            head_hash: events.last().map_or(ChainDigest::ZERO, |e| e.this_hash),
        }
    }

    pub fn parse(bytes: &[u8]) -> Option<Self> {
        serde_json::from_slice(bytes).ok()
    }

    pub fn to_json(&self) -> String {
        canonical::to_canonical_string(self).expect("head serializes")
    }
}

/// Compares a head pointer against a verified event list.
pub fn check_head(events: &[AuditEvent], head: &ChainHead) -> Result<(), AuditError> {
    let actual = ChainHead::of(events);
    if actual == *head {
        return Ok(());
    }
    if head.count > actual.count {
        return Err(AuditError::HeadMismatch(format!(
            "head records {} events but the log holds {} (truncated)",
            head.count, actual.count
        )));
    }
    Err(AuditError::HeadMismatch(format!(
        "head records {} events ending in {}, log holds {} ending in {}",
        head.count, head.head_hash, actual.count, actual.head_hash
    )))
}

/// Where appended events go. Implementations must be durable on `Ok`.
pub trait AuditStore: Send {
    fn persist(&mut self, event: &AuditEvent, head: &ChainHead) -> io::Result<()>;
}

/// Keeps nothing beyond the in-memory event list.
#[derive(Debug, Default)]
pub struct MemoryStore;

impl AuditStore for MemoryStore {
    fn persist(&mut self, _event: &AuditEvent, _head: &ChainHead) -> io::Result<()> {
        Ok(())
    }
}

/// Newline-delimited log file plus head file.
#[derive(Debug)]
pub struct FileStore {
    file: File,
    head_path: PathBuf,
    sync: bool,
}

impl FileStore {
    pub fn head_path_for(log_path: &Path) -> PathBuf {
        let mut name = log_path.as_os_str().to_owned();
        name.push(".head");
        PathBuf::from(name)
    }

    fn write_head(&self, head: &ChainHead) -> io::Result<()> {
        let tmp = self.head_path.with_extension("head.tmp");
        {
            let mut f = File::create(&tmp)?;
            f.write_all(head.to_json().as_bytes())?;
            if self.sync {
                f.sync_data()?;
            }
        }
        fs::rename(&tmp, &self.head_path)
    }
}

impl AuditStore for FileStore {
    fn persist(&mut self, event: &AuditEvent, head: &ChainHead) -> io::Result<()> {
        let mut line = event.to_line().into_bytes();
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.flush()?;
        if self.sync {
            self.file.sync_data()?;
        }
        self.write_head(head)
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct AuditFilter {
    pub kind: Option<EventKind>,
    pub request_id: Option<String>,
    pub subject: Option<String>,
    /// Inclusive.
    pub seq_from: Option<u64>,
    /// Inclusive.
    pub seq_to: Option<u64>,
    /// Inclusive.
    pub since: Option<Timestamp>,
    /// Exclusive.
    pub until: Option<Timestamp>,
}

impl AuditFilter {
    pub fn validate(&self) -> Result<(), AuditError> {
        if let (Some(a), Some(b)) = (self.seq_from, self.seq_to) {
            if a > b {
                return Err(AuditError::MalformedFilter(format!(
                    "seq_from {a} > seq_to {b}"
                )));
            }
        }
        if let (Some(a), Some(b)) = (self.since, self.until) {
            if a > b {
                return Err(AuditError::MalformedFilter("since is after until".into()));
            }
        }
        Ok(())
    }

    pub fn matches(&self, e: &AuditEvent) -> bool {
        self.kind.is_none_or(|k| e.kind == k)
            && self
                .request_id
                .as_deref()
                .is_none_or(|r| e.request_id.as_deref() == Some(r))
            && self
                .subject
                .as_deref()
                .is_none_or(|s| e.subject() == Some(s))
            && self.seq_from.is_none_or(|a| e.seq >= a)
            && self.seq_to.is_none_or(|b| e.seq <= b)
            && self.since.is_none_or(|a| e.timestamp >= a)
            && self.until.is_none_or(|b| e.timestamp < b)
    }
}

pub struct AuditLog {
    events: Vec<AuditEvent>,
    store: Box<dyn AuditStore>,
}

impl AuditLog {
    pub fn in_memory() -> Self {
        Self::with_store(Box::new(MemoryStore))
    }

    pub fn with_store(store: Box<dyn AuditStore>) -> Self {
        AuditLog {
            events: Vec::new(),
            store,
        }
    }

    /// Opens (or creates) a file-backed log, verifying the existing chain and
    /// the head file before resuming appends from the verified head.
    pub fn open(path: &Path, sync: bool) -> Result<Self, AuditError> {
        let bytes = match fs::read(path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        let (status, events) = verify_log_bytes(&bytes);
        if let ChainStatus::Broken { first_bad_seq } = status {
            return Err(AuditError::ChainBroken { first_bad_seq });
        }
        let head_path = FileStore::head_path_for(path);
        match fs::read(&head_path) {
            Ok(raw) => {
                let head = ChainHead::parse(&raw).ok_or_else(|| {
                    AuditError::HeadMismatch("head file is not a valid record".into())
                })?;
                // a crash between the log append and the head rewrite leaves
                // the log exactly one event ahead; anything else is tampering
                let one_ahead = head.count + 1 == events.len() as u64
                    && ChainHead::of(&events[..events.len() - 1]) == head;
                if !one_ahead {
                    check_head(&events, &head)?;
                }
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                if !events.is_empty() {
                    return Err(AuditError::HeadMismatch(
                        "head file missing for a non-empty log".into(),
                    ));
                }
            }
            Err(e) => return Err(e.into()),
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        let store = FileStore {
            file,
            head_path,
            sync,
        };
        store.write_head(&ChainHead::of(&events))?;
        Ok(AuditLog {
            events,
            store: Box::new(store),
        })
    }

    /// Appends and persists one event. Nothing is recorded in memory unless the
    /// store reports success.
    pub fn append(
        &mut self,
        kind: EventKind,
        request_id: Option<&str>,
        payload: Value,
        now: Timestamp,
    ) -> Result<&AuditEvent, AuditError> {
        let seq = self.events.len() as u64;
        let prev_hash = self
            .events
            .last()
            .map_or(ChainDigest::ZERO, |e| e.this_hash);
        let this_hash = chain_hash(&prev_hash, seq, now, kind, request_id, &payload);
        let event = AuditEvent {
            seq,
            timestamp: now,
            kind,
            request_id: request_id.map(str::to_owned),
            payload,
            prev_hash,
            this_hash,
        };
        let head = ChainHead {
            count: seq + 1,
            head_hash: this_hash,
        };
        self.store.persist(&event, &head)?;
        self.events.push(event);
        Ok(self.events.last().expect("just pushed"))
    }

    pub fn events(&self) -> &[AuditEvent] {
        &self.events
    }

    pub fn get(&self, seq: u64) -> Option<&AuditEvent> {
        self.events.get(seq as usize)
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn head(&self) -> ChainHead {
        ChainHead::of(&self.events)
    }

    pub fn verify(&self) -> ChainStatus {
        verify_chain(&self.events)
    }

    pub fn query(&self, filter: &AuditFilter) -> Result<Vec<AuditEvent>, AuditError> {
        filter.validate()?;
        Ok(self
            .events
            .iter()
            .filter(|e| filter.matches(e))
            .cloned()
            .collect())
    }
}

impl fmt::Debug for AuditLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AuditLog")
            .field("len", &self.events.len())
            .field("head", &self.head())
            .finish()
    }
}

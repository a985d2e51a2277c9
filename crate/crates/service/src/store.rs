//! Session state and the pluggable store that holds it.

use std::collections::{HashMap, HashSet, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, OnceLock, RwLock};

use image::RgbImage;
use serde::Serialize;
use thiserror::Error;
use xfr_core::qa::AnswerResult;
use xfr_core::{ExplainabilityTable, Explained, QAContext, SaliencyMap, SaliencyMethod, VerificationRecord};

use crate::clock::Clock;

/// Expired ids remembered so lookups can answer "gone" instead of
/// "never existed".
pub const DEFAULT_TOMBSTONES: usize = 100_000;

/// Minimum clock time between the sweeps triggered by inserts.
pub const INSERT_SWEEP_INTERVAL_MS: u64 = 1_000;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StoreError {
    #[error("session id {0} already exists")]
    Collision(String),
}

/// A fresh 128-bit random id as 32 lowercase hex digits.
pub fn new_session_id() -> String {
    format!("{:032x}", rand::random::<u128>())
}

/// Everything computed at verification time. Immutable once stored.
#[derive(Debug)]
pub struct SessionData {
    pub record: VerificationRecord,
    pub table: ExplainabilityTable,
    pub maps: [SaliencyMap; 5],
    /// Aligned probe face the overlays are drawn on.
    pub face: RgbImage,
    pub context: QAContext,
}

impl From<Explained> for SessionData {
    fn from(e: Explained) -> Self {
        Self {
            record: e.record,
            table: e.table,
            maps: e.maps,
            face: e.face_a.pixels().clone(),
            context: e.context,
        }
    }
}

impl SessionData {
    pub fn map(&self, method: SaliencyMethod) -> &SaliencyMap {
        self.maps.iter().find(|m| m.method() == method).expect("all five methods are present")
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Turn {
    pub question: String,
    #[serde(flatten)]
    pub result: AnswerResult,
}

#[derive(Debug)]
pub struct Session {
    pub id: String,
    pub data: Arc<SessionData>,
    pub created_at_ms: u64,
    pub ttl_s: u64,
    last_access_ms: AtomicU64,
    /// Held for the whole of an /ask, which serializes asks per session.
    pub turns: tokio::sync::Mutex<Vec<Turn>>,
    heatmaps: [OnceLock<Vec<u8>>; 5],
}

impl Session {
    pub fn new(id: String, data: Arc<SessionData>, now_ms: u64, ttl_s: u64) -> Self {
        Self {
            id,
            data,
            created_at_ms: now_ms,
            ttl_s,
            last_access_ms: AtomicU64::new(now_ms),
            turns: tokio::sync::Mutex::new(Vec::new()),
            heatmaps: Default::default(),
        }
    }

    pub fn last_access_ms(&self) -> u64 {
        self.last_access_ms.load(Ordering::SeqCst)
    }

    pub fn expires_at_ms(&self) -> u64 {
        self.last_access_ms().saturating_add(self.ttl_s.saturating_mul(1000))
    }

    pub fn is_expired(&self, now_ms: u64) -> bool {
        now_ms > self.expires_at_ms()
    }

    fn touch(&self, now_ms: u64) {
        self.last_access_ms.fetch_max(now_ms, Ordering::SeqCst);
    }

    /// Overlay PNG for `method`, rendered on first request.
    pub fn heatmap_png(&self, method: SaliencyMethod) -> &[u8] {
        let i = SaliencyMethod::ALL.iter().position(|m| *m == method).expect("known method");
        self.heatmaps[i].get_or_init(|| xfr_core::render::overlay_png(&self.data.face, self.data.map(method)))
    }

    pub fn heatmaps_rendered(&self) -> usize {
        self.heatmaps.iter().filter(|h| h.get().is_some()).count()
    }
}

pub enum Lookup {
    Live(Arc<Session>),
    Expired,
    Missing,
}

pub trait SessionStore: Send + Sync {
    fn insert(&self, session: Session) -> Result<Arc<Session>, StoreError>;

    /// Finds a live session and refreshes its last access time.
    fn get(&self, id: &str) -> Lookup;

    /// Drops every expired session; returns how many were removed.
    fn purge_expired(&self) -> usize;

    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Default)]
struct Tombstones {
    set: HashSet<String>,
    order: VecDeque<String>,
}

impl Tombstones {
    fn add(&mut self, id: String, cap: usize) {
        if cap == 0 || !self.set.insert(id.clone()) {
            return;
        }
        self.order.push_back(id);
        while self.order.len() > cap {
            if let Some(old) = self.order.pop_front() {
                self.set.remove(&old);
            }
        }
    }
}

/// Process-local store. Expired sessions are dropped on lookup and by a
/// sweep that inserts trigger at most once per second, so memory stays
/// bounded by the sessions alive within the last ttl plus one second.
pub struct InMemoryStore {
    clock: Arc<dyn Clock>,
    next_sweep_ms: AtomicU64,
    sessions: RwLock<HashMap<String, Arc<Session>>>,
    tombstones: Mutex<Tombstones>,
    tombstone_cap: usize,
}

impl InMemoryStore {
    pub fn new(clock: Arc<dyn Clock>) -> Self {
        Self {
            clock,
            next_sweep_ms: AtomicU64::new(0),
            sessions: RwLock::new(HashMap::new()),
            tombstones: Mutex::new(Tombstones::default()),
            tombstone_cap: DEFAULT_TOMBSTONES,
        }
    }

    pub fn with_tombstone_cap(mut self, cap: usize) -> Self {
        self.tombstone_cap = cap;
        self
    }

    fn bury(&self, ids: impl IntoIterator<Item = String>) {
        let mut t = self.tombstones.lock().expect("tombstone lock");
        for id in ids {
            t.add(id, self.tombstone_cap);
        }
    }
}

impl SessionStore for InMemoryStore {
    fn insert(&self, session: Session) -> Result<Arc<Session>, StoreError> {
        let now = self.clock.now_ms();
        let due = self.next_sweep_ms.load(Ordering::SeqCst);
        if now >= due
            && self
                .next_sweep_ms
                .compare_exchange(due, now + INSERT_SWEEP_INTERVAL_MS, Ordering::SeqCst, Ordering::SeqCst)
                .is_ok()
        {
            self.purge_expired();
        }
        let session = Arc::new(session);
        let mut map = self.sessions.write().expect("session lock");
        if map.contains_key(&session.id) {
            return Err(StoreError::Collision(session.id.clone()));
        }
        map.insert(session.id.clone(), session.clone());
        Ok(session)
    }

    fn get(&self, id: &str) -> Lookup {
        let now = self.clock.now_ms();
        let found = self.sessions.read().expect("session lock").get(id).cloned();
        match found {
            Some(s) if !s.is_expired(now) => {
                s.touch(now);
                Lookup::Live(s)
            }
            Some(_) => {
                self.sessions.write().expect("session lock").remove(id);
                self.bury([id.to_string()]);
                Lookup::Expired
            }
            None if self.tombstones.lock().expect("tombstone lock").set.contains(id) => Lookup::Expired,
            None => Lookup::Missing,
        }
    }

    fn purge_expired(&self) -> usize {
        let now = self.clock.now_ms();
        let expired: Vec<String> = {
            let mut map = self.sessions.write().expect("session lock");
            let ids: Vec<String> = map.values().filter(|s| s.is_expired(now)).map(|s| s.id.clone()).collect();
            for id in &ids {
                map.remove(id);
            }
            ids
        };
        let n = expired.len();
        self.bury(expired);
        n
    }

    fn len(&self) -> usize {
        self.sessions.read().expect("session lock").len()
    }
}

//! Live sessions: one event log and one writer per conversation.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use callsense_core::aggregation::{AggregationError, CallRecord};
use callsense_core::context::ContextPolicy;
use callsense_core::model::{Conversation, Speaker, Turn};
use serde::{Deserialize, Serialize};
use tokio::sync::{broadcast, Mutex, Semaphore};

use crate::engine::{Engine, EngineError, TurnResult};
use crate::store::{Event, EventKind, EventLog, StoreError};

/// Everything a session log says, folded event by event.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionState {
    pub session_id: String,
    pub backend: String,
    pub policy: ContextPolicy,
    /// Turns in arrival order; `metadata` carries the call date, if any.
    pub conversation: Conversation,
    /// Latest result per turn index.
    pub annotations: BTreeMap<u32, TurnResult>,
    pub record: Option<CallRecord>,
    pub last_seq: u64,
}

impl SessionState {
    /// Fails unless the first event opens the session.
    pub fn from_events(events: &[Event]) -> Result<Self, String> {
        let (first, rest) = events.split_first().ok_or("log is empty")?;
        let EventKind::SessionOpened { backend, policy, metadata } = &first.kind else {
            return Err(format!("first event is not session_opened (seq {})", first.seq));
        };
        let mut conversation = Conversation::new(first.session_id.clone(), Vec::new());
        conversation.metadata = metadata.clone();
        let mut state = SessionState {
            session_id: first.session_id.clone(),
            backend: backend.clone(),
            policy: *policy,
            conversation,
            annotations: BTreeMap::new(),
            record: None,
            last_seq: first.seq,
        };
        for event in rest {
            state.apply(event)?;
        }
        Ok(state)
    }

    pub fn apply(&mut self, event: &Event) -> Result<(), String> {
        if event.session_id != self.session_id {
            return Err(format!("event {} belongs to session {:?}", event.seq, event.session_id));
        }
        if self.record.is_some() {
            return Err(format!("event {} follows finalization", event.seq));
        }
        match &event.kind {
            EventKind::SessionOpened { .. } => return Err(format!("session reopened at event {}", event.seq)),
            EventKind::TurnAdded { turn } => {
                if turn.turn_index as usize != self.conversation.turns.len() {
                    return Err(format!(
                        "event {} adds turn {} after {} turns",
                        event.seq,
                        turn.turn_index,
                        self.conversation.turns.len()
                    ));
                }
                self.conversation.turns.push(turn.clone());
            }
            EventKind::AnnotationAdded { result } => {
                if result.turn_index >= self.cursor() {
                    return Err(format!("event {} annotates unknown turn {}", event.seq, result.turn_index));
                }
                self.annotations.insert(result.turn_index, result.clone());
            }
            EventKind::RecordFinalized { record } => self.record = Some(record.clone()),
        }
        self.last_seq = event.seq;
        Ok(())
    }

    /// Number of turns received.
    pub fn cursor(&self) -> u32 {
        self.conversation.turns.len() as u32
    }

    pub fn is_finalized(&self) -> bool {
        self.record.is_some()
    }

    /// Turns with no successful annotation, in order.
    pub fn pending_turns(&self) -> Vec<u32> {
        (0..self.cursor())
            .filter(|i| self.annotations.get(i).and_then(TurnResult::annotation).is_none())
            .collect()
    }

    /// Results in turn order.
    pub fn ordered_results(&self) -> Vec<TurnResult> {
        self.annotations.values().cloned().collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpenSession {
    /// Generated when absent.
    #[serde(default)]
    pub session_id: Option<String>,
    #[serde(default)]
    pub backend: Option<String>,
    #[serde(default)]
    pub policy: Option<ContextPolicy>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("invalid session id {0:?}: use 1-128 of [A-Za-z0-9._-], not starting with '.'")]
    InvalidId(String),
    #[error("unknown session {0:?}")]
    UnknownSession(String),
    #[error("session {0:?} already exists with a different configuration")]
    DuplicateSession(String),
    #[error("unknown backend {0:?}")]
    UnknownBackend(String),
    #[error("session {0:?} is finalized")]
    Finalized(String),
    #[error("no annotated turns")]
    NoAnnotatedTurns,
    #[error("session {session:?} has no turn {turn_index}")]
    UnknownTurn { session: String, turn_index: u32 },
    #[error("session log {path}: {message}")]
    Corrupt { path: PathBuf, message: String },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Aggregation(#[from] AggregationError),
    #[error("annotation task failed: {0}")]
    Task(String),
}

pub fn valid_session_id(id: &str) -> bool {
    (1..=128).contains(&id.len())
        && !id.starts_with('.')
        && id.bytes().all(|b| b.is_ascii_alphanumeric() || matches!(b, b'.' | b'_' | b'-'))
}

struct Session {
    state: SessionState,
    events: Vec<Event>,
    log: EventLog,
}

impl Session {
    fn append(&mut self, kind: EventKind, feed: &broadcast::Sender<Event>) -> Result<Event, SessionError> {
        let event = self.log.append(&self.state.session_id, kind)?;
        self.state.apply(&event).map_err(|message| SessionError::Corrupt {
            path: self.log.path().to_path_buf(),
            message,
        })?;
        self.events.push(event.clone());
        let _ = feed.send(event.clone());
        Ok(event)
    }
}

struct SessionHandle {
    session: Mutex<Session>,
    feed: broadcast::Sender<Event>,
}

/// Opens, loads and serializes sessions. Each session has one writer at a
/// time; backend calls across all sessions share one in-flight budget.
pub struct SessionManager {
    engine: Arc<Engine>,
    dir: PathBuf,
    default_backend: String,
    default_policy: ContextPolicy,
    sessions: Mutex<HashMap<String, Arc<SessionHandle>>>,
    budget: Arc<Semaphore>,
}

impl std::fmt::Debug for SessionManager {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SessionManager").field("dir", &self.dir).finish()
    }
}

impl SessionManager {
    pub fn new(engine: Arc<Engine>, dir: &Path, max_in_flight: usize) -> std::io::Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(SessionManager {
            engine,
            dir: dir.to_path_buf(),
            default_backend: callsense_core::backends::OracleBackend::DEFAULT_ID.to_string(),
            default_policy: ContextPolicy::FullHistory,
            sessions: Mutex::new(HashMap::new()),
            budget: Arc::new(Semaphore::new(max_in_flight.max(1))),
        })
    }

    pub fn with_defaults(mut self, backend: &str, policy: ContextPolicy) -> Self {
        self.default_backend = backend.to_string();
        self.default_policy = policy;
        self
    }

    pub fn engine(&self) -> &Arc<Engine> {
        &self.engine
    }

    pub fn log_path(&self, session_id: &str) -> PathBuf {
        self.dir.join(format!("{session_id}.jsonl"))
    }

    /// Cached handle, or the session loaded from its log. `None` if no log.
    async fn handle(&self, session_id: &str) -> Result<Option<Arc<SessionHandle>>, SessionError> {
        if !valid_session_id(session_id) {
            return Err(SessionError::InvalidId(session_id.to_string()));
        }
        let mut sessions = self.sessions.lock().await;
        if let Some(handle) = sessions.get(session_id) {
            return Ok(Some(handle.clone()));
        }
        let path = self.log_path(session_id);
        if !path.exists() {
            return Ok(None);
        }
        let (log, events) = EventLog::open(&path)?;
        let state = SessionState::from_events(&events).map_err(|message| SessionError::Corrupt {
            path: path.clone(),
            message,
        })?;
        if state.session_id != session_id {
            return Err(SessionError::Corrupt {
                path,
                message: format!("log belongs to session {:?}", state.session_id),
            });
        }
        let handle = Arc::new(SessionHandle {
            session: Mutex::new(Session { state, events, log }),
            feed: broadcast::channel(1024).0,
        });
        sessions.insert(session_id.to_string(), handle.clone());
        Ok(Some(handle))
    }

    async fn existing(&self, session_id: &str) -> Result<Arc<SessionHandle>, SessionError> {
        self.handle(session_id)
            .await?
            .ok_or_else(|| SessionError::UnknownSession(session_id.to_string()))
    }

    /// Idempotent for a client-supplied id opened again with the same
    /// backend, policy and metadata.
    pub async fn open_session(&self, request: OpenSession) -> Result<SessionState, SessionError> {
        let backend = request.backend.unwrap_or_else(|| self.default_backend.clone());
        let policy = request.policy.unwrap_or(self.default_policy);
        if self.engine.backend(&backend).is_err() {
            return Err(SessionError::UnknownBackend(backend));
        }
        let session_id = request
            .session_id
            .unwrap_or_else(|| uuid::Uuid::new_v4().to_string());
        if let Some(handle) = self.handle(&session_id).await? {
            let session = handle.session.lock().await;
            let s = &session.state;
            if s.backend == backend && s.policy == policy && s.conversation.metadata == request.metadata {
                return Ok(s.clone());
            }
            return Err(SessionError::DuplicateSession(session_id));
        }
        let mut sessions = self.sessions.lock().await;
        if sessions.contains_key(&session_id) {
            return Err(SessionError::DuplicateSession(session_id));
        }
        let path = self.log_path(&session_id);
        let mut log = match EventLog::create(&path) {
            Ok(log) => log,
            Err(StoreError::Exists(_)) => return Err(SessionError::DuplicateSession(session_id)),
            Err(e) => return Err(e.into()),
        };
        let opened = log.append(
            &session_id,
            EventKind::SessionOpened {
                backend,
                policy,
                metadata: request.metadata,
            },
        )?;
        let state = SessionState::from_events(std::slice::from_ref(&opened)).expect("opening event");
        let handle = Arc::new(SessionHandle {
            session: Mutex::new(Session {
                state: state.clone(),
                events: vec![opened],
                log,
            }),
            feed: broadcast::channel(1024).0,
        });
        sessions.insert(session_id, handle);
        Ok(state)
    }

    /// Appends the turn, then annotates it with the prior turns as context.
    /// A backend or parse failure is returned as a failed result; the turn
    /// stays and can be retried.
    pub async fn push_turn(
        &self,
        session_id: &str,
        speaker: Speaker,
        text: String,
    ) -> Result<TurnResult, SessionError> {
        let handle = self.existing(session_id).await?;
        let mut session = handle.session.lock().await;
        if session.state.is_finalized() {
            return Err(SessionError::Finalized(session_id.to_string()));
        }
        let turn = Turn::new(session.state.cursor(), speaker, text);
        let turn_index = turn.turn_index;
        session.append(EventKind::TurnAdded { turn }, &handle.feed)?;
        self.annotate_locked(&mut session, &handle.feed, turn_index).await
    }

    /// Re-annotates a turn that has no successful annotation; returns the
    /// stored result otherwise.
    pub async fn retry_turn(&self, session_id: &str, turn_index: u32) -> Result<TurnResult, SessionError> {
        let handle = self.existing(session_id).await?;
        let mut session = handle.session.lock().await;
        if turn_index >= session.state.cursor() {
            return Err(SessionError::UnknownTurn {
                session: session_id.to_string(),
                turn_index,
            });
        }
        if let Some(done) = session.state.annotations.get(&turn_index) {
            if done.annotation().is_some() {
                return Ok(done.clone());
            }
        }
        if session.state.is_finalized() {
            return Err(SessionError::Finalized(session_id.to_string()));
        }
        self.annotate_locked(&mut session, &handle.feed, turn_index).await
    }

    async fn annotate_locked(
        &self,
        session: &mut Session,
        feed: &broadcast::Sender<Event>,
        turn_index: u32,
    ) -> Result<TurnResult, SessionError> {
        let state = &session.state;
        let backend = self
            .engine
            .backend(&state.backend)
            .map_err(|_| SessionError::UnknownBackend(state.backend.clone()))?;
        let i = turn_index as usize;
        let turns = &state.conversation.turns;
        let request = self
            .engine
            .request_for(state.conversation.call_date(), &turns[..i], &turns[i], state.policy);
        let engine = self.engine.clone();
        let session_id = state.session_id.clone();
        let _permit = self.budget.clone().acquire_owned().await.expect("budget never closed");
        let result = tokio::task::spawn_blocking(move || {
            engine.annotate_turn(backend.as_ref(), &session_id, turn_index, &request, None)
        })
        .await
        .map_err(|e| SessionError::Task(e.to_string()))??;
        session.append(
            EventKind::AnnotationAdded {
                result: result.clone(),
            },
            feed,
        )?;
        Ok(result)
    }

    /// Aggregates the annotated turns and seals the session. A finalized
    /// session returns its stored record.
    pub async fn finalize(&self, session_id: &str) -> Result<CallRecord, SessionError> {
        let handle = self.existing(session_id).await?;
        let mut session = handle.session.lock().await;
        if let Some(record) = &session.state.record {
            return Ok(record.clone());
        }
        let state = &session.state;
        let annotations: Vec<_> = (0..state.cursor())
            .map(|i| state.annotations.get(&i).and_then(TurnResult::annotation))
            .collect();
        if annotations.iter().all(Option::is_none) {
            return Err(SessionError::NoAnnotatedTurns);
        }
        let record = self
            .engine
            .aggregator()
            .aggregate_partial(&state.conversation, &annotations)?;
        session.append(
            EventKind::RecordFinalized {
                record: record.clone(),
            },
            &handle.feed,
        )?;
        Ok(record)
    }

    pub async fn get(&self, session_id: &str) -> Result<SessionState, SessionError> {
        let handle = self.existing(session_id).await?;
        let session = handle.session.lock().await;
        Ok(session.state.clone())
    }

    /// Stored events with `seq > after`, then a live feed of later ones.
    /// Nothing is lost or repeated between the two.
    pub async fn subscribe(
        &self,
        session_id: &str,
        after: u64,
    ) -> Result<(Vec<Event>, broadcast::Receiver<Event>), SessionError> {
        let handle = self.existing(session_id).await?;
        let session = handle.session.lock().await;
        let backlog = session.events.iter().filter(|e| e.seq > after).cloned().collect();
        Ok((backlog, handle.feed.subscribe()))
    }

    /// Drops every in-memory session; the next access reloads from disk.
    pub async fn evict_all(&self) {
        self.sessions.lock().await.clear();
    }
}

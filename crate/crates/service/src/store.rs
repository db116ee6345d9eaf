//! Append-only persistence. Each collection is a file of JSON lines; the
//! in-memory index is rebuilt by replaying them at startup.
//!
//! * `sessions.jsonl`: session creation and state transitions
//! * `plans.jsonl`: confirmed delegation plans
//! * `decisions.jsonl`: one [`DecisionRecord`] per line, revisions included

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use uqd_core::delegation::DelegationPlan;
use uqd_core::metrics::{Condition, DecisionRecord, Group};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    Created,
    Delegating,
    Deciding,
    Done,
}

impl SessionState {
    pub fn next(self) -> Option<SessionState> {
        match self {
            SessionState::Created => Some(SessionState::Delegating),
            SessionState::Delegating => Some(SessionState::Deciding),
            SessionState::Deciding => Some(SessionState::Done),
            SessionState::Done => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SessionState::Created => "created",
            SessionState::Delegating => "delegating",
            SessionState::Deciding => "deciding",
            SessionState::Done => "done",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    /// Creation order, used for counterbalancing.
    pub index: u64,
    pub group: Group,
    pub seed: u64,
    pub condition_order: [Condition; 2],
    pub assigned_case_ids: BTreeMap<Condition, Vec<String>>,
    pub state: SessionState,
    pub created_at: DateTime<Utc>,
}

impl Session {
    pub fn condition_of(&self, case_id: &str) -> Option<Condition> {
        self.assigned_case_ids.iter().find(|(_, ids)| ids.iter().any(|c| c == case_id)).map(|(c, _)| *c)
    }

    pub fn case_count(&self) -> usize {
        self.assigned_case_ids.values().map(Vec::len).sum()
    }

    /// Case ids in presentation order.
    pub fn all_case_ids(&self) -> Vec<String> {
        self.condition_order.iter().flat_map(|c| self.assigned_case_ids[c].iter().cloned()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum SessionEvent {
    Created { session: Session },
    Transition { session_id: String, from: SessionState, to: SessionState, at: DateTime<Utc> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub session_id: String,
    pub confirmed_at: DateTime<Utc>,
    pub plan: DelegationPlan,
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("{file} line {line}: {source}")]
    Corrupt { file: String, line: usize, source: serde_json::Error },
    #[error("{0}")]
    Inconsistent(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoredDecision {
    pub record: DecisionRecord,
    pub revision: u32,
}

#[derive(Debug)]
pub struct Store {
    dir: PathBuf,
    sessions: BTreeMap<String, Session>,
    plans: BTreeMap<String, DelegationPlan>,
    /// Latest revision per (session, case, condition), in first-post order.
    decisions: Vec<StoredDecision>,
    decision_index: BTreeMap<(String, String, Condition), usize>,
}

const SESSIONS: &str = "sessions.jsonl";
const PLANS: &str = "plans.jsonl";
const DECISIONS: &str = "decisions.jsonl";

impl Store {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        let dir = dir.as_ref().to_path_buf();
        std::fs::create_dir_all(&dir)?;
        let mut store =
            Store { dir, sessions: BTreeMap::new(), plans: BTreeMap::new(), decisions: Vec::new(), decision_index: BTreeMap::new() };
        for event in store.replay::<SessionEvent>(SESSIONS)? {
            store.apply_session_event(event)?;
        }
        for entry in store.replay::<PlanEntry>(PLANS)? {
            store.plans.insert(entry.session_id, entry.plan);
        }
        for record in store.replay::<DecisionRecord>(DECISIONS)? {
            store.apply_decision(record);
        }
        Ok(store)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Read every complete line of `name`. A trailing partial line (an
    /// interrupted append) is cut off the file.
    fn replay<T: DeserializeOwned>(&self, name: &str) -> Result<Vec<T>, StoreError> {
        let path = self.dir.join(name);
        let bytes = match std::fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e.into()),
        };
        let complete = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
        if complete < bytes.len() {
            tracing::warn!(file = name, dropped = bytes.len() - complete, "truncating partial trailing line");
            OpenOptions::new().write(true).open(&path)?.set_len(complete as u64)?;
        }
        let text = String::from_utf8_lossy(&bytes[..complete]);
        let mut out = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let value = serde_json::from_str(line).map_err(|source| StoreError::Corrupt { file: name.into(), line: i + 1, source })?;
            out.push(value);
        }
        Ok(out)
    }

    fn append<T: Serialize>(&self, name: &str, value: &T) -> Result<(), StoreError> {
        let mut line = serde_json::to_string(value).map_err(io::Error::from)?;
        line.push('\n');
        let mut file: File = OpenOptions::new().create(true).append(true).open(self.dir.join(name))?;
        file.write_all(line.as_bytes())?;
        file.sync_data()?;
        Ok(())
    }

    fn apply_session_event(&mut self, event: SessionEvent) -> Result<(), StoreError> {
        match event {
            SessionEvent::Created { session } => {
                self.sessions.insert(session.session_id.clone(), session);
            }
            SessionEvent::Transition { session_id, from, to, .. } => {
                let s = self
                    .sessions
                    .get_mut(&session_id)
                    .ok_or_else(|| StoreError::Inconsistent(format!("transition for unknown session {session_id}")))?;
                if s.state != from || from.next() != Some(to) {
                    return Err(StoreError::Inconsistent(format!("session {session_id}: bad transition {from:?} -> {to:?}")));
                }
                s.state = to;
            }
        }
        Ok(())
    }

    fn apply_decision(&mut self, record: DecisionRecord) -> u32 {
        let key = (record.session_id.clone(), record.case_id.clone(), record.condition);
        match self.decision_index.get(&key) {
            Some(&i) => {
                let slot = &mut self.decisions[i];
                slot.revision += 1;
                slot.record = record;
                slot.revision
            }
            None => {
                self.decision_index.insert(key, self.decisions.len());
                self.decisions.push(StoredDecision { record, revision: 1 });
                1
            }
        }
    }

    pub fn session(&self, id: &str) -> Option<&Session> {
        self.sessions.get(id)
    }

    pub fn session_count(&self) -> usize {
        self.sessions.len()
    }

    pub fn sessions(&self) -> impl Iterator<Item = &Session> {
        self.sessions.values()
    }

    pub fn plan(&self, id: &str) -> Option<&DelegationPlan> {
        self.plans.get(id)
    }

    pub fn create_session(&mut self, session: Session) -> Result<(), StoreError> {
        if self.sessions.contains_key(&session.session_id) {
            return Err(StoreError::Inconsistent(format!("session {} exists", session.session_id)));
        }
        let event = SessionEvent::Created { session };
        self.append(SESSIONS, &event)?;
        self.apply_session_event(event)
    }

    pub fn transition(&mut self, id: &str, to: SessionState, at: DateTime<Utc>) -> Result<(), StoreError> {
        let from = self.sessions.get(id).map(|s| s.state).ok_or_else(|| StoreError::Inconsistent(format!("unknown session {id}")))?;
        let event = SessionEvent::Transition { session_id: id.to_string(), from, to, at };
        if from.next() != Some(to) {
            return Err(StoreError::Inconsistent(format!("session {id}: bad transition {from:?} -> {to:?}")));
        }
        self.append(SESSIONS, &event)?;
        self.apply_session_event(event)
    }

    pub fn save_plan(&mut self, id: &str, plan: DelegationPlan, at: DateTime<Utc>) -> Result<(), StoreError> {
        let entry = PlanEntry { session_id: id.to_string(), confirmed_at: at, plan };
        self.append(PLANS, &entry)?;
        self.plans.insert(entry.session_id, entry.plan);
        Ok(())
    }

    /// Append a decision; returns its revision number (1 for the first post).
    pub fn record_decision(&mut self, record: DecisionRecord) -> Result<u32, StoreError> {
        self.append(DECISIONS, &record)?;
        Ok(self.apply_decision(record))
    }

    /// Latest revision of every decision.
    pub fn decisions(&self) -> &[StoredDecision] {
        &self.decisions
    }

    pub fn decisions_for<'a>(&'a self, session_id: &'a str) -> impl Iterator<Item = &'a StoredDecision> {
        self.decisions.iter().filter(move |d| d.record.session_id == session_id)
    }
}

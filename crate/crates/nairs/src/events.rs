//! Append-only behavior log, one JSON object per line.
//!
//! ```text
//! {"seq":0,"ts":"2026-01-01T00:00:00.000Z","user":943,"kind":"create_user"}
//! {"seq":1,"ts":"2026-01-01T00:00:01.250Z","user":943,"kind":"add_item","item":5}
//! {"seq":2,"ts":"2026-01-01T00:00:02.000Z","user":943,"kind":"search_query","query":"matr"}
//! ```
//!
//! Every append is synced to disk before it returns.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    CreateUser,
    AddItem,
    RemoveItem,
    Like,
    Dislike,
    ClickRecommendation,
    SearchQuery,
    BootstrapSelect,
    FollowUser,
}

impl EventKind {
    pub fn parse(s: &str) -> Option<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string())).ok()
    }

    /// Whether the event adds its item to the user's profile.
    pub fn adds_item(self) -> bool {
        matches!(self, EventKind::AddItem | EventKind::Like | EventKind::BootstrapSelect)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    /// ISO-8601 UTC timestamp.
    pub ts: String,
    pub user: u32,
    pub kind: EventKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub item: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_user: Option<u32>,
}

/// An event before it has a sequence number and timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct NewEvent {
    pub user: u32,
    pub kind: EventKind,
    pub item: Option<u32>,
    pub query: Option<String>,
    pub target_user: Option<u32>,
}

impl NewEvent {
    pub fn new(user: u32, kind: EventKind) -> Self {
        NewEvent {
            user,
            kind,
            item: None,
            query: None,
            target_user: None,
        }
    }

    pub fn item(user: u32, kind: EventKind, item: u32) -> Self {
        NewEvent {
            item: Some(item),
            ..Self::new(user, kind)
        }
    }
}

#[derive(Debug)]
pub struct EventLog {
    path: PathBuf,
    file: File,
    next_seq: u64,
}

impl EventLog {
    /// Opens (creating if needed) the log at `path` and returns the events
    /// already in it. A final line without a newline is an append that never
    /// completed, so it is dropped and truncated away.
    pub fn open(path: &Path) -> Result<(EventLog, Vec<Event>)> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let text = match fs::read(path) {
            Ok(bytes) => bytes,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(Error::io(path, e)),
        };
        let complete = text.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
        if complete < text.len() {
            tracing::warn!(path = %path.display(), bytes = text.len() - complete, "dropping incomplete trailing event");
        }
        let body = std::str::from_utf8(&text[..complete]).map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: "event log is not UTF-8".into(),
        })?;
        let mut events = Vec::new();
        for (idx, line) in body.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let ev: Event = serde_json::from_str(line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: idx + 1,
                message: e.to_string(),
            })?;
            events.push(ev);
        }

        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        if complete < text.len() {
            file.set_len(complete as u64).map_err(|e| Error::io(path, e))?;
        }
        let next_seq = events.last().map_or(0, |e| e.seq + 1);
        Ok((
            EventLog {
                path: path.to_path_buf(),
                file,
                next_seq,
            },
            events,
        ))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Appends `events` with consecutive sequence numbers and one shared
    /// timestamp, then syncs. Nothing is returned until the data is durable.
    pub fn append(&mut self, events: Vec<NewEvent>) -> Result<Vec<Event>> {
        let ts = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true);
        let mut buf = Vec::new();
        let mut out = Vec::with_capacity(events.len());
        for (i, e) in events.into_iter().enumerate() {
            let ev = Event {
                seq: self.next_seq + i as u64,
                ts: ts.clone(),
                user: e.user,
                kind: e.kind,
                item: e.item,
                query: e.query,
                target_user: e.target_user,
            };
            serde_json::to_writer(&mut buf, &ev).expect("event serializes");
            buf.push(b'\n');
            out.push(ev);
        }
        self.file.write_all(&buf).map_err(|e| Error::io(&self.path, e))?;
        self.file.sync_data().map_err(|e| Error::io(&self.path, e))?;
        self.next_seq += out.len() as u64;
        Ok(out)
    }
}

//! Append-only JSON-lines event log, one file per session.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use lineup_core::evolve::{Ballot, Lineup};
use lineup_core::facespace::LatentPoint;
use lineup_core::turing::{Response, TrialSpec};

use crate::error::{Result, ServiceError};
use crate::session::{Session, SessionStatus};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EventPayload {
    SessionCreated {
        session: Session,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        trials: Option<Vec<TrialSpec>>,
    },
    LineupProposed {
        lineup: Lineup,
    },
    BallotAccepted {
        ballot: Ballot,
    },
    /// The quorum closed `round`; `theta` is the seed after the update.
    RoundAdvanced {
        round: u32,
        theta: LatentPoint,
    },
    ResponseAccepted {
        response: Response,
    },
    StatusChanged {
        status: SessionStatus,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub seq: u64,
    pub timestamp: DateTime<Utc>,
    pub session_id: String,
    pub payload: EventPayload,
}

pub struct EventLog {
    path: PathBuf,
    file: File,
}

impl EventLog {
    pub fn create(path: &Path) -> Result<Self> {
        let file = OpenOptions::new().create_new(true).append(true).open(path)?;
        Ok(Self {
            path: path.to_path_buf(),
            file,
        })
    }

    /// Reads every complete record and reopens the file for appending.
    ///
    /// An unterminated final line is a write cut short by a crash; it is
    /// dropped and truncated away so later appends start on a fresh line.
    pub fn open(path: &Path, session_id: &str) -> Result<(Self, Vec<EventRecord>)> {
        let bytes = std::fs::read(path)?;
        let complete = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
        let corrupt = |message: String| ServiceError::Corrupt {
            session: session_id.to_string(),
            message,
        };
        let mut records = Vec::new();
        for (lineno, line) in bytes[..complete].split(|&b| b == b'\n').enumerate() {
            if line.is_empty() {
                continue;
            }
            let rec: EventRecord = serde_json::from_slice(line)
                .map_err(|e| corrupt(format!("line {}: {e}", lineno + 1)))?;
            let expected = records.len() as u64 + 1;
            if rec.seq != expected || rec.session_id != session_id {
                return Err(corrupt(format!(
                    "line {}: sequence {} for {}, expected {expected} for {session_id}",
                    lineno + 1,
                    rec.seq,
                    rec.session_id
                )));
            }
            records.push(rec);
        }
        if complete < bytes.len() {
            tracing::warn!(
                session = session_id,
                bytes = bytes.len() - complete,
                "dropping torn final event"
            );
        }
        let file = OpenOptions::new().write(true).open(path)?;
        file.set_len(complete as u64)?;
        drop(file);
        let file = OpenOptions::new().append(true).open(path)?;
        Ok((
            Self {
                path: path.to_path_buf(),
                file,
            },
            records,
        ))
    }

    pub fn append(&mut self, record: &EventRecord) -> Result<()> {
        let mut line = serde_json::to_vec(record).map_err(|e| ServiceError::Internal(e.to_string()))?;
        line.push(b'\n');
        self.file.write_all(&line)?;
        Ok(())
    }

    pub fn sync(&self) -> Result<()> {
        self.file.sync_data()?;
        Ok(())
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn status_event(seq: u64) -> EventRecord {
        EventRecord {
            seq,
            timestamp: DateTime::from_timestamp(1_700_000_000, 0).unwrap(),
            session_id: "s".into(),
            payload: EventPayload::StatusChanged {
                status: SessionStatus::Aborted,
            },
        }
    }

    #[test]
    fn append_and_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.jsonl");
        let mut log = EventLog::create(&path).unwrap();
        log.append(&status_event(1)).unwrap();
        log.append(&status_event(2)).unwrap();
        drop(log);
        let (_, recs) = EventLog::open(&path, "s").unwrap();
        assert_eq!(recs, vec![status_event(1), status_event(2)]);
        assert!(EventLog::create(&path).is_err());
    }

    #[test]
    fn torn_tail_is_dropped_and_truncated() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.jsonl");
        let mut log = EventLog::create(&path).unwrap();
        log.append(&status_event(1)).unwrap();
        drop(log);
        let intact = std::fs::metadata(&path).unwrap().len();
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(br#"{"seq":2,"timest"#).unwrap();
        drop(f);

        let (mut log, recs) = EventLog::open(&path, "s").unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(std::fs::metadata(&path).unwrap().len(), intact);
        log.append(&status_event(2)).unwrap();
        drop(log);
        assert_eq!(EventLog::open(&path, "s").unwrap().1.len(), 2);
    }

    #[test]
    fn gaps_and_garbage_are_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.jsonl");
        let mut log = EventLog::create(&path).unwrap();
        log.append(&status_event(1)).unwrap();
        log.append(&status_event(3)).unwrap();
        drop(log);
        assert!(matches!(EventLog::open(&path, "s"), Err(ServiceError::Corrupt { .. })));

        std::fs::write(&path, b"not json\n").unwrap();
        assert!(matches!(EventLog::open(&path, "s"), Err(ServiceError::Corrupt { .. })));
    }
}

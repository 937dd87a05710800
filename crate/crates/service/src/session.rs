//! Session metadata and the state machine that event replay drives.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use lineup_core::evolve::{aggregate_ranks, nes_update, Ballot, SearchState};
use lineup_core::turing::{Response, TrialSpec, TuringConfig};

use crate::config::SearchSessionConfig;
use crate::error::{Result, ServiceError};
use crate::events::{EventPayload, EventRecord};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionKind {
    Search,
    Turing,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Active,
    Complete,
    Aborted,
}

impl SessionStatus {
    /// Only `active` may move, and only forward.
    pub fn can_become(self, next: SessionStatus) -> bool {
        self == SessionStatus::Active && next != SessionStatus::Active
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "config", rename_all = "snake_case")]
pub enum SessionSpec {
    Search(SearchSessionConfig),
    Turing(TuringConfig),
}

impl SessionSpec {
    pub fn kind(&self) -> SessionKind {
        match self {
            SessionSpec::Search(_) => SessionKind::Search,
            SessionSpec::Turing(_) => SessionKind::Turing,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub created_at: DateTime<Utc>,
    #[serde(flatten)]
    pub spec: SessionSpec,
    pub status: SessionStatus,
    /// Seeds every random draw the session makes.
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchProgress {
    pub search: SearchState,
    /// Ballots accepted for the current round.
    pub ballots: Vec<Ballot>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuringProgress {
    pub trials: Vec<TrialSpec>,
    pub responses: Vec<Response>,
    /// Trials answered per participant; everyone walks the same order.
    pub answered: BTreeMap<String, usize>,
}

impl TuringProgress {
    pub fn next_for(&self, participant: &str) -> Option<(usize, &TrialSpec)> {
        let i = self.answered.get(participant).copied().unwrap_or(0);
        self.trials.get(i).map(|t| (i, t))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Progress {
    Search(SearchProgress),
    Turing(TuringProgress),
}

/// Everything known about a session after applying its events in order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub session: Session,
    pub last_seq: u64,
    pub progress: Progress,
}

impl SessionState {
    /// State after the opening event of a log.
    pub fn from_created(rec: &EventRecord) -> Result<Self> {
        let corrupt = |m: &str| ServiceError::Corrupt {
            session: rec.session_id.clone(),
            message: m.to_string(),
        };
        let EventPayload::SessionCreated { session, trials } = &rec.payload else {
            return Err(corrupt("log does not start with session creation"));
        };
        if rec.seq != 1 || session.session_id != rec.session_id {
            return Err(corrupt("bad creation record"));
        }
        let progress = match (&session.spec, trials) {
            (SessionSpec::Search(cfg), None) => Progress::Search(SearchProgress {
                search: SearchState::new(cfg.search.clone()),
                ballots: Vec::new(),
            }),
            (SessionSpec::Turing(_), Some(trials)) => Progress::Turing(TuringProgress {
                trials: trials.clone(),
                responses: Vec::new(),
                answered: BTreeMap::new(),
            }),
            _ => return Err(corrupt("trial list does not match session kind")),
        };
        Ok(Self {
            session: session.clone(),
            last_seq: 1,
            progress,
        })
    }

    pub fn search(&self) -> Option<&SearchProgress> {
        match &self.progress {
            Progress::Search(p) => Some(p),
            Progress::Turing(_) => None,
        }
    }

    pub fn turing(&self) -> Option<&TuringProgress> {
        match &self.progress {
            Progress::Turing(p) => Some(p),
            Progress::Search(_) => None,
        }
    }

    /// Applies the next event. Live requests and replay both go through
    /// here, so a replayed log rebuilds exactly the state that was served.
    pub fn apply(&mut self, rec: &EventRecord) -> Result<()> {
        let id = self.session.session_id.clone();
        let corrupt = |message: String| ServiceError::Corrupt {
            session: id.clone(),
            message,
        };
        if rec.seq != self.last_seq + 1 || rec.session_id != self.session.session_id {
            return Err(corrupt(format!("unexpected sequence {} after {}", rec.seq, self.last_seq)));
        }
        match (&rec.payload, &mut self.progress) {
            (EventPayload::SessionCreated { .. }, _) => {
                return Err(corrupt("second creation record".into()));
            }
            (EventPayload::LineupProposed { lineup }, Progress::Search(p)) => {
                if lineup.round != p.search.round || p.search.pending.is_some() {
                    return Err(corrupt(format!("lineup for round {} out of place", lineup.round)));
                }
                p.search.pending = Some(lineup.clone());
                p.ballots.clear();
            }
            (EventPayload::BallotAccepted { ballot }, Progress::Search(p)) => {
                if ballot.round != p.search.round {
                    return Err(corrupt(format!("ballot for round {} in round {}", ballot.round, p.search.round)));
                }
                p.ballots.push(ballot.clone());
            }
            (EventPayload::RoundAdvanced { round, theta }, Progress::Search(p)) => {
                let lineup = p
                    .search
                    .pending
                    .clone()
                    .ok_or_else(|| corrupt(format!("round {round} closed without a lineup")))?;
                let scores = aggregate_ranks(&p.ballots, lineup.len())
                    .map_err(|e| corrupt(format!("round {round}: {e}")))?;
                let next = nes_update(p.search.clone(), &lineup, &scores)
                    .map_err(|e| corrupt(format!("round {round}: {e}")))?;
                if next.theta != *theta || lineup.round != *round {
                    return Err(corrupt(format!("round {round} update does not reproduce")));
                }
                p.search = next;
                p.ballots.clear();
            }
            (EventPayload::ResponseAccepted { response }, Progress::Turing(p)) => {
                let (_, trial) = p
                    .next_for(&response.participant_id)
                    .ok_or_else(|| corrupt("response after the last trial".into()))?;
                if trial.trial_id != response.trial_id || !response.is_consistent_with(trial) {
                    return Err(corrupt(format!("response to {} out of order", response.trial_id)));
                }
                *p.answered.entry(response.participant_id.clone()).or_default() += 1;
                p.responses.push(response.clone());
            }
            (EventPayload::StatusChanged { status }, _) => {
                if !self.session.status.can_become(*status) {
                    return Err(corrupt(format!("status {:?} -> {status:?}", self.session.status)));
                }
                self.session.status = *status;
            }
            (payload, _) => {
                return Err(corrupt(format!(
                    "{} event in a {:?} session",
                    event_name(payload),
                    self.session.spec.kind()
                )));
            }
        }
        self.last_seq = rec.seq;
        Ok(())
    }

    /// Replays a full log.
    pub fn replay(records: &[EventRecord]) -> Result<Self> {
        let (first, rest) = records
            .split_first()
            .ok_or_else(|| ServiceError::Internal("empty event log".into()))?;
        let mut state = Self::from_created(first)?;
        for rec in rest {
            state.apply(rec)?;
        }
        Ok(state)
    }
}

fn event_name(p: &EventPayload) -> &'static str {
    match p {
        EventPayload::SessionCreated { .. } => "session_created",
        EventPayload::LineupProposed { .. } => "lineup_proposed",
        EventPayload::BallotAccepted { .. } => "ballot_accepted",
        EventPayload::RoundAdvanced { .. } => "round_advanced",
        EventPayload::ResponseAccepted { .. } => "response_accepted",
        EventPayload::StatusChanged { .. } => "status_changed",
    }
}

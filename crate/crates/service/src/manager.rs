//! Session lifecycle on top of the event logs.
//!
//! Writes to one session are serialized by its writer mutex; readers take
//! the latest published [`SessionState`] without touching that mutex.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::Utc;
use parking_lot::{Mutex, RwLock};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use lineup_core::evolve::{aggregate_ranks, nes_update, propose_lineup, Ballot, Lineup};
use lineup_core::facespace::{
    read_model, BootstrapSampler, Decoder, EigenfaceModel, ImageSampler, LatentPoint, PriorSampler, Rescaled,
};
use lineup_core::imagecore::{read_png, Image};
use lineup_core::turing::{detection_curves, make_session_trials, DetectionCurve, Response, TuringConfig};

use crate::config::{merge_config, SearchSessionConfig, ServiceConfig};
use crate::error::{Result, ServiceError};
use crate::events::{EventLog, EventPayload, EventRecord};
use crate::session::{Session, SessionKind, SessionSpec, SessionState, SessionStatus};
use crate::store::{image_url, ImageStore};

/// Label of the model prior in 2AFC sessions.
pub const MODEL_GENERATOR: &str = "eigenface";

/// Models and images the sessions draw on.
#[derive(Clone, Default)]
pub struct Resources {
    /// Renders lineup portraits and seed images.
    pub lineup_decoder: Option<Arc<dyn Decoder>>,
    /// Real photographs for 2AFC trials.
    pub real_pool: Vec<Image>,
    pub generators: Vec<Arc<dyn ImageSampler>>,
}

impl Resources {
    /// Lineups from `model` at `lineup_side`; 2AFC trials pair `corpus`
    /// portraits with model samples and the pixel bootstrap.
    pub fn new(model: Option<EigenfaceModel>, corpus: Vec<Image>, lineup_side: usize) -> Result<Self> {
        let model = model.map(Arc::new);
        let mut generators: Vec<Arc<dyn ImageSampler>> = Vec::new();
        if let Some(m) = &model {
            generators.push(Arc::new(PriorSampler::new(MODEL_GENERATOR, m.clone())));
        }
        if !corpus.is_empty() {
            generators.push(Arc::new(BootstrapSampler::new(corpus.clone())?));
        }
        Ok(Self {
            lineup_decoder: model.map(|m| Arc::new(Rescaled::new(m, lineup_side)) as Arc<dyn Decoder>),
            real_pool: corpus,
            generators,
        })
    }

    pub fn load(cfg: &ServiceConfig) -> Result<Self> {
        let model = match &cfg.model_path {
            Some(p) => Some(read_model(p).map_err(|e| {
                ServiceError::Unavailable(format!("cannot load model {}: {e}", p.display()))
            })?),
            None => None,
        };
        let corpus = match &cfg.corpus_dir {
            Some(dir) => read_png_dir(dir)?,
            None => Vec::new(),
        };
        Self::new(model, corpus, cfg.lineup_side)
    }
}

/// All `*.png` files in `dir`, in file-name order.
pub fn read_png_dir(dir: &Path) -> Result<Vec<Image>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| ServiceError::Unavailable(format!("cannot read corpus {}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| read_png(p).map_err(|e| ServiceError::Unavailable(format!("{}: {e}", p.display()))))
        .collect()
}

#[derive(Clone, Debug, Deserialize)]
pub struct CreateSession {
    pub kind: SessionKind,
    #[serde(default)]
    pub config: Option<Value>,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, Deserialize)]
pub struct BallotRequest {
    pub participant_id: String,
    /// Round the participant ranked; omitted means the current round.
    #[serde(default)]
    pub round: Option<u32>,
    pub ranking: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BallotReceipt {
    pub accepted: bool,
    pub round: u32,
    pub ballots_so_far: usize,
    pub quorum: usize,
    pub round_advanced: bool,
}

#[derive(Clone, Debug, Deserialize)]
pub struct ResponseRequest {
    pub participant_id: String,
    pub trial_id: String,
    pub chose_left: bool,
    #[serde(default)]
    pub latency_ms: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResponseReceipt {
    pub accepted: bool,
    pub remaining: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageRef {
    pub id: String,
    pub url: String,
}

impl ImageRef {
    fn new(id: &str) -> Self {
        Self {
            id: id.to_string(),
            url: image_url(id),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum LineupView {
    Active {
        session_id: String,
        round: u32,
        rounds: u32,
        prompt: String,
        quorum: usize,
        ballots_so_far: usize,
        portraits: Vec<ImageRef>,
    },
    Complete {
        session_id: String,
        round: u32,
        rounds: u32,
    },
    Aborted {
        session_id: String,
        round: u32,
        rounds: u32,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TrialView {
    Active {
        session_id: String,
        participant_id: String,
        trial_id: String,
        /// 1-based position in the participant's sequence.
        index: usize,
        total: usize,
        size: usize,
        prompt: String,
        left: ImageRef,
        right: ImageRef,
    },
    Complete {
        session_id: String,
        participant_id: String,
        answered: usize,
        total: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedView {
    pub theta: LatentPoint,
    pub image_url: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundView {
    pub round: u32,
    pub portrait_ids: Vec<String>,
    pub raw_scores: Vec<f64>,
    pub centered_scores: Vec<f64>,
    /// Seed after this round.
    pub seed: SeedView,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ResultsView {
    Search {
        session_id: String,
        status: SessionStatus,
        rounds: Vec<RoundView>,
        final_seed: SeedView,
    },
    Turing {
        session_id: String,
        status: SessionStatus,
        chance: f64,
        n_responses: usize,
        curves: Vec<DetectionCurve>,
    },
}

struct Writer {
    state: SessionState,
    log: EventLog,
    since_snapshot: u64,
    /// Set when an append failed part-way; the log tail is then unknown.
    poisoned: bool,
}

struct SessionHandle {
    dir: PathBuf,
    writer: Mutex<Writer>,
    published: RwLock<Arc<SessionState>>,
}

pub struct SessionManager {
    data_dir: PathBuf,
    snapshot_every: u64,
    search_defaults: SearchSessionConfig,
    turing_defaults: TuringConfig,
    resources: Resources,
    store: ImageStore,
    sessions: RwLock<BTreeMap<String, Arc<SessionHandle>>>,
}

const EVENTS_FILE: &str = "events.jsonl";
const SNAPSHOT_FILE: &str = "snapshot.json";

/// Generator for everything session `seed` draws in `stream`: stream 0
/// builds 2AFC trials, stream `r + 1` the lineup of round `r`.
pub fn session_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl SessionManager {
    /// Opens the data directory and replays every session found in it.
    pub fn open(cfg: &ServiceConfig, resources: Resources) -> Result<Self> {
        let sessions_dir = cfg.data_dir.join("sessions");
        std::fs::create_dir_all(&sessions_dir)?;
        let store = ImageStore::open(cfg.data_dir.join("images"))?;
        let mut sessions = BTreeMap::new();
        for entry in std::fs::read_dir(&sessions_dir)? {
            let dir = entry?.path();
            if !dir.join(EVENTS_FILE).is_file() {
                continue;
            }
            let id = dir
                .file_name()
                .and_then(|n| n.to_str())
                .ok_or_else(|| ServiceError::Internal(format!("bad session dir {}", dir.display())))?
                .to_string();
            let handle = load_session(&dir, &id)?;
            sessions.insert(id, Arc::new(handle));
        }
        tracing::info!(sessions = sessions.len(), dir = %cfg.data_dir.display(), "session store opened");
        Ok(Self {
            data_dir: cfg.data_dir.clone(),
            snapshot_every: cfg.snapshot_every,
            search_defaults: cfg.search.clone(),
            turing_defaults: cfg.turing.clone(),
            resources,
            store,
            sessions: RwLock::new(sessions),
        })
    }

    pub fn store(&self) -> &ImageStore {
        &self.store
    }

    fn handle(&self, id: &str) -> Result<Arc<SessionHandle>> {
        self.sessions
            .read()
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(format!("session {id}")))
    }

    /// Latest published state.
    pub fn state(&self, id: &str) -> Result<Arc<SessionState>> {
        Ok(self.handle(id)?.published.read().clone())
    }

    pub fn session(&self, id: &str) -> Result<Session> {
        Ok(self.state(id)?.session.clone())
    }

    pub fn list_sessions(&self) -> Vec<Session> {
        let handles: Vec<_> = self.sessions.read().values().cloned().collect();
        let mut out: Vec<Session> = handles.iter().map(|h| h.published.read().session.clone()).collect();
        out.sort_by(|a, b| a.created_at.cmp(&b.created_at).then_with(|| a.session_id.cmp(&b.session_id)));
        out
    }

    fn decoder(&self) -> Result<&Arc<dyn Decoder>> {
        self.resources
            .lineup_decoder
            .as_ref()
            .ok_or_else(|| ServiceError::Unavailable("no face model configured".into()))
    }

    pub fn create_session(&self, req: CreateSession) -> Result<Session> {
        let seed = req.seed.unwrap_or_else(rand::random);
        let id = uuid::Uuid::new_v4().simple().to_string();
        let created_at = Utc::now();
        let overrides = req.config.as_ref();

        let (spec, trials, lineup) = match req.kind {
            SessionKind::Search => {
                let decoder = self.decoder()?;
                let mut cfg = merge_config(&self.search_defaults, overrides)?;
                let requested_d = overrides.and_then(|o| o.get("d")).is_some();
                if requested_d && cfg.search.d != decoder.latent_dim() {
                    return Err(ServiceError::Invalid(format!(
                        "d = {} but the model has {} dimensions",
                        cfg.search.d,
                        decoder.latent_dim()
                    )));
                }
                cfg.search.d = decoder.latent_dim();
                cfg.search.validate()?;
                let mut search = lineup_core::evolve::SearchState::new(cfg.search.clone());
                let lineup = self.propose(&mut search, seed)?;
                (SessionSpec::Search(cfg), None, Some(lineup))
            }
            SessionKind::Turing => {
                let cfg = merge_config(&self.turing_defaults, overrides)?;
                let ladder = cfg.ladder()?;
                if cfg.per_size == 0 {
                    return Err(ServiceError::Invalid("per_size must be positive".into()));
                }
                if self.resources.real_pool.is_empty() || self.resources.generators.is_empty() {
                    return Err(ServiceError::Unavailable(
                        "2AFC sessions need a portrait corpus and at least one generator".into(),
                    ));
                }
                let gens: Vec<&dyn ImageSampler> = self.resources.generators.iter().map(|g| g.as_ref()).collect();
                let made = make_session_trials(
                    &self.resources.real_pool,
                    &gens,
                    cfg.per_size,
                    &ladder,
                    &mut session_rng(seed, 0),
                )?;
                for img in made.images.values() {
                    self.store.put(img)?;
                }
                (SessionSpec::Turing(cfg), Some(made.trials), None)
            }
        };

        let session = Session {
            session_id: id.clone(),
            created_at,
            spec,
            status: SessionStatus::Active,
            seed,
        };
        let created = EventRecord {
            seq: 1,
            timestamp: created_at,
            session_id: id.clone(),
            payload: EventPayload::SessionCreated {
                session: session.clone(),
                trials,
            },
        };
        let state = SessionState::from_created(&created)?;
        let dir = self.data_dir.join("sessions").join(&id);
        std::fs::create_dir_all(&dir)?;
        let mut log = EventLog::create(&dir.join(EVENTS_FILE))?;
        log.append(&created)?;
        let mut writer = Writer {
            state,
            log,
            since_snapshot: 1,
            poisoned: false,
        };
        if let Some(lineup) = lineup {
            writer.commit(EventPayload::LineupProposed { lineup })?;
        }
        let handle = Arc::new(SessionHandle {
            published: RwLock::new(Arc::new(writer.state.clone())),
            dir,
            writer: Mutex::new(writer),
        });
        self.sessions.write().insert(id.clone(), handle);
        tracing::info!(session = %id, kind = ?session.spec.kind(), seed, "session created");
        Ok(session)
    }

    /// Draws the lineup for `search.round` and stores its portraits.
    fn propose(&self, search: &mut lineup_core::evolve::SearchState, seed: u64) -> Result<Lineup> {
        let decoder = self.decoder()?;
        let mut rng = session_rng(seed, u64::from(search.round) + 1);
        let lineup = propose_lineup(search, decoder.as_ref(), &mut rng)?;
        for (z, id) in lineup.candidates().iter().zip(&lineup.portrait_ids) {
            let stored = self.store.put(&decoder.decode(z)?)?;
            if &stored != id {
                return Err(ServiceError::Internal(format!("portrait hash {stored} != {id}")));
            }
        }
        Ok(lineup)
    }

    pub fn lineup(&self, id: &str) -> Result<LineupView> {
        let state = self.state(id)?;
        let p = state
            .search()
            .ok_or_else(|| ServiceError::conflict("wrong_kind", "not a search session"))?;
        let SessionSpec::Search(cfg) = &state.session.spec else {
            return Err(ServiceError::Internal("search progress in a non-search session".into()));
        };
        let (round, rounds) = (p.search.round, cfg.search.rounds);
        let session_id = id.to_string();
        Ok(match state.session.status {
            SessionStatus::Complete => LineupView::Complete { session_id, round, rounds },
            SessionStatus::Aborted => LineupView::Aborted { session_id, round, rounds },
            SessionStatus::Active => {
                let lineup = p
                    .search
                    .pending
                    .as_ref()
                    .ok_or_else(|| ServiceError::Internal("active search without a lineup".into()))?;
                LineupView::Active {
                    session_id,
                    round,
                    rounds,
                    prompt: cfg.prompt.clone(),
                    quorum: cfg.search.quorum,
                    ballots_so_far: p.ballots.len(),
                    portraits: lineup.portrait_ids.iter().map(|h| ImageRef::new(h)).collect(),
                }
            }
        })
    }

    pub fn submit_ballot(&self, id: &str, req: BallotRequest) -> Result<BallotReceipt> {
        let handle = self.handle(id)?;
        let mut w = handle.writer.lock();
        w.check_writable()?;
        let state = &w.state;
        let p = state
            .search()
            .ok_or_else(|| ServiceError::conflict("wrong_kind", "not a search session"))?;
        let current = p.search.round;
        match state.session.status {
            SessionStatus::Active => {}
            SessionStatus::Complete => {
                return Err(ServiceError::conflict("search_complete", "search is complete"));
            }
            SessionStatus::Aborted => return Err(ServiceError::conflict("session_aborted", "session was aborted")),
        }
        let round = req.round.unwrap_or(current);
        if round != current {
            return Err(ServiceError::conflict(
                "stale_ballot",
                format!("ballot for round {round}, current round is {current}"),
            ));
        }
        let lineup = p
            .search
            .pending
            .clone()
            .ok_or_else(|| ServiceError::Internal("active search without a lineup".into()))?;
        let ballot = Ballot {
            participant_id: req.participant_id,
            round,
            ranking: req.ranking,
        };
        ballot.validate(lineup.len())?;
        if p.ballots.iter().any(|b| b.participant_id == ballot.participant_id) {
            return Err(ServiceError::conflict(
                "duplicate_ballot",
                format!("{} already ranked round {round}", ballot.participant_id),
            ));
        }
        let quorum = p.search.config.quorum;
        let seed = state.session.seed;

        // Everything the quorum ballot triggers is computed before the first
        // event is written, so a failure leaves the round untouched.
        let mut ballots = p.ballots.clone();
        ballots.push(ballot.clone());
        let ballots_so_far = ballots.len();
        let round_advanced = ballots_so_far >= quorum;
        let closing = if round_advanced {
            let scores = aggregate_ranks(&ballots, lineup.len())?;
            let mut next = nes_update(p.search.clone(), &lineup, &scores)?;
            let next_lineup = if next.is_complete() {
                None
            } else {
                Some(self.propose(&mut next, seed)?)
            };
            Some((next.theta, next_lineup))
        } else {
            None
        };

        w.commit(EventPayload::BallotAccepted { ballot })?;
        if let Some((theta, next_lineup)) = closing {
            w.commit(EventPayload::RoundAdvanced { round, theta })?;
            w.commit(match next_lineup {
                Some(lineup) => EventPayload::LineupProposed { lineup },
                None => EventPayload::StatusChanged {
                    status: SessionStatus::Complete,
                },
            })?;
            tracing::info!(session = id, round, "round advanced");
        }
        self.publish(&handle, &mut w)?;
        Ok(BallotReceipt {
            accepted: true,
            round,
            ballots_so_far,
            quorum,
            round_advanced,
        })
    }

    pub fn next_trial(&self, id: &str, participant_id: &str) -> Result<TrialView> {
        let state = self.state(id)?;
        let p = state
            .turing()
            .ok_or_else(|| ServiceError::conflict("wrong_kind", "not a 2AFC session"))?;
        if state.session.status == SessionStatus::Aborted {
            return Err(ServiceError::conflict("session_aborted", "session was aborted"));
        }
        let SessionSpec::Turing(cfg) = &state.session.spec else {
            return Err(ServiceError::Internal("trial progress in a non-2AFC session".into()));
        };
        let total = p.trials.len();
        Ok(match p.next_for(participant_id) {
            Some((i, t)) => {
                let (left, right) = t.left_right();
                TrialView::Active {
                    session_id: id.to_string(),
                    participant_id: participant_id.to_string(),
                    trial_id: t.trial_id.clone(),
                    index: i + 1,
                    total,
                    size: t.size,
                    prompt: cfg.prompt.clone(),
                    left: ImageRef::new(left),
                    right: ImageRef::new(right),
                }
            }
            None => TrialView::Complete {
                session_id: id.to_string(),
                participant_id: participant_id.to_string(),
                answered: total,
                total,
            },
        })
    }

    pub fn submit_response(&self, id: &str, req: ResponseRequest) -> Result<ResponseReceipt> {
        let handle = self.handle(id)?;
        let mut w = handle.writer.lock();
        w.check_writable()?;
        let state = &w.state;
        let p = state
            .turing()
            .ok_or_else(|| ServiceError::conflict("wrong_kind", "not a 2AFC session"))?;
        if state.session.status != SessionStatus::Active {
            return Err(ServiceError::conflict("session_inactive", "session is not active"));
        }
        let (i, trial) = p
            .next_for(&req.participant_id)
            .ok_or_else(|| ServiceError::conflict("trials_exhausted", "participant has answered every trial"))?;
        if trial.trial_id != req.trial_id {
            return Err(ServiceError::conflict(
                "stale_trial",
                format!("expected a response to {}, got {}", trial.trial_id, req.trial_id),
            ));
        }
        let remaining = p.trials.len() - i - 1;
        let response = Response::new(trial, req.participant_id, req.chose_left, req.latency_ms);
        w.commit(EventPayload::ResponseAccepted { response })?;
        self.publish(&handle, &mut w)?;
        Ok(ResponseReceipt {
            accepted: true,
            remaining,
        })
    }

    pub fn abort(&self, id: &str) -> Result<Session> {
        let handle = self.handle(id)?;
        let mut w = handle.writer.lock();
        w.check_writable()?;
        if w.state.session.status != SessionStatus::Active {
            return Err(ServiceError::conflict("session_inactive", "session is not active"));
        }
        w.commit(EventPayload::StatusChanged {
            status: SessionStatus::Aborted,
        })?;
        self.publish(&handle, &mut w)?;
        Ok(w.state.session.clone())
    }

    fn seed_view(&self, theta: &LatentPoint) -> Result<SeedView> {
        let image_url = match &self.resources.lineup_decoder {
            Some(d) if d.latent_dim() == theta.dim() => Some(image_url(&self.store.put(&d.decode(theta)?)?)),
            _ => None,
        };
        Ok(SeedView {
            theta: theta.clone(),
            image_url,
        })
    }

    pub fn results(&self, id: &str) -> Result<ResultsView> {
        let state = self.state(id)?;
        let session_id = id.to_string();
        let status = state.session.status;
        if let Some(p) = state.search() {
            let rounds = p
                .search
                .history
                .iter()
                .map(|r| {
                    Ok(RoundView {
                        round: r.round,
                        portrait_ids: r.portrait_ids.clone(),
                        raw_scores: r.raw_scores.clone(),
                        centered_scores: r.centered_scores.clone(),
                        seed: self.seed_view(&r.theta)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            return Ok(ResultsView::Search {
                session_id,
                status,
                rounds,
                final_seed: self.seed_view(&p.search.theta)?,
            });
        }
        let p = state.turing().expect("session is search or 2AFC");
        Ok(ResultsView::Turing {
            session_id,
            status,
            chance: DetectionCurve::CHANCE,
            n_responses: p.responses.len(),
            curves: detection_curves(&p.responses, &p.trials)?,
        })
    }

    fn publish(&self, handle: &SessionHandle, w: &mut Writer) -> Result<()> {
        *handle.published.write() = Arc::new(w.state.clone());
        if w.since_snapshot >= self.snapshot_every {
            write_snapshot(&handle.dir, &w.state)?;
            w.since_snapshot = 0;
        }
        Ok(())
    }

    /// Flushes every log to disk and refreshes snapshots.
    pub fn sync_all(&self) -> Result<()> {
        let handles: Vec<_> = self.sessions.read().values().cloned().collect();
        for h in handles {
            let mut w = h.writer.lock();
            if w.poisoned {
                continue;
            }
            w.log.sync()?;
            write_snapshot(&h.dir, &w.state)?;
            w.since_snapshot = 0;
        }
        Ok(())
    }
}

impl Writer {
    fn check_writable(&self) -> Result<()> {
        if self.poisoned {
            return Err(ServiceError::Internal(format!(
                "session {} needs a restart after a failed write",
                self.state.session.session_id
            )));
        }
        Ok(())
    }

    /// Validates `payload` against the state, appends it, then applies it.
    fn commit(&mut self, payload: EventPayload) -> Result<()> {
        let rec = EventRecord {
            seq: self.state.last_seq + 1,
            timestamp: Utc::now(),
            session_id: self.state.session.session_id.clone(),
            payload,
        };
        let mut next = self.state.clone();
        next.apply(&rec)?;
        if let Err(e) = self.log.append(&rec) {
            self.poisoned = true;
            return Err(e);
        }
        self.state = next;
        self.since_snapshot += 1;
        Ok(())
    }
}

fn write_snapshot(dir: &Path, state: &SessionState) -> Result<()> {
    let tmp = dir.join(format!("{SNAPSHOT_FILE}.tmp"));
    let bytes = serde_json::to_vec(state).map_err(|e| ServiceError::Internal(e.to_string()))?;
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, dir.join(SNAPSHOT_FILE))?;
    Ok(())
}

/// Rebuilds a session from its snapshot plus the log tail, or from the
/// whole log when the snapshot is missing or unusable.
fn load_session(dir: &Path, id: &str) -> Result<SessionHandle> {
    let (log, records) = EventLog::open(&dir.join(EVENTS_FILE), id)?;
    let from_snapshot = std::fs::read(dir.join(SNAPSHOT_FILE))
        .ok()
        .and_then(|b| serde_json::from_slice::<SessionState>(&b).ok())
        .filter(|s| s.session.session_id == id && s.last_seq >= 1 && s.last_seq as usize <= records.len())
        .and_then(|mut s| {
            for rec in &records[s.last_seq as usize..] {
                s.apply(rec).ok()?;
            }
            Some(s)
        });
    let state = match from_snapshot {
        Some(s) => s,
        None => SessionState::replay(&records)?,
    };
    Ok(SessionHandle {
        dir: dir.to_path_buf(),
        published: RwLock::new(Arc::new(state.clone())),
        writer: Mutex::new(Writer {
            state,
            log,
            since_snapshot: 0,
            poisoned: false,
        }),
    })
}

/// Replays a session's log from scratch, ignoring any snapshot.
pub fn replay_session_dir(dir: &Path) -> Result<SessionState> {
    let id = dir
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| ServiceError::Internal(format!("bad session dir {}", dir.display())))?;
    let bytes = std::fs::read(dir.join(EVENTS_FILE))?;
    let complete = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    let records = bytes[..complete]
        .split(|&b| b == b'\n')
        .filter(|l| !l.is_empty())
        .map(serde_json::from_slice::<EventRecord>)
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| ServiceError::Corrupt {
            session: id.to_string(),
            message: e.to_string(),
        })?;
    SessionState::replay(&records)
}

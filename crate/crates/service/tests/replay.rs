mod common;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use common::{manager, ranking};
use lineup_service::manager::{replay_session_dir, BallotRequest, CreateSession, ResponseRequest, TrialView};
use lineup_service::session::{SessionKind, SessionStatus};
use lineup_service::SessionManager;
use proptest::prelude::*;
use serde_json::json;

#[derive(Clone, Debug)]
enum Op {
    CreateSearch { quorum: usize },
    CreateTuring,
    Ballot { session: usize, participant: u8 },
    Respond { session: usize, participant: u8, left: bool },
    Abort { session: usize },
    /// Drop the manager, optionally leaving a half-written line behind.
    Kill { tear: Option<usize> },
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        1 => (1usize..4).prop_map(|quorum| Op::CreateSearch { quorum }),
        1 => Just(Op::CreateTuring),
        8 => (any::<usize>(), 0u8..6).prop_map(|(session, participant)| Op::Ballot { session, participant }),
        6 => (any::<usize>(), 0u8..3, any::<bool>())
            .prop_map(|(session, participant, left)| Op::Respond { session, participant, left }),
        1 => any::<usize>().prop_map(|session| Op::Abort { session }),
        2 => proptest::option::of(any::<usize>()).prop_map(|tear| Op::Kill { tear }),
    ]
}

fn snapshot(m: &SessionManager) -> BTreeMap<String, Vec<u8>> {
    m.list_sessions()
        .into_iter()
        .map(|s| {
            let state = m.state(&s.session_id).unwrap();
            (s.session_id, serde_json::to_vec(&*state).unwrap())
        })
        .collect()
}

fn tear_log(dir: &Path, id: &str) {
    let path = dir.join("sessions").join(id).join("events.jsonl");
    let mut f = std::fs::OpenOptions::new().append(true).open(path).unwrap();
    f.write_all(br#"{"seq":999999,"timestamp":"2026-01-01T00:00:00Z","session_id":"#).unwrap();
}

fn run(ops: Vec<Op>) -> Result<(), TestCaseError> {
    let dir = tempfile::tempdir().unwrap();
    let mut m = manager(dir.path());
    let mut ids: Vec<String> = Vec::new();
    let mut ops = ops;
    ops.push(Op::Kill { tear: Some(0) });
    for op in ops {
        match op {
            Op::CreateSearch { quorum } => {
                let s = m
                    .create_session(CreateSession {
                        kind: SessionKind::Search,
                        config: Some(json!({"quorum": quorum, "rounds": 3})),
                        seed: Some(ids.len() as u64),
                    })
                    .unwrap();
                ids.push(s.session_id);
            }
            Op::CreateTuring => {
                let s = m
                    .create_session(CreateSession {
                        kind: SessionKind::Turing,
                        config: Some(json!({"per_size": 2, "min_side": 4, "max_side": 16, "steps": 3})),
                        seed: Some(ids.len() as u64),
                    })
                    .unwrap();
                ids.push(s.session_id);
            }
            Op::Ballot { session, participant } if !ids.is_empty() => {
                let id = &ids[session % ids.len()];
                let state = m.state(id).unwrap();
                if let Some(p) = state.search() {
                    let round = p.search.round;
                    let _ = m.submit_ballot(
                        id,
                        BallotRequest {
                            participant_id: format!("p{participant}"),
                            round: Some(round),
                            ranking: ranking(8, u64::from(round) * 31 + u64::from(participant)),
                        },
                    );
                }
            }
            Op::Respond { session, participant, left } if !ids.is_empty() => {
                let id = &ids[session % ids.len()];
                let pid = format!("p{participant}");
                if let Ok(TrialView::Active { trial_id, .. }) = m.next_trial(id, &pid) {
                    let _ = m.submit_response(
                        id,
                        ResponseRequest { participant_id: pid, trial_id, chose_left: left, latency_ms: None },
                    );
                }
            }
            Op::Abort { session } if !ids.is_empty() => {
                let id = &ids[session % ids.len()];
                if m.session(id).unwrap().status == SessionStatus::Active {
                    m.abort(id).unwrap();
                }
            }
            Op::Kill { tear } => {
                let before = snapshot(&m);
                drop(m);
                if let (Some(k), false) = (tear, ids.is_empty()) {
                    tear_log(dir.path(), &ids[k % ids.len()]);
                }
                m = manager(dir.path());
                let after = snapshot(&m);
                prop_assert_eq!(&before, &after);
                for id in &ids {
                    let full = replay_session_dir(&dir.path().join("sessions").join(id)).unwrap();
                    prop_assert_eq!(&serde_json::to_vec(&full).unwrap(), &before[id]);
                }
            }
            _ => {}
        }
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn kill_and_replay_reconstructs_state(ops in proptest::collection::vec(op(), 1..80)) {
        run(ops)?;
    }
}

#[test]
fn long_session_survives_restarts_between_every_round() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = manager(dir.path());
    let id = m
        .create_session(CreateSession {
            kind: SessionKind::Search,
            config: Some(json!({"quorum": 3, "rounds": 10})),
            seed: Some(3),
        })
        .unwrap()
        .session_id;
    for round in 0..10u32 {
        for p in 0..3u64 {
            m.submit_ballot(
                &id,
                BallotRequest {
                    participant_id: format!("p{p}"),
                    round: Some(round),
                    ranking: ranking(8, u64::from(round) * 3 + p),
                },
            )
            .unwrap();
        }
        let before = serde_json::to_vec(&*m.state(&id).unwrap()).unwrap();
        drop(m);
        m = manager(dir.path());
        assert_eq!(serde_json::to_vec(&*m.state(&id).unwrap()).unwrap(), before);
    }
    assert_eq!(m.session(&id).unwrap().status, SessionStatus::Complete);
}

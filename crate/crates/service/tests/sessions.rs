mod common;

use common::{manager, ranking};
use lineup_service::manager::{
    BallotRequest, CreateSession, LineupView, ResponseRequest, ResultsView, TrialView,
};
use lineup_service::session::{SessionKind, SessionStatus};
use lineup_service::ServiceError;
use serde_json::json;

fn search(m: &lineup_service::SessionManager, config: serde_json::Value) -> String {
    m.create_session(CreateSession {
        kind: SessionKind::Search,
        config: Some(config),
        seed: Some(11),
    })
    .unwrap()
    .session_id
}

fn ballot(pid: &str, round: u32, salt: u64) -> BallotRequest {
    BallotRequest {
        participant_id: pid.into(),
        round: Some(round),
        ranking: ranking(8, salt),
    }
}

fn active_round(view: &LineupView) -> (u32, Vec<String>) {
    match view {
        LineupView::Active { round, portraits, .. } => (*round, portraits.iter().map(|p| p.id.clone()).collect()),
        other => panic!("expected an active lineup, got {other:?}"),
    }
}

#[test]
fn search_session_opens_with_a_lineup() {
    let dir = tempfile::tempdir().unwrap();
    let m = manager(dir.path());
    let id = search(&m, json!({"rounds": 10, "n": 8}));
    let view = m.lineup(&id).unwrap();
    let (round, ids) = active_round(&view);
    assert_eq!(round, 0);
    assert_eq!(ids.len(), 8);
    for h in &ids {
        assert!(m.store().get(h).is_ok());
    }
    assert_eq!(m.lineup(&id).unwrap(), view);
    let s = m.session(&id).unwrap();
    assert_eq!(s.status, SessionStatus::Active);
}

#[test]
fn malformed_configs_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let m = manager(dir.path());
    for bad in [json!({"n": 1}), json!({"sigma": 0.0}), json!({"d": 99}), json!({"bogus": 1})] {
        let err = m
            .create_session(CreateSession {
                kind: SessionKind::Search,
                config: Some(bad.clone()),
                seed: None,
            })
            .unwrap_err();
        assert_eq!(err.status(), 422, "{bad}: {err}");
    }
    assert!(m.list_sessions().is_empty());
}

#[test]
fn quorum_closes_the_round() {
    let dir = tempfile::tempdir().unwrap();
    let m = manager(dir.path());
    let id = search(&m, json!({"quorum": 10}));
    let (_, first_ids) = active_round(&m.lineup(&id).unwrap());
    for p in 0..9 {
        let r = m.submit_ballot(&id, ballot(&format!("p{p}"), 0, p)).unwrap();
        assert!(!r.round_advanced);
        assert_eq!(r.ballots_so_far, p as usize + 1);
    }
    assert_eq!(active_round(&m.lineup(&id).unwrap()).0, 0);

    let dup = m.submit_ballot(&id, ballot("p3", 0, 99)).unwrap_err();
    assert_eq!(dup.code(), "duplicate_ballot");
    assert_eq!(dup.status(), 409);
    let bad = m
        .submit_ballot(&id, BallotRequest { participant_id: "x".into(), round: Some(0), ranking: vec![1, 1, 2, 3, 4, 5, 6, 7] })
        .unwrap_err();
    assert_eq!(bad.status(), 422);
    match m.lineup(&id).unwrap() {
        LineupView::Active { ballots_so_far, .. } => assert_eq!(ballots_so_far, 9),
        other => panic!("{other:?}"),
    }

    let r = m.submit_ballot(&id, ballot("p9", 0, 9)).unwrap();
    assert!(r.round_advanced);
    let (round, ids) = active_round(&m.lineup(&id).unwrap());
    assert_eq!(round, 1);
    assert_ne!(ids, first_ids);

    let late = m.submit_ballot(&id, ballot("late", 0, 1)).unwrap_err();
    assert_eq!(late.code(), "stale_ballot");
}

#[test]
fn complete_search_reports_history_and_final_seed() {
    let dir = tempfile::tempdir().unwrap();
    let m = manager(dir.path());
    let id = search(&m, json!({"rounds": 10, "quorum": 2}));
    for round in 0..10u32 {
        for p in 0..2 {
            m.submit_ballot(&id, ballot(&format!("p{p}"), round, u64::from(round) * 7 + p)).unwrap();
        }
    }
    assert_eq!(m.session(&id).unwrap().status, SessionStatus::Complete);
    assert!(matches!(m.lineup(&id).unwrap(), LineupView::Complete { round: 10, .. }));
    assert_eq!(m.submit_ballot(&id, ballot("p0", 10, 0)).unwrap_err().code(), "search_complete");
    match m.results(&id).unwrap() {
        ResultsView::Search { rounds, final_seed, status, .. } => {
            assert_eq!(status, SessionStatus::Complete);
            assert_eq!(rounds.len(), 10);
            assert_eq!(rounds.last().unwrap().seed, final_seed);
            let url = final_seed.image_url.unwrap();
            let hash = url.trim_start_matches("/images/").trim_end_matches(".png");
            assert!(m.store().get(hash).is_ok());
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn aborted_search_keeps_partial_history() {
    let dir = tempfile::tempdir().unwrap();
    let m = manager(dir.path());
    let id = search(&m, json!({"quorum": 1}));
    m.submit_ballot(&id, ballot("a", 0, 0)).unwrap();
    m.submit_ballot(&id, ballot("a", 1, 1)).unwrap();
    m.abort(&id).unwrap();
    assert_eq!(m.abort(&id).unwrap_err().status(), 409);
    assert!(matches!(m.lineup(&id).unwrap(), LineupView::Aborted { round: 2, .. }));
    assert_eq!(m.submit_ballot(&id, ballot("b", 2, 0)).unwrap_err().status(), 409);
    match m.results(&id).unwrap() {
        ResultsView::Search { rounds, status, .. } => {
            assert_eq!(status, SessionStatus::Aborted);
            assert_eq!(rounds.len(), 2);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn same_seed_gives_same_portraits() {
    let dir = tempfile::tempdir().unwrap();
    let m = manager(dir.path());
    let a = search(&m, json!({}));
    let b = search(&m, json!({}));
    assert_eq!(active_round(&m.lineup(&a).unwrap()).1, active_round(&m.lineup(&b).unwrap()).1);
}

fn turing(m: &lineup_service::SessionManager) -> String {
    m.create_session(CreateSession {
        kind: SessionKind::Turing,
        config: None,
        seed: Some(5),
    })
    .unwrap()
    .session_id
}

#[test]
fn turing_session_walks_forty_trials() {
    let dir = tempfile::tempdir().unwrap();
    let m = manager(dir.path());
    let id = turing(&m);
    match m.results(&id).unwrap() {
        ResultsView::Turing { curves, n_responses, .. } => {
            assert!(curves.is_empty());
            assert_eq!(n_responses, 0);
        }
        other => panic!("{other:?}"),
    }

    let first = m.next_trial(&id, "alice").unwrap();
    assert_eq!(m.next_trial(&id, "alice").unwrap(), first);
    let TrialView::Active { index: 1, total: 40, .. } = first else {
        panic!("{first:?}");
    };

    let mut previous: Option<String> = None;
    for k in 0..40 {
        let TrialView::Active { trial_id, size, left, right, .. } = m.next_trial(&id, "alice").unwrap() else {
            panic!("ran out early");
        };
        assert!([16, 25, 40, 64].contains(&size));
        assert_ne!(left.id, right.id);
        if let Some(prev) = &previous {
            let err = m
                .submit_response(&id, ResponseRequest { participant_id: "alice".into(), trial_id: prev.clone(), chose_left: true, latency_ms: None })
                .unwrap_err();
            assert_eq!(err.code(), "stale_trial");
        }
        let r = m
            .submit_response(&id, ResponseRequest { participant_id: "alice".into(), trial_id: trial_id.clone(), chose_left: k % 3 == 0, latency_ms: Some(500) })
            .unwrap();
        assert_eq!(r.remaining, 39 - k);
        previous = Some(trial_id);
    }
    assert!(matches!(m.next_trial(&id, "alice").unwrap(), TrialView::Complete { answered: 40, .. }));
    assert_eq!(
        m.submit_response(&id, ResponseRequest { participant_id: "alice".into(), trial_id: previous.unwrap(), chose_left: true, latency_ms: None })
            .unwrap_err()
            .code(),
        "trials_exhausted"
    );
    // Another participant starts from the top.
    assert!(matches!(m.next_trial(&id, "bob").unwrap(), TrialView::Active { index: 1, .. }));

    match m.results(&id).unwrap() {
        ResultsView::Turing { curves, n_responses, chance, .. } => {
            assert_eq!(n_responses, 40);
            assert_eq!(chance, 0.5);
            let total: usize = curves.iter().flat_map(|c| &c.points).map(|p| p.n_trials).sum();
            assert_eq!(total, 40);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn wrong_kind_and_unknown_sessions() {
    let dir = tempfile::tempdir().unwrap();
    let m = manager(dir.path());
    let t = turing(&m);
    let s = search(&m, json!({}));
    assert_eq!(m.lineup(&t).unwrap_err().status(), 409);
    assert_eq!(m.next_trial(&s, "p").unwrap_err().status(), 409);
    assert!(matches!(m.lineup("nope"), Err(ServiceError::NotFound(_))));
    assert!(matches!(m.results("nope"), Err(ServiceError::NotFound(_))));
    assert_eq!(m.list_sessions().len(), 2);
}

#[test]
fn missing_resources_make_sessions_unavailable() {
    let dir = tempfile::tempdir().unwrap();
    let m = lineup_service::SessionManager::open(&common::config(dir.path()), Default::default()).unwrap();
    for kind in [SessionKind::Search, SessionKind::Turing] {
        let err = m.create_session(CreateSession { kind, config: None, seed: None }).unwrap_err();
        assert_eq!(err.code(), "unavailable");
    }
}

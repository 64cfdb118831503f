use std::collections::BTreeSet;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;
use trex_core::demos::{aggregate_votes, generate_demos, train_demonstrator, VoteRecord};
use trex_core::env::GridworldSpec;
use trex_core::policy::LearnerConfig;
use trex_core::presets::extrap9;
use trex_labeld::{router, AppState, LabelSession};

fn demos(n: usize) -> (GridworldSpec, Vec<trex_core::env::Trajectory>) {
    let spec = extrap9();
    let cfg = LearnerConfig { total_updates: 200 * (n - 1), checkpoint_every: 200, ..Default::default() };
    let ck = train_demonstrator(&spec, &cfg, 3).unwrap();
    let d = generate_demos(&spec, &ck, 1, 3).unwrap();
    assert_eq!(d.len(), n);
    (spec, d)
}

fn session(n: usize, target: usize) -> LabelSession {
    let (spec, d) = demos(n);
    LabelSession::new("fixture", &spec, &d, 11, target).unwrap()
}

async fn call(app: &axum::Router, method: &str, uri: &str, body: Option<&str>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    if body.is_some() {
        req = req.header("content-type", "application/json");
    }
    let req = req.body(body.map(|b| Body::from(b.to_string())).unwrap_or_else(Body::empty)).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let v = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap_or(Value::Null) };
    (status, v)
}

async fn vote(app: &axum::Router, pair_id: &str, choice: &str) -> (StatusCode, Value) {
    let body = json!({ "pair_id": pair_id, "choice": choice }).to_string();
    call(app, "POST", "/api/vote", Some(&body)).await
}

#[tokio::test]
async fn without_a_session_next_pair_conflicts() {
    let app = router(AppState::new(None), None);
    let (status, body) = call(&app, "GET", "/api/pair/next", None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert!(body["error"].as_str().unwrap().contains("no labeling session"));
    let (status, body) = call(&app, "GET", "/api/session/export", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, json!([]));
}

#[tokio::test]
async fn twelve_demos_serve_sixty_six_pairs_then_complete() {
    let app = router(AppState::new(Some(session(12, 1))), None);
    let mut seen = BTreeSet::new();
    loop {
        let (status, body) = call(&app, "GET", "/api/pair/next", None).await;
        assert_eq!(status, StatusCode::OK);
        if body["status"] == "complete" {
            break;
        }
        assert_eq!(body["grid"]["width"], 9);
        assert!(!body["traj_a"]["cells"].as_array().unwrap().is_empty());
        let id = body["pair_id"].as_str().unwrap().to_string();
        let (a, b) = id.split_once('-').unwrap();
        let (a, b): (usize, usize) = (a.parse().unwrap(), b.parse().unwrap());
        assert!(seen.insert((a.min(b), a.max(b))), "pair {id} served after retirement");
        let (status, ack) = vote(&app, &id, "a_better").await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(ack["retired"], true);
    }
    assert_eq!(seen.len(), 66);
}

#[tokio::test]
async fn next_pair_is_not_consumed_by_viewing() {
    let app = router(AppState::new(Some(session(4, 6))), None);
    let (_, first) = call(&app, "GET", "/api/pair/next", None).await;
    let (_, again) = call(&app, "GET", "/api/pair/next", None).await;
    assert_eq!(first["pair_id"], again["pair_id"]);
}

#[tokio::test]
async fn bad_votes_are_rejected() {
    let app = router(AppState::new(Some(session(4, 6))), None);
    let (status, _) = vote(&app, "0-9", "a_better").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = vote(&app, "2-2", "a_better").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = vote(&app, "nonsense", "a_better").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&app, "POST", "/api/vote", Some("{\"pair_id\": \"0-1\"")).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = vote(&app, "0-1", "maybe").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn sixth_vote_retires_and_seventh_is_surplus() {
    let app = router(AppState::new(Some(session(3, 6))), None);
    for k in 1..=6 {
        let (_, ack) = vote(&app, "0-1", "b_better").await;
        assert_eq!(ack["votes"], k);
        assert_eq!(ack["retired"], k == 6);
        assert_eq!(ack["surplus"], false);
    }
    let (status, ack) = vote(&app, "1-0", "b_better").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(ack["surplus"], true);
    let (_, export) = call(&app, "GET", "/api/session/export", None).await;
    let records: Vec<VoteRecord> = serde_json::from_value(export).unwrap();
    assert_eq!(records.len(), 1);
    assert_eq!(records[0].votes.len(), 6);
    assert_eq!(aggregate_votes(&records), vec![(0, 1)]);
}

#[tokio::test]
async fn export_translates_left_right_back() {
    let app = router(AppState::new(Some(session(3, 6))), None);
    // Trajectory 2 preferred over 0, shown in both orientations.
    for (id, choice) in [("0-2", "b_better"), ("2-0", "a_better"), ("2-0", "a_better"), ("0-2", "not_sure")] {
        vote(&app, id, choice).await;
    }
    let (_, export) = call(&app, "GET", "/api/session/export", None).await;
    let (_, again) = call(&app, "GET", "/api/session/export", None).await;
    assert_eq!(export, again);
    let records: Vec<VoteRecord> = serde_json::from_value(export).unwrap();
    assert_eq!(records[0].pair, (0, 2));
    assert_eq!(aggregate_votes(&records), vec![(0, 2)]);
}

#[tokio::test]
async fn restart_replays_the_log() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("votes.jsonl");
    let choices = ["a_better", "b_better", "not_sure"];
    let before = {
        let state = AppState::new(Some(session(5, 6).with_log(&log).unwrap()));
        let app = router(state, None);
        for k in 0..17 {
            let (_, next) = call(&app, "GET", "/api/pair/next", None).await;
            let (status, _) = vote(&app, next["pair_id"].as_str().unwrap(), choices[k % 3]).await;
            assert_eq!(status, StatusCode::OK);
        }
        call(&app, "GET", "/api/session/export", None).await.1
    };
    let app = router(AppState::new(Some(session(5, 6).with_log(&log).unwrap())), None);
    let (_, after) = call(&app, "GET", "/api/session/export", None).await;
    assert_eq!(before, after);
    let (_, status) = call(&app, "GET", "/api/session", None).await;
    assert_eq!(status["votes"], 17);

    let (spec, d) = demos(5);
    let other = LabelSession::new("other", &spec, &d, 11, 6).unwrap();
    assert!(other.with_log(&log).is_err());
}

#[tokio::test]
async fn default_page_is_served() {
    let app = router(AppState::new(None), None);
    let resp = app.oneshot(Request::get("/").body(Body::empty()).unwrap()).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
}

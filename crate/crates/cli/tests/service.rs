mod common;

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use raccer::*;
use raccer_cli::explain::Explanation;
use raccer_cli::models::Models;
use raccer_cli::service::{router, AppState, Health, PredictResponse, SampledState, SimulateResponse};
use serde_json::{json, Value};
use tower::ServiceExt;

fn app(extra: &str) -> axum::Router {
    let cfg = common::config(extra);
    let models = Models::load(&cfg).unwrap();
    router(Arc::new(AppState::ready(cfg, models)))
}

/// Same models, but the environment never regrows trees.
fn deterministic_app() -> axum::Router {
    let cfg = common::config("");
    let m = Models::load(&cfg).unwrap();
    let world = GridWorld::new(GridConfig::deterministic()).unwrap();
    let policy = TabularPolicy::new(world.clone(), m.policy.table().clone());
    router(Arc::new(AppState::ready(cfg, Models { world, policy, autoencoder: m.autoencoder })))
}

async fn call(app: &axum::Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = req.body(body.map_or(Body::empty(), |b| Body::from(b.to_string()))).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    (status, bytes.to_vec())
}

fn parse<T: serde::de::DeserializeOwned>(b: &[u8]) -> T {
    serde_json::from_slice(b).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(b)))
}

const STATE: [i64; 9] = [4, 0, 0, 4, 0, 0, 2, 0, 0];

#[tokio::test]
async fn health_reports_readiness_and_a_stable_hash() {
    let cfg = common::config("");
    let cold = router(Arc::new(AppState::new(cfg.clone())));
    let (s, b) = call(&cold, "GET", "/api/health", None).await;
    assert_eq!(s, StatusCode::OK);
    let h: Health = parse(&b);
    assert!(!h.ready);
    let (s, _) = call(&cold, "POST", "/api/predict", Some(json!({ "state": STATE }))).await;
    assert_eq!(s, StatusCode::SERVICE_UNAVAILABLE);

    let warm = app("");
    let (_, a) = call(&warm, "GET", "/api/health", None).await;
    let (_, b) = call(&warm, "GET", "/api/health", None).await;
    let ha: Health = parse(&a);
    assert!(ha.ready);
    assert_eq!(a, b);
    assert_eq!(ha.config_hash, h.config_hash);
    assert_eq!(ha.config_hash, cfg.config_hash());
}

#[tokio::test]
async fn predict_returns_seven_values_and_rejects_bad_states() {
    let app = app("");
    let (s, a) = call(&app, "POST", "/api/predict", Some(json!({ "state": STATE }))).await;
    assert_eq!(s, StatusCode::OK);
    let p: PredictResponse = parse(&a);
    assert_eq!(p.action_values.len(), 7);
    assert!(p.actions.contains(&p.action));
    let (_, b) = call(&app, "POST", "/api/predict", Some(json!({ "state": STATE }))).await;
    assert_eq!(a, b);

    for bad in [json!({ "state": [0, 0, 0, 0, 0, 0, 0, 0, 0] }), json!({ "state": [4, 0] }), json!({ "state": STATE, "extra": 1 })] {
        let (s, _) = call(&app, "POST", "/api/predict", Some(bad)).await;
        assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    }
}

async fn greedy(app: &axum::Router, state: &[i64]) -> String {
    let (_, b) = call(app, "POST", "/api/predict", Some(json!({ "state": state }))).await;
    parse::<PredictResponse>(&b).action
}

#[tokio::test]
async fn identity_explanation_has_zero_loss() {
    let app = app("");
    let a = greedy(&app, &STATE).await;
    let (s, b) = call(&app, "POST", "/api/explain", Some(json!({ "state": STATE, "action": a }))).await;
    assert_eq!(s, StatusCode::OK);
    let e: Explanation = parse(&b);
    assert!(e.found);
    assert_eq!(e.actions, Some(vec![]));
    assert_eq!(e.raccer_loss, Some(0.0));
    assert_eq!(e.counterfactual.as_deref(), Some(&STATE[..]));
}

fn without_elapsed(b: &[u8]) -> Value {
    let mut v: Value = parse(b);
    v.as_object_mut().unwrap().remove("elapsed_ms");
    v
}

#[tokio::test]
async fn same_request_gives_the_same_explanation() {
    let app = app("");
    for req in [json!({ "state": STATE, "action": "UP" }), json!({ "state": STATE, "action": "UP", "seed": 11, "method": "bo-gen" })] {
        let (_, a) = call(&app, "POST", "/api/explain", Some(req.clone())).await;
        let (_, b) = call(&app, "POST", "/api/explain", Some(req)).await;
        assert_eq!(without_elapsed(&a), without_elapsed(&b));
    }
    let (_, a) = call(&app, "POST", "/api/explain", Some(json!({ "state": STATE, "action": "UP", "seed": 1 }))).await;
    let e: Explanation = parse(&a);
    assert_eq!(e.seed, 1);
}

#[tokio::test]
async fn positive_explanations_are_valid_and_complete() {
    let app = app("");
    for action in ["UP", "DOWN", "RIGHT", "SHOOT", "CHOP", "WAIT"] {
        for method in ["raccer", "bo-ts", "bo-gen"] {
            let (s, b) = call(&app, "POST", "/api/explain", Some(json!({ "state": STATE, "action": action, "method": method }))).await;
            assert_eq!(s, StatusCode::OK);
            let e: Explanation = parse(&b);
            if !e.found {
                continue;
            }
            let cf = e.counterfactual.clone().unwrap();
            assert_eq!(greedy(&app, &cf).await, action);
            assert!(e.properties.is_some() && e.baseline_loss.is_some());
            if method != "bo-gen" {
                assert!(e.actions.is_some() && e.raccer_loss.is_some() && e.success_rate.is_some());
            }
        }
    }
}

#[tokio::test]
async fn unreachable_action_reports_diagnostics() {
    let app = app("");
    let (_, b) = call(&app, "GET", "/api/sample-states?count=20&seed=5", None).await;
    let states: Vec<SampledState> = parse(&b);
    let mut seen = 0;
    for s in &states {
        for action in ["UP", "DOWN", "LEFT", "RIGHT", "SHOOT", "CHOP", "WAIT"] {
            let req = json!({ "state": s.state, "action": action, "max_actions": 1, "iterations": 20 });
            let (_, b) = call(&app, "POST", "/api/explain", Some(req)).await;
            let e: Explanation = parse(&b);
            if e.found {
                continue;
            }
            seen += 1;
            assert_eq!(e.diagnostics.valid_candidates, Some(0));
            assert!(e.diagnostics.nodes.unwrap() > 1);
            assert!(e.counterfactual.is_none() && e.actions.is_none() && e.properties.is_none() && e.raccer_loss.is_none());
        }
    }
    assert!(seen > 0, "every action was reachable in one step from every sampled state");
}

#[tokio::test]
async fn explain_rejects_bad_input() {
    let app = app("");
    for bad in [
        json!({ "state": STATE, "action": "JUMP" }),
        json!({ "state": [0, 0, 0, 0, 0, 0, 0, 0, 0], "action": "UP" }),
        json!({ "state": STATE, "action": "UP", "method": "magic" }),
        json!({ "state": STATE, "action": "UP", "simulations": 0 }),
        json!({ "state": STATE, "action": "UP", "temperature": 1 }),
    ] {
        let (s, _) = call(&app, "POST", "/api/explain", Some(bad)).await;
        assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    }
}

#[tokio::test]
async fn explain_past_its_budget_times_out() {
    let app = app("[serve]\nexplain_budget_ms = 1\n");
    let req = json!({ "state": STATE, "action": "UP", "iterations": 100000, "simulations": 1000 });
    let (s, b) = call(&app, "POST", "/api/explain", Some(req)).await;
    assert_eq!(s, StatusCode::GATEWAY_TIMEOUT);
    let v: Value = parse(&b);
    assert_eq!(v["error"], "timeout");
}

#[tokio::test]
async fn simulate_histograms() {
    let det = deterministic_app();
    let req = json!({ "state": STATE, "actions": ["DOWN", "UP", "WAIT"], "n": 50 });
    let (s, b) = call(&det, "POST", "/api/simulate", Some(req)).await;
    assert_eq!(s, StatusCode::OK);
    let r: SimulateResponse = parse(&b);
    assert_eq!(r.outcomes.len(), 1);
    assert_eq!(r.outcomes[0].count, 50);

    let app = app("");
    let (_, b) = call(&app, "POST", "/api/simulate", Some(json!({ "state": STATE, "n": 7, "desired": "UP" }))).await;
    let r: SimulateResponse = parse(&b);
    assert_eq!(r.outcomes.len(), 1);
    assert_eq!(r.outcomes[0].state, STATE.to_vec());
    assert_eq!(r.outcomes[0].count, 7);
    assert_eq!(r.action_frequencies.values().sum::<u32>(), 7);

    let req = json!({ "state": STATE, "actions": ["WAIT", "WAIT", "WAIT"], "n": 300, "seed": 2 });
    let (_, a) = call(&app, "POST", "/api/simulate", Some(req.clone())).await;
    let (_, b) = call(&app, "POST", "/api/simulate", Some(req)).await;
    assert_eq!(a, b);
    let r: SimulateResponse = parse(&a);
    assert!(r.outcomes.len() > 1, "regrowth should vary three waits over 300 runs");
    assert_eq!(r.outcomes.iter().map(|o| o.count).sum::<u32>(), 300);

    for bad in [json!({ "state": STATE, "n": 0 }), json!({ "state": STATE, "actions": ["FLY"], "n": 1 })] {
        let (s, _) = call(&app, "POST", "/api/simulate", Some(bad)).await;
        assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    }
}

#[tokio::test]
async fn sample_states_are_legal_and_seeded() {
    let app = app("");
    let cfg = common::config("");
    let world = GridWorld::new(cfg.env).unwrap();
    let (s, a) = call(&app, "GET", "/api/sample-states?count=5&seed=9", None).await;
    assert_eq!(s, StatusCode::OK);
    let states: Vec<SampledState> = parse(&a);
    assert_eq!(states.len(), 5);
    for st in &states {
        let f: Vec<f64> = st.state.iter().map(|&v| v as f64).collect();
        assert!(world.check_game_fidelity(&f));
    }
    let (_, b) = call(&app, "GET", "/api/sample-states?count=5&seed=9", None).await;
    assert_eq!(a, b);
    let (_, c) = call(&app, "GET", "/api/sample-states?count=0", None).await;
    assert!(parse::<Vec<SampledState>>(&c).is_empty());
    let (s, _) = call(&app, "GET", "/api/sample-states?count=100000", None).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
}

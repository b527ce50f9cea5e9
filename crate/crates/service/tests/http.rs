use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use probattn::oracle::{synth_scene, SynthSpec};
use probattn_annotation_service::{router, AppState};
use serde_json::{json, Value};
use tower::ServiceExt;

fn app() -> Router {
    router(Arc::new(AppState::default()))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(match body {
            Some(b) => Body::from(serde_json::to_vec(&b).unwrap()),
            None => Body::empty(),
        })
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

async fn json_call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (s, b) = call(app, method, uri, body).await;
    (s, serde_json::from_slice(&b).unwrap())
}

const SPEC: SynthSpec = SynthSpec {
    seed: 7,
    n: 64,
    clusters: 4,
    noise: 0.3,
};

fn synth_body() -> Value {
    json!({"synth": {"seed": SPEC.seed, "n": SPEC.n, "clusters": SPEC.clusters, "noise": SPEC.noise}})
}

async fn new_session(app: &Router) -> (String, Value) {
    let (s, v) = json_call(app, "POST", "/sessions", Some(synth_body())).await;
    assert_eq!(s, StatusCode::CREATED, "{v}");
    (v["session"].as_str().unwrap().to_string(), v)
}

fn values(v: &Value) -> Vec<Vec<f64>> {
    serde_json::from_value(v["values"].clone()).unwrap()
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[tokio::test]
async fn synth_sessions_are_seed_deterministic() {
    let app = app();
    let (a, va) = new_session(&app).await;
    let (b, vb) = new_session(&app).await;
    assert_ne!(a, b);
    assert_eq!(va["labels"], vb["labels"]);
    assert_eq!(va["values"], vb["values"]);
    assert_eq!(va["grid"], json!({"rows": 8, "cols": 8}));
    assert_eq!(va["label_count"], 4);
}

#[tokio::test]
async fn validation_failures_are_400_with_field() {
    let app = app();
    let model = json!({
        "version": 1, "n": 2, "d": 1, "m": 1,
        "pi": [[0.5, 0.5], [0.5, 0.4]],
        "xi": [[0.0], [1.0]], "mu": [[0.0], [1.0]],
        "alpha": [1.0, 1.0], "beta": [1.0, 1.0]
    });
    let (s, v) = json_call(&app, "POST", "/sessions", Some(json!({"model": model}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert!(v["error"].as_str().unwrap().contains("pi[1]"), "{v}");

    let (s, _) = call(&app, "POST", "/sessions", None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn single_unit_model_returns_its_mean() {
    let app = app();
    let model = json!({
        "version": 1, "n": 1, "d": 2, "m": 1,
        "pi": [[1.0]], "xi": [[0.5, -1.0]], "mu": [[0.25]],
        "alpha": [2.0], "beta": [3.0]
    });
    let (s, v) = json_call(&app, "POST", "/sessions", Some(json!({"model": model, "queries": [[4.0, 4.0]]}))).await;
    assert_eq!(s, StatusCode::CREATED);
    assert_eq!(values(&v), vec![vec![0.25]]);
}

#[tokio::test]
async fn corrections_lifecycle() {
    let app = app();
    let (id, created) = new_session(&app).await;
    let uri = format!("/sessions/{id}/corrections");

    let (s, v) = json_call(&app, "POST", &uri, Some(json!({"corrections": []}))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["revision"], 0);
    assert_eq!(v["values"], created["values"]);
    assert_eq!(v["changed_units"], json!([]));

    let (s, v) = json_call(&app, "POST", &uri, Some(json!({"corrections": [{"unit": 5, "label": 0}], "revision": 0}))).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["revision"], 1);
    assert_eq!(v["labels"][5], 0);
    assert!(v["changed_units"].as_array().unwrap().contains(&json!(5)));
    assert_eq!(v["deltas"].as_array().unwrap().len(), 64);

    let (s, _) = call(&app, "POST", &uri, Some(json!({"corrections": [{"unit": 6, "label": 0}], "revision": 0}))).await;
    assert_eq!(s, StatusCode::CONFLICT);

    for bad in [
        json!({"corrections": [{"unit": 64, "label": 0}]}),
        json!({"corrections": [{"unit": 1, "label": 9}]}),
        json!({"corrections": [{"unit": 1, "value": [1.0]}]}),
        json!({"corrections": [{"unit": 1}]}),
        json!({"corrections": "none"}),
    ] {
        let (s, _) = call(&app, "POST", &uri, Some(bad.clone())).await;
        assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY, "{bad}");
    }

    let (s, state) = json_call(&app, "GET", &format!("/sessions/{id}/state"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(state["revision"], 1);
    assert_eq!(state["corrected_units"], json!([5]));

    let (s, _) = call(&app, "GET", "/sessions/nope/state", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call(&app, "POST", "/sessions/nope/corrections", Some(json!({"corrections": []}))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn correcting_every_unit_echoes_the_corrections() {
    let app = app();
    let (id, _) = new_session(&app).await;
    let corrections: Vec<Value> = (0..64).map(|u| json!({"unit": u, "label": (u * 3) % 4})).collect();
    let (s, v) = json_call(&app, "POST", &format!("/sessions/{id}/corrections"), Some(json!({"corrections": corrections}))).await;
    assert_eq!(s, StatusCode::OK);
    for (u, val) in values(&v).iter().enumerate() {
        let mut want = vec![0.0; 4];
        want[(u * 3) % 4] = 1.0;
        assert_eq!(val, &want);
    }
}

#[tokio::test]
async fn attention_rows_and_read_stability() {
    let app = app();
    let (id, _) = new_session(&app).await;
    let (s, v) = json_call(&app, "GET", &format!("/sessions/{id}/attention?unit=3"), None).await;
    assert_eq!(s, StatusCode::OK);
    let w: Vec<f64> = serde_json::from_value(v["weights"].clone()).unwrap();
    assert_eq!(w.len(), 64);
    assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);

    for q in ["unit=64", "unit=x", ""] {
        let (s, _) = call(&app, "GET", &format!("/sessions/{id}/attention?{q}"), None).await;
        assert_eq!(s, StatusCode::BAD_REQUEST, "{q}");
    }

    let (_, a) = call(&app, "GET", &format!("/sessions/{id}/state"), None).await;
    let (_, b) = call(&app, "GET", &format!("/sessions/{id}/state"), None).await;
    assert_eq!(a, b);
}

#[tokio::test]
async fn one_correction_pulls_cluster_mates() {
    let scene = synth_scene(&SPEC).unwrap();
    let bad = scene.corrupted_cluster;
    let members: Vec<usize> = (0..SPEC.n).filter(|&i| scene.labels[i] == bad).collect();
    let target = members[0];
    let app = app();
    let (id, created) = new_session(&app).await;
    let before = values(&created);
    let (s, v) = json_call(
        &app,
        "POST",
        &format!("/sessions/{id}/corrections"),
        Some(json!({"corrections": [{"unit": target, "label": bad}]})),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    let after = values(&v);
    let proto = &scene.prototypes[bad];
    let closer = members[1..]
        .iter()
        .filter(|&&i| sq(&after[i], proto) < sq(&before[i], proto))
        .count();
    assert_eq!(closer, members.len() - 1, "{closer} of {}", members.len() - 1);

    let fresh = app_with_session().await;
    let mass = |w: &[f64]| members.iter().map(|&k| w[k]).sum::<f64>();
    let mut gained = 0;
    for &i in &members[1..] {
        let (_, att) = json_call(&app, "GET", &format!("/sessions/{id}/attention?unit={i}"), None).await;
        let w_after: Vec<f64> = serde_json::from_value(att["weights"].clone()).unwrap();
        let (_, att0) = json_call(&fresh.0, "GET", &format!("/sessions/{}/attention?unit={i}", fresh.1), None).await;
        let w_before: Vec<f64> = serde_json::from_value(att0["weights"].clone()).unwrap();
        gained += (mass(&w_after) > mass(&w_before)) as usize;
    }
    assert_eq!(gained, members.len() - 1, "{gained} of {}", members.len() - 1);
}

async fn app_with_session() -> (Router, String) {
    let app = app();
    let (id, _) = new_session(&app).await;
    (app, id)
}

#[tokio::test]
async fn replay_gives_identical_state_documents() {
    let batches = [
        json!({"corrections": [{"unit": 2, "label": 1}]}),
        json!({"corrections": [{"unit": 40, "label": 3}, {"unit": 20, "label": 2}], "sweeps": 3}),
    ];
    let mut docs = Vec::new();
    for _ in 0..2 {
        let app = app();
        let (id, _) = new_session(&app).await;
        for b in &batches {
            let (s, _) = call(&app, "POST", &format!("/sessions/{id}/corrections"), Some(b.clone())).await;
            assert_eq!(s, StatusCode::OK);
        }
        docs.push(call(&app, "GET", &format!("/sessions/{id}/state"), None).await.1);
    }
    assert_eq!(docs[0], docs[1]);
}

#[tokio::test]
async fn snapshots_persist_and_restore() {
    let dir = tempfile::tempdir().unwrap();
    let state = Arc::new(AppState::new(None, Some(dir.path().to_path_buf())));
    let app = router(state);
    let (id, _) = new_session(&app).await;
    let (s, _) = call(&app, "POST", &format!("/sessions/{id}/corrections"), Some(json!({"corrections": [{"unit": 9, "label": 2}]}))).await;
    assert_eq!(s, StatusCode::OK);
    let (_, want) = call(&app, "GET", &format!("/sessions/{id}/state"), None).await;

    let restored = AppState::new(None, Some(dir.path().to_path_buf()));
    assert_eq!(restored.load_snapshots().unwrap(), 1);
    let app = router(Arc::new(restored));
    let (s, got) = call(&app, "GET", &format!("/sessions/{id}/state"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(got, want);
}

#[tokio::test]
async fn concurrent_readers_see_whole_revisions() {
    let app = app();
    let (id, _) = new_session(&app).await;
    let writer = {
        let app = app.clone();
        let id = id.clone();
        tokio::spawn(async move {
            for u in 0..4 {
                let body = json!({"corrections": [{"unit": u * 16, "label": u}]});
                let (s, _) = call(&app, "POST", &format!("/sessions/{id}/corrections"), Some(body)).await;
                assert_eq!(s, StatusCode::OK);
            }
        })
    };
    for _ in 0..20 {
        let (_, st) = json_call(&app, "GET", &format!("/sessions/{id}/state"), None).await;
        let rev = st["revision"].as_u64().unwrap() as usize;
        assert_eq!(st["corrected_units"].as_array().unwrap().len(), rev);
        tokio::task::yield_now().await;
    }
    writer.await.unwrap();
}

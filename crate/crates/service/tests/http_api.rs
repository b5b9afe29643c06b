use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use futures::StreamExt;
use nalgebra::DVector;
use prefctl_core::controller::{run_closed_loop, ControllerConfig};
use prefctl_core::harness::builtin;
use prefctl_core::preference::{LatentUtility, LinkFunction, PreferenceOracle};
use prefctl_service::{router, ServiceConfig, SessionManager};
use serde_json::{json, Value};
use tower::ServiceExt;

fn app() -> Router {
    router(Arc::new(SessionManager::new(ServiceConfig::default())))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or(Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    (status, value)
}

async fn create(app: &Router, body: Value) -> String {
    let (status, v) = call(app, "POST", "/sessions", Some(body)).await;
    assert_eq!(status, StatusCode::CREATED, "{v}");
    v["session_id"].as_str().unwrap().to_string()
}

fn vec_of(v: &Value) -> DVector<f64> {
    DVector::from_vec(v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect())
}

fn c01_utility() -> LatentUtility {
    LatentUtility::quadratic(DVector::from_vec(vec![100.0, 100.0]))
}

/// Answers every prompt of a session with a Bradley-Terry policy computed
/// from the observables alone. Returns the logged `u` rows.
async fn drive_scripted(app: &Router, id: &str, seed: u64, link: LinkFunction) -> Vec<Vec<f64>> {
    let phi = c01_utility();
    let mut oracle = PreferenceOracle::new(link, phi.clone(), seed);
    loop {
        let (status, p) = call(app, "GET", &format!("/sessions/{id}/prompt"), None).await;
        if status == StatusCode::GONE {
            break;
        }
        assert_eq!(status, StatusCode::OK, "{p}");
        let cur = phi
            .evaluate(&vec_of(&p["current"]["state"]), &vec_of(&p["current"]["input"]))
            .unwrap();
        let prev = phi
            .evaluate(&vec_of(&p["previous"]["state"]), &vec_of(&p["previous"]["input"]))
            .unwrap();
        let choice = match oracle.sample_preference(cur, prev).unwrap() {
            prefctl_core::preference::Feedback::Current => "current",
            prefctl_core::preference::Feedback::Previous => "previous",
        };
        let (status, ack) = call(
            app,
            "POST",
            &format!("/sessions/{id}/feedback"),
            Some(json!({ "step": p["step"], "choice": choice })),
        )
        .await;
        assert_eq!(status, StatusCode::OK, "{ack}");
    }
    let (_, log) = call(app, "GET", &format!("/sessions/{id}/log"), None).await;
    log["rows"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| vec_of(&r["u"]).as_slice().to_vec())
        .collect()
}

#[tokio::test]
async fn status_codes() {
    let app = app();
    let (s, _) = call(&app, "GET", "/sessions/nope/prompt", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call(&app, "GET", "/sessions/nope/log", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call(&app, "POST", "/sessions/nope/feedback", Some(json!({"step": 1, "choice": "current"}))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call(&app, "POST", "/sessions", Some(json!({"preset": "thermostat"}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call(&app, "POST", "/sessions", Some(json!({"preset": "thermal", "colour": 1}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    let id = create(&app, json!({"preset": "quadratic-c01", "horizon": 3})).await;
    let fb = format!("/sessions/{id}/feedback");
    for bad in [json!({"step": 1, "choice": "left"}), json!({"step": "one", "choice": "current"}), json!([])] {
        let (s, _) = call(&app, "POST", &fb, Some(bad)).await;
        assert_eq!(s, StatusCode::BAD_REQUEST);
    }
    let (s, _) = call(&app, "POST", &fb, Some(json!({"step": 2, "choice": "current"}))).await;
    assert_eq!(s, StatusCode::CONFLICT);
    let (s, ack) = call(&app, "POST", &fb, Some(json!({"step": 1, "choice": "current"}))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(ack["next_step"], 2);
    assert_eq!(ack["status"], "awaiting-feedback");
    let (s, _) = call(&app, "POST", &fb, Some(json!({"step": 1, "choice": "current"}))).await;
    assert_eq!(s, StatusCode::CONFLICT);
    let (s, ack) = call(&app, "POST", &fb, Some(json!({"step": 2, "choice": "previous"}))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(ack["status"], "finished");
    assert_eq!(ack["next_step"], Value::Null);
    let (s, _) = call(&app, "GET", &format!("/sessions/{id}/prompt"), None).await;
    assert_eq!(s, StatusCode::GONE);
    let (s, _) = call(&app, "POST", &fb, Some(json!({"step": 3, "choice": "previous"}))).await;
    assert_eq!(s, StatusCode::GONE);
    let (s, log) = call(&app, "GET", &format!("/sessions/{id}/log"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(log["rows"].as_array().unwrap().len(), 3);
}

#[tokio::test]
async fn payloads_hide_the_utility() {
    let app = app();
    let id = create(&app, json!({"preset": "thermal", "horizon": 5})).await;
    let (_, p1) = call(&app, "GET", &format!("/sessions/{id}/prompt"), None).await;
    let (_, p2) = call(&app, "GET", &format!("/sessions/{id}/prompt"), None).await;
    assert_eq!(p1, p2);
    assert_eq!(p1["step"], 1);
    assert_eq!(p1["deadline_policy"], "wait-for-answer");
    let t = p1["current"]["indoor_temperature_c"].as_f64().unwrap();
    assert!((5.0..40.0).contains(&t));
    assert_eq!(p1["current"].as_object().unwrap().len(), 1);
    call(&app, "POST", &format!("/sessions/{id}/feedback"), Some(json!({"step": 1, "choice": "current"}))).await;
    let (_, log) = call(&app, "GET", &format!("/sessions/{id}/log"), None).await;
    for text in [p1.to_string(), log.to_string()] {
        for hidden in ["utility", "u_star", "dist_to_opt", "lyapunov"] {
            assert!(!text.contains(hidden), "{hidden} in {text}");
        }
    }
    assert_eq!(log["safety_box"]["lower"], json!([0.0]));
}

#[tokio::test]
async fn scripted_client_reproduces_the_simulator() {
    // Same seed for v and for the policy: the session must follow the
    // headless closed loop exactly.
    let app = app();
    let seed = 21;
    let horizon = 150;
    let id = create(
        &app,
        json!({"preset": "quadratic-c01", "horizon": horizon, "seed": seed, "disable_safety_box": true}),
    )
    .await;
    let session_u = drive_scripted(&app, &id, seed, LinkFunction::Logistic).await;

    let exp = builtin("quadratic-c01").unwrap().resolve(None).unwrap();
    let config = ControllerConfig {
        horizon,
        ..exp.config.controller.clone()
    };
    let mut oracle = PreferenceOracle::new(LinkFunction::Logistic, c01_utility(), seed);
    let sim = run_closed_loop(&exp.plant, &mut oracle, &config, Some(exp.x0.clone()), seed).unwrap();
    let sim_u: Vec<Vec<f64>> = sim.rows.iter().map(|r| r.u.as_slice().to_vec()).collect();
    assert_eq!(session_u.len(), horizon);
    assert_eq!(session_u, sim_u);
}

#[tokio::test]
async fn replayed_answers_give_an_identical_log() {
    let app = app();
    let body = json!({"preset": "quadratic-c07", "horizon": 40, "seed": 5});
    let a = create(&app, body.clone()).await;
    drive_scripted(&app, &a, 99, LinkFunction::Logistic).await;
    let (_, log_a) = call(&app, "GET", &format!("/sessions/{a}/log"), None).await;
    let b = create(&app, body).await;
    for row in log_a["rows"].as_array().unwrap().iter().skip(1) {
        let (s, _) = call(
            &app,
            "POST",
            &format!("/sessions/{b}/feedback"),
            Some(json!({"step": row["k"], "choice": row["choice"]})),
        )
        .await;
        assert_eq!(s, StatusCode::OK);
    }
    let (_, mut log_b) = call(&app, "GET", &format!("/sessions/{b}/log"), None).await;
    log_b["session_id"] = log_a["session_id"].clone();
    assert_eq!(log_a.to_string(), log_b.to_string());
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v.sqrt())
}

#[tokio::test]
async fn twenty_scripted_sessions_match_the_ensemble() {
    // Independent seeds on both sides; the box stays on for the sessions.
    let app = app();
    let horizon = 800;
    let exp = builtin("quadratic-c01").unwrap().resolve(None).unwrap();
    let u_star = exp.u_star.clone().unwrap();
    let mut session_err = Vec::new();
    for s in 0..20u64 {
        let id = create(&app, json!({"preset": "quadratic-c01", "horizon": horizon, "seed": 1000 + s})).await;
        let u = drive_scripted(&app, &id, 1000 + s, LinkFunction::Logistic).await;
        session_err.push((DVector::from_vec(u.last().unwrap().clone()) - &u_star).norm());
    }
    let config = ControllerConfig {
        horizon,
        ..exp.config.controller.clone()
    };
    let sim_err: Vec<f64> = (0..20u64)
        .map(|s| {
            let mut oracle = PreferenceOracle::new(LinkFunction::Logistic, c01_utility(), s);
            let rec = run_closed_loop(&exp.plant, &mut oracle, &config, Some(exp.x0.clone()), s).unwrap();
            (&rec.rows.last().unwrap().u - &u_star).norm()
        })
        .collect();
    let (ms, ss) = mean_std(&session_err);
    let (mh, sh) = mean_std(&sim_err);
    let se = (ss * ss / 20.0 + sh * sh / 20.0).sqrt();
    assert!((ms - mh).abs() <= 4.0 * se, "session {ms} +- {ss}, simulator {mh} +- {sh}");
}

#[tokio::test]
async fn duplicate_clicks_update_once() {
    let app = app();
    let id = create(&app, json!({"preset": "quadratic-c01", "horizon": 10})).await;
    let uri = format!("/sessions/{id}/feedback");
    let body = json!({"step": 1, "choice": "current"});
    let tasks: Vec<_> = (0..8)
        .map(|_| {
            let (app, uri, body) = (app.clone(), uri.clone(), body.clone());
            tokio::spawn(async move { call(&app, "POST", &uri, Some(body)).await.0 })
        })
        .collect();
    let mut codes = Vec::new();
    for t in tasks {
        codes.push(t.await.unwrap());
    }
    assert_eq!(codes.iter().filter(|c| **c == StatusCode::OK).count(), 1);
    assert_eq!(codes.iter().filter(|c| **c == StatusCode::CONFLICT).count(), 7);
    let (_, log) = call(&app, "GET", &format!("/sessions/{id}/log"), None).await;
    assert_eq!(log["rows"].as_array().unwrap().len(), 2);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn many_sessions_run_concurrently() {
    let app = app();
    let mut tasks = Vec::new();
    for s in 0..16u64 {
        let app = app.clone();
        tasks.push(tokio::spawn(async move {
            let id = create(&app, json!({"preset": "quadratic-c01", "horizon": 60, "seed": s})).await;
            drive_scripted(&app, &id, s, LinkFunction::Logistic).await.len()
        }));
    }
    for t in tasks {
        assert_eq!(t.await.unwrap(), 60);
    }
}

async fn spawn_server() -> std::net::SocketAddr {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(prefctl_service::serve(listener, ServiceConfig::default()));
    addr
}

type Ws = tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<tokio::net::TcpStream>>;

async fn next_row(ws: &mut Ws) -> Option<Value> {
    loop {
        match tokio::time::timeout(std::time::Duration::from_secs(5), ws.next()).await.ok()?? {
            Ok(tokio_tungstenite::tungstenite::Message::Text(t)) => return Some(serde_json::from_str(&t).unwrap()),
            Ok(tokio_tungstenite::tungstenite::Message::Close(_)) | Err(_) => return None,
            Ok(_) => {}
        }
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn websocket_streams_rows() {
    let addr = spawn_server().await;
    let http = |method: &'static str, path: String, body: Option<Value>| async move {
        // A raw HTTP/1.1 exchange keeps the dev-dependencies small.
        use tokio::io::{AsyncReadExt, AsyncWriteExt};
        let mut s = tokio::net::TcpStream::connect(addr).await.unwrap();
        let payload = body.map(|b| b.to_string()).unwrap_or_default();
        let req = format!(
            "{method} {path} HTTP/1.1\r\nhost: x\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{payload}",
            payload.len()
        );
        s.write_all(req.as_bytes()).await.unwrap();
        let mut out = String::new();
        s.read_to_string(&mut out).await.unwrap();
        let body = out.split("\r\n\r\n").nth(1).unwrap_or("").to_string();
        serde_json::from_str::<Value>(&body).unwrap_or(Value::Null)
    };
    let created = http("POST", "/sessions".into(), Some(json!({"preset": "quadratic-c01", "horizon": 4}))).await;
    let id = created["session_id"].as_str().unwrap().to_string();
    let url = format!("ws://{addr}/sessions/{id}/stream");

    let (mut live, _) = tokio_tungstenite::connect_async(&url).await.unwrap();
    assert_eq!(next_row(&mut live).await.unwrap()["k"], 0);
    http("POST", format!("/sessions/{id}/feedback"), Some(json!({"step": 1, "choice": "current"}))).await;
    let row = next_row(&mut live).await.unwrap();
    assert_eq!((row["k"].clone(), row["choice"].clone()), (json!(1), json!("current")));

    // Late subscriber: replay then live.
    let (mut late, _) = tokio_tungstenite::connect_async(&url).await.unwrap();
    assert_eq!(next_row(&mut late).await.unwrap()["k"], 0);
    assert_eq!(next_row(&mut late).await.unwrap()["k"], 1);
    let (mut partial, _) = tokio_tungstenite::connect_async(format!("{url}?from=1")).await.unwrap();
    assert_eq!(next_row(&mut partial).await.unwrap()["k"], 1);

    for k in 2..4 {
        http("POST", format!("/sessions/{id}/feedback"), Some(json!({"step": k, "choice": "previous"}))).await;
    }
    for ws in [&mut live, &mut late] {
        assert_eq!(next_row(ws).await.unwrap()["k"], 2);
        assert_eq!(next_row(ws).await.unwrap()["k"], 3);
        assert!(next_row(ws).await.is_none(), "stream closes after the last row");
    }

    let (mut finished, _) = tokio_tungstenite::connect_async(&url).await.unwrap();
    let mut ks = Vec::new();
    while let Some(r) = next_row(&mut finished).await {
        ks.push(r["k"].as_u64().unwrap());
    }
    assert_eq!(ks, vec![0, 1, 2, 3]);
    assert!(tokio_tungstenite::connect_async(format!("ws://{addr}/sessions/none/stream")).await.is_err());
}

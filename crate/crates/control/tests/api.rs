mod common;

use axum::http::{Method, StatusCode};
use common::{residue, sse_events, TestLab};
use cube_core::engine::{Fault, LogChannel};
use serde_json::{json, Value};

const STACK: &str = "srsran-open5gs-5gsa";

fn code(v: &Value) -> &str {
    v["code"].as_str().unwrap_or_default()
}

async fn start_and_settle(lab: &TestLab, stack: &str) -> String {
    let (status, body) = lab.call(Method::POST, &format!("/api/stacks/{stack}/start"), None).await;
    assert_eq!(status, StatusCode::ACCEPTED, "{body}");
    lab.settle().await;
    body["session"].as_str().unwrap().to_string()
}

#[tokio::test]
async fn catalog_lists_every_stack() {
    let lab = TestLab::new();
    let (status, body) = lab.call(Method::GET, "/api/stacks", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["stacks"].as_array().unwrap().len(), 8);
    assert_eq!(body["findings"], json!([]));
}

#[tokio::test]
async fn stack_detail_carries_manifest_and_report() {
    let lab = TestLab::new();
    let (status, body) = lab.call(Method::GET, &format!("/api/stacks/{STACK}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["manifest"]["name"], STACK);
    assert_eq!(body["valid"], true);
    assert_eq!(body["findings"], json!([]));

    let (status, body) = lab.call(Method::GET, "/api/stacks/no-such-stack", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(code(&body), "UNKNOWN_STACK");
    assert_eq!(body["http_status"], 404);
}

#[tokio::test]
async fn start_reaches_green_then_stop_cleans_up() {
    let lab = TestLab::new();
    let (status, body) = lab.call(Method::GET, "/api/status", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["aggregate"], "GRAY");

    let id = start_and_settle(&lab, STACK).await;
    let (_, body) = lab.call(Method::GET, "/api/status", None).await;
    assert_eq!(body["aggregate"], "YELLOW");
    assert_eq!(body["session"], id.as_str());

    lab.world.tick();
    let (_, body) = lab.call(Method::GET, "/api/status", None).await;
    assert_eq!(body["aggregate"], "GREEN", "{body}");
    assert_eq!(body["per_service"].as_array().unwrap().len(), 8);

    let (status, session) = lab.call(Method::GET, &format!("/api/sessions/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(session["state"], "RUNNING");

    let (status, body) = lab.call(Method::POST, &format!("/api/stacks/{STACK}/stop"), None).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    assert_eq!(body["session"], id.as_str());
    lab.settle().await;
    assert_eq!(residue(&lab.world, STACK), (0, 0));

    let (_, body) = lab.call(Method::GET, "/api/status", None).await;
    assert_eq!(body["aggregate"], "GRAY");
    let (_, session) = lab.call(Method::GET, &format!("/api/sessions/{id}"), None).await;
    assert_eq!(session["state"], "STOPPED");
}

#[tokio::test]
async fn accepted_start_is_visible_before_it_finishes() {
    let lab = TestLab::new();
    let (status, body) = lab.call(Method::POST, &format!("/api/stacks/{STACK}/start"), None).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    assert_eq!(body["state"], "STARTING");
    let id = body["session"].as_str().unwrap();
    // Whether or not the worker is done, the session is already known.
    let (status, session) = lab.call(Method::GET, &format!("/api/sessions/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert!(matches!(session["state"].as_str(), Some("STARTING" | "RUNNING")));
}

#[tokio::test]
async fn second_start_conflicts_unless_replacing() {
    let lab = TestLab::new();
    let first = start_and_settle(&lab, STACK).await;

    let (status, body) = lab.call(Method::POST, "/api/stacks/srsran-free5gc-5gsa/start", None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(code(&body), "STACK_ALREADY_ACTIVE");

    let (status, body) = lab
        .call(
            Method::POST,
            "/api/stacks/srsran-free5gc-5gsa/start",
            Some(r#"{"policy": "REPLACE", "wait": true}"#),
        )
        .await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["state"], "RUNNING");
    assert_eq!(residue(&lab.world, STACK), (0, 0));
    let (_, old) = lab.call(Method::GET, &format!("/api/sessions/{first}"), None).await;
    assert_eq!(old["state"], "STOPPED");
}

#[tokio::test]
async fn stop_without_session_conflicts() {
    let lab = TestLab::new();
    let (status, body) = lab.call(Method::POST, &format!("/api/stacks/{STACK}/stop"), None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(code(&body), "NO_ACTIVE_SESSION");

    let (status, body) = lab.call(Method::POST, "/api/stacks/nope/stop", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(code(&body), "UNKNOWN_STACK");
}

#[tokio::test]
async fn unknown_session_and_route() {
    let lab = TestLab::new();
    let (status, body) = lab.call(Method::GET, "/api/sessions/sess-999999", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(code(&body), "UNKNOWN_SESSION");

    let (status, body) = lab.call(Method::GET, "/api/nothing-here", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(code(&body), "NOT_FOUND");
}

#[tokio::test]
async fn malformed_requests_are_bad_requests() {
    let lab = TestLab::new();
    for body in [r#"{"policy": "SOMETIMES"}"#, "{not json", r#"{"surprise": 1}"#] {
        let (status, resp) = lab.call(Method::POST, &format!("/api/stacks/{STACK}/start"), Some(body)).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{body}");
        assert_eq!(code(&resp), "BAD_REQUEST");
    }
    let (status, resp) = lab.call(Method::GET, "/api/logs?follow=perhaps", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(code(&resp), "BAD_REQUEST");
    let (status, resp) = lab.call(Method::PUT, "/api/settings", Some(r#"{"settings": {"lower": "x"}}"#)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(code(&resp), "BAD_REQUEST");
}

#[tokio::test]
async fn emulated_start_of_a_4g_stack_is_a_validation_failure() {
    let lab = TestLab::new();
    let (status, body) = lab
        .call(
            Method::POST,
            "/api/stacks/srsran-open5gs-volte/start",
            Some(r#"{"emulated": true}"#),
        )
        .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(code(&body), "VALIDATION_FAILED");
    assert_eq!(body["findings"][0]["code"], "EMULATION_UNSUPPORTED");
}

#[tokio::test]
async fn engine_failure_is_reported_when_waiting() {
    let lab = TestLab::new();
    lab.world.inject(Fault::FailAction {
        host: "controller".into(),
        op: "START_CONTAINER".into(),
        container: None,
    });
    let (status, body) = lab
        .call(Method::POST, "/api/stacks/srsran-open5gs-5gsa/start", Some(r#"{"wait": true}"#))
        .await;
    assert_eq!(status, StatusCode::BAD_GATEWAY, "{body}");
    assert_eq!(code(&body), "ENGINE_FAILURE");

    // The failed session holds the lab until it is stopped.
    let (_, settings) = lab.call(Method::GET, "/api/settings", None).await;
    assert_eq!(settings["locked"], true);
    let (status, report) = lab
        .call(Method::POST, &format!("/api/stacks/{STACK}/stop?wait=true"), None)
        .await;
    assert_eq!(status, StatusCode::OK, "{report}");
    assert_eq!(residue(&lab.world, STACK), (0, 0));
}

#[tokio::test]
async fn missing_catalog_is_internal() {
    let lab = TestLab::new();
    std::fs::remove_dir_all(lab.catalog().join("stacks")).unwrap();
    let (status, body) = lab.call(Method::GET, "/api/stacks", None).await;
    assert_eq!(status, StatusCode::INTERNAL_SERVER_ERROR);
    assert_eq!(code(&body), "INTERNAL");
}

#[tokio::test]
async fn settings_round_trip_and_lock() {
    let lab = TestLab::new();
    let (status, body) = lab.call(Method::GET, "/api/settings", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["locked"], false);
    assert_eq!(body["settings"]["MCC"], "001");

    let mut edited = body["settings"].clone();
    edited["TAC"] = json!("7");
    let put = json!({ "settings": edited }).to_string();
    let (status, body) = lab.call(Method::PUT, "/api/settings", Some(&put)).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["settings"]["TAC"], "7");
    let on_disk = std::fs::read_to_string(lab.catalog().join("settings/global.env")).unwrap();
    assert!(on_disk.lines().any(|l| l == "TAC=7"), "{on_disk}");

    let mut bad = edited.clone();
    bad["MCC"] = json!("0011");
    let (status, body) = lab
        .call(Method::PUT, "/api/settings", Some(&json!({ "settings": bad }).to_string()))
        .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(code(&body), "VALIDATION_FAILED");
    assert_eq!(body["findings"][0]["subject"], "MCC");

    start_and_settle(&lab, STACK).await;
    let (_, body) = lab.call(Method::GET, "/api/settings", None).await;
    assert_eq!(body["locked"], true);
    let (status, body) = lab.call(Method::PUT, "/api/settings", Some(&put)).await;
    assert_eq!(status, StatusCode::LOCKED);
    assert_eq!(code(&body), "SETTINGS_LOCKED");
}

#[tokio::test]
async fn logs_stream_as_server_sent_events() {
    let lab = TestLab::new();
    lab.world.set_boot_logs(false);

    let (status, body) = lab.call(Method::GET, "/api/logs", None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(code(&body), "NO_ACTIVE_SESSION");

    start_and_settle(&lab, STACK).await;
    lab.world.tick();
    let amf = format!("{STACK}-amf");
    let smf = format!("{STACK}-smf");
    let lines: Vec<String> = (0..100).map(|i| format!("line {i}")).collect();
    lab.world
        .script_logs("controller", &amf, lines.iter().map(|l| (LogChannel::Out, l.clone())))
        .unwrap();
    lab.world.script_logs("controller", &smf, [(LogChannel::Err, "smf says hi")]).unwrap();

    let (status, text) = lab.call_text(Method::GET, "/api/logs?service=amf", None).await;
    assert_eq!(status, StatusCode::OK);
    let events = sse_events(&text);
    assert_eq!(events.len(), 100);
    for (i, (name, data)) in events.iter().enumerate() {
        assert_eq!(name, "log");
        let keys: Vec<&str> = data.as_object().unwrap().keys().map(String::as_str).collect();
        let mut keys = keys;
        keys.sort_unstable();
        assert_eq!(keys, ["channel", "color", "line", "service", "ts"]);
        assert_eq!(data["line"], lines[i].as_str());
        assert_eq!(data["color"], "GREEN");
        assert_eq!(data["channel"], "out");
    }

    let (_, text) = lab.call_text(Method::GET, "/api/logs?service=amf,smf", None).await;
    let events = sse_events(&text);
    assert_eq!(events.len(), 101);
    assert!(events.iter().any(|(_, d)| d["service"] == "smf" && d["channel"] == "err"));

    let (status, body) = lab.call(Method::GET, "/api/logs?service=amf,bogus", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(code(&body), "UNKNOWN_SERVICE");
}

#[tokio::test]
async fn followed_logs_end_when_the_container_exits() {
    let lab = TestLab::new();
    lab.world.set_boot_logs(false);
    start_and_settle(&lab, STACK).await;
    lab.world.tick();
    let amf = format!("{STACK}-amf");
    lab.world.script_logs("controller", &amf, [(LogChannel::Out, "before")]).unwrap();

    let request = {
        let app = lab.app.clone();
        tokio::spawn(async move {
            use axum::body::Body;
            use http_body_util::BodyExt;
            use tower::ServiceExt;
            let req = axum::http::Request::get("/api/logs?service=amf&follow=true")
                .body(Body::empty())
                .unwrap();
            let resp = app.oneshot(req).await.unwrap();
            let bytes = resp.into_body().collect().await.unwrap().to_bytes();
            String::from_utf8(bytes.to_vec()).unwrap()
        })
    };
    tokio::time::sleep(std::time::Duration::from_millis(100)).await;
    lab.world.script_logs("controller", &amf, [(LogChannel::Out, "after")]).unwrap();
    lab.world.exit_container("controller", &amf, 1).unwrap();
    let text = tokio::time::timeout(std::time::Duration::from_secs(5), request)
        .await
        .expect("stream ends")
        .unwrap();
    let events = sse_events(&text);
    let names: Vec<&str> = events.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names.last(), Some(&"end"), "{text}");
    let lines: Vec<&str> = events.iter().filter_map(|(_, d)| d["line"].as_str()).collect();
    assert_eq!(lines, ["before", "after"]);
    assert_eq!(events.last().unwrap().1["service"], "amf");
}

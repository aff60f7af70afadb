#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use cube_control::{router, LabService};
use cube_core::engine::SimWorld;
use cube_core::lab::{default_catalog_root, LabConfig, LabPaths};
use cube_core::orchestrator::Controller;
use http_body_util::BodyExt;
use serde_json::Value;
use tempfile::TempDir;
use tower::ServiceExt;

/// A private copy of the shipped catalog, a fresh simulated world and the
/// API serving them.
pub struct TestLab {
    pub dir: TempDir,
    pub world: Arc<SimWorld>,
    pub service: LabService,
    pub app: Router,
}

pub fn copy_dir(from: &Path, to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    for entry in std::fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        let target = to.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            copy_dir(&entry.path(), &target);
        } else {
            std::fs::copy(entry.path(), &target).unwrap();
        }
    }
}

impl TestLab {
    pub fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        copy_dir(&default_catalog_root(), &dir.path().join("catalog"));
        let lab = LabConfig::load(&LabPaths::new(dir.path().join("catalog"))).unwrap();
        let world = Arc::new(SimWorld::for_registry(&lab.hosts));
        let service = LabService::new(Controller::new(lab, world.clone()));
        let app = router(service.clone());
        Self {
            dir,
            world,
            service,
            app,
        }
    }

    pub fn catalog(&self) -> PathBuf {
        self.dir.path().join("catalog")
    }

    pub async fn call(&self, method: Method, uri: &str, body: Option<&str>) -> (StatusCode, Value) {
        let (status, text) = self.call_text(method, uri, body).await;
        let value = if text.is_empty() {
            Value::Null
        } else {
            serde_json::from_str(&text).unwrap_or_else(|e| panic!("{uri}: {e}: {text}"))
        };
        (status, value)
    }

    pub async fn call_text(&self, method: Method, uri: &str, body: Option<&str>) -> (StatusCode, String) {
        let mut req = Request::builder().method(method).uri(uri);
        if body.is_some() {
            req = req.header("content-type", "application/json");
        }
        let req = req.body(Body::from(body.unwrap_or("").to_string())).unwrap();
        let resp = self.app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        (status, String::from_utf8(bytes.to_vec()).unwrap())
    }

    /// Waits for queued lifecycle commands to finish.
    pub async fn settle(&self) {
        self.service.flush().await.unwrap();
    }
}

/// Containers and networks of `stack` across every simulated host.
pub fn residue(world: &SimWorld, stack: &str) -> (usize, usize) {
    let mut containers = 0;
    let mut networks = 0;
    for host in world.hosts() {
        let h = world.host_state(&host).unwrap();
        containers += h.containers.values().filter(|c| c.descriptor.stack == stack).count();
        networks += h.networks.values().filter(|n| n.stack == stack).count();
    }
    (containers, networks)
}

/// `(event, data)` pairs of a server-sent event body.
pub fn sse_events(body: &str) -> Vec<(String, Value)> {
    let mut events = Vec::new();
    for block in body.split("\n\n") {
        let mut name = None;
        let mut data = String::new();
        for line in block.lines() {
            if let Some(v) = line.strip_prefix("event:") {
                name = Some(v.trim().to_string());
            } else if let Some(v) = line.strip_prefix("data:") {
                data.push_str(v.trim_start());
            }
        }
        if let Some(name) = name {
            events.push((name, serde_json::from_str(&data).unwrap()));
        }
    }
    events
}

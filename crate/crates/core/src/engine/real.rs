//! Engine backed by a real container engine (`unix://` or `tcp://`
//! endpoints) and `ssh`/`scp` for remote channels (`ssh://` endpoints).

use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde_json::{json, Value};

use super::docker::{self, DockerConfig, DockerRequest};
use super::http::{self, Transport};
use super::ssh::{self, SshTarget};
use super::{ContainerEngine, ContainerStatus, EngineAction, EngineError, LogEvent, LogItem, LogStream, NetworkState, Timestamp};
use crate::hosts::EngineEndpoint;

#[derive(Debug)]
pub struct RealEngine {
    pub docker: DockerConfig,
    pub timeout: Duration,
    staging: AtomicU64,
}

impl Default for RealEngine {
    fn default() -> Self {
        Self::new(DockerConfig::default())
    }
}

fn io_err(what: &str, e: std::io::Error) -> EngineError {
    EngineError::Unreachable(format!("{what}: {e}"))
}

fn transport(endpoint: &EngineEndpoint) -> Result<Transport, EngineError> {
    match endpoint.scheme() {
        "unix" => Ok(Transport::Unix(PathBuf::from(endpoint.location()))),
        "tcp" => Ok(Transport::Tcp(endpoint.location().to_string())),
        other => Err(EngineError::Unsupported(format!(
            "{} ({other}) is not a container engine endpoint",
            endpoint.address
        ))),
    }
}

impl RealEngine {
    pub fn new(docker: DockerConfig) -> Self {
        Self {
            docker,
            timeout: Duration::from_secs(30),
            staging: AtomicU64::new(0),
        }
    }

    fn call(&self, t: &Transport, req: &DockerRequest, what: &str) -> Result<Vec<u8>, EngineError> {
        let body = req.body.as_ref().map(|b| b.to_string().into_bytes());
        let resp = http::send(t, req.method, &req.path, body.as_deref(), self.timeout).map_err(|e| io_err(what, e))?;
        if resp.status >= 300 && resp.status != 304 {
            return Err(docker::map_error(resp.status, &resp.body, what));
        }
        Ok(resp.body)
    }

    fn get_json(&self, t: &Transport, path: String, what: &str) -> Result<Value, EngineError> {
        let req = DockerRequest {
            method: "GET",
            path: format!("/{}{path}", self.docker.api_version),
            body: None,
        };
        let body = self.call(t, &req, what)?;
        serde_json::from_slice(&body).map_err(|e| EngineError::Backend(format!("{what}: {e}")))
    }

    fn apply_docker(&self, endpoint: &EngineEndpoint, action: &EngineAction) -> Result<String, EngineError> {
        let t = transport(endpoint)?;
        let what = action.to_string();
        if let EngineAction::CreateContainer { container } = action {
            let dir = docker::config_dir(&self.docker, &container.stack, &container.service);
            for f in &container.files {
                let path = dir.join(&f.path);
                if let Some(parent) = path.parent() {
                    std::fs::create_dir_all(parent).map_err(|e| EngineError::TransferFailed(format!("{}: {e}", path.display())))?;
                }
                std::fs::write(&path, &f.content).map_err(|e| EngineError::TransferFailed(format!("{}: {e}", path.display())))?;
            }
        }
        let requests = docker::translate(action, &self.docker)?;
        let mut output = Vec::new();
        for req in &requests {
            output = self.call(&t, req, &what)?;
        }
        if let EngineAction::Exec { .. } = action {
            let created: Value = serde_json::from_slice(&output).map_err(|e| EngineError::Backend(e.to_string()))?;
            let id = created["Id"].as_str().ok_or_else(|| EngineError::Backend("exec without id".into()))?;
            let raw = self.call(&t, &docker::exec_start(&self.docker, id), &what)?;
            let (frames, _) = docker::decode_log_frames(&raw)?;
            let text: Vec<u8> = frames.into_iter().flat_map(|(_, b)| b).collect();
            let inspect = self.get_json(&t, format!("/exec/{id}/json"), &what)?;
            if inspect["ExitCode"].as_i64().unwrap_or(0) != 0 {
                return Err(EngineError::ExecFailed(String::from_utf8_lossy(&text).into_owned()));
            }
            return Ok(String::from_utf8_lossy(&text).into_owned());
        }
        Ok(String::new())
    }

    fn run(&self, program: &str, args: &[String]) -> Result<(), EngineError> {
        tracing::debug!(program, ?args, "remote channel");
        let out = Command::new(program)
            .args(args)
            .output()
            .map_err(|e| EngineError::Unreachable(format!("{program}: {e}")))?;
        if out.status.success() {
            Ok(())
        } else {
            Err(EngineError::Unreachable(format!(
                "{program} exited with {}: {}",
                out.status,
                String::from_utf8_lossy(&out.stderr).trim()
            )))
        }
    }

    fn stage(&self, name: &str, content: &str) -> Result<PathBuf, EngineError> {
        let n = self.staging.fetch_add(1, Ordering::Relaxed);
        let dir = std::env::temp_dir().join(format!("cube-stage-{}-{n}", std::process::id()));
        let path = dir.join(name.replace('/', "_"));
        std::fs::create_dir_all(&dir)
            .and_then(|_| std::fs::write(&path, content))
            .map_err(|e| EngineError::TransferFailed(format!("{name}: {e}")))?;
        Ok(path)
    }

    fn copy(&self, target: &SshTarget, local: &Path, remote: &str) -> Result<(), EngineError> {
        let parent = remote.rsplit_once('/').map_or(remote, |(p, _)| p);
        self.run("ssh", &ssh::ssh_args(target, &ssh::mkdir_command(parent)))?;
        self.run("scp", &ssh::scp_args(target, local, remote))
            .map_err(|e| EngineError::TransferFailed(format!("{remote}: {e}")))
    }

    fn apply_channel(&self, endpoint: &EngineEndpoint, action: &EngineAction) -> Result<String, EngineError> {
        let target = SshTarget::parse(endpoint.location())?;
        match action {
            EngineAction::TransferFiles { stack, files, .. } => {
                for f in files {
                    if !crate::settings::is_contained_relative(Path::new(&f.path)) {
                        return Err(EngineError::TransferFailed(f.path.clone()));
                    }
                    let local = self.stage(&f.path, &f.content)?;
                    self.copy(&target, &local, &format!("{}/{}", ssh::remote_dir(stack), f.path))?;
                }
                Ok(String::new())
            }
            EngineAction::RemoteComposeUp { stack, fragment, .. } => {
                let local = self.stage(&format!("{}.yaml", fragment.id), &fragment.document)?;
                self.copy(&target, &local, &ssh::fragment_path(stack, &fragment.id))?;
                self.run("ssh", &ssh::ssh_args(&target, &ssh::compose_up_command(stack, &fragment.id)))?;
                Ok(String::new())
            }
            other => Err(EngineError::Unsupported(format!("{} over a remote channel", other.kind()))),
        }
    }
}

fn label_filter(stack: Option<&str>) -> String {
    match stack {
        Some(s) => format!("&filters={}", http::query_escape(&json!({ "label": [format!("cube.stack={s}")] }).to_string())),
        None => String::new(),
    }
}

impl ContainerEngine for RealEngine {
    fn apply(&self, endpoint: &EngineEndpoint, action: &EngineAction) -> Result<String, EngineError> {
        match endpoint.scheme() {
            "ssh" => self.apply_channel(endpoint, action),
            _ => self.apply_docker(endpoint, action),
        }
    }

    fn query(&self, endpoint: &EngineEndpoint, stack: Option<&str>) -> Result<Vec<ContainerStatus>, EngineError> {
        let t = transport(endpoint)?;
        let list = self.get_json(&t, format!("/containers/json?all=1{}", label_filter(stack)), "list containers")?;
        docker::parse_container_list(&list, &endpoint.host)
    }

    fn networks(&self, endpoint: &EngineEndpoint, stack: Option<&str>) -> Result<Vec<NetworkState>, EngineError> {
        let t = transport(endpoint)?;
        let sep = label_filter(stack).replacen('&', "?", 1);
        let list = self.get_json(&t, format!("/networks{sep}"), "list networks")?;
        let mut nets = docker::parse_network_list(&list)?;
        if stack.is_none() {
            nets.retain(|n| n.stack.is_some());
        }
        Ok(nets)
    }

    fn logs(&self, endpoint: &EngineEndpoint, container: &str, follow: bool) -> Result<LogStream, EngineError> {
        let t = transport(endpoint)?;
        let info = self.get_json(&t, format!("/containers/{container}/json"), container)?;
        let service = info["Config"]["Labels"]["cube.service"].as_str().unwrap_or(container).to_string();
        let path = format!(
            "/{}/containers/{container}/logs?stdout=1&stderr=1&timestamps=1&follow={}",
            self.docker.api_version,
            u8::from(follow)
        );
        let (status, mut body) = http::open(&t, "GET", &path).map_err(|e| io_err(container, e))?;
        if status >= 300 {
            let mut buf = Vec::new();
            let _ = body.read_to_end(&mut buf);
            return Err(docker::map_error(status, &buf, container));
        }
        Ok(Box::new(FrameStream {
            body,
            buf: Vec::new(),
            ready: Default::default(),
            service,
            ended: false,
        }))
    }

    fn now(&self) -> Timestamp {
        SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
    }
}

struct FrameStream {
    body: Box<dyn Read + Send>,
    buf: Vec<u8>,
    ready: std::collections::VecDeque<LogItem>,
    service: String,
    ended: bool,
}

impl Iterator for FrameStream {
    type Item = LogItem;

    fn next(&mut self) -> Option<LogItem> {
        loop {
            if let Some(item) = self.ready.pop_front() {
                return Some(item);
            }
            if self.ended {
                return None;
            }
            let mut chunk = [0u8; 8192];
            match self.body.read(&mut chunk) {
                Ok(0) | Err(_) => {
                    self.ended = true;
                    self.ready.push_back(LogItem::End);
                }
                Ok(n) => {
                    self.buf.extend_from_slice(&chunk[..n]);
                    let Ok((frames, used)) = docker::decode_log_frames(&self.buf) else {
                        self.ended = true;
                        self.ready.push_back(LogItem::End);
                        continue;
                    };
                    self.buf.drain(..used);
                    for (channel, payload) in frames {
                        let text = String::from_utf8_lossy(&payload);
                        for line in text.lines() {
                            let (ts, msg) = docker::split_timestamp(line);
                            self.ready.push_back(LogItem::Event(LogEvent {
                                ts: ts.unwrap_or(0),
                                service: self.service.clone(),
                                line: msg.to_string(),
                                channel,
                            }));
                        }
                    }
                }
            }
        }
    }
}

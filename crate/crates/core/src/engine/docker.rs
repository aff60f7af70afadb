//! Translation between engine actions and the container engine's versioned
//! HTTP API.

use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use super::compose::{CONFIG_MOUNT, LABEL_ROLE, LABEL_SERVICE, LABEL_STACK};
use super::{ContainerState, ContainerStatus, EngineAction, EngineError, LogChannel, NetworkState, Timestamp, BRIDGE_NETWORK};
use crate::netplan::NetworkKind;

pub const API_VERSION: &str = "v1.43";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DockerConfig {
    pub api_version: String,
    /// Parent interface of macvlan networks; a VLAN id appends `.<id>`.
    pub trunk_interface: String,
    /// Host directory holding rendered configs, `<root>/<stack>/<service>/`.
    pub config_root: PathBuf,
}

impl Default for DockerConfig {
    fn default() -> Self {
        Self {
            api_version: API_VERSION.into(),
            trunk_interface: "trunk0".into(),
            config_root: PathBuf::from("/var/lib/cube/configs"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DockerRequest {
    pub method: &'static str,
    pub path: String,
    pub body: Option<Value>,
}

impl DockerRequest {
    fn new(cfg: &DockerConfig, method: &'static str, path: impl AsRef<str>, body: Option<Value>) -> Self {
        Self {
            method,
            path: format!("/{}{}", cfg.api_version, path.as_ref()),
            body,
        }
    }
}

pub fn config_dir(cfg: &DockerConfig, stack: &str, service: &str) -> PathBuf {
    cfg.config_root.join(stack).join(service)
}

fn bind(dir: &Path, file: &str) -> String {
    format!("{}:{CONFIG_MOUNT}/{file}:ro", dir.join(file).display())
}

/// Requests that carry out `action` on a local or TCP engine. `Exec` yields
/// only the exec-create request; its start call depends on the returned id.
pub fn translate(action: &EngineAction, cfg: &DockerConfig) -> Result<Vec<DockerRequest>, EngineError> {
    let req = |method, path: String, body| DockerRequest::new(cfg, method, path, body);
    Ok(match action {
        EngineAction::CreateNetwork { stack, network } => {
            let (driver, options, internal) = match network.kind {
                NetworkKind::MacvlanTrunk => {
                    let parent = match network.vlan_id {
                        Some(v) => format!("{}.{v}", cfg.trunk_interface),
                        None => cfg.trunk_interface.clone(),
                    };
                    ("macvlan", json!({ "parent": parent }), false)
                }
                NetworkKind::BridgeWan => ("bridge", json!({}), false),
                NetworkKind::Isolated => ("bridge", json!({}), true),
            };
            let mut ipam = json!({ "Subnet": network.subnet.to_string() });
            if let Some(gw) = network.gateway {
                ipam["Gateway"] = json!(gw.to_string());
            }
            vec![req(
                "POST",
                "/networks/create".into(),
                Some(json!({
                    "Name": network.name,
                    "Driver": driver,
                    "Internal": internal,
                    "Options": options,
                    "IPAM": { "Driver": "default", "Config": [ipam] },
                    "Labels": { LABEL_STACK: stack },
                })),
            )]
        }
        EngineAction::RemoveNetwork { network } => vec![req("DELETE", format!("/networks/{network}"), None)],
        EngineAction::CreateContainer { container: d } => {
            let dir = config_dir(cfg, &d.stack, &d.service);
            let binds: Vec<String> = d.files.iter().map(|f| bind(&dir, &f.path)).chain(
                d.data_volume.iter().map(|v| format!("{v}:/var/lib/cube/data")),
            ).collect();
            let mut body = json!({
                "Image": d.image,
                "Labels": {
                    LABEL_STACK: d.stack,
                    LABEL_SERVICE: d.service,
                    LABEL_ROLE: d.role.as_str(),
                },
                "HostConfig": { "Binds": binds, "NetworkMode": BRIDGE_NETWORK },
            });
            if let Some(cmd) = &d.command {
                body["Cmd"] = json!(["sh", "-c", cmd]);
            }
            // New containers start detached from every network, as in the
            // simulated engine.
            vec![
                req("POST", format!("/containers/create?name={}", d.name), Some(body)),
                req(
                    "POST",
                    format!("/networks/{BRIDGE_NETWORK}/disconnect"),
                    Some(json!({ "Container": d.name, "Force": true })),
                ),
            ]
        }
        EngineAction::ConnectNetwork {
            container,
            network,
            ip,
            mac,
        } => {
            let mut endpoint = json!({});
            if let Some(ip) = ip {
                endpoint["IPAMConfig"] = json!({ "IPv4Address": ip.to_string() });
            }
            if let Some(mac) = mac {
                endpoint["MacAddress"] = json!(mac.to_string());
            }
            vec![req(
                "POST",
                format!("/networks/{network}/connect"),
                Some(json!({ "Container": container, "EndpointConfig": endpoint })),
            )]
        }
        EngineAction::DisconnectNetwork { container, network } => vec![req(
            "POST",
            format!("/networks/{network}/disconnect"),
            Some(json!({ "Container": container, "Force": false })),
        )],
        EngineAction::StartContainer { container } => {
            vec![req("POST", format!("/containers/{container}/start"), None)]
        }
        EngineAction::StopContainer { container } => {
            vec![req("POST", format!("/containers/{container}/stop"), None)]
        }
        EngineAction::RemoveContainer { container } => {
            vec![req("DELETE", format!("/containers/{container}"), None)]
        }
        EngineAction::Exec { container, command } => vec![req(
            "POST",
            format!("/containers/{container}/exec"),
            Some(json!({ "Cmd": command, "AttachStdout": true, "AttachStderr": true })),
        )],
        EngineAction::TransferFiles { .. } | EngineAction::RemoteComposeUp { .. } => {
            return Err(EngineError::Unsupported(format!(
                "{} goes through the remote channel, not the engine API",
                action.kind()
            )))
        }
    })
}

pub fn exec_start(cfg: &DockerConfig, exec_id: &str) -> DockerRequest {
    DockerRequest::new(cfg, "POST", format!("/exec/{exec_id}/start"), Some(json!({ "Detach": false, "Tty": false })))
}

/// Engine state → [`ContainerState`]:
///
/// | engine status | health    | state        |
/// |---------------|-----------|--------------|
/// | created       |           | CREATING     |
/// | restarting    |           | STARTING     |
/// | running       | starting  | STARTING     |
/// | running       | other     | RUNNING      |
/// | paused        |           | STARTING     |
/// | exited, dead  |           | EXITED(code) |
/// | removing      |           | EXITED(code) |
/// | anything else |           | MISSING      |
pub fn map_state(status: &str, health: Option<&str>, exit_code: i64) -> ContainerState {
    let code = i32::try_from(exit_code).unwrap_or(-1);
    match status {
        "created" => ContainerState::Creating,
        "restarting" | "paused" => ContainerState::Starting,
        "running" if health == Some("starting") => ContainerState::Starting,
        "running" => ContainerState::Running,
        "exited" | "dead" | "removing" => ContainerState::Exited(code),
        _ => ContainerState::Missing,
    }
}

/// Exit code from a list entry's `Status` text, e.g. `Exited (137) 2 minutes ago`.
fn status_exit_code(status: &str) -> i64 {
    status
        .split_once('(')
        .and_then(|(_, rest)| rest.split_once(')'))
        .and_then(|(code, _)| code.trim().parse().ok())
        .unwrap_or(0)
}

fn backend(msg: impl Into<String>) -> EngineError {
    EngineError::Backend(msg.into())
}

/// Parses a `GET /containers/json?all=1` response.
pub fn parse_container_list(list: &Value, host: &str) -> Result<Vec<ContainerStatus>, EngineError> {
    let items = list.as_array().ok_or_else(|| backend("container list is not an array"))?;
    let mut out = Vec::new();
    for item in items {
        let name = item["Names"][0]
            .as_str()
            .map(|n| n.trim_start_matches('/').to_string())
            .ok_or_else(|| backend("container without a name"))?;
        let labels = &item["Labels"];
        let state_text = item["State"].as_str().unwrap_or("");
        let status_text = item["Status"].as_str().unwrap_or("");
        let health = if status_text.contains("(health: starting)") {
            Some("starting")
        } else {
            None
        };
        let state = map_state(state_text, health, status_exit_code(status_text));
        out.push(ContainerStatus {
            service: labels[LABEL_SERVICE].as_str().unwrap_or(&name).to_string(),
            stack: labels[LABEL_STACK].as_str().unwrap_or("").to_string(),
            container: name,
            state,
            host: host.to_string(),
            since: item["Created"].as_u64().map(|s| s * 1000),
        });
    }
    out.sort_by(|a, b| a.container.cmp(&b.container));
    Ok(out)
}

pub fn parse_network_list(list: &Value) -> Result<Vec<NetworkState>, EngineError> {
    let items = list.as_array().ok_or_else(|| backend("network list is not an array"))?;
    Ok(items
        .iter()
        .filter_map(|n| {
            Some(NetworkState {
                name: n["Name"].as_str()?.to_string(),
                stack: n["Labels"][LABEL_STACK].as_str().map(str::to_string),
            })
        })
        .collect())
}

/// Decoded log frames: channel and raw payload.
pub type LogFrames = Vec<(LogChannel, Vec<u8>)>;

/// Splits complete multiplexed log frames off the front of `buf`. Each frame
/// is an 8-byte header (stream id, three zero bytes, big-endian length)
/// followed by the payload. Returns the frames and the number of bytes
/// consumed; a partial trailing frame is left for the next call.
pub fn decode_log_frames(buf: &[u8]) -> Result<(LogFrames, usize), EngineError> {
    let mut frames = Vec::new();
    let mut pos = 0;
    while buf.len() - pos >= 8 {
        let header = &buf[pos..pos + 8];
        let channel = match header[0] {
            0 | 1 => LogChannel::Out,
            2 => LogChannel::Err,
            other => return Err(backend(format!("unknown log stream id {other}"))),
        };
        let len = u32::from_be_bytes([header[4], header[5], header[6], header[7]]) as usize;
        if buf.len() - pos - 8 < len {
            break;
        }
        frames.push((channel, buf[pos + 8..pos + 8 + len].to_vec()));
        pos += 8 + len;
    }
    Ok((frames, pos))
}

/// Splits a `timestamps=1` log line into its RFC 3339 time (as epoch
/// milliseconds) and the message.
pub fn split_timestamp(line: &str) -> (Option<Timestamp>, &str) {
    if let Some((ts, rest)) = line.split_once(' ') {
        if let Ok(t) = chrono::DateTime::parse_from_rfc3339(ts) {
            if let Ok(ms) = u64::try_from(t.timestamp_millis()) {
                return (Some(ms), rest);
            }
        }
    }
    (None, line)
}

/// Maps an error response onto [`EngineError`].
pub fn map_error(status: u16, body: &[u8], what: &str) -> EngineError {
    let message = serde_json::from_slice::<Value>(body)
        .ok()
        .and_then(|v| v["message"].as_str().map(str::to_string))
        .unwrap_or_else(|| String::from_utf8_lossy(body).trim().to_string());
    let detail = format!("{what}: {message}");
    match status {
        404 => EngineError::NotFound(detail),
        409 => EngineError::Conflict(detail),
        _ => EngineError::Backend(format!("HTTP {status} {detail}")),
    }
}

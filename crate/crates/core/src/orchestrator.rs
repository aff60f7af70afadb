//! Deployment planning, RAN-host delegation and the stack lifecycle.
//!
//! A plan is a flat list of `(host, action)` pairs executed in order. Every
//! container is created on the controller first. A RAN service targeted at
//! another host is then handed over: its controller container releases its
//! static addresses, joins the default bridge, and the service's rendered
//! files and a compose fragment go to the RAN host over its remote channel,
//! where the fragment is brought up. The controller-side container is left
//! in CREATING as a placeholder; the RAN host's copy is the live one.
//!
//! [`Controller`] owns sessions. It is not internally synchronized: callers
//! serialize lifecycle operations (the control plane runs them on one worker).

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{emulated_variant, CatalogError, StackCatalog};
use crate::engine::compose::{build_fragment, container_name};
use crate::engine::{
    ContainerDescriptor, ContainerEngine, ContainerState, EngineAction, EngineError, Timestamp, TransferFile,
    BRIDGE_NETWORK,
};
use crate::hosts::{EngineEndpoint, HostRef, HostRegistry};
use crate::lab::{LabConfig, LabError};
use crate::manifest::{ServiceRole, ServiceSpec, StackManifest};
use crate::netplan::{build_address_plan, NetworkCatalog};
use crate::report::{Finding, FindingCode, ValidationReport};
use crate::settings::{render_stack, resolve_settings, validate_settings, RenderedConfig, ResolvedSettings, SettingsMap};
use crate::subscribers::{build_seed_set, parse_subscribers, Plmn, SeedSet, SubscriberError};
use crate::validate::{topological_order, validate_manifest, CycleError};

/// Volume backing the subscriber database of a stack's DB service.
pub const SUBSCRIBER_VOLUME: &str = "cube-subscribers";

/// Command that replaces the subscriber database with a seed document.
pub fn seed_command(seeds: &SeedSet) -> Vec<String> {
    vec!["subscriber-db".into(), "load".into(), seeds.canonical_document()]
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedAction {
    pub host: String,
    pub action: EngineAction,
}

impl PlannedAction {
    fn new(host: &str, action: EngineAction) -> Self {
        Self {
            host: host.to_string(),
            action,
        }
    }

    /// Transfers and remote compose-ups travel over the host's remote
    /// channel; everything else goes to its engine.
    pub fn endpoint<'a>(&self, hosts: &'a HostRegistry) -> Option<&'a EngineEndpoint> {
        let remote = matches!(
            self.action,
            EngineAction::TransferFiles { .. } | EngineAction::RemoteComposeUp { .. }
        );
        match hosts.resolve(&self.host)? {
            HostRef::Ran(h) if remote => Some(&h.channel),
            HostRef::Ran(h) => Some(&h.engine),
            HostRef::Controller if remote => None,
            HostRef::Controller => Some(&hosts.controller_engine),
        }
    }
}

/// Where a service ends up running.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedService {
    pub name: String,
    pub role: ServiceRole,
    pub host: String,
    pub container: String,
    pub delegated: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeploymentPlan {
    pub stack: String,
    pub actions: Vec<PlannedAction>,
    pub seed: SeedSet,
    /// Services in start order.
    pub services: Vec<PlannedService>,
}

impl DeploymentPlan {
    pub fn service(&self, name: &str) -> Option<&PlannedService> {
        self.services.iter().find(|s| s.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error(transparent)]
    Cycle(#[from] CycleError),
    #[error("unknown host `{0}`")]
    UnknownHost(String),
    #[error("{0}")]
    Planning(String),
}

fn transfer_files(service: &str, rendered: &[RenderedConfig]) -> Vec<TransferFile> {
    rendered
        .iter()
        .filter(|r| r.service == service)
        .map(|r| TransferFile::new(r.target_path.to_string_lossy(), r.content.clone()))
        .collect()
}

/// Start-up actions for one RAN service, which must already exist on the
/// controller with its networks connected.
pub fn delegate_ran_service(
    stack: &str,
    service: &ServiceSpec,
    hosts: &HostRegistry,
    rendered: &[RenderedConfig],
) -> Result<Vec<PlannedAction>, PlanError> {
    let controller = hosts.controller.as_str();
    let container = container_name(stack, &service.name);
    let target = match hosts.resolve(&service.target_host) {
        None => return Err(PlanError::UnknownHost(service.target_host.clone())),
        Some(HostRef::Controller) => {
            return Ok(vec![PlannedAction::new(
                controller,
                EngineAction::StartContainer { container },
            )])
        }
        Some(HostRef::Ran(h)) => h.name.as_str(),
    };
    let mut actions: Vec<PlannedAction> = service
        .attachments
        .iter()
        .map(|a| {
            PlannedAction::new(
                controller,
                EngineAction::DisconnectNetwork {
                    container: container.clone(),
                    network: a.network.clone(),
                },
            )
        })
        .collect();
    actions.push(PlannedAction::new(
        controller,
        EngineAction::ConnectNetwork {
            container,
            network: BRIDGE_NETWORK.into(),
            ip: None,
            mac: None,
        },
    ));
    let files = transfer_files(&service.name, rendered);
    let fragment = build_fragment(stack, service, &files);
    actions.push(PlannedAction::new(
        target,
        EngineAction::TransferFiles {
            host: target.into(),
            stack: stack.into(),
            files,
        },
    ));
    actions.push(PlannedAction::new(
        target,
        EngineAction::RemoteComposeUp {
            host: target.into(),
            stack: stack.into(),
            fragment,
        },
    ));
    Ok(actions)
}

/// Builds the full action list for a manifest that passed validation.
pub fn plan_deployment(
    manifest: &StackManifest,
    settings: &ResolvedSettings,
    networks: &NetworkCatalog,
    hosts: &HostRegistry,
    seeds: SeedSet,
    rendered: &[RenderedConfig],
) -> Result<DeploymentPlan, PlanError> {
    let order = topological_order(manifest)?;
    let addresses = build_address_plan(manifest, settings).map_err(|e| PlanError::Planning(e.to_string()))?;
    let stack = manifest.name.as_str();
    let controller = hosts.controller.as_str();
    let mut actions = Vec::new();
    for name in &manifest.networks {
        let spec = networks
            .get(name)
            .ok_or_else(|| PlanError::Planning(format!("network `{name}` is not in the network catalog")))?;
        actions.push(PlannedAction::new(
            controller,
            EngineAction::CreateNetwork {
                stack: stack.into(),
                network: spec.clone(),
            },
        ));
    }
    let mut services = Vec::new();
    for idx in order {
        let svc = &manifest.services[idx];
        let host = hosts
            .canonical(&svc.target_host)
            .ok_or_else(|| PlanError::UnknownHost(svc.target_host.clone()))?;
        let delegated = !hosts.is_controller(host);
        if delegated && svc.role != ServiceRole::Ran {
            return Err(PlanError::Planning(format!(
                "service `{}` is not a RAN service but targets `{host}`",
                svc.name
            )));
        }
        let container = container_name(stack, &svc.name);
        actions.push(PlannedAction::new(
            controller,
            EngineAction::CreateContainer {
                container: ContainerDescriptor {
                    name: container.clone(),
                    stack: stack.into(),
                    service: svc.name.clone(),
                    image: svc.image.clone(),
                    role: svc.role,
                    command: svc.command_override.clone(),
                    files: transfer_files(&svc.name, rendered),
                    data_volume: (svc.role == ServiceRole::Db).then(|| SUBSCRIBER_VOLUME.to_string()),
                },
            },
        ));
        for a in &svc.attachments {
            let assigned = addresses.lookup(&svc.name, &a.network);
            actions.push(PlannedAction::new(
                controller,
                EngineAction::ConnectNetwork {
                    container: container.clone(),
                    network: a.network.clone(),
                    ip: assigned.map(|x| x.address),
                    mac: assigned.map(|x| x.mac),
                },
            ));
        }
        if svc.role == ServiceRole::Ran {
            actions.extend(delegate_ran_service(stack, svc, hosts, rendered)?);
        } else {
            actions.push(PlannedAction::new(
                controller,
                EngineAction::StartContainer {
                    container: container.clone(),
                },
            ));
        }
        if svc.role == ServiceRole::Db {
            actions.push(PlannedAction::new(
                controller,
                EngineAction::Exec {
                    container: container.clone(),
                    command: seed_command(&seeds),
                },
            ));
        }
        services.push(PlannedService {
            name: svc.name.clone(),
            role: svc.role,
            host: host.to_string(),
            container,
            delegated,
        });
    }
    Ok(DeploymentPlan {
        stack: stack.into(),
        actions,
        seed: seeds,
        services,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SessionState {
    Starting,
    Running,
    Stopping,
    Stopped,
    Failed,
}

impl SessionState {
    pub fn is_active(self) -> bool {
        matches!(self, SessionState::Starting | SessionState::Running | SessionState::Stopping)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum StartPolicy {
    #[default]
    RejectIfActive,
    ReplaceActive,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StackSession {
    pub id: String,
    /// Deployed stack name (the emulated variant carries its own name).
    pub stack: String,
    /// Catalog entry the session was started from.
    pub source: String,
    pub state: SessionState,
    pub started_at: Timestamp,
    pub stopped_at: Option<Timestamp>,
    pub plan: DeploymentPlan,
    /// Number of plan actions applied successfully.
    pub applied: usize,
    pub error: Option<String>,
}

#[derive(Debug, Error)]
pub enum LifecycleError {
    #[error("unknown stack `{0}`")]
    UnknownStack(String),
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("stack `{stack}` is active (session {session})")]
    StackAlreadyActive { session: String, stack: String },
    #[error("validation failed: {0}")]
    ValidationFailed(ValidationReport),
    #[error("{action} on {host} failed: {cause}")]
    EngineFailure {
        host: String,
        action: String,
        cause: EngineError,
    },
    #[error("no active session")]
    NoActiveSession,
    #[error("settings are locked while session {0} is active")]
    SettingsLocked(String),
    #[error("planning failed: {0}")]
    Planning(#[from] PlanError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Lab(#[from] LabError),
    #[error("cannot write settings: {0}")]
    Io(#[from] std::io::Error),
}

impl LifecycleError {
    /// Machine-readable error code. Planning errors are internal: every
    /// condition that could cause one is a validation finding first.
    pub fn code(&self) -> &'static str {
        match self {
            LifecycleError::UnknownStack(_) => "UNKNOWN_STACK",
            LifecycleError::UnknownSession(_) => "UNKNOWN_SESSION",
            LifecycleError::StackAlreadyActive { .. } => "STACK_ALREADY_ACTIVE",
            LifecycleError::ValidationFailed(_) => "VALIDATION_FAILED",
            LifecycleError::EngineFailure { .. } => "ENGINE_FAILURE",
            LifecycleError::NoActiveSession => "NO_ACTIVE_SESSION",
            LifecycleError::SettingsLocked(_) => "SETTINGS_LOCKED",
            LifecycleError::Planning(_)
            | LifecycleError::Catalog(_)
            | LifecycleError::Lab(_)
            | LifecycleError::Io(_) => "INTERNAL",
        }
    }
}

/// Inputs for planning produced by a clean preflight.
pub type Checked = (ResolvedSettings, Vec<RenderedConfig>, SeedSet);

/// Everything needed to deploy one stack.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prepared {
    pub source: String,
    pub manifest: StackManifest,
    pub settings: ResolvedSettings,
    pub rendered: Vec<RenderedConfig>,
    pub plan: DeploymentPlan,
}

/// A start that passed its checks and has a session id, but has not touched
/// the engine yet.
#[derive(Debug, Clone)]
pub struct PendingStart {
    pub session_id: String,
    pub policy: StartPolicy,
    pub prepared: Prepared,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StopReport {
    pub session: String,
    pub actions: usize,
    pub errors: Vec<String>,
}

/// Sessions kept after they stop.
const SESSION_HISTORY: usize = 32;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControllerState {
    pub sessions: Vec<StackSession>,
    pub next_id: u64,
}

pub struct Controller {
    lab: LabConfig,
    engine: Arc<dyn ContainerEngine>,
    state: ControllerState,
}

fn subscriber_findings(err: SubscriberError) -> ValidationReport {
    let mut report = ValidationReport::new();
    let finding = match err {
        SubscriberError::InvalidRecord { report: inner, .. } => return inner,
        SubscriberError::DuplicateImsi(imsi) => {
            Finding::error(FindingCode::DuplicateImsi, imsi.as_str(), format!("IMSI {imsi} appears twice"))
        }
        SubscriberError::IncompleteRecord { index, missing } => Finding::error(
            FindingCode::IncompleteRecord,
            format!("UE{index}"),
            format!("missing {missing}"),
        ),
        e @ (SubscriberError::MalformedLine(_) | SubscriberError::UnknownKey(_)) => {
            Finding::error(FindingCode::ParseError, "subscribers", e.to_string())
        }
    };
    report.push(finding);
    report
}

impl Controller {
    pub fn new(lab: LabConfig, engine: Arc<dyn ContainerEngine>) -> Self {
        Self::with_state(lab, engine, ControllerState::default())
    }

    pub fn with_state(lab: LabConfig, engine: Arc<dyn ContainerEngine>, state: ControllerState) -> Self {
        Self { lab, engine, state }
    }

    pub fn state(&self) -> &ControllerState {
        &self.state
    }

    pub fn lab(&self) -> &LabConfig {
        &self.lab
    }

    pub fn engine(&self) -> &Arc<dyn ContainerEngine> {
        &self.engine
    }

    pub fn sessions(&self) -> &[StackSession] {
        &self.state.sessions
    }

    pub fn session(&self, id: &str) -> Option<&StackSession> {
        self.state.sessions.iter().find(|s| s.id == id)
    }

    /// The session holding lab resources: active, or FAILED and not yet
    /// reaped by a stop.
    pub fn current_session(&self) -> Option<&StackSession> {
        self.state
            .sessions
            .iter()
            .rev()
            .find(|s| s.state.is_active() || s.state == SessionState::Failed)
    }

    pub fn catalog(&self) -> Result<(StackCatalog, ValidationReport), LifecycleError> {
        Ok(StackCatalog::load(&self.lab.stacks_dir)?)
    }

    pub fn manifest(&self, name: &str) -> Result<StackManifest, LifecycleError> {
        let (catalog, _) = self.catalog()?;
        catalog
            .get(name)
            .cloned()
            .ok_or_else(|| LifecycleError::UnknownStack(name.to_string()))
    }

    /// Checks a manifest end to end: structure, addresses, templates and
    /// subscribers. Returns the inputs for planning, or every finding.
    pub fn preflight(
        &self,
        manifest: &StackManifest,
    ) -> Result<Result<Checked, ValidationReport>, LifecycleError> {
        let settings = resolve_settings(&self.lab.global, &manifest.overrides);
        let mut report = validate_manifest(manifest, &self.lab.networks, &self.lab.hosts, &settings);
        let rendered = match render_stack(manifest, &settings, &self.lab.template_root) {
            Ok(r) => Some(r),
            Err(e) => {
                report.push(Finding::error(FindingCode::TemplateError, e.service(), e.to_string()));
                None
            }
        };
        let text = self.lab.subscribers_text()?;
        let seeds = match Plmn::from_settings(&settings) {
            Err(e) => {
                report.push(Finding::error(FindingCode::InvalidSetting, "MCC/MNC", e.to_string()));
                None
            }
            Ok(plmn) => match parse_subscribers(&text).and_then(|records| build_seed_set(records, plmn)) {
                Ok(seeds) => Some(seeds),
                Err(e) => {
                    report.extend(subscriber_findings(e));
                    None
                }
            },
        };
        Ok(match (report.is_empty(), rendered, seeds) {
            (true, Some(rendered), Some(seeds)) => Ok((settings, rendered, seeds)),
            _ => Err(report),
        })
    }

    /// Manifest and its findings; an empty report means it can be started.
    pub fn inspect(&self, name: &str) -> Result<(StackManifest, ValidationReport), LifecycleError> {
        let manifest = self.manifest(name)?;
        let report = self.preflight(&manifest)?.err().unwrap_or_default();
        Ok((manifest, report))
    }

    /// Resolves, validates, renders and plans `name` without touching the
    /// engine.
    pub fn prepare(&self, name: &str, emulated: bool) -> Result<Prepared, LifecycleError> {
        let mut manifest = self.manifest(name)?;
        if emulated {
            manifest = emulated_variant(&manifest).ok_or_else(|| {
                let mut report = ValidationReport::new();
                report.push(Finding::error(
                    FindingCode::EmulationUnsupported,
                    name,
                    format!("{} stacks have no emulated variant", manifest.generation.as_str()),
                ));
                LifecycleError::ValidationFailed(report)
            })?;
        }
        let (settings, rendered, seeds) = self.preflight(&manifest)?.map_err(LifecycleError::ValidationFailed)?;
        let plan = plan_deployment(&manifest, &settings, &self.lab.networks, &self.lab.hosts, seeds, &rendered)?;
        Ok(Prepared {
            source: name.to_string(),
            manifest,
            settings,
            rendered,
            plan,
        })
    }

    /// Policy check and preparation. Nothing touches the engine.
    pub fn begin_start(&mut self, name: &str, policy: StartPolicy, emulated: bool) -> Result<PendingStart, LifecycleError> {
        if policy == StartPolicy::RejectIfActive {
            if let Some(current) = self.current_session() {
                return Err(LifecycleError::StackAlreadyActive {
                    session: current.id.clone(),
                    stack: current.stack.clone(),
                });
            }
        }
        let prepared = self.prepare(name, emulated)?;
        self.state.next_id += 1;
        Ok(PendingStart {
            session_id: format!("sess-{:06}", self.state.next_id),
            policy,
            prepared,
        })
    }

    /// Tears down a predecessor if the policy allows, then applies the plan.
    pub fn execute_start(&mut self, pending: PendingStart) -> Result<StackSession, LifecycleError> {
        if let Some(current) = self.current_session() {
            let current = current.id.clone();
            match pending.policy {
                StartPolicy::RejectIfActive => {
                    let s = self.session(&current).expect("current session exists");
                    return Err(LifecycleError::StackAlreadyActive {
                        session: current,
                        stack: s.stack.clone(),
                    });
                }
                StartPolicy::ReplaceActive => {
                    self.stop_session(&current)?;
                }
            }
        }
        let Prepared { source, plan, .. } = pending.prepared;
        tracing::info!(session = %pending.session_id, stack = %plan.stack, actions = plan.actions.len(), "starting stack");
        let mut session = StackSession {
            id: pending.session_id,
            stack: plan.stack.clone(),
            source,
            state: SessionState::Starting,
            started_at: self.engine.now(),
            stopped_at: None,
            plan,
            applied: 0,
            error: None,
        };
        let mut failure = None;
        for pa in &session.plan.actions {
            let result = match pa.endpoint(&self.lab.hosts) {
                Some(ep) => self.engine.apply(ep, &pa.action),
                None => Err(EngineError::Unreachable(format!("no endpoint for {} on {}", pa.action.kind(), pa.host))),
            };
            if let Err(cause) = result {
                failure = Some(LifecycleError::EngineFailure {
                    host: pa.host.clone(),
                    action: pa.action.to_string(),
                    cause,
                });
                break;
            }
            session.applied += 1;
        }
        match &failure {
            None => session.state = SessionState::Running,
            Some(e) => {
                tracing::warn!(session = %session.id, "start failed: {e}");
                session.state = SessionState::Failed;
                session.error = Some(e.to_string());
            }
        }
        self.push_session(session.clone());
        match failure {
            None => Ok(session),
            Some(e) => Err(e),
        }
    }

    pub fn start_stack(&mut self, name: &str, policy: StartPolicy, emulated: bool) -> Result<StackSession, LifecycleError> {
        let pending = self.begin_start(name, policy, emulated)?;
        self.execute_start(pending)
    }

    fn push_session(&mut self, session: StackSession) {
        self.state.sessions.push(session);
        while self.state.sessions.len() > SESSION_HISTORY {
            let Some(pos) = self
                .state
                .sessions
                .iter()
                .position(|s| s.state == SessionState::Stopped)
            else {
                break;
            };
            self.state.sessions.remove(pos);
        }
    }

    /// Stops and removes every container of the session's stack on every
    /// host, dependents first, then its networks. Errors do not stop the
    /// teardown; they are reported at the end and leave the session FAILED.
    pub fn stop_session(&mut self, id: &str) -> Result<StopReport, LifecycleError> {
        let idx = self
            .state
            .sessions
            .iter()
            .position(|s| s.id == id)
            .ok_or_else(|| LifecycleError::UnknownSession(id.to_string()))?;
        let mut report = StopReport {
            session: id.to_string(),
            ..StopReport::default()
        };
        if self.state.sessions[idx].state == SessionState::Stopped {
            return Ok(report);
        }
        self.state.sessions[idx].state = SessionState::Stopping;
        let session = self.state.sessions[idx].clone();
        tracing::info!(session = %id, stack = %session.stack, "stopping stack");
        let rank: HashMap<&str, usize> = session
            .plan
            .services
            .iter()
            .enumerate()
            .map(|(i, s)| (s.name.as_str(), i))
            .collect();
        let hosts = &self.lab.hosts;
        let mut first_error: Option<LifecycleError> = None;
        let mut record = |report: &mut StopReport, host: &str, action: String, cause: EngineError| {
            report.errors.push(format!("{action} on {host}: {cause}"));
            if first_error.is_none() {
                first_error = Some(LifecycleError::EngineFailure {
                    host: host.to_string(),
                    action,
                    cause,
                });
            }
        };

        let mut found = Vec::new();
        for host in hosts.host_names() {
            let ep = hosts.engine(host).expect("registered host");
            match self.engine.query(ep, Some(&session.stack)) {
                Ok(list) => found.extend(list.into_iter().map(|c| (host.to_string(), ep, c))),
                Err(cause) => record(&mut report, host, "QUERY".into(), cause),
            }
        }
        // Unknown services first, then reverse start order.
        found.sort_by_key(|(_, _, c)| std::cmp::Reverse(rank.get(c.service.as_str()).copied().unwrap_or(usize::MAX)));
        for (host, ep, c) in &found {
            if matches!(c.state, ContainerState::Starting | ContainerState::Running) {
                let stop = EngineAction::StopContainer {
                    container: c.container.clone(),
                };
                report.actions += 1;
                if let Err(cause) = self.engine.apply(ep, &stop) {
                    record(&mut report, host, stop.to_string(), cause);
                    continue;
                }
            }
            let remove = EngineAction::RemoveContainer {
                container: c.container.clone(),
            };
            report.actions += 1;
            if let Err(cause) = self.engine.apply(ep, &remove) {
                record(&mut report, host, remove.to_string(), cause);
            }
        }
        for host in hosts.host_names() {
            let ep = hosts.engine(host).expect("registered host");
            let nets = match self.engine.networks(ep, Some(&session.stack)) {
                Ok(n) => n,
                Err(EngineError::Unreachable(_)) => continue,
                Err(cause) => {
                    record(&mut report, host, "LIST_NETWORKS".into(), cause);
                    continue;
                }
            };
            for n in nets {
                let remove = EngineAction::RemoveNetwork { network: n.name };
                report.actions += 1;
                if let Err(cause) = self.engine.apply(ep, &remove) {
                    record(&mut report, host, remove.to_string(), cause);
                }
            }
        }
        let now = self.engine.now();
        let s = &mut self.state.sessions[idx];
        match first_error {
            None => {
                s.state = SessionState::Stopped;
                s.stopped_at = Some(now);
                Ok(report)
            }
            Some(e) => {
                s.state = SessionState::Failed;
                s.error = Some(report.errors.join("; "));
                Err(e)
            }
        }
    }

    /// The session a stop request refers to: the current one, optionally
    /// required to come from (or deploy) `name`.
    pub fn resolve_stop(&self, name: Option<&str>) -> Result<String, LifecycleError> {
        let current = self.current_session();
        match (name, current) {
            (None, Some(s)) => Ok(s.id.clone()),
            (None, None) => Err(LifecycleError::NoActiveSession),
            (Some(name), Some(s)) if s.source == name || s.stack == name => Ok(s.id.clone()),
            (Some(name), _) => {
                let (catalog, _) = self.catalog()?;
                if catalog.get(name).is_none() {
                    Err(LifecycleError::UnknownStack(name.to_string()))
                } else {
                    Err(LifecycleError::NoActiveSession)
                }
            }
        }
    }

    /// Stops the current session.
    pub fn stop_current(&mut self) -> Result<StopReport, LifecycleError> {
        let id = self.resolve_stop(None)?;
        self.stop_session(&id)
    }

    /// Stops the current session if it was started from (or deploys) `name`.
    pub fn stop_stack(&mut self, name: &str) -> Result<StopReport, LifecycleError> {
        let id = self.resolve_stop(Some(name))?;
        self.stop_session(&id)
    }

    pub fn global_settings(&self) -> &SettingsMap {
        &self.lab.global
    }

    /// Replaces and persists the global settings. Refused while a session
    /// holds the lab.
    pub fn replace_settings(&mut self, settings: SettingsMap) -> Result<(), LifecycleError> {
        if let Some(current) = self.current_session() {
            return Err(LifecycleError::SettingsLocked(current.id.clone()));
        }
        let report = validate_settings(&settings);
        if !report.is_empty() {
            return Err(LifecycleError::ValidationFailed(report));
        }
        write_settings(&self.lab.settings_path, &settings)?;
        self.lab.global = settings;
        Ok(())
    }
}

fn write_settings(path: &Path, settings: &SettingsMap) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, settings.to_env_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::{AddressSource, NetworkAttachment};
    use crate::netplan::default_network_catalog;
    use crate::hosts::default_host_registry;
    use crate::subscribers::Plmn;

    fn seeds() -> SeedSet {
        SeedSet {
            plmn: Plmn::new("001", "01").unwrap(),
            records: Vec::new(),
        }
    }

    fn attach(net: &str, ip: &str) -> NetworkAttachment {
        NetworkAttachment {
            network: net.into(),
            address: AddressSource::Static(ip.parse().unwrap()),
        }
    }

    fn gnb(target: &str) -> ServiceSpec {
        let mut s = ServiceSpec::new("gnb", "cube/srsran:24.10.1", ServiceRole::Ran);
        s.attachments = vec![attach("corenet", "10.5.0.20"), attach("rfnet", "192.168.40.20")];
        s.target_host = target.into();
        s
    }

    fn kinds(actions: &[PlannedAction]) -> Vec<(&str, &str)> {
        actions.iter().map(|a| (a.host.as_str(), a.action.kind())).collect()
    }

    #[test]
    fn local_ran_starts_in_place() {
        let out = delegate_ran_service("s", &gnb("controller"), &default_host_registry(), &[]).unwrap();
        assert_eq!(kinds(&out), [("controller", "START_CONTAINER")]);
    }

    #[test]
    fn remote_ran_is_handed_over() {
        let out = delegate_ran_service("s", &gnb("ran-1"), &default_host_registry(), &[]).unwrap();
        assert_eq!(
            kinds(&out),
            [
                ("controller", "DISCONNECT_NETWORK"),
                ("controller", "DISCONNECT_NETWORK"),
                ("controller", "CONNECT_NETWORK"),
                ("ran-1", "TRANSFER_FILES"),
                ("ran-1", "REMOTE_COMPOSE_UP"),
            ]
        );
        assert!(matches!(&out[0].action, EngineAction::DisconnectNetwork { network, .. } if network == "corenet"));
        assert!(matches!(&out[1].action, EngineAction::DisconnectNetwork { network, .. } if network == "rfnet"));
    }

    #[test]
    fn unknown_target_host() {
        assert_eq!(
            delegate_ran_service("s", &gnb("ran-9"), &default_host_registry(), &[]),
            Err(PlanError::UnknownHost("ran-9".into()))
        );
    }

    #[test]
    fn endpoints_follow_action_kind() {
        let hosts = default_host_registry();
        let out = delegate_ran_service("s", &gnb("ran-1"), &hosts, &[]).unwrap();
        assert_eq!(out[2].endpoint(&hosts).unwrap().host, "controller");
        assert_eq!(out[3].endpoint(&hosts), Some(&hosts.ran_hosts[0].channel));
    }

    #[test]
    fn core_only_plan_stays_on_controller() {
        let mut amf = ServiceSpec::new("amf", "cube/open5gs:2.7.2", ServiceRole::CoreNf);
        amf.attachments = vec![attach("corenet", "10.5.0.5")];
        let mut db = ServiceSpec::new("db", "mongo:6", ServiceRole::Db);
        db.attachments = vec![attach("corenet", "10.5.0.2")];
        amf.depends_on = vec!["db".into()];
        let m = StackManifest {
            name: "core".into(),
            description: String::new(),
            generation: crate::manifest::Generation::G5SA,
            services: vec![amf, db],
            networks: vec!["corenet".into()],
            overrides: SettingsMap::new(),
        };
        let plan = plan_deployment(
            &m,
            &ResolvedSettings::default(),
            &default_network_catalog(),
            &default_host_registry(),
            seeds(),
            &[],
        )
        .unwrap();
        assert!(plan.actions.iter().all(|a| a.host == "controller"));
        let order: Vec<_> = plan.services.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(order, ["db", "amf"]);
        let k: Vec<_> = plan.actions.iter().map(|a| a.action.kind()).collect();
        assert_eq!(
            k,
            [
                "CREATE_NETWORK",
                "CREATE_CONTAINER",
                "CONNECT_NETWORK",
                "START_CONTAINER",
                "EXEC",
                "CREATE_CONTAINER",
                "CONNECT_NETWORK",
                "START_CONTAINER"
            ]
        );
    }
}

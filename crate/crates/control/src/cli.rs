//! The `cube` command line.
//!
//! Exit codes: 0 success, 1 validation findings, 2 runtime error, 64 usage
//! error. State (sessions and, for simulated labs, the simulated engine)
//! persists between invocations in the `--state` file.

use std::ffi::OsString;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::sync::Arc;
use std::time::Duration;

use clap::{Parser, Subcommand};
use cube_core::engine::{ContainerEngine, EngineAction, RealEngine, SimWorld};
use cube_core::hosts::{EndpointKind, HostRegistry};
use cube_core::lab::{default_catalog_root, LabConfig, LabPaths};
use cube_core::manifest::ServiceRole;
use cube_core::monitor::{live_colors, multiplex_logs, poll_snapshot, HealthSnapshot, MonitorError, MuxItem};
use cube_core::orchestrator::{seed_command, Controller, ControllerState, LifecycleError, StackSession, StartPolicy};
use cube_core::report::ValidationReport;
use cube_core::settings::{render_stack, resolve_settings, SettingsMap};
use cube_core::subscribers::{build_seed_set, parse_subscribers, Plmn};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::api;
use crate::service::LabService;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FINDINGS: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, Parser)]
#[command(name = "cube", version, about = "Deploy and operate containerized mobile-network lab stacks")]
pub struct Cli {
    /// Catalog root holding stacks/, templates/, settings/ and the network
    /// and host files.
    #[arg(long, env = "CUBE_CATALOG", global = true)]
    pub catalog: Option<PathBuf>,
    /// Global settings file (default: <catalog>/settings/global.env).
    #[arg(long, env = "CUBE_SETTINGS", global = true)]
    pub settings: Option<PathBuf>,
    /// Host registry (default: <catalog>/hosts.yaml).
    #[arg(long, env = "CUBE_HOSTS", global = true)]
    pub hosts: Option<PathBuf>,
    /// Where sessions and the simulated engine persist between runs.
    #[arg(long, env = "CUBE_STATE", global = true, default_value = "cube-state.json")]
    pub state: PathBuf,
    /// Machine-readable output.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// List catalog stacks.
    List,
    /// Validate one stack, or every stack.
    Validate { stack: Option<String> },
    /// Render a stack's configuration files.
    Render {
        stack: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Start a stack.
    Start {
        stack: String,
        /// Stop the current session first instead of refusing.
        #[arg(long)]
        replace: bool,
        /// Use the software gNB/UE variant.
        #[arg(long)]
        emulated: bool,
    },
    /// Stop the current session.
    Stop { stack: Option<String> },
    /// Show the health of the current session.
    Status {
        #[arg(long)]
        watch: bool,
        /// Polls to make with --watch (default: until interrupted).
        #[arg(long)]
        count: Option<u64>,
        #[arg(long, default_value_t = 1000)]
        interval_ms: u64,
    },
    /// Show a service's logs.
    Logs {
        #[arg(required = true)]
        service: Vec<String>,
        #[arg(long)]
        follow: bool,
        /// Simulated labs only: ticks to advance while following.
        #[arg(long, default_value_t = 10)]
        ticks: u64,
    },
    /// Check the subscriber file, or reload it into the running database.
    Seed {
        #[arg(long)]
        check: bool,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, env = "CUBE_BIND", default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
        /// Simulated labs only: clock tick period; 0 disables ticking.
        #[arg(long, default_value_t = 1000)]
        tick_ms: u64,
    },
}

#[derive(Debug, Error)]
enum CliError {
    #[error(transparent)]
    Lifecycle(#[from] LifecycleError),
    #[error(transparent)]
    Monitor(#[from] MonitorError),
    #[error("{0}")]
    Findings(ValidationReport),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn code(&self) -> &str {
        match self {
            CliError::Lifecycle(e) => e.code(),
            CliError::Monitor(MonitorError::NotFound(_)) => "UNKNOWN_SERVICE",
            CliError::Monitor(MonitorError::Engine { .. }) => "ENGINE_FAILURE",
            CliError::Findings(_) => "VALIDATION_FAILED",
            CliError::Runtime(_) => "INTERNAL",
        }
    }

    fn exit_code(&self) -> i32 {
        match self {
            CliError::Findings(_) | CliError::Lifecycle(LifecycleError::ValidationFailed(_)) => EXIT_FINDINGS,
            _ => EXIT_RUNTIME,
        }
    }

    fn findings(&self) -> Option<&ValidationReport> {
        match self {
            CliError::Findings(r) | CliError::Lifecycle(LifecycleError::ValidationFailed(r)) => Some(r),
            _ => None,
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Contents of the `--state` file.
#[derive(Debug, Default, Serialize, Deserialize)]
pub struct StateFile {
    pub controller: ControllerState,
    /// Simulated engine snapshot; absent for real labs.
    #[serde(default)]
    pub world: Option<Value>,
}

impl StateFile {
    pub fn load(path: &Path) -> Result<Self, String> {
        match std::fs::read_to_string(path) {
            Ok(text) => serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display())),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Self::default()),
            Err(e) => Err(format!("{}: {e}", path.display())),
        }
    }

    /// The simulated engine recorded in this file, if any.
    pub fn world(&self) -> Result<Option<SimWorld>, String> {
        self.world
            .as_ref()
            .map(|v| SimWorld::from_json(&v.to_string()).map_err(|e| format!("simulated engine state: {e}")))
            .transpose()
    }
}

fn all_simulated(hosts: &HostRegistry) -> bool {
    hosts.controller_engine.kind == EndpointKind::Simulated
        && hosts
            .ran_hosts
            .iter()
            .all(|h| h.engine.kind == EndpointKind::Simulated && h.channel.kind == EndpointKind::Simulated)
}

/// A loaded lab plus the engine it runs on.
struct Lab {
    controller: Controller,
    world: Option<Arc<SimWorld>>,
    state_path: PathBuf,
}

impl Lab {
    fn open(cli: &Cli) -> Result<Self, CliError> {
        let paths = LabPaths {
            catalog: cli.catalog.clone().unwrap_or_else(default_catalog_root),
            settings: cli.settings.clone(),
            hosts: cli.hosts.clone(),
            subscribers: None,
        };
        let lab = LabConfig::load(&paths).map_err(runtime)?;
        let file = StateFile::load(&cli.state).map_err(CliError::Runtime)?;
        let (engine, world): (Arc<dyn ContainerEngine>, _) = if all_simulated(&lab.hosts) {
            let world = Arc::new(match file.world().map_err(CliError::Runtime)? {
                Some(w) => w,
                None => SimWorld::for_registry(&lab.hosts),
            });
            (world.clone(), Some(world))
        } else {
            (Arc::new(RealEngine::default()), None)
        };
        Ok(Self {
            controller: Controller::with_state(lab, engine, file.controller),
            world,
            state_path: cli.state.clone(),
        })
    }

    fn save(&self) -> Result<(), CliError> {
        self.save_with(self.controller.state().clone())
    }

    fn save_with(&self, controller: ControllerState) -> Result<(), CliError> {
        let world = match &self.world {
            Some(w) => Some(serde_json::from_str(&w.to_json()).map_err(runtime)?),
            None => None,
        };
        let file = StateFile { controller, world };
        let text = serde_json::to_string_pretty(&file).map_err(runtime)?;
        std::fs::write(&self.state_path, text).map_err(|e| runtime(format!("{}: {e}", self.state_path.display())))
    }

    fn tick(&self) {
        if let Some(w) = &self.world {
            w.tick();
        }
    }

    /// Current session, else the most recent one.
    fn latest(&self) -> Option<&StackSession> {
        self.controller
            .current_session()
            .or_else(|| self.controller.sessions().last())
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{e}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{}", e.render());
                    EXIT_USAGE
                }
            };
        }
    };
    match execute(&cli, out) {
        Ok(code) => code,
        Err(e) => {
            if cli.json {
                let body = json!({ "code": e.code(), "message": e.to_string(), "findings": e.findings() });
                let _ = writeln!(out, "{body}");
            } else {
                let _ = writeln!(err, "error: {}: {}", e.code(), e);
                if let Some(report) = e.findings() {
                    for f in report.iter() {
                        let _ = writeln!(err, "  {f}");
                    }
                }
            }
            e.exit_code()
        }
    }
}

fn print_json(out: &mut dyn Write, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(runtime)?;
    writeln!(out, "{text}").map_err(runtime)
}

fn print_findings(out: &mut dyn Write, report: &ValidationReport) -> Result<(), CliError> {
    if report.is_empty() {
        writeln!(out, "no findings").map_err(runtime)
    } else {
        for f in report.iter() {
            writeln!(out, "{f}").map_err(runtime)?;
        }
        Ok(())
    }
}

fn execute(cli: &Cli, out: &mut dyn Write) -> Result<i32, CliError> {
    let mut lab = Lab::open(cli)?;
    match &cli.command {
        Command::List => list(cli, &lab, out),
        Command::Validate { stack } => validate(cli, &lab, stack.as_deref(), out),
        Command::Render { stack, out: dir } => render(cli, &lab, stack, dir.as_deref(), out),
        Command::Start {
            stack,
            replace,
            emulated,
        } => {
            let policy = if *replace {
                StartPolicy::ReplaceActive
            } else {
                StartPolicy::RejectIfActive
            };
            let result = lab.controller.start_stack(stack, policy, *emulated);
            lab.save()?;
            let session = result?;
            if cli.json {
                print_json(out, &session)?;
            } else {
                writeln!(out, "{} {} {}", session.id, session.stack, state_str(&session)).map_err(runtime)?;
            }
            Ok(EXIT_OK)
        }
        Command::Stop { stack } => {
            let result = match stack {
                Some(name) => lab.controller.stop_stack(name),
                None => lab.controller.stop_current(),
            };
            lab.save()?;
            let report = result?;
            if cli.json {
                print_json(out, &report)?;
            } else {
                writeln!(out, "{} STOPPED ({} actions)", report.session, report.actions).map_err(runtime)?;
            }
            Ok(EXIT_OK)
        }
        Command::Status {
            watch,
            count,
            interval_ms,
        } => {
            let polls = if *watch { count.unwrap_or(u64::MAX) } else { 1 };
            for i in 0..polls {
                if i > 0 && *interval_ms > 0 {
                    std::thread::sleep(Duration::from_millis(*interval_ms));
                }
                // One poll is one simulated tick.
                lab.tick();
                let snap = poll_snapshot(lab.latest(), lab.controller.engine().as_ref(), &lab.controller.lab().hosts);
                lab.save()?;
                print_status(cli, &snap, out)?;
            }
            Ok(EXIT_OK)
        }
        Command::Logs {
            service,
            follow,
            ticks,
        } => logs(cli, &lab, service, *follow, *ticks, out),
        Command::Seed { check } => seed(cli, &lab, *check, out),
        Command::Serve { bind, tick_ms } => serve(lab, *bind, *tick_ms, out),
    }
}

fn state_str(s: &StackSession) -> String {
    serde_json::to_value(s.state)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

fn list(cli: &Cli, lab: &Lab, out: &mut dyn Write) -> Result<i32, CliError> {
    let (catalog, findings) = lab.controller.catalog()?;
    let stacks = catalog.summaries();
    if cli.json {
        print_json(out, &json!({ "stacks": stacks, "findings": findings }))?;
    } else {
        for s in &stacks {
            writeln!(
                out,
                "{:<24} {:<8} {:>2} services  {}",
                s.name,
                s.generation.as_str(),
                s.service_count,
                s.description
            )
            .map_err(runtime)?;
        }
        for f in findings.iter() {
            writeln!(out, "{f}").map_err(runtime)?;
        }
    }
    Ok(if findings.is_empty() { EXIT_OK } else { EXIT_FINDINGS })
}

fn validate(cli: &Cli, lab: &Lab, stack: Option<&str>, out: &mut dyn Write) -> Result<i32, CliError> {
    let mut clean = true;
    match stack {
        Some(name) => {
            let (_, report) = lab.controller.inspect(name)?;
            clean = report.is_empty();
            if cli.json {
                print_json(out, &json!({ "stack": name, "findings": report }))?;
            } else {
                print_findings(out, &report)?;
            }
        }
        None => {
            let (catalog, catalog_findings) = lab.controller.catalog()?;
            clean &= catalog_findings.is_empty();
            let mut results = Vec::new();
            for name in catalog.names() {
                let (_, report) = lab.controller.inspect(name)?;
                clean &= report.is_empty();
                results.push(json!({ "stack": name, "findings": report }));
                if !cli.json {
                    writeln!(out, "{name}:").map_err(runtime)?;
                    print_findings(out, &report)?;
                }
            }
            if cli.json {
                print_json(out, &json!({ "stacks": results, "findings": catalog_findings }))?;
            } else {
                for f in catalog_findings.iter() {
                    writeln!(out, "{f}").map_err(runtime)?;
                }
            }
        }
    }
    Ok(if clean { EXIT_OK } else { EXIT_FINDINGS })
}

fn render(cli: &Cli, lab: &Lab, stack: &str, dir: Option<&Path>, out: &mut dyn Write) -> Result<i32, CliError> {
    let manifest = lab.controller.manifest(stack)?;
    let config = lab.controller.lab();
    let settings = resolve_settings(&config.global, &manifest.overrides);
    let rendered = render_stack(&manifest, &settings, &config.template_root).map_err(|e| {
        CliError::Findings(ValidationReport::from_iter([cube_core::report::Finding::error(
            cube_core::report::FindingCode::TemplateError,
            e.service(),
            e.to_string(),
        )]))
    })?;
    let mut written = Vec::new();
    for r in &rendered {
        let rel = Path::new(&r.service).join(&r.target_path);
        match dir {
            Some(dir) => {
                let path = dir.join(&rel);
                if let Some(parent) = path.parent() {
                    std::fs::create_dir_all(parent).map_err(|e| runtime(format!("{}: {e}", parent.display())))?;
                }
                std::fs::write(&path, &r.content).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
                written.push(json!({ "path": path, "sha256": r.sha256() }));
                if !cli.json {
                    writeln!(out, "{}", path.display()).map_err(runtime)?;
                }
            }
            None if cli.json => {}
            None => {
                writeln!(out, "# {}", rel.display()).map_err(runtime)?;
                write!(out, "{}", r.content).map_err(runtime)?;
                if !r.content.ends_with('\n') {
                    writeln!(out).map_err(runtime)?;
                }
            }
        }
    }
    if cli.json {
        if dir.is_some() {
            print_json(out, &written)?;
        } else {
            print_json(out, &rendered)?;
        }
    }
    Ok(EXIT_OK)
}

fn print_status(cli: &Cli, snap: &HealthSnapshot, out: &mut dyn Write) -> Result<(), CliError> {
    if cli.json {
        let text = serde_json::to_string(snap).map_err(runtime)?;
        return writeln!(out, "{text}").map_err(runtime);
    }
    match (&snap.stack, &snap.session) {
        (Some(stack), Some(id)) => {
            let state = snap
                .session_state
                .and_then(|s| serde_json::to_value(s).ok())
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default();
            writeln!(out, "{stack} {id} {state} {}", snap.aggregate).map_err(runtime)?;
        }
        _ => writeln!(out, "no session {}", snap.aggregate).map_err(runtime)?,
    }
    for s in &snap.per_service {
        writeln!(out, "  {:<12} {:<10} {:<6} {}", s.service, s.status.state.to_string(), s.color, s.status.host)
            .map_err(runtime)?;
    }
    Ok(())
}

fn print_item(cli: &Cli, item: &MuxItem, out: &mut dyn Write) -> Result<(), CliError> {
    if cli.json {
        let text = serde_json::to_string(item).map_err(runtime)?;
        return writeln!(out, "{text}").map_err(runtime);
    }
    match item {
        MuxItem::Log {
            ts, service, line, color, ..
        } => writeln!(out, "{ts:>8} {service} [{color}] {line}"),
        MuxItem::Gap { service, dropped } => writeln!(out, "-- {service}: {dropped} lines dropped --"),
        MuxItem::End { service } => writeln!(out, "-- {service}: end of stream --"),
    }
    .map_err(runtime)
}

fn logs(cli: &Cli, lab: &Lab, services: &[String], follow: bool, ticks: u64, out: &mut dyn Write) -> Result<i32, CliError> {
    let session = lab.controller.current_session().ok_or(LifecycleError::NoActiveSession)?;
    let engine = lab.controller.engine().clone();
    let hosts = &lab.controller.lab().hosts;
    let colors = live_colors(session, engine.clone(), hosts);
    let mux = multiplex_logs(session, engine, hosts, services, follow, colors)?;
    let Some(world) = lab.world.as_ref().filter(|_| follow) else {
        for item in mux {
            print_item(cli, &item, out)?;
        }
        return Ok(EXIT_OK);
    };
    // Simulated follow: the clock only moves when this command ticks it.
    let (tx, rx) = mpsc::channel();
    std::thread::spawn(move || {
        for item in mux {
            if tx.send(item).is_err() {
                break;
            }
        }
    });
    let mut open = services.len();
    let drain = |out: &mut dyn Write, open: &mut usize| -> Result<(), CliError> {
        while let Ok(item) = rx.recv_timeout(Duration::from_millis(20)) {
            if matches!(item, MuxItem::End { .. }) {
                *open = open.saturating_sub(1);
            }
            print_item(cli, &item, out)?;
        }
        Ok(())
    };
    drain(out, &mut open)?;
    for _ in 0..ticks {
        if open == 0 {
            break;
        }
        world.tick();
        drain(out, &mut open)?;
    }
    lab.save()?;
    Ok(EXIT_OK)
}

fn seed(cli: &Cli, lab: &Lab, check: bool, out: &mut dyn Write) -> Result<i32, CliError> {
    if check {
        let config = lab.controller.lab();
        let settings = resolve_settings(&config.global, &SettingsMap::new());
        let plmn = Plmn::from_settings(&settings).map_err(|e| CliError::Runtime(format!("MCC/MNC: {e}")))?;
        let text = config.subscribers_text().map_err(runtime)?;
        let seeds = match parse_subscribers(&text).and_then(|records| build_seed_set(records, plmn)) {
            Ok(s) => s,
            Err(e) => {
                if cli.json {
                    print_json(out, &json!({ "valid": false, "error": e.to_string() }))?;
                } else {
                    writeln!(out, "{e}").map_err(runtime)?;
                }
                return Ok(EXIT_FINDINGS);
            }
        };
        if cli.json {
            print_json(out, &json!({ "valid": true, "subscribers": seeds.len(), "document": seeds.canonical_document() }))?;
        } else {
            writeln!(out, "{} subscribers valid for PLMN {}", seeds.len(), seeds.plmn.prefix()).map_err(runtime)?;
        }
        return Ok(EXIT_OK);
    }
    let session = lab.controller.current_session().ok_or(LifecycleError::NoActiveSession)?;
    let db = session
        .plan
        .services
        .iter()
        .find(|s| s.role == ServiceRole::Db)
        .ok_or_else(|| runtime(format!("stack {} has no subscriber database", session.stack)))?;
    let hosts = &lab.controller.lab().hosts;
    let ep = hosts
        .engine(&db.host)
        .ok_or_else(|| runtime(format!("unknown host {}", db.host)))?;
    let action = EngineAction::Exec {
        container: db.container.clone(),
        command: seed_command(&session.plan.seed),
    };
    lab.controller
        .engine()
        .apply(ep, &action)
        .map_err(|cause| LifecycleError::EngineFailure {
            host: db.host.clone(),
            action: action.to_string(),
            cause,
        })?;
    lab.save()?;
    if cli.json {
        print_json(out, &json!({ "service": db.name, "subscribers": session.plan.seed.len() }))?;
    } else {
        writeln!(out, "loaded {} subscribers into {}", session.plan.seed.len(), db.name).map_err(runtime)?;
    }
    Ok(EXIT_OK)
}

fn serve(lab: Lab, bind: SocketAddr, tick_ms: u64, out: &mut dyn Write) -> Result<i32, CliError> {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(runtime)?;
    let Lab {
        controller,
        world,
        state_path,
    } = lab;
    let persist = Lab {
        controller: Controller::new(controller.lab().clone(), controller.engine().clone()),
        world: world.clone(),
        state_path,
    };
    let service = LabService::new(controller);
    let listener = rt.block_on(tokio::net::TcpListener::bind(bind)).map_err(|e| runtime(format!("{bind}: {e}")))?;
    writeln!(out, "listening on http://{}", listener.local_addr().map_err(runtime)?).map_err(runtime)?;
    let app = api::router(service.clone());
    let state = rt.block_on(async move {
        if let (Some(world), true) = (world, tick_ms > 0) {
            tokio::spawn(async move {
                let mut every = tokio::time::interval(Duration::from_millis(tick_ms));
                every.tick().await;
                loop {
                    every.tick().await;
                    world.tick();
                }
            });
        }
        let served = axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await;
        served.map_err(runtime)?;
        service.flush().await.map_err(CliError::from)
    })?;
    persist.save_with(state)?;
    Ok(EXIT_OK)
}

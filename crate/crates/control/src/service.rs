//! Serialized lifecycle worker with a published read view.
//!
//! One thread owns the [`Controller`]. Start, stop and settings changes are
//! queued to it; each is acknowledged once it is accepted (or rejected) and
//! then carried out. Readers use [`LabService::published`], which is
//! refreshed after every command and never waits on the worker.

use std::sync::mpsc;
use std::sync::{Arc, Mutex, RwLock};

use cube_core::engine::ContainerEngine;
use cube_core::lab::LabConfig;
use cube_core::orchestrator::{
    Controller, ControllerState, LifecycleError, SessionState, StackSession, StartPolicy, StopReport,
};
use cube_core::settings::SettingsMap;
use tokio::sync::oneshot;

/// What readers see: the lab configuration and the sessions as of the last
/// completed command.
#[derive(Debug, Clone)]
pub struct Published {
    pub lab: LabConfig,
    pub sessions: Vec<StackSession>,
    pub current: Option<StackSession>,
}

impl Published {
    pub fn session(&self, id: &str) -> Option<&StackSession> {
        self.sessions.iter().rev().find(|s| s.id == id)
    }

    /// Whether settings edits are refused.
    pub fn locked(&self) -> bool {
        self.current.is_some()
    }
}

type Reply<T> = oneshot::Sender<Result<T, LifecycleError>>;

enum Command {
    Start {
        stack: String,
        policy: StartPolicy,
        emulated: bool,
        accepted: Reply<String>,
        done: Option<Reply<StackSession>>,
    },
    Stop {
        stack: Option<String>,
        accepted: Reply<String>,
        done: Option<Reply<StopReport>>,
    },
    PutSettings {
        settings: SettingsMap,
        reply: Reply<SettingsMap>,
    },
    Flush {
        reply: oneshot::Sender<ControllerState>,
    },
}

/// Result of a queued lifecycle request.
#[derive(Debug)]
pub enum Outcome<T> {
    /// Accepted; runs in the background under this session id.
    Accepted(String),
    Finished(T),
}

struct Shared {
    tx: Mutex<mpsc::Sender<Command>>,
    published: RwLock<Published>,
    engine: Arc<dyn ContainerEngine>,
}

#[derive(Clone)]
pub struct LabService {
    shared: Arc<Shared>,
}

fn publish(target: &RwLock<Published>, c: &Controller, provisional: Option<StackSession>) {
    let mut sessions = c.sessions().to_vec();
    let current = match provisional {
        Some(p) => {
            sessions.push(p.clone());
            Some(p)
        }
        None => c.current_session().cloned(),
    };
    let mut p = target.write().unwrap_or_else(|e| e.into_inner());
    *p = Published {
        lab: c.lab().clone(),
        sessions,
        current,
    };
}

fn worker(mut controller: Controller, rx: mpsc::Receiver<Command>, shared: Arc<Shared>) {
    let published = &shared.published;
    for cmd in rx {
        match cmd {
            Command::Start {
                stack,
                policy,
                emulated,
                accepted,
                done,
            } => {
                let pending = match controller.begin_start(&stack, policy, emulated) {
                    Ok(p) => p,
                    Err(e) => {
                        let _ = accepted.send(Err(e));
                        continue;
                    }
                };
                let plan = pending.prepared.plan.clone();
                let provisional = StackSession {
                    id: pending.session_id.clone(),
                    stack: plan.stack.clone(),
                    source: pending.prepared.source.clone(),
                    state: SessionState::Starting,
                    started_at: controller.engine().now(),
                    stopped_at: None,
                    plan,
                    applied: 0,
                    error: None,
                };
                publish(published, &controller, Some(provisional));
                let _ = accepted.send(Ok(pending.session_id.clone()));
                let result = controller.execute_start(pending);
                publish(published, &controller, None);
                match done {
                    Some(done) => {
                        let _ = done.send(result);
                    }
                    None => {
                        if let Err(e) = result {
                            tracing::warn!(stack = %stack, "background start failed: {e}");
                        }
                    }
                }
            }
            Command::Stop { stack, accepted, done } => {
                let id = match controller.resolve_stop(stack.as_deref()) {
                    Ok(id) => id,
                    Err(e) => {
                        let _ = accepted.send(Err(e));
                        continue;
                    }
                };
                let _ = accepted.send(Ok(id.clone()));
                let result = controller.stop_session(&id);
                publish(published, &controller, None);
                match done {
                    Some(done) => {
                        let _ = done.send(result);
                    }
                    None => {
                        if let Err(e) = result {
                            tracing::warn!(session = %id, "background stop failed: {e}");
                        }
                    }
                }
            }
            Command::PutSettings { settings, reply } => {
                let result = controller
                    .replace_settings(settings)
                    .map(|()| controller.global_settings().clone());
                publish(published, &controller, None);
                let _ = reply.send(result);
            }
            Command::Flush { reply } => {
                let _ = reply.send(controller.state().clone());
            }
        }
    }
}

fn gone() -> LifecycleError {
    LifecycleError::Io(std::io::Error::other("lifecycle worker has stopped"))
}

impl LabService {
    pub fn new(controller: Controller) -> Self {
        let (tx, rx) = mpsc::channel();
        let shared = Arc::new(Shared {
            tx: Mutex::new(tx),
            published: RwLock::new(Published {
                lab: controller.lab().clone(),
                sessions: controller.sessions().to_vec(),
                current: controller.current_session().cloned(),
            }),
            engine: controller.engine().clone(),
        });
        let for_worker = shared.clone();
        std::thread::Builder::new()
            .name("lifecycle".into())
            .spawn(move || worker(controller, rx, for_worker))
            .expect("spawn lifecycle worker");
        Self { shared }
    }

    pub fn engine(&self) -> Arc<dyn ContainerEngine> {
        self.shared.engine.clone()
    }

    pub fn published(&self) -> Published {
        self.shared.published.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    fn send(&self, cmd: Command) -> Result<(), LifecycleError> {
        self.shared
            .tx
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .send(cmd)
            .map_err(|_| gone())
    }

    pub async fn start(
        &self,
        stack: &str,
        policy: StartPolicy,
        emulated: bool,
        wait: bool,
    ) -> Result<Outcome<StackSession>, LifecycleError> {
        let (accepted, accepted_rx) = oneshot::channel();
        let (done, done_rx) = if wait {
            let (tx, rx) = oneshot::channel();
            (Some(tx), Some(rx))
        } else {
            (None, None)
        };
        self.send(Command::Start {
            stack: stack.to_string(),
            policy,
            emulated,
            accepted,
            done,
        })?;
        let id = accepted_rx.await.map_err(|_| gone())??;
        match done_rx {
            None => Ok(Outcome::Accepted(id)),
            Some(rx) => Ok(Outcome::Finished(rx.await.map_err(|_| gone())??)),
        }
    }

    pub async fn stop(&self, stack: Option<&str>, wait: bool) -> Result<Outcome<StopReport>, LifecycleError> {
        let (accepted, accepted_rx) = oneshot::channel();
        let (done, done_rx) = if wait {
            let (tx, rx) = oneshot::channel();
            (Some(tx), Some(rx))
        } else {
            (None, None)
        };
        self.send(Command::Stop {
            stack: stack.map(str::to_string),
            accepted,
            done,
        })?;
        let id = accepted_rx.await.map_err(|_| gone())??;
        match done_rx {
            None => Ok(Outcome::Accepted(id)),
            Some(rx) => Ok(Outcome::Finished(rx.await.map_err(|_| gone())??)),
        }
    }

    pub async fn put_settings(&self, settings: SettingsMap) -> Result<SettingsMap, LifecycleError> {
        let (reply, rx) = oneshot::channel();
        self.send(Command::PutSettings { settings, reply })?;
        rx.await.map_err(|_| gone())?
    }

    /// Waits until every previously queued command has finished and returns
    /// the controller state at that point.
    pub async fn flush(&self) -> Result<ControllerState, LifecycleError> {
        let (reply, rx) = oneshot::channel();
        self.send(Command::Flush { reply })?;
        rx.await.map_err(|_| gone())
    }
}

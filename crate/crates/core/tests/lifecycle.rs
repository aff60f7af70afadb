mod common;

use std::sync::Arc;

use cube_core::engine::{ContainerEngine, ContainerState, EngineAction, Fault, LogChannel, SimWorld};
use cube_core::monitor::{poll_snapshot, HealthColor};
use cube_core::orchestrator::{
    Controller, LifecycleError, SessionState, StartPolicy, SUBSCRIBER_VOLUME,
};
use cube_core::report::FindingCode;

const STACK: &str = "srsran-open5gs-5gsa";

fn snapshot(c: &Controller, world: &SimWorld) -> cube_core::monitor::HealthSnapshot {
    poll_snapshot(c.current_session(), world, &c.lab().hosts)
}

#[test]
fn start_reaches_green_and_stop_leaves_nothing() {
    let (mut c, world) = common::sim_controller();
    let session = c.start_stack(STACK, StartPolicy::RejectIfActive, false).unwrap();
    assert_eq!(session.state, SessionState::Running);
    assert_eq!(snapshot(&c, &world).aggregate, HealthColor::Yellow);
    world.tick();
    let snap = snapshot(&c, &world);
    assert_eq!(snap.aggregate, HealthColor::Green, "{snap:#?}");
    let gnb = snap.per_service.iter().find(|s| s.service == "gnb").unwrap();
    assert_eq!(gnb.status.host, "ran-1");

    let kinds: Vec<_> = world.action_log_for("ran-1").iter().map(|r| r.action.kind()).collect();
    assert_eq!(kinds, ["TRANSFER_FILES", "REMOTE_COMPOSE_UP"]);

    let report = c.stop_session(&session.id).unwrap();
    assert!(report.errors.is_empty());
    assert_eq!(common::residue(&world, STACK), (0, 0));
    assert_eq!(c.session(&session.id).unwrap().state, SessionState::Stopped);
    assert_eq!(snapshot(&c, &world).aggregate, HealthColor::Gray);

    let before = world.action_log().len();
    let again = c.stop_session(&session.id).unwrap();
    assert_eq!(again.actions, 0);
    assert_eq!(world.action_log().len(), before);
}

#[test]
fn every_fixture_round_trips() {
    for name in common::stack_names() {
        let (mut c, world) = common::sim_controller();
        let s = c.start_stack(&name, StartPolicy::RejectIfActive, false).unwrap();
        world.tick();
        assert_eq!(snapshot(&c, &world).aggregate, HealthColor::Green, "{name}");
        c.stop_session(&s.id).unwrap();
        for host in world.hosts() {
            let h = world.host_state(&host).unwrap();
            assert!(h.containers.is_empty(), "{name} on {host}");
            assert!(h.networks.is_empty(), "{name} on {host}");
        }
    }
}

#[test]
fn teardown_is_reverse_start_order() {
    let (mut c, world) = common::sim_controller();
    let s = c.start_stack(STACK, StartPolicy::RejectIfActive, false).unwrap();
    world.tick();
    world.clear_action_log();
    c.stop_session(&s.id).unwrap();
    let stopped: Vec<String> = world
        .action_log()
        .iter()
        .filter_map(|r| match &r.action {
            EngineAction::StopContainer { container } => Some(container.clone()),
            _ => None,
        })
        .collect();
    let mut expected: Vec<String> = s.plan.services.iter().map(|p| p.container.clone()).collect();
    expected.reverse();
    assert_eq!(stopped, expected);
}

#[test]
fn reject_and_replace() {
    let (mut c, world) = common::sim_controller();
    let first = c.start_stack(STACK, StartPolicy::RejectIfActive, false).unwrap();
    let before = world.action_log().len();
    let err = c
        .start_stack("oairan-free5gc-5gsa", StartPolicy::RejectIfActive, false)
        .unwrap_err();
    assert!(matches!(err, LifecycleError::StackAlreadyActive { ref session, .. } if *session == first.id));
    assert_eq!(err.code(), "STACK_ALREADY_ACTIVE");
    assert_eq!(world.action_log().len(), before);

    let second = c
        .start_stack("oairan-free5gc-5gsa", StartPolicy::ReplaceActive, false)
        .unwrap();
    assert_eq!(c.session(&first.id).unwrap().state, SessionState::Stopped);
    assert_eq!(common::residue(&world, STACK), (0, 0));
    assert_eq!(c.current_session().unwrap().id, second.id);
}

#[test]
fn clean_state_seeding() {
    let (mut c, world) = common::sim_controller();
    let s = c.start_stack(STACK, StartPolicy::RejectIfActive, false).unwrap();
    let seed = s.plan.seed.canonical_document();
    assert_eq!(s.plan.seed.len(), 3);
    assert_eq!(world.subscriber_db("controller", SUBSCRIBER_VOLUME).unwrap(), seed);
    let db = s.plan.service("webdb").unwrap().container.clone();
    let ep = c.lab().hosts.controller_engine.clone();
    world
        .apply(
            &ep,
            &EngineAction::Exec {
                container: db,
                command: vec!["subscriber-db".into(), "add".into(), "001019999999999,00,00,8000".into()],
            },
        )
        .unwrap();
    assert_ne!(world.subscriber_db("controller", SUBSCRIBER_VOLUME).unwrap(), seed);
    c.stop_session(&s.id).unwrap();
    c.start_stack(STACK, StartPolicy::RejectIfActive, false).unwrap();
    assert_eq!(world.subscriber_db("controller", SUBSCRIBER_VOLUME).unwrap(), seed);
}

#[test]
fn address_conflict_fails_validation_without_engine_actions() {
    let dir = tempfile::tempdir().unwrap();
    let lab = common::copy_catalog(dir.path());
    let path = lab.stacks_dir.join(format!("{STACK}.yaml"));
    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, format!("{text}overrides:\n  GNB_IP: 10.5.0.11\n")).unwrap();
    let world = Arc::new(SimWorld::for_registry(&lab.hosts));
    let mut c = Controller::new(lab, world.clone());
    let err = c.start_stack(STACK, StartPolicy::RejectIfActive, false).unwrap_err();
    let LifecycleError::ValidationFailed(report) = err else {
        panic!("expected validation failure, got {err}");
    };
    assert!(report.has_code(FindingCode::DuplicateAddress), "{report}");
    assert!(world.action_log().is_empty());
    assert!(c.current_session().is_none());
}

#[test]
fn unknown_stack() {
    let (mut c, _) = common::sim_controller();
    let err = c.start_stack("nope", StartPolicy::RejectIfActive, false).unwrap_err();
    assert_eq!(err.code(), "UNKNOWN_STACK");
}

#[test]
fn emulated_start_runs_on_controller() {
    let (mut c, world) = common::sim_controller();
    let s = c.start_stack(STACK, StartPolicy::RejectIfActive, true).unwrap();
    assert_eq!(s.stack, format!("{STACK}-emulated"));
    assert!(s.plan.actions.iter().all(|a| a.host == "controller"));
    world.tick();
    assert_eq!(snapshot(&c, &world).aggregate, HealthColor::Green);
    c.stop_current().unwrap();
    assert_eq!(common::residue(&world, &s.stack), (0, 0));

    let err = c.start_stack("osmocom-2g", StartPolicy::RejectIfActive, true).unwrap_err();
    let LifecycleError::ValidationFailed(report) = err else { panic!() };
    assert!(report.has_code(FindingCode::EmulationUnsupported));
}

#[test]
fn failed_remote_start_is_reaped_by_stop() {
    let (mut c, world) = common::sim_controller();
    world.inject(Fault::PartialComposeUp { host: "ran-1".into() });
    let err = c.start_stack(STACK, StartPolicy::RejectIfActive, false).unwrap_err();
    assert_eq!(err.code(), "ENGINE_FAILURE");
    let s = c.current_session().unwrap().clone();
    assert_eq!(s.state, SessionState::Failed);
    assert!(s.error.is_some());
    assert!(s.applied < s.plan.actions.len());
    let gnb = format!("{STACK}-gnb");
    assert!(world.host_state("ran-1").unwrap().containers.contains_key(&gnb));

    // Left for inspection; a second start is refused.
    assert!(matches!(
        c.start_stack(STACK, StartPolicy::RejectIfActive, false),
        Err(LifecycleError::StackAlreadyActive { .. })
    ));

    c.stop_session(&s.id).unwrap();
    let removed = world.action_log_for("ran-1").iter().any(
        |r| matches!(&r.action, EngineAction::RemoveContainer { container } if *container == gnb) && r.error.is_none(),
    );
    assert!(removed);
    assert_eq!(common::residue(&world, STACK), (0, 0));
    assert_eq!(c.session(&s.id).unwrap().state, SessionState::Stopped);
}

#[test]
fn stop_with_unreachable_host_stays_failed_until_reachable() {
    let (mut c, world) = common::sim_controller();
    let s = c.start_stack(STACK, StartPolicy::RejectIfActive, false).unwrap();
    world.tick();
    world.set_reachable("ran-1", false);
    let snap = snapshot(&c, &world);
    let gnb = snap.per_service.iter().find(|x| x.service == "gnb").unwrap();
    assert_eq!(gnb.status.state, ContainerState::Missing);
    assert_eq!(snap.aggregate, HealthColor::Red);

    assert!(matches!(c.stop_session(&s.id), Err(LifecycleError::EngineFailure { .. })));
    assert_eq!(c.session(&s.id).unwrap().state, SessionState::Failed);
    world.set_reachable("ran-1", true);
    c.stop_session(&s.id).unwrap();
    assert_eq!(common::residue(&world, STACK), (0, 0));
}

#[test]
fn exited_core_function_turns_red() {
    let (mut c, world) = common::sim_controller();
    c.start_stack(STACK, StartPolicy::RejectIfActive, false).unwrap();
    world.tick();
    world.exit_container("controller", &format!("{STACK}-amf"), 0).unwrap();
    assert_eq!(snapshot(&c, &world).aggregate, HealthColor::Red);
}

#[test]
fn settings_locked_while_active() {
    let dir = tempfile::tempdir().unwrap();
    let lab = common::copy_catalog(dir.path());
    let world = Arc::new(SimWorld::for_registry(&lab.hosts));
    let mut c = Controller::new(lab, world);
    let mut settings = c.global_settings().clone();
    settings.insert("TAC", "7").unwrap();
    c.start_stack(STACK, StartPolicy::RejectIfActive, false).unwrap();
    let err = c.replace_settings(settings.clone()).unwrap_err();
    assert_eq!(err.code(), "SETTINGS_LOCKED");
    c.stop_current().unwrap();
    c.replace_settings(settings).unwrap();
    let written = std::fs::read_to_string(&c.lab().settings_path).unwrap();
    assert!(written.contains("TAC=7"));

    let mut bad = c.global_settings().clone();
    bad.insert("MCC", "1").unwrap();
    assert_eq!(c.replace_settings(bad).unwrap_err().code(), "VALIDATION_FAILED");
}

#[test]
fn logs_merge_and_filter() {
    use cube_core::monitor::{multiplex_logs, MuxItem};
    let (mut c, world) = common::sim_controller();
    world.set_boot_logs(false);
    let s = c.start_stack(STACK, StartPolicy::RejectIfActive, false).unwrap();
    let amf = format!("{STACK}-amf");
    let smf = format!("{STACK}-smf");
    for i in 0..5 {
        world.script_logs("controller", &amf, [(LogChannel::Out, format!("amf {i}"))]).unwrap();
        world.tick();
        world.script_logs("controller", &smf, [(LogChannel::Err, format!("smf {i}"))]).unwrap();
    }
    let engine: Arc<dyn ContainerEngine> = world.clone();
    let color: cube_core::monitor::ColorFn = Arc::new(|_| HealthColor::Green);
    let all: Vec<MuxItem> =
        multiplex_logs(&s, engine.clone(), &c.lab().hosts, &[], false, color.clone()).unwrap().collect();
    assert_eq!(all.len(), 10);
    let lines = |svc: &str| -> Vec<String> {
        all.iter()
            .filter_map(|i| match i {
                MuxItem::Log { service, line, .. } if service == svc => Some(line.clone()),
                _ => None,
            })
            .collect()
    };
    assert_eq!(lines("amf"), (0..5).map(|i| format!("amf {i}")).collect::<Vec<_>>());
    assert_eq!(lines("smf"), (0..5).map(|i| format!("smf {i}")).collect::<Vec<_>>());
    let ts: Vec<u64> = all.iter().map(|i| if let MuxItem::Log { ts, .. } = i { *ts } else { 0 }).collect();
    assert!(ts.windows(2).all(|w| w[0] <= w[1]));

    let only: Vec<MuxItem> = multiplex_logs(&s, engine.clone(), &c.lab().hosts, &["smf".into()], false, color.clone())
        .unwrap()
        .collect();
    assert_eq!(only.len(), 5);
    assert!(only.iter().all(|i| i.service() == "smf"));

    let err = multiplex_logs(&s, engine, &c.lab().hosts, &["nope".into()], false, color).err().unwrap();
    assert!(matches!(err, cube_core::monitor::MonitorError::NotFound(ref n) if n == "nope"));
}

#[test]
fn followed_logs_end_per_service() {
    use cube_core::monitor::{multiplex_logs, MuxItem};
    let (mut c, world) = common::sim_controller();
    world.set_boot_logs(false);
    let s = c.start_stack(STACK, StartPolicy::RejectIfActive, false).unwrap();
    world.tick();
    let engine: Arc<dyn ContainerEngine> = world.clone();
    let mut stream = multiplex_logs(
        &s,
        engine,
        &c.lab().hosts,
        &["amf".into(), "smf".into()],
        true,
        Arc::new(|_| HealthColor::Green),
    )
    .unwrap();
    let amf = format!("{STACK}-amf");
    world.script_logs("controller", &amf, [(LogChannel::Out, "before exit")]).unwrap();
    world.exit_container("controller", &amf, 1).unwrap();
    let mut seen = Vec::new();
    for item in stream.by_ref() {
        let done = matches!(&item, MuxItem::End { service } if service == "amf");
        seen.push(item);
        if done {
            break;
        }
    }
    assert!(matches!(&seen[0], MuxItem::Log { line, .. } if line == "before exit"));
    world.script_logs("controller", &format!("{STACK}-smf"), [(LogChannel::Out, "still here")]).unwrap();
    let next = stream.next().unwrap();
    assert!(matches!(next, MuxItem::Log { ref service, ref line, .. } if service == "smf" && line == "still here"));
}

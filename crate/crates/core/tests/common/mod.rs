#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use cube_core::engine::SimWorld;
use cube_core::lab::{default_catalog_root, LabConfig, LabPaths};
use cube_core::orchestrator::Controller;

pub fn shipped_lab() -> LabConfig {
    LabConfig::shipped().expect("shipped catalog loads")
}

/// Controller over the shipped catalog and a fresh simulated world.
pub fn sim_controller() -> (Controller, Arc<SimWorld>) {
    let lab = shipped_lab();
    let world = Arc::new(SimWorld::for_registry(&lab.hosts));
    (Controller::new(lab, world.clone()), world)
}

/// Copies the shipped catalog into `dir` so a test may modify it.
pub fn copy_catalog(dir: &Path) -> LabConfig {
    copy_dir(&default_catalog_root(), dir);
    LabConfig::load(&LabPaths::new(dir)).expect("copied catalog loads")
}

fn copy_dir(from: &Path, to: &Path) {
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

pub fn stack_names() -> Vec<String> {
    let lab = shipped_lab();
    let (catalog, report) = cube_core::catalog::StackCatalog::load(&lab.stacks_dir).unwrap();
    assert!(report.is_empty(), "{report}");
    catalog.names().map(str::to_string).collect()
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

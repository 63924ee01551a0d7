// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;

use bpa_dispatch::scenario::{Expectation, Scenario};

fn scenario_files() -> Vec<PathBuf> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    files.sort();
    files
}

#[test]
fn bundled_scenarios_load() {
    let files = scenario_files();
    assert!(files.len() >= 6);
    for f in files {
        let s = Scenario::load(&f).unwrap_or_else(|e| panic!("{}: {e}", f.display()));
        assert!(!s.expects.is_empty(), "{} asserts nothing", f.display());
        assert_eq!(f.file_stem().unwrap().to_str().unwrap(), s.name);
    }
}

#[test]
fn every_scenario_with_traffic_checks_for_payload_leaks() {
    for f in scenario_files() {
        let s = Scenario::load(&f).unwrap();
        assert!(
            s.expects.iter().any(|e| matches!(e, Expectation::NoPayloadLeak)),
            "{}",
            f.display()
        );
    }
}

#[test]
fn unknown_keys_and_dangling_nodes_rejected() {
    assert!(Scenario::from_toml("name = \"x\"\nbogus = 1\n").is_err());
    let dangling = "name = \"x\"\n[[node]]\nname = \"A\"\n[[link]]\nfrom = \"A\"\nto = \"B\"\n";
    assert!(Scenario::from_toml(dangling).is_err());
}

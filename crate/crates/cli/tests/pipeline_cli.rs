use std::path::Path;
use std::process::Command;

use hcm_cli::pipeline::{Pipeline, RunStatus, Stage, StageState};
use hcm_cli::parse_config;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hcm-sim"))
}

fn status(out: &Path) -> RunStatus {
    serde_json::from_str(&std::fs::read_to_string(out.join("status.json")).unwrap()).unwrap()
}

#[test]
fn mesh_stage_alone_writes_mesh_and_status() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let st = bin().args(["--stages", "mesh", "--out"]).arg(&out).status().unwrap();
    assert!(st.success());
    let mut entries: Vec<String> = std::fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    entries.sort();
    assert_eq!(entries, ["mesh", "status.json"]);
    assert!(out.join("mesh/mesh.vtk").is_file() && out.join("mesh/mesh_stats.json").is_file());
    let s = status(&out);
    assert!(s.ok);
    assert_eq!(s.schema_version, 1);
    assert_eq!(s.stages.len(), 1);
    assert_eq!(s.stages[0].state, StageState::Ran);
}

#[test]
fn rotor_without_transient_names_the_missing_stage() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let st = bin().args(["--stages", "rotor", "--out"]).arg(&out).status().unwrap();
    assert!(!st.success());
    let s = status(&out);
    assert!(!s.ok);
    let e = s.error.unwrap();
    assert!(e.contains("`rotor`") && e.contains("`transient`"), "{e}");
    assert_eq!(s.stages[0].state, StageState::NotRun);
}

#[test]
fn config_errors_exit_nonzero_with_status() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "[drive]\nvpp = 282\nv0 = 100\n").unwrap();
    let out = dir.path().join("run");
    let st = bin().arg("--config").arg(&cfg).arg("--out").arg(&out).status().unwrap();
    assert_eq!(st.code(), Some(2));
    assert!(status(&out).error.unwrap().contains("drive.vpp"));
}

#[test]
fn rerun_with_unchanged_inputs_is_cached() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = parse_config("").unwrap();
    let s1 = Pipeline::new(cfg.clone(), out.clone()).run(&[Stage::Mesh]);
    assert_eq!(s1.stages[0].state, StageState::Ran);
    let vtk = out.join("mesh/mesh.vtk");
    let before = std::fs::metadata(&vtk).unwrap().modified().unwrap();
    let s2 = Pipeline::new(cfg.clone(), out.clone()).run(&[Stage::Mesh]);
    assert_eq!(s2.stages[0].state, StageState::Cached);
    assert_eq!(s2.stages[0].key, s1.stages[0].key);
    assert_eq!(std::fs::metadata(&vtk).unwrap().modified().unwrap(), before);

    let mut changed = cfg;
    changed.geometry.tooth_count = 20;
    let s3 = Pipeline::new(changed, out.clone()).run(&[Stage::Mesh]);
    assert_eq!(s3.stages[0].state, StageState::Ran);
    assert_ne!(s3.stages[0].key, s1.stages[0].key);
}

#[test]
fn cached_upstream_satisfies_dependencies_only_for_matching_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = parse_config("").unwrap();
    Pipeline::new(cfg.clone(), out.clone()).run(&[Stage::Mesh]);
    let p = Pipeline::new(cfg.clone(), out.clone());
    assert!(p.check_dependencies(&[Stage::Modes]).is_ok());
    let mut changed = cfg;
    changed.analysis.refinement = 2;
    let p = Pipeline::new(changed, out);
    assert!(p.check_dependencies(&[Stage::Modes]).is_err());
}

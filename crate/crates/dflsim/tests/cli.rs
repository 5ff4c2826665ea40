//! End-to-end checks of the command-line binary: preset discovery, the
//! validate/run exit-code contract (0 clean, 2 config problems, 3 capacity
//! overruns), and a full run steered by the output-root environment variable.

use std::fs;
use std::path::Path;
use std::process::Command;

use dflsim::circuit::{TrotterOrder, TrotterParams};
use dflsim::lattice::LatticeSpec;
use dflsim::observables::InitialStateSpec;
use dflsim::runner::{EngineChoice, ExperimentConfig, ExperimentKind, OUTPUT_ROOT_ENV};

fn dflsim() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dflsim"))
}

/// Runs the binary and returns `(exit_code, stdout, stderr)`.
fn capture(cmd: &mut Command) -> (i32, String, String) {
    let out = cmd.output().expect("binary should launch");
    (
        out.status.code().expect("binary should exit normally"),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn small_config(output_dir: &str) -> ExperimentConfig {
    ExperimentConfig {
        schema_version: 1,
        experiment: ExperimentKind::Energy,
        lattice: LatticeSpec::Ring1d { n_matter: 3 },
        params: TrotterParams { j: 1.0, h: 1.3, mu: 1.5, dt: 0.25, q: 0.0 },
        order: TrotterOrder::Second,
        initial_state: InitialStateSpec::superposition_quench(vec![1]),
        engine: EngineChoice::Dual,
        noise: None,
        cycles: 2,
        seed: 11,
        output_dir: output_dir.to_string(),
    }
}

fn write_config(dir: &Path, name: &str, cfg: &ExperimentConfig) -> std::path::PathBuf {
    let path = dir.join(name);
    fs::write(&path, cfg.to_json().unwrap()).unwrap();
    path
}

#[test]
fn presets_list_names_both_bundled_configs() {
    let (code, stdout, _) = capture(dflsim().args(["presets", "list"]));
    assert_eq!(code, 0);
    assert!(stdout.contains("fig1-desk"));
    assert!(stdout.contains("fig4-desk"));
}

#[test]
fn validate_accepts_bundled_presets_by_name() {
    for name in ["fig1-desk", "fig4-desk"] {
        let (code, stdout, _) = capture(dflsim().args(["validate", name]));
        assert_eq!(code, 0, "preset {name} should validate");
        assert_eq!(stdout.trim(), "ok");
    }
}

#[test]
fn validate_reports_config_problems_with_exit_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config("bad");
    cfg.engine = EngineChoice::Mps { chi: None };
    let path = write_config(dir.path(), "bad.json", &cfg);

    let (code, stdout, _) = capture(dflsim().arg("validate").arg(&path));
    assert_eq!(code, 2);
    assert!(stdout.contains("engine.chi"), "stdout was: {stdout}");
}

#[test]
fn validate_flags_capacity_overruns_with_exit_code_three() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config("huge");
    cfg.lattice = LatticeSpec::Ring1d { n_matter: 20 };
    cfg.engine = EngineChoice::Statevector;
    let path = write_config(dir.path(), "huge.json", &cfg);

    let (code, stdout, _) = capture(dflsim().arg("validate").arg(&path));
    assert_eq!(code, 3);
    assert!(stdout.contains("exceeds"), "stdout was: {stdout}");
}

#[test]
fn run_writes_outputs_under_the_environment_root() {
    let cfg_dir = tempfile::tempdir().unwrap();
    let root = tempfile::tempdir().unwrap();
    let path = write_config(cfg_dir.path(), "energy.json", &small_config("cli-energy"));

    let (code, stdout, stderr) =
        capture(dflsim().arg("run").arg(&path).env(OUTPUT_ROOT_ENV, root.path()));
    assert_eq!(code, 0, "stderr was: {stderr}");

    let out_dir = root.path().join("cli-energy");
    assert!(out_dir.join("energy.csv").is_file());
    assert!(out_dir.join("manifest.json").is_file());

    // The binary echoes every artifact path, manifest last.
    let lines: Vec<&str> = stdout.lines().collect();
    assert!(lines.iter().any(|l| l.ends_with("energy.csv")));
    assert!(lines.last().unwrap().ends_with("manifest.json"));
}

#[test]
fn run_rejects_oversized_requests_with_exit_code_three() {
    let dir = tempfile::tempdir().unwrap();
    let root = tempfile::tempdir().unwrap();
    let mut cfg = small_config("huge-run");
    cfg.lattice = LatticeSpec::Ring1d { n_matter: 20 };
    cfg.engine = EngineChoice::Statevector;
    let path = write_config(dir.path(), "huge.json", &cfg);

    let (code, _, stderr) =
        capture(dflsim().arg("run").arg(&path).env(OUTPUT_ROOT_ENV, root.path()));
    assert_eq!(code, 3);
    assert!(stderr.contains("error:"));
    assert!(!root.path().join("huge-run").exists(), "no partial output directory");
}

#[test]
fn unknown_arguments_and_malformed_json_exit_with_code_two() {
    let (code, _, stderr) = capture(dflsim().args(["run", "no-such-config"]));
    assert_eq!(code, 2);
    assert!(stderr.contains("error:"));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.json");
    fs::write(&path, "{ this is not json").unwrap();
    let (code, _, stderr) = capture(dflsim().arg("validate").arg(&path));
    assert_eq!(code, 2);
    assert!(stderr.contains("error:"));
}

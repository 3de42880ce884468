use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pws_msf_core::OrbitSkeleton;
use tempfile::TempDir;

fn pws_msf(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pws-msf"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, json: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, json).unwrap();
    path
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Data rows of a CSV written by the tool, split into fields; comments and the header row dropped.
fn csv_rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    (header, rows)
}

fn column(header: &[String], name: &str) -> usize {
    header.iter().position(|h| h == name).unwrap()
}

#[test]
fn orbit_defaults_report_sliding_and_unit_exit() {
    let dir = TempDir::new().unwrap();
    let o = pws_msf(&["orbit"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("sliding"), "{text}");
    assert!(text.contains("TangentialExitToMinus at (1.0000000000, 0.1500000000)"), "{text}");

    let json = std::fs::read_to_string(dir.path().join("orbit.json")).unwrap();
    let first_field = json.lines().nth(1).unwrap();
    assert!(first_field.trim_start().starts_with("\"header\": \"# pws-msf "), "{first_field}");
    let skeleton = OrbitSkeleton::load(&dir.path().join("orbit.json")).unwrap();
    assert!(skeleton.has_sliding());
}

#[test]
fn orbit_period_is_step_robust() {
    let dir = TempDir::new().unwrap();
    let coarse = dir.path().join("coarse");
    let fine = dir.path().join("fine");
    assert_eq!(pws_msf(&["orbit"], &coarse).status.code(), Some(0));
    assert_eq!(pws_msf(&["orbit", "--step", "1e-4"], &fine).status.code(), Some(0));
    let a = OrbitSkeleton::load(&coarse.join("orbit.json")).unwrap();
    let b = OrbitSkeleton::load(&fine.join("orbit.json")).unwrap();
    assert!((a.period - b.period).abs() <= 1e-6, "{} vs {}", a.period, b.period);
}

#[test]
fn missing_model_name_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "cfg.json", r#"{"model": {"gamma": 3.0}}"#);
    let o = pws_msf(&["orbit", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("model.name"), "{}", stderr(&o));
}

#[test]
fn bad_inputs_exit_with_config_code() {
    let dir = TempDir::new().unwrap();
    let disconnected = write_config(
        dir.path(),
        "split.json",
        r#"{"model": {"name": "galvanetto"}, "topology": {"nodes": 4, "edges": [[0, 1], [2, 3]]}}"#,
    );
    let unknown = write_config(dir.path(), "unknown.json", r#"{"model": {"name": "duffing"}}"#);
    let cases: Vec<Vec<&str>> = vec![
        vec!["msf", "--sigma", "-1"],
        vec!["msf", "--sigma-min", "0"],
        vec!["msf", "--sigma", "1", "--sigma-steps", "3"],
        vec!["orbit", "--step", "0"],
        vec!["orbit", "--no-such-flag"],
        vec!["msf", "--config", disconnected.to_str().unwrap()],
        vec!["orbit", "--config", unknown.to_str().unwrap()],
        vec!["orbit", "--config", "/nonexistent/config.json"],
    ];
    for args in cases {
        let o = pws_msf(&args, dir.path());
        assert_eq!(o.status.code(), Some(3), "{args:?}: {}", stderr(&o));
    }
}

#[test]
fn unconverged_orbit_is_a_numerical_failure() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "cfg.json",
        r#"{"model": {"name": "galvanetto"}, "tolerances": {"orbit": 1e-300}, "orbit": {"max_laps": 2}}"#,
    );
    let o = pws_msf(&["orbit", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn sweep_has_101_rows_and_reruns_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let first = dir.path().join("first");
    let second = dir.path().join("second");
    let args = ["msf", "--sigma-min", "0", "--sigma-max", "5", "--sigma-steps", "101"];
    let o = pws_msf(&[&args[..], &["--jobs", "4"]].concat(), &first);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = pws_msf(&[&args[..], &["--jobs", "1"]].concat(), &second);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let (header, rows) = csv_rows(&first.join("msf.csv"));
    assert_eq!(rows.len(), 101);
    let status = column(&header, "status");
    assert!(rows.iter().all(|r| r[status] == "ok"));
    for name in ["msf.csv", "msf_max_modulus.csv"] {
        let a = std::fs::read(first.join(name)).unwrap();
        let b = std::fs::read(second.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between runs");
        assert!(a.starts_with(b"# pws-msf "));
    }
}

fn stable_at(sigma: &str) -> bool {
    let dir = TempDir::new().unwrap();
    let o = pws_msf(&["msf", "--sigma", sigma], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let (header, rows) = csv_rows(&dir.path().join("msf.csv"));
    assert_eq!(rows.len(), 1);
    rows[0][column(&header, "stable")].parse().unwrap()
}

#[test]
fn strong_coupling_is_stable() {
    assert!(stable_at("4.8"));
}

#[test]
fn weak_coupling_is_unstable() {
    assert!(!stable_at("1"));
}

#[test]
fn skeleton_file_is_reused() {
    let dir = TempDir::new().unwrap();
    assert_eq!(pws_msf(&["orbit"], dir.path()).status.code(), Some(0));
    let cfg = write_config(
        dir.path(),
        "cfg.json",
        r#"{"model": {"name": "galvanetto"}, "orbit": {"skeleton": "orbit.json"}, "out_dir": "reused"}"#,
    );
    let o = Command::new(env!("CARGO_BIN_EXE_pws-msf"))
        .args(["msf", "--sigma", "2.7", "--config", cfg.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let fresh = dir.path().join("fresh");
    assert_eq!(pws_msf(&["msf", "--sigma", "2.7"], &fresh).status.code(), Some(0));
    let body = |p: PathBuf| {
        let text = std::fs::read_to_string(p).unwrap();
        text.lines().skip(1).map(String::from).collect::<Vec<_>>()
    };
    assert_eq!(body(dir.path().join("reused/msf.csv")), body(fresh.join("msf.csv")));

    let wrong_step = Command::new(env!("CARGO_BIN_EXE_pws-msf"))
        .args(["msf", "--sigma", "2.7", "--step", "5e-4", "--config", cfg.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(wrong_step.status.code(), Some(3));
}

#[test]
fn validate_two_agents() {
    let dir = TempDir::new().unwrap();
    let o = pws_msf(&["validate", "--sigma", "2.7"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("validation.json")).unwrap()).unwrap();
    assert!(report["header"].as_str().unwrap().starts_with("# pws-msf "));
    let entry = &report["reports"][0];
    assert_eq!(entry["within_tolerance"], true);
    assert!(entry["matching_distance"].as_f64().unwrap() <= 1e-8);
}

#[test]
fn validate_three_agent_path() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "path.json",
        r#"{"model": {"name": "galvanetto", "gamma": 3.0, "v_bar": 0.15},
            "topology": {"nodes": 3, "edges": [[0, 1], [1, 2]]},
            "coupling": [[0, 0], [1, 0]],
            "sigma": 1.0}"#,
    );
    let o = pws_msf(&["validate", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
}

#[test]
fn corrupted_saltation_fails_validation() {
    let dir = TempDir::new().unwrap();
    let o = pws_msf(&["validate", "--sigma", "2.7", "--corrupt-saltation"], dir.path());
    assert_eq!(o.status.code(), Some(1), "{}", stdout(&o));
}

fn simulate(dir: &Path, json: &str) -> Vec<f64> {
    let cfg = write_config(dir, "sim.json", json);
    let o = pws_msf(&["simulate", "--config", cfg.to_str().unwrap()], dir);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let (header, rows) = csv_rows(&dir.join("sync_error.csv"));
    assert_eq!(header, ["t", "sync_error"]);
    rows.iter().map(|r| r[1].parse().unwrap()).collect()
}

#[test]
fn uncoupled_unperturbed_network_stays_synchronous() {
    let dir = TempDir::new().unwrap();
    let sync = simulate(
        dir.path(),
        r#"{"model": {"name": "galvanetto"}, "sigma": 0.0,
            "simulate": {"periods": 3, "perturbation": 0.0, "output_stride": 1}}"#,
    );
    assert!(sync.iter().all(|&e| e <= 1e-10));

    let (header, rows) = csv_rows(&dir.path().join("trajectory.csv"));
    assert_eq!(header, ["t", "sync_error", "x_1_1", "x_1_2", "x_2_1", "x_2_2"]);
    assert_eq!(rows.len(), sync.len());
}

#[test]
fn weakly_coupled_network_does_not_synchronize() {
    let dir = TempDir::new().unwrap();
    let sync = simulate(
        dir.path(),
        r#"{"model": {"name": "galvanetto"}, "sigma": 1.2, "simulate": {"periods": 20}}"#,
    );
    assert!(sync.last().unwrap() >= &sync[0], "{} -> {}", sync[0], sync.last().unwrap());
}

#[test]
fn simulation_reruns_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let json = r#"{"model": {"name": "galvanetto"}, "sigma": 2.7, "simulate": {"periods": 2}}"#;
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        std::fs::create_dir_all(&out).unwrap();
        simulate(&out, json);
    }
    for name in ["trajectory.csv", "sync_error.csv"] {
        let a = std::fs::read(dir.path().join("a").join(name)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(name)).unwrap();
        assert_eq!(a, b, "{name}");
    }
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use obsgain::cost::ZetaPolicy;
use obsgain_cli::scenario::{parse_scenario, resolve};
use obsgain_cli::{load_scenario, CliError};
use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_obsgain"))
}

fn shipped(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

const SHORT_BEARING: &str = r#"
schema_version = 1
x0 = [-1.0, 2.0]

[system]
kind = "holonomic_bearing"

[cost]
Q = [[1.0, 0.0], [0.0, 1.0]]
R = [[1.0, 0.0], [0.0, 1.0]]
Qf = [[0.1, 0.0], [0.0, 0.1]]
zeta = 50.0

[plan]
t_f = 2.0

[optimizer]
max_iters = 20

[integrator]
dt = 1e-2
"#;

fn write_scenario(dir: &TempDir, text: &str) -> PathBuf {
    let p = dir.path().join("test.scenario");
    fs::write(&p, text).unwrap();
    p
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn error_json(out: &Output) -> Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(stderr.trim()).unwrap_or_else(|e| panic!("stderr is not JSON ({e}): {stderr}"))
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn validation_message(text: &str) -> String {
    let err = parse_scenario(text).and_then(|f| resolve(&f)).expect_err("invalid scenario");
    assert!(matches!(err, CliError::Validation(_)), "{err:?}");
    err.message().to_string()
}

#[test]
fn shipped_bearing_scenario_resolves_to_the_study_setup() {
    let sc = load_scenario(&shipped("holonomic_bearing.scenario")).unwrap();
    assert_eq!(sc.x0, vec![-1.0, 2.0]);
    assert_eq!(sc.spec.q, nalgebra::DMatrix::identity(2, 2));
    assert_eq!(sc.spec.r, nalgebra::DMatrix::identity(2, 2));
    assert_eq!(sc.spec.qf, nalgebra::DMatrix::identity(2, 2) * 0.1);
    assert_eq!(sc.spec.epsilon, 0.01);
    assert_eq!(sc.spec.zeta_policy, ZetaPolicy::Fixed(50.0));
    assert_eq!(sc.plan.horizon(), 100.0);
    assert_eq!(sc.plan.segment_count(), 100);
    assert!(sc.plan.boundaries().windows(2).all(|w| w[1] - w[0] == 1.0));
    assert_eq!(sc.options.integrator.dt, 1e-3);
    assert_eq!(sc.system.name(), "holonomic_bearing");
}

#[test]
fn every_shipped_scenario_loads() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let mut count = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "scenario") {
            load_scenario(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            count += 1;
        }
    }
    assert!(count >= 4);
}

#[test]
fn defaults_are_filled() {
    let sc = resolve(&parse_scenario(SHORT_BEARING).unwrap()).unwrap();
    let opt = sc.resolved.optimizer.as_ref().unwrap();
    assert_eq!(opt.mu0, Some(0.1));
    assert_eq!(opt.grad_tol, Some(1e-4));
    assert_eq!(opt.max_iters, Some(20));
    assert_eq!(sc.resolved.cost.as_ref().unwrap().epsilon, Some(0.01));
    assert_eq!(sc.resolved.plan.as_ref().unwrap().segment_length, Some(1.0));
    let text = SHORT_BEARING.replace("[integrator]\ndt = 1e-2\n", "");
    let sc = resolve(&parse_scenario(&text).unwrap()).unwrap();
    assert_eq!(sc.options.integrator.dt, 1e-3);
}

#[test]
fn missing_q_names_the_field() {
    let text = SHORT_BEARING.replace("Q = [[1.0, 0.0], [0.0, 1.0]]\n", "");
    assert_eq!(validation_message(&text), "cost.Q required");
}

#[test]
fn state_dimension_mismatch_is_rejected() {
    let text = SHORT_BEARING.replace("x0 = [-1.0, 2.0]", "x0 = [-1.0, 2.0, 3.0]");
    let msg = validation_message(&text);
    assert!(msg.contains("x0") && msg.contains("2 states"), "{msg}");
}

#[test]
fn wrong_weight_shape_is_rejected() {
    let text = SHORT_BEARING.replace("R = [[1.0, 0.0], [0.0, 1.0]]", "R = [[1.0]]");
    assert!(validation_message(&text).starts_with("cost.R must be 2x2"));
}

#[test]
fn unknown_keys_and_syntax_errors_report_a_location() {
    let msg = validation_message(&SHORT_BEARING.replace("t_f = 2.0", "t_f = 2.0\nhorizon = 3.0"));
    assert!(msg.contains("horizon") && msg.contains("line"), "{msg}");
    let msg = validation_message(&SHORT_BEARING.replace("t_f = 2.0", "t_f = = 2.0"));
    assert!(msg.contains("line"), "{msg}");
}

#[test]
fn policy_fields_must_match_the_policy() {
    assert_eq!(validation_message(&SHORT_BEARING.replace("zeta = 50.0", "")), "cost.zeta required");
    let decay = SHORT_BEARING.replace("zeta = 50.0", "zeta_policy = \"decay\"");
    assert_eq!(validation_message(&decay), "cost.beta required");
    let sc = resolve(&parse_scenario(&SHORT_BEARING.replace("zeta = 50.0", "zeta_policy = \"decay\"\nbeta = 1.0")).unwrap()).unwrap();
    assert_eq!(sc.spec.zeta_policy, ZetaPolicy::DecayRule { beta: 1.0 });
}

#[test]
fn schema_version_is_required_and_checked() {
    assert_eq!(validation_message(&SHORT_BEARING.replace("schema_version = 1\n", "")), "schema_version required");
    assert!(validation_message(&SHORT_BEARING.replace("schema_version = 1", "schema_version = 2")).contains("not supported"));
}

#[test]
fn validation_errors_exit_with_status_2() {
    let dir = TempDir::new().unwrap();
    let p = write_scenario(&dir, &SHORT_BEARING.replace("Q = [[1.0, 0.0], [0.0, 1.0]]\n", ""));
    let out = run(&["synthesize", p.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let e = error_json(&out);
    assert_eq!(e["error"]["kind"], "validation");
    assert_eq!(e["error"]["message"], "cost.Q required");
    assert_eq!(e["error"]["exit_code"], 2);
}

#[test]
fn missing_file_exits_with_status_2() {
    let out = run(&["gramian", "/nonexistent/x.scenario"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"]["kind"], "validation");
}

#[test]
fn sensor_singularity_exits_with_status_3() {
    let dir = TempDir::new().unwrap();
    let p = write_scenario(&dir, &SHORT_BEARING.replace("x0 = [-1.0, 2.0]", "x0 = [0.0, 2.0]"));
    let out_dir = dir.path().join("out");
    let out = run(&["synthesize", p.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(error_json(&out)["error"]["kind"], "numerical");
}

#[test]
fn capped_segments_exit_4_only_when_convergence_is_required() {
    let dir = TempDir::new().unwrap();
    let p = write_scenario(&dir, &SHORT_BEARING.replace("max_iters = 20", "max_iters = 1"));
    let out_dir = dir.path().join("out");
    let args = ["synthesize", p.to_str().unwrap(), "--out", out_dir.to_str().unwrap()];
    let out = run(&args);
    assert_eq!(out.status.code(), Some(0));
    let summary = read_json(&out_dir.join("summary.json"));
    assert!(summary["capped_segments"].as_u64().unwrap() > 0);

    let mut strict = args.to_vec();
    strict.push("--require-convergence");
    let out = run(&strict);
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(error_json(&out)["error"]["kind"], "non-convergence");
    assert!(out_dir.join("summary.json").exists());
}

#[test]
fn gramian_of_a_zero_output_system_is_zero() {
    let dir = TempDir::new().unwrap();
    let text = r#"
schema_version = 1
x0 = [1.0, -1.0]
[system]
kind = "expressions"
drift = ["-x1", "-x2"]
fields = [["1", "0"]]
output = ["0"]
[cost]
Q = [[1.0, 0.0], [0.0, 1.0]]
R = [[1.0]]
Qf = [[0.0, 0.0], [0.0, 0.0]]
zeta = 1.0
[plan]
t_f = 1.0
[controller]
gain = [[0.0, 0.0]]
"#;
    let p = write_scenario(&dir, text);
    let out_dir = dir.path().join("out");
    let out = run(&["gramian", p.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let s = read_json(&out_dir.join("summary.json"));
    let w = s["gramian"].as_array().unwrap();
    assert!(w.iter().flat_map(|r| r.as_array().unwrap()).all(|v| v.as_f64() == Some(0.0)));
    assert_eq!(s["trace_index"].as_f64(), Some(0.0));
}

#[test]
fn gramian_of_a_scalar_lti_system_matches_the_closed_form() {
    let dir = TempDir::new().unwrap();
    let text = r#"
schema_version = 1
x0 = [0.0]
[system]
kind = "lti"
A = [[-1.0]]
B = [[1.0]]
C = [[1.0]]
[cost]
Q = [[1.0]]
R = [[1.0]]
Qf = [[0.0]]
zeta = 1.0
[plan]
t_f = 1.0
[integrator]
dt = 1e-4
[controller]
gain = [[0.0]]
"#;
    let p = write_scenario(&dir, text);
    let out_dir = dir.path().join("out");
    let out = run(&["gramian", p.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let s = read_json(&out_dir.join("summary.json"));
    let w = s["gramian"][0][0].as_f64().unwrap();
    let exact = (1.0 - (-2.0f64).exp()) / 2.0;
    assert!((w - exact).abs() <= 1e-8, "{w} vs {exact}");
}

#[test]
fn check_gradient_on_the_bearing_scenario_passes() {
    let dir = TempDir::new().unwrap();
    let p = write_scenario(&dir, SHORT_BEARING);
    let out_dir = dir.path().join("out");
    let out = run(&["check-gradient", p.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let s = read_json(&out_dir.join("summary.json"));
    assert!(s["relative_error"].as_f64().unwrap() <= 1e-4);
    assert_eq!(s["passed"], true);
    assert_eq!(s["gradient"].as_array().unwrap().len(), 4);
}

#[test]
fn check_gradient_on_a_later_segment_starts_from_the_simulated_state() {
    let dir = TempDir::new().unwrap();
    let p = write_scenario(&dir, &format!("{SHORT_BEARING}\n[check_gradient]\nsegment = 1\n"));
    let out_dir = dir.path().join("out");
    let out = run(&["check-gradient", p.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let s = read_json(&out_dir.join("summary.json"));
    assert_eq!(s["start"].as_f64(), Some(1.0));
    let x = s["start_state"].as_array().unwrap();
    let e = (-1.0f64).exp();
    assert!((x[0].as_f64().unwrap() + e).abs() < 1e-6);
    assert!((x[1].as_f64().unwrap() - 2.0 * e).abs() < 1e-6);
}

#[test]
fn compare_writes_all_artifacts_deterministically() {
    let dir = TempDir::new().unwrap();
    let p = write_scenario(&dir, SHORT_BEARING);
    let out_dir = dir.path().join("out");
    let args = ["compare", p.to_str().unwrap(), "--out", out_dir.to_str().unwrap()];
    let out = run(&args);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let names = ["trajectory.csv", "controls.csv", "summary.json", "manifest.json", "trajectories.svg", "controls.svg"];
    let first: Vec<Vec<u8>> = names.iter().map(|n| fs::read(out_dir.join(n)).unwrap()).collect();

    let traj = String::from_utf8(first[0].clone()).unwrap();
    assert_eq!(
        traj.lines().next().unwrap(),
        "t,synthesized_x1,synthesized_x2,baseline_x1,baseline_x2"
    );
    assert_eq!(traj.lines().nth(1).unwrap(), "0,-1,2,-1,2");
    assert_eq!(traj.lines().count(), 1 + 201);
    let ctrl = String::from_utf8(first[1].clone()).unwrap();
    assert_eq!(
        ctrl.lines().next().unwrap(),
        "t,synthesized_u1,synthesized_u2,baseline_u1,baseline_u2"
    );
    let svg = String::from_utf8(first[4].clone()).unwrap();
    assert!(svg.starts_with("<svg") && !svg.contains("href"));

    let summary = read_json(&out_dir.join("summary.json"));
    let syn = summary["synthesized"]["total_cost"].as_f64().unwrap();
    let base = summary["baseline"]["total_cost"].as_f64().unwrap();
    assert!(syn < base, "{syn} vs {base}");
    assert_eq!(summary["cost_margin"].as_f64().unwrap(), base - syn);
    assert_eq!(summary["synthesized"]["gramian"]["singular_values"].as_array().unwrap().len(), 2);
    assert_eq!(summary["baseline"]["segments"].as_array().unwrap().len(), 2);
    assert!(summary["baseline"]["segments"][0]["status"].is_null());

    let out = run(&args);
    assert_eq!(out.status.code(), Some(0));
    for (n, before) in names.iter().zip(&first) {
        assert!(fs::read(out_dir.join(n)).unwrap() == *before, "{n} changed between identical runs");
    }
}

#[test]
fn manifest_replays_the_run() {
    let dir = TempDir::new().unwrap();
    let p = write_scenario(&dir, SHORT_BEARING);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let out = run(&["synthesize", p.to_str().unwrap(), "--out", a.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let manifest = read_json(&a.join("manifest.json"));
    assert_eq!(manifest["command"], "synthesize");
    assert_eq!(manifest["scenario"]["optimizer"]["mu0"].as_f64(), Some(0.1));
    assert_eq!(manifest["scenario"]["integrator"]["jacobian"], "analytic");
    let replay = a.join("manifest.json");
    let out = run(&["synthesize", replay.to_str().unwrap(), "--out", b.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for n in ["trajectory.csv", "controls.csv", "summary.json"] {
        assert!(fs::read(a.join(n)).unwrap() == fs::read(b.join(n)).unwrap(), "{n} differs on replay");
    }
}

#[test]
fn synthesize_reports_monitors_and_single_run_columns() {
    let dir = TempDir::new().unwrap();
    let text = SHORT_BEARING.replace("zeta = 50.0", "zeta_policy = \"decay\"\nbeta = 1.0");
    let p = write_scenario(&dir, &format!("{text}\n[output]\nsvg = false\n"));
    let out_dir = dir.path().join("out");
    let out = run(&["synthesize", p.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let traj = fs::read_to_string(out_dir.join("trajectory.csv")).unwrap();
    assert_eq!(traj.lines().next().unwrap(), "t,x1,x2");
    assert!(!out_dir.join("trajectories.svg").exists());
    let s = read_json(&out_dir.join("summary.json"));
    assert_eq!(s["controller"], "synthesized");
    assert_eq!(s["monitors"]["lyapunov_verdict"], true);
    assert!(s["monitors"]["decay_rate_estimate"].as_f64().unwrap() > 0.0);
}

#[test]
fn selftest_single_criterion() {
    let out = run(&["selftest", "--criterion", "2"]);
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("criterion  2 [PASS]"), "{stdout}");
    let out = run(&["selftest", "--criterion", "11"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_arguments_exit_with_status_2() {
    let out = run(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"]["kind"], "validation");
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

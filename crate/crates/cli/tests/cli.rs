use std::fs;
use std::process::{Command, Output};

use serde_json::Value;

const NEW_EXAMPLE: &str = r#"{
  "values": [{"v": 1.0, "prob": 0.5}, {"v": 1.0666666666666667, "prob": 0.5}],
  "efficiencies": [{"k": 3.0, "prob": 0.5}, {"k": 1000000.0, "prob": 0.5}],
  "profit_floor": 0.5
}"#;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_externreg"))
        .args(args)
        .env_remove("EXTERNREG_SEED")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn instance_file(dir: &tempfile::TempDir, text: &str) -> String {
    let path = dir.path().join("instance.json");
    fs::write(&path, text).unwrap();
    path.display().to_string()
}

#[test]
fn eval_zero_policy_has_full_externality() {
    let out = run(&[
        "eval",
        "--values",
        "uniform:0,10,5",
        "--effs",
        "point:2",
        "--policy",
        "y=0,c=0,p=0",
    ]);
    assert_eq!(code(&out), 0);
    let v = json(&out);
    assert_eq!(v["externality"].as_f64(), Some(1.0));
    assert_eq!(v["sale_prob"].as_f64(), Some(1.0));
}

#[test]
fn malformed_instance_is_a_parse_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = instance_file(&dir, "{\"values\": [");
    let out = run(&["cutoff", "--instance", &path]);
    assert_eq!(code(&out), 2);
    let bad_dist = run(&[
        "eval",
        "--values",
        "normal:0,1",
        "--effs",
        "point:1",
        "--policy",
        "y=0,c=0,p=0",
    ]);
    assert_eq!(code(&bad_dist), 2);
    assert_eq!(
        code(&run(&[
            "eval", "--values", "point:1", "--effs", "point:1", "--policy", "y=0,c=0"
        ])),
        2
    );
}

#[test]
fn missing_instance_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("absent.json").display().to_string();
    assert_eq!(code(&run(&["cutoff", "--instance", &path])), 5);
}

#[test]
fn cost_optimum_uses_the_largest_affordable_cost() {
    let dir = tempfile::tempdir().unwrap();
    let path = instance_file(&dir, NEW_EXAMPLE);
    let out = run(&["optimize", "--instance", &path, "--family", "cost"]);
    assert_eq!(code(&out), 0);
    let v = json(&out);
    assert!((v["policy"]["c"].as_f64().unwrap() - 0.5).abs() < 1e-12);
    assert_eq!(v["feasible"].as_bool(), Some(true));

    let cut = json(&run(&["cutoff", "--instance", &path]));
    assert!((cut["c_star"].as_f64().unwrap() - 0.5).abs() < 1e-12);
    assert!((cut["t"].as_f64().unwrap() - 3.0).abs() < 1e-12);
}

#[test]
fn fine_optimum_matches_the_closed_form_limit() {
    let dir = tempfile::tempdir().unwrap();
    let path = instance_file(&dir, NEW_EXAMPLE);
    let v = json(&run(&["optimize", "--instance", &path, "--family", "fine"]));
    let ext = v["outcome"]["externality"].as_f64().unwrap();
    let limit = (-0.2f64).exp() / 3.0;
    assert!(ext >= limit - 1e-9 && ext < limit + 1e-5, "{ext}");
}

#[test]
fn unreachable_floor_is_infeasible() {
    let dir = tempfile::tempdir().unwrap();
    let path = instance_file(&dir, NEW_EXAMPLE);
    let out = run(&[
        "optimize",
        "--instance",
        &path,
        "--floor",
        "5",
        "--family",
        "cost",
    ]);
    assert_eq!(code(&out), 3);
}

#[test]
fn degenerate_policies_exit_with_four() {
    let base = [
        "approx", "--values", "point:1", "--effs", "point:2", "--policy",
    ];
    let no_sale = run(&[&base[..], &["y=1,c=0,p=5"]].concat());
    assert_eq!(code(&no_sale), 4);
    let no_margin = run(&[&base[..], &["y=1,c=1,p=1"]].concat());
    assert_eq!(code(&no_margin), 4);
}

#[test]
fn approx_report_meets_the_guarantee() {
    let out = run(&[
        "approx",
        "--values",
        "uniform:0,10,6",
        "--effs",
        "uniform:0,4,5",
        "--policy",
        "y=2,c=0.3,p=4",
    ]);
    assert_eq!(code(&out), 0);
    let v = json(&out);
    assert!(v["profit_ratio"].as_f64().unwrap() >= 0.125 - 1e-12);
    assert!(v["externality_ratio"].as_f64().unwrap() <= 8.0 + 1e-9);
}

#[test]
fn sweep_writes_the_exact_header() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sweep.csv");
    let out = run(&[
        "sweep",
        "--fines",
        "0,1",
        "--costs",
        "0:1:3",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let text = fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("y,c,best_price,profit,externality"));
    assert_eq!(lines.count(), 6);
}

#[test]
fn sweep_to_unwritable_path_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("missing").join("sweep.csv");
    assert_eq!(code(&run(&["sweep", "--out", path.to_str().unwrap()])), 5);
}

#[test]
fn casebook_exit_codes() {
    let all = run(&["casebook"]);
    assert_eq!(code(&all), 0);
    let text = String::from_utf8(all.stdout).unwrap();
    assert!(text.lines().any(|l| l.starts_with("PASS")));
    assert!(!text.lines().any(|l| l.starts_with("FAIL")));

    assert_eq!(code(&run(&["casebook", "lower-bound", "--x", "9"])), 1);
    assert_eq!(code(&run(&["casebook", "no-such-case"])), 6);
}

#[test]
fn casebook_json_reports_one_object_per_case() {
    let out = run(&["casebook", "all", "--json"]);
    assert_eq!(code(&out), 0);
    let reports: Vec<Value> = String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(reports.len(), 4);
    assert!(reports
        .iter()
        .all(|r| r["all_pass"].as_bool() == Some(true)));
}

#[test]
fn fuzz_is_deterministic_and_honours_the_seed_variable() {
    let a = run(&["fuzz", "--trials", "30"]);
    let b = run(&["fuzz", "--trials", "30", "--sequential"]);
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);

    let seeded = Command::new(env!("CARGO_BIN_EXE_externreg"))
        .args(["fuzz", "--trials", "30"])
        .env("EXTERNREG_SEED", "7")
        .output()
        .unwrap();
    assert_eq!(json(&seeded)["seed"].as_u64(), Some(7));
    let flag = run(&["fuzz", "--trials", "30", "--seed", "7"]);
    assert_eq!(seeded.stdout, flag.stdout);
}

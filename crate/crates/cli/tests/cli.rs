use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn obskit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_obskit"))
        .args(args)
        .env_remove("OBSKIT_SEED")
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn error_json(out: &Output) -> Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr
        .lines()
        .find(|l| l.starts_with("{\"error\""))
        .unwrap_or_else(|| panic!("no error JSON in {stderr}"));
    serde_json::from_str(line).unwrap()
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

fn pairs_csv(n: usize) -> String {
    let mut s = String::from("pair_id,diff,cov_age\n");
    for i in 0..n {
        // deterministic, mostly positive, some ties and a zero
        let d = ((i * 37 % 23) as f64 - 6.0) / 4.0;
        s.push_str(&format!("p{i},{d},{}\n", i % 17));
    }
    s
}

#[test]
fn mcnemar_hammond_example() {
    let v = stdout_json(&obskit(&[
        "sens", "mcnemar", "--discordant", "122", "--treated-events", "110", "--gamma", "4",
    ]));
    let p = v["p_upper"].as_f64().unwrap();
    assert!((p - 0.0036).abs() < 0.0005, "{p}");
    assert_eq!(v["method"], "normal-approx-corrected");
}

#[test]
fn amplify_example() {
    let v = stdout_json(&obskit(&["amplify", "--lambda", "9.9", "--delta", "9.9"]));
    assert!((v["gamma"].as_f64().unwrap() - 5.0).abs() < 0.01);
}

#[test]
fn truncated_all_above_tau() {
    let v = stdout_json(&obskit(&[
        "combine", "truncated", "--tau", "0.2", "--p", "0.5", "--p", "0.9",
    ]));
    assert_eq!(v["combined_p"].as_f64(), Some(1.0));
    assert_eq!(v["method"], "truncated-product");
    assert_eq!(v["w"].as_f64(), Some(1.0));
}

#[test]
fn gamma_grid_is_monotone() {
    let dir = tempfile::tempdir().unwrap();
    let f = write(dir.path(), "pairs.csv", &pairs_csv(80));
    for method in ["normal", "exact"] {
        let v = stdout_json(&obskit(&[
            "sens", "wilcoxon", "--pairs", &f, "--gamma-grid", "1:4:0.25", "--method", method,
        ]));
        let ps: Vec<f64> = v["results"]
            .as_array()
            .unwrap()
            .iter()
            .map(|r| r["p_upper"].as_f64().unwrap())
            .collect();
        assert_eq!(ps.len(), 13);
        for w in ps.windows(2) {
            assert!(w[1] >= w[0], "{method}: {ps:?}");
        }
    }
}

#[test]
fn text_format_six_digits() {
    let out = obskit(&["--format", "text", "design-sens", "--delta", "0.5"]);
    assert!(out.status.success());
    let s = String::from_utf8(out.stdout).unwrap();
    assert!(s.contains("gamma_tilde: 3.17101\n"), "{s}");
}

#[test]
fn unknown_flag_exits_2_with_error_json() {
    let out = obskit(&["amplify", "--lamda", "2"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"]["exit_code"], 2);
}

#[test]
fn malformed_file_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let f = write(dir.path(), "bad.csv", "pair_id,diff\np1,0.5\np2,abc\n");
    let out = obskit(&["sens", "wilcoxon", "--pairs", &f]);
    assert_eq!(out.status.code(), Some(2));
    let e = error_json(&out);
    assert_eq!(e["error"]["kind"], "parse");
    assert!(e["error"]["message"].as_str().unwrap().contains("row:2"));
}

#[test]
fn separation_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = String::from("id,treated,cov_x\n");
    for i in 0..10 {
        s.push_str(&format!("s{i},{},{}\n", u8::from(i >= 5), i));
    }
    let f = write(dir.path(), "subjects.csv", &s);
    let out = obskit(&["match", "--subjects", &f, "--metric", "propensity-abs-diff"]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_json(&out)["error"]["kind"], "separation");
}

#[test]
fn match_then_balance_with_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = String::from("id,treated,cov_x,cov_z\n");
    for i in 0..30 {
        let t = u8::from(i % 3 == 0);
        s.push_str(&format!("s{i},{t},{},{}\n", (i * 7 % 11) as f64 + f64::from(t), i % 4));
    }
    let f = write(dir.path(), "subjects.csv", &s);
    let out_dir = dir.path().join("run");
    let out_s = out_dir.to_string_lossy().into_owned();
    let v = stdout_json(&obskit(&["--out", &out_s, "match", "--subjects", &f]));
    assert_eq!(v["matching"]["pairs"].as_array().unwrap().len(), 10);
    let manifest: Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "match");
    assert_eq!(manifest["inputs"][0]["sha256"].as_str().unwrap().len(), 64);

    let matches = out_dir.join("matches.csv").to_string_lossy().into_owned();
    let b = stdout_json(&obskit(&["balance", "--subjects", &f, "--matches", &matches]));
    assert_eq!(b["n_matched"], 10);
    assert_eq!(b["rows"].as_array().unwrap().len(), 2);
}

#[test]
fn manifest_on_stderr_without_out() {
    let out = obskit(&["design-sens", "--delta", "1"]);
    let stderr = String::from_utf8_lossy(&out.stderr);
    let m: Value = serde_json::from_str(stderr.lines().next().unwrap()).unwrap();
    assert_eq!(m["manifest"]["command"], "design-sens");
    assert!(m["manifest"]["timestamp"].as_str().unwrap().ends_with('Z'));
}

#[test]
fn simulate_reproducible_across_threads() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(
        dir.path(),
        "spec.toml",
        "reps = 40\nn_pairs = 90\noutcomes = 5\neffects = [0.4]\n",
    );
    let mut csvs = Vec::new();
    for threads in ["1", "4"] {
        let out = dir.path().join(format!("t{threads}"));
        let out_s = out.to_string_lossy().into_owned();
        let o = obskit(&[
            "--seed", "9", "--threads", threads, "--out", &out_s, "simulate", "fig2", "--spec", &spec, "--svg",
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(out.join("plot.svg").exists());
        let meta: Value =
            serde_json::from_str(&std::fs::read_to_string(out.join("meta.json")).unwrap()).unwrap();
        assert_eq!(meta["spec"]["seed"], 9);
        assert_eq!(meta["spec"]["gamma"], 3.0);
        csvs.push(std::fs::read(out.join("curve.csv")).unwrap());
    }
    assert_eq!(csvs[0], csvs[1]);
}

#[test]
fn seed_from_environment() {
    let run = |env_seed: Option<&str>| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_obskit"));
        c.args(["power", "--pairs", "30", "--delta", "0.3", "--gamma", "1", "--reps", "200"]);
        match env_seed {
            Some(s) => c.env("OBSKIT_SEED", s),
            None => c.env_remove("OBSKIT_SEED"),
        };
        let out = c.output().unwrap();
        let stderr = String::from_utf8_lossy(&out.stderr).into_owned();
        let m: Value = serde_json::from_str(stderr.lines().next().unwrap()).unwrap();
        (stdout_json(&out), m["manifest"]["seed"].clone())
    };
    let (a, seed_a) = run(Some("77"));
    let (b, _) = run(Some("77"));
    assert_eq!(a, b);
    assert_eq!(seed_a, 77);
    let explicit = stdout_json(&obskit(&[
        "--seed", "77", "power", "--pairs", "30", "--delta", "0.3", "--gamma", "1", "--reps", "200",
    ]));
    assert_eq!(a, explicit);
}

#[test]
fn p_file_and_holm() {
    let dir = tempfile::tempdir().unwrap();
    let f = write(dir.path(), "ps.csv", "label,p\nx,0.01\ny,0.04\nz,0.03\n");
    let v = stdout_json(&obskit(&["combine", "holm", "--p-file", &f]));
    assert_eq!(v["rejected_labels"], serde_json::json!(["x"]));
    let v = stdout_json(&obskit(&["combine", "bh", "--p-file", &f]));
    assert_eq!(v["rejected_labels"], serde_json::json!(["x", "y", "z"]));
}

#[test]
fn order_test_stops_at_first_failure() {
    let v = stdout_json(&obskit(&[
        "order-test", "--node", "a", "--node", "b,c", "--node", "d", "--pv", "a=0.01", "--pv", "b=0.03",
        "--pv", "c=0.2", "--pv", "d=0.001",
    ]));
    assert_eq!(v["rejected_labels"], serde_json::json!(["a", "b"]));
    assert_eq!(v["decisions"][2]["tested"], false);
}

#[test]
fn subgroup_commands_run() {
    let dir = tempfile::tempdir().unwrap();
    let f = write(dir.path(), "pairs.csv", &pairs_csv(120));
    let v = stdout_json(&obskit(&["tree-subgroups", "--pairs", &f, "--gamma", "1.2"]));
    assert!(v["test"]["combined"]["combined_p"].as_f64().is_some());
    let v = stdout_json(&obskit(&["--seed", "4", "split-select", "subgroups", "--pairs", &f]));
    assert!(v["n_analysis"].as_u64().unwrap() > 0);
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_ptfh"));
    c.env_remove("PTFH_SEED");
    c
}

fn fixture() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/fixture.csv")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn dir_contents(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn error_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(text.trim()).unwrap_or_else(|_| panic!("stderr is not JSON: {text}"))
}

#[test]
fn fit_writes_summary_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("fit");
    let o = run(&["fit", "--data", fixture().to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = fs::read_to_string(out.join("fit_summary.csv")).unwrap();
    assert!(summary.starts_with("model,lambda,A,beta0,beta1,loglik,aic"));
    assert_eq!(summary.lines().count(), 2);
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "fit");
    let outputs = manifest["outputs"].as_array().unwrap();
    assert!(outputs.iter().any(|o| o["name"] == "profile.csv"));
    assert!(manifest["config"].get("threads").is_none());
}

fn predict_args<'a>(data: &'a str, out: &'a str, threads: &'a str) -> Vec<&'a str> {
    vec!["--threads", threads, "predict", "--data", data, "--out", out, "--boot", "16", "--mc-samples", "1000", "--seed", "5"]
}

#[test]
fn outputs_do_not_depend_on_thread_count() {
    let tmp = tempfile::tempdir().unwrap();
    let data = fixture();
    let data = data.to_str().unwrap();
    let mut results = Vec::new();
    for (i, threads) in ["1", "2", "3"].iter().enumerate() {
        let out = tmp.path().join(format!("p{i}"));
        let o = run(&predict_args(data, out.to_str().unwrap(), threads));
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        results.push(dir_contents(&out));
    }
    assert_eq!(results[0], results[1]);
    assert_eq!(results[0], results[2]);
}

#[test]
fn seed_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let data = fixture();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let common = ["mse", "--data", data.to_str().unwrap(), "--boot", "10", "--mc-samples", "1000"];
    let o = bin().args(common).args(["--out", a.to_str().unwrap()]).env("PTFH_SEED", "11").output().unwrap();
    assert!(o.status.success());
    let o = bin().args(common).args(["--out", b.to_str().unwrap(), "--seed", "11"]).output().unwrap();
    assert!(o.status.success());
    assert_eq!(dir_contents(&a), dir_contents(&b));

    let o = bin().args(common).args(["--out", b.to_str().unwrap()]).env("PTFH_SEED", "eleven").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn predict_without_bootstrap_has_empty_rmse() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("p");
    let o = run(&["predict", "--data", fixture().to_str().unwrap(), "--out", out.to_str().unwrap(), "--boot", "0"]);
    assert!(o.status.success());
    let text = fs::read_to_string(out.join("predictions.csv")).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().ends_with(",rmse"));
    assert!(lines.all(|l| l.ends_with(',')));
}

#[test]
fn diagnose_and_simulate_are_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let data = fixture();
    let cases: Vec<Vec<&str>> = vec![
        vec!["diagnose", "--data", data.to_str().unwrap(), "--boot", "100"],
        vec!["simulate", "--study", "pred", "--reps", "4", "--lambda", "0.4,1.0", "--effect", "t5"],
        vec!["simulate", "--study", "mse", "--r1", "10", "--r2", "2", "--boot", "8", "--mc-samples", "1000", "--lambda", "0.2", "--d-mode", "both"],
    ];
    for (k, args) in cases.iter().enumerate() {
        let mut seen = Vec::new();
        for threads in ["1", "2"] {
            let out = tmp.path().join(format!("c{k}t{threads}"));
            let mut full = vec!["--threads", threads];
            full.extend(args.iter().copied());
            full.extend(["--out", out.to_str().unwrap()]);
            let o = run(&full);
            assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
            seen.push(dir_contents(&out));
        }
        assert_eq!(seen[0], seen[1], "{args:?}");
    }
    let names: Vec<String> = dir_contents(&tmp.path().join("c0t1")).into_iter().map(|f| f.0).collect();
    for f in ["curve.csv", "diagnostics.csv", "residuals.csv", "manifest.json"] {
        assert!(names.iter().any(|n| n == f), "{f} missing");
    }
    let table = fs::read_to_string(tmp.path().join("c2t1/mse_study.csv")).unwrap();
    // 2 D modes x 2 estimators x 3 stats x 5 groups
    assert_eq!(table.lines().count(), 1 + 60);
}

#[test]
fn usage_errors_exit_2() {
    let o = run(&["fit", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_json(&o)["error"]["kind"], "usage");

    let o = run(&["fit", "--data", fixture().to_str().unwrap(), "--lambda-max", "-1", "--out", "/tmp/unused"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_json(&o)["error"]["exit_code"], 2);
}

#[test]
fn data_errors_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["fit", "--data", tmp.path().join("none.csv").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));

    let bad = tmp.path().join("bad.csv");
    fs::write(&bad, "area_id,y,x1,D\na,1.5,1,0.2\nb,-3,2,0.2\nc,2.0,3,0.2\n").unwrap();
    let o = run(&["fit", "--data", bad.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    let e = error_json(&o);
    assert_eq!(e["error"]["kind"], "row");
    assert!(e["error"]["message"].as_str().unwrap().contains('2'));
}

//! Drives the `segqa` binary end to end on a tiny benchmark.

use std::ffi::OsStr;
use std::fmt::Debug;
use std::path::Path;
use std::process::{Command, Output};

fn segqa<S: AsRef<OsStr>>(args: &[S]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_segqa")).args(args).output().unwrap()
}

fn ok<S: AsRef<OsStr> + Debug>(args: &[S]) -> String {
    let out = segqa(args);
    assert!(
        out.status.success(),
        "segqa {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    segqa(args).status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const QUICK: &str = "
[benchmark]
scale = 0.2
grid = { size = 32 }

[qa]
dae = { epochs = 2 }
vae = { epochs = 2 }
direct = { epochs = 2 }
regress = { bagging_estimators = 10, forest_trees = 10, boosting_estimators = 10 }
";

#[test]
fn full_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name);
    std::fs::write(p("quick.toml"), QUICK).unwrap();
    let cfg = p("quick.toml");
    let common = ["--config", s(&cfg), "--seed", "5"];
    let with = |rest: &[&str]| -> Vec<String> { common.iter().chain(rest).map(|a| a.to_string()).collect() };

    ok(&with(&["phantom", "generate", "--out", s(&p("bench"))]));
    let manifest = std::fs::read_to_string(p("bench/manifest.json")).unwrap();
    assert!(manifest.contains("\"QA_TEST\""));
    let case = "common-000";
    let vol = p(&format!("bench/cases/{case}.vol"));
    let lab = p(&format!("bench/cases/{case}.lab"));

    ok(&with(&["perturb", "--op", "poisson", "--n", "4", s(&vol), s(&p("noisy.vol"))]));
    ok(&with(&["perturb", "--op", "contrast", "--delta", "0.2", "--labels", s(&lab), s(&vol), s(&p("ce.vol"))]));
    ok(&with(&[
        "perturb", "--op", "flip", "--axis", "x", "--labels", s(&lab), "--labels-out", s(&p("flip.lab")), s(&vol), s(&p("flip.vol")),
    ]));
    assert!(p("flip.lab").exists() && p("flip.vol").exists());

    ok(&with(&["train", "dae", "--data", s(&p("bench")), "--out", s(&p("dae.bin"))]));
    assert!(std::fs::metadata(p("dae.bin")).unwrap().len() > 0);

    let out = ok(&with(&["commission", "--data", s(&p("bench")), "--bank", "2", "--out", s(&p("bundles"))]));
    assert!(out.contains("atlas-00") && out.contains("robust-00"), "{out}");
    let bundle = p("bundles/atlas-00.sqab");

    ok(&with(&["segment", "--data", s(&p("bench")), "--profile", "atlas-00", "--case", case, "--out", s(&p("seg.lab"))]));
    let json = ok(&with(&[
        "predict", "--bundle", s(&bundle), "--volume", s(&vol), "--segmentation", s(&p("seg.lab")), "--case-id", case,
    ]));
    let prediction: serde_json::Value = serde_json::from_str(&json).unwrap();
    let y = prediction["y_pred"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&y));
    assert_eq!(prediction["flag"], if y >= 0.4 { "GOOD" } else { "POOR" });

    ok(&with(&["features", "--data", s(&p("bench")), "--bundle", s(&bundle), "--split", "qa-train", "--out", s(&p("train.csv"))]));
    ok(&with(&["features", "--data", s(&p("bench")), "--bundle", s(&bundle), "--out", s(&p("test.csv"))]));
    ok(&with(&["regress", "fit", "--method", "ols", "--features", s(&p("train.csv")), "--out", s(&p("ols.bin"))]));
    ok(&with(&["regress", "predict", "--model", s(&p("ols.bin")), "--features", s(&p("test.csv")), "--out", s(&p("pred.csv"))]));
    let preds = std::fs::read_to_string(p("pred.csv")).unwrap();
    assert!(preds.starts_with("case_id,y_pred\n"));

    // A stream well below the baseline: repeat a low score past one window.
    let mut stream = String::from("case_id,y_pred\n");
    for i in 0..60 {
        stream += &format!("c{i},0.05\n");
    }
    std::fs::write(p("stream.csv"), stream).unwrap();
    let monitor_cfg = p("monitor.toml");
    std::fs::write(&monitor_cfg, "[monitor]\nwindow = 10\n").unwrap();
    let out = segqa(&["--config", s(&monitor_cfg), "monitor", "--bundle", s(&bundle), "--predictions", s(&p("stream.csv"))]);
    assert!(out.status.success());
    let reports: Vec<serde_json::Value> = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(reports.len(), 51);
    assert!(reports.iter().all(|r| r["alarm"] == true));
    assert!(String::from_utf8_lossy(&out.stderr).contains("drift alarm"));

    ok(&with(&["benchmark", "run", "--data", s(&p("bench")), "--profile", "robust-00", "--out", s(&p("bench.json"))]));
    let reports: Vec<serde_json::Value> = serde_json::from_str(&std::fs::read_to_string(p("bench.json")).unwrap()).unwrap();
    assert_eq!(reports[0]["profile_id"], "robust-00");

    let out = ok(&with(&["evaluate", "--data", s(&p("bench")), "--bundles", s(&p("bundles")), "--out", s(&p("summary.json"))]));
    assert!(out.starts_with("2 profiles"), "{out}");
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(p("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["method_mean_mae"].as_object().unwrap().len(), 7);
}

#[test]
fn invalid_input_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope");
    assert_eq!(code(&["evaluate", "--data", s(&missing), "--bundles", s(&missing), "--out", "x.json"]), 2);
    assert_eq!(code(&["frobnicate"]), 2);

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[qa]\nthreshhold = 0.5\n").unwrap();
    assert_eq!(code(&["--config", s(&bad), "phantom", "generate", "--out", s(&missing)]), 2);

    let vol = dir.path().join("v.vol");
    let v = segqa_core::grid::Volume::filled([4; 3], [1.0; 3], 0.5).unwrap();
    segqa_core::grid::write_volume(&v, &vol).unwrap();
    assert_eq!(code(&["perturb", "--op", "poisson", "--n=-1", s(&vol), s(&dir.path().join("o.vol"))]), 2);
    assert_eq!(code(&["perturb", "--op", "contrast", s(&vol), s(&dir.path().join("o.vol"))]), 2);
    assert_eq!(code(&["segment", "--data", s(&missing), "--profile", "nobody", "--case", "x", "--out", "y"]), 2);
    assert_eq!(code(&["--help"]), 0);
}

#[test]
fn singular_fit_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("collinear.csv");
    let mut text = String::from("case_id,domain,x_appr,x_intensity,x_noise,x_shape,dsc_true\n");
    for i in 0..10 {
        let a = i as f64 / 10.0;
        text += &format!("c{i},COMMON,{a},{a},{a},{a},0.{i}\n");
    }
    std::fs::write(&csv, text).unwrap();
    let cfg = dir.path().join("exact.toml");
    std::fs::write(&cfg, "[qa]\nregress = { ridge = 0.0 }\n").unwrap();
    let out = dir.path().join("ols.bin");
    let args = ["--config", s(&cfg), "regress", "fit", "--method", "ols", "--features", s(&csv), "--out", s(&out)];
    assert_eq!(code(&args), 3);
}

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn sramdp(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sramdp"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn gen_data_and_perturb() {
    let dir = tempfile::tempdir().unwrap();
    let out = sramdp(
        &[
            "--seed", "4", "gen-data", "--count", "200", "--out", "data.csv",
        ],
        dir.path(),
    );
    assert!(out.status.success());
    let data = fs::read_to_string(dir.path().join("data.csv")).unwrap();
    assert_eq!(data.lines().next(), Some("value"));
    assert_eq!(data.lines().count(), 201);

    fs::write(
        dir.path().join("cfg.json"),
        r#"{"failure":{"pattern":"F2","epsilon":"ln3"}}"#,
    )
    .unwrap();
    let out = sramdp(
        &["--config", "cfg.json", "perturb", "--input", "data.csv"],
        dir.path(),
    );
    assert!(out.status.success());
    let text = stdout(&out);
    assert_eq!(text.lines().next(), Some("input,output,pattern_index"));
    assert_eq!(text.lines().count(), 201);
}

#[test]
fn recover_writes_a_distribution() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("obs.csv"), "output\n1\n2\n2\n3\n").unwrap();
    fs::write(dir.path().join("prof.json"), "[0.0, 0.5]").unwrap();
    for algo in ["em", "clr"] {
        let out = sramdp(
            &[
                "recover",
                "--algo",
                algo,
                "--f-profile",
                "prof.json",
                "--obs",
                "obs.csv",
                "--omega",
                "0:3",
            ],
            dir.path(),
        );
        assert!(out.status.success(), "{algo}");
        let text = stdout(&out);
        let total: f64 = text
            .lines()
            .skip(1)
            .map(|l| l.split(',').nth(1).unwrap().parse::<f64>().unwrap())
            .sum();
        assert!((total - 1.0).abs() < 1e-9);
        assert_eq!(text.lines().next(), Some("value,probability"));
    }
}

#[test]
fn pmf_calibrate_and_ul() {
    let dir = tempfile::tempdir().unwrap();
    let out = sramdp(&["pmf", "--f", "0.5"], dir.path());
    assert_eq!(
        stdout(&out),
        "a,probability\n-1,1.25e-1\n0,7.5e-1\n1,1.25e-1\n"
    );

    let out = sramdp(
        &["calibrate", "--epsilon", "1.49", "--cells", "4"],
        dir.path(),
    );
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((v["f"].as_f64().unwrap() - 0.8157).abs() < 0.001);
    assert_eq!(v["nearest_voltage"].as_f64(), Some(0.5));

    let out = sramdp(&["ul", "--pattern", "F3", "--epsilon", "ln(3)"], dir.path());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["ul"].as_f64().unwrap() > 50.0);
}

#[test]
fn experiment_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("cfg.json"),
        r#"{"failure":{"voltage":0.5},"recovery":["em","clr"]}"#,
    )
    .unwrap();
    let out = sramdp(
        &["--config", "cfg.json", "--out-dir", "out", "run-experiment"],
        dir.path(),
    );
    assert!(out.status.success());
    for name in ["records.csv", "histogram.csv", "result.json"] {
        assert!(dir.path().join("out").join(name).exists(), "{name}");
    }
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["z"], 4);

    let out = sramdp(
        &["--config", "cfg.json", "privacy-report", "--alpha", "1.01"],
        dir.path(),
    );
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["droop"]["bound"].as_f64().unwrap() <= 0.08);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    // missing config
    assert_eq!(
        sramdp(&["run-experiment"], dir.path()).status.code(),
        Some(2)
    );
    // both a pattern and a voltage
    fs::write(
        dir.path().join("bad.json"),
        r#"{"failure":{"pattern":"F1","epsilon":1,"voltage":0.5}}"#,
    )
    .unwrap();
    assert_eq!(
        sramdp(&["--config", "bad.json", "run-experiment"], dir.path())
            .status
            .code(),
        Some(2)
    );
    // voltage outside the calibrated range
    fs::write(
        dir.path().join("low.json"),
        r#"{"failure":{"voltage":0.3}}"#,
    )
    .unwrap();
    assert_eq!(
        sramdp(&["--config", "low.json", "run-experiment"], dir.path())
            .status
            .code(),
        Some(2)
    );
    // observations impossible under the profile
    fs::write(dir.path().join("obs.csv"), "3\n").unwrap();
    fs::write(dir.path().join("prof.json"), "[0.0, 0.0]").unwrap();
    let out = sramdp(
        &[
            "recover",
            "--algo",
            "em",
            "--f-profile",
            "prof.json",
            "--obs",
            "obs.csv",
            "--omega",
            "0:1",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(3));
    // EM stopped before converging
    fs::write(dir.path().join("obs2.csv"), "0\n1\n1\n").unwrap();
    fs::write(dir.path().join("half.json"), "[0.5, 0.5]").unwrap();
    let out = sramdp(
        &[
            "recover",
            "--algo",
            "em",
            "--f-profile",
            "half.json",
            "--obs",
            "obs2.csv",
            "--delta",
            "1e-12",
            "--max-iter",
            "1",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(3));
}

use std::path::Path;
use std::process::Command;

const SMALL: [&str; 6] = [
    "--set",
    "family.n=2",
    "--set",
    "family.delta=[1,0]",
    "--set",
    "family.m=16",
];

fn massdirac(dir: &Path, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_massdirac"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn with_small<'a>(args: &[&'a str]) -> Vec<&'a str> {
    let mut v = args.to_vec();
    v.extend(SMALL);
    v
}

#[test]
fn sweep_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let args = with_small(&["sweep", "--set", "t_schedule=[0.4,0.2,0.1]"]);
    let mut runs = Vec::new();
    for stem in ["a", "b"] {
        let mut a = args.clone();
        a.extend(["-o", stem]);
        let out = massdirac(dir.path(), &a);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let csv = std::fs::read(dir.path().join(format!("{stem}.csv"))).unwrap();
        let json = std::fs::read_to_string(dir.path().join(format!("{stem}.json"))).unwrap();
        runs.push((csv, json.replace(&format!("\"{stem}\""), "\"STEM\"")));
    }
    assert_eq!(runs[0].0, runs[1].0);
    let meta: serde_json::Value = serde_json::from_str(&runs[0].1).unwrap();
    assert_eq!(meta["command"], "sweep");
    assert_eq!(meta["config"]["family"]["m"], 16);
    assert_eq!(meta["config_hash"].as_str().unwrap().len(), 64);
    let text = String::from_utf8(runs[0].0.clone()).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.starts_with("t,gap,invertible,alpha_norm,eig_1,eig_2,hermitian_deviation,residual,status\n"));
}

#[test]
fn config_file_and_overrides_combine() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"family": {"n": 2, "delta": [1, 1], "m": 16}, "ko": {"max_n": 9}}"#;
    std::fs::write(dir.path().join("c.json"), cfg).unwrap();
    let out = massdirac(dir.path(), &["config", "-c", "c.json", "--set", "family.t=0.25"]);
    assert!(out.status.success());
    let resolved: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(resolved["family"]["delta"], serde_json::json!([1, 1]));
    assert_eq!(resolved["family"]["t"], 0.25);
    assert_eq!(resolved["ko"]["max_n"], 9);

    let out = massdirac(dir.path(), &["ko", "-c", "c.json", "-o", "ko"]);
    assert!(out.status.success());
    let table = std::fs::read_to_string(dir.path().join("ko.csv")).unwrap();
    assert_eq!(table.lines().count(), 11);
    assert!(table.contains("\n8,Z\n9,Z/2Z\n"));
}

#[test]
fn exit_codes_separate_input_and_solver_problems() {
    let dir = tempfile::tempdir().unwrap();
    let bad = massdirac(dir.path(), &["sweep", "--set", "family.bogus=1"]);
    assert_eq!(bad.status.code(), Some(2));
    let missing = massdirac(dir.path(), &["sweep", "-c", "absent.json"]);
    assert_eq!(missing.status.code(), Some(2));
    // four samples are too few for a rational fit
    let fit = massdirac(dir.path(), &with_small(&["polefit", "--set", "t_schedule=[0.4,0.3,0.2,0.1]"]));
    assert_eq!(fit.status.code(), Some(2), "{}", String::from_utf8_lossy(&fit.stderr));
    // the flat trivial torus has a kernel
    let flat = massdirac(dir.path(), &["mass", "--set", "family.n=2", "--set", "family.delta=[0,0]", "--set", "family.m=16"]);
    assert_eq!(flat.status.code(), Some(3), "{}", String::from_utf8_lossy(&flat.stderr));
}

#[test]
fn polefit_reads_an_earlier_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let rows: String = [0.05, 0.07, 0.1, 0.14, 0.2, 0.28, 0.4]
        .iter()
        .map(|t: &f64| format!("{t},1,true,{},ok\n", 3.0 / (t * t) + 1.0))
        .collect();
    std::fs::write(dir.path().join("s.csv"), format!("t,gap,invertible,alpha_norm,status\n{rows}")).unwrap();
    let out = massdirac(dir.path(), &["polefit", "--set", "polefit.input=s.csv", "-o", "fit"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let meta: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("fit.json")).unwrap()).unwrap();
    assert_eq!(meta["summary"]["detected"], true);
    assert_eq!(meta["summary"]["order"], 2);
    assert!(meta["summary"]["location"].as_f64().unwrap().abs() < 1e-3);
}

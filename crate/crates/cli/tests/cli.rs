use std::path::Path;
use std::process::{Command, Output};

fn ugx(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ugx"))
        .args(args)
        .arg("--dir")
        .arg(dir)
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn gen_k4(dir: &Path) {
    let out = ugx(dir, &["gen", "--n", "4", "--d", "3", "--k", "2", "--noise", "0", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["graph.json", "instance.json", "plant.json", "sdp.json"] {
        assert!(dir.join(f).exists(), "{f} missing");
    }
}

#[test]
fn noiseless_k4_rounds_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    gen_k4(dir.path());
    for mode in ["derand", "mc"] {
        let out = ugx(dir.path(), &["round", "--mode", mode, "--trials", "4", "--seed", "3"]);
        assert_eq!(out.status.code(), Some(0));
        let v = json(&out);
        assert_eq!(v["satisfied"], 1.0);
        assert_eq!(v["failed"], false);
    }
    let brute = json(&ugx(dir.path(), &["brute"]));
    assert_eq!(brute["value"], 1.0);
}

#[test]
fn spectral_on_k4() {
    let dir = tempfile::tempdir().unwrap();
    gen_k4(dir.path());
    let v = json(&ugx(dir.path(), &["spectral"]));
    assert!((v["lambda2"].as_f64().unwrap() - 4.0 / 3.0).abs() < 1e-12);
    assert!((v["h"].as_f64().unwrap() - 4.0 / 3.0).abs() < 1e-12);
    assert_eq!(v["cheeger_holds"], true);
}

#[test]
fn radius_out_of_range_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    gen_k4(dir.path());
    let out = ugx(dir.path(), &["round", "--R", "0.3"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
}

#[test]
fn bad_flags_and_files_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(ugx(dir.path(), &["round", "--bogus"]).status.code(), Some(1));
    assert_eq!(ugx(dir.path(), &["spectral"]).status.code(), Some(1));
    std::fs::write(dir.path().join("graph.json"), "{not json").unwrap();
    let out = ugx(dir.path(), &["spectral"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("graph.json"));
    let out = ugx(dir.path(), &["gen", "--n", "5", "--d", "3", "--k", "2"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn failure_gate_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let out = ugx(
        dir.path(),
        &["gen", "--n", "16", "--d", "3", "--k", "3", "--noise", "0.2", "--plant-weight", "0.6", "--seed", "2"],
    );
    assert_eq!(out.status.code(), Some(0));
    // A huge expansion pushes the gate to demand every vertex be decided.
    let out = ugx(dir.path(), &["round", "--h", "1e9", "--trials", "2"]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(json(&out)["failed"], true);
}

#[test]
fn sdp_tools_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let out = ugx(dir.path(), &["gen", "--n", "12", "--d", "3", "--k", "3", "--noise", "0.1", "--plant-weight", "0.9", "--seed", "4"]);
    assert_eq!(out.status.code(), Some(0));

    let v = json(&ugx(dir.path(), &["verify-sdp"]));
    assert_eq!(v["feasibility"]["pass"], true);
    assert!(v["epsilon"].as_f64().unwrap() > 0.0);

    let out = ugx(dir.path(), &["normalize"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json(&out)["pass"], true);
    assert!(dir.path().join("normalized.json").exists());

    let csv = String::from_utf8(ugx(dir.path(), &["emd"]).stdout).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("u,v,emd"));
    assert_eq!(lines.count(), 144);
    let avg = json(&ugx(dir.path(), &["emd", "--average"]));
    assert_eq!(avg["exhaustive"], true);

    let a = ugx(dir.path(), &["monitor", "--trials", "300", "--seed", "5"]);
    let b = ugx(dir.path(), &["monitor", "--trials", "300", "--seed", "5"]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    assert!(String::from_utf8_lossy(&a.stdout).starts_with("name,estimate,stderr,bound,pass\n"));

    let a = ugx(dir.path(), &["round", "--seed", "9", "--trials", "8"]);
    let b = ugx(dir.path(), &["round", "--seed", "9", "--trials", "8"]);
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn experiment_rows_are_self_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let out = ugx(
        dir.path(),
        &["experiment", "--n", "40", "--d", "4", "--k", "3", "--noise", "0,0.05", "--trials", "8", "--instances", "2"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("results.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next(),
        Some("n,d,k,noise,eps_sdp,lambda2,h,avg_emd,R,satisfied_best,bound_theorem,pass")
    );
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(str::to_owned).collect()).collect();
    assert_eq!(rows.len(), 4);
    for row in rows {
        let f = |i: usize| row[i].parse::<f64>().unwrap();
        let (eps, h, r, satisfied, bound) = (f(4), f(6), f(8), f(9), f(10));
        assert_eq!(bound, 1.0 - (100.0 / (h * r) + 64.0) * eps);
        assert_eq!(row[11] == "true", satisfied >= bound);
    }
}

use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

fn prefctl(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_prefctl"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn csv_files(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.is_dir() {
            out.extend(csv_files(&p));
        } else if p.extension().is_some_and(|e| e == "csv") {
            out.push(p);
        }
    }
    out.sort();
    out
}

#[test]
fn list_builtins() {
    let tmp = tempfile::tempdir().unwrap();
    let o = prefctl(&["list-builtins"], tmp.path());
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    let names: Vec<&str> = text.lines().filter_map(|l| l.split_whitespace().next()).collect();
    assert_eq!(names, ["quadratic-c01", "quadratic-c07", "quadratic-algebraic", "thermal"]);
}

#[test]
fn runs_are_byte_identical_and_verifiable() {
    let tmp = tempfile::tempdir().unwrap();
    let a = prefctl(&["run", "quadratic-c01", "--replicas", "2", "--seed", "7", "--out", "a"], tmp.path());
    assert_eq!(code(&a), 0, "{}", String::from_utf8_lossy(&a.stderr));
    let b = prefctl(&["run", "quadratic-c01", "--replicas", "2", "--seed", "7", "--out", "b"], tmp.path());
    assert_eq!(code(&b), 0);
    let (da, db) = (tmp.path().join("a/quadratic-c01"), tmp.path().join("b/quadratic-c01"));
    let (fa, fb) = (csv_files(&da), csv_files(&db));
    assert_eq!(fa.len(), 2 + 4);
    for (x, y) in fa.iter().zip(&fb) {
        assert_eq!(x.strip_prefix(&da).unwrap(), y.strip_prefix(&db).unwrap());
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap(), "{}", x.display());
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(da.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seeds"], serde_json::json!([7, 8]));

    let v = prefctl(&["verify", da.to_str().unwrap(), "--lemma", "5"], tmp.path());
    assert_eq!(code(&v), 0);
    let text = String::from_utf8(v.stdout).unwrap();
    assert!(text.contains("lemma5") && text.contains("pass"), "{text}");

    let bad = prefctl(&["verify", da.to_str().unwrap(), "--lemma", "9"], tmp.path());
    assert_eq!(code(&bad), 2);
    let missing = prefctl(&["verify", "nowhere"], tmp.path());
    assert_eq!(code(&missing), 2);
}

#[test]
fn unknown_builtin_exits_2_with_suggestions() {
    let tmp = tempfile::tempdir().unwrap();
    let o = prefctl(&["run", "quadratic-c1"], tmp.path());
    assert_eq!(code(&o), 2);
    let err = String::from_utf8(o.stderr).unwrap();
    assert!(err.contains("quadratic-c01, quadratic-c07"), "{err}");
    assert!(!tmp.path().join("results").exists());
}

#[test]
fn config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = serde_json::json!({
        "version": 1,
        "name": "bad",
        "plant": { "A": [[0.5]], "B": [[1.0]] },
        "utility": { "kind": "quadratic-tracking", "x_ref": [1.0, 2.0] },
        "oracle": { "links": ["logistic"] },
        "controller": { "eta": 0.1, "delta": 0.5, "T": 10, "u0": [0.0] },
        "replicas": 1
    });
    std::fs::write(tmp.path().join("bad.json"), cfg.to_string()).unwrap();
    assert_eq!(code(&prefctl(&["run", "bad.json"], tmp.path())), 2);
    assert!(!tmp.path().join("results").exists());
    std::fs::write(tmp.path().join("noversion.json"), "{\"name\": \"x\"}").unwrap();
    assert_eq!(code(&prefctl(&["run", "noversion.json"], tmp.path())), 2);
    assert_eq!(code(&prefctl(&["run", "missing.json"], tmp.path())), 2);
    assert_eq!(code(&prefctl(&["frobnicate"], tmp.path())), 2);
}

#[test]
fn config_file_runs_with_relative_plant() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::create_dir(tmp.path().join("cfg")).unwrap();
    std::fs::write(tmp.path().join("cfg/plant.json"), r#"{"A": [[0.5]], "B": [[1.0]]}"#).unwrap();
    let cfg = serde_json::json!({
        "version": 1,
        "name": "scalar",
        "plant": { "file": "plant.json" },
        "utility": { "kind": "quadratic-tracking", "x_ref": [4.0] },
        "oracle": { "links": ["logistic", "probit"], "seed": 3 },
        "controller": { "eta": 0.1, "delta": 0.5, "T": 300, "u0": [0.0] },
        "replicas": 3,
        "metrics": ["relative-error", "lyapunov"],
        "verify": ["lemma1", "lemma2", "lemma3", "lemma5"],
        "verify_options": { "lemma2_samples": 500, "lemma5_instances": 200 }
    });
    std::fs::write(tmp.path().join("cfg/scalar.json"), cfg.to_string()).unwrap();
    let o = prefctl(&["run", "cfg/scalar.json", "--out", "res"], tmp.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out = String::from_utf8(o.stdout).unwrap();
    assert_eq!(out.lines().filter(|l| l.starts_with("probit")).count(), 4, "{out}");
    assert!(tmp.path().join("res/scalar/probit/stats-lyapunov.csv").is_file());
    let v = prefctl(&["verify", "res/scalar"], tmp.path());
    assert_eq!(code(&v), 0);
}

#[test]
fn failed_replicas_exit_1() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = serde_json::json!({
        "version": 1,
        "name": "blowup",
        "plant": { "A": [[0.5]], "B": [[1.0]] },
        "utility": { "kind": "quadratic-tracking", "x_ref": [4.0] },
        "oracle": { "links": ["logistic"] },
        "controller": { "eta": 1e300, "delta": 0.5, "T": 50, "u0": [0.0] },
        "replicas": 2
    });
    std::fs::write(tmp.path().join("blowup.json"), cfg.to_string()).unwrap();
    let o = prefctl(&["run", "blowup.json"], tmp.path());
    assert_eq!(code(&o), 1, "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = std::fs::read_to_string(tmp.path().join("results/blowup/manifest.json")).unwrap();
    assert!(manifest.contains("\"partial\""));
}

fn http(port: u16, request: &str) -> Option<String> {
    let mut s = TcpStream::connect(("127.0.0.1", port)).ok()?;
    s.write_all(request.as_bytes()).ok()?;
    let mut out = String::new();
    s.read_to_string(&mut out).ok()?;
    Some(out)
}

#[test]
fn serve_answers_http() {
    let tmp = tempfile::tempdir().unwrap();
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let mut child = Command::new(env!("CARGO_BIN_EXE_prefctl"))
        .args(["serve", "--port", &port.to_string()])
        .current_dir(tmp.path())
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let body = r#"{"preset": "thermal"}"#;
    let req = format!(
        "POST /sessions HTTP/1.1\r\nhost: x\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
        body.len()
    );
    let start = Instant::now();
    let reply = loop {
        if let Some(r) = http(port, &req) {
            break r;
        }
        assert!(start.elapsed() < Duration::from_secs(20), "server did not come up");
        std::thread::sleep(Duration::from_millis(50));
    };
    child.kill().unwrap();
    let _ = child.wait();
    assert!(reply.starts_with("HTTP/1.1 201"), "{reply}");
    assert!(reply.contains("session_id"));
}

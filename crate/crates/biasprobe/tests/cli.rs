use std::io::{BufRead, BufReader};
use std::process::{Command, Stdio};

const BIN: &str = env!("CARGO_BIN_EXE_biasprobe");

fn write_manifest(dir: &std::path::Path, body: serde_json::Value) -> std::path::PathBuf {
    let path = dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_vec_pretty(&body).unwrap()).unwrap();
    path
}

fn minimal() -> serde_json::Value {
    serde_json::json!({
        "identities": [{
            "id": "f1", "display_name": "f1", "attribute_terms": ["woman"],
            "group_axes": {"gender_label": "female", "race_label": "white"}
        }],
        "concepts": {"set_a": ["carpenter"], "set_b": ["nurse"], "label_a": "m", "label_b": "f"}
    })
}

#[test]
fn validate_manifest_prints_defaults() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write_manifest(tmp.path(), minimal());
    let out = Command::new(BIN).args(["validate-manifest", "--manifest"]).arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["edit_strengths"], serde_json::json!([0.6, 0.8, 1.0]));
    assert_eq!(v["images_per_identity_edit"], 25);
}

#[test]
fn invalid_manifest_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let mut body = minimal();
    body["edit_strengths"] = serde_json::json!([1.5]);
    let path = write_manifest(tmp.path(), body);
    let out = Command::new(BIN).args(["validate-manifest", "--manifest"]).arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
}

#[test]
fn usage_errors_exit_one_and_help_exits_zero() {
    assert_eq!(Command::new(BIN).arg("--help").output().unwrap().status.code(), Some(0));
    assert_eq!(Command::new(BIN).arg("no-such-command").output().unwrap().status.code(), Some(1));
    assert_eq!(Command::new(BIN).args(["report", "--run-id"]).output().unwrap().status.code(), Some(1));
}

#[test]
fn unreachable_backend_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write_manifest(tmp.path(), minimal());
    // Reserve a port and release it so nothing listens there.
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let out = Command::new(BIN)
        .args(["generate-dataset", "--count", "1", "--retries", "1", "--manifest"])
        .arg(&path)
        .arg("--backend")
        .arg(format!("http://127.0.0.1:{port}"))
        .arg("--out")
        .arg(tmp.path().join("data"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn mock_serve_on_port_zero_announces_its_address() {
    let mut child = Command::new(BIN)
        .args(["mock-serve", "--port", "0", "--seed", "4"])
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let url = line.trim().strip_prefix("listening on ").expect(&line).to_string();

    let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
    let backend = biasprobe_backend::HttpBackend::new(biasprobe_backend::ClientConfig::new(url)).unwrap();
    let health = rt.block_on(backend.health());
    child.kill().unwrap();
    child.wait().unwrap();
    let health = health.unwrap();
    assert_eq!(health.model_id, "biasprobe-mock");
}

#[test]
fn report_on_missing_run_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(BIN).args(["report", "--run-id", "nope", "--runs-dir"]).arg(tmp.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

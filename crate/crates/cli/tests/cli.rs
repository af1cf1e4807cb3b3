use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

fn sentinel() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_sentinel"));
    cmd.env_remove("SENTINEL_CONFIG").env_remove("SENTINEL_URL");
    cmd
}

fn samples() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../samples")
}

struct Service {
    child: Child,
    url: String,
}

impl Drop for Service {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn serve(dir: &Path) -> Service {
    let config = dir.join("sentinel.toml");
    std::fs::write(
        &config,
        format!("listen = \"127.0.0.1:0\"\ndata_dir = \"{}\"\nschedule = false\n", dir.join("data").display()),
    )
    .unwrap();
    let mut child = sentinel()
        .args(["serve", "--config"])
        .arg(&config)
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let url = line.trim().strip_prefix("listening on ").unwrap().to_string();
    Service { child, url }
}

fn run(svc: &Service, args: &[&str]) -> Output {
    sentinel().arg("--server").arg(&svc.url).args(args).output().unwrap()
}

#[test]
fn usage_errors_exit_2() {
    let out = sentinel().args(["sweep"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--grid"));
    let out = sentinel().args(["eval", "--inject", "depth=3"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = sentinel().args(["frobnicate"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn infer_without_model_reports_no_model() {
    let dir = tempfile::tempdir().unwrap();
    let svc = serve(dir.path());
    let out = run(&svc, &["infer", "--window", "2022-05-20T00:00:00Z"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("NoModel"));
}

#[test]
fn unreachable_service_is_an_operational_error() {
    let out = sentinel().args(["--server", "http://127.0.0.1:9", "infer"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn sample_envelopes_ingest() {
    let dir = tempfile::tempdir().unwrap();
    let svc = serve(dir.path());
    let files: Vec<String> = ["storage-availability.json", "storage-transactions.json", "compute-cpu.json"]
        .iter()
        .map(|f| samples().join(f).display().to_string())
        .collect();
    let mut args = vec!["--json", "ingest"];
    args.extend(files.iter().map(String::as_str));
    let out = run(&svc, &args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let series: Vec<u64> = v
        .as_array()
        .unwrap()
        .iter()
        .map(|f| f["summary"]["series"].as_u64().unwrap())
        .collect();
    assert_eq!(series, [1, 2, 3]);
    assert_eq!(v[1]["summary"]["gaps"], 1);
    assert_eq!(v[2]["summary"]["points_appended"], 5);

    let out = run(&svc, &["--json", "risk-factor", "--set", "0.6"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("OutOfRange"));
}

#[test]
fn sweep_json_is_non_increasing() {
    let out = sentinel().args(["sweep", "--grid", "0.99,0.998,0.9995", "--json"]).output().unwrap();
    assert!(out.status.success());
    let rows: Vec<serde_json::Value> = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(rows.len(), 3);
    let counts: Vec<u64> = rows.iter().map(|r| r["count"].as_u64().unwrap()).collect();
    assert!(counts.windows(2).all(|w| w[1] <= w[0]), "{counts:?}");

    let csv = sentinel().args(["sweep", "--grid", "0.99,0.998"]).output().unwrap();
    let text = String::from_utf8(csv.stdout).unwrap();
    assert_eq!(text.lines().next(), Some("quantile,count,percent"));
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn eval_prints_precision_and_recall() {
    let out = sentinel()
        .args(["eval", "--dataset", "electricity", "--customers", "20", "--inject", "count=10,mag=10", "--json"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    for field in ["precision", "recall", "anomaly_percent", "smape"] {
        assert!(v[field].is_number(), "{field} missing");
    }
    assert_eq!(v["injected"], 10);
}

#[test]
fn invalid_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    std::fs::write(&config, "inference_interval = \"-1h\"\n").unwrap();
    let out = sentinel().args(["serve", "--config"]).arg(&config).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("ConfigInvalid: inference_interval"));

    // the environment variable is honoured when no flag is given
    let out = sentinel().arg("serve").env("SENTINEL_CONFIG", &config).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("inference_interval"));
}

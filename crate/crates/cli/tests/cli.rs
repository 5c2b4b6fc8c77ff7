use std::fs;
use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use serde_json::Value;
use tempfile::TempDir;
use uiot_core::store::{write_dataset, AppMeta};
use uiot_core::synthetic::{clustered_dataset, ClusterConfig};
use uiot_core::{normalize, Dataset, ScreenSet};

fn uiot(dir: &Path) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_uiot"));
    cmd.current_dir(dir)
        .env_remove("UIOT_DATASET")
        .env_remove("UIOT_JSON")
        .env_remove("UIOT_THREADS");
    cmd
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

/// Synthetic dataset written through the CLI itself.
fn synth(dir: &TempDir, names: usize, screenshots: usize) -> PathBuf {
    let out = run(uiot(dir.path())
        .args(["synth", "--out", "ds", "--dim", "8", "--json"])
        .args([
            "--names",
            &names.to_string(),
            "--screenshots",
            &screenshots.to_string(),
        ]));
    let v = stdout_json(&out);
    assert_eq!(v["apps"], names);
    dir.path().join("ds").join("manifest.json")
}

#[test]
fn uniformity_for_one_app_is_a_single_report() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(&dir, 1, 6);
    let out = run(uiot(dir.path()).arg("--dataset").arg(&manifest).args([
        "uniformity",
        "--app",
        "app-0-v0",
    ]));
    let v = stdout_json(&out);
    assert_eq!(v["setId"], "app-0-v0");
    assert!(v["lu"].as_f64().unwrap() <= 0.0);
}

#[test]
fn uniformity_all_is_one_line_per_app() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(&dir, 3, 4);
    let out = run(uiot(dir.path())
        .env("UIOT_DATASET", &manifest)
        .args(["uniformity", "--all"]));
    assert!(out.status.success());
    let lines: Vec<Value> = String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 3);
}

#[test]
fn plan_of_an_app_with_itself_costs_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(&dir, 2, 5);
    let out = run(uiot(dir.path())
        .arg("--dataset")
        .arg(&manifest)
        .args(["plan", "--query", "app-1-v0", "--target", "app-1-v0"]));
    let v = stdout_json(&out);
    assert!(v["distance"].as_f64().unwrap().abs() <= 1e-9);
    assert_eq!(v["nA"], 5);

    let csv = dir.path().join("plan.csv");
    let out = run(uiot(dir.path())
        .arg("--dataset")
        .arg(&manifest)
        .args([
            "plan", "--query", "app-0-v0", "--target", "app-1-v0", "--format", "csv", "--out",
        ])
        .arg(&csv));
    assert!(out.status.success());
    assert!(fs::read_to_string(csv)
        .unwrap()
        .starts_with("row,col,mass,cost\n"));
}

#[test]
fn retrieve_app_ranks_the_others() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(&dir, 4, 5);
    let out = run(uiot(dir.path()).arg("--dataset").arg(&manifest).args([
        "retrieve-app",
        "--query",
        "app-0-v0",
        "--k",
        "2",
        "--json",
    ]));
    let v = stdout_json(&out);
    let hits = v["hits"].as_array().unwrap();
    assert_eq!(hits.len(), 2);
    assert!(hits.iter().all(|h| h["targetId"] != "app-0-v0"));
    assert!(hits[0]["score"].as_f64().unwrap() <= hits[1]["score"].as_f64().unwrap());
}

#[test]
fn small_apps_are_excluded_from_delta_lu() {
    let dir = tempfile::tempdir().unwrap();
    let big = clustered_dataset(&ClusterConfig {
        names: 2,
        screenshots: 12,
        dim: 8,
        seed: 4,
        ..Default::default()
    })
    .unwrap();
    let tiny: Vec<_> = (0..3)
        .map(|i| normalize(&[1.0, i as f64, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap())
        .collect();
    let mut apps = big.apps().to_vec();
    apps.push(ScreenSet::from_unit_vectors(AppMeta::bare("tiny"), &tiny).unwrap());
    let manifest =
        write_dataset(&Dataset::from_sets(apps).unwrap(), &dir.path().join("ds")).unwrap();

    let out = run(uiot(dir.path()).arg("--dataset").arg(&manifest).args([
        "study",
        "delta-lu",
        "--mode",
        "heldout",
        "--held-out",
        "5",
        "--json",
    ]));
    let v = stdout_json(&out);
    let excluded = v["excluded"].as_array().unwrap();
    assert_eq!(excluded.len(), 1);
    assert_eq!(excluded[0]["appId"], "tiny");
    assert_eq!(excluded[0]["screenshots"], 3);
    assert!(dir.path().join("delta-lu-heldOutChange.json").exists());
    assert!(dir.path().join("delta-lu-heldOutChange.csv").exists());
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(&dir, 2, 3);

    let out = run(uiot(dir.path()).args(["plan", "--query", "a"]));
    assert_eq!(out.status.code(), Some(2));

    let out = run(uiot(dir.path()).arg("--dataset").arg(&manifest).args([
        "sweep",
        "--epsilon",
        "-1",
        "--json",
    ]));
    assert_eq!(out.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["code"], "UsageError");

    let out = run(uiot(dir.path()).args(["uniformity", "--all", "--json"]));
    assert_eq!(
        out.status.code(),
        Some(2),
        "missing dataset is a usage error"
    );

    let out = run(uiot(dir.path()).arg("--dataset").arg(&manifest).args([
        "--threads",
        "0",
        "uniformity",
        "--all",
    ]));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_one_with_a_code() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(&dir, 2, 3);
    let out = run(uiot(dir.path()).arg("--dataset").arg(&manifest).args([
        "uniformity",
        "--app",
        "nope",
        "--json",
    ]));
    assert_eq!(out.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["code"], "UnknownAppId");

    fs::write(dir.path().join("broken.json"), "{").unwrap();
    let out = run(uiot(dir.path()).args(["ingest", "--manifest", "broken.json", "--json"]));
    assert_eq!(out.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["code"], "ManifestParseError");
}

#[test]
fn ingest_reports_counts_and_fingerprint() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(&dir, 3, 4);
    let a = stdout_json(&run(uiot(dir.path())
        .arg("ingest")
        .arg("--manifest")
        .arg(&manifest)
        .arg("--json")));
    let b = stdout_json(&run(uiot(dir.path())
        .arg("ingest")
        .arg("--manifest")
        .arg(&manifest)
        .arg("--json")));
    assert_eq!(a["apps"], 3);
    assert_eq!(a["screenshots"], 12);
    assert_eq!(a["embeddingDim"], 8);
    assert_eq!(a["fingerprint"], b["fingerprint"]);
}

#[test]
fn sweep_resumes_to_the_same_table() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(&dir, 6, 4);
    let sweep = |out: &str, extra: &[&str]| {
        run(uiot(dir.path())
            .arg("--dataset")
            .arg(&manifest)
            .args(["sweep", "--chunk-size", "4", "--json", "--out", out])
            .args(extra))
    };
    let full = stdout_json(&sweep("full.csv", &[]));
    assert_eq!(full["totalPairs"], 15);
    let first = stdout_json(&sweep("staged.csv", &["--max-chunks", "2"]));
    assert_eq!(first["finished"], false);
    let second = stdout_json(&sweep("staged.csv", &[]));
    assert_eq!(second["resumedFrom"], 8);
    assert_eq!(
        fs::read(dir.path().join("full.csv")).unwrap(),
        fs::read(dir.path().join("staged.csv")).unwrap()
    );
}

#[test]
fn whatif_remove_and_readd_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let ds = clustered_dataset(&ClusterConfig {
        names: 1,
        screenshots: 5,
        dim: 4,
        seed: 2,
        ..Default::default()
    })
    .unwrap();
    let manifest = write_dataset(&ds, &dir.path().join("ds")).unwrap();
    let app = &ds.apps()[0];
    let readd: Vec<Vec<f32>> = (0..2).map(|i| app.raw().row(i).to_vec()).collect();
    fs::write(
        dir.path().join("add.json"),
        serde_json::to_string(&readd).unwrap(),
    )
    .unwrap();
    let out = run(uiot(dir.path()).arg("--dataset").arg(&manifest).args([
        "whatif",
        "--app",
        "app-0-v0",
        "--remove",
        "app-0-v0/0,app-0-v0/1",
        "--add-embeddings",
        "add.json",
    ]));
    let v = stdout_json(&out);
    assert!(v["delta"].as_f64().unwrap().abs() <= 1e-6, "{v}");
}

/// A line-protocol encoder: prompts mentioning `travel` map to e2, others
/// to e1; image paths map to e3.
fn stub_encoder(dir: &Path) -> String {
    let script = dir.join("stub.sh");
    fs::write(
        &script,
        "while read -r l; do case \"$l\" in *.png) echo 0,0,1,0;; *travel*) echo 0,1,0,0;; *) echo 1,0,0,0;; esac; done\n",
    )
    .unwrap();
    format!("sh {}", script.display())
}

#[test]
fn build_labels_then_classify() {
    let dir = tempfile::tempdir().unwrap();
    let encoder = stub_encoder(dir.path());
    fs::write(
        dir.path().join("labels.json"),
        r#"{"labels": ["finance", "travel"], "templates": ["a {category} app"]}"#,
    )
    .unwrap();
    let out = run(uiot(dir.path()).args([
        "build-labels",
        "--labels",
        "labels.json",
        "--out",
        "cats",
        "--json",
        "--endpoint",
        &encoder,
    ]));
    let v = stdout_json(&out);
    assert_eq!(v["labels"], 2);
    assert_eq!(v["dim"], 4);

    let vectors = [
        normalize(&[0.1, 1.0, 0.0, 0.0]).unwrap(),
        normalize(&[1.0, 0.1, 0.0, 0.0]).unwrap(),
    ];
    let set = ScreenSet::from_unit_vectors(AppMeta::bare("q"), &vectors).unwrap();
    let manifest = write_dataset(
        &Dataset::from_sets(vec![set]).unwrap(),
        &dir.path().join("ds"),
    )
    .unwrap();
    let sidecar = PathBuf::from(v["sidecar"].as_str().unwrap());
    let out = run(uiot(dir.path())
        .arg("--dataset")
        .arg(&manifest)
        .arg("classify")
        .arg("--labels")
        .arg(&sidecar)
        .args(["--screenshot", "q/0", "--k", "1", "--json"]));
    let v = stdout_json(&out);
    assert_eq!(v[0]["label"], "travel");
}

#[test]
fn encode_writes_block_and_listing() {
    let dir = tempfile::tempdir().unwrap();
    let encoder = stub_encoder(dir.path());
    let images = dir.path().join("img");
    fs::create_dir(&images).unwrap();
    for name in ["b", "a", "c"] {
        let img = image::RgbImage::from_pixel(4, 2, image::Rgb([10, 20, 30]));
        img.save(images.join(format!("{name}.png"))).unwrap();
    }
    let out = run(uiot(dir.path()).args([
        "encode",
        "--images",
        "img",
        "--dim",
        "4",
        "--out",
        "e.uieb",
        "--json",
        "--endpoint",
        &encoder,
    ]));
    let v = stdout_json(&out);
    assert_eq!((v["n"].as_u64(), v["d"].as_u64()), (Some(3), Some(4)));
    let listing: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("e.json")).unwrap()).unwrap();
    let ids: Vec<_> = listing["screenshots"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["id"].as_str().unwrap())
        .collect();
    assert_eq!(ids, ["a", "b", "c"]);

    let out = run(uiot(dir.path()).args([
        "encode",
        "--images",
        "img",
        "--dim",
        "5",
        "--out",
        "bad.uieb",
        "--json",
        "--endpoint",
        &encoder,
    ]));
    assert_eq!(out.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["code"], "EncoderShapeMismatch");
}

fn http_get(port: u16, path: &str) -> Option<String> {
    let mut s = TcpStream::connect(("127.0.0.1", port)).ok()?;
    s.set_read_timeout(Some(Duration::from_secs(5))).ok()?;
    write!(
        s,
        "GET {path} HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n"
    )
    .ok()?;
    let mut body = String::new();
    s.read_to_string(&mut body).ok()?;
    Some(body)
}

#[test]
fn serve_answers_health_checks() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(&dir, 2, 3);
    let port = TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let mut child = uiot(dir.path())
        .arg("--dataset")
        .arg(&manifest)
        .args(["serve", "--port", &port.to_string()])
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let deadline = Instant::now() + Duration::from_secs(20);
    let mut reply = None;
    while Instant::now() < deadline {
        if let Some(r) = http_get(port, "/v1/healthz") {
            reply = Some(r);
            break;
        }
        std::thread::sleep(Duration::from_millis(100));
    }
    let apps = http_get(port, "/v1/apps/missing");
    child.kill().unwrap();
    child.wait().unwrap();
    let reply = reply.expect("service came up");
    assert!(reply.starts_with("HTTP/1.1 200"), "{reply}");
    assert!(reply.contains("\"apps\":2"));
    assert!(apps.unwrap().starts_with("HTTP/1.1 404"));
}

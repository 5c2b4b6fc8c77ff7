use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;
use tempfile::TempDir;
use uiot_core::store::EmbeddingBlock;
use uiot_core::store::{
    encoder::encode_images, encoder::Preprocess, encoder::SubprocessEncoder, ingest, write_dataset,
};
use uiot_core::Error;

fn app_entry(id: &str, file: &str, shots: &[&str]) -> serde_json::Value {
    json!({
        "id": id,
        "name": id.to_uppercase(),
        "platform": "ios",
        "category": "finance",
        "snapshotDate": "2023-05-01",
        "embeddingFile": file,
        "screenshots": shots.iter().map(|s| json!({"id": s})).collect::<Vec<_>>(),
    })
}

fn write_manifest(dir: &Path, apps: Vec<serde_json::Value>) -> PathBuf {
    let path = dir.join("manifest.json");
    let m = json!({"version": 1, "embeddingDim": 4, "categoryVocabulary": ["finance", "travel"], "apps": apps});
    fs::write(&path, serde_json::to_vec_pretty(&m).unwrap()).unwrap();
    path
}

fn block(rows: &[[f32; 4]]) -> EmbeddingBlock {
    let rows: Vec<Vec<f32>> = rows.iter().map(|r| r.to_vec()).collect();
    EmbeddingBlock::from_rows(4, &rows).unwrap()
}

fn two_app_fixture() -> (TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    block(&[[1., 0., 0., 0.], [0., 2., 0., 0.], [1., 1., 0., 0.]])
        .write(&dir.path().join("a.uieb"))
        .unwrap();
    block(&[[0., 0., 3., 0.], [0., 0., 0., 1.], [0., 0., 1., 1.]])
        .write(&dir.path().join("b.uieb"))
        .unwrap();
    let m = write_manifest(
        dir.path(),
        vec![
            app_entry("a", "a.uieb", &["a1", "a2", "a3"]),
            app_entry("b", "b.uieb", &["b1", "b2", "b3"]),
        ],
    );
    (dir, m)
}

#[test]
fn ingests_two_apps() {
    let (_dir, manifest) = two_app_fixture();
    let (ds, report) = ingest(&manifest).unwrap();
    assert_eq!((ds.len(), ds.screenshot_count()), (2, 6));
    assert_eq!(
        (report.apps, report.screenshots, report.embedding_dim),
        (2, 6, 4)
    );
    assert_eq!(report.categories["finance"], 2);
    // vectors are normalized on ingest
    let v = ds.screenshot_vector("a2").unwrap();
    assert_eq!(v.as_slice(), &[0.0, 1.0, 0.0, 0.0]);
    assert!(ds.app("missing").is_err());
}

#[test]
fn ingest_is_deterministic() {
    let (_dir, manifest) = two_app_fixture();
    let (a, ra) = ingest(&manifest).unwrap();
    let (b, rb) = ingest(&manifest).unwrap();
    assert_eq!(a.snapshot_bytes(), b.snapshot_bytes());
    assert_eq!(ra.fingerprint, rb.fingerprint);
}

#[test]
fn write_then_ingest_round_trips() {
    let (_dir, manifest) = two_app_fixture();
    let (ds, report) = ingest(&manifest).unwrap();
    let out = tempfile::tempdir().unwrap();
    let written = write_dataset(&ds, out.path()).unwrap();
    let (again, report2) = ingest(&written).unwrap();
    assert_eq!(report.fingerprint, report2.fingerprint);
    assert_eq!(ds.snapshot_bytes(), again.snapshot_bytes());
}

#[test]
fn truncated_block_is_corrupt() {
    let (dir, manifest) = two_app_fixture();
    let path = dir.path().join("b.uieb");
    let bytes = fs::read(&path).unwrap();
    fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
    assert!(matches!(
        ingest(&manifest),
        Err(Error::EmbeddingFileCorrupt { .. })
    ));
}

#[test]
fn bad_magic_is_corrupt() {
    let (dir, manifest) = two_app_fixture();
    let path = dir.path().join("a.uieb");
    let mut bytes = fs::read(&path).unwrap();
    bytes[0] = b'X';
    fs::write(&path, bytes).unwrap();
    assert!(matches!(
        ingest(&manifest),
        Err(Error::EmbeddingFileCorrupt { .. })
    ));
}

#[test]
fn duplicate_app_id_is_rejected() {
    let (dir, _) = two_app_fixture();
    let m = write_manifest(
        dir.path(),
        vec![
            app_entry("a", "a.uieb", &["a1", "a2", "a3"]),
            app_entry("a", "b.uieb", &["b1", "b2", "b3"]),
        ],
    );
    assert!(matches!(ingest(&m), Err(Error::DuplicateAppId(id)) if id == "a"));
}

#[test]
fn duplicate_screenshot_id_is_rejected() {
    let (dir, _) = two_app_fixture();
    let m = write_manifest(
        dir.path(),
        vec![
            app_entry("a", "a.uieb", &["a1", "a2", "a3"]),
            app_entry("b", "b.uieb", &["b1", "a2", "b3"]),
        ],
    );
    assert!(matches!(ingest(&m), Err(Error::DuplicateScreenshotId(_))));
}

#[test]
fn dimension_and_manifest_errors() {
    let dir = tempfile::tempdir().unwrap();
    EmbeddingBlock::from_rows(3, &[vec![1.0, 0.0, 0.0]])
        .unwrap()
        .write(&dir.path().join("c.uieb"))
        .unwrap();
    let m = write_manifest(dir.path(), vec![app_entry("c", "c.uieb", &["c1"])]);
    assert!(matches!(
        ingest(&m),
        Err(Error::DimensionMismatch {
            expected: 4,
            got: 3
        })
    ));

    fs::write(dir.path().join("bad.json"), "{\"version\": 1").unwrap();
    assert_eq!(
        ingest(&dir.path().join("bad.json")).unwrap_err().code(),
        "ManifestParseError"
    );

    let mut entry = app_entry("c", "c.uieb", &["c1"]);
    entry["category"] = json!("games");
    let m = write_manifest(dir.path(), vec![entry]);
    assert!(matches!(ingest(&m), Err(Error::ManifestParse(_))));
}

#[test]
fn zero_vector_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    block(&[[1., 0., 0., 0.], [0., 0., 0., 0.]])
        .write(&dir.path().join("z.uieb"))
        .unwrap();
    let m = write_manifest(dir.path(), vec![app_entry("z", "z.uieb", &["z1", "z2"])]);
    assert!(matches!(ingest(&m), Err(Error::ZeroVector)));
}

#[test]
fn ingests_jsonl() {
    let dir = tempfile::tempdir().unwrap();
    let lines = [
        json!({"appId": "a", "screenshotId": "s1", "vector": [1, 0, 0, 0]}),
        json!({"appId": "b", "screenshotId": "s2", "vector": [0, 1, 0, 0]}),
        json!({"appId": "a", "screenshotId": "s3", "vector": [0, 0, 5, 0]}),
    ];
    let text: String = lines.iter().map(|l| format!("{l}\n")).collect();
    fs::write(dir.path().join("e.jsonl"), text).unwrap();
    let mut a = app_entry("a", "e.jsonl", &[]);
    a.as_object_mut().unwrap().remove("screenshots");
    let b = app_entry("b", "e.jsonl", &["s2"]);
    let (ds, _) = ingest(&write_manifest(dir.path(), vec![a, b])).unwrap();
    let a = ds.app("a").unwrap();
    assert_eq!(a.len(), 2);
    assert_eq!(a.screenshots[1].id, "s3");
    assert_eq!(a.vector(1).as_slice(), &[0.0, 0.0, 1.0, 0.0]);
}

#[test]
fn explicit_marginal_is_validated() {
    let (dir, _) = two_app_fixture();
    let mut a = app_entry("a", "a.uieb", &["a1", "a2", "a3"]);
    a["marginal"] = json!([0.5, 0.25, 0.25]);
    let m = write_manifest(dir.path(), vec![a.clone()]);
    let (ds, _) = ingest(&m).unwrap();
    assert_eq!(ds.app("a").unwrap().marginal().masses(), &[0.5, 0.25, 0.25]);
    a["marginal"] = json!([0.5, 0.5, 0.5]);
    let m = write_manifest(dir.path(), vec![a]);
    assert!(matches!(ingest(&m), Err(Error::InfeasibleMarginals(_))));
}

fn png(dir: &Path, name: &str, w: u32, h: u32) -> PathBuf {
    let path = dir.join(name);
    image::RgbaImage::from_pixel(w, h, image::Rgba([10, 20, 30, 255]))
        .save(&path)
        .unwrap();
    path
}

#[test]
fn stub_encoder_round_trips_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let images: Vec<_> = (0..3)
        .map(|k| png(dir.path(), &format!("{k}.png"), 10 + k, 20))
        .collect();
    let mut enc = SubprocessEncoder::spawn("while read l; do echo 0.1,0.2,0.3,0.7; done").unwrap();
    let block = encode_images(&images, &mut enc, 4, Preprocess::default()).unwrap();
    assert_eq!((block.n, block.d), (3, 4));
    let path = dir.path().join("out.uieb");
    block.write(&path).unwrap();
    let bytes = fs::read(&path).unwrap();
    assert_eq!(&bytes[..4], b"UIEB");
    assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 3);
    assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 4);
    let back = EmbeddingBlock::read(&path).unwrap();
    assert_eq!(
        back.data.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
        block.data.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
    );
    assert_eq!(back.row(2), &[0.1f32, 0.2, 0.3, 0.7]);
}

#[test]
fn pad_square_preprocessing_feeds_square_images() {
    let dir = tempfile::tempdir().unwrap();
    let img = png(dir.path(), "tall.png", 100, 200);
    // the stub replies with the width and height of whatever it is given
    let script = "while read l; do python3 -c \"import sys;from PIL import Image;w,h=Image.open(sys.argv[1]).size;print(f'{w},{h}')\" \"$l\"; done";
    let mut enc = SubprocessEncoder::spawn(script).unwrap();
    let padded = encode_images(
        std::slice::from_ref(&img),
        &mut enc,
        2,
        Preprocess {
            pad_square: true,
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(padded.row(0), &[200.0, 200.0]);
    let raw = encode_images(&[img], &mut enc, 2, Preprocess::default()).unwrap();
    assert_eq!(raw.row(0), &[100.0, 200.0]);
}

#[test]
fn encoder_shape_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let img = png(dir.path(), "x.png", 4, 4);
    let mut enc = SubprocessEncoder::spawn("while read l; do echo 1,2,3; done").unwrap();
    let err = encode_images(&[img], &mut enc, 4, Preprocess::default()).unwrap_err();
    assert!(matches!(
        err,
        Error::EncoderShapeMismatch {
            expected: 4,
            got: 3
        }
    ));
}

use std::fs;
use std::path::{Path, PathBuf};

use bifta::cli::run;

fn shipped_fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/synth-small")
}

fn arg(p: &Path) -> String {
    p.to_str().unwrap().to_string()
}

fn synth(dir: &Path, preset: &str) -> PathBuf {
    let out = dir.join(preset);
    assert_eq!(run(["bifta", "synth", "--preset", preset, "--out", &arg(&out)]), 0);
    out
}

#[test]
fn validate_shipped_fixture() {
    assert_eq!(run(["bifta", "validate", "--manifest", &arg(&shipped_fixture())]), 0);
}

#[test]
fn shipped_fixture_matches_generator() {
    let tmp = tempfile::tempdir().unwrap();
    let fresh = synth(tmp.path(), "separable");
    for f in ["dataset.json", "images/data.f32", "images/manifest.json", "texts/data.f32", "texts/manifest.json"] {
        assert_eq!(fs::read(fresh.join(f)).unwrap(), fs::read(shipped_fixture().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn missing_config_is_usage_error() {
    let m = arg(&shipped_fixture());
    assert_eq!(run(["bifta", "classify", "--config", "missing.json", "--manifest", &m]), 2);
}

#[test]
fn unknown_flag_is_usage_error() {
    assert_eq!(run(["bifta", "validate", "--frobnicate"]), 2);
    assert_eq!(run(["bifta", "nonsense"]), 2);
}

#[test]
fn corrupt_archive_fails_validation() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = synth(tmp.path(), "separable");
    let data = ds.join("images/data.f32");
    let mut bytes = fs::read(&data).unwrap();
    bytes.truncate(bytes.len() - 3);
    fs::write(&data, bytes).unwrap();
    assert_eq!(run(["bifta", "validate", "--manifest", &arg(&ds)]), 1);
}

#[test]
fn dangling_row_fails_validation() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = synth(tmp.path(), "separable");
    let m = ds.join("dataset.json");
    let mut json: serde_json::Value = serde_json::from_slice(&fs::read(&m).unwrap()).unwrap();
    json["images"][0]["full_row"] = 100_000.into();
    fs::write(&m, serde_json::to_vec(&json).unwrap()).unwrap();
    assert_eq!(run(["bifta", "validate", "--manifest", &arg(&ds)]), 1);
}

#[test]
fn classify_twice_gives_identical_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = synth(tmp.path(), "redundancy");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        assert_eq!(run(["bifta", "classify", "--manifest", &arg(&ds), "--seeds", "0,1", "--out", &arg(out)]), 0);
    }
    assert_eq!(fs::read(a.join("report.json")).unwrap(), fs::read(b.join("report.json")).unwrap());
    assert_eq!(fs::read(a.join("predictions.jsonl")).unwrap(), fs::read(b.join("predictions.jsonl")).unwrap());
    let lines = fs::read_to_string(a.join("predictions.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 2 * 96);
    let first: serde_json::Value = serde_json::from_str(lines.lines().next().unwrap()).unwrap();
    assert_eq!(first["top10"].as_array().unwrap().len(), 8);
}

#[test]
fn sweep_emits_one_row_per_value() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = synth(tmp.path(), "separable");
    let out = tmp.path().join("sweep");
    assert_eq!(
        run([
            "bifta",
            "sweep",
            "--manifest",
            &arg(&ds),
            "--capacity",
            "8",
            "--grid",
            "eta=0.6,0.7,0.8,0.9",
            "--out",
            &arg(&out)
        ]),
        0
    );
    let mut r = csv::Reader::from_path(out.join("sweep.csv")).unwrap();
    assert_eq!(r.headers().unwrap().iter().nth(1), Some("eta"));
    let rows: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 4);
    let etas: Vec<&str> = rows.iter().map(|r| &r[1]).collect();
    assert_eq!(etas, ["0.6", "0.7", "0.8", "0.9"]);
}

#[test]
fn sweep_with_bad_key_is_usage_error() {
    let m = arg(&shipped_fixture());
    assert_eq!(run(["bifta", "sweep", "--manifest", &m, "--grid", "etta=0.5"]), 2);
}

#[test]
fn bench_rejects_zero_candidates_and_few_repetitions() {
    assert_eq!(run(["bifta", "bench", "--candidates", "0"]), 2);
    assert_eq!(run(["bifta", "bench", "--repetitions", "3"]), 2);
}

#[test]
fn bench_writes_both_phases() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(run(["bifta", "bench", "--out", &arg(tmp.path())]), 0);
    let r: serde_json::Value = serde_json::from_slice(&fs::read(tmp.path().join("bench.json")).unwrap()).unwrap();
    let share = r["filter_share"].as_f64().unwrap();
    assert!(share > 0.0 && share < 1.0);
    assert_eq!(r["comparisons"].as_array().unwrap().len(), 10);
}

#[test]
fn crop_sim_dumps_queues() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(run(["bifta", "crop-sim", "--seeds", "3,4", "--images", "2", "--out", &arg(tmp.path())]), 0);
    let q: Vec<serde_json::Value> = serde_json::from_slice(&fs::read(tmp.path().join("queues.json")).unwrap()).unwrap();
    assert_eq!(q.len(), 4);
    assert!(q.iter().all(|d| d["boxes"].as_array().unwrap().len() == 60 && d["fallback_count"] == 0));
}

#[test]
fn refine_text_with_tfidf() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("pool.json");
    fs::write(
        &input,
        r#"{"label": "fox", "prompt": "a photo of a fox",
            "descriptions": [{"text": "a fox has orange fur", "source": "cupl"},
                             {"text": "A fox has orange fur.", "source": "des_attr"},
                             {"text": "it is a wild fox"}]}"#,
    )
    .unwrap();
    let out = tmp.path().join("out");
    assert_eq!(
        run(["bifta", "refine-text", "--input", &arg(&input), "--dr-strategy", "tfidf", "--out", &arg(&out)]),
        0
    );
    let r: serde_json::Value = serde_json::from_slice(&fs::read(out.join("refined.json")).unwrap()).unwrap();
    let kept: Vec<bool> =
        r[0]["descriptions"].as_array().unwrap().iter().map(|d| d["kept"].as_bool().unwrap()).collect();
    assert_eq!(kept, [true, false, true]);
    // embedding mode without an archive is a usage error
    assert_eq!(run(["bifta", "refine-text", "--input", &arg(&input)]), 2);
}

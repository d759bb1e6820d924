use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const MOCK: &str = r#"{
  "default_profile": {"start": 1, "mid": 1, "end": 1},
  "profiles": {"&": {"start": 1, "mid": 0, "end": 2}, "none": {"start": 1, "mid": 0, "end": 2}},
  "threshold": 0.05
}"#;

const KV: [&str; 8] = [
    "--kv-pairs", "10", "--kv-chars", "128", "--kv-n", "12", "--kv-seed", "3",
];

fn ctxnorm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctxnorm"))
        .current_dir(dir)
        .env_remove("CTXNORM_BACKEND")
        .env_remove("CTXNORM_ENDPOINT")
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = ctxnorm(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn without(mut v: Value, keys: &[&str]) -> Value {
    fn strip(v: &mut Value, keys: &[&str]) {
        match v {
            Value::Object(map) => {
                for k in keys {
                    map.remove(*k);
                }
                map.values_mut().for_each(|x| strip(x, keys));
            }
            Value::Array(items) => items.iter_mut().for_each(|x| strip(x, keys)),
            _ => {}
        }
    }
    strip(&mut v, keys);
    v
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("mock.json"), MOCK).unwrap();
    dir
}

fn with<'a>(base: &[&'a str], extra: &[&'a str]) -> Vec<&'a str> {
    base.iter().chain(extra).copied().collect()
}

#[test]
fn gen_kv_writes_the_low_density_benchmark() {
    let dir = setup();
    let args = ["gen-kv", "--pairs", "40", "--chars", "32", "--n", "500", "--seed", "7", "-o", "kv.jsonl"];
    ok(dir.path(), &args);
    let text = fs::read_to_string(dir.path().join("kv.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 500);
    let first: Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(first["pairs"].as_array().unwrap().len(), 40);
    assert_eq!(first["pairs"][0][0].as_str().unwrap().len(), 32);

    let again = ctxnorm(dir.path(), &args);
    assert_eq!(again.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&again.stderr).contains("--force"));

    ok(dir.path(), &with(&args, &["--force"]));
    assert_eq!(fs::read_to_string(dir.path().join("kv.jsonl")).unwrap(), text);
}

#[test]
fn usage_errors_exit_with_2() {
    let dir = setup();
    let missing = ctxnorm(dir.path(), &["gen-kv", "--pairs", "40", "--chars", "32", "-o", "x.jsonl"]);
    assert_eq!(missing.status.code(), Some(2));
    let bad = ctxnorm(dir.path(), &["gen-kv", "--pairs", "40", "--chars", "30", "--n", "1", "--seed", "1", "-o", "x.jsonl"]);
    assert_eq!(bad.status.code(), Some(2));
    let no_backend = ctxnorm(dir.path(), &with(&["run-perm", "-o", "r.json"], &KV));
    assert_eq!(no_backend.status.code(), Some(2));
    let no_dataset = ctxnorm(dir.path(), &["run-perm", "--backend", "mock", "-o", "r.json"]);
    assert_eq!(no_dataset.status.code(), Some(2));
}

#[test]
fn calibrate_defaults_select_uniform_profile() {
    let dir = setup();
    let stdout = ok(
        dir.path(),
        &with(
            &["calibrate", "--backend", "mock", "--mock-config", "mock.json", "--candidates", "none,&,-", "-o", "calib.json"],
            &KV,
        ),
    );
    assert!(stdout.contains("<- selected"));
    let report = json(&dir.path().join("calib.json"));
    assert_eq!(report["schema"], "ctxnorm.calibration/1");
    assert!(report["created_at"].is_string());
    assert_eq!(report["sample_count"], 8);
    assert_eq!(report["selected"]["delimiter"], "-");
    assert_eq!(report["selected"]["ratio"], 0.5);
}

#[test]
fn calibrate_sweep_reports_stability() {
    let dir = setup();
    ok(
        dir.path(),
        &with(
            &["calibrate", "--backend", "mock", "--mock-config", "mock.json", "--candidates", "none,&,-", "--sweep", "1,2,3,4,5", "-o", "sweep.json"],
            &KV,
        ),
    );
    let report = json(&dir.path().join("sweep.json"));
    assert_eq!(report["stable"], true);
    assert_eq!(report["entries"].as_array().unwrap().len(), 5);
}

#[test]
fn calibration_without_attention_fails() {
    let dir = setup();
    ok(
        dir.path(),
        &with(&["run-perm", "--backend", "mock", "--record-trace", "t.jsonl", "-o", "r.json"], &KV),
    );
    let out = ctxnorm(
        dir.path(),
        &with(&["calibrate", "--backend", "replay", "--trace", "t.jsonl", "-o", "c.json"], &KV),
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("attention"));
}

#[test]
fn replay_reproduces_the_live_run() {
    let dir = setup();
    let live = ["run-perm", "--backend", "mock", "--mock-config", "mock.json", "--record-trace", "t.jsonl", "-o", "live.json"];
    ok(dir.path(), &with(&live, &KV));
    ok(
        dir.path(),
        &with(&["run-perm", "--backend", "replay", "--trace", "t.jsonl", "-o", "replay.json"], &KV),
    );
    let a = without(json(&dir.path().join("live.json")), &["created_at", "backend_id"]);
    let b = without(json(&dir.path().join("replay.json")), &["created_at", "backend_id"]);
    assert_eq!(a, b);
}

#[test]
fn reruns_are_identical_apart_from_the_timestamp() {
    let dir = setup();
    let args = with(
        &["pipeline", "--backend", "mock", "--mock-config", "mock.json", "--candidates", "none,&,-", "--seeds", "0,1", "-o", "p.json", "--force"],
        &KV,
    );
    ok(dir.path(), &args);
    let first = without(json(&dir.path().join("p.json")), &["created_at"]);
    ok(dir.path(), &args);
    let second = without(json(&dir.path().join("p.json")), &["created_at"]);
    assert_eq!(first, second);
    assert_eq!(first["calibration"]["selected"]["delimiter"], "-");
    assert_eq!(first["baseline"]["config"]["format"]["delimiter"], "none");
}

#[test]
fn report_prints_tables_and_deltas() {
    let dir = setup();
    let base = ["run-perm", "--backend", "mock", "--mock-config", "mock.json", "-o", "none.json"];
    ok(dir.path(), &with(&base, &KV));
    let dash = ["run-perm", "--backend", "mock", "--mock-config", "mock.json", "--delimiter", "-", "-o", "dash.json"];
    ok(dir.path(), &with(&dash, &KV));

    let single = ok(dir.path(), &["report", "--in", "none.json"]);
    assert!(single.contains("OAA") && single.contains("OPA"));
    assert_eq!(single.lines().filter(|l| l.trim_start().starts_with(char::is_numeric)).count(), 10);

    let delta = ok(dir.path(), &["report", "--in", "none.json", "--in", "dash.json"]);
    assert!(delta.contains("[none]") && delta.contains("[-]") && delta.contains("delta"));
    let oaa = delta.lines().find(|l| l.trim_start().starts_with("OAA")).unwrap();
    assert!(oaa.trim_end().ends_with("+0.8000"), "{oaa}");
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let dir = setup();
    fs::write(
        dir.path().join("run.toml"),
        r#"
backend = "mock"
mock-config = "mock.json"
kv-pairs = 10
kv-chars = 128
kv-n = 12
kv-seed = 3
delimiter = "&"
seeds = [5]
positions = [0, 9]
out = "from-file.json"
"#,
    )
    .unwrap();
    ok(dir.path(), &["run-perm", "--config", "run.toml"]);
    let from_file = json(&dir.path().join("from-file.json"));
    assert_eq!(from_file["config"]["format"]["delimiter"], "&");
    assert_eq!(from_file["config"]["plan"]["seeds"], serde_json::json!([5]));

    ok(dir.path(), &["run-perm", "--config", "run.toml", "--delimiter", "-", "-o", "flag.json"]);
    let flagged = json(&dir.path().join("flag.json"));
    assert_eq!(flagged["config"]["format"]["delimiter"], "-");
    assert_eq!(flagged["config"]["plan"]["positions"], serde_json::json!([0, 9]));

    fs::write(dir.path().join("bad.toml"), "no-such-key = 1\n").unwrap();
    assert_eq!(ctxnorm(dir.path(), &["run-perm", "--config", "bad.toml"]).status.code(), Some(2));
}

#[test]
fn tokenization_study_reports_correlation() {
    let dir = setup();
    fs::write(
        dir.path().join("split.json"),
        r#"{"default_profile": {"start": 1, "mid": 1, "end": 1},
            "profiles": {"&": {"start": 1, "mid": 0, "end": 1}},
            "threshold": 0.05, "splitting_delimiters": ["&"]}"#,
    )
    .unwrap();
    let stdout = ok(
        dir.path(),
        &with(
            &["tok-study", "--backend", "mock", "--mock-config", "split.json", "--candidates", "-,&", "--seeds", "0", "-o", "tok.json"],
            &KV,
        ),
    );
    assert!(stdout.contains("pearson r"));
    let report = json(&dir.path().join("tok.json"));
    assert_eq!(report["schema"], "ctxnorm.tokenization/1");
    assert!(report["pearson_r"].as_f64().unwrap().is_finite());
}

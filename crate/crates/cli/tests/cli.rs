use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{Map, Value};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_vehiclescan"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

const STUDY: &str = r#"
n_cities = 2
n_train_scenes = 2
train_vehicles = 12
city_vehicles = 12
epochs = 2

[layout]
width = 256
height = 256

[sampling]
random_negatives = 6
"#;

/// Generates a small study under `dir` and returns its pipeline config.
fn study(dir: &Path) -> PathBuf {
    let params = dir.join("study.toml");
    std::fs::write(&params, STUDY).unwrap();
    let o = run(&["synth", "--out", dir.to_str().unwrap(), "--config", params.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let cfg = PathBuf::from(String::from_utf8(o.stdout).unwrap().trim());
    assert!(cfg.is_file());
    cfg
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn schema(name: &str) -> Value {
    let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../schemas").join(name);
    serde_json::from_str(&std::fs::read_to_string(&p).unwrap()).unwrap()
}

fn check(name: &str, instance: &Value, what: &str) {
    let s = schema(name);
    let v = jsonschema::validator_for(&s).unwrap();
    let errors: Vec<String> = v.iter_errors(instance).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{what} against {name}: {errors:?}");
}

/// A CSV cell as the JSON value its column's declared type asks for.
fn cell(raw: &str, prop: &Value) -> Value {
    let types: Vec<&str> = match &prop["type"] {
        Value::String(t) => vec![t.as_str()],
        Value::Array(a) => a.iter().filter_map(Value::as_str).collect(),
        _ if prop.get("oneOf").is_some() => vec!["number"],
        _ => vec![],
    };
    if types.contains(&"integer") {
        if let Ok(i) = raw.parse::<i64>() {
            return i.into();
        }
    }
    if types.contains(&"number") || types.contains(&"integer") {
        if let Ok(f) = raw.parse::<f64>() {
            return serde_json::Number::from_f64(f).map_or(Value::String(raw.into()), Value::Number);
        }
    }
    if types.contains(&"boolean") {
        if let Ok(b) = raw.parse::<bool>() {
            return b.into();
        }
    }
    Value::String(raw.into())
}

fn check_csv(name: &str, bytes: &[u8], what: &str) -> usize {
    let s = schema(name);
    let columns: Vec<&str> = s["x-columns"].as_array().unwrap().iter().map(|c| c.as_str().unwrap()).collect();
    let mut r = csv::Reader::from_reader(bytes);
    let header: Vec<String> = r.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header, columns, "{what} header");
    let mut rows = 0;
    for rec in r.records() {
        let rec = rec.unwrap();
        let mut row = Map::new();
        for (col, raw) in columns.iter().zip(rec.iter()) {
            row.insert(col.to_string(), cell(raw, &s["properties"][col]));
        }
        check(name, &Value::Object(row), &format!("{what} row {rows}"));
        rows += 1;
    }
    rows
}

fn check_jsonl(name: &str, bytes: &[u8], what: &str) {
    for (i, line) in std::str::from_utf8(bytes).unwrap().lines().enumerate() {
        check(name, &serde_json::from_str(line).unwrap(), &format!("{what} line {i}"));
    }
}

fn schema_for(rel: &str) -> Option<&'static str> {
    let file = rel.rsplit('/').next().unwrap();
    Some(match file {
        "candidates.jsonl" => "candidate.schema.json",
        "anchors.jsonl" => "anchor.schema.json",
        "scores.jsonl" => "scored_anchor.schema.json",
        "nms.jsonl" | "detections.jsonl" => "detection.schema.json",
        "thresholds.json" => "thresholds.schema.json",
        "regression.json" => "regression.schema.json",
        "train_log.json" => "train_log.schema.json",
        "manifest.json" => "samples_manifest.schema.json",
        "counts.csv" => "counts.csv.schema.json",
        "change.csv" => "change.csv.schema.json",
        "regression_points.csv" => "regression_points.csv.schema.json",
        "eval.csv" => "eval.csv.schema.json",
        f if f.starts_with("grid_") && f.ends_with("_change.csv") => "grid_change.csv.schema.json",
        f if f.starts_with("grid_") && f.ends_with(".csv") => "grid.csv.schema.json",
        f if f.ends_with("_truth.json") => "scene_truth.schema.json",
        f if f.ends_with(".jsonl") && rel.starts_with("labels") => "label.schema.json",
        _ => return None,
    })
}

/// Validates every JSON, JSONL and CSV file under `dir`; returns how many.
fn validate_tree(dir: &Path) -> usize {
    let mut n = 0;
    for (rel, bytes) in files(dir) {
        let is_data = [".json", ".jsonl", ".csv"].iter().any(|e| rel.ends_with(e));
        let Some(name) = schema_for(&rel) else {
            assert!(!is_data, "no schema covers {rel}");
            continue;
        };
        if rel.ends_with(".csv") {
            check_csv(name, &bytes, &rel);
        } else if rel.ends_with(".jsonl") {
            check_jsonl(name, &bytes, &rel);
        } else {
            check(name, &serde_json::from_slice(&bytes).unwrap(), &rel);
        }
        n += 1;
    }
    n
}

#[test]
fn synth_run_and_stage_reruns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = study(dir.path());
    let cfg = cfg.to_str().unwrap();

    let o = run(&["run", "--config", cfg]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out = dir.path().join("out");
    let full = files(&out);
    assert!(full.contains_key("model.bin"));
    assert!(full.contains_key("report/eval.csv"));
    let rows = check_csv("counts.csv.schema.json", &full["report/counts.csv"], "counts.csv");
    assert_eq!(rows, 2 * 2, "one row per city and epoch");

    // every emitted artifact, inputs included, matches its shipped schema
    assert!(validate_tree(dir.path()) > 20);

    let o = run(&["run", "--config", cfg, "--stage", "counts"]);
    assert_eq!(code(&o), 0);
    assert_eq!(files(&out), full, "counts rerun changed outputs");
    let o = run(&["report", "--config", cfg]);
    assert_eq!(code(&o), 0);
    let o = run(&["eval", "--config", cfg]);
    assert_eq!(code(&o), 0);
    assert_eq!(files(&out), full, "report/eval reruns changed outputs");

    // a fresh run into another directory reproduces the tree
    let again = dir.path().join("again");
    let o = run(&["run", "--config", cfg, "--out", again.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert_eq!(files(&again), full);

    // the standalone forms agree with the pipeline's stages
    let model = dir.path().join("m.bin");
    let o = run(&[
        "train",
        "--config",
        cfg,
        "--samples",
        dir.path().join("samples").to_str().unwrap(),
        "--out",
        model.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read(&model).unwrap(), full["model.bin"]);
    let scores = dir.path().join("s.jsonl");
    let o = run(&[
        "predict",
        "--config",
        cfg,
        "--model",
        model.to_str().unwrap(),
        "--anchors",
        out.join("city1/before/anchors.jsonl").to_str().unwrap(),
        "--raster",
        dir.path().join("scenes/city1_before.tif").to_str().unwrap(),
        "--out",
        scores.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read(&scores).unwrap(), full["city1/before/scores.jsonl"]);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = study(dir.path());
    let cfg = cfg.to_str().unwrap();

    let o = run(&["run", "--config", cfg, "--stage", "bogus"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown stage"));

    let o = run(&["run", "--config", dir.path().join("missing.toml").to_str().unwrap()]);
    assert_eq!(code(&o), 2);

    let o = run(&["predict", "--model", "m.bin"]);
    assert_eq!(code(&o), 2);

    // nms before classify has nothing to read
    let o = run(&["run", "--config", cfg, "--stage", "nms"]);
    assert_eq!(code(&o), 3);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("classify"), "{err}");

    let o = run(&["run", "--config", cfg, "--stage", "mask"]);
    assert_eq!(code(&o), 0);
}

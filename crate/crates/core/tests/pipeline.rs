mod common;

use std::path::Path;

use vehiclescan::pipeline::{Pipeline, PipelineConfig, Stage};
use vehiclescan::study::generate_study;
use vehiclescan::Error;

fn study(dir: &Path) -> PipelineConfig {
    let cfg = generate_study(dir, &common::tiny_study()).unwrap();
    PipelineConfig::load(cfg).unwrap()
}

#[test]
fn full_run_then_partial_reruns_match() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = study(tmp.path());
    let p = Pipeline::new(cfg.clone()).unwrap();
    p.run_all().unwrap();
    let out = &cfg.out_dir;
    let report = out.join("report");
    let counts = std::fs::read_to_string(report.join("counts.csv")).unwrap();
    assert_eq!(counts.lines().count(), 1 + 2 * 2);
    assert!(counts.starts_with("city,epoch,total,arterial,collector,local"));
    for f in ["change.csv", "eval.csv", "regression.json", "grid_city1_before.csv", "grid_city1_change.png"] {
        assert!(report.join(f).is_file(), "missing {f}");
    }
    let reg: serde_json::Value = serde_json::from_slice(&std::fs::read(report.join("regression.json")).unwrap()).unwrap();
    assert_eq!(reg["status"], "skipped");
    let full = common::tree_bytes(out);

    p.run_stages(&[Stage::Counts]).unwrap();
    assert_eq!(common::tree_bytes(out), full);
    p.run_stages(&[Stage::Nms, Stage::Shadow, Stage::Counts, Stage::Eval]).unwrap();
    assert_eq!(common::tree_bytes(out), full);
    p.run_stages(&[Stage::Classify]).unwrap();
    assert_eq!(common::tree_bytes(out), full);
}

#[test]
fn missing_inputs_name_the_stage_to_run() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = study(tmp.path());
    cfg.out_dir = tmp.path().join("fresh");
    let p = Pipeline::new(cfg).unwrap();
    for (stage, producer) in [
        (Stage::Candidates, "mask"),
        (Stage::Classify, "train"),
        (Stage::Nms, "classify"),
        (Stage::Counts, "shadow"),
    ] {
        match p.run_stages(&[stage]) {
            Err(Error::Stage { stage: s, reason }) => {
                assert_eq!(s, stage.name());
                assert!(reason.contains(&format!("`{producer}`")), "{reason}");
            }
            other => panic!("{stage:?}: expected a stage error, got {other:?}"),
        }
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = study(tmp.path());

    let mut dup = cfg.clone();
    dup.cities.push(dup.cities[0].clone());
    assert!(matches!(Pipeline::new(dup), Err(Error::Config(_))));

    let mut missing = cfg.clone();
    missing.cities[0].raster_after = tmp.path().join("nope.tif");
    assert!(matches!(Pipeline::new(missing), Err(Error::Config(_))));

    let mut bad = cfg.clone();
    bad.analytics.block_m = 0.0;
    assert!(matches!(Pipeline::new(bad), Err(Error::Config(_))));

    assert!(matches!(PipelineConfig::from_toml("cities = []\nbogus = 1"), Err(Error::Config(_))));
    assert!(matches!("squash".parse::<Stage>(), Err(Error::Config(_))));
}

#[test]
fn written_config_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let path = generate_study(tmp.path(), &common::tiny_study()).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let parsed = PipelineConfig::from_toml(&text).unwrap();
    assert_eq!(toml::to_string(&parsed).unwrap(), text);
    assert_eq!(parsed.training.epochs, 2);
    assert_eq!(parsed.cities.len(), 2);
}

//! Synthetic multi-city studies: before/after scene pairs with reference
//! labels, a training sample set from separate scenes, and a pipeline
//! configuration tying them together.

use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};

use crate::candidates::{extract_candidates, CandidateParams};
use crate::classifier::{scene_samples, write_samples, SampleParams};
use crate::error::{Error, Result};
use crate::pipeline::{CityConfig, PipelineConfig};
use crate::postproc::write_jsonl;
use crate::raster::ImageStats;
use crate::synth::{after_scene, generate_scene, random_scene, write_scene, LayoutParams, SceneSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyParams {
    pub seed: u64,
    pub n_cities: usize,
    pub n_train_scenes: usize,
    /// Vehicles per training scene.
    pub train_vehicles: usize,
    /// Vehicles in each city's before scene.
    pub city_vehicles: usize,
    pub layout: LayoutParams,
    pub sampling: SampleParams,
    /// Stringency range spread evenly over the cities.
    pub stringency: [f64; 2],
    /// Fraction of vehicles removed at the low and high ends of the range.
    pub removal: [f64; 2],
    /// Overrides the number of training epochs in the written configuration.
    pub epochs: Option<usize>,
}

impl Default for StudyParams {
    fn default() -> Self {
        StudyParams {
            seed: 1,
            n_cities: 4,
            n_train_scenes: 8,
            train_vehicles: 35,
            city_vehicles: 35,
            layout: LayoutParams::default(),
            sampling: SampleParams::default(),
            stringency: [35.0, 85.0],
            removal: [0.2, 0.75],
            epochs: None,
        }
    }
}

/// One generated city pair.
#[derive(Clone, Debug)]
pub struct StudyCity {
    pub id: String,
    pub stringency: f64,
    pub before: SceneSpec,
    pub after: SceneSpec,
}

/// Seeds are split into disjoint ranges so training and city scenes never
/// share a layout.
fn train_seed(base: u64, i: usize) -> u64 {
    base.wrapping_mul(1_000_003).wrapping_add(i as u64)
}

fn city_seed(base: u64, i: usize) -> u64 {
    base.wrapping_mul(1_000_003).wrapping_add(500_000 + 2 * i as u64)
}

fn lerp(r: [f64; 2], t: f64) -> f64 {
    r[0] + (r[1] - r[0]) * t
}

pub fn study_cities(p: &StudyParams) -> Result<Vec<StudyCity>> {
    let mut layout = p.layout.clone();
    layout.n_vehicles = p.city_vehicles;
    (0..p.n_cities)
        .map(|i| {
            let t = if p.n_cities > 1 { i as f64 / (p.n_cities - 1) as f64 } else { 0.0 };
            let seed = city_seed(p.seed, i);
            let before = random_scene(seed, &layout)?;
            let after = after_scene(&before, lerp(p.removal, t), seed + 1)?;
            Ok(StudyCity {
                id: format!("city{}", i + 1),
                stringency: lerp(p.stringency, t),
                before,
                after,
            })
        })
        .collect()
}

/// Writes the study under `dir` and returns the path of `pipeline.toml`.
///
/// Layout: `scenes/` (rasters, roads, truth), `labels/` (JSON lines),
/// `samples/` (training records) and `pipeline.toml` with paths relative to
/// `dir`.
pub fn generate_study(dir: impl AsRef<Path>, p: &StudyParams) -> Result<PathBuf> {
    let dir = dir.as_ref();
    if p.n_cities == 0 || p.n_train_scenes == 0 {
        return Err(Error::invalid("a study needs at least one city and one training scene"));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let cp = CandidateParams::default();
    let mut layout = p.layout.clone();
    layout.n_vehicles = p.train_vehicles;
    let mut samples = Vec::new();
    let mut sources = Vec::new();
    for i in 0..p.n_train_scenes {
        let seed = train_seed(p.seed, i);
        let spec = random_scene(seed, &layout)?;
        let (r, _, truth) = generate_scene(&spec)?;
        let mask = spec.road_mask()?;
        let cs = extract_candidates(&r, &mask, &cp)?;
        let boxes: Vec<_> = truth.vehicles.iter().map(|v| v.rect).collect();
        samples.extend(scene_samples(&r, &mask, &cs, &boxes, &p.sampling, seed)?);
        sources.push(ImageStats::from_raster(&r)?);
    }
    info!(
        "{} training samples, {} vehicle",
        samples.len(),
        samples.iter().filter(|s| s.vehicle).count()
    );
    write_samples(dir.join("samples"), &samples, &sources)?;

    let scenes = dir.join("scenes");
    let labels = dir.join("labels");
    std::fs::create_dir_all(&labels).map_err(|e| Error::io(&labels, e))?;
    let mut cities = Vec::new();
    for c in study_cities(p)? {
        let mut cfg = CityConfig {
            id: c.id.clone(),
            raster_before: PathBuf::from(format!("scenes/{}_before.tif", c.id)),
            raster_after: PathBuf::from(format!("scenes/{}_after.tif", c.id)),
            roads: PathBuf::from(format!("scenes/{}_before_roads.geojson", c.id)),
            stringency_index: Some(c.stringency),
            labels_before: None,
            labels_after: None,
        };
        for (spec, epoch) in [(&c.before, "before"), (&c.after, "after")] {
            let name = format!("{}_{epoch}", c.id);
            let (r, net, truth) = generate_scene(spec)?;
            write_scene(&scenes, &name, &r, &net, &truth)?;
            let lp = labels.join(format!("{name}.jsonl"));
            let mut w = std::io::BufWriter::new(std::fs::File::create(&lp).map_err(|e| Error::io(&lp, e))?);
            write_jsonl(&mut w, &truth.labels(&name))?;
            std::io::Write::flush(&mut w).map_err(|e| Error::io(&lp, e))?;
            let rel = PathBuf::from(format!("labels/{name}.jsonl"));
            if epoch == "before" {
                cfg.labels_before = Some(rel);
            } else {
                cfg.labels_after = Some(rel);
            }
        }
        cities.push(cfg);
    }

    let mut cfg = PipelineConfig {
        seed: p.seed,
        out_dir: PathBuf::from("out"),
        model: None,
        training_samples: Some(PathBuf::from("samples")),
        band_order: Default::default(),
        cities,
        road_buffers: Default::default(),
        candidates: cp,
        nms: Default::default(),
        shadow: Default::default(),
        training: Default::default(),
        architecture: Default::default(),
        analytics: Default::default(),
        eval: Default::default(),
    };
    if let Some(e) = p.epochs {
        cfg.training.epochs = e;
    }
    let text = toml::to_string(&cfg).map_err(|e| Error::Config(e.to_string()))?;
    let path = dir.join("pipeline.toml");
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

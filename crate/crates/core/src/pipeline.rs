//! Configuration and staged execution of the full workflow. Every stage reads
//! its inputs from the files written by earlier stages, so a partial rerun
//! sees exactly what a full run sees.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::analytics::{
    change_ratio, class_of, count_vehicles, density_grid, equal_interval, jenks_breaks, quad_regression, write_change_csv,
    write_counts_csv, write_grid_csv, write_heatmap_png, write_value_grid_csv, CountReport, CountRow, DensityGrid,
};
use crate::candidates::{
    extract_candidates, read_anchors_jsonl, write_anchors_jsonl, write_candidates_jsonl, CandidateParams,
};
use crate::classifier::{read_samples, score_anchors, train, Architecture, MultiBranchModel, TrainConfig};
use crate::error::{Error, Result};
use crate::eval::{evaluate_regions, write_region_csv, LabeledBox, MatchMode};
use crate::grid::Grid;
use crate::postproc::{
    apply_shadow_union, custom_nms, read_jsonl, shadow_coverage_mask, to_detections, write_jsonl, Detection, NmsParams,
    ScoredAnchor, ShadowParams,
};
use crate::raster::{load_raster, load_u8_plane, save_u8_plane, BandOrder, GeoTransform, ImageStats, Raster};
use crate::roadmask::{build_road_mask_with, load_geojson, RoadBuffers, RoadMask};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CityConfig {
    pub id: String,
    pub raster_before: PathBuf,
    pub raster_after: PathBuf,
    pub roads: PathBuf,
    #[serde(default)]
    pub stringency_index: Option<f64>,
    #[serde(default)]
    pub labels_before: Option<PathBuf>,
    #[serde(default)]
    pub labels_after: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyticsParams {
    pub block_m: f64,
    /// Equal-interval classes for per-epoch grids.
    pub epoch_classes: usize,
    /// Natural-breaks classes for the change grid.
    pub change_classes: usize,
    /// Heatmap pixels per block side.
    pub heatmap_scale: usize,
}

impl Default for AnalyticsParams {
    fn default() -> Self {
        AnalyticsParams {
            block_m: 300.0,
            epoch_classes: 5,
            change_classes: 5,
            heatmap_scale: 16,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalParams {
    pub mode: MatchMode,
}

fn d_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_out")]
    pub out_dir: PathBuf,
    /// Trained checkpoint for the classify stage.
    #[serde(default)]
    pub model: Option<PathBuf>,
    /// Sample directory; when set, the train stage fits a model first and the
    /// classify stage uses it.
    #[serde(default)]
    pub training_samples: Option<PathBuf>,
    #[serde(default)]
    pub band_order: BandOrder,
    pub cities: Vec<CityConfig>,
    #[serde(default)]
    pub road_buffers: RoadBuffers,
    #[serde(default)]
    pub candidates: CandidateParams,
    #[serde(default)]
    pub nms: NmsParams,
    #[serde(default)]
    pub shadow: ShadowParams,
    #[serde(default)]
    pub training: TrainConfig,
    #[serde(default)]
    pub architecture: Architecture,
    #[serde(default)]
    pub analytics: AnalyticsParams,
    #[serde(default)]
    pub eval: EvalParams,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Parses the file and resolves relative paths against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.resolve_paths(&base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.out_dir);
        for p in self.model.iter_mut().chain(self.training_samples.iter_mut()) {
            resolve(base, p);
        }
        for c in &mut self.cities {
            resolve(base, &mut c.raster_before);
            resolve(base, &mut c.raster_after);
            resolve(base, &mut c.roads);
            for p in c.labels_before.iter_mut().chain(c.labels_after.iter_mut()) {
                resolve(base, p);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.cities.is_empty() {
            return fail("no cities configured".into());
        }
        let mut seen = BTreeSet::new();
        for c in &self.cities {
            if c.id.is_empty() || !c.id.chars().all(|ch| ch.is_ascii_alphanumeric() || ch == '-' || ch == '_') {
                return fail(format!("city id `{}` must be non-empty ASCII letters, digits, `-` or `_`", c.id));
            }
            if !seen.insert(c.id.as_str()) {
                return fail(format!("city `{}` listed twice", c.id));
            }
            let files = [Some(&c.raster_before), Some(&c.raster_after), Some(&c.roads), c.labels_before.as_ref(), c.labels_after.as_ref()];
            for f in files.into_iter().flatten() {
                if !f.is_file() {
                    return fail(format!("city `{}`: {} does not exist", c.id, f.display()));
                }
            }
            if let Some(s) = c.stringency_index {
                if !s.is_finite() {
                    return fail(format!("city `{}`: stringency index must be finite", c.id));
                }
            }
        }
        if let Some(m) = &self.model {
            if self.training_samples.is_none() && !m.is_file() {
                return fail(format!("model {} does not exist", m.display()));
            }
        }
        if let Some(s) = &self.training_samples {
            if !s.join("manifest.json").is_file() {
                return fail(format!("{} is not a sample directory", s.display()));
            }
        }
        self.candidates.validate()?;
        self.training.validate()?;
        if !(self.analytics.block_m > 0.0) || self.analytics.epoch_classes < 2 || self.analytics.change_classes < 2 {
            return fail("analytics: block_m must be positive and class counts at least 2".into());
        }
        if self.analytics.heatmap_scale == 0 {
            return fail("analytics: heatmap_scale must be positive".into());
        }
        Ok(())
    }

    /// Checkpoint used by the classify stage.
    pub fn model_path(&self) -> Option<PathBuf> {
        if self.training_samples.is_some() {
            Some(self.out_dir.join("model.bin"))
        } else {
            self.model.clone()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Train,
    Mask,
    Candidates,
    Classify,
    Nms,
    Shadow,
    Counts,
    Eval,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Train,
        Stage::Mask,
        Stage::Candidates,
        Stage::Classify,
        Stage::Nms,
        Stage::Shadow,
        Stage::Counts,
        Stage::Eval,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Train => "train",
            Stage::Mask => "mask",
            Stage::Candidates => "candidates",
            Stage::Classify => "classify",
            Stage::Nms => "nms",
            Stage::Shadow => "shadow",
            Stage::Counts => "counts",
            Stage::Eval => "eval",
        }
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Epoch {
    Before,
    After,
}

impl Epoch {
    pub const BOTH: [Epoch; 2] = [Epoch::Before, Epoch::After];

    pub fn name(self) -> &'static str {
        match self {
            Epoch::Before => "before",
            Epoch::After => "after",
        }
    }
}

fn stage_err(stage: Stage, reason: impl Into<String>) -> Error {
    Error::Stage {
        stage: stage.name().into(),
        reason: reason.into(),
    }
}

/// Wraps failures so the message names the stage.
fn in_stage<T>(stage: Stage, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Stage { .. } | Error::Config(_) => e,
        other => stage_err(stage, other.to_string()),
    })
}

fn need(stage: Stage, producer: Stage, path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(stage_err(
            stage,
            format!("missing {}; run the `{}` stage first", path.display(), producer.name()),
        ))
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    f(&mut w)?;
    std::io::Write::flush(&mut w).map_err(|e| Error::io(path, e))
}

/// A validated configuration ready to run.
pub struct Pipeline {
    cfg: PipelineConfig,
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Pipeline { cfg })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    fn epoch_dir(&self, city: &CityConfig, e: Epoch) -> PathBuf {
        self.cfg.out_dir.join(&city.id).join(e.name())
    }

    fn report_dir(&self) -> PathBuf {
        self.cfg.out_dir.join("report")
    }

    fn raster_path(city: &CityConfig, e: Epoch) -> &Path {
        match e {
            Epoch::Before => &city.raster_before,
            Epoch::After => &city.raster_after,
        }
    }

    fn image_id(city: &CityConfig, e: Epoch) -> String {
        format!("{}_{}", city.id, e.name())
    }

    /// Every stage in order. Optional stages without configuration are skipped.
    pub fn run_all(&self) -> Result<()> {
        self.execute(&Stage::ALL, false)
    }

    /// Only the listed stages, in pipeline order. Their inputs must already
    /// exist on disk, and optional stages without configuration fail.
    pub fn run_stages(&self, stages: &[Stage]) -> Result<()> {
        self.execute(stages, true)
    }

    fn execute(&self, stages: &[Stage], explicit: bool) -> Result<()> {
        std::fs::create_dir_all(&self.cfg.out_dir).map_err(|e| Error::io(&self.cfg.out_dir, e))?;
        for stage in Stage::ALL {
            if !stages.contains(&stage) {
                continue;
            }
            info!("stage {}", stage.name());
            let r = match stage {
                Stage::Train => self.stage_train(explicit),
                Stage::Mask => self.stage_mask(),
                Stage::Candidates => self.stage_candidates(),
                Stage::Classify => self.stage_classify(),
                Stage::Nms => self.stage_nms(),
                Stage::Shadow => self.stage_shadow(),
                Stage::Counts => self.stage_counts(),
                Stage::Eval => self.stage_eval(explicit),
            };
            in_stage(stage, r)?;
        }
        Ok(())
    }

    fn stage_train(&self, explicit: bool) -> Result<()> {
        let Some(dir) = &self.cfg.training_samples else {
            if explicit {
                return Err(stage_err(Stage::Train, "no `training_samples` directory configured"));
            }
            return Ok(());
        };
        let (samples, _) = read_samples(dir)?;
        let (model, log) = train(&self.cfg.architecture, &samples, &self.cfg.training, self.cfg.seed)?;
        let path = self.cfg.out_dir.join("model.bin");
        model.save(&path)?;
        let lpath = self.cfg.out_dir.join("train_log.json");
        std::fs::write(&lpath, serde_json::to_string_pretty(&log)?).map_err(|e| Error::io(&lpath, e))
    }

    fn load_raster(&self, city: &CityConfig, e: Epoch) -> Result<Raster> {
        load_raster(Self::raster_path(city, e), &self.cfg.band_order)
    }

    fn load_mask(&self, stage: Stage, city: &CityConfig, e: Epoch) -> Result<RoadMask> {
        let p = self.epoch_dir(city, e).join("road_mask.tif");
        need(stage, Stage::Mask, &p)?;
        let (codes, geo) = load_u8_plane(&p)?;
        RoadMask::from_codes(&codes, geo)
    }

    fn stage_mask(&self) -> Result<()> {
        for city in &self.cfg.cities {
            let net = load_geojson(&city.roads)?;
            for e in Epoch::BOTH {
                let r = self.load_raster(city, e)?;
                let mask = build_road_mask_with(&net, r.width(), r.height(), r.geo(), &self.cfg.road_buffers);
                let dir = self.epoch_dir(city, e);
                std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                save_u8_plane(dir.join("road_mask.tif"), &mask.to_codes(), r.geo())?;
            }
        }
        Ok(())
    }

    fn stage_candidates(&self) -> Result<()> {
        for city in &self.cfg.cities {
            for e in Epoch::BOTH {
                let r = self.load_raster(city, e)?;
                let mask = self.load_mask(Stage::Candidates, city, e)?;
                let cs = extract_candidates(&r, &mask, &self.cfg.candidates)?;
                info!("{}: {} candidates, {} anchors", Self::image_id(city, e), cs.candidates.len(), cs.anchors.len());
                let dir = self.epoch_dir(city, e);
                write_file(&dir.join("candidates.jsonl"), |w| write_candidates_jsonl(w, &cs.candidates))?;
                write_file(&dir.join("anchors.jsonl"), |w| write_anchors_jsonl(w, &cs.anchors))?;
                let th = serde_json::json!({"tophat": cs.tophat_thresh, "bottomhat": cs.bottomhat_thresh});
                let p = dir.join("thresholds.json");
                std::fs::write(&p, serde_json::to_string_pretty(&th)?).map_err(|e| Error::io(&p, e))?;
            }
        }
        Ok(())
    }

    fn stage_classify(&self) -> Result<()> {
        let path = self
            .cfg
            .model_path()
            .ok_or_else(|| stage_err(Stage::Classify, "no model configured; set `model` or `training_samples`"))?;
        need(Stage::Classify, Stage::Train, &path)?;
        let model = MultiBranchModel::load(&path, &self.cfg.architecture)?;
        for city in &self.cfg.cities {
            for e in Epoch::BOTH {
                let dir = self.epoch_dir(city, e);
                let ap = dir.join("anchors.jsonl");
                need(Stage::Classify, Stage::Candidates, &ap)?;
                let anchors = read_anchors_jsonl(&read_text(&ap)?)?;
                let r = self.load_raster(city, e)?;
                let stats = ImageStats::from_raster(&r)?;
                let scored = score_anchors(&model, &r, &stats, &anchors)?;
                write_file(&dir.join("scores.jsonl"), |w| write_jsonl(w, &scored))?;
            }
        }
        Ok(())
    }

    fn stage_nms(&self) -> Result<()> {
        for city in &self.cfg.cities {
            for e in Epoch::BOTH {
                let dir = self.epoch_dir(city, e);
                let sp = dir.join("scores.jsonl");
                need(Stage::Nms, Stage::Classify, &sp)?;
                let scored: Vec<ScoredAnchor> = read_jsonl(&read_text(&sp)?)?;
                let positive: Vec<ScoredAnchor> =
                    scored.into_iter().filter(|s| s.prob > self.cfg.training.threshold).collect();
                let kept = custom_nms(&positive, &self.cfg.nms);
                let mask = self.load_mask(Stage::Nms, city, e)?;
                let dets = to_detections(&kept, &mask, &Self::image_id(city, e));
                write_file(&dir.join("nms.jsonl"), |w| write_jsonl(w, &dets))?;
            }
        }
        Ok(())
    }

    fn stage_shadow(&self) -> Result<()> {
        for city in &self.cfg.cities {
            let mut masks = Vec::new();
            let mut dets = Vec::new();
            for e in Epoch::BOTH {
                let dir = self.epoch_dir(city, e);
                let np = dir.join("nms.jsonl");
                need(Stage::Shadow, Stage::Nms, &np)?;
                dets.push(read_jsonl::<Detection>(&read_text(&np)?)?);
                let r = self.load_raster(city, e)?;
                let m = shadow_coverage_mask(&r, &self.cfg.shadow);
                save_u8_plane(dir.join("shadow_mask.tif"), &m.map(|&v| u8::from(v)), r.geo())?;
                masks.push(m);
            }
            let (a, b) = apply_shadow_union(&dets[0], &dets[1], &masks[0], &masks[1])?;
            for (e, d) in Epoch::BOTH.into_iter().zip([a, b]) {
                write_file(&self.epoch_dir(city, e).join("detections.jsonl"), |w| write_jsonl(w, &d))?;
            }
        }
        Ok(())
    }

    fn load_detections(&self, stage: Stage, city: &CityConfig, e: Epoch) -> Result<Vec<Detection>> {
        let p = self.epoch_dir(city, e).join("detections.jsonl");
        need(stage, Stage::Shadow, &p)?;
        read_jsonl(&read_text(&p)?)
    }

    fn extent(&self, stage: Stage, city: &CityConfig, e: Epoch) -> Result<(usize, usize, GeoTransform)> {
        let p = self.epoch_dir(city, e).join("road_mask.tif");
        need(stage, Stage::Mask, &p)?;
        let (plane, geo) = load_u8_plane(&p)?;
        Ok((plane.dims().0, plane.dims().1, geo))
    }

    fn grid_outputs(&self, name: &str, g: &DensityGrid) -> Result<()> {
        let dir = self.report_dir();
        let k = self.cfg.analytics.epoch_classes;
        let values = g.values();
        let breaks = equal_interval(&values, k)?;
        write_file(&dir.join(format!("grid_{name}.csv")), |w| write_grid_csv(w, g, &breaks))?;
        let classes: Vec<usize> = values.iter().map(|&v| class_of(v, &breaks)).collect();
        write_heatmap_png(dir.join(format!("grid_{name}.png")), g.rows, g.cols, &classes, k, self.cfg.analytics.heatmap_scale)
    }

    fn stage_counts(&self) -> Result<()> {
        let dir = self.report_dir();
        let mut rows = Vec::new();
        let mut changes = Vec::new();
        let mut points = Vec::new();
        for city in &self.cfg.cities {
            let mut per_epoch: Vec<CountReport> = Vec::new();
            let mut grids = Vec::new();
            for e in Epoch::BOTH {
                let dets = self.load_detections(Stage::Counts, city, e)?;
                let counts = count_vehicles(&dets);
                rows.push(CountRow {
                    city: city.id.clone(),
                    epoch: e.name().into(),
                    counts,
                });
                per_epoch.push(counts);
                let (w, h, geo) = self.extent(Stage::Counts, city, e)?;
                let g = density_grid(&dets, &geo, w, h, self.cfg.analytics.block_m)?;
                if g.total() + g.outside != dets.len() as u64 {
                    return Err(stage_err(Stage::Counts, "density grid lost detections"));
                }
                self.grid_outputs(&format!("{}_{}", city.id, e.name()), &g)?;
                grids.push(g);
            }
            self.change_grid(city, &grids[0], &grids[1])?;
            if let (Some(x), Ok(y)) = (city.stringency_index, change_ratio(per_epoch[0].arterial, per_epoch[1].arterial)) {
                points.push((city.id.clone(), x, y));
            }
            changes.push((city.id.clone(), per_epoch[0], per_epoch[1]));
        }
        write_file(&dir.join("counts.csv"), |w| write_counts_csv(w, &rows))?;
        write_file(&dir.join("change.csv"), |w| write_change_csv(w, &changes))?;
        write_file(&dir.join("regression_points.csv"), |w| {
            let mut out = csv::Writer::from_writer(w);
            out.write_record(["city", "stringency_index", "arterial_change_pct"])?;
            for (c, x, y) in &points {
                out.write_record([c.clone(), format!("{x}"), format!("{y:.2}")])?;
            }
            out.flush().map_err(|e| Error::io("<regression_points.csv>", e))
        })?;
        let xs: Vec<f64> = points.iter().map(|p| p.1).collect();
        let ys: Vec<f64> = points.iter().map(|p| p.2).collect();
        let reg = match quad_regression(&xs, &ys) {
            Ok(r) => serde_json::json!({"status": "fitted", "n": xs.len(), "a": r.a, "b": r.b, "c": r.c, "r2": r.r2}),
            Err(e) => serde_json::json!({"status": "skipped", "n": xs.len(), "reason": e.to_string()}),
        };
        let p = dir.join("regression.json");
        std::fs::write(&p, serde_json::to_string_pretty(&reg)?).map_err(|e| Error::io(&p, e))
    }

    fn change_grid(&self, city: &CityConfig, before: &DensityGrid, after: &DensityGrid) -> Result<()> {
        if (before.rows, before.cols) != (after.rows, after.cols) {
            warn!("{}: epoch grids differ in shape, no change grid", city.id);
            return Ok(());
        }
        let values: Vec<f64> = after.cells.iter().zip(&before.cells).map(|(&a, &b)| a as f64 - b as f64).collect();
        let mut distinct = values.clone();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        let k = self.cfg.analytics.change_classes.min(distinct.len());
        let breaks = if k >= 2 { jenks_breaks(&values, k)? } else { Vec::new() };
        let dir = self.report_dir();
        let name = format!("grid_{}_change", city.id);
        write_file(&dir.join(format!("{name}.csv")), |w| {
            write_value_grid_csv(w, before.rows, before.cols, &values, &breaks)
        })?;
        let classes: Vec<usize> = values.iter().map(|&v| class_of(v, &breaks)).collect();
        write_heatmap_png(
            dir.join(format!("{name}.png")),
            before.rows,
            before.cols,
            &classes,
            k.max(1),
            self.cfg.analytics.heatmap_scale,
        )
    }

    fn stage_eval(&self, explicit: bool) -> Result<()> {
        let mut dets = Vec::new();
        let mut labels: Vec<LabeledBox> = Vec::new();
        for city in &self.cfg.cities {
            for (e, lp) in Epoch::BOTH.into_iter().zip([&city.labels_before, &city.labels_after]) {
                let Some(lp) = lp else { continue };
                let id = Self::image_id(city, e);
                dets.extend(self.load_detections(Stage::Eval, city, e)?);
                let mut l: Vec<LabeledBox> = read_jsonl(&read_text(lp)?)?;
                // labels are matched within the image they were drawn on
                for b in &mut l {
                    b.region_id = id.clone();
                }
                labels.extend(l);
            }
        }
        if labels.is_empty() {
            if explicit {
                return Err(stage_err(Stage::Eval, "no city has `labels_before` or `labels_after`"));
            }
            return Ok(());
        }
        let labelled: BTreeSet<String> = labels.iter().map(|l| l.region_id.clone()).collect();
        dets.retain(|d| labelled.contains(&d.image_id));
        let rows = evaluate_regions(&dets, &labels, self.cfg.eval.mode);
        write_file(&self.report_dir().join("eval.csv"), |w| write_region_csv(w, &rows))
    }
}

/// Validates and runs every stage, returning the output directory.
pub fn run_pipeline(cfg: PipelineConfig) -> Result<PathBuf> {
    let out = cfg.out_dir.clone();
    Pipeline::new(cfg)?.run_all()?;
    Ok(out)
}

/// Reads a JSON-lines file of labels.
pub fn load_labels(path: impl AsRef<Path>) -> Result<Vec<LabeledBox>> {
    let path = path.as_ref();
    read_jsonl(&read_text(path)?)
}

/// Boolean shadow plane as written by the shadow stage.
pub fn load_shadow_mask(path: impl AsRef<Path>) -> Result<Grid<bool>> {
    Ok(load_u8_plane(path)?.0.map(|&v| v != 0))
}

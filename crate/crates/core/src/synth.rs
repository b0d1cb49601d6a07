//! Deterministic synthetic scenes: roads, planted vehicles, vegetation,
//! buildings and their shadows, with ground-truth manifests.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::analytics::CountReport;
use crate::candidates::{box_deg, Polarity};
use crate::error::{Error, Result};
use crate::eval::LabeledBox;
use crate::geometry::{OrientedBox, Point};
use crate::grid::Grid;
use crate::raster::{save_raster, GeoTransform, Raster};
use crate::roadmask::{build_road_mask_with, save_geojson, Road, RoadBuffers, RoadClass, RoadMask, RoadNetwork};

/// Polyline in pixel coordinates (`x = col`, `y = row`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneRoad {
    pub points: Vec<Point>,
    pub highway: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantedVehicle {
    /// Stable identity across paired epochs; defaults to the list index.
    #[serde(default)]
    pub id: Option<usize>,
    pub cx: f64,
    pub cy: f64,
    pub length: f64,
    pub width: f64,
    #[serde(default)]
    pub theta_deg: f64,
    pub polarity: Polarity,
    /// Per-band reflectance; by default the background shifted by
    /// `contrast_sigma` noise deviations towards the polarity.
    #[serde(default)]
    pub reflectance: Option<[f32; 4]>,
}

impl PlantedVehicle {
    pub fn rect(&self) -> OrientedBox {
        OrientedBox::new(self.cx, self.cy, self.length, self.width, self.theta_deg.to_radians())
    }
}

fn d_pixel_size() -> f64 {
    0.5
}
fn d_noise() -> f32 {
    0.01
}
fn d_contrast() -> f32 {
    3.0
}
fn d_background() -> [f32; 4] {
    [0.25, 0.32, 0.36, 0.40]
}
fn d_vegetation() -> [f32; 4] {
    [0.05, 0.12, 0.06, 0.55]
}
fn d_roof() -> [f32; 4] {
    [0.50, 0.56, 0.62, 0.60]
}
fn d_shadow() -> f32 {
    0.45
}

/// Full description of one scene. Geometry is in pixel coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    #[serde(default = "d_pixel_size")]
    pub pixel_size: f64,
    #[serde(default)]
    pub origin_x: f64,
    #[serde(default)]
    pub origin_y: f64,
    pub seed: u64,
    #[serde(default = "d_noise")]
    pub noise_sigma: f32,
    #[serde(default = "d_contrast")]
    pub contrast_sigma: f32,
    /// `[B, G, R, NIR]`.
    #[serde(default = "d_background")]
    pub background: [f32; 4],
    #[serde(default = "d_vegetation")]
    pub vegetation_reflectance: [f32; 4],
    #[serde(default = "d_roof")]
    pub roof_reflectance: [f32; 4],
    /// Multiplier applied to every band inside shadow polygons.
    #[serde(default = "d_shadow")]
    pub shadow_factor: f32,
    #[serde(default)]
    pub buffers: RoadBuffers,
    #[serde(default)]
    pub roads: Vec<SceneRoad>,
    #[serde(default)]
    pub vehicles: Vec<PlantedVehicle>,
    #[serde(default)]
    pub vegetation: Vec<Vec<Point>>,
    #[serde(default)]
    pub buildings: Vec<Vec<Point>>,
    #[serde(default)]
    pub shadows: Vec<Vec<Point>>,
}

impl SceneSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("scene spec: {e}")))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("scene spec: {e}")))
    }

    pub fn geo(&self) -> Result<GeoTransform> {
        GeoTransform::new(self.origin_x, self.origin_y, self.pixel_size)
    }

    /// Road network in world coordinates.
    pub fn road_network(&self) -> Result<RoadNetwork> {
        let geo = self.geo()?;
        RoadNetwork::new(
            self.roads
                .iter()
                .map(|r| Road {
                    points: r
                        .points
                        .iter()
                        .map(|p| {
                            let (x, y) = geo.pixel_to_world(p[0], p[1]);
                            [x, y]
                        })
                        .collect(),
                    highway: r.highway.clone(),
                })
                .collect(),
        )
    }

    pub fn road_mask(&self) -> Result<RoadMask> {
        Ok(build_road_mask_with(
            &self.road_network()?,
            self.width,
            self.height,
            &self.geo()?,
            &self.buffers,
        ))
    }

    fn validate(&self, mask: &RoadMask) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("scene must have non-zero dimensions"));
        }
        if !(self.noise_sigma >= 0.0) || !(self.contrast_sigma >= 0.0) || !(self.shadow_factor > 0.0) {
            return Err(Error::invalid("noise, contrast and shadow factor must be non-negative"));
        }
        for (i, v) in self.vehicles.iter().enumerate() {
            if !(v.length > 0.0 && v.width > 0.0) {
                return Err(Error::invalid(format!("vehicle {i} has non-positive size")));
            }
            for [x, y] in v.rect().corners().into_iter().chain([[v.cx, v.cy]]) {
                if !mask.class_at(x, y).is_road() {
                    return Err(Error::invalid(format!(
                        "vehicle {i} at ({:.1}, {:.1}) is off the road network",
                        v.cx, v.cy
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthVehicle {
    pub id: usize,
    #[serde(rename = "box", with = "box_deg")]
    pub rect: OrientedBox,
    pub road_class: RoadClass,
    pub polarity: Polarity,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SceneTruth {
    pub vehicles: Vec<TruthVehicle>,
    pub counts: CountReport,
}

impl SceneTruth {
    pub fn labels(&self, region_id: &str) -> Vec<LabeledBox> {
        self.vehicles
            .iter()
            .map(|v| LabeledBox {
                rect: v.rect,
                region_id: region_id.to_string(),
            })
            .collect()
    }
}

/// Even-odd test of a point against a simple polygon.
pub fn point_in_polygon(poly: &[Point], x: f64, y: f64) -> bool {
    let mut inside = false;
    let n = poly.len();
    for i in 0..n {
        let [xi, yi] = poly[i];
        let [xj, yj] = poly[(i + n - 1) % n];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
    }
    inside
}

fn poly_bounds(poly: &[Point], w: usize, h: usize) -> (usize, usize, usize, usize) {
    let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in poly {
        x0 = x0.min(p[0]);
        y0 = y0.min(p[1]);
        x1 = x1.max(p[0]);
        y1 = y1.max(p[1]);
    }
    let clamp = |v: f64, hi: usize| v.max(0.0).min(hi as f64 - 1.0);
    (
        clamp(y0.floor(), h) as usize,
        clamp(x0.floor(), w) as usize,
        clamp(y1.ceil(), h) as usize,
        clamp(x1.ceil(), w) as usize,
    )
}

fn fill_polygon(planes: &mut [Grid<f32>; 4], poly: &[Point], value: [f32; 4]) {
    if poly.len() < 3 {
        return;
    }
    let (w, h) = planes[0].dims();
    let (r0, c0, r1, c1) = poly_bounds(poly, w, h);
    for r in r0..=r1 {
        for c in c0..=c1 {
            if point_in_polygon(poly, c as f64, r as f64) {
                for (b, plane) in planes.iter_mut().enumerate() {
                    plane.set(r, c, value[b]);
                }
            }
        }
    }
}

fn fill_box(planes: &mut [Grid<f32>; 4], bx: &OrientedBox, value: [f32; 4]) {
    let (w, h) = planes[0].dims();
    let corners = bx.corners();
    let (r0, c0, r1, c1) = poly_bounds(&corners, w, h);
    for r in r0..=r1 {
        for c in c0..=c1 {
            if bx.contains(c as f64, r as f64) {
                for (b, plane) in planes.iter_mut().enumerate() {
                    plane.set(r, c, value[b]);
                }
            }
        }
    }
}

/// Renders the scene. The same spec always yields bit-identical output.
pub fn generate_scene(spec: &SceneSpec) -> Result<(Raster, RoadNetwork, SceneTruth)> {
    let geo = spec.geo()?;
    let net = spec.road_network()?;
    let mask = build_road_mask_with(&net, spec.width, spec.height, &geo, &spec.buffers);
    spec.validate(&mask)?;
    let (w, h) = (spec.width, spec.height);
    let mut planes: [Grid<f32>; 4] = std::array::from_fn(|b| Grid::new(w, h, spec.background[b]));
    for poly in &spec.vegetation {
        fill_polygon(&mut planes, poly, spec.vegetation_reflectance);
    }
    for poly in &spec.buildings {
        fill_polygon(&mut planes, poly, spec.roof_reflectance);
    }
    let shift = spec.contrast_sigma * spec.noise_sigma;
    let mut truth = SceneTruth::default();
    for (i, v) in spec.vehicles.iter().enumerate() {
        let value = v.reflectance.unwrap_or_else(|| {
            let s = match v.polarity {
                Polarity::Bright => shift,
                Polarity::Dark => -shift,
            };
            spec.background.map(|b| b + s)
        });
        let rect = v.rect();
        fill_box(&mut planes, &rect, value);
        let road_class = mask.class_at(v.cx, v.cy);
        match road_class {
            RoadClass::Arterial => truth.counts.arterial += 1,
            RoadClass::Collector => truth.counts.collector += 1,
            RoadClass::Local => truth.counts.local += 1,
            RoadClass::NonRoad => unreachable!("validated on-road"),
        }
        truth.counts.total += 1;
        truth.vehicles.push(TruthVehicle {
            id: v.id.unwrap_or(i),
            rect,
            road_class,
            polarity: v.polarity,
        });
    }
    if !spec.shadows.is_empty() {
        let mut shade = Grid::new(w, h, false);
        for poly in &spec.shadows {
            let (r0, c0, r1, c1) = poly_bounds(poly, w, h);
            for r in r0..=r1 {
                for c in c0..=c1 {
                    if poly.len() >= 3 && point_in_polygon(poly, c as f64, r as f64) {
                        shade.set(r, c, true);
                    }
                }
            }
        }
        for plane in planes.iter_mut() {
            for (v, &s) in plane.as_mut_slice().iter_mut().zip(shade.as_slice()) {
                if s {
                    *v *= spec.shadow_factor;
                }
            }
        }
    }
    if spec.noise_sigma > 0.0 {
        let normal = Normal::new(0.0f32, spec.noise_sigma).map_err(|e| Error::invalid(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        for plane in planes.iter_mut() {
            for v in plane.as_mut_slice() {
                *v += normal.sample(&mut rng);
            }
        }
    }
    Ok((Raster::new(planes, geo)?, net, truth))
}

/// Same layout with a seeded subset of vehicles removed so that
/// `round((1 - f) * n)` remain, and fresh noise.
pub fn after_scene(spec: &SceneSpec, removal_fraction: f64, seed: u64) -> Result<SceneSpec> {
    if !(0.0..=1.0).contains(&removal_fraction) {
        return Err(Error::invalid(format!("removal fraction {removal_fraction} outside [0, 1]")));
    }
    let n = spec.vehicles.len();
    let keep = ((1.0 - removal_fraction) * n as f64).round() as usize;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut kept: Vec<usize> = idx[..keep].to_vec();
    kept.sort_unstable();
    let mut out = spec.clone();
    out.seed = seed;
    out.vehicles = kept
        .into_iter()
        .map(|i| {
            let mut v = spec.vehicles[i].clone();
            v.id = Some(v.id.unwrap_or(i));
            v
        })
        .collect();
    Ok(out)
}

/// Knobs for [`random_scene`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LayoutParams {
    pub width: usize,
    pub height: usize,
    pub n_vehicles: usize,
    pub dark_fraction: f64,
    pub noise_sigma: f32,
    pub contrast_sigma: f32,
    pub n_vegetation: usize,
    pub n_buildings: usize,
    /// Minimum free margin around each vehicle, in pixels.
    pub spacing_px: f64,
}

impl Default for LayoutParams {
    fn default() -> Self {
        LayoutParams {
            width: 384,
            height: 384,
            n_vehicles: 60,
            dark_fraction: 0.35,
            noise_sigma: 0.01,
            contrast_sigma: 3.0,
            n_vegetation: 4,
            n_buildings: 3,
            spacing_px: 4.0,
        }
    }
}

struct Lane {
    start: Point,
    dir: Point,
    len: f64,
}

fn lanes_for(road: &SceneRoad, offsets: &[f64]) -> Vec<Lane> {
    let [a, b] = [road.points[0], road.points[1]];
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len = (dx * dx + dy * dy).sqrt();
    let dir = [dx / len, dy / len];
    let normal = [-dir[1], dir[0]];
    offsets
        .iter()
        .map(|&o| Lane {
            start: [a[0] + normal[0] * o, a[1] + normal[1] * o],
            dir,
            len,
        })
        .collect()
}

fn inflate(b: &OrientedBox, m: f64) -> OrientedBox {
    OrientedBox::new(b.cx, b.cy, b.w + 2.0 * m, b.h + 2.0 * m, b.theta)
}

fn rect_poly(c0: f64, r0: f64, c1: f64, r1: f64) -> Vec<Point> {
    vec![[c0, r0], [c1, r0], [c1, r1], [c0, r1]]
}

fn region_clear(mask: &RoadMask, poly: &[Point], margin: isize) -> bool {
    let (w, h) = (mask.width(), mask.height());
    let (r0, c0, r1, c1) = poly_bounds(poly, w, h);
    for r in r0 as isize - margin..=r1 as isize + margin {
        for c in c0 as isize - margin..=c1 as isize + margin {
            if r >= 0 && c >= 0 && (r as usize) < h && (c as usize) < w && mask.is_road(r as usize, c as usize) {
                return false;
            }
        }
    }
    true
}

/// A seeded street scene: an arterial, a collector, a local and a diagonal
/// living street, with vehicles in lanes, vegetation patches off the road,
/// and buildings whose axis-aligned shadows reach onto the carriageway.
pub fn random_scene(seed: u64, p: &LayoutParams) -> Result<SceneSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_5ce7e);
    let (w, h) = (p.width as f64, p.height as f64);
    let roads = vec![
        SceneRoad { points: vec![[-10.0, (0.22 * h).round()], [w + 10.0, (0.22 * h).round()]], highway: "primary".into() },
        SceneRoad { points: vec![[(0.70 * w).round(), -10.0], [(0.70 * w).round(), h + 10.0]], highway: "secondary".into() },
        SceneRoad { points: vec![[-10.0, (0.78 * h).round()], [w + 10.0, (0.78 * h).round()]], highway: "residential".into() },
        SceneRoad { points: vec![[-10.0, 0.36 * h], [0.62 * w, h + 10.0]], highway: "living_street".into() },
    ];
    let mut spec = SceneSpec {
        width: p.width,
        height: p.height,
        pixel_size: 0.5,
        origin_x: 0.0,
        origin_y: 0.0,
        seed,
        noise_sigma: p.noise_sigma,
        contrast_sigma: p.contrast_sigma,
        background: d_background(),
        vegetation_reflectance: d_vegetation(),
        roof_reflectance: d_roof(),
        shadow_factor: d_shadow(),
        buffers: RoadBuffers::default(),
        roads,
        vehicles: Vec::new(),
        vegetation: Vec::new(),
        buildings: Vec::new(),
        shadows: Vec::new(),
    };
    let mask = spec.road_mask()?;

    // buildings just off the arterial, shadows falling onto it
    let art_y = (0.22 * h).round();
    let art_half = spec.buffers.arterial_m / spec.pixel_size;
    for _ in 0..200 {
        if spec.buildings.len() >= p.n_buildings {
            break;
        }
        let bw = rng.random_range(30.0..50.0f64).round();
        let bh = rng.random_range(24.0..36.0f64).round();
        let c0 = rng.random_range(0.0..(w - bw)).round();
        let r1 = art_y - art_half - 3.0;
        let r0 = r1 - bh;
        if r0 < 0.0 {
            break;
        }
        let poly = rect_poly(c0, r0, c0 + bw, r1);
        if !region_clear(&mask, &poly, 2) || spec.buildings.iter().any(|b| b[0][0] < c0 + bw + 8.0 && c0 < b[1][0] + 8.0) {
            continue;
        }
        spec.shadows.push(rect_poly(c0, r1 + 1.0, c0 + bw, r1 + rng.random_range(22.0..32.0f64).round()));
        spec.buildings.push(poly);
    }
    for _ in 0..400 {
        if spec.vegetation.len() >= p.n_vegetation {
            break;
        }
        let vw = rng.random_range(16.0..40.0f64).round();
        let vh = rng.random_range(16.0..40.0f64).round();
        let c0 = rng.random_range(0.0..(w - vw)).round();
        let r0 = rng.random_range(0.0..(h - vh)).round();
        let poly = rect_poly(c0, r0, c0 + vw, r0 + vh);
        if region_clear(&mask, &poly, 3) && !spec.buildings.iter().chain(&spec.vegetation).any(|b| {
            b[0][0] < c0 + vw + 4.0 && c0 < b[1][0] + 4.0 && b[0][1] < r0 + vh + 4.0 && r0 < b[2][1] + 4.0
        }) {
            spec.vegetation.push(poly);
        }
    }

    let shadow_boxes: Vec<OrientedBox> = spec
        .shadows
        .iter()
        .map(|s| {
            let (c0, r0, c1, r1) = (s[0][0], s[0][1], s[1][0], s[2][1]);
            OrientedBox::axis_aligned((c0 + c1) / 2.0, (r0 + r1) / 2.0, c1 - c0 + 2.0, r1 - r0 + 2.0)
        })
        .collect();
    let mut lanes = Vec::new();
    for (road, offsets) in spec.roads.iter().zip([
        &[-26.0, -10.0, 10.0, 26.0][..],
        &[-26.0, -10.0, 10.0, 26.0][..],
        &[-18.0, -6.0, 6.0, 18.0][..],
        &[-6.0, 6.0][..],
    ]) {
        lanes.extend(lanes_for(road, offsets));
    }
    let mut placed: Vec<OrientedBox> = Vec::new();
    let mut attempts = 0;
    while spec.vehicles.len() < p.n_vehicles && attempts < 200 * p.n_vehicles.max(1) {
        attempts += 1;
        let lane = &lanes[rng.random_range(0..lanes.len())];
        let t = rng.random_range(0.0..lane.len);
        let length = rng.random_range(8..=12) as f64;
        let width = rng.random_range(3..=5) as f64;
        let mut cx = lane.start[0] + lane.dir[0] * t;
        let mut cy = lane.start[1] + lane.dir[1] * t;
        let axis = lane.dir[0].abs() < 1e-12 || lane.dir[1].abs() < 1e-12;
        if axis {
            // land the box on whole pixels
            let (sx, sy) = if lane.dir[1].abs() < 1e-12 { (length, width) } else { (width, length) };
            cx = cx.floor() + if sx as usize % 2 == 0 { 0.5 } else { 0.0 };
            cy = cy.floor() + if sy as usize % 2 == 0 { 0.5 } else { 0.0 };
        }
        let theta = lane.dir[1].atan2(lane.dir[0]);
        let rect = OrientedBox::new(cx, cy, length, width, theta);
        let margin = rect.corners().iter().all(|&[x, y]| x >= 4.0 && y >= 4.0 && x <= w - 5.0 && y <= h - 5.0);
        if !margin
            || rect.corners().iter().any(|&[x, y]| !mask.class_at(x, y).is_road())
            || shadow_boxes.iter().any(|s| s.intersection_area(&inflate(&rect, 3.0)) > 0.0)
            || placed.iter().any(|o| inflate(o, p.spacing_px).intersection_area(&inflate(&rect, p.spacing_px)) > 0.0)
        {
            continue;
        }
        let polarity = if rng.random_bool(p.dark_fraction) { Polarity::Dark } else { Polarity::Bright };
        let mut theta_deg = theta.to_degrees();
        if theta_deg.abs() < 1e-9 {
            theta_deg = 0.0;
        }
        placed.push(rect);
        spec.vehicles.push(PlantedVehicle {
            id: None,
            cx,
            cy,
            length,
            width,
            theta_deg,
            polarity,
            reflectance: None,
        });
    }
    if spec.vehicles.len() < p.n_vehicles {
        return Err(Error::invalid(format!(
            "could only place {} of {} vehicles",
            spec.vehicles.len(),
            p.n_vehicles
        )));
    }
    Ok(spec)
}

/// Writes `<name>.tif`, `<name>_roads.geojson` and `<name>_truth.json`.
pub fn write_scene(dir: impl AsRef<Path>, name: &str, raster: &Raster, net: &RoadNetwork, truth: &SceneTruth) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_raster(dir.join(format!("{name}.tif")), raster)?;
    save_geojson(dir.join(format!("{name}_roads.geojson")), net)?;
    let p = dir.join(format!("{name}_truth.json"));
    let text = serde_json::to_string_pretty(truth)?;
    std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::{compute_ndvi, Band};

    fn tiny() -> SceneSpec {
        SceneSpec::from_toml(
            r#"
            width = 64
            height = 96
            seed = 7
            [[roads]]
            points = [[0.0, 48.0], [63.0, 48.0]]
            highway = "residential"
            [[vehicles]]
            cx = 20.5
            cy = 48.5
            length = 10.0
            width = 4.0
            polarity = "bright"
            [[vehicles]]
            cx = 45.5
            cy = 38.0
            length = 8.0
            width = 3.0
            polarity = "dark"
            "#,
        )
        .unwrap()
    }

    #[test]
    fn toml_round_trip() {
        let s = tiny();
        assert_eq!(SceneSpec::from_toml(&s.to_toml().unwrap()).unwrap(), s);
    }

    #[test]
    fn vehicles_are_rendered_with_contrast() {
        let mut s = tiny();
        s.noise_sigma = 0.0;
        let (r, _, _) = generate_scene(&s).unwrap();
        assert_eq!(*r.band(Band::R).get(48, 20), 0.36);
        let (noisy, _, truth) = generate_scene(&tiny()).unwrap();
        let mean = |r0: usize, r1: usize, c0: usize, c1: usize| {
            let g = noisy.band(Band::G);
            let mut acc = 0.0;
            for r in r0..r1 {
                for c in c0..c1 {
                    acc += *g.get(r, c) as f64;
                }
            }
            acc / ((r1 - r0) * (c1 - c0)) as f64
        };
        // +/- 3 sigma over the 0.32 background
        assert!((mean(47, 51, 16, 26) - 0.35).abs() < 0.006);
        assert!((mean(37, 40, 42, 50) - 0.29).abs() < 0.008);
        assert!((mean(60, 90, 0, 64) - 0.32).abs() < 0.002);
        assert_eq!(truth.counts, CountReport { total: 2, arterial: 0, collector: 0, local: 2 });
        assert_eq!(truth.vehicles[1].polarity, Polarity::Dark);
    }

    #[test]
    fn same_seed_same_bytes() {
        let (a, _, _) = generate_scene(&tiny()).unwrap();
        let (b, _, _) = generate_scene(&tiny()).unwrap();
        for band in Band::ALL {
            let bits = |r: &Raster| r.band(band).as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a), bits(&b));
        }
    }

    #[test]
    fn off_road_vehicle_rejected() {
        let mut s = tiny();
        s.vehicles[0].cy = 2.0;
        assert!(generate_scene(&s).is_err());
    }

    #[test]
    fn vegetation_ndvi_above_threshold() {
        let mut s = tiny();
        s.vegetation.push(rect_poly(2.0, 2.0, 12.0, 8.0));
        let (r, _, _) = generate_scene(&s).unwrap();
        let ndvi = compute_ndvi(&r);
        assert!(*ndvi.get(5, 6) > 0.5);
        assert!(*ndvi.get(60, 40) < 0.3);
    }

    #[test]
    fn after_scene_keeps_rounded_share() {
        let spec = random_scene(3, &LayoutParams::default()).unwrap();
        let n = spec.vehicles.len();
        for f in [0.0, 0.25, 0.5, 0.6, 1.0] {
            let a = after_scene(&spec, f, 99).unwrap();
            assert_eq!(a.vehicles.len(), ((1.0 - f) * n as f64).round() as usize);
            let (_, _, t) = generate_scene(&a).unwrap();
            assert_eq!(t.counts.total as usize, a.vehicles.len());
        }
    }

    #[test]
    fn random_scene_places_everything_on_road() {
        let spec = random_scene(11, &LayoutParams::default()).unwrap();
        assert_eq!(spec.vehicles.len(), 60);
        let (_, _, truth) = generate_scene(&spec).unwrap();
        let c = truth.counts;
        assert_eq!(c.total, c.arterial + c.collector + c.local);
        assert!(c.arterial > 0 && c.collector > 0 && c.local > 0);
    }
}

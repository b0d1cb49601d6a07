//! Road-class masks rasterised from buffered highway polylines.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::grid::Grid;
use crate::raster::{GeoTransform, Raster};

/// Ordered by priority: `Arterial > Collector > Local > NonRoad`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoadClass {
    #[default]
    NonRoad,
    Local,
    Collector,
    Arterial,
}

impl RoadClass {
    pub const ROADS: [RoadClass; 3] = [RoadClass::Arterial, RoadClass::Collector, RoadClass::Local];

    /// Mask code: 0 non-road, 1 local, 2 collector, 3 arterial.
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Result<Self> {
        Ok(match code {
            0 => RoadClass::NonRoad,
            1 => RoadClass::Local,
            2 => RoadClass::Collector,
            3 => RoadClass::Arterial,
            _ => return Err(Error::invalid(format!("unknown road class code {code}"))),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            RoadClass::NonRoad => "non_road",
            RoadClass::Local => "local",
            RoadClass::Collector => "collector",
            RoadClass::Arterial => "arterial",
        }
    }

    pub fn is_road(self) -> bool {
        self != RoadClass::NonRoad
    }
}

/// Buffer half-widths in metres per class.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoadBuffers {
    pub arterial_m: f64,
    pub collector_m: f64,
    pub local_m: f64,
}

impl Default for RoadBuffers {
    fn default() -> Self {
        RoadBuffers {
            arterial_m: 20.0,
            collector_m: 20.0,
            local_m: 15.0,
        }
    }
}

impl RoadBuffers {
    pub fn for_class(&self, class: RoadClass) -> f64 {
        match class {
            RoadClass::Arterial => self.arterial_m,
            RoadClass::Collector => self.collector_m,
            RoadClass::Local => self.local_m,
            RoadClass::NonRoad => 0.0,
        }
    }
}

fn tag_class(tag: &str) -> RoadClass {
    let base = tag.strip_suffix("_link").unwrap_or(tag);
    let linkable = base != tag;
    match base {
        "motorway" | "trunk" | "primary" => RoadClass::Arterial,
        "secondary" | "tertiary" | "unclassified" => RoadClass::Collector,
        "residential" | "living_street" if !linkable => RoadClass::Local,
        _ => RoadClass::NonRoad,
    }
}

/// OSM `highway` tag to class and default buffer half-width.
pub fn classify_highway_tag(tag: &str) -> (RoadClass, f64) {
    let class = tag_class(tag);
    (class, RoadBuffers::default().for_class(class))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Road {
    pub points: Vec<Point>,
    pub highway: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RoadNetwork {
    pub roads: Vec<Road>,
}

impl RoadNetwork {
    pub fn new(roads: Vec<Road>) -> Result<Self> {
        for (i, r) in roads.iter().enumerate() {
            if r.points.len() < 2 {
                return Err(Error::invalid(format!("road {i} has fewer than 2 vertices")));
            }
            if r.points.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("road {i} has non-finite coordinates")));
            }
        }
        Ok(RoadNetwork { roads })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoadMask {
    classes: Grid<RoadClass>,
    geo: GeoTransform,
}

impl RoadMask {
    pub fn new(classes: Grid<RoadClass>, geo: GeoTransform) -> Self {
        RoadMask { classes, geo }
    }

    pub fn classes(&self) -> &Grid<RoadClass> {
        &self.classes
    }

    pub fn geo(&self) -> &GeoTransform {
        &self.geo
    }

    pub fn width(&self) -> usize {
        self.classes.width()
    }

    pub fn height(&self) -> usize {
        self.classes.height()
    }

    /// Class of the pixel containing pixel-space point `(x, y)`, where pixel
    /// `(row, col)` has its centre at `(col, row)`.
    pub fn class_at(&self, x: f64, y: f64) -> RoadClass {
        let (c, r) = ((x + 0.5).floor(), (y + 0.5).floor());
        self.classes
            .try_get(r as isize, c as isize)
            .copied()
            .unwrap_or(RoadClass::NonRoad)
    }

    pub fn is_road(&self, row: usize, col: usize) -> bool {
        self.classes.get(row, col).is_road()
    }

    pub fn road_pixels(&self) -> Grid<bool> {
        self.classes.map(|c| c.is_road())
    }

    pub fn to_codes(&self) -> Grid<u8> {
        self.classes.map(|c| c.code())
    }

    pub fn from_codes(codes: &Grid<u8>, geo: GeoTransform) -> Result<Self> {
        let mut data = Vec::with_capacity(codes.as_slice().len());
        for &c in codes.as_slice() {
            data.push(RoadClass::from_code(c)?);
        }
        Ok(RoadMask {
            classes: Grid::from_vec(codes.width(), codes.height(), data)?,
            geo,
        })
    }
}

fn dist2_to_segment(p: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (qx, qy) = (a[0] + t * dx - p[0], a[1] + t * dy - p[1]);
    qx * qx + qy * qy
}

/// Labels every pixel whose centre lies within a road's buffer with the
/// highest-priority covering class.
pub fn build_road_mask(net: &RoadNetwork, target: &Raster) -> RoadMask {
    build_road_mask_with(net, target.width(), target.height(), target.geo(), &RoadBuffers::default())
}

pub fn build_road_mask_with(
    net: &RoadNetwork,
    width: usize,
    height: usize,
    geo: &GeoTransform,
    buffers: &RoadBuffers,
) -> RoadMask {
    let mut classes = Grid::new(width, height, RoadClass::NonRoad);
    if net.roads.is_empty() {
        log::warn!("road network is empty; mask is all non-road");
    }
    let ps = geo.pixel_size;
    for road in &net.roads {
        let class = tag_class(&road.highway);
        let buffer = buffers.for_class(class);
        if !class.is_road() || buffer <= 0.0 {
            continue;
        }
        let b2 = buffer * buffer;
        for seg in road.points.windows(2) {
            let (a, b) = (seg[0], seg[1]);
            // pixel-index bounds of the buffered segment, padded by one pixel
            let col_of = |x: f64| (x - geo.origin_x) / ps - 0.5;
            let row_of = |y: f64| (geo.origin_y - y) / ps - 0.5;
            let c0 = (col_of(a[0].min(b[0]) - buffer).floor() - 1.0).max(0.0) as usize;
            let c1 = (col_of(a[0].max(b[0]) + buffer).ceil() + 1.0).min(width as f64 - 1.0);
            let r0 = (row_of(a[1].max(b[1]) + buffer).floor() - 1.0).max(0.0) as usize;
            let r1 = (row_of(a[1].min(b[1]) - buffer).ceil() + 1.0).min(height as f64 - 1.0);
            if c1 < 0.0 || r1 < 0.0 {
                continue;
            }
            for r in r0..=r1 as usize {
                for c in c0..=c1 as usize {
                    let slot = classes.get_mut(r, c);
                    if *slot >= class {
                        continue;
                    }
                    let (x, y) = geo.pixel_to_world(c as f64, r as f64);
                    if dist2_to_segment([x, y], a, b) <= b2 {
                        *slot = class;
                    }
                }
            }
        }
    }
    RoadMask::new(classes, *geo)
}

fn line_coords(v: &Value) -> Result<Vec<Point>> {
    let arr = v
        .as_array()
        .ok_or_else(|| Error::invalid("LineString coordinates must be an array"))?;
    arr.iter()
        .map(|p| {
            let xy = p.as_array().filter(|a| a.len() >= 2);
            match xy.map(|a| (a[0].as_f64(), a[1].as_f64())) {
                Some((Some(x), Some(y))) => Ok([x, y]),
                _ => Err(Error::invalid("coordinate must be [x, y]")),
            }
        })
        .collect()
}

/// Parses a GeoJSON `FeatureCollection` of `LineString` / `MultiLineString`
/// features with a `highway` property.
pub fn parse_geojson(text: &str) -> Result<RoadNetwork> {
    let doc: Value = serde_json::from_str(text)?;
    let features = doc
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::invalid("GeoJSON must be a FeatureCollection with `features`"))?;
    let mut roads = Vec::new();
    for f in features {
        let highway = f
            .pointer("/properties/highway")
            .and_then(Value::as_str)
            .unwrap_or("")
            .to_string();
        let Some(geom) = f.get("geometry").filter(|g| !g.is_null()) else {
            continue;
        };
        let coords = geom.get("coordinates").unwrap_or(&Value::Null);
        match geom.get("type").and_then(Value::as_str) {
            Some("LineString") => roads.push(Road {
                points: line_coords(coords)?,
                highway,
            }),
            Some("MultiLineString") => {
                for part in coords.as_array().into_iter().flatten() {
                    roads.push(Road {
                        points: line_coords(part)?,
                        highway: highway.clone(),
                    });
                }
            }
            _ => continue,
        }
    }
    RoadNetwork::new(roads)
}

pub fn load_geojson(path: impl AsRef<Path>) -> Result<RoadNetwork> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_geojson(&text)
}

pub fn to_geojson(net: &RoadNetwork) -> Value {
    let features: Vec<Value> = net
        .roads
        .iter()
        .map(|r| {
            json!({
                "type": "Feature",
                "properties": {"highway": r.highway},
                "geometry": {"type": "LineString", "coordinates": r.points},
            })
        })
        .collect();
    json!({"type": "FeatureCollection", "features": features})
}

pub fn save_geojson(path: impl AsRef<Path>, net: &RoadNetwork) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(&to_geojson(net))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geo() -> GeoTransform {
        GeoTransform::new(0.0, 100.0, 0.5).unwrap()
    }

    fn road(points: &[Point], tag: &str) -> Road {
        Road {
            points: points.to_vec(),
            highway: tag.to_string(),
        }
    }

    #[test]
    fn tag_table() {
        assert_eq!(classify_highway_tag("motorway_link"), (RoadClass::Arterial, 20.0));
        assert_eq!(classify_highway_tag("trunk"), (RoadClass::Arterial, 20.0));
        assert_eq!(classify_highway_tag("tertiary_link"), (RoadClass::Collector, 20.0));
        assert_eq!(classify_highway_tag("unclassified"), (RoadClass::Collector, 20.0));
        assert_eq!(classify_highway_tag("living_street"), (RoadClass::Local, 15.0));
        assert_eq!(classify_highway_tag("residential"), (RoadClass::Local, 15.0));
        assert_eq!(classify_highway_tag("footway"), (RoadClass::NonRoad, 0.0));
        assert_eq!(classify_highway_tag(""), (RoadClass::NonRoad, 0.0));
    }

    #[test]
    fn horizontal_arterial_is_eighty_pixels_wide() {
        // road along y = 50 m, i.e. between pixel rows 99 and 100
        let net = RoadNetwork::new(vec![road(&[[-10.0, 50.0], [110.0, 50.0]], "primary")]).unwrap();
        let m = build_road_mask_with(&net, 200, 200, &geo(), &RoadBuffers::default());
        let col: Vec<bool> = (0..200).map(|r| m.is_road(r, 100)).collect();
        assert_eq!(col.iter().filter(|&&b| b).count(), 80);
        assert!(col[60] && col[139] && !col[59] && !col[140]);
    }

    #[test]
    fn crossing_takes_priority_class() {
        let net = RoadNetwork::new(vec![
            road(&[[0.0, 50.0], [100.0, 50.0]], "residential"),
            road(&[[50.0, 0.0], [50.0, 100.0]], "motorway"),
        ])
        .unwrap();
        let m = build_road_mask_with(&net, 200, 200, &geo(), &RoadBuffers::default());
        assert_eq!(m.class_at(100.0, 100.0), RoadClass::Arterial);
        assert_eq!(m.class_at(10.0, 100.0), RoadClass::Local);
        assert_eq!(m.class_at(10.0, 10.0), RoadClass::NonRoad);
    }

    #[test]
    fn empty_network_gives_empty_mask() {
        let m = build_road_mask_with(&RoadNetwork::default(), 10, 10, &geo(), &RoadBuffers::default());
        assert_eq!(m.road_pixels().count_true(), 0);
    }

    #[test]
    fn degenerate_polyline_rejected() {
        assert!(RoadNetwork::new(vec![road(&[[0.0, 0.0]], "primary")]).is_err());
        assert!(RoadNetwork::new(vec![road(&[[0.0, f64::NAN], [1.0, 1.0]], "primary")]).is_err());
    }

    #[test]
    fn geojson_round_trip() {
        let net = RoadNetwork::new(vec![
            road(&[[1.0, 2.0], [3.5, 4.0], [5.0, 6.0]], "secondary"),
            road(&[[0.0, 0.0], [1.0, 1.0]], "residential"),
        ])
        .unwrap();
        let text = serde_json::to_string(&to_geojson(&net)).unwrap();
        assert_eq!(parse_geojson(&text).unwrap(), net);
        let multi = r#"{"type":"FeatureCollection","features":[{"type":"Feature",
            "properties":{"highway":"trunk"},
            "geometry":{"type":"MultiLineString","coordinates":[[[0,0],[1,0]],[[0,1],[1,1]]]}},
            {"type":"Feature","properties":{},"geometry":{"type":"Point","coordinates":[0,0]}}]}"#;
        let parsed = parse_geojson(multi).unwrap();
        assert_eq!(parsed.roads.len(), 2);
        assert_eq!(parsed.roads[1].highway, "trunk");
    }

    #[test]
    fn codes_round_trip() {
        let net = RoadNetwork::new(vec![road(&[[0.0, 90.0], [20.0, 90.0]], "tertiary")]).unwrap();
        let m = build_road_mask_with(&net, 40, 40, &geo(), &RoadBuffers::default());
        assert_eq!(RoadMask::from_codes(&m.to_codes(), geo()).unwrap(), m);
        assert!(RoadMask::from_codes(&Grid::new(2, 2, 9), geo()).is_err());
    }
}

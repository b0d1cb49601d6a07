//! Unsupervised vehicle-candidate extraction and anchor generation.

use std::collections::VecDeque;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{convex_hull, min_area_rect, polygon_area, OrientedBox, Point};
use crate::grid::Grid;
use crate::morph;
use crate::raster::{compute_ndvi, Raster};
use crate::roadmask::RoadMask;

/// Scale factor turning a median absolute deviation into a normal-consistent
/// standard deviation.
pub const MAD_TO_STD: f64 = 1.4826;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CandidateParams {
    pub morph_kernel: usize,
    pub open_kernel: usize,
    /// Fixed density thresholds; `None` uses `median + robust_k * robust std`
    /// over road pixels.
    pub tophat_thresh: Option<f64>,
    pub bottomhat_thresh: Option<f64>,
    pub robust_k: f64,
    pub ndvi_thresh: f64,
    pub shadow_adjacency_frac: f64,
    pub shadow_adjacency_px: usize,
    pub area_min: usize,
    pub area_max: usize,
    pub max_side_px: f64,
    pub max_aspect: f64,
    pub occupancy_min: f64,
    pub strict_occupancy_min: f64,
    pub strict_max_aspect: f64,
    pub directional_aspect_thresh: f64,
}

impl Default for CandidateParams {
    fn default() -> Self {
        CandidateParams {
            morph_kernel: 7,
            open_kernel: 3,
            tophat_thresh: None,
            bottomhat_thresh: None,
            robust_k: 2.5,
            ndvi_thresh: 0.3,
            shadow_adjacency_frac: 0.30,
            shadow_adjacency_px: 2,
            area_min: 8,
            area_max: 120,
            max_side_px: 28.0,
            max_aspect: 5.0,
            occupancy_min: 0.55,
            strict_occupancy_min: 0.70,
            strict_max_aspect: 4.0,
            directional_aspect_thresh: 4.0,
        }
    }
}

impl CandidateParams {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(format!("candidates: {m}")));
        if self.morph_kernel % 2 == 0 || self.open_kernel % 2 == 0 {
            return fail("morphology kernels must have odd sizes");
        }
        if self.area_min >= self.area_max {
            return fail("area_min must be below area_max");
        }
        if !(self.occupancy_min > 0.0 && self.occupancy_min <= 1.0) {
            return fail("occupancy_min must lie in (0, 1]");
        }
        if !(self.strict_occupancy_min > 0.0 && self.strict_occupancy_min <= 1.0) {
            return fail("strict_occupancy_min must lie in (0, 1]");
        }
        for t in [self.tophat_thresh, self.bottomhat_thresh].into_iter().flatten() {
            if !(t > 0.0) {
                return fail("density thresholds must be positive");
            }
        }
        if !(self.robust_k > 0.0) || !(self.max_aspect >= 1.0) || !(self.max_side_px > 0.0) {
            return fail("robust_k, max_aspect and max_side_px must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Bright,
    Dark,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CandidateObject {
    pub id: usize,
    /// `(row, col)` in row-major order.
    pub pixels: Vec<(usize, usize)>,
    pub polarity: Polarity,
    /// Inclusive `(r0, c0, r1, c1)`.
    pub bbox: (usize, usize, usize, usize),
    pub min_rect: OrientedBox,
    pub hull_area: f64,
}

impl CandidateObject {
    /// Builds the descriptors of a pixel set, treating each pixel as a unit
    /// square so that a `10 x 4` block has a `10 x 4` minimum rectangle.
    pub fn from_pixels(id: usize, mut pixels: Vec<(usize, usize)>, polarity: Polarity) -> Result<Self> {
        if pixels.is_empty() {
            return Err(Error::invalid("candidate with no pixels"));
        }
        pixels.sort_unstable();
        pixels.dedup();
        let mut bbox = (usize::MAX, usize::MAX, 0, 0);
        let mut corners: Vec<Point> = Vec::with_capacity(pixels.len() * 4);
        for &(r, c) in &pixels {
            bbox.0 = bbox.0.min(r);
            bbox.1 = bbox.1.min(c);
            bbox.2 = bbox.2.max(r);
            bbox.3 = bbox.3.max(c);
            let (x, y) = (c as f64, r as f64);
            corners.extend([[x - 0.5, y - 0.5], [x + 0.5, y - 0.5], [x + 0.5, y + 0.5], [x - 0.5, y + 0.5]]);
        }
        let hull = convex_hull(&corners);
        let hull_area = polygon_area(&hull).abs();
        let min_rect = min_area_rect(&hull).ok_or_else(|| Error::invalid("degenerate candidate hull"))?;
        Ok(CandidateObject {
            id,
            pixels,
            polarity,
            bbox,
            min_rect,
            hull_area,
        })
    }

    pub fn area_px(&self) -> usize {
        self.pixels.len()
    }

    fn contains_pixel(&self, p: (usize, usize)) -> bool {
        self.pixels.binary_search(&p).is_ok()
    }

    fn overlaps(&self, other: &CandidateObject) -> bool {
        let (a, b) = (self.bbox, other.bbox);
        if a.0 > b.2 || b.0 > a.2 || a.1 > b.3 || b.1 > a.3 {
            return false;
        }
        let (small, large) = if self.pixels.len() <= other.pixels.len() {
            (self, other)
        } else {
            (other, self)
        };
        small.pixels.iter().any(|&p| large.contains_pixel(p))
    }
}

/// Outcome of the three shape criteria.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ShapeCheck {
    pub area: bool,
    pub geometry: bool,
    pub occupancy: bool,
}

impl ShapeCheck {
    pub fn all(&self) -> bool {
        self.area && self.geometry && self.occupancy
    }
}

pub fn check_shape(obj: &CandidateObject, p: &CandidateParams, strict: bool) -> ShapeCheck {
    let (max_aspect, occ_min) = if strict {
        (p.strict_max_aspect, p.strict_occupancy_min)
    } else {
        (p.max_aspect, p.occupancy_min)
    };
    let area = obj.area_px();
    let (long, _) = obj.min_rect.sides();
    let rect_area = obj.min_rect.area();
    ShapeCheck {
        area: (p.area_min..=p.area_max).contains(&area),
        geometry: long <= p.max_side_px && obj.min_rect.aspect() <= max_aspect,
        occupancy: area as f64 / obj.hull_area >= occ_min && area as f64 / rect_area >= occ_min,
    }
}

/// Side-length and aspect criteria applied to an arbitrary box.
pub fn box_shape_ok(b: &OrientedBox, p: &CandidateParams) -> bool {
    let (long, short) = b.sides();
    short > 0.0 && long <= p.max_side_px && b.aspect() <= p.max_aspect
}

/// Per-band 7x7 TopHat and BottomHat combined by the Euclidean norm across
/// bands; zero outside the road mask.
pub fn morph_contrast(r: &Raster, mask: &RoadMask, kernel: usize) -> Result<(Grid<f32>, Grid<f32>)> {
    if (mask.width(), mask.height()) != (r.width(), r.height()) {
        return Err(Error::shape(format!(
            "road mask {}x{} vs raster {}x{}",
            mask.width(),
            mask.height(),
            r.width(),
            r.height()
        )));
    }
    let n = r.width() * r.height();
    let mut top = vec![0.0f64; n];
    let mut bottom = vec![0.0f64; n];
    for band in r.bands() {
        let t = morph::top_hat(band, kernel);
        let b = morph::bottom_hat(band, kernel);
        for i in 0..n {
            top[i] += (t.as_slice()[i] as f64).powi(2);
            bottom[i] += (b.as_slice()[i] as f64).powi(2);
        }
    }
    let road = mask.road_pixels();
    let finish = |acc: Vec<f64>| {
        let data = acc
            .into_iter()
            .zip(road.as_slice())
            .map(|(v, &on)| if on { v.sqrt() as f32 } else { 0.0 })
            .collect();
        Grid::from_vec(r.width(), r.height(), data)
    };
    Ok((finish(top)?, finish(bottom)?))
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// `median + k * 1.4826 * MAD` of the density over road pixels. Returns `None`
/// when there are no road pixels.
pub fn robust_threshold(density: &Grid<f32>, road: &Grid<bool>, k: f64) -> Option<f64> {
    let mut v: Vec<f64> = density
        .as_slice()
        .iter()
        .zip(road.as_slice())
        .filter(|(_, &on)| on)
        .map(|(&d, _)| d as f64)
        .collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let med = median(&v);
    let mut dev: Vec<f64> = v.iter().map(|x| (x - med).abs()).collect();
    dev.sort_by(f64::total_cmp);
    let t = med + k * MAD_TO_STD * median(&dev);
    // keep the threshold strictly positive so empty density stays empty
    Some(t.max(f64::from(f32::MIN_POSITIVE)))
}

/// `density > thresh` and its binary opening.
pub fn threshold_and_open(density: &Grid<f32>, thresh: f64, open_kernel: usize) -> Result<(Grid<bool>, Grid<bool>)> {
    if !(thresh > 0.0) {
        return Err(Error::invalid(format!("threshold must be positive, got {thresh}")));
    }
    let binary = density.map(|&d| d as f64 > thresh);
    let opened = morph::open(&binary, open_kernel);
    Ok((binary, opened))
}

/// 8-connected components of `binary AND NOT veg`, numbered in row-major
/// order of their first pixel.
pub fn connected_objects(binary: &Grid<bool>, polarity: Polarity, veg: &Grid<bool>) -> Result<Vec<CandidateObject>> {
    binary.check_same_dims(veg)?;
    let (w, h) = binary.dims();
    let fg = binary.zip_map(veg, |&b, &v| b && !v)?;
    let mut seen = Grid::new(w, h, false);
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for r in 0..h {
        for c in 0..w {
            if !*fg.get(r, c) || *seen.get(r, c) {
                continue;
            }
            seen.set(r, c, true);
            queue.push_back((r, c));
            let mut pixels = Vec::new();
            while let Some((pr, pc)) = queue.pop_front() {
                pixels.push((pr, pc));
                for dr in -1isize..=1 {
                    for dc in -1isize..=1 {
                        let (nr, nc) = (pr as isize + dr, pc as isize + dc);
                        if fg.try_get(nr, nc) == Some(&true) && !*seen.get(nr as usize, nc as usize) {
                            seen.set(nr as usize, nc as usize, true);
                            queue.push_back((nr as usize, nc as usize));
                        }
                    }
                }
            }
            out.push(CandidateObject::from_pixels(out.len(), pixels, polarity)?);
        }
    }
    Ok(out)
}

/// Object pixels with at least one 4-neighbour outside the object.
pub fn contour(obj: &CandidateObject) -> Vec<(usize, usize)> {
    obj.pixels
        .iter()
        .copied()
        .filter(|&(r, c)| {
            let outside = |rr: Option<usize>, cc: Option<usize>| match (rr, cc) {
                (Some(rr), Some(cc)) => !obj.contains_pixel((rr, cc)),
                _ => true,
            };
            outside(r.checked_sub(1), Some(c))
                || outside(Some(r + 1), Some(c))
                || outside(Some(r), c.checked_sub(1))
                || outside(Some(r), Some(c + 1))
        })
        .collect()
}

/// Fraction of contour pixels within Chebyshev distance `reach` of a bright
/// pixel.
pub fn bright_adjacency(obj: &CandidateObject, bright: &Grid<bool>, reach: usize) -> f64 {
    let cont = contour(obj);
    if cont.is_empty() {
        return 0.0;
    }
    let reach = reach as isize;
    let near = cont
        .iter()
        .filter(|&&(r, c)| {
            (-reach..=reach).any(|dr| {
                (-reach..=reach).any(|dc| bright.try_get(r as isize + dr, c as isize + dc) == Some(&true))
            })
        })
        .count();
    near as f64 / cont.len() as f64
}

/// Drops dark objects that look like the shadow of a bright object, unless
/// they have a clearly vehicle-like shape.
pub fn remove_shadow_adjacent_dark(
    dark: Vec<CandidateObject>,
    bright_binary: &Grid<bool>,
    p: &CandidateParams,
) -> Vec<CandidateObject> {
    dark.into_iter()
        .filter(|o| {
            o.polarity != Polarity::Dark
                || bright_adjacency(o, bright_binary, p.shadow_adjacency_px) < p.shadow_adjacency_frac
                || check_shape(o, p, true).all()
        })
        .collect()
}

/// Keeps objects meeting all shape criteria. Objects failing only the
/// occupancy test are replaced by overlapping opened objects that pass the
/// strict criteria.
pub fn shape_filter(
    objs: Vec<CandidateObject>,
    opened: &[CandidateObject],
    p: &CandidateParams,
) -> Vec<CandidateObject> {
    let mut used = vec![false; opened.len()];
    let mut out = Vec::new();
    for o in objs {
        let check = check_shape(&o, p, false);
        if check.all() {
            out.push(o);
        } else if check.area && check.geometry {
            for (i, cand) in opened.iter().enumerate() {
                if !used[i] && cand.overlaps(&o) && check_shape(cand, p, true).all() {
                    used[i] = true;
                    out.push(cand.clone());
                }
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub id: usize,
    pub candidate: usize,
    #[serde(with = "box_deg")]
    pub rect: OrientedBox,
}

/// Serialises boxes as `[cx, cy, w, h, theta_deg]`.
pub mod box_deg {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::geometry::OrientedBox;

    pub fn serialize<S: Serializer>(b: &OrientedBox, s: S) -> Result<S::Ok, S::Error> {
        b.to_array_deg().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<OrientedBox, D::Error> {
        Ok(OrientedBox::from_array_deg(<[f64; 5]>::deserialize(d)?))
    }
}

const LONG_ZOOM: [f64; 3] = [1.0, 1.5, 2.0];
const SHORT_ZOOM: [f64; 3] = [1.0, 1.25, 1.5];

/// Zoomed copies of the candidate's minimum rectangle: `long x {1,1.5,2}` by
/// `short x {1,1.25,1.5}`, then the same grid with the two zoom sets
/// exchanged. Clearly elongated candidates only get the first nine.
///
/// For a square rectangle the long axis is arbitrary; the exchanged set is
/// taken about the perpendicular axis and so repeats the first nine.
pub fn generate_anchors(cand: &CandidateObject, p: &CandidateParams) -> Vec<OrientedBox> {
    let r = cand.min_rect.canonical();
    let (long, short) = (r.w, r.h);
    let mut out = Vec::with_capacity(18);
    for a in LONG_ZOOM {
        for b in SHORT_ZOOM {
            out.push(OrientedBox::new(r.cx, r.cy, long * a, short * b, r.theta).canonical());
        }
    }
    if r.aspect() >= p.directional_aspect_thresh {
        return out;
    }
    let square = long == short;
    for a in SHORT_ZOOM {
        for b in LONG_ZOOM {
            let bx = if square {
                OrientedBox::new(r.cx, r.cy, long * a, short * b, r.theta + std::f64::consts::FRAC_PI_2)
            } else {
                OrientedBox::new(r.cx, r.cy, long * a, short * b, r.theta)
            };
            out.push(bx.canonical());
        }
    }
    out
}

/// Removes geometric duplicates, keeping first occurrences.
pub fn dedup_anchors(boxes: Vec<OrientedBox>) -> Vec<OrientedBox> {
    let mut out: Vec<OrientedBox> = Vec::with_capacity(boxes.len());
    for b in boxes {
        if !out.iter().any(|o| o.same_region(&b, 1e-9)) {
            out.push(b);
        }
    }
    out
}

/// Everything the candidate stage produces for one image.
#[derive(Clone, Debug)]
pub struct CandidateSet {
    pub candidates: Vec<CandidateObject>,
    pub anchors: Vec<Anchor>,
    pub tophat_thresh: f64,
    pub bottomhat_thresh: f64,
}

fn polarity_objects(
    density: &Grid<f32>,
    thresh: f64,
    polarity: Polarity,
    veg: &Grid<bool>,
    p: &CandidateParams,
) -> Result<(Grid<bool>, Vec<CandidateObject>, Vec<CandidateObject>)> {
    let (binary, opened) = threshold_and_open(density, thresh, p.open_kernel)?;
    let objs = connected_objects(&binary, polarity, veg)?;
    let opened_objs = connected_objects(&opened, polarity, veg)?;
    Ok((binary, objs, opened_objs))
}

/// Full candidate stage: contrast, thresholds, components, shadow logic,
/// shape filtering and anchors. Candidate and anchor ids are sequential.
pub fn extract_candidates(r: &Raster, mask: &RoadMask, p: &CandidateParams) -> Result<CandidateSet> {
    p.validate()?;
    let (top, bottom) = morph_contrast(r, mask, p.morph_kernel)?;
    let road = mask.road_pixels();
    let veg = compute_ndvi(r).map(|&v| v as f64 > p.ndvi_thresh);
    let auto = |d: &Grid<f32>| robust_threshold(d, &road, p.robust_k).unwrap_or(f64::INFINITY);
    let t_top = p.tophat_thresh.unwrap_or_else(|| auto(&top));
    let t_bottom = p.bottomhat_thresh.unwrap_or_else(|| auto(&bottom));

    let (bright_binary, bright, bright_opened) = polarity_objects(&top, t_top, Polarity::Bright, &veg, p)?;
    let (_, dark, dark_opened) = polarity_objects(&bottom, t_bottom, Polarity::Dark, &veg, p)?;
    let dark = remove_shadow_adjacent_dark(dark, &bright_binary, p);

    let mut candidates = shape_filter(bright, &bright_opened, p);
    candidates.extend(shape_filter(dark, &dark_opened, p));
    let mut anchors = Vec::new();
    for (id, c) in candidates.iter_mut().enumerate() {
        c.id = id;
        for rect in dedup_anchors(generate_anchors(c, p)) {
            anchors.push(Anchor {
                id: anchors.len(),
                candidate: id,
                rect,
            });
        }
    }
    Ok(CandidateSet {
        candidates,
        anchors,
        tophat_thresh: t_top,
        bottomhat_thresh: t_bottom,
    })
}

#[derive(Serialize)]
struct CandidateRecord<'a> {
    id: usize,
    polarity: Polarity,
    area_px: usize,
    bbox: [usize; 4],
    min_rect: [f64; 5],
    hull_area: f64,
    pixels: &'a [(usize, usize)],
}

pub fn write_candidates_jsonl(w: &mut impl Write, cands: &[CandidateObject]) -> Result<()> {
    for c in cands {
        let rec = CandidateRecord {
            id: c.id,
            polarity: c.polarity,
            area_px: c.area_px(),
            bbox: [c.bbox.0, c.bbox.1, c.bbox.2, c.bbox.3],
            min_rect: c.min_rect.to_array_deg(),
            hull_area: c.hull_area,
            pixels: &c.pixels,
        };
        serde_json::to_writer(&mut *w, &rec)?;
        w.write_all(b"\n").map_err(|e| Error::io("<candidates>", e))?;
    }
    Ok(())
}

pub fn read_candidates_jsonl(text: &str) -> Result<Vec<CandidateObject>> {
    #[derive(Deserialize)]
    struct Rec {
        id: usize,
        polarity: Polarity,
        pixels: Vec<(usize, usize)>,
    }
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let rec: Rec = serde_json::from_str(l)?;
            CandidateObject::from_pixels(rec.id, rec.pixels, rec.polarity)
        })
        .collect()
}

pub fn write_anchors_jsonl(w: &mut impl Write, anchors: &[Anchor]) -> Result<()> {
    for a in anchors {
        serde_json::to_writer(&mut *w, a)?;
        w.write_all(b"\n").map_err(|e| Error::io("<anchors>", e))?;
    }
    Ok(())
}

pub fn read_anchors_jsonl(text: &str) -> Result<Vec<Anchor>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

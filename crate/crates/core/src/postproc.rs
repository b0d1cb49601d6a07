//! Customised non-maximum suppression and multi-temporal shadow filtering.

use std::cmp::Ordering;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::candidates::{box_deg, Anchor};
use crate::error::{Error, Result};
use crate::geometry::OrientedBox;
use crate::grid::Grid;
use crate::morph;
use crate::raster::{Band, Raster};
use crate::roadmask::{RoadClass, RoadMask};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredAnchor {
    #[serde(flatten)]
    pub anchor: Anchor,
    pub prob: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box", with = "box_deg")]
    pub rect: OrientedBox,
    pub prob: f64,
    pub road_class: RoadClass,
    pub image_id: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NmsParams {
    pub iou_thresh: f64,
    pub ioa_thresh: f64,
    pub retain_margin: f64,
    pub margin_rule: bool,
    pub max_side_px: f64,
    pub max_aspect: f64,
}

impl Default for NmsParams {
    fn default() -> Self {
        NmsParams {
            iou_thresh: 0.3,
            ioa_thresh: 0.7,
            retain_margin: 0.05,
            margin_rule: true,
            max_side_px: 28.0,
            max_aspect: 5.0,
        }
    }
}

/// Intersection over the smaller of the two areas.
pub fn mutual_ioa(a: &OrientedBox, b: &OrientedBox) -> f64 {
    let small = a.area().min(b.area());
    if small <= 0.0 {
        0.0
    } else {
        a.intersection_area(b) / small
    }
}

/// Symmetric suppression relation used by [`custom_nms`].
pub fn suppresses(a: &OrientedBox, b: &OrientedBox, p: &NmsParams) -> bool {
    a.iou(b) >= p.iou_thresh || mutual_ioa(a, b) >= p.ioa_thresh
}

fn shape_ok(b: &OrientedBox, p: &NmsParams) -> bool {
    let (long, short) = b.sides();
    short > 0.0 && long <= p.max_side_px && b.aspect() <= p.max_aspect
}

fn by_score(a: &ScoredAnchor, b: &ScoredAnchor) -> Ordering {
    b.prob.total_cmp(&a.prob).then(a.anchor.id.cmp(&b.anchor.id))
}

/// Shape suppression, then greedy selection by descending probability where
/// each selected anchor suppresses everything overlapping it by IoU or IoA.
/// Within each suppression group, the smallest anchor replaces the selected
/// one when its probability is within `retain_margin`.
///
/// Output is ordered by descending probability, then anchor id.
pub fn custom_nms(anchors: &[ScoredAnchor], p: &NmsParams) -> Vec<ScoredAnchor> {
    let mut pool: Vec<&ScoredAnchor> = anchors
        .iter()
        .filter(|a| a.prob.is_finite() && shape_ok(&a.anchor.rect, p))
        .collect();
    pool.sort_by(|a, b| by_score(a, b));
    let mut alive = vec![true; pool.len()];
    let mut out: Vec<ScoredAnchor> = Vec::new();
    for i in 0..pool.len() {
        if !alive[i] {
            continue;
        }
        alive[i] = false;
        let sel = pool[i];
        let mut group = vec![i];
        for j in i + 1..pool.len() {
            if alive[j] && suppresses(&sel.anchor.rect, &pool[j].anchor.rect, p) {
                alive[j] = false;
                group.push(j);
            }
        }
        let mut keep = i;
        if p.margin_rule {
            let m = *group
                .iter()
                .min_by(|&&a, &&b| {
                    let (x, y) = (pool[a], pool[b]);
                    x.anchor
                        .rect
                        .area()
                        .total_cmp(&y.anchor.rect.area())
                        .then(y.prob.total_cmp(&x.prob))
                        .then(x.anchor.id.cmp(&y.anchor.id))
                })
                .expect("group holds the selected anchor");
            let cand = pool[m];
            if m != i
                && cand.anchor.rect.area() < sel.anchor.rect.area()
                && cand.prob >= sel.prob - p.retain_margin - 1e-12
            {
                keep = m;
                for j in i + 1..pool.len() {
                    if alive[j] && suppresses(&cand.anchor.rect, &pool[j].anchor.rect, p) {
                        alive[j] = false;
                    }
                }
            }
        }
        out.push(pool[keep].clone());
    }
    out.sort_by(by_score);
    out
}

/// Attaches the road class at each box centre, dropping off-road boxes.
pub fn to_detections(selected: &[ScoredAnchor], mask: &RoadMask, image_id: &str) -> Vec<Detection> {
    selected
        .iter()
        .filter_map(|s| {
            let rect = s.anchor.rect;
            let class = mask.class_at(rect.cx, rect.cy);
            class.is_road().then(|| Detection {
                rect,
                prob: s.prob,
                road_class: class,
                image_id: image_id.to_string(),
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShadowParams {
    /// Fixed score threshold; `None` picks it by Otsu's method.
    pub ratio_thresh: Option<f64>,
    pub close_k: usize,
    pub open_k: usize,
}

impl Default for ShadowParams {
    fn default() -> Self {
        ShadowParams {
            ratio_thresh: None,
            close_k: 5,
            open_k: 9,
        }
    }
}

/// HSI hue in `[0, 1)` (fraction of a full turn) and intensity `(R+G+B)/3`.
pub fn hsi_hue_intensity(r: f64, g: f64, b: f64) -> (f64, f64) {
    let i = (r + g + b) / 3.0;
    let num = 0.5 * ((r - g) + (r - b));
    let den = ((r - g) * (r - g) + (r - b) * (g - b)).sqrt();
    if den <= 0.0 {
        return (0.0, i);
    }
    let theta = (num / den).clamp(-1.0, 1.0).acos();
    let h = if b <= g { theta } else { 2.0 * std::f64::consts::PI - theta };
    (h / (2.0 * std::f64::consts::PI), i)
}

/// Ratio image `(H + 1) / (I + 1)`; high for dark, bluish pixels.
pub fn shadow_score(r: &Raster) -> Grid<f32> {
    let (red, green, blue) = (r.band(Band::R), r.band(Band::G), r.band(Band::B));
    Grid::from_fn(r.width(), r.height(), |row, col| {
        let (h, i) = hsi_hue_intensity(
            *red.get(row, col) as f64,
            *green.get(row, col) as f64,
            *blue.get(row, col) as f64,
        );
        ((h + 1.0) / (i + 1.0)) as f32
    })
}

/// Otsu threshold over a 256-bin histogram; `None` for a constant plane.
pub fn otsu_threshold(values: &[f32]) -> Option<f64> {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in values {
        lo = lo.min(v as f64);
        hi = hi.max(v as f64);
    }
    if !(hi > lo) {
        return None;
    }
    const BINS: usize = 256;
    let width = (hi - lo) / BINS as f64;
    let mut hist = [0u64; BINS];
    for &v in values {
        let b = (((v as f64 - lo) / width) as usize).min(BINS - 1);
        hist[b] += 1;
    }
    let total = values.len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &n)| i as f64 * n as f64).sum();
    let (mut w0, mut sum0) = (0.0, 0.0);
    let (mut best, mut best_var) = (0usize, -1.0);
    for (i, &n) in hist.iter().enumerate().take(BINS - 1) {
        w0 += n as f64;
        sum0 += i as f64 * n as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let (m0, m1) = (sum0 / w0, (sum_all - sum0) / w1);
        let var = w0 * w1 * (m0 - m1) * (m0 - m1);
        if var > best_var {
            best_var = var;
            best = i;
        }
    }
    Some(lo + (best + 1) as f64 * width)
}

/// Large shadow regions: thresholded ratio image, closed then opened.
pub fn shadow_coverage_mask(r: &Raster, p: &ShadowParams) -> Grid<bool> {
    let score = shadow_score(r);
    let Some(t) = p.ratio_thresh.or_else(|| otsu_threshold(score.as_slice())) else {
        return Grid::new(r.width(), r.height(), false);
    };
    let binary = score.map(|&s| s as f64 > t);
    morph::open(&morph::close(&binary, p.close_k), p.open_k)
}

fn in_mask(mask: &Grid<bool>, b: &OrientedBox) -> bool {
    let (c, r) = ((b.cx + 0.5).floor(), (b.cy + 0.5).floor());
    mask.try_get(r as isize, c as isize) == Some(&true)
}

/// Removes detections whose centre lies in either epoch's shadow mask, from
/// both epochs.
pub fn apply_shadow_union(
    t1: &[Detection],
    t2: &[Detection],
    m1: &Grid<bool>,
    m2: &Grid<bool>,
) -> Result<(Vec<Detection>, Vec<Detection>)> {
    let union = m1.or(m2)?;
    let keep = |d: &[Detection]| d.iter().filter(|x| !in_mask(&union, &x.rect)).cloned().collect();
    Ok((keep(t1), keep(t2)))
}

pub fn write_jsonl<T: Serialize>(w: &mut impl Write, items: &[T]) -> Result<()> {
    for it in items {
        serde_json::to_writer(&mut *w, it)?;
        w.write_all(b"\n").map_err(|e| Error::io("<jsonl>", e))?;
    }
    Ok(())
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(text: &str) -> Result<Vec<T>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

//! Matching detections to reference labels and precision/recall/F1.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::candidates::box_deg;
use crate::error::{Error, Result};
use crate::geometry::OrientedBox;
use crate::postproc::Detection;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledBox {
    #[serde(rename = "box", with = "box_deg")]
    pub rect: OrientedBox,
    pub region_id: String,
}

impl LabeledBox {
    pub fn new(rect: OrientedBox, region_id: impl Into<String>) -> Result<Self> {
        if !(rect.area() > 0.0) {
            return Err(Error::invalid("label box must have positive area"));
        }
        Ok(Self { rect, region_id: region_id.into() })
    }
}

/// When a detection may claim a label.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    /// Detection contains the label centre and covers at least half its area.
    #[default]
    Coverage,
    /// Every label corner lies inside the detection.
    Strict,
    /// IoU of at least 0.5.
    Iou,
}

const EDGE_TOL: f64 = 1e-9;

pub fn covers(det: &OrientedBox, label: &OrientedBox, mode: MatchMode) -> bool {
    match mode {
        MatchMode::Coverage => {
            det.contains(label.cx, label.cy) && det.intersection_area(label) >= 0.5 * label.area() - EDGE_TOL
        }
        MatchMode::Strict => label.corners().iter().all(|&[x, y]| det.contains(x, y)),
        MatchMode::Iou => det.iou(label) >= 0.5 - EDGE_TOL,
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchResult {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    /// `(detection index, label index)` pairs.
    pub pairs: Vec<(usize, usize)>,
}

/// Greedy one-to-one matching. Detections are visited by descending
/// probability (then index); each claims the coverable unclaimed label with
/// the largest intersection (then lowest index).
pub fn match_boxes(dets: &[(OrientedBox, f64)], labels: &[OrientedBox], mode: MatchMode) -> MatchResult {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].1.total_cmp(&dets[a].1).then(a.cmp(&b)));
    let mut taken = vec![false; labels.len()];
    let mut pairs = Vec::new();
    for di in order {
        let d = &dets[di].0;
        let mut best: Option<(usize, f64)> = None;
        for (li, l) in labels.iter().enumerate() {
            if taken[li] || !covers(d, l, mode) {
                continue;
            }
            let inter = d.intersection_area(l);
            if best.map_or(true, |(_, bi)| inter > bi) {
                best = Some((li, inter));
            }
        }
        if let Some((li, _)) = best {
            taken[li] = true;
            pairs.push((di, li));
        }
    }
    let tp = pairs.len();
    MatchResult { tp, fp: dets.len() - tp, fn_: labels.len() - tp, pairs }
}

pub fn match_detections(dets: &[Detection], labels: &[LabeledBox], mode: MatchMode) -> MatchResult {
    let d: Vec<(OrientedBox, f64)> = dets.iter().map(|d| (d.rect, d.prob)).collect();
    let l: Vec<OrientedBox> = labels.iter().map(|l| l.rect).collect();
    match_boxes(&d, &l, mode)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Set when any ratio had a zero denominator and was reported as 0.
    pub undefined: bool,
}

fn ratio(n: usize, d: usize, undefined: &mut bool) -> f64 {
    if d == 0 {
        *undefined = true;
        0.0
    } else {
        n as f64 / d as f64
    }
}

pub fn prf_counts(tp: usize, fp: usize, fn_: usize) -> Metrics {
    let mut undefined = false;
    let precision = ratio(tp, tp + fp, &mut undefined);
    let recall = ratio(tp, tp + fn_, &mut undefined);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        undefined = true;
        0.0
    };
    Metrics { precision, recall, f1, undefined }
}

pub fn prf_metrics(m: &MatchResult) -> Metrics {
    prf_counts(m.tp, m.fp, m.fn_)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionReport {
    pub region_id: String,
    pub n_labels: usize,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub metrics: Metrics,
}

/// Matches per region (detection `image_id` against label `region_id`) and
/// appends a `total` row summing the confusion counts.
pub fn evaluate_regions(dets: &[Detection], labels: &[LabeledBox], mode: MatchMode) -> Vec<RegionReport> {
    let mut regions: BTreeMap<&str, (Vec<Detection>, Vec<LabeledBox>)> = BTreeMap::new();
    for d in dets {
        regions.entry(d.image_id.as_str()).or_default().0.push(d.clone());
    }
    for l in labels {
        regions.entry(l.region_id.as_str()).or_default().1.push(l.clone());
    }
    let mut out = Vec::with_capacity(regions.len() + 1);
    let (mut tp, mut fp, mut fn_, mut n) = (0, 0, 0, 0);
    for (id, (d, l)) in regions {
        let m = match_detections(&d, &l, mode);
        tp += m.tp;
        fp += m.fp;
        fn_ += m.fn_;
        n += l.len();
        out.push(RegionReport {
            region_id: id.to_string(),
            n_labels: l.len(),
            tp: m.tp,
            fp: m.fp,
            fn_: m.fn_,
            metrics: prf_metrics(&m),
        });
    }
    out.push(RegionReport {
        region_id: "total".into(),
        n_labels: n,
        tp,
        fp,
        fn_,
        metrics: prf_counts(tp, fp, fn_),
    });
    out
}

pub fn write_region_csv(w: impl Write, rows: &[RegionReport]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["region_id", "labels", "tp", "fp", "fn", "precision", "recall", "f1", "undefined"])?;
    for r in rows {
        out.write_record([
            r.region_id.clone(),
            r.n_labels.to_string(),
            r.tp.to_string(),
            r.fp.to_string(),
            r.fn_.to_string(),
            format!("{:.4}", r.metrics.precision),
            format!("{:.4}", r.metrics.recall),
            format!("{:.4}", r.metrics.f1),
            r.metrics.undefined.to_string(),
        ])?;
    }
    out.flush().map_err(|e| Error::io("<eval.csv>", e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(cx: f64, cy: f64) -> OrientedBox {
        OrientedBox::new(cx, cy, 10.0, 4.0, 0.3)
    }

    #[test]
    fn identical_and_disjoint() {
        let m = match_boxes(&[(b(0.0, 0.0), 0.9)], &[b(0.0, 0.0)], MatchMode::Coverage);
        assert_eq!((m.tp, m.fp, m.fn_), (1, 0, 0));
        let m = match_boxes(&[(b(50.0, 0.0), 0.9)], &[b(0.0, 0.0)], MatchMode::Coverage);
        assert_eq!((m.tp, m.fp, m.fn_), (0, 1, 1));
    }

    #[test]
    fn one_to_one() {
        let m = match_boxes(&[(b(0.0, 0.0), 0.9), (b(0.5, 0.0), 0.8)], &[b(0.0, 0.0)], MatchMode::Coverage);
        assert_eq!((m.tp, m.fp, m.fn_), (1, 1, 0));
        assert_eq!(m.pairs, vec![(0, 0)]);
    }

    #[test]
    fn modes_differ_for_shifted_box() {
        let label = OrientedBox::new(0.0, 0.0, 10.0, 4.0, 0.0);
        let det = OrientedBox::new(2.0, 0.0, 10.0, 4.0, 0.0);
        assert!(covers(&det, &label, MatchMode::Coverage));
        assert!(!covers(&det, &label, MatchMode::Strict));
        // 8*4 / (2*40 - 32) = 0.667
        assert!(covers(&det, &label, MatchMode::Iou));
        let big = OrientedBox::new(0.0, 0.0, 14.0, 8.0, 0.0);
        assert!(covers(&big, &label, MatchMode::Strict));
        assert!(!covers(&big, &label, MatchMode::Iou));
    }

    #[test]
    fn metric_values() {
        let m = prf_counts(7, 3, 3);
        assert!((m.precision - 0.7).abs() < 1e-15 && (m.recall - 0.7).abs() < 1e-15 && (m.f1 - 0.7).abs() < 1e-15);
        assert!(!m.undefined);
        let z = prf_counts(0, 0, 5);
        assert_eq!((z.precision, z.recall, z.f1), (0.0, 0.0, 0.0));
        assert!(z.undefined);
    }

    #[test]
    fn region_report_has_totals() {
        let det = |x: f64, id: &str| Detection {
            rect: b(x, 0.0),
            prob: 0.9,
            road_class: crate::roadmask::RoadClass::Local,
            image_id: id.into(),
        };
        let labels = vec![
            LabeledBox::new(b(0.0, 0.0), "r1").unwrap(),
            LabeledBox::new(b(0.0, 0.0), "r2").unwrap(),
        ];
        let rows = evaluate_regions(&[det(0.0, "r1"), det(40.0, "r2")], &labels, MatchMode::Coverage);
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[2].region_id, "total");
        assert_eq!((rows[2].tp, rows[2].fp, rows[2].fn_), (1, 1, 1));
        let mut buf = Vec::new();
        write_region_csv(&mut buf, &rows).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 4);
    }

    #[test]
    fn label_json_round_trip() {
        let l = LabeledBox::new(OrientedBox::new(3.0, 4.0, 10.0, 4.0, 0.0), "a").unwrap();
        let s = serde_json::to_string(&l).unwrap();
        assert!(s.starts_with("{\"box\":["));
        let back: LabeledBox = serde_json::from_str(&s).unwrap();
        assert!(back.rect.same_region(&l.rect, 1e-9));
        assert!(LabeledBox::new(OrientedBox::new(0.0, 0.0, 0.0, 4.0, 0.0), "a").is_err());
    }
}

//! Counts by road class, change ratios, block density grids, class breaks
//! and quadratic regression.

use std::io::Write;
use std::path::Path;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::postproc::Detection;
use crate::raster::GeoTransform;
use crate::roadmask::RoadClass;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountReport {
    pub total: u64,
    pub arterial: u64,
    pub collector: u64,
    pub local: u64,
}

impl CountReport {
    pub fn get(&self, class: RoadClass) -> u64 {
        match class {
            RoadClass::Arterial => self.arterial,
            RoadClass::Collector => self.collector,
            RoadClass::Local => self.local,
            RoadClass::NonRoad => 0,
        }
    }
}

/// Tallies detections per road class; detections off the road network are
/// not counted.
pub fn count_vehicles(dets: &[Detection]) -> CountReport {
    let mut c = CountReport::default();
    for d in dets {
        match d.road_class {
            RoadClass::Arterial => c.arterial += 1,
            RoadClass::Collector => c.collector += 1,
            RoadClass::Local => c.local += 1,
            RoadClass::NonRoad => continue,
        }
        c.total += 1;
    }
    c
}

/// Percent change `100 (after - before) / before`, rounded half away from
/// zero to two decimals using exact integer arithmetic.
pub fn change_ratio(before: u64, after: u64) -> Result<f64> {
    if before == 0 {
        return Err(Error::UndefinedRatio);
    }
    let num = 10_000i128 * (after as i128 - before as i128);
    let den = before as i128;
    let hundredths = (2 * num.abs() + den) / (2 * den);
    Ok(num.signum() as f64 * hundredths as f64 / 100.0)
}

/// Unrounded percent change.
pub fn change_ratio_raw(before: u64, after: u64) -> Result<f64> {
    if before == 0 {
        return Err(Error::UndefinedRatio);
    }
    Ok(100.0 * (after as f64 - before as f64) / before as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Slicing {
    EqualInterval(usize),
    JenksNaturalBreaks(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct DensityGrid {
    pub block_m: f64,
    pub origin_x: f64,
    pub origin_y: f64,
    pub rows: usize,
    pub cols: usize,
    /// Row-major counts; row 0 is the northernmost block row.
    pub cells: Vec<u64>,
    /// Detections whose centre fell outside the grid extent.
    pub outside: u64,
}

impl DensityGrid {
    pub fn get(&self, row: usize, col: usize) -> u64 {
        self.cells[row * self.cols + col]
    }

    pub fn total(&self) -> u64 {
        self.cells.iter().sum()
    }

    pub fn values(&self) -> Vec<f64> {
        self.cells.iter().map(|&c| c as f64).collect()
    }
}

// Block index with points on a shared edge assigned to the lower index.
fn block_index(offset: f64, block: f64) -> Option<usize> {
    if offset < 0.0 {
        return None;
    }
    let k = (offset / block).ceil() as i64 - 1;
    Some(k.max(0) as usize)
}

/// Counts world-space points per `block_m` square, with the grid anchored at
/// the raster origin and covering `width_px x height_px` pixels.
pub fn density_grid_points(
    points: &[(f64, f64)],
    geo: &GeoTransform,
    width_px: usize,
    height_px: usize,
    block_m: f64,
) -> Result<DensityGrid> {
    if !(block_m > 0.0) {
        return Err(Error::invalid("block size must be positive"));
    }
    let ext_x = width_px as f64 * geo.pixel_size;
    let ext_y = height_px as f64 * geo.pixel_size;
    let cols = ((ext_x / block_m).ceil() as usize).max(1);
    let rows = ((ext_y / block_m).ceil() as usize).max(1);
    let mut g = DensityGrid {
        block_m,
        origin_x: geo.origin_x,
        origin_y: geo.origin_y,
        rows,
        cols,
        cells: vec![0; rows * cols],
        outside: 0,
    };
    for &(x, y) in points {
        let (dx, dy) = (x - geo.origin_x, geo.origin_y - y);
        let idx = if dx > ext_x || dy > ext_y {
            None
        } else {
            block_index(dx, block_m).zip(block_index(dy, block_m))
        };
        match idx {
            Some((c, r)) if r < rows && c < cols => g.cells[r * cols + c] += 1,
            _ => g.outside += 1,
        }
    }
    Ok(g)
}

/// Density grid of detection centres (pixel coordinates mapped through `geo`).
pub fn density_grid(
    dets: &[Detection],
    geo: &GeoTransform,
    width_px: usize,
    height_px: usize,
    block_m: f64,
) -> Result<DensityGrid> {
    let pts: Vec<(f64, f64)> = dets.iter().map(|d| geo.pixel_to_world(d.rect.cx, d.rect.cy)).collect();
    density_grid_points(&pts, geo, width_px, height_px, block_m)
}

/// `k - 1` equally spaced breaks between the minimum and maximum.
pub fn equal_interval(values: &[f64], k: usize) -> Result<Vec<f64>> {
    if k < 2 || values.is_empty() {
        return Err(Error::invalid("equal-interval slicing needs k >= 2 and values"));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok((1..k).map(|i| lo + (hi - lo) * i as f64 / k as f64).collect())
}

/// Fisher's exact optimal partition of the sorted values into `k` contiguous
/// classes minimising the total within-class sum of squared deviations.
/// Each break is the largest value of the lower class.
pub fn jenks_breaks(values: &[f64], k: usize) -> Result<Vec<f64>> {
    if k < 2 {
        return Err(Error::invalid("jenks needs k >= 2"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("jenks input".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mut distinct = v.clone();
    distinct.dedup();
    if k > distinct.len() {
        return Err(Error::invalid(format!(
            "jenks with {k} classes needs at least {k} distinct values, found {}",
            distinct.len()
        )));
    }
    let n = v.len();
    // prefix sums for O(1) segment SSD
    let mut s1 = vec![0.0f64; n + 1];
    let mut s2 = vec![0.0f64; n + 1];
    for i in 0..n {
        s1[i + 1] = s1[i] + v[i];
        s2[i + 1] = s2[i] + v[i] * v[i];
    }
    let ssd = |i: usize, j: usize| {
        // values v[i..j]
        let m = (j - i) as f64;
        let s = s1[j] - s1[i];
        (s2[j] - s2[i] - s * s / m).max(0.0)
    };
    // cost[c][j]: best SSD of v[..j] split into c + 1 classes
    let mut cost = vec![vec![f64::INFINITY; n + 1]; k];
    let mut cut = vec![vec![0usize; n + 1]; k];
    for j in 1..=n {
        cost[0][j] = ssd(0, j);
    }
    for c in 1..k {
        for j in c + 1..=n {
            for i in c..j {
                // a cut between equal values could not be expressed as a break
                if v[i - 1] == v[i] {
                    continue;
                }
                let total = cost[c - 1][i] + ssd(i, j);
                if total < cost[c][j] {
                    cost[c][j] = total;
                    cut[c][j] = i;
                }
            }
        }
    }
    let mut breaks = Vec::with_capacity(k - 1);
    let mut j = n;
    for c in (1..k).rev() {
        let i = cut[c][j];
        breaks.push(v[i - 1]);
        j = i;
    }
    breaks.reverse();
    Ok(breaks)
}

/// Class index of `value` given ascending breaks (`value <= breaks[i]` falls in
/// class `i`).
pub fn class_of(value: f64, breaks: &[f64]) -> usize {
    breaks.iter().position(|&b| value <= b).unwrap_or(breaks.len())
}

/// Total within-class SSD of a classification defined by `breaks`.
pub fn within_class_ssd(values: &[f64], breaks: &[f64]) -> f64 {
    let mut classes = vec![Vec::new(); breaks.len() + 1];
    for &v in values {
        classes[class_of(v, breaks)].push(v);
    }
    classes
        .iter()
        .filter(|c| !c.is_empty())
        .map(|c| {
            let m = c.iter().sum::<f64>() / c.len() as f64;
            c.iter().map(|x| (x - m) * (x - m)).sum::<f64>()
        })
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub r2: f64,
}

impl RegressionResult {
    pub fn predict(&self, x: f64) -> f64 {
        (self.a * x + self.b) * x + self.c
    }
}

fn rational(v: f64) -> BigRational {
    BigRational::from_float(v).expect("finite input checked by caller")
}

/// Gauss-Jordan on the augmented 3 x 4 system; `None` when singular.
fn solve3_exact(mut m: [[BigRational; 4]; 3]) -> Option<[BigRational; 3]> {
    for col in 0..3 {
        let piv = (col..3).find(|&r| !m[r][col].is_zero())?;
        m.swap(col, piv);
        for r in 0..3 {
            if r == col || m[r][col].is_zero() {
                continue;
            }
            let f = &m[r][col] / &m[col][col];
            for c in col..4 {
                let t = &f * &m[col][c];
                m[r][c] -= t;
            }
        }
    }
    let [r0, r1, r2] = m;
    Some([&r0[3] / &r0[0], &r1[3] / &r1[1], &r2[3] / &r2[2]])
}

fn to_f64(q: &BigRational) -> f64 {
    q.to_f64().unwrap_or(f64::NAN)
}

/// Least-squares `y = a x^2 + b x + c`. The normal equations are formed and
/// solved in exact rational arithmetic from the binary values of the inputs,
/// so coefficients and R² are the correctly rounded least-squares values.
pub fn quad_regression(x: &[f64], y: &[f64]) -> Result<RegressionResult> {
    if x.len() != y.len() {
        return Err(Error::shape(format!("{} x values vs {} y values", x.len(), y.len())));
    }
    if x.len() < 4 {
        return Err(Error::invalid("quadratic regression needs at least 4 points"));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("regression input".into()));
    }
    let mut xs = x.to_vec();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    if xs.len() <= 3 {
        return Err(Error::invalid("rank-deficient design: need more than 3 distinct x values"));
    }
    let xq: Vec<BigRational> = x.iter().map(|&v| rational(v)).collect();
    let yq: Vec<BigRational> = y.iter().map(|&v| rational(v)).collect();
    let n = BigRational::from_integer(BigInt::from(x.len()));
    let ymean = yq.iter().sum::<BigRational>() / &n;
    let ss_tot: BigRational = yq.iter().map(|v| (v - &ymean) * (v - &ymean)).sum();
    if ss_tot.is_zero() {
        return Err(Error::invalid("R² undefined: all y values are equal"));
    }
    let zero = || BigRational::zero();
    let mut m: [[BigRational; 4]; 3] = std::array::from_fn(|_| std::array::from_fn(|_| zero()));
    for (xi, yi) in xq.iter().zip(&yq) {
        let row = [xi * xi, xi.clone(), BigRational::one()];
        for r in 0..3 {
            for c in 0..3 {
                m[r][c] += &row[r] * &row[c];
            }
            m[r][3] += &row[r] * yi;
        }
    }
    let [a, b, c] = solve3_exact(m).ok_or_else(|| Error::invalid("singular normal equations"))?;
    let ss_res: BigRational = xq
        .iter()
        .zip(&yq)
        .map(|(xi, yi)| {
            let e = yi - (&a * xi * xi + &b * xi + &c);
            &e * &e
        })
        .sum();
    Ok(RegressionResult {
        a: to_f64(&a),
        b: to_f64(&b),
        c: to_f64(&c),
        r2: to_f64(&(BigRational::one() - ss_res / ss_tot)),
    })
}

/// One row of the counts table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountRow {
    pub city: String,
    pub epoch: String,
    #[serde(flatten)]
    pub counts: CountReport,
}

pub fn write_counts_csv(w: impl Write, rows: &[CountRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["city", "epoch", "total", "arterial", "collector", "local"])?;
    for r in rows {
        out.write_record([
            r.city.clone(),
            r.epoch.clone(),
            r.counts.total.to_string(),
            r.counts.arterial.to_string(),
            r.counts.collector.to_string(),
            r.counts.local.to_string(),
        ])?;
    }
    out.flush().map_err(|e| Error::io("<counts.csv>", e))
}

fn fmt_ratio(r: Result<f64>) -> String {
    match r {
        Ok(v) => format!("{v:.2}"),
        Err(_) => "undefined".into(),
    }
}

/// Per-city change ratios for total and arterial counts.
pub fn write_change_csv(w: impl Write, rows: &[(String, CountReport, CountReport)]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["city", "total_before", "total_after", "total_change_pct", "arterial_before", "arterial_after", "arterial_change_pct"])?;
    for (city, before, after) in rows {
        out.write_record([
            city.clone(),
            before.total.to_string(),
            after.total.to_string(),
            fmt_ratio(change_ratio(before.total, after.total)),
            before.arterial.to_string(),
            after.arterial.to_string(),
            fmt_ratio(change_ratio(before.arterial, after.arterial)),
        ])?;
    }
    out.flush().map_err(|e| Error::io("<change.csv>", e))
}

/// `block_row, block_col, count, class_index` for every cell.
pub fn write_grid_csv(w: impl Write, g: &DensityGrid, breaks: &[f64]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["block_row", "block_col", "count", "class_index"])?;
    for r in 0..g.rows {
        for c in 0..g.cols {
            let v = g.get(r, c);
            out.write_record([
                r.to_string(),
                c.to_string(),
                v.to_string(),
                class_of(v as f64, breaks).to_string(),
            ])?;
        }
    }
    out.flush().map_err(|e| Error::io("<grid.csv>", e))
}

/// Grid of signed values (e.g. per-block change) with class indices.
pub fn write_value_grid_csv(w: impl Write, rows: usize, cols: usize, values: &[f64], breaks: &[f64]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["block_row", "block_col", "value", "class_index"])?;
    for r in 0..rows {
        for c in 0..cols {
            let v = values[r * cols + c];
            out.write_record([r.to_string(), c.to_string(), format!("{v}"), class_of(v, breaks).to_string()])?;
        }
    }
    out.flush().map_err(|e| Error::io("<grid.csv>", e))
}

// Yellow-to-red ramp.
fn ramp(t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    [lerp(255.0, 189.0), lerp(255.0, 0.0), lerp(178.0, 38.0)]
}

/// Renders class indices as a heatmap with `scale x scale` pixels per block.
pub fn write_heatmap_png(path: impl AsRef<Path>, rows: usize, cols: usize, classes: &[usize], n_classes: usize, scale: usize) -> Result<()> {
    let path = path.as_ref();
    let (w, h) = (cols * scale, rows * scale);
    let mut data = Vec::with_capacity(w * h * 3);
    for y in 0..h {
        for x in 0..w {
            let k = classes[(y / scale) * cols + x / scale];
            let t = if n_classes > 1 { k as f64 / (n_classes - 1) as f64 } else { 0.0 };
            data.extend(ramp(t));
        }
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(std::io::BufWriter::new(file), w as u32, h as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header()?;
    writer.write_image_data(&data)?;
    writer.finish()?;
    Ok(())
}

//! Four-band georeferenced rasters: GeoTIFF I/O, NDVI, normalisation
//! statistics and oriented patch sampling.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};
use tiff::decoder::{Decoder, DecodingResult};
use tiff::encoder::colortype::{Gray32Float, Gray8};
use tiff::encoder::TiffEncoder;
use tiff::tags::{ExtraSamples, Tag};

use crate::error::{Error, Result};
use crate::geometry::OrientedBox;
use crate::grid::Grid;
use crate::netcore::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Band {
    B,
    G,
    R,
    #[serde(rename = "NIR")]
    Nir,
}

impl Band {
    pub const ALL: [Band; 4] = [Band::B, Band::G, Band::R, Band::Nir];

    pub fn index(self) -> usize {
        match self {
            Band::B => 0,
            Band::G => 1,
            Band::R => 2,
            Band::Nir => 3,
        }
    }
}

/// Which file band carries which spectral band; entry `i` names file band `i`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Band>", into = "Vec<Band>")]
pub struct BandOrder(pub [Band; 4]);

impl Default for BandOrder {
    fn default() -> Self {
        BandOrder(Band::ALL)
    }
}

impl TryFrom<Vec<Band>> for BandOrder {
    type Error = String;

    fn try_from(v: Vec<Band>) -> std::result::Result<Self, String> {
        let arr: [Band; 4] = v
            .try_into()
            .map_err(|v: Vec<Band>| format!("`bands` needs 4 entries, got {}", v.len()))?;
        for b in Band::ALL {
            if !arr.contains(&b) {
                return Err(format!("`bands` is missing {b:?}"));
            }
        }
        Ok(BandOrder(arr))
    }
}

impl From<BandOrder> for Vec<Band> {
    fn from(o: BandOrder) -> Self {
        o.0.to_vec()
    }
}

/// North-up affine placement: pixel `(row, col)` covers
/// `[origin_x + col*ps, origin_x + (col+1)*ps] x [origin_y - (row+1)*ps, origin_y - row*ps]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeoTransform {
    pub origin_x: f64,
    pub origin_y: f64,
    pub pixel_size: f64,
}

impl GeoTransform {
    pub fn new(origin_x: f64, origin_y: f64, pixel_size: f64) -> Result<Self> {
        if !(pixel_size > 0.0 && pixel_size.is_finite()) {
            return Err(Error::invalid(format!("pixel_size must be > 0, got {pixel_size}")));
        }
        Ok(GeoTransform {
            origin_x,
            origin_y,
            pixel_size,
        })
    }

    /// World coordinates of a pixel-space point (pixel centers at integers).
    pub fn pixel_to_world(&self, px: f64, py: f64) -> (f64, f64) {
        (
            self.origin_x + (px + 0.5) * self.pixel_size,
            self.origin_y - (py + 0.5) * self.pixel_size,
        )
    }

    pub fn world_to_pixel(&self, x: f64, y: f64) -> (f64, f64) {
        (
            (x - self.origin_x) / self.pixel_size - 0.5,
            (self.origin_y - y) / self.pixel_size - 0.5,
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    bands: [Grid<f32>; 4],
    geo: GeoTransform,
}

impl Raster {
    /// Planes are given in `B, G, R, NIR` order.
    pub fn new(bands: [Grid<f32>; 4], geo: GeoTransform) -> Result<Self> {
        let dims = bands[0].dims();
        for (b, plane) in Band::ALL.iter().zip(&bands) {
            if plane.dims() != dims {
                return Err(Error::shape(format!(
                    "band {b:?} is {}x{}, expected {}x{}",
                    plane.width(),
                    plane.height(),
                    dims.0,
                    dims.1
                )));
            }
            if let Some(v) = plane.as_slice().iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
                return Err(Error::invalid(format!("band {b:?} holds value {v}")));
            }
        }
        GeoTransform::new(geo.origin_x, geo.origin_y, geo.pixel_size)?;
        Ok(Raster { bands, geo })
    }

    pub fn width(&self) -> usize {
        self.bands[0].width()
    }

    pub fn height(&self) -> usize {
        self.bands[0].height()
    }

    pub fn geo(&self) -> &GeoTransform {
        &self.geo
    }

    pub fn pixel_size(&self) -> f64 {
        self.geo.pixel_size
    }

    pub fn band(&self, band: Band) -> &Grid<f32> {
        &self.bands[band.index()]
    }

    pub fn bands(&self) -> &[Grid<f32>; 4] {
        &self.bands
    }

    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        x >= -0.5 && y >= -0.5 && x < self.width() as f64 - 0.5 && y < self.height() as f64 - 0.5
    }
}

/// Per-band mean and standard deviation used to normalise network inputs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageStats {
    pub mean: [f64; 4],
    pub std: [f64; 4],
}

impl ImageStats {
    pub fn new(mean: [f64; 4], std: [f64; 4]) -> Result<Self> {
        if let Some(i) = std.iter().position(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::invalid(format!(
                "band {:?} has degenerate std {}",
                Band::ALL[i],
                std[i]
            )));
        }
        Ok(ImageStats { mean, std })
    }

    pub fn from_raster(r: &Raster) -> Result<Self> {
        let mut mean = [0.0; 4];
        let mut std = [0.0; 4];
        for (i, plane) in r.bands.iter().enumerate() {
            let n = plane.as_slice().len() as f64;
            let m = plane.as_slice().iter().map(|&v| v as f64).sum::<f64>() / n;
            let var = plane
                .as_slice()
                .iter()
                .map(|&v| (v as f64 - m).powi(2))
                .sum::<f64>()
                / n;
            mean[i] = m;
            std[i] = var.sqrt();
        }
        ImageStats::new(mean, std)
    }
}

/// `(NIR - R) / (NIR + R)`, zero where the denominator vanishes.
pub fn compute_ndvi(r: &Raster) -> Grid<f32> {
    r.band(Band::Nir)
        .zip_map(r.band(Band::R), |&nir, &red| {
            let den = nir + red;
            if den == 0.0 {
                0.0
            } else {
                (nir - red) / den
            }
        })
        .expect("raster bands share dimensions")
}

#[inline]
fn bilinear(plane: &Grid<f32>, x: f64, y: f64, pad: f64) -> f64 {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let (x0, y0) = (x0 as isize, y0 as isize);
    let at = |r: isize, c: isize| plane.try_get(r, c).map_or(pad, |v| *v as f64);
    let top = at(y0, x0) * (1.0 - fx) + at(y0, x0 + 1) * fx;
    let bottom = at(y0 + 1, x0) * (1.0 - fx) + at(y0 + 1, x0 + 1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Samples `bx` onto an `out_h x out_w` grid and normalises every band with
/// `stats`. The box's `w` side maps to output columns, its `h` side to rows;
/// samples falling outside the raster read the band mean.
pub fn extract_patch(
    r: &Raster,
    bx: &OrientedBox,
    out_h: usize,
    out_w: usize,
    stats: &ImageStats,
) -> Result<Tensor<f32>> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid(format!("patch size {out_h}x{out_w}")));
    }
    if !r.contains_point(bx.cx, bx.cy) {
        return Err(Error::invalid(format!(
            "patch center ({:.2}, {:.2}) outside {}x{} raster",
            bx.cx,
            bx.cy,
            r.width(),
            r.height()
        )));
    }
    let (u, v) = bx.axes();
    let mut coords = Vec::with_capacity(out_h * out_w);
    for i in 0..out_h {
        let dv = ((i as f64 + 0.5) / out_h as f64 - 0.5) * bx.h;
        for j in 0..out_w {
            let du = ((j as f64 + 0.5) / out_w as f64 - 0.5) * bx.w;
            coords.push((
                bx.cx + u[0] * du + v[0] * dv,
                bx.cy + u[1] * du + v[1] * dv,
            ));
        }
    }
    let mut data = Vec::with_capacity(4 * out_h * out_w);
    for (b, plane) in r.bands.iter().enumerate() {
        let (mean, std) = (stats.mean[b], stats.std[b]);
        data.extend(
            coords
                .iter()
                .map(|&(x, y)| ((bilinear(plane, x, y, mean) - mean) / std) as f32),
        );
    }
    Tensor::from_vec(&[4, out_h, out_w], data)
}

fn load_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Load {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn read_geo(dec: &mut Decoder<BufReader<File>>, path: &Path) -> Result<GeoTransform> {
    let scale = dec
        .find_tag(Tag::ModelPixelScaleTag)?
        .ok_or_else(|| load_err(path, "missing ModelPixelScaleTag"))?
        .into_f64_vec()?;
    let tie = dec
        .find_tag(Tag::ModelTiepointTag)?
        .ok_or_else(|| load_err(path, "missing ModelTiepointTag"))?
        .into_f64_vec()?;
    if scale.len() < 2 || tie.len() < 6 {
        return Err(load_err(path, "malformed georeferencing tags"));
    }
    if (scale[0] - scale[1]).abs() > 1e-9 * scale[0].abs().max(1.0) {
        return Err(load_err(
            path,
            format!("pixel_size: non-square pixels {} x {}", scale[0], scale[1]),
        ));
    }
    let ps = scale[0];
    // tiepoint maps raster (i, j) to model (x, y)
    let origin_x = tie[3] - tie[0] * ps;
    let origin_y = tie[4] + tie[1] * ps;
    GeoTransform::new(origin_x, origin_y, ps).map_err(|e| load_err(path, e.to_string()))
}

fn decode_samples(dec: &mut Decoder<BufReader<File>>) -> Result<Vec<f32>> {
    Ok(match dec.read_image()? {
        DecodingResult::U8(v) => v.into_iter().map(f32::from).collect(),
        DecodingResult::U16(v) => v.into_iter().map(f32::from).collect(),
        DecodingResult::U32(v) => v.into_iter().map(|x| x as f32).collect(),
        DecodingResult::I16(v) => v.into_iter().map(f32::from).collect(),
        DecodingResult::F32(v) => v,
        DecodingResult::F64(v) => v.into_iter().map(|x| x as f32).collect(),
        _ => return Err(Error::invalid("unsupported sample format")),
    })
}

fn open_decoder(path: &Path) -> Result<Decoder<BufReader<File>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Decoder::new(BufReader::new(file)).map_err(|e| load_err(path, e.to_string()))
}

/// Reads a GeoTIFF with at least four bands; `order` names file bands 0..4.
pub fn load_raster(path: impl AsRef<Path>, order: &BandOrder) -> Result<Raster> {
    let path = path.as_ref();
    let mut dec = open_decoder(path)?;
    let (w, h) = dec.dimensions()?;
    let samples = match dec.colortype()? {
        tiff::ColorType::Gray(_) => 1,
        tiff::ColorType::GrayA(_) => 2,
        tiff::ColorType::RGB(_) => 3,
        tiff::ColorType::RGBA(_) | tiff::ColorType::CMYK(_) => 4,
        tiff::ColorType::Multiband { num_samples, .. } => num_samples as usize,
        other => return Err(load_err(path, format!("bands: unsupported layout {other:?}"))),
    };
    if samples < 4 {
        return Err(load_err(path, format!("bands: expected 4 bands, found {samples}")));
    }
    let geo = read_geo(&mut dec, path)?;
    let values = decode_samples(&mut dec)?;
    let (w, h) = (w as usize, h as usize);
    if values.len() != w * h * samples {
        return Err(load_err(path, "bands: sample count does not match dimensions"));
    }
    let mut planes: [Vec<f32>; 4] = Default::default();
    for (file_band, name) in order.0.iter().enumerate() {
        planes[name.index()] = values.iter().skip(file_band).step_by(samples).copied().collect();
    }
    let [b, g, r, n] = planes.map(|p| Grid::from_vec(w, h, p).expect("sized above"));
    Raster::new([b, g, r, n], geo).map_err(|e| load_err(path, e.to_string()))
}

fn write_geo_tags<W: std::io::Write + std::io::Seek, K: tiff::encoder::TiffKind>(
    enc: &mut tiff::encoder::DirectoryEncoder<'_, W, K>,
    geo: &GeoTransform,
) -> Result<()> {
    enc.write_tag(
        Tag::ModelPixelScaleTag,
        &[geo.pixel_size, geo.pixel_size, 0.0][..],
    )?;
    enc.write_tag(
        Tag::ModelTiepointTag,
        &[0.0, 0.0, 0.0, geo.origin_x, geo.origin_y, 0.0][..],
    )?;
    Ok(())
}

/// Writes `B, G, R, NIR` as an uncompressed 4-sample float32 GeoTIFF.
pub fn save_raster(path: impl AsRef<Path>, r: &Raster) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = TiffEncoder::new(BufWriter::new(file))?;
    let (w, h) = (r.width(), r.height());
    let mut interleaved = Vec::with_capacity(w * h * 4);
    for i in 0..w * h {
        for plane in &r.bands {
            interleaved.push(plane.as_slice()[i]);
        }
    }
    let mut image = enc.new_image::<Gray32Float>(w as u32, h as u32)?;
    image.extra_samples(&[ExtraSamples::Unspecified; 3])?;
    write_geo_tags(image.encoder(), &r.geo)?;
    image.write_data(&interleaved)?;
    Ok(())
}

/// Single-band `u8` GeoTIFF, used for road-class and shadow masks.
pub fn save_u8_plane(path: impl AsRef<Path>, plane: &Grid<u8>, geo: &GeoTransform) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = TiffEncoder::new(BufWriter::new(file))?;
    let mut image = enc.new_image::<Gray8>(plane.width() as u32, plane.height() as u32)?;
    write_geo_tags(image.encoder(), geo)?;
    image.write_data(plane.as_slice())?;
    Ok(())
}

pub fn load_u8_plane(path: impl AsRef<Path>) -> Result<(Grid<u8>, GeoTransform)> {
    let path = path.as_ref();
    let mut dec = open_decoder(path)?;
    let (w, h) = dec.dimensions()?;
    if dec.colortype()? != tiff::ColorType::Gray(8) {
        return Err(load_err(path, "expected a single-band 8-bit plane"));
    }
    let geo = read_geo(&mut dec, path)?;
    let DecodingResult::U8(values) = dec.read_image()? else {
        return Err(load_err(path, "expected 8-bit samples"));
    };
    Ok((Grid::from_vec(w as usize, h as usize, values)?, geo))
}

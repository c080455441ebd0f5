//! Raster container shared by every stage: images, disparity maps, altitude
//! images and DSMs are all grids of `f32` samples.
//!
//! Invalid samples are stored as NaN in memory. A file may declare a finite
//! sentinel; it is converted to NaN on load and restored on write.

mod io;
mod warp;

pub use io::{decode, encode, read_raster, write_raster, RasterFormat};
pub use warp::warp;

use crate::error::{Error, Result};

/// Affine map from pixel (col, row) to ground (x, y), in GDAL order
/// `[x0, dx, rxy, y0, ryx, dy]`.
///
/// Pixel corners sit at integer (col, row); the center of pixel (i, j) is at
/// (i + 0.5, j + 0.5).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoTransform(pub [f64; 6]);

impl GeoTransform {
    /// North-up grid with square cells whose top-left corner is `(x0, y0)`.
    pub fn north_up(x0: f64, y0: f64, cell: f64) -> Self {
        GeoTransform([x0, cell, 0.0, y0, 0.0, -cell])
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.0;
        if !(g[1] > 0.0) || g[5] == 0.0 || g.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidRaster(format!("bad geotransform {g:?}")));
        }
        if (g[1] * g[5] - g[2] * g[4]).abs() < 1e-15 {
            return Err(Error::InvalidRaster("geotransform is singular".into()));
        }
        Ok(())
    }

    pub fn apply(&self, col: f64, row: f64) -> (f64, f64) {
        let g = &self.0;
        (g[0] + col * g[1] + row * g[2], g[3] + col * g[4] + row * g[5])
    }

    /// Ground coordinates of the center of pixel (col, row).
    pub fn pixel_center(&self, col: usize, row: usize) -> (f64, f64) {
        self.apply(col as f64 + 0.5, row as f64 + 0.5)
    }

    /// Inverse of [`GeoTransform::apply`].
    pub fn invert(&self, x: f64, y: f64) -> (f64, f64) {
        let g = &self.0;
        let det = g[1] * g[5] - g[2] * g[4];
        let (dx, dy) = (x - g[0], y - g[3]);
        ((g[5] * dx - g[2] * dy) / det, (-g[4] * dx + g[1] * dy) / det)
    }

    pub fn cell_size(&self) -> (f64, f64) {
        (self.0[1], self.0[5])
    }
}

/// A `width × height × channels` grid of 32-bit reals, row-major and
/// channel-interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: u32,
    height: u32,
    channels: u32,
    data: Vec<f32>,
    nodata: Option<f32>,
    geotransform: Option<GeoTransform>,
    crs: Option<String>,
}

impl Raster {
    pub fn new(width: u32, height: u32, channels: u32, data: Vec<f32>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::InvalidRaster("zero channels".into()));
        }
        let expected = width as usize * height as usize * channels as usize;
        if data.len() != expected {
            return Err(Error::InvalidRaster(format!(
                "{} samples for {width}x{height}x{channels}",
                data.len()
            )));
        }
        Ok(Raster {
            width,
            height,
            channels,
            data,
            nodata: None,
            geotransform: None,
            crs: None,
        })
    }

    pub fn filled(width: u32, height: u32, channels: u32, value: f32) -> Self {
        let n = width as usize * height as usize * channels as usize;
        Raster::new(width, height, channels, vec![value; n]).expect("consistent size")
    }

    /// All-nodata raster.
    pub fn empty(width: u32, height: u32, channels: u32) -> Self {
        Raster::filled(width, height, channels, f32::NAN)
    }

    /// Single-channel raster from a closure over (col, row).
    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize);
        for row in 0..height as usize {
            for col in 0..width as usize {
                data.push(f(col, row));
            }
        }
        Raster::new(width, height, 1, data).expect("consistent size")
    }

    pub fn with_geotransform(mut self, gt: GeoTransform) -> Result<Self> {
        gt.validate()?;
        self.geotransform = Some(gt);
        Ok(self)
    }

    pub fn with_crs(mut self, crs: impl Into<String>) -> Self {
        self.crs = Some(crs.into());
        self
    }

    /// Declares a finite on-disk sentinel. Samples equal to it become NaN.
    pub fn with_nodata_sentinel(mut self, sentinel: Option<f32>) -> Self {
        if let Some(s) = sentinel.filter(|s| !s.is_nan()) {
            for v in &mut self.data {
                if *v == s {
                    *v = f32::NAN;
                }
            }
        }
        self.nodata = sentinel.filter(|s| !s.is_nan());
        self
    }

    /// Copies geotransform, crs and sentinel from `other`.
    pub fn with_georef_of(mut self, other: &Raster) -> Self {
        self.geotransform = other.geotransform;
        self.crs = other.crs.clone();
        self.nodata = other.nodata;
        self
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> u32 {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width as usize, self.height as usize)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn nodata_sentinel(&self) -> Option<f32> {
        self.nodata
    }

    pub fn geotransform(&self) -> Option<&GeoTransform> {
        self.geotransform.as_ref()
    }

    pub fn crs(&self) -> Option<&str> {
        self.crs.as_deref()
    }

    #[inline]
    fn offset(&self, col: usize, row: usize) -> usize {
        (row * self.width as usize + col) * self.channels as usize
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize, channel: usize) -> f32 {
        self.data[self.offset(col, row) + channel]
    }

    #[inline]
    pub fn set(&mut self, col: usize, row: usize, channel: usize, value: f32) {
        let i = self.offset(col, row) + channel;
        self.data[i] = value;
    }

    pub fn pixel(&self, col: usize, row: usize) -> &[f32] {
        let i = self.offset(col, row);
        &self.data[i..i + self.channels as usize]
    }

    /// A pixel is valid iff none of its channels is nodata.
    #[inline]
    pub fn is_valid(&self, col: usize, row: usize) -> bool {
        self.pixel(col, row).iter().all(|v| !v.is_nan())
    }

    pub fn row(&self, row: usize) -> &[f32] {
        let w = self.width as usize * self.channels as usize;
        &self.data[row * w..(row + 1) * w]
    }

    /// Extracts one channel as a single-channel raster with the same georef.
    pub fn band(&self, channel: usize) -> Raster {
        let c = self.channels as usize;
        let data = self.data.iter().skip(channel).step_by(c).copied().collect();
        Raster::new(self.width, self.height, 1, data)
            .expect("consistent size")
            .with_georef_of(self)
    }

    pub fn valid_count(&self) -> usize {
        let (w, h) = self.dims();
        (0..h)
            .map(|r| (0..w).filter(|&c| self.is_valid(c, r)).count())
            .sum()
    }

    /// Min and max over valid samples of `channel`.
    pub fn valid_range(&self, channel: usize) -> Option<(f32, f32)> {
        let c = self.channels as usize;
        self.data
            .iter()
            .skip(channel)
            .step_by(c)
            .filter(|v| !v.is_nan())
            .fold(None, |acc, &v| match acc {
                None => Some((v, v)),
                Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
            })
    }

    /// Bilinear sample at continuous pixel coordinates where integer
    /// coordinates are sample positions. Neighbors with zero weight are not
    /// part of the stencil. Returns `false` (and leaves `out` untouched) when
    /// the point is outside the grid or any stencil sample is nodata.
    pub fn sample_bilinear(&self, x: f64, y: f64, out: &mut [f32]) -> bool {
        const EPS: f64 = 1e-9;
        let (w, h) = (self.width as f64, self.height as f64);
        if !(x > -EPS && y > -EPS && x < w - 1.0 + EPS && y < h - 1.0 + EPS) {
            return false;
        }
        let x = x.clamp(0.0, w - 1.0);
        let y = y.clamp(0.0, h - 1.0);
        let (x0, y0) = (x.floor() as usize, y.floor() as usize);
        let (fx, fy) = (x - x0 as f64, y - y0 as f64);
        let c = self.channels as usize;
        let stencil = [
            (x0, y0, (1.0 - fx) * (1.0 - fy)),
            (x0 + 1, y0, fx * (1.0 - fy)),
            (x0, y0 + 1, (1.0 - fx) * fy),
            (x0 + 1, y0 + 1, fx * fy),
        ];
        let stencil = stencil.iter().filter(|s| s.2 != 0.0);
        if stencil.clone().any(|&(sx, sy, _)| !self.is_valid(sx, sy)) {
            return false;
        }
        for (ch, o) in out.iter_mut().enumerate().take(c) {
            *o = stencil
                .clone()
                .map(|&(sx, sy, wt)| wt * self.get(sx, sy, ch) as f64)
                .sum::<f64>() as f32;
        }
        true
    }

    /// Nearest-sample lookup at continuous pixel coordinates.
    pub fn sample_nearest(&self, x: f64, y: f64, channel: usize) -> Option<f32> {
        let (c, r) = (x.round(), y.round());
        if c < 0.0 || r < 0.0 || c >= self.width as f64 || r >= self.height as f64 {
            return None;
        }
        let v = self.get(c as usize, r as usize, channel);
        (!v.is_nan()).then_some(v)
    }
}

/// Binary vegetation mask: 1 marks excluded pixels, 0 evaluable ones.
#[derive(Debug, Clone, PartialEq)]
pub struct VegetationMask(Raster);

impl VegetationMask {
    pub fn new(raster: Raster) -> Result<Self> {
        if raster.channels() != 1 {
            return Err(Error::InvalidRaster("vegetation mask must be single-channel".into()));
        }
        if let Some(v) = raster.data().iter().find(|v| **v != 0.0 && **v != 1.0) {
            return Err(Error::InvalidRaster(format!("vegetation mask value {v} not in {{0,1}}")));
        }
        Ok(VegetationMask(raster))
    }

    pub fn raster(&self) -> &Raster {
        &self.0
    }

    pub fn is_vegetation(&self, col: usize, row: usize) -> bool {
        self.0.get(col, row, 0) == 1.0
    }
}

//! Colormapped 8-bit renderings of single-channel rasters (binary PGM/PPM).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Raster;

mod turbo;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Colormap {
    Gray,
    Turbo,
}

impl std::str::FromStr for Colormap {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gray" | "grey" => Ok(Colormap::Gray),
            "turbo" => Ok(Colormap::Turbo),
            _ => Err(Error::InvalidInput(format!("unknown colormap {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ValueRange {
    /// 2nd to 98th percentile of the valid values.
    Auto,
    Fixed(f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    /// 1 (gray) or 3 (RGB) bytes per pixel.
    pub channels: u8,
    pub data: Vec<u8>,
}

impl Image {
    pub fn encode(&self) -> Vec<u8> {
        let magic = if self.channels == 1 { "P5" } else { "P6" };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.encode())?;
        Ok(())
    }
}

/// Nearest-rank percentile of sorted values, `q` in [0, 1].
fn percentile(sorted: &[f32], q: f64) -> f64 {
    let i = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[i] as f64
}

pub fn resolve_range(raster: &Raster, range: ValueRange) -> Option<(f64, f64)> {
    match range {
        ValueRange::Fixed(lo, hi) => Some((lo, hi)),
        ValueRange::Auto => {
            let mut v: Vec<f32> = raster.data().iter().cloned().filter(|x| !x.is_nan()).collect();
            if v.is_empty() {
                return None;
            }
            v.sort_by(f32::total_cmp);
            Some((percentile(&v, 0.02), percentile(&v, 0.98)))
        }
    }
}

/// Linear map of `[lo, hi]` onto the colormap, clamped; nodata is black.
/// A degenerate range maps every valid value to the middle of the map.
pub fn plot(raster: &Raster, cmap: Colormap, range: ValueRange) -> Result<Image> {
    if raster.channels() != 1 {
        return Err(Error::InvalidInput("plot needs a single-channel raster".into()));
    }
    let (lo, hi) = resolve_range(raster, range).unwrap_or((0.0, 1.0));
    let t_of = |x: f32| -> f64 {
        if hi > lo {
            ((x as f64 - lo) / (hi - lo)).clamp(0.0, 1.0)
        } else {
            0.5
        }
    };
    let channels = match cmap {
        Colormap::Gray => 1,
        Colormap::Turbo => 3,
    };
    let mut data = Vec::with_capacity(raster.data().len() * channels as usize);
    for &x in raster.data() {
        match (cmap, x.is_nan()) {
            (Colormap::Gray, true) => data.push(0),
            (Colormap::Turbo, true) => data.extend_from_slice(&[0, 0, 0]),
            (Colormap::Gray, false) => data.push((t_of(x) * 255.0).round() as u8),
            (Colormap::Turbo, false) => data.extend_from_slice(&turbo::TURBO[(t_of(x) * 255.0).round() as usize]),
        }
    }
    Ok(Image { width: raster.width(), height: raster.height(), channels, data })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_gray_is_mid_gray() {
        let img = plot(&Raster::filled(4, 3, 1, 17.0), Colormap::Gray, ValueRange::Auto).unwrap();
        assert!(img.data.iter().all(|&b| b == 128));
        assert!(img.encode().starts_with(b"P5\n4 3\n255\n"));
    }

    #[test]
    fn nodata_is_black_and_turbo_endpoints() {
        let r = Raster::new(3, 1, 1, vec![0.0, f32::NAN, 1.0]).unwrap();
        let img = plot(&r, Colormap::Turbo, ValueRange::Fixed(0.0, 1.0)).unwrap();
        assert_eq!(img.data, vec![48, 18, 59, 0, 0, 0, 122, 4, 3]);
        assert!(img.encode().starts_with(b"P6\n3 1\n255\n"));
        let g = plot(&r, Colormap::Gray, ValueRange::Fixed(0.0, 1.0)).unwrap();
        assert_eq!(g.data, vec![0, 0, 255]);
    }

    #[test]
    fn auto_range_clips_outliers() {
        let mut v: Vec<f32> = (0..100).map(|i| i as f32).collect();
        v[99] = 1e6;
        let r = Raster::new(100, 1, 1, v).unwrap();
        let (lo, hi) = resolve_range(&r, ValueRange::Auto).unwrap();
        assert_eq!((lo, hi), (2.0, 97.0));
        assert_eq!(resolve_range(&Raster::empty(2, 2, 1), ValueRange::Auto), None);
    }
}

//! Local equirectangular frame used for all metric ground coordinates.
//!
//! Meters are obtained from degrees with fixed factors about the frame
//! origin: `111320·cos(lat0)` m per degree of longitude and `111320` m per
//! degree of latitude. Over tiles of a couple of kilometers the distortion
//! stays below 0.01%.

use crate::error::{Error, Result};
use crate::rpc::GroundPoint;

pub const METERS_PER_DEGREE: f64 = 111_320.0;
const CRS_PREFIX: &str = "eqc:";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalFrame {
    pub lon0: f64,
    pub lat0: f64,
}

impl LocalFrame {
    pub fn new(lon0: f64, lat0: f64) -> Self {
        LocalFrame { lon0, lat0 }
    }

    fn lon_factor(&self) -> f64 {
        METERS_PER_DEGREE * self.lat0.to_radians().cos()
    }

    /// (lon, lat) in degrees to (east, north) in meters.
    pub fn to_local(&self, lon: f64, lat: f64) -> (f64, f64) {
        ((lon - self.lon0) * self.lon_factor(), (lat - self.lat0) * METERS_PER_DEGREE)
    }

    pub fn to_geo(&self, x: f64, y: f64) -> (f64, f64) {
        (self.lon0 + x / self.lon_factor(), self.lat0 + y / METERS_PER_DEGREE)
    }

    pub fn ground(&self, x: f64, y: f64, h: f64) -> GroundPoint {
        let (lon, lat) = self.to_geo(x, y);
        GroundPoint { lon, lat, h }
    }

    /// Raster crs tag, `eqc:<lon0>,<lat0>`.
    pub fn crs_tag(&self) -> String {
        format!("{CRS_PREFIX}{:?},{:?}", self.lon0, self.lat0)
    }

    pub fn from_crs_tag(tag: &str) -> Result<Self> {
        let bad = || Error::BadCrs(tag.to_owned());
        let rest = tag.trim().strip_prefix(CRS_PREFIX).ok_or_else(bad)?;
        let (a, b) = rest.split_once(',').ok_or_else(bad)?;
        let lon0 = a.trim().parse().map_err(|_| bad())?;
        let lat0 = b.trim().parse().map_err(|_| bad())?;
        Ok(LocalFrame { lon0, lat0 })
    }
}

/// Map coordinates of a georeferenced raster: the local metric frame, or
/// plain longitude/latitude degrees (`EPSG:4326`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MapCrs {
    Local(LocalFrame),
    LonLat,
}

impl MapCrs {
    pub fn from_tag(tag: Option<&str>) -> Result<Self> {
        match tag.map(str::trim) {
            None => Err(Error::BadCrs("missing crs tag".into())),
            Some(t) if t.eq_ignore_ascii_case("EPSG:4326") || t.eq_ignore_ascii_case("lonlat") => Ok(MapCrs::LonLat),
            Some(t) => LocalFrame::from_crs_tag(t).map(MapCrs::Local),
        }
    }

    pub fn to_geo(&self, x: f64, y: f64) -> (f64, f64) {
        match self {
            MapCrs::Local(f) => f.to_geo(x, y),
            MapCrs::LonLat => (x, y),
        }
    }

    pub fn to_map(&self, lon: f64, lat: f64) -> (f64, f64) {
        match self {
            MapCrs::Local(f) => f.to_local(lon, lat),
            MapCrs::LonLat => (lon, lat),
        }
    }

    pub fn tag(&self) -> String {
        match self {
            MapCrs::Local(f) => f.crs_tag(),
            MapCrs::LonLat => "EPSG:4326".into(),
        }
    }
}

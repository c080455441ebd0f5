//! Rational polynomial (RPC) camera models: forward projection from ground
//! to image and fixed-altitude inversion.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Image coordinates. Integer values are pixel centers.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PixelPoint {
    pub col: f64,
    pub row: f64,
}

impl PixelPoint {
    pub fn new(col: f64, row: f64) -> Self {
        PixelPoint { col, row }
    }
}

/// Geographic position with altitude in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GroundPoint {
    pub lon: f64,
    pub lat: f64,
    pub h: f64,
}

impl GroundPoint {
    pub fn new(lon: f64, lat: f64, h: f64) -> Self {
        GroundPoint { lon, lat, h }
    }
}

/// The 20 cubic monomials in RPC00B order.
#[inline]
pub fn rpc_basis(l: f64, p: f64, h: f64) -> [f64; 20] {
    [
        1.0,
        l,
        p,
        h,
        l * p,
        l * h,
        p * h,
        l * l,
        p * p,
        h * h,
        p * l * h,
        l * l * l,
        l * p * p,
        l * h * h,
        l * l * p,
        p * p * p,
        p * h * h,
        l * l * h,
        p * p * h,
        h * h * h,
    ]
}

#[inline]
fn dot20(c: &[f64; 20], b: &[f64; 20]) -> f64 {
    c.iter().zip(b).map(|(a, b)| a * b).sum()
}

const DEN_EPS: f64 = 1e-10;

/// Settings for [`RpcModel::localize_with`].
#[derive(Debug, Clone, Copy)]
pub struct LocalizeOptions {
    pub tol_px: f64,
    pub max_iter: usize,
    /// Central-difference step as a fraction of the lon/lat scales.
    pub fd_step: f64,
}

impl Default for LocalizeOptions {
    fn default() -> Self {
        LocalizeOptions { tol_px: 1e-4, max_iter: 100, fd_step: 1e-8 }
    }
}

/// Outcome of a successful inversion.
#[derive(Debug, Clone, Copy)]
pub struct Localized {
    pub ground: GroundPoint,
    /// Newton steps taken.
    pub iterations: usize,
    /// Final reprojection error in pixels.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RpcModel {
    pub line_off: f64,
    pub samp_off: f64,
    pub line_scale: f64,
    pub samp_scale: f64,
    pub lat_off: f64,
    pub lon_off: f64,
    pub height_off: f64,
    pub lat_scale: f64,
    pub lon_scale: f64,
    pub height_scale: f64,
    pub line_num: [f64; 20],
    pub line_den: [f64; 20],
    pub samp_num: [f64; 20],
    pub samp_den: [f64; 20],
}

impl RpcModel {
    pub fn validate(&self) -> Result<()> {
        let scales = [
            ("line_scale", self.line_scale),
            ("samp_scale", self.samp_scale),
            ("lat_scale", self.lat_scale),
            ("lon_scale", self.lon_scale),
            ("height_scale", self.height_scale),
        ];
        for (name, s) in scales {
            if s == 0.0 || !s.is_finite() {
                return Err(Error::InvalidInput(format!("rpc {name} = {s}")));
            }
        }
        for (name, den) in [("line_den", &self.line_den), ("samp_den", &self.samp_den)] {
            if den[0].abs() <= 1e-12 {
                return Err(Error::DenominatorNearZero(den[0]));
            }
            if den.iter().any(|v| !v.is_finite()) {
                return Err(Error::MalformedNumber(name.into()));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn normalize(&self, g: &GroundPoint) -> (f64, f64, f64) {
        (
            (g.lon - self.lon_off) / self.lon_scale,
            (g.lat - self.lat_off) / self.lat_scale,
            (g.h - self.height_off) / self.height_scale,
        )
    }

    /// Projects a ground point, also reporting whether the normalized input
    /// left the `[-2, 2]` fitting domain.
    pub fn project_flagged(&self, g: &GroundPoint) -> Result<(PixelPoint, bool)> {
        let (l, p, h) = self.normalize(g);
        let outside = l.abs() > 2.0 || p.abs() > 2.0 || h.abs() > 2.0;
        let b = rpc_basis(l, p, h);
        let line_den = dot20(&self.line_den, &b);
        let samp_den = dot20(&self.samp_den, &b);
        if line_den.abs() < DEN_EPS {
            return Err(Error::DenominatorNearZero(line_den));
        }
        if samp_den.abs() < DEN_EPS {
            return Err(Error::DenominatorNearZero(samp_den));
        }
        let row = self.line_off + self.line_scale * dot20(&self.line_num, &b) / line_den;
        let col = self.samp_off + self.samp_scale * dot20(&self.samp_num, &b) / samp_den;
        Ok((PixelPoint { col, row }, outside))
    }

    pub fn project(&self, g: &GroundPoint) -> Result<PixelPoint> {
        self.project_flagged(g).map(|(p, _)| p)
    }

    /// Ground point at altitude `h` that projects onto `p`.
    pub fn localize(&self, p: PixelPoint, h: f64) -> Result<GroundPoint> {
        self.localize_with(p, h, None, &LocalizeOptions::default())
            .map(|l| l.ground)
    }

    /// Damped Newton on (lon, lat) at fixed altitude with a central
    /// finite-difference Jacobian. Starts from `guess` or the model's
    /// normalization center.
    pub fn localize_with(
        &self,
        p: PixelPoint,
        h: f64,
        guess: Option<(f64, f64)>,
        opts: &LocalizeOptions,
    ) -> Result<Localized> {
        let (mut lon, mut lat) = guess.unwrap_or((self.lon_off, self.lat_off));
        let residual_at = |lon: f64, lat: f64| -> Result<(f64, f64)> {
            let q = self.project(&GroundPoint { lon, lat, h })?;
            Ok((q.col - p.col, q.row - p.row))
        };
        let norm = |r: (f64, f64)| r.0.hypot(r.1);
        let (dlon, dlat) = (opts.fd_step * self.lon_scale.abs(), opts.fd_step * self.lat_scale.abs());

        let mut r = residual_at(lon, lat)?;
        let mut iterations = 0;
        while norm(r) >= opts.tol_px {
            if iterations == opts.max_iter {
                return Err(Error::NoConvergence { iterations, residual: norm(r) });
            }
            let a = residual_at(lon + dlon, lat)?;
            let b = residual_at(lon - dlon, lat)?;
            let c = residual_at(lon, lat + dlat)?;
            let d = residual_at(lon, lat - dlat)?;
            let j = [
                (a.0 - b.0) / (2.0 * dlon),
                (c.0 - d.0) / (2.0 * dlat),
                (a.1 - b.1) / (2.0 * dlon),
                (c.1 - d.1) / (2.0 * dlat),
            ];
            let det = j[0] * j[3] - j[1] * j[2];
            let jnorm = j.iter().map(|v| v * v).sum::<f64>();
            if !det.is_finite() || det.abs() <= 1e-12 * jnorm {
                return Err(Error::SingularJacobian);
            }
            let step_lon = -(j[3] * r.0 - j[1] * r.1) / det;
            let step_lat = -(-j[2] * r.0 + j[0] * r.1) / det;

            // halve the step until the residual decreases
            let mut t = 1.0;
            let mut accepted = None;
            for _ in 0..30 {
                let cand = (lon + t * step_lon, lat + t * step_lat);
                if let Ok(rc) = residual_at(cand.0, cand.1) {
                    if norm(rc) < norm(r) {
                        accepted = Some((cand, rc));
                        break;
                    }
                }
                t *= 0.5;
            }
            iterations += 1;
            match accepted {
                Some(((nl, nt), rc)) => {
                    lon = nl;
                    lat = nt;
                    r = rc;
                }
                None => {
                    return Err(Error::NoConvergence { iterations, residual: norm(r) });
                }
            }
        }
        Ok(Localized {
            ground: GroundPoint { lon, lat, h },
            iterations,
            residual: norm(r),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("rpc serializes")
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    /// RPC00B-style keyword text.
    pub fn to_keyword_text(&self) -> String {
        let mut s = String::new();
        let scalars = [
            ("LINE_OFF", self.line_off, "pixels"),
            ("SAMP_OFF", self.samp_off, "pixels"),
            ("LAT_OFF", self.lat_off, "degrees"),
            ("LONG_OFF", self.lon_off, "degrees"),
            ("HEIGHT_OFF", self.height_off, "meters"),
            ("LINE_SCALE", self.line_scale, "pixels"),
            ("SAMP_SCALE", self.samp_scale, "pixels"),
            ("LAT_SCALE", self.lat_scale, "degrees"),
            ("LONG_SCALE", self.lon_scale, "degrees"),
            ("HEIGHT_SCALE", self.height_scale, "meters"),
        ];
        for (k, v, unit) in scalars {
            s.push_str(&format!("{k}: {v:?} {unit}\n"));
        }
        for (k, c) in self.coefficient_blocks() {
            for (i, v) in c.iter().enumerate() {
                s.push_str(&format!("{k}_{}: {v:?}\n", i + 1));
            }
        }
        s
    }

    fn coefficient_blocks(&self) -> [(&'static str, &[f64; 20]); 4] {
        [
            ("LINE_NUM_COEFF", &self.line_num),
            ("LINE_DEN_COEFF", &self.line_den),
            ("SAMP_NUM_COEFF", &self.samp_num),
            ("SAMP_DEN_COEFF", &self.samp_den),
        ]
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(s)?;
        let obj = value
            .as_object()
            .ok_or_else(|| Error::MalformedNumber("rpc json is not an object".into()))?;
        let scalar = |k: &str| -> Result<f64> {
            let v = obj.get(k).ok_or_else(|| Error::MissingCoefficient(k.into()))?;
            v.as_f64().ok_or_else(|| Error::MalformedNumber(format!("{k}: {v}")))
        };
        let array = |k: &str| -> Result<[f64; 20]> {
            let v = obj.get(k).ok_or_else(|| Error::MissingCoefficient(k.into()))?;
            let a = v.as_array().ok_or_else(|| Error::MalformedNumber(k.into()))?;
            if a.len() != 20 {
                return Err(Error::MissingCoefficient(format!("{k}[{}]", a.len().min(20))));
            }
            let mut out = [0.0; 20];
            for (o, x) in out.iter_mut().zip(a) {
                *o = x.as_f64().ok_or_else(|| Error::MalformedNumber(format!("{k}: {x}")))?;
            }
            Ok(out)
        };
        let model = RpcModel {
            line_off: scalar("line_off")?,
            samp_off: scalar("samp_off")?,
            line_scale: scalar("line_scale")?,
            samp_scale: scalar("samp_scale")?,
            lat_off: scalar("lat_off")?,
            lon_off: scalar("lon_off")?,
            height_off: scalar("height_off")?,
            lat_scale: scalar("lat_scale")?,
            lon_scale: scalar("lon_scale")?,
            height_scale: scalar("height_scale")?,
            line_num: array("line_num")?,
            line_den: array("line_den")?,
            samp_num: array("samp_num")?,
            samp_den: array("samp_den")?,
        };
        model.validate()?;
        Ok(model)
    }

    /// Parses `KEY: value [unit]` lines.
    pub fn from_keyword_text(s: &str) -> Result<Self> {
        let mut fields: HashMap<String, f64> = HashMap::new();
        for line in s.lines() {
            let Some((key, rest)) = line.split_once(':') else { continue };
            let key = key.trim().to_ascii_uppercase();
            let token = rest.split_whitespace().next().unwrap_or("");
            let value: f64 = token
                .parse()
                .map_err(|_| Error::MalformedNumber(format!("{key}: {token:?}")))?;
            fields.insert(key, value);
        }
        let get = |names: &[&str]| -> Result<f64> {
            names
                .iter()
                .find_map(|n| fields.get(*n).copied())
                .ok_or_else(|| Error::MissingCoefficient(names[0].into()))
        };
        let block = |prefix: &str| -> Result<[f64; 20]> {
            let mut out = [0.0; 20];
            for (i, o) in out.iter_mut().enumerate() {
                *o = get(&[&format!("{prefix}_{}", i + 1)])?;
            }
            Ok(out)
        };
        let model = RpcModel {
            line_off: get(&["LINE_OFF"])?,
            samp_off: get(&["SAMP_OFF"])?,
            line_scale: get(&["LINE_SCALE"])?,
            samp_scale: get(&["SAMP_SCALE"])?,
            lat_off: get(&["LAT_OFF"])?,
            lon_off: get(&["LONG_OFF", "LON_OFF"])?,
            height_off: get(&["HEIGHT_OFF"])?,
            lat_scale: get(&["LAT_SCALE"])?,
            lon_scale: get(&["LONG_SCALE", "LON_SCALE"])?,
            height_scale: get(&["HEIGHT_SCALE"])?,
            line_num: block("LINE_NUM_COEFF")?,
            line_den: block("LINE_DEN_COEFF")?,
            samp_num: block("SAMP_NUM_COEFF")?,
            samp_den: block("SAMP_DEN_COEFF")?,
        };
        model.validate()?;
        Ok(model)
    }
}

/// Reads a JSON sidecar or RPC00B keyword file.
pub fn parse_rpc(path: impl AsRef<Path>) -> Result<RpcModel> {
    let text = fs::read_to_string(path)?;
    if text.trim_start().starts_with('{') {
        RpcModel::from_json_str(&text)
    } else {
        RpcModel::from_keyword_text(&text)
    }
}
